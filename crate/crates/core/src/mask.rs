//! Binary masks over the latent grid and the set algebra that turns a mask
//! stack into disjoint, owner-labelled regions.
//!
//! A stack is always ordered `m_0, m_1, .., m_i` where `m_0` is the all-ones
//! background mask and later masks occlude earlier ones. Subtraction is set
//! difference, never arithmetic.

use std::fmt;
use std::io::Cursor;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major binary raster.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "RleMask", try_from = "RleMask")]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl fmt::Debug for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mask {}x{} ({} set)", self.width, self.height, self.count())?;
        for row in self.bits.chunks(self.width.max(1)) {
            let line: String = row.iter().map(|&b| if b { '#' } else { '.' }).collect();
            writeln!(f, "  {line}")?;
        }
        Ok(())
    }
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    /// The background mask: every cell set.
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::dims(width * height, bits.len()));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    fn check_same_dims(&self, other: &Mask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Result<Mask> {
        self.check_same_dims(other)?;
        Ok(Mask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a && b)
    }

    /// Set difference `self \ other`.
    pub fn difference(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn complement(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }

    /// Tight bounding box of the set cells as `(x0, y0, x1, y1)`, inclusive.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bbox = Some(match bbox {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bbox
    }

    /// Center of mass of the set cells, in cell-center coordinates.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    sx += x as f64 + 0.5;
                    sy += y as f64 + 0.5;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    pub fn to_rle(&self) -> RleMask {
        RleMask::from(self.clone())
    }

    /// Lossless 1-bit raster (8-bit grayscale PNG, 0 or 255).
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let pixels: Vec<u8> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, pixels)
            .ok_or_else(|| Error::InvalidEncoding("raster size".into()))?;
        let mut out = Vec::new();
        img.write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png)?;
        Ok(out)
    }

    /// Decodes any lossless raster; a pixel is set when its luma is above 127.
    pub fn from_png(bytes: &[u8]) -> Result<Mask> {
        let img = image::load_from_memory(bytes)?.to_luma8();
        let (w, h) = img.dimensions();
        let bits = img.pixels().map(|p| p.0[0] > 127).collect();
        Mask::from_bits(w as usize, h as usize, bits)
    }
}

/// Run-length wire form. `counts` alternates unset/set runs over the
/// row-major raster, starting with an unset run (possibly of length zero).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub width: usize,
    pub height: usize,
    pub counts: Vec<u32>,
}

impl From<Mask> for RleMask {
    fn from(mask: Mask) -> Self {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &b in &mask.bits {
            if b != current {
                counts.push(run);
                run = 0;
                current = b;
            }
            run += 1;
        }
        counts.push(run);
        RleMask {
            width: mask.width,
            height: mask.height,
            counts,
        }
    }
}

impl TryFrom<RleMask> for Mask {
    type Error = Error;

    fn try_from(rle: RleMask) -> Result<Mask> {
        let total = rle.width * rle.height;
        let mut bits = Vec::with_capacity(total);
        let mut value = false;
        for &run in &rle.counts {
            if bits.len() + run as usize > total {
                return Err(Error::InvalidEncoding(format!(
                    "runs exceed {}x{} raster",
                    rle.width, rle.height
                )));
            }
            bits.extend(std::iter::repeat_n(value, run as usize));
            value = !value;
        }
        if bits.len() != total {
            return Err(Error::InvalidEncoding(format!(
                "runs cover {} of {} cells",
                bits.len(),
                total
            )));
        }
        Ok(Mask {
            width: rle.width,
            height: rle.height,
            bits,
        })
    }
}

/// Geometric shape to rasterize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Inclusive cell range.
    Rect { x0: i64, y0: i64, x1: i64, y1: i64 },
    /// Axis-aligned ellipse in continuous canvas coordinates.
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    /// Simple polygon in continuous canvas coordinates (cell `(x, y)` spans
    /// `[x, x+1) x [y, y+1)`).
    Polygon { points: Vec<(f64, f64)> },
}

/// Rasterizes a shape: a cell is set when its center lies strictly inside.
pub fn rasterize_mask(shape: &Shape, width: usize, height: usize) -> Result<Mask> {
    if width == 0 || height == 0 {
        return Err(Error::DegenerateMask(format!("canvas {width}x{height}")));
    }
    let mask = match shape {
        Shape::Rect { x0, y0, x1, y1 } => {
            let cx0 = (*x0).max(0);
            let cy0 = (*y0).max(0);
            let cx1 = (*x1).min(width as i64 - 1);
            let cy1 = (*y1).min(height as i64 - 1);
            if cx1 < cx0 || cy1 < cy0 {
                return Err(Error::DegenerateMask(format!(
                    "rect ({x0},{y0})-({x1},{y1}) has no area on {width}x{height}"
                )));
            }
            Mask::from_fn(width, height, |x, y| {
                let (x, y) = (x as i64, y as i64);
                x >= cx0 && x <= cx1 && y >= cy0 && y <= cy1
            })
        }
        Shape::Ellipse { cx, cy, rx, ry } => {
            if !(*rx > 0.0 && *ry > 0.0) {
                return Err(Error::DegenerateMask(format!("ellipse radii {rx}, {ry}")));
            }
            Mask::from_fn(width, height, |x, y| {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                dx * dx + dy * dy < 1.0
            })
        }
        Shape::Polygon { points } => {
            if points.iter().any(|&(x, y)| !(x.is_finite() && y.is_finite())) {
                return Err(Error::DegenerateMask("polygon has a non-finite vertex".into()));
            }
            if points.len() < 3 || polygon_area(points).abs() < f64::EPSILON {
                return Err(Error::DegenerateMask("polygon has zero area".into()));
            }
            // Only cell centers are sampled, so parts off the canvas drop out.
            scan_polygon(points, width, height)
        }
    };
    if mask.is_empty() {
        return Err(Error::DegenerateMask("shape covers no cell center".into()));
    }
    Ok(mask)
}

fn polygon_area(points: &[(f64, f64)]) -> f64 {
    let n = points.len();
    (0..n)
        .map(|k| {
            let (x0, y0) = points[k];
            let (x1, y1) = points[(k + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum::<f64>()
        / 2.0
}

// Even-odd scanline fill sampled at cell centers.
fn scan_polygon(points: &[(f64, f64)], width: usize, height: usize) -> Mask {
    let mut mask = Mask::empty(width, height);
    let n = points.len();
    let mut crossings = Vec::with_capacity(n);
    for y in 0..height {
        let sy = y as f64 + 0.5;
        crossings.clear();
        for k in 0..n {
            let (ax, ay) = points[k];
            let (bx, by) = points[(k + 1) % n];
            if (ay <= sy) != (by <= sy) {
                crossings.push(ax + (sy - ay) / (by - ay) * (bx - ax));
            }
        }
        crossings.sort_by(|a, b| a.total_cmp(b));
        for span in crossings.chunks_exact(2) {
            for x in 0..width {
                let sx = x as f64 + 0.5;
                if sx > span[0] && sx < span[1] {
                    mask.set(x, y, true);
                }
            }
        }
    }
    mask
}

/// Maps an image-resolution mask onto the latent grid. A latent cell is set
/// when at least half of the image cells it covers are set.
pub fn downsample_mask(mask: &Mask, target_width: usize, target_height: usize) -> Result<Mask> {
    let (w, h) = mask.dims();
    if target_width == 0
        || target_height == 0
        || w % target_width != 0
        || h % target_height != 0
    {
        return Err(Error::NonIntegerRatio {
            from: format!("{w}x{h}"),
            to: format!("{target_width}x{target_height}"),
        });
    }
    let (sx, sy) = (w / target_width, h / target_height);
    let block = sx * sy;
    Ok(Mask::from_fn(target_width, target_height, |tx, ty| {
        let mut set = 0;
        for y in ty * sy..(ty + 1) * sy {
            for x in tx * sx..(tx + 1) * sx {
                set += mask.get(x, y) as usize;
            }
        }
        2 * set >= block
    }))
}

fn check_stack(masks: &[Mask]) -> Result<()> {
    if let Some(first) = masks.first() {
        for m in &masks[1..] {
            first.check_same_dims(m)?;
        }
    }
    Ok(())
}

/// The visible part of layer `j`: `m_j` minus every later mask in the stack.
pub fn exclusive_region(masks: &[Mask], j: usize) -> Result<Mask> {
    check_stack(masks)?;
    if j >= masks.len() {
        return Err(Error::OutOfRange {
            index: j,
            len: masks.len(),
        });
    }
    let mut region = masks[j].clone();
    for later in &masks[j + 1..] {
        for (r, &l) in region.bits.iter_mut().zip(&later.bits) {
            *r &= !l;
        }
    }
    Ok(region)
}

/// Complement of the union of all object masks (`m_1..m_i`, background
/// excluded). With no objects this is the all-ones mask.
pub fn background_region(objects: &[Mask], width: usize, height: usize) -> Result<Mask> {
    let mut region = Mask::full(width, height);
    for m in objects {
        region.check_same_dims(m)?;
        for (r, &b) in region.bits.iter_mut().zip(&m.bits) {
            *r &= !b;
        }
    }
    Ok(region)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionEntry {
    pub owner: usize,
    pub region: Mask,
}

/// Disjoint regions covering the grid, each owned by one layer.
///
/// Entry order is fixed: the current layer first, then earlier layers in
/// descending order, background last.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionPartition {
    entries: Vec<RegionEntry>,
    current_index: usize,
}

impl RegionPartition {
    /// A partition with one region covering everything.
    pub fn single(owner: usize, width: usize, height: usize) -> Self {
        Self {
            entries: vec![RegionEntry {
                owner,
                region: Mask::full(width, height),
            }],
            current_index: owner,
        }
    }

    pub fn entries(&self) -> &[RegionEntry] {
        &self.entries
    }

    pub fn current_index(&self) -> usize {
        self.current_index
    }

    pub fn dims(&self) -> (usize, usize) {
        self.entries[0].region.dims()
    }

    pub fn owners(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.owner)
    }

    /// Region owned by `owner`, if it has an entry.
    pub fn region_of(&self, owner: usize) -> Option<&Mask> {
        self.entries
            .iter()
            .find(|e| e.owner == owner)
            .map(|e| &e.region)
    }

    /// Owner of every cell, row-major. Cells that no region covers map to
    /// `None`; a valid partition has none of those.
    pub fn owner_map(&self) -> Vec<Option<usize>> {
        let (w, h) = self.dims();
        let mut owners = vec![None; w * h];
        for entry in &self.entries {
            for (cell, &b) in entry.region.bits.iter().enumerate() {
                if b {
                    owners[cell] = Some(entry.owner);
                }
            }
        }
        owners
    }

    /// Checks disjointness, full coverage, and owner uniqueness.
    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.dims();
        let mut hits = vec![0u8; w * h];
        let mut seen = Vec::new();
        for entry in &self.entries {
            if entry.owner > self.current_index || seen.contains(&entry.owner) {
                return Err(Error::InvalidConfig(format!(
                    "partition owner {} invalid",
                    entry.owner
                )));
            }
            seen.push(entry.owner);
            for (cell, &b) in entry.region.bits.iter().enumerate() {
                hits[cell] += b as u8;
            }
        }
        if let Some(cell) = hits.iter().position(|&n| n != 1) {
            return Err(Error::InvalidConfig(format!(
                "partition cell {cell} covered {} times",
                hits[cell]
            )));
        }
        Ok(())
    }
}

/// Builds the region partition for the stack `m_0..m_i` (`m_0` all-ones).
pub fn partition(masks: &[Mask]) -> Result<RegionPartition> {
    check_stack(masks)?;
    let Some(background) = masks.first() else {
        return Err(Error::InvalidConfig("empty mask stack".into()));
    };
    if !background.is_full() {
        return Err(Error::InvalidConfig(
            "background mask m_0 must have every cell set".into(),
        ));
    }
    let (w, h) = background.dims();
    let current = masks.len() - 1;
    if current == 0 {
        return Ok(RegionPartition::single(0, w, h));
    }

    let mut entries = Vec::with_capacity(masks.len());
    entries.push(RegionEntry {
        owner: current,
        region: masks[current].clone(),
    });
    // Walk downward keeping the union of everything above the current layer.
    let mut above = masks[current].clone();
    for j in (1..current).rev() {
        let region = masks[j].difference(&above)?;
        above = above.union(&masks[j])?;
        entries.push(RegionEntry { owner: j, region });
    }
    entries.push(RegionEntry {
        owner: 0,
        region: background_region(&masks[1..], w, h)?,
    });
    Ok(RegionPartition {
        entries,
        current_index: current,
    })
}

/// Fraction of covered cells that more than one object mask covers.
pub fn occlusion_ratio(objects: &[Mask]) -> Result<f64> {
    check_stack(objects)?;
    let Some(first) = objects.first() else {
        return Err(Error::UndefinedRatio);
    };
    let mut covered = 0usize;
    let mut overlapped = 0usize;
    for cell in 0..first.len() {
        let n = objects.iter().filter(|m| m.bits[cell]).count();
        covered += (n >= 1) as usize;
        overlapped += (n >= 2) as usize;
    }
    if covered == 0 {
        return Err(Error::UndefinedRatio);
    }
    Ok(overlapped as f64 / covered as f64)
}
