use crate::decode::RgbImage;
use crate::error::{Error, Result};
use crate::mask::Mask;

pub const CROP_SIZE: usize = 224;

/// Bilinear resize with half-pixel centers and edge clamping. Same-size
/// resizes are exact copies.
pub fn resize_bilinear(img: &RgbImage, width: usize, height: usize) -> RgbImage {
    let mut out = RgbImage::new(width, height);
    let sx = img.width as f64 / width as f64;
    let sy = img.height as f64 / height as f64;
    let sample_axis = |dst: usize, scale: f64, len: usize| {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, src - i0 as f64)
    };
    for y in 0..height {
        let (y0, y1, fy) = sample_axis(y, sy, img.height);
        for x in 0..width {
            let (x0, x1, fx) = sample_axis(x, sx, img.width);
            let (p00, p10) = (img.pixel(x0, y0), img.pixel(x1, y0));
            let (p01, p11) = (img.pixel(x0, y1), img.pixel(x1, y1));
            let mut rgb = [0u8; 3];
            for c in 0..3 {
                let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
                let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                rgb[c] = (v + 0.5).floor().clamp(0.0, 255.0) as u8;
            }
            out.put_pixel(x, y, rgb);
        }
    }
    out
}

/// Cuts the inclusive box `(x0, y0, x1, y1)` out of `img`.
pub fn crop_box(img: &RgbImage, (x0, y0, x1, y1): (usize, usize, usize, usize)) -> RgbImage {
    let mut out = RgbImage::new(x1 - x0 + 1, y1 - y0 + 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            out.put_pixel(x - x0, y - y0, img.pixel(x, y));
        }
    }
    out
}

/// One crop per mask: the mask's tight bounding box resized to 224x224.
/// Empty masks yield `None`.
pub fn crop_layers(img: &RgbImage, masks: &[Mask]) -> Result<Vec<Option<RgbImage>>> {
    masks
        .iter()
        .map(|m| {
            if m.dims() != (img.width, img.height) {
                return Err(Error::dims(
                    format!("{}x{}", img.width, img.height),
                    format!("{}x{}", m.width(), m.height()),
                ));
            }
            Ok(m
                .bounding_box()
                .map(|bbox| resize_bilinear(&crop_box(img, bbox), CROP_SIZE, CROP_SIZE)))
        })
        .collect()
}
