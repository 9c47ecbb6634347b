//! Template captions derived from object centers, extents and mask order.

use serde::{Deserialize, Serialize};

use crate::mask::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionKind {
    /// The whole scene, background included.
    Global,
    /// One editing step, without background descriptors.
    Layer,
    /// Short crop description: "An image of {CLASS} in {BACKGROUND}".
    Crop,
}

/// An object as the caption templates see it (image coordinates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionObject {
    pub label: String,
    pub center: (f64, f64),
    /// Half width and half height of the bounding box.
    pub half_extent: (f64, f64),
}

impl CaptionObject {
    pub fn from_mask(label: &str, mask: &Mask) -> Option<Self> {
        let (x0, y0, x1, y1) = mask.bounding_box()?;
        Some(Self {
            label: label.to_string(),
            center: mask.centroid()?,
            half_extent: (
                (x1 - x0 + 1) as f64 / 2.0,
                (y1 - y0 + 1) as f64 / 2.0,
            ),
        })
    }

    fn overlaps(&self, other: &CaptionObject) -> bool {
        (self.center.0 - other.center.0).abs() < self.half_extent.0 + other.half_extent.0
            && (self.center.1 - other.center.1).abs() < self.half_extent.1 + other.half_extent.1
    }
}

/// "a" or "an" plus the noun phrase.
pub fn with_article(label: &str) -> String {
    let starts_with_vowel = label
        .chars()
        .next()
        .is_some_and(|c| "aeiouAEIOU".contains(c));
    if starts_with_vowel {
        format!("an {label}")
    } else {
        format!("a {label}")
    }
}

/// Spatial relation of `a` relative to `b`, where `a` was placed later.
pub fn relation(a: &CaptionObject, b: &CaptionObject) -> &'static str {
    if a.overlaps(b) {
        return "in front of";
    }
    let dx = a.center.0 - b.center.0;
    let dy = a.center.1 - b.center.1;
    if dx.abs() >= dy.abs() {
        if dx < 0.0 {
            "to the left of"
        } else {
            "to the right of"
        }
    } else if dy < 0.0 {
        "above"
    } else {
        "below"
    }
}

fn canvas_position(obj: &CaptionObject, canvas: (usize, usize)) -> &'static str {
    let fx = obj.center.0 / canvas.0 as f64;
    if fx < 1.0 / 3.0 {
        "on the left side of the image"
    } else if fx > 2.0 / 3.0 {
        "on the right side of the image"
    } else {
        "in the middle of the image"
    }
}

fn layer_phrase(objects: &[CaptionObject], k: usize, canvas: (usize, usize)) -> String {
    let obj = &objects[k];
    // Relate to an earlier object it covers if any, else the nearest one.
    let anchor = objects[..k]
        .iter()
        .rev()
        .find(|b| obj.overlaps(b))
        .or_else(|| {
            objects[..k].iter().min_by(|a, b| {
                let da = (a.center.0 - obj.center.0).hypot(a.center.1 - obj.center.1);
                let db = (b.center.0 - obj.center.0).hypot(b.center.1 - obj.center.1);
                da.total_cmp(&db)
            })
        });
    match anchor {
        Some(b) => format!("{} {} the {}", with_article(&obj.label), relation(obj, b), b.label),
        None => format!("{} {}", with_article(&obj.label), canvas_position(obj, canvas)),
    }
}

/// Fills the fixed templates. `layer` selects the object for
/// [`CaptionKind::Layer`] and [`CaptionKind::Crop`]; it is ignored for
/// [`CaptionKind::Global`].
pub fn caption_from_template(
    background: &str,
    objects: &[CaptionObject],
    canvas: (usize, usize),
    kind: CaptionKind,
    layer: usize,
) -> String {
    match kind {
        CaptionKind::Global => {
            let mut caption = format!("An image of {background}");
            if !objects.is_empty() {
                let parts: Vec<String> = (0..objects.len())
                    .map(|k| layer_phrase(objects, k, canvas))
                    .collect();
                caption.push_str(" with ");
                caption.push_str(&parts.join(", "));
            }
            caption
        }
        CaptionKind::Layer => layer_phrase(objects, layer, canvas),
        CaptionKind::Crop => format!(
            "An image of {} in {background}",
            with_article(&objects[layer].label)
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(label: &str, cx: f64, cy: f64, half: f64) -> CaptionObject {
        CaptionObject {
            label: label.into(),
            center: (cx, cy),
            half_extent: (half, half),
        }
    }

    #[test]
    fn crop_template() {
        let objects = [obj("dog", 64.0, 64.0, 10.0)];
        assert_eq!(
            caption_from_template("a park", &objects, (128, 128), CaptionKind::Crop, 0),
            "An image of a dog in a park"
        );
    }

    #[test]
    fn left_right_relation() {
        let objects = [obj("jeep", 96.0, 64.0, 10.0), obj("dog", 32.0, 64.0, 10.0)];
        let c = caption_from_template("a street", &objects, (128, 128), CaptionKind::Layer, 1);
        assert_eq!(c, "a dog to the left of the jeep");
    }

    #[test]
    fn overlap_is_in_front() {
        let objects = [obj("jeep", 60.0, 64.0, 20.0), obj("dog", 70.0, 70.0, 10.0)];
        let c = caption_from_template("a street", &objects, (128, 128), CaptionKind::Layer, 1);
        assert_eq!(c, "a dog in front of the jeep");
    }

    #[test]
    fn first_layer_uses_canvas_position_and_no_background() {
        let objects = [obj("apple", 20.0, 64.0, 10.0)];
        let c = caption_from_template("a kitchen", &objects, (128, 128), CaptionKind::Layer, 0);
        assert_eq!(c, "an apple on the left side of the image");
        assert!(!c.contains("kitchen"));
    }

    #[test]
    fn global_caption_is_deterministic() {
        let objects = [obj("jeep", 60.0, 64.0, 20.0), obj("dog", 70.0, 70.0, 10.0)];
        let a = caption_from_template("a street", &objects, (128, 128), CaptionKind::Global, 0);
        let b = caption_from_template("a street", &objects, (128, 128), CaptionKind::Global, 0);
        assert_eq!(a, b);
        assert_eq!(
            a,
            "An image of a street with a jeep in the middle of the image, a dog in front of the jeep"
        );
    }
}
