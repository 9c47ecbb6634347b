//! Seeded multi-edit scenario generation.
//!
//! Each scenario picks a reference class, fills the remaining object slots
//! from the same compatibility group, samples a layout under margin and size
//! constraints, and derives template captions. The number of editing steps
//! per scenario follows a configurable distribution, allocated by exact
//! quotas (largest remainder) and shuffled by the suite seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::caption::{caption_from_template, with_article, CaptionKind, CaptionObject};
use crate::error::{Error, Result};
use crate::hash::mix64;
use crate::mask::{exclusive_region, occlusion_ratio, rasterize_mask, Mask, Shape};

/// Compatibility table: a background and the classes that plausibly share
/// a scene with it.
pub const CLASS_GROUPS: &[(&str, &[&str])] = &[
    (
        "a kitchen",
        &[
            "coffee mug", "teapot", "frying pan", "plate", "banana", "orange", "cupcake",
            "wine bottle", "water jug", "toaster", "bagel",
        ],
    ),
    (
        "a city street",
        &[
            "jeep", "taxi", "bicycle", "traffic light", "mailbox", "school bus",
            "golden retriever", "park bench", "street sign", "motor scooter",
        ],
    ),
    (
        "a living room",
        &[
            "studio couch", "table lamp", "tabby cat", "rocking chair", "television",
            "bookcase", "vase", "pillow", "remote control", "wall clock",
        ],
    ),
    (
        "a meadow",
        &[
            "daisy", "monarch butterfly", "red fox", "hare", "mushroom", "ladybug", "bee",
            "acorn", "ox", "hay bale",
        ],
    ),
    (
        "a sandy beach",
        &[
            "beach umbrella", "sunglasses", "volleyball", "starfish", "lifeboat",
            "sea turtle", "sandcastle", "seashell", "beach towel",
        ],
    ),
    (
        "an office",
        &[
            "laptop", "computer keyboard", "computer mouse", "notebook", "fountain pen",
            "desk lamp", "hourglass", "stapler", "potted plant", "monitor",
        ],
    ),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutConstraints {
    /// Minimum distance, in pixels, between any mask and every canvas edge.
    pub margin: usize,
    pub min_size: usize,
    pub max_size: usize,
    /// Chance that an object is an ellipse rather than a rectangle.
    pub ellipse_prob: f64,
    /// Fraction of each object that must stay visible under later objects.
    pub min_visible: f64,
    pub max_attempts: usize,
}

impl Default for LayoutConstraints {
    fn default() -> Self {
        Self {
            margin: 8,
            min_size: 32,
            max_size: 64,
            ellipse_prob: 0.0,
            min_visible: 0.3,
            max_attempts: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub image_width: usize,
    pub image_height: usize,
    pub layout: LayoutConstraints,
    /// `(editing steps, weight)`; layer count is steps + 1.
    pub step_distribution: Vec<(usize, f64)>,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            image_width: 128,
            image_height: 128,
            layout: LayoutConstraints::default(),
            step_distribution: vec![(2, 0.19), (3, 0.18), (4, 0.26), (5, 0.37)],
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let l = &self.layout;
        if l.min_size == 0 || l.min_size > l.max_size {
            return Err(Error::InvalidConfig(format!(
                "size range {}..={} is empty",
                l.min_size, l.max_size
            )));
        }
        let room_w = self.image_width.saturating_sub(2 * l.margin);
        let room_h = self.image_height.saturating_sub(2 * l.margin);
        if l.max_size > room_w.min(room_h) {
            return Err(Error::InvalidConfig(format!(
                "max size {} does not fit inside the margins of a {}x{} canvas",
                l.max_size, self.image_width, self.image_height
            )));
        }
        if !(0.0..=1.0).contains(&l.min_visible) || !(0.0..=1.0).contains(&l.ellipse_prob) {
            return Err(Error::InvalidConfig("probabilities must lie in [0, 1]".into()));
        }
        if self.step_distribution.is_empty()
            || self
                .step_distribution
                .iter()
                .any(|&(s, w)| !(2..=5).contains(&s) || !(w >= 0.0 && w.is_finite()))
            || self.step_distribution.iter().map(|&(_, w)| w).sum::<f64>() <= 0.0
        {
            return Err(Error::InvalidConfig(
                "step distribution needs steps in 2..=5 with non-negative weights".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioLayer {
    pub label: String,
    /// Object mask at image resolution.
    pub mask: Mask,
    /// Layer-wise caption (no background).
    pub caption: String,
    /// Crop caption for image-text scorers.
    pub crop_caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub index: usize,
    pub seed: u64,
    /// Total layers including the background.
    pub n_layers: usize,
    pub background: String,
    /// Object layers in mask order.
    pub layers: Vec<ScenarioLayer>,
    pub global_caption: String,
}

impl Scenario {
    pub fn steps(&self) -> usize {
        self.layers.len()
    }

    pub fn masks(&self) -> Vec<Mask> {
        self.layers.iter().map(|l| l.mask.clone()).collect()
    }

    pub fn occlusion_ratio(&self) -> Result<f64> {
        occlusion_ratio(&self.masks())
    }
}

/// Largest-remainder allocation of `count` items over the weights.
fn quota(weights: &[(usize, f64)], count: usize) -> Vec<usize> {
    let total: f64 = weights.iter().map(|&(_, w)| w).sum();
    let exact: Vec<f64> = weights
        .iter()
        .map(|&(_, w)| w / total * count as f64)
        .collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = count - counts.iter().sum::<usize>();
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

fn sample_shape(
    rng: &mut ChaCha8Rng,
    width: usize,
    height: usize,
    c: &LayoutConstraints,
) -> Shape {
    let w = rng.random_range(c.min_size..=c.max_size);
    let h = rng.random_range(c.min_size..=c.max_size);
    let x0 = rng.random_range(c.margin..=width - c.margin - w);
    let y0 = rng.random_range(c.margin..=height - c.margin - h);
    if rng.random_bool(c.ellipse_prob) {
        Shape::Ellipse {
            cx: x0 as f64 + w as f64 / 2.0,
            cy: y0 as f64 + h as f64 / 2.0,
            rx: w as f64 / 2.0,
            ry: h as f64 / 2.0,
        }
    } else {
        Shape::Rect {
            x0: x0 as i64,
            y0: y0 as i64,
            x1: (x0 + w - 1) as i64,
            y1: (y0 + h - 1) as i64,
        }
    }
}

/// Samples `n` object masks inside the margins; later masks may overlap
/// earlier ones as long as every mask keeps `min_visible` of its area.
pub fn layout_sample(
    n: usize,
    canvas: (usize, usize),
    constraints: &LayoutConstraints,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Mask>> {
    let (width, height) = canvas;
    let room = width
        .saturating_sub(2 * constraints.margin)
        .min(height.saturating_sub(2 * constraints.margin));
    if constraints.min_size == 0
        || constraints.min_size > constraints.max_size
        || constraints.max_size > room
    {
        return Err(Error::InvalidConfig(format!(
            "sizes {}..={} cannot fit a {width}x{height} canvas with margin {}",
            constraints.min_size, constraints.max_size, constraints.margin
        )));
    }
    for _ in 0..constraints.max_attempts.max(1) {
        let masks = (0..n)
            .map(|_| rasterize_mask(&sample_shape(rng, width, height, constraints), width, height))
            .collect::<Result<Vec<_>>>()?;
        let mut stack = Vec::with_capacity(n + 1);
        stack.push(Mask::full(width, height));
        stack.extend(masks.iter().cloned());
        let visible_ok = (1..=n).all(|j| {
            let visible = exclusive_region(&stack, j).map(|m| m.count()).unwrap_or(0);
            visible as f64 >= constraints.min_visible * stack[j].count() as f64
        });
        if visible_ok {
            return Ok(masks);
        }
    }
    Err(Error::GenerationFailed {
        index: 0,
        attempts: constraints.max_attempts,
    })
}

fn pick_classes(rng: &mut ChaCha8Rng, objects: usize) -> (String, Vec<String>) {
    let total: usize = CLASS_GROUPS.iter().map(|(_, c)| c.len()).sum();
    let mut pick = rng.random_range(0..total);
    let (mut group, mut reference) = (0, 0);
    for (g, (_, classes)) in CLASS_GROUPS.iter().enumerate() {
        if pick < classes.len() {
            group = g;
            reference = pick;
            break;
        }
        pick -= classes.len();
    }
    let (background, classes) = CLASS_GROUPS[group];
    let mut others: Vec<&str> = classes
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != reference)
        .map(|(_, c)| *c)
        .collect();
    others.shuffle(rng);
    let mut labels = vec![classes[reference].to_string()];
    labels.extend(others.into_iter().take(objects - 1).map(String::from));
    // The reference is an anchor, not necessarily the first edit.
    labels.shuffle(rng);
    (background.to_string(), labels)
}

fn build_scenario(index: usize, suite_seed: u64, steps: usize, config: &GenConfig) -> Result<Scenario> {
    let seed = mix64(suite_seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (background, labels) = pick_classes(&mut rng, steps);
    let canvas = (config.image_width, config.image_height);
    let masks = layout_sample(steps, canvas, &config.layout, &mut rng).map_err(|e| match e {
        Error::GenerationFailed { attempts, .. } => Error::GenerationFailed { index, attempts },
        other => other,
    })?;
    let objects: Vec<CaptionObject> = labels
        .iter()
        .zip(&masks)
        .map(|(l, m)| CaptionObject::from_mask(l, m).expect("sampled masks are non-empty"))
        .collect();
    let layers = (0..steps)
        .map(|k| ScenarioLayer {
            label: labels[k].clone(),
            mask: masks[k].clone(),
            caption: caption_from_template(&background, &objects, canvas, CaptionKind::Layer, k),
            crop_caption: caption_from_template(&background, &objects, canvas, CaptionKind::Crop, k),
        })
        .collect();
    Ok(Scenario {
        index,
        seed,
        n_layers: steps + 1,
        global_caption: caption_from_template(&background, &objects, canvas, CaptionKind::Global, 0),
        background,
        layers,
    })
}

/// Generates `count` scenarios deterministically from `seed`.
pub fn generate_scenarios(seed: u64, count: usize, config: &GenConfig) -> Result<Vec<Scenario>> {
    config.validate()?;
    if count == 0 {
        return Err(Error::InvalidConfig("scenario count must be at least 1".into()));
    }
    let quotas = quota(&config.step_distribution, count);
    let mut steps: Vec<usize> = config
        .step_distribution
        .iter()
        .zip(quotas)
        .flat_map(|(&(s, _), q)| std::iter::repeat_n(s, q))
        .collect();
    steps.shuffle(&mut ChaCha8Rng::seed_from_u64(mix64(seed, u64::MAX)));
    steps
        .into_iter()
        .enumerate()
        .map(|(index, s)| build_scenario(index, seed, s, config))
        .collect()
}

/// Realized statistics of a scenario set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteStats {
    pub scenarios: usize,
    /// `(editing steps, fraction of scenarios)`, ascending by steps.
    pub step_distribution: Vec<(usize, f64)>,
    /// Mean over scenarios of the per-scenario occlusion ratio.
    pub average_occlusion_ratio: f64,
}

pub fn suite_stats(scenarios: &[Scenario]) -> Result<SuiteStats> {
    let mut hist: Vec<(usize, usize)> = Vec::new();
    let mut occlusion = 0.0;
    for s in scenarios {
        match hist.iter_mut().find(|(k, _)| *k == s.steps()) {
            Some((_, c)) => *c += 1,
            None => hist.push((s.steps(), 1)),
        }
        occlusion += s.occlusion_ratio()?;
    }
    hist.sort();
    let n = scenarios.len().max(1) as f64;
    Ok(SuiteStats {
        scenarios: scenarios.len(),
        step_distribution: hist.into_iter().map(|(k, c)| (k, c as f64 / n)).collect(),
        average_occlusion_ratio: occlusion / n,
    })
}

/// The text prompt used when a scenario layer is edited into a session.
pub fn layer_prompt(label: &str) -> String {
    with_article(label)
}
