//! Layer-wise evaluation: crop each edited layer out of the final image,
//! score it, average over layers per image and over images per suite.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::caption::{caption_from_template, CaptionKind, CaptionObject};
use super::crop::crop_layers;
use super::metrics::{bleu, meteor_exact};
use super::scenario::{layer_prompt, suite_stats, Scenario, SuiteStats};
use crate::decode::RgbImage;
use crate::error::{Error, Result};
use crate::mask::{downsample_mask, Mask};
use crate::session::{EditSession, SessionConfig};

/// One edited layer as recorded in a session's history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultLayer {
    pub label: String,
    /// Mask at image resolution.
    pub mask: Mask,
}

/// What a generator produced for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneResult {
    pub scenario_index: usize,
    pub background: String,
    pub image: Option<RgbImage>,
    pub layers: Vec<ResultLayer>,
}

/// Image-text scorer plugged in from outside (a CLIP-style model, say).
/// Receives the PNG-encoded 224x224 crop and the crop caption; must return a
/// score in `[0, 1]`.
pub trait ExternalScorer: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, crop_png: &[u8], caption: &str) -> Result<f64>;
}

#[derive(Default)]
pub struct ScorerSet {
    pub bleu: bool,
    pub meteor: bool,
    pub external: Vec<Box<dyn ExternalScorer>>,
}

impl ScorerSet {
    /// BLEU-2/3/4 and exact METEOR.
    pub fn internal() -> Self {
        Self {
            bleu: true,
            meteor: true,
            external: Vec::new(),
        }
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn with_external(mut self, scorer: Box<dyn ExternalScorer>) -> Self {
        self.external.push(scorer);
        self
    }

    pub fn is_empty(&self) -> bool {
        !self.bleu && !self.meteor && self.external.is_empty()
    }
}

pub type MetricMap = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerScore {
    /// 1-based editing step.
    pub layer: usize,
    pub label: String,
    pub candidate_caption: String,
    pub reference_caption: String,
    /// Empty when the layer was skipped.
    pub metrics: MetricMap,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub scenario_index: usize,
    pub layers: Vec<LayerScore>,
    /// Arithmetic mean over scored layers.
    pub mean: MetricMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub images: Vec<ImageScore>,
    /// Mean over images.
    pub suite_mean: MetricMap,
    /// `(scenario index, reason)` for scenarios excluded from the averages.
    pub failed: Vec<(usize, String)>,
    pub structure: SuiteStats,
}

fn mean_of<'a>(maps: impl Iterator<Item = &'a MetricMap>) -> MetricMap {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for m in maps {
        for (k, v) in m {
            let e = sums.entry(k.clone()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    sums.into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect()
}

fn candidate_caption(result: &SceneResult, layer: usize, canvas: (usize, usize)) -> Option<String> {
    let objects: Option<Vec<CaptionObject>> = result
        .layers
        .iter()
        .map(|l| CaptionObject::from_mask(&l.label, &l.mask))
        .collect();
    Some(caption_from_template(
        &result.background,
        &objects?,
        canvas,
        CaptionKind::Layer,
        layer,
    ))
}

fn score_scene(
    result: &SceneResult,
    scenario: &Scenario,
    scorers: &ScorerSet,
) -> Result<ImageScore> {
    let image = result
        .image
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("missing render".into()))?;
    if result.layers.len() != scenario.layers.len() {
        return Err(Error::InvalidConfig(format!(
            "edit history has {} layers, scenario has {}",
            result.layers.len(),
            scenario.layers.len()
        )));
    }
    let canvas = (image.width, image.height);
    let masks: Vec<Mask> = result.layers.iter().map(|l| l.mask.clone()).collect();
    let crops = crop_layers(image, &masks)?;

    let mut layers = Vec::with_capacity(crops.len());
    for (k, crop) in crops.iter().enumerate() {
        let reference = &scenario.layers[k];
        let candidate = candidate_caption(result, k, canvas).unwrap_or_default();
        let mut score = LayerScore {
            layer: k + 1,
            label: result.layers[k].label.clone(),
            candidate_caption: candidate.clone(),
            reference_caption: reference.caption.clone(),
            metrics: MetricMap::new(),
            skipped: None,
        };
        let Some(crop) = crop else {
            score.skipped = Some("empty mask".into());
            layers.push(score);
            continue;
        };
        if scorers.bleu {
            for n in 2..=4 {
                score
                    .metrics
                    .insert(format!("bleu{n}"), bleu(&candidate, &reference.caption, n));
            }
        }
        if scorers.meteor {
            score
                .metrics
                .insert("meteor_exact".into(), meteor_exact(&candidate, &reference.caption));
        }
        if !scorers.external.is_empty() {
            let png = crop.to_png()?;
            for ext in &scorers.external {
                let v = ext.score(&png, &reference.crop_caption)?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidConfig(format!(
                        "external scorer {} returned {v}, outside [0, 1]",
                        ext.name()
                    )));
                }
                score.metrics.insert(format!("ext:{}", ext.name()), v);
            }
        }
        layers.push(score);
    }
    let mean = mean_of(layers.iter().filter(|l| l.skipped.is_none()).map(|l| &l.metrics));
    Ok(ImageScore {
        scenario_index: scenario.index,
        layers,
        mean,
    })
}

/// Scores every scenario that has a result; scenarios without a usable
/// result are listed in `failed` and left out of the averages.
pub fn evaluate_suite(
    results: &[SceneResult],
    scenarios: &[Scenario],
    scorers: &ScorerSet,
) -> Result<ScoreReport> {
    let mut images = Vec::new();
    let mut failed = Vec::new();
    for scenario in scenarios {
        let Some(result) = results.iter().find(|r| r.scenario_index == scenario.index) else {
            failed.push((scenario.index, "no result".to_string()));
            continue;
        };
        if scorers.is_empty() {
            continue;
        }
        match score_scene(result, scenario, scorers) {
            Ok(score) => images.push(score),
            Err(e) => failed.push((scenario.index, e.to_string())),
        }
    }
    Ok(ScoreReport {
        suite_mean: mean_of(images.iter().map(|i| &i.mean)),
        images,
        failed,
        structure: suite_stats(scenarios)?,
    })
}

/// Runs one scenario through a fresh session: background first, then each
/// object in mask order with its mask downsampled to the latent grid.
pub fn run_scenario(scenario: &Scenario, config: &SessionConfig) -> Result<SceneResult> {
    if let Some(first) = scenario.layers.first() {
        if first.mask.dims() != config.image_dims() {
            return Err(Error::dims(
                format!("{:?} image", config.image_dims()),
                format!("{:?} scenario canvas", first.mask.dims()),
            ));
        }
    }
    let mut session = EditSession::create(&scenario.background, config.clone())?;
    let mut layers = Vec::with_capacity(scenario.layers.len());
    for layer in &scenario.layers {
        let latent_mask =
            downsample_mask(&layer.mask, config.latent_width, config.latent_height)?;
        if latent_mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        session.add_edit(&layer_prompt(&layer.label), &latent_mask)?;
        layers.push(ResultLayer {
            label: layer.label.clone(),
            mask: layer.mask.clone(),
        });
    }
    Ok(SceneResult {
        scenario_index: scenario.index,
        background: scenario.background.clone(),
        image: Some(session.render()?),
        layers,
    })
}
