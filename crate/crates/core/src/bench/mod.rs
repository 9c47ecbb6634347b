//! Multi-edit benchmark harness: scenario generation, layer-wise crops,
//! caption metrics and suite reports.

mod caption;
mod crop;
mod eval;
mod metrics;
mod scenario;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use caption::{caption_from_template, relation, with_article, CaptionKind, CaptionObject};
pub use crop::{crop_box, crop_layers, resize_bilinear, CROP_SIZE};
pub use eval::{
    evaluate_suite, run_scenario, ExternalScorer, ImageScore, LayerScore, MetricMap, ResultLayer,
    SceneResult, ScoreReport, ScorerSet,
};
pub use metrics::{bleu, bleu_scores, corpus_bleu, meteor_exact, BleuScores};
pub use scenario::{
    generate_scenarios, layer_prompt, layout_sample, suite_stats, GenConfig, LayoutConstraints,
    Scenario, ScenarioLayer, SuiteStats, CLASS_GROUPS,
};

use crate::error::Result;

/// Suite manifest as written by `bench gen`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteFile {
    pub seed: u64,
    pub config: GenConfig,
    pub stats: SuiteStats,
    pub scenarios: Vec<Scenario>,
}

impl SuiteFile {
    pub fn generate(seed: u64, count: usize, config: GenConfig) -> Result<Self> {
        let scenarios = generate_scenarios(seed, count, &config)?;
        Ok(Self {
            seed,
            stats: suite_stats(&scenarios)?,
            config,
            scenarios,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// One row per image plus the suite mean, tab separated.
pub fn report_table(report: &ScoreReport) -> String {
    let keys: Vec<&String> = report.suite_mean.keys().collect();
    let mut out = String::from("scenario");
    for k in &keys {
        out.push('\t');
        out.push_str(k);
    }
    out.push('\n');
    let mut row = |name: String, m: &MetricMap| {
        out.push_str(&name);
        for k in &keys {
            out.push_str(&format!("\t{:.4}", m.get(*k).copied().unwrap_or(f64::NAN)));
        }
        out.push('\n');
    };
    for img in &report.images {
        row(img.scenario_index.to_string(), &img.mean);
    }
    row("mean".into(), &report.suite_mean);
    out
}
