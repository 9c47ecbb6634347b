//! LB vs BCG comparison over a scripted edit sequence.

use serde::{Deserialize, Serialize};
use strata_core::bcg::{cost_model, run_edit_denoise, BlendMode, CostModel};
use strata_core::mask::{rasterize_mask, Shape};
use strata_core::{embed_prompt, EditSession, Mask, Result, SessionConfig};

const PROMPTS: &[&str] = &[
    "a red fox",
    "a hay bale",
    "a monarch butterfly",
    "a mushroom",
    "a hare",
    "a daisy",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfRow {
    pub edit: usize,
    pub mode: BlendMode,
    pub denoiser_calls: u64,
    pub omega: u64,
    pub forward_cost: u64,
    /// Mean over the timed runs.
    pub wall_ms: f64,
}

impl PerfRow {
    pub fn r(&self) -> f64 {
        self.forward_cost as f64 / self.omega as f64
    }

    /// `(omega + forward_cost) / omega`.
    pub fn gain(&self) -> f64 {
        (self.omega + self.forward_cost) as f64 / self.omega as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: BlendMode,
    pub edits: usize,
    pub omega: u64,
    pub forward_cost: u64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub runs: usize,
    pub rows: Vec<PerfRow>,
    pub summary: Vec<ModeSummary>,
    /// Analytic model evaluated at the measured `r`.
    pub model: CostModel,
    /// `Cost_LB / Cost_BCG` from the summed counters.
    pub counter_gain: f64,
}

/// Deterministic mask for edit `k`: a half-size box that walks across the grid.
pub fn scripted_mask(k: usize, width: usize, height: usize) -> Result<Mask> {
    let (bw, bh) = ((width / 2).max(1), (height / 2).max(1));
    let x0 = (k * 3) % (width - bw + 1);
    let y0 = (k * 5) % (height - bh + 1);
    rasterize_mask(
        &Shape::Rect {
            x0: x0 as i64,
            y0: y0 as i64,
            x1: (x0 + bw - 1) as i64,
            y1: (y0 + bh - 1) as i64,
        },
        width,
        height,
    )
}

/// Runs `edits` edits; before committing each (in BCG mode), times both modes
/// `runs` times on the same memory, alternating which goes first.
/// With an even `runs` each mode leads equally often.
pub fn perf_compare(config: &SessionConfig, edits: usize, runs: usize) -> Result<PerfReport> {
    let runs = runs.max(1);
    let mut session = EditSession::create("a meadow", config.clone())?;
    let mut rows = Vec::with_capacity(2 * edits);
    for k in 1..=edits {
        let prompt = PROMPTS[(k - 1) % PROMPTS.len()];
        let mask = scripted_mask(k, config.latent_width, config.latent_height)?;
        let embedding = embed_prompt(prompt, config.denoiser.d_model, config.embed_seed)?;
        let mut per_mode = [(BlendMode::Bcg, None, 0.0), (BlendMode::Lb, None, 0.0)];
        // Run 0 is an untimed warm-up of both modes.
        for run in 0..=runs {
            for slot in 0..2 {
                let entry = &mut per_mode[(slot + run) % 2];
                let outcome = run_edit_denoise(
                    session.denoiser().as_ref(),
                    session.memory(),
                    prompt,
                    embedding.clone(),
                    &mask,
                    config.seed,
                    entry.0,
                )?;
                if run > 0 {
                    entry.2 += outcome.cost.wall_time_ms;
                }
                entry.1 = Some(outcome.cost);
            }
        }
        for (mode, cost, wall) in per_mode {
            let cost = cost.expect("at least one run");
            rows.push(PerfRow {
                edit: k,
                mode,
                denoiser_calls: cost.denoiser_calls,
                omega: cost.omega,
                forward_cost: cost.forward_cost,
                wall_ms: wall / runs as f64,
            });
        }
        session.add_edit(prompt, &mask)?;
    }

    let summary: Vec<ModeSummary> = [BlendMode::Bcg, BlendMode::Lb]
        .into_iter()
        .map(|mode| {
            let mine = rows.iter().filter(|r| r.mode == mode);
            ModeSummary {
                mode,
                edits,
                omega: mine.clone().map(|r| r.omega).sum(),
                forward_cost: mine.clone().map(|r| r.forward_cost).sum(),
                wall_ms: mine.map(|r| r.wall_ms).sum(),
            }
        })
        .collect();
    let (bcg, lb) = (&summary[0], &summary[1]);
    let counter_gain = if bcg.omega == 0 {
        1.0
    } else {
        (lb.omega + lb.forward_cost) as f64 / (bcg.omega + bcg.forward_cost) as f64
    };
    let r = if lb.omega == 0 {
        0.0
    } else {
        lb.forward_cost as f64 / lb.omega as f64
    };
    let model = cost_model(
        config.denoiser.steps,
        config.denoiser.blocks,
        config.latent_height,
        config.latent_width,
        r,
    )?;
    Ok(PerfReport {
        runs,
        rows,
        summary,
        model,
        counter_gain,
    })
}

/// Fixed-width text table: one row per edit and mode, then per-mode totals.
pub fn render_table(report: &PerfReport) -> String {
    let mut out = format!(
        "{:>5} {:>5} {:>6} {:>8} {:>13} {:>8} {:>8} {:>10}\n",
        "edit", "mode", "calls", "omega", "forward_cost", "r", "gain", "wall_ms"
    );
    for row in &report.rows {
        out.push_str(&format!(
            "{:>5} {:>5} {:>6} {:>8} {:>13} {:>8.4} {:>8.4} {:>10.3}\n",
            row.edit,
            row.mode,
            row.denoiser_calls,
            row.omega,
            row.forward_cost,
            row.r(),
            row.gain(),
            row.wall_ms
        ));
    }
    out.push('\n');
    out.push_str(&format!(
        "{:>5} {:>5} {:>8} {:>13} {:>10}\n",
        "mode", "edits", "omega", "forward_cost", "wall_ms"
    ));
    for s in &report.summary {
        out.push_str(&format!(
            "{:>5} {:>5} {:>8} {:>13} {:>10.3}\n",
            s.mode, s.edits, s.omega, s.forward_cost, s.wall_ms
        ));
    }
    out.push_str(&format!(
        "\ncounter gain {:.4}  model gain (1 + r) {:.4}  wall ratio lb/bcg {:.4}\n",
        report.counter_gain,
        report.model.efficiency_gain,
        report.summary[1].wall_ms / report.summary[0].wall_ms.max(f64::MIN_POSITIVE)
    ));
    out
}
