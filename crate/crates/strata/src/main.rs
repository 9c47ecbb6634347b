use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use strata::mask_input::fit_mask;
use strata::perf::{perf_compare, render_table};
use strata::{AppState, ServiceConfig};
use strata_core::bench::{
    evaluate_suite, report_table, run_scenario, ResultLayer, SceneResult, ScorerSet, SuiteFile,
};
use strata_core::mask::{rasterize_mask, Shape};
use strata_core::persist::{load_session, replay_session_file, save_session};
use strata_core::{Backend, EditSession, Mask, RgbImage, RleMask, SessionConfig};

#[derive(Parser)]
#[command(name = "strata", version, about = "Mask-ordered iterative image editing")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Denoiser backend: toy-dit or procedural.
    #[arg(long, global = true, env = "STRATA_BACKEND", default_value = "toy-dit")]
    backend: Backend,
    /// Seed for every initial-noise draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Latent side length in cells; images are 8x larger.
    #[arg(long, global = true, default_value_t = 16)]
    size: usize,
    /// Denoising steps per edit.
    #[arg(long, global = true, default_value_t = 20)]
    steps: usize,
}

impl Global {
    fn session_config(&self) -> SessionConfig {
        let mut cfg = SessionConfig {
            backend: self.backend,
            seed: self.seed,
            latent_width: self.size,
            latent_height: self.size,
            ..SessionConfig::default()
        };
        cfg.denoiser.steps = self.steps;
        cfg
    }
}

#[derive(Subcommand)]
enum Command {
    /// Create, edit, render and replay saved sessions.
    #[command(subcommand)]
    Session(SessionCmd),
    /// Generate, run and score benchmark suites.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Cost comparisons.
    #[command(subcommand)]
    Perf(PerfCmd),
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long, env = "STRATA_PORT", default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Subcommand)]
enum SessionCmd {
    /// Start a session from a background prompt and save it to DIR.
    New {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        prompt: String,
    },
    /// Add an object on top of the saved session.
    Edit {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        prompt: String,
        /// PNG or RLE JSON mask, at image or latent resolution.
        #[arg(long, conflicts_with = "rect", required_unless_present = "rect")]
        mask: Option<PathBuf>,
        /// Inclusive box in image pixels: x0,y0,x1,y1.
        #[arg(long)]
        rect: Option<String>,
    },
    /// Delete layer N (not the background).
    Delete {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        layer: usize,
    },
    /// Write the current image as PNG.
    Render {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run a session's edit log from scratch and print the image checksum.
    Replay {
        /// Session directory, its session.json, or an exported edit log.
        file: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        save: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Generate a seeded scenario suite.
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every scenario through a fresh session.
    Run {
        #[arg(long)]
        suite: PathBuf,
        /// Results directory (results.json plus one PNG per scenario).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Score results against a suite.
    Eval {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        results: PathBuf,
        /// Also write the full report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PerfCmd {
    /// Time and count LB against BCG over N edits.
    Compare {
        #[arg(long, default_value_t = 3)]
        edits: usize,
        /// Timed runs per edit and mode.
        #[arg(long, default_value_t = 5)]
        runs: usize,
        /// Print the structured report instead of the table.
        #[arg(long)]
        json: bool,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Session(cmd) => session(cmd, &cli.global),
        Command::Bench(cmd) => bench(cmd, &cli.global),
        Command::Perf(PerfCmd::Compare { edits, runs, json }) => {
            let report = perf_compare(&cli.global.session_config(), edits, runs)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", render_table(&report));
            }
            Ok(())
        }
        Command::Serve { bind, port } => {
            tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env()
                        .unwrap_or_else(|_| "info".into()),
                )
                .init();
            let addr: SocketAddr = format!("{bind}:{port}")
                .parse()
                .with_context(|| format!("bad address {bind}:{port}"))?;
            let state = AppState::new(ServiceConfig {
                defaults: cli.global.session_config(),
                ..ServiceConfig::default()
            });
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(strata::serve(addr, state))?;
            Ok(())
        }
    }
}

fn report(session: &EditSession) -> Result<()> {
    let img = session.render()?;
    println!("layers {}", session.memory().len());
    println!("image {}", img.checksum());
    Ok(())
}

fn parse_rect(spec: &str) -> Result<Shape> {
    let v: Vec<i64> = spec
        .split(',')
        .map(|s| s.trim().parse::<i64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("--rect expects x0,y0,x1,y1, got {spec:?}"))?;
    let [x0, y0, x1, y1] = v[..] else {
        bail!("--rect expects four numbers, got {}", v.len());
    };
    Ok(Shape::Rect { x0, y0, x1, y1 })
}

fn read_mask(path: &Path) -> Result<Mask> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        return Ok(Mask::from_png(&bytes)?);
    }
    let rle: RleMask = serde_json::from_slice(&bytes)
        .with_context(|| format!("{} is neither PNG nor RLE JSON", path.display()))?;
    Ok(Mask::try_from(rle)?)
}

fn session(cmd: SessionCmd, global: &Global) -> Result<()> {
    match cmd {
        SessionCmd::New { dir, prompt } => {
            let s = EditSession::create(&prompt, global.session_config())?;
            fs::create_dir_all(&dir)?;
            save_session(&s, &dir)?;
            report(&s)
        }
        SessionCmd::Edit {
            dir,
            prompt,
            mask,
            rect,
        } => {
            let mut s = load_session(&dir)?;
            let raw = match (mask, rect) {
                (Some(path), _) => read_mask(&path)?,
                (None, Some(spec)) => {
                    let (w, h) = s.config().image_dims();
                    rasterize_mask(&parse_rect(&spec)?, w, h)?
                }
                (None, None) => bail!("pass --mask or --rect"),
            };
            let mask = fit_mask(&raw, s.config())?;
            s.add_edit(&prompt, &mask)?;
            save_session(&s, &dir)?;
            report(&s)
        }
        SessionCmd::Delete { dir, layer } => {
            let mut s = load_session(&dir)?;
            s.delete_edit(layer)?;
            save_session(&s, &dir)?;
            report(&s)
        }
        SessionCmd::Render { dir, out } => {
            let s = load_session(&dir)?;
            let img = s.render()?;
            fs::write(&out, img.to_png()?)?;
            println!("image {}", img.checksum());
            Ok(())
        }
        SessionCmd::Replay { file, out, save } => {
            let s = replay_session_file(&file)?;
            if let Some(out) = out {
                fs::write(out, s.render()?.to_png()?)?;
            }
            if let Some(dir) = save {
                fs::create_dir_all(&dir)?;
                save_session(&s, &dir)?;
            }
            report(&s)
        }
    }
}

/// One scenario's result on disk; the image lives next to it as PNG.
#[derive(Serialize, Deserialize)]
struct ResultEntry {
    scenario_index: usize,
    background: String,
    image: Option<String>,
    layers: Vec<ResultLayer>,
    error: Option<String>,
}

const RESULTS_FILE: &str = "results.json";

fn bench(cmd: BenchCmd, global: &Global) -> Result<()> {
    match cmd {
        BenchCmd::Gen { seed, count, out } => {
            let suite = SuiteFile::generate(seed, count, Default::default())?;
            match out {
                Some(path) => {
                    suite.write(&path)?;
                    let s = &suite.stats;
                    println!("scenarios {}", s.scenarios);
                    for (steps, frac) in &s.step_distribution {
                        println!("steps {steps}: {:.1}%", frac * 100.0);
                    }
                    println!("average occlusion {:.4}", s.average_occlusion_ratio);
                }
                None => println!("{}", suite.to_json()?),
            }
            Ok(())
        }
        BenchCmd::Run { suite, out, limit } => {
            let suite = SuiteFile::read(&suite)?;
            let (iw, ih) = (suite.config.image_width, suite.config.image_height);
            // --size names the latent width; the decode scale follows from it.
            if global.size == 0 || iw % global.size != 0 || ih % (iw / global.size).max(1) != 0 {
                bail!("--size {} does not evenly divide the {iw}x{ih} suite canvas", global.size);
            }
            let scale = iw / global.size;
            let mut config = global.session_config();
            config.latent_width = global.size;
            config.latent_height = ih / scale;
            config.decode_scale = scale;
            fs::create_dir_all(&out)?;
            let n = limit.unwrap_or(suite.scenarios.len()).min(suite.scenarios.len());
            let mut entries = Vec::with_capacity(n);
            for scenario in &suite.scenarios[..n] {
                let entry = match run_scenario(scenario, &config) {
                    Ok(result) => {
                        let name = format!("{:05}.png", scenario.index);
                        if let Some(img) = &result.image {
                            fs::write(out.join(&name), img.to_png()?)?;
                        }
                        ResultEntry {
                            scenario_index: result.scenario_index,
                            background: result.background,
                            image: result.image.map(|_| name),
                            layers: result.layers,
                            error: None,
                        }
                    }
                    Err(e) => ResultEntry {
                        scenario_index: scenario.index,
                        background: scenario.background.clone(),
                        image: None,
                        layers: Vec::new(),
                        error: Some(e.to_string()),
                    },
                };
                if let Some(e) = &entry.error {
                    eprintln!("scenario {}: {e}", scenario.index);
                }
                entries.push(entry);
            }
            fs::write(out.join(RESULTS_FILE), serde_json::to_vec_pretty(&entries)?)?;
            println!("ran {n} scenarios into {}", out.display());
            Ok(())
        }
        BenchCmd::Eval {
            suite,
            results,
            json,
        } => {
            let suite = SuiteFile::read(&suite)?;
            let dir = if results.is_dir() {
                results.clone()
            } else {
                results.parent().map(Path::to_path_buf).unwrap_or_default()
            };
            let file = if results.is_dir() {
                results.join(RESULTS_FILE)
            } else {
                results.clone()
            };
            let entries: Vec<ResultEntry> = serde_json::from_slice(&fs::read(&file)?)?;
            let scene_results = entries
                .into_iter()
                .filter(|e| e.error.is_none())
                .map(|e| {
                    let image = e
                        .image
                        .map(|name| RgbImage::from_png(&fs::read(dir.join(name))?))
                        .transpose()?;
                    Ok(SceneResult {
                        scenario_index: e.scenario_index,
                        background: e.background,
                        image,
                        layers: e.layers,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let report = evaluate_suite(&scene_results, &suite.scenarios, &ScorerSet::internal())?;
            print!("{}", report_table(&report));
            println!(
                "scored {} of {} scenarios; average occlusion {:.4}",
                report.images.len(),
                suite.scenarios.len(),
                report.structure.average_occlusion_ratio
            );
            if let Some(path) = json {
                fs::write(path, serde_json::to_vec_pretty(&report)?)?;
            }
            Ok(())
        }
    }
}
