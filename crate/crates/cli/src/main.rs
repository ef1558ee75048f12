//! Command-line entry point: dataset generation, pretraining, the synthetic
//! equivariance evaluation, linear probing, hyperparameter sweeps, and
//! report rendering.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

mod report;
mod sweep;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use equilearn::config::{load_run_config, write_config_echo, RunConfig};
use equilearn::data::{ingest, write_dataset, ProceduralDatasetSpec};
use equilearn::error::Error;
use equilearn::eval::{eval_equivariance, linear_probe, FrozenEncoder, R2Report};
use equilearn::image::TransformKind;
use equilearn::trainer::pretrain;

#[derive(Parser)]
#[command(name = "equilearn", version, about = "Two-view pretraining with intermediate-reconstruction targets and a synthetic equivariance evaluation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to the JSON run config.
    #[arg(long)]
    config: PathBuf,
    /// Override the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = load_run_config(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
            cfg.probe.seed = seed;
            cfg.linear_probe.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.to_string_lossy().into_owned();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the procedural dataset (PPM files plus labels.csv).
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 32)]
        side: usize,
        /// Polygon vertex counts, one class per entry.
        #[arg(long, default_value = "3,4,6", value_delimiter = ',')]
        classes: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        palette_seed: u64,
        /// Disable the stripe texture on polygons.
        #[arg(long)]
        no_stripes: bool,
    },
    /// Run two-view pretraining from a run config.
    Pretrain {
        #[command(flatten)]
        config: ConfigArgs,
        /// Resume from a checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate transformation-parameter recovery from a frozen checkpoint.
    EvalEquiv {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated kinds (default: the config's eval_kinds).
        #[arg(long, value_delimiter = ',')]
        kinds: Option<Vec<String>>,
    },
    /// Linear classification probe on the frozen class token.
    Probe {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run a pretrain+eval grid over lambda / d_equi / intermediates / kind.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Number of worker threads for sweep cells.
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Render an SVG bar chart from an eval-equiv report CSV.
    Report {
        /// Path to r2_report.csv.
        #[arg(long)]
        input: PathBuf,
        /// Output SVG path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cmd: Cmd) -> Result<(), Error> {
    match cmd {
        Cmd::GenData { out, n, side, classes, seed, palette_seed, no_stripes } => {
            let spec = ProceduralDatasetSpec {
                n,
                side,
                classes,
                palette_seed,
                stripes: !no_stripes,
            };
            let written = write_dataset(&out, &spec, seed)?;
            println!("wrote {written} images and labels.csv to {}", out.display());
            Ok(())
        }
        Cmd::Pretrain { config, resume } => {
            let cfg = config.load()?;
            let dataset = ingest(Path::new(&cfg.dataset_path))?;
            let out_dir = PathBuf::from(&cfg.out_dir);
            write_config_echo(&out_dir, &cfg)?;
            let outcome = pretrain(&cfg.train, &dataset, &out_dir, resume.as_deref())?;
            println!(
                "pretraining finished: {} steps, checkpoint at {}, metrics at {}",
                outcome.steps_run,
                outcome.final_checkpoint.display(),
                outcome.metrics_path.display()
            );
            Ok(())
        }
        Cmd::EvalEquiv { config, checkpoint, kinds } => {
            let cfg = config.load()?;
            let kind_names = kinds.unwrap_or_else(|| cfg.eval_kinds.clone());
            let kind_names: Vec<String> =
                kind_names.into_iter().filter(|s| !s.trim().is_empty()).collect();
            if kind_names.is_empty() {
                return Err(Error::Config("eval-equiv needs at least one kind".to_string()));
            }
            let kinds: Vec<TransformKind> = kind_names
                .iter()
                .map(|k| TransformKind::parse(k))
                .collect::<Result<_, _>>()?;
            let dataset = ingest(Path::new(&cfg.dataset_path))?;
            let frozen = FrozenEncoder::from_checkpoint(&checkpoint)?;
            let out_dir = PathBuf::from(&cfg.out_dir);
            std::fs::create_dir_all(&out_dir)?;
            let mut entries = Vec::new();
            for kind in kinds {
                let entry = eval_equivariance(&frozen, &dataset, kind, &cfg.probe)?;
                println!("R^2({}) = {:.4}  [{} params]", entry.kind, entry.r2, entry.per_param.len());
                std::fs::write(
                    out_dir.join(format!("r2_{}.json", entry.kind)),
                    serde_json::to_vec_pretty(&entry).map_err(Error::from)?,
                )?;
                entries.push(entry);
            }
            let report = R2Report::from_entries(entries, cfg.probe.clone());
            println!("mean R^2 = {:.4}", report.mean_r2);
            std::fs::write(
                out_dir.join("r2_report.json"),
                serde_json::to_vec_pretty(&report).map_err(Error::from)?,
            )?;
            let mut csv = String::from("kind,r2,n_train,n_test\n");
            for e in &report.entries {
                csv.push_str(&format!("{},{},{},{}\n", e.kind, e.r2, e.n_train, e.n_test));
            }
            csv.push_str(&format!("mean,{},,\n", report.mean_r2));
            std::fs::write(out_dir.join("r2_report.csv"), csv)?;
            Ok(())
        }
        Cmd::Probe { config, checkpoint } => {
            let cfg = config.load()?;
            let dataset = ingest(Path::new(&cfg.dataset_path))?;
            let frozen = FrozenEncoder::from_checkpoint(&checkpoint)?;
            let acc = linear_probe(&frozen, &dataset, &cfg.linear_probe)?;
            println!("linear probe top-1 accuracy: {acc:.4}");
            let out_dir = PathBuf::from(&cfg.out_dir);
            std::fs::create_dir_all(&out_dir)?;
            let payload = serde_json::json!({
                "accuracy": acc,
                "probe": cfg.linear_probe,
                "checkpoint": checkpoint.to_string_lossy(),
            });
            std::fs::write(
                out_dir.join("probe_accuracy.json"),
                serde_json::to_vec_pretty(&payload).map_err(Error::from)?,
            )?;
            Ok(())
        }
        Cmd::Sweep { config, threads } => sweep::run_sweep(&config.load()?, threads.max(1)),
        Cmd::Report { input, out } => report::render_svg_report(&input, &out),
    }
}
