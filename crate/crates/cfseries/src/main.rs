//! Command-line entry point for the counterfactual time-series laboratory.

use cfseries::datasets;
use cfseries::harness::{self, ExperimentConfig, SensitivityAxis};
use cfseries::models::ModelKind;
use cfseries::synthcontrol;
use cfseries::{CfError, Result};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "cfseries", version, about = "Counterfactual inference laboratory for event-impacted time series")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args, Clone)]
struct Overrides {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Replace the config's model kind.
    #[arg(long)]
    model: Option<ModelKind>,
    /// Run a single seed instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Replace the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict evaluation to one factual setting.
    #[arg(long, value_parser = ["0", "1", "both"])]
    setting: Option<String>,
}

impl Overrides {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(kind) = self.model {
            cfg.model.kind = kind;
        }
        if let Some(seed) = self.seed {
            cfg.run.seeds = vec![seed];
        }
        if let Some(out) = &self.out {
            cfg.run.out_dir = out.clone();
        }
        match self.setting.as_deref() {
            Some("0") => cfg.run.settings = vec![0],
            Some("1") => cfg.run.settings = vec![1],
            _ => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the configured dataset and write it as JSON lines.
    Gen {
        #[command(flatten)]
        common: Overrides,
    },
    /// Run the full pipeline: generate, split, train across seeds, evaluate,
    /// and emit results, curves, plots, checkpoints and the manifest.
    Train {
        #[command(flatten)]
        common: Overrides,
    },
    /// Re-evaluate previously trained checkpoints and rewrite results.csv.
    Eval {
        #[command(flatten)]
        common: Overrides,
    },
    /// Donor-quality sweep of the synthetic-control baseline.
    SweepSynthcontrol {
        #[command(flatten)]
        common: Overrides,
    },
    /// Hyperparameter sensitivity grid (CEPAE only).
    SweepSensitivity {
        #[command(flatten)]
        common: Overrides,
        /// latent-dim or ep-weight
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Aggregate results CSVs into a Table-1 style summary.
    Table {
        /// Directory holding one or more runs with results.csv files.
        #[arg(long)]
        dir: PathBuf,
        /// Where to write the aggregated CSV (default: DIR/table.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate a figure from a run directory's artifacts.
    Plot {
        #[arg(long, value_parser = ["series-overlay", "convergence", "sweep"])]
        kind: String,
        /// Run directory holding the needed artifacts.
        #[arg(long)]
        dir: PathBuf,
        /// Config, required for series-overlay (to rebuild the test split).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify the numerical substrate: information identities, entropy
    /// bounds, gradient reversal and finite-difference checks of all losses.
    Selftest,
}

fn cepae_reference(dir: &Path) -> Option<f64> {
    let rows = harness::read_results_csv(&dir.join("results.csv")).ok()?;
    let maes: Vec<f64> = rows
        .iter()
        .filter(|r| r.model == "cepae" && r.metric == "cf_mae")
        .map(|r| r.value)
        .collect();
    if maes.is_empty() {
        None
    } else {
        Some(maes.iter().sum::<f64>() / maes.len() as f64)
    }
}

fn plot_convergence(dir: &Path, out: &Path) -> Result<()> {
    let curves_dir = dir.join("curves");
    let mut curves = Vec::new();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&curves_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    for p in paths {
        let label = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut pts = Vec::new();
        for (i, line) in std::fs::read_to_string(&p)?.lines().enumerate() {
            if i == 0 {
                continue;
            }
            let (e, v) = line
                .split_once(',')
                .ok_or_else(|| CfError::Input(format!("bad curve row in {}", p.display())))?;
            pts.push((
                e.parse::<usize>().map_err(|e| CfError::Input(e.to_string()))?,
                v.parse::<f64>().map_err(|e| CfError::Input(e.to_string()))?,
            ));
        }
        curves.push((label, pts));
    }
    harness::plots::convergence(&curves, out)
}

fn run_cmd(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Gen { common } => {
            let cfg = common.load()?;
            let ds = harness::materialize_dataset(&cfg.dataset)?;
            let path = cfg.run.out_dir.join("dataset.jsonl");
            datasets::write_jsonl(&ds, &path)?;
            println!(
                "wrote {} series ({}) to {}",
                ds.len(),
                cfg.dataset.kind,
                path.display()
            );
        }
        Cmd::Train { common } => {
            let cfg = common.load()?;
            let manifest = harness::run(&cfg)?;
            println!(
                "run complete: {} artifacts, manifest at {}",
                manifest.artifacts.len(),
                cfg.run.out_dir.join("manifest.json").display()
            );
            for (phase, secs) in &manifest.phase_secs {
                println!("  {phase}: {secs:.1}s");
            }
        }
        Cmd::Eval { common } => {
            let cfg = common.load()?;
            let rows = harness::evaluate_run(&cfg)?;
            let table = harness::aggregate(&rows)?;
            print!("{}", harness::render_table(&table));
        }
        Cmd::SweepSynthcontrol { common } => {
            let cfg = common.load()?;
            let raw = harness::materialize_dataset(&cfg.dataset)?;
            let (scaled, _) = datasets::standardize(&raw)?;
            let sc = &cfg.synthcontrol;
            let (records, points) = synthcontrol::run_sweep(&scaled, &sc.sigmas, &sc.seeds, sc.epochs)?;
            let csv_path = cfg.run.out_dir.join("sweep.csv");
            synthcontrol::write_sweep_csv(&records, &csv_path)?;
            let reference = cepae_reference(&cfg.run.out_dir);
            harness::plots::sweep(
                &points,
                reference.map(|v| ("cepae cf MAE", v)).as_ref().map(|(l, v)| (*l, *v)),
                &cfg.run.out_dir.join("sweep.svg"),
            )?;
            for p in &points {
                println!(
                    "sigma {:>6.3}: MAE {:.4} ± {:.4}, pre-event R² {:.4}",
                    p.sigma, p.mae_mean, p.mae_std, p.r2_mean
                );
            }
            println!("wrote {}", csv_path.display());
        }
        Cmd::SweepSensitivity {
            common,
            axis,
            values,
        } => {
            let cfg = common.load()?;
            let axis: SensitivityAxis = axis.parse()?;
            let rows = harness::sensitivity_sweep(&cfg, axis, &values)?;
            let path = cfg.run.out_dir.join(format!("sensitivity-{}.csv", rows[0].axis));
            harness::write_sensitivity_csv(&rows, &path)?;
            for r in &rows {
                println!(
                    "{} {:>8.3}: MAE {:.4} ± {:.4}, MBE {:+.4} ± {:.4}",
                    r.axis, r.value, r.mae_mean, r.mae_std, r.mbe_mean, r.mbe_std
                );
            }
            println!("wrote {}", path.display());
        }
        Cmd::Table { dir, out } => {
            let rows = harness::table(&dir)?;
            print!("{}", harness::render_table(&rows));
            let out = out.unwrap_or_else(|| dir.join("table.csv"));
            harness::write_table_csv(&rows, &out)?;
            println!("wrote {}", out.display());
        }
        Cmd::Plot {
            kind,
            dir,
            config,
            out,
        } => match kind.as_str() {
            "sweep" => {
                let records = synthcontrol::read_sweep_csv(&dir.join("sweep.csv"))?;
                let points = synthcontrol::aggregate_records(&records);
                let reference = cepae_reference(&dir);
                let out = out.unwrap_or_else(|| dir.join("sweep.svg"));
                harness::plots::sweep(
                    &points,
                    reference.map(|v| ("cepae cf MAE", v)).as_ref().map(|(l, v)| (*l, *v)),
                    &out,
                )?;
                println!("wrote {}", out.display());
            }
            "convergence" => {
                let out = out.unwrap_or_else(|| dir.join("convergence.svg"));
                plot_convergence(&dir, &out)?;
                println!("wrote {}", out.display());
            }
            "series-overlay" => {
                let config = config.ok_or_else(|| {
                    CfError::Usage("series-overlay needs --config to rebuild the test split".into())
                })?;
                let cfg = ExperimentConfig::load(&config)?;
                let ([_, _, test_set], _) = harness::prepare_splits(&cfg)?;
                let seed = cfg.run.seeds[0];
                let ckpt_path = dir.join(format!("checkpoints/{}-seed{seed}.json", cfg.model.kind));
                let model = cfseries::models::Model::from_checkpoint(
                    cfseries::diffcore::Checkpoint::load(&ckpt_path)?,
                )?;
                let sample = test_set
                    .samples
                    .iter()
                    .find(|s| s.e == 1 && s.y_cf.is_some())
                    .ok_or_else(|| CfError::Input("no event sample with ground truth".into()))?;
                use cfseries::metrics::CfFunction;
                let y_hat = model.cf(&sample.y, &sample.h, sample.e, 0)?;
                let out = out.unwrap_or_else(|| dir.join("overlay.svg"));
                harness::plots::series_overlay(
                    &sample.h,
                    &sample.y,
                    &y_hat,
                    sample.y_cf.as_deref(),
                    &out,
                )?;
                println!("wrote {}", out.display());
            }
            other => return Err(CfError::Usage(format!("unknown plot kind {other}"))),
        },
        Cmd::Selftest => {
            for line in harness::selftest()? {
                println!("ok: {line}");
            }
            println!("all self-tests passed");
        }
    }
    Ok(())
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match run_cmd(cli.cmd) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::FAILURE
        }
    }
}
