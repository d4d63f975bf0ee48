//! Command-line front end. Every verb reads the same flat config file.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hfm::data::write_feature_file;
use hfm::experiment::{
    alignment_csv, build_metrics, evaluate_baseline, evaluate_hfm, load_dataset, prepare, run_experiment,
    train_baseline, train_hfm, write_report, ExperimentConfig, Mode, Report, BASELINE, HFM,
};
use hfm::velocity::VelocityNet;
use hfm::{HfmError, Result};

#[derive(Parser)]
#[command(name = "hfm", version, about = "Hyperbolic flow matching on the Lorentz manifold")]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `out_dir` from the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Run only the Euclidean baseline.
    #[arg(long, global = true)]
    baseline_only: bool,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and write it as an HFMF file.
    Synth,
    /// Fit the projection head and curvature; writes the alignment trace.
    Align,
    /// Align, then train the flow; writes checkpoint and loss trace.
    Train,
    /// Align, load a checkpoint and classify the test split.
    Infer {
        /// Defaults to the checkpoint `train` writes into the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Full run of both flows; uses the built-in benchmark preset unless
    /// `--config` is given.
    Bench,
    /// Print two metrics files side by side.
    Compare { a: PathBuf, b: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.stage() {
                Some(stage) if !e.to_string().starts_with(stage) => eprintln!("error in {stage}: {e}"),
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn config(cli: &Cli, preset: fn() -> ExperimentConfig) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => preset(),
    };
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| HfmError::Config(format!("--set expects KEY=VALUE, got {o:?}")))?;
        cfg.set(k.trim(), v.trim(), 0)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg.seeded())
}

fn out_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| HfmError::Io(e).in_stage("output"))?;
    Ok(&cfg.out_dir)
}

fn write(path: PathBuf, bytes: &[u8]) -> Result<()> {
    fs::write(&path, bytes)
        .map_err(|e| HfmError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))).in_stage("output"))
}

fn mode(cli: &Cli) -> Mode {
    if cli.baseline_only {
        Mode::BaselineOnly
    } else {
        Mode::Full
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth => {
            let cfg = config(&cli, ExperimentConfig::default)?;
            let ds = load_dataset(&cfg).map_err(|e| e.in_stage("data"))?;
            let path = out_dir(&cfg)?.join("features.hfmf");
            write_feature_file(&path, &ds).map_err(|e| e.in_stage("output"))?;
            println!("{} samples, {} classes, dim {} -> {}", ds.len(), ds.num_classes(), ds.dim(), path.display());
        }
        Command::Align => {
            let cfg = config(&cli, ExperimentConfig::default)?;
            let ds = load_dataset(&cfg).map_err(|e| e.in_stage("data"))?;
            let prep = prepare(&ds, &cfg)?;
            let dir = out_dir(&cfg)?;
            write(dir.join("alignment_trace.csv"), &alignment_csv(&prep.embedding))?;
            let s = prep.embedding.scales();
            println!(
                "kappa {:.4}  alpha_txt {:.4}  alpha_img {:.4}  entailment {:.4} -> {:.4}",
                prep.embedding.curvature().kappa(),
                s.alpha_txt,
                s.alpha_img,
                prep.initial_entailment,
                prep.final_entailment
            );
        }
        Command::Train => {
            let cfg = config(&cli, ExperimentConfig::default)?;
            let ds = load_dataset(&cfg).map_err(|e| e.in_stage("data"))?;
            let prep = prepare(&ds, &cfg)?;
            let dir = out_dir(&cfg)?.to_path_buf();
            let mut jobs: Vec<&str> = Vec::new();
            if !cli.baseline_only {
                jobs.push(HFM);
            }
            if cli.baseline_only || cfg.baseline {
                jobs.push(BASELINE);
            }
            for method in jobs {
                let trained = if method == HFM { train_hfm(&prep, &cfg)? } else { train_baseline(&prep, &cfg)? };
                trained.trace.save_csv(dir.join(format!("loss_trace_{method}.csv"))).map_err(|e| e.in_stage("output"))?;
                trained.net.save(dir.join(format!("checkpoint_{method}.hfmp"))).map_err(|e| e.in_stage("output"))?;
                let means = trained.trace.epoch_step_means();
                println!(
                    "{method}: step loss {:.6} -> {:.6} over {} epochs",
                    means.first().copied().unwrap_or(f64::NAN),
                    means.last().copied().unwrap_or(f64::NAN),
                    means.len()
                );
            }
        }
        Command::Infer { checkpoint } => {
            let cfg = config(&cli, ExperimentConfig::default)?;
            let method = if cli.baseline_only { BASELINE } else { HFM };
            let path = checkpoint
                .clone()
                .unwrap_or_else(|| cfg.out_dir.join(format!("checkpoint_{method}.hfmp")));
            let net = VelocityNet::load(&path).map_err(|e| e.in_stage("checkpoint"))?;
            let ds = load_dataset(&cfg).map_err(|e| e.in_stage("data"))?;
            let prep = prepare(&ds, &cfg)?;
            let (hfm, baseline) = if cli.baseline_only {
                (None, Some(evaluate_baseline(&prep, net, &cfg)?))
            } else {
                (Some(evaluate_hfm(&prep, net, &cfg)?), None)
            };
            let metrics = build_metrics(&cfg, &prep, hfm.as_ref(), baseline.as_ref())?;
            let report = Report {
                config: cfg.clone(),
                prepared: prep,
                hfm,
                baseline,
                metrics,
            };
            let written = write_report(&report, &cfg.out_dir)?;
            summarize(&report);
            println!("metrics -> {}", written.display());
        }
        Command::Bench => {
            let cfg = config(&cli, ExperimentConfig::benchmark)?;
            let report = run_experiment(&cfg, mode(&cli))?;
            let written = write_report(&report, &cfg.out_dir)?;
            summarize(&report);
            println!("metrics -> {}", written.display());
        }
        Command::Compare { a, b } => compare(a, b)?,
    }
    Ok(())
}

fn summarize(report: &Report) {
    let m = &report.metrics;
    println!(
        "nearest prototype: {:.4} (aligned)  {:.4} (raw)",
        m.nearest_prototype.aligned, m.nearest_prototype.raw
    );
    for run in [&m.hfm, &m.baseline].into_iter().flatten() {
        println!(
            "{:<13} acc {:.4}  t* {:.3}  hits {:.3}  corridor {:.4}  crossings {}",
            run.method,
            run.accuracy,
            run.mean_t_star,
            run.threshold_hit_rate,
            run.corridor_violation_rate,
            run.crossing_count
        );
    }
}

const COMPARED: [&str; 5] = [
    "accuracy",
    "mean_t_star",
    "threshold_hit_rate",
    "corridor_violation_rate",
    "crossing_count",
];

fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path)
        .map_err(|e| HfmError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    serde_json::from_str(&text).map_err(|e| HfmError::Format {
        offset: 0,
        detail: format!("{}: {e}", path.display()),
    })
}

fn compare(a: &Path, b: &Path) -> Result<()> {
    let (ja, jb) = (read_json(a)?, read_json(b)?);
    let name = |j: &serde_json::Value| j["method"].as_str().unwrap_or("?").to_string();
    println!("{:<24} {:>14} {:>14} {:>12}", "", name(&ja), name(&jb), "b - a");
    for key in COMPARED {
        let (x, y) = (ja[key].as_f64(), jb[key].as_f64());
        let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        let diff = match (x, y) {
            (Some(x), Some(y)) => format!("{:+.4}", y - x),
            _ => "-".into(),
        };
        println!("{key:<24} {:>14} {:>14} {:>12}", show(x), show(y), diff);
    }
    Ok(())
}
