//! The full pipeline for both flows on overlapping clusters, with every
//! artifact written to a directory: metrics JSON, predictions, trajectories,
//! loss traces, checkpoints and a side-by-side SVG.
//!
//!     cargo run --release --example euclidean_vs_hyperbolic [out_dir]

use std::path::PathBuf;

use hfm::experiment::{run_experiment, write_report, ExperimentConfig, Mode};

fn main() -> hfm::Result<()> {
    let mut cfg = ExperimentConfig::benchmark();
    // a shorter run than the benchmark; pass `3000` to match it
    cfg.flow.epochs = std::env::args().nth(2).map_or(800, |s| s.parse().expect("epochs"));
    if let Some(dir) = std::env::args().nth(1) {
        cfg.out_dir = PathBuf::from(dir);
    } else {
        cfg.out_dir = std::env::temp_dir().join("hfm-compare");
    }
    let cfg = cfg.seeded();
    let report = run_experiment(&cfg, Mode::Full)?;
    let metrics = write_report(&report, &cfg.out_dir)?;

    let m = &report.metrics;
    println!("nearest prototype (aligned): {:.4}", m.nearest_prototype.aligned);
    println!("{:<14}{:>10}{:>10}{:>10}{:>12}{:>11}", "method", "accuracy", "t*", "hits", "corridor", "crossings");
    for r in [&m.hfm, &m.baseline].into_iter().flatten() {
        println!(
            "{:<14}{:>10.4}{:>10.3}{:>10.3}{:>12.4}{:>11}",
            r.method, r.accuracy, r.mean_t_star, r.threshold_hit_rate, r.corridor_violation_rate, r.crossing_count
        );
    }
    println!("\nwrote {}", metrics.display());
    Ok(())
}
