//! Classify by transport: Euler steps towards the prototypes, stopping once
//! the state is within the crowding-scaled semantic diameter of one of them.
//!
//!     cargo run --release --example classify_with_stopping

use hfm::experiment::{prepare, train_hfm, ExperimentConfig};
use hfm::data::generate_synthetic;
use hfm::experiment::DatasetSource;
use hfm::inference::{crowding_factor, horizon_steps, predict_all, Hyperbolic, StopReason, Targets};

fn main() -> hfm::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.flow.epochs = 600;
    let cfg = cfg.seeded();
    let DatasetSource::Synthetic(syn) = &cfg.data else { unreachable!() };
    let data = generate_synthetic(syn)?;
    let prep = prepare(&data, &cfg)?;
    let net = train_hfm(&prep, &cfg)?.net;

    let k = prep.embedding.curvature();
    let protos = &prep.embedding.prototype_set;
    let targets = Targets::hyperbolic(protos);
    let delta = cfg.inference_delta();
    println!(
        "N = {}, d_txt = {:.4}, phi(N) = {:.4}, threshold = {:.4}, horizon = {} steps",
        protos.len(),
        targets.diameter,
        crowding_factor(protos.len()),
        targets.threshold(),
        horizon_steps(delta)
    );

    let starts = prep.test_points()?;
    let preds = predict_all(&Hyperbolic(k), &net, &starts, &targets, delta)?;
    let labels = prep.test.labels();
    let correct = preds.iter().zip(labels).filter(|(p, &l)| p.classification.class == l).count();
    let hits = preds.iter().filter(|p| p.trajectory.stop_reason == StopReason::ThresholdHit).count();
    let mean_t = preds.iter().map(|p| p.trajectory.t_star()).sum::<f64>() / preds.len() as f64;
    println!(
        "accuracy {:.4}, threshold hits {hits}/{}, mean t* {mean_t:.3}",
        correct as f64 / preds.len() as f64,
        preds.len()
    );

    println!("\nfirst five samples:");
    for (p, &l) in preds.iter().zip(labels).take(5) {
        let probs = p.classification.probabilities(cfg.flow.tau);
        println!(
            "  true {l} -> predicted {} (p = {:.3}), t* = {:.2}, {}",
            p.classification.class,
            probs[p.classification.class],
            p.trajectory.t_star(),
            p.trajectory.stop_reason
        );
    }
    Ok(())
}
