//! Fit the projection head, the stratification scales and the curvature on
//! a synthetic support set.
//!
//!     cargo run --release --example align_synthetic

use hfm::data::{generate_synthetic, split_k_shot, SyntheticConfig};
use hfm::hierarchy::{mean_entailment, run_alignment, AlignmentConfig};

fn main() -> hfm::Result<()> {
    let data = generate_synthetic(&SyntheticConfig {
        spread: 0.1,
        ..Default::default()
    })?;
    let (support, _test) = split_k_shot(&data, 4, 0)?;
    let cfg = AlignmentConfig::default();
    let emb = run_alignment(&support, &cfg)?;

    println!("epoch  contrastive  entailment  alpha_txt  alpha_img  kappa");
    for e in emb.trace.iter().filter(|e| e.epoch % 10 == 0 || e.epoch + 1 == cfg.epochs) {
        println!(
            "{:>5}  {:>11.5}  {:>10.5}  {:>9.4}  {:>9.4}  {:.4}",
            e.epoch, e.contrastive, e.entailment, e.alpha_txt, e.alpha_img, e.kappa
        );
    }

    let first = emb.trace.first().map_or(f64::NAN, |e| e.entailment);
    let last = mean_entailment(&emb.head, &support, cfg.h)?;
    let s = emb.scales();
    println!("\nentailment {first:.4} -> {last:.4} ({:.1}% of start)", 100.0 * last / first);
    println!(
        "alpha_txt {:.4} < alpha_img {:.4}: prototypes stay nearer the origin ({})",
        s.alpha_txt,
        s.alpha_img,
        if s.is_centripetal() { "yes" } else { "no" }
    );
    Ok(())
}
