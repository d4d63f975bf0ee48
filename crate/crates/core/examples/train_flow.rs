//! Train the velocity field on an aligned support set and save the loss
//! trace and a checkpoint.
//!
//!     cargo run --release --example train_flow [out_dir]

use std::path::PathBuf;

use hfm::data::{generate_synthetic, split_k_shot, SyntheticConfig};
use hfm::hierarchy::{run_alignment, AlignmentConfig};
use hfm::training::{train_flow, FlowTrainConfig};
use hfm::velocity::VelocityNet;

fn main() -> hfm::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("hfm-train"), PathBuf::from);
    std::fs::create_dir_all(&out)?;

    let data = generate_synthetic(&SyntheticConfig::default())?;
    let (support, _) = split_k_shot(&data, 4, 0)?;
    let emb = run_alignment(&support, &AlignmentConfig::default())?;

    let cfg = FlowTrainConfig::default();
    let trained = train_flow(&emb, &cfg)?;
    let means = trained.trace.epoch_step_means();
    for (i, m) in means.iter().enumerate() {
        if i % (means.len() / 10).max(1) == 0 || i + 1 == means.len() {
            println!("epoch {i:>5}  L_step {m:.6}");
        }
    }
    println!("final / first = {:.3}", means[means.len() - 1] / means[0]);

    let trace = out.join("loss_trace.csv");
    let ckpt = out.join("checkpoint.hfmp");
    trained.trace.save_csv(&trace)?;
    trained.net.save(&ckpt)?;
    assert_eq!(VelocityNet::load(&ckpt)?, trained.net);
    println!("wrote {} and {}", trace.display(), ckpt.display());
    Ok(())
}
