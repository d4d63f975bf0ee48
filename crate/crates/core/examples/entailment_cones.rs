//! Entailment cones and the hyperbolic contrastive loss.
//!
//!     cargo run --example entailment_cones

use hfm::hierarchy::{cone_aperture, entailment_loss, exterior_angle, hyperbolic_contrastive_loss};
use hfm::inference::PrototypeSet;
use hfm::lorentz::{Curvature, LorentzPoint};

fn main() -> hfm::Result<()> {
    let k = Curvature::new(1.0)?;
    let h = 0.1;

    println!("aperture shrinks as the parent moves away from the origin:");
    for r in [0.1, 0.2, 0.4, 0.8, 1.6] {
        let parent = LorentzPoint::from_space(&[r, 0.0], k)?;
        println!("  |x1| = {r:<4} aperture = {:.4} rad", cone_aperture(&parent, h)?);
    }

    let parent = LorentzPoint::from_space(&[0.6, 0.0], k)?;
    println!("\nchildren of a parent at (0.6, 0), aperture {:.4}:", cone_aperture(&parent, h)?);
    for (name, child) in [
        ("straight out", [2.0, 0.0]),
        ("slightly off", [2.0, 0.4]),
        ("far off", [1.0, 1.5]),
        ("opposite", [-1.0, 0.2]),
    ] {
        let c = LorentzPoint::from_space(&child, k)?;
        println!(
            "  {name:<13} angle {:.4}  loss {:.4}",
            exterior_angle(&parent, &c, k)?,
            entailment_loss(&c, &parent, h, k)?
        );
    }

    let protos = PrototypeSet::new(
        vec![
            LorentzPoint::from_space(&[0.5, 0.0], k)?,
            LorentzPoint::from_space(&[0.0, 0.5], k)?,
            LorentzPoint::from_space(&[-0.5, 0.0], k)?,
        ],
        k,
    )?;
    let x = LorentzPoint::from_space(&[1.5, 0.2], k)?;
    println!("\ncontrastive loss of a point near prototype 0:");
    for tau in [1.0, 0.3, 0.1] {
        let per: Vec<String> = (0..3)
            .map(|label| format!("{:.4}", hyperbolic_contrastive_loss(&x, &protos, label, tau, k).unwrap()))
            .collect();
        println!("  tau {tau:<4} label 0/1/2: {}", per.join(" / "));
    }
    Ok(())
}
