//! Entanglement diagnostics on hand-made trajectories: corridor violations,
//! PCA projection, crossing count and an SVG.
//!
//!     cargo run --example trajectory_diagnostics

use hfm::diagnostics::{count_crossings, origin_chart, project_trajectories, render_svg, Panel};
use hfm::inference::{transport_with_stopping, FnField, PrototypeSet};
use hfm::lorentz::{embed_feature, log_map, Curvature, LorentzPoint};
use hfm::diagnostics::corridor_violation_rate;

fn main() -> hfm::Result<()> {
    let k = Curvature::new(1.0)?;
    let protos = PrototypeSet::new(
        vec![embed_feature(&[0.5, 0.0, 0.0], 1.0, k)?, embed_feature(&[0.0, 0.5, 0.0], 1.0, k)?],
        k,
    )?;
    let starts: Vec<(LorentzPoint, usize)> = vec![
        (embed_feature(&[2.0, 0.3, 0.1], 1.0, k)?, 0),
        (embed_feature(&[1.8, -0.4, 0.0], 1.0, k)?, 0),
        (embed_feature(&[0.3, 2.0, -0.2], 1.0, k)?, 1),
        (embed_feature(&[1.6, 1.2, 0.0], 1.0, k)?, 1),
    ];

    // geodesic pull towards the true prototype plus a swirl that bends
    // paths across the other class's corridor
    let mut trajectories = Vec::new();
    let mut labels = Vec::new();
    for (x0, label) in &starts {
        let target = protos.points()[*label].clone();
        let field = FnField(move |x: &[f64], t: f64| {
            let here = LorentzPoint::from_ambient(x.to_vec(), k).unwrap();
            let mut v: Vec<f64> = log_map(&here, &target, k).unwrap().ambient().iter().map(|c| 3.0 * c).collect();
            // rotation about the third axis, damped far from the origin
            let swirl = 2.0 * (1.0 - t) / x[0];
            v[1] -= swirl * x[2];
            v[2] += swirl * x[1];
            v
        });
        trajectories.push(transport_with_stopping(&field, x0, &protos, 0.1, k)?);
        labels.push(*label);
    }

    let rate = corridor_violation_rate(&trajectories, &protos, &labels, k);
    let chart: Vec<Vec<Vec<f64>>> = trajectories
        .iter()
        .map(|t| t.coords().iter().map(|x| origin_chart(x, k)).collect())
        .collect();
    let projected = project_trajectories(&chart, 0);
    let crossings = count_crossings(&projected.polylines, &labels);
    println!("corridor violation rate {rate:.3}, crossings {crossings}");
    println!("explained variances {:?}", projected.pca.variances);
    for w in &projected.pca.warnings {
        println!("warning: {w}");
    }
    for (t, l) in trajectories.iter().zip(&labels) {
        println!("  class {l}: {} states, t* {:.2}, {}", t.states.len(), t.t_star(), t.stop_reason);
    }

    let panel = Panel {
        title: "toy flows".into(),
        polylines: projected.polylines.clone(),
        labels,
        prototypes: protos.points().iter().map(|p| projected.pca.project(&origin_chart(p.coords(), k))).collect(),
    };
    let path = std::env::temp_dir().join("hfm-toy-trajectories.svg");
    std::fs::write(&path, render_svg(&[panel]))?;
    println!("wrote {}", path.display());
    Ok(())
}
