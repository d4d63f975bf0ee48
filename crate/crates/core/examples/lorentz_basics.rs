//! Points, tangent vectors, exp/log and distances on the hyperboloid.
//!
//!     cargo run --example lorentz_basics

use hfm::lorentz::{
    embed_feature, exp_map, geodesic_distance, geodesic_interpolate, lift_to_tangent_at_origin, log_map, Curvature,
    LorentzPoint,
};

fn main() -> hfm::Result<()> {
    for kappa in [0.5, 1.0, 2.0] {
        let k = Curvature::new(kappa)?;
        let o = LorentzPoint::origin(3, k);
        let x = embed_feature(&[0.8, -0.3, 0.5], 1.0, k)?;
        let y = embed_feature(&[-0.2, 0.9, 0.1], 1.5, k)?;

        println!("kappa = {kappa}");
        println!("  x = {:?}  residual {:.1e}", x.coords(), x.residual(k));
        println!("  d(o, x) = {:.6}  d(x, y) = {:.6}", geodesic_distance(&o, &x, k), geodesic_distance(&x, &y, k));

        // log then exp returns to y; the tangent norm is the distance
        let v = log_map(&x, &y, k)?;
        let back = exp_map(&x, &v, k)?;
        let err = back.coords().iter().zip(y.coords()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("  |log_x y|_L = {:.6}  exp(log) error {err:.1e}", v.lorentz_norm());

        let mid = geodesic_interpolate(&x, &y, 0.5, k)?;
        println!(
            "  midpoint: d(x, m) = {:.6}  d(m, y) = {:.6}",
            geodesic_distance(&x, &mid, k),
            geodesic_distance(&mid, &y, k)
        );

        let lifted = lift_to_tangent_at_origin(&[1.0, 0.0, 0.0], 2.0, k)?;
        let p = exp_map(lifted.base(), &lifted, k)?;
        println!("  exp_0 of a length-2 tangent lands at distance {:.6}", geodesic_distance(&o, &p, k));
    }
    Ok(())
}
