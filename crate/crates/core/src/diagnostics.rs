//! Entanglement diagnostics for transport trajectories.
//!
//! Two measures: the corridor-violation rate (intermediate states whose
//! nearest prototype is not the trajectory's own class) and the number of
//! proper crossings between trajectories of different classes after a PCA
//! projection to the plane. Plus a dependency-free SVG renderer.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::inference::{PrototypeSet, Trajectory};
use crate::lorentz::{kernels, Curvature};

/// Corridor violations overall and per true class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntanglementReport {
    pub corridor_violation_rate: f64,
    pub crossing_count: usize,
    /// `(violations, intermediate states)` per class.
    pub per_class: Vec<ClassBreakdown>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassBreakdown {
    pub class: usize,
    pub violations: usize,
    pub states: usize,
}

impl ClassBreakdown {
    pub fn rate(&self) -> f64 {
        if self.states == 0 {
            0.0
        } else {
            self.violations as f64 / self.states as f64
        }
    }
}

/// Per-class violation counts over all states after the first of each
/// trajectory. `nearest` maps a state to a class id.
pub fn corridor_breakdown<S>(
    trajectories: &[Vec<S>],
    labels: &[usize],
    num_classes: usize,
    nearest: impl Fn(&S) -> usize,
) -> Vec<ClassBreakdown> {
    assert_eq!(trajectories.len(), labels.len(), "one label per trajectory");
    let mut out: Vec<ClassBreakdown> = (0..num_classes)
        .map(|class| ClassBreakdown {
            class,
            violations: 0,
            states: 0,
        })
        .collect();
    for (states, &label) in trajectories.iter().zip(labels) {
        for s in states.iter().skip(1) {
            let c = &mut out[label];
            c.states += 1;
            if nearest(s) != label {
                c.violations += 1;
            }
        }
    }
    out
}

/// Fraction of intermediate states (excluding `x_0`) whose nearest prototype
/// is not the true class; 0 when there are no intermediate states.
pub fn violation_rate(breakdown: &[ClassBreakdown]) -> f64 {
    let v: usize = breakdown.iter().map(|c| c.violations).sum();
    let n: usize = breakdown.iter().map(|c| c.states).sum();
    if n == 0 {
        0.0
    } else {
        v as f64 / n as f64
    }
}

/// Corridor-violation rate of manifold trajectories.
pub fn corridor_violation_rate(
    trajectories: &[Trajectory],
    prototypes: &PrototypeSet,
    labels: &[usize],
    k: Curvature,
) -> f64 {
    let states: Vec<Vec<Vec<f64>>> = trajectories.iter().map(|t| t.coords()).collect();
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1).max(num_classes(prototypes));
    let kappa = k.kappa();
    let b = corridor_breakdown(&states, labels, classes, |x: &Vec<f64>| {
        let d: Vec<f64> = prototypes
            .points()
            .iter()
            .map(|p| kernels::distance(x, p.coords(), kappa))
            .collect();
        prototypes.class_ids()[first_min(&d)]
    });
    violation_rate(&b)
}

fn num_classes(prototypes: &PrototypeSet) -> usize {
    prototypes.class_ids().iter().copied().max().map_or(0, |m| m + 1)
}

fn first_min(d: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..d.len() {
        if d[i] < d[best] {
            best = i;
        }
    }
    best
}

/// Top principal directions of a point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit directions, at most two; fewer when the cloud has lower rank.
    pub components: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
    pub warnings: Vec<String>,
}

impl Pca {
    /// Fit by power iteration with deflation, seeded start vectors.
    /// Each component is signed so its first nonzero loading is positive.
    pub fn fit(points: &[Vec<f64>], seed: u64) -> Pca {
        let dim = points.first().map_or(0, Vec::len);
        let n = points.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for p in points {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v / n;
            }
        }
        let mut cov = vec![vec![0.0; dim]; dim];
        for p in points {
            let c: Vec<f64> = p.iter().zip(&mean).map(|(a, b)| a - b).collect();
            for i in 0..dim {
                for j in 0..dim {
                    cov[i][j] += c[i] * c[j] / n;
                }
            }
        }
        let trace: f64 = (0..dim).map(|i| cov[i][i]).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut components: Vec<Vec<f64>> = Vec::new();
        let mut variances = Vec::new();
        let mut warnings = Vec::new();
        for _ in 0..2.min(dim) {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
            normalize(&mut v);
            let mut lambda = 0.0;
            for _ in 0..1000 {
                let mut w = matvec(&cov, &v);
                for c in &components {
                    let proj = dot(&w, c);
                    w.iter_mut().zip(c).for_each(|(a, b)| *a -= proj * b);
                }
                let norm = normalize(&mut w);
                let done = dot(&w, &v).abs() > 1.0 - 1e-14;
                v = w;
                lambda = norm;
                if done || norm == 0.0 {
                    break;
                }
            }
            if !(lambda > 1e-12 * trace.max(f64::MIN_POSITIVE)) {
                warnings.push(format!(
                    "covariance has rank {} < 2; projecting onto the available directions",
                    components.len()
                ));
                break;
            }
            if let Some(first) = v.iter().find(|x| **x != 0.0) {
                if *first < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
            }
            components.push(v);
            variances.push(lambda);
        }
        Pca {
            mean,
            components,
            variances,
            warnings,
        }
    }

    /// Planar coordinates; missing components project to 0.
    pub fn project(&self, x: &[f64]) -> [f64; 2] {
        let c: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let mut out = [0.0; 2];
        for (o, comp) in out.iter_mut().zip(&self.components) {
            *o = dot(&c, comp);
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn matvec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// True when the open segments `pq` and `rs` cross at a single interior
/// point. Touching, shared endpoints and collinear overlap do not count.
pub fn segments_cross(p: [f64; 2], q: [f64; 2], r: [f64; 2], s: [f64; 2]) -> bool {
    let d1 = orient(p, q, r);
    let d2 = orient(p, q, s);
    let d3 = orient(r, s, p);
    let d4 = orient(r, s, q);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Proper crossings between polylines of different labels, each unordered
/// segment pair counted once.
pub fn count_crossings(polylines: &[Vec<[f64; 2]>], labels: &[usize]) -> usize {
    assert_eq!(polylines.len(), labels.len(), "one label per polyline");
    let mut count = 0;
    for a in 0..polylines.len() {
        for b in a + 1..polylines.len() {
            if labels[a] == labels[b] {
                continue;
            }
            for sa in polylines[a].windows(2) {
                for sb in polylines[b].windows(2) {
                    if segments_cross(sa[0], sa[1], sb[0], sb[1]) {
                        count += 1;
                    }
                }
            }
        }
    }
    count
}

/// Trajectories projected to the plane with a shared PCA.
#[derive(Debug, Clone)]
pub struct Projected {
    pub pca: Pca,
    pub polylines: Vec<Vec<[f64; 2]>>,
}

/// Fit a PCA on every state and project each trajectory.
pub fn project_trajectories(trajectories: &[Vec<Vec<f64>>], seed: u64) -> Projected {
    let all: Vec<Vec<f64>> = trajectories.iter().flatten().cloned().collect();
    let pca = Pca::fit(&all, seed);
    let polylines = trajectories
        .iter()
        .map(|t| t.iter().map(|s| pca.project(s)).collect())
        .collect();
    Projected { pca, polylines }
}

/// Crossing count after PCA projection of all states.
pub fn projected_crossings(trajectories: &[Vec<Vec<f64>>], labels: &[usize], seed: u64) -> usize {
    count_crossings(&project_trajectories(trajectories, seed).polylines, labels)
}

/// Tangent coordinates at the origin (space part of `log_0 x`), a flat chart
/// for projecting manifold trajectories.
pub fn origin_chart(x: &[f64], k: Curvature) -> Vec<f64> {
    let o = kernels::origin(x.len() - 1, k.kappa());
    kernels::log_map(&o, x, k.kappa())[1..].to_vec()
}

/// One panel of a trajectory plot.
#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub polylines: Vec<Vec<[f64; 2]>>,
    pub labels: Vec<usize>,
    pub prototypes: Vec<[f64; 2]>,
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Side-by-side SVG of the panels, each scaled to its own extent.
pub fn render_svg(panels: &[Panel]) -> String {
    let (w, h, pad) = (420.0, 420.0, 30.0);
    let mut svg = String::new();
    let total_w = w * panels.len().max(1) as f64;
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{}" viewBox="0 0 {total_w} {}">"#,
        h + 30.0,
        h + 30.0
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, panel) in panels.iter().enumerate() {
        let x_off = i as f64 * w;
        let pts = panel.polylines.iter().flatten().chain(&panel.prototypes);
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in pts {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        if !lo[0].is_finite() {
            lo = [-1.0, -1.0];
            hi = [1.0, 1.0];
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
        let map = |p: [f64; 2]| {
            (
                x_off + pad + (p[0] - lo[0]) / span * (w - 2.0 * pad),
                30.0 + pad + (hi[1] - p[1]) / span * (h - 2.0 * pad),
            )
        };
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
            x_off + w / 2.0,
            escape(&panel.title)
        );
        let _ = writeln!(
            svg,
            r##"<rect x="{}" y="30" width="{}" height="{}" fill="none" stroke="#ccc"/>"##,
            x_off + 2.0,
            w - 4.0,
            h - 4.0
        );
        for (line, &label) in panel.polylines.iter().zip(&panel.labels) {
            let color = PALETTE[label % PALETTE.len()];
            let path: Vec<String> = line
                .iter()
                .map(|&p| {
                    let (x, y) = map(p);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1" stroke-opacity="0.7"/>"#,
                path.join(" ")
            );
            if let Some(&start) = line.first() {
                let (x, y) = map(start);
                let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.5" fill="{color}"/>"#);
            }
        }
        for (c, &p) in panel.prototypes.iter().enumerate() {
            let (x, y) = map(p);
            let color = PALETTE[c % PALETTE.len()];
            let _ = writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="{color}" stroke="black"/>"#,
                x - 4.0,
                y - 4.0
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::StopReason;
    use crate::lorentz::LorentzPoint;

    #[test]
    fn corridor_fixture() {
        // nearest class is the sign of the first coordinate
        let nearest = |x: &f64| usize::from(*x < 0.0);
        let all_good = vec![vec![9.0, 1.0, 2.0], vec![-9.0, -1.0, -2.0]];
        let b = corridor_breakdown(&all_good, &[0, 1], 2, nearest);
        assert_eq!(violation_rate(&b), 0.0);
        let all_bad = vec![vec![1.0, -1.0, -2.0], vec![-1.0, 1.0, 2.0]];
        assert_eq!(violation_rate(&corridor_breakdown(&all_bad, &[0, 1], 2, nearest)), 1.0);
        // x_0 always violates and is ignored; 3 of the 10 later states violate
        let mixed = vec![
            vec![-5.0, 1.0, -1.0, 2.0, 3.0, -4.0],
            vec![5.0, -1.0, -2.0, 3.0, -4.0, -5.0],
        ];
        let b = corridor_breakdown(&mixed, &[0, 1], 2, nearest);
        assert_eq!(violation_rate(&b), 0.3);
        assert_eq!(b[0].violations, 2);
        assert_eq!(b[1].violations, 1);
    }

    #[test]
    fn manifold_corridor_rate() {
        let k = Curvature::new(1.0).unwrap();
        let pt = |x: f64| LorentzPoint::from_space(&[x, 0.0], k).unwrap();
        let protos = PrototypeSet::new(vec![pt(1.0), pt(-1.0)], k).unwrap();
        let traj = |xs: &[f64]| Trajectory {
            states: xs.iter().map(|&x| pt(x)).collect(),
            times: (0..xs.len()).map(|i| i as f64 * 0.1).collect(),
            stop_reason: StopReason::Horizon,
        };
        let ts = vec![traj(&[0.1, 0.5, -0.2]), traj(&[-0.1, -0.5, -0.8])];
        assert_eq!(corridor_violation_rate(&ts, &protos, &[0, 1], k), 0.25);
    }

    #[test]
    fn crossing_examples() {
        let parallel = vec![vec![[0.0, 0.0], [1.0, 0.0]], vec![[0.0, 1.0], [1.0, 1.0]]];
        assert_eq!(count_crossings(&parallel, &[0, 1]), 0);
        let x = vec![vec![[0.0, 0.0], [1.0, 1.0]], vec![[0.0, 1.0], [1.0, 0.0]]];
        assert_eq!(count_crossings(&x, &[0, 1]), 1);
        assert_eq!(count_crossings(&x, &[2, 2]), 0);
        let touching = vec![vec![[0.0, 0.0], [1.0, 1.0]], vec![[1.0, 1.0], [2.0, 0.0]]];
        assert_eq!(count_crossings(&touching, &[0, 1]), 0);
        let t_junction = vec![vec![[0.0, 0.0], [2.0, 0.0]], vec![[1.0, 0.0], [1.0, 1.0]]];
        assert_eq!(count_crossings(&t_junction, &[0, 1]), 0);
    }

    #[test]
    fn crossings_ignore_order() {
        let lines = vec![
            vec![[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]],
            vec![[0.0, 1.0], [1.0, 0.0], [2.0, 1.0]],
            vec![[0.5, -1.0], [0.5, 2.0]],
        ];
        let labels = [0, 1, 2];
        let n = count_crossings(&lines, &labels);
        let rev: Vec<_> = lines.iter().rev().cloned().collect();
        assert_eq!(count_crossings(&rev, &[2, 1, 0]), n);
        assert_eq!(n, 4);
    }

    #[test]
    fn pca_recovers_dominant_axes() {
        let mut pts = Vec::new();
        for i in 0..50 {
            let a = i as f64 * 0.37;
            pts.push(vec![3.0 * a.sin(), 0.01 * a.cos(), -a.cos()]);
        }
        let pca = Pca::fit(&pts, 0);
        assert_eq!(pca.components.len(), 2);
        assert!(pca.components[0][0].abs() > 0.99);
        assert!(pca.components[1][2].abs() > 0.99);
        for c in &pca.components {
            assert!(*c.iter().find(|x| **x != 0.0).unwrap() > 0.0);
        }
        assert_eq!(Pca::fit(&pts, 0), pca);
        assert!(pca.warnings.is_empty());
    }

    #[test]
    fn pca_on_a_line_warns() {
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let pca = Pca::fit(&pts, 3);
        assert_eq!(pca.components.len(), 1);
        assert_eq!(pca.warnings.len(), 1);
        let lines: Vec<Vec<Vec<f64>>> = vec![pts[..5].to_vec(), pts[5..].to_vec()];
        assert_eq!(projected_crossings(&lines, &[0, 1], 3), 0);
    }

    #[test]
    fn svg_is_well_formed() {
        let panel = Panel {
            title: "a < b".into(),
            polylines: vec![vec![[0.0, 0.0], [1.0, 1.0]]],
            labels: vec![3],
            prototypes: vec![[1.0, 1.0]],
        };
        let svg = render_svg(&[panel.clone(), panel]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a &lt; b"));
    }

    #[test]
    fn origin_chart_inverts_the_lift() {
        let k = Curvature::new(2.0).unwrap();
        let v = [0.3, -0.7, 1.1];
        let x = kernels::embed_at_origin(&v, k.kappa());
        for (a, b) in origin_chart(&x, k).iter().zip(v) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
