//! Riemannian Euler transport with diameter-based stopping, and
//! trajectory-ensemble classification.
//!
//! The same transport loop also runs in flat space for the Euclidean
//! baseline; the two differ only in how a step is taken and how distance is
//! measured (see [`Geometry`]).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HfmError, Result};
use crate::lorentz::{kernels, Curvature, LorentzPoint};
use crate::velocity::VelocityNet;

/// Anything that maps a state and a time to an ambient velocity.
pub trait VelocityField: Sync {
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;
}

impl VelocityField for VelocityNet {
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.forward(x, t)
    }
}

/// Wrap a closure as a velocity field.
pub struct FnField<F>(pub F);

impl<F> VelocityField for FnField<F>
where
    F: Fn(&[f64], f64) -> Vec<f64> + Sync,
{
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok((self.0)(x, t))
    }
}

/// The field that is zero everywhere.
pub struct ZeroField;

impl VelocityField for ZeroField {
    fn velocity(&self, x: &[f64], _t: f64) -> Result<Vec<f64>> {
        Ok(vec![0.0; x.len()])
    }
}

/// Target prototypes on the manifold, with their cached semantic diameter.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    points: Vec<LorentzPoint>,
    class_ids: Vec<usize>,
    kappa: f64,
    diameter: f64,
}

impl PrototypeSet {
    /// Prototypes with class ids `0..N` in order.
    pub fn new(points: Vec<LorentzPoint>, k: Curvature) -> Result<Self> {
        let ids = (0..points.len()).collect();
        Self::with_class_ids(points, ids, k)
    }

    pub fn with_class_ids(points: Vec<LorentzPoint>, class_ids: Vec<usize>, k: Curvature) -> Result<Self> {
        if class_ids.len() != points.len() {
            return Err(HfmError::invalid("one class id per prototype required"));
        }
        let diameter = semantic_diameter(&points, k)?;
        Ok(PrototypeSet {
            points,
            class_ids,
            kappa: k.kappa(),
            diameter,
        })
    }

    pub fn points(&self) -> &[LorentzPoint] {
        &self.points
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    /// `d_txt`, the largest pairwise geodesic distance.
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn curvature(&self) -> Curvature {
        Curvature::new(self.kappa).expect("validated at construction")
    }

    /// Geodesic distance from `x` to every prototype, in prototype order.
    pub fn distances(&self, x: &[f64]) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| kernels::distance(x, p.coords(), self.kappa))
            .collect()
    }

    /// Class id of the nearest prototype; ties go to the lowest class id.
    pub fn nearest_class(&self, x: &[f64]) -> usize {
        self.class_ids[argmin_by_class(&self.distances(x), &self.class_ids)]
    }

    fn coords(&self) -> Vec<Vec<f64>> {
        self.points.iter().map(|p| p.coords().to_vec()).collect()
    }
}

/// Position of the smallest score; among equal scores, the one with the
/// lowest class id.
fn argmin_by_class(scores: &[f64], class_ids: &[usize]) -> usize {
    let mut best = 0;
    for i in 1..scores.len() {
        if scores[i] < scores[best] || (scores[i] == scores[best] && class_ids[i] < class_ids[best]) {
            best = i;
        }
    }
    best
}

/// Largest pairwise geodesic distance; 0 for a single prototype.
pub fn semantic_diameter(points: &[LorentzPoint], k: Curvature) -> Result<f64> {
    if points.is_empty() {
        return Err(HfmError::invalid("prototype set is empty"));
    }
    let dim = points[0].dim();
    if points.iter().any(|p| p.dim() != dim) {
        return Err(HfmError::invalid("prototypes have inconsistent dimensions"));
    }
    let coords: Vec<&[f64]> = points.iter().map(LorentzPoint::coords).collect();
    Ok(max_pairwise(&coords, |a, b| kernels::distance(a, b, k.kappa())))
}

fn max_pairwise(points: &[&[f64]], dist: impl Fn(&[f64], &[f64]) -> f64) -> f64 {
    let mut d = 0.0f64;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d = d.max(dist(points[i], points[j]));
        }
    }
    d
}

/// Crowding factor `0.5 * log10(N)`.
pub fn crowding_factor(num_classes: usize) -> f64 {
    0.5 * (num_classes.max(1) as f64).log10()
}

/// `0.5 * log10(N) * d_txt`.
pub fn stopping_threshold(num_classes: usize, d_txt: f64) -> f64 {
    crowding_factor(num_classes) * d_txt
}

/// Number of Euler steps until `t` reaches 1.
pub fn horizon_steps(delta: f64) -> usize {
    // guard against 1/delta landing a hair above an integer
    ((1.0 / delta) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// One Euler step on the manifold: `exp_x(delta * P_x(F(x, t)))`.
pub fn euler_step(
    field: &dyn VelocityField,
    x_hat: &LorentzPoint,
    t: f64,
    delta: f64,
    k: Curvature,
) -> Result<LorentzPoint> {
    let v = field.velocity(x_hat.coords(), t)?;
    advance(x_hat, &v, delta, k)
}

/// Project an ambient velocity onto the tangent space at `x` and follow it
/// for time `delta`.
pub fn advance(x: &LorentzPoint, ambient_velocity: &[f64], delta: f64, k: Curvature) -> Result<LorentzPoint> {
    if ambient_velocity.len() != x.dim() + 1 {
        return Err(HfmError::invalid("velocity has the wrong dimension"));
    }
    if ambient_velocity.iter().any(|v| !v.is_finite()) {
        return Err(HfmError::Diverged("velocity has non-finite entries".into()));
    }
    let v = kernels::project(x.coords(), ambient_velocity, k.kappa());
    let step: Vec<f64> = v.iter().map(|c| c * delta).collect();
    let next = kernels::exp_map(x.coords(), &step, k.kappa());
    if next.iter().any(|c| !c.is_finite()) {
        return Err(HfmError::Diverged("step left the representable range".into()));
    }
    // x is on the manifold, so a rejected result is numerical breakdown
    LorentzPoint::from_ambient(next, k).map_err(|e| HfmError::Diverged(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    ThresholdHit,
    Horizon,
    /// The field blew up; the trajectory ends at the last finite state.
    Diverged,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::ThresholdHit => "threshold-hit",
            StopReason::Horizon => "horizon",
            StopReason::Diverged => "diverged",
        }
    }
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// States visited from `x_0` up to and including the stopping state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<P = LorentzPoint> {
    pub states: Vec<P>,
    pub times: Vec<f64>,
    pub stop_reason: StopReason,
}

impl<P> Trajectory<P> {
    /// Number of Euler steps taken.
    pub fn stop_index(&self) -> usize {
        self.states.len() - 1
    }

    pub fn t_star(&self) -> f64 {
        *self.times.last().expect("trajectories are never empty")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

impl Trajectory<LorentzPoint> {
    pub fn coords(&self) -> Vec<Vec<f64>> {
        self.states.iter().map(|s| s.coords().to_vec()).collect()
    }
}

impl Trajectory<Vec<f64>> {
    pub fn coords(&self) -> Vec<Vec<f64>> {
        self.states.clone()
    }
}

/// How a transport step is taken and how distance is measured.
pub trait Geometry: Sync {
    type Point: Clone + Send;
    fn coords<'a>(&self, p: &'a Self::Point) -> &'a [f64];
    fn step(&self, field: &dyn VelocityField, x: &Self::Point, t: f64, delta: f64) -> Result<Self::Point>;
    fn distance(&self, a: &[f64], b: &[f64]) -> f64;
}

/// The Lorentz model with fixed curvature.
#[derive(Debug, Clone, Copy)]
pub struct Hyperbolic(pub Curvature);

impl Geometry for Hyperbolic {
    type Point = LorentzPoint;

    fn coords<'a>(&self, p: &'a LorentzPoint) -> &'a [f64] {
        p.coords()
    }

    fn step(&self, field: &dyn VelocityField, x: &LorentzPoint, t: f64, delta: f64) -> Result<LorentzPoint> {
        euler_step(field, x, t, delta, self.0)
    }

    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        kernels::distance(a, b, self.0.kappa())
    }
}

/// Flat space, `x + delta * F(x, t)`.
#[derive(Debug, Clone, Copy)]
pub struct Euclidean;

impl Geometry for Euclidean {
    type Point = Vec<f64>;

    fn coords<'a>(&self, p: &'a Vec<f64>) -> &'a [f64] {
        p
    }

    fn step(&self, field: &dyn VelocityField, x: &Vec<f64>, t: f64, delta: f64) -> Result<Vec<f64>> {
        let v = field.velocity(x, t)?;
        if v.len() != x.len() {
            return Err(HfmError::invalid("velocity has the wrong dimension"));
        }
        let next: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + delta * b).collect();
        if next.iter().any(|c| !c.is_finite()) {
            return Err(HfmError::Diverged("velocity has non-finite entries".into()));
        }
        Ok(next)
    }

    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        euclidean_distance(a, b)
    }
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Prototypes together with the stopping scale, in any geometry.
#[derive(Debug, Clone)]
pub struct Targets {
    pub coords: Vec<Vec<f64>>,
    pub class_ids: Vec<usize>,
    pub diameter: f64,
}

impl Targets {
    pub fn hyperbolic(protos: &PrototypeSet) -> Self {
        Targets {
            coords: protos.coords(),
            class_ids: protos.class_ids.clone(),
            diameter: protos.diameter,
        }
    }

    /// Flat prototypes with class ids `0..N` and Euclidean diameter.
    pub fn euclidean(points: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(HfmError::invalid("prototype set is empty"));
        }
        let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
        let diameter = max_pairwise(&refs, euclidean_distance);
        Ok(Targets {
            class_ids: (0..points.len()).collect(),
            coords: points,
            diameter,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn threshold(&self) -> f64 {
        stopping_threshold(self.len(), self.diameter)
    }

    /// Class id of the nearest target under `geom`.
    pub fn nearest_class<G: Geometry>(&self, geom: &G, x: &[f64]) -> usize {
        let d: Vec<f64> = self.coords.iter().map(|p| geom.distance(x, p)).collect();
        self.class_ids[argmin_by_class(&d, &self.class_ids)]
    }
}

/// Transport `x0` until a prototype is within the stopping threshold or the
/// horizon is reached. The threshold is checked only after a step, so every
/// trajectory holds at least two states. A zero threshold (a single class)
/// disables early stopping.
pub fn transport<G: Geometry>(
    geom: &G,
    field: &dyn VelocityField,
    x0: G::Point,
    targets: &Targets,
    delta: f64,
) -> Result<Trajectory<G::Point>> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(HfmError::invalid(format!("delta must lie in (0, 1], got {delta}")));
    }
    if targets.is_empty() {
        return Err(HfmError::invalid("prototype set is empty"));
    }
    let threshold = targets.threshold();
    let steps = horizon_steps(delta);
    let mut states = Vec::with_capacity(steps + 1);
    let mut times = Vec::with_capacity(steps + 1);
    states.push(x0);
    times.push(0.0);
    for i in 0..steps {
        let t = i as f64 * delta;
        let next = match geom.step(field, &states[i], t, delta) {
            Ok(p) => p,
            Err(HfmError::Diverged(_)) => {
                return Ok(Trajectory {
                    states,
                    times,
                    stop_reason: StopReason::Diverged,
                })
            }
            Err(e) => return Err(e),
        };
        let nearest = targets
            .coords
            .iter()
            .map(|p| geom.distance(geom.coords(&next), p))
            .fold(f64::INFINITY, f64::min);
        states.push(next);
        times.push((i + 1) as f64 * delta);
        if threshold > 0.0 && nearest <= threshold {
            return Ok(Trajectory {
                states,
                times,
                stop_reason: StopReason::ThresholdHit,
            });
        }
    }
    Ok(Trajectory {
        states,
        times,
        stop_reason: StopReason::Horizon,
    })
}

/// Transport on the manifold towards a [`PrototypeSet`].
pub fn transport_with_stopping(
    field: &dyn VelocityField,
    x0: &LorentzPoint,
    prototypes: &PrototypeSet,
    delta: f64,
    k: Curvature,
) -> Result<Trajectory> {
    if x0.dim() != prototypes.dim() {
        return Err(HfmError::invalid("state and prototypes differ in dimension"));
    }
    if !x0.is_on_manifold(k) {
        return Err(HfmError::invalid("initial state is off the manifold"));
    }
    transport(&Hyperbolic(k), field, x0.clone(), &Targets::hyperbolic(prototypes), delta)
}

/// Predicted class and per-prototype accumulated distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub class: usize,
    pub scores: Vec<f64>,
}

impl Classification {
    /// Read-only softmax view `softmax(-scores / tau)`.
    pub fn probabilities(&self, tau: f64) -> Vec<f64> {
        let m = self.scores.iter().copied().fold(f64::INFINITY, f64::min);
        let e: Vec<f64> = self.scores.iter().map(|s| (-(s - m) / tau).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }
}

/// Argmin over prototypes of the distance summed along the trajectory,
/// `x_0` included.
pub fn classify_in<G: Geometry>(geom: &G, trajectory: &Trajectory<G::Point>, targets: &Targets) -> Classification {
    let mut scores = vec![0.0; targets.len()];
    for s in &trajectory.states {
        for (acc, p) in scores.iter_mut().zip(&targets.coords) {
            *acc += geom.distance(geom.coords(s), p);
        }
    }
    let best = argmin_by_class(&scores, &targets.class_ids);
    Classification {
        class: targets.class_ids[best],
        scores,
    }
}

pub fn classify(trajectory: &Trajectory, prototypes: &PrototypeSet, k: Curvature) -> Result<Classification> {
    if trajectory.is_empty() {
        return Err(HfmError::invalid("trajectory is empty"));
    }
    Ok(classify_in(&Hyperbolic(k), trajectory, &Targets::hyperbolic(prototypes)))
}

/// Outcome for one test sample.
#[derive(Debug, Clone)]
pub struct Prediction<P = LorentzPoint> {
    pub trajectory: Trajectory<P>,
    pub classification: Classification,
}

/// Transport and classify every start point, in parallel, results in input
/// order.
pub fn predict_all<G: Geometry>(
    geom: &G,
    field: &dyn VelocityField,
    starts: &[G::Point],
    targets: &Targets,
    delta: f64,
) -> Result<Vec<Prediction<G::Point>>>
where
    G::Point: Sync,
{
    starts
        .par_iter()
        .map(|x0| {
            let trajectory = transport(geom, field, x0.clone(), targets, delta)?;
            let classification = classify_in(geom, &trajectory, targets);
            Ok(Prediction {
                trajectory,
                classification,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lorentz::{geodesic_distance, log_map};
    use proptest::prelude::*;

    fn k1() -> Curvature {
        Curvature::new(1.0).unwrap()
    }

    fn pt(space: &[f64]) -> LorentzPoint {
        LorentzPoint::from_space(space, k1()).unwrap()
    }

    fn set(points: Vec<LorentzPoint>) -> PrototypeSet {
        PrototypeSet::new(points, k1()).unwrap()
    }

    /// Velocity whose Euler step lands exactly on `target`.
    fn towards(target: LorentzPoint, delta: f64) -> impl Fn(&[f64], f64) -> Vec<f64> + Sync {
        move |x, _t| {
            let here = LorentzPoint::from_ambient(x.to_vec(), k1()).unwrap();
            let v = log_map(&here, &target, k1()).unwrap();
            v.ambient().iter().map(|c| c * 0.5 / delta).collect()
        }
    }

    #[test]
    fn diameter_examples() {
        let o = LorentzPoint::origin(2, k1());
        let p = pt(&[1.0, 0.0]);
        assert_eq!(set(vec![p.clone()]).diameter(), 0.0);
        let two = set(vec![o.clone(), p.clone()]);
        assert!((two.diameter() - 0.881_373_587_019_543).abs() < 1e-12);
        assert_eq!(set(vec![o, p.clone(), p]).diameter(), two.diameter());
        assert!(semantic_diameter(&[], k1()).is_err());
        assert!(PrototypeSet::new(vec![], k1()).is_err());
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(stopping_threshold(10, 2.0), 1.0);
        assert_eq!(stopping_threshold(100, 1.0), 1.0);
        assert_eq!(stopping_threshold(1, 123.0), 0.0);
        for n in 1..200 {
            assert!(stopping_threshold(n + 1, 1.3) >= stopping_threshold(n, 1.3));
        }
    }

    #[test]
    fn horizon_step_counts() {
        assert_eq!(horizon_steps(0.1), 10);
        assert_eq!(horizon_steps(0.3), 4);
        assert_eq!(horizon_steps(1.0), 1);
        assert_eq!(horizon_steps(0.25), 4);
    }

    #[test]
    fn zero_field_is_a_fixed_point_and_runs_to_horizon() {
        let protos = set(vec![pt(&[3.0, 0.0]), pt(&[-3.0, 0.0])]);
        let x0 = pt(&[0.0, 2.0]);
        assert_eq!(euler_step(&ZeroField, &x0, 0.0, 0.1, k1()).unwrap(), x0);
        let traj = transport_with_stopping(&ZeroField, &x0, &protos, 0.1, k1()).unwrap();
        assert_eq!(traj.stop_reason, StopReason::Horizon);
        assert_eq!(traj.stop_index(), 10);
        assert_eq!(traj.t_star(), 1.0);
        for w in traj.times.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn threshold_is_checked_after_the_first_step() {
        let protos = set(vec![pt(&[1.0, 0.0]), pt(&[-1.0, 0.0])]);
        let x0 = protos.points()[0].clone();
        let traj = transport_with_stopping(&ZeroField, &x0, &protos, 0.1, k1()).unwrap();
        assert_eq!(traj.len(), 2);
        assert_eq!(traj.stop_reason, StopReason::ThresholdHit);
    }

    #[test]
    fn single_class_never_stops_early() {
        let protos = set(vec![pt(&[0.5, 0.5])]);
        let x0 = pt(&[1.0, -1.0]);
        let field = FnField(towards(protos.points()[0].clone(), 0.1));
        let traj = transport_with_stopping(&field, &x0, &protos, 0.1, k1()).unwrap();
        assert_eq!(traj.stop_reason, StopReason::Horizon);
        assert_eq!(traj.stop_index(), 10);
    }

    #[test]
    fn drift_over_chained_steps_stays_on_manifold() {
        for kappa in [0.5, 1.0, 2.0] {
            let k = Curvature::new(kappa).unwrap();
            let field = FnField(|x: &[f64], t: f64| {
                x.iter().enumerate().map(|(i, c)| (i as f64 - t) * c.sin() + 0.3).collect()
            });
            let mut x = LorentzPoint::from_space(&[0.2, -0.4, 0.9], k).unwrap();
            for i in 0..20 {
                x = euler_step(&field, &x, i as f64 * 0.05, 0.05, k).unwrap();
                assert!(x.residual(k) < 1e-9);
            }
        }
    }

    #[test]
    fn transport_stops_near_the_attracting_prototype() {
        let protos = set(vec![pt(&[2.0, 0.0]), pt(&[-2.0, 0.0])]);
        let field = FnField(towards(protos.points()[1].clone(), 0.1));
        let traj = transport_with_stopping(&field, &pt(&[0.0, 2.5]), &protos, 0.1, k1()).unwrap();
        assert_eq!(traj.stop_reason, StopReason::ThresholdHit);
        let last = traj.states.last().unwrap();
        let th = stopping_threshold(2, protos.diameter());
        assert!(geodesic_distance(last, &protos.points()[1], k1()) <= th);
        assert_eq!(classify(&traj, &protos, k1()).unwrap().class, 1);
    }

    #[test]
    fn blown_up_field_ends_the_trajectory() {
        let protos = set(vec![pt(&[2.0, 0.0]), pt(&[-2.0, 0.0])]);
        let field = FnField(|x: &[f64], t: f64| {
            let s = if t > 0.25 { 1e300 } else { 0.3 };
            x.iter().map(|c| c * s).collect()
        });
        let traj = transport_with_stopping(&field, &pt(&[0.0, 2.5]), &protos, 0.1, k1()).unwrap();
        assert_eq!(traj.stop_reason, StopReason::Diverged);
        assert_eq!(traj.states.len(), 4);
        assert!(traj.states.iter().all(|s| s.residual(k1()) < 1e-9));
        let nan = FnField(|x: &[f64], _t: f64| vec![f64::NAN; x.len()]);
        let traj = transport_with_stopping(&nan, &pt(&[0.0, 2.5]), &protos, 0.1, k1()).unwrap();
        assert_eq!((traj.states.len(), traj.stop_reason), (1, StopReason::Diverged));
        // a wrong-width field is a caller error, not a divergence
        let short = FnField(|_x: &[f64], _t: f64| vec![0.0]);
        assert!(transport_with_stopping(&short, &pt(&[0.0, 2.5]), &protos, 0.1, k1()).is_err());
    }

    fn five_protos() -> PrototypeSet {
        set((0..5).map(|i| {
            let a = i as f64 * 1.25;
            pt(&[4.0 * a.cos(), 4.0 * a.sin()])
        })
        .collect())
    }

    #[test]
    fn single_state_at_a_prototype() {
        let protos = five_protos();
        let traj = Trajectory {
            states: vec![protos.points()[3].clone()],
            times: vec![0.0],
            stop_reason: StopReason::Horizon,
        };
        let c = classify(&traj, &protos, k1()).unwrap();
        assert_eq!(c.class, 3);
        assert_eq!(c.scores[3], 0.0);
    }

    #[test]
    fn duplicated_states_double_scores() {
        let protos = five_protos();
        let states = vec![pt(&[0.3, 0.2]), pt(&[1.0, 0.5]), pt(&[2.0, 1.5])];
        let traj = |s: Vec<LorentzPoint>| Trajectory {
            times: (0..s.len()).map(|i| i as f64 * 0.1).collect(),
            states: s,
            stop_reason: StopReason::Horizon,
        };
        let once = classify(&traj(states.clone()), &protos, k1()).unwrap();
        let doubled: Vec<_> = states.iter().flat_map(|s| [s.clone(), s.clone()]).collect();
        let twice = classify(&traj(doubled), &protos, k1()).unwrap();
        assert_eq!(once.class, twice.class);
        for (a, b) in once.scores.iter().zip(&twice.scores) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ties_go_to_the_lowest_class() {
        let protos = set(vec![pt(&[1.0, 0.0]), pt(&[-1.0, 0.0])]);
        let traj = Trajectory {
            states: vec![pt(&[0.0, 0.7])],
            times: vec![0.0],
            stop_reason: StopReason::Horizon,
        };
        assert_eq!(classify(&traj, &protos, k1()).unwrap().class, 0);
        let swapped = PrototypeSet::with_class_ids(protos.points().to_vec(), vec![4, 2], k1()).unwrap();
        assert_eq!(classify(&traj, &swapped, k1()).unwrap().class, 2);
    }

    #[test]
    fn probabilities_favor_the_prediction() {
        let c = Classification {
            class: 1,
            scores: vec![3.0, 1.0, 2.0],
        };
        let p = c.probabilities(0.5);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[1] > p[2] && p[2] > p[0]);
    }

    #[test]
    fn euclidean_transport_and_diameter() {
        let targets = Targets::euclidean(vec![vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(targets.diameter, 5.0);
        let field = FnField(|x: &[f64], _t: f64| vec![3.0 * (3.0 - x[0]), 3.0 * (4.0 - x[1])]);
        let traj = transport(&Euclidean, &field, vec![0.0, 4.0], &targets, 0.1).unwrap();
        assert_eq!(traj.stop_reason, StopReason::ThresholdHit);
        assert_eq!(classify_in(&Euclidean, &traj, &targets).class, 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn every_state_is_on_the_manifold(
            a in prop::collection::vec(-2.0f64..2.0, 3),
            b in prop::collection::vec(-2.0f64..2.0, 3),
            x in prop::collection::vec(-2.0f64..2.0, 3),
            delta in 0.05f64..1.0,
            gain in 0.0f64..2.0,
        ) {
            let protos = set(vec![pt(&a), pt(&b)]);
            let pull = towards(protos.points()[1].clone(), delta);
            let field = FnField(move |x: &[f64], t: f64| {
                pull(x, t).iter().map(|c| gain * c + 0.1 * t).collect()
            });
            let traj = transport_with_stopping(&field, &pt(&x), &protos, delta, k1()).unwrap();
            prop_assert!(traj.stop_index() <= horizon_steps(delta));
            for s in &traj.states {
                prop_assert!(s.residual(k1()) < 1e-9);
            }
        }

        #[test]
        fn relabeling_commutes_with_prediction(
            pts in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 4),
            x in prop::collection::vec(-3.0f64..3.0, 2),
        ) {
            let points: Vec<_> = pts.iter().map(|p| pt(p)).collect();
            let base = set(points.clone());
            let perm = [2usize, 0, 3, 1];
            let permuted = PrototypeSet::with_class_ids(
                perm.iter().map(|&i| points[i].clone()).collect(),
                perm.to_vec(),
                k1(),
            ).unwrap();
            let traj = Trajectory { states: vec![pt(&x)], times: vec![0.0], stop_reason: StopReason::Horizon };
            let a = classify(&traj, &base, k1()).unwrap();
            let b = classify(&traj, &permuted, k1()).unwrap();
            prop_assert_eq!(a.class, b.class);
        }
    }
}
