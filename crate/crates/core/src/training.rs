//! Flow training: paired geodesic states, one-step prediction, and the
//! objective `L_step + lambda * L_icd`, plus a straight-line Euclidean
//! baseline trained with the same network, optimizer and schedule.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{dot, Real, Tape};
use crate::error::{HfmError, Result};
use crate::hierarchy::{hyperbolic_contrastive_loss, kernels_g, AlignedEmbedding};
use crate::inference::{euler_step, PrototypeSet, VelocityField};
use crate::lorentz::{geodesic_distance, geodesic_interpolate, kernels, Curvature, LorentzPoint};
use crate::optim::{AdamW, AdamWConfig, CosineSchedule};
use crate::velocity::{NetConfig, VelocityNet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTrainConfig {
    /// Step size, shared with inference unless overridden there.
    pub delta: f64,
    /// Weight of the inter-class decoupling term.
    pub lambda: f64,
    pub tau: f64,
    pub epochs: usize,
    /// Samples per optimizer step; 0 means the whole training set.
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Steps over which the learning rate anneals to zero; 0 means all steps.
    pub horizon: usize,
    pub seed: u64,
    pub net: NetConfig,
    /// Add a Euclidean decoupling term to the baseline as well.
    pub euclidean_icd: bool,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        FlowTrainConfig {
            delta: 0.1,
            lambda: 0.1,
            tau: 0.1,
            epochs: 1200,
            batch_size: 32,
            lr: 2e-4,
            weight_decay: 1e-4,
            horizon: 0,
            seed: 0,
            net: NetConfig::default(),
            euclidean_icd: false,
        }
    }
}

impl FlowTrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(HfmError::invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.lambda >= 0.0 && self.tau > 0.0 && self.lr >= 0.0 && self.weight_decay >= 0.0) {
            return Err(HfmError::invalid("lambda, lr, weight decay must be >= 0 and tau > 0"));
        }
        if self.net.blocks == 0 || self.net.width == 0 {
            return Err(HfmError::invalid("network needs at least one block of nonzero width"));
        }
        Ok(())
    }
}

/// One supervised pair drawn from a geodesic.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatchSample {
    pub x0: LorentzPoint,
    pub x1: LorentzPoint,
    pub t: f64,
    pub x_t: LorentzPoint,
    pub x_next: LorentzPoint,
    pub label: usize,
}

impl TrainBatchSample {
    pub fn new(x0: LorentzPoint, x1: LorentzPoint, label: usize, t: f64, delta: f64, k: Curvature) -> Result<Self> {
        let (x_t, x_next) = sample_pair_states(&x0, &x1, t, delta, k)?;
        Ok(TrainBatchSample {
            x0,
            x1,
            t,
            x_t,
            x_next,
            label,
        })
    }
}

/// `(x_t, x_{t+delta})` on the geodesic from `x0` to `x1`, with `t + delta`
/// clamped to 1.
pub fn sample_pair_states(
    x0: &LorentzPoint,
    x1: &LorentzPoint,
    t: f64,
    delta: f64,
    k: Curvature,
) -> Result<(LorentzPoint, LorentzPoint)> {
    if !(delta > 0.0) {
        return Err(HfmError::invalid("delta must be positive"));
    }
    let x_t = geodesic_interpolate(x0, x1, t, k)?;
    let x_next = geodesic_interpolate(x0, x1, (t + delta).min(1.0), k)?;
    Ok((x_t, x_next))
}

/// `exp_{x_t}(delta * P(F(x_t, t)))`; the same computation as an inference
/// Euler step.
pub fn predicted_next_state(
    field: &dyn VelocityField,
    x_t: &LorentzPoint,
    t: f64,
    delta: f64,
    k: Curvature,
) -> Result<LorentzPoint> {
    euler_step(field, x_t, t, delta, k)
}

/// Squared geodesic distance.
pub fn step_loss(x_pred: &LorentzPoint, x_gt: &LorentzPoint, k: Curvature) -> f64 {
    kernels::distance_sq(x_pred.coords(), x_gt.coords(), k.kappa())
}

/// Contrastive loss at the predicted state against the frozen prototypes.
pub fn icd_loss(x_pred: &LorentzPoint, prototypes: &PrototypeSet, label: usize, tau: f64, k: Curvature) -> Result<f64> {
    hyperbolic_contrastive_loss(x_pred, prototypes, label, tau, k)
}

/// Straight line `(1 - t) a + t b`.
pub fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect()
}

/// States fed to the network together with their supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    pub targets: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Mean loss parts over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub step: f64,
    pub icd: f64,
}

/// A flow-matching problem: how pairs are drawn and how a network output is
/// scored against them.
pub trait FlowObjective: Sync {
    /// Width of the network input and output.
    fn io_dim(&self) -> usize;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn delta(&self) -> f64;
    /// Weight of the decoupling term in the total.
    fn lambda(&self) -> f64;
    /// `(x_t, x_{t+delta})` for training sample `i`.
    fn pair(&self, i: usize, t: f64) -> Result<(Vec<f64>, Vec<f64>)>;
    fn label(&self, i: usize) -> usize;
    /// `(L_step, L_icd)` for one row given the raw network output `y`.
    fn row_loss<T: Real>(&self, state: &[f64], y: &[T], target: &[f64], label: usize) -> (T, T);

    fn batch(&self, indices: &[usize], times: &[f64]) -> Result<Batch> {
        let mut b = Batch {
            states: Vec::with_capacity(indices.len()),
            times: times.to_vec(),
            targets: Vec::with_capacity(indices.len()),
            labels: Vec::with_capacity(indices.len()),
        };
        for (&i, &t) in indices.iter().zip(times) {
            let (x, y) = self.pair(i, t)?;
            b.states.push(x);
            b.targets.push(y);
            b.labels.push(self.label(i));
        }
        Ok(b)
    }

    /// Mean losses of `net` on `batch`.
    fn loss(&self, net: &VelocityNet, batch: &Batch) -> LossParts {
        let cache = forward(net, batch);
        let out = cache.output();
        let n = batch.len() as f64;
        let (mut s, mut c) = (0.0, 0.0);
        for (r, row) in out.rows().into_iter().enumerate() {
            let y = row.to_vec();
            let (ls, li) = self.row_loss(&batch.states[r], &y, &batch.targets[r], batch.labels[r]);
            s += ls;
            c += li;
        }
        LossParts { step: s / n, icd: c / n }
    }

    /// Mean losses and the gradient of `L_step + lambda * L_icd` with respect
    /// to every network parameter.
    fn loss_and_gradient(&self, net: &VelocityNet, batch: &Batch) -> (LossParts, VelocityNet) {
        let cache = forward(net, batch);
        let out = cache.output();
        let n = batch.len();
        let lambda = self.lambda();
        let rows: Vec<(f64, f64, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|r| {
                let tape = Tape::with_capacity(4096);
                let y = tape.vars(out.row(r).as_slice().expect("row-major output"));
                let (ls, li) = self.row_loss(&batch.states[r], &y, &batch.targets[r], batch.labels[r]);
                let total = ls + li * lambda;
                let g = tape.gradient(total).wrt_all(&y);
                (ls.value(), li.value(), g)
            })
            .collect();
        let mut upstream = Array2::zeros((n, self.io_dim()));
        let (mut s, mut c) = (0.0, 0.0);
        for (r, (ls, li, g)) in rows.into_iter().enumerate() {
            s += ls;
            c += li;
            for (j, gj) in g.into_iter().enumerate() {
                upstream[[r, j]] = gj / n as f64;
            }
        }
        let grad = net.backward(&cache, upstream.view());
        (
            LossParts {
                step: s / n as f64,
                icd: c / n as f64,
            },
            grad,
        )
    }
}

fn forward(net: &VelocityNet, batch: &Batch) -> crate::velocity::ForwardCache {
    let flat: Vec<f64> = batch.states.concat();
    let xs = ArrayView2::from_shape((batch.len(), net.io_dim()), &flat).expect("consistent state widths");
    net.forward_batch(xs, &batch.times)
}

/// Geodesic pairs from image points to their prototypes on the manifold.
#[derive(Debug, Clone)]
pub struct HyperbolicFlow {
    starts: Vec<LorentzPoint>,
    labels: Vec<usize>,
    prototypes: PrototypeSet,
    kappa: f64,
    delta: f64,
    lambda: f64,
    tau: f64,
}

impl HyperbolicFlow {
    pub fn new(embedding: &AlignedEmbedding, cfg: &FlowTrainConfig) -> Result<Self> {
        Self::from_parts(
            embedding.image_points.clone(),
            embedding.labels.clone(),
            embedding.prototype_set.clone(),
            embedding.curvature(),
            cfg,
        )
    }

    pub fn from_parts(
        starts: Vec<LorentzPoint>,
        labels: Vec<usize>,
        prototypes: PrototypeSet,
        k: Curvature,
        cfg: &FlowTrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        check_pairs(starts.len(), &labels, prototypes.len())?;
        Ok(HyperbolicFlow {
            starts,
            labels,
            prototypes,
            kappa: k.kappa(),
            delta: cfg.delta,
            lambda: cfg.lambda,
            tau: cfg.tau,
        })
    }

    pub fn curvature(&self) -> Curvature {
        Curvature::new(self.kappa).expect("validated")
    }

    pub fn prototypes(&self) -> &PrototypeSet {
        &self.prototypes
    }

    /// Full sample record for training sample `i` at time `t`.
    pub fn sample(&self, i: usize, t: f64) -> Result<TrainBatchSample> {
        TrainBatchSample::new(
            self.starts[i].clone(),
            self.prototypes.points()[self.labels[i]].clone(),
            self.labels[i],
            t,
            self.delta,
            self.curvature(),
        )
    }
}

fn check_pairs(n: usize, labels: &[usize], classes: usize) -> Result<()> {
    if n == 0 {
        return Err(HfmError::invalid("flow training needs at least one sample"));
    }
    if labels.len() != n {
        return Err(HfmError::invalid("one label per sample required"));
    }
    let mut seen = vec![false; classes];
    for &l in labels {
        if l >= classes {
            return Err(HfmError::invalid(format!("label {l} has no prototype")));
        }
        seen[l] = true;
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(HfmError::invalid(format!("class {c} has no training sample")));
    }
    Ok(())
}

impl FlowObjective for HyperbolicFlow {
    fn io_dim(&self) -> usize {
        self.prototypes.dim() + 1
    }

    fn len(&self) -> usize {
        self.starts.len()
    }

    fn delta(&self) -> f64 {
        self.delta
    }

    fn lambda(&self) -> f64 {
        self.lambda
    }

    fn pair(&self, i: usize, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let x1 = &self.prototypes.points()[self.labels[i]];
        let (a, b) = sample_pair_states(&self.starts[i], x1, t, self.delta, self.curvature())?;
        Ok((a.into_coords(), b.into_coords()))
    }

    fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    fn row_loss<T: Real>(&self, state: &[f64], y: &[T], target: &[f64], label: usize) -> (T, T) {
        let lift = |v: &[f64]| -> Vec<T> { v.iter().map(|&c| y[0].lift(c)).collect() };
        let kappa = y[0].lift(self.kappa);
        let x = lift(state);
        let v: Vec<T> = kernels::project(&x, y, kappa).into_iter().map(|c| c * self.delta).collect();
        let pred = kernels::exp_map(&x, &v, kappa);
        let step = kernels::distance_sq(&pred, &lift(target), kappa);
        let icd = if self.lambda > 0.0 {
            let protos: Vec<Vec<T>> = self.prototypes.points().iter().map(|p| lift(p.coords())).collect();
            kernels_g::contrastive(&pred, &protos, label, self.tau, kappa)
        } else {
            y[0].lift(0.0)
        };
        (step, icd)
    }
}

/// Straight-line pairs in the flat tangent space at the origin.
#[derive(Debug, Clone)]
pub struct EuclideanFlow {
    starts: Vec<Vec<f64>>,
    labels: Vec<usize>,
    prototypes: Vec<Vec<f64>>,
    delta: f64,
    lambda: f64,
    tau: f64,
}

impl EuclideanFlow {
    pub fn new(starts: Vec<Vec<f64>>, labels: Vec<usize>, prototypes: Vec<Vec<f64>>, cfg: &FlowTrainConfig) -> Result<Self> {
        cfg.validate()?;
        check_pairs(starts.len(), &labels, prototypes.len())?;
        let dim = prototypes[0].len();
        if starts.iter().chain(&prototypes).any(|v| v.len() != dim) {
            return Err(HfmError::invalid("inconsistent feature dimensions"));
        }
        Ok(EuclideanFlow {
            starts,
            labels,
            prototypes,
            delta: cfg.delta,
            lambda: if cfg.euclidean_icd { cfg.lambda } else { 0.0 },
            tau: cfg.tau,
        })
    }

    pub fn prototypes(&self) -> &[Vec<f64>] {
        &self.prototypes
    }
}

impl FlowObjective for EuclideanFlow {
    fn io_dim(&self) -> usize {
        self.prototypes[0].len()
    }

    fn len(&self) -> usize {
        self.starts.len()
    }

    fn delta(&self) -> f64 {
        self.delta
    }

    fn lambda(&self) -> f64 {
        self.lambda
    }

    fn pair(&self, i: usize, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        if !(0.0..=1.0).contains(&t) {
            return Err(HfmError::invalid(format!("t must lie in [0, 1], got {t}")));
        }
        let (a, b) = (&self.starts[i], &self.prototypes[self.labels[i]]);
        Ok((lerp(a, b, t), lerp(a, b, (t + self.delta).min(1.0))))
    }

    fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    fn row_loss<T: Real>(&self, state: &[f64], y: &[T], target: &[f64], label: usize) -> (T, T) {
        let pred: Vec<T> = y.iter().zip(state).map(|(&v, &x)| v * self.delta + x).collect();
        let diff: Vec<T> = pred.iter().zip(target).map(|(&p, &g)| p - g).collect();
        let step = dot(&diff, &diff);
        let icd = if self.lambda > 0.0 {
            let logits: Vec<T> = self
                .prototypes
                .iter()
                .map(|p| {
                    let d: Vec<T> = pred.iter().zip(p).map(|(&a, &b)| a - b).collect();
                    // offset keeps the square root differentiable at a prototype
                    -(dot(&d, &d) + 1e-24).sqrt() / self.tau
                })
                .collect();
            softmax_xent(&logits, label)
        } else {
            y[0].lift(0.0)
        };
        (step, icd)
    }
}

fn softmax_xent<T: Real>(logits: &[T], label: usize) -> T {
    let m = logits.iter().map(|l| l.value()).fold(f64::NEG_INFINITY, f64::max);
    let mut sum = (logits[0] - m).exp();
    for l in &logits[1..] {
        sum = sum + (*l - m).exp();
    }
    sum.ln() - (logits[label] - m)
}

/// One optimizer step's losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub l_step: f64,
    pub l_icd: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub lambda: f64,
    pub records: Vec<LossRecord>,
}

impl LossTrace {
    /// Mean `L_step` per epoch.
    pub fn epoch_step_means(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in &self.records {
            if out.len() <= r.epoch {
                out.resize(r.epoch + 1, (0.0, 0));
            }
            out[r.epoch].0 += r.l_step;
            out[r.epoch].1 += 1;
        }
        out.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "step,L_step,L_icd,total,lr")?;
        for r in &self.records {
            writeln!(w, "{},{},{},{},{}", r.step, r.l_step, r.l_icd, r.total, r.lr)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedFlow {
    pub net: VelocityNet,
    pub trace: LossTrace,
}

/// The shared optimization loop.
pub fn fit<O: FlowObjective>(objective: &O, cfg: &FlowTrainConfig, stage: &'static str) -> Result<TrainedFlow> {
    cfg.validate()?;
    if objective.is_empty() {
        return Err(HfmError::invalid("flow training needs at least one sample"));
    }
    let mut net = VelocityNet::init(objective.io_dim(), cfg.net, cfg.seed);
    let mask = net.weight_mask();
    let mut params = net.to_flat();
    let mut opt = AdamW::new(
        params.len(),
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
    );
    let m = objective.len();
    let batch = if cfg.batch_size == 0 { m } else { cfg.batch_size.min(m) };
    let total_steps = cfg.epochs * m.div_ceil(batch);
    let horizon = if cfg.horizon == 0 { total_steps } else { cfg.horizon };
    let schedule = CosineSchedule::new(cfg.lr, horizon as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(7);
    let mut order: Vec<usize> = (0..m).collect();
    let lambda = objective.lambda();
    let mut records = Vec::with_capacity(total_steps);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let times: Vec<f64> = chunk.iter().map(|_| rng.random::<f64>()).collect();
            let b = objective.batch(chunk, &times)?;
            let (parts, grad) = objective.loss_and_gradient(&net, &b);
            let grads = grad.to_flat();
            if !(parts.step.is_finite() && parts.icd.is_finite()) || grads.iter().any(|g| !g.is_finite()) {
                return Err(HfmError::TrainingFailure {
                    stage,
                    unit: "step",
                    index: step,
                    detail: "non-finite loss or gradient".into(),
                });
            }
            let lr = schedule.lr(step as u64);
            records.push(LossRecord {
                step,
                epoch,
                l_step: parts.step,
                l_icd: parts.icd,
                total: parts.step + lambda * parts.icd,
                lr,
            });
            opt.step(&mut params, &grads, lr, Some(&mask));
            net.load_flat(&params);
            step += 1;
        }
    }
    if !net.is_finite() {
        return Err(HfmError::TrainingFailure {
            stage,
            unit: "step",
            index: step.saturating_sub(1),
            detail: "non-finite parameters".into(),
        });
    }
    Ok(TrainedFlow {
        net,
        trace: LossTrace { lambda, records },
    })
}

/// Train the velocity field on geodesics from the aligned support set to its
/// prototypes.
pub fn train_flow(embedding: &AlignedEmbedding, cfg: &FlowTrainConfig) -> Result<TrainedFlow> {
    fit(&HyperbolicFlow::new(embedding, cfg)?, cfg, "flow")
}

/// Train the same architecture on straight lines between flat features and
/// their prototypes.
pub fn train_euclidean_baseline(
    starts: Vec<Vec<f64>>,
    labels: Vec<usize>,
    prototypes: Vec<Vec<f64>>,
    cfg: &FlowTrainConfig,
) -> Result<TrainedFlow> {
    fit(&EuclideanFlow::new(starts, labels, prototypes, cfg)?, cfg, "baseline")
}

/// Distance check helper: `d(x_t, x_{t+delta}) / d(x0, x1)`.
pub fn step_fraction(sample: &TrainBatchSample, k: Curvature) -> f64 {
    geodesic_distance(&sample.x_t, &sample.x_next, k) / geodesic_distance(&sample.x0, &sample.x1, k)
}
