//! Centripetal alignment: text prototypes near the origin, image features
//! further out, each image inside its prototype's entailment cone.
//!
//! Features pass through a learned linear head `W` (initialized to the
//! identity), are scaled by `alpha_img` (images) or `alpha_txt` (prototypes),
//! lifted to the tangent space at the origin and mapped onto the manifold.
//! `W`, both scales and the curvature are optimized jointly on
//! `L_con + beta * L_entail`, averaged over the support set. Scales and
//! curvature are stored as logarithms so they stay positive.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape};
use crate::data::FeatureDataset;
use crate::error::{HfmError, Result};
use crate::inference::PrototypeSet;
use crate::lorentz::{kernels, Curvature, LorentzPoint};
use crate::optim::{AdamW, AdamWConfig, CosineSchedule};

/// Loss kernels, generic so they can run on the differentiation tape.
pub mod kernels_g {
    use super::*;

    /// `arcsin(clamp(2H / |x1~|, -1, 1))`.
    pub fn aperture<T: Real>(x1: &[T], h: f64) -> T {
        let norm = crate::autodiff::dot(&x1[1..], &x1[1..]).sqrt();
        (norm.lift(2.0 * h) / norm).asin_clamped()
    }

    /// `pi` minus the angle at `x1` between the geodesics towards the origin
    /// and towards `x0`. `None` when either direction is degenerate.
    pub fn exterior_angle<T: Real>(x1: &[T], x0: &[T], kappa: T) -> Option<T> {
        let o = kernels::origin(x1.len() - 1, kappa);
        let u = kernels::project(x1, &o, kappa);
        let w = kernels::project(x1, x0, kappa);
        let uu = kernels::inner(&u, &u);
        let ww = kernels::inner(&w, &w);
        let tiny = 1e-24;
        if !(uu.value() > tiny && ww.value() > tiny) {
            return None;
        }
        let cos_interior = kernels::inner(&u, &w) / (uu * ww).sqrt();
        Some((-cos_interior).acos_clamped())
    }

    pub fn entailment<T: Real>(x0: &[T], x1: &[T], h: f64, kappa: T) -> Option<T> {
        let ext = exterior_angle(x1, x0, kappa)?;
        Some((ext - aperture(x1, h)).relu())
    }

    /// Softmax cross-entropy over negative geodesic distances / tau.
    pub fn contrastive<P: AsRef<[T]>, T: Real>(x0: &[T], prototypes: &[P], label: usize, tau: f64, kappa: T) -> T {
        let logits: Vec<T> = prototypes
            .iter()
            .map(|p| -kernels::distance(x0, p.as_ref(), kappa) / tau)
            .collect();
        let m = logits
            .iter()
            .map(|l| l.value())
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = (logits[0] - m).exp();
        for l in &logits[1..] {
            sum = sum + (*l - m).exp();
        }
        sum.ln() - (logits[label] - m)
    }
}

/// Feature-norm scales applied before lifting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratificationScales {
    pub alpha_txt: f64,
    pub alpha_img: f64,
}

impl StratificationScales {
    /// `alpha_txt = alpha_img / 2`.
    pub fn from_image_scale(alpha_img: f64) -> Self {
        StratificationScales {
            alpha_txt: 0.5 * alpha_img,
            alpha_img,
        }
    }

    pub fn is_centripetal(&self) -> bool {
        self.alpha_txt < self.alpha_img
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    /// Cone constant `H`.
    pub h: f64,
    /// Softmax temperature.
    pub tau: f64,
    /// Weight of the entailment term.
    pub beta: f64,
    pub epochs: usize,
    pub lr: f64,
    /// Samples per optimizer step; 0 means the whole support set.
    pub batch_size: usize,
    pub seed: u64,
    /// Initial image scale; the text scale starts at half of it.
    pub alpha_img: f64,
    /// Initial curvature.
    pub kappa: f64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            h: 0.1,
            tau: 0.1,
            beta: 0.2,
            epochs: 50,
            lr: 1e-2,
            batch_size: 0,
            seed: 0,
            alpha_img: 1.0,
            kappa: 1.0,
        }
    }
}

impl AlignmentConfig {
    fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.tau > 0.0) {
            return Err(HfmError::invalid("alignment needs H > 0 and tau > 0"));
        }
        if self.beta < 0.0 || !self.beta.is_finite() {
            return Err(HfmError::invalid("beta must be non-negative"));
        }
        if !(self.lr >= 0.0 && self.alpha_img > 0.0 && self.kappa > 0.0) {
            return Err(HfmError::invalid("lr >= 0, alpha_img > 0 and kappa > 0 required"));
        }
        Ok(())
    }
}

/// The learned map from Euclidean features to the manifold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    dim: usize,
    /// Row-major `dim x dim`.
    weight: Vec<f64>,
    scales: StratificationScales,
    kappa: f64,
}

impl ProjectionHead {
    pub fn identity(dim: usize, scales: StratificationScales, k: Curvature) -> Self {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        ProjectionHead {
            dim,
            weight,
            scales,
            kappa: k.kappa(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn scales(&self) -> StratificationScales {
        self.scales
    }

    pub fn curvature(&self) -> Curvature {
        Curvature::new(self.kappa).expect("head curvature stays positive")
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(HfmError::invalid(format!(
                "feature has dimension {}, head expects {}",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// `W x`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(linear(&self.weight, x))
    }

    /// Space part of the tangent vector at the origin for an image feature.
    pub fn image_tangent(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(scale(self.project(x)?, self.scales.alpha_img))
    }

    pub fn prototype_tangent(&self, p: &[f64]) -> Result<Vec<f64>> {
        Ok(scale(self.project(p)?, self.scales.alpha_txt))
    }

    pub fn embed_image(&self, x: &[f64]) -> Result<LorentzPoint> {
        let v = self.image_tangent(x)?;
        LorentzPoint::from_ambient(kernels::embed_at_origin(&v, self.kappa), self.curvature())
    }

    pub fn embed_prototype(&self, p: &[f64]) -> Result<LorentzPoint> {
        let v = self.prototype_tangent(p)?;
        LorentzPoint::from_ambient(kernels::embed_at_origin(&v, self.kappa), self.curvature())
    }

    pub fn embed_images(&self, xs: &[Vec<f64>]) -> Result<Vec<LorentzPoint>> {
        xs.iter().map(|x| self.embed_image(x)).collect()
    }

    pub fn embed_prototypes(&self, ps: &[Vec<f64>]) -> Result<PrototypeSet> {
        let points = ps.iter().map(|p| self.embed_prototype(p)).collect::<Result<Vec<_>>>()?;
        PrototypeSet::new(points, self.curvature())
    }
}

fn linear<T: Real>(weight: &[T], x: &[f64]) -> Vec<T> {
    let n = x.len();
    weight
        .chunks(n)
        .map(|row| {
            let mut acc = row[0] * x[0];
            for j in 1..n {
                acc = acc + row[j] * x[j];
            }
            acc
        })
        .collect()
}

fn scale<T: Real>(v: Vec<T>, s: T) -> Vec<T> {
    v.into_iter().map(|x| x * s).collect()
}

/// Cone half-aperture `arcsin(clamp(2H / |x1~|))` of a prototype.
pub fn cone_aperture(x1: &LorentzPoint, h: f64) -> Result<f64> {
    if x1.space_norm() == 0.0 {
        return Err(HfmError::degenerate("cone aperture is undefined at the origin"));
    }
    Ok(kernels_g::aperture(x1.coords(), h))
}

/// Exterior angle at `x1` of the triangle (origin, `x1`, `x0`).
pub fn exterior_angle(x1: &LorentzPoint, x0: &LorentzPoint, k: Curvature) -> Result<f64> {
    if x1.space_norm() == 0.0 {
        return Err(HfmError::degenerate("parent point lies at the origin"));
    }
    if x1.dim() != x0.dim() {
        return Err(HfmError::invalid("dimension mismatch"));
    }
    kernels_g::exterior_angle(x1.coords(), x0.coords(), k.kappa())
        .ok_or_else(|| HfmError::degenerate("child coincides with parent"))
}

/// `max(0, exterior_angle - aperture)`.
pub fn entailment_loss(x0: &LorentzPoint, x1: &LorentzPoint, h: f64, k: Curvature) -> Result<f64> {
    let ext = exterior_angle(x1, x0, k)?;
    Ok((ext - cone_aperture(x1, h)?).max(0.0))
}

pub fn hyperbolic_contrastive_loss(
    x0: &LorentzPoint,
    prototypes: &PrototypeSet,
    label: usize,
    tau: f64,
    k: Curvature,
) -> Result<f64> {
    if prototypes.is_empty() {
        return Err(HfmError::invalid("prototype set is empty"));
    }
    if label >= prototypes.len() {
        return Err(HfmError::invalid(format!(
            "label {label} out of range for {} prototypes",
            prototypes.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(HfmError::invalid("tau must be positive"));
    }
    let coords: Vec<&[f64]> = prototypes.points().iter().map(LorentzPoint::coords).collect();
    Ok(kernels_g::contrastive(x0.coords(), &coords, label, tau, k.kappa()).max(0.0))
}

/// Mean losses over one epoch of alignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentEpoch {
    pub epoch: usize,
    pub contrastive: f64,
    pub entailment: f64,
    pub total: f64,
    pub alpha_txt: f64,
    pub alpha_img: f64,
    pub kappa: f64,
}

/// Result of [`run_alignment`]: the embedded support set and the learned head.
#[derive(Debug, Clone)]
pub struct AlignedEmbedding {
    pub image_points: Vec<LorentzPoint>,
    pub labels: Vec<usize>,
    pub prototype_set: PrototypeSet,
    pub head: ProjectionHead,
    pub initial_scales: StratificationScales,
    pub trace: Vec<AlignmentEpoch>,
}

impl AlignedEmbedding {
    pub fn curvature(&self) -> Curvature {
        self.head.curvature()
    }

    pub fn scales(&self) -> StratificationScales {
        self.head.scales()
    }

    /// Embed the support set of `ds` with a fixed head, without training.
    pub fn from_head(head: ProjectionHead, ds: &FeatureDataset) -> Result<Self> {
        Ok(AlignedEmbedding {
            image_points: head.embed_images(ds.features())?,
            labels: ds.labels().to_vec(),
            prototype_set: head.embed_prototypes(ds.prototypes())?,
            initial_scales: head.scales(),
            head,
            trace: Vec::new(),
        })
    }
}

/// Flat parameter vector: `W` row-major, then ln(alpha_txt), ln(alpha_img), ln(kappa).
struct HeadParams;

impl HeadParams {
    fn pack(head: &ProjectionHead) -> Vec<f64> {
        let mut p = head.weight.clone();
        p.push(head.scales.alpha_txt.ln());
        p.push(head.scales.alpha_img.ln());
        p.push(head.kappa.ln());
        p
    }

    fn unpack(dim: usize, p: &[f64]) -> ProjectionHead {
        let nw = dim * dim;
        ProjectionHead {
            dim,
            weight: p[..nw].to_vec(),
            scales: StratificationScales {
                alpha_txt: p[nw].exp(),
                alpha_img: p[nw + 1].exp(),
            },
            kappa: p[nw + 2].exp(),
        }
    }
}

/// Loss parts of the alignment objective, averaged over `batch`.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveParts<T> {
    pub contrastive: T,
    pub entailment: T,
    pub total: T,
}

/// Alignment objective as a function of the flat head parameters.
pub fn alignment_objective<T: Real>(
    params: &[T],
    ds: &FeatureDataset,
    batch: &[usize],
    cfg: &AlignmentConfig,
) -> ObjectiveParts<T> {
    let dim = ds.dim();
    let nw = dim * dim;
    let weight = &params[..nw];
    let alpha_txt = params[nw].exp();
    let alpha_img = params[nw + 1].exp();
    let kappa = params[nw + 2].exp();
    let protos: Vec<Vec<T>> = ds
        .prototypes()
        .iter()
        .map(|p| kernels::embed_at_origin(&scale(linear(weight, p), alpha_txt), kappa))
        .collect();
    let zero = kappa.lift(0.0);
    let (mut con, mut ent) = (zero, zero);
    for &i in batch {
        let label = ds.labels()[i];
        let x0 = kernels::embed_at_origin(&scale(linear(weight, &ds.features()[i]), alpha_img), kappa);
        con = con + kernels_g::contrastive(&x0, &protos, label, cfg.tau, kappa);
        if let Some(e) = kernels_g::entailment(&x0, &protos[label], cfg.h, kappa) {
            ent = ent + e;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    let (con, ent) = (con * inv, ent * inv);
    ObjectiveParts {
        contrastive: con,
        entailment: ent,
        total: con + ent * cfg.beta,
    }
}

/// Initial head for `ds` under `cfg`: identity map, `alpha_txt = alpha_img / 2`.
pub fn initial_head(dim: usize, cfg: &AlignmentConfig) -> Result<ProjectionHead> {
    Ok(ProjectionHead::identity(
        dim,
        StratificationScales::from_image_scale(cfg.alpha_img),
        Curvature::learnable(cfg.kappa)?,
    ))
}

/// Optimize the projection head, scales and curvature on the support set.
pub fn run_alignment(support: &FeatureDataset, cfg: &AlignmentConfig) -> Result<AlignedEmbedding> {
    cfg.validate()?;
    if support.is_empty() {
        return Err(HfmError::invalid("alignment needs a non-empty support set"));
    }
    let dim = support.dim();
    let head = initial_head(dim, cfg)?;
    let initial_scales = head.scales();
    let mut params = HeadParams::pack(&head);
    let mut opt = AdamW::new(
        params.len(),
        AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        },
    );
    let batch = if cfg.batch_size == 0 {
        support.len()
    } else {
        cfg.batch_size.min(support.len())
    };
    let steps_per_epoch = support.len().div_ceil(batch);
    let schedule = CosineSchedule::new(cfg.lr, (cfg.epochs * steps_per_epoch) as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..support.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        if batch < support.len() {
            order.shuffle(&mut rng);
        }
        let (mut con_sum, mut ent_sum, mut tot_sum) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(batch) {
            let tape = Tape::with_capacity(chunk.len() * (dim * dim * 2 + 400));
            let vars = tape.vars(&params);
            let parts = alignment_objective(&vars, support, chunk, cfg);
            let grads = tape.gradient(parts.total).wrt_all(&vars);
            let w = chunk.len() as f64 / support.len() as f64;
            con_sum += w * parts.contrastive.value();
            ent_sum += w * parts.entailment.value();
            tot_sum += w * parts.total.value();
            if !parts.total.value().is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(HfmError::TrainingFailure {
                    stage: "alignment",
                    unit: "epoch",
                    index: epoch,
                    detail: "non-finite objective or gradient".into(),
                });
            }
            opt.step(&mut params, &grads, schedule.lr(step), None);
            step += 1;
        }
        let current = HeadParams::unpack(dim, &params);
        trace.push(AlignmentEpoch {
            epoch,
            contrastive: con_sum,
            entailment: ent_sum,
            total: tot_sum,
            alpha_txt: current.scales.alpha_txt,
            alpha_img: current.scales.alpha_img,
            kappa: current.kappa,
        });
    }
    let head = HeadParams::unpack(dim, &params);
    if !head.weight.iter().all(|w| w.is_finite()) || !head.kappa.is_finite() {
        return Err(HfmError::TrainingFailure {
            stage: "alignment",
            unit: "epoch",
            index: cfg.epochs.saturating_sub(1),
            detail: "non-finite parameters".into(),
        });
    }
    let mut embedding = AlignedEmbedding::from_head(head, support)?;
    embedding.initial_scales = initial_scales;
    embedding.trace = trace;
    Ok(embedding)
}

/// Mean entailment loss of the support set under `head` (diagnostic).
pub fn mean_entailment(head: &ProjectionHead, ds: &FeatureDataset, h: f64) -> Result<f64> {
    let protos = head.embed_prototypes(ds.prototypes())?;
    let k = head.curvature();
    let mut sum = 0.0;
    for (x, &l) in ds.features().iter().zip(ds.labels()) {
        let x0 = head.embed_image(x)?;
        sum += entailment_loss(&x0, &protos.points()[l], h, k).unwrap_or(0.0);
    }
    Ok(sum / ds.len() as f64)
}
