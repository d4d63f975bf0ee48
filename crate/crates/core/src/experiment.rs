//! End-to-end runs: dataset, alignment, flow training, inference, the
//! Euclidean baseline, and every file a run writes.
//!
//! Configuration is a flat `key = value` text file; see
//! [`ExperimentConfig::parse`] for the keys. A run is fully determined by its
//! config, and the metrics JSON contains no timings or absolute paths, so two
//! runs of the same config produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::data::{generate_synthetic, read_csv_dataset, read_feature_file, split_k_shot, FeatureDataset, SyntheticConfig};
use crate::diagnostics::{
    corridor_breakdown, origin_chart, project_trajectories, count_crossings, violation_rate, ClassBreakdown, Panel,
    Projected, render_svg,
};
use crate::error::{HfmError, Result};
use crate::hierarchy::{mean_entailment, run_alignment, AlignedEmbedding, AlignmentConfig};
use crate::inference::{predict_all, Euclidean, Geometry, Hyperbolic, Prediction, StopReason, Targets};
use crate::lorentz::LorentzPoint;
use crate::training::{train_euclidean_baseline, train_flow, FlowTrainConfig, LossTrace, TrainedFlow};
use crate::velocity::VelocityNet;

/// Where the features come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic(SyntheticConfig),
    /// An HFMF feature file.
    FeatureFile(PathBuf),
    /// A samples CSV and a prototypes CSV.
    Csv { samples: PathBuf, prototypes: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Drives data generation, the k-shot split, alignment and training.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DatasetSource,
    /// Support samples per class.
    pub shots: usize,
    pub align: AlignmentConfig,
    pub flow: FlowTrainConfig,
    /// Inference step size; defaults to the training step size.
    pub infer_delta: Option<f64>,
    /// Also train and evaluate the Euclidean baseline.
    pub baseline: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out_dir: PathBuf::from("hfm-out"),
            data: DatasetSource::Synthetic(SyntheticConfig::default()),
            shots: 4,
            align: AlignmentConfig::default(),
            flow: FlowTrainConfig::default(),
            infer_delta: None,
            baseline: true,
        }
    }
}

fn cfg_err(line: usize, msg: impl std::fmt::Display) -> HfmError {
    if line == 0 {
        HfmError::Config(msg.to_string())
    } else {
        HfmError::Config(format!("line {line}: {msg}"))
    }
}

fn parse_val<T: std::str::FromStr>(key: &str, v: &str, line: usize) -> Result<T> {
    v.parse()
        .map_err(|_| cfg_err(line, format!("cannot parse value {v:?} for key {key}")))
}

impl ExperimentConfig {
    /// Parse `key = value` lines. Blank lines and lines starting with `#`
    /// are ignored; unknown keys are errors. Keys not given keep their
    /// defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(i + 1, format!("expected key = value, got {line:?}")))?;
            cfg.set(k.trim(), v.trim(), i + 1)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| HfmError::Config(format!("cannot read {}: {e}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    /// Set one key; `line` is used in error messages (0 for none).
    pub fn set(&mut self, key: &str, v: &str, line: usize) -> Result<()> {
        macro_rules! val {
            () => {
                parse_val(key, v, line)?
            };
        }
        fn syn<'a>(cfg: &'a mut ExperimentConfig, key: &str, line: usize) -> Result<&'a mut SyntheticConfig> {
            match &mut cfg.data {
                DatasetSource::Synthetic(s) => Ok(s),
                _ => Err(cfg_err(line, format!("{key} only applies to data.source = synthetic"))),
            }
        }
        match key {
            "seed" => self.seed = val!(),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "data.source" => {
                self.data = match v {
                    "synthetic" => DatasetSource::Synthetic(SyntheticConfig::default()),
                    "hfmf" => DatasetSource::FeatureFile(PathBuf::new()),
                    "csv" => DatasetSource::Csv {
                        samples: PathBuf::new(),
                        prototypes: PathBuf::new(),
                    },
                    other => return Err(cfg_err(line, format!("unknown data.source {other:?}"))),
                }
            }
            "data.path" => match &mut self.data {
                DatasetSource::FeatureFile(p) => *p = PathBuf::from(v),
                _ => return Err(cfg_err(line, "data.path needs data.source = hfmf")),
            },
            "data.samples_csv" | "data.prototypes_csv" => match &mut self.data {
                DatasetSource::Csv { samples, prototypes } => {
                    let slot = if key == "data.samples_csv" { samples } else { prototypes };
                    *slot = PathBuf::from(v);
                }
                _ => return Err(cfg_err(line, format!("{key} needs data.source = csv"))),
            },
            "data.classes" => syn(self, key, line)?.num_classes = val!(),
            "data.dim" => syn(self, key, line)?.dim = val!(),
            "data.samples_per_class" => syn(self, key, line)?.samples_per_class = val!(),
            "data.spread" => syn(self, key, line)?.spread = val!(),
            "data.center_distance" => syn(self, key, line)?.center_distance = val!(),
            "data.overlap" => syn(self, key, line)?.overlap = val!(),
            "data.prototype_offset" => syn(self, key, line)?.prototype_offset = val!(),
            "data.shots" => self.shots = val!(),
            "align.h" => self.align.h = val!(),
            "align.tau" => self.align.tau = val!(),
            "align.beta" => self.align.beta = val!(),
            "align.epochs" => self.align.epochs = val!(),
            "align.lr" => self.align.lr = val!(),
            "align.batch_size" => self.align.batch_size = val!(),
            "align.alpha_img" => self.align.alpha_img = val!(),
            "align.kappa" => self.align.kappa = val!(),
            "flow.delta" => self.flow.delta = val!(),
            "flow.lambda" => self.flow.lambda = val!(),
            "flow.tau" => self.flow.tau = val!(),
            "flow.epochs" => self.flow.epochs = val!(),
            "flow.batch_size" => self.flow.batch_size = val!(),
            "flow.lr" => self.flow.lr = val!(),
            "flow.weight_decay" => self.flow.weight_decay = val!(),
            "flow.horizon" => self.flow.horizon = val!(),
            "flow.blocks" => self.flow.net.blocks = val!(),
            "flow.width" => self.flow.net.width = val!(),
            "flow.euclidean_icd" => self.flow.euclidean_icd = val!(),
            "infer.delta" => self.infer_delta = Some(val!()),
            "run.baseline" => self.baseline = val!(),
            other => return Err(cfg_err(line, format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Checks that do not touch the file system.
    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(HfmError::Config("data.shots must be positive".into()));
        }
        match &self.data {
            DatasetSource::FeatureFile(p) if p.as_os_str().is_empty() => {
                return Err(HfmError::Config("data.path is required for data.source = hfmf".into()))
            }
            DatasetSource::Csv { samples, prototypes }
                if samples.as_os_str().is_empty() || prototypes.as_os_str().is_empty() =>
            {
                return Err(HfmError::Config(
                    "data.samples_csv and data.prototypes_csv are required for data.source = csv".into(),
                ))
            }
            _ => {}
        }
        if let Some(d) = self.infer_delta {
            if !(d > 0.0 && d <= 1.0) {
                return Err(HfmError::Config(format!("infer.delta must lie in (0, 1], got {d}")));
            }
        }
        if !(self.flow.delta > 0.0 && self.flow.delta < 1.0) {
            return Err(HfmError::Config(format!("flow.delta must lie in (0, 1), got {}", self.flow.delta)));
        }
        Ok(())
    }

    /// Seed every stochastic component from `seed`.
    pub fn seeded(mut self) -> Self {
        if let DatasetSource::Synthetic(s) = &mut self.data {
            s.seed = self.seed;
        }
        self.align.seed = self.seed;
        self.flow.seed = self.seed;
        self
    }

    /// The synthetic benchmark: 8 classes in 16 dimensions, 4 shots,
    /// overlap 1.0. Used by the `bench` verb when no config is given.
    pub fn benchmark() -> Self {
        let mut cfg = ExperimentConfig {
            out_dir: PathBuf::from("hfm-bench"),
            ..Default::default()
        };
        cfg.data = DatasetSource::Synthetic(SyntheticConfig {
            num_classes: 8,
            dim: 16,
            samples_per_class: 20,
            spread: 0.3,
            center_distance: 2.0,
            overlap: 1.0,
            ..SyntheticConfig::default()
        });
        cfg.flow.delta = 0.05;
        cfg.flow.lr = 1e-3;
        cfg.flow.epochs = 3000;
        cfg
    }

    pub fn inference_delta(&self) -> f64 {
        self.infer_delta.unwrap_or(self.flow.delta)
    }

    /// Every key with its current value, in the format [`Self::parse`] reads.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        match &self.data {
            DatasetSource::Synthetic(c) => {
                kv("data.source", "synthetic".into());
                kv("data.classes", c.num_classes.to_string());
                kv("data.dim", c.dim.to_string());
                kv("data.samples_per_class", c.samples_per_class.to_string());
                kv("data.spread", c.spread.to_string());
                kv("data.center_distance", c.center_distance.to_string());
                kv("data.overlap", c.overlap.to_string());
                kv("data.prototype_offset", c.prototype_offset.to_string());
            }
            DatasetSource::FeatureFile(p) => {
                kv("data.source", "hfmf".into());
                kv("data.path", p.display().to_string());
            }
            DatasetSource::Csv { samples, prototypes } => {
                kv("data.source", "csv".into());
                kv("data.samples_csv", samples.display().to_string());
                kv("data.prototypes_csv", prototypes.display().to_string());
            }
        }
        kv("data.shots", self.shots.to_string());
        let a = &self.align;
        kv("align.h", a.h.to_string());
        kv("align.tau", a.tau.to_string());
        kv("align.beta", a.beta.to_string());
        kv("align.epochs", a.epochs.to_string());
        kv("align.lr", a.lr.to_string());
        kv("align.batch_size", a.batch_size.to_string());
        kv("align.alpha_img", a.alpha_img.to_string());
        kv("align.kappa", a.kappa.to_string());
        let f = &self.flow;
        kv("flow.delta", f.delta.to_string());
        kv("flow.lambda", f.lambda.to_string());
        kv("flow.tau", f.tau.to_string());
        kv("flow.epochs", f.epochs.to_string());
        kv("flow.batch_size", f.batch_size.to_string());
        kv("flow.lr", f.lr.to_string());
        kv("flow.weight_decay", f.weight_decay.to_string());
        kv("flow.horizon", f.horizon.to_string());
        kv("flow.blocks", f.net.blocks.to_string());
        kv("flow.width", f.net.width.to_string());
        kv("flow.euclidean_icd", f.euclidean_icd.to_string());
        if let Some(d) = self.infer_delta {
            kv("infer.delta", d.to_string());
        }
        kv("run.baseline", self.baseline.to_string());
        s
    }
}

/// Load or generate the dataset named by the config.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<FeatureDataset> {
    match &cfg.data {
        DatasetSource::Synthetic(s) => generate_synthetic(s),
        DatasetSource::FeatureFile(p) => read_feature_file(p),
        DatasetSource::Csv { samples, prototypes } => read_csv_dataset(samples, prototypes),
    }
}

/// Dataset split and aligned, ready for either flow.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub support: FeatureDataset,
    pub test: FeatureDataset,
    pub embedding: AlignedEmbedding,
    pub initial_entailment: f64,
    pub final_entailment: f64,
}

impl Prepared {
    /// Test features lifted onto the manifold with the learned head.
    pub fn test_points(&self) -> Result<Vec<LorentzPoint>> {
        self.embedding.head.embed_images(self.test.features())
    }

    /// Flat (pre-lift) coordinates of the support set, test set and prototypes.
    pub fn flat(&self) -> Result<FlatView> {
        let head = &self.embedding.head;
        let map = |xs: &[Vec<f64>], f: &dyn Fn(&[f64]) -> Result<Vec<f64>>| xs.iter().map(|x| f(x)).collect::<Result<Vec<_>>>();
        Ok(FlatView {
            support: map(self.support.features(), &|x| head.image_tangent(x))?,
            test: map(self.test.features(), &|x| head.image_tangent(x))?,
            prototypes: map(self.support.prototypes(), &|p| head.prototype_tangent(p))?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct FlatView {
    pub support: Vec<Vec<f64>>,
    pub test: Vec<Vec<f64>>,
    pub prototypes: Vec<Vec<f64>>,
}

/// Split the dataset and run alignment on the support set.
pub fn prepare(dataset: &FeatureDataset, cfg: &ExperimentConfig) -> Result<Prepared> {
    let (support, test) = split_k_shot(dataset, cfg.shots, cfg.seed).map_err(|e| e.in_stage("split"))?;
    let embedding = run_alignment(&support, &cfg.align).map_err(|e| e.in_stage("alignment"))?;
    let initial = crate::hierarchy::initial_head(support.dim(), &cfg.align)?;
    Ok(Prepared {
        initial_entailment: mean_entailment(&initial, &support, cfg.align.h)?,
        final_entailment: mean_entailment(&embedding.head, &support, cfg.align.h)?,
        support,
        test,
        embedding,
    })
}

/// Evaluation of one method on the test set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodMetrics {
    pub method: String,
    pub accuracy: f64,
    pub mean_t_star: f64,
    pub threshold_hit_rate: f64,
    /// Trajectories cut short because the field blew up.
    pub diverged_count: usize,
    pub corridor_violation_rate: f64,
    pub crossing_count: usize,
    pub stopping_threshold: f64,
    pub semantic_diameter: f64,
    pub per_class: Vec<ClassBreakdown>,
    pub loss_trace_path: Option<String>,
    pub predictions_path: String,
    pub trajectories_path: String,
    pub checkpoint_path: Option<String>,
}

/// Predictions of one method, with flat coordinates for plotting.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub metrics: MethodMetrics,
    pub net: VelocityNet,
    pub trace: Option<LossTrace>,
    pub predictions: Vec<PredictionRow>,
    /// States of each trajectory in the flat chart used for projection.
    pub chart: Vec<Vec<Vec<f64>>>,
    /// Ambient coordinates of each trajectory state.
    pub ambient: Vec<Vec<Vec<f64>>>,
    pub prototype_chart: Vec<Vec<f64>>,
    pub projected: Projected,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRow {
    pub sample_id: usize,
    pub true_label: usize,
    pub predicted_label: usize,
    pub t_star: f64,
    pub stop_reason: StopReason,
    pub scores: Vec<f64>,
}

/// Shared evaluation for either geometry.
#[allow(clippy::too_many_arguments)]
fn evaluate<G: Geometry>(
    method: &str,
    geom: &G,
    net: VelocityNet,
    starts: &[G::Point],
    targets: &Targets,
    labels: &[usize],
    delta: f64,
    chart: impl Fn(&[f64]) -> Vec<f64>,
    prototype_chart: Vec<Vec<f64>>,
    seed: u64,
) -> Result<MethodRun>
where
    G::Point: Sync,
{
    let preds: Vec<Prediction<G::Point>> =
        predict_all(geom, &net, starts, targets, delta).map_err(|e| e.in_stage("inference"))?;
    let n = preds.len().max(1) as f64;
    let ambient: Vec<Vec<Vec<f64>>> = preds
        .iter()
        .map(|p| p.trajectory.states.iter().map(|s| geom.coords(s).to_vec()).collect())
        .collect();
    let per_class = corridor_breakdown(&ambient, labels, targets.len(), |x: &Vec<f64>| {
        targets.nearest_class(geom, x)
    });
    let chart_states: Vec<Vec<Vec<f64>>> = ambient.iter().map(|t| t.iter().map(|s| chart(s)).collect()).collect();
    let projected = project_trajectories(&chart_states, seed);
    let crossing_count = count_crossings(&projected.polylines, labels);
    let rows: Vec<PredictionRow> = preds
        .iter()
        .enumerate()
        .map(|(i, p)| PredictionRow {
            sample_id: i,
            true_label: labels[i],
            predicted_label: p.classification.class,
            t_star: p.trajectory.t_star(),
            stop_reason: p.trajectory.stop_reason,
            scores: p.classification.scores.clone(),
        })
        .collect();
    let correct = rows.iter().filter(|r| r.predicted_label == r.true_label).count();
    let hits = rows.iter().filter(|r| r.stop_reason == StopReason::ThresholdHit).count();
    Ok(MethodRun {
        metrics: MethodMetrics {
            method: method.to_string(),
            accuracy: correct as f64 / n,
            mean_t_star: rows.iter().map(|r| r.t_star).sum::<f64>() / n,
            threshold_hit_rate: hits as f64 / n,
            diverged_count: rows.iter().filter(|r| r.stop_reason == StopReason::Diverged).count(),
            corridor_violation_rate: violation_rate(&per_class),
            crossing_count,
            stopping_threshold: targets.threshold(),
            semantic_diameter: targets.diameter,
            per_class,
            loss_trace_path: None,
            predictions_path: format!("predictions_{method}.csv"),
            trajectories_path: format!("trajectories_{method}.csv"),
            checkpoint_path: None,
        },
        net,
        trace: None,
        predictions: rows,
        chart: chart_states,
        ambient,
        prototype_chart,
        projected,
    })
}

pub const HFM: &str = "hfm";
pub const BASELINE: &str = "euclidean_fm";

/// Transport the aligned test set with `net` on the manifold and score it.
pub fn evaluate_hfm(prep: &Prepared, net: VelocityNet, cfg: &ExperimentConfig) -> Result<MethodRun> {
    let k = prep.embedding.curvature();
    if net.io_dim() != prep.support.dim() + 1 {
        return Err(HfmError::invalid(format!(
            "checkpoint expects ambient dimension {}, data has {}",
            net.io_dim(),
            prep.support.dim() + 1
        ))
        .in_stage("inference"));
    }
    let starts = prep.test_points()?;
    let protos = &prep.embedding.prototype_set;
    let prototype_chart = protos.points().iter().map(|p| origin_chart(p.coords(), k)).collect();
    evaluate(
        HFM,
        &Hyperbolic(k),
        net,
        &starts,
        &Targets::hyperbolic(protos),
        prep.test.labels(),
        cfg.inference_delta(),
        |x| origin_chart(x, k),
        prototype_chart,
        cfg.seed,
    )
}

/// Transport the flat test set with a baseline `net` and score it.
pub fn evaluate_baseline(prep: &Prepared, net: VelocityNet, cfg: &ExperimentConfig) -> Result<MethodRun> {
    let flat = prep.flat()?;
    let targets = Targets::euclidean(flat.prototypes.clone())?;
    evaluate(
        BASELINE,
        &Euclidean,
        net,
        &flat.test,
        &targets,
        prep.test.labels(),
        cfg.inference_delta(),
        |x| x.to_vec(),
        flat.prototypes,
        cfg.seed,
    )
}

fn attach_trace(mut run: MethodRun, trained: &TrainedFlow) -> MethodRun {
    run.trace = Some(trained.trace.clone());
    run.metrics.loss_trace_path = Some(format!("loss_trace_{}.csv", run.metrics.method));
    run.metrics.checkpoint_path = Some(format!("checkpoint_{}.hfmp", run.metrics.method));
    run
}

pub fn train_hfm(prep: &Prepared, cfg: &ExperimentConfig) -> Result<TrainedFlow> {
    train_flow(&prep.embedding, &cfg.flow).map_err(|e| e.in_stage("flow"))
}

pub fn train_baseline(prep: &Prepared, cfg: &ExperimentConfig) -> Result<TrainedFlow> {
    let flat = prep.flat()?;
    train_euclidean_baseline(flat.support, prep.support.labels().to_vec(), flat.prototypes, &cfg.flow)
        .map_err(|e| e.in_stage("baseline"))
}

pub fn run_hfm(prep: &Prepared, cfg: &ExperimentConfig) -> Result<MethodRun> {
    let trained = train_hfm(prep, cfg)?;
    Ok(attach_trace(evaluate_hfm(prep, trained.net.clone(), cfg)?, &trained))
}

pub fn run_baseline(prep: &Prepared, cfg: &ExperimentConfig) -> Result<MethodRun> {
    let trained = train_baseline(prep, cfg)?;
    Ok(attach_trace(evaluate_baseline(prep, trained.net.clone(), cfg)?, &trained))
}

/// Accuracy of the nearest prototype to each test start point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NearestPrototype {
    /// On the aligned manifold embedding (geodesic distance).
    pub aligned: f64,
    /// On the raw input features (Euclidean distance).
    pub raw: f64,
}

pub fn nearest_prototype_accuracy(prep: &Prepared) -> Result<NearestPrototype> {
    let protos = &prep.embedding.prototype_set;
    let starts = prep.test_points()?;
    let labels = prep.test.labels();
    let n = labels.len().max(1) as f64;
    let aligned = starts
        .iter()
        .zip(labels)
        .filter(|(x, &l)| protos.nearest_class(x.coords()) == l)
        .count() as f64
        / n;
    let raw_targets = Targets::euclidean(prep.test.prototypes().to_vec())?;
    let raw = prep
        .test
        .features()
        .iter()
        .zip(labels)
        .filter(|(x, &l)| raw_targets.nearest_class(&Euclidean, x) == l)
        .count() as f64
        / n;
    Ok(NearestPrototype { aligned, raw })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentSummary {
    pub kappa: f64,
    pub alpha_txt: f64,
    pub alpha_img: f64,
    pub initial_entailment: f64,
    pub final_entailment: f64,
    pub final_objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub step: usize,
    pub l_step: f64,
    pub l_icd: f64,
    pub total: f64,
}

/// The metrics JSON. Top-level keys describe the primary method (the flow on
/// the manifold, or the baseline under `--baseline-only`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub method: String,
    pub accuracy: f64,
    pub mean_t_star: f64,
    pub corridor_violation_rate: f64,
    pub crossing_count: usize,
    pub loss_trace_path: Option<String>,
    pub threshold_hit_rate: f64,
    pub num_classes: usize,
    pub num_support: usize,
    pub num_test: usize,
    pub nearest_prototype: NearestPrototype,
    pub alignment: AlignmentSummary,
    pub lambda: f64,
    pub loss_trace: Vec<TraceEntry>,
    pub hfm: Option<MethodMetrics>,
    pub baseline: Option<MethodMetrics>,
}

impl Metrics {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct Report {
    pub config: ExperimentConfig,
    pub prepared: Prepared,
    pub hfm: Option<MethodRun>,
    pub baseline: Option<MethodRun>,
    pub metrics: Metrics,
}

/// Which flows to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// The manifold flow, plus the baseline if the config asks for it.
    Full,
    /// Only the manifold flow.
    HfmOnly,
    /// Only the Euclidean baseline.
    BaselineOnly,
}

pub fn build_metrics(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    hfm: Option<&MethodRun>,
    baseline: Option<&MethodRun>,
) -> Result<Metrics> {
    let primary = hfm
        .or(baseline)
        .ok_or_else(|| HfmError::invalid("no method was run"))?;
    let m = &primary.metrics;
    let emb = &prep.embedding;
    let trace = primary.trace.as_ref().map_or(&[][..], |t| t.records.as_slice());
    let lambda = if hfm.is_some() || cfg.flow.euclidean_icd { cfg.flow.lambda } else { 0.0 };
    Ok(Metrics {
        method: m.method.clone(),
        accuracy: m.accuracy,
        mean_t_star: m.mean_t_star,
        corridor_violation_rate: m.corridor_violation_rate,
        crossing_count: m.crossing_count,
        loss_trace_path: m.loss_trace_path.clone(),
        threshold_hit_rate: m.threshold_hit_rate,
        num_classes: prep.support.num_classes(),
        num_support: prep.support.len(),
        num_test: prep.test.len(),
        nearest_prototype: nearest_prototype_accuracy(prep)?,
        alignment: AlignmentSummary {
            kappa: emb.curvature().kappa(),
            alpha_txt: emb.scales().alpha_txt,
            alpha_img: emb.scales().alpha_img,
            initial_entailment: prep.initial_entailment,
            final_entailment: prep.final_entailment,
            final_objective: emb.trace.last().map(|e| e.total),
        },
        lambda,
        loss_trace: trace
            .iter()
            .map(|r| TraceEntry {
                step: r.step,
                l_step: r.l_step,
                l_icd: r.l_icd,
                total: r.total,
            })
            .collect(),
        hfm: hfm.map(|r| r.metrics.clone()),
        baseline: baseline.map(|r| r.metrics.clone()),
    })
}

/// Run the whole pipeline without touching the file system (unless the
/// dataset is a file).
pub fn run_experiment(cfg: &ExperimentConfig, mode: Mode) -> Result<Report> {
    cfg.validate()?;
    let dataset = load_dataset(cfg).map_err(|e| e.in_stage("data"))?;
    let prepared = prepare(&dataset, cfg)?;
    let hfm = match mode {
        Mode::BaselineOnly => None,
        _ => Some(run_hfm(&prepared, cfg)?),
    };
    let baseline = match mode {
        Mode::BaselineOnly => Some(run_baseline(&prepared, cfg)?),
        Mode::Full if cfg.baseline => Some(run_baseline(&prepared, cfg)?),
        _ => None,
    };
    let metrics = build_metrics(cfg, &prepared, hfm.as_ref(), baseline.as_ref())?;
    Ok(Report {
        config: cfg.clone(),
        prepared,
        hfm,
        baseline,
        metrics,
    })
}

fn io_stage(e: std::io::Error, path: &Path) -> HfmError {
    HfmError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))).in_stage("output")
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| io_stage(e, &path))?;
    Ok(path)
}

pub fn predictions_csv(rows: &[PredictionRow]) -> Result<Vec<u8>> {
    let n = rows.first().map_or(0, |r| r.scores.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "sample_id".to_string(),
        "true_label".into(),
        "predicted_label".into(),
        "t_star".into(),
        "stop_reason".into(),
    ];
    header.extend((0..n).map(|c| format!("score_{c}")));
    w.write_record(&header).map_err(csv_io)?;
    for r in rows {
        let mut rec = vec![
            r.sample_id.to_string(),
            r.true_label.to_string(),
            r.predicted_label.to_string(),
            r.t_star.to_string(),
            r.stop_reason.to_string(),
        ];
        rec.extend(r.scores.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.into_inner().map_err(|e| HfmError::Io(e.into_error()))
}

fn csv_io(e: csv::Error) -> HfmError {
    HfmError::Io(std::io::Error::other(e.to_string()))
}

/// One row per trajectory state: ids, time, planar projection, ambient coordinates.
pub fn trajectories_csv(run: &MethodRun) -> Result<Vec<u8>> {
    let dim = run.ambient.first().and_then(|t| t.first()).map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["sample_id".to_string(), "true_label".into(), "step".into(), "t".into(), "pc1".into(), "pc2".into()];
    header.extend((0..dim).map(|i| format!("x{i}")));
    w.write_record(&header).map_err(csv_io)?;
    for (i, traj) in run.ambient.iter().enumerate() {
        let row = &run.predictions[i];
        for (s, x) in traj.iter().enumerate() {
            let p = run.projected.polylines[i][s];
            let delta = if s == 0 { 0.0 } else { row.t_star * s as f64 / (traj.len() - 1) as f64 };
            let mut rec = vec![
                i.to_string(),
                row.true_label.to_string(),
                s.to_string(),
                delta.to_string(),
                p[0].to_string(),
                p[1].to_string(),
            ];
            rec.extend(x.iter().map(f64::to_string));
            w.write_record(&rec).map_err(csv_io)?;
        }
    }
    w.into_inner().map_err(|e| HfmError::Io(e.into_error()))
}

fn panel(title: &str, run: &MethodRun) -> Panel {
    Panel {
        title: title.to_string(),
        polylines: run.projected.polylines.clone(),
        labels: run.predictions.iter().map(|r| r.true_label).collect(),
        prototypes: run.prototype_chart.iter().map(|p| run.projected.pca.project(p)).collect(),
    }
}

fn write_method(dir: &Path, run: &MethodRun) -> Result<()> {
    let m = &run.metrics;
    write_file(dir, &m.predictions_path, &predictions_csv(&run.predictions)?)?;
    write_file(dir, &m.trajectories_path, &trajectories_csv(run)?)?;
    if let (Some(path), Some(trace)) = (&m.loss_trace_path, &run.trace) {
        let mut buf = Vec::new();
        trace.write_csv(&mut buf)?;
        write_file(dir, path, &buf)?;
    }
    if let Some(path) = &m.checkpoint_path {
        write_file(dir, path, &run.net.encode_checkpoint())?;
    }
    Ok(())
}

/// Alignment trace as CSV.
pub fn alignment_csv(emb: &AlignedEmbedding) -> Vec<u8> {
    let mut s = String::from("epoch,contrastive,entailment,total,alpha_txt,alpha_img,kappa\n");
    for e in &emb.trace {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            e.epoch, e.contrastive, e.entailment, e.total, e.alpha_txt, e.alpha_img, e.kappa
        );
    }
    s.into_bytes()
}

/// Write every artifact of `report` into `dir`; returns the metrics path.
pub fn write_report(report: &Report, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| io_stage(e, dir))?;
    write_file(dir, "config.txt", report.config.to_text().as_bytes())?;
    write_file(dir, "alignment_trace.csv", &alignment_csv(&report.prepared.embedding))?;
    let mut panels = Vec::new();
    if let Some(h) = &report.hfm {
        write_method(dir, h)?;
        panels.push(panel("hyperbolic flow (tangent chart at origin)", h));
    }
    if let Some(b) = &report.baseline {
        write_method(dir, b)?;
        panels.push(panel("euclidean flow", b));
    }
    let svg_name = if report.hfm.is_some() { "trajectories.svg" } else { "trajectories_euclidean_fm.svg" };
    write_file(dir, svg_name, render_svg(&panels).as_bytes())?;
    write_file(dir, "metrics.json", report.metrics.to_json().as_bytes())
}
