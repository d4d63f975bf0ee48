//! Feature datasets: seeded synthetic generation, k-shot splitting, and the
//! `HFMF` binary feature file used to ingest externally extracted embeddings.
//!
//! # HFMF layout (little-endian)
//!
//! ```text
//! offset  size        field
//! 0       4           magic "HFMF"
//! 4       4           version (u32) = 1
//! 8       4           dim (u32)
//! 12      4           prototype count N (u32)
//! 16      N*(4+4*dim) prototype records: label u32, dim x f32
//! ..      4           sample count M (u32)
//! ..      M*(4+4*dim) sample records:    label u32, dim x f32
//! ```
//!
//! Values are stored as binary32 and widened to f64 on load. Datasets built in
//! memory keep f32-representable values so a write/read cycle is bit-exact.

use std::fs;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HfmError, Result};

pub const FEATURE_MAGIC: [u8; 4] = *b"HFMF";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthetic,
    Ingested,
}

/// Labeled Euclidean features plus one prototype per class.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    dim: usize,
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    prototypes: Vec<Vec<f64>>,
    provenance: Provenance,
}

impl FeatureDataset {
    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        prototypes: Vec<Vec<f64>>,
        provenance: Provenance,
    ) -> Result<Self> {
        let dim = prototypes
            .first()
            .map(Vec::len)
            .ok_or_else(|| HfmError::invalid("dataset needs at least one prototype"))?;
        if dim == 0 {
            return Err(HfmError::invalid("feature dimension must be positive"));
        }
        if features.len() != labels.len() {
            return Err(HfmError::invalid(format!(
                "{} features but {} labels",
                features.len(),
                labels.len()
            )));
        }
        for row in prototypes.iter().chain(&features) {
            if row.len() != dim {
                return Err(HfmError::invalid(format!(
                    "row of dimension {} in a dataset of dimension {dim}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(HfmError::invalid("dataset contains non-finite values"));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= prototypes.len()) {
            return Err(HfmError::invalid(format!(
                "label {bad} out of range for {} classes",
                prototypes.len()
            )));
        }
        Ok(FeatureDataset {
            dim,
            features,
            labels,
            prototypes,
            provenance,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.prototypes.len()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn prototypes(&self) -> &[Vec<f64>] {
        &self.prototypes
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Samples at `indices`, in that order, with all prototypes kept.
    pub fn subset(&self, indices: &[usize]) -> FeatureDataset {
        FeatureDataset {
            dim: self.dim,
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            prototypes: self.prototypes.clone(),
            provenance: self.provenance,
        }
    }

    /// Keep only the listed classes, relabeled `0..classes.len()` in order.
    pub fn restrict_classes(&self, classes: &[usize]) -> Result<FeatureDataset> {
        if classes.is_empty() {
            return Err(HfmError::invalid("must keep at least one class"));
        }
        let mut remap = vec![None; self.num_classes()];
        for (new, &old) in classes.iter().enumerate() {
            if old >= self.num_classes() {
                return Err(HfmError::invalid(format!("class {old} does not exist")));
            }
            remap[old] = Some(new);
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (x, &l) in self.features.iter().zip(&self.labels) {
            if let Some(new) = remap[l] {
                features.push(x.clone());
                labels.push(new);
            }
        }
        let prototypes = classes.iter().map(|&c| self.prototypes[c].clone()).collect();
        FeatureDataset::new(features, labels, prototypes, self.provenance)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Parameters of the Gaussian-cluster generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    /// Per-coordinate standard deviation of each cluster.
    pub spread: f64,
    /// Pairwise distance between class centers before overlap is applied.
    pub center_distance: f64,
    /// Centers are pulled together by `overlap * spread`.
    pub overlap: f64,
    /// Distance from each class center to its prototype, in units of `spread`.
    pub prototype_offset: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_classes: 8,
            dim: 16,
            samples_per_class: 20,
            spread: 0.5,
            center_distance: 3.0,
            overlap: 0.0,
            prototype_offset: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// Pairwise center distance after overlap.
    pub fn effective_center_distance(&self) -> f64 {
        self.center_distance - self.overlap * self.spread
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(HfmError::invalid("synthetic data needs at least 2 classes"));
        }
        if self.dim < 2 {
            return Err(HfmError::invalid("synthetic data needs dimension >= 2"));
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return Err(HfmError::invalid("spread must be positive"));
        }
        if self.samples_per_class == 0 {
            return Err(HfmError::invalid("samples_per_class must be positive"));
        }
        if self.overlap < 0.0 || self.prototype_offset < 0.0 {
            return Err(HfmError::invalid("overlap and prototype_offset must be non-negative"));
        }
        if self.num_classes > self.dim {
            return Err(HfmError::invalid(format!(
                "{} equidistant class centers do not fit on orthogonal axes in dimension {}",
                self.num_classes, self.dim
            )));
        }
        if !(self.effective_center_distance() > 0.0) {
            return Err(HfmError::invalid(format!(
                "overlap {} x spread {} consumes the whole center distance {}",
                self.overlap, self.spread, self.center_distance
            )));
        }
        Ok(())
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Class centers: a random orthonormal frame scaled so every pair of centers
/// sits at the effective center distance.
pub fn class_centers(cfg: &SyntheticConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, 1);
    let radius = cfg.effective_center_distance() / std::f64::consts::SQRT_2;
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(cfg.num_classes);
    while frame.len() < cfg.num_classes {
        let mut v = gaussian_vec(&mut rng, cfg.dim);
        for u in &frame {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            frame.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    Ok(frame
        .into_iter()
        .map(|u| u.into_iter().map(|a| a * radius).collect())
        .collect())
}

/// Gaussian clusters around [`class_centers`]; samples are grouped by class.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<FeatureDataset> {
    let centers = class_centers(cfg)?;
    let mut rng = rng_for(cfg.seed, 2);
    let prototypes = centers
        .iter()
        .map(|c| {
            let dir = gaussian_vec(&mut rng, cfg.dim);
            let norm = dir.iter().map(|a| a * a).sum::<f64>().sqrt();
            let shift = cfg.prototype_offset * cfg.spread / norm;
            c.iter()
                .zip(&dir)
                .map(|(ci, di)| round_f32(ci + shift * di))
                .collect()
        })
        .collect();
    let mut features = Vec::with_capacity(cfg.num_classes * cfg.samples_per_class);
    let mut labels = Vec::with_capacity(features.capacity());
    for (class, c) in centers.iter().enumerate() {
        for _ in 0..cfg.samples_per_class {
            let noise = gaussian_vec(&mut rng, cfg.dim);
            features.push(
                c.iter()
                    .zip(&noise)
                    .map(|(ci, z)| round_f32(ci + cfg.spread * z))
                    .collect(),
            );
            labels.push(class);
        }
    }
    FeatureDataset::new(features, labels, prototypes, Provenance::Synthetic)
}

/// `k` support samples per class, the rest as test set.
pub fn split_k_shot(ds: &FeatureDataset, k: usize, seed: u64) -> Result<(FeatureDataset, FeatureDataset)> {
    if k == 0 {
        return Err(HfmError::invalid("k must be positive"));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes()];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = rng_for(seed, 3);
    let mut support = Vec::with_capacity(k * ds.num_classes());
    let mut in_support = vec![false; ds.len()];
    for (class, idx) in by_class.iter_mut().enumerate() {
        if idx.len() <= k {
            return Err(HfmError::invalid(format!(
                "class {class} has {} samples, need more than k={k}",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for &i in &idx[..k] {
            support.push(i);
            in_support[i] = true;
        }
    }
    let test: Vec<usize> = (0..ds.len()).filter(|&i| !in_support[i]).collect();
    Ok((ds.subset(&support), ds.subset(&test)))
}

/// Size in bytes of an HFMF file with the given shape.
pub fn feature_file_size(dim: usize, prototypes: usize, samples: usize) -> usize {
    let record = 4 + 4 * dim;
    16 + prototypes * record + 4 + samples * record
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| HfmError::invalid(format!("{what} {v} does not fit in u32")))
}

pub fn encode_feature_file(ds: &FeatureDataset) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(feature_file_size(ds.dim, ds.num_classes(), ds.len()));
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(ds.dim, "dim")?.to_le_bytes());
    out.extend_from_slice(&to_u32(ds.num_classes(), "prototype count")?.to_le_bytes());
    let record = |out: &mut Vec<u8>, label: usize, row: &[f64]| -> Result<()> {
        out.extend_from_slice(&to_u32(label, "label")?.to_le_bytes());
        for &v in row {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        Ok(())
    };
    for (c, p) in ds.prototypes.iter().enumerate() {
        record(&mut out, c, p)?;
    }
    out.extend_from_slice(&to_u32(ds.len(), "sample count")?.to_le_bytes());
    for (x, &l) in ds.features.iter().zip(&ds.labels) {
        record(&mut out, l, x)?;
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(HfmError::format(
                self.pos as u64,
                format!("truncated file while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn record(&mut self, dim: usize, what: &str) -> Result<(u32, Vec<f64>)> {
        let label = self.u32(what)?;
        let mut row = Vec::with_capacity(dim);
        for _ in 0..dim {
            let at = self.pos as u64;
            let b = self.take(4, what)?;
            let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            if !v.is_finite() {
                return Err(HfmError::format(at, format!("non-finite value in {what}")));
            }
            row.push(v as f64);
        }
        Ok((label, row))
    }
}

pub fn decode_feature_file(bytes: &[u8]) -> Result<FeatureDataset> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != FEATURE_MAGIC {
        return Err(HfmError::format(0, "bad magic, expected \"HFMF\""));
    }
    let version = cur.u32("version")?;
    if version != FEATURE_VERSION {
        return Err(HfmError::format(
            4,
            format!("unsupported version {version}, expected {FEATURE_VERSION}"),
        ));
    }
    let dim = cur.u32("dim")? as usize;
    if dim == 0 {
        return Err(HfmError::format(8, "dimension must be positive"));
    }
    let n_protos = cur.u32("prototype count")? as usize;
    if n_protos == 0 {
        return Err(HfmError::format(12, "prototype count must be positive"));
    }
    let mut prototypes: Vec<Option<Vec<f64>>> = vec![None; n_protos];
    for _ in 0..n_protos {
        let at = cur.pos as u64;
        let (label, row) = cur.record(dim, "prototype record")?;
        match prototypes.get_mut(label as usize) {
            Some(slot @ None) => *slot = Some(row),
            Some(Some(_)) => {
                return Err(HfmError::format(at, format!("duplicate prototype label {label}")))
            }
            None => {
                return Err(HfmError::format(
                    at,
                    format!("prototype label {label} out of range for {n_protos} classes"),
                ))
            }
        }
    }
    let n_samples = cur.u32("sample count")? as usize;
    let mut features = Vec::with_capacity(n_samples.min(bytes.len() / 4));
    let mut labels = Vec::with_capacity(features.capacity());
    for _ in 0..n_samples {
        let at = cur.pos as u64;
        let (label, row) = cur.record(dim, "sample record")?;
        if label as usize >= n_protos {
            return Err(HfmError::format(
                at,
                format!("sample label {label} out of range for {n_protos} classes"),
            ));
        }
        features.push(row);
        labels.push(label as usize);
    }
    if cur.pos != bytes.len() {
        return Err(HfmError::format(
            cur.pos as u64,
            format!("{} trailing bytes", bytes.len() - cur.pos),
        ));
    }
    let prototypes = prototypes.into_iter().map(Option::unwrap).collect();
    FeatureDataset::new(features, labels, prototypes, Provenance::Ingested)
}

pub fn write_feature_file(path: impl AsRef<Path>, ds: &FeatureDataset) -> Result<()> {
    fs::write(path, encode_feature_file(ds)?)?;
    Ok(())
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureDataset> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_feature_file(&bytes)
}

/// Rows of a CSV with header `label,f0,...,f{n-1}`.
pub fn read_csv_rows(path: impl AsRef<Path>) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut reader = csv::Reader::from_path(path.as_ref()).map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.get(0) != Some("label") || headers.len() < 2 {
        return Err(HfmError::invalid("CSV header must be label,f0,...,f{n-1}"));
    }
    for (i, h) in headers.iter().skip(1).enumerate() {
        if h != format!("f{i}") {
            return Err(HfmError::invalid(format!("CSV column {} should be f{i}, got {h}", i + 1)));
        }
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |what: &str| HfmError::invalid(format!("CSV row {}: bad {what}", line + 1));
        labels.push(rec[0].trim().parse::<usize>().map_err(|_| bad("label"))?);
        let row = rec
            .iter()
            .skip(1)
            .map(|s| s.trim().parse::<f32>().map(|v| v as f64))
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|_| bad("value"))?;
        rows.push(row);
    }
    Ok((rows, labels))
}

/// Dataset from a samples CSV and a prototypes CSV (prototype label = class id).
pub fn read_csv_dataset(samples: impl AsRef<Path>, prototypes: impl AsRef<Path>) -> Result<FeatureDataset> {
    let (features, labels) = read_csv_rows(samples)?;
    let (proto_rows, proto_labels) = read_csv_rows(prototypes)?;
    let mut ordered: Vec<Option<Vec<f64>>> = vec![None; proto_rows.len()];
    for (row, l) in proto_rows.into_iter().zip(proto_labels) {
        match ordered.get_mut(l) {
            Some(slot @ None) => *slot = Some(row),
            _ => return Err(HfmError::invalid(format!("bad or duplicate prototype label {l}"))),
        }
    }
    let prototypes = ordered.into_iter().map(Option::unwrap).collect();
    FeatureDataset::new(features, labels, prototypes, Provenance::Ingested)
}

fn csv_err(e: csv::Error) -> HfmError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => HfmError::Io(io),
        other => HfmError::invalid(format!("CSV: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nearest_prototype_accuracy(ds: &FeatureDataset) -> f64 {
        let correct = ds
            .features()
            .iter()
            .zip(ds.labels())
            .filter(|(x, &l)| {
                let d = |p: &Vec<f64>| p.iter().zip(x.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                let best = (0..ds.num_classes())
                    .min_by(|&a, &b| d(&ds.prototypes()[a]).total_cmp(&d(&ds.prototypes()[b])))
                    .unwrap();
                best == l
            })
            .count();
        correct as f64 / ds.len() as f64
    }

    #[test]
    fn point_clusters_are_perfectly_separable() {
        let cfg = SyntheticConfig {
            spread: 1e-6,
            overlap: 0.0,
            ..SyntheticConfig::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        assert_eq!(nearest_prototype_accuracy(&ds), 1.0);
    }

    #[test]
    fn heavy_overlap_causes_errors() {
        let cfg = SyntheticConfig {
            overlap: 1.5,
            samples_per_class: 40,
            ..SyntheticConfig::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        let acc = nearest_prototype_accuracy(&ds);
        assert!(acc < 1.0, "accuracy {acc}");
    }

    #[test]
    fn generation_is_seeded() {
        let cfg = SyntheticConfig::default();
        assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
        let other = SyntheticConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn centers_match_configured_geometry() {
        let cfg = SyntheticConfig {
            overlap: 1.0,
            ..SyntheticConfig::default()
        };
        let centers = class_centers(&cfg).unwrap();
        let target = cfg.effective_center_distance();
        for i in 0..centers.len() {
            for j in i + 1..centers.len() {
                let d: f64 = centers[i]
                    .iter()
                    .zip(&centers[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!((d - target).abs() < 1e-6);
            }
        }
        let ds = generate_synthetic(&cfg).unwrap();
        for (p, c) in ds.prototypes().iter().zip(&centers) {
            let off: f64 = p.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!((off - 0.1 * cfg.spread).abs() < 1e-6);
        }
    }

    #[test]
    fn infeasible_geometry_is_rejected() {
        let too_many = SyntheticConfig {
            num_classes: 20,
            dim: 16,
            ..SyntheticConfig::default()
        };
        assert!(matches!(generate_synthetic(&too_many), Err(HfmError::InvalidArgument(_))));
        let collapsed = SyntheticConfig {
            overlap: 100.0,
            ..SyntheticConfig::default()
        };
        assert!(generate_synthetic(&collapsed).is_err());
    }

    #[test]
    fn k_shot_split_counts() {
        let cfg = SyntheticConfig::default();
        let ds = generate_synthetic(&cfg).unwrap();
        let (support, test) = split_k_shot(&ds, 4, 0).unwrap();
        assert_eq!(support.class_counts(), vec![4; 8]);
        assert_eq!(test.len(), ds.len() - 32);

        let (_, test) = split_k_shot(&ds, cfg.samples_per_class - 1, 0).unwrap();
        assert_eq!(test.len(), cfg.num_classes);
        assert!(split_k_shot(&ds, cfg.samples_per_class, 0).is_err());
    }

    #[test]
    fn k_shot_split_is_disjoint_and_seeded() {
        let ds = generate_synthetic(&SyntheticConfig::default()).unwrap();
        let (s1, t1) = split_k_shot(&ds, 3, 7).unwrap();
        let (s2, t2) = split_k_shot(&ds, 3, 7).unwrap();
        assert_eq!((&s1, &t1), (&s2, &t2));
        for x in s1.features() {
            assert!(!t1.features().contains(x));
        }
        assert_eq!(s1.len() + t1.len(), ds.len());
    }

    #[test]
    fn file_size_matches_layout() {
        let cfg = SyntheticConfig {
            num_classes: 8,
            dim: 16,
            samples_per_class: 10,
            ..SyntheticConfig::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        let bytes = encode_feature_file(&ds).unwrap();
        // header + prototypes + sample count + 80 samples
        assert_eq!(bytes.len(), 16 + 8 * (4 + 16 * 4) + 4 + 80 * (4 + 16 * 4));
        assert_eq!(bytes.len(), feature_file_size(16, 8, 80));
    }

    #[test]
    fn corrupted_files_report_offsets() {
        let ds = generate_synthetic(&SyntheticConfig::default()).unwrap();
        let bytes = encode_feature_file(&ds).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        match decode_feature_file(&bad) {
            Err(HfmError::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(decode_feature_file(&bad), Err(HfmError::Format { offset: 4, .. })));

        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(decode_feature_file(cut), Err(HfmError::Format { .. })));

        let mut bad = bytes.clone();
        let at = 16 + 4; // first value of prototype 0
        bad[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            decode_feature_file(&bad),
            Err(HfmError::Format { offset, .. }) if offset == at as u64
        ));
    }

    #[test]
    fn file_roundtrip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.hfmf");
        let ds = generate_synthetic(&SyntheticConfig::default()).unwrap();
        write_feature_file(&path, &ds).unwrap();
        let back = read_feature_file(&path).unwrap();
        assert_eq!(back.provenance(), Provenance::Ingested);
        assert_eq!(back.features(), ds.features());
        assert_eq!(back.prototypes(), ds.prototypes());
        assert_eq!(back.labels(), ds.labels());
    }

    #[test]
    fn csv_import() {
        let dir = tempfile::tempdir().unwrap();
        let samples = dir.path().join("s.csv");
        let protos = dir.path().join("p.csv");
        fs::write(&samples, "label,f0,f1\n0,1.0,2.0\n1,-1.5,0.25\n").unwrap();
        fs::write(&protos, "label,f0,f1\n1,0.0,1.0\n0,1.0,0.0\n").unwrap();
        let ds = read_csv_dataset(&samples, &protos).unwrap();
        assert_eq!(ds.prototypes(), &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(ds.labels(), &[0, 1]);
        fs::write(&samples, "label,x,y\n0,1,2\n").unwrap();
        assert!(read_csv_dataset(&samples, &protos).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_f32_datasets_roundtrip(
            rows in prop::collection::vec((0usize..3, prop::collection::vec(-1e6f32..1e6, 4)), 0..20),
            protos in prop::collection::vec(prop::collection::vec(-10f32..10.0, 4), 3),
        ) {
            let widen = |r: &Vec<f32>| r.iter().map(|&v| v as f64).collect::<Vec<f64>>();
            let ds = FeatureDataset::new(
                rows.iter().map(|(_, r)| widen(r)).collect(),
                rows.iter().map(|(l, _)| *l).collect(),
                protos.iter().map(widen).collect(),
                Provenance::Ingested,
            ).unwrap();
            let back = decode_feature_file(&encode_feature_file(&ds).unwrap()).unwrap();
            prop_assert_eq!(back, ds);
        }
    }
}
