//! The velocity network: a residual MLP conditioned on time.
//!
//! ```text
//! h_0     = W_in x + b_in
//! a_b     = h_b + W_t,b e(t) + c_b                 (time conditioning)
//! h_{b+1} = h_b + W_2,b softplus(W_1,b a_b + b_1,b) + b_2,b
//! y       = W_out h_L + b_out                       (zero at init)
//! ```
//!
//! `e(t)` is a fixed sinusoidal embedding. The output is a raw ambient vector;
//! callers project it onto a tangent space. Gradients are the hand-derived
//! adjoints of the layers above, computed for a whole batch at once.
//!
//! # Checkpoint layout (`HFMP`, little-endian)
//!
//! ```text
//! magic "HFMP" | version u32 = 1 | L u32 | W u32 | n u32
//! then f64 blocks, matrices row-major (out x in):
//!   W_in (W x (n+1)), b_in (W)
//!   for each of the L blocks: W_t (W x 64), c (W), W_1 (W x W), b_1 (W), W_2 (W x W), b_2 (W)
//!   W_out ((n+1) x W), b_out (n+1)
//! ```
//! The network's input and output width is `n + 1`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Real};
use crate::error::{HfmError, Result};

pub const TIME_EMBED_DIM: usize = 64;
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"HFMP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Sinusoidal embedding of `t in [0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEmbedding {
    freqs: Vec<f64>,
}

impl TimeEmbedding {
    const TIME_SCALE: f64 = 100.0;
    const MAX_PERIOD: f64 = 10_000.0;

    pub fn new(dim: usize) -> Self {
        assert!(dim >= 2 && dim.is_multiple_of(2), "embedding dimension must be even");
        let half = dim / 2;
        let freqs = (0..half)
            .map(|i| (-(Self::MAX_PERIOD.ln()) * i as f64 / half as f64).exp())
            .collect();
        TimeEmbedding { freqs }
    }

    pub fn dim(&self) -> usize {
        2 * self.freqs.len()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.freqs
    }

    pub fn embed(&self, t: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend(self.freqs.iter().map(|f| (Self::TIME_SCALE * t * f).sin()));
        out.extend(self.freqs.iter().map(|f| (Self::TIME_SCALE * t * f).cos()));
        out
    }
}

/// Architecture of a [`VelocityNet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Number of residual blocks `L`.
    pub blocks: usize,
    /// Hidden width `W`.
    pub width: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            blocks: 3,
            width: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    w_t: Array2<f64>,
    c: Array1<f64>,
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

impl Block {
    fn zeros(width: usize) -> Self {
        Block {
            w_t: Array2::zeros((width, TIME_EMBED_DIM)),
            c: Array1::zeros(width),
            w1: Array2::zeros((width, width)),
            b1: Array1::zeros(width),
            w2: Array2::zeros((width, width)),
            b2: Array1::zeros(width),
        }
    }

    fn tensors(&self) -> [&[f64]; 6] {
        [
            slice(&self.w_t),
            self.c.as_slice().unwrap(),
            slice(&self.w1),
            self.b1.as_slice().unwrap(),
            slice(&self.w2),
            self.b2.as_slice().unwrap(),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w_t.as_slice_mut().unwrap(),
            self.c.as_slice_mut().unwrap(),
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
        ]
    }
}

fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameters are stored contiguously")
}

/// Parameters of the velocity network (also used as its gradient buffer).
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityNet {
    io_dim: usize,
    width: usize,
    embedding: TimeEmbedding,
    w_in: Array2<f64>,
    b_in: Array1<f64>,
    blocks: Vec<Block>,
    w_out: Array2<f64>,
    b_out: Array1<f64>,
}

/// Activations kept from a batched forward pass.
pub struct ForwardCache {
    inputs: Array2<f64>,
    temb: Array2<f64>,
    /// Hidden stream entering each block, plus the final one.
    hidden: Vec<Array2<f64>>,
    branch_in: Vec<Array2<f64>>,
    pre_act: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.output.view()
    }

    /// Hidden state after the input projection and after each block.
    pub fn hidden_stream(&self) -> &[Array2<f64>] {
        &self.hidden
    }
}

impl VelocityNet {
    /// All-zero parameters with the given shape.
    pub fn zeros(io_dim: usize, cfg: NetConfig) -> Self {
        assert!(io_dim >= 1 && cfg.width >= 1);
        VelocityNet {
            io_dim,
            width: cfg.width,
            embedding: TimeEmbedding::new(TIME_EMBED_DIM),
            w_in: Array2::zeros((cfg.width, io_dim)),
            b_in: Array1::zeros(cfg.width),
            blocks: (0..cfg.blocks).map(|_| Block::zeros(cfg.width)).collect(),
            w_out: Array2::zeros((io_dim, cfg.width)),
            b_out: Array1::zeros(io_dim),
        }
    }

    /// Uniform `±1/sqrt(fan_in)` initialization; the output layer is zero so
    /// the initial velocity vanishes everywhere.
    pub fn init(io_dim: usize, cfg: NetConfig, seed: u64) -> Self {
        let mut net = Self::zeros(io_dim, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |xs: &mut [f64], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            xs.iter_mut().for_each(|x| *x = rng.random_range(-bound..bound));
        };
        fill(net.w_in.as_slice_mut().unwrap(), io_dim);
        fill(net.b_in.as_slice_mut().unwrap(), io_dim);
        for b in &mut net.blocks {
            fill(b.w_t.as_slice_mut().unwrap(), TIME_EMBED_DIM);
            fill(b.c.as_slice_mut().unwrap(), TIME_EMBED_DIM);
            fill(b.w1.as_slice_mut().unwrap(), cfg.width);
            fill(b.b1.as_slice_mut().unwrap(), cfg.width);
            fill(b.w2.as_slice_mut().unwrap(), cfg.width);
            fill(b.b2.as_slice_mut().unwrap(), cfg.width);
        }
        net
    }

    /// Randomize the output layer too. Used by gradient checks, where a zero
    /// output layer would make every upstream gradient vanish.
    pub fn randomize_output(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = scale / (self.width as f64).sqrt();
        self.w_out
            .iter_mut()
            .chain(self.b_out.iter_mut())
            .for_each(|x| *x = rng.random_range(-bound..bound));
    }

    pub fn io_dim(&self) -> usize {
        self.io_dim
    }

    pub fn config(&self) -> NetConfig {
        NetConfig {
            blocks: self.blocks.len(),
            width: self.width,
        }
    }

    pub fn embedding(&self) -> &TimeEmbedding {
        &self.embedding
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Parameter tensors in checkpoint order.
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![slice(&self.w_in), self.b_in.as_slice().unwrap()];
        for b in &self.blocks {
            out.extend(b.tensors());
        }
        out.push(slice(&self.w_out));
        out.push(self.b_out.as_slice().unwrap());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.w_in.as_slice_mut().unwrap(), self.b_in.as_slice_mut().unwrap()];
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out.push(self.w_out.as_slice_mut().unwrap());
        out.push(self.b_out.as_slice_mut().unwrap());
        out
    }

    /// All parameters flattened in checkpoint order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn load_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut at = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[at..at + t.len()]);
            at += t.len();
        }
    }

    /// `true` for weight matrices, `false` for biases, in flat order.
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.num_params());
        let mut push = |n: usize, w: bool| mask.extend(std::iter::repeat_n(w, n));
        push(self.w_in.len(), true);
        push(self.b_in.len(), false);
        for b in &self.blocks {
            push(b.w_t.len(), true);
            push(b.c.len(), false);
            push(b.w1.len(), true);
            push(b.b1.len(), false);
            push(b.w2.len(), true);
            push(b.b2.len(), false);
        }
        push(self.w_out.len(), true);
        push(self.b_out.len(), false);
        mask
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Zero the second layer of every residual branch.
    pub fn zero_residual_branches(&mut self) {
        for b in &mut self.blocks {
            b.w2.fill(0.0);
            b.b2.fill(0.0);
        }
    }

    /// Velocity for a single state.
    pub fn forward(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        if x.len() != self.io_dim {
            return Err(HfmError::invalid(format!(
                "network expects input of width {}, got {}",
                self.io_dim,
                x.len()
            )));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(HfmError::invalid(format!("t must lie in [0, 1], got {t}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(HfmError::invalid("network input has non-finite entries"));
        }
        let xs = ArrayView2::from_shape((1, self.io_dim), x).expect("shape checked");
        let cache = self.forward_batch(xs, &[t]);
        Ok(cache.output.row(0).to_vec())
    }

    /// Batched forward pass over rows of `xs`, one time per row.
    pub fn forward_batch(&self, xs: ArrayView2<'_, f64>, ts: &[f64]) -> ForwardCache {
        assert_eq!(xs.ncols(), self.io_dim, "input width mismatch");
        assert_eq!(xs.nrows(), ts.len(), "one time per row");
        let mut temb = Array2::zeros((ts.len(), TIME_EMBED_DIM));
        for (mut row, &t) in temb.rows_mut().into_iter().zip(ts) {
            row.assign(&ArrayView1::from(&self.embedding.embed(t)));
        }
        let mut h = xs.dot(&self.w_in.t()) + &self.b_in;
        let mut hidden = Vec::with_capacity(self.blocks.len() + 1);
        let mut branch_in = Vec::with_capacity(self.blocks.len());
        let mut pre_act = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let a = &h + &temb.dot(&b.w_t.t()) + &b.c;
            let z = a.dot(&b.w1.t()) + &b.b1;
            let s = z.mapv(Real::softplus);
            let next = &h + &s.dot(&b.w2.t()) + &b.b2;
            hidden.push(h);
            branch_in.push(a);
            pre_act.push(z);
            h = next;
        }
        let output = h.dot(&self.w_out.t()) + &self.b_out;
        hidden.push(h);
        ForwardCache {
            inputs: xs.to_owned(),
            temb,
            hidden,
            branch_in,
            pre_act,
            output,
        }
    }

    /// Parameter gradients of `sum_rows <upstream_row, output_row>`.
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView2<'_, f64>) -> VelocityNet {
        assert_eq!(upstream.dim(), cache.output.dim(), "upstream shape mismatch");
        let mut g = VelocityNet::zeros(self.io_dim, self.config());
        let last = cache.hidden.last().expect("forward pass recorded hidden states");
        g.w_out = upstream.t().dot(last);
        g.b_out = upstream.sum_axis(Axis(0));
        let mut dh = upstream.dot(&self.w_out);
        for (i, b) in self.blocks.iter().enumerate().rev() {
            let z = &cache.pre_act[i];
            let s = z.mapv(Real::softplus);
            let gb = &mut g.blocks[i];
            gb.w2 = dh.t().dot(&s);
            gb.b2 = dh.sum_axis(Axis(0));
            let mut dz = dh.dot(&b.w2);
            dz.zip_mut_with(z, |d, &zz| *d *= sigmoid(zz));
            gb.w1 = dz.t().dot(&cache.branch_in[i]);
            gb.b1 = dz.sum_axis(Axis(0));
            let da = dz.dot(&b.w1);
            gb.w_t = da.t().dot(&cache.temb);
            gb.c = da.sum_axis(Axis(0));
            dh += &da;
        }
        g.w_in = dh.t().dot(&cache.inputs);
        g.b_in = dh.sum_axis(Axis(0));
        g
    }

    pub fn encode_checkpoint(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 8 * self.num_params());
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        for v in [
            CHECKPOINT_VERSION,
            self.blocks.len() as u32,
            self.width as u32,
            (self.io_dim - 1) as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for t in self.tensors() {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode_checkpoint(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 {
            return Err(HfmError::format(bytes.len() as u64, "truncated checkpoint header"));
        }
        if bytes[..4] != CHECKPOINT_MAGIC {
            return Err(HfmError::format(0, "bad magic, expected \"HFMP\""));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
        if word(1) != CHECKPOINT_VERSION {
            return Err(HfmError::format(4, format!("unsupported checkpoint version {}", word(1))));
        }
        let (blocks, width, n) = (word(2) as usize, word(3) as usize, word(4) as usize);
        if width == 0 {
            return Err(HfmError::format(12, "hidden width must be positive"));
        }
        let mut net = VelocityNet::zeros(n + 1, NetConfig { blocks, width });
        let expected = 20 + 8 * net.num_params();
        if bytes.len() != expected {
            return Err(HfmError::format(
                bytes.len().min(expected) as u64,
                format!("checkpoint has {} bytes, header implies {expected}", bytes.len()),
            ));
        }
        let mut at = 20;
        for t in net.tensors_mut() {
            for v in t.iter_mut() {
                *v = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
                if !v.is_finite() {
                    return Err(HfmError::format(at as u64, "non-finite parameter"));
                }
                at += 8;
            }
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode_checkpoint())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode_checkpoint(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small() -> NetConfig {
        NetConfig { blocks: 2, width: 12 }
    }

    fn random_batch(rows: usize, dim: usize, seed: u64) -> (Array2<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = Array2::from_shape_fn((rows, dim), |_| rng.random_range(-2.0..2.0));
        let ts = (0..rows).map(|_| rng.random_range(0.0..1.0)).collect();
        (xs, ts)
    }

    #[test]
    fn embedding_is_bounded_and_fixed_width() {
        let e = TimeEmbedding::new(TIME_EMBED_DIM);
        for t in [0.0, 0.37, 1.0] {
            let v = e.embed(t);
            assert_eq!(v.len(), TIME_EMBED_DIM);
            assert!(v.iter().all(|x| (-1.0..=1.0).contains(x)));
        }
    }

    #[test]
    fn zero_output_layer_gives_zero_velocity() {
        let net = VelocityNet::init(5, small(), 3);
        let y = net.forward(&[1.0, -2.0, 0.5, 0.0, 3.0], 0.4).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let mut net = VelocityNet::init(5, small(), 3);
        net.randomize_output(4, 1.0);
        let x = [1.0, -2.0, 0.5, 0.0, 3.0];
        let a = net.forward(&x, 0.4).unwrap();
        let b = net.forward(&x, 0.4).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn time_conditioning_matters() {
        let mut net = VelocityNet::init(5, small(), 3);
        net.randomize_output(4, 1.0);
        let x = [0.3, 0.1, -0.5, 1.0, 0.2];
        let a = net.forward(&x, 0.1).unwrap();
        let b = net.forward(&x, 0.9).unwrap();
        let diff: f64 = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).sum();
        assert!(diff > 1e-3, "diff {diff}");
    }

    #[test]
    fn output_is_continuous_in_time() {
        let mut net = VelocityNet::init(17, NetConfig::default(), 1);
        net.randomize_output(2, 1.0);
        let (xs, ts) = random_batch(16, 17, 9);
        for (x, &t) in xs.rows().into_iter().zip(&ts) {
            let t = t.min(1.0 - 1e-6);
            let a = net.forward(x.as_slice().unwrap(), t).unwrap();
            let b = net.forward(x.as_slice().unwrap(), t + 1e-6).unwrap();
            let d = a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            assert!(d < 1e-3, "jump {d}");
        }
    }

    #[test]
    fn rejects_bad_shapes_and_times() {
        let net = VelocityNet::init(3, small(), 0);
        assert!(net.forward(&[1.0, 2.0], 0.5).is_err());
        assert!(net.forward(&[1.0, 2.0, 3.0], 1.5).is_err());
    }

    #[test]
    fn zeroed_residual_branches_pass_hidden_stream_through() {
        let mut net = VelocityNet::init(4, NetConfig { blocks: 3, width: 10 }, 5);
        net.zero_residual_branches();
        let (xs, ts) = random_batch(6, 4, 1);
        let cache = net.forward_batch(xs.view(), &ts);
        let stream = cache.hidden_stream();
        for h in &stream[1..] {
            assert_eq!(h, &stream[0]);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let net = VelocityNet::init(4, small(), 5);
        let (xs, ts) = random_batch(3, 4, 2);
        let cache = net.forward_batch(xs.view(), &ts);
        let g = net.backward(&cache, Array2::zeros((3, 4)).view());
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut net = VelocityNet::init(4, small(), 11);
        net.randomize_output(12, 1.0);
        let (xs, ts) = random_batch(5, 4, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let up = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
        let objective = |n: &VelocityNet| (n.forward_batch(xs.view(), &ts).output * &up).sum();
        let cache = net.forward_batch(xs.view(), &ts);
        let grad = net.backward(&cache, up.view()).to_flat();
        let base = net.to_flat();
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for _ in 0..32 {
            let i = rng.random_range(0..base.len());
            let mut probe = net.clone();
            let mut p = base.clone();
            p[i] += h;
            probe.load_flat(&p);
            let fp = objective(&probe);
            p[i] -= 2.0 * h;
            probe.load_flat(&p);
            let fm = objective(&probe);
            let fd = (fp - fm) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn checkpoint_roundtrip_and_errors() {
        let mut net = VelocityNet::init(6, small(), 21);
        net.randomize_output(22, 1.0);
        let bytes = net.encode_checkpoint();
        assert_eq!(&bytes[..4], b"HFMP");
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 5);
        assert_eq!(bytes.len(), 20 + 8 * net.num_params());
        assert_eq!(VelocityNet::decode_checkpoint(&bytes).unwrap(), net);

        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(
            VelocityNet::decode_checkpoint(&bad),
            Err(HfmError::Format { offset: 0, .. })
        ));
        assert!(VelocityNet::decode_checkpoint(&bytes[..bytes.len() - 8]).is_err());
    }

    #[test]
    fn flat_parameters_roundtrip_and_mask_aligns() {
        let net = VelocityNet::init(3, small(), 2);
        let flat = net.to_flat();
        let mut other = VelocityNet::zeros(3, small());
        other.load_flat(&flat);
        assert_eq!(other, net);
        assert_eq!(net.weight_mask().len(), flat.len());
    }
}
