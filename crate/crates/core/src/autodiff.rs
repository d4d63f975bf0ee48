//! Minimal scalar reverse-mode differentiation.
//!
//! Every loss on the manifold side (tangent projection, exponential map,
//! geodesic distances, cone angles, softmax) is written once, generically over
//! [`Real`]. Evaluating with `f64` gives plain values; evaluating with [`Var`]
//! records a tape whose reverse sweep yields exact gradients. The two paths
//! run the same arithmetic, which is what the finite-difference tests rely on.
//!
//! The tape is a flat arena of nodes with at most two parents each. Nodes are
//! appended in evaluation order, so a single backwards pass over the arena is a
//! valid topological sweep.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar arithmetic shared by plain floats and taped variables.
pub trait Real:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(self) -> f64;
    /// A constant living in the same arithmetic as `self`.
    fn lift(self, c: f64) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    /// `max(self, 0)`, with zero subgradient on the inactive side.
    fn relu(self) -> Self;
    /// `arcsin(clamp(self, -1, 1))`.
    fn asin_clamped(self) -> Self;
    /// `arccos(clamp(self, -1, 1))`.
    fn acos_clamped(self) -> Self;
    /// `arcosh(1 + max(self, 0))`.
    fn acosh1p(self) -> Self;
    /// `arcosh(1 + max(self, 0))^2`; smooth through `self = 0`.
    fn acosh1p_sq(self) -> Self;
    /// `cosh(sqrt(max(self, 0)))`.
    fn cosh_sqrt(self) -> Self;
    /// `sinh(s) / s` with `s = sqrt(max(self, 0))`; equals 1 at 0.
    fn sinhc_sqrt(self) -> Self;
    /// `ln(1 + exp(self))`.
    fn softplus(self) -> Self;
}

// Scalar kernels: (value, derivative) pairs shared by both implementations.

fn acosh1p_parts(e: f64) -> (f64, f64) {
    if e <= 0.0 {
        return (0.0, 0.0);
    }
    let root = (e * (2.0 + e)).sqrt();
    ((e + root).ln_1p(), 1.0 / root)
}

fn acosh1p_sq_parts(e: f64) -> (f64, f64) {
    if e <= 0.0 {
        return (0.0, 2.0);
    }
    let (a, _) = acosh1p_parts(e);
    let d = if e < 1e-8 {
        2.0 * (1.0 - e / 3.0)
    } else {
        2.0 * a / (e * (2.0 + e)).sqrt()
    };
    (a * a, d)
}

fn cosh_sqrt_parts(q: f64) -> (f64, f64) {
    let q = q.max(0.0);
    let s = q.sqrt();
    (s.cosh(), 0.5 * sinhc_sqrt_parts(q).0)
}

fn sinhc_sqrt_parts(q: f64) -> (f64, f64) {
    let q = q.max(0.0);
    if q < 1e-4 {
        let v = 1.0 + q / 6.0 + q * q / 120.0 + q * q * q / 5040.0;
        let d = 1.0 / 6.0 + q / 60.0 + q * q / 2520.0;
        (v, d)
    } else {
        let s = q.sqrt();
        let (sh, ch) = (s.sinh(), s.cosh());
        (sh / s, (s * ch - sh) / (2.0 * s * s * s))
    }
}

fn softplus_parts(x: f64) -> (f64, f64) {
    let sig = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    let v = if x > 30.0 {
        x + (-x).exp()
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    };
    (v, sig)
}

fn asin_parts(z: f64) -> (f64, f64) {
    if z >= 1.0 {
        (std::f64::consts::FRAC_PI_2, 0.0)
    } else if z <= -1.0 {
        (-std::f64::consts::FRAC_PI_2, 0.0)
    } else {
        (z.asin(), 1.0 / (1.0 - z * z).sqrt())
    }
}

fn acos_parts(z: f64) -> (f64, f64) {
    if z >= 1.0 {
        (0.0, 0.0)
    } else if z <= -1.0 {
        (std::f64::consts::PI, 0.0)
    } else {
        (z.acos(), -1.0 / (1.0 - z * z).sqrt())
    }
}

/// Derivative of softplus, the logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    softplus_parts(x).1
}

impl Real for f64 {
    fn value(self) -> f64 {
        self
    }
    fn lift(self, c: f64) -> Self {
        c
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn relu(self) -> Self {
        self.max(0.0)
    }
    fn asin_clamped(self) -> Self {
        asin_parts(self).0
    }
    fn acos_clamped(self) -> Self {
        acos_parts(self).0
    }
    fn acosh1p(self) -> Self {
        acosh1p_parts(self).0
    }
    fn acosh1p_sq(self) -> Self {
        acosh1p_sq_parts(self).0
    }
    fn cosh_sqrt(self) -> Self {
        cosh_sqrt_parts(self).0
    }
    fn sinhc_sqrt(self) -> Self {
        sinhc_sqrt_parts(self).0
    }
    fn softplus(self) -> Self {
        softplus_parts(self).0
    }
}

#[derive(Clone, Copy)]
struct Node {
    parents: [(u32, f64); 2],
    arity: u8,
}

/// Arena recording every operation performed on its [`Var`]s.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(n)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// New independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push(Node {
            parents: [(0, 0.0); 2],
            arity: 0,
        });
        Var {
            tape: self,
            idx,
            val: value,
        }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    fn push(&self, node: Node) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        nodes.push(node);
        u32::try_from(idx).expect("tape exceeded u32 nodes")
    }

    fn unary(&self, a: u32, da: f64, val: f64) -> Var<'_> {
        let idx = self.push(Node {
            parents: [(a, da), (0, 0.0)],
            arity: 1,
        });
        Var {
            tape: self,
            idx,
            val,
        }
    }

    fn binary(&self, a: u32, da: f64, b: u32, db: f64, val: f64) -> Var<'_> {
        let idx = self.push(Node {
            parents: [(a, da), (b, db)],
            arity: 2,
        });
        Var {
            tape: self,
            idx,
            val,
        }
    }

    /// Reverse sweep seeded with d(output)/d(output) = 1.
    pub fn gradient(&self, output: Var<'_>) -> Gradients {
        assert!(
            std::ptr::eq(output.tape, self),
            "output variable belongs to another tape"
        );
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        adj[output.idx as usize] = 1.0;
        for i in (0..=output.idx as usize).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            let node = nodes[i];
            for &(p, d) in &node.parents[..node.arity as usize] {
                adj[p as usize] += g * d;
            }
        }
        Gradients { adj }
    }
}

/// Adjoints of every node on a tape with respect to one output.
pub struct Gradients {
    adj: Vec<f64>,
}

impl Gradients {
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        self.adj[v.idx as usize]
    }

    pub fn wrt_all(&self, vs: &[Var<'_>]) -> Vec<f64> {
        vs.iter().map(|&v| self.wrt(v)).collect()
    }
}

/// A scalar recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{}: {})", self.idx, self.val)
    }
}

impl<'t> Var<'t> {
    fn map(self, (val, d): (f64, f64)) -> Var<'t> {
        self.tape.unary(self.idx, d, val)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.tape
            .binary(self.idx, 1.0, rhs.idx, 1.0, self.val + rhs.val)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.tape
            .binary(self.idx, 1.0, rhs.idx, -1.0, self.val - rhs.val)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.tape
            .binary(self.idx, rhs.val, rhs.idx, self.val, self.val * rhs.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let q = self.val / rhs.val;
        self.tape
            .binary(self.idx, 1.0 / rhs.val, rhs.idx, -q / rhs.val, q)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.map((-self.val, -1.0))
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.map((self.val + rhs, 1.0))
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.map((self.val - rhs, 1.0))
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.map((self.val * rhs, rhs))
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        self.map((self.val / rhs, 1.0 / rhs))
    }
}

impl<'t> Real for Var<'t> {
    fn value(self) -> f64 {
        self.val
    }
    fn lift(self, c: f64) -> Self {
        self.tape.var(c)
    }
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.map((s, 0.5 / s))
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.map((e, e))
    }
    fn ln(self) -> Self {
        self.map((self.val.ln(), 1.0 / self.val))
    }
    fn relu(self) -> Self {
        if self.val > 0.0 {
            self.map((self.val, 1.0))
        } else {
            self.map((0.0, 0.0))
        }
    }
    fn asin_clamped(self) -> Self {
        self.map(asin_parts(self.val))
    }
    fn acos_clamped(self) -> Self {
        self.map(acos_parts(self.val))
    }
    fn acosh1p(self) -> Self {
        self.map(acosh1p_parts(self.val))
    }
    fn acosh1p_sq(self) -> Self {
        self.map(acosh1p_sq_parts(self.val))
    }
    fn cosh_sqrt(self) -> Self {
        self.map(cosh_sqrt_parts(self.val))
    }
    fn sinhc_sqrt(self) -> Self {
        self.map(sinhc_sqrt_parts(self.val))
    }
    fn softplus(self) -> Self {
        self.map(softplus_parts(self.val))
    }
}

/// Sum of a non-empty slice.
pub fn sum<T: Real>(xs: &[T]) -> T {
    let mut it = xs.iter().copied();
    let first = it.next().expect("sum of empty slice");
    it.fold(first, |acc, x| acc + x)
}

/// Euclidean dot product of two equal-length non-empty slices.
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = a[0] * b[0];
    for i in 1..a.len() {
        acc = acc + a[i] * b[i];
    }
    acc
}
