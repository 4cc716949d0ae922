//! Minimal reverse-mode automatic differentiation over flat `f64` vectors.
//!
//! A [`Tape`] records a straight-line program. Every node holds a flat vector;
//! matrices are row-major and complex vectors are interleaved `(re, im)`
//! pairs. Shape errors and non-finite intermediates are recorded on the tape
//! (first error wins) and surfaced by [`Tape::backward`] / [`Tape::check`], so
//! graph-building code stays free of `?` noise.

mod check;
mod linear;

pub use check::{eval_with_grad, finite_diff_check, FdReport};
pub use linear::{Chain, DenseMatrix, DiagScale, LinearMap, Slice};

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable vector function supplied as a primitive together with its
/// vector-Jacobian product.
pub trait VectorFunction {
    fn name(&self) -> &'static str;
    fn in_len(&self) -> usize;
    fn out_len(&self) -> usize;
    fn forward(&self, x: &[f64]) -> Vec<f64>;
    /// `J(x)^T g`.
    fn vjp(&self, x: &[f64], g: &[f64]) -> Vec<f64>;
}

#[derive(Clone)]
enum Op {
    Input,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    AddRow {
        x: Var,
        row: Var,
    },
    MatMul {
        a: Var,
        b: Var,
        n: usize,
        k: usize,
        m: usize,
    },
    Tanh(Var),
    Softplus(Var),
    SumSq(Var),
    Sum(Var),
    Concat(Vec<Var>),
    ConcatCols {
        a: Var,
        b: Var,
        rows: usize,
    },
    Linear(Var, Rc<dyn LinearMap>),
    ComplexMul(Var, Var),
    CausalConv {
        signal: Var,
        taps: Var,
    },
    ClipMagnitude {
        x: Var,
        radius: f64,
    },
    PowerNormalize {
        x: Var,
        target: f64,
        norm: f64,
    },
    Map(Var, Rc<dyn VectorFunction>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::ScaleBy(..) => "scale_by",
            Op::AddRow { .. } => "add_row",
            Op::MatMul { .. } => "matmul",
            Op::Tanh(_) => "tanh",
            Op::Softplus(_) => "softplus",
            Op::SumSq(_) => "sum_sq",
            Op::Sum(_) => "sum",
            Op::Concat(_) => "concat",
            Op::ConcatCols { .. } => "concat_cols",
            Op::Linear(..) => "linear",
            Op::ComplexMul(..) => "complex_mul",
            Op::CausalConv { .. } => "causal_conv",
            Op::ClipMagnitude { .. } => "clip_magnitude",
            Op::PowerNormalize { .. } => "power_normalize",
            Op::Map(_, f) => f.name(),
        }
    }
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Gradients of a scalar loss with respect to every node on the tape.
pub struct Gradients {
    adjoints: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        match &self.adjoints[v.0] {
            Some(g) => g.clone(),
            None => vec![0.0; self.lens[v.0]],
        }
    }
}

/// Recorded program.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    error: Option<Error>,
    /// Clip decisions of every clipped sample, in recording order. Used by the
    /// finite-difference checker to detect clip-boundary crossings.
    clip_pattern: Vec<bool>,
    /// Set when a power normalization saw an all-zero input.
    degenerate_power: bool,
}

fn sq(x: f64) -> f64 {
    x * x
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// The first scalar of `v`.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.first().copied().unwrap_or(f64::NAN)
    }

    pub fn error(&self) -> Option<&Error> {
        self.error.as_ref()
    }

    pub fn check(&self) -> Result<()> {
        match &self.error {
            Some(e) => Err(e.clone()),
            None => Ok(()),
        }
    }

    pub fn clip_pattern(&self) -> &[bool] {
        &self.clip_pattern
    }

    pub fn degenerate_power(&self) -> bool {
        self.degenerate_power
    }

    fn fail(&mut self, e: Error) {
        if self.error.is_none() {
            self.error = Some(e);
        }
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        let id = self.nodes.len();
        if self.error.is_none() && value.iter().any(|v| !v.is_finite()) {
            self.error = Some(Error::NonFinite {
                node: id,
                op: op.name(),
            });
        }
        self.nodes.push(Node { value, op });
        Var(id)
    }

    fn expect_len(&mut self, v: Var, len: usize, context: &'static str) -> bool {
        let got = self.nodes[v.0].value.len();
        if got != len {
            self.fail(Error::Shape {
                expected: len,
                got,
                context,
            });
            false
        } else {
            true
        }
    }

    fn same_len(&mut self, a: Var, b: Var, context: &'static str) -> usize {
        let n = self.nodes[a.0].value.len();
        self.expect_len(b, n, context);
        n
    }

    pub fn input(&mut self, value: &[f64]) -> Var {
        self.push(value.to_vec(), Op::Input)
    }

    pub fn constant(&mut self, value: &[f64]) -> Var {
        self.push(value.to_vec(), Op::Constant)
    }

    pub fn constant_vec(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let n = self.same_len(a, b, op.name());
        let value = if self.nodes[b.0].value.len() == n {
            self.nodes[a.0]
                .value
                .iter()
                .zip(&self.nodes[b.0].value)
                .map(|(x, y)| f(*x, *y))
                .collect()
        } else {
            vec![0.0; n]
        };
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.nodes[a.0].value.iter().map(|x| c * x).collect();
        self.push(value, Op::Scale(a, c))
    }

    /// `a * s` where `s` is a length-1 node.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        self.expect_len(s, 1, "scale_by scalar");
        let c = self.scalar(s);
        let value = self.nodes[a.0].value.iter().map(|x| c * x).collect();
        self.push(value, Op::ScaleBy(a, s))
    }

    /// `a*x + b*y` for constants `a`, `b`.
    pub fn lincomb(&mut self, a: f64, x: Var, b: f64, y: Var) -> Var {
        let ax = self.scale(x, a);
        let by = self.scale(y, b);
        self.add(ax, by)
    }

    /// Adds a row vector to every row of a row-major matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let m = self.nodes[row.0].value.len();
        let xv = &self.nodes[x.0].value;
        if m == 0 || xv.len() % m != 0 {
            let got = xv.len();
            self.fail(Error::Shape {
                expected: m,
                got,
                context: "add_row",
            });
            let n = self.nodes[x.0].value.len();
            return self.push(vec![0.0; n], Op::AddRow { x, row });
        }
        let r = &self.nodes[row.0].value;
        let value = xv
            .chunks(m)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(a, b)| a + b))
            .collect();
        self.push(value, Op::AddRow { x, row })
    }

    /// Row-major `(n x k) * (k x m)`.
    pub fn matmul(&mut self, a: Var, b: Var, n: usize, k: usize, m: usize) -> Var {
        let ok_a = self.expect_len(a, n * k, "matmul lhs");
        let ok_b = self.expect_len(b, k * m, "matmul rhs");
        let mut out = vec![0.0; n * m];
        if ok_a && ok_b {
            let av = &self.nodes[a.0].value;
            let bv = &self.nodes[b.0].value;
            for i in 0..n {
                let row = &mut out[i * m..(i + 1) * m];
                for p in 0..k {
                    let aip = av[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let brow = &bv[p * m..(p + 1) * m];
                    for (o, bv) in row.iter_mut().zip(brow) {
                        *o += aip * bv;
                    }
                }
            }
        }
        self.push(out, Op::MatMul { a, b, n, k, m })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0]
            .value
            .iter()
            .map(|x| libm::tanh(*x))
            .collect();
        self.push(value, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.iter().map(|x| softplus(*x)).collect();
        self.push(value, Op::Softplus(a))
    }

    /// Squared Euclidean norm, as a length-1 node.
    pub fn sum_sq(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().map(|x| x * x).sum();
        self.push(vec![s], Op::SumSq(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        self.push(vec![s], Op::Sum(a))
    }

    /// `||a - b||^2`.
    pub fn dist_sq(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        self.sum_sq(d)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut value = Vec::new();
        for p in parts {
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(value, Op::Concat(parts.to_vec()))
    }

    /// Column-wise concatenation of two row-major matrices with `rows` rows.
    pub fn concat_cols(&mut self, a: Var, b: Var, rows: usize) -> Var {
        let (la, lb) = (self.nodes[a.0].value.len(), self.nodes[b.0].value.len());
        if rows == 0 || la % rows != 0 || lb % rows != 0 {
            self.fail(Error::Shape {
                expected: rows,
                got: la,
                context: "concat_cols rows",
            });
            return self.push(vec![0.0; la + lb], Op::ConcatCols { a, b, rows });
        }
        let (ca, cb) = (la / rows, lb / rows);
        let mut value = Vec::with_capacity(la + lb);
        for r in 0..rows {
            value.extend_from_slice(&self.nodes[a.0].value[r * ca..(r + 1) * ca]);
            value.extend_from_slice(&self.nodes[b.0].value[r * cb..(r + 1) * cb]);
        }
        self.push(value, Op::ConcatCols { a, b, rows })
    }

    /// Applies a fixed linear map.
    pub fn linear(&mut self, a: Var, map: Rc<dyn LinearMap>) -> Var {
        let mut out = Vec::new();
        if self.expect_len(a, map.in_len(), "linear map input") {
            map.apply(&self.nodes[a.0].value, &mut out);
        } else {
            out = vec![0.0; map.out_len()];
        }
        self.push(out, Op::Linear(a, map))
    }

    /// `x[start..start + len]`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let total = self.nodes[x.0].value.len();
        if start + len > total {
            self.fail(Error::Shape {
                expected: start + len,
                got: total,
                context: "slice bounds",
            });
            return self.push(vec![0.0; len], Op::Constant);
        }
        self.linear(x, Rc::new(Slice { total, start, len }))
    }

    /// Elementwise complex product of interleaved vectors.
    pub fn complex_mul(&mut self, a: Var, b: Var) -> Var {
        let n = self.same_len(a, b, "complex_mul");
        let mut out = vec![0.0; n];
        if n % 2 != 0 {
            self.fail(Error::Construction(
                "complex_mul on odd-length vector".into(),
            ));
        } else if self.nodes[b.0].value.len() == n {
            let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
            for i in (0..n).step_by(2) {
                out[i] = av[i] * bv[i] - av[i + 1] * bv[i + 1];
                out[i + 1] = av[i] * bv[i + 1] + av[i + 1] * bv[i];
            }
        }
        self.push(out, Op::ComplexMul(a, b))
    }

    /// Complex causal linear convolution `y[n] = sum_l h[l] s[n-l]`, truncated
    /// to the signal length.
    pub fn causal_conv(&mut self, signal: Var, taps: Var) -> Var {
        let (sv, hv) = (&self.nodes[signal.0].value, &self.nodes[taps.0].value);
        if sv.len() % 2 != 0 || hv.len() % 2 != 0 {
            let n = sv.len();
            self.fail(Error::Construction(
                "causal_conv on odd-length vector".into(),
            ));
            return self.push(vec![0.0; n], Op::CausalConv { signal, taps });
        }
        let out = conv_forward(sv, hv);
        self.push(out, Op::CausalConv { signal, taps })
    }

    /// Limits the magnitude of every complex sample to `radius`.
    pub fn clip_magnitude(&mut self, x: Var, radius: f64) -> Var {
        let xv = &self.nodes[x.0].value;
        let mut out = xv.clone();
        if radius.is_finite() {
            for pair in out.chunks_mut(2) {
                let mag = libm::hypot(pair[0], pair[1]);
                let clipped = mag > radius;
                self.clip_pattern.push(clipped);
                if clipped {
                    pair[0] *= radius / mag;
                    pair[1] *= radius / mag;
                }
            }
        }
        self.push(out, Op::ClipMagnitude { x, radius })
    }

    /// Scales `x` so that `||x||^2 == target`. The zero vector maps to zero
    /// and raises the degenerate-power flag.
    pub fn power_normalize(&mut self, x: Var, target: f64) -> Var {
        let xv = &self.nodes[x.0].value;
        let norm = libm::sqrt(xv.iter().map(|v| v * v).sum::<f64>());
        let out = if norm > 0.0 {
            let c = libm::sqrt(target) / norm;
            xv.iter().map(|v| c * v).collect()
        } else {
            self.degenerate_power = true;
            vec![0.0; xv.len()]
        };
        self.push(out, Op::PowerNormalize { x, target, norm })
    }

    /// Applies a primitive with a hand-written VJP.
    pub fn map(&mut self, x: Var, f: Rc<dyn VectorFunction>) -> Var {
        let out = if self.expect_len(x, f.in_len(), "map input") {
            f.forward(&self.nodes[x.0].value)
        } else {
            vec![0.0; f.out_len()]
        };
        self.push(out, Op::Map(x, f))
    }

    /// Reverse sweep from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check()?;
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Construction(alloc::format!(
                "loss node {} is not scalar (len {})",
                loss.0,
                self.nodes[loss.0].value.len()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            self.propagate(id, &g, &mut adj);
            adj[id] = Some(g);
        }
        for (id, a) in adj.iter().enumerate() {
            if let Some(a) = a {
                if a.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        node: id,
                        op: self.nodes[id].op.name(),
                    });
                }
            }
        }
        Ok(Gradients {
            adjoints: adj,
            lens: self.nodes.iter().map(|n| n.value.len()).collect(),
        })
    }

    fn propagate(&self, id: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let val = |v: Var| -> &[f64] { &self.nodes[v.0].value };
        match &node.op {
            Op::Input | Op::Constant => {}
            Op::Add(a, b) => {
                accumulate(adj, *a, g.iter().copied());
                accumulate(adj, *b, g.iter().copied());
            }
            Op::Sub(a, b) => {
                accumulate(adj, *a, g.iter().copied());
                accumulate(adj, *b, g.iter().map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                accumulate(adj, *a, g.iter().zip(bv).map(|(g, b)| g * b));
                accumulate(adj, *b, g.iter().zip(av).map(|(g, a)| g * a));
            }
            Op::Scale(a, c) => accumulate(adj, *a, g.iter().map(|v| c * v)),
            Op::ScaleBy(a, s) => {
                let c = val(*s)[0];
                let av = val(*a);
                accumulate(adj, *a, g.iter().map(|v| c * v));
                let ds: f64 = g.iter().zip(av).map(|(g, a)| g * a).sum();
                accumulate(adj, *s, core::iter::once(ds));
            }
            Op::AddRow { x, row } => {
                accumulate(adj, *x, g.iter().copied());
                let m = val(*row).len();
                let mut gr = vec![0.0; m];
                for chunk in g.chunks(m) {
                    for (acc, v) in gr.iter_mut().zip(chunk) {
                        *acc += v;
                    }
                }
                accumulate(adj, *row, gr.into_iter());
            }
            Op::MatMul { a, b, n, k, m } => {
                let (n, k, m) = (*n, *k, *m);
                let (av, bv) = (val(*a), val(*b));
                // dA = G B^T, dB = A^T G
                let mut ga = vec![0.0; n * k];
                let mut gb = vec![0.0; k * m];
                for i in 0..n {
                    let grow = &g[i * m..(i + 1) * m];
                    for p in 0..k {
                        let brow = &bv[p * m..(p + 1) * m];
                        ga[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        let aip = av[i * k + p];
                        if aip != 0.0 {
                            for (o, gv) in gb[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                *o += aip * gv;
                            }
                        }
                    }
                }
                accumulate(adj, *a, ga.into_iter());
                accumulate(adj, *b, gb.into_iter());
            }
            Op::Tanh(a) => accumulate(
                adj,
                *a,
                g.iter().zip(&node.value).map(|(g, y)| g * (1.0 - y * y)),
            ),
            Op::Softplus(a) => {
                accumulate(adj, *a, g.iter().zip(val(*a)).map(|(g, x)| g * sigmoid(*x)))
            }
            Op::SumSq(a) => {
                let g0 = g[0];
                accumulate(adj, *a, val(*a).iter().map(|x| 2.0 * g0 * x));
            }
            Op::Sum(a) => {
                let g0 = g[0];
                let n = val(*a).len();
                accumulate(adj, *a, core::iter::repeat_n(g0, n));
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = val(*p).len();
                    accumulate(adj, *p, g[off..off + n].iter().copied());
                    off += n;
                }
            }
            Op::ConcatCols { a, b, rows } => {
                let ca = val(*a).len() / rows;
                let cb = val(*b).len() / rows;
                let w = ca + cb;
                let ga: Vec<f64> = (0..*rows)
                    .flat_map(|r| g[r * w..r * w + ca].iter().copied())
                    .collect();
                let gb: Vec<f64> = (0..*rows)
                    .flat_map(|r| g[r * w + ca..(r + 1) * w].iter().copied())
                    .collect();
                accumulate(adj, *a, ga.into_iter());
                accumulate(adj, *b, gb.into_iter());
            }
            Op::Linear(a, map) => {
                let mut out = Vec::new();
                map.adjoint(g, &mut out);
                accumulate(adj, *a, out.into_iter());
            }
            Op::ComplexMul(a, b) => {
                // d/da <g, a*b> = g * conj(b) in the real-pair inner product
                let (av, bv) = (val(*a), val(*b));
                let n = av.len();
                let mut ga = vec![0.0; n];
                let mut gb = vec![0.0; n];
                for i in (0..n).step_by(2) {
                    ga[i] = g[i] * bv[i] + g[i + 1] * bv[i + 1];
                    ga[i + 1] = -g[i] * bv[i + 1] + g[i + 1] * bv[i];
                    gb[i] = g[i] * av[i] + g[i + 1] * av[i + 1];
                    gb[i + 1] = -g[i] * av[i + 1] + g[i + 1] * av[i];
                }
                accumulate(adj, *a, ga.into_iter());
                accumulate(adj, *b, gb.into_iter());
            }
            Op::CausalConv { signal, taps } => {
                let (sv, hv) = (val(*signal), val(*taps));
                let (gs, gh) = conv_adjoint(sv, hv, g);
                accumulate(adj, *signal, gs.into_iter());
                accumulate(adj, *taps, gh.into_iter());
            }
            Op::ClipMagnitude { x, radius } => {
                let xv = val(*x);
                let mut gx = g.to_vec();
                if radius.is_finite() {
                    for i in (0..xv.len()).step_by(2) {
                        let (a, b) = (xv[i], xv[i + 1]);
                        let mag = libm::hypot(a, b);
                        if mag > *radius {
                            // y = r u / |u|: J = (r/|u|)(I - u u^T / |u|^2), symmetric
                            let c = radius / mag;
                            let (ua, ub) = (a / mag, b / mag);
                            let dot = g[i] * ua + g[i + 1] * ub;
                            gx[i] = c * (g[i] - dot * ua);
                            gx[i + 1] = c * (g[i + 1] - dot * ub);
                        }
                    }
                }
                accumulate(adj, *x, gx.into_iter());
            }
            Op::PowerNormalize { x, target, norm } => {
                if *norm > 0.0 {
                    // y = s x / |x|, J = (s/|x|)(I - x x^T/|x|^2)
                    let xv = val(*x);
                    let c = libm::sqrt(*target) / norm;
                    let dot: f64 = g.iter().zip(xv).map(|(g, x)| g * x).sum::<f64>() / sq(*norm);
                    accumulate(adj, *x, g.iter().zip(xv).map(|(g, x)| c * (g - dot * x)));
                }
            }
            Op::Map(x, f) => {
                let out = f.vjp(val(*x), g);
                accumulate(adj, *x, out.into_iter());
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, g: impl Iterator<Item = f64>) {
    match &mut adj[v.0] {
        Some(acc) => {
            for (a, x) in acc.iter_mut().zip(g) {
                *a += x;
            }
        }
        slot @ None => *slot = Some(g.collect()),
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        libm::log1p(libm::exp(x))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn conv_forward(s: &[f64], h: &[f64]) -> Vec<f64> {
    let n = s.len() / 2;
    let l = h.len() / 2;
    let mut out = vec![0.0; 2 * n];
    for i in 0..n {
        let (mut re, mut im) = (0.0, 0.0);
        for tap in 0..l.min(i + 1) {
            let (hr, hi) = (h[2 * tap], h[2 * tap + 1]);
            let (sr, si) = (s[2 * (i - tap)], s[2 * (i - tap) + 1]);
            re += hr * sr - hi * si;
            im += hr * si + hi * sr;
        }
        out[2 * i] = re;
        out[2 * i + 1] = im;
    }
    out
}

fn conv_adjoint(s: &[f64], h: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = s.len() / 2;
    let l = h.len() / 2;
    let mut gs = vec![0.0; s.len()];
    let mut gh = vec![0.0; h.len()];
    for i in 0..n {
        let (gr, gi) = (g[2 * i], g[2 * i + 1]);
        for tap in 0..l.min(i + 1) {
            let j = i - tap;
            let (hr, hi) = (h[2 * tap], h[2 * tap + 1]);
            let (sr, si) = (s[2 * j], s[2 * j + 1]);
            // g * conj(h) into s, g * conj(s) into h
            gs[2 * j] += gr * hr + gi * hi;
            gs[2 * j + 1] += -gr * hi + gi * hr;
            gh[2 * tap] += gr * sr + gi * si;
            gh[2 * tap + 1] += -gr * si + gi * sr;
        }
    }
    (gs, gh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn squared_norm_gradient() {
        let (loss, grads) = eval_with_grad(&[&[1.0, -2.0, 0.5]], |t, v| t.sum_sq(v[0])).unwrap();
        assert_relative_eq!(loss, 5.25);
        assert_eq!(grads[0], [2.0, -4.0, 1.0]);
    }

    #[test]
    fn least_squares_gradient() {
        // A is 2x3 row-major
        let a = [1.0, 2.0, 0.0, -1.0, 0.5, 3.0];
        let y = [0.3, -0.7];
        let x = [0.2, 0.1, -0.4];
        let (_, grads) = eval_with_grad(&[&x], |t, v| {
            let am = t.constant(&a);
            let ax = t.matmul(am, v[0], 2, 3, 1);
            let yc = t.constant(&y);
            t.dist_sq(yc, ax)
        })
        .unwrap();
        let r: Vec<f64> = (0..2)
            .map(|i| y[i] - (0..3).map(|j| a[i * 3 + j] * x[j]).sum::<f64>())
            .collect();
        for j in 0..3 {
            let expect = -2.0 * (0..2).map(|i| a[i * 3 + j] * r[i]).sum::<f64>();
            assert_relative_eq!(grads[0][j], expect, max_relative = 1e-14);
        }
    }

    #[test]
    fn shape_error_is_recorded() {
        let mut t = Tape::new();
        let a = t.input(&[1.0, 2.0]);
        let b = t.input(&[1.0]);
        let c = t.add(a, b);
        let l = t.sum_sq(c);
        assert!(matches!(t.backward(l), Err(Error::Shape { .. })));
    }

    #[test]
    fn non_finite_names_node() {
        let mut t = Tape::new();
        let a = t.input(&[1.0]);
        let b = t.scale(a, f64::INFINITY);
        let l = t.sum_sq(b);
        match t.backward(l) {
            Err(Error::NonFinite { node, op }) => {
                assert_eq!(node, 1);
                assert_eq!(op, "scale");
            }
            other => panic!("unexpected {:?}", other.err()),
        }
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let a = t.input(&[1.0, 2.0]);
        assert!(matches!(t.backward(a), Err(Error::Construction(_))));
    }

    #[test]
    fn power_normalize_zero_vector_flags() {
        let mut t = Tape::new();
        let a = t.input(&[0.0; 4]);
        let z = t.power_normalize(a, 2.0);
        assert!(t.degenerate_power());
        assert_eq!(t.value(z), [0.0; 4]);
        let l = t.sum_sq(z);
        assert_eq!(t.backward(l).unwrap().wrt(a), [0.0; 4]);
    }

    #[test]
    fn clip_preserves_phase() {
        let mut t = Tape::new();
        let a = t.input(&[3.0 * 0.6, 3.0 * 0.8, 0.1, 0.2]);
        let c = t.clip_magnitude(a, 2.0);
        let v = t.value(c);
        assert_relative_eq!(v[0], 1.2, epsilon = 1e-15);
        assert_relative_eq!(v[1], 1.6, epsilon = 1e-15);
        assert_eq!(&v[2..], &[0.1, 0.2]);
        assert_eq!(t.clip_pattern(), [true, false]);
    }
}
