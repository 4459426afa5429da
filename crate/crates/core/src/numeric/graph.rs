//! Reverse-mode autodiff over a flat tape of matrix operations.
//!
//! Every value is a dense f64 matrix (`Mat`); row vectors are 1×C and scalars
//! 1×1. Operations evaluate eagerly as the tape is built, so intermediate
//! values are always available, and [`Graph::backward`] replays the tape in
//! reverse to accumulate gradients. The op set is exactly what the encoder
//! and the flow need — this is not a general-purpose framework.

use ndarray::{Array2, Axis};

use super::linalg;

/// Dense 2-D f64 tensor carrying all model values.
pub type Mat = Array2<f64>;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    MulElem(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Matmul(Var, Var),
    Transpose(Var),
    SoftmaxRows(Var),
    /// Row-wise standardization; value is x̂, `inv_std` the cached 1/σ per row.
    LayerNormRows { x: Var, inv_std: Mat },
    Gelu(Var),
    /// Elementwise parametric rectifier; `slope` is a 1×C row of channel slopes.
    Prelu { x: Var, slope: Var },
    ClampMin(Var, f64),
    Exp(Var),
    Ln(Var),
    /// Broadcast row-vector add: (R×C) + (1×C).
    AddRowVec { x: Var, v: Var },
    /// Broadcast row-vector multiply: (R×C) ⊙ (1×C).
    MulRowVec { x: Var, v: Var },
    /// Broadcast scalar add: (R×C) + (1×1).
    AddScalarVar { x: Var, s: Var },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize, end: usize },
    /// Column means over rows: (R×C) → (1×C).
    MeanRows(Var),
    /// Row sums over columns: (R×C) → (R×1).
    RowSums(Var),
    /// Grand total: (R×C) → (1×1).
    SumAll(Var),
    /// Orthogonal factor of the QR factorization of a square input;
    /// `r` caches the triangular factor for the backward pass.
    QrOrth { a: Var, r: Mat },
}

struct Node {
    value: Mat,
    op: Op,
}

/// Gradients of one scalar output with respect to every tape node.
/// Nodes the output does not depend on have no entry.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient for `v`, if the differentiated scalar depends on it.
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, or zeros of the given shape when absent.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Mat {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Mat::zeros(shape),
        }
    }
}

const GELU_C1: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_C2: f64 = 0.044_715;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Current value of a node.
    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Inserts a constant or parameter value.
    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::MulElem(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(v, Op::AddConst(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.value(a).ncols(),
            self.value(b).nrows(),
            "matmul inner dimension mismatch"
        );
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::Matmul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    /// Row-wise softmax with max subtraction for stability.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|e| (e - m).exp());
            let s = row.sum();
            row.mapv_inplace(|e| e / s);
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Row-wise standardization to zero mean / unit variance (no affine part;
    /// compose with [`Graph::mul_row`] and [`Graph::add_row`] for gain/bias).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let input = self.value(x);
        let (r, c) = input.dim();
        let mut out = Mat::zeros((r, c));
        let mut inv_std = Mat::zeros((r, 1));
        for i in 0..r {
            let row = input.row(i);
            let mean = row.sum() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[[i, 0]] = inv;
            for j in 0..c {
                out[[i, j]] = (input[[i, j]] - mean) * inv;
            }
        }
        self.push(out, Op::LayerNormRows { x, inv_std })
    }

    /// GELU with the tanh approximation (smooth everywhere, which keeps
    /// finite-difference gradient checks clean).
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| {
            let u = GELU_C1 * (x + GELU_C2 * x * x * x);
            0.5 * x * (1.0 + u.tanh())
        });
        self.push(v, Op::Gelu(a))
    }

    /// Parametric rectifier: identity for x ≥ 0, `slope[c]`·x otherwise.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Var {
        let s = self.value(slope);
        assert_eq!(s.nrows(), 1, "prelu slope must be a row vector");
        assert_eq!(s.ncols(), self.value(x).ncols(), "prelu slope width mismatch");
        let input = self.value(x);
        let mut v = input.clone();
        for ((_, j), e) in v.indexed_iter_mut() {
            if *e < 0.0 {
                *e *= s[[0, j]];
            }
        }
        self.push(v, Op::Prelu { x, slope })
    }

    pub fn clamp_min(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).mapv(|x| x.max(c));
        self.push(v, Op::ClampMin(a, c))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::ln);
        self.push(v, Op::Ln(a))
    }

    pub fn add_row(&mut self, x: Var, v: Var) -> Var {
        let row = self.value(v);
        assert_eq!(row.nrows(), 1, "add_row expects a 1×C row vector");
        assert_eq!(row.ncols(), self.value(x).ncols(), "add_row width mismatch");
        let out = self.value(x) + &row.broadcast(self.value(x).dim()).unwrap();
        self.push(out, Op::AddRowVec { x, v })
    }

    pub fn mul_row(&mut self, x: Var, v: Var) -> Var {
        let row = self.value(v);
        assert_eq!(row.nrows(), 1, "mul_row expects a 1×C row vector");
        assert_eq!(row.ncols(), self.value(x).ncols(), "mul_row width mismatch");
        let out = self.value(x) * &row.broadcast(self.value(x).dim()).unwrap();
        self.push(out, Op::MulRowVec { x, v })
    }

    pub fn add_scalar(&mut self, x: Var, s: Var) -> Var {
        assert_eq!(self.value(s).dim(), (1, 1), "add_scalar expects a 1×1 value");
        let out = self.value(x) + self.value(s)[[0, 0]];
        self.push(out, Op::AddScalarVar { x, s })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let c = self.value(parts[0]).ncols();
        let r: usize = parts.iter().map(|p| self.value(*p).nrows()).sum();
        let mut out = Mat::zeros((r, c));
        let mut at = 0;
        for p in parts {
            let v = self.value(*p);
            assert_eq!(v.ncols(), c, "concat_rows width mismatch");
            out.slice_mut(ndarray::s![at..at + v.nrows(), ..]).assign(v);
            at += v.nrows();
        }
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let r = self.value(parts[0]).nrows();
        let c: usize = parts.iter().map(|p| self.value(*p).ncols()).sum();
        let mut out = Mat::zeros((r, c));
        let mut at = 0;
        for p in parts {
            let v = self.value(*p);
            assert_eq!(v.nrows(), r, "concat_cols height mismatch");
            out.slice_mut(ndarray::s![.., at..at + v.ncols()]).assign(v);
            at += v.ncols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        assert!(start < end && end <= self.value(x).ncols(), "slice_cols out of range");
        let v = self.value(x).slice(ndarray::s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols { x, start, end })
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let r = self.value(x).nrows() as f64;
        let v = (self.value(x).sum_axis(Axis(0)) / r).insert_axis(Axis(0));
        self.push(v, Op::MeanRows(x))
    }

    pub fn row_sums(&mut self, x: Var) -> Var {
        let v = self.value(x).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::RowSums(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(x).sum());
        self.push(v, Op::SumAll(x))
    }

    /// Orthogonal factor Q of the QR factorization of a square input.
    /// The triangular factor never leaves the node; it is cached for the
    /// backward pass, which uses the adjoint
    /// `Ā = Q · tril(QᵀQ̄ − Q̄ᵀQ, −1) · R⁻ᵀ`.
    pub fn qr_orth(&mut self, a: Var) -> Var {
        let (q, r) = linalg::qr(self.value(a));
        self.push(q, Op::QrOrth { a, r })
    }

    // ── Compound helpers ────────────────────────────────────────────────────

    /// Affine map `x·w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    /// Layer normalization with learnable gain and bias.
    pub fn layer_norm_affine(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let xhat = self.layer_norm(x, eps);
        let scaled = self.mul_row(xhat, gain);
        self.add_row(scaled, bias)
    }

    /// Mean of all entries as a 1×1 scalar node.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = (self.value(x).nrows() * self.value(x).ncols()) as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    // ── Backward pass ───────────────────────────────────────────────────────

    /// Reverse-mode sweep from a 1×1 scalar node. Returns per-node gradients.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_elem((1, 1), 1.0));

        fn acc(grads: &mut [Option<Mat>], v: Var, delta: Mat) {
            match &mut grads[v.0] {
                Some(g) => *g += &delta,
                slot @ None => *slot = Some(delta),
            }
        }

        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, -&g);
                }
                Op::MulElem(a, b) => {
                    acc(&mut grads, *a, &g * self.value(*b));
                    acc(&mut grads, *b, &g * self.value(*a));
                }
                Op::Scale(a, c) => acc(&mut grads, *a, &g * *c),
                Op::AddConst(a) => acc(&mut grads, *a, g.clone()),
                Op::Matmul(a, b) => {
                    acc(&mut grads, *a, g.dot(&self.value(*b).t()));
                    acc(&mut grads, *b, self.value(*a).t().dot(&g));
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let gy = &g * y;
                    let row_dot = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let delta = &gy - &(y * &row_dot.broadcast(y.dim()).unwrap());
                    acc(&mut grads, *a, delta);
                }
                Op::LayerNormRows { x, inv_std } => {
                    let xhat = &node.value;
                    let (r, c) = xhat.dim();
                    let mut delta = Mat::zeros((r, c));
                    for i in 0..r {
                        let grow = g.row(i);
                        let hrow = xhat.row(i);
                        let mean_g = grow.sum() / c as f64;
                        let mean_gh =
                            grow.iter().zip(hrow.iter()).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        let inv = inv_std[[i, 0]];
                        for j in 0..c {
                            delta[[i, j]] =
                                inv * (grow[j] - mean_g - hrow[j] * mean_gh);
                        }
                    }
                    acc(&mut grads, *x, delta);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let delta = ndarray::Zip::from(&g).and(x).map_collect(|gv, &xv| {
                        let u = GELU_C1 * (xv + GELU_C2 * xv * xv * xv);
                        let t = u.tanh();
                        let du = GELU_C1 * (1.0 + 3.0 * GELU_C2 * xv * xv);
                        gv * (0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * du)
                    });
                    acc(&mut grads, *a, delta);
                }
                Op::Prelu { x, slope } => {
                    let xv = self.value(*x);
                    let sv = self.value(*slope);
                    let (r, c) = xv.dim();
                    let mut dx = Mat::zeros((r, c));
                    let mut ds = Mat::zeros((1, c));
                    for i in 0..r {
                        for j in 0..c {
                            if xv[[i, j]] >= 0.0 {
                                dx[[i, j]] = g[[i, j]];
                            } else {
                                dx[[i, j]] = g[[i, j]] * sv[[0, j]];
                                ds[[0, j]] += g[[i, j]] * xv[[i, j]];
                            }
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *slope, ds);
                }
                Op::ClampMin(a, c) => {
                    let x = self.value(*a);
                    let delta = ndarray::Zip::from(&g)
                        .and(x)
                        .map_collect(|gv, &xv| if xv > *c { *gv } else { 0.0 });
                    acc(&mut grads, *a, delta);
                }
                Op::Exp(a) => acc(&mut grads, *a, &g * &node.value),
                Op::Ln(a) => acc(&mut grads, *a, &g / self.value(*a)),
                Op::AddRowVec { x, v } => {
                    acc(&mut grads, *x, g.clone());
                    acc(&mut grads, *v, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::MulRowVec { x, v } => {
                    let row = self.value(*v);
                    let xv = self.value(*x);
                    acc(&mut grads, *x, &g * &row.broadcast(g.dim()).unwrap());
                    acc(
                        &mut grads,
                        *v,
                        (&g * xv).sum_axis(Axis(0)).insert_axis(Axis(0)),
                    );
                }
                Op::AddScalarVar { x, s } => {
                    acc(&mut grads, *x, g.clone());
                    acc(&mut grads, *s, Mat::from_elem((1, 1), g.sum()));
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let rows = self.value(*p).nrows();
                        let slice = g.slice(ndarray::s![at..at + rows, ..]).to_owned();
                        acc(&mut grads, *p, slice);
                        at += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let cols = self.value(*p).ncols();
                        let slice = g.slice(ndarray::s![.., at..at + cols]).to_owned();
                        acc(&mut grads, *p, slice);
                        at += cols;
                    }
                }
                Op::SliceCols { x, start, end } => {
                    let mut delta = Mat::zeros(self.value(*x).dim());
                    delta.slice_mut(ndarray::s![.., *start..*end]).assign(&g);
                    acc(&mut grads, *x, delta);
                }
                Op::MeanRows(x) => {
                    let r = self.value(*x).nrows();
                    let delta = g
                        .broadcast(self.value(*x).dim())
                        .unwrap()
                        .to_owned()
                        / r as f64;
                    acc(&mut grads, *x, delta);
                }
                Op::RowSums(x) => {
                    let delta = g.broadcast(self.value(*x).dim()).unwrap().to_owned();
                    acc(&mut grads, *x, delta);
                }
                Op::SumAll(x) => {
                    acc(&mut grads, *x, Mat::from_elem(self.value(*x).dim(), g[[0, 0]]));
                }
                Op::QrOrth { a, r } => {
                    let q = &node.value;
                    // B = QᵀQ̄; L = strictly lower triangle of (B − Bᵀ).
                    let b = q.t().dot(&g);
                    let n = b.nrows();
                    let mut l = Mat::zeros((n, n));
                    for i in 0..n {
                        for j in 0..i {
                            l[[i, j]] = b[[i, j]] - b[[j, i]];
                        }
                    }
                    // Ā = (Q·L)·R⁻ᵀ, via the triangular solve R·Āᵀ = (Q·L)ᵀ.
                    let w = q.dot(&l);
                    let at = linalg::solve_upper(r, &w.t().to_owned());
                    acc(&mut grads, *a, at.t().to_owned());
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }
}
