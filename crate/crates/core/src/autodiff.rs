//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records a straight-line program of matrix operations; calling
//! [`Tape::backward_params`] on a scalar output accumulates exact
//! reverse-mode gradients into a flat parameter vector. The op set is
//! deliberately small: exactly what the reconstruction, invariance, and
//! contrastive objectives need. Every adjoint rule here is covered by
//! central-difference checks in the test suite.
//!
//! Scalars are represented as 1x1 matrices. Nodes are write-once; `Var` is a
//! cheap copyable handle into the tape.

use ndarray::{Array1, Array2};

use crate::error::{Result, SmileError};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Smallest row norm `row_normalize` accepts before reporting a degenerate
/// (effectively zero) vector.
pub const MIN_ROW_NORM: f64 = 1e-30;

enum Op {
    /// Input with no gradient sink.
    Leaf { name: String },
    /// Input whose adjoint is scattered into the flat gradient vector at
    /// `offset`.
    Param { offset: usize, name: String },
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    /// Row-broadcast bias add: (n x m) + (1 x m).
    AddBias { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    /// Elementwise product.
    Mul { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    LeakyRelu { a: Var, slope: f64 },
    /// Rows rescaled to unit Euclidean norm.
    RowNormalize { a: Var },
    /// Row-wise softmax with max subtraction.
    SoftmaxRows { a: Var },
    /// Row-wise log-sum-exp, (n x m) -> (n x 1).
    LogSumExpRows { a: Var },
    /// y[r, 0] = x[r, idx[r]].
    PickPerRow { a: Var, idx: Vec<usize> },
    /// ln(max(x, floor)); the adjoint is zero below the floor.
    LnClamped { a: Var, floor: f64 },
    /// Sum of all entries, -> (1 x 1).
    SumAll { a: Var },
    /// Column means, (n x m) -> (1 x m).
    MeanRows { a: Var },
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Param { .. } => "param",
            Op::MatMul { .. } => "matmul",
            Op::AddBias { .. } => "add_bias",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::RowNormalize { .. } => "row_normalize",
            Op::SoftmaxRows { .. } => "softmax_rows",
            Op::LogSumExpRows { .. } => "logsumexp_rows",
            Op::PickPerRow { .. } => "pick_per_row",
            Op::LnClamped { .. } => "ln",
            Op::SumAll { .. } => "sum",
            Op::MeanRows { .. } => "mean_rows",
        }
    }
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Extract a 1x1 node as a plain scalar.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "scalar() on a non-1x1 node");
        m[(0, 0)]
    }

    /// Human-readable identity of a node, for numeric failure reports.
    pub fn describe(&self, v: Var) -> String {
        match &self.nodes[v.0].op {
            Op::Leaf { name } | Op::Param { name, .. } => name.clone(),
            op => format!("{} (node {})", op.kind(), v.0),
        }
    }

    /// First node holding a non-finite entry, if any.
    pub fn find_non_finite(&self) -> Option<Var> {
        self.nodes
            .iter()
            .position(|n| !n.value.iter().all(|x| x.is_finite()))
            .map(Var)
    }

    pub fn constant(&mut self, value: Array2<f64>, name: impl Into<String>) -> Var {
        self.push(value, Op::Leaf { name: name.into() })
    }

    pub fn param(&mut self, value: Array2<f64>, offset: usize, name: impl Into<String>) -> Var {
        self.push(value, Op::Param { offset, name: name.into() })
    }

    fn binary_dims(&self, a: Var, b: Var) -> (usize, usize) {
        let (da, db) = (self.value(a).dim(), self.value(b).dim());
        assert_eq!(da, db, "elementwise op on mismatched shapes");
        da
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_dims(a, b);
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_dims(a, b);
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_dims(a, b);
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul { a, b })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale { a, c })
    }

    fn matmul_flags(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let av = self.value(a).view();
        let bv = self.value(b).view();
        let av = if ta { av.reversed_axes() } else { av };
        let bv = if tb { bv.reversed_axes() } else { bv };
        assert_eq!(av.ncols(), bv.nrows(), "matmul inner dims disagree");
        let v = av.dot(&bv);
        self.push(v, Op::MatMul { a, b, ta, tb })
    }

    /// A . B
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_flags(a, b, false, false)
    }

    /// A . B^T
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        self.matmul_flags(a, b, false, true)
    }

    /// A^T . B
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Var {
        self.matmul_flags(a, b, true, false)
    }

    /// A^T . B^T
    pub fn matmul_tt(&mut self, a: Var, b: Var) -> Var {
        self.matmul_flags(a, b, true, true)
    }

    pub fn add_bias(&mut self, a: Var, b: Var) -> Var {
        let (n, m) = self.value(a).dim();
        assert_eq!(self.value(b).dim(), (1, m), "bias shape must be 1 x cols");
        let mut v = self.value(a).clone();
        let bias = self.value(b).row(0).to_owned();
        for mut row in v.rows_mut() {
            row += &bias;
        }
        let _ = n;
        self.push(v, Op::AddBias { a, b })
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu { a, slope })
    }

    /// Rescale every row to unit norm; degenerate rows are a numeric error.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut v = x.clone();
        for (r, mut row) in v.rows_mut().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if norm < MIN_ROW_NORM {
                return Err(SmileError::numeric(format!(
                    "cannot normalize zero-norm row {r} of {}",
                    self.describe(a)
                )));
            }
            row /= norm;
        }
        Ok(self.push(v, Op::RowNormalize { a }))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let s: f64 = row.sum();
            row /= s;
        }
        self.push(v, Op::SoftmaxRows { a })
    }

    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = Array2::zeros((x.nrows(), 1));
        for (r, row) in x.rows().into_iter().enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|&x| (x - max).exp()).sum();
            v[(r, 0)] = max + s.ln();
        }
        self.push(v, Op::LogSumExpRows { a })
    }

    pub fn pick_per_row(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let x = self.value(a);
        assert_eq!(idx.len(), x.nrows(), "one picked column per row");
        let mut v = Array2::zeros((x.nrows(), 1));
        for (r, &j) in idx.iter().enumerate() {
            assert!(j < x.ncols(), "picked column out of range");
            v[(r, 0)] = x[(r, j)];
        }
        self.push(v, Op::PickPerRow { a, idx })
    }

    pub fn ln_clamped(&mut self, a: Var, floor: f64) -> Var {
        assert!(floor > 0.0, "ln floor must be positive");
        let v = self.value(a).mapv(|x| x.max(floor).ln());
        self.push(v, Op::LnClamped { a, floor })
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), s), Op::SumAll { a })
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        assert!(x.nrows() > 0, "mean_rows over zero rows");
        let mean = x.mean_axis(ndarray::Axis(0)).expect("nonempty");
        let v = mean.insert_axis(ndarray::Axis(0));
        self.push(v, Op::MeanRows { a })
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let len = self.value(a).len();
        assert!(len > 0, "mean_all over an empty matrix");
        let s = self.sum_all(a);
        self.scale(s, 1.0 / len as f64)
    }

    /// Reverse sweep from a scalar node, accumulating parameter adjoints
    /// into `grad_out` (indexed by each `param` node's offset).
    pub fn backward_params(&self, loss: Var, grad_out: &mut [f64]) -> Result<()> {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward from a non-scalar");
        let mut grads: Vec<Option<Array2<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));

        for id in (0..=loss.0).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[id].op {
                Op::Leaf { .. } => {}
                Op::Param { offset, name } => {
                    let len = g.len();
                    if offset + len > grad_out.len() {
                        return Err(SmileError::invariant(format!(
                            "parameter {name} does not fit the gradient vector"
                        )));
                    }
                    for (dst, src) in grad_out[*offset..offset + len].iter_mut().zip(g.iter()) {
                        *dst += src;
                    }
                }
                Op::MatMul { a, b, ta, tb } => {
                    let av = self.value(*a).view();
                    let bv = self.value(*b).view();
                    let (da, db) = match (ta, tb) {
                        (false, false) => (g.dot(&bv.t()), av.t().dot(&g)),
                        (true, false) => (bv.dot(&g.t()), av.dot(&g)),
                        (false, true) => (g.dot(&bv), g.t().dot(&av)),
                        (true, true) => (bv.t().dot(&g.t()), g.t().dot(&av.t())),
                    };
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::AddBias { a, b } => {
                    let db = g
                        .sum_axis(ndarray::Axis(0))
                        .insert_axis(ndarray::Axis(0));
                    acc(&mut grads, *b, db);
                    acc(&mut grads, *a, g);
                }
                Op::Add { a, b } => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub { a, b } => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::Mul { a, b } => {
                    acc(&mut grads, *a, &g * self.value(*b));
                    acc(&mut grads, *b, &g * self.value(*a));
                }
                Op::Scale { a, c } => acc(&mut grads, *a, &g * *c),
                Op::LeakyRelu { a, slope } => {
                    let x = self.value(*a);
                    let mut da = g;
                    da.zip_mut_with(x, |gi, &xi| {
                        if xi <= 0.0 {
                            *gi *= slope;
                        }
                    });
                    acc(&mut grads, *a, da);
                }
                Op::RowNormalize { a } => {
                    // y = x / |x|; dx = (g - (g . y) y) / |x|
                    let x = self.value(*a);
                    let y = &self.nodes[id].value;
                    let mut da = g;
                    for (r, mut grow) in da.rows_mut().into_iter().enumerate() {
                        let xr = x.row(r);
                        let yr = y.row(r);
                        let norm = xr.dot(&xr).sqrt();
                        let dot = grow.dot(&yr);
                        grow.zip_mut_with(&yr, |gi, &yi| *gi = (*gi - dot * yi) / norm);
                    }
                    acc(&mut grads, *a, da);
                }
                Op::SoftmaxRows { a } => {
                    // dx = y * (g - (g . y))
                    let y = &self.nodes[id].value;
                    let mut da = g;
                    for (r, mut grow) in da.rows_mut().into_iter().enumerate() {
                        let yr = y.row(r);
                        let dot = grow.dot(&yr);
                        grow.zip_mut_with(&yr, |gi, &yi| *gi = yi * (*gi - dot));
                    }
                    acc(&mut grads, *a, da);
                }
                Op::LogSumExpRows { a } => {
                    // dx[r, j] = softmax(x_r)[j] * g[r] = exp(x - lse) * g[r]
                    let x = self.value(*a);
                    let y = &self.nodes[id].value;
                    let mut da = Array2::zeros(x.dim());
                    for (r, mut drow) in da.rows_mut().into_iter().enumerate() {
                        let lse = y[(r, 0)];
                        let gr = g[(r, 0)];
                        drow.zip_mut_with(&x.row(r), |di, &xi| *di = (xi - lse).exp() * gr);
                    }
                    acc(&mut grads, *a, da);
                }
                Op::PickPerRow { a, idx } => {
                    let mut da = Array2::zeros(self.value(*a).dim());
                    for (r, &j) in idx.iter().enumerate() {
                        da[(r, j)] += g[(r, 0)];
                    }
                    acc(&mut grads, *a, da);
                }
                Op::LnClamped { a, floor } => {
                    let x = self.value(*a);
                    let mut da = g;
                    da.zip_mut_with(x, |gi, &xi| {
                        *gi = if xi > *floor { *gi / xi } else { 0.0 };
                    });
                    acc(&mut grads, *a, da);
                }
                Op::SumAll { a } => {
                    let da = Array2::from_elem(self.value(*a).dim(), g[(0, 0)]);
                    acc(&mut grads, *a, da);
                }
                Op::MeanRows { a } => {
                    let (n, _) = self.value(*a).dim();
                    let grow: Array1<f64> = g.row(0).mapv(|x| x / n as f64);
                    let mut da = Array2::zeros(self.value(*a).dim());
                    for mut row in da.rows_mut() {
                        row += &grow;
                    }
                    acc(&mut grads, *a, da);
                }
            }
        }
        Ok(())
    }
}

fn acc(grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
    match &mut grads[v.0] {
        Some(g) => *g += &delta,
        slot => *slot = Some(delta),
    }
}
