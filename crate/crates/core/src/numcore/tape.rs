//! Matrix-valued reverse-mode differentiation.
//!
//! A [`Tape`] is built once as a graph of primitive operations over named
//! inputs and constants, then evaluated with [`Tape::forward`] against a set
//! of [`Bindings`]. [`Tape::backward`] propagates adjoints from a scalar root
//! back to the named parameter inputs.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};

use super::{DenseMatrix, SparseAdjacency};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Named input values for a forward pass.
pub type Bindings = BTreeMap<String, DenseMatrix>;

#[derive(Clone, Debug)]
enum Op {
    Input(String),
    Const(DenseMatrix),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    SpMM(Arc<SparseAdjacency>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    PRelu(Var, f64),
    Sigmoid(Var),
    LogSigmoid(Var),
    Log(Var),
    Exp(Var),
    GatherRows(Var, Vec<usize>),
    MeanRows(Var),
    RowSum(Var),
    RowL2Normalize(Var, f64),
    ColStandardize(Var, f64),
    Frobenius(Var),
    HConcat(Var, Var),
    Sum(Var),
    Mean(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Const(_) => "const",
            Op::MatMul { .. } => "matmul",
            Op::SpMM(..) => "spmm",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Hadamard(..) => "hadamard",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::PRelu(..) => "prelu",
            Op::Sigmoid(_) => "sigmoid",
            Op::LogSigmoid(_) => "log_sigmoid",
            Op::Log(_) => "log",
            Op::Exp(_) => "exp",
            Op::GatherRows(..) => "gather_rows",
            Op::MeanRows(_) => "mean_rows",
            Op::RowSum(_) => "row_sum",
            Op::RowL2Normalize(..) => "row_l2_normalize",
            Op::ColStandardize(..) => "col_standardize",
            Op::Frobenius(_) => "frobenius",
            Op::HConcat(..) => "hconcat",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
        }
    }

    fn operands(&self) -> Vec<Var> {
        match self {
            Op::Input(_) | Op::Const(_) => vec![],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Hadamard(a, b) | Op::HConcat(a, b) => vec![*a, *b],
            Op::SpMM(_, a)
            | Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::PRelu(a, _)
            | Op::Sigmoid(a)
            | Op::LogSigmoid(a)
            | Op::Log(a)
            | Op::Exp(a)
            | Op::GatherRows(a, _)
            | Op::MeanRows(a)
            | Op::RowSum(a)
            | Op::RowL2Normalize(a, _)
            | Op::ColStandardize(a, _)
            | Op::Frobenius(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

/// Single-use computation graph; nodes are appended in topological order.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Option<DenseMatrix>>,
    root: Option<Var>,
    bound_shapes: BTreeMap<String, (usize, usize)>,
    prelu_fault: Option<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, op: Op) -> Var {
        self.ops.push(op);
        self.values.push(None);
        Var(self.ops.len() - 1)
    }

    /// Declares a named input. Declaring the same name twice returns the
    /// original node.
    pub fn input(&mut self, name: &str) -> Var {
        if let Some(i) = self
            .ops
            .iter()
            .position(|op| matches!(op, Op::Input(n) if n == name))
        {
            return Var(i);
        }
        self.push(Op::Input(name.to_owned()))
    }

    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(Op::Const(value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::MatMul { a, b, ta: false, tb: false })
    }

    /// `aᵀ · b`
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::MatMul { a, b, ta: true, tb: false })
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::MatMul { a, b, ta: false, tb: true })
    }

    pub fn spmm(&mut self, adj: Arc<SparseAdjacency>, x: Var) -> Var {
        self.push(Op::SpMM(adj, x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Sub(a, b))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Hadamard(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.push(Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.push(Op::AddScalar(a, s))
    }

    pub fn prelu(&mut self, a: Var, slope: f64) -> Var {
        self.push(Op::PRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.push(Op::Sigmoid(a))
    }

    /// `ln σ(a)`, evaluated without forming `σ(a)`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.push(Op::LogSigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.push(Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.push(Op::Exp(a))
    }

    pub fn gather_rows(&mut self, a: Var, rows: Vec<usize>) -> Var {
        self.push(Op::GatherRows(a, rows))
    }

    /// Column-wise mean, producing a `1 x d` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        self.push(Op::MeanRows(a))
    }

    /// Per-row sum, producing an `n x 1` column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        self.push(Op::RowSum(a))
    }

    /// Divides each row by `max(‖row‖, eps)`.
    pub fn row_l2_normalize(&mut self, a: Var, eps: f64) -> Var {
        self.push(Op::RowL2Normalize(a, eps))
    }

    /// Zero mean, unit variance per column: `(x - μ) / sqrt(var + eps)`,
    /// population variance.
    pub fn col_standardize(&mut self, a: Var, eps: f64) -> Var {
        self.push(Op::ColStandardize(a, eps))
    }

    pub fn frobenius(&mut self, a: Var) -> Var {
        self.push(Op::Frobenius(a))
    }

    pub fn hconcat(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::HConcat(a, b))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.push(Op::Mean(a))
    }

    /// Negative control for gradient checking: PReLU adjoints use `slope`
    /// on the negative branch instead of the forward slope.
    #[doc(hidden)]
    pub fn inject_prelu_fault(&mut self, slope: Option<f64>) {
        self.prelu_fault = slope;
    }

    /// Cached value of a node after [`forward`](Self::forward).
    pub fn value(&self, v: Var) -> Option<&DenseMatrix> {
        self.values.get(v.0).and_then(Option::as_ref)
    }

    fn val(&self, v: Var) -> &DenseMatrix {
        self.values[v.0]
            .as_ref()
            .expect("operand evaluated before use")
    }

    /// Evaluates every node up to and including `root`.
    pub fn forward(&mut self, root: Var, inputs: &Bindings) -> Result<DenseMatrix> {
        if root.0 >= self.ops.len() {
            return Err(Error::contract("root is not a node of this tape"));
        }
        self.bound_shapes = inputs
            .iter()
            .map(|(k, v)| (k.clone(), v.shape()))
            .collect();
        for i in 0..=root.0 {
            let value = self.eval_node(i, inputs)?;
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    op: self.ops[i].name(),
                });
            }
            self.values[i] = Some(value);
        }
        for v in &mut self.values[root.0 + 1..] {
            *v = None;
        }
        self.root = Some(root);
        Ok(self.val(root).clone())
    }

    fn eval_node(&self, i: usize, inputs: &Bindings) -> Result<DenseMatrix> {
        let op = &self.ops[i];
        let out = match op {
            Op::Input(name) => inputs
                .get(name)
                .cloned()
                .ok_or_else(|| Error::contract(format!("input `{name}` is not bound")))?,
            Op::Const(m) => m.clone(),
            Op::MatMul { a, b, ta, tb } => DenseMatrix::gemm(self.val(*a), *ta, self.val(*b), *tb)?,
            Op::SpMM(adj, a) => adj.spmm(self.val(*a))?,
            Op::Add(a, b) => self.val(*a).add(self.val(*b))?,
            Op::Sub(a, b) => self.val(*a).sub(self.val(*b))?,
            Op::Hadamard(a, b) => self.val(*a).hadamard(self.val(*b))?,
            Op::Scale(a, s) => self.val(*a).scale(*s),
            Op::AddScalar(a, s) => self.val(*a).map(|v| v + s),
            Op::PRelu(a, s) => self.val(*a).map(|v| if v > 0.0 { v } else { s * v }),
            Op::Sigmoid(a) => self.val(*a).map(sigmoid),
            Op::LogSigmoid(a) => self.val(*a).map(log_sigmoid),
            Op::Log(a) => self.val(*a).map(f64::ln),
            Op::Exp(a) => self.val(*a).map(f64::exp),
            Op::GatherRows(a, rows) => {
                let x = self.val(*a);
                if let Some(&bad) = rows.iter().find(|&&r| r >= x.rows()) {
                    return Err(Error::dim(
                        "gather_rows",
                        format!("row {bad} of a {}-row matrix", x.rows()),
                    ));
                }
                x.gather_rows(rows)
            }
            Op::MeanRows(a) => DenseMatrix::row_vector(&self.val(*a).col_means()),
            Op::RowSum(a) => {
                let x = self.val(*a);
                let sums: Vec<f64> = (0..x.rows()).map(|r| x.row(r).iter().sum()).collect();
                DenseMatrix::col_vector(&sums)
            }
            Op::RowL2Normalize(a, eps) => {
                let x = self.val(*a);
                let mut out = x.clone();
                for r in 0..x.rows() {
                    let n = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt().max(*eps);
                    out.row_mut(r).iter_mut().for_each(|v| *v /= n);
                }
                out
            }
            Op::ColStandardize(a, eps) => col_standardize(self.val(*a), *eps).0,
            Op::Frobenius(a) => DenseMatrix::scalar(self.val(*a).frobenius()),
            Op::HConcat(a, b) => self.val(*a).hconcat(self.val(*b))?,
            Op::Sum(a) => DenseMatrix::scalar(self.val(*a).sum()),
            Op::Mean(a) => {
                let x = self.val(*a);
                if x.is_empty() {
                    return Err(Error::dim("mean", "mean of an empty matrix"));
                }
                DenseMatrix::scalar(x.sum() / x.len() as f64)
            }
        };
        Ok(out)
    }

    /// Gradients of the scalar root with respect to the named inputs.
    /// Names bound at forward time but never used by the tape receive zeros.
    pub fn backward(&self, params: &[&str]) -> Result<BTreeMap<String, DenseMatrix>> {
        let root = self
            .root
            .ok_or_else(|| Error::contract("backward called before forward"))?;
        if self.val(root).shape() != (1, 1) {
            let (r, c) = self.val(root).shape();
            return Err(Error::contract(format!("backward needs a scalar root, got {r}x{c}")));
        }

        let n = root.0 + 1;
        let mut needs = vec![false; n];
        for i in 0..n {
            needs[i] = match &self.ops[i] {
                Op::Input(name) => params.contains(&name.as_str()),
                Op::Const(_) => false,
                op => op.operands().iter().any(|o| needs[o.0]),
            };
        }

        let mut adj: Vec<Option<DenseMatrix>> = vec![None; n];
        adj[root.0] = Some(DenseMatrix::scalar(1.0));
        for i in (0..n).rev() {
            if !needs[i] {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            if let Op::Input(_) = self.ops[i] {
                adj[i] = Some(g);
                continue;
            }
            for (var, contrib) in self.node_vjp(i, &g, &needs)? {
                match &mut adj[var.0] {
                    Some(acc) => acc.axpy(1.0, &contrib)?,
                    slot @ None => *slot = Some(contrib),
                }
            }
        }

        let mut out = BTreeMap::new();
        for &name in params {
            let node = self.ops[..n]
                .iter()
                .position(|op| matches!(op, Op::Input(nm) if nm == name));
            let grad = match node.and_then(|i| adj[i].clone()) {
                Some(g) => g,
                None => {
                    let (r, c) = *self.bound_shapes.get(name).ok_or_else(|| {
                        Error::contract(format!("parameter `{name}` was not bound"))
                    })?;
                    DenseMatrix::zeros(r, c)
                }
            };
            out.insert(name.to_owned(), grad);
        }
        Ok(out)
    }

    /// Vector-Jacobian products of node `i` for each operand needing a gradient.
    fn node_vjp(&self, i: usize, g: &DenseMatrix, needs: &[bool]) -> Result<Vec<(Var, DenseMatrix)>> {
        let mut out = Vec::with_capacity(2);
        let want = |v: &Var| needs[v.0];
        match &self.ops[i] {
            Op::Input(_) | Op::Const(_) => {}
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (self.val(*a), self.val(*b));
                if want(a) {
                    let da = match (ta, tb) {
                        (false, false) => DenseMatrix::gemm(g, false, bv, true)?,
                        (true, false) => DenseMatrix::gemm(bv, false, g, true)?,
                        (false, true) => DenseMatrix::gemm(g, false, bv, false)?,
                        (true, true) => DenseMatrix::gemm(bv, true, g, true)?,
                    };
                    out.push((*a, da));
                }
                if want(b) {
                    let db = match (ta, tb) {
                        (false, false) => DenseMatrix::gemm(av, true, g, false)?,
                        (true, false) => DenseMatrix::gemm(av, false, g, false)?,
                        (false, true) => DenseMatrix::gemm(g, true, av, false)?,
                        (true, true) => DenseMatrix::gemm(g, true, av, true)?,
                    };
                    out.push((*b, db));
                }
            }
            Op::SpMM(adjm, a) => out.push((*a, adjm.spmm_transpose(g)?)),
            Op::Add(a, b) => {
                if want(a) {
                    out.push((*a, g.clone()));
                }
                if want(b) {
                    out.push((*b, g.clone()));
                }
            }
            Op::Sub(a, b) => {
                if want(a) {
                    out.push((*a, g.clone()));
                }
                if want(b) {
                    out.push((*b, g.scale(-1.0)));
                }
            }
            Op::Hadamard(a, b) => {
                if want(a) {
                    out.push((*a, g.hadamard(self.val(*b))?));
                }
                if want(b) {
                    out.push((*b, g.hadamard(self.val(*a))?));
                }
            }
            Op::Scale(a, s) => out.push((*a, g.scale(*s))),
            Op::AddScalar(a, _) => out.push((*a, g.clone())),
            Op::PRelu(a, s) => {
                let slope = self.prelu_fault.unwrap_or(*s);
                out.push((
                    *a,
                    self.val(*a)
                        .zip_with(g, "prelu", |x, gi| if x > 0.0 { gi } else { slope * gi })?,
                ));
            }
            Op::Sigmoid(a) => {
                let y = self.val(Var(i));
                out.push((*a, y.zip_with(g, "sigmoid", |s, gi| gi * s * (1.0 - s))?));
            }
            Op::LogSigmoid(a) => {
                out.push((
                    *a,
                    self.val(*a).zip_with(g, "log_sigmoid", |x, gi| gi * sigmoid(-x))?,
                ));
            }
            Op::Log(a) => out.push((*a, self.val(*a).zip_with(g, "log", |x, gi| gi / x)?)),
            Op::Exp(a) => out.push((*a, self.val(Var(i)).zip_with(g, "exp", |y, gi| gi * y)?)),
            Op::GatherRows(a, rows) => {
                let x = self.val(*a);
                let mut d = DenseMatrix::zeros(x.rows(), x.cols());
                for (o, &r) in rows.iter().enumerate() {
                    for (dst, &src) in d.row_mut(r).iter_mut().zip(g.row(o)) {
                        *dst += src;
                    }
                }
                out.push((*a, d));
            }
            Op::MeanRows(a) => {
                let x = self.val(*a);
                let inv = 1.0 / x.rows() as f64;
                let mut d = DenseMatrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    for (dst, &src) in d.row_mut(r).iter_mut().zip(g.row(0)) {
                        *dst = src * inv;
                    }
                }
                out.push((*a, d));
            }
            Op::RowSum(a) => {
                let x = self.val(*a);
                let mut d = DenseMatrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let gr = g.get(r, 0);
                    d.row_mut(r).iter_mut().for_each(|v| *v = gr);
                }
                out.push((*a, d));
            }
            Op::RowL2Normalize(a, eps) => {
                let x = self.val(*a);
                let y = self.val(Var(i));
                let mut d = DenseMatrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                    let gr = g.row(r);
                    if norm > *eps {
                        let yg: f64 = y.row(r).iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((dst, &yv), &gv) in d.row_mut(r).iter_mut().zip(y.row(r)).zip(gr) {
                            *dst = (gv - yv * yg) / norm;
                        }
                    } else {
                        for (dst, &gv) in d.row_mut(r).iter_mut().zip(gr) {
                            *dst = gv / eps;
                        }
                    }
                }
                out.push((*a, d));
            }
            Op::ColStandardize(a, eps) => {
                let x = self.val(*a);
                let (y, inv_std) = col_standardize(x, *eps);
                let (n, c) = x.shape();
                let nf = n as f64;
                let mut mean_g = vec![0.0; c];
                let mut mean_gy = vec![0.0; c];
                for r in 0..n {
                    for j in 0..c {
                        mean_g[j] += g.get(r, j) / nf;
                        mean_gy[j] += g.get(r, j) * y.get(r, j) / nf;
                    }
                }
                let mut d = DenseMatrix::zeros(n, c);
                for r in 0..n {
                    for j in 0..c {
                        d.set(
                            r,
                            j,
                            inv_std[j] * (g.get(r, j) - mean_g[j] - y.get(r, j) * mean_gy[j]),
                        );
                    }
                }
                out.push((*a, d));
            }
            Op::Frobenius(a) => {
                let x = self.val(*a);
                let norm = self.val(Var(i)).as_slice()[0];
                let gs = g.as_slice()[0];
                let d = if norm > 0.0 {
                    x.scale(gs / norm)
                } else {
                    DenseMatrix::zeros(x.rows(), x.cols())
                };
                out.push((*a, d));
            }
            Op::HConcat(a, b) => {
                let ca = self.val(*a).cols();
                let cb = self.val(*b).cols();
                let rows = g.rows();
                if want(a) {
                    let mut d = DenseMatrix::zeros(rows, ca);
                    for r in 0..rows {
                        d.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    }
                    out.push((*a, d));
                }
                if want(b) {
                    let mut d = DenseMatrix::zeros(rows, cb);
                    for r in 0..rows {
                        d.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                    }
                    out.push((*b, d));
                }
            }
            Op::Sum(a) => {
                let x = self.val(*a);
                out.push((*a, DenseMatrix::filled(x.rows(), x.cols(), g.as_slice()[0])));
            }
            Op::Mean(a) => {
                let x = self.val(*a);
                let v = g.as_slice()[0] / x.len() as f64;
                out.push((*a, DenseMatrix::filled(x.rows(), x.cols(), v)));
            }
        }
        out.retain(|(v, _)| needs[v.0]);
        Ok(out)
    }
}

/// Returns the standardized matrix and the per-column `1 / sqrt(var + eps)`.
fn col_standardize(x: &DenseMatrix, eps: f64) -> (DenseMatrix, Vec<f64>) {
    let (n, c) = x.shape();
    let means = x.col_means();
    let mut var = vec![0.0; c];
    for r in 0..n {
        for (j, v) in x.row(r).iter().enumerate() {
            let d = v - means[j];
            var[j] += d * d;
        }
    }
    let nf = n.max(1) as f64;
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v / nf + eps).sqrt()).collect();
    let mut out = x.clone();
    for r in 0..n {
        for (j, v) in out.row_mut(r).iter_mut().enumerate() {
            *v = (*v - means[j]) * inv_std[j];
        }
    }
    (out, inv_std)
}

/// Maximum over the entries of `param` of
/// `|analytic - central| / max(1, |central|)` for the scalar root.
pub fn finite_diff_check(
    tape: &mut Tape,
    root: Var,
    inputs: &Bindings,
    param: &str,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    tape.forward(root, inputs)?;
    let analytic = tape.backward(&[param])?.remove(param).expect("requested parameter");
    let mut perturbed = inputs.clone();
    let count = perturbed
        .get(param)
        .ok_or_else(|| Error::contract(format!("parameter `{param}` was not bound")))?
        .len();
    let mut worst = 0.0f64;
    for k in 0..count {
        let orig = inputs[param].as_slice()[k];
        perturbed.get_mut(param).unwrap().as_mut_slice()[k] = orig + h;
        let plus = scalar_root(tape.forward(root, &perturbed)?)?;
        perturbed.get_mut(param).unwrap().as_mut_slice()[k] = orig - h;
        let minus = scalar_root(tape.forward(root, &perturbed)?)?;
        perturbed.get_mut(param).unwrap().as_mut_slice()[k] = orig;
        let central = (plus - minus) / (2.0 * h);
        let err = (analytic.as_slice()[k] - central).abs() / central.abs().max(1.0);
        worst = worst.max(err);
    }
    // leave the tape holding the unperturbed evaluation
    tape.forward(root, inputs)?;
    Ok(worst)
}

fn scalar_root(m: DenseMatrix) -> Result<f64> {
    m.to_scalar()
        .ok_or_else(|| Error::contract("finite-difference check needs a scalar root"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bind(pairs: &[(&str, DenseMatrix)]) -> Bindings {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        DenseMatrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .unwrap()
    }

    #[test]
    fn dot_product() {
        let mut t = Tape::new();
        let x = t.input("x");
        let y = t.input("y");
        let r = t.matmul_nt(x, y);
        let v = t
            .forward(r, &bind(&[("x", DenseMatrix::row_vector(&[1.0, 2.0])), ("y", DenseMatrix::row_vector(&[3.0, 4.0]))]))
            .unwrap();
        assert_eq!(v.to_scalar(), Some(11.0));
    }

    #[test]
    fn prelu_and_sigmoid_values() {
        let mut t = Tape::new();
        let z = t.input("z");
        let p = t.prelu(z, 0.25);
        let v = t.forward(p, &bind(&[("z", DenseMatrix::row_vector(&[-4.0, 2.0]))])).unwrap();
        assert_eq!(v.as_slice(), &[-1.0, 2.0]);

        let mut t = Tape::new();
        let c = t.constant(DenseMatrix::scalar(0.0));
        let s = t.sigmoid(c);
        assert_eq!(t.forward(s, &Bindings::new()).unwrap().to_scalar(), Some(0.5));
    }

    #[test]
    fn quadratic_and_sigmoid_gradients() {
        let mut t = Tape::new();
        let x = t.input("x");
        let q = t.matmul_tn(x, x);
        t.forward(q, &bind(&[("x", DenseMatrix::col_vector(&[1.0, 2.0, 3.0]))])).unwrap();
        let g = t.backward(&["x"]).unwrap();
        assert_eq!(g["x"].as_slice(), &[2.0, 4.0, 6.0]);

        let mut t = Tape::new();
        let x = t.input("x");
        let s = t.sigmoid(x);
        let r = t.sum(s);
        t.forward(r, &bind(&[("x", DenseMatrix::row_vector(&[0.0]))])).unwrap();
        assert_eq!(t.backward(&["x"]).unwrap()["x"].as_slice(), &[0.25]);
    }

    #[test]
    fn untouched_parameter_gets_zero_gradient_and_non_scalar_root_is_rejected() {
        let mut t = Tape::new();
        let x = t.input("x");
        let s = t.sum(x);
        let inputs = bind(&[("x", DenseMatrix::zeros(2, 2)), ("w", DenseMatrix::filled(3, 1, 1.0))]);
        t.forward(s, &inputs).unwrap();
        let g = t.backward(&["x", "w"]).unwrap();
        assert_eq!(g["w"], DenseMatrix::zeros(3, 1));
        assert_eq!(g["x"], DenseMatrix::filled(2, 2, 1.0));

        let mut t = Tape::new();
        let x = t.input("x");
        let e = t.exp(x);
        t.forward(e, &inputs).unwrap();
        assert!(matches!(t.backward(&["x"]), Err(Error::Contract(_))));
    }

    #[test]
    fn errors_name_the_primitive() {
        let mut t = Tape::new();
        let x = t.input("x");
        let l = t.log(x);
        let err = t.forward(l, &bind(&[("x", DenseMatrix::row_vector(&[-1.0]))])).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "log" }));

        let mut t = Tape::new();
        let a = t.input("a");
        let m = t.matmul(a, a);
        let err = t.forward(m, &bind(&[("a", DenseMatrix::zeros(2, 3))])).unwrap_err();
        assert!(matches!(err, Error::Dimension { op: "matmul", .. }));
    }

    #[test]
    fn linear_tape_is_exact_under_finite_differences() {
        let mut t = Tape::new();
        let w = t.input("w");
        let x = t.constant(DenseMatrix::col_vector(&[0.3, -1.2, 2.5]));
        let r = t.matmul_tn(w, x);
        let inputs = bind(&[("w", DenseMatrix::col_vector(&[1.0, 0.5, -0.25]))]);
        let err = finite_diff_check(&mut t, r, &inputs, "w", 1e-5).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    /// Every primitive, each used in a scalar-valued composite, checked against
    /// central differences on random inputs in [-2, 2].
    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..10 {
            let a = random(5, 4, &mut rng);
            let b = random(4, 3, &mut rng);
            let c = random(5, 3, &mut rng);
            let adj = {
                let edges = vec![(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)];
                Arc::new(SparseAdjacency::from_undirected_edges(5, &edges).unwrap().sym_normalized_with_self_loops())
            };
            let inputs = bind(&[("a", a), ("b", b), ("c", c)]);
            let builders: Vec<(&str, Box<dyn Fn(&mut Tape) -> Var>)> = vec![
                ("matmul", Box::new(|t: &mut Tape| { let (a, b) = (t.input("a"), t.input("b")); let m = t.matmul(a, b); let s = t.sigmoid(m); t.sum(s) })),
                ("matmul_tn", Box::new(|t: &mut Tape| { let (a, c) = (t.input("a"), t.input("c")); let m = t.matmul_tn(a, c); let e = t.hadamard(m, m); t.sum(e) })),
                ("matmul_nt", Box::new(|t: &mut Tape| { let (c, b) = (t.input("c"), t.input("b")); let m = t.matmul_nt(c, b); let e = t.exp(m); t.mean(e) })),
                ("spmm", Box::new(move |t: &mut Tape| { let a = t.input("a"); let m = t.spmm(adj.clone(), a); let p = t.prelu(m, 0.25); let h = t.hadamard(p, m); t.sum(h) })),
                ("add_sub_scale", Box::new(|t: &mut Tape| { let (a, c) = (t.input("a"), t.input("c")); let b = t.input("b"); let ab = t.matmul(a, b); let s = t.sub(ab, c); let d = t.add(s, c); let k = t.scale(d, -0.7); let k2 = t.add_scalar(k, 3.0); let l = t.hadamard(k2, s); t.sum(l) })),
                ("log_exp_logsig", Box::new(|t: &mut Tape| { let a = t.input("a"); let e = t.exp(a); let p = t.add_scalar(e, 1.0); let l = t.log(p); let ls = t.log_sigmoid(a); let s = t.add(l, ls); let h = t.hadamard(s, a); t.sum(h) })),
                ("gather_mean_rowsum", Box::new(|t: &mut Tape| { let a = t.input("a"); let g = t.gather_rows(a, vec![4, 0, 0, 2]); let m = t.mean_rows(a); let mg = t.gather_rows(m, vec![0, 0, 0, 0]); let c = t.hconcat(g, mg); let sq = t.hadamard(c, c); let rs = t.row_sum(sq); let l = t.log(rs); t.sum(l) })),
                ("normalize", Box::new(|t: &mut Tape| { let (a, b) = (t.input("a"), t.input("b")); let m = t.matmul(a, b); let n = t.row_l2_normalize(m, 1e-8); let s = t.matmul_nt(n, n); let e = t.scale(s, 3.0); let x = t.exp(e); t.sum(x) })),
                ("standardize_frobenius", Box::new(|t: &mut Tape| { let (a, c) = (t.input("a"), t.input("c")); let z = t.col_standardize(a, 1e-8); let zc = t.matmul_tn(z, c); let f = t.frobenius(zc); let zz = t.col_standardize(c, 1e-8); let f2 = t.frobenius(zz); let q = t.hadamard(f, f2); t.sum(q) })),
            ];
            for (name, build) in &builders {
                let mut t = Tape::new();
                let root = build(&mut t);
                for p in ["a", "b", "c"] {
                    let err = finite_diff_check(&mut t, root, &inputs, p, 1e-5).unwrap();
                    assert!(err < 1e-4, "trial {trial} {name} wrt {p}: {err}");
                }
            }
        }
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs = bind(&[("a", random(30, 20, &mut rng)), ("b", random(20, 10, &mut rng))]);
        let run = || {
            let mut t = Tape::new();
            let (a, b) = (t.input("a"), t.input("b"));
            let m = t.matmul(a, b);
            let n = t.row_l2_normalize(m, 1e-8);
            let s = t.matmul_nt(n, n);
            let r = t.sum(s);
            t.forward(r, &inputs).unwrap();
            t.backward(&["a", "b"]).unwrap()
        };
        let (x, y) = (run(), run());
        for k in ["a", "b"] {
            let bx: Vec<u64> = x[k].as_slice().iter().map(|v| v.to_bits()).collect();
            let by: Vec<u64> = y[k].as_slice().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bx, by);
        }
    }

    #[test]
    fn injected_fault_is_detected() {
        let mut t = Tape::new();
        let a = t.input("a");
        let p = t.prelu(a, 0.25);
        let r = t.sum(p);
        let inputs = bind(&[("a", DenseMatrix::row_vector(&[-1.0, 0.5, -0.3]))]);
        assert!(finite_diff_check(&mut t, r, &inputs, "a", 1e-5).unwrap() < 1e-9);
        t.inject_prelu_fault(Some(0.6));
        assert!(finite_diff_check(&mut t, r, &inputs, "a", 1e-5).unwrap() > 0.1);
    }
}
