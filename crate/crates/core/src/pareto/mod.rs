//! Minimum-norm point in the convex hull of task gradients.
//!
//! All solvers work on the Gram matrix `M = GGᵀ`, so the cost per iteration
//! is `O(K²)` once `M` is formed.

mod oracle;
mod polish;

use serde::Serialize;

pub use oracle::{brute_force_min_norm, smoothness_and_gap, smoothness_constant, GapReport};

use crate::encoder::FlatGradient;
use crate::error::{Error, Result};

/// Stacked shared-parameter gradients, one row per task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskGradientMatrix {
    rows: Vec<FlatGradient>,
}

impl TaskGradientMatrix {
    pub fn new(rows: Vec<FlatGradient>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::contract("gradient matrix needs at least one task"));
        }
        let p = rows[0].len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::contract("task gradients have different lengths"));
        }
        if rows.iter().any(|r| !r.as_slice().iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite { op: "task gradient" });
        }
        Ok(Self { rows })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows.into_iter().map(FlatGradient::new).collect())
    }

    pub fn tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn params(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, k: usize) -> &FlatGradient {
        &self.rows[k]
    }

    pub fn rows(&self) -> &[FlatGradient] {
        &self.rows
    }

    /// `GGᵀ` as a dense K×K array.
    pub fn gram(&self) -> Vec<Vec<f64>> {
        let k = self.tasks();
        let mut m = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in i..k {
                let d = self.rows[i].dot(&self.rows[j]);
                m[i][j] = d;
                m[j][i] = d;
            }
        }
        m
    }

    /// Rows scaled to unit L2 norm; zero rows are left alone.
    pub fn normalized(&self) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let n = r.norm();
                if n > 0.0 {
                    FlatGradient::new(r.as_slice().iter().map(|v| v / n).collect())
                } else {
                    r.clone()
                }
            })
            .collect();
        Self { rows }
    }
}

/// A point of the probability simplex.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::contract("empty weight vector"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::contract(format!("weights {weights:?} leave the simplex")));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::contract(format!("weights sum to {s}, not 1")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn one_hot(k: usize, at: usize) -> Self {
        let mut w = vec![0.0; k];
        w[at] = 1.0;
        Self(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Termination {
    /// A single task: nothing to solve.
    SingleTask,
    /// Two tasks: exact closed form.
    ClosedForm,
    StepBelowThreshold,
    IterationCap,
    /// The combined direction coincided with the chosen vertex.
    ZeroDirection,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SolverStep {
    /// Vertex moved toward.
    pub task: usize,
    pub step: f64,
    /// `‖αG‖²` after the step.
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverTrace {
    pub initial_objective: f64,
    pub final_objective: f64,
    /// Frank-Wolfe iterations only; the exact support correction, if it
    /// ran, shows up in `final_objective` and `polished`.
    pub steps: Vec<SolverStep>,
    pub termination: Termination,
    pub polished: bool,
}

impl SolverTrace {
    pub fn iterations(&self) -> usize {
        self.steps.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub threshold: f64,
    pub normalize_gradients: bool,
    /// Finish Frank-Wolfe with the exact support correction.
    pub polish: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            threshold: 1e-5,
            normalize_gradients: false,
            polish: true,
        }
    }
}

fn gram_apply(m: &[Vec<f64>], a: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(a).map(|(x, y)| x * y).sum()).collect()
}

fn quad(m: &[Vec<f64>], a: &[f64]) -> f64 {
    gram_apply(m, a).iter().zip(a).map(|(x, y)| x * y).sum()
}

/// `‖αG‖²`, evaluated through the Gram matrix.
pub fn objective(g: &TaskGradientMatrix, alpha: &SimplexWeights) -> f64 {
    quad(&g.gram(), alpha.as_slice())
}

/// Exact minimizer over the segment between two gradients.
pub fn solve_two_task(g1: &FlatGradient, g2: &FlatGradient) -> SimplexWeights {
    let d11 = g1.dot(g1);
    let d12 = g1.dot(g2);
    let d22 = g2.dot(g2);
    two_task_gram(d11, d12, d22)
}

fn two_task_gram(d11: f64, d12: f64, d22: f64) -> SimplexWeights {
    // ‖g2 − g1‖² and g2·(g2 − g1)
    let denom = d11 - 2.0 * d12 + d22;
    if denom <= 0.0 {
        return SimplexWeights(vec![0.5, 0.5]);
    }
    let a1 = ((d22 - d12) / denom).clamp(0.0, 1.0);
    SimplexWeights(vec![a1, 1.0 - a1])
}

/// Frank-Wolfe from the uniform point, then an exact active-set correction
/// on the reached support.
///
/// Plain Frank-Wolfe zigzags when the optimum lies on a face of the simplex
/// and its `η < ξ` stop leaves a residual of order `ξ·‖αG − g_t‖²`. The
/// correction is kept only when it does not increase `‖αG‖²`.
pub fn frank_wolfe_min_norm(
    g: &TaskGradientMatrix,
    max_iters: usize,
    threshold: f64,
) -> Result<(SimplexWeights, SolverTrace)> {
    let (alpha, mut trace) = frank_wolfe_iterations(g, max_iters, threshold)?;
    if g.tasks() < 2 {
        return Ok((alpha, trace));
    }
    let m = g.gram();
    if let Some(refined) = polish::refine(&m, alpha.as_slice()) {
        let phi = quad(&m, &refined);
        let scale = trace.final_objective.abs().max(f64::MIN_POSITIVE);
        if phi <= trace.final_objective + 1e-14 * scale {
            trace.final_objective = phi;
            trace.polished = true;
            return Ok((SimplexWeights(refined), trace));
        }
    }
    Ok((alpha, trace))
}

/// Frank-Wolfe with exact line search from the uniform point, nothing more.
pub fn frank_wolfe_iterations(
    g: &TaskGradientMatrix,
    max_iters: usize,
    threshold: f64,
) -> Result<(SimplexWeights, SolverTrace)> {
    if max_iters == 0 || !(threshold > 0.0) {
        return Err(Error::contract("solver needs max_iters ≥ 1 and a positive threshold"));
    }
    let m = g.gram();
    let k = g.tasks();
    let mut alpha = vec![1.0 / k as f64; k];
    let mut phi = quad(&m, &alpha);
    let mut trace = SolverTrace {
        initial_objective: phi,
        final_objective: phi,
        steps: Vec::new(),
        termination: Termination::IterationCap,
        polished: false,
    };
    for _ in 0..max_iters {
        let ma = gram_apply(&m, &alpha);
        let mut t = 0;
        for r in 1..k {
            if ma[r] < ma[t] {
                t = r;
            }
        }
        // ‖αG − g_t‖² and (αG)·(αG − g_t)
        let denom = phi - 2.0 * ma[t] + m[t][t];
        let numer = phi - ma[t];
        if denom <= 1e-15 * (phi + m[t][t]) || denom <= 0.0 {
            trace.termination = Termination::ZeroDirection;
            break;
        }
        let eta = (numer / denom).clamp(0.0, 1.0);
        for (i, a) in alpha.iter_mut().enumerate() {
            *a *= 1.0 - eta;
            if i == t {
                *a += eta;
            }
        }
        phi = quad(&m, &alpha);
        trace.steps.push(SolverStep {
            task: t,
            step: eta,
            objective: phi,
        });
        if eta < threshold {
            trace.termination = Termination::StepBelowThreshold;
            break;
        }
    }
    trace.final_objective = phi;
    Ok((SimplexWeights(alpha), trace))
}

/// Picks the solver by task count: trivial for one task, closed form for
/// two, Frank-Wolfe otherwise.
pub fn min_norm_weights(g: &TaskGradientMatrix, cfg: &SolverConfig) -> Result<(SimplexWeights, SolverTrace)> {
    let normalized;
    let g = if cfg.normalize_gradients {
        normalized = g.normalized();
        &normalized
    } else {
        g
    };
    match g.tasks() {
        1 => {
            let phi = g.row(0).dot(g.row(0));
            Ok((
                SimplexWeights(vec![1.0]),
                SolverTrace {
                    initial_objective: phi,
                    final_objective: phi,
                    steps: Vec::new(),
                    termination: Termination::SingleTask,
                    polished: false,
                },
            ))
        }
        2 => {
            let m = g.gram();
            let w = two_task_gram(m[0][0], m[0][1], m[1][1]);
            let initial = quad(&m, &[0.5, 0.5]);
            let phi = quad(&m, w.as_slice());
            Ok((
                w,
                SolverTrace {
                    initial_objective: initial,
                    final_objective: phi,
                    steps: Vec::new(),
                    termination: Termination::ClosedForm,
                    polished: false,
                },
            ))
        }
        _ if cfg.polish => frank_wolfe_min_norm(g, cfg.max_iters, cfg.threshold),
        _ => frank_wolfe_iterations(g, cfg.max_iters, cfg.threshold),
    }
}

/// `αG`.
pub fn combined_direction(g: &TaskGradientMatrix, alpha: &SimplexWeights) -> Result<FlatGradient> {
    if alpha.len() != g.tasks() {
        return Err(Error::contract(format!(
            "{} weights for {} tasks",
            alpha.len(),
            g.tasks()
        )));
    }
    let mut out = vec![0.0; g.params()];
    for (row, &a) in g.rows().iter().zip(alpha.as_slice()) {
        for (o, v) in out.iter_mut().zip(row.as_slice()) {
            *o += a * v;
        }
    }
    Ok(FlatGradient::new(out))
}

/// Largest violation of `(αG)·g_k ≥ ‖αG‖²` over tasks, floored at zero.
pub fn saddle_point_residual(g: &TaskGradientMatrix, alpha: &SimplexWeights) -> f64 {
    let m = g.gram();
    let ma = gram_apply(&m, alpha.as_slice());
    let phi = ma.iter().zip(alpha.as_slice()).map(|(x, y)| x * y).sum::<f64>();
    ma.iter().map(|v| (phi - v).max(0.0)).fold(0.0, f64::max)
}
