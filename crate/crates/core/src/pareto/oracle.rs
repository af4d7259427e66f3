//! Reference solvers and diagnostics for the min-norm problem.

use serde::Serialize;

use super::{quad, SimplexWeights, SolverTrace, TaskGradientMatrix};
use crate::error::{Error, Result};

const POWER_ITERATION_CAP: usize = 10_000;

fn lattice_size(resolution: f64) -> Result<usize> {
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(Error::contract(format!("grid resolution {resolution} outside (0,1]")));
    }
    let r = (1.0 / resolution).round();
    if (r * resolution - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("grid resolution {resolution} does not divide 1")));
    }
    Ok(r as usize)
}

/// Exhaustive search of the simplex lattice with spacing `resolution`.
/// Ties go to the lexicographically smallest weight vector.
///
/// The last free coordinate is minimized exactly rather than enumerated:
/// with the others fixed, the objective is a convex quadratic in it, so the
/// best lattice value is an endpoint or a neighbour of the real minimizer.
pub fn brute_force_min_norm(g: &TaskGradientMatrix, resolution: f64) -> Result<SimplexWeights> {
    let k = g.tasks();
    if k > 4 {
        return Err(Error::contract(format!("brute force supports at most 4 tasks, got {k}")));
    }
    let r = lattice_size(resolution)?;
    if k == 1 {
        return Ok(SimplexWeights::one_hot(1, 0));
    }
    let gram = g.gram();
    let mut m = [[0.0f64; 4]; 4];
    for (i, row) in gram.iter().enumerate() {
        m[i][..k].copy_from_slice(row);
    }
    let rf = r as f64;
    let inv = 1.0 / rf;
    let (p, q) = (k - 2, k - 1);
    let curv = m[p][p] - 2.0 * m[p][q] + m[q][q];
    let mut best = Best {
        phi: f64::INFINITY,
        counts: [0; 4],
    };
    let mut scan = |prefix: [usize; 2], used: usize| {
        let s = r - used;
        let a = [prefix[0] as f64 * inv, prefix[1] as f64 * inv];
        let mut phi_prefix = 0.0;
        let mut cp = 0.0;
        let mut cq = 0.0;
        for i in 0..p {
            for j in 0..p {
                phi_prefix += a[i] * a[j] * m[i][j];
            }
            cp += a[i] * m[i][p];
            cq += a[i] * m[i][q];
        }
        // φ along the last free coordinate is a convex quadratic: only the
        // endpoints and the rounded stationary point can be the lattice minimum
        let eval = |x: usize| {
            let u = x as f64 * inv;
            let v = (s - x) as f64 * inv;
            phi_prefix + 2.0 * u * cp + 2.0 * v * cq + u * u * m[p][p] + 2.0 * u * v * m[p][q] + v * v * m[q][q]
        };
        let mut lo = s;
        let mut hi = s;
        if curv > 0.0 {
            let sf = s as f64 * inv;
            let slope0 = 2.0 * (cp - cq) + 2.0 * sf * (m[p][q] - m[q][q]);
            let xstar = (-slope0 / (2.0 * curv)) * rf;
            if xstar.is_finite() && xstar > 0.0 && xstar < s as f64 {
                lo = xstar.floor() as usize;
                hi = (xstar.ceil() as usize).min(s);
            }
        }
        // ascending order so equal values keep the smaller coordinate
        for x in [0, lo, hi, s] {
            let phi = eval(x);
            if best.phi.is_infinite() || phi < best.phi - 4.0 * f64::EPSILON * best.phi.abs() {
                best.phi = phi;
                best.counts = [prefix[0], prefix[1], 0, 0];
                best.counts[p] = x;
                best.counts[q] = s - x;
            }
        }
    };
    match k {
        2 => scan([0, 0], 0),
        3 => (0..=r).for_each(|i| scan([i, 0], i)),
        _ => {
            for i in 0..=r {
                for j in 0..=r - i {
                    scan([i, j], i + j);
                }
            }
        }
    }
    lattice_weights(&best.counts[..k], rf)
}

struct Best {
    phi: f64,
    counts: [usize; 4],
}

fn lattice_weights(counts: &[usize], rf: f64) -> Result<SimplexWeights> {
    let mut w: Vec<f64> = counts.iter().map(|&c| c as f64 / rf).collect();
    // pin the sum exactly at one
    let head: f64 = w[..w.len() - 1].iter().sum();
    let last = w.len() - 1;
    w[last] = (1.0 - head).max(0.0);
    SimplexWeights::new(w)
}

/// `2·λ_max(GGᵀ)` by power iteration on the Gram matrix.
pub fn smoothness_constant(g: &TaskGradientMatrix) -> Result<f64> {
    let m = g.gram();
    let k = m.len();
    // a start vector with no symmetry, so it is rarely orthogonal to the top eigenvector
    let mut v: Vec<f64> = (0..k).map(|i| 1.0 / (i as f64 + 1.0)).collect();
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATION_CAP {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v.iter_mut().for_each(|x| *x /= norm);
        let mv = super::gram_apply(&m, &v);
        let next: f64 = mv.iter().zip(&v).map(|(a, b)| a * b).sum();
        if (next - lambda).abs() <= 1e-13 * next.abs().max(f64::MIN_POSITIVE) {
            return Ok(2.0 * next);
        }
        lambda = next;
        v = mv;
    }
    Err(Error::Numeric(format!(
        "power iteration did not settle in {POWER_ITERATION_CAP} steps"
    )))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapReport {
    pub beta: f64,
    /// Reference optimum used for the gaps.
    pub optimum: f64,
    /// `(iteration, gap, bound)` for every recorded iteration from 2 on.
    pub checks: Vec<(usize, f64, f64)>,
    pub violations: usize,
}

/// Checks `φ(α_t) − φ* ≤ 4β/(t+1)` along a Frank-Wolfe trace.
///
/// `φ*` is the smaller of the lattice optimum (K ≤ 4, resolution 1e-3) and
/// the best value on the trace; for K > 4 it is the final value minus the
/// stopping threshold.
pub fn smoothness_and_gap(g: &TaskGradientMatrix, trace: &SolverTrace, threshold: f64) -> Result<GapReport> {
    let beta = smoothness_constant(g)?;
    let best_on_trace = trace
        .steps
        .iter()
        .map(|s| s.objective)
        .fold(trace.initial_objective, f64::min);
    let optimum = if g.tasks() <= 4 {
        let lattice = brute_force_min_norm(g, 1e-3)?;
        quad(&g.gram(), lattice.as_slice()).min(best_on_trace)
    } else {
        trace.final_objective - threshold
    };
    let checks: Vec<(usize, f64, f64)> = trace
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| (i + 1, s.objective - optimum, 4.0 * beta / (i as f64 + 2.0)))
        .filter(|(t, _, _)| *t >= 2)
        .collect();
    let violations = checks.iter().filter(|(_, gap, bound)| gap > bound).count();
    Ok(GapReport {
        beta,
        optimum,
        checks,
        violations,
    })
}
