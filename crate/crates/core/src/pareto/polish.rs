//! Wolfe's active-set min-norm-point method on the Gram matrix, used to
//! finish a Frank-Wolfe run exactly.

const MAJOR_CAP: usize = 200;
const MINOR_CAP: usize = 200;

fn apply(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizer of `yᵀMy` over the affine hull of `support`, `Σy = 1`.
/// `None` when the support is affinely dependent.
fn affine_min(m: &[Vec<f64>], support: &[usize]) -> Option<Vec<f64>> {
    let s = support.len();
    let n = s + 1;
    let scale = support.iter().map(|&i| m[i][i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    // [M_SS 1; 1ᵀ 0] [y; μ] = [0; 1], rows scaled so both blocks are O(1)
    let mut a = vec![vec![0.0; n + 1]; n];
    for (r, &i) in support.iter().enumerate() {
        for (c, &j) in support.iter().enumerate() {
            a[r][c] = m[i][j] / scale;
        }
        a[r][s] = 1.0;
    }
    for c in 0..s {
        a[s][c] = 1.0;
    }
    a[s][n] = 1.0;
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..=n {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    let y: Vec<f64> = (0..s).map(|r| a[r][n] / a[r][r]).collect();
    y.iter().all(|v| v.is_finite()).then_some(y)
}

/// Runs Wolfe's method from `start`; falls back to the shortest vertex
/// when the starting support is affinely dependent. `None` if it stalls.
pub(super) fn refine(m: &[Vec<f64>], start: &[f64]) -> Option<Vec<f64>> {
    let k = m.len();
    let diag_max = (0..k).map(|i| m[i][i]).fold(0.0, f64::max);
    let tol = 1e-13 * diag_max.max(f64::MIN_POSITIVE);
    let mut support: Vec<usize> = (0..k).filter(|&i| start[i] > 0.0).collect();
    let mut x = start.to_vec();
    let warm = affine_min(m, &support).is_some();
    if !warm {
        let best = (0..k).min_by(|&a, &b| m[a][a].total_cmp(&m[b][b]))?;
        support = vec![best];
        x = vec![0.0; k];
        x[best] = 1.0;
    }
    let mut first = warm;
    for _ in 0..MAJOR_CAP {
        if !first {
            let mx = apply(m, &x);
            let phi = dot(&mx, &x);
            let mut t = 0;
            for r in 1..k {
                if mx[r] < mx[t] {
                    t = r;
                }
            }
            if mx[t] >= phi - tol {
                return Some(x);
            }
            if support.contains(&t) {
                return None;
            }
            support.push(t);
            support.sort_unstable();
        }
        first = false;
        let mut settled = false;
        for _ in 0..MINOR_CAP {
            let y = affine_min(m, &support)?;
            if y.iter().all(|&v| v > 0.0) {
                x.iter_mut().for_each(|v| *v = 0.0);
                for (&i, &v) in support.iter().zip(&y) {
                    x[i] = v;
                }
                settled = true;
                break;
            }
            // move toward y until the first weight hits zero
            let mut theta = 1.0f64;
            for (&i, &v) in support.iter().zip(&y) {
                if v <= 0.0 {
                    let d = x[i] - v;
                    if d > 0.0 {
                        theta = theta.min(x[i] / d);
                    }
                }
            }
            for (&i, &v) in support.iter().zip(&y) {
                x[i] += theta * (v - x[i]);
            }
            let before = support.len();
            support.retain(|&i| x[i] > 1e-15);
            for i in 0..k {
                if !support.contains(&i) {
                    x[i] = 0.0;
                }
            }
            if support.len() == before || support.is_empty() {
                return None;
            }
        }
        if !settled {
            return None;
        }
        let total: f64 = x.iter().sum();
        x.iter_mut().for_each(|v| *v /= total);
    }
    None
}
