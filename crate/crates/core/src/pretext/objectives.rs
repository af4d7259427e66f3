//! Loss heads written against the tape, plus dense wrappers that evaluate a
//! criterion on given representations.

use crate::error::{Error, Result};
use crate::numcore::{Bindings, DenseMatrix, Tape, Var};

/// Norm floor for cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;
/// Variance floor for column standardization.
pub const STANDARDIZE_EPS: f64 = 1e-8;

/// Masked relative reconstruction error of `xhat` against `target` on the
/// rows flagged in `mask`.
pub fn feat_rec_objective(tape: &mut Tape, xhat: Var, target: &DenseMatrix, mask: &[bool]) -> Result<Var> {
    if mask.len() != target.rows() {
        return Err(Error::contract("mask length differs from target rows"));
    }
    let mut mhat = DenseMatrix::zeros(target.rows(), target.cols());
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        mhat.row_mut(i).iter_mut().for_each(|v| *v = 1.0);
    }
    let denom = target.hadamard(&mhat)?.frobenius();
    if denom == 0.0 {
        return Err(Error::DegenerateTarget);
    }
    let t = tape.constant(target.clone());
    let m = tape.constant(mhat);
    let diff = tape.sub(xhat, t);
    let masked = tape.hadamard(diff, m);
    let norm = tape.frobenius(masked);
    Ok(tape.scale(norm, 1.0 / denom))
}

/// Mean of `-log σ(sign · logit)` over a column of logits.
pub fn signed_bce_objective(tape: &mut Tape, logits: Var, signs: &[f64]) -> Var {
    let s = tape.constant(DenseMatrix::col_vector(signs));
    let signed = tape.hadamard(logits, s);
    let ls = tape.log_sigmoid(signed);
    let m = tape.mean(ls);
    tape.scale(m, -1.0)
}

/// Logits `(h_i ⊙ h_j) · w` for each pair, positives first.
pub fn pair_logits(tape: &mut Tape, h: Var, pairs: &[(usize, usize)], scorer: Var) -> Var {
    let left = tape.gather_rows(h, pairs.iter().map(|p| p.0).collect());
    let right = tape.gather_rows(h, pairs.iter().map(|p| p.1).collect());
    let prod = tape.hadamard(left, right);
    tape.matmul(prod, scorer)
}

/// `‖Z₁−Z₂‖_F + λ‖Z₁ᵀZ₂ − I‖_F` with `Z = standardize(H)/√N`.
pub fn rep_decor_objective(tape: &mut Tape, h1: Var, h2: Var, rows: usize, dim: usize, lambda: f64) -> Var {
    let inv = 1.0 / (rows as f64).sqrt();
    let s1 = tape.col_standardize(h1, STANDARDIZE_EPS);
    let z1 = tape.scale(s1, inv);
    let s2 = tape.col_standardize(h2, STANDARDIZE_EPS);
    let z2 = tape.scale(s2, inv);
    let diff = tape.sub(z1, z2);
    let invariance = tape.frobenius(diff);
    let cross = tape.matmul_tn(z1, z2);
    let eye = tape.constant(DenseMatrix::identity(dim));
    let off = tape.sub(cross, eye);
    let decor = tape.frobenius(off);
    let weighted = tape.scale(decor, lambda);
    tape.add(invariance, weighted)
}

/// Node-versus-pooled-graph discrimination, pooling over the clean view.
pub fn mi_ng_objective(tape: &mut Tape, clean: Var, corrupt: Var, rows: usize, scorer: Var) -> Var {
    let pooled = tape.mean_rows(clean);
    let broadcast = tape.gather_rows(pooled, vec![0; rows]);
    let clean_in = tape.hconcat(clean, broadcast);
    let corrupt_in = tape.hconcat(corrupt, broadcast);
    let clean_logits = tape.matmul(clean_in, scorer);
    let corrupt_logits = tape.matmul(corrupt_in, scorer);
    let flipped = tape.scale(corrupt_logits, -1.0);
    let ls_clean = tape.log_sigmoid(clean_logits);
    let ls_corrupt = tape.log_sigmoid(flipped);
    let a = tape.sum(ls_clean);
    let b = tape.sum(ls_corrupt);
    let total = tape.add(a, b);
    tape.scale(total, -1.0 / (2 * rows) as f64)
}

/// InfoNCE over two views with cosine similarity and temperature `tau`.
/// Intra-view negatives exclude the anchor itself.
pub fn mi_nsg_objective(tape: &mut Tape, h1: Var, h2: Var, rows: usize, tau: f64) -> Var {
    let n1 = tape.row_l2_normalize(h1, COSINE_EPS);
    let n2 = tape.row_l2_normalize(h2, COSINE_EPS);
    let s11 = tape.matmul_nt(n1, n1);
    let s11 = tape.scale(s11, 1.0 / tau);
    let s12 = tape.matmul_nt(n1, n2);
    let s12 = tape.scale(s12, 1.0 / tau);
    let e11 = tape.exp(s11);
    let mut offdiag = DenseMatrix::filled(rows, rows, 1.0);
    for i in 0..rows {
        offdiag.set(i, i, 0.0);
    }
    let offdiag = tape.constant(offdiag);
    let e11 = tape.hadamard(e11, offdiag);
    let e12 = tape.exp(s12);
    let d11 = tape.row_sum(e11);
    let d12 = tape.row_sum(e12);
    let den = tape.add(d11, d12);
    let log_den = tape.log(den);
    let agree = tape.hadamard(n1, n2);
    let pos = tape.row_sum(agree);
    let pos = tape.scale(pos, 1.0 / tau);
    let per_anchor = tape.sub(log_den, pos);
    tape.mean(per_anchor)
}

fn eval_scalar(tape: &mut Tape, root: Var) -> Result<f64> {
    tape.forward(root, &Bindings::new())?
        .to_scalar()
        .ok_or_else(|| Error::contract("objective is not scalar"))
}

pub fn feat_rec_criterion(xhat: &DenseMatrix, target: &DenseMatrix, mask: &[bool]) -> Result<f64> {
    if xhat.shape() != target.shape() {
        return Err(Error::dim("feat_rec", format!("{:?} vs {:?}", xhat.shape(), target.shape())));
    }
    let mut t = Tape::new();
    let x = t.constant(xhat.clone());
    let root = feat_rec_objective(&mut t, x, target, mask)?;
    eval_scalar(&mut t, root)
}

pub fn topo_rec_criterion(pos_logits: &[f64], neg_logits: &[f64]) -> Result<f64> {
    let mut t = Tape::new();
    let all: Vec<f64> = pos_logits.iter().chain(neg_logits).copied().collect();
    let signs: Vec<f64> = (0..all.len()).map(|i| if i < pos_logits.len() { 1.0 } else { -1.0 }).collect();
    let l = t.constant(DenseMatrix::col_vector(&all));
    let root = signed_bce_objective(&mut t, l, &signs);
    eval_scalar(&mut t, root)
}

pub fn rep_decor_criterion(h1: &DenseMatrix, h2: &DenseMatrix, lambda: f64) -> Result<f64> {
    if h1.shape() != h2.shape() {
        return Err(Error::contract("views have different shapes"));
    }
    let mut t = Tape::new();
    let a = t.constant(h1.clone());
    let b = t.constant(h2.clone());
    let root = rep_decor_objective(&mut t, a, b, h1.rows(), h1.cols(), lambda);
    eval_scalar(&mut t, root)
}

pub fn mi_ng_criterion(clean: &DenseMatrix, corrupt: &DenseMatrix, scorer: &DenseMatrix) -> Result<f64> {
    let mut t = Tape::new();
    let a = t.constant(clean.clone());
    let b = t.constant(corrupt.clone());
    let w = t.constant(scorer.clone());
    let root = mi_ng_objective(&mut t, a, b, clean.rows(), w);
    eval_scalar(&mut t, root)
}

pub fn mi_nsg_criterion(z1: &DenseMatrix, z2: &DenseMatrix, tau: f64) -> Result<f64> {
    if z1.shape() != z2.shape() {
        return Err(Error::contract("views have different shapes"));
    }
    let mut t = Tape::new();
    let a = t.constant(z1.clone());
    let b = t.constant(z2.clone());
    let root = mi_nsg_objective(&mut t, a, b, z1.rows(), tau);
    eval_scalar(&mut t, root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn feat_rec_perfect_and_zero_reconstruction() {
        let x = random(6, 3, 1);
        let mask = [true, false, true, false, false, true];
        assert_eq!(feat_rec_criterion(&x, &x, &mask).unwrap(), 0.0);
        let zero = DenseMatrix::zeros(6, 3);
        assert!((feat_rec_criterion(&zero, &x, &mask).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn feat_rec_ignores_unmasked_rows() {
        let x = random(5, 4, 2);
        let xhat = random(5, 4, 3);
        let mask = [false, true, true, false, false];
        let base = feat_rec_criterion(&xhat, &x, &mask).unwrap();
        let mut other = xhat.clone();
        other.row_mut(0).iter_mut().for_each(|v| *v += 10.0);
        other.row_mut(4).iter_mut().for_each(|v| *v = -3.0);
        assert_eq!(feat_rec_criterion(&other, &x, &mask).unwrap(), base);
    }

    #[test]
    fn feat_rec_zero_target_is_degenerate() {
        let mut x = random(3, 2, 4);
        x.row_mut(1).iter_mut().for_each(|v| *v = 0.0);
        let err = feat_rec_criterion(&x, &x, &[false, true, false]).unwrap_err();
        assert!(matches!(err, Error::DegenerateTarget));
    }

    #[test]
    fn topo_rec_unit_values() {
        let ln2 = std::f64::consts::LN_2;
        assert!((topo_rec_criterion(&[0.0; 4], &[0.0; 4]).unwrap() - ln2).abs() < 1e-15);
        assert!(topo_rec_criterion(&[20.0; 3], &[-20.0; 3]).unwrap() < 1e-8);
    }

    #[test]
    fn rep_decor_identical_views() {
        // columns with zero mean, unit variance, uncorrelated
        let h = DenseMatrix::from_rows(&[
            vec![1.0, 1.0],
            vec![1.0, -1.0],
            vec![-1.0, 1.0],
            vec![-1.0, -1.0],
        ]);
        assert!(rep_decor_criterion(&h, &h, 1e-3).unwrap().abs() < 1e-10);
        let h = random(7, 3, 5);
        let loss = rep_decor_criterion(&h, &h, 1e-3).unwrap();
        // oracle: λ‖ZᵀZ − I‖ with Z standardized by population statistics
        let (n, d) = h.shape();
        let mut z = h.clone();
        for c in 0..d {
            let mean: f64 = (0..n).map(|r| h.get(r, c)).sum::<f64>() / n as f64;
            let var: f64 = (0..n).map(|r| (h.get(r, c) - mean).powi(2)).sum::<f64>() / n as f64;
            for r in 0..n {
                z.set(r, c, (h.get(r, c) - mean) / (var + STANDARDIZE_EPS).sqrt() / (n as f64).sqrt());
            }
        }
        let mut off = 0.0;
        for a in 0..d {
            for b in 0..d {
                let dot: f64 = (0..n).map(|r| z.get(r, a) * z.get(r, b)).sum();
                off += (dot - if a == b { 1.0 } else { 0.0 }).powi(2);
            }
        }
        assert!((loss - 1e-3 * off.sqrt()).abs() < 1e-12);
        // linear in λ
        let l2 = rep_decor_criterion(&h, &h, 2e-3).unwrap();
        assert!((l2 - 2.0 * loss).abs() < 1e-14);
    }

    #[test]
    fn mi_ng_unit_values() {
        let clean = random(5, 3, 6);
        let corrupt = random(5, 3, 7);
        let zero = DenseMatrix::zeros(6, 1);
        let v = mi_ng_criterion(&clean, &corrupt, &zero).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn mi_ng_saturated() {
        // clean rows carry +1 in the first column, corrupt rows −1; scorer picks it up ×20
        let clean = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        let corrupt = DenseMatrix::from_rows(&[vec![-1.0, 0.0], vec![-1.0, 0.0]]);
        let w = DenseMatrix::col_vector(&[20.0, 0.0, 0.0, 0.0]);
        assert!(mi_ng_criterion(&clean, &corrupt, &w).unwrap() < 1e-8);
    }

    #[test]
    fn mi_nsg_identical_rows() {
        for n in [2usize, 5, 9] {
            let z = DenseMatrix::from_vec(n, 3, [0.3, -1.2, 0.5].repeat(n)).unwrap();
            let v = mi_nsg_criterion(&z, &z, 0.1).unwrap();
            assert!((v - ((2 * n - 1) as f64).ln()).abs() < 1e-9, "n={n}");
        }
    }

    #[test]
    fn mi_nsg_two_orthogonal_anchors() {
        // z2 = z1, anchors orthogonal: den = e^{10} + 2, num = e^{10}
        let z = DenseMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.5]]);
        let v = mi_nsg_criterion(&z, &z, 0.1).unwrap();
        let expected = (1.0 + 2.0 * (-10.0f64).exp()).ln();
        assert!((v - expected).abs() < 1e-14);
    }

    #[test]
    fn mi_nsg_rotation_invariant() {
        let z1 = random(6, 2, 8);
        let z2 = random(6, 2, 9);
        let (s, c) = 0.7f64.sin_cos();
        let rot = DenseMatrix::from_rows(&[vec![c, -s], vec![s, c]]);
        let a = mi_nsg_criterion(&z1, &z2, 0.1).unwrap();
        let b = mi_nsg_criterion(&z1.matmul(&rot).unwrap(), &z2.matmul(&rot).unwrap(), 0.1).unwrap();
        assert!((a - b).abs() < 1e-10);
    }
}
