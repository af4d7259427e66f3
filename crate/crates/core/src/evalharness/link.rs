use crate::error::{Error, Result};
use crate::graphstore::EdgeSplit;
use crate::numcore::DenseMatrix;

use super::probe::LinearProbe;

/// Area under the ROC curve as the Mann-Whitney statistic: the share of
/// (positive, negative) pairs ordered correctly, ties counting one half.
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::contract("AUC needs at least one positive and one negative score"));
    }
    if pos.iter().chain(neg).any(|s| s.is_nan()) {
        return Err(Error::NonFinite { op: "auc" });
    }
    let mut sorted = neg.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Twice the statistic, kept integral until the final division.
    let mut twice: u128 = 0;
    for &s in pos {
        let below = sorted.partition_point(|&v| v < s);
        let upto = sorted.partition_point(|&v| v <= s);
        twice += 2 * below as u128 + (upto - below) as u128;
    }
    Ok(twice as f64 / (2 * pos.len() as u128 * neg.len() as u128) as f64)
}

fn hadamard_rows(emb: &DenseMatrix, pairs: &[(usize, usize)]) -> Vec<Vec<f64>> {
    pairs
        .iter()
        .map(|&(u, v)| emb.row(u).iter().zip(emb.row(v)).map(|(a, b)| a * b).collect())
        .collect()
}

/// Link-prediction AUC. `emb` must come from an encoder trained on the
/// train-edge graph of `split`. A binary logistic scorer on Hadamard edge
/// features is fit on the train pairs and scored on the test pairs.
pub fn link_pred_auc(emb: &DenseMatrix, split: &EdgeSplit) -> Result<f64> {
    if split.test.is_empty() || split.test_neg.is_empty() {
        return Err(Error::contract("link prediction needs a non-empty test split"));
    }
    if emb.rows() != split.train_graph.n() {
        return Err(Error::contract(format!(
            "{} embedding rows for a {}-node graph",
            emb.rows(),
            split.train_graph.n()
        )));
    }
    let mut rows = hadamard_rows(emb, &split.train);
    let n_pos = rows.len();
    rows.extend(hadamard_rows(emb, &split.train_neg));
    let x = DenseMatrix::from_rows(&rows);
    let idx: Vec<usize> = (0..rows.len()).collect();
    let probe = LinearProbe::fit(&x, |i| (i < n_pos) as usize, &idx, 2)?;
    let score = |feats: Vec<Vec<f64>>| -> Vec<f64> {
        feats
            .iter()
            .map(|f| {
                let l = probe.logits(f);
                l[1] - l[0]
            })
            .collect()
    };
    auc(&score(hadamard_rows(emb, &split.test)), &score(hadamard_rows(emb, &split.test_neg)))
}
