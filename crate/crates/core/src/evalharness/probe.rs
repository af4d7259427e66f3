use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::numcore::DenseMatrix;
use crate::rng;

pub const PROBE_ITERS: usize = 500;
pub const PROBE_LR: f64 = 0.1;
pub const PROBE_L2: f64 = 1e-4;

/// Read access to embedding rows. The probe reaches rows only through this
/// trait, which lets tests record which rows a fit touched.
pub trait RowAccess {
    fn dim(&self) -> usize;
    fn row(&self, i: usize) -> &[f64];
}

impl RowAccess for DenseMatrix {
    fn dim(&self) -> usize {
        self.cols()
    }

    fn row(&self, i: usize) -> &[f64] {
        DenseMatrix::row(self, i)
    }
}

/// Node indices split 10% / 10% / 80% after a seeded shuffle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn node_split(n: usize, seed: u64) -> NodeSplit {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[rng::label("node_split")]));
    let n_train = (n as f64 * 0.1).round() as usize;
    let n_val = (n as f64 * 0.1).round() as usize;
    let test = idx.split_off((n_train + n_val).min(n));
    let val = idx.split_off(n_train.min(idx.len()));
    NodeSplit { train: idx, val, test }
}

/// Multinomial logistic regression on standardized features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `dim × classes`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
    classes: usize,
}

impl LinearProbe {
    /// Full-batch gradient descent from zero weights on the `train` rows.
    /// Standardization statistics come from the same rows.
    pub fn fit(
        rows: &impl RowAccess,
        label_of: impl Fn(usize) -> usize,
        train: &[usize],
        classes: usize,
    ) -> Result<Self> {
        let labels: Vec<usize> = train.iter().map(|&i| label_of(i)).collect();
        let mut distinct = labels.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(Error::Split(format!(
                "train split of {} rows holds {} class(es)",
                train.len(),
                distinct.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::contract(format!("label {bad} outside {classes} classes")));
        }
        let d = rows.dim();
        let n = train.len() as f64;
        let mut mean = vec![0.0; d];
        for &i in train {
            for (m, x) in mean.iter_mut().zip(rows.row(i)) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; d];
        for &i in train {
            for ((v, x), m) in var.iter_mut().zip(rows.row(i)).zip(&mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        let scale: Vec<f64> = var
            .iter()
            .map(|v| {
                let s = v.sqrt();
                if s > 1e-12 {
                    1.0 / s
                } else {
                    1.0
                }
            })
            .collect();
        let x: Vec<Vec<f64>> = train
            .iter()
            .map(|&i| standardize(rows.row(i), &mean, &scale))
            .collect();

        let mut probe = Self {
            mean,
            scale,
            weights: vec![0.0; d * classes],
            bias: vec![0.0; classes],
            classes,
        };
        let mut gw = vec![0.0; d * classes];
        let mut gb = vec![0.0; classes];
        let mut p = vec![0.0; classes];
        for _ in 0..PROBE_ITERS {
            gw.iter_mut().for_each(|g| *g = 0.0);
            gb.iter_mut().for_each(|g| *g = 0.0);
            for (xi, &yi) in x.iter().zip(&labels) {
                probe.softmax_into(xi, &mut p);
                p[yi] -= 1.0;
                for (k, &pk) in p.iter().enumerate() {
                    gb[k] += pk / n;
                }
                for (j, &xj) in xi.iter().enumerate() {
                    let row = &mut gw[j * classes..(j + 1) * classes];
                    for (g, &pk) in row.iter_mut().zip(&p) {
                        *g += xj * pk / n;
                    }
                }
            }
            for (w, g) in probe.weights.iter_mut().zip(&gw) {
                *w -= PROBE_LR * (g + PROBE_L2 * *w);
            }
            for (b, g) in probe.bias.iter_mut().zip(&gb) {
                *b -= PROBE_LR * g;
            }
        }
        if probe.weights.iter().chain(&probe.bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "linear probe" });
        }
        Ok(probe)
    }

    fn logits_std(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (j, &xj) in x.iter().enumerate() {
            let row = &self.weights[j * self.classes..(j + 1) * self.classes];
            for (o, w) in out.iter_mut().zip(row) {
                *o += xj * w;
            }
        }
    }

    fn softmax_into(&self, x: &[f64], out: &mut [f64]) {
        self.logits_std(x, out);
        let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            z += *o;
        }
        out.iter_mut().for_each(|o| *o /= z);
    }

    pub fn logits(&self, row: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.classes];
        self.logits_std(&standardize(row, &self.mean, &self.scale), &mut out);
        out
    }

    /// Highest-logit class, lowest index on ties.
    pub fn predict(&self, row: &[f64]) -> usize {
        let l = self.logits(row);
        let mut best = 0;
        for k in 1..l.len() {
            if l[k] > l[best] {
                best = k;
            }
        }
        best
    }

    pub fn accuracy(&self, rows: &impl RowAccess, label_of: impl Fn(usize) -> usize, idx: &[usize]) -> Result<f64> {
        if idx.is_empty() {
            return Err(Error::Split("empty evaluation split".into()));
        }
        let hits = idx.iter().filter(|&&i| self.predict(rows.row(i)) == label_of(i)).count();
        Ok(hits as f64 / idx.len() as f64)
    }
}

fn standardize(x: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    x.iter().zip(mean).zip(scale).map(|((x, m), s)| (x - m) * s).collect()
}

/// Node-classification accuracy of a linear probe: fit on the 10% train
/// split, scored on the 80% test split.
pub fn logistic_probe(emb: &DenseMatrix, labels: &[usize], seed: u64) -> Result<f64> {
    if labels.len() != emb.rows() {
        return Err(Error::contract(format!("{} labels for {} embedding rows", labels.len(), emb.rows())));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let split = node_split(emb.rows(), seed);
    let probe = LinearProbe::fit(emb, |i| labels[i], &split.train, classes)?;
    probe.accuracy(emb, |i| labels[i], &split.test)
}

/// Same protocol as [`logistic_probe`] with partition ids as targets.
pub fn partition_probe(emb: &DenseMatrix, parts: &[usize], seed: u64) -> Result<f64> {
    logistic_probe(emb, parts, seed)
}
