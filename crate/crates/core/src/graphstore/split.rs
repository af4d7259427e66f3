use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;

use super::Graph;
use crate::error::{Error, Result};
use crate::rng;
use crate::numcore::SparseAdjacency;

/// Train/validation/test partition of the edges with one sampled non-edge per
/// positive, plus the message-passing graph that keeps only train edges.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSplit {
    pub train: Vec<(usize, usize)>,
    pub val: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    pub train_neg: Vec<(usize, usize)>,
    pub val_neg: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
    pub train_graph: Graph,
}

pub fn split_edges(g: &Graph, ratios: [f64; 3], seed: u64) -> Result<EdgeSplit> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("split ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    let mut rng = rng::stream(seed, &[rng::label("split_edges")]);
    let mut edges = g.adjacency().undirected_edges();
    edges.shuffle(&mut rng);
    let m = edges.len();
    let n_train = ((ratios[0] * m as f64).round() as usize).min(m);
    let n_val = ((ratios[1] * m as f64).round() as usize).min(m - n_train);
    let test = edges.split_off(n_train + n_val);
    let val = edges.split_off(n_train);
    let train = edges;

    let n = g.n();
    let non_edges = n * n.saturating_sub(1) / 2 - m;
    if non_edges < m {
        return Err(Error::Sampling(format!(
            "graph has {non_edges} non-edges but {m} negatives are needed"
        )));
    }
    let mut used: HashSet<(usize, usize)> = HashSet::with_capacity(m);
    let mut negatives = Vec::with_capacity(m);
    let budget = 100 * m.max(1);
    let mut trials = 0;
    while negatives.len() < m {
        if trials == budget {
            return Err(Error::Sampling(format!(
                "found only {} of {m} negatives after {budget} trials",
                negatives.len()
            )));
        }
        trials += 1;
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u == v {
            continue;
        }
        let pair = (u.min(v), u.max(v));
        if g.adjacency().has_edge(pair.0, pair.1) || !used.insert(pair) {
            continue;
        }
        negatives.push(pair);
    }
    let test_neg = negatives.split_off(train.len() + val.len());
    let val_neg = negatives.split_off(train.len());
    let train_neg = negatives;

    let train_graph = Graph::new(
        SparseAdjacency::from_undirected_edges(n, &train)?,
        g.features().clone(),
        g.labels().map(<[usize]>::to_vec),
    )?;
    Ok(EdgeSplit {
        train,
        val,
        test,
        train_neg,
        val_neg,
        test_neg,
        train_graph,
    })
}
