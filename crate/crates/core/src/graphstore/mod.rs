//! Graph storage, synthetic generation, on-disk format, sampling and
//! augmentation.

mod io;
mod partition;
mod sampling;
mod sbm;
mod split;

pub use io::{load_graph, save_graph};
pub use partition::greedy_partition;
pub use sampling::{
    drop_edges, induced_subgraph, k_hop_sample, mask_features, sample_nodes, shuffle_features,
    uniform_node_sample,
};
pub use sbm::{generate_sbm, SbmParams};
pub use split::{split_edges, EdgeSplit};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{DenseMatrix, SparseAdjacency};

/// Undirected attributed graph. Stored adjacency has unit weights and no
/// self-loops.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    adjacency: SparseAdjacency,
    features: DenseMatrix,
    labels: Option<Vec<usize>>,
}

impl Graph {
    pub fn new(
        adjacency: SparseAdjacency,
        features: DenseMatrix,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = adjacency.n();
        if features.rows() != n {
            return Err(Error::contract(format!(
                "{} feature rows for {n} nodes",
                features.rows()
            )));
        }
        if labels.as_ref().is_some_and(|l| l.len() != n) {
            return Err(Error::contract("label count differs from node count"));
        }
        if !adjacency.is_structurally_symmetric() {
            return Err(Error::contract("adjacency is not symmetric"));
        }
        if adjacency.has_self_loops() {
            return Err(Error::contract("stored adjacency must not contain self-loops"));
        }
        if !features.is_finite() {
            return Err(Error::contract("non-finite feature value"));
        }
        Ok(Self {
            adjacency,
            features,
            labels,
        })
    }

    pub fn from_edges(
        n: usize,
        edges: &[(usize, usize)],
        features: DenseMatrix,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        Self::new(SparseAdjacency::from_undirected_edges(n, edges)?, features, labels)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.adjacency.n()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn adjacency(&self) -> &SparseAdjacency {
        &self.adjacency
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    /// The whole graph viewed as a sample whose seeds are all nodes.
    pub fn as_sample(&self) -> SubgraphSample {
        let ids: Vec<usize> = (0..self.n()).collect();
        SubgraphSample {
            node_ids: ids.clone(),
            adjacency: self.adjacency.clone(),
            features: self.features.clone(),
            seed_ids: ids,
        }
    }
}

/// Induced subgraph with the original index of every local node.
#[derive(Clone, Debug, PartialEq)]
pub struct SubgraphSample {
    /// Original node ids, sorted and unique; local node `i` is `node_ids[i]`.
    pub node_ids: Vec<usize>,
    pub adjacency: SparseAdjacency,
    pub features: DenseMatrix,
    /// Original ids of the seeds the sample was grown from.
    pub seed_ids: Vec<usize>,
}

impl SubgraphSample {
    pub fn n(&self) -> usize {
        self.node_ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.nnz() / 2
    }
}

/// How many seed nodes a task draws.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SeedCount {
    /// Use the whole graph.
    Full,
    /// A fraction of the node count, at least one node.
    Fraction(f64),
    Count(usize),
}

impl SeedCount {
    /// `None` means the whole graph.
    pub fn resolve(self, n: usize) -> Option<usize> {
        match self {
            SeedCount::Full => None,
            SeedCount::Fraction(f) => Some(((f * n as f64).round() as usize).clamp(1, n.max(1))),
            SeedCount::Count(c) => Some(c.clamp(1, n.max(1))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sampler {
    /// Nodes within `hop_order` hops of the seeds.
    KHop,
    /// The seeds alone, drawn uniformly without replacement.
    UniformNodes,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub sampler: Sampler,
    pub feature_mask_ratio: f64,
    pub edge_drop_ratio: f64,
    /// 0 means the whole graph.
    pub hop_order: usize,
    pub seed_count: SeedCount,
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("feature_mask_ratio", self.feature_mask_ratio),
            ("edge_drop_ratio", self.edge_drop_ratio),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must lie in [0,1], got {r}")));
            }
        }
        if let SeedCount::Fraction(f) = self.seed_count {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("seed fraction must lie in (0,1], got {f}")));
            }
        }
        Ok(())
    }
}
