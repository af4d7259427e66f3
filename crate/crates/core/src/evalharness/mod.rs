//! Frozen-encoder evaluation: four downstream probes and rank aggregation.

mod cluster;
mod link;
mod probe;

use std::fmt;

use serde::Serialize;

pub use cluster::{kmeans, kmeans_nmi, nmi, Clustering, KMEANS_MAX_ITERS, KMEANS_RESTARTS};
pub use link::{auc, link_pred_auc};
pub use probe::{
    logistic_probe, node_split, partition_probe, LinearProbe, NodeSplit, RowAccess, PROBE_ITERS, PROBE_L2,
    PROBE_LR,
};

use crate::encoder::{AdjacencyMode, EncoderParams};
use crate::error::{Error, Result};
use crate::graphstore::{EdgeSplit, Graph};
use crate::numcore::DenseMatrix;

/// Number of parts used for the partition-prediction probe.
pub const PARTITION_COUNT: usize = 10;

/// Frozen node representations with where they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub values: DenseMatrix,
    pub checkpoint: String,
    pub graph: String,
}

impl EmbeddingTable {
    pub fn new(values: DenseMatrix, graph_nodes: usize, checkpoint: String, graph: String) -> Result<Self> {
        if values.rows() != graph_nodes {
            return Err(Error::contract(format!("{} embedding rows for {graph_nodes} nodes", values.rows())));
        }
        if !values.is_finite() {
            return Err(Error::NonFinite { op: "embedding table" });
        }
        Ok(Self { values, checkpoint, graph })
    }

    /// Runs the encoder over the whole graph.
    pub fn compute(
        encoder: &EncoderParams,
        mode: AdjacencyMode,
        graph: &Graph,
        checkpoint: impl Into<String>,
        graph_id: impl Into<String>,
    ) -> Result<Self> {
        let values = encoder.encode_features(graph.features(), graph.adjacency(), mode)?;
        Self::new(values, graph.n(), checkpoint.into(), graph_id.into())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Downstream {
    NodeClassification,
    NodeClustering,
    LinkPrediction,
    PartitionPrediction,
}

impl Downstream {
    pub const ALL: [Downstream; 4] = [
        Downstream::NodeClassification,
        Downstream::NodeClustering,
        Downstream::LinkPrediction,
        Downstream::PartitionPrediction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Downstream::NodeClassification => "node_classification",
            Downstream::NodeClustering => "node_clustering",
            Downstream::LinkPrediction => "link_prediction",
            Downstream::PartitionPrediction => "partition_prediction",
        }
    }

    pub fn metric(self) -> &'static str {
        match self {
            Downstream::NodeClassification | Downstream::PartitionPrediction => "accuracy",
            Downstream::NodeClustering => "nmi",
            Downstream::LinkPrediction => "auc",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Downstream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Downstream {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

/// Everything the four probes read for one method.
#[derive(Clone, Copy, Debug)]
pub struct ProbeInputs<'a> {
    pub embeddings: &'a DenseMatrix,
    pub labels: &'a [usize],
    pub partitions: &'a [usize],
    /// Cluster count for the clustering probe (the class count).
    pub clusters: usize,
    /// Embeddings from the train-edge-only model together with its split.
    pub link: Option<(&'a DenseMatrix, &'a EdgeSplit)>,
}

/// One run of every probe, indexed by [`Downstream::index`]. Link
/// prediction is `None` when no train-edge model was supplied.
pub fn run_probes(inputs: &ProbeInputs, seed: u64) -> Result<[Option<f64>; 4]> {
    let mut out = [None; 4];
    out[Downstream::NodeClassification.index()] = Some(logistic_probe(inputs.embeddings, inputs.labels, seed)?);
    out[Downstream::NodeClustering.index()] =
        Some(kmeans_nmi(inputs.embeddings, inputs.labels, inputs.clusters, seed)?);
    if let Some((emb, split)) = inputs.link {
        out[Downstream::LinkPrediction.index()] = Some(link_pred_auc(emb, split)?);
    }
    out[Downstream::PartitionPrediction.index()] = Some(partition_probe(inputs.embeddings, inputs.partitions, seed)?);
    Ok(out)
}

/// Probe results of one method over several evaluation seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodRuns {
    pub method: String,
    pub runs: Vec<[Option<f64>; 4]>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskSummary {
    pub task: Downstream,
    pub metric: &'static str,
    pub mean: f64,
    /// Population standard deviation over runs.
    pub std: f64,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub tasks: Vec<TaskSummary>,
    pub average: f64,
    pub average_rank: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub methods: Vec<MethodSummary>,
}

/// Dense ranks, 1 for the highest value; equal values share a rank.
pub fn dense_ranks(values: &[f64]) -> Vec<usize> {
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(|a, b| b.total_cmp(a));
    distinct.dedup();
    values
        .iter()
        .map(|v| 1 + distinct.iter().take_while(|&&d| d > *v).count())
        .collect()
}

/// Means and spreads per task, the four-task average, and per-task dense
/// ranks with their average per method.
pub fn aggregate_report(methods: &[MethodRuns]) -> Result<MetricReport> {
    if methods.is_empty() {
        return Err(Error::Report("no methods to aggregate".into()));
    }
    let mut means = vec![[0.0; 4]; methods.len()];
    let mut stds = vec![[0.0; 4]; methods.len()];
    for (m, runs) in methods.iter().enumerate() {
        if runs.runs.is_empty() {
            return Err(Error::Report(format!("method {} has no runs", runs.method)));
        }
        for task in Downstream::ALL {
            let vals: Vec<f64> = runs
                .runs
                .iter()
                .enumerate()
                .map(|(r, run)| {
                    run[task.index()].ok_or_else(|| {
                        Error::Report(format!("method {} run {r} has no value for {task}", runs.method))
                    })
                })
                .collect::<Result<_>>()?;
            if let Some(v) = vals.iter().find(|v| !v.is_finite()) {
                return Err(Error::Report(format!("method {} has value {v} for {task}", runs.method)));
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            means[m][task.index()] = mean;
            stds[m][task.index()] = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        }
    }
    let ranks: Vec<Vec<usize>> = Downstream::ALL
        .iter()
        .map(|t| dense_ranks(&means.iter().map(|m| m[t.index()]).collect::<Vec<_>>()))
        .collect();
    let summaries = methods
        .iter()
        .enumerate()
        .map(|(m, runs)| {
            let tasks: Vec<TaskSummary> = Downstream::ALL
                .iter()
                .map(|&t| TaskSummary {
                    task: t,
                    metric: t.metric(),
                    mean: means[m][t.index()],
                    std: stds[m][t.index()],
                    rank: ranks[t.index()][m],
                })
                .collect();
            MethodSummary {
                method: runs.method.clone(),
                runs: runs.runs.len(),
                average: tasks.iter().map(|t| t.mean).sum::<f64>() / 4.0,
                average_rank: tasks.iter().map(|t| t.rank as f64).sum::<f64>() / 4.0,
                tasks,
            }
        })
        .collect();
    Ok(MetricReport { methods: summaries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn runs(method: &str, vals: &[[f64; 4]]) -> MethodRuns {
        MethodRuns {
            method: method.into(),
            runs: vals.iter().map(|v| v.map(Some)).collect(),
        }
    }

    #[test]
    fn dominating_method_ranks_first() {
        let r = aggregate_report(&[runs("a", &[[0.9, 0.8, 0.9, 0.7]]), runs("b", &[[0.5, 0.4, 0.6, 0.3]])]).unwrap();
        assert_eq!(r.methods[0].average_rank, 1.0);
        assert_eq!(r.methods[1].average_rank, 2.0);
    }

    #[test]
    fn identical_methods_share_rank_one() {
        let v = [[0.6, 0.5, 0.7, 0.4]];
        let r = aggregate_report(&[runs("a", &v), runs("b", &v)]).unwrap();
        assert!(r.methods.iter().all(|m| m.average_rank == 1.0));
    }

    #[test]
    fn three_method_hand_table() {
        // Task means:    cls   clu   link  part
        //   a            0.80  0.50  0.90  0.60
        //   b            0.70  0.50  0.95  0.40
        //   c            0.80  0.30  0.85  0.70
        // Dense ranks:   a: 1 1 2 2 → 1.5   b: 2 1 1 3 → 1.75   c: 1 2 3 1 → 1.75
        let r = aggregate_report(&[
            runs("a", &[[0.8, 0.5, 0.9, 0.6]]),
            runs("b", &[[0.7, 0.5, 0.95, 0.4]]),
            runs("c", &[[0.8, 0.3, 0.85, 0.7]]),
        ])
        .unwrap();
        let ranks: Vec<Vec<usize>> = r.methods.iter().map(|m| m.tasks.iter().map(|t| t.rank).collect()).collect();
        assert_eq!(ranks, vec![vec![1, 1, 2, 2], vec![2, 1, 1, 3], vec![1, 2, 3, 1]]);
        let avg: Vec<f64> = r.methods.iter().map(|m| m.average_rank).collect();
        assert_eq!(avg, vec![1.5, 1.75, 1.75]);
        assert!((r.methods[0].average - 0.7).abs() < 1e-15);
    }

    #[test]
    fn mean_and_population_std_over_runs() {
        let r = aggregate_report(&[runs("a", &[[0.2, 0.0, 0.5, 1.0], [0.4, 0.0, 0.5, 0.0]])]).unwrap();
        let t = &r.methods[0].tasks;
        assert!((t[0].mean - 0.3).abs() < 1e-15 && (t[0].std - 0.1).abs() < 1e-15);
        assert_eq!(t[2].std, 0.0);
        assert_eq!(t[3].std, 0.5);
        let single = aggregate_report(&[runs("a", &[[0.2, 0.1, 0.5, 1.0]])]).unwrap();
        assert!(single.methods[0].tasks.iter().all(|t| t.std == 0.0));
    }

    #[test]
    fn missing_value_is_a_report_error() {
        let mut m = runs("a", &[[0.2, 0.1, 0.5, 1.0]]);
        m.runs[0][2] = None;
        assert!(matches!(aggregate_report(&[m]), Err(Error::Report(_))));
        assert!(matches!(aggregate_report(&[]), Err(Error::Report(_))));
    }

    #[test]
    fn ranks_ignore_order_of_methods() {
        assert_eq!(dense_ranks(&[0.3, 0.9, 0.3, 0.1]), vec![2, 1, 2, 3]);
    }
}
