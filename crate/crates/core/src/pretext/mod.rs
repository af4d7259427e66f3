//! The five self-supervised objectives.
//!
//! Each task is split into [`prepare`], which draws every random quantity
//! (subgraphs, augmentations, pairs, permutations), and [`evaluate`], which is
//! a deterministic function of a prepared [`TaskInstance`] and the current
//! parameters. Reusing an instance gives frozen-sample evaluations.

mod objectives;

use std::fmt;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use objectives::{
    feat_rec_criterion, mi_ng_criterion, mi_nsg_criterion, rep_decor_criterion, topo_rec_criterion,
    COSINE_EPS, STANDARDIZE_EPS,
};

use crate::encoder::{AdjacencyMode, EncoderParams, FlatGradient};
use crate::error::{Error, Result};
use crate::graphstore::{
    drop_edges, mask_features, sample_nodes, shuffle_features, AugmentationSpec, Graph, Sampler, SeedCount,
    SubgraphSample,
};
use crate::numcore::{finite_diff_check, Bindings, DenseMatrix, SparseAdjacency, Tape, Var};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskId {
    FeatRec,
    TopoRec,
    RepDecor,
    MiNg,
    MiNsg,
}

impl TaskId {
    pub const ALL: [TaskId; 5] = [
        TaskId::FeatRec,
        TaskId::TopoRec,
        TaskId::RepDecor,
        TaskId::MiNg,
        TaskId::MiNsg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskId::FeatRec => "feat_rec",
            TaskId::TopoRec => "topo_rec",
            TaskId::RepDecor => "rep_decor",
            TaskId::MiNg => "mi_ng",
            TaskId::MiNsg => "mi_nsg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&t| t == self).unwrap()
    }

    /// The head this task trains, if any.
    pub fn head(self) -> Option<HeadKind> {
        match self {
            TaskId::FeatRec => Some(HeadKind::Decoder),
            TaskId::TopoRec => Some(HeadKind::Topo),
            TaskId::MiNg => Some(HeadKind::MiNg),
            TaskId::RepDecor | TaskId::MiNsg => None,
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HeadKind {
    Decoder,
    Topo,
    MiNg,
}

impl HeadKind {
    pub const ALL: [HeadKind; 3] = [HeadKind::Decoder, HeadKind::Topo, HeadKind::MiNg];

    pub fn param_name(self) -> &'static str {
        match self {
            HeadKind::Decoder => "head.dec",
            HeadKind::Topo => "head.topo",
            HeadKind::MiNg => "head.ming",
        }
    }
}

/// Task-specific parameters: feature decoder (d×D), link scorer (d×1) and
/// node/graph discriminator (2d×1).
#[derive(Clone, Debug, PartialEq)]
pub struct TaskHeads {
    pub feat_decoder: DenseMatrix,
    pub topo_scorer: DenseMatrix,
    pub ming_scorer: DenseMatrix,
}

impl TaskHeads {
    pub fn init(rep_dim: usize, feat_dim: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, &[rng::label("heads.init")]);
        let mut glorot = |r: usize, c: usize| {
            let bound = (6.0 / (r + c) as f64).sqrt();
            DenseMatrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-bound..bound)).collect())
                .expect("sized by construction")
        };
        Self {
            feat_decoder: glorot(rep_dim, feat_dim),
            topo_scorer: glorot(rep_dim, 1),
            ming_scorer: glorot(2 * rep_dim, 1),
        }
    }

    pub fn zeros(rep_dim: usize, feat_dim: usize) -> Self {
        Self {
            feat_decoder: DenseMatrix::zeros(rep_dim, feat_dim),
            topo_scorer: DenseMatrix::zeros(rep_dim, 1),
            ming_scorer: DenseMatrix::zeros(2 * rep_dim, 1),
        }
    }

    pub fn get(&self, kind: HeadKind) -> &DenseMatrix {
        match kind {
            HeadKind::Decoder => &self.feat_decoder,
            HeadKind::Topo => &self.topo_scorer,
            HeadKind::MiNg => &self.ming_scorer,
        }
    }

    pub fn get_mut(&mut self, kind: HeadKind) -> &mut DenseMatrix {
        match kind {
            HeadKind::Decoder => &mut self.feat_decoder,
            HeadKind::Topo => &mut self.topo_scorer,
            HeadKind::MiNg => &mut self.ming_scorer,
        }
    }

    pub fn check_shapes(&self, rep_dim: usize, feat_dim: usize) -> Result<()> {
        let expected = [(rep_dim, feat_dim), (rep_dim, 1), (2 * rep_dim, 1)];
        for (kind, want) in HeadKind::ALL.into_iter().zip(expected) {
            if self.get(kind).shape() != want {
                return Err(Error::dim(
                    kind.param_name(),
                    format!("expected {want:?}, got {:?}", self.get(kind).shape()),
                ));
            }
        }
        Ok(())
    }

    pub fn bind(&self, b: &mut Bindings) {
        for kind in HeadKind::ALL {
            b.insert(kind.param_name().to_string(), self.get(kind).clone());
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub feat_rec: AugmentationSpec,
    pub topo_rec: AugmentationSpec,
    pub rep_decor: AugmentationSpec,
    pub mi_ng: AugmentationSpec,
    pub mi_nsg: AugmentationSpec,
    /// Positive (and negative) pair count for link reconstruction.
    pub topo_batch: usize,
    pub temperature: f64,
    /// Weight of the decorrelation term.
    pub decor_lambda: f64,
    pub adjacency: AdjacencyMode,
}

impl Default for TaskConfig {
    fn default() -> Self {
        let khop = |hop_order, ratio| AugmentationSpec {
            sampler: Sampler::KHop,
            feature_mask_ratio: ratio,
            edge_drop_ratio: ratio,
            hop_order,
            seed_count: SeedCount::Fraction(0.5),
        };
        Self {
            feat_rec: AugmentationSpec {
                sampler: Sampler::KHop,
                feature_mask_ratio: 0.5,
                edge_drop_ratio: 0.35,
                hop_order: 0,
                seed_count: SeedCount::Full,
            },
            topo_rec: khop(2, 0.0),
            rep_decor: AugmentationSpec {
                sampler: Sampler::UniformNodes,
                ..khop(0, 0.2)
            },
            mi_ng: khop(3, 0.0),
            mi_nsg: khop(3, 0.2),
            topo_batch: 256,
            temperature: 0.1,
            decor_lambda: 1e-3,
            adjacency: AdjacencyMode::SymNorm,
        }
    }
}

impl TaskConfig {
    pub fn augmentation(&self, task: TaskId) -> &AugmentationSpec {
        match task {
            TaskId::FeatRec => &self.feat_rec,
            TaskId::TopoRec => &self.topo_rec,
            TaskId::RepDecor => &self.rep_decor,
            TaskId::MiNg => &self.mi_ng,
            TaskId::MiNsg => &self.mi_nsg,
        }
    }

    pub fn augmentation_mut(&mut self, task: TaskId) -> &mut AugmentationSpec {
        match task {
            TaskId::FeatRec => &mut self.feat_rec,
            TaskId::TopoRec => &mut self.topo_rec,
            TaskId::RepDecor => &mut self.rep_decor,
            TaskId::MiNg => &mut self.mi_ng,
            TaskId::MiNsg => &mut self.mi_nsg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for t in TaskId::ALL {
            self.augmentation(t).validate()?;
        }
        if !(self.feat_rec.feature_mask_ratio > 0.0) {
            return Err(Error::Config("feat_rec mask ratio must be positive".into()));
        }
        if self.topo_batch == 0 {
            return Err(Error::Config("topo_batch must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.decor_lambda >= 0.0 && self.decor_lambda.is_finite()) {
            return Err(Error::Config(format!("decor_lambda must be ≥ 0, got {}", self.decor_lambda)));
        }
        Ok(())
    }
}

/// All randomness a task consumes in one evaluation, already drawn.
#[derive(Clone, Debug)]
pub enum TaskInstance {
    FeatRec {
        /// Edge-dropped sample with masked feature rows zeroed.
        sample: SubgraphSample,
        /// Unmasked features of the sample.
        target: DenseMatrix,
        mask: Vec<bool>,
    },
    TopoRec {
        sample: SubgraphSample,
        positives: Vec<(usize, usize)>,
        negatives: Vec<(usize, usize)>,
    },
    RepDecor {
        first: SubgraphSample,
        second: SubgraphSample,
    },
    MiNg {
        sample: SubgraphSample,
        corrupt: DenseMatrix,
    },
    MiNsg {
        first: SubgraphSample,
        second: SubgraphSample,
    },
}

impl TaskInstance {
    pub fn task(&self) -> TaskId {
        match self {
            TaskInstance::FeatRec { .. } => TaskId::FeatRec,
            TaskInstance::TopoRec { .. } => TaskId::TopoRec,
            TaskInstance::RepDecor { .. } => TaskId::RepDecor,
            TaskInstance::MiNg { .. } => TaskId::MiNg,
            TaskInstance::MiNsg { .. } => TaskId::MiNsg,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TaskLossResult {
    pub task: TaskId,
    pub loss: f64,
    pub shared_grad: FlatGradient,
    /// Gradient of the task's own head, if it has one.
    pub head_grad: Option<(HeadKind, DenseMatrix)>,
}

/// A built loss graph with its bindings, ready for forward/backward or a
/// finite-difference check.
pub struct TaskTape {
    pub tape: Tape,
    pub root: Var,
    pub bindings: Bindings,
}

fn augment(base: &SubgraphSample, spec: &AugmentationSpec, rng: &mut impl Rng) -> Result<SubgraphSample> {
    let dropped = drop_edges(base, spec.edge_drop_ratio, rng)?;
    Ok(mask_features(&dropped, spec.feature_mask_ratio, rng)?.0)
}

/// Draws `count` positive pairs from the edges of `adj` (without replacement
/// unless the supply is short) and `count` non-edge pairs by rejection.
pub fn sample_pairs(
    adj: &SparseAdjacency,
    count: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<(usize, usize)>, Vec<(usize, usize)>)> {
    let n = adj.n();
    let edges = adj.undirected_edges();
    if edges.is_empty() {
        return Err(Error::Sampling("link reconstruction needs at least one edge".into()));
    }
    if edges.len() == n * (n - 1) / 2 {
        return Err(Error::Sampling("link reconstruction needs at least one non-edge".into()));
    }
    let positives = if count <= edges.len() {
        index::sample(rng, edges.len(), count).into_iter().map(|i| edges[i]).collect()
    } else {
        (0..count).map(|_| edges[rng.gen_range(0..edges.len())]).collect()
    };
    let mut negatives = Vec::with_capacity(count);
    let mut trials = 0usize;
    while negatives.len() < count {
        if trials >= 100 * count {
            return Err(Error::Sampling(format!(
                "found {} of {count} negative pairs in {trials} trials",
                negatives.len()
            )));
        }
        trials += 1;
        let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if i != j && !adj.has_edge(i, j) {
            negatives.push((i.min(j), i.max(j)));
        }
    }
    Ok((positives, negatives))
}

/// Draws the samples, augmentations and pairs for one evaluation of `task`.
pub fn prepare(task: TaskId, graph: &Graph, cfg: &TaskConfig, rng: &mut impl Rng) -> Result<TaskInstance> {
    let spec = cfg.augmentation(task);
    let base = sample_nodes(graph, spec, rng)?;
    Ok(match task {
        TaskId::FeatRec => {
            let dropped = drop_edges(&base, spec.edge_drop_ratio, rng)?;
            let target = dropped.features.clone();
            let (sample, mask) = mask_features(&dropped, spec.feature_mask_ratio, rng)?;
            TaskInstance::FeatRec { sample, target, mask }
        }
        TaskId::TopoRec => {
            let sample = augment(&base, spec, rng)?;
            let (positives, negatives) = sample_pairs(&sample.adjacency, cfg.topo_batch, rng)?;
            TaskInstance::TopoRec {
                sample,
                positives,
                negatives,
            }
        }
        TaskId::RepDecor | TaskId::MiNsg => {
            let first = augment(&base, spec, rng)?;
            let second = augment(&base, spec, rng)?;
            if task == TaskId::RepDecor {
                TaskInstance::RepDecor { first, second }
            } else {
                TaskInstance::MiNsg { first, second }
            }
        }
        TaskId::MiNg => {
            let sample = augment(&base, spec, rng)?;
            let corrupt = shuffle_features(&sample, rng).features;
            TaskInstance::MiNg { sample, corrupt }
        }
    })
}

fn same_nodes(a: &SubgraphSample, b: &SubgraphSample) -> Result<()> {
    if a.node_ids != b.node_ids {
        return Err(Error::contract("the two views cover different node sets"));
    }
    Ok(())
}

/// Local row of every seed node; the contrastive task compares anchors only.
pub fn anchor_rows(sample: &SubgraphSample) -> Result<Vec<usize>> {
    sample
        .seed_ids
        .iter()
        .map(|id| {
            sample
                .node_ids
                .binary_search(id)
                .map_err(|_| Error::contract(format!("seed {id} is not in the sample")))
        })
        .collect()
}

/// Builds the loss graph of a prepared instance.
pub fn task_tape(
    inst: &TaskInstance,
    encoder: &EncoderParams,
    heads: &TaskHeads,
    cfg: &TaskConfig,
) -> Result<TaskTape> {
    heads.check_shapes(encoder.output_dim(), encoder.input_dim())?;
    let mut tape = Tape::new();
    let mode = cfg.adjacency;
    let encode = |tape: &mut Tape, features: &DenseMatrix, adj: &Arc<SparseAdjacency>| -> Result<Var> {
        if features.cols() != encoder.input_dim() {
            return Err(Error::dim(
                "encode",
                format!("features have {} columns, encoder expects {}", features.cols(), encoder.input_dim()),
            ));
        }
        let x = tape.constant(features.clone());
        Ok(encoder.encode_on_tape(tape, x, adj))
    };
    let root = match inst {
        TaskInstance::FeatRec { sample, target, mask } => {
            if mask.len() != sample.n() || !mask.iter().any(|&m| m) {
                return Err(Error::contract("feature reconstruction needs at least one masked node"));
            }
            let prop = mode.propagation(&sample.adjacency);
            let h = encode(&mut tape, &sample.features, &prop)?;
            // re-mask: masked nodes contribute nothing to the decoder input
            let mut keep = DenseMatrix::zeros(sample.n(), encoder.output_dim());
            for (i, _) in mask.iter().enumerate().filter(|(_, m)| !**m) {
                keep.row_mut(i).iter_mut().for_each(|v| *v = 1.0);
            }
            let keep = tape.constant(keep);
            let kept = tape.hadamard(h, keep);
            let w = tape.input(HeadKind::Decoder.param_name());
            let projected = tape.matmul(kept, w);
            let xhat = tape.spmm(prop, projected);
            objectives::feat_rec_objective(&mut tape, xhat, target, mask)?
        }
        TaskInstance::TopoRec {
            sample,
            positives,
            negatives,
        } => {
            let n = sample.n();
            if positives.iter().chain(negatives).any(|&(i, j)| i >= n || j >= n) {
                return Err(Error::contract("pair index outside the sample"));
            }
            let prop = mode.propagation(&sample.adjacency);
            let h = encode(&mut tape, &sample.features, &prop)?;
            let w = tape.input(HeadKind::Topo.param_name());
            let pairs: Vec<(usize, usize)> = positives.iter().chain(negatives).copied().collect();
            let logits = objectives::pair_logits(&mut tape, h, &pairs, w);
            let signs: Vec<f64> = (0..pairs.len())
                .map(|i| if i < positives.len() { 1.0 } else { -1.0 })
                .collect();
            objectives::signed_bce_objective(&mut tape, logits, &signs)
        }
        TaskInstance::RepDecor { first, second } => {
            same_nodes(first, second)?;
            let h1 = encode(&mut tape, &first.features, &mode.propagation(&first.adjacency))?;
            let h2 = encode(&mut tape, &second.features, &mode.propagation(&second.adjacency))?;
            objectives::rep_decor_objective(&mut tape, h1, h2, first.n(), encoder.output_dim(), cfg.decor_lambda)
        }
        TaskInstance::MiNg { sample, corrupt } => {
            if sample.n() < 2 {
                return Err(Error::contract("graph discrimination needs at least two nodes"));
            }
            let prop = mode.propagation(&sample.adjacency);
            let clean = encode(&mut tape, &sample.features, &prop)?;
            let bad = encode(&mut tape, corrupt, &prop)?;
            let w = tape.input(HeadKind::MiNg.param_name());
            objectives::mi_ng_objective(&mut tape, clean, bad, sample.n(), w)
        }
        TaskInstance::MiNsg { first, second } => {
            same_nodes(first, second)?;
            let anchors = anchor_rows(first)?;
            if anchors.len() < 2 {
                return Err(Error::contract("contrastive task needs at least two anchor nodes"));
            }
            let h1 = encode(&mut tape, &first.features, &mode.propagation(&first.adjacency))?;
            let h2 = encode(&mut tape, &second.features, &mode.propagation(&second.adjacency))?;
            let rows = anchors.len();
            let a1 = tape.gather_rows(h1, anchors.clone());
            let a2 = tape.gather_rows(h2, anchors);
            objectives::mi_nsg_objective(&mut tape, a1, a2, rows, cfg.temperature)
        }
    };
    let mut bindings = Bindings::new();
    encoder.bind(&mut bindings);
    if let Some(kind) = inst.task().head() {
        bindings.insert(kind.param_name().to_string(), heads.get(kind).clone());
    }
    Ok(TaskTape { tape, root, bindings })
}

/// Loss and gradients of a prepared instance at the given parameters.
pub fn evaluate(
    inst: &TaskInstance,
    encoder: &EncoderParams,
    heads: &TaskHeads,
    cfg: &TaskConfig,
) -> Result<TaskLossResult> {
    let task = inst.task();
    let diverged = |e: Error| match e {
        Error::NonFinite { .. } => Error::TaskDiverged { task: task.name() },
        other => other,
    };
    let TaskTape {
        mut tape,
        root,
        bindings,
    } = task_tape(inst, encoder, heads, cfg)?;
    let loss = tape
        .forward(root, &bindings)
        .map_err(diverged)?
        .to_scalar()
        .expect("objectives are scalar");
    let mut names = encoder.param_names();
    if let Some(kind) = task.head() {
        names.push(kind.param_name().to_string());
    }
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut grads = tape.backward(&refs)?;
    let shared: Vec<DenseMatrix> = encoder
        .param_names()
        .iter()
        .map(|n| grads.remove(n).expect("encoder gradient"))
        .collect();
    let shared_grad = encoder.flatten(&shared)?;
    if !shared_grad.as_slice().iter().all(|v| v.is_finite()) {
        return Err(Error::TaskDiverged { task: task.name() });
    }
    let head_grad = task
        .head()
        .map(|kind| (kind, grads.remove(kind.param_name()).expect("head gradient")));
    Ok(TaskLossResult {
        task,
        loss,
        shared_grad,
        head_grad,
    })
}

/// Samples and evaluates one task.
pub fn run_task(
    task: TaskId,
    graph: &Graph,
    encoder: &EncoderParams,
    heads: &TaskHeads,
    cfg: &TaskConfig,
    rng: &mut impl Rng,
) -> Result<TaskLossResult> {
    let inst = prepare(task, graph, cfg, rng)?;
    evaluate(&inst, encoder, heads, cfg)
}

/// Finite-difference comparison of one task's analytic gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub task: TaskId,
    /// Worst relative error per parameter name (encoder layers, then head).
    pub params: Vec<(String, f64)>,
}

impl GradientCheck {
    pub fn worst(&self) -> f64 {
        self.params.iter().map(|p| p.1).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.worst() < tol
    }
}

/// Checks every encoder layer and the task head of a prepared instance.
/// `prelu_fault` corrupts the activation adjoint and exists as a negative
/// control.
pub fn gradient_check(
    inst: &TaskInstance,
    encoder: &EncoderParams,
    heads: &TaskHeads,
    cfg: &TaskConfig,
    h: f64,
    prelu_fault: Option<f64>,
) -> Result<GradientCheck> {
    let mut tt = task_tape(inst, encoder, heads, cfg)?;
    tt.tape.inject_prelu_fault(prelu_fault);
    let mut names = encoder.param_names();
    if let Some(k) = inst.task().head() {
        names.push(k.param_name().into());
    }
    let params = names
        .into_iter()
        .map(|name| {
            let err = finite_diff_check(&mut tt.tape, tt.root, &tt.bindings, &name, h)?;
            Ok((name, err))
        })
        .collect::<Result<_>>()?;
    Ok(GradientCheck { task: inst.task(), params })
}
