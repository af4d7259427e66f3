//! Multi-task training loop: evaluate the tasks, weight their shared
//! gradients, step AdamW.

mod adamw;
mod checkpoint;

use std::fmt;
use std::io::Write;
use std::time::Instant;

use serde::Serialize;

pub use adamw::{AdamSlot, AdamW};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use crate::encoder::{EncoderParams, FlatGradient};
use crate::error::{Error, Result};
use crate::graphstore::Graph;
use crate::pareto::{
    combined_direction, min_norm_weights, saddle_point_residual, SimplexWeights, SolverConfig, TaskGradientMatrix,
};
use crate::pretext::{evaluate, prepare, HeadKind, TaskConfig, TaskHeads, TaskId, TaskInstance, TaskLossResult};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TrainMode {
    /// Min-norm task weights each step.
    Pareto,
    /// Equal weights; the plain sum of task losses.
    Uniform,
    Single(TaskId),
}

impl TrainMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pareto" => Some(TrainMode::Pareto),
            "uniform" => Some(TrainMode::Uniform),
            _ => {
                let inner = s.strip_prefix("single(")?.strip_suffix(')')?;
                TaskId::parse(inner).map(TrainMode::Single)
            }
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainMode::Pareto => f.write_str("pareto"),
            TrainMode::Uniform => f.write_str("uniform"),
            TrainMode::Single(t) => write!(f, "single({t})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Tasks combined in pareto and uniform modes.
    pub tasks: Vec<TaskId>,
    pub steps: usize,
    pub optimizer: AdamW,
    /// Encoder layer widths after the input.
    pub hidden: Vec<usize>,
    pub solver: SolverConfig,
    pub task: TaskConfig,
    pub seed: u64,
    /// Keep a record every this many steps (the last step is always kept).
    pub log_every: usize,
    /// Multiply each head's gradient by its task weight.
    pub scale_head_grads: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Pareto,
            tasks: TaskId::ALL.to_vec(),
            steps: 1000,
            optimizer: AdamW::default(),
            hidden: vec![64, 32],
            solver: SolverConfig::default(),
            task: TaskConfig::default(),
            seed: 0,
            log_every: 1,
            scale_head_grads: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.steps == 0 {
            return fail("steps must be at least 1".into());
        }
        if !(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite()) {
            return fail(format!("learning rate must be positive, got {}", self.optimizer.lr));
        }
        if !(self.optimizer.weight_decay >= 0.0) {
            return fail("weight decay must be ≥ 0".into());
        }
        if self.log_every == 0 {
            return fail("log_every must be at least 1".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return fail(format!("hidden dims {:?} must be non-empty and positive", self.hidden));
        }
        if self.tasks.is_empty() {
            return fail("at least one task is required".into());
        }
        let mut seen = self.tasks.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.tasks.len() {
            return fail("task list has duplicates".into());
        }
        if self.solver.max_iters == 0 || !(self.solver.threshold > 0.0) {
            return fail("solver needs max_iters ≥ 1 and a positive threshold".into());
        }
        self.task.validate()
    }

    pub fn active_tasks(&self) -> Vec<TaskId> {
        match self.mode {
            TrainMode::Single(t) => vec![t],
            _ => self.tasks.clone(),
        }
    }
}

/// Parameters plus optimizer moments.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub encoder: EncoderParams,
    pub heads: TaskHeads,
    encoder_slots: Vec<AdamSlot>,
    head_slots: Vec<AdamSlot>,
    /// Steps completed so far.
    pub step: usize,
}

impl TrainState {
    pub fn init(graph: &Graph, cfg: &TrainConfig) -> Result<Self> {
        let mut dims = vec![graph.feature_dim()];
        dims.extend(&cfg.hidden);
        let encoder = EncoderParams::init(&dims, rng::derive_seed(cfg.seed, &[rng::label("encoder")]))?;
        let heads = TaskHeads::init(
            encoder.output_dim(),
            graph.feature_dim(),
            rng::derive_seed(cfg.seed, &[rng::label("heads")]),
        );
        Ok(Self::from_params(encoder, heads))
    }

    pub fn from_params(encoder: EncoderParams, heads: TaskHeads) -> Self {
        let encoder_slots = encoder.layers().iter().map(|w| AdamSlot::new(w.len())).collect();
        let head_slots = HeadKind::ALL.iter().map(|&k| AdamSlot::new(heads.get(k).len())).collect();
        Self {
            encoder,
            heads,
            encoder_slots,
            head_slots,
            step: 0,
        }
    }

    /// Number of optimizer updates a head has received.
    pub fn head_updates(&self, kind: HeadKind) -> u64 {
        self.head_slots[kind as usize].steps()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    /// Indexed like `TaskId::ALL`; `None` for tasks not evaluated.
    pub losses: [Option<f64>; 5],
    /// Indexed like `TaskId::ALL`; zero for inactive tasks.
    pub alpha: [f64; 5],
    /// `‖αG‖`.
    pub grad_norm: f64,
    /// `min_k ‖g_k‖` over the active tasks.
    pub min_task_grad_norm: f64,
    pub solver_iters: usize,
    pub millis: f64,
}

impl StepRecord {
    pub fn total_loss(&self) -> f64 {
        self.losses.iter().flatten().sum()
    }
}

fn task_rng(seed: u64, task: TaskId, step: usize) -> rng::Rng {
    rng::stream(seed, &[rng::label("task"), task.index() as u64, step as u64])
}

/// Draws this step's samples for every active task.
pub fn prepare_step(state: &TrainState, graph: &Graph, cfg: &TrainConfig) -> Result<Vec<TaskInstance>> {
    cfg.active_tasks()
        .into_iter()
        .map(|t| prepare(t, graph, &cfg.task, &mut task_rng(cfg.seed, t, state.step)))
        .collect()
}

fn evaluate_all(state: &TrainState, instances: &[TaskInstance], cfg: &TrainConfig) -> Result<Vec<TaskLossResult>> {
    instances
        .iter()
        .map(|inst| evaluate(inst, &state.encoder, &state.heads, &cfg.task))
        .collect()
}

struct Weighting {
    alpha: SimplexWeights,
    gradients: TaskGradientMatrix,
    direction: FlatGradient,
    solver_iters: usize,
}

fn weigh(results: &[TaskLossResult], cfg: &TrainConfig) -> Result<Weighting> {
    let raw = TaskGradientMatrix::new(results.iter().map(|r| r.shared_grad.clone()).collect())?;
    let k = raw.tasks();
    let (alpha, solver_iters) = match cfg.mode {
        TrainMode::Pareto => {
            let (a, trace) = min_norm_weights(&raw, &cfg.solver)?;
            (a, trace.iterations())
        }
        TrainMode::Uniform => (SimplexWeights::uniform(k), 0),
        TrainMode::Single(_) => (SimplexWeights::one_hot(1, 0), 0),
    };
    // with normalization on, the weights refer to the unit-norm rows
    let gradients = if cfg.mode == TrainMode::Pareto && cfg.solver.normalize_gradients {
        raw.normalized()
    } else {
        raw
    };
    let direction = combined_direction(&gradients, &alpha)?;
    Ok(Weighting {
        alpha,
        gradients,
        direction,
        solver_iters,
    })
}

/// One optimization step. Task weights are treated as constants.
pub fn train_step(state: &mut TrainState, graph: &Graph, cfg: &TrainConfig) -> Result<StepRecord> {
    let started = Instant::now();
    let tasks = cfg.active_tasks();
    let instances = prepare_step(state, graph, cfg)?;
    let results = evaluate_all(state, &instances, cfg)?;
    for r in &results {
        if !r.loss.is_finite() {
            return Err(Error::TaskDiverged { task: r.task.name() });
        }
    }
    let w = weigh(&results, cfg)?;

    let opt = &cfg.optimizer;
    let shared = state.encoder.unflatten(&w.direction)?;
    for ((layer, grad), slot) in state
        .encoder
        .layers_mut()
        .iter_mut()
        .zip(&shared)
        .zip(&mut state.encoder_slots)
    {
        opt.update(slot, layer.as_mut_slice(), grad.as_slice());
    }
    for (r, &a) in results.iter().zip(w.alpha.as_slice()) {
        if let Some((kind, grad)) = &r.head_grad {
            let scale = if cfg.scale_head_grads { a } else { 1.0 };
            let g = grad.scale(scale);
            opt.update(
                &mut state.head_slots[*kind as usize],
                state.heads.get_mut(*kind).as_mut_slice(),
                g.as_slice(),
            );
        }
    }

    let mut losses = [None; 5];
    let mut alpha = [0.0; 5];
    for ((t, r), &a) in tasks.iter().zip(&results).zip(w.alpha.as_slice()) {
        losses[t.index()] = Some(r.loss);
        alpha[t.index()] = a;
    }
    let record = StepRecord {
        step: state.step,
        losses,
        alpha,
        grad_norm: w.direction.norm(),
        min_task_grad_norm: w.gradients.rows().iter().map(FlatGradient::norm).fold(f64::INFINITY, f64::min),
        solver_iters: w.solver_iters,
        millis: started.elapsed().as_secs_f64() * 1e3,
    };
    state.step += 1;
    Ok(record)
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub records: Vec<StepRecord>,
}

pub fn train_run(graph: &Graph, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_run_with(graph, cfg, |_| {})
}

/// Runs `cfg.steps` steps from a fresh state, passing each kept record to
/// `on_record` as it is produced.
pub fn train_run_with(
    graph: &Graph,
    cfg: &TrainConfig,
    mut on_record: impl FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut state = TrainState::init(graph, cfg)?;
    let mut records = Vec::new();
    for s in 0..cfg.steps {
        let rec = train_step(&mut state, graph, cfg)?;
        if s % cfg.log_every == 0 || s + 1 == cfg.steps {
            on_record(&rec);
            records.push(rec);
        }
    }
    Ok(TrainOutcome { state, records })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DescentReport {
    pub alpha: Vec<f64>,
    pub residual: f64,
    pub direction_norm: f64,
    /// `L_k(after) − L_k(before)` per active task.
    pub deltas: Vec<(TaskId, f64)>,
}

/// Moves the shared parameters by `−ε·αG/‖αG‖` and re-evaluates every task
/// on the same samples. The state is left untouched.
pub fn first_order_descent_check(
    state: &TrainState,
    graph: &Graph,
    cfg: &TrainConfig,
    eps: f64,
) -> Result<DescentReport> {
    let instances = prepare_step(state, graph, cfg)?;
    let before = evaluate_all(state, &instances, cfg)?;
    let w = weigh(&before, cfg)?;
    let residual = saddle_point_residual(&w.gradients, &w.alpha);
    let norm = w.direction.norm();
    let mut moved = state.clone();
    if norm > 0.0 {
        let step = moved.encoder.unflatten(&w.direction)?;
        for (layer, d) in moved.encoder.layers_mut().iter_mut().zip(&step) {
            layer.axpy(-eps / norm, d)?;
        }
    }
    let after = evaluate_all(&moved, &instances, cfg)?;
    Ok(DescentReport {
        alpha: w.alpha.as_slice().to_vec(),
        residual,
        direction_norm: norm,
        deltas: before.iter().zip(&after).map(|(b, a)| (b.task, a.loss - b.loss)).collect(),
    })
}

fn csv_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// `step,loss_<task>...,alpha_<task>...,grad_norm,solver_iters,ms`.
/// Wall time is written as 0 unless `wall_time` is set, so identical runs
/// produce identical bytes.
pub fn write_records_csv(mut out: impl Write, records: &[StepRecord], wall_time: bool) -> Result<()> {
    let mut header = vec!["step".to_string()];
    header.extend(TaskId::ALL.iter().map(|t| format!("loss_{t}")));
    header.extend(TaskId::ALL.iter().map(|t| format!("alpha_{t}")));
    header.extend(["grad_norm", "solver_iters", "ms"].map(String::from));
    writeln!(out, "{}", header.join(","))?;
    for r in records {
        let mut row = vec![r.step.to_string()];
        row.extend(r.losses.iter().map(|l| l.map(csv_num).unwrap_or_default()));
        row.extend(r.alpha.iter().map(|&a| csv_num(a)));
        row.push(csv_num(r.grad_norm));
        row.push(r.solver_iters.to_string());
        row.push(if wall_time { format!("{:.3}", r.millis) } else { "0".into() });
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
