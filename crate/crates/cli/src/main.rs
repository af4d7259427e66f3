mod config;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mtssl_core::encoder::FlatGradient;
use mtssl_core::evalharness::{
    aggregate_report, run_probes, Downstream, EmbeddingTable, MethodRuns, MetricReport, ProbeInputs,
    PARTITION_COUNT,
};
use mtssl_core::graphstore::{generate_sbm, greedy_partition, load_graph, save_graph, split_edges, Graph, SbmParams};
use mtssl_core::pareto::{min_norm_weights, objective, saddle_point_residual, TaskGradientMatrix};
use mtssl_core::pretext::{gradient_check, prepare, TaskId};
use mtssl_core::rng;
use mtssl_core::trainer::{
    load_checkpoint, save_checkpoint, train_run, write_records_csv, Checkpoint, TrainConfig, TrainState,
};
use serde_json::json;

use config::{RunConfig, EDGE_SPLIT};

#[derive(Parser, Debug)]
#[command(name = "mtssl", version, about = "Multi-task self-supervised graph representation learning")]
struct Cli {
    /// Global seed; overrides `seed` from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Flat key = value run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Extra `key=value` settings applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a stochastic block model graph directory.
    Gen(GenArgs),
    /// Train an encoder; writes model.ckpt and steps.csv.
    Train(GraphArg),
    /// Export node embeddings of a checkpoint as TSV.
    Embed(EmbedArgs),
    /// Evaluate trained runs on the four downstream probes.
    Eval(EvalArgs),
    /// Min-norm weights for gradients read from a file.
    Solve(SolveArgs),
    /// Finite-difference check of every pretext task.
    Checkgrad(CheckgradArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value_t = 3)]
    blocks: usize,
    #[arg(long, default_value_t = 600)]
    nodes: usize,
    #[arg(long, default_value_t = 0.05)]
    p_intra: f64,
    #[arg(long, default_value_t = 0.005)]
    p_inter: f64,
    #[arg(long, default_value_t = 16)]
    feat_dim: usize,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
}

#[derive(Args, Debug)]
struct GraphArg {
    /// Graph directory; overrides `graph` from the config file.
    #[arg(long)]
    graph: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    graph: GraphArg,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// A training output directory, optionally named as NAME=DIR. Repeatable.
    #[arg(long = "run", required = true)]
    runs: Vec<String>,
    /// Comma-separated probe seeds; overrides `eval_seeds`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[command(flatten)]
    graph: GraphArg,
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// One gradient per line, entries separated by commas or whitespace.
    gradients: PathBuf,
}

#[derive(Args, Debug)]
struct CheckgradArgs {
    #[command(flatten)]
    graph: GraphArg,
    /// Node count of the generated graph when no graph is given.
    #[arg(long, default_value_t = 12)]
    nodes: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, hide = true)]
    corrupt_adjoint: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    match cli.command {
        Command::Gen(a) => cmd_gen(&a, cfg.train.seed, cli.out.as_deref()).map(|_| ExitCode::SUCCESS),
        Command::Train(a) => {
            set_graph(&mut cfg, a.graph);
            cmd_train(&cfg, cli.out.as_deref()).map(|_| ExitCode::SUCCESS)
        }
        Command::Embed(a) => {
            set_graph(&mut cfg, a.graph.graph);
            cmd_embed(&cfg, &a.checkpoint, cli.out.as_deref()).map(|_| ExitCode::SUCCESS)
        }
        Command::Eval(a) => {
            set_graph(&mut cfg, a.graph.graph);
            if let Some(s) = a.seeds {
                cfg.eval_seeds = s;
            }
            cmd_eval(&cfg, &a.runs, cli.out.as_deref()).map(|_| ExitCode::SUCCESS)
        }
        Command::Solve(a) => cmd_solve(&cfg, &a.gradients, cli.out.as_deref()).map(|_| ExitCode::SUCCESS),
        Command::Checkgrad(a) => {
            set_graph(&mut cfg, a.graph.graph.clone());
            cmd_checkgrad(&cfg, &a, cli.out.as_deref())
        }
    }
}

fn set_graph(cfg: &mut RunConfig, graph: Option<PathBuf>) {
    if graph.is_some() {
        cfg.graph = graph;
    }
}

fn require_graph(cfg: &RunConfig) -> Result<(Graph, String)> {
    let dir = cfg
        .graph
        .as_ref()
        .ok_or_else(|| anyhow!("no graph given; pass --graph or set `graph` in the config"))?;
    let g = load_graph(dir).with_context(|| format!("loading graph {}", dir.display()))?;
    Ok((g, dir.display().to_string()))
}

fn require_out(out: Option<&Path>, what: &str) -> Result<PathBuf> {
    out.map(Path::to_path_buf)
        .ok_or_else(|| anyhow!("{what} needs --out"))
}

fn sci(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes to the file, or to stdout when no path is given.
fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn cmd_gen(a: &GenArgs, seed: u64, out: Option<&Path>) -> Result<()> {
    let out = require_out(out, "gen")?;
    let params = SbmParams {
        blocks: a.blocks,
        nodes: a.nodes,
        p_intra: a.p_intra,
        p_inter: a.p_inter,
        feat_dim: a.feat_dim,
        feat_noise: a.noise,
    };
    let g = generate_sbm(&params, seed)?;
    save_graph(&g, &out)?;
    eprintln!("wrote {} nodes, {} edges to {}", g.n(), g.edge_count(), out.display());
    Ok(())
}

fn train_to(graph: &Graph, train: &TrainConfig, wall_time: bool, ckpt: &Path, csv: &Path) -> Result<()> {
    let mut log = BufWriter::new(fs::File::create(csv).with_context(|| format!("creating {}", csv.display()))?);
    let outcome = train_run(graph, train)?;
    write_records_csv(&mut log, &outcome.records, wall_time)?;
    log.flush()?;
    save_checkpoint(
        ckpt,
        &Checkpoint {
            encoder: outcome.state.encoder,
            adjacency: train.task.adjacency,
            heads: Some(outcome.state.heads),
        },
    )?;
    if let Some(last) = outcome.records.last() {
        eprintln!(
            "{}: {} steps, final total loss {}",
            ckpt.display(),
            last.step + 1,
            sci(last.total_loss())
        );
    }
    Ok(())
}

fn cmd_train(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    cfg.validate()?;
    let out = require_out(out, "train")?;
    let (graph, _) = require_graph(cfg)?;
    fs::create_dir_all(&out)?;
    fs::write(out.join("run.cfg"), cfg.render())?;
    train_to(&graph, &cfg.train, cfg.wall_time, &out.join("model.ckpt"), &out.join("steps.csv"))?;
    if cfg.link_model {
        let split = split_edges(&graph, EDGE_SPLIT, cfg.split_seed)?;
        train_to(
            &split.train_graph,
            &cfg.train,
            cfg.wall_time,
            &out.join("model_link.ckpt"),
            &out.join("steps_link.csv"),
        )?;
    }
    Ok(())
}

fn load_for_graph(path: &Path, graph: &Graph) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    if ckpt.encoder.input_dim() != graph.feature_dim() {
        bail!(
            "{} expects {} input features but the graph has {}",
            path.display(),
            ckpt.encoder.input_dim(),
            graph.feature_dim()
        );
    }
    Ok(ckpt)
}

fn cmd_embed(cfg: &RunConfig, checkpoint: &Path, out: Option<&Path>) -> Result<()> {
    let (graph, graph_id) = require_graph(cfg)?;
    let ckpt = load_for_graph(checkpoint, &graph)?;
    let table = EmbeddingTable::compute(
        &ckpt.encoder,
        ckpt.adjacency,
        &graph,
        checkpoint.display().to_string(),
        graph_id,
    )?;
    let mut text = String::new();
    for r in 0..table.values.rows() {
        let row: Vec<String> = table.values.row(r).iter().map(|&v| sci(v)).collect();
        text.push_str(&row.join("\t"));
        text.push('\n');
    }
    write_output(out, &text)
}

fn parse_run(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((name, dir)) => (name.to_string(), PathBuf::from(dir)),
        None => {
            let dir = PathBuf::from(spec);
            let name = dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| spec.to_string());
            (name, dir)
        }
    }
}

fn evaluate_runs(cfg: &RunConfig, graph: &Graph, runs: &[(String, PathBuf)]) -> Result<Vec<MethodRuns>> {
    let labels = graph
        .labels()
        .ok_or_else(|| anyhow!("evaluation needs a graph with node labels"))?;
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let partitions = greedy_partition(graph, PARTITION_COUNT, cfg.split_seed)?;
    let mut methods = Vec::new();
    for (name, dir) in runs {
        let ckpt = load_for_graph(&dir.join("model.ckpt"), graph)?;
        let emb = ckpt.encoder.encode_features(graph.features(), graph.adjacency(), ckpt.adjacency)?;
        let link_path = dir.join("model_link.ckpt");
        let link = if link_path.exists() {
            let split_seed = match RunConfig::load(&dir.join("run.cfg")) {
                Ok(run_cfg) => run_cfg.split_seed,
                Err(_) => cfg.split_seed,
            };
            let split = split_edges(graph, EDGE_SPLIT, split_seed)?;
            let link_ckpt = load_for_graph(&link_path, graph)?;
            let link_emb = link_ckpt.encoder.encode_features(
                split.train_graph.features(),
                split.train_graph.adjacency(),
                link_ckpt.adjacency,
            )?;
            Some((link_emb, split))
        } else {
            None
        };
        let inputs = ProbeInputs {
            embeddings: &emb,
            labels,
            partitions: &partitions,
            clusters: classes,
            link: link.as_ref().map(|(e, s)| (e, s)),
        };
        let results = cfg
            .eval_seeds
            .iter()
            .map(|&s| run_probes(&inputs, s))
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("evaluating {name}"))?;
        if link.is_none() {
            eprintln!("{name}: no model_link.ckpt, link prediction is skipped");
        }
        methods.push(MethodRuns {
            method: name.clone(),
            runs: results,
        });
    }
    Ok(methods)
}

fn metrics_csv(methods: &[MethodRuns], seeds: &[u64]) -> String {
    let mut text = String::from("method,task,metric,seed,value\n");
    for m in methods {
        for task in Downstream::ALL {
            for (run, seed) in m.runs.iter().zip(seeds) {
                let value = run[task.index()].map(sci).unwrap_or_default();
                text.push_str(&format!("{},{},{},{},{}\n", m.method, task, task.metric(), seed, value));
            }
        }
    }
    text
}

fn cmd_eval(cfg: &RunConfig, runs: &[String], out: Option<&Path>) -> Result<()> {
    cfg.validate()?;
    let (graph, _) = require_graph(cfg)?;
    let runs: Vec<(String, PathBuf)> = runs.iter().map(|r| parse_run(r)).collect();
    let methods = evaluate_runs(cfg, &graph, &runs)?;
    let csv = metrics_csv(&methods, &cfg.eval_seeds);
    let report: Option<MetricReport> = match aggregate_report(&methods) {
        Ok(r) => Some(r),
        Err(e) if out.is_some() => {
            eprintln!("no aggregate report: {e}");
            None
        }
        Err(e) => return Err(e.into()),
    };
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("metrics.csv"), csv)?;
            if let Some(r) = &report {
                fs::write(dir.join("report.json"), serde_json::to_string_pretty(r)? + "\n")?;
            }
        }
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn read_gradients(path: &Path) -> Result<TaskGradientMatrix> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| anyhow!("{}:{}: bad number `{s}`", path.display(), i + 1)))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(FlatGradient::new(row));
    }
    Ok(TaskGradientMatrix::new(rows)?)
}

fn cmd_solve(cfg: &RunConfig, gradients: &Path, out: Option<&Path>) -> Result<()> {
    let g = read_gradients(gradients)?;
    let (alpha, trace) = min_norm_weights(&g, &cfg.train.solver)?;
    let report = json!({
        "alpha": alpha.as_slice(),
        "phi": objective(&g, &alpha),
        "iterations": trace.iterations(),
        "residual": saddle_point_residual(&g, &alpha),
        "termination": format!("{:?}", trace.termination),
    });
    write_output(out, &(serde_json::to_string_pretty(&report)? + "\n"))
}

fn checkgrad_graph(cfg: &RunConfig, nodes: usize) -> Result<Graph> {
    if cfg.graph.is_some() {
        return Ok(require_graph(cfg)?.0);
    }
    let params = SbmParams {
        blocks: 3,
        nodes,
        p_intra: 0.5,
        p_inter: 0.1,
        feat_dim: 4,
        feat_noise: 0.5,
    };
    Ok(generate_sbm(&params, cfg.train.seed)?)
}

fn cmd_checkgrad(cfg: &RunConfig, a: &CheckgradArgs, out: Option<&Path>) -> Result<ExitCode> {
    cfg.validate()?;
    let graph = checkgrad_graph(cfg, a.nodes)?;
    let seed = cfg.train.seed;
    let TrainState { encoder, heads, .. } = TrainState::init(&graph, &cfg.train)?;
    let fault = a.corrupt_adjoint.then_some(1.0);
    let mut text = String::from("task,worst_rel_error,status\n");
    let mut all_pass = true;
    for task in TaskId::ALL {
        let mut stream = rng::stream(seed, &[rng::label("checkgrad"), task.index() as u64]);
        let inst = prepare(task, &graph, &cfg.train.task, &mut stream)?;
        let check = gradient_check(&inst, &encoder, &heads, &cfg.train.task, a.step, fault)?;
        let pass = check.passes(a.tolerance);
        all_pass &= pass;
        text.push_str(&format!("{task},{},{}\n", sci(check.worst()), if pass { "pass" } else { "FAIL" }));
    }
    write_output(out, &text)?;
    Ok(if all_pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
