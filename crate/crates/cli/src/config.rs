//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, unknown
//! keys are rejected and a key may appear only once per file.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use mtssl_core::encoder::AdjacencyMode;
use mtssl_core::graphstore::{AugmentationSpec, Sampler, SeedCount};
use mtssl_core::pretext::TaskId;
use mtssl_core::trainer::{TrainConfig, TrainMode};

/// Ratios of the train/validation/test edge split used for link prediction.
pub const EDGE_SPLIT: [f64; 3] = [0.7, 0.1, 0.2];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub graph: Option<PathBuf>,
    pub train: TrainConfig,
    /// Also train a second model on the train-edge graph for link prediction.
    pub link_model: bool,
    /// Seed of the edge split and of the partition targets.
    pub split_seed: u64,
    /// Fill the `ms` column of the step log with measured wall time.
    pub wall_time: bool,
    pub eval_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            graph: None,
            train: TrainConfig::default(),
            link_model: false,
            split_seed: 0,
            wall_time: false,
            eval_seeds: (0..10).collect(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| anyhow!("`{key}` cannot take the value `{value}`"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => bail!("`{key}` expects true or false, got `{value}`"),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_seeds(key: &str, value: &str) -> Result<SeedCount> {
    if value == "full" {
        return Ok(SeedCount::Full);
    }
    if let Some(f) = value.strip_prefix("fraction:") {
        return Ok(SeedCount::Fraction(parse(key, f)?));
    }
    if let Some(c) = value.strip_prefix("count:") {
        return Ok(SeedCount::Count(parse(key, c)?));
    }
    bail!("`{key}` expects full, fraction:<f> or count:<n>, got `{value}`")
}

fn seeds_str(s: SeedCount) -> String {
    match s {
        SeedCount::Full => "full".into(),
        SeedCount::Fraction(f) => format!("fraction:{f}"),
        SeedCount::Count(c) => format!("count:{c}"),
    }
}

fn sampler_str(s: Sampler) -> &'static str {
    match s {
        Sampler::KHop => "khop",
        Sampler::UniformNodes => "uniform",
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse_str(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", i + 1))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                bail!("line {}: `{key}` is set twice", i + 1);
            }
            cfg.set(key, value.trim()).with_context(|| format!("line {}", i + 1))?;
        }
        Ok(cfg)
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| anyhow!("override `{assignment}` is not key=value"))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "graph" => self.graph = Some(PathBuf::from(value)),
            "seed" => t.seed = parse(key, value)?,
            "mode" => t.mode = TrainMode::parse(value).ok_or_else(|| anyhow!("unknown mode `{value}`"))?,
            "tasks" => {
                t.tasks = value
                    .split(',')
                    .map(str::trim)
                    .map(|s| TaskId::parse(s).ok_or_else(|| anyhow!("unknown task `{s}`")))
                    .collect::<Result<_>>()?
            }
            "steps" => t.steps = parse(key, value)?,
            "hidden" => t.hidden = parse_list(key, value)?,
            "lr" => t.optimizer.lr = parse(key, value)?,
            "beta1" => t.optimizer.beta1 = parse(key, value)?,
            "beta2" => t.optimizer.beta2 = parse(key, value)?,
            "adam_eps" => t.optimizer.eps = parse(key, value)?,
            "weight_decay" => t.optimizer.weight_decay = parse(key, value)?,
            "log_every" => t.log_every = parse(key, value)?,
            "scale_head_grads" => t.scale_head_grads = parse_bool(key, value)?,
            "solver.max_iters" => t.solver.max_iters = parse(key, value)?,
            "solver.threshold" => t.solver.threshold = parse(key, value)?,
            "solver.normalize_gradients" => t.solver.normalize_gradients = parse_bool(key, value)?,
            "solver.polish" => t.solver.polish = parse_bool(key, value)?,
            "adjacency" => {
                t.task.adjacency = AdjacencyMode::parse(value).ok_or_else(|| anyhow!("unknown adjacency `{value}`"))?
            }
            "topo_batch" => t.task.topo_batch = parse(key, value)?,
            "temperature" => t.task.temperature = parse(key, value)?,
            "decor_lambda" => t.task.decor_lambda = parse(key, value)?,
            "link_model" => self.link_model = parse_bool(key, value)?,
            "split_seed" => self.split_seed = parse(key, value)?,
            "wall_time" => self.wall_time = parse_bool(key, value)?,
            "eval_seeds" => self.eval_seeds = parse_list(key, value)?,
            _ => {
                let (task, field) = key.split_once('.').ok_or_else(|| anyhow!("unknown key `{key}`"))?;
                let task = TaskId::parse(task).ok_or_else(|| anyhow!("unknown key `{key}`"))?;
                let aug: &mut AugmentationSpec = t.task.augmentation_mut(task);
                match field {
                    "sampler" => {
                        aug.sampler = match value {
                            "khop" => Sampler::KHop,
                            "uniform" => Sampler::UniformNodes,
                            _ => bail!("`{key}` expects khop or uniform, got `{value}`"),
                        }
                    }
                    "hop_order" => aug.hop_order = parse(key, value)?,
                    "seeds" => aug.seed_count = parse_seeds(key, value)?,
                    "mask_ratio" => aug.feature_mask_ratio = parse(key, value)?,
                    "drop_ratio" => aug.edge_drop_ratio = parse(key, value)?,
                    _ => bail!("unknown key `{key}`"),
                }
            }
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let t = &self.train;
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        if let Some(g) = &self.graph {
            put("graph", g.display().to_string());
        }
        put("seed", t.seed.to_string());
        put("mode", t.mode.to_string());
        put("tasks", join(&t.tasks));
        put("steps", t.steps.to_string());
        put("hidden", join(&t.hidden));
        put("lr", t.optimizer.lr.to_string());
        put("beta1", t.optimizer.beta1.to_string());
        put("beta2", t.optimizer.beta2.to_string());
        put("adam_eps", t.optimizer.eps.to_string());
        put("weight_decay", t.optimizer.weight_decay.to_string());
        put("log_every", t.log_every.to_string());
        put("scale_head_grads", t.scale_head_grads.to_string());
        put("solver.max_iters", t.solver.max_iters.to_string());
        put("solver.threshold", t.solver.threshold.to_string());
        put("solver.normalize_gradients", t.solver.normalize_gradients.to_string());
        put("solver.polish", t.solver.polish.to_string());
        put("adjacency", t.task.adjacency.as_str().to_string());
        put("topo_batch", t.task.topo_batch.to_string());
        put("temperature", t.task.temperature.to_string());
        put("decor_lambda", t.task.decor_lambda.to_string());
        for task in TaskId::ALL {
            let a = t.task.augmentation(task);
            put(&format!("{task}.sampler"), sampler_str(a.sampler).into());
            put(&format!("{task}.hop_order"), a.hop_order.to_string());
            put(&format!("{task}.seeds"), seeds_str(a.seed_count));
            put(&format!("{task}.mask_ratio"), a.feature_mask_ratio.to_string());
            put(&format!("{task}.drop_ratio"), a.edge_drop_ratio.to_string());
        }
        put("link_model", self.link_model.to_string());
        put("split_seed", self.split_seed.to_string());
        put("wall_time", self.wall_time.to_string());
        put("eval_seeds", join(&self.eval_seeds));
        out
    }

    pub fn render(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.eval_seeds.is_empty() {
            bail!("eval_seeds must list at least one seed");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse_str(&cfg.render()).unwrap(), cfg);
    }

    #[test]
    fn every_key_round_trips() {
        let text = "graph = data/g\nseed = 9\nmode = single(mi_nsg)\ntasks = feat_rec,mi_ng\nsteps = 7\n\
                    hidden = 8,4,2\nlr = 0.001\nsolver.polish = false\nadjacency = raw\n\
                    mi_nsg.seeds = count:40\nrep_decor.sampler = khop\ntopo_rec.seeds = full\n\
                    feat_rec.drop_ratio = 0.125\nlink_model = true\neval_seeds = 3,1\nwall_time = true\n";
        let cfg = RunConfig::parse_str(text).unwrap();
        assert_eq!(cfg.train.mode, TrainMode::Single(TaskId::MiNsg));
        assert_eq!(cfg.train.hidden, vec![8, 4, 2]);
        assert_eq!(cfg.train.task.mi_nsg.seed_count, SeedCount::Count(40));
        assert_eq!(cfg.eval_seeds, vec![3, 1]);
        assert_eq!(RunConfig::parse_str(&cfg.render()).unwrap(), cfg);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = RunConfig::parse_str("# header\n\nsteps = 3 # trailing\n").unwrap();
        assert_eq!(cfg.train.steps, 3);
    }

    #[test]
    fn unknown_and_repeated_keys_are_rejected() {
        for bad in ["stepz = 3", "mi_ng.colour = red", "steps = 1\nsteps = 2", "steps", "steps = -1", "mode = best"] {
            assert!(RunConfig::parse_str(bad).is_err(), "{bad}");
        }
        let err = RunConfig::parse_str("seed = 1\nbogus = 2\n").unwrap_err();
        assert!(format!("{err:#}").contains("line 2"), "{err:#}");
    }

    #[test]
    fn overrides_apply_after_parsing() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("steps=12").unwrap();
        assert_eq!(cfg.train.steps, 12);
        assert!(cfg.apply_override("steps").is_err());
    }
}
