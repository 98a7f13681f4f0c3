//! Flat `key = value` run configuration with `#` comments.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{CoreError, Result};
use crate::heads::LossKind;
use crate::model::{AggregatorKind, CountTransform, ModelConfig, PositionalKind, Task};
use crate::paths::MiningParams;
use crate::train::{Ablations, TrainConfig};

/// Every recognised key, in echo order.
pub const KEYS: &[&str] = &[
    "train",
    "valid",
    "test",
    "corpus",
    "out_dir",
    "task",
    "seed",
    "num_paths",
    "max_len",
    "dim",
    "ppe",
    "ff_dim",
    "heads",
    "layers",
    "dropout",
    "aggregator",
    "aggregator_layers",
    "positional",
    "projector_hidden",
    "count_transform",
    "loss",
    "label_smoothing",
    "negatives",
    "valid_negatives",
    "lr",
    "batch_size",
    "accumulate",
    "max_epochs",
    "patience",
    "min_delta",
    "no_aggregator",
    "no_multiple_paths",
    "standard_positionals",
];

/// Defaults reproduce the FB15k-237 link-prediction configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    pub num_paths: usize,
    /// Before ablations.
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub ablations: Ablations,
    projector_hidden_set: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: None,
            valid: None,
            test: None,
            corpus: None,
            out_dir: None,
            seed: 0,
            num_paths: 20,
            model: ModelConfig::default(),
            training: TrainConfig::default(),
            ablations: Ablations::default(),
            projector_hidden_set: false,
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CoreError::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CoreError::Config(format!(
            "`{key}`: expected true or false, got `{value}`"
        ))),
    }
}

fn choice<T: Copy>(key: &str, value: &str, options: &[(&str, T)]) -> Result<T> {
    options
        .iter()
        .find(|(name, _)| *name == value)
        .map(|&(_, v)| v)
        .ok_or_else(|| {
            let names: Vec<_> = options.iter().map(|(n, _)| *n).collect();
            CoreError::Config(format!("`{key}`: expected one of {names:?}, got `{value}`"))
        })
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

const AGGREGATORS: &[(&str, AggregatorKind)] = &[
    ("transformer", AggregatorKind::Transformer),
    ("average", AggregatorKind::Average),
];
const POSITIONALS: &[(&str, PositionalKind)] = &[
    ("entity", PositionalKind::EntityFocused),
    ("standard", PositionalKind::Standard),
];
const TRANSFORMS: &[(&str, CountTransform)] = &[
    ("raw", CountTransform::Raw),
    ("log1p", CountTransform::Log1p),
];
const LOSSES: &[(&str, LossKind)] = &[
    ("ce", LossKind::CrossEntropy),
    ("bce", LossKind::BinaryCrossEntropy),
];
const TASKS: &[(&str, Task)] = &[
    ("lp", Task::LinkPrediction),
    ("rp", Task::RelationPrediction),
];

fn name_of<T: PartialEq>(options: &[(&'static str, T)], value: &T) -> &'static str {
    options
        .iter()
        .find(|(_, v)| v == value)
        .map(|(n, _)| *n)
        .expect("every variant is named")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CoreError::Config(format!("line {}: expected `key = value`", i + 1))
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| match e {
                CoreError::Config(m) => CoreError::Config(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(file: &Path) -> Result<Self> {
        let text = fs::read_to_string(file).map_err(|e| CoreError::io(file, e))?;
        Self::parse(&text)
    }

    /// Applies one `key = value`; unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.training;
        match key {
            "train" => self.train = path(value),
            "valid" => self.valid = path(value),
            "test" => self.test = path(value),
            "corpus" => self.corpus = path(value),
            "out_dir" => self.out_dir = path(value),
            "task" => t.task = choice(key, value, TASKS)?,
            "seed" => {
                self.seed = num(key, value)?;
                t.seed = self.seed;
            }
            "num_paths" => self.num_paths = num(key, value)?,
            "max_len" => m.max_len = num(key, value)?,
            "dim" => {
                m.dim = num(key, value)?;
                if !self.projector_hidden_set {
                    m.projector_hidden = m.dim;
                }
            }
            "ppe" => m.ppe = num(key, value)?,
            "ff_dim" => m.ff_dim = num(key, value)?,
            "heads" => m.heads = num(key, value)?,
            "layers" => m.layers = num(key, value)?,
            "dropout" => m.dropout = num(key, value)?,
            "aggregator" => m.aggregator = choice(key, value, AGGREGATORS)?,
            "aggregator_layers" => m.aggregator_layers = num(key, value)?,
            "positional" => m.positional = choice(key, value, POSITIONALS)?,
            "projector_hidden" => {
                m.projector_hidden = num(key, value)?;
                self.projector_hidden_set = true;
            }
            "count_transform" => m.count_transform = choice(key, value, TRANSFORMS)?,
            "loss" => t.loss = choice(key, value, LOSSES)?,
            "label_smoothing" => t.label_smoothing = num(key, value)?,
            "negatives" => t.negatives = num(key, value)?,
            "valid_negatives" => t.valid_negatives = num(key, value)?,
            "lr" => t.lr = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "accumulate" => t.accumulate = num(key, value)?,
            "max_epochs" => t.max_epochs = num(key, value)?,
            "patience" => t.patience = num(key, value)?,
            "min_delta" => t.min_delta = num(key, value)?,
            "no_aggregator" => self.ablations.no_aggregator = flag(key, value)?,
            "no_multiple_paths" => self.ablations.single_path = flag(key, value)?,
            "standard_positionals" => self.ablations.standard_positionals = flag(key, value)?,
            _ => return Err(CoreError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override string.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CoreError::Config(format!("override `{pair}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn task(&self) -> Task {
        self.training.task
    }

    /// Model configuration with ablations applied.
    pub fn model_config(&self) -> ModelConfig {
        self.ablations.apply(self.model.clone())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.training.clone()
        }
    }

    pub fn mining_params(&self) -> MiningParams {
        MiningParams {
            num_paths: self.num_paths,
            max_len: self.model.max_len,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_paths == 0 {
            return Err(CoreError::Config("num_paths must be at least 1".into()));
        }
        self.model_config().validate()?;
        self.train_config().validate()
    }

    /// Every key with its effective value; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let (m, t, a) = (&self.model, &self.training, &self.ablations);
        let p = |v: &Option<PathBuf>| {
            v.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let mut s = String::new();
        for key in KEYS {
            let value = match *key {
                "train" => p(&self.train),
                "valid" => p(&self.valid),
                "test" => p(&self.test),
                "corpus" => p(&self.corpus),
                "out_dir" => p(&self.out_dir),
                "task" => name_of(TASKS, &t.task).into(),
                "seed" => self.seed.to_string(),
                "num_paths" => self.num_paths.to_string(),
                "max_len" => m.max_len.to_string(),
                "dim" => m.dim.to_string(),
                "ppe" => m.ppe.to_string(),
                "ff_dim" => m.ff_dim.to_string(),
                "heads" => m.heads.to_string(),
                "layers" => m.layers.to_string(),
                "dropout" => m.dropout.to_string(),
                "aggregator" => name_of(AGGREGATORS, &m.aggregator).into(),
                "aggregator_layers" => m.aggregator_layers.to_string(),
                "positional" => name_of(POSITIONALS, &m.positional).into(),
                "projector_hidden" => m.projector_hidden.to_string(),
                "count_transform" => name_of(TRANSFORMS, &m.count_transform).into(),
                "loss" => name_of(LOSSES, &t.loss).into(),
                "label_smoothing" => t.label_smoothing.to_string(),
                "negatives" => t.negatives.to_string(),
                "valid_negatives" => t.valid_negatives.to_string(),
                "lr" => t.lr.to_string(),
                "batch_size" => t.batch_size.to_string(),
                "accumulate" => t.accumulate.to_string(),
                "max_epochs" => t.max_epochs.to_string(),
                "patience" => t.patience.to_string(),
                "min_delta" => t.min_delta.to_string(),
                "no_aggregator" => a.no_aggregator.to_string(),
                "no_multiple_paths" => a.single_path.to_string(),
                "standard_positionals" => a.standard_positionals.to_string(),
                _ => unreachable!("KEYS and to_text disagree on `{key}`"),
            };
            let _ = writeln!(s, "{key} = {value}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_fb15k237_lp_setup() {
        let c = RunConfig::default();
        let m = c.model_config();
        assert_eq!(
            (m.dim, m.ppe, m.ff_dim, m.heads, m.layers),
            (64, 4, 256, 2, 1)
        );
        assert_eq!(m.aggregator, AggregatorKind::Transformer);
        let t = c.train_config();
        assert_eq!((t.negatives, t.batch_size, t.accumulate), (99, 4096, 8));
        assert_eq!((t.lr, t.label_smoothing), (1e-3, 0.01));
    }

    #[test]
    fn unknown_key_is_an_error() {
        let err = RunConfig::parse("dim = 32\nembeding_dim = 3\n").unwrap_err();
        assert!(
            err.to_string().contains("line 2") && err.to_string().contains("embeding_dim"),
            "{err}"
        );
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::parse("# comment\ntask = rp\ndim = 32 # inline\naggregator = average\nno_multiple_paths = true\n")
            .unwrap();
        assert_eq!(c.model.projector_hidden, 32);
        let again = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(again.to_text(), c.to_text());
        assert_eq!(again.model_config().ppe, 1);
    }
}
