//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` and blank lines are ignored. Keys are namespaced
//! (`encoder.c`, `train.lr`, ...); an unknown key, a key that does not apply
//! to the chosen task, or a repeated key is an error naming the line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::blocks::{BlockVariant, EncoderConfig};
use crate::error::{Error, Result};
use crate::models::{
    DocClassDims, IntentSlotDims, ModelConfig, NwpDims, Representation, Task, TaskConfig,
};
use crate::ops::{Padding, PoolKind};
use crate::train::optim::OptimizerKind;
use crate::train::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub train_size: usize,
    pub test_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

const DESK_NWP: &str = include_str!("../../configs/desk_nwp.cfg");
const DESK_INTENT_SLOT: &str = include_str!("../../configs/desk_intent_slot.cfg");
const DESK_DOCCLASS: &str = include_str!("../../configs/desk_docclass.cfg");

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, at: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{at}: `{key}` expects a number, got `{value}`")))
}

impl RunConfig {
    /// Built-in desk-scale configuration for `task`.
    pub fn desk(task: Task) -> RunConfig {
        let text = match task {
            Task::Nwp => DESK_NWP,
            Task::IntentSlot => DESK_INTENT_SLOT,
            Task::DocClass => DESK_DOCCLASS,
        };
        RunConfig::parse(text, &format!("<builtin {task}>"), Path::new(".")).expect("built-in config parses")
    }

    fn base(task: Task) -> RunConfig {
        let encoder = EncoderConfig {
            channels: 64,
            n_blocks: 2,
            variant: BlockVariant::SeparableBottleneckGelu,
            kernel: 3,
            bottleneck: 16,
            dropout: 0.0,
            padding: task.padding(),
        };
        let task_cfg = match task {
            Task::Nwp => TaskConfig::Nwp(NwpDims { vocab: 202, rank: 16 }),
            Task::IntentSlot => TaskConfig::IntentSlot(IntentSlotDims {
                char_vocab: 40,
                char_dim: 16,
                char_filters: 48,
                gazetteer_vocab: 8,
                gazetteer_dim: 16,
                n_intents: 8,
                n_slots: 6,
            }),
            Task::DocClass => TaskConfig::DocClass(DocClassDims { pool: PoolKind::Max }),
        };
        RunConfig {
            model: ModelConfig {
                repr: Representation::Conv(encoder.variant),
                encoder,
                task: task_cfg,
            },
            train: TrainConfig::default(),
            data: DataConfig {
                train: None,
                test: None,
                vocab: None,
                train_size: 1000,
                test_size: 200,
            },
        }
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse(&text, &path.display().to_string(), dir)
    }

    /// `origin` names the source in errors; relative data paths resolve against `dir`.
    pub fn parse(text: &str, origin: &str, dir: &Path) -> Result<RunConfig> {
        let mut entries: BTreeMap<String, (String, usize)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("{origin}:{}: expected `key = value`, got `{line}`", i + 1)));
            };
            let (k, v) = (k.trim(), v.trim());
            if entries.insert(k.to_string(), (v.to_string(), i + 1)).is_some() {
                return Err(Error::Config(format!("{origin}:{}: `{k}` given twice", i + 1)));
            }
        }
        let Some((task, _)) = entries.remove("task") else {
            return Err(Error::Config(format!("{origin}: missing `task`")));
        };
        let task = Task::parse(&task).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        let mut cfg = RunConfig::base(task);
        let mut lr = None;
        let (mut beta1, mut beta2, mut eps) = (0.9, 0.999, 1e-8);
        let mut optimizer = "adam".to_string();
        for (key, (value, line)) in &entries {
            let at = format!("{origin}:{line}");
            cfg.set(key, value, &at, dir, &mut lr, &mut optimizer, &mut beta1, &mut beta2, &mut eps)?;
        }
        let lr = lr.unwrap_or(1e-3);
        cfg.train.optimizer = match optimizer.as_str() {
            "adam" => OptimizerKind::Adam { lr, beta1, beta2, eps },
            "sgd" => OptimizerKind::Sgd { lr },
            other => return Err(Error::Config(format!("{origin}: unknown optimizer `{other}`"))),
        };
        cfg.model.validate().map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        Ok(cfg)
    }

    #[allow(clippy::too_many_arguments)]
    fn set(
        &mut self,
        key: &str,
        value: &str,
        at: &str,
        dir: &Path,
        lr: &mut Option<f64>,
        optimizer: &mut String,
        beta1: &mut f64,
        beta2: &mut f64,
        eps: &mut f64,
    ) -> Result<()> {
        let task = self.model.task();
        let enc = &mut self.model.encoder;
        let misplaced = || Error::Config(format!("{at}: `{key}` does not apply to {task}"));
        match key {
            "encoder.variant" => {
                let repr = Representation::parse(value).map_err(|e| Error::Config(format!("{at}: {e}")))?;
                self.model = self.model.with_repr(repr);
            }
            "encoder.c" => enc.channels = parse_num(key, value, at)?,
            "encoder.k" => enc.kernel = parse_num(key, value, at)?,
            "encoder.b" => enc.bottleneck = parse_num(key, value, at)?,
            "encoder.n" => enc.n_blocks = parse_num(key, value, at)?,
            "encoder.dropout" => enc.dropout = parse_num(key, value, at)?,
            "encoder.padding" => {
                enc.padding = Padding::parse(value).map_err(|e| Error::Config(format!("{at}: {e}")))?
            }
            "model.vocab" | "model.rank" => {
                let TaskConfig::Nwp(d) = &mut self.model.task else { return Err(misplaced()) };
                let v = parse_num(key, value, at)?;
                if key == "model.vocab" {
                    d.vocab = v
                } else {
                    d.rank = v
                }
            }
            "model.char_vocab" | "model.char_dim" | "model.char_filters" | "model.gazetteer_vocab"
            | "model.gazetteer_dim" | "model.intents" | "model.slots" => {
                let TaskConfig::IntentSlot(d) = &mut self.model.task else { return Err(misplaced()) };
                let v = parse_num(key, value, at)?;
                match key {
                    "model.char_vocab" => d.char_vocab = v,
                    "model.char_dim" => d.char_dim = v,
                    "model.char_filters" => d.char_filters = v,
                    "model.gazetteer_vocab" => d.gazetteer_vocab = v,
                    "model.gazetteer_dim" => d.gazetteer_dim = v,
                    "model.intents" => d.n_intents = v,
                    _ => d.n_slots = v,
                }
            }
            "model.pool" => {
                let TaskConfig::DocClass(d) = &mut self.model.task else { return Err(misplaced()) };
                d.pool = PoolKind::parse(value).map_err(|e| Error::Config(format!("{at}: {e}")))?;
            }
            "train.optimizer" => *optimizer = value.to_string(),
            "train.lr" => *lr = Some(parse_num(key, value, at)?),
            "train.beta1" => *beta1 = parse_num(key, value, at)?,
            "train.beta2" => *beta2 = parse_num(key, value, at)?,
            "train.eps" => *eps = parse_num(key, value, at)?,
            "train.batch" => self.train.batch_size = parse_num(key, value, at)?,
            "train.epochs" => self.train.epochs = parse_num(key, value, at)?,
            "train.steps" => self.train.max_steps = Some(parse_num(key, value, at)?),
            "train.clip" => self.train.clip_norm = parse_num(key, value, at)?,
            "data.train" => self.data.train = Some(dir.join(value)),
            "data.test" => self.data.test = Some(dir.join(value)),
            "data.vocab" => {
                if task != Task::Nwp {
                    return Err(misplaced());
                }
                self.data.vocab = Some(dir.join(value))
            }
            "data.train_size" => self.data.train_size = parse_num(key, value, at)?,
            "data.test_size" => self.data.test_size = parse_num(key, value, at)?,
            _ => return Err(Error::Config(format!("{at}: unknown key `{key}`"))),
        }
        Ok(())
    }
}

/// Canonical key-value description of a model's shape, as stored in artifacts.
pub fn model_keys(cfg: &ModelConfig) -> BTreeMap<String, String> {
    let e = &cfg.encoder;
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        m.insert(k.to_string(), v);
    };
    put("task", cfg.task().name().into());
    put("encoder.variant", cfg.repr.name().into());
    put("encoder.c", e.channels.to_string());
    put("encoder.k", e.kernel.to_string());
    put("encoder.b", e.bottleneck.to_string());
    put("encoder.n", e.n_blocks.to_string());
    put("encoder.dropout", format!("{:?}", e.dropout));
    put("encoder.padding", e.padding.name().into());
    match &cfg.task {
        TaskConfig::Nwp(d) => {
            put("model.vocab", d.vocab.to_string());
            put("model.rank", d.rank.to_string());
        }
        TaskConfig::IntentSlot(d) => {
            put("model.char_vocab", d.char_vocab.to_string());
            put("model.char_dim", d.char_dim.to_string());
            put("model.char_filters", d.char_filters.to_string());
            put("model.gazetteer_vocab", d.gazetteer_vocab.to_string());
            put("model.gazetteer_dim", d.gazetteer_dim.to_string());
            put("model.intents", d.n_intents.to_string());
            put("model.slots", d.n_slots.to_string());
        }
        TaskConfig::DocClass(d) => put("model.pool", d.pool.name().into()),
    }
    m
}

/// Inverse of [`model_keys`]; extra keys are ignored.
pub fn model_from_keys(keys: &BTreeMap<String, String>, origin: &str) -> Result<ModelConfig> {
    let mut text = String::new();
    for (k, v) in keys {
        if k == "task" || k.starts_with("encoder.") || k.starts_with("model.") {
            text.push_str(&format!("{k} = {v}\n"));
        }
    }
    Ok(RunConfig::parse(&text, origin, Path::new("."))?.model)
}
