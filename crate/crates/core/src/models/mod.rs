//! Task model graphs with a swappable representation layer.
//!
//! Every model is a [`ParamStore`] plus a graph of parameter ids. Graphs are
//! written against [`Exec`], so the same code drives inference and training.

pub mod docclass;
pub mod intent_slot;
pub mod lstm;
pub mod nwp;

use std::fmt;

use crate::blocks::{BlockVariant, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::ops::{Padding, PoolKind};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::autograd::Exec;

pub use docclass::{DocClassModel, Document};
pub use intent_slot::{IntentSlotModel, Utterance};
pub use nwp::{materialize, FactorizedEmbedding, NwpModel, BOS, UNK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Nwp,
    IntentSlot,
    DocClass,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Nwp, Task::IntentSlot, Task::DocClass];

    pub fn name(self) -> &'static str {
        match self {
            Task::Nwp => "nwp",
            Task::IntentSlot => "intent_slot",
            Task::DocClass => "doc_class",
        }
    }

    pub fn parse(s: &str) -> Result<Task> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown task `{s}`")))
    }

    /// Input length used for op counts and latency runs: words, tokens or bytes.
    pub fn reference_len(self) -> usize {
        match self {
            Task::Nwp => 16,
            Task::IntentSlot => 12,
            Task::DocClass => 512,
        }
    }

    /// Language modelling must not see the future; classifiers may.
    pub fn padding(self) -> Padding {
        match self {
            Task::Nwp => Padding::Causal,
            _ => Padding::Same,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One row of the comparison tables: the LSTM baseline or a conv block variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Representation {
    Recurrent,
    Conv(BlockVariant),
}

impl Representation {
    pub const ALL: [Representation; 5] = [
        Representation::Recurrent,
        Representation::Conv(BlockVariant::ConvGlu),
        Representation::Conv(BlockVariant::ConvGelu),
        Representation::Conv(BlockVariant::SeparableGelu),
        Representation::Conv(BlockVariant::SeparableBottleneckGelu),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Representation::Recurrent => "recurrent",
            Representation::Conv(v) => v.name(),
        }
    }

    pub fn parse(s: &str) -> Result<Representation> {
        if s == "recurrent" {
            return Ok(Representation::Recurrent);
        }
        BlockVariant::parse(s).map(Representation::Conv)
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NwpDims {
    pub vocab: usize,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntentSlotDims {
    pub char_vocab: usize,
    pub char_dim: usize,
    /// Char-CNN output width; split evenly over the kernel widths.
    pub char_filters: usize,
    pub gazetteer_vocab: usize,
    pub gazetteer_dim: usize,
    pub n_intents: usize,
    pub n_slots: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DocClassDims {
    pub pool: PoolKind,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TaskConfig {
    Nwp(NwpDims),
    IntentSlot(IntentSlotDims),
    DocClass(DocClassDims),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub repr: Representation,
    /// Shape of the representation layer; `channels` is the embedding width.
    /// `variant` mirrors `repr` for conv rows.
    pub encoder: EncoderConfig,
    pub task: TaskConfig,
}

impl ModelConfig {
    pub fn task(&self) -> Task {
        match self.task {
            TaskConfig::Nwp(_) => Task::Nwp,
            TaskConfig::IntentSlot(_) => Task::IntentSlot,
            TaskConfig::DocClass(_) => Task::DocClass,
        }
    }

    /// Same dimensions with a different table row. The recurrent row has no
    /// block, so its unused variant field is reset to one canonical value.
    pub fn with_repr(&self, repr: Representation) -> ModelConfig {
        let mut cfg = self.clone();
        cfg.repr = repr;
        cfg.encoder.variant = match repr {
            Representation::Conv(v) => v,
            Representation::Recurrent => BlockVariant::SeparableBottleneckGelu,
        };
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        if e.channels == 0 {
            return Err(Error::Config("encoder.c must be positive".into()));
        }
        if let Representation::Conv(v) = self.repr {
            if v != e.variant {
                return Err(Error::Config(format!(
                    "representation {v} disagrees with encoder variant {}",
                    e.variant
                )));
            }
            if e.padding != self.task().padding() {
                return Err(Error::Config(format!(
                    "{} needs {} padding, config has {}",
                    self.task(),
                    self.task().padding().name(),
                    e.padding.name()
                )));
            }
            e.block().validate()?;
        }
        match &self.task {
            TaskConfig::Nwp(d) => {
                if d.vocab <= BOS || d.rank == 0 {
                    return Err(Error::Config(format!(
                        "nwp needs vocab > {BOS} and rank > 0 (vocab={}, rank={})",
                        d.vocab, d.rank
                    )));
                }
            }
            TaskConfig::IntentSlot(d) => {
                let widths = intent_slot::CHAR_WIDTHS.len();
                if d.char_filters == 0 || d.char_filters % widths != 0 {
                    return Err(Error::Config(format!(
                        "model.char_filters ({}) must be a positive multiple of {widths}",
                        d.char_filters
                    )));
                }
                if d.char_filters + d.gazetteer_dim != e.channels {
                    return Err(Error::Config(format!(
                        "char_filters + gazetteer_dim ({} + {}) must equal encoder.c ({})",
                        d.char_filters, d.gazetteer_dim, e.channels
                    )));
                }
                if [d.char_vocab, d.char_dim, d.gazetteer_vocab, d.gazetteer_dim, d.n_intents, d.n_slots]
                    .contains(&0)
                {
                    return Err(Error::Config("intent-slot dims must be positive".into()));
                }
            }
            TaskConfig::DocClass(_) => {}
        }
        if self.repr == Representation::Recurrent && self.task() != Task::Nwp && !e.channels.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "bidirectional recurrent baseline needs an even width, got {}",
                e.channels
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LstmWeights {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

impl LstmWeights {
    /// Uniform `±1/sqrt(h)` for every weight and bias.
    fn init(d: usize, h: usize, store: &mut ParamStore, rng: &mut Rng, prefix: &str) -> Result<LstmWeights> {
        let bound = 1.0 / (h as f64).sqrt();
        Ok(LstmWeights {
            w_ih: store.add(format!("{prefix}.w_ih"), Tensor::uniform(&[4 * h, d], bound, rng))?,
            w_hh: store.add(format!("{prefix}.w_hh"), Tensor::uniform(&[4 * h, h], bound, rng))?,
            bias: store.add(format!("{prefix}.bias"), Tensor::uniform(&[4 * h], bound, rng))?,
        })
    }

    fn forward<E: Exec>(&self, ex: &mut E, x: &E::Value, reverse: bool) -> Result<E::Value> {
        let (wi, wh, b) = (ex.param(self.w_ih), ex.param(self.w_hh), ex.param(self.bias));
        ex.lstm(x, &wi, &wh, &b, reverse)
    }
}

/// The representation layer `R`: `[d, t] -> [d, t]`.
#[derive(Clone, Debug)]
pub enum ReprLayer {
    Conv(Encoder),
    /// Unidirectional with hidden `d`, or bidirectional with hidden `d / 2`
    /// per direction and outputs stacked along channels.
    Recurrent {
        forward: LstmWeights,
        backward: Option<LstmWeights>,
    },
}

impl ReprLayer {
    pub fn init(
        repr: Representation,
        encoder: &EncoderConfig,
        bidirectional: bool,
        store: &mut ParamStore,
        rng: &mut Rng,
        prefix: &str,
    ) -> Result<ReprLayer> {
        match repr {
            Representation::Conv(v) => Ok(ReprLayer::Conv(Encoder::init(
                encoder.with_variant(v),
                store,
                rng,
                prefix,
            )?)),
            Representation::Recurrent => {
                let d = encoder.channels;
                if bidirectional {
                    Ok(ReprLayer::Recurrent {
                        forward: LstmWeights::init(d, d / 2, store, rng, &format!("{prefix}.lstm_fwd"))?,
                        backward: Some(LstmWeights::init(d, d / 2, store, rng, &format!("{prefix}.lstm_bwd"))?),
                    })
                } else {
                    Ok(ReprLayer::Recurrent {
                        forward: LstmWeights::init(d, d, store, rng, &format!("{prefix}.lstm"))?,
                        backward: None,
                    })
                }
            }
        }
    }

    pub fn forward<E: Exec>(&self, ex: &mut E, x: &E::Value) -> Result<E::Value> {
        match self {
            ReprLayer::Conv(enc) => enc.forward(ex, x),
            ReprLayer::Recurrent { forward, backward } => {
                let f = forward.forward(ex, x, false)?;
                match backward {
                    None => Ok(f),
                    Some(bw) => {
                        let b = bw.forward(ex, x, true)?;
                        ex.concat_rows(&[&f, &b])
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub enum TaskGraph {
    Nwp(NwpModel),
    IntentSlot(IntentSlotModel),
    DocClass(DocClassModel),
}

/// A training/evaluation example for any task.
#[derive(Clone, Debug, PartialEq)]
pub enum Example {
    /// Word ids of one sentence, without boundary markers.
    Sentence(Vec<usize>),
    Utterance(Utterance),
    Document(Document),
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub graph: TaskGraph,
}

impl Model {
    /// Builds a freshly initialized model; parameter order is fixed by the config.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = Rng::new(seed);
        let graph = match &config.task {
            TaskConfig::Nwp(d) => TaskGraph::Nwp(NwpModel::init(&config, d, &mut store, &mut rng)?),
            TaskConfig::IntentSlot(d) => {
                TaskGraph::IntentSlot(IntentSlotModel::init(&config, d, &mut store, &mut rng)?)
            }
            TaskConfig::DocClass(d) => {
                TaskGraph::DocClass(DocClassModel::init(&config, d, &mut store, &mut rng)?)
            }
        };
        Ok(Model {
            config,
            store,
            graph,
        })
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Training objective for one example (a scalar).
    pub fn loss<E: Exec>(&self, ex: &mut E, example: &Example) -> Result<E::Value> {
        match (&self.graph, example) {
            (TaskGraph::Nwp(m), Example::Sentence(s)) => m.loss(ex, s),
            (TaskGraph::IntentSlot(m), Example::Utterance(u)) => m.loss(ex, u),
            (TaskGraph::DocClass(m), Example::Document(d)) => m.loss(ex, d),
            _ => Err(Error::data(format!(
                "example does not match a {} model",
                self.config.task()
            ))),
        }
    }
}
