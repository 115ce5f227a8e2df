//! End-to-end train and evaluate pipelines shared by the CLI and tests.

use crate::error::{Error, Result};
use crate::io::artifact::{Artifact, Tokenizer};
use crate::io::config::RunConfig;
use crate::io::dataset::{self, Dataset, Split};
use crate::io::synth;
use crate::models::{Model, Task};
use crate::train::eval::{eval_docclass, eval_intent_slot, eval_nwp, UnigramScorer};
use crate::train::metrics::{perplexity, MetricResult};
use crate::train::trainer::{train, TrainReport};

/// Where a run's examples come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    /// `data.*` files of the config.
    Files,
    Synthetic { seed: u64 },
}

/// Reads the splits a config points at, or draws synthetic ones.
pub fn load_dataset(cfg: &RunConfig, source: Source) -> Result<Dataset> {
    let task = cfg.model.task();
    if let Source::Synthetic { seed } = source {
        return Ok(synth::synth_dataset(task, seed, cfg.data.train_size, cfg.data.test_size));
    }
    let Some(train_path) = &cfg.data.train else {
        return Err(Error::Config("config has no data.train; pass --synthetic for generated data".into()));
    };
    let load = |path: &std::path::Path| -> Result<Split> {
        Ok(match task {
            Task::Nwp => Split::Sentences(dataset::load_sentences(path)?),
            Task::IntentSlot => Split::Utterances(dataset::load_intent_slot(path)?),
            Task::DocClass => Split::Documents(dataset::load_documents(path)?),
        })
    };
    let train = load(train_path)?;
    let test = match &cfg.data.test {
        Some(p) => load(p)?,
        None => load_empty(task),
    };
    let vocab = cfg.data.vocab.as_deref().map(dataset::load_vocab).transpose()?;
    Ok(Dataset { train, test, vocab })
}

fn load_empty(task: Task) -> Split {
    match task {
        Task::Nwp => Split::Sentences(Vec::new()),
        Task::IntentSlot => Split::Utterances(Vec::new()),
        Task::DocClass => Split::Documents(Vec::new()),
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub artifact: Artifact,
    pub report: TrainReport,
    /// Held-out metrics; empty when there is no test split.
    pub metrics: Vec<MetricResult>,
    /// Add-one unigram perplexity on the test split, for next-word prediction.
    pub unigram: Option<MetricResult>,
}

/// Fits the tokenizer, sizes and trains the model, and scores the test split.
pub fn train_and_eval(cfg: &RunConfig, data: &Dataset, seed: u64, on_step: impl FnMut(usize, f64)) -> Result<RunOutcome> {
    let tokenizer = Tokenizer::fit(&data.train, data.vocab.as_ref())?;
    let mut model_cfg = cfg.model.clone();
    tokenizer.size_model(&mut model_cfg);
    let mut model = Model::init(model_cfg, seed)?;
    let examples = tokenizer.examples(&data.train)?;
    let report = train(&mut model, &examples, &cfg.train, seed, on_step)?;
    let artifact = Artifact { model, tokenizer };
    let (metrics, unigram) = if data.test.is_empty() {
        (Vec::new(), None)
    } else {
        let metrics = evaluate(&artifact, &data.test)?;
        let unigram = match (&data.train, &data.test, &artifact.tokenizer) {
            (Split::Sentences(tr), Split::Sentences(te), Tokenizer::Word { vocab }) => {
                let enc = |s: &[Vec<String>]| s.iter().map(|w| artifact.tokenizer.encode_sentence(w)).collect::<Vec<_>>();
                let uni = UnigramScorer::fit(vocab.len(), &enc(tr));
                Some(perplexity(&uni, &enc(te))?.named("unigram_ppl"))
            }
            _ => None,
        };
        (metrics, unigram)
    };
    Ok(RunOutcome { artifact, report, metrics, unigram })
}

/// Task metrics of a trained artifact on `split`.
pub fn evaluate(artifact: &Artifact, split: &Split) -> Result<Vec<MetricResult>> {
    let model = &artifact.model;
    match (split, &artifact.tokenizer) {
        (Split::Sentences(s), Tokenizer::Word { vocab }) => eval_nwp(model, vocab, s),
        (Split::Utterances(us), t @ Tokenizer::Char { .. }) => {
            let enc = us.iter().map(|u| t.encode_utterance(u)).collect::<Result<Vec<_>>>()?;
            eval_intent_slot(model, &enc)
        }
        (Split::Documents(d), Tokenizer::Byte) => eval_docclass(model, d),
        _ => Err(Error::data(format!(
            "evaluation data does not match the {} tokenizer",
            artifact.tokenizer.name()
        ))),
    }
}
