//! Inference-mode predictions and per-task metric bundles.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{Document, Model, TaskGraph, Utterance};
use crate::ops::argmax;
use crate::tensor::Tensor;
use crate::train::autograd::{Eager, Exec};
use crate::train::metrics::{
    accuracy, keystroke_savings, micro_f1, perplexity, word_prediction_rate, MetricResult,
    NextWordScorer,
};
use crate::vocab::Vocab;

impl NextWordScorer for Model {
    fn vocab_size(&self) -> usize {
        match &self.graph {
            TaskGraph::Nwp(g) => g.vocab(),
            _ => 0,
        }
    }

    fn next_logits(&self, context: &[usize]) -> Result<Tensor> {
        let TaskGraph::Nwp(g) = &self.graph else {
            return Err(Error::Config(format!("{} model cannot score words", self.config.task())));
        };
        let mut ex = Eager::new(&self.store);
        let y = g.logits(&mut ex, context)?;
        Ok(ex.tensor(&y).clone())
    }
}

/// Smoothed unigram frequencies; the floor any context model should beat.
pub struct UnigramScorer {
    logits: Vec<f64>,
}

impl UnigramScorer {
    /// Add-one counts over `corpus`.
    pub fn fit(vocab_size: usize, corpus: &[Vec<usize>]) -> UnigramScorer {
        let mut counts = vec![1.0f64; vocab_size];
        for &w in corpus.iter().flatten() {
            counts[w] += 1.0;
        }
        UnigramScorer {
            logits: counts.iter().map(|c| c.ln()).collect(),
        }
    }
}

impl NextWordScorer for UnigramScorer {
    fn vocab_size(&self) -> usize {
        self.logits.len()
    }

    fn next_logits(&self, context: &[usize]) -> Result<Tensor> {
        Tensor::from_rows(&vec![self.logits.clone(); context.len()])
    }
}

/// Perplexity, keystroke savings and word prediction rate.
pub fn eval_nwp<S: NextWordScorer + ?Sized>(scorer: &S, vocab: &Vocab, sentences: &[Vec<String>]) -> Result<Vec<MetricResult>> {
    let ids: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| s.iter().map(|w| vocab.id_or(w, crate::models::UNK)).collect())
        .collect();
    Ok(vec![
        perplexity(scorer, &ids)?,
        keystroke_savings(scorer, vocab, sentences)?,
        word_prediction_rate(scorer, &ids)?,
    ])
}

/// `(intent, slot per token)` argmaxes.
pub fn predict_intent_slot(model: &Model, u: &Utterance) -> Result<(usize, Vec<usize>)> {
    let TaskGraph::IntentSlot(g) = &model.graph else {
        return Err(Error::Config(format!("{} model cannot tag utterances", model.config.task())));
    };
    let mut ex = Eager::new(&model.store);
    let (i, s) = g.forward(&mut ex, u)?;
    let slots = ex.tensor(&s);
    let tags = (0..slots.shape()[0]).map(|r| argmax(slots.row(r))).collect();
    Ok((argmax(ex.tensor(&i).data()), tags))
}

/// Intent micro-F1 over utterances and slot micro-F1 over tokens.
pub fn eval_intent_slot(model: &Model, utterances: &[Utterance]) -> Result<Vec<MetricResult>> {
    let TaskGraph::IntentSlot(g) = &model.graph else {
        return Err(Error::Config(format!("{} model cannot tag utterances", model.config.task())));
    };
    if utterances.is_empty() {
        return Err(Error::data("no utterances to evaluate"));
    }
    let preds: Vec<(usize, Vec<usize>)> = utterances
        .par_iter()
        .map(|u| predict_intent_slot(model, u))
        .collect::<Result<_>>()?;
    let (mut pi, mut gi, mut ps, mut gs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (u, (intent, slots)) in utterances.iter().zip(preds) {
        pi.push(intent);
        gi.push(u.intent);
        ps.extend(slots);
        gs.extend_from_slice(&u.slots);
    }
    let n_intents = model.store.get(g.intent_bias).numel();
    let n_slots = model.store.get(g.slot_bias).numel();
    Ok(vec![
        micro_f1(&pi, &gi, &(0..n_intents).collect::<Vec<_>>())?.named("intent_f1"),
        micro_f1(&ps, &gs, &(0..n_slots).collect::<Vec<_>>())?.named("slot_f1"),
    ])
}

pub fn predict_doc(model: &Model, bytes: &[u8]) -> Result<usize> {
    let TaskGraph::DocClass(g) = &model.graph else {
        return Err(Error::Config(format!("{} model cannot classify documents", model.config.task())));
    };
    let mut ex = Eager::new(&model.store);
    let y = g.logits(&mut ex, bytes)?;
    Ok(argmax(ex.tensor(&y).data()))
}

pub fn eval_docclass(model: &Model, docs: &[Document]) -> Result<Vec<MetricResult>> {
    if docs.is_empty() {
        return Err(Error::data("no documents to evaluate"));
    }
    let preds: Vec<usize> = docs
        .par_iter()
        .map(|d| predict_doc(model, &d.bytes))
        .collect::<Result<_>>()?;
    let golds: Vec<usize> = docs.iter().map(|d| d.label).collect();
    Ok(vec![accuracy(&preds, &golds)?])
}
