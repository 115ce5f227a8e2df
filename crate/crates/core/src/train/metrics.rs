//! Evaluation metrics: perplexity, keystroke savings, word prediction rate,
//! micro-F1 and accuracy.

use std::fmt;

use crate::error::{Error, Result};
use crate::models::BOS;
use crate::ops::argmax;
use crate::tensor::Tensor;
use crate::train::loss::row_nll;
use crate::vocab::Vocab;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    Perplexity,
    KeystrokeSavings,
    WordPredictionRate,
    MicroF1,
    Accuracy,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Perplexity => "ppl",
            MetricKind::KeystrokeSavings => "ks",
            MetricKind::WordPredictionRate => "wpr",
            MetricKind::MicroF1 => "micro_f1",
            MetricKind::Accuracy => "accuracy",
        }
    }
}

/// KS and WPR are stored as percentages, F1 and accuracy as fractions.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricResult {
    pub kind: MetricKind,
    pub name: String,
    pub value: f64,
    /// Tokens, characters, positions or instances counted.
    pub support: usize,
}

impl MetricResult {
    pub fn new(kind: MetricKind, value: f64, support: usize) -> MetricResult {
        MetricResult {
            kind,
            name: kind.name().to_string(),
            value,
            support,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> MetricResult {
        self.name = name.into();
        self
    }

    /// Table value: fractions are scaled to percent.
    pub fn display_value(&self) -> f64 {
        match self.kind {
            MetricKind::MicroF1 | MetricKind::Accuracy => self.value * 100.0,
            _ => self.value,
        }
    }
}

impl fmt::Display for MetricResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={:.2} (n={})", self.name, self.display_value(), self.support)
    }
}

/// A language model seen through its next-word logits.
pub trait NextWordScorer {
    fn vocab_size(&self) -> usize;
    /// `[len, V]`; row `i` scores the word after `context[..=i]`.
    fn next_logits(&self, context: &[usize]) -> Result<Tensor>;
}

fn sentence_logits<S: NextWordScorer + ?Sized>(scorer: &S, sentence: &[usize]) -> Result<Tensor> {
    let mut context = Vec::with_capacity(sentence.len());
    context.push(BOS);
    context.extend_from_slice(&sentence[..sentence.len() - 1]);
    let logits = scorer.next_logits(&context)?;
    if logits.shape() != [sentence.len(), scorer.vocab_size()] {
        return Err(Error::Dimension(format!(
            "scorer returned {:?} for {} positions",
            logits.shape(),
            sentence.len()
        )));
    }
    Ok(logits)
}

fn non_empty(corpus: &[Vec<usize>]) -> Result<Vec<&Vec<usize>>> {
    let kept: Vec<_> = corpus.iter().filter(|s| !s.is_empty()).collect();
    if kept.is_empty() {
        return Err(Error::data("empty corpus"));
    }
    Ok(kept)
}

/// `exp` of the mean next-word cross-entropy over every position.
pub fn perplexity<S: NextWordScorer + ?Sized>(scorer: &S, corpus: &[Vec<usize>]) -> Result<MetricResult> {
    let mut total = 0.0;
    let mut n = 0;
    for s in non_empty(corpus)? {
        let logits = sentence_logits(scorer, s)?;
        total += row_nll(&logits, s)?.iter().sum::<f64>();
        n += s.len();
    }
    Ok(MetricResult::new(MetricKind::Perplexity, (total / n as f64).exp(), n))
}

/// Percent of positions whose top-1 word (ties to the lowest id) is the target.
pub fn word_prediction_rate<S: NextWordScorer + ?Sized>(scorer: &S, corpus: &[Vec<usize>]) -> Result<MetricResult> {
    let mut hits = 0;
    let mut n = 0;
    for s in non_empty(corpus)? {
        let logits = sentence_logits(scorer, s)?;
        for (i, &target) in s.iter().enumerate() {
            hits += usize::from(argmax(logits.row(i)) == target);
        }
        n += s.len();
    }
    Ok(MetricResult::new(
        MetricKind::WordPredictionRate,
        100.0 * hits as f64 / n as f64,
        n,
    ))
}

/// Keystrokes saved on one word.
///
/// Candidates are ranked by score (ties to the lowest id); before keystroke
/// `j` the suggestion is the best candidate spelled with the typed prefix.
/// The target is first suggested once every better-ranked candidate shares
/// fewer than `j` leading chars with it.
fn word_savings(scores: &[f64], vocab: &Vocab, target: &str) -> usize {
    let chars: Vec<char> = target.chars().collect();
    let len = chars.len();
    let Some(target_id) = vocab.id(target).filter(|&id| !vocab.is_special(id)) else {
        return 0;
    };
    let ts = scores[target_id];
    let mut blocking = 0;
    for (id, &s) in scores.iter().enumerate() {
        if id == target_id || vocab.is_special(id) {
            continue;
        }
        if s > ts || (s == ts && id < target_id) {
            let shared = vocab
                .item(id)
                .chars()
                .zip(&chars)
                .take_while(|(a, b)| a == *b)
                .count();
            blocking = blocking.max(shared + 1);
            if blocking >= len {
                return 0;
            }
        }
    }
    // accepted before keystroke `blocking`: one tap replaces the remaining chars
    len - blocking - 1
}

/// Percent of keystrokes avoided by accepting correct top-1 completions.
///
/// The denominator counts every char plus one separator between adjacent
/// words; separators are always typed. Words are looked up in `vocab`; an
/// unknown word is never suggested but its chars still count.
pub fn keystroke_savings<S: NextWordScorer + ?Sized>(
    scorer: &S,
    vocab: &Vocab,
    corpus: &[Vec<String>],
) -> Result<MetricResult> {
    let sentences: Vec<_> = corpus.iter().filter(|s| !s.is_empty()).collect();
    if sentences.is_empty() {
        return Err(Error::data("empty corpus"));
    }
    let mut total = 0;
    let mut saved = 0;
    for words in sentences {
        let ids: Vec<usize> = words.iter().map(|w| vocab.id_or(w, crate::models::UNK)).collect();
        let logits = sentence_logits(scorer, &ids)?;
        for (i, w) in words.iter().enumerate() {
            total += w.chars().count();
            saved += word_savings(logits.row(i), vocab, w);
        }
        total += words.len() - 1;
    }
    Ok(MetricResult::new(
        MetricKind::KeystrokeSavings,
        100.0 * saved as f64 / total as f64,
        total,
    ))
}

fn aligned(predictions: &[usize], golds: &[usize]) -> Result<()> {
    if predictions.len() != golds.len() {
        return Err(Error::data(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            golds.len()
        )));
    }
    if golds.is_empty() {
        return Err(Error::data("no labels to score"));
    }
    Ok(())
}

/// Micro-averaged F1 over the listed classes, from pooled TP/FP/FN counts.
pub fn micro_f1(predictions: &[usize], golds: &[usize], classes: &[usize]) -> Result<MetricResult> {
    aligned(predictions, golds)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &g) in predictions.iter().zip(golds) {
        let (pc, gc) = (classes.contains(&p), classes.contains(&g));
        if p == g {
            tp += usize::from(pc);
        } else {
            fp += usize::from(pc);
            fn_ += usize::from(gc);
        }
    }
    let denom = 2 * tp + fp + fn_;
    let f1 = if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
    Ok(MetricResult::new(MetricKind::MicroF1, f1, golds.len()))
}

pub fn accuracy(predictions: &[usize], golds: &[usize]) -> Result<MetricResult> {
    aligned(predictions, golds)?;
    let hits = predictions.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(MetricResult::new(
        MetricKind::Accuracy,
        hits as f64 / golds.len() as f64,
        golds.len(),
    ))
}
