//! Text dataset formats and their tokenization.
//!
//! * next-word prediction: one whitespace-tokenized sentence per line, plus a
//!   vocabulary file with one token per line;
//! * intent/slot: utterances separated by blank lines, each opening with
//!   `#intent <label>` followed by `token<TAB>gazetteer<TAB>slot` lines, where
//!   gazetteer is a comma-joined tag list or `-`;
//! * document classification: `<label 0|1><TAB><text>` per line, text as raw bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::artifact::Tokenizer;
use crate::models::{Document, Example, ModelConfig, TaskConfig, Utterance, UNK};
use crate::models::docclass::N_CLASSES;
use crate::vocab::{self, Vocab};

/// Char id for characters outside the alphabet.
pub const UNK_CHAR_ID: usize = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaggedUtterance {
    pub intent: String,
    pub tokens: Vec<String>,
    pub gazetteer: Vec<Vec<String>>,
    pub slots: Vec<String>,
}

/// Raw text examples of one split.
#[derive(Clone, Debug, PartialEq)]
pub enum Split {
    Sentences(Vec<Vec<String>>),
    Utterances(Vec<TaggedUtterance>),
    Documents(Vec<Document>),
}

impl Split {
    pub fn len(&self) -> usize {
        match self {
            Split::Sentences(s) => s.len(),
            Split::Utterances(u) => u.len(),
            Split::Documents(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub test: Split,
    /// Fixed word list; otherwise one is fitted to the training split.
    pub vocab: Option<Vocab>,
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Data { line, msg } => Error::Data {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        e => e,
    }
}

pub fn parse_sentences(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect()
}

/// One token per line; blank lines are skipped, whitespace inside a line is an error.
pub fn parse_vocab(text: &str) -> Result<Vocab> {
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let tok = line.trim();
        if tok.is_empty() {
            continue;
        }
        if tok.contains(char::is_whitespace) {
            return Err(Error::data_at(i + 1, format!("vocab entry `{tok}` contains whitespace")));
        }
        items.push(tok.to_string());
    }
    Vocab::words(items)
}

pub fn parse_intent_slot(text: &str) -> Result<Vec<TaggedUtterance>> {
    let mut out = Vec::new();
    let mut current: Option<TaggedUtterance> = None;
    let mut started_at = 0;
    let finish = |u: Option<TaggedUtterance>, line: usize, out: &mut Vec<TaggedUtterance>| -> Result<()> {
        if let Some(u) = u {
            if u.tokens.is_empty() {
                return Err(Error::data_at(line, "utterance has no tokens"));
            }
            out.push(u);
        }
        Ok(())
    };
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(current.take(), started_at, &mut out)?;
            continue;
        }
        if let Some(rest) = line.strip_prefix("#intent") {
            if current.is_some() {
                return Err(Error::data_at(n, "`#intent` inside an utterance; separate utterances with a blank line"));
            }
            let label = rest.trim();
            if label.is_empty() || label.contains(char::is_whitespace) || !rest.starts_with([' ', '\t']) {
                return Err(Error::data_at(n, format!("expected `#intent <label>`, got `{line}`")));
            }
            current = Some(TaggedUtterance {
                intent: label.to_string(),
                tokens: Vec::new(),
                gazetteer: Vec::new(),
                slots: Vec::new(),
            });
            started_at = n;
            continue;
        }
        let Some(u) = current.as_mut() else {
            return Err(Error::data_at(n, "utterance must open with `#intent <label>`"));
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::data_at(
                n,
                format!("expected token, gazetteer and slot columns, found {} column(s)", cols.len()),
            ));
        }
        if cols.iter().any(|c| c.trim().is_empty()) {
            return Err(Error::data_at(n, "empty column"));
        }
        u.tokens.push(cols[0].trim().to_string());
        u.gazetteer.push(match cols[1].trim() {
            vocab::NO_TAG => Vec::new(),
            tags => tags.split(',').map(|t| t.trim().to_string()).collect(),
        });
        u.slots.push(cols[2].trim().to_string());
    }
    finish(current, started_at, &mut out)?;
    Ok(out)
}

pub fn parse_documents(bytes: &[u8]) -> Result<Vec<Document>> {
    let mut out = Vec::new();
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = raw.strip_suffix(b"\r").unwrap_or(raw);
        if line.is_empty() {
            continue;
        }
        let Some(tab) = line.iter().position(|&b| b == b'\t') else {
            return Err(Error::data_at(i + 1, "expected `<label>\\t<text>`"));
        };
        let label = match &line[..tab] {
            b"0" => 0,
            b"1" => 1,
            other => {
                return Err(Error::data_at(
                    i + 1,
                    format!("label must be 0 or 1, got `{}`", String::from_utf8_lossy(other)),
                ))
            }
        };
        debug_assert!(label < N_CLASSES);
        let text = &line[tab + 1..];
        if text.is_empty() {
            return Err(Error::data_at(i + 1, "empty document"));
        }
        out.push(Document { bytes: text.to_vec(), label });
    }
    Ok(out)
}

pub fn load_sentences(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(parse_sentences(&read_text(path)?))
}

pub fn load_vocab(path: &Path) -> Result<Vocab> {
    parse_vocab(&read_text(path)?).map_err(|e| with_path(path, e))
}

pub fn load_intent_slot(path: &Path) -> Result<Vec<TaggedUtterance>> {
    parse_intent_slot(&read_text(path)?).map_err(|e| with_path(path, e))
}

pub fn load_documents(path: &Path) -> Result<Vec<Document>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_documents(&bytes).map_err(|e| with_path(path, e))
}

fn chars_of(word: &str) -> impl Iterator<Item = String> + '_ {
    word.chars().map(String::from)
}

impl Tokenizer {
    /// Builds the tokenizer for `train`: the given vocab or one fitted by
    /// descending frequency for words, sorted inventories for chars and labels.
    pub fn fit(train: &Split, vocab: Option<&Vocab>) -> Result<Tokenizer> {
        match train {
            Split::Sentences(sentences) => {
                if let Some(v) = vocab {
                    return Ok(Tokenizer::Word { vocab: v.clone() });
                }
                let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                for w in sentences.iter().flatten() {
                    *counts.entry(w).or_default() += 1;
                }
                let mut words: Vec<(&str, usize)> = counts.into_iter().collect();
                words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
                Ok(Tokenizer::Word {
                    vocab: Vocab::words(words.into_iter().map(|(w, _)| w).filter(|w| {
                        *w != vocab::UNK_WORD && *w != vocab::BOS_WORD
                    }))?,
                })
            }
            Split::Utterances(us) => {
                let mut chars = BTreeSet::new();
                let mut gaz = BTreeSet::new();
                let mut intents = BTreeSet::new();
                let mut slots = BTreeSet::new();
                for u in us {
                    intents.insert(u.intent.clone());
                    for t in &u.tokens {
                        chars.extend(chars_of(t));
                    }
                    gaz.extend(u.gazetteer.iter().flatten().cloned());
                    slots.extend(u.slots.iter().cloned());
                }
                chars.remove(vocab::PAD_CHAR);
                chars.remove(vocab::UNK_CHAR);
                gaz.remove(vocab::NO_TAG);
                Ok(Tokenizer::Char {
                    chars: Vocab::new(&[vocab::PAD_CHAR, vocab::UNK_CHAR], chars)?,
                    gazetteer: Vocab::new(&[vocab::NO_TAG], gaz)?,
                    intents: Vocab::labels(intents)?,
                    slots: Vocab::labels(slots)?,
                })
            }
            Split::Documents(_) => Ok(Tokenizer::Byte),
        }
    }

    /// Copies the vocabulary sizes into `cfg`.
    pub fn size_model(&self, cfg: &mut ModelConfig) {
        match (self, &mut cfg.task) {
            (Tokenizer::Word { vocab }, TaskConfig::Nwp(d)) => d.vocab = vocab.len(),
            (Tokenizer::Char { chars, gazetteer, intents, slots }, TaskConfig::IntentSlot(d)) => {
                d.char_vocab = chars.len();
                d.gazetteer_vocab = gazetteer.len();
                d.n_intents = intents.len();
                d.n_slots = slots.len();
            }
            _ => {}
        }
    }

    pub fn encode_sentence(&self, words: &[String]) -> Vec<usize> {
        match self {
            Tokenizer::Word { vocab } => words.iter().map(|w| vocab.id_or(w, UNK)).collect(),
            _ => Vec::new(),
        }
    }

    /// Unknown chars and gazetteer tags degrade gracefully; unknown labels are errors.
    pub fn encode_utterance(&self, u: &TaggedUtterance) -> Result<Utterance> {
        let Tokenizer::Char { chars, gazetteer, intents, slots } = self else {
            return Err(Error::Config(format!("{} tokenizer cannot encode utterances", self.name())));
        };
        if u.gazetteer.len() != u.tokens.len() || u.slots.len() != u.tokens.len() {
            return Err(Error::data(format!(
                "{} tokens, {} gazetteer entries, {} slots",
                u.tokens.len(),
                u.gazetteer.len(),
                u.slots.len()
            )));
        }
        let intent = intents
            .id(&u.intent)
            .ok_or_else(|| Error::data(format!("unknown intent `{}`", u.intent)))?;
        let slot_ids = u
            .slots
            .iter()
            .map(|s| slots.id(s).ok_or_else(|| Error::data(format!("unknown slot tag `{s}`"))))
            .collect::<Result<_>>()?;
        Ok(Utterance {
            words: u
                .tokens
                .iter()
                .map(|t| chars_of(t).map(|c| chars.id_or(&c, UNK_CHAR_ID)).collect())
                .collect(),
            gazetteer: u
                .gazetteer
                .iter()
                .map(|tags| tags.iter().filter_map(|t| gazetteer.id(t)).filter(|&g| g != 0).collect())
                .collect(),
            intent,
            slots: slot_ids,
        })
    }

    /// Training examples of a split.
    pub fn examples(&self, split: &Split) -> Result<Vec<Example>> {
        match split {
            Split::Sentences(s) => Ok(s.iter().map(|w| Example::Sentence(self.encode_sentence(w))).collect()),
            Split::Utterances(us) => us
                .iter()
                .map(|u| self.encode_utterance(u).map(Example::Utterance))
                .collect(),
            Split::Documents(d) => Ok(d.iter().cloned().map(Example::Document).collect()),
        }
    }
}
