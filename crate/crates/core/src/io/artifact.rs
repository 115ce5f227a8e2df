//! Binary model artifacts.
//!
//! ```text
//! "FCNV" | version: u8 | header_len: u32 LE | header: UTF-8, header_len bytes
//! records, one per parameter in store order:
//!     name_len: u16 LE | name | rank: u8 | dims: rank x u32 LE | values: f32 LE
//! checksum: u64 LE, FNV-1a 64 over header and records
//! ```
//!
//! The header is sorted `key=value` lines: the model shape, the tokenizer, and
//! `payload.bytes`, `payload.tensors`, `payload.fnv1a64` describing the records.
//! A file therefore takes exactly
//! `9 + header_len + sum(2 + name_len + 1 + 4 * rank + 4 * numel) + 8` bytes.

use std::collections::BTreeMap;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;

use crate::error::{Error, Result};
use crate::io::config::{model_from_keys, model_keys};
use crate::models::{Model, Task};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::vocab::{self, Vocab};

pub const MAGIC: &[u8; 4] = b"FCNV";
pub const VERSION: u8 = 1;
const PREFIX: usize = 9;
const TRAILER: usize = 8;

/// How raw text becomes model input ids.
#[derive(Clone, Debug, PartialEq)]
pub enum Tokenizer {
    Word { vocab: Vocab },
    Char { chars: Vocab, gazetteer: Vocab, intents: Vocab, slots: Vocab },
    Byte,
}

impl Tokenizer {
    pub fn name(&self) -> &'static str {
        match self {
            Tokenizer::Word { .. } => "word",
            Tokenizer::Char { .. } => "char",
            Tokenizer::Byte => "byte",
        }
    }

    pub fn task(&self) -> Task {
        match self {
            Tokenizer::Word { .. } => Task::Nwp,
            Tokenizer::Char { .. } => Task::IntentSlot,
            Tokenizer::Byte => Task::DocClass,
        }
    }

    fn keys(&self, out: &mut BTreeMap<String, String>) {
        out.insert("tokenizer".into(), self.name().into());
        let mut put = |k: &str, v: &Vocab| {
            out.insert(format!("tokenizer.{k}"), join(v.items()));
        };
        match self {
            Tokenizer::Word { vocab } => put("words", vocab),
            Tokenizer::Char { chars, gazetteer, intents, slots } => {
                put("chars", chars);
                put("gazetteer", gazetteer);
                put("intents", intents);
                put("slots", slots);
            }
            Tokenizer::Byte => {}
        }
    }

    fn from_keys(keys: &BTreeMap<String, String>) -> std::result::Result<Tokenizer, String> {
        let get = |k: &str| -> std::result::Result<Vec<String>, String> {
            let v = keys.get(&format!("tokenizer.{k}")).ok_or(format!("missing tokenizer.{k}"))?;
            split(v)
        };
        let vocab = |specials: &[&str], k: &str| -> std::result::Result<Vocab, String> {
            Vocab::new(specials, get(k)?).map_err(|e| e.to_string())
        };
        match keys.get("tokenizer").map(String::as_str) {
            Some("word") => Ok(Tokenizer::Word {
                vocab: vocab(&[vocab::UNK_WORD, vocab::BOS_WORD], "words")?,
            }),
            Some("char") => Ok(Tokenizer::Char {
                chars: vocab(&[vocab::PAD_CHAR, vocab::UNK_CHAR], "chars")?,
                gazetteer: vocab(&[vocab::NO_TAG], "gazetteer")?,
                intents: vocab(&[], "intents")?,
                slots: vocab(&[], "slots")?,
            }),
            Some("byte") => Ok(Tokenizer::Byte),
            Some(other) => Err(format!("unknown tokenizer `{other}`")),
            None => Err("missing tokenizer".into()),
        }
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '%' | ' ' | '\n' | '\r' | '\t' => out.push_str(&format!("%{:02X}", c as u32)),
            _ => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> std::result::Result<String, String> {
    let mut out = Vec::with_capacity(s.len());
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = s.get(i + 1..i + 3).ok_or("dangling escape")?;
            out.push(u8::from_str_radix(hex, 16).map_err(|_| format!("bad escape %{hex}"))?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).map_err(|e| e.to_string())
}

fn join(items: &[String]) -> String {
    items.iter().map(|s| escape(s)).collect::<Vec<_>>().join(" ")
}

fn split(v: &str) -> std::result::Result<Vec<String>, String> {
    v.split(' ').filter(|s| !s.is_empty()).map(unescape).collect()
}

pub fn fnv1a64(parts: &[&[u8]]) -> u64 {
    let mut h = FnvHasher::default();
    for p in parts {
        h.write(p);
    }
    h.finish()
}

/// A loaded model with the tokenizer it was trained with.
#[derive(Clone, Debug)]
pub struct Artifact {
    pub model: Model,
    pub tokenizer: Tokenizer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArtifactInfo {
    pub file_bytes: usize,
    pub header_bytes: usize,
    pub payload_bytes: usize,
    pub tensors: usize,
    pub checksum: u64,
}

fn record_bytes(name: &str, t: &Tensor) -> usize {
    2 + name.len() + 1 + 4 * t.rank() + 4 * t.numel()
}

/// Payload size of `store` in bytes.
pub fn payload_size(store: &ParamStore) -> usize {
    store.iter().map(|(_, n, t)| record_bytes(n, t)).sum()
}

fn encode_payload(store: &ParamStore) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(payload_size(store));
    for (_, name, t) in store.iter() {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Internal(format!("parameter name `{name}` too long")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Internal(format!("`{name}` dim {d} too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Serializes a model with its tokenizer.
pub fn artifact_bytes(model: &Model, tokenizer: &Tokenizer) -> Result<Vec<u8>> {
    if tokenizer.task() != model.config.task() {
        return Err(Error::Config(format!(
            "{} tokenizer cannot serve a {} model",
            tokenizer.name(),
            model.config.task()
        )));
    }
    let payload = encode_payload(&model.store)?;
    let mut keys = model_keys(&model.config);
    tokenizer.keys(&mut keys);
    keys.insert("payload.bytes".into(), payload.len().to_string());
    keys.insert("payload.tensors".into(), model.store.len().to_string());
    keys.insert("payload.fnv1a64".into(), format!("{:016x}", fnv1a64(&[&payload])));
    let header: String = keys.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    let header_len = u32::try_from(header.len()).map_err(|_| Error::Internal("header too large".into()))?;

    let mut out = Vec::with_capacity(PREFIX + header.len() + payload.len() + TRAILER);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&fnv1a64(&[header.as_bytes(), &payload]).to_le_bytes());
    Ok(out)
}

pub fn save_artifact(path: &Path, model: &Model, tokenizer: &Tokenizer) -> Result<ArtifactInfo> {
    let bytes = artifact_bytes(model, tokenizer)?;
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(inspect(&bytes))
}

fn inspect(bytes: &[u8]) -> ArtifactInfo {
    let header = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let n = bytes.len();
    let tail: [u8; 8] = bytes[n - TRAILER..].try_into().unwrap();
    let payload = n - PREFIX - header - TRAILER;
    let count = parse_header(&bytes[PREFIX..PREFIX + header])
        .ok()
        .and_then(|k| k.get("payload.tensors").and_then(|v| v.parse().ok()))
        .unwrap_or(0);
    ArtifactInfo {
        file_bytes: n,
        header_bytes: header,
        payload_bytes: payload,
        tensors: count,
        checksum: u64::from_le_bytes(tail),
    }
}

pub fn load_artifact(path: &Path) -> Result<Artifact> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_artifact(&bytes, path)
}

fn parse_header(raw: &[u8]) -> std::result::Result<BTreeMap<String, String>, String> {
    let text = std::str::from_utf8(raw).map_err(|_| "header is not UTF-8".to_string())?;
    let mut keys = BTreeMap::new();
    for line in text.lines() {
        let (k, v) = line.split_once('=').ok_or_else(|| format!("header line `{line}` has no `=`"))?;
        keys.insert(k.to_string(), v.to_string());
    }
    Ok(keys)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Malformed {
                path: self.path.to_path_buf(),
                what: format!("record overruns payload while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

/// Parses an artifact held in memory; `path` only labels errors.
pub fn decode_artifact(bytes: &[u8], path: &Path) -> Result<Artifact> {
    let p = || path.to_path_buf();
    let truncated = |what: &str| Error::Truncated { path: p(), what: what.to_string() };
    let malformed = |what: String| Error::Malformed { path: p(), what };

    if bytes.len() < MAGIC.len() {
        return Err(if MAGIC.starts_with(bytes) { truncated("magic") } else { Error::BadMagic { path: p() } });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic { path: p() });
    }
    let Some(&version) = bytes.get(4) else { return Err(truncated("version")) };
    if version != VERSION {
        return Err(Error::Version { path: p(), found: version, expected: VERSION });
    }
    if bytes.len() < PREFIX {
        return Err(truncated("header length"));
    }
    let header_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    if bytes.len() < PREFIX + header_len {
        return Err(truncated("header"));
    }
    let header_raw = &bytes[PREFIX..PREFIX + header_len];
    let stored_at = |end: usize| u64::from_le_bytes(bytes[end..end + TRAILER].try_into().unwrap());
    let keys = match parse_header(header_raw) {
        Ok(k) => k,
        Err(msg) => {
            // a damaged header is most likely a checksum failure
            let n = bytes.len();
            if n >= PREFIX + header_len + TRAILER {
                let computed = fnv1a64(&[&bytes[PREFIX..n - TRAILER]]);
                let stored = stored_at(n - TRAILER);
                if computed != stored {
                    return Err(Error::Checksum { path: p(), stored, computed });
                }
            }
            return Err(malformed(msg));
        }
    };
    let payload_len: usize = keys
        .get("payload.bytes")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| malformed("header lacks payload.bytes".into()))?;
    let body_end = PREFIX + header_len + payload_len;
    match bytes.len() {
        n if n < body_end => return Err(truncated(&format!("payload has {} of {payload_len} bytes", n - PREFIX - header_len))),
        n if n == body_end => return Err(Error::MissingChecksum { path: p() }),
        n if n < body_end + TRAILER => return Err(truncated("checksum")),
        n if n > body_end + TRAILER => return Err(malformed(format!("{} bytes after the checksum", n - body_end - TRAILER))),
        _ => {}
    }
    let payload = &bytes[PREFIX + header_len..body_end];
    let stored = stored_at(body_end);
    let computed = fnv1a64(&[header_raw, payload]);
    if stored != computed {
        return Err(Error::Checksum { path: p(), stored, computed });
    }
    let payload_sum = fnv1a64(&[payload]);
    if keys.get("payload.fnv1a64") != Some(&format!("{payload_sum:016x}")) {
        return Err(malformed("header payload checksum disagrees with the records".into()));
    }

    let origin = format!("{} header", path.display());
    let config = model_from_keys(&keys, &origin)?;
    let tokenizer = Tokenizer::from_keys(&keys).map_err(&malformed)?;
    if tokenizer.task() != config.task() {
        return Err(malformed(format!("{} tokenizer with a {} model", tokenizer.name(), config.task())));
    }
    let mut model = Model::init(config, 0)?;
    let expected: usize = keys.get("payload.tensors").and_then(|v| v.parse().ok()).unwrap_or(usize::MAX);
    if expected != model.store.len() {
        return Err(malformed(format!("{expected} tensors declared, model has {}", model.store.len())));
    }

    let mut r = Reader { bytes: payload, pos: 0, path };
    let mut seen = vec![false; model.store.len()];
    while r.pos < payload.len() {
        let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(len, "name")?).map_err(|_| malformed("tensor name is not UTF-8".into()))?;
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(r.take(4, "dims")?.try_into().unwrap()) as usize);
        }
        let id = model.store.find(name).ok_or_else(|| malformed(format!("unknown tensor `{name}`")))?;
        if seen[id.index()] {
            return Err(malformed(format!("tensor `{name}` appears twice")));
        }
        seen[id.index()] = true;
        if shape != model.store.get(id).shape() {
            return Err(malformed(format!(
                "tensor `{name}` has shape {shape:?}, config implies {:?}",
                model.store.get(id).shape()
            )));
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(4 * numel, "values")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        model.store.set(id, Tensor::from_vec(&shape, data)?)?;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        let id = model.store.ids().nth(i).unwrap();
        return Err(malformed(format!("tensor `{}` missing", model.store.name(id))));
    }
    Ok(Artifact { model, tokenizer })
}

/// Plain-text weight dump: the header, then one `name shape` line and one
/// line of values per tensor.
pub fn export_text(artifact: &Artifact) -> Result<String> {
    let mut keys = model_keys(&artifact.model.config);
    artifact.tokenizer.keys(&mut keys);
    let mut out: String = keys.iter().map(|(k, v)| format!("# {k}={v}\n")).collect();
    for (_, name, t) in artifact.model.store.iter() {
        let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        out.push_str(&format!("{name} {}\n", shape.join("x")));
        let vals: Vec<String> = t.data().iter().map(|&v| (v as f32).to_string()).collect();
        out.push_str(&vals.join(" "));
        out.push('\n');
    }
    Ok(out)
}

/// Exact file size for `model`, given the header it would carry.
pub fn expected_file_size(header_bytes: usize, store: &ParamStore) -> usize {
    PREFIX + header_bytes + payload_size(store) + TRAILER
}

/// Where a model lands when no `--out` is given.
pub fn default_path(task: Task, repr: &str) -> PathBuf {
    PathBuf::from(format!("{task}_{repr}.fcnv"))
}
