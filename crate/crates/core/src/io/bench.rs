//! Single-threaded latency and tensor-memory measurements.

use std::time::{Duration, Instant};

use crate::blocks::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::models::{Document, Example, Model, Task, TaskGraph, Utterance};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::{memory, Tensor};
use crate::train::autograd::{Eager, Exec};

pub const MIN_RUNS: usize = 50;
pub const MIN_WARMUPS: usize = 5;
/// Calls faster than this are timed in batches.
pub const MIN_TIMED: Duration = Duration::from_millis(1);
/// Bytes per serialized weight.
pub const WEIGHT_BYTES: usize = 4;
/// Fixed bytes counted on top of weights and activations; buffers are the only cost.
pub const MEMORY_OVERHEAD: usize = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct Latency {
    pub runs: usize,
    pub warmups: usize,
    /// Calls per timed sample; above 1 when a single call is under [`MIN_TIMED`].
    pub batch: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
}

impl Latency {
    pub fn auto_batched(&self) -> bool {
        self.batch > 1
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    // nearest rank
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Times `f` on the calling thread (inference spawns no workers): `warmups`
/// discarded calls, then `runs` samples.
pub fn measure_latency(mut f: impl FnMut() -> Result<()>, runs: usize, warmups: usize) -> Result<Latency> {
    if runs < MIN_RUNS || warmups < MIN_WARMUPS {
        return Err(Error::Config(format!(
            "latency needs at least {MIN_RUNS} runs and {MIN_WARMUPS} warmups, got {runs} and {warmups}"
        )));
    }
    {
        for _ in 0..warmups {
            f()?;
        }
        let start = Instant::now();
        f()?;
        let once = start.elapsed();
        let batch = if once >= MIN_TIMED {
            1
        } else {
            (MIN_TIMED.as_secs_f64() / once.as_secs_f64().max(1e-9)).ceil().min(100_000.0) as usize
        };
        let mut samples = Vec::with_capacity(runs);
        for _ in 0..runs {
            let start = Instant::now();
            for _ in 0..batch {
                f()?;
            }
            samples.push(start.elapsed().as_secs_f64() * 1e3 / batch as f64);
        }
        samples.sort_by(f64::total_cmp);
        Ok(Latency {
            runs,
            warmups,
            batch,
            median_ms: percentile(&samples, 0.5),
            p95_ms: percentile(&samples, 0.95),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Memory {
    /// Deployed weights at 32 bits.
    pub weight_bytes: usize,
    /// High-water mark of live tensor buffers during one forward pass.
    pub peak_forward_bytes: usize,
}

impl Memory {
    pub fn total(&self) -> usize {
        self.weight_bytes + self.peak_forward_bytes + MEMORY_OVERHEAD
    }
}

pub fn weight_bytes(model: &Model) -> usize {
    WEIGHT_BYTES * model.param_count()
}

pub fn measure_memory(model: &Model, input: &Example) -> Result<Memory> {
    let (out, peak) = memory::track_peak(|| infer(model, input));
    out?;
    Ok(Memory {
        weight_bytes: weight_bytes(model),
        peak_forward_bytes: peak,
    })
}

/// One inference-mode forward pass; the outputs are dropped.
pub fn infer(model: &Model, input: &Example) -> Result<()> {
    let mut ex = Eager::new(&model.store);
    match (&model.graph, input) {
        (TaskGraph::Nwp(g), Example::Sentence(s)) => {
            g.logits(&mut ex, s)?;
        }
        (TaskGraph::IntentSlot(g), Example::Utterance(u)) => {
            g.forward(&mut ex, u)?;
        }
        (TaskGraph::DocClass(g), Example::Document(d)) => {
            g.logits(&mut ex, &d.bytes)?;
        }
        _ => return Err(Error::data(format!("input does not match a {} model", model.config.task()))),
    }
    Ok(())
}

/// Chars per word in benchmark utterances.
pub const BENCH_WORD_CHARS: usize = 6;

/// Fixed-length random input for `model`: `len` words, tokens or bytes.
pub fn reference_input(model: &Model, len: usize, rng: &mut Rng) -> Result<Example> {
    if len == 0 {
        return Err(Error::Config("input length must be positive".into()));
    }
    Ok(match &model.graph {
        TaskGraph::Nwp(g) => Example::Sentence((0..len).map(|_| 2 + rng.below(g.vocab() - 2)).collect()),
        TaskGraph::IntentSlot(g) => {
            let chars = model.store.get(g.chars.table).shape()[0];
            let gaz = model.store.get(g.gazetteer).shape()[0];
            Example::Utterance(Utterance {
                words: (0..len)
                    .map(|_| (0..BENCH_WORD_CHARS).map(|_| rng.below(chars)).collect())
                    .collect(),
                gazetteer: (0..len).map(|_| vec![rng.below(gaz)]).collect(),
                intent: 0,
                slots: vec![0; len],
            })
        }
        TaskGraph::DocClass(_) => Example::Document(Document {
            bytes: (0..len).map(|_| b'a' + rng.below(26) as u8).collect(),
            label: 0,
        }),
    })
}

pub fn default_len(task: Task) -> usize {
    task.reference_len()
}

/// Latency of a bare encoder stack on a random `[c, t]` input.
pub fn encoder_latency(cfg: EncoderConfig, t: usize, runs: usize, seed: u64) -> Result<Latency> {
    let mut store = ParamStore::new();
    let mut rng = Rng::new(seed);
    let enc = Encoder::init(cfg, &mut store, &mut rng, "encoder")?;
    let x = Tensor::randn(&[cfg.channels, t], 1.0, &mut rng);
    measure_latency(
        || {
            let mut ex = Eager::new(&store);
            let xv = ex.constant(x.clone());
            enc.forward(&mut ex, &xv)?;
            Ok(())
        },
        runs,
        MIN_WARMUPS,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{test_configs, Representation};
    use crate::ops::PoolKind;

    #[test]
    fn sleeping_stub_is_timed() {
        let l = measure_latency(
            || {
                std::thread::sleep(Duration::from_millis(10));
                Ok(())
            },
            MIN_RUNS,
            MIN_WARMUPS,
        )
        .unwrap();
        assert!(!l.auto_batched());
        assert!(l.median_ms >= 10.0 && l.median_ms <= 13.0, "{l:?}");
        assert!(l.median_ms <= l.p95_ms);
    }

    #[test]
    fn fast_calls_are_batched() {
        let mut n = 0u64;
        let l = measure_latency(
            || {
                n = std::hint::black_box(n + 1);
                Ok(())
            },
            MIN_RUNS,
            MIN_WARMUPS,
        )
        .unwrap();
        assert!(l.auto_batched());
    }

    #[test]
    fn too_few_runs_rejected() {
        assert!(measure_latency(|| Ok(()), 10, 5).is_err());
        assert!(measure_latency(|| Ok(()), 50, 1).is_err());
    }

    #[test]
    fn percentiles() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&s, 0.5), 50.0);
        assert_eq!(percentile(&s, 0.95), 95.0);
        assert_eq!(percentile(&[3.0], 0.95), 3.0);
    }

    #[test]
    fn memory_counts_weights_and_widest_map() {
        for repr in Representation::ALL {
            let m = Model::init(test_configs::docclass(repr, PoolKind::Max), 1).unwrap();
            let input = reference_input(&m, 40, &mut Rng::new(0)).unwrap();
            let mem = measure_memory(&m, &input).unwrap();
            assert_eq!(mem.weight_bytes, 4 * m.param_count());
            assert!(mem.peak_forward_bytes >= 8 * 8 * 40, "{repr}: {mem:?}");
        }
    }

    #[test]
    fn every_task_has_reference_inputs() {
        for (cfg, len) in [
            (test_configs::nwp(Representation::Recurrent), 16),
            (test_configs::intent_slot(Representation::Conv(crate::blocks::BlockVariant::ConvGlu)), 12),
        ] {
            let m = Model::init(cfg, 0).unwrap();
            let x = reference_input(&m, len, &mut Rng::new(1)).unwrap();
            infer(&m, &x).unwrap();
        }
    }
}
