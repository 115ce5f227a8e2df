//! Joint intent classification and slot tagging over char-CNN + gazetteer word features.

use crate::error::{Error, Result};
use crate::models::{IntentSlotDims, ModelConfig, ReprLayer};
use crate::ops::{ConvSpec, Padding, PoolKind};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::autograd::{Eager, Exec};

pub const CHAR_WIDTHS: [usize; 3] = [2, 3, 4];
/// Reserved char id, also used to encode an empty word.
pub const PAD_CHAR: usize = 0;
/// Gazetteer id meaning "no feature".
pub const NO_FEATURE: usize = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    /// Char ids of every word.
    pub words: Vec<Vec<usize>>,
    /// Gazetteer ids of every word; an empty list reads as [`NO_FEATURE`].
    pub gazetteer: Vec<Vec<usize>>,
    pub intent: usize,
    pub slots: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct CharConv {
    pub width: usize,
    pub filters: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct CharEncoder {
    pub table: ParamId,
    pub char_dim: usize,
    pub per_width: usize,
    pub convs: Vec<CharConv>,
}

/// Zero columns around a word of `len` chars: one on each side, then more on
/// the right until the widest kernel fits.
pub fn char_frame_padding(len: usize) -> (usize, usize) {
    let widest = CHAR_WIDTHS[CHAR_WIDTHS.len() - 1];
    let framed = len + 2;
    (1, 1 + widest.saturating_sub(framed))
}

impl CharEncoder {
    fn init(dims: &IntentSlotDims, store: &mut ParamStore, rng: &mut Rng) -> Result<CharEncoder> {
        let e = dims.char_dim;
        let per_width = dims.char_filters / CHAR_WIDTHS.len();
        let table = store.add("chars.table", Tensor::randn(&[dims.char_vocab, e], 1.0, rng))?;
        let convs = CHAR_WIDTHS
            .iter()
            .map(|&w| {
                Ok(CharConv {
                    width: w,
                    filters: store.add(
                        format!("chars.conv{w}.weight"),
                        crate::blocks::kaiming_uniform(&[per_width, e, w], e * w, rng),
                    )?,
                    bias: store.add(format!("chars.conv{w}.bias"), Tensor::zeros(&[per_width]))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(CharEncoder {
            table,
            char_dim: e,
            per_width,
            convs,
        })
    }

    /// `[d_c]`: per width, max over time of the conv output, concatenated.
    pub fn encode<E: Exec>(&self, ex: &mut E, chars: &[usize]) -> Result<E::Value> {
        let ids: &[usize] = if chars.is_empty() { &[PAD_CHAR] } else { chars };
        let table = ex.param(self.table);
        let emb = ex.embedding(&table, ids)?;
        let x = ex.transpose(&emb)?;
        let (left, right) = char_frame_padding(ids.len());
        let x = ex.pad_time(&x, left, right)?;
        let mut parts = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let spec = ConvSpec::standard(self.char_dim, self.per_width, conv.width, Padding::None)?;
            let (f, b) = (ex.param(conv.filters), ex.param(conv.bias));
            let y = ex.conv(&x, &f, Some(&b), spec)?;
            parts.push(ex.pool(&y, PoolKind::Max)?);
        }
        let refs: Vec<&E::Value> = parts.iter().collect();
        ex.concat_rows(&refs)
    }
}

/// Eager char encoding of one word.
pub fn char_word_encode(chars: &[usize], encoder: &CharEncoder, store: &ParamStore) -> Result<Tensor> {
    let mut ex = Eager::new(store);
    let y = encoder.encode(&mut ex, chars)?;
    Ok(ex.tensor(&y).clone())
}

#[derive(Clone, Debug)]
pub struct IntentSlotModel {
    pub chars: CharEncoder,
    pub gazetteer: ParamId,
    pub intent_tower: ReprLayer,
    pub slot_tower: ReprLayer,
    pub intent_weight: ParamId,
    pub intent_bias: ParamId,
    pub slot_weight: ParamId,
    pub slot_bias: ParamId,
}

impl IntentSlotModel {
    pub fn init(
        config: &ModelConfig,
        dims: &IntentSlotDims,
        store: &mut ParamStore,
        rng: &mut Rng,
    ) -> Result<IntentSlotModel> {
        let c = config.encoder.channels;
        let chars = CharEncoder::init(dims, store, rng)?;
        let gazetteer = store.add(
            "gazetteer.table",
            Tensor::randn(&[dims.gazetteer_vocab, dims.gazetteer_dim], 1.0, rng),
        )?;
        let intent_tower = ReprLayer::init(config.repr, &config.encoder, true, store, rng, "intent_tower")?;
        let slot_tower = ReprLayer::init(config.repr, &config.encoder, true, store, rng, "slot_tower")?;
        let bound = 1.0 / (c as f64).sqrt();
        Ok(IntentSlotModel {
            chars,
            gazetteer,
            intent_tower,
            slot_tower,
            intent_weight: store.add("intent_head.weight", Tensor::uniform(&[c, dims.n_intents], bound, rng))?,
            intent_bias: store.add("intent_head.bias", Tensor::zeros(&[dims.n_intents]))?,
            slot_weight: store.add("slot_head.weight", Tensor::uniform(&[c, dims.n_slots], bound, rng))?,
            slot_bias: store.add("slot_head.bias", Tensor::zeros(&[dims.n_slots]))?,
        })
    }

    /// `[c, T]`: char features stacked over gazetteer features, one column per word.
    pub fn word_reps<E: Exec>(&self, ex: &mut E, u: &Utterance) -> Result<E::Value> {
        if u.words.is_empty() {
            return Err(Error::data("empty utterance"));
        }
        if u.gazetteer.len() != u.words.len() {
            return Err(Error::data(format!(
                "{} gazetteer entries for {} tokens",
                u.gazetteer.len(),
                u.words.len()
            )));
        }
        let gaz = ex.param(self.gazetteer);
        let mut cols = Vec::with_capacity(u.words.len());
        for (word, feats) in u.words.iter().zip(&u.gazetteer) {
            let ch = self.chars.encode(ex, word)?;
            let ids: &[usize] = if feats.is_empty() { &[NO_FEATURE] } else { feats };
            let g = ex.embedding(&gaz, ids)?;
            let g = ex.transpose(&g)?;
            let g = ex.pool(&g, PoolKind::Max)?;
            cols.push(ex.concat_rows(&[&ch, &g])?);
        }
        let refs: Vec<&E::Value> = cols.iter().collect();
        ex.stack_columns(&refs)
    }

    /// `([1, n_intents], [T, n_slots])` logits.
    pub fn forward<E: Exec>(&self, ex: &mut E, u: &Utterance) -> Result<(E::Value, E::Value)> {
        let reps = self.word_reps(ex, u)?;
        let c = ex.tensor(&reps).shape()[0];

        let hi = self.intent_tower.forward(ex, &reps)?;
        let pooled = ex.pool(&hi, PoolKind::Max)?;
        let pooled = ex.reshape(&pooled, &[1, c])?;
        let (wi, bi) = (ex.param(self.intent_weight), ex.param(self.intent_bias));
        let intent = ex.linear(&pooled, &wi, Some(&bi))?;

        let hs = self.slot_tower.forward(ex, &reps)?;
        let hs = ex.transpose(&hs)?;
        let (ws, bs) = (ex.param(self.slot_weight), ex.param(self.slot_bias));
        let slots = ex.linear(&hs, &ws, Some(&bs))?;
        Ok((intent, slots))
    }

    /// Intent cross-entropy plus mean per-token slot cross-entropy.
    pub fn loss<E: Exec>(&self, ex: &mut E, u: &Utterance) -> Result<E::Value> {
        if u.slots.len() != u.words.len() {
            return Err(Error::data(format!(
                "{} slot tags for {} tokens",
                u.slots.len(),
                u.words.len()
            )));
        }
        let (intent, slots) = self.forward(ex, u)?;
        let li = ex.cross_entropy(&intent, &[u.intent])?;
        let ls = ex.cross_entropy(&slots, &u.slots)?;
        ex.add(&li, &ls)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::BlockVariant;
    use crate::models::test_configs::intent_slot;
    use crate::models::{Model, Representation, TaskConfig, TaskGraph};
    use crate::ops::{conv1d_with, pool_time};

    fn graph(m: &Model) -> &IntentSlotModel {
        match &m.graph {
            TaskGraph::IntentSlot(g) => g,
            _ => unreachable!(),
        }
    }

    fn utterance(n: usize, rng: &mut Rng) -> Utterance {
        Utterance {
            words: (0..n).map(|_| (0..1 + rng.below(6)).map(|_| 1 + rng.below(9)).collect()).collect(),
            gazetteer: (0..n).map(|_| (0..rng.below(3)).map(|_| 1 + rng.below(3)).collect()).collect(),
            intent: rng.below(5),
            slots: (0..n).map(|_| rng.below(4)).collect(),
        }
    }

    fn run(m: &Model, u: &Utterance) -> Result<(Tensor, Tensor)> {
        let mut ex = Eager::new(&m.store);
        let (i, s) = graph(m).forward(&mut ex, u)?;
        Ok((ex.tensor(&i).clone(), ex.tensor(&s).clone()))
    }

    #[test]
    fn single_char_frame() {
        assert_eq!(char_frame_padding(1), (1, 2));
        assert_eq!(char_frame_padding(2), (1, 1));
        assert_eq!(char_frame_padding(5), (1, 1));
    }

    #[test]
    fn single_char_width_two_sees_char_between_zeros() {
        let m = Model::init(intent_slot(Representation::Recurrent), 1).unwrap();
        let enc = &graph(&m).chars;
        let v = char_word_encode(&[4], enc, &m.store).unwrap();
        let emb = m.store.get(enc.table).row(4).to_vec();
        let conv = &enc.convs[0];
        let (f, b) = (m.store.get(conv.filters), m.store.get(conv.bias));
        // windows [0, ch], [ch, 0], [0, 0]
        for o in 0..enc.per_width {
            let mut win = [0.0f64; 3];
            for i in 0..enc.char_dim {
                win[0] += f.data()[(o * enc.char_dim + i) * 2 + 1] * emb[i];
                win[1] += f.data()[(o * enc.char_dim + i) * 2] * emb[i];
            }
            let expect = win.iter().map(|w| w + b.data()[o]).fold(f64::NEG_INFINITY, f64::max);
            assert!((v.data()[o] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_convs_give_zero_vector() {
        let mut m = Model::init(intent_slot(Representation::Recurrent), 1).unwrap();
        let enc = graph(&m).chars.clone();
        for conv in &enc.convs {
            m.store.get_mut(conv.filters).data_mut().fill(0.0);
        }
        let v = char_word_encode(&[1, 2, 3], &enc, &m.store).unwrap();
        assert_eq!(v.shape(), &[6]);
        assert!(v.data().iter().all(|&x| x == 0.0));
        // empty word encodes the pad char
        assert_eq!(char_word_encode(&[], &enc, &m.store).unwrap(), v);
    }

    #[test]
    fn char_encoding_matches_composed_oracle() {
        let m = Model::init(intent_slot(Representation::Recurrent), 9).unwrap();
        let enc = &graph(&m).chars;
        let mut rng = Rng::new(4);
        for _ in 0..20 {
            let word: Vec<usize> = (0..1 + rng.below(7)).map(|_| rng.below(10)).collect();
            let got = char_word_encode(&word, enc, &m.store).unwrap();
            let (left, right) = char_frame_padding(word.len());
            let t = word.len() + left + right;
            let table = m.store.get(enc.table);
            let mut frame = vec![0.0; enc.char_dim * t];
            for (j, &ch) in word.iter().enumerate() {
                for i in 0..enc.char_dim {
                    frame[i * t + left + j] = table.at(ch, i);
                }
            }
            let frame = Tensor::from_vec(&[enc.char_dim, t], frame).unwrap();
            let mut expect = Vec::new();
            for conv in &enc.convs {
                let spec = ConvSpec::standard(enc.char_dim, enc.per_width, conv.width, Padding::None).unwrap();
                let y = conv1d_with(&frame, m.store.get(conv.filters), Some(m.store.get(conv.bias)), &spec).unwrap();
                expect.extend_from_slice(pool_time(&y, PoolKind::Max).unwrap().data());
            }
            for (a, b) in got.data().iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shapes_for_every_representation() {
        let mut rng = Rng::new(2);
        for repr in Representation::ALL {
            let m = Model::init(intent_slot(repr), 3).unwrap();
            for n in [1, 4] {
                let (i, s) = run(&m, &utterance(n, &mut rng)).unwrap();
                assert_eq!(i.shape(), &[1, 5], "{repr}");
                assert_eq!(s.shape(), &[n, 4], "{repr}");
            }
        }
    }

    #[test]
    fn reference_label_counts() {
        let mut cfg = intent_slot(Representation::Conv(BlockVariant::SeparableGelu));
        if let TaskConfig::IntentSlot(d) = &mut cfg.task {
            d.n_intents = 36;
            d.n_slots = 14;
        }
        let m = Model::init(cfg, 0).unwrap();
        let u = utterance(3, &mut Rng::new(0));
        let (i, s) = run(&m, &u).unwrap();
        assert_eq!(i.shape(), &[1, 36]);
        assert_eq!(s.shape(), &[3, 14]);
    }

    #[test]
    fn zero_towers_pass_word_reps_through() {
        let mut m = Model::init(intent_slot(Representation::Conv(BlockVariant::SeparableBottleneckGelu)), 5).unwrap();
        let ids: Vec<_> = m
            .store
            .iter()
            .filter(|(_, name, _)| name.contains("_tower."))
            .map(|(id, _, _)| id)
            .collect();
        for id in ids {
            m.store.get_mut(id).data_mut().fill(0.0);
        }
        let u = utterance(4, &mut Rng::new(8));
        let g = graph(&m);
        let mut ex = Eager::new(&m.store);
        let reps = g.word_reps(&mut ex, &u).unwrap();
        let reps = ex.tensor(&reps).clone();
        let pooled = pool_time(&reps, PoolKind::Max).unwrap().reshape(&[1, 8]).unwrap();
        let expect = crate::ops::linear(&pooled, m.store.get(g.intent_weight), Some(m.store.get(g.intent_bias))).unwrap();
        let (i, _) = run(&m, &u).unwrap();
        assert!(i.max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn misaligned_gazetteer_is_a_data_error() {
        let m = Model::init(intent_slot(Representation::Recurrent), 0).unwrap();
        let mut u = utterance(3, &mut Rng::new(1));
        u.gazetteer.pop();
        assert!(matches!(run(&m, &u), Err(Error::Data { .. })));
    }
}
