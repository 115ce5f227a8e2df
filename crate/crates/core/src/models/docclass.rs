//! Byte-level binary document classification.

use crate::error::{Error, Result};
use crate::models::{DocClassDims, ModelConfig, ReprLayer};
use crate::ops::PoolKind;
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::autograd::Exec;

pub const BYTE_VOCAB: usize = 256;
pub const N_CLASSES: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub bytes: Vec<u8>,
    pub label: usize,
}

#[derive(Clone, Debug)]
pub struct DocClassModel {
    pub table: ParamId,
    pub repr: ReprLayer,
    pub pool: PoolKind,
    pub head_weight: ParamId,
    pub head_bias: ParamId,
}

impl DocClassModel {
    pub fn init(
        config: &ModelConfig,
        dims: &DocClassDims,
        store: &mut ParamStore,
        rng: &mut Rng,
    ) -> Result<DocClassModel> {
        let d = config.encoder.channels;
        let table = store.add("bytes.table", Tensor::randn(&[BYTE_VOCAB, d], 1.0, rng))?;
        let repr = ReprLayer::init(config.repr, &config.encoder, true, store, rng, "encoder")?;
        let bound = 1.0 / (d as f64).sqrt();
        Ok(DocClassModel {
            table,
            repr,
            pool: dims.pool,
            head_weight: store.add("head.weight", Tensor::uniform(&[d, N_CLASSES], bound, rng))?,
            head_bias: store.add("head.bias", Tensor::zeros(&[N_CLASSES]))?,
        })
    }

    /// `[1, 2]` logits.
    pub fn logits<E: Exec>(&self, ex: &mut E, bytes: &[u8]) -> Result<E::Value> {
        if bytes.is_empty() {
            return Err(Error::data("empty document"));
        }
        let ids: Vec<usize> = bytes.iter().map(|&b| b as usize).collect();
        let table = ex.param(self.table);
        let emb = ex.embedding(&table, &ids)?;
        let x = ex.transpose(&emb)?;
        let h = self.repr.forward(ex, &x)?;
        let pooled = ex.pool(&h, self.pool)?;
        let d = ex.tensor(&pooled).numel();
        let pooled = ex.reshape(&pooled, &[1, d])?;
        let (w, b) = (ex.param(self.head_weight), ex.param(self.head_bias));
        ex.linear(&pooled, &w, Some(&b))
    }

    pub fn loss<E: Exec>(&self, ex: &mut E, doc: &Document) -> Result<E::Value> {
        let logits = self.logits(ex, &doc.bytes)?;
        ex.cross_entropy(&logits, &[doc.label])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::BlockVariant;
    use crate::models::test_configs::docclass;
    use crate::models::{Model, Representation, TaskGraph};
    use crate::train::autograd::Eager;

    fn logits(m: &Model, bytes: &[u8]) -> Result<Tensor> {
        let TaskGraph::DocClass(g) = &m.graph else { unreachable!() };
        let mut ex = Eager::new(&m.store);
        let y = g.logits(&mut ex, bytes)?;
        Ok(ex.tensor(&y).clone())
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let mut m = Model::init(docclass(Representation::Recurrent, PoolKind::Max), 0).unwrap();
        m.store.zero_all();
        assert_eq!(logits(&m, b"abc").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn single_byte_pool_is_identity() {
        let mut m = Model::init(docclass(Representation::Conv(BlockVariant::ConvGelu), PoolKind::Avg), 0).unwrap();
        let enc: Vec<_> = m
            .store
            .iter()
            .filter(|(_, n, _)| n.starts_with("encoder."))
            .map(|(id, _, _)| id)
            .collect();
        for id in enc {
            m.store.get_mut(id).data_mut().fill(0.0);
        }
        let TaskGraph::DocClass(g) = &m.graph else { unreachable!() };
        let row = Tensor::from_vec(&[1, 8], m.store.get(g.table).row(b'q' as usize).to_vec()).unwrap();
        let expect = crate::ops::linear(&row, m.store.get(g.head_weight), Some(m.store.get(g.head_bias))).unwrap();
        assert!(logits(&m, b"q").unwrap().max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn avg_pool_with_identity_encoder_ignores_order() {
        let mut m = Model::init(docclass(Representation::Conv(BlockVariant::SeparableBottleneckGelu), PoolKind::Avg), 4).unwrap();
        let enc: Vec<_> = m
            .store
            .iter()
            .filter(|(_, n, _)| n.starts_with("encoder."))
            .map(|(id, _, _)| id)
            .collect();
        for id in enc {
            m.store.get_mut(id).data_mut().fill(0.0);
        }
        let a = logits(&m, b"hello world").unwrap();
        let b = logits(&m, b"dlrow olleh").unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }

    #[test]
    fn every_representation_runs() {
        for repr in Representation::ALL {
            for pool in [PoolKind::Max, PoolKind::Avg] {
                let m = Model::init(docclass(repr, pool), 1).unwrap();
                assert_eq!(logits(&m, b"some bytes \xff\x00").unwrap().shape(), &[1, 2]);
            }
        }
    }

    #[test]
    fn empty_document_is_a_data_error() {
        let m = Model::init(docclass(Representation::Recurrent, PoolKind::Max), 0).unwrap();
        assert!(matches!(logits(&m, b""), Err(Error::Data { .. })));
    }
}
