//! Next-word prediction with a rank-factorized, tied embedding.

use crate::error::{Error, Result};
use crate::models::{ModelConfig, NwpDims, ReprLayer};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{matmul, Tensor};
use crate::train::autograd::Exec;

/// Unknown-word id.
pub const UNK: usize = 0;
/// Sentence-start id; fed as the first input so word 1 is predicted too.
pub const BOS: usize = 1;

/// `[V, r] x [r, d]` factors of the `[V, d]` embedding table.
#[derive(Clone, Debug)]
pub struct FactorizedEmbedding {
    pub left: ParamId,
    pub right: ParamId,
    pub vocab: usize,
    pub rank: usize,
    pub dim: usize,
}

impl FactorizedEmbedding {
    pub fn init(
        vocab: usize,
        rank: usize,
        dim: usize,
        store: &mut ParamStore,
        rng: &mut Rng,
    ) -> Result<FactorizedEmbedding> {
        let left = store.add(
            "embed.left",
            Tensor::randn(&[vocab, rank], 1.0 / (rank as f64).sqrt(), rng),
        )?;
        let right = store.add(
            "embed.right",
            Tensor::randn(&[rank, dim], 1.0 / (dim as f64).sqrt(), rng),
        )?;
        Ok(FactorizedEmbedding {
            left,
            right,
            vocab,
            rank,
            dim,
        })
    }

    pub fn scalar_count(&self) -> usize {
        self.vocab * self.rank + self.rank * self.dim
    }

    /// The full table, rebuilt from the factors on every call.
    pub fn materialize<E: Exec>(&self, ex: &mut E) -> Result<E::Value> {
        let (a, b) = (ex.param(self.left), ex.param(self.right));
        ex.matmul(&a, &b)
    }
}

/// `left x right`; a rank mismatch is a dimension error.
pub fn materialize(left: &Tensor, right: &Tensor) -> Result<Tensor> {
    let (_, r) = left.dims2()?;
    let (r2, _) = right.dims2()?;
    if r != r2 {
        return Err(Error::Dimension(format!(
            "embedding factors disagree on rank: {:?} x {:?}",
            left.shape(),
            right.shape()
        )));
    }
    matmul(left, right)
}

#[derive(Clone, Debug)]
pub struct NwpModel {
    pub embedding: FactorizedEmbedding,
    pub repr: ReprLayer,
    /// Decoder bias `[V]`; the decoder weight is the transposed table.
    pub decoder_bias: ParamId,
}

impl NwpModel {
    pub fn init(config: &ModelConfig, dims: &NwpDims, store: &mut ParamStore, rng: &mut Rng) -> Result<NwpModel> {
        let d = config.encoder.channels;
        let embedding = FactorizedEmbedding::init(dims.vocab, dims.rank, d, store, rng)?;
        let repr = ReprLayer::init(config.repr, &config.encoder, false, store, rng, "encoder")?;
        let decoder_bias = store.add("decoder.bias", Tensor::zeros(&[dims.vocab]))?;
        Ok(NwpModel {
            embedding,
            repr,
            decoder_bias,
        })
    }

    pub fn vocab(&self) -> usize {
        self.embedding.vocab
    }

    /// `[len, V]` logits; row `i` scores the word following `tokens[..=i]`.
    pub fn logits<E: Exec>(&self, ex: &mut E, tokens: &[usize]) -> Result<E::Value> {
        if tokens.is_empty() {
            return Err(Error::data("empty token sequence"));
        }
        if let Some(&bad) = tokens.iter().find(|&&id| id >= self.vocab()) {
            return Err(Error::Index(format!(
                "token id {bad} out of range for vocabulary of {}",
                self.vocab()
            )));
        }
        let table = self.embedding.materialize(ex)?;
        let emb = ex.embedding(&table, tokens)?;
        let x = ex.transpose(&emb)?;
        let h = self.repr.forward(ex, &x)?;
        let h = ex.transpose(&h)?;
        let decoder = ex.transpose(&table)?;
        let bias = ex.param(self.decoder_bias);
        ex.linear(&h, &decoder, Some(&bias))
    }

    /// Teacher-forced loss summed over every position of `sentence`.
    pub fn loss<E: Exec>(&self, ex: &mut E, sentence: &[usize]) -> Result<E::Value> {
        if sentence.is_empty() {
            return Err(Error::data("empty sentence"));
        }
        let mut input = Vec::with_capacity(sentence.len());
        input.push(BOS);
        input.extend_from_slice(&sentence[..sentence.len() - 1]);
        let logits = self.logits(ex, &input)?;
        let mean = ex.cross_entropy(&logits, sentence)?;
        ex.scale(&mean, sentence.len() as f64)
    }
}
