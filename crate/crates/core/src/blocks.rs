//! Residual convolution blocks and the encoder stack.
//!
//! A block computes `x + act(conv(dropout(x)))`. The four variants are the rows
//! of the ablation ladder:
//!
//! | variant                     | convolution path                              | activation |
//! |-----------------------------|-----------------------------------------------|------------|
//! | `conv_glu`                  | standard conv `c -> 2c`                       | GLU        |
//! | `conv_gelu`                 | standard conv `c -> c`                        | GELU       |
//! | `separable_gelu`            | depthwise `k`, pointwise `c -> c`             | GELU       |
//! | `separable_bottleneck_gelu` | depthwise `k`, pointwise `c -> b`, `b -> c`   | GELU       |
//!
//! Only the conv/pointwise outputs carry a bias; depthwise filters and the
//! down projection do not. Blocks always run at stride 1 so the residual add
//! is well typed.

use std::fmt;

use crate::error::{Error, Result};
use crate::ops::{bottleneck_warning, ActivationKind, ConvSpec, Padding};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::autograd::{Eager, Exec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockVariant {
    ConvGlu,
    ConvGelu,
    SeparableGelu,
    SeparableBottleneckGelu,
}

impl BlockVariant {
    /// Ladder order, heaviest first.
    pub const LADDER: [BlockVariant; 4] = [
        BlockVariant::ConvGlu,
        BlockVariant::ConvGelu,
        BlockVariant::SeparableGelu,
        BlockVariant::SeparableBottleneckGelu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockVariant::ConvGlu => "conv_glu",
            BlockVariant::ConvGelu => "conv_gelu",
            BlockVariant::SeparableGelu => "separable_gelu",
            BlockVariant::SeparableBottleneckGelu => "separable_bottleneck_gelu",
        }
    }

    pub fn parse(s: &str) -> Result<BlockVariant> {
        BlockVariant::LADDER
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown block variant `{s}`")))
    }

    pub fn uses_bottleneck(self) -> bool {
        self == BlockVariant::SeparableBottleneckGelu
    }
}

impl fmt::Display for BlockVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockConfig {
    pub variant: BlockVariant,
    pub channels: usize,
    pub kernel: usize,
    /// Only read by the bottleneck variant.
    pub bottleneck: usize,
    pub dropout: f64,
    pub padding: Padding,
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.kernel == 0 {
            return Err(Error::Config(format!(
                "block needs positive channels and kernel (c={}, k={})",
                self.channels, self.kernel
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.padding == Padding::None {
            return Err(Error::Config(
                "blocks need same or causal padding to keep the residual length".into(),
            ));
        }
        if self.variant.uses_bottleneck() {
            if self.bottleneck == 0 {
                return Err(Error::Config("bottleneck width must be positive".into()));
            }
            if let Some(msg) = bottleneck_warning(self.channels, self.bottleneck) {
                log::warn!("{msg}");
            }
        }
        Ok(())
    }
}

/// Encoder of `n_blocks` identical-shape blocks over `channels == embed_dim`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderConfig {
    pub channels: usize,
    pub n_blocks: usize,
    pub variant: BlockVariant,
    pub kernel: usize,
    pub bottleneck: usize,
    pub dropout: f64,
    pub padding: Padding,
}

impl EncoderConfig {
    pub fn block(&self) -> BlockConfig {
        BlockConfig {
            variant: self.variant,
            channels: self.channels,
            kernel: self.kernel,
            bottleneck: self.bottleneck,
            dropout: self.dropout,
            padding: self.padding,
        }
    }

    pub fn with_variant(&self, variant: BlockVariant) -> EncoderConfig {
        EncoderConfig { variant, ..*self }
    }
}

#[derive(Clone, Debug)]
pub enum BlockWeights {
    ConvGlu {
        filters: ParamId,
        bias: ParamId,
    },
    ConvGelu {
        filters: ParamId,
        bias: ParamId,
    },
    Separable {
        depthwise: ParamId,
        pointwise: ParamId,
        bias: ParamId,
    },
    Bottleneck {
        depthwise: ParamId,
        down: ParamId,
        up: ParamId,
        up_bias: ParamId,
    },
}

/// Kaiming-style uniform init: `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    Tensor::uniform(shape, (6.0 / fan_in as f64).sqrt(), rng)
}

#[derive(Clone, Debug)]
pub struct Block {
    pub config: BlockConfig,
    pub weights: BlockWeights,
}

impl Block {
    pub fn init(config: BlockConfig, store: &mut ParamStore, rng: &mut Rng, prefix: &str) -> Result<Block> {
        config.validate()?;
        let (c, k, b) = (config.channels, config.kernel, config.bottleneck);
        let mut add = |name: &str, t: Tensor| store.add(format!("{prefix}.{name}"), t);
        let weights = match config.variant {
            BlockVariant::ConvGlu => BlockWeights::ConvGlu {
                filters: add("conv.weight", kaiming_uniform(&[2 * c, c, k], c * k, rng))?,
                bias: add("conv.bias", Tensor::zeros(&[2 * c]))?,
            },
            BlockVariant::ConvGelu => BlockWeights::ConvGelu {
                filters: add("conv.weight", kaiming_uniform(&[c, c, k], c * k, rng))?,
                bias: add("conv.bias", Tensor::zeros(&[c]))?,
            },
            BlockVariant::SeparableGelu => BlockWeights::Separable {
                depthwise: add("depthwise.weight", kaiming_uniform(&[c, k], k, rng))?,
                pointwise: add("pointwise.weight", kaiming_uniform(&[c, c], c, rng))?,
                bias: add("pointwise.bias", Tensor::zeros(&[c]))?,
            },
            BlockVariant::SeparableBottleneckGelu => BlockWeights::Bottleneck {
                depthwise: add("depthwise.weight", kaiming_uniform(&[c, k], k, rng))?,
                down: add("down.weight", kaiming_uniform(&[b, c], c, rng))?,
                up: add("up.weight", kaiming_uniform(&[c, b], b, rng))?,
                up_bias: add("up.bias", Tensor::zeros(&[c]))?,
            },
        };
        Ok(Block { config, weights })
    }

    /// `x + act(conv(dropout(x)))` on a `[c, t]` map.
    pub fn forward<E: Exec>(&self, ex: &mut E, x: &E::Value) -> Result<E::Value> {
        let cfg = &self.config;
        let (c, _) = ex.tensor(x).dims2()?;
        if c != cfg.channels {
            return Err(Error::Dimension(format!(
                "block expects {} channels, input has {c}",
                cfg.channels
            )));
        }
        let h = ex.dropout(x, cfg.dropout)?;
        let branch = match &self.weights {
            BlockWeights::ConvGlu { filters, bias } => {
                let spec = ConvSpec::standard(c, 2 * c, cfg.kernel, cfg.padding)?;
                let (f, b) = (ex.param(*filters), ex.param(*bias));
                let y = ex.conv(&h, &f, Some(&b), spec)?;
                ex.activate(&y, ActivationKind::Glu)?
            }
            BlockWeights::ConvGelu { filters, bias } => {
                let spec = ConvSpec::standard(c, c, cfg.kernel, cfg.padding)?;
                let (f, b) = (ex.param(*filters), ex.param(*bias));
                let y = ex.conv(&h, &f, Some(&b), spec)?;
                ex.activate(&y, ActivationKind::Gelu)?
            }
            BlockWeights::Separable {
                depthwise,
                pointwise,
                bias,
            } => {
                let dw = ex.param(*depthwise);
                let y = ex.depthwise(&h, &dw, cfg.padding)?;
                let (pw, b) = (ex.param(*pointwise), ex.param(*bias));
                let y = ex.pointwise(&y, &pw, Some(&b))?;
                ex.activate(&y, ActivationKind::Gelu)?
            }
            BlockWeights::Bottleneck {
                depthwise,
                down,
                up,
                up_bias,
            } => {
                let dw = ex.param(*depthwise);
                let y = ex.depthwise(&h, &dw, cfg.padding)?;
                let dn = ex.param(*down);
                let y = ex.pointwise(&y, &dn, None)?;
                let (u, ub) = (ex.param(*up), ex.param(*up_bias));
                let y = ex.pointwise(&y, &u, Some(&ub))?;
                ex.activate(&y, ActivationKind::Gelu)?
            }
        };
        if ex.tensor(&branch).shape() != ex.tensor(x).shape() {
            return Err(Error::Internal(format!(
                "residual branch {:?} does not match input {:?}",
                ex.tensor(&branch).shape(),
                ex.tensor(x).shape()
            )));
        }
        ex.add(x, &branch)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match &self.weights {
            BlockWeights::ConvGlu { filters, bias } | BlockWeights::ConvGelu { filters, bias } => {
                vec![*filters, *bias]
            }
            BlockWeights::Separable {
                depthwise,
                pointwise,
                bias,
            } => vec![*depthwise, *pointwise, *bias],
            BlockWeights::Bottleneck {
                depthwise,
                down,
                up,
                up_bias,
            } => vec![*depthwise, *down, *up, *up_bias],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub blocks: Vec<Block>,
}

impl Encoder {
    pub fn init(config: EncoderConfig, store: &mut ParamStore, rng: &mut Rng, prefix: &str) -> Result<Encoder> {
        let blocks = (0..config.n_blocks)
            .map(|i| Block::init(config.block(), store, rng, &format!("{prefix}.block{i}")))
            .collect::<Result<_>>()?;
        Ok(Encoder { config, blocks })
    }

    pub fn forward<E: Exec>(&self, ex: &mut E, x: &E::Value) -> Result<E::Value> {
        let mut h = x.clone();
        for (index, block) in self.blocks.iter().enumerate() {
            h = block.forward(ex, &h).map_err(|e| Error::Block {
                index,
                source: Box::new(e),
            })?;
        }
        Ok(h)
    }
}

/// Eager single-block evaluation; `rng` drives dropout when `training`.
pub fn block_forward(x: &Tensor, block: &Block, store: &ParamStore, rng: &mut Rng, training: bool) -> Result<Tensor> {
    let mut ex = if training {
        Eager::training(store, rng)
    } else {
        Eager::new(store)
    };
    let xv = ex.constant(x.clone());
    let y = block.forward(&mut ex, &xv)?;
    Ok(ex.tensor(&y).clone())
}

pub fn encoder_forward(x: &Tensor, encoder: &Encoder, store: &ParamStore, rng: &mut Rng, training: bool) -> Result<Tensor> {
    let mut ex = if training {
        Eager::training(store, rng)
    } else {
        Eager::new(store)
    };
    let xv = ex.constant(x.clone());
    let y = encoder.forward(&mut ex, &xv)?;
    Ok(ex.tensor(&y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{activate, conv1d_with, depthwise_conv1d, pointwise_conv1d};

    fn cfg(variant: BlockVariant, c: usize, k: usize, n: usize, padding: Padding) -> EncoderConfig {
        EncoderConfig {
            channels: c,
            n_blocks: n,
            variant,
            kernel: k,
            bottleneck: (c / 4).max(1),
            dropout: 0.0,
            padding,
        }
    }

    #[test]
    fn zero_weights_are_identity_for_every_variant() {
        for v in BlockVariant::LADDER {
            let mut store = ParamStore::new();
            let mut rng = Rng::new(1);
            let enc = Encoder::init(cfg(v, 4, 3, 3, Padding::Same), &mut store, &mut rng, "enc").unwrap();
            store.zero_all();
            let x = Tensor::randn(&[4, 6], 1.0, &mut rng);
            let y = encoder_forward(&x, &enc, &store, &mut rng, false).unwrap();
            assert_eq!(y, x, "{v}");
        }
    }

    #[test]
    fn empty_and_singleton_encoders() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(2);
        let x = Tensor::randn(&[4, 5], 1.0, &mut rng);
        let enc = Encoder::init(cfg(BlockVariant::ConvGelu, 4, 3, 0, Padding::Same), &mut store, &mut rng, "e0").unwrap();
        assert_eq!(encoder_forward(&x, &enc, &store, &mut rng, false).unwrap(), x);
        let enc = Encoder::init(cfg(BlockVariant::ConvGelu, 4, 3, 1, Padding::Same), &mut store, &mut rng, "e1").unwrap();
        assert_eq!(
            encoder_forward(&x, &enc, &store, &mut rng, false).unwrap(),
            block_forward(&x, &enc.blocks[0], &store, &mut rng, false).unwrap()
        );
    }

    #[test]
    fn delta_conv_gelu_block() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(3);
        let block = Block::init(cfg(BlockVariant::ConvGelu, 2, 3, 1, Padding::Same).block(), &mut store, &mut rng, "b").unwrap();
        let BlockWeights::ConvGelu { filters, bias } = block.weights else { unreachable!() };
        let mut w = Tensor::zeros(&[2, 2, 3]);
        w.data_mut()[1] = 1.0; // out 0, in 0, centre tap
        w.data_mut()[2 * 3 + 3 + 1] = 1.0; // out 1, in 1, centre tap
        store.set(filters, w).unwrap();
        store.set(bias, Tensor::zeros(&[2])).unwrap();
        let x = Tensor::randn(&[2, 5], 1.0, &mut rng);
        let y = block_forward(&x, &block, &store, &mut rng, false).unwrap();
        for (yv, xv) in y.data().iter().zip(x.data()) {
            assert!((yv - (xv + crate::ops::gelu(*xv))).abs() < 1e-15);
        }
    }

    #[test]
    fn bottleneck_block_matches_hand_pipeline() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(4);
        let block = Block::init(
            cfg(BlockVariant::SeparableBottleneckGelu, 8, 3, 1, Padding::Same).block(),
            &mut store,
            &mut rng,
            "b",
        )
        .unwrap();
        let BlockWeights::Bottleneck { depthwise, down, up, up_bias } = block.weights else { unreachable!() };
        store.set(up_bias, Tensor::randn(&[8], 1.0, &mut rng)).unwrap();
        let x = Tensor::randn(&[8, 7], 1.0, &mut rng);
        let y = block_forward(&x, &block, &store, &mut rng, false).unwrap();

        let h = depthwise_conv1d(&x, store.get(depthwise), Padding::Same).unwrap();
        let h = pointwise_conv1d(&h, store.get(down), None).unwrap();
        let h = pointwise_conv1d(&h, store.get(up), Some(store.get(up_bias))).unwrap();
        let h = activate(&h, ActivationKind::Gelu).unwrap();
        let mut expect = x.clone();
        expect.add_assign(&h).unwrap();
        assert!(y.max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn glu_block_matches_hand_pipeline() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(5);
        let block = Block::init(cfg(BlockVariant::ConvGlu, 3, 3, 1, Padding::Causal).block(), &mut store, &mut rng, "b").unwrap();
        let BlockWeights::ConvGlu { filters, bias } = block.weights else { unreachable!() };
        let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let y = block_forward(&x, &block, &store, &mut rng, false).unwrap();
        let spec = ConvSpec::standard(3, 6, 3, Padding::Causal).unwrap();
        let h = conv1d_with(&x, store.get(filters), Some(store.get(bias)), &spec).unwrap();
        assert_eq!(h.shape(), &[6, 4]);
        let h = activate(&h, ActivationKind::Glu).unwrap();
        let mut expect = x.clone();
        expect.add_assign(&h).unwrap();
        assert!(y.max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn shapes_are_preserved() {
        for v in BlockVariant::LADDER {
            for c in [2, 4, 8] {
                for k in [1, 3, 5] {
                    for t in [1, 5, 9] {
                        let mut store = ParamStore::new();
                        let mut rng = Rng::new((c * 100 + k * 10 + t) as u64);
                        let enc = Encoder::init(cfg(v, c, k, 2, Padding::Same), &mut store, &mut rng, "e").unwrap();
                        let x = Tensor::randn(&[c, t], 1.0, &mut rng);
                        let y = encoder_forward(&x, &enc, &store, &mut rng, false).unwrap();
                        assert_eq!(y.shape(), x.shape(), "{v} c={c} k={k} t={t}");
                    }
                }
            }
        }
    }

    #[test]
    fn causal_encoder_ignores_the_future() {
        for v in BlockVariant::LADDER {
            let mut store = ParamStore::new();
            let mut rng = Rng::new(6);
            let enc = Encoder::init(cfg(v, 4, 3, 3, Padding::Causal), &mut store, &mut rng, "e").unwrap();
            let x = Tensor::randn(&[4, 8], 1.0, &mut rng);
            let mut x2 = x.clone();
            for ch in 0..4 {
                x2.data_mut()[ch * 8 + 5] += 0.7;
            }
            let a = encoder_forward(&x, &enc, &store, &mut rng, false).unwrap();
            let b = encoder_forward(&x2, &enc, &store, &mut rng, false).unwrap();
            for ch in 0..4 {
                assert_eq!(&a.row(ch)[..5], &b.row(ch)[..5], "{v}");
                assert_ne!(a.row(ch)[5], b.row(ch)[5]);
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let config = cfg(BlockVariant::ConvGelu, 64, 3, 1, Padding::Same);
        let mut s1 = ParamStore::new();
        let mut s2 = ParamStore::new();
        Encoder::init(config, &mut s1, &mut Rng::new(9), "e").unwrap();
        Encoder::init(config, &mut s2, &mut Rng::new(9), "e").unwrap();
        let w1 = s1.get(s1.find("e.block0.conv.weight").unwrap());
        let w2 = s2.get(s2.find("e.block0.conv.weight").unwrap());
        assert_eq!(w1.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), w2.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        let bound = (6.0f64 / (64.0 * 3.0)).sqrt();
        assert!(w1.data().iter().all(|v| v.abs() <= bound));
        assert!(s1.get(s1.find("e.block0.conv.bias").unwrap()).data().iter().all(|&v| v == 0.0));

        let draws = kaiming_uniform(&[10_000], 64 * 3, &mut Rng::new(10));
        assert!(draws.mean().abs() < 0.01);
    }

    #[test]
    fn block_errors() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(7);
        let enc = Encoder::init(cfg(BlockVariant::SeparableGelu, 4, 3, 2, Padding::Same), &mut store, &mut rng, "e").unwrap();
        let x = Tensor::zeros(&[3, 5]);
        let err = encoder_forward(&x, &enc, &store, &mut rng, false).unwrap_err();
        assert!(matches!(err, Error::Block { index: 0, .. }), "{err}");

        let mut bad = cfg(BlockVariant::ConvGelu, 4, 3, 1, Padding::None).block();
        assert!(bad.validate().is_err());
        bad.padding = Padding::Same;
        bad.dropout = 1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn dropout_only_touches_the_branch_in_training() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(8);
        let mut config = cfg(BlockVariant::ConvGelu, 4, 3, 1, Padding::Same);
        config.dropout = 0.5;
        let enc = Encoder::init(config, &mut store, &mut rng, "e").unwrap();
        let x = Tensor::randn(&[4, 6], 1.0, &mut rng);
        let infer_a = encoder_forward(&x, &enc, &store, &mut Rng::new(1), false).unwrap();
        let infer_b = encoder_forward(&x, &enc, &store, &mut Rng::new(2), false).unwrap();
        assert_eq!(infer_a, infer_b);
        let train_a = encoder_forward(&x, &enc, &store, &mut Rng::new(1), true).unwrap();
        let train_a2 = encoder_forward(&x, &enc, &store, &mut Rng::new(1), true).unwrap();
        assert_eq!(train_a, train_a2);
        assert_ne!(train_a, infer_a);
    }
}
