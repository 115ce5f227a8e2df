//! Analytic operation and parameter counts.
//!
//! One operation is one multiply-accumulate. Bias adds and activations are
//! left out of op counts but bias scalars are counted as parameters.

use std::fmt::Write as _;

use crate::blocks::{BlockVariant, EncoderConfig};
use crate::error::{Error, Result};
use crate::models::intent_slot::{char_frame_padding, CHAR_WIDTHS};
use crate::models::{docclass, ModelConfig, Representation, TaskConfig};
use crate::ops::{bottleneck_warning, ConvSpec, Padding};

/// Word length assumed when counting char-CNN operations.
pub const REFERENCE_WORD_CHARS: usize = 6;

fn positive(args: &[(&str, u64)]) -> Result<()> {
    for (name, v) in args {
        if *v == 0 {
            return Err(Error::Config(format!("{name} must be positive")));
        }
    }
    Ok(())
}

/// `c^2 k t`
pub fn ops_standard(c: u64, k: u64, t_next: u64) -> Result<u64> {
    positive(&[("c", c), ("k", k), ("t", t_next)])?;
    Ok(c * c * k * t_next)
}

/// `c k t + c^2 t`
pub fn ops_separable(c: u64, k: u64, t_next: u64) -> Result<u64> {
    positive(&[("c", c), ("k", k), ("t", t_next)])?;
    Ok(c * k * t_next + c * c * t_next)
}

/// `c k t + 2 b c t`; warns when the pair is no cheaper than a full pointwise.
pub fn ops_bottleneck(c: u64, k: u64, t_next: u64, b: u64) -> Result<u64> {
    positive(&[("c", c), ("k", k), ("t", t_next), ("b", b)])?;
    if let Some(msg) = bottleneck_warning(c as usize, b as usize) {
        log::warn!("{msg}");
    }
    Ok(c * k * t_next + 2 * b * c * t_next)
}

/// `c^2 k t + c^2 t`: a depthwise stage that still mixes all channels, then a pointwise.
pub fn ops_unoptimized_separable(c: u64, k: u64, t_next: u64) -> Result<u64> {
    positive(&[("c", c), ("k", k), ("t", t_next)])?;
    Ok(c * c * k * t_next + c * c * t_next)
}

fn conv_ops(spec: &ConvSpec, t_next: usize) -> u64 {
    (spec.out_channels * (spec.in_channels / spec.groups) * spec.kernel * t_next) as u64
}

fn conv_params(spec: &ConvSpec, bias: bool) -> u64 {
    (spec.filter_len() + if bias { spec.out_channels } else { 0 }) as u64
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub layer: String,
    pub ops: u64,
    pub params: u64,
}

impl LayerCost {
    fn new(layer: impl Into<String>, ops: u64, params: u64) -> LayerCost {
        LayerCost {
            layer: layer.into(),
            ops,
            params,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineTotals {
    pub label: String,
    pub ops: u64,
    pub params: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub label: String,
    pub layers: Vec<LayerCost>,
    pub total_ops: u64,
    pub total_params: u64,
    pub baseline: Option<BaselineTotals>,
}

impl CostReport {
    pub fn new(label: impl Into<String>, layers: Vec<LayerCost>) -> CostReport {
        CostReport {
            label: label.into(),
            total_ops: layers.iter().map(|l| l.ops).sum(),
            total_params: layers.iter().map(|l| l.params).sum(),
            layers,
            baseline: None,
        }
    }

    pub fn against(mut self, baseline: &CostReport) -> CostReport {
        self.baseline = Some(BaselineTotals {
            label: baseline.label.clone(),
            ops: baseline.total_ops,
            params: baseline.total_params,
        });
        self
    }

    /// Baseline parameters over ours.
    pub fn param_ratio(&self) -> Option<f64> {
        self.baseline
            .as_ref()
            .map(|b| b.params as f64 / self.total_params as f64)
    }

    pub fn op_ratio(&self) -> Option<f64> {
        self.baseline.as_ref().map(|b| b.ops as f64 / self.total_ops as f64)
    }

    /// Canonical `key, value` pairs under `prefix`.
    pub fn key_values(&self, prefix: &str) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push((format!("{prefix}.layer.{}.params", l.layer), l.params.to_string()));
            out.push((format!("{prefix}.layer.{}.ops", l.layer), l.ops.to_string()));
        }
        out.push((format!("{prefix}.params"), self.total_params.to_string()));
        out.push((format!("{prefix}.ops"), self.total_ops.to_string()));
        if let (Some(b), Some(pr), Some(or)) = (&self.baseline, self.param_ratio(), self.op_ratio()) {
            out.push((format!("{prefix}.baseline"), b.label.clone()));
            out.push((format!("{prefix}.param_ratio"), format!("{pr:.4}")));
            out.push((format!("{prefix}.op_ratio"), format!("{or:.4}")));
        }
        out
    }

    pub fn table(&self) -> String {
        let width = self
            .layers
            .iter()
            .map(|l| l.layer.len())
            .chain([5])
            .max()
            .unwrap_or(5);
        let mut s = String::new();
        let _ = writeln!(s, "# {} (ops = multiply-accumulates; biases counted as params only)", self.label);
        let _ = writeln!(s, "{:<width$}  {:>12} {:>10}  {:>14} {:>10}", "layer", "params", "", "ops", "");
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{:<width$}  {:>12} {:>10}  {:>14} {:>10}",
                l.layer,
                l.params,
                human(l.params),
                l.ops,
                human(l.ops)
            );
        }
        let _ = writeln!(
            s,
            "{:<width$}  {:>12} {:>10}  {:>14} {:>10}",
            "total",
            self.total_params,
            human(self.total_params),
            self.total_ops,
            human(self.total_ops)
        );
        if let (Some(b), Some(pr), Some(or)) = (&self.baseline, self.param_ratio(), self.op_ratio()) {
            let _ = writeln!(s, "vs {}: params {pr:.2}x smaller, ops {or:.2}x fewer", b.label);
        }
        s
    }
}

/// `950`, `292.30 K`, `2.10 M`.
pub fn human(n: u64) -> String {
    if n < 1_000 {
        n.to_string()
    } else if n < 1_000_000 {
        format!("{:.2} K", n as f64 / 1e3)
    } else {
        format!("{:.2} M", n as f64 / 1e6)
    }
}

fn encoder_layers(cfg: &EncoderConfig, t: usize, prefix: &str) -> Result<Vec<LayerCost>> {
    let (c, k, b) = (cfg.channels, cfg.kernel, cfg.bottleneck);
    let mut out = Vec::new();
    let mut t = t;
    for i in 0..cfg.n_blocks {
        let p = format!("{prefix}.block{i}");
        match cfg.variant {
            BlockVariant::ConvGlu | BlockVariant::ConvGelu => {
                let width = if cfg.variant == BlockVariant::ConvGlu { 2 * c } else { c };
                let spec = ConvSpec::standard(c, width, k, cfg.padding)?;
                let tn = spec.output_len(t)?;
                out.push(LayerCost::new(format!("{p}.conv"), conv_ops(&spec, tn), conv_params(&spec, true)));
                t = tn;
            }
            BlockVariant::SeparableGelu => {
                let dw = ConvSpec::depthwise(c, k, cfg.padding)?;
                let tn = dw.output_len(t)?;
                let pw = ConvSpec::pointwise(c, c)?;
                out.push(LayerCost::new(format!("{p}.depthwise"), conv_ops(&dw, tn), conv_params(&dw, false)));
                out.push(LayerCost::new(format!("{p}.pointwise"), conv_ops(&pw, tn), conv_params(&pw, true)));
                t = tn;
            }
            BlockVariant::SeparableBottleneckGelu => {
                let dw = ConvSpec::depthwise(c, k, cfg.padding)?;
                let tn = dw.output_len(t)?;
                let down = ConvSpec::pointwise(c, b)?;
                let up = ConvSpec::pointwise(b, c)?;
                out.push(LayerCost::new(format!("{p}.depthwise"), conv_ops(&dw, tn), conv_params(&dw, false)));
                out.push(LayerCost::new(format!("{p}.down"), conv_ops(&down, tn), conv_params(&down, false)));
                out.push(LayerCost::new(format!("{p}.up"), conv_ops(&up, tn), conv_params(&up, true)));
                t = tn;
            }
        }
    }
    Ok(out)
}

fn lstm_layer(name: String, d: usize, h: usize, t: usize) -> LayerCost {
    let weights = 4 * h * (d + h);
    LayerCost::new(name, (weights * t) as u64, (weights + 4 * h) as u64)
}

fn repr_layers(repr: Representation, cfg: &EncoderConfig, bidirectional: bool, t: usize, prefix: &str) -> Result<Vec<LayerCost>> {
    let d = cfg.channels;
    match repr {
        Representation::Conv(v) => encoder_layers(&cfg.with_variant(v), t, prefix),
        Representation::Recurrent if bidirectional => Ok(vec![
            lstm_layer(format!("{prefix}.lstm_fwd"), d, d / 2, t),
            lstm_layer(format!("{prefix}.lstm_bwd"), d, d / 2, t),
        ]),
        Representation::Recurrent => Ok(vec![lstm_layer(format!("{prefix}.lstm"), d, d, t)]),
    }
}

/// Anything with a per-layer cost breakdown at input length `t`.
pub trait Costed {
    fn label(&self) -> String;
    fn layers(&self, t: usize) -> Result<Vec<LayerCost>>;
}

impl Costed for EncoderConfig {
    fn label(&self) -> String {
        self.variant.name().to_string()
    }

    fn layers(&self, t: usize) -> Result<Vec<LayerCost>> {
        if self.padding == Padding::None {
            return Err(Error::Config("encoder blocks need same or causal padding".into()));
        }
        encoder_layers(self, t, "encoder")
    }
}

impl Costed for ModelConfig {
    fn label(&self) -> String {
        format!("{}/{}", self.task(), self.repr)
    }

    fn layers(&self, t: usize) -> Result<Vec<LayerCost>> {
        self.validate()?;
        let enc = &self.encoder;
        let d = enc.channels;
        let mut out = Vec::new();
        match &self.task {
            TaskConfig::Nwp(n) => {
                let (v, r) = (n.vocab, n.rank);
                out.push(LayerCost::new("embed.factors", (v * r * d) as u64, (v * r + r * d) as u64));
                out.extend(repr_layers(self.repr, enc, false, t, "encoder")?);
                out.push(LayerCost::new("decoder", (t * d * v) as u64, v as u64));
            }
            TaskConfig::IntentSlot(s) => {
                let e = s.char_dim;
                let per = s.char_filters / CHAR_WIDTHS.len();
                let (l, r) = char_frame_padding(REFERENCE_WORD_CHARS);
                let framed = REFERENCE_WORD_CHARS + l + r;
                out.push(LayerCost::new("chars.table", 0, (s.char_vocab * e) as u64));
                for w in CHAR_WIDTHS {
                    let spec = ConvSpec::standard(e, per, w, Padding::None)?;
                    let tn = spec.output_len(framed)?;
                    out.push(LayerCost::new(
                        format!("chars.conv{w}"),
                        conv_ops(&spec, tn) * t as u64,
                        conv_params(&spec, true),
                    ));
                }
                out.push(LayerCost::new("gazetteer.table", 0, (s.gazetteer_vocab * s.gazetteer_dim) as u64));
                out.extend(repr_layers(self.repr, enc, true, t, "intent_tower")?);
                out.extend(repr_layers(self.repr, enc, true, t, "slot_tower")?);
                out.push(LayerCost::new("intent_head", (d * s.n_intents) as u64, (d * s.n_intents + s.n_intents) as u64));
                out.push(LayerCost::new("slot_head", (t * d * s.n_slots) as u64, (d * s.n_slots + s.n_slots) as u64));
            }
            TaskConfig::DocClass(_) => {
                let classes = docclass::N_CLASSES;
                out.push(LayerCost::new("bytes.table", 0, (docclass::BYTE_VOCAB * d) as u64));
                out.extend(repr_layers(self.repr, enc, true, t, "encoder")?);
                out.push(LayerCost::new("head", (d * classes) as u64, (d * classes + classes) as u64));
            }
        }
        Ok(out)
    }
}

/// Per-layer parameter and op counts.
pub fn param_count<C: Costed>(cfg: &C, t: usize) -> Result<CostReport> {
    Ok(CostReport::new(cfg.label(), cfg.layers(t)?))
}

/// Report for `cfg` with ratios against `baseline`.
pub fn cost_report<C: Costed>(cfg: &C, baseline: &C, t: usize) -> Result<CostReport> {
    Ok(param_count(cfg, t)?.against(&param_count(baseline, t)?))
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn bottleneck_separable_standard_order(c in 3u64..512, k in 2u64..16, t in 1u64..1024, raw in 0u64..256) {
            let b = 1 + raw % ((c - 1) / 2);
            prop_assert!(2 * b < c);
            let (bo, se, st) = (
                ops_bottleneck(c, k, t, b).unwrap(),
                ops_separable(c, k, t).unwrap(),
                ops_standard(c, k, t).unwrap(),
            );
            prop_assert!(bo < se && se < st);
            prop_assert_eq!(se, st / c + c * c * t);
        }
    }
}
