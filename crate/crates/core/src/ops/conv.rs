//! 1-D convolutions over `[channels, time]` maps.
//!
//! All variants use cross-correlation (no kernel flip). Filters for a grouped
//! convolution are laid out `[out, in / groups, k]`; a depthwise kernel bank
//! `[c, k]` is the same buffer as `[c, 1, k]` with `groups == c`, and a
//! pointwise weight `[out, c]` is the same buffer as `[out, c, 1]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding that keeps `t' == t` at stride 1; the extra tap of an even
    /// kernel goes on the right.
    Same,
    /// `k - 1` zeros on the left only: output `i` sees inputs `<= i`.
    Causal,
    None,
}

impl Padding {
    pub fn amounts(self, k: usize) -> (usize, usize) {
        match self {
            Padding::Same => {
                let left = (k - 1) / 2;
                (left, k - 1 - left)
            }
            Padding::Causal => (k - 1, 0),
            Padding::None => (0, 0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Padding::Same => "same",
            Padding::Causal => "causal",
            Padding::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Padding> {
        match s {
            "same" => Ok(Padding::Same),
            "causal" => Ok(Padding::Causal),
            "none" => Ok(Padding::None),
            _ => Err(Error::Config(format!("unknown padding `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub groups: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        groups: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<ConvSpec> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 || groups == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "conv dims must be positive (c={in_channels}, out={out_channels}, k={kernel}, g={groups}, stride={stride})"
            )));
        }
        if !in_channels.is_multiple_of(groups) || !out_channels.is_multiple_of(groups) {
            return Err(Error::Dimension(format!(
                "groups {groups} must divide in_channels {in_channels} and out_channels {out_channels}"
            )));
        }
        Ok(ConvSpec {
            in_channels,
            out_channels,
            kernel,
            groups,
            stride,
            padding,
        })
    }

    pub fn standard(c: usize, out: usize, k: usize, padding: Padding) -> Result<ConvSpec> {
        ConvSpec::new(c, out, k, 1, 1, padding)
    }

    pub fn depthwise(c: usize, k: usize, padding: Padding) -> Result<ConvSpec> {
        ConvSpec::new(c, c, k, c, 1, padding)
    }

    pub fn pointwise(c: usize, out: usize) -> Result<ConvSpec> {
        ConvSpec::new(c, out, 1, 1, 1, Padding::None)
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.in_channels == self.out_channels
    }

    pub fn filter_shape(&self) -> [usize; 3] {
        [self.out_channels, self.in_channels / self.groups, self.kernel]
    }

    pub fn filter_len(&self) -> usize {
        self.filter_shape().iter().product()
    }

    pub fn output_len(&self, t: usize) -> Result<usize> {
        let (l, r) = self.padding.amounts(self.kernel);
        let padded = t + l + r;
        if padded < self.kernel {
            return Err(Error::Geometry(format!(
                "input length {t} with padding ({l}, {r}) is shorter than kernel {}",
                self.kernel
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }
}

#[derive(Clone, Debug)]
pub struct ConvParams {
    pub spec: ConvSpec,
    pub filters: Tensor,
    pub bias: Option<Tensor>,
}

impl ConvParams {
    /// `filters` may be given in any shape whose element count matches the spec
    /// (e.g. `[c, k]` for depthwise or `[out, c]` for pointwise).
    pub fn new(spec: ConvSpec, filters: Tensor, bias: Option<Tensor>) -> Result<ConvParams> {
        if filters.numel() != spec.filter_len() {
            return Err(Error::Dimension(format!(
                "filters {:?} do not match spec filter shape {:?}",
                filters.shape(),
                spec.filter_shape()
            )));
        }
        if let Some(b) = &bias {
            if b.shape() != [spec.out_channels] {
                return Err(Error::Dimension(format!(
                    "bias {:?} does not match out_channels {}",
                    b.shape(),
                    spec.out_channels
                )));
            }
        }
        Ok(ConvParams { spec, filters, bias })
    }
}

fn check_input(x: &Tensor, spec: &ConvSpec) -> Result<(usize, usize)> {
    let (c, t) = x.dims2()?;
    if c != spec.in_channels {
        return Err(Error::Dimension(format!(
            "conv input has {c} channels, spec expects {}",
            spec.in_channels
        )));
    }
    Ok((c, t))
}

/// Visits every (output channel, input channel, tap) triple with the slices it
/// touches. `f(o, i, w_index, offset)` where input time = `to * stride + offset`.
fn for_each_tap(spec: &ConvSpec, mut f: impl FnMut(usize, usize, usize, isize)) {
    let cg = spec.in_channels / spec.groups;
    let og = spec.out_channels / spec.groups;
    let k = spec.kernel;
    let (pl, _) = spec.padding.amounts(k);
    for o in 0..spec.out_channels {
        let grp = o / og;
        for ii in 0..cg {
            let i = grp * cg + ii;
            for kk in 0..k {
                f(o, i, o * cg * k + ii * k + kk, kk as isize - pl as isize);
            }
        }
    }
}

/// Output positions `[lo, hi)` whose input index `to * stride + offset` is in range.
fn valid_range(t: usize, t_out: usize, stride: usize, offset: isize) -> (usize, usize) {
    let t = t as isize;
    let s = stride as isize;
    // smallest to with to*s + offset >= 0
    let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
    // largest to with to*s + offset <= t - 1
    let hi = if t - 1 - offset < 0 {
        0
    } else {
        (t - 1 - offset) / s + 1
    };
    let hi = hi.min(t_out as isize);
    (lo as usize, hi.max(lo) as usize)
}

/// Grouped convolution on raw weights; `filters` holds `spec.filter_len()` values.
pub fn conv1d_with(
    x: &Tensor,
    filters: &Tensor,
    bias: Option<&Tensor>,
    spec: &ConvSpec,
) -> Result<Tensor> {
    let (_, t) = check_input(x, spec)?;
    if filters.numel() != spec.filter_len() {
        return Err(Error::Dimension(format!(
            "filters {:?} do not match spec filter shape {:?}",
            filters.shape(),
            spec.filter_shape()
        )));
    }
    let t_out = spec.output_len(t)?;
    let out_c = spec.out_channels;
    let mut out = vec![0.0; out_c * t_out];
    if let Some(b) = bias {
        if b.numel() != out_c {
            return Err(Error::Dimension(format!(
                "bias {:?} does not match out_channels {out_c}",
                b.shape()
            )));
        }
        for (o, &bv) in b.data().iter().enumerate() {
            out[o * t_out..(o + 1) * t_out].fill(bv);
        }
    }
    let xd = x.data();
    let w = filters.data();
    let stride = spec.stride;
    for_each_tap(spec, |o, i, wi, offset| {
        let wv = w[wi];
        if wv == 0.0 {
            return;
        }
        let (lo, hi) = valid_range(t, t_out, stride, offset);
        if lo >= hi {
            return;
        }
        let orow = &mut out[o * t_out..(o + 1) * t_out];
        let xrow = &xd[i * t..(i + 1) * t];
        if stride == 1 {
            let start = (lo as isize + offset) as usize;
            for (ov, &xv) in orow[lo..hi].iter_mut().zip(&xrow[start..]) {
                *ov += wv * xv;
            }
        } else {
            for to in lo..hi {
                orow[to] += wv * xrow[(to as isize * stride as isize + offset) as usize];
            }
        }
    });
    Ok(Tensor::from_parts(vec![out_c, t_out], out))
}

/// Gradients of [`conv1d_with`]: `(d_input, d_filters, d_bias)`. `d_filters`
/// takes the shape of `filters`.
pub fn conv1d_backward(
    x: &Tensor,
    filters: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (c, t) = check_input(x, spec)?;
    let t_out = spec.output_len(t)?;
    if grad_out.shape() != [spec.out_channels, t_out] {
        return Err(Error::Dimension(format!(
            "conv grad {:?} does not match output [{}, {t_out}]",
            grad_out.shape(),
            spec.out_channels
        )));
    }
    let xd = x.data();
    let w = filters.data();
    let g = grad_out.data();
    let mut dx = vec![0.0; c * t];
    let mut dw = vec![0.0; w.len()];
    let stride = spec.stride as isize;
    for_each_tap(spec, |o, i, wi, offset| {
        let (lo, hi) = valid_range(t, t_out, spec.stride, offset);
        let grow = &g[o * t_out..(o + 1) * t_out];
        let xrow = &xd[i * t..(i + 1) * t];
        let dxrow = &mut dx[i * t..(i + 1) * t];
        let wv = w[wi];
        let mut acc = 0.0;
        for to in lo..hi {
            let s = (to as isize * stride + offset) as usize;
            acc += grow[to] * xrow[s];
            dxrow[s] += wv * grow[to];
        }
        dw[wi] += acc;
    });
    let db = (0..spec.out_channels)
        .map(|o| g[o * t_out..(o + 1) * t_out].iter().sum())
        .collect();
    Ok((
        Tensor::from_parts(vec![c, t], dx),
        Tensor::from_parts(filters.shape().to_vec(), dw),
        Tensor::from_parts(vec![spec.out_channels], db),
    ))
}

pub fn conv1d(x: &Tensor, params: &ConvParams) -> Result<Tensor> {
    conv1d_with(x, &params.filters, params.bias.as_ref(), &params.spec)
}

/// Per-channel correlation with one kernel per channel (`groups == c`).
pub fn depthwise_conv1d(x: &Tensor, kernels: &Tensor, padding: Padding) -> Result<Tensor> {
    let spec = depthwise_spec(x, kernels, padding)?;
    conv1d_with(x, kernels, None, &spec)
}

pub fn depthwise_spec(x: &Tensor, kernels: &Tensor, padding: Padding) -> Result<ConvSpec> {
    let (c, _) = x.dims2()?;
    let (kc, k) = kernels.dims2()?;
    if kc != c {
        return Err(Error::Dimension(format!(
            "depthwise kernels {:?} need one row per input channel ({c})",
            kernels.shape()
        )));
    }
    ConvSpec::depthwise(c, k, padding)
}

/// Per-timestep channel projection `w[out, c] · x[c, t] (+ bias)`.
pub fn pointwise_conv1d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let spec = pointwise_spec(x, w)?;
    conv1d_with(x, w, bias, &spec)
}

pub fn pointwise_spec(x: &Tensor, w: &Tensor) -> Result<ConvSpec> {
    let (c, _) = x.dims2()?;
    let (out, wc) = w.dims2()?;
    if wc != c {
        return Err(Error::Dimension(format!(
            "pointwise weight {:?} expects {wc} input channels, input has {c}",
            w.shape()
        )));
    }
    ConvSpec::pointwise(c, out)
}

/// A pointwise projection factored through a bottleneck of width `b`:
/// `down: c -> b` (no bias) followed by `up: b -> c` (with bias).
#[derive(Clone, Debug)]
pub struct BottleneckParams {
    pub down: Tensor,
    pub up: Tensor,
    pub up_bias: Option<Tensor>,
}

impl BottleneckParams {
    pub fn new(down: Tensor, up: Tensor, up_bias: Option<Tensor>) -> Result<BottleneckParams> {
        let (b, c) = down.dims2()?;
        let (c2, b2) = up.dims2()?;
        if b != b2 || c != c2 {
            return Err(Error::Dimension(format!(
                "bottleneck down {:?} and up {:?} do not compose",
                down.shape(),
                up.shape()
            )));
        }
        if let Some(msg) = bottleneck_warning(c, b) {
            log::warn!("{msg}");
        }
        Ok(BottleneckParams { down, up, up_bias })
    }

    pub fn bottleneck(&self) -> usize {
        self.down.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.down.shape()[1]
    }
}

/// Warning text when a bottleneck of width `b` no longer saves parameters.
pub fn bottleneck_warning(c: usize, b: usize) -> Option<String> {
    (2 * b >= c).then(|| {
        format!("bottleneck b={b} with c={c}: 2b >= c, so the pair has no fewer weights than one c x c pointwise")
    })
}

pub fn bottleneck_pointwise(x: &Tensor, p: &BottleneckParams) -> Result<Tensor> {
    let mid = pointwise_conv1d(x, &p.down, None)?;
    pointwise_conv1d(&mid, &p.up, p.up_bias.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::matmul;

    /// Direct loops over groups, channels and taps with explicit zero padding.
    fn oracle_conv(
        x: &Tensor,
        w: &Tensor,
        bias: Option<&Tensor>,
        spec: &ConvSpec,
    ) -> Vec<f64> {
        let (c, t) = x.dims2().unwrap();
        let (pl, pr) = spec.padding.amounts(spec.kernel);
        let padded: Vec<Vec<f64>> = (0..c)
            .map(|i| {
                let mut row = vec![0.0; pl];
                row.extend_from_slice(x.row(i));
                row.extend(std::iter::repeat_n(0.0, pr));
                row
            })
            .collect();
        let t_out = (t + pl + pr - spec.kernel) / spec.stride + 1;
        let cg = c / spec.groups;
        let og = spec.out_channels / spec.groups;
        let mut out = vec![0.0; spec.out_channels * t_out];
        for g in 0..spec.groups {
            for oo in 0..og {
                let o = g * og + oo;
                for to in 0..t_out {
                    let mut acc = bias.map_or(0.0, |b| b.data()[o]);
                    for ii in 0..cg {
                        for kk in 0..spec.kernel {
                            acc += w.data()[(o * cg + ii) * spec.kernel + kk]
                                * padded[g * cg + ii][to * spec.stride + kk];
                        }
                    }
                    out[o * t_out + to] = acc;
                }
            }
        }
        out
    }

    fn t2(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn delta_and_box_kernels() {
        let x = t2(&[&[1.0, 2.0, 3.0]]);
        let spec = ConvSpec::standard(1, 1, 3, Padding::Same).unwrap();
        let delta = ConvParams::new(spec, Tensor::from_vec(&[1, 1, 3], vec![0.0, 1.0, 0.0]).unwrap(), None).unwrap();
        assert_eq!(conv1d(&x, &delta).unwrap().data(), &[1.0, 2.0, 3.0]);
        let boxk = ConvParams::new(spec, Tensor::ones(&[1, 1, 3]), None).unwrap();
        assert_eq!(conv1d(&x, &boxk).unwrap().data(), &[3.0, 6.0, 5.0]);
    }

    #[test]
    fn grouped_conv_matches_oracle() {
        let mut rng = Rng::new(8);
        let spec = ConvSpec::new(4, 4, 3, 2, 1, Padding::Same).unwrap();
        let x = Tensor::randn(&[4, 7], 1.0, &mut rng);
        let w = Tensor::randn(&spec.filter_shape(), 1.0, &mut rng);
        let b = Tensor::randn(&[4], 1.0, &mut rng);
        let got = conv1d_with(&x, &w, Some(&b), &spec).unwrap();
        for (g, o) in got.data().iter().zip(oracle_conv(&x, &w, Some(&b), &spec)) {
            assert!((g - o).abs() < 1e-12);
        }
    }

    #[test]
    fn strided_unpadded_conv_matches_oracle() {
        let mut rng = Rng::new(9);
        let spec = ConvSpec::new(3, 2, 2, 1, 2, Padding::None).unwrap();
        let x = Tensor::randn(&[3, 9], 1.0, &mut rng);
        let w = Tensor::randn(&spec.filter_shape(), 1.0, &mut rng);
        let got = conv1d_with(&x, &w, None, &spec).unwrap();
        assert_eq!(got.shape(), &[2, 4]);
        for (g, o) in got.data().iter().zip(oracle_conv(&x, &w, None, &spec)) {
            assert!((g - o).abs() < 1e-12);
        }
    }

    #[test]
    fn depthwise_hand_case() {
        let x = t2(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let k = t2(&[&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]]);
        let y = depthwise_conv1d(&x, &k, Padding::Same).unwrap();
        assert_eq!(y.data(), &[0.0, 1.0, 2.0, 5.0, 6.0, 0.0]);
        let delta = t2(&[&[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0]]);
        assert_eq!(depthwise_conv1d(&x, &delta, Padding::Same).unwrap(), x);
    }

    #[test]
    fn depthwise_equals_grouped_path() {
        let mut rng = Rng::new(10);
        let x = Tensor::randn(&[5, 6], 1.0, &mut rng);
        let k = Tensor::randn(&[5, 3], 1.0, &mut rng);
        let dw = depthwise_conv1d(&x, &k, Padding::Causal).unwrap();
        let spec = ConvSpec::new(5, 5, 3, 5, 1, Padding::Causal).unwrap();
        let w = k.reshape(&[5, 1, 3]).unwrap();
        let grouped = conv1d(&x, &ConvParams::new(spec, w, None).unwrap()).unwrap();
        assert!(dw.max_abs_diff(&grouped).unwrap() < 1e-12);
    }

    #[test]
    fn pointwise_cases() {
        let x = t2(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(pointwise_conv1d(&x, &Tensor::identity(2), None).unwrap(), x);
        let w = t2(&[&[1.0, 1.0]]);
        assert_eq!(pointwise_conv1d(&x, &w, None).unwrap().data(), &[4.0, 6.0]);

        let mut rng = Rng::new(12);
        let x = Tensor::randn(&[3, 5], 1.0, &mut rng);
        let w = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let spec = ConvSpec::standard(3, 4, 1, Padding::Same).unwrap();
        let k1 = conv1d(&x, &ConvParams::new(spec, w.reshape(&[4, 3, 1]).unwrap(), None).unwrap()).unwrap();
        assert!(pointwise_conv1d(&x, &w, None).unwrap().max_abs_diff(&k1).unwrap() < 1e-12);
        assert!(pointwise_conv1d(&x, &Tensor::zeros(&[4, 2]), None).is_err());
    }

    #[test]
    fn bottleneck_cases() {
        let x = t2(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let id = BottleneckParams::new(Tensor::identity(2), Tensor::identity(2), None).unwrap();
        assert_eq!(bottleneck_pointwise(&x, &id).unwrap(), x);

        let p = BottleneckParams::new(t2(&[&[1.0, 1.0]]), t2(&[&[1.0], &[0.0]]), None).unwrap();
        assert_eq!(bottleneck_pointwise(&x, &p).unwrap().data(), &[4.0, 6.0, 0.0, 0.0]);

        let mut rng = Rng::new(13);
        let x = Tensor::randn(&[6, 4], 1.0, &mut rng);
        let down = Tensor::randn(&[2, 6], 1.0, &mut rng);
        let up = Tensor::randn(&[6, 2], 1.0, &mut rng);
        let p = BottleneckParams::new(down.clone(), up.clone(), None).unwrap();
        let fused = pointwise_conv1d(&x, &matmul(&up, &down).unwrap(), None).unwrap();
        assert!(bottleneck_pointwise(&x, &p).unwrap().max_abs_diff(&fused).unwrap() < 1e-12);

        assert!(BottleneckParams::new(Tensor::zeros(&[2, 6]), Tensor::zeros(&[6, 3]), None).is_err());
    }

    #[test]
    fn bottleneck_warning_threshold() {
        assert!(bottleneck_warning(8, 3).is_none());
        assert!(bottleneck_warning(8, 4).is_some());
        assert!(bottleneck_warning(8, 8).is_some());
    }

    #[test]
    fn spec_and_geometry_errors() {
        assert!(matches!(ConvSpec::new(4, 4, 3, 3, 1, Padding::Same), Err(Error::Dimension(_))));
        let spec = ConvSpec::standard(1, 1, 4, Padding::None).unwrap();
        let x = Tensor::zeros(&[1, 3]);
        let w = Tensor::zeros(&[1, 1, 4]);
        assert!(matches!(conv1d_with(&x, &w, None, &spec), Err(Error::Geometry(_))));
        let x = Tensor::zeros(&[2, 3]);
        assert!(matches!(conv1d_with(&x, &w, None, &spec), Err(Error::Dimension(_))));
    }

    #[test]
    fn causal_padding_only_looks_left() {
        let mut rng = Rng::new(14);
        let spec = ConvSpec::standard(2, 2, 3, Padding::Causal).unwrap();
        let w = Tensor::randn(&spec.filter_shape(), 1.0, &mut rng);
        let x = Tensor::randn(&[2, 6], 1.0, &mut rng);
        let mut x2 = x.clone();
        x2.data_mut()[4] += 1.0; // channel 0, time 4
        x2.data_mut()[6 + 4] -= 2.0;
        let a = conv1d_with(&x, &w, None, &spec).unwrap();
        let b = conv1d_with(&x2, &w, None, &spec).unwrap();
        for ch in 0..2 {
            for ti in 0..4 {
                assert_eq!(a.at(ch, ti), b.at(ch, ti));
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use crate::rng::Rng;

        proptest! {
            #[test]
            fn separable_equals_outer_product_conv(seed in any::<u64>(), c in 1usize..6, out in 1usize..6, k in 1usize..5, t in 1usize..8) {
                let mut rng = Rng::new(seed);
                let x = Tensor::randn(&[c, t], 1.0, &mut rng);
                let dw = Tensor::randn(&[c, k], 1.0, &mut rng);
                let pw = Tensor::randn(&[out, c], 1.0, &mut rng);
                let sep = pointwise_conv1d(&depthwise_conv1d(&x, &dw, Padding::Same).unwrap(), &pw, None).unwrap();
                let mut w = vec![0.0; out * c * k];
                for o in 0..out {
                    for i in 0..c {
                        for kk in 0..k {
                            w[(o * c + i) * k + kk] = pw.at(o, i) * dw.at(i, kk);
                        }
                    }
                }
                let spec = ConvSpec::standard(c, out, k, Padding::Same).unwrap();
                let full = conv1d_with(&x, &Tensor::from_vec(&[out, c, k], w).unwrap(), None, &spec).unwrap();
                let scale = full.max_abs().max(1.0);
                prop_assert!(sep.max_abs_diff(&full).unwrap() / scale < 1e-9);
            }
        }
    }
}
