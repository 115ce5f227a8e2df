//! Single-layer LSTM used for the recurrent baseline rows.
//!
//! Gate rows of `w_ih [4h, d]`, `w_hh [4h, h]` and `bias [4h]` are ordered
//! input, forget, candidate, output. State starts at zero. With `reverse` the
//! sequence is consumed right to left and outputs stay aligned to input time.

use crate::error::{Error, Result};
use crate::ops::sigmoid;
use crate::tensor::Tensor;

struct Shapes {
    d: usize,
    t: usize,
    h: usize,
}

fn check(x: &Tensor, w_ih: &Tensor, w_hh: &Tensor, bias: &Tensor) -> Result<Shapes> {
    let (d, t) = x.dims2()?;
    let (g4, d2) = w_ih.dims2()?;
    if g4 % 4 != 0 || d2 != d {
        return Err(Error::Dimension(format!(
            "lstm w_ih {:?} incompatible with input {:?}",
            w_ih.shape(),
            x.shape()
        )));
    }
    let h = g4 / 4;
    if w_hh.shape() != [4 * h, h] || bias.shape() != [4 * h] {
        return Err(Error::Dimension(format!(
            "lstm w_hh {:?} / bias {:?} incompatible with hidden size {h}",
            w_hh.shape(),
            bias.shape()
        )));
    }
    Ok(Shapes { d, t, h })
}

/// `out[r] = sum_j m[r, j] * v[j]` added into `out`.
fn gemv_acc(out: &mut [f64], m: &[f64], cols: usize, v: &[f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let row = &m[r * cols..(r + 1) * cols];
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out[j] += sum_r m[r, j] * v[r]`.
fn gemv_t_acc(out: &mut [f64], m: &[f64], cols: usize, v: &[f64]) {
    for (r, &vr) in v.iter().enumerate() {
        if vr == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(&m[r * cols..(r + 1) * cols]) {
            *o += a * vr;
        }
    }
}

struct Step {
    time: usize,
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    // activated gates i, f, g, o packed in order
    gates: Vec<f64>,
    c: Vec<f64>,
}

fn run(x: &Tensor, w_ih: &Tensor, w_hh: &Tensor, bias: &Tensor, reverse: bool, keep: bool) -> Result<(Tensor, Vec<Step>)> {
    let Shapes { d, t, h } = check(x, w_ih, w_hh, bias)?;
    let mut out = vec![0.0; h * t];
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    let mut steps = Vec::new();
    for s in 0..t {
        let time = if reverse { t - 1 - s } else { s };
        let xt: Vec<f64> = (0..d).map(|i| x.data()[i * t + time]).collect();
        let mut z = bias.data().to_vec();
        gemv_acc(&mut z, w_ih.data(), d, &xt);
        gemv_acc(&mut z, w_hh.data(), h, &h_prev);
        for j in 0..h {
            z[j] = sigmoid(z[j]);
            z[h + j] = sigmoid(z[h + j]);
            z[2 * h + j] = z[2 * h + j].tanh();
            z[3 * h + j] = sigmoid(z[3 * h + j]);
        }
        let mut c = vec![0.0; h];
        let mut hn = vec![0.0; h];
        for j in 0..h {
            c[j] = z[h + j] * c_prev[j] + z[j] * z[2 * h + j];
            hn[j] = z[3 * h + j] * c[j].tanh();
            out[j * t + time] = hn[j];
        }
        if keep {
            steps.push(Step {
                time,
                x: xt,
                h_prev: std::mem::replace(&mut h_prev, hn),
                c_prev: std::mem::replace(&mut c_prev, c.clone()),
                gates: z,
                c,
            });
        } else {
            h_prev = hn;
            c_prev = c;
        }
    }
    Ok((Tensor::from_parts(vec![h, t], out), steps))
}

pub fn lstm_forward(x: &Tensor, w_ih: &Tensor, w_hh: &Tensor, bias: &Tensor, reverse: bool) -> Result<Tensor> {
    Ok(run(x, w_ih, w_hh, bias, reverse, false)?.0)
}

/// Backpropagation through time: `(dx, dw_ih, dw_hh, dbias)`.
pub fn lstm_backward(
    x: &Tensor,
    w_ih: &Tensor,
    w_hh: &Tensor,
    bias: &Tensor,
    reverse: bool,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
    let (_, steps) = run(x, w_ih, w_hh, bias, reverse, true)?;
    let Shapes { d, t, h } = check(x, w_ih, w_hh, bias)?;
    if grad_out.shape() != [h, t] {
        return Err(Error::Dimension(format!(
            "lstm grad {:?} vs output [{h}, {t}]",
            grad_out.shape()
        )));
    }
    let mut dx = vec![0.0; d * t];
    let mut dw_ih = vec![0.0; 4 * h * d];
    let mut dw_hh = vec![0.0; 4 * h * h];
    let mut db = vec![0.0; 4 * h];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    for step in steps.iter().rev() {
        let g = &step.gates;
        for j in 0..h {
            let dh = grad_out.data()[j * t + step.time] + dh_next[j];
            let (i, f, cand, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let tc = step.c[j].tanh();
            let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
            dz[j] = dc * cand * i * (1.0 - i);
            dz[h + j] = dc * step.c_prev[j] * f * (1.0 - f);
            dz[2 * h + j] = dc * i * (1.0 - cand * cand);
            dz[3 * h + j] = dh * tc * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        for r in 0..4 * h {
            let gz = dz[r];
            db[r] += gz;
            if gz == 0.0 {
                continue;
            }
            for (a, xv) in dw_ih[r * d..(r + 1) * d].iter_mut().zip(&step.x) {
                *a += gz * xv;
            }
            for (a, hv) in dw_hh[r * h..(r + 1) * h].iter_mut().zip(&step.h_prev) {
                *a += gz * hv;
            }
        }
        let mut dxt = vec![0.0; d];
        gemv_t_acc(&mut dxt, w_ih.data(), d, &dz);
        for (i, v) in dxt.into_iter().enumerate() {
            dx[i * t + step.time] = v;
        }
        dh_next.fill(0.0);
        gemv_t_acc(&mut dh_next, w_hh.data(), h, &dz);
    }
    Ok((
        Tensor::from_parts(vec![d, t], dx),
        Tensor::from_parts(vec![4 * h, d], dw_ih),
        Tensor::from_parts(vec![4 * h, h], dw_hh),
        Tensor::from_parts(vec![4 * h], db),
    ))
}
