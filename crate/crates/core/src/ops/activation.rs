use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActivationKind {
    Relu,
    LeakyRelu(f64),
    Elu(f64),
    /// Exact `x * Phi(x)` with the normal CDF computed through `erf`.
    Gelu,
    Sigmoid,
    Tanh,
    /// Splits axis 0 into halves `(a, b)` and returns `a * sigmoid(b)`.
    Glu,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

fn scalar(kind: ActivationKind, x: f64) -> f64 {
    match kind {
        ActivationKind::Relu => x.max(0.0),
        ActivationKind::LeakyRelu(s) => {
            if x > 0.0 {
                x
            } else {
                s * x
            }
        }
        ActivationKind::Elu(a) => {
            if x > 0.0 {
                x
            } else {
                a * x.exp_m1()
            }
        }
        ActivationKind::Gelu => gelu(x),
        ActivationKind::Sigmoid => sigmoid(x),
        ActivationKind::Tanh => x.tanh(),
        ActivationKind::Glu => unreachable!("glu is not elementwise"),
    }
}

fn scalar_grad(kind: ActivationKind, x: f64) -> f64 {
    match kind {
        ActivationKind::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        ActivationKind::LeakyRelu(s) => {
            if x > 0.0 {
                1.0
            } else {
                s
            }
        }
        ActivationKind::Elu(a) => {
            if x > 0.0 {
                1.0
            } else {
                a * x.exp()
            }
        }
        ActivationKind::Gelu => normal_cdf(x) + x * normal_pdf(x),
        ActivationKind::Sigmoid => {
            let s = sigmoid(x);
            s * (1.0 - s)
        }
        ActivationKind::Tanh => 1.0 - x.tanh().powi(2),
        ActivationKind::Glu => unreachable!("glu is not elementwise"),
    }
}

fn glu_halves(x: &Tensor) -> Result<usize> {
    let lead = x.shape()[0];
    if !lead.is_multiple_of(2) {
        return Err(Error::Dimension(format!(
            "glu needs an even channel count, got shape {:?}",
            x.shape()
        )));
    }
    Ok(x.numel() / 2)
}

pub fn activate(x: &Tensor, kind: ActivationKind) -> Result<Tensor> {
    if kind != ActivationKind::Glu {
        return Ok(x.map(|v| scalar(kind, v)));
    }
    let half = glu_halves(x)?;
    let (a, b) = x.data().split_at(half);
    let data = a.iter().zip(b).map(|(&a, &b)| a * sigmoid(b)).collect();
    let mut shape = x.shape().to_vec();
    shape[0] /= 2;
    Ok(Tensor::from_parts(shape, data))
}

/// Gradient with respect to the activation input.
pub fn activate_backward(x: &Tensor, kind: ActivationKind, grad_out: &Tensor) -> Result<Tensor> {
    if kind != ActivationKind::Glu {
        if grad_out.shape() != x.shape() {
            return Err(Error::Dimension(format!(
                "activation grad {:?} vs input {:?}",
                grad_out.shape(),
                x.shape()
            )));
        }
        let data = x
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&v, &g)| g * scalar_grad(kind, v))
            .collect();
        return Ok(Tensor::from_parts(x.shape().to_vec(), data));
    }
    let half = glu_halves(x)?;
    if grad_out.numel() != half {
        return Err(Error::Dimension(format!(
            "glu grad {:?} vs input {:?}",
            grad_out.shape(),
            x.shape()
        )));
    }
    let (a, b) = x.data().split_at(half);
    let mut dx = vec![0.0; x.numel()];
    for (j, &g) in grad_out.data().iter().enumerate() {
        let s = sigmoid(b[j]);
        dx[j] = g * s;
        dx[half + j] = g * a[j] * s * (1.0 - s);
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), dx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert_eq!(scalar(ActivationKind::Relu, -3.0), 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
        // 1 * Phi(1), Phi(1) = 0.5 * (1 + erf(1/sqrt 2))
        assert!((gelu(1.0) - 0.841345).abs() < 1e-5);
    }

    #[test]
    fn glu_halves_channels() {
        let x = Tensor::from_rows(&[vec![7.0, 9.0], vec![0.0, 0.0]]).unwrap();
        let y = activate(&x, ActivationKind::Glu).unwrap();
        assert_eq!(y.shape(), &[1, 2]);
        assert_eq!(y.data(), &[3.5, 4.5]);
        let odd = Tensor::zeros(&[3, 2]);
        assert!(matches!(activate(&odd, ActivationKind::Glu), Err(Error::Dimension(_))));
    }

    #[test]
    fn gelu_is_monotone_and_asymptotically_identity() {
        let mut prev = gelu(-0.5);
        for i in 1..1000 {
            let x = -0.5 + i as f64 * 0.02;
            let y = gelu(x);
            assert!(y > prev, "not increasing at {x}");
            prev = y;
        }
        assert!((gelu(10.0) / 10.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn elementwise_kinds() {
        let x = Tensor::from_vec(&[4], vec![-2.0, -0.5, 0.5, 2.0]).unwrap();
        let lr = activate(&x, ActivationKind::LeakyRelu(0.1)).unwrap();
        assert_eq!(lr.data(), &[-0.2, -0.05, 0.5, 2.0]);
        let elu = activate(&x, ActivationKind::Elu(1.0)).unwrap();
        assert!((elu.data()[0] - ((-2.0f64).exp() - 1.0)).abs() < 1e-15);
        assert_eq!(elu.data()[3], 2.0);
        let big = Tensor::from_vec(&[2], vec![-800.0, 800.0]).unwrap();
        let s = activate(&big, ActivationKind::Sigmoid).unwrap();
        assert!(s.all_finite());
        assert_eq!(s.data(), &[0.0, 1.0]);
    }
}
