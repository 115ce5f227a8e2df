use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

impl PoolKind {
    pub fn name(self) -> &'static str {
        match self {
            PoolKind::Max => "max",
            PoolKind::Avg => "avg",
        }
    }

    pub fn parse(s: &str) -> Result<PoolKind> {
        match s {
            "max" => Ok(PoolKind::Max),
            "avg" => Ok(PoolKind::Avg),
            _ => Err(Error::Config(format!("unknown pooling `{s}`"))),
        }
    }
}

/// Index of the first maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Reduces `[c, t]` over time to `[c]`.
pub fn pool_time(x: &Tensor, kind: PoolKind) -> Result<Tensor> {
    let (c, t) = x.dims2()?;
    let data = (0..c)
        .map(|i| {
            let row = x.row(i);
            match kind {
                PoolKind::Max => row[argmax(row)],
                PoolKind::Avg => row.iter().sum::<f64>() / t as f64,
            }
        })
        .collect();
    Ok(Tensor::from_parts(vec![c], data))
}

/// Max routes the whole gradient to the earliest maximum; avg spreads it evenly.
pub fn pool_time_backward(x: &Tensor, kind: PoolKind, grad_out: &Tensor) -> Result<Tensor> {
    let (c, t) = x.dims2()?;
    if grad_out.numel() != c {
        return Err(Error::Dimension(format!(
            "pool grad {:?} vs {c} channels",
            grad_out.shape()
        )));
    }
    let mut dx = vec![0.0; c * t];
    for (i, &g) in grad_out.data().iter().enumerate() {
        let row = &mut dx[i * t..(i + 1) * t];
        match kind {
            PoolKind::Max => row[argmax(x.row(i))] = g,
            PoolKind::Avg => row.fill(g / t as f64),
        }
    }
    Ok(Tensor::from_parts(vec![c, t], dx))
}
