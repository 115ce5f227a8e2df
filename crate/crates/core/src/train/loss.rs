use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax of `[n, C]` logits with max subtraction.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let (n, c) = logits.dims2()?;
    let mut out = Vec::with_capacity(n * c);
    for r in 0..n {
        let row = logits.row(r);
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / z));
    }
    Ok(Tensor::from_parts(vec![n, c], out))
}

/// `-log softmax(row)[target]` for every row, computed as `logsumexp - x_target`.
pub fn row_nll(logits: &Tensor, targets: &[usize]) -> Result<Vec<f64>> {
    let (n, c) = logits.dims2()?;
    if targets.len() != n {
        return Err(Error::Dimension(format!(
            "{} targets for {n} logit rows",
            targets.len()
        )));
    }
    targets
        .iter()
        .enumerate()
        .map(|(r, &y)| {
            if y >= c {
                return Err(Error::Index(format!("target {y} out of range for {c} classes")));
            }
            let row = logits.row(r);
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            Ok(lse - row[y])
        })
        .collect()
}

/// Mean negative log-likelihood over rows and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
    let nll = row_nll(logits, targets)?;
    let n = nll.len() as f64;
    let mut grad = softmax_rows(logits)?;
    let c = logits.shape()[1];
    let g = grad.data_mut();
    for (r, &y) in targets.iter().enumerate() {
        g[r * c + y] -= 1.0;
    }
    for v in g.iter_mut() {
        *v /= n;
    }
    Ok((nll.iter().sum::<f64>() / n, grad))
}
