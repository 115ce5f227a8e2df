use crate::error::{Error, Result};
use crate::tensor::{matmul, Tensor};

/// Gathers rows of `table[V, d]`; returns `[ids.len(), d]`.
pub fn embedding_lookup(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    let (v, d) = table.dims2()?;
    if ids.is_empty() {
        return Err(Error::Dimension("embedding lookup with no ids".into()));
    }
    let mut out = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= v {
            return Err(Error::Index(format!(
                "embedding id {id} out of range for vocabulary of {v}"
            )));
        }
        out.extend_from_slice(table.row(id));
    }
    Ok(Tensor::from_parts(vec![ids.len(), d], out))
}

/// Scatter-add of row gradients back into a `[V, d]` table gradient.
pub fn embedding_backward(table_shape: &[usize], ids: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let (v, d) = (table_shape[0], table_shape[1]);
    if grad_out.shape() != [ids.len(), d] {
        return Err(Error::Dimension(format!(
            "embedding grad {:?} vs [{}, {d}]",
            grad_out.shape(),
            ids.len()
        )));
    }
    let mut g = vec![0.0; v * d];
    for (r, &id) in ids.iter().enumerate() {
        for (a, b) in g[id * d..(id + 1) * d].iter_mut().zip(grad_out.row(r)) {
            *a += b;
        }
    }
    Ok(Tensor::from_parts(vec![v, d], g))
}

/// `x[n, d] · w[d, m] + bias[m]`.
pub fn linear(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let mut y = matmul(x, w)?;
    if let Some(b) = bias {
        let (n, m) = y.dims2()?;
        if b.shape() != [m] {
            return Err(Error::Dimension(format!(
                "linear bias {:?} vs output width {m}",
                b.shape()
            )));
        }
        let data = y.data_mut();
        for r in 0..n {
            for (o, bv) in data[r * m..(r + 1) * m].iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
    }
    Ok(y)
}

/// `(dA, dB)` for `A · B` given the output gradient.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let da = matmul(grad_out, &b.transpose()?)?;
    let db = matmul(&a.transpose()?, grad_out)?;
    Ok((da, db))
}

/// Column sums of a `[n, m]` gradient (the bias gradient of [`linear`]).
pub fn sum_rows(grad_out: &Tensor) -> Result<Tensor> {
    let (n, m) = grad_out.dims2()?;
    let mut s = vec![0.0; m];
    for r in 0..n {
        for (a, b) in s.iter_mut().zip(grad_out.row(r)) {
            *a += b;
        }
    }
    Ok(Tensor::from_parts(vec![m], s))
}
