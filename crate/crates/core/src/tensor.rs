//! Dense row-major `f64` tensors.
//!
//! Feature maps are stored as `[channels, time]`, so channel `i` of a map is the
//! contiguous slice `data[i * t..(i + 1) * t]`. Every tensor buffer is registered
//! with a per-thread live-bytes counter (see [`memory`]) so the benchmark harness
//! can report the high-water mark of tensor storage during one inference.

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Per-thread accounting of live tensor buffer bytes.
pub mod memory {
    use std::cell::Cell;

    thread_local! {
        static LIVE: Cell<usize> = const { Cell::new(0) };
        static PEAK: Cell<usize> = const { Cell::new(0) };
    }

    pub(crate) fn on_alloc(bytes: usize) {
        LIVE.with(|live| {
            let now = live.get() + bytes;
            live.set(now);
            PEAK.with(|peak| {
                if now > peak.get() {
                    peak.set(now);
                }
            });
        });
    }

    // A tensor dropped on a different thread than the one that built it
    // decrements this thread's counter; saturate rather than wrap.
    pub(crate) fn on_free(bytes: usize) {
        LIVE.with(|live| live.set(live.get().saturating_sub(bytes)));
    }

    /// Bytes currently held by tensors created on this thread.
    pub fn live_bytes() -> usize {
        LIVE.with(|l| l.get())
    }

    /// Runs `f` and returns its result together with the peak number of live
    /// tensor bytes above the level at entry.
    pub fn track_peak<T>(f: impl FnOnce() -> T) -> (T, usize) {
        let base = live_bytes();
        let saved_peak = PEAK.with(|p| p.replace(base));
        let out = f();
        let peak = PEAK.with(|p| p.get());
        PEAK.with(|p| p.set(saved_peak.max(peak)));
        (out, peak.saturating_sub(base))
    }
}

/// Bytes per stored element (internal precision is 64-bit).
pub const ELEM_BYTES: usize = std::mem::size_of::<f64>();

pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        memory::on_alloc(data.len() * ELEM_BYTES);
        Tensor { shape, data }
    }

    /// Builds a tensor, checking that `data` fills `shape` and is finite.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "shape {shape:?} has a zero-sized dim"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Dimension(format!(
                "non-finite value {} at flat index {i}",
                data[i]
            )));
        }
        Ok(Tensor::build(shape.to_vec(), data))
    }

    /// Unchecked constructor for kernels that produce finite data of the right length.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::build(shape, data)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::build(shape.to_vec(), vec![value; n])
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 1.0)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::build(vec![1], vec![v])
    }

    pub fn identity(n: usize) -> Tensor {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// 2-D tensor from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Tensor> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Tensor::from_vec(&[r, c], rows.concat())
    }

    /// Uniform samples in `[-bound, bound)`.
    pub fn uniform(shape: &[usize], bound: f64, rng: &mut Rng) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
        Tensor::build(shape.to_vec(), data)
    }

    /// Standard normal samples scaled by `std`.
    pub fn randn(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| std * rng.normal()).collect();
        Tensor::build(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(mut self) -> Vec<f64> {
        memory::on_free(self.data.len() * ELEM_BYTES);
        std::mem::take(&mut self.data)
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Dimension(format!(
                "expected a rank-2 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Tensor::build(shape.to_vec(), self.data.clone()))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor::build(vec![c, r], out))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::build(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.numel() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        check_same(self, other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        check_same(self, other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Clone for Tensor {
    fn clone(&self) -> Self {
        Tensor::build(self.shape.clone(), self.data.clone())
    }
}

impl Drop for Tensor {
    fn drop(&mut self) {
        memory::on_free(self.data.len() * ELEM_BYTES);
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

fn check_same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::Dimension(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape, b.shape
        )));
    }
    Ok(())
}

/// Standard matrix product of `[m, r]` by `[r, n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, r) = a.dims2()?;
    let (r2, n) = b.dims2()?;
    if r != r2 {
        return Err(Error::Dimension(format!(
            "matmul: inner dims differ for {:?} x {:?}",
            a.shape, b.shape
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..r {
            let av = a.data[i * r + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor::build(vec![m, n], out))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Mul,
}

pub fn elementwise(x: &Tensor, y: &Tensor, op: ElementwiseOp) -> Result<Tensor> {
    check_same(x, y, "elementwise")?;
    let data = x
        .data
        .iter()
        .zip(&y.data)
        .map(|(a, b)| match op {
            ElementwiseOp::Add => a + b,
            ElementwiseOp::Mul => a * b,
        })
        .collect();
    Ok(Tensor::build(x.shape.clone(), data))
}

/// Inverted dropout. Returns the output and the applied mask, whose surviving
/// entries hold `1 / (1 - p)`; at inference the mask is all ones.
pub fn dropout(x: &Tensor, p: f64, rng: &mut Rng, training: bool) -> Result<(Tensor, Tensor)> {
    let mask = dropout_mask(x.shape(), p, rng, training)?;
    let out = elementwise(x, &mask, ElementwiseOp::Mul)?;
    Ok((out, mask))
}

pub fn dropout_mask(shape: &[usize], p: f64, rng: &mut Rng, training: bool) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!(
            "dropout probability {p} outside [0, 1)"
        )));
    }
    if !training || p == 0.0 {
        return Ok(Tensor::ones(shape));
    }
    let keep = 1.0 / (1.0 - p);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.bernoulli(p) { 0.0 } else { keep })
        .collect();
    Ok(Tensor::build(shape.to_vec(), data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, r) = a.dims2().unwrap();
        let (_, n) = b.dims2().unwrap();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..r {
                    out[i * n + j] += a.at(i, p) * b.at(p, j);
                }
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_outer() {
        let i = Tensor::identity(2);
        let b = Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        assert_eq!(matmul(&i, &b).unwrap(), b);

        let col = Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let row = Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&col, &row).unwrap().data(), &[3.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(11);
        let a = Tensor::randn(&[5, 4], 1.0, &mut rng);
        let b = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let got = matmul(&a, &b).unwrap();
        for (g, w) in got.data().iter().zip(naive_matmul(&a, &b)) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3] x [2, 3]"), "{msg}");
    }

    #[test]
    fn elementwise_identities() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let y = Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        assert_eq!(
            elementwise(&x, &y, ElementwiseOp::Add).unwrap().data(),
            &[4.0, 6.0]
        );
        assert_eq!(elementwise(&x, &Tensor::zeros(&[2]), ElementwiseOp::Add).unwrap(), x);
        assert_eq!(elementwise(&x, &Tensor::ones(&[2]), ElementwiseOp::Mul).unwrap(), x);
        assert!(matches!(
            elementwise(&x, &Tensor::zeros(&[3]), ElementwiseOp::Add),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn dropout_edge_cases() {
        let mut rng = Rng::new(1);
        let x = Tensor::randn(&[4, 5], 1.0, &mut rng);
        let (y, _) = dropout(&x, 0.0, &mut rng, true).unwrap();
        assert_eq!(y, x);
        let (y, mask) = dropout(&x, 0.9, &mut rng, false).unwrap();
        assert_eq!(y, x);
        assert!(mask.data().iter().all(|&m| m == 1.0));
        assert!(matches!(dropout(&x, 1.0, &mut rng, true), Err(Error::Config(_))));
        assert!(matches!(dropout(&x, -0.1, &mut rng, true), Err(Error::Config(_))));
    }

    #[test]
    fn dropout_survivor_fraction() {
        let mut rng = Rng::new(42);
        let x = Tensor::ones(&[10_000]);
        let (y, _) = dropout(&x, 0.5, &mut rng, true).unwrap();
        let survivors = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / 1e4;
        assert!((0.47..=0.53).contains(&survivors), "{survivors}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = Rng::new(3);
        let x = Tensor::uniform(&[64], 1.0, &mut rng).map(|v| v + 2.0);
        let mut total = 0.0;
        for trial in 0..1000 {
            let mut r = Rng::new(1000 + trial);
            total += dropout(&x, 0.3, &mut r, true).unwrap().0.mean();
        }
        let rel = (total / 1000.0 - x.mean()).abs() / x.mean();
        assert!(rel < 0.03, "{rel}");
    }

    #[test]
    fn from_vec_rejects_bad_input() {
        assert!(Tensor::from_vec(&[2], vec![1.0]).is_err());
        assert!(Tensor::from_vec(&[1], vec![f64::NAN]).is_err());
        assert!(Tensor::from_vec(&[0, 2], vec![]).is_err());
    }

    #[test]
    fn peak_tracking_counts_temporaries() {
        let (_, peak) = memory::track_peak(|| {
            let a = Tensor::zeros(&[100]);
            drop(a);
            let _b = Tensor::zeros(&[10]);
        });
        assert_eq!(peak, 100 * ELEM_BYTES);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use crate::rng::Rng;

        proptest! {
            #[test]
            fn matmul_is_associative(seed in any::<u64>(), m in 1usize..6, p in 1usize..6, q in 1usize..6, n in 1usize..6) {
                let mut rng = Rng::new(seed);
                let a = Tensor::randn(&[m, p], 1.0, &mut rng);
                let b = Tensor::randn(&[p, q], 1.0, &mut rng);
                let c = Tensor::randn(&[q, n], 1.0, &mut rng);
                let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
                let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
                let scale = left.max_abs().max(1.0);
                prop_assert!(left.max_abs_diff(&right).unwrap() / scale < 1e-9);
            }

            #[test]
            fn ops_keep_values_finite(seed in any::<u64>(), n in 1usize..32, p in 0.0f64..0.95) {
                let mut rng = Rng::new(seed);
                let x = Tensor::randn(&[n], 1e3, &mut rng);
                let y = Tensor::randn(&[n], 1e3, &mut rng);
                prop_assert!(elementwise(&x, &y, ElementwiseOp::Mul).unwrap().all_finite());
                prop_assert!(dropout(&x, p, &mut rng, true).unwrap().0.all_finite());
                let sq = x.reshape(&[1, n]).unwrap();
                prop_assert!(matmul(&sq.transpose().unwrap(), &sq).unwrap().all_finite());
            }
        }
    }
}
