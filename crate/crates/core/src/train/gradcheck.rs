//! Central finite-difference checks of reverse-mode gradients.

use crate::error::Result;
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::autograd::{Eager, Exec, Tape};

pub const EPSILON: f64 = 1e-5;

/// A graph under test. Inputs that need checking live in the store as parameters.
pub trait Probe {
    fn run<E: Exec>(&self, ex: &mut E) -> Result<E::Value>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// A coordinate sat within `EPSILON` of a non-differentiable point.
    pub non_smooth: bool,
}

/// `|a - b| / max(1e-8, |a| + |b|)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

fn evaluate<P: Probe>(probe: &P, store: &ParamStore, dropout_seed: Option<u64>) -> Result<Tensor> {
    match dropout_seed {
        Some(seed) => {
            let mut rng = Rng::new(seed);
            let mut ex = Eager::training(store, &mut rng);
            let y = probe.run(&mut ex)?;
            Ok(ex.tensor(&y).clone())
        }
        None => {
            let mut ex = Eager::new(store);
            let y = probe.run(&mut ex)?;
            Ok(ex.tensor(&y).clone())
        }
    }
}

fn projected<P: Probe>(probe: &P, store: &ParamStore, proj: &Tensor, seed: Option<u64>) -> Result<f64> {
    let y = evaluate(probe, store, seed)?;
    Ok(y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum())
}

/// Compares tape gradients of `sum(out * R)` for a random fixed `R` against
/// central differences on every scalar of every parameter.
///
/// With `dropout_seed` the graph runs in training mode and every evaluation
/// draws the same masks.
pub fn grad_check<P: Probe>(probe: &P, store: &ParamStore, dropout_seed: Option<u64>, rng: &mut Rng) -> Result<GradCheck> {
    let shape = evaluate(probe, store, dropout_seed)?.shape().to_vec();
    let proj = Tensor::randn(&shape, 1.0, rng);

    let grads = {
        let mut seed_rng = dropout_seed.map(Rng::new);
        let mut tape = match seed_rng.as_mut() {
            Some(r) => Tape::training(store, r),
            None => Tape::new(store),
        };
        let y = probe.run(&mut tape)?;
        let r = tape.constant(proj.clone());
        let m = tape.mul(&y, &r)?;
        let loss = tape.sum(&m)?;
        tape.backward(loss)?
    };

    let base = projected(probe, store, &proj, dropout_seed)?;
    let mut worst = 0.0f64;
    let mut coordinates = 0;
    let mut non_smooth = false;
    for id in store.ids() {
        let zeros = Tensor::zeros(store.get(id).shape());
        let analytic = grads.get(id).unwrap_or(&zeros);
        for i in 0..store.get(id).numel() {
            let mut plus = store.clone();
            plus.get_mut(id).data_mut()[i] += EPSILON;
            let mut minus = store.clone();
            minus.get_mut(id).data_mut()[i] -= EPSILON;
            let fp = projected(probe, &plus, &proj, dropout_seed)?;
            let fm = projected(probe, &minus, &proj, dropout_seed)?;
            let numeric = (fp - fm) / (2.0 * EPSILON);
            // one-sided slopes disagree by a finite jump at a kink, by O(eps) elsewhere
            let curvature = (fp - 2.0 * base + fm).abs() / EPSILON;
            if curvature > 1e-3 * numeric.abs().max(1.0) {
                non_smooth = true;
            }
            worst = worst.max(relative_error(analytic.data()[i], numeric));
            coordinates += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        coordinates,
        non_smooth,
    })
}

/// Redraws the instance while a coordinate lands on a kink, up to `attempts` times.
pub fn grad_check_resampling<P, B>(mut build: B, dropout_seed: Option<u64>, rng: &mut Rng, attempts: usize) -> Result<GradCheck>
where
    P: Probe,
    B: FnMut(&mut Rng) -> Result<(ParamStore, P)>,
{
    let mut last = None;
    for _ in 0..attempts.max(1) {
        let (store, probe) = build(rng)?;
        let report = grad_check(&probe, &store, dropout_seed, rng)?;
        if !report.non_smooth {
            return Ok(report);
        }
        last = Some(report);
    }
    Ok(last.expect("at least one attempt"))
}
