//! Gradient-descent optimizers.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::train::autograd::Gradients;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> OptimizerKind {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd { .. } => "sgd",
            OptimizerKind::Adam { .. } => "adam",
        }
    }

    pub fn build(self) -> Optimizer {
        Optimizer {
            kind: self,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }
}

/// Holds Adam moments per parameter, indexed like the store.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    steps: u64,
    first: Vec<Option<Tensor>>,
    second: Vec<Option<Tensor>>,
}

impl Optimizer {
    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Parameters without a gradient entry are left alone.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        self.steps += 1;
        let ids: Vec<_> = store.ids().collect();
        if self.first.len() < ids.len() {
            self.first.resize(ids.len(), None);
            self.second.resize(ids.len(), None);
        }
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            if g.shape() != store.get(id).shape() {
                return Err(Error::Dimension(format!(
                    "gradient for `{}` has shape {:?}, parameter {:?}",
                    store.name(id),
                    g.shape(),
                    store.get(id).shape()
                )));
            }
            match self.kind {
                OptimizerKind::Sgd { lr } => {
                    for (p, gv) in store.get_mut(id).data_mut().iter_mut().zip(g.data()) {
                        *p -= lr * gv;
                    }
                }
                OptimizerKind::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                } => {
                    let i = id.index();
                    let m = self.first[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
                    let v = self.second[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
                    let c1 = 1.0 - beta1.powi(self.steps as i32);
                    let c2 = 1.0 - beta2.powi(self.steps as i32);
                    let p = store.get_mut(id).data_mut();
                    for (j, &gv) in g.data().iter().enumerate() {
                        let mj = &mut m.data_mut()[j];
                        *mj = beta1 * *mj + (1.0 - beta1) * gv;
                        let mhat = *mj / c1;
                        let vj = &mut v.data_mut()[j];
                        *vj = beta2 * *vj + (1.0 - beta2) * gv * gv;
                        let vhat = *vj / c2;
                        p[j] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::autograd::Tape;
    use crate::train::autograd::Exec;

    fn store_and_grads(g: &[f64]) -> (ParamStore, Gradients) {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(&[g.len()], vec![1.0; g.len()]).unwrap()).unwrap();
        // d/dw sum(w * g) = g
        let mut tape = Tape::new(&store);
        let w = tape.param(id);
        let c = tape.constant(Tensor::from_vec(&[g.len()], g.to_vec()).unwrap());
        let y = tape.mul(&w, &c).unwrap();
        let l = tape.sum(&y).unwrap();
        let grads = tape.backward(l).unwrap();
        drop(tape);
        (store, grads)
    }

    #[test]
    fn zero_gradients_leave_params() {
        for kind in [OptimizerKind::Sgd { lr: 0.5 }, OptimizerKind::adam(0.1)] {
            let (mut store, grads) = store_and_grads(&[0.0, 0.0]);
            let before = store.clone();
            kind.build().step(&mut store, &grads).unwrap();
            assert_eq!(store.get(store.find("w").unwrap()), before.get(before.find("w").unwrap()));
        }
    }

    #[test]
    fn sgd_unit_rate_subtracts_gradient() {
        let (mut store, grads) = store_and_grads(&[0.25, -2.0]);
        OptimizerKind::Sgd { lr: 1.0 }.build().step(&mut store, &grads).unwrap();
        assert_eq!(store.get(store.find("w").unwrap()).data(), &[0.75, 3.0]);
    }

    #[test]
    fn adam_first_step_hand_trace() {
        let g = [0.5, -3.0];
        let (mut store, grads) = store_and_grads(&g);
        let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
        OptimizerKind::Adam { lr, beta1: b1, beta2: b2, eps }
            .build()
            .step(&mut store, &grads)
            .unwrap();
        let w = store.get(store.find("w").unwrap());
        for (j, &gv) in g.iter().enumerate() {
            let m = (1.0 - b1) * gv / (1.0 - b1);
            let v = (1.0 - b2) * gv * gv / (1.0 - b2);
            let expect = 1.0 - lr * m / (f64::sqrt(v) + eps);
            assert!((w.data()[j] - expect).abs() < 1e-15);
            assert!((w.data()[j] - (1.0 - lr * gv.signum())).abs() < 1e-8);
        }
    }

    #[test]
    fn adam_state_persists_between_steps() {
        let (mut a, up) = store_and_grads(&[1.0]);
        let (_, down) = store_and_grads(&[-1.0]);
        let mut opt = OptimizerKind::adam(0.1).build();
        opt.step(&mut a, &up).unwrap();
        opt.step(&mut a, &down).unwrap();
        assert_eq!(opt.steps(), 2);
        // m = 0.9 * 0.1 - 0.1 = -0.01, v = 0.999 * 0.001 + 0.001
        let (m, v) = (-0.01 / (1.0 - 0.81), (0.999 * 0.001 + 0.001) / (1.0 - 0.999f64.powi(2)));
        let expect = 1.0 - 0.1 / (1.0 + 1e-8) - 0.1 * m / (v.sqrt() + 1e-8);
        let w = a.get(a.find("w").unwrap()).data()[0];
        assert!((w - expect).abs() < 1e-12, "{w} vs {expect}");
    }
}
