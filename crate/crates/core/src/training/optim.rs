//! Adam without weight decay. Parameters and moments are rounded to f32 after
//! every update so that a checkpoint captures the state exactly.

use crate::params::{round_f32, Group, ParamStore};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub group: Group,
    /// Completed updates.
    pub t: u64,
    /// First and second moments, aligned with the store's entries; empty for
    /// parameters outside `group`.
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamStore, group: Group, lr: f64) -> Self {
        let zeros = |e: &crate::params::ParamEntry| {
            if e.group == group {
                Tensor::zeros(e.value.shape().to_vec())
            } else {
                Tensor::zeros(vec![0])
            }
        };
        Adam {
            lr,
            group,
            t: 0,
            m: params.entries().iter().map(zeros).collect(),
            v: params.entries().iter().map(zeros).collect(),
        }
    }

    /// Applies one update. `grads` is aligned with the store; `None` entries
    /// (unused parameters) count as zero gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>]) {
        self.t += 1;
        let t = self.t as i32;
        let (bc1, bc2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
        let ids: Vec<_> = params.ids_in(self.group).collect();
        for id in ids {
            let i = id.index();
            let Some(g) = grads[i].as_ref() else {
                continue;
            };
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let mut p = params.get(id).clone();
            for (((pv, mv), vv), &gv) in p
                .data_mut()
                .iter_mut()
                .zip(m.iter_mut())
                .zip(v.iter_mut())
                .zip(g.data())
            {
                *mv = BETA1 * *mv + (1.0 - BETA1) * gv;
                *vv = BETA2 * *vv + (1.0 - BETA2) * gv * gv;
                *mv = *mv as f32 as f64;
                *vv = *vv as f32 as f64;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= self.lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
            round_f32(&mut p);
            params.set(id, p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Init;
    use rand::SeedableRng;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut store = ParamStore::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let a = store.init("a", Group::Ddon, &[3], Init::Zeros, &mut rng);
        let b = store.init("b", Group::Ilgfn, &[2], Init::Ones, &mut rng);
        let mut opt = Adam::new(&store, Group::Ddon, 1e-3);
        let grads = vec![
            Some(Tensor::from_vec(vec![3], vec![2.0, -0.5, 0.0])),
            Some(Tensor::full(vec![2], 1.0)),
        ];
        opt.step(&mut store, &grads);
        let got = store.get(a).data().to_vec();
        // bias-corrected first step is lr * g / (|g| + eps)
        assert!((got[0] + 1e-3).abs() < 1e-9 && (got[1] - 1e-3).abs() < 1e-9 && got[2] == 0.0);
        assert_eq!(store.get(b).data(), &[1.0, 1.0], "other group untouched");
        assert!(got.iter().all(|&v| v == v as f32 as f64));
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut store = ParamStore::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let x = store.init("x", Group::Ilgfn, &[2], Init::Ones, &mut rng);
        let mut opt = Adam::new(&store, Group::Ilgfn, 0.05);
        for _ in 0..500 {
            let g: Vec<f64> = store
                .get(x)
                .data()
                .iter()
                .map(|&v| 2.0 * (v - 3.0))
                .collect();
            opt.step(&mut store, &[Some(Tensor::from_vec(vec![2], g))]);
        }
        assert!(store.get(x).data().iter().all(|&v| (v - 3.0).abs() < 1e-2));
        assert_eq!(opt.t, 500);
    }
}
