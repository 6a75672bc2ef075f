//! Adam with bias correction and a warmup / linear-decay learning-rate schedule.

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamStore};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first: Vec<Matrix>,
    pub second: Vec<Matrix>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.values().iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }
}

pub fn adam_step(store: &mut ParamStore, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    let values = store.values_mut();
    let grads = grads.as_slice();
    if grads.len() != values.len() || state.first.len() != values.len() {
        return Err(Error::Shape {
            op: "adam_step",
            lhs: (values.len(), 1),
            rhs: (grads.len(), 1),
        });
    }
    for (v, g) in values.iter().zip(grads) {
        if v.shape() != g.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: v.shape(),
                rhs: g.shape(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((v, g), (m, s)) in values
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        let iter = v
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(s.data_mut().iter_mut()));
        for ((p, &gi), (mi, si)) in iter {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *si = b2 * *si + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let s_hat = *si / c2;
            *p -= lr * m_hat / (s_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Linear warmup over the first `warmup` fraction of steps, then linear decay to zero.
pub fn scheduled_lr(base: f64, step: usize, total: usize, warmup: f64) -> f64 {
    let total = total.max(1) as f64;
    let warm = (warmup * total).ceil().max(1.0);
    let s = step as f64 + 1.0;
    if s <= warm {
        base * s / warm
    } else {
        base * ((total - s + 1.0) / (total - warm + 1.0)).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_with(values: Matrix) -> ParamStore {
        let mut store = ParamStore::new();
        store.add("w", values);
        store
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let start = Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]);
        let mut store = store_with(start.clone());
        let mut state = AdamState::new(&store);
        let grads = Gradients::zeros_like(&store);
        adam_step(&mut store, &grads, &mut state, 0.1).unwrap();
        assert_eq!(store.values()[0], start);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut store = store_with(Matrix::from_rows(&[[1.0, 1.0, 1.0]]));
        let mut state = AdamState::new(&store);
        let mut g = Graph::new(&store);
        let w = g.param(store.ids().next().unwrap());
        let c = g.tape.constant(Matrix::from_rows(&[[3.0], [-0.01], [250.0]]));
        let y = g.tape.matmul(w, c).unwrap();
        g.tape.backward(y).unwrap();
        let grads = g.gradients();
        adam_step(&mut store, &grads, &mut state, 0.01).unwrap();
        let got = store.values()[0].data().to_vec();
        for (v, sign) in got.iter().zip([1.0, -1.0, 1.0]) {
            assert!((1.0 - v - 0.01 * sign).abs() < 1e-7, "{got:?}");
        }
    }

    #[test]
    fn minimising_squared_norm_decreases_after_warmup() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = store_with(Matrix::randn(3, 4, 1.0, &mut rng));
        let mut state = AdamState::new(&store);
        let mut norms = Vec::new();
        for _ in 0..100 {
            let mut g = Graph::new(&store);
            let w = g.param(store.ids().next().unwrap());
            let sq = g.tape.mul(w, w).unwrap();
            let loss = g.tape.sum(sq);
            g.tape.backward(loss).unwrap();
            let grads = g.gradients();
            adam_step(&mut store, &grads, &mut state, 0.01).unwrap();
            norms.push(store.values()[0].frobenius_norm());
        }
        for w in norms[5..].windows(2) {
            assert!(w[1] < w[0], "{norms:?}");
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut store = store_with(Matrix::zeros(2, 2));
        let mut state = AdamState::new(&store);
        let other = store_with(Matrix::zeros(3, 2));
        let grads = Gradients::zeros_like(&other);
        assert!(matches!(
            adam_step(&mut store, &grads, &mut state, 0.1),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let lrs: Vec<f64> = (0..10).map(|s| scheduled_lr(1.0, s, 10, 0.2)).collect();
        assert_eq!(lrs[0], 0.5);
        assert_eq!(lrs[1], 1.0);
        assert!(lrs[2..].windows(2).all(|w| w[1] < w[0]));
        assert!(lrs[9] > 0.0);
        assert_eq!(scheduled_lr(1.0, 0, 1, 0.0), 1.0);
    }
}
