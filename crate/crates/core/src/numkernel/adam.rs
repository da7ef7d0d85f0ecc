use crate::scalar::Scalar;

use super::{Matrix, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coefficient of the L2 penalty, folded into the gradient as `l2 * value`.
    pub l2: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, l2: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            l2,
        }
    }
}

/// First/second moment buffers for every parameter of one store.
#[derive(Debug, Clone)]
pub struct AdamState<S> {
    m: Vec<Matrix<S>>,
    v: Vec<Matrix<S>>,
    t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(store: &ParamStore<S>) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|p| Matrix::zeros(p.value().rows(), p.value().cols()))
                .collect::<Vec<_>>()
        };
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, index: usize) -> &Matrix<S> {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &Matrix<S> {
        &self.v[index]
    }

    /// One bias-corrected Adam update over every parameter in `store`.
    /// Pinned rows are neither updated nor allowed to accumulate moments.
    pub fn step(&mut self, store: &mut ParamStore<S>, cfg: &AdamConfig) {
        assert_eq!(self.m.len(), store.len(), "optimizer built for another store");
        self.t += 1;
        let b1 = S::lit(cfg.beta1);
        let b2 = S::lit(cfg.beta2);
        let one = S::one();
        let t = self.t as i32;
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        let lr = S::lit(cfg.lr);
        let eps = S::lit(cfg.eps);
        let l2 = S::lit(cfg.l2);
        for ((p, m), v) in store.params_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let cols = p.value().cols().max(1);
            let (value, grad, pinned) = p.parts_mut();
            for (k, ((w, g), (mk, vk))) in value
                .as_mut_slice()
                .iter_mut()
                .zip(grad.as_slice().iter().copied())
                .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice().iter_mut()))
                .enumerate()
            {
                if !pinned.is_empty() && pinned.contains(&(k / cols)) {
                    continue;
                }
                let g = g + l2 * *w;
                *mk = b1 * *mk + (one - b1) * g;
                *vk = b2 * *vk + (one - b2) * g * g;
                let m_hat = *mk / c1;
                let v_hat = *vk / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Matrix::from_vec(1, 1, vec![v]).unwrap(), vec![])
            .unwrap();
        s
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut store = ParamStore::<f64>::new();
        store
            .add("w", Matrix::from_vec(2, 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap(), vec![])
            .unwrap();
        let before = store.clone();
        let mut adam = AdamState::new(&store);
        for _ in 0..5 {
            adam.step(&mut store, &AdamConfig::new(0.1, 0.0));
        }
        assert_eq!(
            store.iter().next().unwrap().value(),
            before.iter().next().unwrap().value()
        );
        assert_eq!(adam.steps(), 5);
    }

    #[test]
    fn first_step_is_a_sign_step() {
        for g in [1e-3, 0.5, -7.0] {
            let mut store = scalar_store(1.0);
            let id = store.id("w").unwrap();
            store.grad_mut(id).fill(g);
            let mut adam = AdamState::new(&store);
            adam.step(&mut store, &AdamConfig::new(0.01, 0.0));
            let delta = store.value(id).get(0, 0) - 1.0;
            // lr * |g| / (|g| + eps)
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((delta - expected).abs() < 1e-15, "{delta} vs {expected}");
        }
    }

    #[test]
    fn two_steps_match_hand_trace() {
        // hand trace: lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8, w0 = 1, g1 = 2, g2 = -1
        // m1 = 0.2, v1 = 0.004, m̂ = 2, v̂ = 4 -> w1 = 1 - 0.1 * 2 / (2 + 1e-8)
        // m2 = 0.18 - 0.1 = 0.08, v2 = 0.003996 + 0.001 = 0.004996
        // m̂ = 0.08 / 0.19, v̂ = 0.004996 / 0.001999
        let mut store = scalar_store(1.0);
        let id = store.id("w").unwrap();
        let cfg = AdamConfig::new(0.1, 0.0);
        let mut adam = AdamState::new(&store);
        store.grad_mut(id).fill(2.0);
        adam.step(&mut store, &cfg);
        let w1 = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((store.value(id).get(0, 0) - w1).abs() < 1e-15);
        store.grad_mut(id).fill(-1.0);
        adam.step(&mut store, &cfg);
        let m_hat: f64 = 0.08 / 0.19;
        let v_hat: f64 = 0.004996 / (1.0 - 0.999_f64.powi(2));
        let w2 = w1 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((store.value(id).get(0, 0) - w2).abs() < 1e-12);
        assert!(adam.second_moment(0).get(0, 0) >= 0.0);
    }

    #[test]
    fn l2_pulls_toward_zero_without_gradient() {
        let mut store = scalar_store(2.0);
        let id = store.id("w").unwrap();
        let mut adam = AdamState::new(&store);
        adam.step(&mut store, &AdamConfig::new(0.01, 1e-2));
        assert!(store.value(id).get(0, 0) < 2.0);
    }

    #[test]
    fn pinned_rows_never_move() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("emb", Matrix::zeros(3, 2), vec![0]).unwrap();
        store.grad_mut(id).fill(1.0);
        let mut adam = AdamState::new(&store);
        for _ in 0..3 {
            adam.step(&mut store, &AdamConfig::new(0.1, 1e-3));
        }
        assert_eq!(store.value(id).row(0), &[0.0, 0.0]);
        assert!(store.value(id).row(1)[0] < 0.0);
    }
}
