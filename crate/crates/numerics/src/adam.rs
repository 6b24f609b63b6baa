use crate::params::{Gradients, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = |_| store.iter().map(|(_, p)| Tensor::zeros(p.value.rows(), p.value.cols()));
        Self {
            config,
            step: 0,
            m: zeros(()).collect(),
            v: zeros(()).collect(),
        }
    }

    /// One update of every parameter. Parameters without a gradient are
    /// updated as if their gradient were zero.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for id in store.ids().collect::<Vec<_>>() {
            let i = id.index();
            let g = grads.get(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let value = store.value_mut(id);
            for j in 0..value.len() {
                let gj = g.map_or(0.0, |g| g.data()[j]);
                let mj = beta1 * m.data()[j] + (1.0 - beta1) * gj;
                let vj = beta2 * v.data()[j] + (1.0 - beta2) * gj * gj;
                m.data_mut()[j] = mj;
                v.data_mut()[j] = vj;
                let m_hat = mj / bc1;
                let v_hat = vj / bc2;
                value.data_mut()[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::params::Init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_param(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("x".into(), Tensor::scalar(value), Init::Zeros).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = v_hat = 1 for g = 1, so the step is lr / (1 + eps).
        let mut s = one_param(0.5);
        let id = s.id("x").unwrap();
        let mut grads = Gradients::zeros_like(&s);
        grads.accumulate(id, Tensor::scalar(1.0));
        let mut adam = Adam::new(AdamConfig::default(), &s);
        adam.step(&mut s, &grads);
        let expected = 0.5 - 1e-3 / (1.0 + 1e-8);
        assert!((s.value(id).data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut s = one_param(0.25);
        let grads = Gradients::zeros_like(&s);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        adam.step(&mut s, &grads);
        assert_eq!(s.value(s.id("x").unwrap()).data(), &[0.25]);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut s = ParamStore::new();
            let w = s.add("w", 3, 2, Init::XavierUniform, &mut rng).unwrap();
            let mut adam = Adam::new(AdamConfig::default(), &s);
            for _ in 0..5 {
                let grads = {
                    let mut g = Graph::new(&s);
                    let x = g.param(w);
                    let t = g.tanh(x);
                    let sq = g.mul(t, t).unwrap();
                    let l = g.sum(sq);
                    g.backward(l).unwrap()
                };
                adam.step(&mut s, &grads);
            }
            s
        };
        assert_eq!(run(), run());
    }
}
