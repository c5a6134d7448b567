use serde::{Deserialize, Serialize};

use super::layers::{Module, Param};
use super::tensor::{real, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Adaptive-moment optimizer (β₁ = 0.9, β₂ = 0.999, ε = 1e-8); `Sgd` ignores the moments.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn step<M: Module<T>>(&mut self, model: &mut M) {
        let mut params: Vec<&mut Param<T>> = Vec::new();
        model.params_mut(&mut params);
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let lr: T = real(self.learning_rate);
        match self.kind {
            OptimizerKind::Sgd => {
                for p in params {
                    for (v, g) in p.value.iter_mut().zip(&p.grad) {
                        *v = *v - lr * *g;
                    }
                    p.zero_grad();
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (0.9f64, 0.999f64);
                let c1: T = real(1.0 - b1.powi(self.step as i32));
                let c2: T = real(1.0 - b2.powi(self.step as i32));
                let (b1, b2): (T, T) = (real(b1), real(b2));
                let eps: T = real(1e-8);
                let one = T::one();
                for ((p, m), v) in params.into_iter().zip(&mut self.first).zip(&mut self.second) {
                    for i in 0..p.value.len() {
                        let g = p.grad[i];
                        m[i] = b1 * m[i] + (one - b1) * g;
                        v[i] = b2 * v[i] + (one - b2) * g * g;
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p.value[i] = p.value[i] - lr * m_hat / (v_hat.sqrt() + eps);
                    }
                    p.zero_grad();
                }
            }
        }
    }
}

/// Exponential moving average of a model's parameters.
#[derive(Debug, Clone)]
pub struct Ema<T> {
    pub decay: f64,
    shadow: Vec<Vec<T>>,
}

impl<T: Real> Ema<T> {
    pub fn new<M: Module<T>>(decay: f64, model: &M) -> Self {
        let mut params = Vec::new();
        model.params("", &mut params);
        Self {
            decay,
            shadow: params.iter().map(|(_, p)| p.value.clone()).collect(),
        }
    }

    pub fn update<M: Module<T>>(&mut self, model: &M) {
        let mut params = Vec::new();
        model.params("", &mut params);
        let d: T = real(self.decay);
        let one = T::one();
        for ((_, p), s) in params.into_iter().zip(&mut self.shadow) {
            for (sv, &v) in s.iter_mut().zip(&p.value) {
                *sv = d * *sv + (one - d) * v;
            }
        }
    }

    /// Overwrites the model's parameters with the averaged ones.
    pub fn copy_to<M: Module<T>>(&self, model: &mut M) {
        let mut params = Vec::new();
        model.params_mut(&mut params);
        for (p, s) in params.into_iter().zip(&self.shadow) {
            p.value.copy_from_slice(s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::layers::Linear;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut lin = Linear::<f64>::new(2, 1, &mut rng);
        let before = lin.weight.value.clone();
        lin.weight.grad = vec![3.0, -0.5];
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01);
        opt.step(&mut lin);
        // bias-corrected first step is lr·sign(g)
        assert!((lin.weight.value[0] - (before[0] - 0.01)).abs() < 1e-9);
        assert!((lin.weight.value[1] - (before[1] + 0.01)).abs() < 1e-9);
        assert!(lin.weight.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ema_tracks_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut lin = Linear::<f64>::new(1, 1, &mut rng);
        lin.weight.value[0] = 0.0;
        let mut ema = Ema::new(0.5, &lin);
        lin.weight.value[0] = 1.0;
        ema.update(&lin);
        ema.update(&lin);
        ema.copy_to(&mut lin);
        assert!((lin.weight.value[0] - 0.75).abs() < 1e-12);
    }
}
