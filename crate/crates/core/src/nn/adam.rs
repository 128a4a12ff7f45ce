use serde::{Deserialize, Serialize};

/// Adam optimizer state over a fixed list of parameter buffers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Descends along `grads` (one gradient buffer per parameter buffer).
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut [f64]>, grads: &[Vec<f64>]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = self.lr * bc2.sqrt() / bc1;
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            debug_assert_eq!(p.len(), g.len());
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= step * m[i] / (v[i].sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Adam::new(0.1, 0.9, 0.999, &[2]);
        for _ in 0..500 {
            let g = vec![2.0 * x[0], 2.0 * (x[1] - 1.0)];
            opt.step([x.as_mut_slice()], &[g]);
        }
        assert!(x[0].abs() < 1e-2 && (x[1] - 1.0).abs() < 1e-2, "{x:?}");
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut x = vec![0.0];
        let mut opt = Adam::new(0.01, 0.5, 0.999, &[1]);
        opt.step([x.as_mut_slice()], &[vec![5.0]]);
        assert!((x[0] + 0.01).abs() < 1e-8);
    }
}
