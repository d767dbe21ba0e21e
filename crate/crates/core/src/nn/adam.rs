use serde::{Deserialize, Serialize};

use super::matrix::Matrix;

/// Adam with a fixed step size and optional global-norm gradient clipping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_grad_norm: Option<f64>,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: None,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn with_clip(mut self, max_norm: Option<f64>) -> Self {
        self.max_grad_norm = max_norm;
        self
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Returns the pre-clip global gradient norm.
    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) -> f64 {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.data.len()]).collect();
            self.v = self.m.clone();
        }
        let norm = grads.iter().map(Matrix::sum_sq).sum::<f64>().sqrt();
        let clip = match self.max_grad_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.data.len() {
                let gi = g.data[i] * clip;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                p.data[i] -= self.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = vec![Matrix::from_vec(1, 2, vec![3.0, -2.0])];
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let g = vec![Matrix::from_vec(1, 2, p[0].data.iter().map(|x| 2.0 * x).collect())];
            opt.step(&mut p, &g);
        }
        assert!(p[0].data.iter().all(|x| x.abs() < 1e-2), "{:?}", p[0].data);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Matrix::from_vec(1, 1, vec![0.0])];
        let mut opt = Adam::new(0.01).with_clip(Some(1.0));
        let norm = opt.step(&mut p, &[Matrix::from_vec(1, 1, vec![50.0])]);
        assert_eq!(norm, 50.0);
        assert!((p[0].data[0] + 0.01).abs() < 1e-9);
    }
}
