use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay: `p ← p − lr·wd·p`, applied alongside the
    /// moment update rather than folded into the gradient.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// Adam with bias correction. Moments are allocated lazily on the first step
/// and must keep the same shapes afterwards.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) {
        assert_eq!(params.len(), grads.len(), "adam: params/grads count mismatch");
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| Matrix::zeros(g.rows(), g.cols())).collect();
            self.second = self.first.clone();
        }
        assert_eq!(self.first.len(), params.len(), "adam: parameter set changed");
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            assert_eq!(p.shape(), g.shape(), "adam: gradient shape mismatch");
            let p = p.as_mut_slice();
            for (((p, &g), m), v) in p
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * *p);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut w = Matrix::from_rows(&[vec![1.0, -2.0]]);
        let mut adam = Adam::new(AdamConfig::new(0.1, 0.0));
        for _ in 0..5 {
            adam.step(&mut [&mut w], &[Matrix::zeros(1, 2)]);
        }
        assert_eq!(w, Matrix::from_rows(&[vec![1.0, -2.0]]));
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so the first step is lr·g/(|g| + eps).
        let mut w = Matrix::scalar(0.0);
        let mut adam = Adam::new(AdamConfig::new(0.1, 0.0));
        adam.step(&mut [&mut w], &[Matrix::scalar(1.0)]);
        assert!((w.item() + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut w = Matrix::scalar(0.0);
        let mut adam = Adam::new(AdamConfig::new(0.05, 0.0));
        for _ in 0..500 {
            let g = Matrix::scalar(2.0 * (w.item() - 3.0));
            adam.step(&mut [&mut w], &[g]);
        }
        assert!((w.item() - 3.0).abs() < 1e-2, "w = {}", w.item());
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let mut w = Matrix::scalar(2.0);
        let mut adam = Adam::new(AdamConfig::new(0.1, 0.5));
        adam.step(&mut [&mut w], &[Matrix::scalar(0.0)]);
        assert!((w.item() - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
    }
}
