//! Adam with bias correction. Moment estimates live inside each [`Param`],
//! so serializing the parameter list checkpoints the optimizer too; only the
//! shared step counter lives here.

use super::ParamRefsMut;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
        }
    }

    /// One update over the given parameters at learning rate `lr`, consuming
    /// the gradients accumulated since the last `zero_grad`.
    pub fn step(&mut self, params: ParamRefsMut<'_>, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (_, p) in params {
            let g = p.grad.view();
            ndarray::Zip::from(&mut p.m).and(&g).for_each(|m, &gi| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
            });
            ndarray::Zip::from(&mut p.v).and(&g).for_each(|v, &gi| {
                *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
            });
            ndarray::Zip::from(&mut p.value)
                .and(&p.m)
                .and(&p.v)
                .for_each(|w, &m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    *w -= lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Param;
    use ndarray::ArrayD;

    #[test]
    fn minimizes_a_quadratic() {
        // f(w) = 0.5 * (w - 3)^2, gradient w - 3.
        let mut p = Param::new(ArrayD::zeros(vec![1]));
        let mut adam = Adam::new(0.9, 0.999);
        for _ in 0..2000 {
            p.zero_grad();
            let w = p.value[[0]];
            p.grad[[0]] = w - 3.0;
            adam.step(vec![("w".into(), &mut p)], 0.05);
        }
        assert!((p.value[[0]] - 3.0).abs() < 1e-3, "got {}", p.value[[0]]);
    }

    #[test]
    fn first_step_moves_by_lr_regardless_of_gradient_scale() {
        // Bias correction makes the first update ~lr * sign(g).
        for scale in [1e-3, 1.0, 1e3] {
            let mut p = Param::new(ArrayD::zeros(vec![1]));
            let mut adam = Adam::new(0.5, 0.999);
            p.grad[[0]] = scale;
            adam.step(vec![("w".into(), &mut p)], 0.01);
            assert!((p.value[[0]] + 0.01).abs() < 1e-6, "scale {scale}");
        }
    }
}
