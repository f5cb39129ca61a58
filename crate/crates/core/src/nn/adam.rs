use ndarray::Zip;

use super::mlp::{Gradients, Mlp};
use crate::error::Result;
use crate::scalar::Scalar;

/// Bias-corrected Adam state for one network.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    step_count: u64,
    first_moment: Gradients<T>,
    second_moment: Gradients<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(net: &Mlp<T>, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
            step_count: 0,
            first_moment: Gradients::zeros_like(net),
            second_moment: Gradients::zeros_like(net),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One descent step on `net` along `grads`.
    pub fn step(&mut self, net: &mut Mlp<T>, grads: &Gradients<T>) -> Result<()> {
        let t = self.step_count + 1;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let one = T::one();
        let c1 = T::of(1.0 - self.beta1.powi(t as i32));
        let c2 = T::of(1.0 - self.beta2.powi(t as i32));
        let lr = T::of(self.lr);
        let eps = T::of(self.eps_hat);
        let m = &mut self.first_moment.layers;
        let v = &mut self.second_moment.layers;
        net.update_with(grads, |i, w, gw, b, gb| {
            Zip::from(w)
                .and(gw)
                .and(&mut m[i].weight)
                .and(&mut v[i].weight)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    *p = *p - lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
            Zip::from(b)
                .and(gb)
                .and(&mut m[i].bias)
                .and(&mut v[i].bias)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    *p = *p - lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        })?;
        self.step_count = t;
        Ok(())
    }
}
