//! AdamW with decoupled weight decay.

use super::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(len: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// `w <- w - lr*wd*w`, then the bias-corrected Adam update.
    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: f64, weight_decay: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let decay = 1.0 - lr * weight_decay;
        for i in 0..params.len() {
            let g = grads[i].f64();
            let m = self.beta1 * self.m[i].f64() + (1.0 - self.beta1) * g;
            let v = self.beta2 * self.v[i].f64() + (1.0 - self.beta2) * g * g;
            self.m[i] = T::of(m);
            self.v[i] = T::of(v);
            let w = params[i].f64() * decay;
            params[i] = T::of(w - lr * (m / c1) / ((v / c2).sqrt() + self.eps));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_closed_form() {
        let mut opt = AdamW::<f64>::new(1);
        let mut w = [1.0];
        opt.step(&mut w, &[1.0], 0.1, 0.0);
        assert!((w[0] - 0.9).abs() < 1e-4);
        assert!((w[0] - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut opt = AdamW::<f64>::new(3);
        let mut w = [0.5, -2.0, 3.0];
        for _ in 0..5 {
            opt.step(&mut w, &[0.0; 3], 0.1, 0.0);
        }
        assert_eq!(w, [0.5, -2.0, 3.0]);
    }

    #[test]
    fn decay_only_step() {
        let mut opt = AdamW::<f64>::new(2);
        let mut w = [2.0, -4.0];
        opt.step(&mut w, &[0.0; 2], 1.0, 0.1);
        assert!((w[0] - 1.8).abs() < 1e-12);
        assert!((w[1] + 3.6).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut opt = AdamW::<f32>::new(2);
        let mut w = [0.25f32, 1.5];
        opt.step(&mut w, &[3.0, -1.0], 0.0, 1e-4);
        assert_eq!(w, [0.25, 1.5]);
    }
}
