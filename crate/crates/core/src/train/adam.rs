/// Adam with decoupled multiplicative weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// `θ ← θ (1 - lr w_t)` followed by the bias-corrected Adam update.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let shrink = 1.0 - lr * weight_decay;
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p * shrink - lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_only_decays() {
        let mut a = Adam::new(3);
        let mut p = vec![1.0, -2.0, 0.5];
        a.step(&mut p, &[0.0; 3], 0.1, 0.01);
        assert_eq!(p, vec![1.0 * 0.999, -2.0 * 0.999, 0.5 * 0.999]);
    }

    #[test]
    fn first_step_is_signed_lr() {
        let mut a = Adam::new(2);
        let mut p = vec![0.0, 0.0];
        a.step(&mut p, &[3.0, -0.5], 1e-3, 0.0);
        // m̂ = g, v̂ = g², so the step is lr g / (|g| + eps).
        assert!((p[0] + 1e-3 * 3.0 / (3.0 + 1e-8)).abs() < 1e-18);
        assert!((p[1] - 1e-3 * 0.5 / (0.5 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn second_step_hand_recursion() {
        let mut a = Adam::new(1);
        let mut p = vec![1.0];
        a.step(&mut p, &[2.0], 0.01, 0.0);
        a.step(&mut p, &[-1.0], 0.01, 0.0);
        let m: f64 = 0.9 * (0.1 * 2.0) + 0.1 * -1.0;
        let v: f64 = 0.999 * (0.001 * 4.0) + 0.001 * 1.0;
        let step2 = 0.01 * (m / (1.0 - 0.81)) / ((v / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        let want = 1.0 - 0.01 * 2.0 / (2.0 + 1e-8) - step2;
        assert!((p[0] - want).abs() < 1e-15);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut a = Adam::new(2);
            let mut p = vec![0.3, -0.1];
            a.step(&mut p, &[0.7, 0.2], 1e-3, 1e-5);
            a.step(&mut p, &[-0.1, 0.4], 1e-3, 1e-5);
            p
        };
        assert_eq!(run(), run());
    }
}
