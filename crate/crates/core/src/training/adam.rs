use crate::{Error, Result};

/// Adam with bias correction and a fixed learning rate.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// One update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::LengthMismatch {
                expected: self.m.len(),
                got: if params.len() != self.m.len() { params.len() } else { grads.len() },
            });
        }
        if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::non_finite(format!("gradient component {k}")));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(mut state: AdamState, mut params: Vec<f64>, grads: &[f64]) -> Result<(Vec<f64>, AdamState)> {
    state.step(&mut params, grads)?;
    Ok((params, state))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let (p, s) = adam_step(AdamState::new(3, 5e-4), vec![1.0, -2.0, 0.5], &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let lr = 5e-4;
        let g = [3.0, -0.01, 250.0, -7.5];
        let (p, _) = adam_step(AdamState::new(4, lr), vec![0.0; 4], &g).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            // m̂/√v̂ = g/|g| up to eps
            assert!((pi + lr * gi.signum()).abs() < lr * 1e-5, "{pi}");
        }
    }

    #[test]
    fn deterministic_trajectories() {
        let run = || {
            let mut s = AdamState::new(2, 1e-2);
            let mut p = vec![0.3, -0.7];
            for k in 0..50 {
                let g = [2.0 * p[0] + k as f64 * 1e-3, (p[1] - 1.0).sin()];
                s.step(&mut p, &g).unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }

    #[test]
    fn rejects_bad_input() {
        let mut s = AdamState::new(2, 1e-3);
        let mut p = vec![0.0; 2];
        assert!(matches!(s.step(&mut p, &[1.0]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(s.step(&mut p, &[1.0, f64::NAN]), Err(Error::NonFinite { .. })));
        assert_eq!(s.step_count(), 0);
        let mut q = vec![0.0; 3];
        assert!(s.step(&mut q, &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut s = AdamState::new(1, 0.05);
        let mut p = vec![3.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.25)];
            s.step(&mut p, &g).unwrap();
        }
        assert!((p[0] - 1.25).abs() < 1e-3);
        assert_eq!(s.moments().0.len(), 1);
    }
}
