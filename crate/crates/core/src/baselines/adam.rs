use serde::{Deserialize, Serialize};

/// Moment buffers and hyperparameters for one flat parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn byte_size(&self) -> usize {
        8 * (self.m.len() + self.v.len())
    }
}

/// Bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2, 1e-3);
        for _ in 0..5 {
            adam_step(&mut p, &[0.0, 0.0], &mut s);
        }
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![0.0, 0.0, 0.0];
        let mut s = AdamState::new(3, 1e-3);
        adam_step(&mut p, &[0.5, -3.0, 1e4], &mut s);
        // m̂ = g and v̂ = g², so the step is lr·g/(|g| + ε)
        for (v, g) in p.iter().zip([0.5f64, -3.0, 1e4]) {
            assert!((v + 1e-3 * g.signum()).abs() < 1e-10);
        }
        assert!(s.v.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn deterministic_for_identical_inputs() {
        let run = || {
            let mut p = vec![0.3, 0.1];
            let mut s = AdamState::new(2, 1e-2);
            for k in 0..10 {
                adam_step(&mut p, &[k as f64 * 0.1, -0.2], &mut s);
            }
            p
        };
        assert_eq!(run(), run());
    }
}
