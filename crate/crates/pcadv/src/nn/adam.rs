//! Adam optimizer over flat slices and named bundles.

use crate::error::{Error, Result};
use crate::tensor::TensorBundle;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// First/second moment state for a parameter vector of fixed length.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update: `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn update(&mut self, params: &mut [f32], grads: &[f32], lr: f32) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid_argument(format!(
                "adam state holds {} values, got params={} grads={}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        let lr = lr as f64;
        for i in 0..params.len() {
            let g = grads[i] as f64;
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] = (params[i] as f64 - lr * m_hat / (v_hat.sqrt() + EPS)) as f32;
        }
        Ok(())
    }
}

/// Adam over a whole parameter bundle; one shared step counter.
#[derive(Debug, Clone)]
pub struct BundleAdam {
    states: Vec<AdamState>,
}

impl BundleAdam {
    pub fn new(params: &TensorBundle) -> Self {
        let states = params.iter().map(|(_, t)| AdamState::new(t.len())).collect();
        Self { states }
    }

    pub fn update(&mut self, params: &mut TensorBundle, grads: &TensorBundle, lr: f32) -> Result<()> {
        params.check_same_shape(grads)?;
        if params.len() != self.states.len() {
            return Err(Error::invalid_argument("adam state does not match bundle"));
        }
        for (state, ((_, p), (_, g))) in self
            .states
            .iter_mut()
            .zip(params.iter_mut().zip(grads.iter()))
        {
            state.update(p.data_mut(), g.data(), lr)?;
        }
        Ok(())
    }
}

/// Single-call form of the bundle update: advances `state` and writes the
/// updated parameters in place.
pub fn adam_update(
    state: &mut BundleAdam,
    params: &mut TensorBundle,
    grads: &TensorBundle,
    lr: f32,
) -> Result<()> {
    state.update(params, grads, lr)
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = AdamState::new(3);
        let mut p = vec![1.0f32, -2.0, 0.5];
        let before = p.clone();
        s.update(&mut p, &[0.0; 3], 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        // With zero state and constant gradient g, the bias-corrected first
        // step is -lr * g / (|g| + eps) = -lr * sign(g) up to eps.
        let mut s = AdamState::new(2);
        let mut p = vec![0.0f32, 0.0];
        s.update(&mut p, &[3.0, -0.2], 0.01).unwrap();
        assert!((p[0] + 0.01).abs() < 1e-6);
        assert!((p[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn quadratic_bowl_shrinks_after_burn_in() {
        let mut s = AdamState::new(4);
        let mut w = vec![1.0f32, -2.0, 0.7, 1.4];
        let mut norms = Vec::new();
        for _ in 0..100 {
            let g: Vec<f32> = w.iter().map(|&x| 2.0 * x).collect();
            s.update(&mut w, &g, 0.05).unwrap();
            norms.push(w.iter().map(|&x| (x * x) as f64).sum::<f64>().sqrt());
        }
        for pair in norms[10..].windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut s = AdamState::new(2);
        let mut p = vec![0.0f32; 3];
        assert!(s.update(&mut p, &[0.0; 3], 0.1).is_err());
    }
}
