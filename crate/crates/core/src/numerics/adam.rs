use serde::{Deserialize, Serialize};

use super::tensor::{Grads, ParamSet, Scalar};
use crate::error::{Error, Result};

/// Adam with bias correction. Moment buffers are allocated lazily per
/// tensor on the first step that touches it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }
}

/// One update of every tensor that has a gradient and `requires_grad`.
/// Tensors without a gradient are left bit-identical.
pub fn adam_step<F: Scalar>(params: &mut ParamSet<F>, grads: &Grads<F>, state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Shape(format!("{} gradients for {} tensors", grads.len(), params.len())));
    }
    if !(0.0..1.0).contains(&state.beta1) || !(0.0..1.0).contains(&state.beta2) {
        return Err(Error::Invalid("Adam betas must lie in [0, 1)".into()));
    }
    if state.m.len() != params.len() {
        state.m = params.tensors.iter().map(|_| Vec::new()).collect();
        state.v = params.tensors.iter().map(|_| Vec::new()).collect();
    }
    for (i, (t, g)) in params.tensors.iter().zip(grads).enumerate() {
        if let Some(g) = g {
            if g.len() != t.numel() {
                return Err(Error::Shape(format!("gradient {i} has {} elements, tensor has {}", g.len(), t.numel())));
            }
        }
    }
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    for (i, (t, g)) in params.tensors.iter_mut().zip(grads).enumerate() {
        let Some(g) = g else { continue };
        if !t.requires_grad {
            continue;
        }
        if state.m[i].is_empty() {
            state.m[i] = vec![0.0; t.numel()];
            state.v[i] = vec![0.0; t.numel()];
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, p) in t.data.iter_mut().enumerate() {
            let gj = g[j].as_f64();
            if gj == 0.0 && m[j] == 0.0 && v[j] == 0.0 {
                continue;
            }
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            let upd = state.lr * mhat / (vhat.sqrt() + state.eps);
            *p = F::from_f64(p.as_f64() - upd);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;

    fn scalar_set(x: f32) -> ParamSet<f32> {
        let mut ps = ParamSet::default();
        ps.push("theta", Tensor::new(vec![1], vec![x]).unwrap());
        ps
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = scalar_set(1.0);
        let mut st = AdamState::new(1e-3);
        adam_step(&mut ps, &vec![Some(vec![1.0])], &mut st).unwrap();
        // m̂ = 1, v̂ = 1 -> update = lr / (1 + eps)
        assert!((ps.tensors[0].data[0] - 0.999).abs() < 1e-6);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params_untouched() {
        let mut ps = scalar_set(0.25);
        let before = ps.clone();
        let mut st = AdamState::new(1e-3);
        adam_step(&mut ps, &vec![Some(vec![0.0])], &mut st).unwrap();
        assert_eq!(ps, before);
        adam_step(&mut ps, &vec![Some(vec![0.0])], &mut st).unwrap();
        assert_eq!(ps, before);
        assert_eq!(st.t, 2);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut ps = scalar_set(1.0);
        let mut st = AdamState::new(1e-3);
        assert!(adam_step(&mut ps, &vec![Some(vec![1.0, 2.0])], &mut st).is_err());
        assert!(adam_step(&mut ps, &vec![], &mut st).is_err());
    }

    #[test]
    fn frozen_tensor_unchanged() {
        let mut ps = scalar_set(1.0);
        ps.tensors[0].requires_grad = false;
        let mut st = AdamState::new(1e-1);
        adam_step(&mut ps, &vec![Some(vec![5.0])], &mut st).unwrap();
        assert_eq!(ps.tensors[0].data[0], 1.0);
    }
}
