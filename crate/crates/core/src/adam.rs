//! ADAM with bias correction.

use crate::error::{ensure, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Tensor], lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &[f64] {
        &self.first[i]
    }

    pub fn second_moment(&self, i: usize) -> &[f64] {
        &self.second[i]
    }
}

/// One ADAM update of `params` in place. Every parameter needs a gradient.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Option<Tensor>],
    state: &mut AdamState,
) -> Result<()> {
    ensure!(
        params.len() == state.first.len() && grads.len() == params.len(),
        Contract,
        "adam: {} params, {} grads, state for {}",
        params.len(),
        grads.len(),
        state.first.len()
    );
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let g = g
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("adam: parameter {i} has no gradient")))?;
        ensure!(
            g.shape() == p.shape() && state.first[i].len() == p.numel(),
            Contract,
            "adam: parameter {i} shape {:?} vs gradient {:?}",
            p.shape(),
            g.shape()
        );
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let g = g.as_ref().expect("checked above").data();
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        for (j, x) in p.data_mut().iter_mut().enumerate() {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *x -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}
