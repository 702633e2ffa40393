//! Adam with bias correction.

use alloc::vec::Vec;

use crate::autodiff::GradientVector;
use crate::error::{contract, Error, Result};
use crate::math;
use crate::model::ParamVector;

pub const FROM_SCRATCH_LR: f64 = 1e-3;
pub const FINE_TUNE_LR: f64 = 1e-4;

/// Which learning rate the local optimisers start from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    FromScratch,
    FineTune,
}

impl Regime {
    pub fn learning_rate(self) -> f64 {
        match self {
            Regime::FromScratch => FROM_SCRATCH_LR,
            Regime::FineTune => FINE_TUNE_LR,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(param_len: usize, learning_rate: f64) -> Self {
        Self {
            first_moment: alloc::vec![0.0; param_len],
            second_moment: alloc::vec![0.0; param_len],
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Clears moments and step count, keeping hyper-parameters.
    pub fn reset(&mut self) {
        self.first_moment.iter_mut().for_each(|m| *m = 0.0);
        self.second_moment.iter_mut().for_each(|v| *v = 0.0);
        self.step_count = 0;
    }

    /// In-place update used by the training loops.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.first_moment.len() || grad.len() != params.len() {
            return Err(contract!(
                "adam: state {} / params {} / grad {} lengths differ",
                self.first_moment.len(),
                params.len(),
                grad.len()
            ));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric {
                node: alloc::string::String::from("adam"),
                detail: alloc::format!("non-finite gradient at coordinate {i}"),
            });
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - math::powi(self.beta1, t);
        let bias2 = 1.0 - math::powi(self.beta2, t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.eps);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * m_hat / (math::sqrt(v_hat) + eps);
        }
        Ok(())
    }
}

/// One Adam step as a pure function of its inputs.
pub fn adam_step(
    state: &AdamState,
    params: &ParamVector,
    grad: &GradientVector,
) -> Result<(AdamState, ParamVector)> {
    let mut next = state.clone();
    let mut values = params.values().to_vec();
    next.step(&mut values, grad.as_slice())?;
    Ok((next, params.with_values(values)?))
}

/// Fresh optimiser state for the given regime.
pub fn make_optimizer(regime: Regime, param_len: usize) -> Result<AdamState> {
    if param_len == 0 {
        return Err(contract!("optimizer needs at least one parameter"));
    }
    Ok(AdamState::new(param_len, regime.learning_rate()))
}
