//! First-order optimizers with per-coordinate adaptive step sizes.

use serde::{Deserialize, Serialize};

use crate::error::{Result, WanError};

const ADAGRAD_GUARD: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adagrad,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(n: usize, hyper: AdamHyper) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            hyper,
        }
    }
}

fn check(params: &[f64], grads: &[f64], state_len: usize) -> Result<()> {
    if grads.len() != params.len() || state_len != params.len() {
        return Err(WanError::DimensionMismatch {
            context: "optimizer step",
            expected: params.len(),
            got: grads.len().max(state_len),
        });
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(WanError::non_finite(format!("gradient component {i}"), None));
    }
    Ok(())
}

/// `s += g²; θ -= τ·g/(√s + 1e-10)`.
pub fn adagrad_step(params: &mut [f64], grads: &[f64], accum: &mut [f64], tau: f64) -> Result<()> {
    check(params, grads, accum.len())?;
    for ((p, &g), s) in params.iter_mut().zip(grads).zip(accum.iter_mut()) {
        *s += g * g;
        *p -= tau * g / (s.sqrt() + ADAGRAD_GUARD);
    }
    Ok(())
}

/// Bias-corrected Adam descent step.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, tau: f64) -> Result<()> {
    check(params, grads, state.m.len())?;
    let AdamHyper { beta1, beta2, eps } = state.hyper;
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= tau * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Optimizer state for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Adagrad { accum: Vec<f64> },
    Adam(AdamState),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n: usize) -> Self {
        Self::with_hyper(kind, n, AdamHyper::default())
    }

    /// Like [`Optimizer::new`]; `hyper` is used only by Adam.
    pub fn with_hyper(kind: OptimizerKind, n: usize, hyper: AdamHyper) -> Self {
        match kind {
            OptimizerKind::Adagrad => Self::Adagrad { accum: vec![0.0; n] },
            OptimizerKind::Adam => Self::Adam(AdamState::new(n, hyper)),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            Self::Adagrad { .. } => OptimizerKind::Adagrad,
            Self::Adam(_) => OptimizerKind::Adam,
        }
    }

    /// Descends along `grads`.
    pub fn descend(&mut self, params: &mut [f64], grads: &[f64], tau: f64) -> Result<()> {
        match self {
            Self::Adagrad { accum } => adagrad_step(params, grads, accum, tau),
            Self::Adam(state) => adam_step(params, grads, state, tau),
        }
    }

    /// Ascends along `grads`.
    pub fn ascend(&mut self, params: &mut [f64], grads: &[f64], tau: f64) -> Result<()> {
        let neg: Vec<f64> = grads.iter().map(|g| -g).collect();
        self.descend(params, &neg, tau)
    }
}
