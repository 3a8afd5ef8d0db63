//! Differentiation engine.
//!
//! Input derivatives of a network come from forward tangent propagation
//! ([`mlp`]); objectives are composed on a scalar [`Tape`] whose leaves are
//! the per-point network values and input gradients. Reversing the tape gives
//! the adjoints of those leaves, and [`BatchEval::backward`] maps them to the
//! parameters, differentiating through the tangent propagation as well.

pub mod mlp;
pub mod tape;

pub use mlp::{forward, BatchEval};
pub use tape::{Tape, Var};

use crate::error::{Result, WanError};
use crate::network::{MlpSpec, ParamVector};

/// Value and input gradient of a network at one point.
#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub value: f64,
    pub input_grad: Vec<f64>,
    batch: BatchEval,
}

impl EvalRecord {
    /// Parameter gradient of `bar_value·u(x) + bar_grad·∇ₓu(x)`.
    pub fn param_gradient(&self, spec: &MlpSpec, params: &ParamVector, bar_value: f64, bar_grad: &[f64]) -> Result<Vec<f64>> {
        self.batch.backward(spec, params, &[bar_value], bar_grad)
    }
}

pub fn eval_with_input_grad(spec: &MlpSpec, params: &ParamVector, x: &[f64]) -> Result<EvalRecord> {
    if x.len() != spec.input_dim {
        return Err(WanError::DimensionMismatch {
            context: "evaluation point",
            expected: spec.input_dim,
            got: x.len(),
        });
    }
    let batch = forward(spec, params, x, true)?;
    Ok(EvalRecord {
        value: batch.value(0),
        input_grad: batch.grad(0).to_vec(),
        batch,
    })
}

/// Tape handles for the outputs of one network over a point batch.
#[derive(Debug, Clone, Copy)]
pub struct NetVars {
    base: u32,
    dim: usize,
    n: usize,
}

impl NetVars {
    /// Registers the outputs of `eval` as leaves of `tape`.
    pub fn register(tape: &mut Tape, eval: &BatchEval) -> Self {
        let d = eval.input_dim();
        let base = tape.len() as u32;
        for p in 0..eval.len() {
            tape.leaf(eval.value(p));
            tape.leaves(eval.grad(p));
        }
        Self { base, dim: d, n: eval.len() }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, p: usize) -> Var {
        debug_assert!(p < self.n);
        Var::from_index(self.base as usize + p * (1 + self.dim))
    }

    pub fn grad(&self, p: usize, i: usize) -> Var {
        debug_assert!(p < self.n && i < self.dim);
        Var::from_index(self.base as usize + p * (1 + self.dim) + 1 + i)
    }

    /// Splits the leaf adjoints back into value and gradient parts.
    pub fn adjoints(&self, adj: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut bar_v = Vec::with_capacity(self.n);
        let mut bar_g = Vec::with_capacity(self.n * self.dim);
        for p in 0..self.n {
            let s = self.base as usize + p * (1 + self.dim);
            bar_v.push(adj[s]);
            bar_g.extend_from_slice(&adj[s + 1..s + 1 + self.dim]);
        }
        (bar_v, bar_g)
    }
}

/// Network whose parameters an objective is differentiated against.
#[derive(Debug, Clone, Copy)]
pub struct NetInput<'a> {
    pub spec: &'a MlpSpec,
    pub params: &'a ParamVector,
    /// Row-major `n × input_dim` points.
    pub points: &'a [f64],
}

/// Value of a tape-composed objective (no gradient bookkeeping).
pub fn objective_value<F>(net: NetInput<'_>, objective: F) -> Result<f64>
where
    F: FnOnce(&mut Tape, &NetVars) -> Result<Var>,
{
    let eval = forward(net.spec, net.params, net.points, false)?;
    let mut tape = Tape::with_capacity(eval.len() * (net.spec.input_dim + 8));
    let vars = NetVars::register(&mut tape, &eval);
    let out = objective(&mut tape, &vars)?;
    Ok(tape.value(out))
}

/// Exact gradient of the discrete objective with respect to `net.params`.
pub fn objective_param_gradient<F>(net: NetInput<'_>, objective: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape, &NetVars) -> Result<Var>,
{
    let eval = forward(net.spec, net.params, net.points, true)?;
    let mut tape = Tape::with_capacity(eval.len() * (net.spec.input_dim + 8));
    let vars = NetVars::register(&mut tape, &eval);
    let out = objective(&mut tape, &vars)?;
    let value = tape.value(out);
    if !value.is_finite() {
        return Err(WanError::non_finite("objective value", None));
    }
    let adj = tape.backward(out);
    let (bar_v, bar_g) = vars.adjoints(&adj);
    let grad = eval.backward(net.spec, net.params, &bar_v, &bar_g)?;
    Ok((value, grad))
}

/// Central-difference gradient: one pair of objective evaluations per parameter.
pub fn finite_difference_oracle<F>(mut objective: F, params: &ParamVector, step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(WanError::config("finite-difference step must be positive"));
    }
    let mut probe = params.clone();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = probe.0[i];
        probe.0[i] = orig + step;
        let plus = objective(&probe)?;
        probe.0[i] = orig - step;
        let minus = objective(&probe)?;
        probe.0[i] = orig;
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}

/// Central differences at `step` and `step / 2` combined by Richardson
/// extrapolation, `(4 D(h/2) − D(h)) / 3`, which cancels the `h²` term.
pub fn richardson_difference_oracle<F>(mut objective: F, params: &ParamVector, step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    let coarse = finite_difference_oracle(&mut objective, params, step)?;
    let fine = finite_difference_oracle(&mut objective, params, 0.5 * step)?;
    Ok(coarse.iter().zip(&fine).map(|(c, f)| (4.0 * f - c) / 3.0).collect())
}
