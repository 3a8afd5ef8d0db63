//! Monte Carlo estimates of the weak pairing and the training losses.
//!
//! Every loss is composed on a [`Tape`] whose leaves are the network values
//! and input gradients at the batch points, so the same code yields loss
//! values and exact parameter gradients of the discrete estimators.

use serde::{Deserialize, Serialize};

use crate::diffcore::{forward, BatchEval, NetVars, Tape, Var};
use crate::error::{Result, WanError};
use crate::geometry::{CollocationBatch, Domain};
use crate::network::{sigmoid, softplus, MlpSpec, Network};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::{stream_key, stream_rng, Stream};
use crate::problem::{BoundaryCondition, Coefficients, IntegrandJet, PdeProblem};

/// Floor applied to the squared pairing before taking its logarithm.
pub const PAIRING_SQ_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntForm {
    /// `ln|P|² − ln Q`.
    Log,
    /// `|P|²/Q`.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorForm {
    Squared,
    Absolute,
}

/// Boundary-vanishing factor `w` of the test function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryWeight {
    /// Signed distance to the spatial boundary.
    Analytic { domain: Domain },
    /// `softplus(net(x))` of a pre-trained spatial network.
    Learned { net: Network },
}

impl BoundaryWeight {
    /// Values and gradients (row-major `n × input_dim`, zero time component)
    /// at full points of width `input_dim`.
    pub fn eval(&self, points: &[f64], input_dim: usize, spatial_dim: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = points.len() / input_dim;
        let mut w = Vec::with_capacity(n);
        let mut grad = vec![0.0; n * input_dim];
        match self {
            Self::Analytic { domain } => {
                let spatial = domain.spatial();
                for (p, x) in points.chunks_exact(input_dim).enumerate() {
                    w.push(spatial.signed_distance(x));
                    let g = spatial.signed_distance_grad(x);
                    grad[p * input_dim..p * input_dim + spatial_dim].copy_from_slice(&g[..spatial_dim]);
                }
            }
            Self::Learned { net } => {
                if net.input_dim() != spatial_dim {
                    return Err(WanError::DimensionMismatch {
                        context: "learned boundary weight",
                        expected: spatial_dim,
                        got: net.input_dim(),
                    });
                }
                let mut spatial = Vec::with_capacity(n * spatial_dim);
                for x in points.chunks_exact(input_dim) {
                    spatial.extend_from_slice(&x[..spatial_dim]);
                }
                let e = net.eval(&spatial)?;
                for p in 0..n {
                    let z = e.value(p);
                    w.push(softplus(z));
                    let s = sigmoid(z);
                    for (i, g) in e.grad(p).iter().enumerate() {
                        grad[p * input_dim + i] = s * g;
                    }
                }
            }
        }
        Ok((w, grad))
    }
}

/// `φ = w·v` with a fixed weight `w` and trainable network `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub weight: BoundaryWeight,
    pub v: Network,
}

impl TestFunction {
    pub fn analytic(domain: &Domain, v: Network) -> Self {
        Self {
            weight: BoundaryWeight::Analytic { domain: domain.clone() },
            v,
        }
    }

    /// Values and input gradients of `φ` at row-major points.
    pub fn eval(&self, points: &[f64], spatial_dim: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let dim = self.v.input_dim();
        let (w, gw) = self.weight.eval(points, dim, spatial_dim)?;
        let e = self.v.eval(points)?;
        let mut phi = Vec::with_capacity(w.len());
        let mut grad = Vec::with_capacity(w.len() * dim);
        for p in 0..w.len() {
            let v = e.value(p);
            phi.push(w[p] * v);
            for (i, gv) in e.grad(p).iter().enumerate() {
                grad.push(v * gw[p * dim + i] + w[p] * gv);
            }
        }
        Ok((phi, grad))
    }
}

/// Loss weights and forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSettings {
    pub alpha: f64,
    pub gamma: f64,
    /// Form of `L_int` in the θ-descent objective.
    pub theta_form: IntForm,
    pub boundary_form: ErrorForm,
}

impl LossSettings {
    pub fn validate(&self, parabolic: bool) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(WanError::config("boundary weight α must be positive"));
        }
        if parabolic && (!(self.gamma > 0.0) || !self.gamma.is_finite()) {
            return Err(WanError::config("initial weight γ must be positive for parabolic problems"));
        }
        Ok(())
    }
}

/// All loss components for one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pairing: f64,
    pub test_norm: f64,
    pub l_int: f64,
    pub l_bdry: f64,
    pub l_init: f64,
    pub total: f64,
}

/// Batch data that stays fixed while the networks change.
#[derive(Debug, Clone)]
pub struct LossContext<'a> {
    problem: &'a PdeProblem,
    n_interior: usize,
    n_boundary: usize,
    n_initial: usize,
    input_dim: usize,
    spatial_dim: usize,
    /// Rows evaluated by `u`: interior, boundary, initial, then `(x, T)`.
    u_points: Vec<f64>,
    /// Rows evaluated by `v`: interior, then `(x, T)` and `(x, 0)`.
    v_points: Vec<f64>,
    coeffs: Coefficients,
    w: Vec<f64>,
    grad_w: Vec<f64>,
    boundary_data: Vec<f64>,
    normals: Vec<f64>,
    initial_data: Vec<f64>,
    terminal_h: Vec<f64>,
    volume: f64,
    t_end: Option<f64>,
}

/// Tape variables of the interior estimators.
#[derive(Debug, Clone)]
pub struct InteriorVars {
    pub pairing: Var,
    pub test_norm: Var,
    /// Per-point terms whose mean is the pairing estimate.
    pub contributions: Vec<Var>,
}

impl<'a> LossContext<'a> {
    pub fn new(problem: &'a PdeProblem, batch: &CollocationBatch, weight: &BoundaryWeight) -> Result<Self> {
        let input_dim = problem.input_dim();
        let spatial_dim = problem.spatial_dim();
        if batch.input_dim != input_dim {
            return Err(WanError::DimensionMismatch {
                context: "collocation batch",
                expected: input_dim,
                got: batch.input_dim,
            });
        }
        let n_interior = batch.n_interior();
        if n_interior == 0 {
            return Err(WanError::config("interior batch is empty"));
        }
        let n_boundary = batch.n_boundary();
        let n_initial = batch.n_initial();
        let t_end = problem.domain.t_end();
        let mut u_points = Vec::with_capacity((2 * n_interior + n_boundary + n_initial) * input_dim);
        u_points.extend_from_slice(&batch.interior);
        u_points.extend_from_slice(&batch.boundary);
        u_points.extend_from_slice(&batch.initial);
        let mut v_points = batch.interior.clone();
        let mut terminal_h = Vec::new();
        if let Some(t) = t_end {
            let mut at_end = Vec::with_capacity(batch.interior.len());
            let mut at_start = Vec::with_capacity(batch.interior.len());
            let mut spatial = Vec::with_capacity(n_interior * spatial_dim);
            for x in batch.interior.chunks_exact(input_dim) {
                spatial.extend_from_slice(&x[..spatial_dim]);
                at_end.extend_from_slice(&x[..spatial_dim]);
                at_end.push(t);
                at_start.extend_from_slice(&x[..spatial_dim]);
                at_start.push(0.0);
            }
            terminal_h = problem.initial_data(&spatial)?;
            u_points.extend_from_slice(&at_end);
            v_points.extend_from_slice(&at_end);
            v_points.extend_from_slice(&at_start);
        }
        let initial_data = if n_initial > 0 {
            let spatial: Vec<f64> = batch
                .initial
                .chunks_exact(input_dim)
                .flat_map(|x| x[..spatial_dim].iter().copied())
                .collect();
            problem.initial_data(&spatial)?
        } else {
            Vec::new()
        };
        let (w, grad_w) = weight.eval(&batch.interior, input_dim, spatial_dim)?;
        Ok(Self {
            problem,
            n_interior,
            n_boundary,
            n_initial,
            input_dim,
            spatial_dim,
            u_points,
            v_points,
            coeffs: problem.coefficients(&batch.interior)?,
            w,
            grad_w,
            boundary_data: problem.boundary_data(&batch.boundary, &batch.normals)?,
            normals: batch.normals.clone(),
            initial_data,
            terminal_h,
            volume: batch.volume,
            t_end,
        })
    }

    pub fn problem(&self) -> &PdeProblem {
        self.problem
    }

    pub fn u_points(&self) -> &[f64] {
        &self.u_points
    }

    pub fn v_points(&self) -> &[f64] {
        &self.v_points
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    fn check_evals(&self, u: &NetVars, v: &NetVars) -> Result<()> {
        let expect_u = self.u_points.len() / self.input_dim;
        let expect_v = self.v_points.len() / self.input_dim;
        if u.len() != expect_u || u.dim() != self.input_dim {
            return Err(WanError::DimensionMismatch {
                context: "solution network rows",
                expected: expect_u,
                got: u.len(),
            });
        }
        if v.len() != expect_v || v.dim() != self.input_dim {
            return Err(WanError::DimensionMismatch {
                context: "test network rows",
                expected: expect_v,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Composes the pairing and test-norm estimators.
    pub fn interior(&self, tape: &mut Tape, u: &NetVars, v: &NetVars) -> Result<InteriorVars> {
        self.check_evals(u, v)?;
        let (n, d, dim) = (self.n_interior, self.spatial_dim, self.input_dim);
        let space_time = self.t_end.unwrap_or(1.0);
        let scale_int = self.volume * space_time;
        let terminal_row = n + self.n_boundary + self.n_initial;
        let mut jet = IntegrandJet::new(d);
        let mut gu = vec![0.0; d];
        let mut gv = vec![0.0; dim];
        let mut gphi = vec![0.0; d];
        let mut parents: Vec<(Var, f64)> = Vec::with_capacity(2 * dim + 6);
        let mut contributions = Vec::with_capacity(n);
        let mut squares = Vec::with_capacity(n);
        for j in 0..n {
            let w = self.w[j];
            let gw = &self.grad_w[j * dim..(j + 1) * dim];
            let uj = tape.value(u.value(j));
            for i in 0..d {
                gu[i] = tape.value(u.grad(j, i));
            }
            let vj = tape.value(v.value(j));
            for (i, g) in gv.iter_mut().enumerate() {
                *g = tape.value(v.grad(j, i));
            }
            let phi = w * vj;
            for i in 0..d {
                gphi[i] = vj * gw[i] + w * gv[i];
            }
            self.coeffs.integrand(j, uj, &gu, phi, &gphi, &mut jet);

            parents.clear();
            let mut value = scale_int * jet.value;
            let mut d_v = jet.d_phi * w;
            for i in 0..d {
                d_v += jet.d_grad_phi[i] * gw[i];
            }
            let mut d_u = jet.d_u;
            parents.push((v.value(j), scale_int * d_v));
            for i in 0..d {
                parents.push((u.grad(j, i), scale_int * jet.d_grad_u[i]));
                parents.push((v.grad(j, i), scale_int * jet.d_grad_phi[i] * w));
            }
            if self.t_end.is_some() {
                // −∫∫ u ∂ₜφ and ∫ u(x,T)φ(x,T) − h(x)φ(x,0).
                let dt_v = gv[d];
                value -= scale_int * uj * w * dt_v;
                d_u -= w * dt_v;
                parents.push((v.grad(j, d), -scale_int * uj * w));
                let u_end = tape.value(u.value(terminal_row + j));
                let v_end = tape.value(v.value(n + j));
                let v_start = tape.value(v.value(2 * n + j));
                let h = self.terminal_h[j];
                value += self.volume * (u_end * w * v_end - h * w * v_start);
                parents.push((u.value(terminal_row + j), self.volume * w * v_end));
                parents.push((v.value(n + j), self.volume * u_end * w));
                parents.push((v.value(2 * n + j), -self.volume * h * w));
            }
            parents.push((u.value(j), scale_int * d_u));
            contributions.push(tape.custom(value, &parents));
            squares.push(tape.custom(phi * phi, &[(v.value(j), 2.0 * w * w * vj)]));
        }
        let total = tape.sum(&contributions);
        let pairing = tape.scale(total, 1.0 / n as f64);
        let sq = tape.sum(&squares);
        let test_norm = tape.scale(sq, scale_int / n as f64);
        Ok(InteriorVars {
            pairing,
            test_norm,
            contributions,
        })
    }

    /// Boundary mismatch loss, `None` without boundary points.
    pub fn boundary(&self, tape: &mut Tape, u: &NetVars, form: ErrorForm) -> Option<Var> {
        if self.n_boundary == 0 {
            return None;
        }
        let d = self.spatial_dim;
        let mut terms = Vec::with_capacity(self.n_boundary);
        let mut parents = Vec::with_capacity(d);
        for b in 0..self.n_boundary {
            let row = self.n_interior + b;
            let g = self.boundary_data[b];
            let (e, dirichlet) = match self.problem.boundary {
                BoundaryCondition::Dirichlet { .. } => (tape.value(u.value(row)) - g, true),
                BoundaryCondition::Neumann { .. } => {
                    let n = &self.normals[b * d..(b + 1) * d];
                    let flux: f64 = (0..d).map(|i| n[i] * tape.value(u.grad(row, i))).sum();
                    (flux - g, false)
                }
            };
            let (value, slope) = match form {
                ErrorForm::Squared => (e * e, 2.0 * e),
                ErrorForm::Absolute => (e.abs(), if e > 0.0 { 1.0 } else if e < 0.0 { -1.0 } else { 0.0 }),
            };
            parents.clear();
            if dirichlet {
                parents.push((u.value(row), slope));
            } else {
                let n = &self.normals[b * d..(b + 1) * d];
                for i in 0..d {
                    if n[i] != 0.0 {
                        parents.push((u.grad(row, i), slope * n[i]));
                    }
                }
            }
            terms.push(tape.custom(value, &parents));
        }
        let s = tape.sum(&terms);
        Some(tape.scale(s, 1.0 / self.n_boundary as f64))
    }

    /// Initial-condition loss, `None` for static problems.
    pub fn initial(&self, tape: &mut Tape, u: &NetVars) -> Option<Var> {
        if self.n_initial == 0 {
            return None;
        }
        let base = self.n_interior + self.n_boundary;
        let terms: Vec<Var> = (0..self.n_initial)
            .map(|a| {
                let e = tape.value(u.value(base + a)) - self.initial_data[a];
                tape.custom(e * e, &[(u.value(base + a), 2.0 * e)])
            })
            .collect();
        let s = tape.sum(&terms);
        Some(tape.scale(s, 1.0 / self.n_initial as f64))
    }

    /// Registers both evaluations on a fresh tape.
    fn tape_for(&self, u: &BatchEval, v: &BatchEval) -> (Tape, NetVars, NetVars) {
        let mut tape = Tape::with_capacity((u.len() + v.len()) * (self.input_dim + 1) + 3 * self.n_interior + self.n_boundary + 16);
        let uv = NetVars::register(&mut tape, u);
        let vv = NetVars::register(&mut tape, v);
        (tape, uv, vv)
    }

    /// All loss components from network evaluations on the context rows.
    pub fn breakdown(&self, u: &BatchEval, v: &BatchEval, settings: &LossSettings) -> Result<LossBreakdown> {
        let (mut tape, uv, vv) = self.tape_for(u, v);
        let int = self.interior(&mut tape, &uv, &vv)?;
        let l_int = int_loss(&mut tape, int.pairing, int.test_norm, IntForm::Log)?;
        let l_bdry = self.boundary(&mut tape, &uv, settings.boundary_form).map_or(0.0, |b| tape.value(b));
        let l_init = self.initial(&mut tape, &uv).map_or(0.0, |b| tape.value(b));
        let l_int = tape.value(l_int);
        Ok(LossBreakdown {
            pairing: tape.value(int.pairing),
            test_norm: tape.value(int.test_norm),
            l_int,
            l_bdry,
            l_init,
            total: l_int + settings.alpha * l_bdry + settings.gamma * l_init,
        })
    }

    /// Per-point pairing contributions (their mean is the pairing estimate).
    pub fn pairing_contributions(&self, u: &BatchEval, v: &BatchEval) -> Result<Vec<f64>> {
        let (mut tape, uv, vv) = self.tape_for(u, v);
        let int = self.interior(&mut tape, &uv, &vv)?;
        Ok(int.contributions.iter().map(|&c| tape.value(c)).collect())
    }

    /// Value and θ-gradient of `L_int(θ-form) + α·L_bdry + γ·L_init`.
    pub fn theta_gradient(&self, u: &Network, v: &BatchEval, settings: &LossSettings) -> Result<(f64, Vec<f64>)> {
        let ue = forward(&u.spec, &u.params, &self.u_points, true)?;
        let (mut tape, uv, vv) = self.tape_for(&ue, v);
        let int = self.interior(&mut tape, &uv, &vv)?;
        let mut total = int_loss(&mut tape, int.pairing, int.test_norm, settings.theta_form)?;
        if let Some(b) = self.boundary(&mut tape, &uv, settings.boundary_form) {
            let wb = tape.scale(b, settings.alpha);
            total = tape.add(total, wb);
        }
        if let Some(i) = self.initial(&mut tape, &uv) {
            let wi = tape.scale(i, settings.gamma);
            total = tape.add(total, wi);
        }
        let value = tape.value(total);
        if !value.is_finite() {
            return Err(WanError::non_finite("θ loss", None));
        }
        let adj = tape.backward(total);
        let (bv, bg) = uv.adjoints(&adj);
        Ok((value, ue.backward(&u.spec, &u.params, &bv, &bg)?))
    }

    /// Value and η-gradient of the logarithmic `L_int` (the ascent objective).
    pub fn eta_gradient(&self, u: &BatchEval, v: &Network) -> Result<(f64, Vec<f64>)> {
        let ve = forward(&v.spec, &v.params, &self.v_points, true)?;
        let (mut tape, uv, vv) = self.tape_for(u, &ve);
        let int = self.interior(&mut tape, &uv, &vv)?;
        let l = int_loss(&mut tape, int.pairing, int.test_norm, IntForm::Log)?;
        let value = tape.value(l);
        if !value.is_finite() {
            return Err(WanError::non_finite("η loss", None));
        }
        let adj = tape.backward(l);
        let (bv, bg) = vv.adjoints(&adj);
        Ok((value, ve.backward(&v.spec, &v.params, &bv, &bg)?))
    }

    pub fn eval_u(&self, u: &Network) -> Result<BatchEval> {
        u.eval(&self.u_points)
    }

    pub fn eval_v(&self, v: &Network) -> Result<BatchEval> {
        v.eval(&self.v_points)
    }
}

/// `L_int` from the pairing and test-norm variables.
pub fn int_loss(tape: &mut Tape, pairing: Var, test_norm: Var, form: IntForm) -> Result<Var> {
    let q = tape.value(test_norm);
    if !(q > 0.0) {
        return Err(WanError::DegenerateTestFunction(q));
    }
    let p2 = tape.square(pairing);
    Ok(match form {
        IntForm::Direct => tape.div(p2, test_norm),
        IntForm::Log => {
            let floored = tape.floor_at(p2, PAIRING_SQ_FLOOR);
            let a = tape.ln(floored, "squared pairing")?;
            let b = tape.ln(test_norm, "test norm")?;
            tape.sub(a, b)
        }
    })
}

fn evals(ctx: &LossContext<'_>, u: &Network, test: &TestFunction) -> Result<(BatchEval, BatchEval)> {
    Ok((ctx.eval_u(u)?, ctx.eval_v(&test.v)?))
}

/// Monte Carlo estimate of `⟨A[u], φ⟩`.
pub fn estimate_pairing(batch: &CollocationBatch, u: &Network, test: &TestFunction, problem: &PdeProblem) -> Result<f64> {
    let ctx = LossContext::new(problem, batch, &test.weight)?;
    let (ue, ve) = evals(&ctx, u, test)?;
    let c = ctx.pairing_contributions(&ue, &ve)?;
    Ok(c.iter().sum::<f64>() / c.len() as f64)
}

/// The spatial-integral terms of the space-time pairing:
/// `(terminal, time-derivative, spatial)`.
pub fn spacetime_weak_terms(problem: &PdeProblem, batch: &CollocationBatch, u: &Network, test: &TestFunction) -> Result<(f64, f64, f64)> {
    let t = problem
        .domain
        .t_end()
        .ok_or_else(|| WanError::config("space-time terms need a time horizon"))?;
    if problem.initial.is_none() {
        return Err(WanError::config("space-time terms need initial data"));
    }
    let d = problem.spatial_dim();
    let dim = d + 1;
    let n = batch.n_interior();
    let (uv, ug) = {
        let e = u.eval(&batch.interior)?;
        (e.values().to_vec(), e.grads().to_vec())
    };
    let (phi, gphi) = test.eval(&batch.interior, d)?;
    let mut spatial = Vec::with_capacity(n * d);
    let mut at_end = Vec::with_capacity(n * dim);
    let mut at_start = Vec::with_capacity(n * dim);
    for x in batch.interior.chunks_exact(dim) {
        spatial.extend_from_slice(&x[..d]);
        at_end.extend_from_slice(&x[..d]);
        at_end.push(t);
        at_start.extend_from_slice(&x[..d]);
        at_start.push(0.0);
    }
    let h = problem.initial_data(&spatial)?;
    let u_end = u.values(&at_end)?;
    let (phi_end, _) = test.eval(&at_end, d)?;
    let (phi_start, _) = test.eval(&at_start, d)?;
    let coeffs = problem.coefficients(&batch.interior)?;
    let mut jet = IntegrandJet::new(d);
    let (mut terminal, mut time, mut space) = (0.0, 0.0, 0.0);
    for j in 0..n {
        terminal += u_end[j] * phi_end[j] - h[j] * phi_start[j];
        time -= uv[j] * gphi[j * dim + d];
        coeffs.integrand(j, uv[j], &ug[j * dim..(j + 1) * dim], phi[j], &gphi[j * dim..(j + 1) * dim], &mut jet);
        space += jet.value;
    }
    let v = batch.volume;
    let nf = n as f64;
    Ok((v * terminal / nf, v * t * time / nf, v * t * space / nf))
}

/// `L_int` in the requested form.
pub fn loss_int(batch: &CollocationBatch, u: &Network, test: &TestFunction, problem: &PdeProblem, form: IntForm) -> Result<f64> {
    let ctx = LossContext::new(problem, batch, &test.weight)?;
    let (ue, ve) = evals(&ctx, u, test)?;
    let (mut tape, uv, vv) = ctx.tape_for(&ue, &ve);
    let int = ctx.interior(&mut tape, &uv, &vv)?;
    let l = int_loss(&mut tape, int.pairing, int.test_norm, form)?;
    Ok(tape.value(l))
}

/// Mean boundary mismatch `(1/N_b) Σ e(x_b)`.
pub fn loss_bdry(points: &[f64], normals: &[f64], u: &Network, problem: &PdeProblem, form: ErrorForm) -> Result<f64> {
    let dim = problem.input_dim();
    let d = problem.spatial_dim();
    let n = points.len() / dim;
    if n == 0 {
        return Ok(0.0);
    }
    if matches!(problem.boundary, BoundaryCondition::Neumann { .. }) && normals.len() != n * d {
        return Err(WanError::config("Neumann boundary loss requires one normal per point"));
    }
    let g = problem.boundary_data(points, normals)?;
    let e = u.eval(points)?;
    let mut sum = 0.0;
    for b in 0..n {
        let mismatch = match problem.boundary {
            BoundaryCondition::Dirichlet { .. } => e.value(b) - g[b],
            BoundaryCondition::Neumann { .. } => {
                (0..d).map(|i| normals[b * d + i] * e.grad(b)[i]).sum::<f64>() - g[b]
            }
        };
        sum += match form {
            ErrorForm::Squared => mismatch * mismatch,
            ErrorForm::Absolute => mismatch.abs(),
        };
    }
    Ok(sum / n as f64)
}

/// Mean squared initial mismatch over points `(x_a, 0)`.
pub fn loss_init(initial_points: &[f64], u: &Network, problem: &PdeProblem) -> Result<f64> {
    if !problem.is_parabolic() {
        return Err(WanError::config("initial loss is only defined for parabolic problems"));
    }
    let dim = problem.input_dim();
    let d = problem.spatial_dim();
    let n = initial_points.len() / dim;
    if n == 0 {
        return Ok(0.0);
    }
    let spatial: Vec<f64> = initial_points
        .chunks_exact(dim)
        .flat_map(|x| x[..d].iter().copied())
        .collect();
    let h = problem.initial_data(&spatial)?;
    let u0 = u.values(initial_points)?;
    Ok(u0.iter().zip(&h).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64)
}

/// All loss components; `L_int` is reported in logarithmic form.
pub fn total_loss(
    batch: &CollocationBatch,
    u: &Network,
    test: &TestFunction,
    problem: &PdeProblem,
    settings: &LossSettings,
) -> Result<LossBreakdown> {
    settings.validate(problem.is_parabolic())?;
    let ctx = LossContext::new(problem, batch, &test.weight)?;
    let (ue, ve) = evals(&ctx, u, test)?;
    ctx.breakdown(&ue, &ve, settings)
}

/// Settings for fitting a learned boundary weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    /// Weight `ε` of the interior log-barrier.
    pub epsilon: f64,
    pub iterations: usize,
    /// Adam step size.
    pub tau: f64,
    pub n_interior: usize,
    pub n_boundary: usize,
    pub seed: u64,
}

/// Fits `w = softplus(net)` by minimizing `Σ|w(x_b)| − ε Σ ln w(x_r)` with
/// Adam, on a fresh batch each iteration. Returns the weight and the loss
/// after every iteration.
pub fn pretrain_w(domain: &Domain, spec: MlpSpec, cfg: &PretrainConfig) -> Result<(BoundaryWeight, Vec<f64>)> {
    if !(cfg.epsilon > 0.0) {
        return Err(WanError::config("pre-training ε must be positive"));
    }
    let spatial = domain.spatial();
    if spec.input_dim != spatial.spatial_dim() {
        return Err(WanError::DimensionMismatch {
            context: "boundary weight network input",
            expected: spatial.spatial_dim(),
            got: spec.input_dim,
        });
    }
    let mut net = Network::init(spec, stream_key(cfg.seed, Stream::Pretrain, u64::MAX));
    let mut opt = Optimizer::new(OptimizerKind::Adam, net.params.len());
    let mut history = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let mut rng = stream_rng(cfg.seed, Stream::Pretrain, it as u64);
        let (boundary, _) = spatial.sample_boundary(cfg.n_boundary, &mut rng)?;
        let interior = spatial.sample_interior(cfg.n_interior, &mut rng);
        let n_b = boundary.len() / spatial.spatial_dim();
        let mut points = boundary;
        points.extend_from_slice(&interior);
        let e = forward(&net.spec, &net.params, &points, true)?;
        let mut loss = 0.0;
        let mut bar_v = Vec::with_capacity(e.len());
        for p in 0..e.len() {
            let z = e.value(p);
            let w = softplus(z);
            if p < n_b {
                loss += w;
                bar_v.push(sigmoid(z));
            } else {
                loss -= cfg.epsilon * w.ln();
                bar_v.push(-cfg.epsilon * sigmoid(z) / w);
            }
        }
        if !loss.is_finite() {
            return Err(WanError::non_finite("boundary weight pre-training loss", None));
        }
        let bar_g = vec![0.0; e.len() * e.input_dim()];
        let grad = e.backward(&net.spec, &net.params, &bar_v, &bar_g)?;
        opt.descend(&mut net.params.0, &grad, cfg.tau)?;
        history.push(loss);
    }
    Ok((BoundaryWeight::Learned { net }, history))
}

#[cfg(test)]
mod tests;
