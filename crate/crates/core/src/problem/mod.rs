//! PDE definitions, pointwise weak integrands and strong-form residuals.
//!
//! Problems take the form
//! `u_t − ∇·(a∇u) + b·∇u + cu + N(u,∇u) = f` in Ω (the time derivative only
//! for parabolic problems) with Dirichlet or Neumann data on ∂Ω and initial
//! data `h` at `t = 0`. The weak integrand against a test function φ is
//! `a∇u·∇φ + (b·∇u)φ + cuφ + N(u,∇u)φ − fφ`.

mod crank_nicolson;

use serde::{Deserialize, Serialize};

pub use crank_nicolson::{crank_nicolson_subproblem, GradientField};

use crate::diffcore::EvalRecord;
use crate::error::{Result, WanError};
use crate::field::ScalarField;
use crate::geometry::Domain;
use crate::rng::{stream_rng, Stream};

/// The diffusion coefficient `a`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diffusion {
    Identity,
    /// `a(x)·I`.
    Scalar { field: ScalarField },
    /// Row-major `d × d` entries.
    Matrix { entries: Vec<ScalarField> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearKind {
    None,
    /// `½|∇u|²` over the spatial gradient.
    HalfGradSq,
    /// `−u²`.
    NegSquare,
}

/// Zeroth/first-order nonlinear term `N(u, ∇u) = scale · kind(u, ∇u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nonlinearity {
    pub kind: NonlinearKind,
    pub scale: f64,
}

impl Nonlinearity {
    pub const NONE: Self = Self {
        kind: NonlinearKind::None,
        scale: 1.0,
    };

    pub fn new(kind: NonlinearKind) -> Self {
        Self { kind, scale: 1.0 }
    }

    pub fn is_none(&self) -> bool {
        self.kind == NonlinearKind::None || self.scale == 0.0
    }

    pub fn value(&self, u: f64, grad: &[f64]) -> f64 {
        self.scale
            * match self.kind {
                NonlinearKind::None => 0.0,
                NonlinearKind::HalfGradSq => 0.5 * grad.iter().map(|g| g * g).sum::<f64>(),
                NonlinearKind::NegSquare => -u * u,
            }
    }

    /// `∂N/∂u`.
    pub fn d_u(&self, u: f64) -> f64 {
        match self.kind {
            NonlinearKind::NegSquare => -2.0 * self.scale * u,
            _ => 0.0,
        }
    }

    /// `∂N/∂(∂ᵢu)`.
    pub fn d_grad(&self, grad_i: f64) -> f64 {
        match self.kind {
            NonlinearKind::HalfGradSq => self.scale * grad_i,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryCondition {
    /// `u = g`.
    Dirichlet { g: ScalarField },
    /// `∂u/∂n = F·n` with the flux vector `F` given componentwise.
    Neumann { flux: Vec<ScalarField> },
}

/// A boundary (or initial-) boundary value problem.
///
/// Fields of a parabolic problem are evaluated at `(x, t)` with time last,
/// except the initial data which sees `x` only; spatial closed forms must be
/// lifted with [`ScalarField::spatial`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PdeProblem {
    pub name: String,
    pub domain: Domain,
    pub diffusion: Diffusion,
    /// Drift `b`; empty when absent.
    #[serde(default)]
    pub drift: Vec<ScalarField>,
    #[serde(default = "ScalarField::zero")]
    pub reaction: ScalarField,
    #[serde(default = "no_nonlinearity")]
    pub nonlinearity: Nonlinearity,
    pub source: ScalarField,
    pub boundary: BoundaryCondition,
    /// Initial data `h`, required for parabolic problems.
    #[serde(default)]
    pub initial: Option<ScalarField>,
    #[serde(default)]
    pub exact: Option<ScalarField>,
    /// Assumed ellipticity constant; only spot-checked.
    #[serde(default = "default_ellipticity")]
    pub ellipticity: f64,
}

fn no_nonlinearity() -> Nonlinearity {
    Nonlinearity::NONE
}

fn default_ellipticity() -> f64 {
    1.0
}

impl PdeProblem {
    pub fn spatial_dim(&self) -> usize {
        self.domain.spatial_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.domain.input_dim()
    }

    pub fn is_parabolic(&self) -> bool {
        self.domain.is_time_dependent()
    }

    pub fn is_linear(&self) -> bool {
        self.nonlinearity.is_none()
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        let d = self.spatial_dim();
        let n = self.input_dim();
        match &self.diffusion {
            Diffusion::Identity => {}
            Diffusion::Scalar { field } => field.validate(n)?,
            Diffusion::Matrix { entries } => {
                if entries.len() != d * d {
                    return Err(WanError::config(format!(
                        "diffusion matrix needs {} entries, got {}",
                        d * d,
                        entries.len()
                    )));
                }
                for e in entries {
                    e.validate(n)?;
                }
            }
        }
        if !self.drift.is_empty() && self.drift.len() != d {
            return Err(WanError::config(format!("drift needs {d} components, got {}", self.drift.len())));
        }
        for b in &self.drift {
            b.validate(n)?;
        }
        self.reaction.validate(n)?;
        self.source.validate(n)?;
        match &self.boundary {
            BoundaryCondition::Dirichlet { g } => g.validate(n)?,
            BoundaryCondition::Neumann { flux } => {
                if flux.len() != d {
                    return Err(WanError::config(format!("Neumann flux needs {d} components, got {}", flux.len())));
                }
                for f in flux {
                    f.validate(n)?;
                }
            }
        }
        match (&self.initial, self.is_parabolic()) {
            (Some(h), true) => h.validate(d)?,
            (None, true) => return Err(WanError::config("parabolic problem is missing initial data")),
            (Some(_), false) => return Err(WanError::config("static problem must not carry initial data")),
            (None, false) => {}
        }
        if let Some(u) = &self.exact {
            u.validate(n)?;
        }
        if self.is_parabolic() {
            for f in self.space_time_fields() {
                f.validate_space_time()?;
            }
        }
        if !(self.ellipticity > 0.0) || !self.nonlinearity.scale.is_finite() {
            return Err(WanError::config("ellipticity constant must be positive"));
        }
        Ok(())
    }

    fn space_time_fields(&self) -> Vec<&ScalarField> {
        let mut out: Vec<&ScalarField> = vec![&self.reaction, &self.source];
        match &self.diffusion {
            Diffusion::Identity => {}
            Diffusion::Scalar { field } => out.push(field),
            Diffusion::Matrix { entries } => out.extend(entries),
        }
        out.extend(&self.drift);
        match &self.boundary {
            BoundaryCondition::Dirichlet { g } => out.push(g),
            BoundaryCondition::Neumann { flux } => out.extend(flux),
        }
        out.extend(&self.exact);
        out
    }

    /// Spot-checks `ξᵀa(x)ξ ≥ θ_ell|ξ|²` at `samples` random interior points.
    pub fn check_ellipticity(&self, samples: usize, seed: u64) -> Result<()> {
        let mut rng = stream_rng(seed, Stream::Misc, 0);
        let pts = self.domain.sample_interior(samples, &mut rng);
        let n = self.input_dim();
        let d = self.spatial_dim();
        let theta = self.ellipticity;
        for x in pts.chunks(n) {
            let ok = match &self.diffusion {
                Diffusion::Identity => theta <= 1.0,
                Diffusion::Scalar { field } => field.eval(x)? >= theta,
                Diffusion::Matrix { entries } => {
                    let mut m = Vec::with_capacity(d * d);
                    for e in entries {
                        m.push(e.eval(x)?);
                    }
                    for i in 0..d {
                        m[i * d + i] -= theta;
                    }
                    is_positive_semidefinite(&m, d)
                }
            };
            if !ok {
                return Err(WanError::config(format!(
                    "diffusion is not uniformly elliptic with constant {theta} at {x:?}"
                )));
            }
        }
        Ok(())
    }

    /// Coefficient and source values on a row-major batch of full points.
    pub fn coefficients(&self, points: &[f64]) -> Result<Coefficients> {
        let n = self.input_dim();
        let d = self.spatial_dim();
        let count = points.len() / n;
        let diffusion = match &self.diffusion {
            Diffusion::Identity => DiffusionValues::Identity,
            Diffusion::Scalar { field } => DiffusionValues::Scalar(field.eval_batch(points, n)?),
            Diffusion::Matrix { entries } => {
                let cols: Vec<Vec<f64>> = entries.iter().map(|e| e.eval_batch(points, n)).collect::<Result<_>>()?;
                let mut m = Vec::with_capacity(count * d * d);
                for p in 0..count {
                    m.extend(cols.iter().map(|c| c[p]));
                }
                DiffusionValues::Matrix(m)
            }
        };
        let drift = if self.drift.is_empty() {
            None
        } else {
            let cols: Vec<Vec<f64>> = self.drift.iter().map(|b| b.eval_batch(points, n)).collect::<Result<_>>()?;
            let mut b = Vec::with_capacity(count * d);
            for p in 0..count {
                b.extend(cols.iter().map(|c| c[p]));
            }
            Some(b)
        };
        let reaction = if self.reaction.is_zero() {
            None
        } else {
            Some(self.reaction.eval_batch(points, n)?)
        };
        Ok(Coefficients {
            spatial_dim: d,
            diffusion,
            drift,
            reaction,
            source: self.source.eval_batch(points, n)?,
            nonlinearity: self.nonlinearity,
        })
    }

    /// Boundary data at boundary points with their outward normals.
    pub fn boundary_data(&self, points: &[f64], normals: &[f64]) -> Result<Vec<f64>> {
        let n = self.input_dim();
        match &self.boundary {
            BoundaryCondition::Dirichlet { g } => g.eval_batch(points, n),
            BoundaryCondition::Neumann { flux } => {
                let d = self.spatial_dim();
                if normals.len() != points.len() / n * d {
                    return Err(WanError::config("Neumann data requires one normal per boundary point"));
                }
                let mut out = vec![0.0; points.len() / n];
                for (i, f) in flux.iter().enumerate() {
                    if f.is_zero() {
                        continue;
                    }
                    let vals = f.eval_batch(points, n)?;
                    for (p, v) in vals.iter().enumerate() {
                        out[p] += v * normals[p * d + i];
                    }
                }
                Ok(out)
            }
        }
    }

    /// Initial data at spatial points.
    pub fn initial_data(&self, spatial_points: &[f64]) -> Result<Vec<f64>> {
        let h = self
            .initial
            .as_ref()
            .ok_or_else(|| WanError::config("problem has no initial data"))?;
        h.eval_batch(spatial_points, self.spatial_dim())
    }

    /// `u_t − ∇·(a∇u) + b·∇u + cu + N − f` for the exact solution at `x`.
    ///
    /// Derivatives are exact (hyper-dual); `None` if no closed-form exact
    /// solution or coefficient is available.
    pub fn strong_residual(&self, x: &[f64]) -> Option<f64> {
        let u = self.exact.as_ref()?;
        let d = self.spatial_dim();
        let value = u.eval(x).ok()?;
        let grad = u.gradient(x)?;
        let second = |i: usize, j: usize| u.second(x, i, j);
        let mut div = 0.0;
        match &self.diffusion {
            Diffusion::Identity => {
                for i in 0..d {
                    div += second(i, i)?;
                }
            }
            Diffusion::Scalar { field } => {
                let a = field.eval(x).ok()?;
                for i in 0..d {
                    div += field.partial(x, i)? * grad[i] + a * second(i, i)?;
                }
            }
            Diffusion::Matrix { entries } => {
                for i in 0..d {
                    for j in 0..d {
                        let e = &entries[i * d + j];
                        div += e.partial(x, i)? * grad[j] + e.eval(x).ok()? * second(i, j)?;
                    }
                }
            }
        }
        let mut r = -div;
        if self.is_parabolic() {
            r += grad[d];
        }
        for (i, b) in self.drift.iter().enumerate() {
            r += b.eval(x).ok()? * grad[i];
        }
        r += self.reaction.eval(x).ok()? * value;
        r += self.nonlinearity.value(value, &grad[..d]);
        r -= self.source.eval(x).ok()?;
        Some(r)
    }
}

fn is_positive_semidefinite(m: &[f64], d: usize) -> bool {
    // Cholesky with a small tolerance for the semidefinite boundary.
    let mut l = vec![0.0; d * d];
    let scale = m.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for j in 0..d {
        let mut diag = m[j * d + j];
        for k in 0..j {
            diag -= l[j * d + k] * l[j * d + k];
        }
        if diag < -1e-12 * scale {
            return false;
        }
        let ljj = diag.max(0.0).sqrt();
        l[j * d + j] = ljj;
        for i in j + 1..d {
            let mut v = m[i * d + j];
            for k in 0..j {
                v -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = if ljj > 0.0 { v / ljj } else { 0.0 };
        }
    }
    true
}

#[derive(Debug, Clone)]
pub enum DiffusionValues {
    Identity,
    Scalar(Vec<f64>),
    /// `n × d × d`, row-major per point.
    Matrix(Vec<f64>),
}

/// Coefficients tabulated on a batch.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub spatial_dim: usize,
    pub diffusion: DiffusionValues,
    pub drift: Option<Vec<f64>>,
    pub reaction: Option<Vec<f64>>,
    pub source: Vec<f64>,
    pub nonlinearity: Nonlinearity,
}

/// The integrand at one point and its partial derivatives with respect to
/// `u`, the spatial gradient of `u`, `φ` and the spatial gradient of `φ`.
#[derive(Debug, Clone, Default)]
pub struct IntegrandJet {
    pub value: f64,
    pub d_u: f64,
    pub d_grad_u: Vec<f64>,
    pub d_phi: f64,
    pub d_grad_phi: Vec<f64>,
}

impl IntegrandJet {
    pub fn new(d: usize) -> Self {
        Self {
            d_grad_u: vec![0.0; d],
            d_grad_phi: vec![0.0; d],
            ..Self::default()
        }
    }
}

impl Coefficients {
    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    /// Evaluates the weak integrand at point `p` into `out`. Gradients are
    /// spatial (length `d`); extra trailing entries such as `∂ₜ` are ignored.
    pub fn integrand(&self, p: usize, u: f64, grad_u: &[f64], phi: f64, grad_phi: &[f64], out: &mut IntegrandJet) {
        let d = self.spatial_dim;
        let (gu, gp) = (&grad_u[..d], &grad_phi[..d]);
        // Flux a∇u into d_grad_phi, and aᵀ∇φ into d_grad_u.
        match &self.diffusion {
            DiffusionValues::Identity => {
                out.d_grad_phi.copy_from_slice(gu);
                out.d_grad_u.copy_from_slice(gp);
            }
            DiffusionValues::Scalar(a) => {
                let a = a[p];
                for i in 0..d {
                    out.d_grad_phi[i] = a * gu[i];
                    out.d_grad_u[i] = a * gp[i];
                }
            }
            DiffusionValues::Matrix(m) => {
                let m = &m[p * d * d..(p + 1) * d * d];
                for i in 0..d {
                    let mut flux = 0.0;
                    let mut adj = 0.0;
                    for j in 0..d {
                        flux += m[i * d + j] * gu[j];
                        adj += m[j * d + i] * gp[j];
                    }
                    out.d_grad_phi[i] = flux;
                    out.d_grad_u[i] = adj;
                }
            }
        }
        let mut diffusive = 0.0;
        for i in 0..d {
            diffusive += out.d_grad_phi[i] * gp[i];
        }
        let mut drift = 0.0;
        if let Some(b) = &self.drift {
            let b = &b[p * d..(p + 1) * d];
            for i in 0..d {
                drift += b[i] * gu[i];
                out.d_grad_u[i] += b[i] * phi;
            }
        }
        let c = self.reaction.as_ref().map_or(0.0, |c| c[p]);
        let nl = &self.nonlinearity;
        let n_val = nl.value(u, gu);
        if !nl.is_none() {
            for i in 0..d {
                out.d_grad_u[i] += nl.d_grad(gu[i]) * phi;
            }
        }
        out.d_phi = drift + c * u + n_val - self.source[p];
        out.d_u = (c + nl.d_u(u)) * phi;
        out.value = diffusive + out.d_phi * phi;
    }
}

/// The weak integrand at a single point from network evaluation records.
pub fn weak_integrand(problem: &PdeProblem, x: &[f64], u: &EvalRecord, phi: &EvalRecord) -> Result<f64> {
    if x.len() != problem.input_dim() {
        return Err(WanError::DimensionMismatch {
            context: "integrand point",
            expected: problem.input_dim(),
            got: x.len(),
        });
    }
    let coeffs = problem.coefficients(x)?;
    let mut jet = IntegrandJet::new(problem.spatial_dim());
    coeffs.integrand(0, u.value, &u.input_grad, phi.value, &phi.input_grad, &mut jet);
    if !jet.value.is_finite() {
        return Err(WanError::non_finite("weak integrand", None));
    }
    Ok(jet.value)
}
