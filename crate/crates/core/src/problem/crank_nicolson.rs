use std::sync::Arc;

use super::{BoundaryCondition, Diffusion, DiffusionValues, PdeProblem};
use crate::error::{Result, WanError};
use crate::field::{BatchField, ScalarField};
use crate::network::Network;

/// Central-difference step for the divergence of the previous flux.
const FLUX_STEP: f64 = 1e-4;

/// A spatial function that supplies values and spatial gradients on batches.
pub trait GradientField: Send + Sync {
    /// Returns `(values, gradients)` with gradients row-major `n × dim`.
    fn value_and_grad(&self, points: &[f64], dim: usize) -> Result<(Vec<f64>, Vec<f64>)>;
}

impl GradientField for ScalarField {
    fn value_and_grad(&self, points: &[f64], dim: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let values = self.eval_batch(points, dim)?;
        let mut grads = Vec::with_capacity(points.len());
        for x in points.chunks_exact(dim) {
            let g = self
                .gradient(x)
                .ok_or_else(|| WanError::config(format!("field {self:?} has no analytic gradient")))?;
            grads.extend(g);
        }
        Ok((values, grads))
    }
}

impl GradientField for Network {
    fn value_and_grad(&self, points: &[f64], dim: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if dim != self.input_dim() {
            return Err(WanError::DimensionMismatch {
                context: "previous time-step network",
                expected: self.input_dim(),
                got: dim,
            });
        }
        let e = self.eval(points)?;
        Ok((e.values().to_vec(), e.grads().to_vec()))
    }
}

/// Right-hand side `u_n + (h/2)(𝓛(t_n; u_n) + f(t_n) + f(t_{n+1}))` where
/// `𝓛u = ∇·(a∇u) − b·∇u − cu − N(u,∇u)`.
struct CrankNicolsonSource {
    problem: PdeProblem,
    prev: Arc<dyn GradientField>,
    t_n: f64,
    h: f64,
}

impl CrankNicolsonSource {
    fn with_time(points: &[f64], d: usize, t: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(points.len() / d * (d + 1));
        for p in points.chunks_exact(d) {
            out.extend_from_slice(p);
            out.push(t);
        }
        out
    }

    /// `∇·(a∇u_n)` by central differences of the analytic flux.
    fn divergence(&self, points: &[f64], d: usize) -> Result<Vec<f64>> {
        let n = points.len() / d;
        let mut shifted = Vec::with_capacity(2 * d * points.len());
        for i in 0..d {
            for sign in [1.0, -1.0] {
                for p in points.chunks_exact(d) {
                    let start = shifted.len();
                    shifted.extend_from_slice(p);
                    shifted[start + i] += sign * FLUX_STEP;
                }
            }
        }
        let (_, grads) = self.prev.value_and_grad(&shifted, d)?;
        let coeffs = self.problem.coefficients(&Self::with_time(&shifted, d, self.t_n))?;
        let mut div = vec![0.0; n];
        for i in 0..d {
            for (s, sign) in [(0usize, 1.0), (1, -1.0)] {
                let block = (2 * i + s) * n;
                for (p, acc) in div.iter_mut().enumerate() {
                    let q = block + p;
                    let g = &grads[q * d..(q + 1) * d];
                    let flux_i = match &coeffs.diffusion {
                        DiffusionValues::Identity => g[i],
                        DiffusionValues::Scalar(a) => a[q] * g[i],
                        DiffusionValues::Matrix(m) => (0..d).map(|j| m[q * d * d + i * d + j] * g[j]).sum(),
                    };
                    *acc += sign * flux_i / (2.0 * FLUX_STEP);
                }
            }
        }
        Ok(div)
    }
}

impl BatchField for CrankNicolsonSource {
    fn label(&self) -> &str {
        "crank_nicolson_rhs"
    }

    fn eval_batch(&self, points: &[f64], dim: usize) -> Result<Vec<f64>> {
        let d = self.problem.spatial_dim();
        if dim != d {
            return Err(WanError::DimensionMismatch {
                context: "Crank–Nicolson source",
                expected: d,
                got: dim,
            });
        }
        let (u, grad) = self.prev.value_and_grad(points, d)?;
        let div = self.divergence(points, d)?;
        let now = self.problem.coefficients(&Self::with_time(points, d, self.t_n))?;
        let f_next = self
            .problem
            .source
            .eval_batch(&Self::with_time(points, d, self.t_n + self.h), d + 1)?;
        let nl = self.problem.nonlinearity;
        let mut out = Vec::with_capacity(u.len());
        for p in 0..u.len() {
            let g = &grad[p * d..(p + 1) * d];
            let mut op = div[p];
            if let Some(b) = &now.drift {
                op -= (0..d).map(|i| b[p * d + i] * g[i]).sum::<f64>();
            }
            if let Some(c) = &now.reaction {
                op -= c[p] * u[p];
            }
            op -= nl.value(u[p], g);
            let v = u[p] + 0.5 * self.h * (op + now.source[p] + f_next[p]);
            if !v.is_finite() {
                return Err(WanError::non_finite("Crank–Nicolson source", None));
            }
            out.push(v);
        }
        Ok(out)
    }
}

/// The elliptic problem for `v = u(·, t_n + h)` given `u(·, t_n) = prev`:
/// `v − (h/2)𝓛(t_{n+1}; v) = u_n + (h/2)(𝓛(t_n; u_n) + f(t_n) + f(t_{n+1}))`,
/// written as `−∇·(a'∇v) + b'·∇v + c'v + N'(v,∇v) = f'` with
/// `a' = (h/2)a`, `b' = (h/2)b`, `c' = 1 + (h/2)c`, `N' = (h/2)N`.
pub fn crank_nicolson_subproblem(
    problem: &PdeProblem,
    prev: Arc<dyn GradientField>,
    t_n: f64,
    h: f64,
) -> Result<PdeProblem> {
    if !problem.is_parabolic() {
        return Err(WanError::config("Crank–Nicolson stepping needs a parabolic problem"));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(WanError::config("time step must be positive"));
    }
    let half = 0.5 * h;
    let t_next = t_n + h;
    let freeze = |f: &ScalarField, scale: f64, offset: f64| f.clone().at_time(t_next).affine(scale, offset);
    let diffusion = match &problem.diffusion {
        Diffusion::Identity => Diffusion::Scalar {
            field: ScalarField::Const(half),
        },
        Diffusion::Scalar { field } => Diffusion::Scalar {
            field: freeze(field, half, 0.0),
        },
        Diffusion::Matrix { entries } => Diffusion::Matrix {
            entries: entries.iter().map(|e| freeze(e, half, 0.0)).collect(),
        },
    };
    let boundary = match &problem.boundary {
        BoundaryCondition::Dirichlet { g } => BoundaryCondition::Dirichlet {
            g: g.clone().at_time(t_next),
        },
        BoundaryCondition::Neumann { flux } => BoundaryCondition::Neumann {
            flux: flux.iter().map(|f| f.clone().at_time(t_next)).collect(),
        },
    };
    let mut nonlinearity = problem.nonlinearity;
    nonlinearity.scale *= half;
    let source = CrankNicolsonSource {
        problem: problem.clone(),
        prev,
        t_n,
        h,
    };
    Ok(PdeProblem {
        name: format!("{}@t={t_next}", problem.name),
        domain: problem.domain.spatial().clone(),
        diffusion,
        drift: problem.drift.iter().map(|b| freeze(b, half, 0.0)).collect(),
        reaction: freeze(&problem.reaction, half, 1.0),
        nonlinearity,
        source: ScalarField::Custom(Arc::new(source)),
        boundary,
        initial: None,
        exact: problem.exact.as_ref().map(|u| u.clone().at_time(t_next)),
        ellipticity: problem.ellipticity * half,
    })
}
