//! Benchmark problems with their published hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Result, WanError};
use crate::field::ScalarField;
use crate::geometry::Domain;
use crate::network::{default_phi_spec, default_u_spec, default_u_spec_with, Activation, MlpSpec};
use crate::objective::{ErrorForm, IntForm};
use crate::optim::{AdamHyper, OptimizerKind};
use crate::problem::{BoundaryCondition, Diffusion, NonlinearKind, Nonlinearity, PdeProblem};
use crate::trainer::TrainConfig;

/// Which training loop solves a problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Algorithm {
    Static,
    /// Crank–Nicolson with `steps` static solves; iteration counts are per step.
    SemiDiscrete { steps: usize },
    SpaceTime,
}

#[derive(Debug, Clone)]
pub struct LibraryEntry {
    pub name: String,
    pub problem: PdeProblem,
    pub algorithm: Algorithm,
    pub config: TrainConfig,
    pub u_spec: MlpSpec,
    pub phi_spec: MlpSpec,
    /// Published relative error, if one was reported.
    pub reported_error: Option<f64>,
    /// The boundary weight as printed (the config holds its evaluated value).
    pub alpha_printed: &'static str,
}

fn named(n: &str) -> ScalarField {
    ScalarField::named(n).expect("catalog entry")
}

fn base_problem(name: &str, domain: Domain, source: ScalarField, g: ScalarField, exact: ScalarField) -> PdeProblem {
    PdeProblem {
        name: name.into(),
        domain,
        diffusion: Diffusion::Identity,
        drift: vec![],
        reaction: ScalarField::zero(),
        nonlinearity: Nonlinearity::NONE,
        source,
        boundary: BoundaryCondition::Dirichlet { g },
        initial: None,
        exact: Some(exact),
        ellipticity: 1.0,
    }
}

struct Hyper {
    k_u: usize,
    k_phi: usize,
    tau_theta: f64,
    tau_eta: f64,
    n_interior: usize,
    n_boundary: usize,
    alpha: f64,
    iterations: usize,
}

fn config(h: Hyper) -> TrainConfig {
    TrainConfig {
        k_u: h.k_u,
        k_phi: h.k_phi,
        tau_theta: h.tau_theta,
        tau_eta: h.tau_eta,
        n_interior: h.n_interior,
        n_boundary: h.n_boundary,
        n_initial: 0,
        alpha: h.alpha,
        gamma: 0.0,
        max_iterations: h.iterations,
        resample_every: 1,
        u_optimizer: OptimizerKind::Adagrad,
        phi_optimizer: OptimizerKind::Adagrad,
        adam: AdamHyper::default(),
        seed: 0,
        log_every: 100,
        theta_form: IntForm::Direct,
        boundary_form: ErrorForm::Squared,
        target_error: None,
        eval_seed: None,
    }
}

/// Settings shared by the high-dimensional nonlinear benchmark and the
/// problems that reuse it.
fn nonl_hyper(d: usize, alpha_per_point: f64) -> Hyper {
    let n_boundary = 40 * d * d;
    Hyper {
        k_u: 2,
        k_phi: 1,
        tau_theta: 0.015,
        tau_eta: 0.04,
        n_interior: 4000 * d,
        n_boundary,
        alpha: alpha_per_point * n_boundary as f64,
        iterations: 20_000,
    }
}

fn eq_weak() -> LibraryEntry {
    let problem = base_problem(
        "eq_weak",
        Domain::unit_cube(2),
        ScalarField::Const(-2.0),
        named("eq_weak_exact"),
        named("eq_weak_exact"),
    );
    let n_boundary = 4 * 100;
    LibraryEntry {
        name: "eq_weak".into(),
        problem,
        algorithm: Algorithm::Static,
        config: config(Hyper {
            k_u: 2,
            k_phi: 1,
            tau_theta: 0.015,
            tau_eta: 0.04,
            n_interior: 10_000,
            n_boundary,
            alpha: 10_000.0 * n_boundary as f64,
            iterations: 100_000,
        }),
        u_spec: default_u_spec_with(2, Activation::Elu),
        phi_spec: default_phi_spec(2),
        reported_error: None,
        alpha_printed: "10000 x N_b",
    }
}

fn smooth_poisson() -> LibraryEntry {
    let d = 5;
    let problem = base_problem(
        "smooth_poisson_d5",
        Domain::unit_cube(d),
        named("smooth_poisson_source"),
        named("sum_sin_half_pi"),
        named("sum_sin_half_pi"),
    );
    let mut cfg = config(Hyper {
        k_u: 1,
        k_phi: 1,
        tau_theta: 0.001,
        tau_eta: 0.015,
        n_interior: 10_000,
        n_boundary: 2 * d * 30,
        alpha: 10_000.0,
        iterations: 20_000,
    });
    cfg.u_optimizer = OptimizerKind::Adam;
    LibraryEntry {
        name: problem.name.clone(),
        problem,
        algorithm: Algorithm::Static,
        config: cfg,
        u_spec: default_u_spec(d),
        phi_spec: default_phi_spec(d),
        reported_error: Some(0.01),
        alpha_printed: "10000",
    }
}

fn nonl_cube(d: usize) -> LibraryEntry {
    let mut problem = base_problem(
        &format!("nonl_cube_d{d}"),
        Domain::cube(d, -1.0, 1.0),
        named("nonl_cube_source"),
        named("nonl_cube_exact"),
        named("nonl_cube_exact"),
    );
    problem.diffusion = Diffusion::Scalar {
        field: named("one_plus_norm_sq"),
    };
    problem.nonlinearity = Nonlinearity::new(NonlinearKind::HalfGradSq);
    let (per_point, printed, reported) = match d {
        5 => (10_000.0, "10000 x N_b", 0.0044),
        10 => (10_000.0, "10000 x N_b", 0.0062),
        15 => (20_000.0, "20000 x N_b", 0.0052),
        20 => (20_000.0, "20000 x N_b", 0.0066),
        _ => (25_000.0, "25000 x N_b", 0.0069),
    };
    LibraryEntry {
        name: problem.name.clone(),
        problem,
        algorithm: Algorithm::Static,
        config: config(nonl_hyper(d, per_point)),
        u_spec: default_u_spec(d),
        phi_spec: default_phi_spec(d),
        reported_error: Some(reported),
        alpha_printed: printed,
    }
}

fn neum_cube(d: usize) -> LibraryEntry {
    let mut flux = vec![named("neumann_flux_1"), named("neumann_flux_2")];
    flux.resize(d, ScalarField::zero());
    let mut problem = base_problem(
        &format!("neum_cube_d{d}"),
        Domain::unit_cube(d),
        named("neumann_source"),
        ScalarField::zero(),
        // Exact solution sin(πx₁/2)·cos(πx₂/2), the one consistent with f and g.
        named("sin_cos_half_pi"),
    );
    problem.boundary = BoundaryCondition::Neumann { flux };
    problem.reaction = ScalarField::Const(2.0);
    let n_boundary = 2 * d * 400;
    LibraryEntry {
        name: problem.name.clone(),
        problem,
        algorithm: Algorithm::Static,
        config: config(Hyper {
            k_u: 5,
            k_phi: 2,
            tau_theta: 0.02,
            tau_eta: 0.05,
            n_interior: 80_000,
            n_boundary,
            alpha: 1000.0 * n_boundary as f64,
            iterations: 20_000,
        }),
        u_spec: default_u_spec(d),
        phi_spec: default_phi_spec(d),
        reported_error: Some(if d == 5 { 0.0203 } else { 0.0131 }),
        alpha_printed: "1000 x N_b",
    }
}

fn poisson_l(d: usize) -> LibraryEntry {
    let mut problem = base_problem(
        &format!("poisson_l_d{d}"),
        Domain::l_shape(d),
        named("poisson_l_source"),
        named("sin_cos_half_pi"),
        named("sin_cos_half_pi"),
    );
    problem.diffusion = Diffusion::Scalar {
        field: named("one_plus_norm_sq"),
    };
    let (per_point, printed, reported) = if d == 5 {
        (10_000.0, "10000 x N_b", 0.0086)
    } else {
        (20_000.0, "20000 x N_b", 0.0080)
    };
    LibraryEntry {
        name: problem.name.clone(),
        problem,
        algorithm: Algorithm::Static,
        config: config(nonl_hyper(d, per_point)),
        u_spec: default_u_spec(d),
        phi_spec: default_phi_spec(d),
        reported_error: Some(reported),
        alpha_printed: printed,
    }
}

fn neg_square_parabolic(name: &str, d: usize, source: &str, exact: &str, initial: &str) -> PdeProblem {
    let mut problem = base_problem(
        name,
        Domain::cube(d, -1.0, 1.0).with_time(1.0),
        named(source),
        named(exact),
        named(exact),
    );
    problem.nonlinearity = Nonlinearity::new(NonlinearKind::NegSquare);
    problem.initial = Some(named(initial));
    problem
}

fn exp_parabolic_cn() -> LibraryEntry {
    let d = 5;
    let problem = neg_square_parabolic(
        "exp_parabolic_cn_d5",
        d,
        "exp_parabolic_source",
        "exp_parabolic_exact",
        "exp_parabolic_initial",
    );
    let mut cfg = config(nonl_hyper(d, 10_000.0));
    // 10,000 iterations in total over the ten steps.
    cfg.max_iterations = 1000;
    LibraryEntry {
        name: problem.name.clone(),
        problem,
        algorithm: Algorithm::SemiDiscrete { steps: 10 },
        config: cfg,
        u_spec: default_u_spec(d),
        phi_spec: default_phi_spec(d),
        reported_error: Some(0.028),
        alpha_printed: "10000 x N_b",
    }
}

fn exp_parabolic_st(d: usize) -> LibraryEntry {
    let problem = neg_square_parabolic(
        &format!("exp_parabolic_st_d{d}"),
        d,
        "exp_parabolic_st_source",
        "exp_parabolic_st_exact",
        "exp_parabolic_st_initial",
    );
    let mut cfg = config(nonl_hyper(d, 10_000.0));
    cfg.n_initial = cfg.n_boundary;
    cfg.gamma = cfg.alpha;
    LibraryEntry {
        name: problem.name.clone(),
        problem,
        algorithm: Algorithm::SpaceTime,
        config: cfg,
        u_spec: default_u_spec(d + 1),
        phi_spec: default_phi_spec(d + 1),
        reported_error: Some(if d == 5 { 0.0078 } else { 0.0066 }),
        alpha_printed: "10000 x N_b (gamma = alpha)",
    }
}

/// All benchmark problems.
pub fn problem_library() -> Vec<LibraryEntry> {
    let mut out = vec![eq_weak(), smooth_poisson()];
    out.extend([5, 10, 15, 20, 25].map(nonl_cube));
    out.extend([5, 10].map(neum_cube));
    out.extend([5, 10].map(poisson_l));
    out.push(exp_parabolic_cn());
    out.extend([5, 10].map(exp_parabolic_st));
    out
}

pub fn library_names() -> Vec<String> {
    problem_library().into_iter().map(|e| e.name).collect()
}

pub fn library_entry(name: &str) -> Result<LibraryEntry> {
    problem_library()
        .into_iter()
        .find(|e| e.name == name)
        .ok_or_else(|| WanError::config(format!("unknown library problem `{name}`; known: {}", library_names().join(", "))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use rand::Rng;

    #[test]
    fn entries_validate_and_match_defaults() {
        for e in problem_library() {
            e.problem.validate().unwrap();
            e.config.validate(e.algorithm == Algorithm::SpaceTime).unwrap();
            assert_eq!(e.u_spec.input_dim, e.phi_spec.input_dim);
            assert_eq!(e.config.n_boundary % e.problem.domain.face_count(), 0, "{}", e.name);
            let dim = match e.algorithm {
                Algorithm::SpaceTime => e.problem.input_dim(),
                _ => e.problem.spatial_dim(),
            };
            assert_eq!(e.u_spec.input_dim, dim, "{}", e.name);
        }
        let weak = library_entry("eq_weak").unwrap();
        assert_eq!(weak.config.alpha, 4.0e6);
        assert_eq!((weak.config.k_u, weak.config.k_phi), (2, 1));
        assert_eq!((weak.config.tau_eta, weak.config.tau_theta), (0.04, 0.015));
        let st = library_entry("exp_parabolic_st_d5").unwrap();
        assert_eq!(st.config.gamma, st.config.alpha);
        assert_eq!(st.config.n_initial, st.config.n_boundary);
        assert_eq!(library_entry("nonl_cube_d20").unwrap().config.alpha, 20_000.0 * 16_000.0);
        assert!(matches!(library_entry("nope"), Err(WanError::Config(_))));
    }

    #[test]
    fn eq_weak_exact_is_independent_of_x2() {
        let u = named("eq_weak_exact");
        for y in [0.0, 0.3, 0.99] {
            assert_eq!(u.eval(&[0.25, y]).unwrap(), 0.0625);
        }
    }

    #[test]
    fn smooth_poisson_laplacian() {
        let p = smooth_poisson().problem;
        let u = p.exact.unwrap();
        let x = [0.1, 0.4, 0.5, 0.7, 0.9];
        let lap: f64 = (0..5).map(|i| u.second(&x, i, i).unwrap()).sum();
        let want = std::f64::consts::PI.powi(2) / 4.0 * u.eval(&x).unwrap();
        assert!((-lap - want).abs() < 1e-12);
    }

    /// Exact solutions satisfy their equations and data (transcription gate).
    #[test]
    fn exact_solution_residual_gates() {
        for e in problem_library() {
            let p = &e.problem;
            let mut rng = stream_rng(1, Stream::Misc, 0);
            let interior = p.domain.sample_interior(1000, &mut rng);
            for x in interior.chunks(p.input_dim()) {
                let r = p.strong_residual(x).unwrap();
                assert!(r.abs() <= 1e-8, "{}: residual {r} at {x:?}", e.name);
            }
            let (bpts, normals) = p.domain.sample_boundary(20 * p.domain.face_count(), &mut rng).unwrap();
            let data = p.boundary_data(&bpts, &normals).unwrap();
            let exact = p.exact.as_ref().unwrap();
            let d = p.spatial_dim();
            for (k, x) in bpts.chunks(p.input_dim()).enumerate() {
                let want = match &p.boundary {
                    BoundaryCondition::Dirichlet { .. } => exact.eval(x).unwrap(),
                    BoundaryCondition::Neumann { .. } => {
                        let g = exact.gradient(x).unwrap();
                        (0..d).map(|i| g[i] * normals[k * d + i]).sum()
                    }
                };
                assert!((data[k] - want).abs() <= 1e-12, "{}: boundary {} vs {want}", e.name, data[k]);
            }
            if let Some(h) = &p.initial {
                for _ in 0..100 {
                    let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let mut xt = x.clone();
                    xt.push(0.0);
                    let diff = h.eval(&x).unwrap() - exact.eval(&xt).unwrap();
                    assert!(diff.abs() <= 1e-12, "{}: initial mismatch {diff}", e.name);
                }
            }
        }
    }

    #[test]
    fn eq_weak_data_matches_printed_piecewise_g() {
        let p = eq_weak().problem;
        let BoundaryCondition::Dirichlet { g } = &p.boundary else { panic!() };
        for (x, want) in [([0.3, 0.0], 0.09), ([0.8, 1.0], 0.04), ([0.0, 0.6], 0.0), ([1.0, 0.2], 0.0)] {
            assert!((g.eval(&x).unwrap() - want).abs() < 1e-15);
        }
    }

    #[test]
    fn ellipticity_spot_checks() {
        for e in problem_library() {
            e.problem.check_ellipticity(1000, 3).unwrap();
        }
    }
}
