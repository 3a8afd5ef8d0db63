use super::*;
use crate::diffcore::finite_difference_oracle;
use crate::field::ScalarField;
use crate::network::{Activation, MlpSpec, ParamVector};
use crate::oracle::gradient_rel_err;
use crate::problem::{Diffusion, NonlinearKind, Nonlinearity};

fn named(n: &str) -> ScalarField {
    ScalarField::named(n).unwrap()
}

fn poisson(domain: Domain) -> PdeProblem {
    PdeProblem {
        name: "poisson".into(),
        domain,
        diffusion: Diffusion::Identity,
        drift: vec![],
        reaction: ScalarField::zero(),
        nonlinearity: Nonlinearity::NONE,
        source: ScalarField::Const(-2.0),
        boundary: BoundaryCondition::Dirichlet { g: ScalarField::Const(0.3) },
        initial: None,
        exact: None,
        ellipticity: 1.0,
    }
}

fn nonlinear_static() -> PdeProblem {
    let mut p = poisson(Domain::cube(2, -1.0, 1.0));
    p.diffusion = Diffusion::Scalar {
        field: named("one_plus_norm_sq"),
    };
    p.drift = vec![ScalarField::Const(0.4), ScalarField::Const(-0.2)];
    p.reaction = ScalarField::Const(0.7);
    p.nonlinearity = Nonlinearity::new(NonlinearKind::HalfGradSq);
    p.source = named("nonl_cube_source");
    p
}

fn parabolic() -> PdeProblem {
    let mut p = poisson(Domain::unit_cube(2).with_time(0.5));
    p.diffusion = Diffusion::Scalar {
        field: named("one_plus_norm_sq").spatial(),
    };
    p.reaction = ScalarField::Const(0.5);
    p.nonlinearity = Nonlinearity::new(NonlinearKind::NegSquare);
    p.source = ScalarField::Const(1.5);
    p.initial = Some(named("sum_sin_half_pi"));
    p
}

fn neumann() -> PdeProblem {
    let mut p = poisson(Domain::unit_cube(2));
    p.boundary = BoundaryCondition::Neumann {
        flux: vec![ScalarField::Const(0.2), named("one_plus_norm_sq")],
    };
    p
}

fn net(dim: usize, seed: u64) -> Network {
    let spec = MlpSpec::new(dim, vec![6, 5], vec![Activation::Tanh, Activation::Softplus]).unwrap();
    let mut n = Network::init(spec, seed);
    // Nonzero biases so every parameter matters.
    for (k, p) in n.params.0.iter_mut().enumerate() {
        if *p == 0.0 {
            *p = 0.1 * ((k % 7) as f64 - 3.0);
        }
    }
    n
}

struct Setup {
    problem: PdeProblem,
    batch: CollocationBatch,
    u: Network,
    test: TestFunction,
}

fn setup(problem: PdeProblem, n_r: usize, n_b: usize, n_a: usize, seed: u64) -> Setup {
    let batch = CollocationBatch::sample(&problem.domain, n_r, n_b, n_a, seed, 0).unwrap();
    let dim = problem.input_dim();
    let u = net(dim, seed + 1);
    let test = TestFunction::analytic(&problem.domain, net(dim, seed + 2));
    Setup { problem, batch, u, test }
}

fn settings(theta_form: IntForm, boundary_form: ErrorForm) -> LossSettings {
    LossSettings {
        alpha: 3.0,
        gamma: 2.0,
        theta_form,
        boundary_form,
    }
}

fn scaled_test(test: &TestFunction, k: f64) -> TestFunction {
    let mut t = test.clone();
    let spec = t.v.spec.clone();
    t.v.params.output_layer_mut(&spec).iter_mut().for_each(|p| *p *= k);
    t
}

#[test]
fn pairing_matches_pointwise_integrand() {
    let s = setup(nonlinear_static(), 40, 8, 0, 3);
    let p = estimate_pairing(&s.batch, &s.u, &s.test, &s.problem).unwrap();
    let dim = s.problem.input_dim();
    let mut sum = 0.0;
    for j in 0..s.batch.n_interior() {
        let x = s.batch.interior_point(j);
        let u = crate::diffcore::eval_with_input_grad(&s.u.spec, &s.u.params, x).unwrap();
        let v = crate::diffcore::eval_with_input_grad(&s.test.v.spec, &s.test.v.params, x).unwrap();
        let w = s.problem.domain.signed_distance(x);
        let gw = s.problem.domain.signed_distance_grad(x);
        let mut phi = v.clone();
        phi.value = w * v.value;
        for i in 0..dim {
            phi.input_grad[i] = w * v.input_grad[i] + v.value * gw[i];
        }
        sum += crate::problem::weak_integrand(&s.problem, x, &u, &phi).unwrap();
    }
    let expected = s.batch.volume * sum / s.batch.n_interior() as f64;
    assert!((p - expected).abs() < 1e-12 * (1.0 + expected.abs()), "{p} vs {expected}");
}

#[test]
fn pairing_is_linear_in_test_scale_for_linear_problems() {
    let s = setup(poisson(Domain::unit_cube(3)), 30, 6, 0, 5);
    let p1 = estimate_pairing(&s.batch, &s.u, &s.test, &s.problem).unwrap();
    let p2 = estimate_pairing(&s.batch, &s.u, &scaled_test(&s.test, 2.0), &s.problem).unwrap();
    assert!((p2 - 2.0 * p1).abs() < 1e-12 * p1.abs().max(1.0));
}

#[test]
fn direct_form_is_homogeneous_in_test_scale() {
    let s = setup(poisson(Domain::l_shape(2)), 50, 8, 0, 7);
    let base = loss_int(&s.batch, &s.u, &s.test, &s.problem, IntForm::Direct).unwrap();
    for k in [2.0, -3.0, 0.5] {
        let scaled = loss_int(&s.batch, &s.u, &scaled_test(&s.test, k), &s.problem, IntForm::Direct).unwrap();
        assert!(((scaled - base) / base).abs() < 1e-12, "k={k}: {scaled} vs {base}");
    }
}

#[test]
fn int_loss_arithmetic() {
    for (form, expected) in [(IntForm::Log, 0.0), (IntForm::Direct, 1.0)] {
        let mut tape = Tape::new();
        let p = tape.leaf(2.0);
        let q = tape.leaf(4.0);
        let l = int_loss(&mut tape, p, q, form).unwrap();
        assert!((tape.value(l) - expected).abs() < 1e-15);
    }
}

#[test]
fn zero_pairing_is_clamped_in_log_form() {
    let mut tape = Tape::new();
    let p = tape.leaf(0.0);
    let q = tape.leaf(2.0);
    let l = int_loss(&mut tape, p, q, IntForm::Log).unwrap();
    assert!((tape.value(l) - (PAIRING_SQ_FLOOR.ln() - 2f64.ln())).abs() < 1e-12);
    assert!(tape.backward(l).iter().all(|g| g.is_finite()));
}

#[test]
fn collapsed_test_network_is_reported() {
    let s = setup(poisson(Domain::unit_cube(2)), 10, 4, 0, 1);
    let test = scaled_test(&s.test, 0.0);
    for form in [IntForm::Log, IntForm::Direct] {
        let err = loss_int(&s.batch, &s.u, &test, &s.problem, form).unwrap_err();
        assert!(matches!(err, WanError::DegenerateTestFunction(q) if q == 0.0), "{err}");
    }
}

#[test]
fn empty_interior_batch_is_a_config_error() {
    let s = setup(poisson(Domain::unit_cube(2)), 10, 4, 0, 1);
    let mut batch = s.batch.clone();
    batch.interior.clear();
    let err = estimate_pairing(&batch, &s.u, &s.test, &s.problem).unwrap_err();
    assert!(matches!(err, WanError::Config(_)));
}

#[test]
fn test_function_vanishes_exactly_on_boundary_points() {
    for domain in [Domain::unit_cube(4), Domain::l_shape(3), Domain::cube(2, -1.0, 1.0).with_time(1.0)] {
        let problem = poisson(domain.clone());
        let batch = CollocationBatch::sample(&domain, 1, 8 * domain.spatial_dim(), 0, 11, 0).unwrap();
        let test = TestFunction::analytic(&domain, net(domain.input_dim(), 4));
        let (phi, _) = test.eval(&batch.boundary, problem.spatial_dim()).unwrap();
        assert!(phi.iter().all(|&p| p == 0.0), "{phi:?}");
    }
}

#[test]
fn learned_weight_is_softplus_of_network() {
    let weight = BoundaryWeight::Learned { net: net(2, 9) };
    let pts = [0.2, 0.7, 0.9, 0.1];
    let (w, g) = weight.eval(&pts, 2, 2).unwrap();
    let BoundaryWeight::Learned { net } = &weight else { unreachable!() };
    let h = 1e-6;
    for p in 0..2 {
        let z = net.values(&pts[2 * p..2 * p + 2]).unwrap()[0];
        assert!((w[p] - softplus(z)).abs() < 1e-15);
        for i in 0..2 {
            let mut a = pts[2 * p..2 * p + 2].to_vec();
            let mut b = a.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (softplus(net.values(&a).unwrap()[0]) - softplus(net.values(&b).unwrap()[0])) / (2.0 * h);
            assert!((g[2 * p + i] - fd).abs() < 1e-7);
        }
    }
}

fn check_theta_gradient(problem: PdeProblem, n_a: usize, form: IntForm, bform: ErrorForm) {
    let s = setup(problem, 5, 4, n_a, 21);
    let st = settings(form, bform);
    let ctx = LossContext::new(&s.problem, &s.batch, &s.test.weight).unwrap();
    let ve = ctx.eval_v(&s.test.v).unwrap();
    let (value, grad) = ctx.theta_gradient(&s.u, &ve, &st).unwrap();
    let spec = s.u.spec.clone();
    let fd = finite_difference_oracle(
        |p: &ParamVector| {
            let u = Network::new(spec.clone(), p.clone())?;
            Ok(ctx.theta_gradient(&u, &ve, &st)?.0)
        },
        &s.u.params,
        1e-5,
    )
    .unwrap();
    let err = gradient_rel_err(&grad, &fd, value);
    assert!(err < 1e-5, "{}: {form:?}/{bform:?} rel err {err}", s.problem.name);
}

#[test]
fn theta_gradient_matches_finite_differences() {
    for form in [IntForm::Log, IntForm::Direct] {
        for bform in [ErrorForm::Squared, ErrorForm::Absolute] {
            check_theta_gradient(nonlinear_static(), 0, form, bform);
            check_theta_gradient(parabolic(), 3, form, bform);
            check_theta_gradient(neumann(), 0, form, bform);
        }
    }
}

#[test]
fn eta_gradient_matches_finite_differences() {
    for (problem, n_a) in [(nonlinear_static(), 0), (parabolic(), 3)] {
        let s = setup(problem, 5, 4, n_a, 31);
        let ctx = LossContext::new(&s.problem, &s.batch, &s.test.weight).unwrap();
        let ue = ctx.eval_u(&s.u).unwrap();
        let (value, grad) = ctx.eta_gradient(&ue, &s.test.v).unwrap();
        let spec = s.test.v.spec.clone();
        let fd = finite_difference_oracle(
            |p: &ParamVector| {
                let v = Network::new(spec.clone(), p.clone())?;
                Ok(ctx.eta_gradient(&ue, &v)?.0)
            },
            &s.test.v.params,
            1e-5,
        )
        .unwrap();
        let err = gradient_rel_err(&grad, &fd, value);
        assert!(err < 1e-5, "{} rel err {err}", s.problem.name);
    }
}

#[test]
fn boundary_and_initial_losses_do_not_depend_on_test_network() {
    let s = setup(parabolic(), 6, 4, 5, 2);
    let ctx = LossContext::new(&s.problem, &s.batch, &s.test.weight).unwrap();
    let ue = ctx.eval_u(&s.u).unwrap();
    let ve = ctx.eval_v(&s.test.v).unwrap();
    let (mut tape, uv, vv) = ctx.tape_for(&ue, &ve);
    let b = ctx.boundary(&mut tape, &uv, ErrorForm::Squared).unwrap();
    let i = ctx.initial(&mut tape, &uv).unwrap();
    let sum = tape.add(b, i);
    let adj = tape.backward(sum);
    let (bv, bg) = vv.adjoints(&adj);
    assert!(bv.iter().chain(&bg).all(|&g| g == 0.0));
    let (uv_bar, _) = uv.adjoints(&adj);
    assert!(uv_bar.iter().any(|&g| g != 0.0));
}

#[test]
fn log_and_direct_gradients_share_signs() {
    let s = setup(nonlinear_static(), 20, 4, 0, 41);
    let pure = |form| settings(form, ErrorForm::Squared);
    // Without boundary points only L_int contributes.
    let mut problem = s.problem.clone();
    problem.boundary = BoundaryCondition::Dirichlet { g: ScalarField::zero() };
    let batch = CollocationBatch {
        boundary: vec![],
        normals: vec![],
        ..s.batch.clone()
    };
    let ctx2 = LossContext::new(&problem, &batch, &s.test.weight).unwrap();
    let ve = ctx2.eval_v(&s.test.v).unwrap();
    let (_, g_log) = ctx2.theta_gradient(&s.u, &ve, &pure(IntForm::Log)).unwrap();
    let (_, g_dir) = ctx2.theta_gradient(&s.u, &ve, &pure(IntForm::Direct)).unwrap();
    let scale = g_log.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut checked = 0;
    for (a, b) in g_log.iter().zip(&g_dir) {
        if a.abs() > 1e-9 * scale {
            assert_eq!(a.signum(), b.signum());
            checked += 1;
        }
    }
    assert!(checked > g_log.len() / 2);
}

#[test]
fn log_form_gradient_is_twice_relative_pairing_gradient() {
    let s = setup(poisson(Domain::unit_cube(2)), 5, 4, 0, 13);
    let problem = s.problem.clone();
    let batch = CollocationBatch {
        boundary: vec![],
        normals: vec![],
        ..s.batch.clone()
    };
    let ctx = LossContext::new(&problem, &batch, &s.test.weight).unwrap();
    let ve = ctx.eval_v(&s.test.v).unwrap();
    let st = settings(IntForm::Log, ErrorForm::Squared);
    let (_, g) = ctx.theta_gradient(&s.u, &ve, &st).unwrap();

    let ue = forward(&s.u.spec, &s.u.params, ctx.u_points(), true).unwrap();
    let (mut tape, uv, vv) = ctx.tape_for(&ue, &ve);
    let int = ctx.interior(&mut tape, &uv, &vv).unwrap();
    let p = tape.value(int.pairing);
    let adj = tape.backward(int.pairing);
    let (bv, bg) = uv.adjoints(&adj);
    let dp = ue.backward(&s.u.spec, &s.u.params, &bv, &bg).unwrap();
    for (a, b) in g.iter().zip(&dp) {
        assert!((a - 2.0 * b / p).abs() < 1e-10 * (1.0 + a.abs()));
    }
}

#[test]
fn log_form_gradients_ignore_measure_factor() {
    for (problem, n_a) in [(nonlinear_static(), 0), (parabolic(), 3)] {
        let s = setup(problem, 8, 4, n_a, 17);
        let ctx = LossContext::new(&s.problem, &s.batch, &s.test.weight).unwrap();
        let mut wide = ctx.clone();
        wide.volume *= 3.0;
        let st = settings(IntForm::Log, ErrorForm::Squared);
        let ue = ctx.eval_u(&s.u).unwrap();
        let ve = ctx.eval_v(&s.test.v).unwrap();
        let (l1, e1) = ctx.eta_gradient(&ue, &s.test.v).unwrap();
        let (l3, e3) = wide.eta_gradient(&ue, &s.test.v).unwrap();
        assert!((l3 - l1 - 3f64.ln()).abs() < 1e-10);
        for (a, b) in e1.iter().zip(&e3) {
            assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
        }
        let (_, t1) = ctx.theta_gradient(&s.u, &ve, &st).unwrap();
        let (_, t3) = wide.theta_gradient(&s.u, &ve, &st).unwrap();
        for (a, b) in t1.iter().zip(&t3) {
            assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
        }
    }
}

fn constant_net(dim: usize, c: f64) -> Network {
    let spec = MlpSpec::new(dim, vec![3], vec![Activation::Tanh]).unwrap();
    let mut params = ParamVector::zeros(&spec);
    *params.0.last_mut().unwrap() = c;
    Network::new(spec, params).unwrap()
}

#[test]
fn boundary_loss_examples() {
    let mut problem = poisson(Domain::unit_cube(2));
    problem.boundary = BoundaryCondition::Dirichlet { g: ScalarField::zero() };
    let batch = CollocationBatch::sample(&problem.domain, 1, 16, 0, 3, 0).unwrap();
    let u = constant_net(2, 0.1);
    let sq = loss_bdry(&batch.boundary, &batch.normals, &u, &problem, ErrorForm::Squared).unwrap();
    let ab = loss_bdry(&batch.boundary, &batch.normals, &u, &problem, ErrorForm::Absolute).unwrap();
    assert!((sq - 0.01).abs() < 1e-15 && (ab - 0.1).abs() < 1e-15);
    problem.boundary = BoundaryCondition::Dirichlet { g: ScalarField::Const(0.1) };
    for form in [ErrorForm::Squared, ErrorForm::Absolute] {
        assert_eq!(loss_bdry(&batch.boundary, &batch.normals, &u, &problem, form).unwrap(), 0.0);
    }
}

#[test]
fn neumann_boundary_loss_requires_normals() {
    let problem = neumann();
    let batch = CollocationBatch::sample(&problem.domain, 1, 8, 0, 3, 0).unwrap();
    let err = loss_bdry(&batch.boundary, &[], &constant_net(2, 0.0), &problem, ErrorForm::Squared).unwrap_err();
    assert!(matches!(err, WanError::Config(_)));
}

#[test]
fn neumann_boundary_loss_uses_outward_flux() {
    // u = 0.5·x1 has n·∇u = ±0.5 on the x1 faces and 0 elsewhere; flux F = (0.5, 0).
    let mut problem = neumann();
    problem.boundary = BoundaryCondition::Neumann {
        flux: vec![ScalarField::Const(0.5), ScalarField::zero()],
    };
    let spec = MlpSpec::new(2, vec![1], vec![Activation::Identity]).unwrap();
    let params = ParamVector(vec![1.0, 0.0, 0.0, 0.5, 0.0]);
    let u = Network::new(spec, params).unwrap();
    let batch = CollocationBatch::sample(&problem.domain, 1, 16, 0, 5, 0).unwrap();
    let l = loss_bdry(&batch.boundary, &batch.normals, &u, &problem, ErrorForm::Squared).unwrap();
    assert!(l < 1e-28, "{l}");
}

#[test]
fn initial_loss_examples() {
    let mut problem = parabolic();
    problem.initial = Some(ScalarField::Const(0.25).spatial());
    let batch = CollocationBatch::sample(&problem.domain, 1, 8, 10, 3, 0).unwrap();
    assert_eq!(loss_init(&batch.initial, &constant_net(3, 0.25), &problem).unwrap(), 0.0);
    let l = loss_init(&batch.initial, &constant_net(3, 0.75), &problem).unwrap();
    assert!((l - 0.25).abs() < 1e-15);
    let err = loss_init(&batch.initial, &constant_net(3, 0.0), &poisson(Domain::unit_cube(2))).unwrap_err();
    assert!(matches!(err, WanError::Config(_)));
}

#[test]
fn total_loss_recomposes_components() {
    let s = setup(parabolic(), 12, 8, 6, 9);
    let st = settings(IntForm::Direct, ErrorForm::Absolute);
    let b = total_loss(&s.batch, &s.u, &s.test, &s.problem, &st).unwrap();
    let l_int = loss_int(&s.batch, &s.u, &s.test, &s.problem, IntForm::Log).unwrap();
    let l_bdry = loss_bdry(&s.batch.boundary, &s.batch.normals, &s.u, &s.problem, ErrorForm::Absolute).unwrap();
    let l_init = loss_init(&s.batch.initial, &s.u, &s.problem).unwrap();
    assert!((b.l_int - l_int).abs() < 1e-12);
    assert!((b.l_bdry - l_bdry).abs() < 1e-14);
    assert!((b.l_init - l_init).abs() < 1e-14);
    assert!((b.total - (l_int + st.alpha * l_bdry + st.gamma * l_init)).abs() < 1e-12);
    assert!(b.test_norm >= 0.0);
    let mut bad = st;
    bad.gamma = 0.0;
    assert!(total_loss(&s.batch, &s.u, &s.test, &s.problem, &bad).is_err());
}

#[test]
fn spacetime_terms_sum_to_pairing() {
    let s = setup(parabolic(), 30, 8, 4, 19);
    let (a, b, c) = spacetime_weak_terms(&s.problem, &s.batch, &s.u, &s.test).unwrap();
    let p = estimate_pairing(&s.batch, &s.u, &s.test, &s.problem).unwrap();
    assert!((a + b + c - p).abs() < 1e-12 * (1.0 + p.abs()), "{a}+{b}+{c} vs {p}");
    assert!(spacetime_weak_terms(&poisson(Domain::unit_cube(2)), &s.batch, &s.u, &s.test).is_err());
}

#[test]
fn zero_losses_give_zero_total() {
    // u ≡ 0 solves −Δu = 0 with zero Dirichlet data; the pairing vanishes.
    let mut problem = poisson(Domain::unit_cube(2));
    problem.source = ScalarField::zero();
    problem.boundary = BoundaryCondition::Dirichlet { g: ScalarField::zero() };
    let batch = CollocationBatch::sample(&problem.domain, 10, 8, 0, 1, 0).unwrap();
    let test = TestFunction::analytic(&problem.domain, net(2, 3));
    let ctx = LossContext::new(&problem, &batch, &test.weight).unwrap();
    let ue = ctx.eval_u(&constant_net(2, 0.0)).unwrap();
    let ve = ctx.eval_v(&test.v).unwrap();
    let mut st = settings(IntForm::Direct, ErrorForm::Squared);
    st.gamma = 0.0;
    let b = ctx.breakdown(&ue, &ve, &st).unwrap();
    assert_eq!((b.pairing, b.l_bdry), (0.0, 0.0));
    // The log form reports the floored value; the direct form is exactly 0.
    assert_eq!(loss_int(&batch, &constant_net(2, 0.0), &test, &problem, IntForm::Direct).unwrap(), 0.0);
}

#[test]
fn pretrained_weight_vanishes_on_held_out_boundary() {
    let domain = Domain::unit_cube(2);
    let spec = MlpSpec::new(2, vec![16, 16], vec![Activation::Tanh, Activation::Tanh]).unwrap();
    let cfg = PretrainConfig {
        epsilon: 1e-3,
        iterations: 1500,
        tau: 0.01,
        n_interior: 64,
        n_boundary: 64,
        seed: 3,
    };
    let (weight, history) = pretrain_w(&domain, spec, &cfg).unwrap();
    assert!(history.last().unwrap() < &history[0]);
    let held = CollocationBatch::sample(&domain, 500, 400, 0, 999, 0).unwrap();
    let (wb, _) = weight.eval(&held.boundary, 2, 2).unwrap();
    let mean_b = wb.iter().map(|w| w.abs()).sum::<f64>() / wb.len() as f64;
    assert!(mean_b < 1e-2, "mean boundary weight {mean_b}");
    let (wi, _) = weight.eval(&held.interior, 2, 2).unwrap();
    assert!(wi.iter().all(|&w| w > 0.0));
    let bad = PretrainConfig { epsilon: 0.0, ..cfg };
    assert!(pretrain_w(&domain, MlpSpec::uniform(2, 1, 4, Activation::Tanh).unwrap(), &bad).is_err());
}
