use super::*;
use crate::field::ScalarField;
use crate::geometry::Domain;
use crate::network::Activation;
use crate::problem::{BoundaryCondition, Diffusion, Nonlinearity};

fn named(n: &str) -> ScalarField {
    ScalarField::named(n).unwrap()
}

fn poisson2() -> PdeProblem {
    PdeProblem {
        name: "poisson2".into(),
        domain: Domain::unit_cube(2),
        diffusion: Diffusion::Identity,
        drift: vec![],
        reaction: ScalarField::zero(),
        nonlinearity: Nonlinearity::NONE,
        source: named("smooth_poisson_source"),
        boundary: BoundaryCondition::Dirichlet {
            g: named("sum_sin_half_pi"),
        },
        initial: None,
        exact: Some(named("sum_sin_half_pi")),
        ellipticity: 1.0,
    }
}

fn heat_like() -> PdeProblem {
    let mut p = poisson2();
    p.name = "heat_like".into();
    p.domain = Domain::unit_cube(1).with_time(0.2);
    p.source = ScalarField::zero();
    p.boundary = BoundaryCondition::Dirichlet { g: ScalarField::zero() };
    p.initial = Some(named("heat_initial"));
    p.exact = Some(named("heat_exact"));
    p
}

fn small(dim: usize) -> MlpSpec {
    MlpSpec::new(dim, vec![6, 6], vec![Activation::Tanh, Activation::Softplus]).unwrap()
}

fn cfg() -> TrainConfig {
    TrainConfig {
        k_u: 2,
        k_phi: 1,
        tau_theta: 0.01,
        tau_eta: 0.02,
        n_interior: 24,
        n_boundary: 8,
        n_initial: 6,
        alpha: 10.0,
        gamma: 10.0,
        max_iterations: 6,
        resample_every: 1,
        u_optimizer: OptimizerKind::Adagrad,
        phi_optimizer: OptimizerKind::Adam,
        adam: AdamHyper::default(),
        seed: 7,
        log_every: 1,
        theta_form: IntForm::Direct,
        boundary_form: ErrorForm::Squared,
        target_error: None,
        eval_seed: None,
    }
}

fn losses(t: &TrainTrace) -> Vec<[f64; 6]> {
    t.records
        .iter()
        .map(|r| {
            let l = &r.loss;
            [l.l_int, l.l_bdry, l.l_init, l.total, l.pairing, r.rel_error.unwrap_or(f64::NAN)]
        })
        .collect()
}

#[test]
fn zero_iterations_leave_initialization_unchanged() {
    let p = poisson2();
    let mut c = cfg();
    c.max_iterations = 0;
    let (u, trace) = run_wan(&p, small(2), small(2), &c).unwrap();
    assert!(trace.is_empty());
    assert_eq!(u, Network::init(small(2), stream_key(c.seed, Stream::Init, 0)));
}

#[test]
fn identical_seeds_give_identical_traces() {
    let p = poisson2();
    let (u1, t1) = run_wan(&p, small(2), small(2), &cfg()).unwrap();
    let (u2, t2) = run_wan(&p, small(2), small(2), &cfg()).unwrap();
    assert_eq!(u1, u2);
    let (a, b) = (losses(&t1), losses(&t2));
    assert_eq!(a.len(), 6);
    for (x, y) in a.iter().zip(&b) {
        for (p, q) in x.iter().zip(y) {
            assert_eq!(p.to_bits(), q.to_bits());
        }
    }
    let mut other = cfg();
    other.seed = 8;
    let (u3, _) = run_wan(&p, small(2), small(2), &other).unwrap();
    assert_ne!(u1, u3);
}

#[test]
fn loop_order_follows_sample_descend_ascend() {
    let p = poisson2();
    let mut c = cfg();
    c.k_u = 3;
    c.k_phi = 2;
    c.resample_every = 2;
    c.max_iterations = 4;
    let mut t = Trainer::new(&p, small(2), small(2), c).unwrap();
    t.record_events();
    t.run().unwrap();
    let mut expected = Vec::new();
    for it in 0..4 {
        if it % 2 == 0 {
            expected.push(LoopEvent::Sample {
                iteration: it,
                batch: (it / 2) as u64,
            });
        }
        expected.extend(std::iter::repeat(LoopEvent::Theta { iteration: it }).take(3));
        expected.extend(std::iter::repeat(LoopEvent::Eta { iteration: it }).take(2));
    }
    assert_eq!(t.events(), expected.as_slice());
    let c = &t.state().counters;
    assert_eq!((c.batches, c.theta_updates, c.eta_updates), (2, 12, 8));
}

#[test]
fn resume_reproduces_uninterrupted_trace() {
    for (problem, dim) in [(poisson2(), 2), (heat_like(), 2)] {
        let full = {
            let mut t = Trainer::new(&problem, small(dim), small(dim), cfg()).unwrap();
            t.run().unwrap();
            t.into_state()
        };
        let mut half = cfg();
        half.max_iterations = 3;
        let mut t = Trainer::new(&problem, small(dim), small(dim), half).unwrap();
        t.run().unwrap();
        let json = serde_json::to_string(&t.checkpoint()).unwrap();
        let state: TrainState = serde_json::from_str(&json).unwrap();
        let mut t = Trainer::resume(&problem, state, cfg()).unwrap();
        t.run().unwrap();
        let resumed = t.into_state();
        assert_eq!(resumed.u, full.u);
        assert_eq!(resumed.counters, full.counters);
        let (a, b) = (losses(&full.trace), losses(&resumed.trace));
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            for (p, q) in x.iter().zip(y) {
                assert!((p - q).abs() <= 1e-12 * (1.0 + p.abs()) || (p.is_nan() && q.is_nan()));
            }
        }
    }
}

#[test]
fn collapsed_test_network_aborts_with_state_intact() {
    let p = poisson2();
    let u = Network::init(small(2), 1);
    let mut v = Network::init(small(2), 2);
    let spec = v.spec.clone();
    v.params.output_layer_mut(&spec).iter_mut().for_each(|x| *x = 0.0);
    let weight = BoundaryWeight::Analytic { domain: p.domain.clone() };
    let mut t = Trainer::with_networks(&p, u.clone(), v, weight, cfg()).unwrap();
    let err = t.run().unwrap_err();
    match err {
        WanError::TrainingAborted { iteration, source } => {
            assert_eq!(iteration, 0);
            assert!(matches!(*source, WanError::DegenerateTestFunction(_)));
        }
        other => panic!("{other}"),
    }
    assert_eq!(t.state().u, u);
    assert_eq!(t.state().counters.theta_updates, 0);
}

#[test]
fn early_stop_on_target_error() {
    let p = poisson2();
    let mut c = cfg();
    c.max_iterations = 50;
    c.log_every = 2;
    c.target_error = Some(100.0);
    let mut t = Trainer::new(&p, small(2), small(2), c).unwrap();
    t.run().unwrap();
    assert_eq!(t.state().iteration, 2);
    assert_eq!(t.state().trace.len(), 1);
}

#[test]
fn trace_is_logged_at_interval_and_final_iteration() {
    let p = poisson2();
    let mut c = cfg();
    c.max_iterations = 7;
    c.log_every = 3;
    let (_, trace) = run_wan(&p, small(2), small(2), &c).unwrap();
    let its: Vec<usize> = trace.records.iter().map(|r| r.iteration).collect();
    assert_eq!(its, vec![3, 6, 7]);
    assert!(trace.records.windows(2).all(|w| w[1].seconds >= w[0].seconds));
    let mut csv = Vec::new();
    trace.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(TRACE_HEADER));
    assert_eq!(lines.next().unwrap().split(',').count(), 9);
}

#[test]
fn loops_check_problem_kind_and_config() {
    let mut c = cfg();
    assert!(run_wan(&heat_like(), small(2), small(2), &c).is_err());
    assert!(run_wan_spacetime(&poisson2(), small(2), small(2), &c).is_err());
    assert!(run_wan_semidiscrete(&poisson2(), small(2), small(2), &c, 2).is_err());
    assert!(run_wan_semidiscrete(&heat_like(), small(1), small(1), &c, 0).is_err());
    c.k_u = 0;
    assert!(matches!(run_wan(&poisson2(), small(2), small(2), &c), Err(WanError::Config(_))));
    let mut c = cfg();
    c.n_initial = 0;
    assert!(run_wan_spacetime(&heat_like(), small(2), small(2), &c).is_err());
}

#[test]
fn semidiscrete_single_step_is_one_static_solve() {
    let p = heat_like();
    let c = cfg();
    let out = run_wan_semidiscrete(&p, small(1), small(1), &c, 1).unwrap();
    assert_eq!(out.networks.len(), 1);
    let sub = crank_nicolson_subproblem(&p, Arc::new(p.initial.clone().unwrap()), 0.0, 0.2).unwrap();
    let mut step_cfg = c.clone();
    step_cfg.seed = stream_key(c.seed, Stream::Misc, 0);
    let (u, trace) = run_wan(&sub, small(1), small(1), &step_cfg).unwrap();
    assert_eq!(out.networks[0], u);
    assert_eq!(losses(&out.trace), losses(&trace));
}

#[test]
fn semidiscrete_steps_chain_and_count_iterations() {
    let p = heat_like();
    let mut c = cfg();
    c.max_iterations = 2;
    let out = run_wan_semidiscrete(&p, small(1), small(1), &c, 3).unwrap();
    assert_eq!(out.networks.len(), 3);
    assert_eq!(out.step_errors.len(), 3);
    let its: Vec<usize> = out.trace.records.iter().map(|r| r.iteration).collect();
    assert_eq!(its, vec![1, 2, 3, 4, 5, 6]);
}

#[test]
fn spacetime_training_reduces_loss() {
    let p = heat_like();
    let mut c = cfg();
    c.max_iterations = 40;
    c.log_every = 40;
    c.tau_theta = 0.02;
    let mut t = Trainer::new(&p, small(2), small(2), c).unwrap();
    let (before, _) = t.breakdown_at(0).unwrap();
    t.run().unwrap();
    let (after, _) = t.breakdown_at(0).unwrap();
    assert!(after.l_bdry + after.l_init < before.l_bdry + before.l_init);
}
