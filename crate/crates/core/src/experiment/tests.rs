use super::*;

fn tiny(problem: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig::named(problem);
    c.u_network = Some(NetworkOverride::scaled(2, 6));
    c.phi_network = Some(NetworkOverride::scaled(2, 6));
    c.train = serde_json::json!({
        "n_interior": 64, "n_boundary": 40, "max_iterations": 6, "log_every": 2, "seed": 3
    })
    .as_object()
    .unwrap()
    .clone();
    c
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("wan-exp-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

#[test]
fn named_config_resolves_to_library_defaults() {
    let r = resolve(&ExperimentConfig::named("nonl_cube_d5")).unwrap();
    let e = library_entry("nonl_cube_d5").unwrap();
    assert_eq!(r.train, e.config);
    assert_eq!(r.u_spec, e.u_spec);
    assert_eq!(r.phi_spec, e.phi_spec);
    assert_eq!(r.algorithm, Algorithm::Static);
    assert_eq!(r.reported_error, e.reported_error);
}

#[test]
fn train_overrides_merge_over_defaults() {
    let r = resolve(&tiny("smooth_poisson_d5")).unwrap();
    let e = library_entry("smooth_poisson_d5").unwrap();
    assert_eq!(r.train.n_interior, 64);
    assert_eq!(r.train.seed, 3);
    assert_eq!(r.train.alpha, e.config.alpha);
    assert_eq!(r.train.k_u, e.config.k_u);
    assert_eq!(r.u_spec.hidden_widths, vec![6, 6]);
    assert_eq!(r.u_spec.activations.len(), 2);
}

#[test]
fn echo_round_trips_through_json() {
    for name in ["eq_weak", "exp_parabolic_st_d5", "exp_parabolic_cn_d5"] {
        let r = resolve(&tiny(name)).unwrap();
        let text = serde_json::to_string_pretty(&r.echo()).unwrap();
        let back = resolve(&ExperimentConfig::from_json(&text).unwrap()).unwrap();
        assert_eq!(back.train, r.train, "{name}");
        assert_eq!(back.u_spec, r.u_spec);
        assert_eq!(back.phi_spec, r.phi_spec);
        assert_eq!(back.algorithm, r.algorithm);
        assert_eq!(back.digest(), r.digest());
    }
}

#[test]
fn inline_problem_round_trips() {
    let p = library_entry("poisson_l_d5").unwrap().problem;
    let mut c = tiny("unused");
    c.problem = ProblemRef::Inline(Box::new(p));
    let r = resolve(&c).unwrap();
    assert!(r.reported_error.is_none());
    let text = serde_json::to_string(&r.echo()).unwrap();
    let back = resolve(&ExperimentConfig::from_json(&text).unwrap()).unwrap();
    assert_eq!(back.digest(), r.digest());
}

#[test]
fn digest_tracks_settings_but_not_output_dir() {
    let a = resolve(&tiny("eq_weak")).unwrap();
    let mut b = a.clone();
    b.output_dir = Some("elsewhere".into());
    assert_eq!(a.digest(), b.digest());
    assert_eq!(a.digest().len(), 16);
    b.train.seed += 1;
    assert_ne!(a.digest(), b.digest());
}

#[test]
fn malformed_configs_are_config_errors() {
    let cases = [
        "{",
        r#"{"problem": "eq_weak", "bogus": 1}"#,
        r#"{"problem": "no_such_problem"}"#,
        r#"{"problem": "eq_weak", "train": {"n_interior": 0}}"#,
        r#"{"problem": "eq_weak", "train": {"tau_theta": "fast"}}"#,
        r#"{"problem": "eq_weak", "algorithm": {"kind": "space_time"}}"#,
        r#"{"problem": "exp_parabolic_cn_d5", "boundary_weight": {"kind": "learned", "layers": 2, "width": 4,
            "pretrain": {"epsilon": 0.1, "iterations": 1, "tau": 0.01, "n_interior": 8, "n_boundary": 8, "seed": 0}}}"#,
    ];
    for text in cases {
        let err = ExperimentConfig::from_json(text).and_then(|c| resolve(&c)).unwrap_err();
        assert!(matches!(err, WanError::Config(_)), "{text}: {err}");
    }
}

#[test]
fn syntax_errors_report_line_numbers() {
    let err = ExperimentConfig::from_json("{\n  \"problem\": \"eq_weak\",\n  oops\n}").unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
}

#[test]
fn unknown_reproduce_id_lists_valid_ids() {
    match reproduce_plan("nope", Scale::Desk) {
        Err(WanError::UnknownExperiment { id, valid }) => {
            assert_eq!(id, "nope");
            assert!(valid.contains("nonsmooth"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn every_reproduce_id_plans_at_both_scales() {
    for id in REPRODUCE_IDS {
        for scale in [Scale::Desk, Scale::Paper] {
            let plan = reproduce_plan(id, scale).unwrap();
            assert!(!plan.is_empty(), "{id}");
            let mut labels: Vec<_> = plan.iter().map(|p| p.label.clone()).collect();
            labels.sort();
            labels.dedup();
            assert_eq!(labels.len(), plan.len(), "{id}: duplicate labels");
        }
    }
}

#[test]
fn desk_scaling_keeps_per_point_boundary_weight() {
    let paper = &reproduce_plan("nonl_cube", Scale::Paper).unwrap()[0].experiment;
    let desk = &reproduce_plan("nonl_cube", Scale::Desk).unwrap()[0].experiment;
    let per_point = |r: &ResolvedExperiment| r.train.alpha / r.train.n_boundary as f64;
    assert!((per_point(paper) - per_point(desk)).abs() <= 1e-12 * per_point(paper));
    assert_eq!(desk.train.n_interior, 2000);
    assert_eq!(desk.u_spec.hidden_widths, vec![20; 4]);

    let st = &reproduce_plan("exp_parabolic_st", Scale::Desk).unwrap()[0].experiment;
    assert_eq!(st.train.gamma, st.train.alpha);
    assert_eq!(st.train.n_initial, st.train.n_boundary);
}

#[test]
fn run_writes_artifacts_and_resumable_state() {
    let dir = scratch("run");
    let r = resolve(&tiny("smooth_poisson_d5")).unwrap();
    let mut seen = 0;
    let s = run_experiment(&r, &dir, |_| seen += 1).unwrap();
    assert_eq!(seen, 3);
    assert_eq!(s.status, RunStatus::Completed);
    assert_eq!(s.iterations, 6);
    assert_eq!(s.config_digest, r.digest());
    assert!(s.final_rel_error.unwrap().is_finite());

    let trace = fs::read_to_string(dir.join(TRACE_FILE)).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some(TRACE_HEADER));
    assert_eq!(lines.count(), 3);

    let echoed = ExperimentConfig::load(dir.join(CONFIG_FILE)).unwrap();
    assert_eq!(echoed.config_digest.as_deref(), Some(s.config_digest.as_str()));
    assert_eq!(resolve(&echoed).unwrap().digest(), s.config_digest);

    let saved: SavedState = serde_json::from_str(&fs::read_to_string(dir.join(STATE_FILE)).unwrap()).unwrap();
    assert_eq!(saved.state.iteration, 6);
    let (spec, params) = load_checkpoint(dir.join(NETWORK_FILE)).unwrap();
    assert_eq!(spec, saved.state.u.spec);
    assert_eq!(params, saved.state.u.params);
    assert_eq!(Summary::load(dir.join(SUMMARY_FILE)).unwrap(), s);

    let spec = SliceSpec::default_for(&r.network_domain(), 9);
    let out = export(&dir.join(NETWORK_FILE), &r, &spec, &dir.join("export")).unwrap();
    assert_eq!(out.files.len(), 4);
    let m = Manifest::load(&dir.join("export")).unwrap();
    assert_eq!(m.config_digest, s.config_digest);
    assert_eq!(m.files.len(), 4);
    let m = Manifest::load(&dir).unwrap();
    assert!(m.files.iter().any(|e| e.name == TRACE_FILE));
    assert!(m.stale(&dir).is_empty());
    assert_eq!(out.slice.values.len(), 81);
    assert!(out.error_slice.is_some());
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn semidiscrete_run_writes_per_step_networks() {
    let dir = scratch("cn");
    let mut c = tiny("exp_parabolic_cn_d5");
    c.algorithm = Some(Algorithm::SemiDiscrete { steps: 2 });
    c.train.insert("max_iterations".into(), 2.into());
    c.train.insert("log_every".into(), 1.into());
    let r = resolve(&c).unwrap();
    assert_eq!(r.u_spec.input_dim, 5);
    let s = run_experiment(&r, &dir, |_| {}).unwrap();
    assert_eq!(s.step_errors.as_ref().unwrap().len(), 2);
    assert!(dir.join("u_step001.wanprm").exists());
    assert!(dir.join("u_step002.wanprm").exists());
    let trace = fs::read_to_string(dir.join(TRACE_FILE)).unwrap();
    assert_eq!(trace.lines().count(), 5);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn comparison_table_formats() {
    let rows = vec![ComparisonRow {
        label: "a".into(),
        problem: "p".into(),
        dim: 5,
        iterations: 10,
        seconds: 1.5,
        observed_error: Some(0.0123),
        reported_error: None,
        status: RunStatus::Completed,
    }];
    let mut buf = Vec::new();
    write_comparison_csv(&rows, &mut buf).unwrap();
    let csv = String::from_utf8(buf).unwrap();
    assert_eq!(csv.lines().nth(1), Some("a,p,5,10,1.500,0.012300,,completed"));
    assert!(format_comparison(&rows).contains("1.23%"));
}

#[test]
fn slice_syntax() {
    let cube = Domain::unit_cube(3).with_time(1.0);
    let s = parse_slice("x1,x2", &cube, 10).unwrap();
    assert_eq!(s.axes, (0, 1));
    assert_eq!(s.fixed, vec![0.5, 0.5, 0.5, 1.0]);
    let s = parse_slice("x3,t:x1=0.25, x2=0", &cube, 10).unwrap();
    assert_eq!(s.axes, (2, 3));
    assert_eq!(s.fixed[..2], [0.25, 0.0]);
    for bad in ["x1", "x1,x1", "x1,x4", "x1,x2:x1=0", "x1,x2:x3", "x1,x2:x3=a", "y,x2"] {
        assert!(matches!(parse_slice(bad, &cube, 10), Err(WanError::Config(_))), "{bad}");
    }
    assert!(parse_slice("x1,t", &Domain::unit_cube(2), 10).is_err());
}
