use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn wan(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wan"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn wan")
}

fn entries(dir: &Path) -> usize {
    fs::read_dir(dir).map(|d| d.count()).unwrap_or(0)
}

const TINY: &str = r#"{
  "problem": "smooth_poisson_d5",
  "u_network": {"layers": 2, "width": 6},
  "phi_network": {"layers": 2, "width": 6},
  "train": {"n_interior": 64, "n_boundary": 40, "max_iterations": 4, "log_every": 2, "seed": 5}
}"#;

#[test]
fn malformed_config_exits_2_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        "{ \"problem\": ",
        r#"{"problem": "smooth_poisson_d5", "unknown": true}"#,
        r#"{"problem": "smooth_poisson_d5", "train": {"k_u": 0}}"#,
        r#"{"problem": "nowhere"}"#,
    ];
    for (i, text) in cases.iter().enumerate() {
        let cfg = tmp.path().join(format!("bad{i}.json"));
        fs::write(&cfg, text).unwrap();
        let before = entries(tmp.path());
        let out = wan(&["solve", cfg.to_str().unwrap(), "--out", "run"], tmp.path());
        assert_eq!(out.status.code(), Some(2), "{text}: {}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(entries(tmp.path()), before, "{text}: outputs were written");
    }
    let out = wan(&["solve", tmp.path().join("bad0.json").to_str().unwrap()], tmp.path());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn unknown_reproduce_id_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = wan(&["reproduce", "no_such_experiment", "--scale", "desk"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nonsmooth") && err.contains("scalability"), "{err}");
    assert_eq!(entries(tmp.path()), 0);
}

#[test]
fn zero_iterations_reports_initial_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.json"), TINY).unwrap();
    let out = wan(&["solve", "c.json", "--max-iterations", "0", "--out", "run", "--quiet"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("run/summary.json")).unwrap()).unwrap();
    assert_eq!(s["iterations"], 0);
    assert_eq!(s["initial_rel_error"], s["final_rel_error"]);
    assert!(s["final_rel_error"].as_f64().unwrap() > 0.0);
}

#[test]
fn solve_export_and_echo_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    fs::write(p.join("c.json"), TINY).unwrap();
    let out = wan(&["solve", "c.json", "--out", "a", "--seed", "9"], p);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.resolved.json", "trace.csv", "summary.json", "u.wanprm", "state.json", "MANIFEST.json"] {
        assert!(p.join("a").join(f).is_file(), "{f}");
    }
    let trace = fs::read_to_string(p.join("a/trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,L_int,L_bdry,L_init,total,pairing,test_norm,rel_error,seconds\n"));

    // Re-running the echoed config reproduces the trace up to timings.
    let out = wan(&["solve", "a/config.resolved.json", "--out", "b", "--quiet"], p);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let strip = |t: String| -> Vec<String> {
        t.lines().map(|l| l.rsplit_once(',').map(|(a, _)| a.to_string()).unwrap_or_default()).collect()
    };
    let a = strip(fs::read_to_string(p.join("a/trace.csv")).unwrap());
    let b = strip(fs::read_to_string(p.join("b/trace.csv")).unwrap());
    assert_eq!(a, b);
    let digest = |d: &str| -> serde_json::Value {
        serde_json::from_str::<serde_json::Value>(&fs::read_to_string(p.join(d).join("summary.json")).unwrap()).unwrap()["config_digest"].clone()
    };
    assert_eq!(digest("a"), digest("b"));

    let out = wan(&["export", "a/u.wanprm", "--slice", "x1,x2:x3=0.25", "--resolution", "21", "--out", "e1"], p);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = wan(&["export", "a/u.wanprm", "--slice", "x1,x2:x3=0.25", "--resolution", "21", "--out", "e2"], p);
    assert!(out.status.success());
    for f in ["slice.csv", "slice.grid", "error_slice.csv", "error_slice.grid"] {
        let x = fs::read(p.join("e1").join(f)).unwrap();
        assert_eq!(x, fs::read(p.join("e2").join(f)).unwrap(), "{f} differs between exports");
    }
    let csv = fs::read_to_string(p.join("e1/slice.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("x1,x2,value,mask"));
    assert_eq!(csv.lines().count(), 1 + 21 * 21);
    for line in csv.lines().skip(1) {
        let v: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!(v.is_finite());
    }
}

#[test]
fn export_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let out = wan(&["export", "missing.wanprm", "--slice", "x1,x2"], tmp.path());
    assert_eq!(out.status.code(), Some(1));

    fs::write(tmp.path().join("c.json"), TINY).unwrap();
    assert!(wan(&["solve", "c.json", "--out", "a", "--max-iterations", "0", "--quiet"], tmp.path()).status.success());
    let out = wan(&["export", "a/u.wanprm", "--slice", "x1,x9"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn check_with_injected_fault_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = wan(&["check", "--inject-fault", "grad-sign", "--out", "c"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let grad = stdout.lines().find(|l| l.contains("gradient.finite_difference")).unwrap();
    assert!(grad.starts_with("FAIL"), "{grad}");
    let json: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(tmp.path().join("c/checks.json")).unwrap()).unwrap();
    assert_eq!(json.len(), 9);
}

#[test]
fn check_passes_on_a_clean_build() {
    let tmp = tempfile::tempdir().unwrap();
    let out = wan(&["check"], tmp.path());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 9);
}
