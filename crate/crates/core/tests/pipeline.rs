use std::fs;
use std::path::PathBuf;

use wan_core::experiment::{resolve, run_experiment, ExperimentConfig, SavedState, NETWORK_FILE, STATE_FILE};
use wan_core::network::load_checkpoint;
use wan_core::trainer::Trainer;

fn config(iterations: usize) -> ExperimentConfig {
    ExperimentConfig::from_json(&format!(
        r#"{{
            "problem": "nonl_cube_d5",
            "u_network": {{ "layers": 2, "width": 6 }},
            "phi_network": {{ "layers": 2, "width": 6 }},
            "train": {{ "n_interior": 64, "n_boundary": 40, "max_iterations": {iterations}, "log_every": 1, "seed": 11 }}
        }}"#
    ))
    .unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("wan-pipeline-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

#[test]
fn resuming_from_saved_state_matches_an_uninterrupted_run() {
    let (full_dir, half_dir) = (scratch("full"), scratch("half"));
    let full = resolve(&config(6)).unwrap();
    run_experiment(&full, &full_dir, |_| {}).unwrap();
    let half = resolve(&config(3)).unwrap();
    run_experiment(&half, &half_dir, |_| {}).unwrap();

    let saved: SavedState = serde_json::from_str(&fs::read_to_string(half_dir.join(STATE_FILE)).unwrap()).unwrap();
    assert_eq!(saved.state.iteration, 3);
    let mut t = Trainer::resume(&full.problem, saved.state, full.train.clone()).unwrap();
    t.run().unwrap();
    let resumed = t.into_state();

    let (_, params) = load_checkpoint(full_dir.join(NETWORK_FILE)).unwrap();
    assert_eq!(resumed.u.params, params);
    let expected: SavedState = serde_json::from_str(&fs::read_to_string(full_dir.join(STATE_FILE)).unwrap()).unwrap();
    let losses = |s: &wan_core::trainer::TrainState| s.trace.records.iter().map(|r| r.loss.total).collect::<Vec<_>>();
    assert_eq!(losses(&resumed), losses(&expected.state));
    fs::remove_dir_all(full_dir).unwrap();
    fs::remove_dir_all(half_dir).unwrap();
}
