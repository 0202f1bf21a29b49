use gaitopt::harness::{resume_experiment, run_experiment, ExperimentConfig, Pipeline};
use gaitopt::optimizer::{BaselineMethod, OptimizationHistory};
use std::path::Path;

fn history(dir: &Path, seed: u64) -> OptimizationHistory {
    let text = std::fs::read_to_string(dir.join(format!("seed-{seed}/history.json"))).unwrap();
    OptimizationHistory::from_json(&text).unwrap()
}

fn same_runs(a: &OptimizationHistory, b: &OptimizationHistory) {
    assert_eq!(a.records.len(), b.records.len());
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!((x.iteration, x.tag, x.params, x.v, x.best, x.valid), (y.iteration, y.tag, y.params, y.v, y.best, y.valid));
    }
    assert_eq!(a.posterior_best, b.posterior_best);
}

fn config(out: &Path, pipeline: Pipeline) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        pipeline,
        seeds: vec![2, 9],
        out: out.to_path_buf(),
        method: BaselineMethod::Sa,
        ..Default::default()
    };
    cfg.bo.i_max = 6;
    cfg.baseline.budget = 25;
    cfg
}

#[test]
fn interrupted_bo_resumes_to_the_uninterrupted_result() {
    let tmp = tempfile::tempdir().unwrap();
    let full = tmp.path().join("full");
    let cut = tmp.path().join("cut");
    assert!(run_experiment(&config(&full, Pipeline::Bo), false).unwrap().complete());

    let mut partial = config(&cut, Pipeline::Bo);
    partial.stop_after = Some(12);
    let r = run_experiment(&partial, false).unwrap();
    assert!(!r.complete());
    assert!(r.rows.iter().all(|row| row.evaluations == 12));

    let r = resume_experiment(&cut, None).unwrap();
    assert!(r.complete());
    for seed in [2, 9] {
        same_runs(&history(&full, seed), &history(&cut, seed));
    }
}

#[test]
fn resuming_a_finished_run_changes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("sa");
    run_experiment(&config(&dir, Pipeline::Baseline), false).unwrap();
    let before = std::fs::read(dir.join("seed-2/history.csv")).unwrap();
    let r = resume_experiment(&dir, None).unwrap();
    assert!(r.complete());
    assert_eq!(std::fs::read(dir.join("seed-2/history.csv")).unwrap(), before);
}

#[test]
fn a_different_config_cannot_reuse_a_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("sa");
    run_experiment(&config(&dir, Pipeline::Baseline), false).unwrap();
    let mut other = config(&dir, Pipeline::Baseline);
    other.baseline.budget = 30;
    assert!(matches!(run_experiment(&other, false), Err(gaitopt::Error::Config(_))));
}
