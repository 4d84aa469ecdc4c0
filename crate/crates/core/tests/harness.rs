//! End-to-end checks of the experiment runner and the report.

use std::path::Path;
use std::time::{Duration, Instant};

use bcpo::data::{load_dataset, sample_tabular_dataset, save_dataset};
use bcpo::envs::{make_gridworld, EnvConfig, GridworldParams};
use bcpo::experiment::{gen_data, parse_spec, report, run_experiment, ExperimentSpec, ResultsFile};
use bcpo::mdp::TabularPolicy;

fn spec(n: usize, seeds: &[u64], algorithms: &str) -> ExperimentSpec {
    parse_spec(&format!(
        r#"{{
  "name": "harness",
  "env": {{"env_kind": "gridworld", "seed": 11, "n_states": 5, "n_actions": 2}},
  "dataset": {{"n": {n}, "seed": 3, "behavior": {{"kind": "optimal_mix", "epsilon": 0.2}}}},
  "algorithms": [{algorithms}],
  "seeds": {seeds:?}
}}"#
    ))
    .unwrap()
}

const PSPI: &str = r#"{"algorithm": "pspi", "t_rounds": 30, "eta": 1.0, "lambda": 50.0}"#;
const QL: &str = r#"{"algorithm": "qlearning", "sweeps": 50}"#;

fn load_results(dir: &Path) -> ResultsFile {
    serde_json::from_str(&std::fs::read_to_string(dir.join("results.json")).unwrap()).unwrap()
}

#[test]
fn three_seeds_give_three_records_and_one_aggregate() {
    let tmp = tempfile::tempdir().unwrap();
    let summary = run_experiment(&spec(300, &[1, 2, 3], PSPI), tmp.path(), Some(2)).unwrap();
    assert!(summary.all_ok());
    let results = load_results(tmp.path());
    assert_eq!(results.records.len(), 3);
    assert_eq!(results.aggregates.len(), 1);
    assert_eq!(results.aggregates[0].n_seeds, 3);
    assert!(results
        .records
        .iter()
        .all(|r| r.j_behavior.is_some() && r.j_exact.is_some()));
    let seeds: Vec<u64> = results.records.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, [1, 2, 3]);
}

#[test]
fn identical_specs_give_identical_results() {
    let tmp = tempfile::tempdir().unwrap();
    let s = spec(300, &[0, 1], &format!("{PSPI}, {QL}"));
    run_experiment(&s, &tmp.path().join("a"), None).unwrap();
    run_experiment(&s, &tmp.path().join("b"), None).unwrap();
    let read = |d: &str| std::fs::read(tmp.path().join(d).join("results.json")).unwrap();
    assert_eq!(read("a"), read("b"));
}

#[test]
fn gridworld_data_generation_is_fast() {
    let tmp = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let files = gen_data(&spec(10_000, &[0], PSPI), tmp.path()).unwrap();
    let took = start.elapsed();
    assert_eq!(files.len(), 1);
    assert!(took < Duration::from_secs(10), "gen-data took {took:?}");
}

#[test]
fn million_transition_file_loads_quickly() {
    let env = EnvConfig::gridworld(
        2,
        GridworldParams {
            n_states: 10,
            n_actions: 3,
            branching: 2,
            reward_sparsity: 0.0,
            gamma: 0.9,
        },
    );
    let mdp = make_gridworld(&env).unwrap();
    let uniform = TabularPolicy::uniform(mdp.n_states(), mdp.n_actions());
    let ds = sample_tabular_dataset(&env, &mdp, &uniform, 1_000_000, 0).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("big.jsonl");
    save_dataset(&ds, &path).unwrap();
    let start = Instant::now();
    let back = load_dataset(&path).unwrap();
    let took = start.elapsed();
    assert_eq!(back.len(), 1_000_000);
    assert!(took < Duration::from_secs(30), "load took {took:?}");
}

#[test]
fn full_tabular_comparison_fits_the_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let mut s = bcpo::experiment::load_spec(
        &Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs/gridworld_small.json"),
    )
    .unwrap();
    s.seeds = (0..20).collect();
    assert_eq!(s.algorithms.len(), 5);
    let start = Instant::now();
    let summary = run_experiment(&s, tmp.path(), None).unwrap();
    let took = start.elapsed();
    assert!(summary.all_ok());
    assert_eq!(summary.results.records.len(), 100);
    assert!(took < Duration::from_secs(600), "comparison took {took:?}");
}

#[test]
fn single_result_has_zero_spread() {
    let tmp = tempfile::tempdir().unwrap();
    run_experiment(&spec(300, &[4], PSPI), tmp.path(), None).unwrap();
    let rows = report(tmp.path()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].std, 0.0);
    assert_eq!(rows[0].n_seeds, 1);
}

#[test]
fn report_has_one_row_per_algorithm_and_size() {
    let tmp = tempfile::tempdir().unwrap();
    let algs = format!("{PSPI}, {QL}");
    for n in [200, 400, 800] {
        run_experiment(
            &spec(n, &[0, 1, 2], &algs),
            &tmp.path().join(format!("n{n}")),
            None,
        )
        .unwrap();
    }
    let rows = report(tmp.path()).unwrap();
    assert_eq!(rows.len(), 2 * 3);

    // Welford's one-pass recurrence as an independent oracle for the two-pass report.
    for row in &rows {
        let results = load_results(&tmp.path().join(format!("n{}", row.x)));
        let (mut k, mut mean, mut m2) = (0.0, 0.0, 0.0);
        for r in results
            .records
            .iter()
            .filter(|r| r.algorithm == row.algorithm)
        {
            let x = r.score().unwrap();
            k += 1.0;
            let d = x - mean;
            mean += d / k;
            m2 += d * (x - mean);
        }
        assert_eq!(k as usize, row.n_seeds);
        assert!((mean - row.mean).abs() <= 1e-12 * mean.abs().max(1.0));
        assert!(((m2 / k).sqrt() - row.std).abs() <= 1e-12 * mean.abs().max(1.0));
    }
}
