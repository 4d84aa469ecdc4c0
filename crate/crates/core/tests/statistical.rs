//! Seeded statistical checks against exact oracles.

use std::sync::Arc;

use bcpo::baselines::{run_lcb, run_npg, run_q_learning, LcbConfig, QLearningConfig};
use bcpo::data::sample_tabular_dataset;
use bcpo::envs::{make_gridworld, Cartpole, CartpoleParams, EnvConfig, GridworldParams};
use bcpo::experiment::deterministic_policy_class;
use bcpo::features::{one_hot, random_fourier};
use bcpo::mdp::{optimal_q, policy_return, TabularMdp, TabularPolicy};
use bcpo::pessimism::{info_theoretic_select, EpsilonMode};
use bcpo::pspi::{
    evaluate_mixture_cartpole, evaluate_mixture_tabular, run_pspi, MixturePolicy, PspiConfig,
};
use bcpo::State;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

fn grid(seed: u64, ns: usize, na: usize) -> (EnvConfig, TabularMdp) {
    let env = EnvConfig::gridworld(
        seed,
        GridworldParams {
            n_states: ns,
            n_actions: na,
            branching: 2,
            reward_sparsity: 0.0,
            gamma: 0.9,
        },
    );
    let mdp = make_gridworld(&env).unwrap();
    (env, mdp)
}

fn optimal_policy(mdp: &TabularMdp) -> TabularPolicy {
    TabularPolicy::deterministic(mdp.n_actions(), &optimal_q(mdp, 1e-12).greedy_actions()).unwrap()
}

// The class of exact Q-functions is not Bellman complete: with the in-class minimum, every f that
// is its own best in-class fit of T^π f has zero error, so 4 to 13 of the 16 members stay in each
// version space at any ε and the max-min selection misses often (28/100 at the theoretical ε).
#[test]
#[ignore = "unattainable with an incomplete class; run with --ignored to reproduce"]
fn info_theoretic_selection_is_near_optimal() {
    let hits: usize = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let (env, mdp) = grid(300 + seed, 4, 2);
            let uniform = TabularPolicy::uniform(4, 2);
            let ds = sample_tabular_dataset(&env, &mdp, &uniform, 100_000, seed).unwrap();
            let cls = deterministic_policy_class(&mdp, 1024).unwrap();
            let sel =
                info_theoretic_select(&ds, &cls, &EpsilonMode::default(), mdp.vmax(), mdp.s0())
                    .unwrap();
            let best = cls
                .policies
                .iter()
                .map(|p| policy_return(&mdp, p).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            let got = policy_return(&mdp, &cls.policies[sel.policy]).unwrap();
            usize::from(got >= best - 0.05 * mdp.vmax())
        })
        .sum();
    assert!(hits >= 90, "near-optimal selection in {hits}/100 seeds");
}

#[test]
fn pspi_mixture_beats_uniform_policy() {
    let wins: usize = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let (env, mdp) = grid(seed, 5, 2);
            let uniform = TabularPolicy::uniform(5, 2);
            let behavior = optimal_policy(&mdp).mix(&uniform, 0.1).unwrap();
            let ds = sample_tabular_dataset(&env, &mdp, &behavior, 10_000, 50 + seed).unwrap();
            let mut cfg = PspiConfig::new(50, mdp.vmax(), 0.9);
            cfg.eta = Some(0.5);
            let (lambda, _) = cfg.resolve(ds.len(), 10, 2).unwrap();
            cfg.theta_ridge = 1.0 / (2.0 * lambda * mdp.vmax());
            let out = run_pspi(
                &ds,
                Arc::new(one_hot(5, 2).unwrap()),
                &[State::Discrete(0)],
                &cfg,
            )
            .unwrap();
            let j = evaluate_mixture_tabular(&out.mixture, &mdp).unwrap();
            usize::from(j >= policy_return(&mdp, &uniform).unwrap())
        })
        .sum();
    assert!(wins >= 18, "PSPI beat uniform in {wins}/20 seeds");
}

#[test]
fn npg_matches_pspi_under_full_coverage() {
    for seed in 0..10u64 {
        let (env, mdp) = grid(seed, 5, 2);
        let uniform = TabularPolicy::uniform(5, 2);
        let ds = sample_tabular_dataset(&env, &mdp, &uniform, 100_000, seed).unwrap();
        let fm = Arc::new(one_hot(5, 2).unwrap());
        let starts = [State::Discrete(0)];
        let mut cfg = PspiConfig::new(50, mdp.vmax(), 0.9);
        cfg.eta = Some(1.0);
        cfg.lambda = Some(100.0);
        let pspi = run_pspi(&ds, Arc::clone(&fm), &starts, &cfg).unwrap();
        let npg = run_npg(&ds, fm, &starts, &cfg).unwrap();
        let (jp, jn) = (
            evaluate_mixture_tabular(&pspi.mixture, &mdp).unwrap(),
            evaluate_mixture_tabular(&npg.mixture, &mdp).unwrap(),
        );
        assert!(
            (jp - jn).abs() <= 0.05 * mdp.vmax(),
            "seed {seed}: PSPI {jp} NPG {jn}"
        );
    }
}

/// States 0 and 1 alternate under action 0 (reward 0.25). Action 1 pays 1 but falls into the
/// absorbing zero-reward state 3 half of the time. States 2 and 4 are unreachable.
fn trap_mdp() -> TabularMdp {
    let (ns, na) = (5, 2);
    let mut t = vec![0.0; ns * na * ns];
    let mut r = vec![0.0; ns * na];
    let mut set = |s: usize, a: usize, sp: usize, p: f64| t[(s * na + a) * ns + sp] = p;
    for (s, other) in [(0, 1), (1, 0)] {
        set(s, 0, other, 1.0);
        set(s, 1, other, 0.5);
        set(s, 1, 3, 0.5);
        r[s * na] = 0.25;
        r[s * na + 1] = 1.0;
    }
    for s in [2, 3, 4] {
        set(s, 0, s, 1.0);
        set(s, 1, s, 1.0);
    }
    TabularMdp::new(ns, na, t, r, 0.9, 0, 1.0).unwrap()
}

#[test]
fn lcb_is_no_worse_than_q_learning_on_narrow_data() {
    let mdp = trap_mdp();
    let (env, _) = grid(0, 5, 2);
    let safe = TabularPolicy::deterministic(2, &[0, 0, 0, 0, 0]).unwrap();
    assert!(
        policy_return(&mdp, &safe).unwrap()
            > policy_return(&mdp, &TabularPolicy::uniform(5, 2)).unwrap()
    );
    let behavior = safe.mix(&TabularPolicy::uniform(5, 2), 0.1).unwrap();
    let fm = Arc::new(one_hot(5, 2).unwrap());
    let starts = [State::Discrete(0)];
    let ql_cfg = QLearningConfig::new(mdp.vmax());
    let lcb_cfg = LcbConfig {
        beta: 2.0,
        ridge: 1.0,
        q_learning: ql_cfg.clone(),
    };
    let (mut wins, mut strict) = (0, 0);
    for seed in 0..20u64 {
        let ds = sample_tabular_dataset(&env, &mdp, &behavior, 150, seed).unwrap();
        let visited: std::collections::BTreeSet<usize> = ds
            .transitions
            .iter()
            .map(|t| t.s.index().unwrap())
            .collect();
        assert!(
            !visited.contains(&2) && !visited.contains(&4),
            "states 2 and 4 stay uncovered"
        );
        let value = |p: &bcpo::baselines::GreedyLinearPolicy| {
            policy_return(&mdp, &TabularPolicy::from_policy(p, 5).unwrap()).unwrap()
        };
        let jq = value(
            &run_q_learning(&ds, Arc::clone(&fm), &starts, &ql_cfg)
                .unwrap()
                .policy,
        );
        let jl = value(
            &run_lcb(&ds, Arc::clone(&fm), &starts, &lcb_cfg)
                .unwrap()
                .policy,
        );
        wins += usize::from(jl >= jq - 1e-12);
        strict += usize::from(jl > jq + 1e-9);
    }
    assert!(wins >= 15, "LCB ≥ QL in {wins}/20 seeds");
    assert!(
        strict >= 1,
        "the trap never misled Q-learning; the test lost its power"
    );
}

#[test]
fn cartpole_monte_carlo_standard_error() {
    let cart = Cartpole::new(CartpoleParams::default());
    let fm = Arc::new(random_fourier(4, 2, 16, 0.5, 3).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let theta: Vec<f64> = (0..fm.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mix = MixturePolicy::new(fm, vec![vec![0.0; theta.len()], theta]).unwrap();
    let full = evaluate_mixture_cartpole(&mix, &cart, 2000, 21).unwrap();
    assert!(full.std_error <= 0.5, "standard error {}", full.std_error);
    // Batch-splitting: 20 independent batches of 100 episodes.
    let batches: Vec<f64> = (0..20u64)
        .map(|b| {
            evaluate_mixture_cartpole(&mix, &cart, 100, 1000 + b)
                .unwrap()
                .mean
        })
        .collect();
    let m = batches.iter().sum::<f64>() / 20.0;
    let var = batches.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 19.0;
    let batch_se = (var / 20.0).sqrt();
    assert!(batch_se <= 0.5, "batch standard error {batch_se}");
    // Both estimate the same standard error; allow the sampling spread of a 20-batch estimate.
    let ratio = batch_se / full.std_error;
    assert!(
        (0.4..2.5).contains(&ratio),
        "batch SE {batch_se} vs analytic {}",
        full.std_error
    );
    assert!((m - full.mean).abs() <= 4.0 * full.std_error.hypot(batch_se));
}
