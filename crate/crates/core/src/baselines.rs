//! Comparison methods: LSTDQ and NPG built on it, offline Q-learning, and Q-learning with a
//! negative elliptical bonus (LCB).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bellman::{LinearBellmanForm, MomentBuilder, MomentMatrices};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::linalg::{condition_number, inverse, minimize_quadratic};
use crate::pessimism::invertible_parts;
use crate::pspi::{soft_policy_iteration, PolicyIterationOutput, PspiConfig, RoundLog};
use crate::state::{Policy, State};

/// Above this condition number `Σ` or `A` is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// `‖Σθ − b − γBθ‖₂`: zero exactly when `θ` is its own regression target.
pub fn lstdq_residual(theta: &DVector<f64>, m: &MomentMatrices) -> f64 {
    (&m.sigma * theta - &m.b_vec - &m.big_b * theta * m.gamma).norm()
}

/// `θ = A⁻¹Σ⁻¹b`; when `Σ` or `A` is (near) singular, the minimum-norm minimizer of `ℰ`.
pub fn lstdq(m: &MomentMatrices) -> Result<DVector<f64>> {
    if let Some(theta) = lstdq_invertible(m)? {
        return Ok(theta);
    }
    let rtol = m.default_rtol();
    let form = m.bellman_form(rtol)?;
    minimize_quadratic(&form.hessian, &form.linear, rtol)
}

fn lstdq_invertible(m: &MomentMatrices) -> Result<Option<DVector<f64>>> {
    if m.n == 0 {
        return Err(Error::EmptyDataset);
    }
    if condition_number(&m.sigma) <= MAX_CONDITION {
        if let Ok((sigma_inv, a_inv)) = invertible_parts(m) {
            if condition_number(&a_inv) <= MAX_CONDITION {
                return Ok(Some(a_inv * (sigma_inv * &m.b_vec)));
            }
        }
    }
    Ok(None)
}

/// [`lstdq`] reusing a precomputed quadratic form for the fallback.
fn lstdq_with_form(m: &MomentMatrices, form: &LinearBellmanForm) -> Result<DVector<f64>> {
    match lstdq_invertible(m)? {
        Some(theta) => Ok(theta),
        None => minimize_quadratic(&form.hessian, &form.linear, m.default_rtol()),
    }
}

/// Soft policy iteration with unregularized LSTDQ evaluation.
pub fn run_npg(
    ds: &Dataset,
    fm: Arc<FeatureMap>,
    start_states: &[State],
    cfg: &PspiConfig,
) -> Result<PolicyIterationOutput> {
    let builder = MomentBuilder::new(ds, &fm, start_states)?;
    run_npg_with(&builder, Arc::clone(&fm), cfg)
}

/// [`run_npg`] on a prebuilt moment cache (`builder` must use `fm`).
pub fn run_npg_with(
    builder: &MomentBuilder,
    fm: Arc<FeatureMap>,
    cfg: &PspiConfig,
) -> Result<PolicyIterationOutput> {
    let (_, eta) = cfg.resolve(builder.n(), fm.dim(), fm.n_actions())?;
    soft_policy_iteration(
        builder,
        fm,
        None,
        cfg.t_rounds,
        eta,
        None,
        cfg.record_timing,
        lstdq_with_form,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QLearningConfig {
    /// Initial step size; sweep `k` uses `alpha/√k`.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_sweeps")]
    pub sweeps: usize,
    pub vmax: f64,
}

fn default_alpha() -> f64 {
    0.1
}

fn default_sweeps() -> usize {
    200
}

impl QLearningConfig {
    pub fn new(vmax: f64) -> Self {
        QLearningConfig {
            alpha: default_alpha(),
            sweeps: default_sweeps(),
            vmax,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcbConfig {
    pub beta: f64,
    /// `Λ = n·Σ + ridge·I`.
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    pub q_learning: QLearningConfig,
}

fn default_ridge() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdOutput {
    pub theta: DVector<f64>,
    /// One row per sweep: greedy start value, mean squared TD error, `λ = None`, `η = α_k`.
    pub log: Vec<RoundLog>,
    pub policy: GreedyLinearPolicy,
}

/// `β·√(φᵀΛ⁻¹φ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipticalBonus {
    pub beta: f64,
    pub lambda_inv: DMatrix<f64>,
}

impl EllipticalBonus {
    pub fn new(builder: &MomentBuilder, beta: f64, ridge: f64) -> Result<Self> {
        if beta < 0.0 || !beta.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "beta {beta} must be non-negative"
            )));
        }
        if ridge <= 0.0 || !ridge.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "ridge {ridge} must be positive"
            )));
        }
        let d = builder.sigma().nrows();
        let lambda = builder.sigma() * builder.n() as f64 + DMatrix::identity(d, d) * ridge;
        let lambda_inv = inverse(&lambda).ok_or_else(|| Error::Shape("Λ is singular".into()))?;
        Ok(EllipticalBonus { beta, lambda_inv })
    }

    pub fn width(&self, phi: &[f64]) -> f64 {
        let v = DVector::from_column_slice(phi);
        (v.dot(&(&self.lambda_inv * &v))).max(0.0).sqrt()
    }

    pub fn bonus(&self, phi: &[f64]) -> f64 {
        self.beta * self.width(phi)
    }
}

/// Deterministic argmax of `φ(s, a)ᵀθ − bonus(s, a)`, lowest action on ties.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyLinearPolicy {
    fm: Arc<FeatureMap>,
    theta: DVector<f64>,
    penalty: Option<EllipticalBonus>,
}

impl GreedyLinearPolicy {
    pub fn new(fm: Arc<FeatureMap>, theta: DVector<f64>, penalty: Option<EllipticalBonus>) -> Self {
        GreedyLinearPolicy { fm, theta, penalty }
    }

    pub fn scores(&self, s: &State) -> Vec<f64> {
        let mut scores = self.fm.action_scores(s, self.theta.as_slice());
        if let Some(p) = &self.penalty {
            let all = self.fm.all_actions(s);
            let d = self.fm.dim();
            for (a, sc) in scores.iter_mut().enumerate() {
                *sc -= p.bonus(&all[a * d..(a + 1) * d]);
            }
        }
        scores
    }

    pub fn action(&self, s: &State) -> usize {
        argmax(&self.scores(s))
    }
}

impl Policy for GreedyLinearPolicy {
    fn n_actions(&self) -> usize {
        self.fm.n_actions()
    }

    fn action_probs(&self, s: &State, out: &mut [f64]) {
        out.fill(0.0);
        out[self.action(s)] = 1.0;
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Semi-gradient TD(0) sweeps with max-over-actions targets and an optional bonus.
fn td_sweeps(
    builder: &MomentBuilder,
    fm: Arc<FeatureMap>,
    start_states: &[State],
    cfg: &QLearningConfig,
    penalty: Option<EllipticalBonus>,
) -> Result<TdOutput> {
    if !(cfg.alpha >= 0.0 && cfg.alpha <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha {} not in [0, 1]",
            cfg.alpha
        )));
    }
    if start_states.is_empty() {
        return Err(Error::InvalidConfig("need at least one start state".into()));
    }
    let (n, d, na) = (builder.n(), fm.dim(), fm.n_actions());
    let gamma = builder.gamma();
    // Row-major caches of φ(sᵢ, aᵢ) and φ(s′ᵢ, a).
    let phi: Vec<f64> = builder.phi().transpose().as_slice().to_vec();
    let next: Vec<Vec<f64>> = (0..na)
        .map(|a| builder.next_phi(a).transpose().as_slice().to_vec())
        .collect();
    let (cur_bonus, next_bonus) = match &penalty {
        Some(p) => (
            (0..n).map(|i| p.bonus(&phi[i * d..(i + 1) * d])).collect(),
            (0..na)
                .map(|a| {
                    (0..n)
                        .map(|i| p.bonus(&next[a][i * d..(i + 1) * d]))
                        .collect()
                })
                .collect(),
        ),
        None => (vec![0.0; n], vec![vec![0.0; n]; na]),
    };
    let rewards = builder.rewards();
    let masks = builder.masks();
    let limit = 1e6 * cfg.vmax;
    let mut theta = vec![0.0; d];
    let mut log = Vec::with_capacity(cfg.sweeps);
    for sweep in 1..=cfg.sweeps {
        let alpha = cfg.alpha / (sweep as f64).sqrt();
        let mut sq = 0.0;
        for i in 0..n {
            let x = &phi[i * d..(i + 1) * d];
            let mut best = f64::NEG_INFINITY;
            for a in 0..na {
                let v = dot(&next[a][i * d..(i + 1) * d], &theta) - next_bonus[a][i];
                best = best.max(v);
            }
            let target = rewards[i] - cur_bonus[i] + gamma * masks[i] * best;
            let delta = target - dot(x, &theta);
            sq += delta * delta;
            for (t, xi) in theta.iter_mut().zip(x) {
                *t += alpha * delta * xi;
            }
        }
        let norm = dot(&theta, &theta).sqrt();
        if !norm.is_finite() || norm > limit {
            return Err(Error::Divergence { norm, limit, sweep });
        }
        let greedy = GreedyLinearPolicy::new(
            Arc::clone(&fm),
            DVector::from_column_slice(&theta),
            penalty.clone(),
        );
        let start_value = start_states
            .iter()
            .map(|s| {
                greedy
                    .scores(s)
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum::<f64>()
            / start_states.len() as f64;
        log.push(RoundLog {
            round: sweep,
            pessimistic_value: start_value,
            bellman_penalty: sq / n as f64,
            lambda: None,
            eta: alpha,
            wall_ms: 0,
        });
    }
    let theta = DVector::from_vec(theta);
    Ok(TdOutput {
        policy: GreedyLinearPolicy::new(fm, theta.clone(), penalty),
        theta,
        log,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Offline Q-learning: fixed-order sweeps over the dataset from `θ = 0`.
pub fn run_q_learning(
    ds: &Dataset,
    fm: Arc<FeatureMap>,
    start_states: &[State],
    cfg: &QLearningConfig,
) -> Result<TdOutput> {
    let builder = MomentBuilder::new(ds, &fm, start_states)?;
    run_q_learning_with(&builder, Arc::clone(&fm), start_states, cfg)
}

pub fn run_q_learning_with(
    builder: &MomentBuilder,
    fm: Arc<FeatureMap>,
    start_states: &[State],
    cfg: &QLearningConfig,
) -> Result<TdOutput> {
    td_sweeps(builder, fm, start_states, cfg, None)
}

/// Q-learning with rewards and bootstrapped values lowered by `β√(φᵀΛ⁻¹φ)`.
pub fn run_lcb(
    ds: &Dataset,
    fm: Arc<FeatureMap>,
    start_states: &[State],
    cfg: &LcbConfig,
) -> Result<TdOutput> {
    let builder = MomentBuilder::new(ds, &fm, start_states)?;
    run_lcb_with(&builder, Arc::clone(&fm), start_states, cfg)
}

pub fn run_lcb_with(
    builder: &MomentBuilder,
    fm: Arc<FeatureMap>,
    start_states: &[State],
    cfg: &LcbConfig,
) -> Result<TdOutput> {
    let bonus = EllipticalBonus::new(builder, cfg.beta, cfg.ridge)?;
    td_sweeps(builder, fm, start_states, &cfg.q_learning, Some(bonus))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bellman::moment_matrices;
    use crate::data::{
        sample_tabular_dataset, BehaviorDescriptor, DatasetMeta, SamplingScheme, Transition,
    };
    use crate::envs::{make_gridworld, EnvConfig, GridworldParams};
    use crate::features::one_hot;
    use crate::mdp::{exact_q, occupancy, optimal_q, TabularPolicy};

    fn one_state(gamma: f64) -> Dataset {
        let env = EnvConfig::gridworld(
            0,
            GridworldParams {
                n_states: 1,
                n_actions: 1,
                branching: 1,
                reward_sparsity: 0.0,
                gamma,
            },
        );
        let t = Transition {
            s: State::Discrete(0),
            a: 0,
            r: 1.0,
            sp: State::Discrete(0),
            mask: 1,
        };
        Dataset {
            meta: DatasetMeta {
                env,
                behavior: BehaviorDescriptor::Uniform { n_actions: 1 },
                seed: 0,
                n: 1,
                gamma,
                rmax: 1.0,
                sampling: SamplingScheme::ExactOccupancy,
                epsilon_explore: None,
                j_behavior: None,
            },
            transitions: vec![t],
        }
    }

    fn deterministic_grid(seed: u64, n: usize) -> (crate::mdp::TabularMdp, Dataset) {
        let env = EnvConfig::gridworld(
            seed,
            GridworldParams {
                n_states: 5,
                n_actions: 2,
                branching: 1,
                reward_sparsity: 0.0,
                gamma: 0.9,
            },
        );
        let mdp = make_gridworld(&env).unwrap();
        let behavior = TabularPolicy::uniform(5, 2);
        let ds = sample_tabular_dataset(&env, &mdp, &behavior, n, seed).unwrap();
        (mdp, ds)
    }

    #[test]
    fn lstdq_scalar() {
        let ds = one_state(0.9);
        let fm = one_hot(1, 1).unwrap();
        let m = moment_matrices(
            &ds,
            &fm,
            &TabularPolicy::uniform(1, 1),
            &[State::Discrete(0)],
        )
        .unwrap();
        let theta = lstdq(&m).unwrap();
        assert!((theta[0] - 10.0).abs() < 1e-10);
        assert!(lstdq_residual(&theta, &m) < 1e-8);
    }

    #[test]
    fn lstdq_recovers_q_pi_under_coverage() {
        // First seed whose uniform-behavior occupancy covers every pair.
        let seed = (0..)
            .find(|&k| {
                let (mdp, _) = deterministic_grid(k, 1);
                let mu = occupancy(&mdp, &TabularPolicy::uniform(5, 2)).unwrap();
                mu.iter().all(|&p| p > 1e-3)
            })
            .unwrap();
        let (mdp, ds) = deterministic_grid(seed, 100_000);
        let fm = one_hot(5, 2).unwrap();
        let pi = TabularPolicy::deterministic(2, &[0, 1, 1, 0, 1]).unwrap();
        let m = moment_matrices(&ds, &fm, &pi, &[State::Discrete(0)]).unwrap();
        let theta = lstdq(&m).unwrap();
        assert!(lstdq_residual(&theta, &m) < 1e-8);
        let q = exact_q(&mdp, &pi).unwrap();
        for (t, v) in theta.iter().zip(&q.values) {
            assert!((t - v).abs() <= 0.05 * mdp.vmax(), "{t} vs {v}");
        }
    }

    #[test]
    fn q_learning_scalar_contraction() {
        let ds = one_state(0.9);
        let fm = Arc::new(one_hot(1, 1).unwrap());
        let mut cfg = QLearningConfig::new(10.0);
        cfg.alpha = 1.0;
        cfg.sweeps = 5000;
        let out = run_q_learning(&ds, fm, &[State::Discrete(0)], &cfg).unwrap();
        assert!((out.theta[0] - 10.0).abs() < 1e-3, "{}", out.theta[0]);
    }

    #[test]
    fn q_learning_zero_step() {
        let ds = one_state(0.9);
        let fm = Arc::new(one_hot(1, 1).unwrap());
        let mut cfg = QLearningConfig::new(10.0);
        cfg.alpha = 0.0;
        cfg.sweeps = 5;
        let out = run_q_learning(&ds, fm, &[State::Discrete(0)], &cfg).unwrap();
        assert_eq!(out.theta[0], 0.0);
    }

    #[test]
    fn q_learning_greedy_is_optimal_under_coverage() {
        let (mdp, ds) = deterministic_grid(11, 5_000);
        let fm = Arc::new(one_hot(5, 2).unwrap());
        let mut cfg = QLearningConfig::new(mdp.vmax());
        cfg.alpha = 0.5;
        cfg.sweeps = 300;
        let out = run_q_learning(&ds, fm, &[State::Discrete(0)], &cfg).unwrap();
        let opt = optimal_q(&mdp, 1e-12);
        let target = opt.greedy_actions();
        for (s, a) in target.iter().enumerate() {
            assert_eq!(out.policy.action(&State::Discrete(s)), *a, "state {s}");
        }
    }

    #[test]
    fn lcb_with_zero_beta_matches_q_learning() {
        let (mdp, ds) = deterministic_grid(12, 2_000);
        let fm = Arc::new(one_hot(5, 2).unwrap());
        let q = QLearningConfig::new(mdp.vmax());
        let a = run_q_learning(&ds, Arc::clone(&fm), &[State::Discrete(0)], &q).unwrap();
        let lcb = LcbConfig {
            beta: 0.0,
            ridge: 1.0,
            q_learning: q,
        };
        let b = run_lcb(&ds, fm, &[State::Discrete(0)], &lcb).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn bonus_shrinks_with_more_data() {
        let (_, small) = deterministic_grid(13, 1_000);
        let mut big = small.clone();
        big.transitions.extend(small.transitions.iter().cloned());
        big.meta.n = big.transitions.len();
        let fm = one_hot(5, 2).unwrap();
        let bs = MomentBuilder::new(&small, &fm, &[State::Discrete(0)]).unwrap();
        let bb = MomentBuilder::new(&big, &fm, &[State::Discrete(0)]).unwrap();
        let ws = EllipticalBonus::new(&bs, 1.0, 1.0).unwrap();
        let wb = EllipticalBonus::new(&bb, 1.0, 1.0).unwrap();
        for s in 0..5 {
            for a in 0..2 {
                let phi = fm.features(&State::Discrete(s), a).unwrap();
                assert!(wb.width(&phi) <= ws.width(&phi));
            }
        }
        assert!(EllipticalBonus::new(&bs, 1.0, 0.0).is_err());
    }

    #[test]
    fn divergence_is_detected() {
        // A tiny Vmax puts the norm limit below the fixed point θ = 100.
        let ds = one_state(0.99);
        let fm = Arc::new(one_hot(1, 1).unwrap());
        let mut cfg = QLearningConfig::new(1e-9);
        cfg.alpha = 1.0;
        let err = run_q_learning(&ds, fm, &[State::Discrete(0)], &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn npg_zero_eta_is_uniform() {
        let (_, ds) = deterministic_grid(14, 1_000);
        let fm = Arc::new(one_hot(5, 2).unwrap());
        let mut cfg = PspiConfig::new(3, 10.0, 0.9);
        cfg.eta = Some(0.0);
        let out = run_npg(&ds, fm, &[State::Discrete(0)], &cfg).unwrap();
        assert!(out
            .mixture
            .thetas()
            .iter()
            .all(|t| t.iter().all(|&x| x == 0.0)));
        assert!(out.log.iter().all(|r| r.lambda.is_none()));
    }
}
