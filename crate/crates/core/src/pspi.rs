//! Pessimistic soft policy iteration.
//!
//! Each round evaluates the current softmax policy pessimistically, then takes an
//! exponentiated-gradient step. With linear `f_t = φᵀθ_t` the multiplicative update
//! `π_{t+1} ∝ π_t·exp(η f_t)` collapses to `π_{t+1} ∝ exp(φᵀθ_cum)` with
//! `θ_cum = η Σ_{k≤t} θ_k`, so every iterate is a softmax-linear policy.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bellman::{LinearBellmanForm, MomentBuilder, MomentMatrices};
use crate::envs::{Cartpole, CartpoleState};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::mdp::{policy_return, QTable, TabularMdp, TabularPolicy};
use crate::pessimism::{pessimistic_eval_with_form, PessimisticEvalConfig};
use crate::state::{Policy, State};

/// `(λ, η) = (∛(Vmax/((1−γ)²ε_r²)), √(log|A|/(2Vmax²T)))`.
pub fn default_hyperparams(
    vmax: f64,
    gamma: f64,
    eps_r: f64,
    n_actions: usize,
    t_rounds: usize,
) -> Result<(f64, f64)> {
    if n_actions == 0 {
        return Err(Error::InvalidConfig("n_actions must be at least 1".into()));
    }
    Ok((
        default_lambda(vmax, gamma, eps_r)?,
        default_eta(vmax, (n_actions as f64).ln(), t_rounds)?,
    ))
}

pub fn default_lambda(vmax: f64, gamma: f64, eps_r: f64) -> Result<f64> {
    if !(vmax > 0.0 && eps_r > 0.0 && (0.0..1.0).contains(&gamma)) {
        return Err(Error::InvalidConfig(
            "lambda default needs vmax > 0, eps_r > 0, gamma in [0, 1)".into(),
        ));
    }
    Ok((vmax / ((1.0 - gamma).powi(2) * eps_r * eps_r)).cbrt())
}

/// `η` from `log|A|` directly.
pub fn default_eta(vmax: f64, log_actions: f64, t_rounds: usize) -> Result<f64> {
    if !(vmax > 0.0 && t_rounds > 0 && log_actions >= 0.0) {
        return Err(Error::InvalidConfig(
            "eta default needs vmax > 0 and T >= 1".into(),
        ));
    }
    Ok((log_actions / (2.0 * vmax * vmax * t_rounds as f64)).sqrt())
}

/// Critical radius for a `d`-dimensional linear class, `Vmax²·d·log(n/δ)/n`.
pub fn linear_class_epsilon(n: usize, vmax: f64, d: usize, delta: f64) -> Result<f64> {
    if n == 0 || d == 0 || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidConfig(
            "need n, d >= 1 and delta in (0, 1)".into(),
        ));
    }
    Ok(vmax * vmax * d as f64 * (n as f64 / delta).ln() / n as f64)
}

/// Writes the softmax of `scores` into `out`.
pub fn softmax_into(scores: &[f64], out: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, s) in out.iter_mut().zip(scores) {
        *o = (s - max).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

/// `π(a|s) ∝ exp(φ(s, a)ᵀθ_cum)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxLinearPolicy {
    fm: Arc<FeatureMap>,
    theta_cum: DVector<f64>,
}

impl SoftmaxLinearPolicy {
    pub fn new(fm: Arc<FeatureMap>, theta_cum: DVector<f64>) -> Result<Self> {
        if theta_cum.len() != fm.dim() {
            return Err(Error::Shape(format!(
                "theta has length {}, feature map dimension {}",
                theta_cum.len(),
                fm.dim()
            )));
        }
        Ok(SoftmaxLinearPolicy { fm, theta_cum })
    }

    pub fn uniform(fm: Arc<FeatureMap>) -> Self {
        let d = fm.dim();
        SoftmaxLinearPolicy {
            fm,
            theta_cum: DVector::zeros(d),
        }
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta_cum
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.fm
    }
}

impl Policy for SoftmaxLinearPolicy {
    fn n_actions(&self) -> usize {
        self.fm.n_actions()
    }

    fn action_probs(&self, s: &State, out: &mut [f64]) {
        let scores = self.fm.action_scores(s, self.theta_cum.as_slice());
        softmax_into(&scores, out);
    }
}

/// Uniform trajectory-level mixture of softmax-linear policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePolicy {
    feature_map: Arc<FeatureMap>,
    /// `θ_cum` of each component, in round order.
    components: Vec<Vec<f64>>,
}

impl MixturePolicy {
    pub fn new(feature_map: Arc<FeatureMap>, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidPolicy(
                "mixture needs at least one component".into(),
            ));
        }
        let d = feature_map.dim();
        if components.iter().any(|c| c.len() != d) {
            return Err(Error::Shape(
                "mixture component length differs from dim".into(),
            ));
        }
        Ok(MixturePolicy {
            feature_map,
            components,
        })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn feature_map(&self) -> &Arc<FeatureMap> {
        &self.feature_map
    }

    pub fn component(&self, t: usize) -> SoftmaxLinearPolicy {
        SoftmaxLinearPolicy {
            fm: Arc::clone(&self.feature_map),
            theta_cum: DVector::from_column_slice(&self.components[t]),
        }
    }

    pub fn thetas(&self) -> &[Vec<f64>] {
        &self.components
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PspiConfig {
    pub t_rounds: usize,
    /// `None` uses [`default_lambda`] with [`linear_class_epsilon`].
    #[serde(default)]
    pub lambda: Option<f64>,
    /// `None` uses [`default_eta`].
    #[serde(default)]
    pub eta: Option<f64>,
    pub vmax: f64,
    pub gamma: f64,
    #[serde(default)]
    pub rtol: Option<f64>,
    /// Coefficient of `‖θ‖²` added to the evaluation objective (after division by `λ`).
    #[serde(default)]
    pub theta_ridge: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
    /// Record `wall_ms` in the log; off by default so logs are reproducible.
    #[serde(default)]
    pub record_timing: bool,
}

fn default_delta() -> f64 {
    0.1
}

impl PspiConfig {
    pub fn new(t_rounds: usize, vmax: f64, gamma: f64) -> Self {
        PspiConfig {
            t_rounds,
            lambda: None,
            eta: None,
            vmax,
            gamma,
            rtol: None,
            theta_ridge: 0.0,
            delta: default_delta(),
            seed: 0,
            record_timing: false,
        }
    }

    /// `(λ, η)` after filling defaults for a dataset of size `n`, dimension `d`.
    pub fn resolve(&self, n: usize, d: usize, n_actions: usize) -> Result<(f64, f64)> {
        if self.t_rounds == 0 {
            return Err(Error::InvalidConfig("t_rounds must be at least 1".into()));
        }
        let lambda = match self.lambda {
            Some(l) => l,
            None => default_lambda(
                self.vmax,
                self.gamma,
                linear_class_epsilon(n, self.vmax, d, self.delta)?,
            )?,
        };
        let eta = match self.eta {
            Some(e) => e,
            None => default_eta(self.vmax, (n_actions as f64).ln(), self.t_rounds)?,
        };
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda {lambda} must be positive"
            )));
        }
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "eta {eta} must be non-negative"
            )));
        }
        Ok((lambda, eta))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    /// `f_t(s₀, π_t) = φ₀ᵀθ_t`.
    pub pessimistic_value: f64,
    /// `ℰ(f_t, π_t; 𝒟)`.
    pub bellman_penalty: f64,
    /// `None` for the unregularized (LSTDQ) evaluation.
    pub lambda: Option<f64>,
    pub eta: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyIterationOutput {
    pub mixture: MixturePolicy,
    pub log: Vec<RoundLog>,
    /// `θ_t` of each round's evaluation.
    pub evaluations: Vec<Vec<f64>>,
}

/// `π(·|s′ᵢ)` for all transitions of `builder` under `exp(φᵀθ)`.
pub(crate) fn next_state_probs(builder: &MomentBuilder, theta: &DVector<f64>) -> DMatrix<f64> {
    let mut probs = builder.next_scores(theta);
    let na = probs.ncols();
    let mut row = vec![0.0; na];
    let mut out = vec![0.0; na];
    for i in 0..probs.nrows() {
        for a in 0..na {
            row[a] = probs[(i, a)];
        }
        softmax_into(&row, &mut out);
        for a in 0..na {
            probs[(i, a)] = out[a];
        }
    }
    probs
}

/// The shared loop of PSPI and NPG; `evaluate` maps round moments (and the quadratic form
/// of `ℰ` at cutoff `rtol`) to `θ_t`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn soft_policy_iteration<E>(
    builder: &MomentBuilder,
    fm: Arc<FeatureMap>,
    rtol: Option<f64>,
    t_rounds: usize,
    eta: f64,
    lambda: Option<f64>,
    record_timing: bool,
    mut evaluate: E,
) -> Result<PolicyIterationOutput>
where
    E: FnMut(&MomentMatrices, &LinearBellmanForm) -> Result<DVector<f64>>,
{
    let d = fm.dim();
    let mut theta_cum = DVector::zeros(d);
    let mut components = Vec::with_capacity(t_rounds);
    let mut evaluations = Vec::with_capacity(t_rounds);
    let mut log = Vec::with_capacity(t_rounds);
    for round in 1..=t_rounds {
        let start = Instant::now();
        let policy = SoftmaxLinearPolicy::new(Arc::clone(&fm), theta_cum.clone())?;
        components.push(theta_cum.as_slice().to_vec());
        let probs = next_state_probs(builder, &theta_cum);
        let m = builder.moments_from_probs(&probs, builder.start_features(&policy));
        let wrap = |e: Error| Error::Round {
            round,
            source: Box::new(e),
        };
        let rtol = rtol.unwrap_or_else(|| builder.default_rtol());
        let form = builder
            .sigma_pinv(rtol)
            .and_then(|p| m.bellman_form_with_pinv(p))
            .map_err(wrap)?;
        let theta_t = evaluate(&m, &form).map_err(wrap)?;
        let penalty = form.eval(&theta_t);
        log.push(RoundLog {
            round,
            pessimistic_value: m.phi0.dot(&theta_t),
            bellman_penalty: penalty,
            lambda,
            eta,
            wall_ms: if record_timing {
                start.elapsed().as_millis() as u64
            } else {
                0
            },
        });
        theta_cum += &theta_t * eta;
        evaluations.push(theta_t.as_slice().to_vec());
    }
    Ok(PolicyIterationOutput {
        mixture: MixturePolicy::new(fm, components)?,
        log,
        evaluations,
    })
}

/// Runs PSPI from the uniform policy. `start_states` define `φ₀ = E_{s₀}[φ(s₀, π)]`.
pub fn run_pspi(
    ds: &crate::data::Dataset,
    fm: Arc<FeatureMap>,
    start_states: &[State],
    cfg: &PspiConfig,
) -> Result<PolicyIterationOutput> {
    let builder = MomentBuilder::new(ds, &fm, start_states)?;
    run_pspi_with(&builder, Arc::clone(&fm), cfg)
}

/// [`run_pspi`] on a prebuilt moment cache (`builder` must use `fm`).
pub fn run_pspi_with(
    builder: &MomentBuilder,
    fm: Arc<FeatureMap>,
    cfg: &PspiConfig,
) -> Result<PolicyIterationOutput> {
    let (lambda, eta) = cfg.resolve(builder.n(), fm.dim(), fm.n_actions())?;
    let eval_cfg = PessimisticEvalConfig {
        lambda,
        rtol: cfg.rtol,
        ridge: cfg.theta_ridge,
    };
    soft_policy_iteration(
        builder,
        fm,
        cfg.rtol,
        cfg.t_rounds,
        eta,
        Some(lambda),
        cfg.record_timing,
        |m, form| pessimistic_eval_with_form(m, form, &eval_cfg),
    )
}

/// Materializes a softmax-linear policy on every state of a one-hot tabular map.
pub fn tabularize(pi: &SoftmaxLinearPolicy, n_states: usize) -> Result<TabularPolicy> {
    if n_states > crate::mdp::MAX_PAIRS {
        return Err(Error::InvalidConfig(format!(
            "{n_states} states exceed the tabular cap"
        )));
    }
    TabularPolicy::from_policy(pi, n_states)
}

/// `(1/T) Σ_t J(π_t)`, each component evaluated exactly.
pub fn evaluate_mixture_tabular(mix: &MixturePolicy, mdp: &TabularMdp) -> Result<f64> {
    let values = component_values_tabular(mix, mdp)?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

pub fn component_values_tabular(mix: &MixturePolicy, mdp: &TabularMdp) -> Result<Vec<f64>> {
    (0..mix.len())
        .map(|t| policy_return(mdp, &tabularize(&mix.component(t), mdp.n_states())?))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    /// Sample standard deviation over `√episodes`.
    pub std_error: f64,
    pub episodes: usize,
}

/// Per-episode generator: stream `episode` of a ChaCha8 generator seeded with `seed`.
pub fn episode_rng(seed: u64, episode: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode);
    rng
}

/// Mean discounted return over `episodes` episodes, each following one uniformly drawn
/// component for its whole length.
pub fn evaluate_mixture_cartpole(
    mix: &MixturePolicy,
    env: &Cartpole,
    episodes: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if episodes == 0 {
        return Err(Error::InvalidConfig("episodes must be at least 1".into()));
    }
    let returns: Vec<f64> = (0..episodes)
        .into_par_iter()
        .map(|k| {
            let mut rng = episode_rng(seed, k as u64);
            let pi = mix.component(rng.random_range(0..mix.len()));
            let mut probs = vec![0.0; pi.n_actions()];
            env.run_episode(&mut rng, |s: &CartpoleState, r: &mut ChaCha8Rng| {
                pi.action_probs(&State::Continuous(s.to_vec()), &mut probs);
                sample_categorical(&probs, r)
            })
            .discounted_return
        })
        .collect();
    Ok(summarize(&returns))
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    probs.len() - 1
}

pub(crate) fn summarize(returns: &[f64]) -> MonteCarloEstimate {
    let k = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / k;
    let var = if returns.len() > 1 {
        returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    MonteCarloEstimate {
        mean,
        std_error: (var / k).sqrt(),
        episodes: returns.len(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretCheck {
    /// `max_a Σ_t f_t(s, a) − Σ_t ⟨π_t(·|s), f_t(s, ·)⟩` per state.
    pub regret: Vec<f64>,
    /// `2Vmax·√(2T·log|A|)`.
    pub bound: f64,
}

/// Replays `π_{t+1}(·|s) ∝ π_t(·|s)·exp(η f_t(s, ·))` from uniform against a fixed payoff
/// sequence.
pub fn mirror_descent_regret_check(
    f_sequence: &[QTable],
    eta: f64,
    vmax: f64,
) -> Result<RegretCheck> {
    let first = f_sequence
        .first()
        .ok_or_else(|| Error::InvalidConfig("empty payoff sequence".into()))?;
    let (ns, na) = (first.n_states, first.n_actions);
    if f_sequence
        .iter()
        .any(|f| f.n_states != ns || f.n_actions != na)
    {
        return Err(Error::Shape("payoff tables differ in shape".into()));
    }
    let mut cum = vec![0.0; ns * na];
    let mut earned = vec![0.0; ns];
    let mut probs = vec![0.0; na];
    let mut logits = vec![0.0; na];
    for f in f_sequence {
        for s in 0..ns {
            for a in 0..na {
                logits[a] = eta * cum[s * na + a];
            }
            softmax_into(&logits, &mut probs);
            for a in 0..na {
                let v = f.get(s, a);
                earned[s] += probs[a] * v;
                cum[s * na + a] += v;
            }
        }
    }
    let regret = (0..ns)
        .map(|s| {
            cum[s * na..(s + 1) * na]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
                - earned[s]
        })
        .collect();
    let t = f_sequence.len() as f64;
    Ok(RegretCheck {
        regret,
        bound: 2.0 * vmax * (2.0 * t * (na as f64).ln()).sqrt(),
    })
}

/// CSV with header `round,pessimistic_value,bellman_penalty,lambda,eta,wall_ms`;
/// an absent `λ` is written as `inf`.
pub fn write_round_log_csv<W: Write>(log: &[RoundLog], mut w: W) -> Result<()> {
    writeln!(
        w,
        "round,pessimistic_value,bellman_penalty,lambda,eta,wall_ms"
    )?;
    for r in log {
        let lambda = r
            .lambda
            .map_or_else(|| "inf".to_string(), |l| l.to_string());
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.round, r.pessimistic_value, r.bellman_penalty, lambda, r.eta, r.wall_ms
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_tabular_dataset, Dataset};
    use crate::envs::{make_gridworld, EnvConfig, GridworldParams};
    use crate::features::one_hot;
    use crate::mdp::optimal_q;

    fn gridworld(seed: u64) -> (EnvConfig, TabularMdp) {
        let env = EnvConfig::gridworld(
            seed,
            GridworldParams {
                n_states: 5,
                n_actions: 2,
                branching: 2,
                reward_sparsity: 0.0,
                gamma: 0.9,
            },
        );
        let mdp = make_gridworld(&env).unwrap();
        (env, mdp)
    }

    fn uniform_data(seed: u64, n: usize) -> (TabularMdp, Dataset) {
        let (env, mdp) = gridworld(seed);
        let behavior = TabularPolicy::uniform(5, 2);
        let ds = sample_tabular_dataset(&env, &mdp, &behavior, n, seed).unwrap();
        (mdp, ds)
    }

    #[test]
    fn hyperparameter_formulas() {
        let (l, _) = default_hyperparams(1.0, 0.0, 1.0, 2, 1).unwrap();
        assert!((l - 1.0).abs() < 1e-15);
        let eta = default_eta(1.0, 2.0, 8).unwrap();
        assert!((eta - (2.0f64 / 16.0).sqrt()).abs() < 1e-15);
        let a = default_lambda(3.0, 0.5, 0.2).unwrap();
        let b = default_lambda(3.0, 0.5, 0.2 / 8.0).unwrap();
        assert!((b / a - 4.0).abs() < 1e-12);
        assert!(default_lambda(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn softmax_is_normalized_and_stable() {
        let mut out = [0.0; 3];
        softmax_into(&[1000.0, 1000.0, -1000.0], &mut out);
        assert!((out[0] - 0.5).abs() < 1e-12 && out[2] == 0.0);
        softmax_into(&[0.1, 0.2, 0.3], &mut out);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_eta_gives_uniform_components() {
        let (mdp, ds) = uniform_data(1, 500);
        let fm = Arc::new(one_hot(5, 2).unwrap());
        let mut cfg = PspiConfig::new(4, mdp.vmax(), 0.9);
        cfg.eta = Some(0.0);
        let out = run_pspi(&ds, fm, &[State::Discrete(0)], &cfg).unwrap();
        assert_eq!(out.mixture.len(), 4);
        assert!(out
            .mixture
            .thetas()
            .iter()
            .all(|c| c.iter().all(|&x| x == 0.0)));
        let j = evaluate_mixture_tabular(&out.mixture, &mdp).unwrap();
        let ju = policy_return(&mdp, &TabularPolicy::uniform(5, 2)).unwrap();
        assert!((j - ju).abs() < 1e-12);
    }

    #[test]
    fn single_round() {
        let (mdp, ds) = uniform_data(2, 500);
        let fm = Arc::new(one_hot(5, 2).unwrap());
        let out = run_pspi(
            &ds,
            fm,
            &[State::Discrete(0)],
            &PspiConfig::new(1, mdp.vmax(), 0.9),
        )
        .unwrap();
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.mixture.len(), 1);
        assert_eq!(out.log[0].round, 1);
    }

    #[test]
    fn collapse_matches_tabular_multiplicative_update() {
        let (mdp, ds) = uniform_data(3, 2000);
        let fm = Arc::new(one_hot(5, 2).unwrap());
        let mut cfg = PspiConfig::new(6, mdp.vmax(), 0.9);
        cfg.eta = Some(0.3);
        let out = run_pspi(&ds, Arc::clone(&fm), &[State::Discrete(0)], &cfg).unwrap();
        // π_{t+1}(a|s) ∝ π_t(a|s)·exp(η f_t(s, a)) with f_t(s, a) = θ_t[s·|A| + a].
        let mut pi = [0.5; 10];
        for t in 0..6 {
            let comp = tabularize(&out.mixture.component(t), 5).unwrap();
            for (p, q) in pi.iter().zip(comp.as_slice()) {
                assert!((p - q).abs() < 1e-10, "round {t}: {p} vs {q}");
            }
            let f = &out.evaluations[t];
            for s in 0..5 {
                let w: Vec<f64> = (0..2)
                    .map(|a| pi[s * 2 + a] * (0.3 * f[s * 2 + a]).exp())
                    .collect();
                let z: f64 = w.iter().sum();
                for a in 0..2 {
                    pi[s * 2 + a] = w[a] / z;
                }
            }
        }
    }

    #[test]
    fn snapshots_depend_only_on_the_prefix() {
        let (mdp, ds) = uniform_data(4, 1000);
        let fm = Arc::new(one_hot(5, 2).unwrap());
        let mut cfg = PspiConfig::new(3, mdp.vmax(), 0.9);
        cfg.eta = Some(0.2);
        let short = run_pspi(&ds, Arc::clone(&fm), &[State::Discrete(0)], &cfg).unwrap();
        cfg.t_rounds = 5;
        let long = run_pspi(&ds, fm, &[State::Discrete(0)], &cfg).unwrap();
        assert_eq!(short.mixture.thetas(), &long.mixture.thetas()[..3]);
        assert_eq!(short.log, long.log[..3].to_vec());
    }

    #[test]
    fn softmax_shift_invariance() {
        let fm = Arc::new(one_hot(2, 3).unwrap());
        let theta = DVector::from_vec(vec![0.1, 0.5, -0.2, 1.0, 0.0, 0.3]);
        let shifted = &theta + DVector::from_vec(vec![7.0, 7.0, 7.0, -2.0, -2.0, -2.0]);
        let p = SoftmaxLinearPolicy::new(Arc::clone(&fm), theta).unwrap();
        let q = SoftmaxLinearPolicy::new(fm, shifted).unwrap();
        for s in 0..2 {
            let a = p.probs_vec(&State::Discrete(s));
            let b = q.probs_vec(&State::Discrete(s));
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mixture_value_is_component_mean() {
        let (_, mdp) = gridworld(5);
        let fm = Arc::new(one_hot(5, 2).unwrap());
        let q = optimal_q(&mdp, 1e-10);
        let mix = MixturePolicy::new(
            Arc::clone(&fm),
            vec![
                vec![0.0; 10],
                q.values.clone(),
                q.values.iter().map(|v| -v).collect(),
            ],
        )
        .unwrap();
        let vals = component_values_tabular(&mix, &mdp).unwrap();
        for (t, v) in vals.iter().enumerate() {
            let direct = policy_return(&mdp, &tabularize(&mix.component(t), 5).unwrap()).unwrap();
            assert_eq!(*v, direct);
        }
        let j = evaluate_mixture_tabular(&mix, &mdp).unwrap();
        assert!((j - vals.iter().sum::<f64>() / 3.0).abs() < 1e-12);
        let same = MixturePolicy::new(fm, vec![q.values.clone(); 4]).unwrap();
        assert!((evaluate_mixture_tabular(&same, &mdp).unwrap() - vals[1]).abs() < 1e-12);
        assert!(MixturePolicy::new(Arc::new(one_hot(5, 2).unwrap()), vec![]).is_err());
    }

    #[test]
    fn regret_edge_cases() {
        let single: Vec<QTable> = (0..100)
            .map(|t| QTable::new(1, 1, vec![(t % 3) as f64 / 2.0]).unwrap())
            .collect();
        let r = mirror_descent_regret_check(&single, 0.1, 1.0).unwrap();
        assert!(r.regret[0].abs() < 1e-12);
        assert_eq!(r.bound, 0.0);
        let t = 10_000;
        let eta = default_eta(1.0, 2f64.ln(), t).unwrap();
        let constant: Vec<QTable> = (0..t)
            .map(|_| QTable::new(1, 2, vec![1.0, 0.0]).unwrap())
            .collect();
        let r = mirror_descent_regret_check(&constant, eta, 1.0).unwrap();
        assert!(r.regret[0] <= r.bound);
        assert!((r.bound - 2.0 * (2.0 * 1e4 * 2f64.ln()).sqrt()).abs() < 1e-9);
        assert!((r.bound - 235.48).abs() < 0.01);
    }

    #[test]
    fn mixture_serialization_round_trip() {
        let fm = Arc::new(one_hot(2, 2).unwrap());
        let mix = MixturePolicy::new(fm, vec![vec![0.1, 0.2, 0.3, 1.0 / 3.0]]).unwrap();
        let text = serde_json::to_string(&mix).unwrap();
        let back: MixturePolicy = serde_json::from_str(&text).unwrap();
        assert_eq!(back, mix);
    }

    #[test]
    fn log_csv_format() {
        let log = vec![RoundLog {
            round: 1,
            pessimistic_value: 0.5,
            bellman_penalty: 0.25,
            lambda: None,
            eta: 0.1,
            wall_ms: 0,
        }];
        let mut buf = Vec::new();
        write_round_log_csv(&log, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "round,pessimistic_value,bellman_penalty,lambda,eta,wall_ms\n1,0.5,0.25,inf,0.1,0\n"
        );
    }
}
