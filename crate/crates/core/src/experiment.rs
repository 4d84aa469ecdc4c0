//! Reproducible experiment harness: environment and dataset generation, seeded runs of
//! every algorithm, and plot-ready reports.
//!
//! Every output byte is a function of the spec. Datasets are cached next to a sidecar
//! holding the hash of the inputs that produced them and the hash of the file itself.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{
    run_lcb_with, run_npg_with, run_q_learning_with, LcbConfig, QLearningConfig,
};
use crate::bellman::{FiniteClass, MomentBuilder};
use crate::data::{
    load_dataset, sample_cartpole_dataset, sample_epsilon, sample_tabular_dataset,
    train_cartpole_behavior, BehaviorDescriptor, BehaviorTraining, Dataset,
};
use crate::envs::{make_gridworld, Cartpole, EnvConfig, EnvKind};
use crate::error::{Error, Result};
use crate::features::{median_bandwidth, one_hot, random_fourier, FeatureMap};
use crate::mdp::{exact_q, optimal_q, policy_return, TabularMdp, TabularPolicy};
use crate::pessimism::{info_theoretic_select, EpsilonMode};
use crate::pspi::{
    episode_rng, evaluate_mixture_cartpole, evaluate_mixture_tabular, run_pspi_with, summarize,
    write_round_log_csv, MonteCarloEstimate, PolicyIterationOutput, PspiConfig, RoundLog,
};
use crate::state::{Policy, State};

pub const TOOLKIT: &str = concat!("bcpo ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub env: EnvConfig,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub features: FeatureSpec,
    pub algorithms: Vec<AlgorithmSpec>,
    /// `None` picks exact evaluation for gridworlds and Monte Carlo for cartpole.
    #[serde(default)]
    pub eval: Option<EvalSpec>,
    pub seeds: Vec<u64>,
    /// Reset states averaged into `φ₀` for continuous environments.
    #[serde(default = "default_start_samples")]
    pub start_samples: usize,
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_start_samples() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub n: usize,
    /// Experiment seed `k` samples its dataset with seed `seed + k`.
    #[serde(default)]
    pub seed: u64,
    pub behavior: BehaviorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BehaviorSpec {
    Uniform,
    /// `(1 − ε)·π* + ε·uniform` on a gridworld.
    OptimalMix {
        epsilon: f64,
    },
    Tabular {
        policy: TabularPolicy,
    },
    /// ε-greedy around a discretized Q-learning policy trained online on cartpole.
    TrainedQ {
        #[serde(default)]
        training: BehaviorTraining,
        #[serde(default)]
        training_seed: u64,
        #[serde(default)]
        epsilon: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureSpec {
    #[default]
    OneHot,
    RandomFourier {
        d_w: usize,
        /// `None` uses the median pairwise distance of the first `probe` dataset states.
        #[serde(default)]
        bandwidth: Option<f64>,
        /// Experiment seed `k` draws its features with seed `seed + k`.
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_probe")]
        probe: usize,
    },
}

fn default_probe() -> usize {
    500
}

// Unknown keys are rejected by the flattened per-algorithm structs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSpec {
    /// Name in results; defaults to the algorithm name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(flatten)]
    pub kind: AlgorithmKind,
}

impl AlgorithmSpec {
    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| self.kind.name().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum AlgorithmKind {
    Pspi(SoftIterationSpec),
    Npg(SoftIterationSpec),
    Qlearning(TdSpec),
    Lcb(LcbSpec),
    Infotheo(InfoTheoSpec),
}

impl AlgorithmKind {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmKind::Pspi(_) => "pspi",
            AlgorithmKind::Npg(_) => "npg",
            AlgorithmKind::Qlearning(_) => "qlearning",
            AlgorithmKind::Lcb(_) => "lcb",
            AlgorithmKind::Infotheo(_) => "infotheo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftIterationSpec {
    #[serde(default = "default_rounds")]
    pub t_rounds: usize,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub eta: Option<f64>,
    /// `None` uses `1/(2λ·Vmax)`; `0` disables the norm penalty.
    #[serde(default)]
    pub theta_ridge: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub rtol: Option<f64>,
}

fn default_rounds() -> usize {
    100
}

fn default_delta() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TdSpec {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_sweeps")]
    pub sweeps: usize,
}

fn default_alpha() -> f64 {
    0.1
}

fn default_sweeps() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LcbSpec {
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_lcb_ridge")]
    pub ridge: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_sweeps")]
    pub sweeps: usize,
}

fn default_beta() -> f64 {
    1.0
}

fn default_lcb_ridge() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfoTheoSpec {
    #[serde(default)]
    pub epsilon: EpsilonMode,
    /// Cap on `|A|^|S|`, the number of deterministic policies enumerated.
    #[serde(default = "default_max_policies")]
    pub max_policies: usize,
}

fn default_max_policies() -> usize {
    1024
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvalSpec {
    Exact,
    MonteCarlo {
        #[serde(default = "default_episodes")]
        episodes: usize,
        /// Experiment seed `k` evaluates with seed `seed + k`.
        #[serde(default)]
        seed: u64,
    },
}

fn default_episodes() -> usize {
    2000
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.algorithms.is_empty() {
            return bad("algorithms must not be empty");
        }
        if self.dataset.n == 0 {
            return bad("dataset.n must be at least 1");
        }
        let mut labels: Vec<String> = self.algorithms.iter().map(|a| a.label()).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return bad("algorithm labels must be unique");
        }
        if labels
            .iter()
            .any(|l| l.is_empty() || l.contains(['/', '\\', ',']))
        {
            return bad("labels must be non-empty and free of '/', '\\' and ','");
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return bad("seeds must be unique");
        }
        let tabular = matches!(self.env.kind, EnvKind::Gridworld(_));
        match (&self.dataset.behavior, tabular) {
            (BehaviorSpec::TrainedQ { .. }, true) => {
                return bad("trained_q behavior needs cartpole")
            }
            (BehaviorSpec::OptimalMix { .. } | BehaviorSpec::Tabular { .. }, false) => {
                return bad("tabular behaviors need a gridworld")
            }
            _ => {}
        }
        if let BehaviorSpec::OptimalMix { epsilon } | BehaviorSpec::TrainedQ { epsilon, .. } =
            &self.dataset.behavior
        {
            if !(0.0..=1.0).contains(epsilon) {
                return bad("behavior epsilon must be in [0, 1]");
            }
        }
        match (&self.features, tabular) {
            (FeatureSpec::OneHot, false) => return bad("one-hot features need a gridworld"),
            (FeatureSpec::RandomFourier { .. }, true) => {
                return bad("random Fourier features need cartpole")
            }
            _ => {}
        }
        if let FeatureSpec::RandomFourier { d_w, probe, .. } = &self.features {
            if *d_w == 0 || *probe < 2 {
                return bad("random Fourier features need d_w >= 1 and probe >= 2");
            }
        }
        match (&self.eval, tabular) {
            (Some(EvalSpec::Exact), false) => return bad("exact evaluation needs a gridworld"),
            (Some(EvalSpec::MonteCarlo { .. }), true) => {
                return bad("Monte-Carlo evaluation needs cartpole")
            }
            (Some(EvalSpec::MonteCarlo { episodes: 0, .. }), _) => {
                return bad("episodes must be at least 1")
            }
            _ => {}
        }
        if !tabular && self.start_samples == 0 {
            return bad("start_samples must be at least 1");
        }
        for a in &self.algorithms {
            match &a.kind {
                AlgorithmKind::Infotheo(_) if !tabular => return bad("infotheo needs a gridworld"),
                AlgorithmKind::Pspi(s) | AlgorithmKind::Npg(s) if s.t_rounds == 0 => {
                    return bad("t_rounds must be at least 1")
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// SHA-256 of the spec without its output directory.
    pub fn config_hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        Ok(sha256_hex(&serde_json::to_vec(&canonical)?))
    }

    fn eval_spec(&self) -> EvalSpec {
        self.eval.clone().unwrap_or(match self.env.kind {
            EnvKind::Gridworld(_) => EvalSpec::Exact,
            EnvKind::Cartpole(_) => EvalSpec::MonteCarlo {
                episodes: default_episodes(),
                seed: 0,
            },
        })
    }
}

/// Parses and validates an experiment spec.
pub fn parse_spec(text: &str) -> Result<ExperimentSpec> {
    let spec: ExperimentSpec = serde_json::from_str(text)?;
    spec.validate()?;
    Ok(spec)
}

pub fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    parse_spec(&fs::read_to_string(path)?)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// The environment an experiment runs in.
pub enum Environment {
    Tabular(TabularMdp),
    Cartpole(Cartpole),
}

pub fn build_environment(env: &EnvConfig) -> Result<Environment> {
    Ok(match &env.kind {
        EnvKind::Gridworld(_) => Environment::Tabular(make_gridworld(env)?),
        EnvKind::Cartpole(p) => Environment::Cartpole(Cartpole::new(p.clone())),
    })
}

/// Writes `env.json` (the MDP for gridworlds, the config for cartpole).
pub fn gen_env(spec: &ExperimentSpec, out: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out)?;
    let path = out.join("env.json");
    let text = match build_environment(&spec.env)? {
        Environment::Tabular(mdp) => mdp.to_json()?,
        Environment::Cartpole(_) => serde_json::to_string(&spec.env)?,
    };
    fs::write(&path, text + "\n")?;
    Ok(path)
}

fn behavior_descriptor(spec: &ExperimentSpec, env: &Environment) -> Result<BehaviorDescriptor> {
    Ok(match (&spec.dataset.behavior, env) {
        (BehaviorSpec::Uniform, Environment::Tabular(mdp)) => BehaviorDescriptor::Tabular {
            policy: TabularPolicy::uniform(mdp.n_states(), mdp.n_actions()),
        },
        (BehaviorSpec::Uniform, Environment::Cartpole(cart)) => BehaviorDescriptor::Uniform {
            n_actions: cart.n_actions(),
        },
        (BehaviorSpec::OptimalMix { epsilon }, Environment::Tabular(mdp)) => {
            let greedy = optimal_q(mdp, 1e-12).greedy_actions();
            let star = TabularPolicy::deterministic(mdp.n_actions(), &greedy)?;
            let uniform = TabularPolicy::uniform(mdp.n_states(), mdp.n_actions());
            BehaviorDescriptor::Tabular {
                policy: star.mix(&uniform, *epsilon)?,
            }
        }
        (BehaviorSpec::Tabular { policy }, Environment::Tabular(_)) => {
            BehaviorDescriptor::Tabular {
                policy: policy.clone(),
            }
        }
        (
            BehaviorSpec::TrainedQ {
                training,
                training_seed,
                ..
            },
            Environment::Cartpole(cart),
        ) => BehaviorDescriptor::DiscretizedQ(train_cartpole_behavior(
            cart,
            training,
            *training_seed,
        )),
        _ => {
            return Err(Error::InvalidConfig(
                "behavior incompatible with environment".into(),
            ))
        }
    })
}

fn behavior_epsilon(spec: &ExperimentSpec) -> f64 {
    match &spec.dataset.behavior {
        BehaviorSpec::TrainedQ { epsilon, .. } => *epsilon,
        _ => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataStatus {
    Generated,
    Cached,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataFile {
    pub seed: u64,
    pub path: PathBuf,
    pub status: DataStatus,
}

pub fn dataset_path(out: &Path, seed: u64) -> PathBuf {
    out.join("data").join(format!("dataset_seed{seed}.jsonl"))
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".sha256");
    PathBuf::from(s)
}

/// Hash of everything that determines the dataset of experiment seed `seed`.
fn dataset_key(spec: &ExperimentSpec, seed: u64) -> Result<String> {
    #[derive(Serialize)]
    struct Key<'a> {
        toolkit: &'a str,
        env: &'a EnvConfig,
        dataset: &'a DatasetSpec,
        seed: u64,
    }
    Ok(sha256_hex(&serde_json::to_vec(&Key {
        toolkit: TOOLKIT,
        env: &spec.env,
        dataset: &spec.dataset,
        seed,
    })?))
}

/// Checks a cached dataset. `Ok(true)` when present and intact, `Ok(false)` when absent.
fn check_cache(path: &Path, key: &str) -> Result<bool> {
    let side = sidecar_path(path);
    match (path.exists(), side.exists()) {
        (false, false) => return Ok(false),
        (true, false) => {
            return Err(Error::CacheMismatch(format!(
                "{} exists without its hash sidecar; refusing to overwrite",
                path.display()
            )))
        }
        (false, true) => {
            return Err(Error::CacheMismatch(format!(
                "{} is missing but its sidecar exists",
                path.display()
            )))
        }
        (true, true) => {}
    }
    let sidecar = fs::read_to_string(&side)?;
    let mut parts = sidecar.split_whitespace();
    let (want_key, want_file) = match (parts.next(), parts.next()) {
        (Some(k), Some(f)) => (k, f),
        _ => {
            return Err(Error::CacheMismatch(format!(
                "malformed sidecar {}",
                side.display()
            )))
        }
    };
    if want_key != key {
        return Err(Error::CacheMismatch(format!(
            "{} was generated from a different spec; refusing to overwrite",
            path.display()
        )));
    }
    if sha256_hex(&fs::read(path)?) != want_file {
        return Err(Error::CacheMismatch(format!(
            "{} does not match its recorded hash (modified?)",
            path.display()
        )));
    }
    Ok(true)
}

/// Materializes one dataset per seed under `out/data/`, skipping intact cached files.
pub fn gen_data(spec: &ExperimentSpec, out: &Path) -> Result<Vec<DataFile>> {
    spec.validate()?;
    fs::create_dir_all(out.join("data"))?;
    let mut pending = Vec::new();
    let mut files = Vec::new();
    for &seed in &spec.seeds {
        let path = dataset_path(out, seed);
        let key = dataset_key(spec, seed)?;
        let cached = check_cache(&path, &key)?;
        files.push(DataFile {
            seed,
            path: path.clone(),
            status: if cached {
                DataStatus::Cached
            } else {
                DataStatus::Generated
            },
        });
        if !cached {
            pending.push((seed, path, key));
        }
    }
    if pending.is_empty() {
        return Ok(files);
    }
    let env = build_environment(&spec.env)?;
    let behavior = behavior_descriptor(spec, &env)?;
    let eps = behavior_epsilon(spec);
    pending
        .par_iter()
        .try_for_each(|(seed, path, key)| -> Result<()> {
            let data_seed = spec.dataset.seed.wrapping_add(*seed);
            let ds = match (&env, &behavior) {
                (Environment::Tabular(mdp), BehaviorDescriptor::Tabular { policy }) => {
                    sample_tabular_dataset(&spec.env, mdp, policy, spec.dataset.n, data_seed)?
                }
                (Environment::Cartpole(_), b) => {
                    sample_cartpole_dataset(&spec.env, b, spec.dataset.n, data_seed, eps)?
                }
                _ => {
                    return Err(Error::InvalidConfig(
                        "behavior incompatible with environment".into(),
                    ))
                }
            };
            let text = ds.to_jsonl_string()?;
            fs::write(path, &text)?;
            fs::write(
                sidecar_path(path),
                format!("{key} {}\n", sha256_hex(text.as_bytes())),
            )?;
            Ok(())
        })?;
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub algorithm: String,
    pub seed: u64,
    pub n: usize,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// The algorithm's own estimate of its value at the start state.
    pub j_estimate: Option<f64>,
    /// Exact value of the output policy (tabular).
    pub j_exact: Option<f64>,
    /// Monte-Carlo value of the output policy (cartpole).
    pub j_monte_carlo: Option<MonteCarloEstimate>,
    pub j_behavior: Option<f64>,
    pub wall_ms: u64,
    pub config_hash: String,
}

impl RunRecord {
    /// Exact value when available, else the Monte-Carlo mean.
    pub fn score(&self) -> Option<f64> {
        self.j_exact.or(self.j_monte_carlo.map(|m| m.mean))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub algorithm: String,
    pub n: usize,
    pub n_seeds: usize,
    pub n_failed: usize,
    pub mean: Option<f64>,
    /// Population standard deviation over successful seeds.
    pub std: Option<f64>,
    pub j_behavior_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub toolkit: String,
    pub config_hash: String,
    pub name: String,
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<AggregateRecord>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub results_path: PathBuf,
    pub results: ResultsFile,
    pub data: Vec<DataFile>,
}

impl RunSummary {
    pub fn all_ok(&self) -> bool {
        self.results.records.iter().all(|r| r.ok)
    }
}

/// Per-seed inputs shared by every algorithm cell.
struct SeedContext {
    seed: u64,
    ds: Dataset,
    fm: Arc<FeatureMap>,
    j_behavior: Option<f64>,
}

struct CellOutput {
    j_estimate: Option<f64>,
    j_exact: Option<f64>,
    j_monte_carlo: Option<MonteCarloEstimate>,
    log: Vec<RoundLog>,
}

fn start_states(spec: &ExperimentSpec, env: &Environment) -> Vec<State> {
    match env {
        Environment::Tabular(mdp) => vec![State::Discrete(mdp.s0())],
        Environment::Cartpole(cart) => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.env.seed);
            (0..spec.start_samples)
                .map(|_| State::Continuous(cart.reset(&mut rng).to_vec()))
                .collect()
        }
    }
}

fn feature_map(
    spec: &ExperimentSpec,
    env: &Environment,
    ds: &Dataset,
    seed: u64,
) -> Result<FeatureMap> {
    match (&spec.features, env) {
        (FeatureSpec::OneHot, Environment::Tabular(mdp)) => {
            one_hot(mdp.n_states(), mdp.n_actions())
        }
        (
            FeatureSpec::RandomFourier {
                d_w,
                bandwidth,
                seed: fseed,
                probe,
            },
            Environment::Cartpole(cart),
        ) => {
            let bw = match bandwidth {
                Some(b) => *b,
                None => {
                    let states: Vec<Vec<f64>> = ds
                        .transitions
                        .iter()
                        .take(*probe)
                        .filter_map(|t| t.s.vector().map(<[f64]>::to_vec))
                        .collect();
                    median_bandwidth(&states)?
                }
            };
            random_fourier(4, cart.n_actions(), *d_w, bw, fseed.wrapping_add(seed))
        }
        _ => Err(Error::InvalidConfig(
            "features incompatible with environment".into(),
        )),
    }
}

/// Monte-Carlo discounted return of a Markov policy, one generator stream per episode.
pub fn evaluate_policy_cartpole<P: Policy + Sync>(
    pi: &P,
    env: &Cartpole,
    episodes: usize,
    seed: u64,
    epsilon: f64,
) -> Result<MonteCarloEstimate> {
    if episodes == 0 {
        return Err(Error::InvalidConfig("episodes must be at least 1".into()));
    }
    let returns: Vec<f64> = (0..episodes)
        .into_par_iter()
        .map(|k| {
            let mut rng = episode_rng(seed, k as u64);
            let mut probs = vec![0.0; pi.n_actions()];
            env.run_episode(&mut rng, |s, r| {
                pi.action_probs(&State::Continuous(s.to_vec()), &mut probs);
                sample_epsilon(&probs, epsilon, r)
            })
            .discounted_return
        })
        .collect();
    Ok(summarize(&returns))
}

fn soft_config(
    s: &SoftIterationSpec,
    vmax: f64,
    gamma: f64,
    n: usize,
    d: usize,
    na: usize,
    timing: bool,
) -> Result<PspiConfig> {
    let mut cfg = PspiConfig::new(s.t_rounds, vmax, gamma);
    cfg.lambda = s.lambda;
    cfg.eta = s.eta;
    cfg.delta = s.delta;
    cfg.rtol = s.rtol;
    cfg.record_timing = timing;
    let (lambda, _) = cfg.resolve(n, d, na)?;
    cfg.theta_ridge = s.theta_ridge.unwrap_or(1.0 / (2.0 * lambda * vmax));
    Ok(cfg)
}

fn mean_round_value(out: &PolicyIterationOutput) -> f64 {
    out.log.iter().map(|r| r.pessimistic_value).sum::<f64>() / out.log.len() as f64
}

fn run_cell(
    spec: &ExperimentSpec,
    env: &Environment,
    starts: &[State],
    ctx: &SeedContext,
    alg: &AlgorithmSpec,
) -> Result<CellOutput> {
    let (vmax, gamma) = (spec.env.rmax() / (1.0 - spec.env.gamma()), spec.env.gamma());
    let fm = Arc::clone(&ctx.fm);
    let (n, d, na) = (ctx.ds.len(), fm.dim(), fm.n_actions());
    let eval = spec.eval_spec();
    let eval_seed = match eval {
        EvalSpec::MonteCarlo { seed, .. } => seed.wrapping_add(ctx.seed),
        EvalSpec::Exact => 0,
    };
    let episodes = match eval {
        EvalSpec::MonteCarlo { episodes, .. } => episodes,
        EvalSpec::Exact => 0,
    };
    let eval_mixture =
        |out: &PolicyIterationOutput| -> Result<(Option<f64>, Option<MonteCarloEstimate>)> {
            match env {
                Environment::Tabular(mdp) => {
                    Ok((Some(evaluate_mixture_tabular(&out.mixture, mdp)?), None))
                }
                Environment::Cartpole(cart) => Ok((
                    None,
                    Some(evaluate_mixture_cartpole(
                        &out.mixture,
                        cart,
                        episodes,
                        eval_seed,
                    )?),
                )),
            }
        };
    let eval_policy = |pi: &crate::baselines::GreedyLinearPolicy| -> Result<(Option<f64>, Option<MonteCarloEstimate>)> {
        match env {
            Environment::Tabular(mdp) => Ok((
                Some(policy_return(mdp, &TabularPolicy::from_policy(pi, mdp.n_states())?)?),
                None,
            )),
            Environment::Cartpole(cart) => Ok((
                None,
                Some(evaluate_policy_cartpole(pi, cart, episodes, eval_seed, 0.0)?),
            )),
        }
    };
    match &alg.kind {
        AlgorithmKind::Pspi(s) | AlgorithmKind::Npg(s) => {
            let builder = MomentBuilder::new(&ctx.ds, &fm, starts)?;
            let cfg = soft_config(s, vmax, gamma, n, d, na, spec.record_timing)?;
            let out = match &alg.kind {
                AlgorithmKind::Pspi(_) => run_pspi_with(&builder, Arc::clone(&fm), &cfg)?,
                _ => run_npg_with(&builder, Arc::clone(&fm), &cfg)?,
            };
            let (j_exact, j_mc) = eval_mixture(&out)?;
            Ok(CellOutput {
                j_estimate: Some(mean_round_value(&out)),
                j_exact,
                j_monte_carlo: j_mc,
                log: out.log,
            })
        }
        AlgorithmKind::Qlearning(s) => {
            let builder = MomentBuilder::new(&ctx.ds, &fm, starts)?;
            let cfg = QLearningConfig {
                alpha: s.alpha,
                sweeps: s.sweeps,
                vmax,
            };
            let out = run_q_learning_with(&builder, Arc::clone(&fm), starts, &cfg)?;
            let (j_exact, j_mc) = eval_policy(&out.policy)?;
            Ok(CellOutput {
                j_estimate: out.log.last().map(|r| r.pessimistic_value),
                j_exact,
                j_monte_carlo: j_mc,
                log: out.log,
            })
        }
        AlgorithmKind::Lcb(s) => {
            let builder = MomentBuilder::new(&ctx.ds, &fm, starts)?;
            let cfg = LcbConfig {
                beta: s.beta,
                ridge: s.ridge,
                q_learning: QLearningConfig {
                    alpha: s.alpha,
                    sweeps: s.sweeps,
                    vmax,
                },
            };
            let out = run_lcb_with(&builder, Arc::clone(&fm), starts, &cfg)?;
            let (j_exact, j_mc) = eval_policy(&out.policy)?;
            Ok(CellOutput {
                j_estimate: out.log.last().map(|r| r.pessimistic_value),
                j_exact,
                j_monte_carlo: j_mc,
                log: out.log,
            })
        }
        AlgorithmKind::Infotheo(s) => {
            let Environment::Tabular(mdp) = env else {
                return Err(Error::InvalidConfig("infotheo needs a gridworld".into()));
            };
            let cls = deterministic_policy_class(mdp, s.max_policies)?;
            let sel = info_theoretic_select(&ctx.ds, &cls, &s.epsilon, vmax, mdp.s0())?;
            let pi = &cls.policies[sel.policy];
            Ok(CellOutput {
                j_estimate: sel.scores[sel.policy],
                j_exact: Some(policy_return(mdp, pi)?),
                j_monte_carlo: None,
                log: Vec::new(),
            })
        }
    }
}

/// `Π` = all deterministic policies, `ℱ = {Q^π : π ∈ Π}` (realizable and complete).
pub fn deterministic_policy_class(mdp: &TabularMdp, max_policies: usize) -> Result<FiniteClass> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let count = (na as f64).powi(ns as i32);
    if count > max_policies as f64 {
        return Err(Error::InvalidConfig(format!(
            "{na}^{ns} deterministic policies exceed the cap of {max_policies}"
        )));
    }
    let count = count as usize;
    let mut policies = Vec::with_capacity(count);
    let mut q_functions = Vec::with_capacity(count);
    for code in 0..count {
        let mut rest = code;
        let actions: Vec<usize> = (0..ns)
            .map(|_| {
                let a = rest % na;
                rest /= na;
                a
            })
            .collect();
        let pi = TabularPolicy::deterministic(na, &actions)?;
        q_functions.push(exact_q(mdp, &pi)?);
        policies.push(pi);
    }
    Ok(FiniteClass {
        q_functions,
        policies,
    })
}

fn population_stats(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k;
    (Some(mean), Some(var.sqrt()))
}

fn aggregate(records: &[RunRecord], order: &[String]) -> Vec<AggregateRecord> {
    let mut groups: BTreeMap<(usize, usize), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        let idx = order
            .iter()
            .position(|l| *l == r.algorithm)
            .unwrap_or(order.len());
        groups.entry((idx, r.n)).or_default().push(r);
    }
    groups
        .into_values()
        .map(|rs| {
            let scores: Vec<f64> = rs
                .iter()
                .filter(|r| r.ok)
                .filter_map(|r| r.score())
                .collect();
            let jb: Vec<f64> = rs.iter().filter_map(|r| r.j_behavior).collect();
            let (mean, std) = population_stats(&scores);
            AggregateRecord {
                algorithm: rs[0].algorithm.clone(),
                n: rs[0].n,
                n_seeds: scores.len(),
                n_failed: rs.iter().filter(|r| !r.ok).count(),
                mean,
                std,
                j_behavior_mean: population_stats(&jb).0,
            }
        })
        .collect()
}

fn build_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        b = b.num_threads(j.max(1));
    }
    b.build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

/// Generates missing datasets, runs every (algorithm, seed) cell, and writes
/// `results.json` and `logs/<label>_seed<k>.csv` under `out`.
pub fn run_experiment(
    spec: &ExperimentSpec,
    out: &Path,
    jobs: Option<usize>,
) -> Result<RunSummary> {
    spec.validate()?;
    let pool = build_pool(jobs)?;
    pool.install(|| run_in_pool(spec, out))
}

fn run_in_pool(spec: &ExperimentSpec, out: &Path) -> Result<RunSummary> {
    let config_hash = spec.config_hash()?;
    gen_env(spec, out)?;
    let data = gen_data(spec, out)?;
    let env = build_environment(&spec.env)?;
    let starts = start_states(spec, &env);
    let behavior = match &env {
        Environment::Cartpole(_) => Some(behavior_descriptor(spec, &env)?),
        Environment::Tabular(_) => None,
    };
    let contexts: Vec<SeedContext> = data
        .par_iter()
        .map(|f| -> Result<SeedContext> {
            let ds = load_dataset(&f.path)?;
            let fm = Arc::new(feature_map(spec, &env, &ds, f.seed)?);
            let j_behavior = match (&env, &behavior, spec.eval_spec()) {
                (Environment::Tabular(_), _, _) => ds.meta.j_behavior,
                (Environment::Cartpole(cart), Some(b), EvalSpec::MonteCarlo { episodes, seed }) => {
                    Some(
                        evaluate_policy_cartpole(
                            b,
                            cart,
                            episodes,
                            seed.wrapping_add(f.seed),
                            behavior_epsilon(spec),
                        )?
                        .mean,
                    )
                }
                _ => None,
            };
            Ok(SeedContext {
                seed: f.seed,
                ds,
                fm,
                j_behavior,
            })
        })
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, usize)> = (0..spec.algorithms.len())
        .flat_map(|a| (0..contexts.len()).map(move |s| (a, s)))
        .collect();
    let outputs: Vec<(RunRecord, Vec<RoundLog>)> = cells
        .par_iter()
        .map(|&(a, s)| {
            let alg = &spec.algorithms[a];
            let ctx = &contexts[s];
            let start = std::time::Instant::now();
            let result = run_cell(spec, &env, &starts, ctx, alg);
            let wall_ms = if spec.record_timing {
                start.elapsed().as_millis() as u64
            } else {
                0
            };
            let mut record = RunRecord {
                algorithm: alg.label(),
                seed: ctx.seed,
                n: ctx.ds.len(),
                ok: true,
                error: None,
                j_estimate: None,
                j_exact: None,
                j_monte_carlo: None,
                j_behavior: ctx.j_behavior,
                wall_ms,
                config_hash: config_hash.clone(),
            };
            match result {
                Ok(c) => {
                    record.j_estimate = c.j_estimate;
                    record.j_exact = c.j_exact;
                    record.j_monte_carlo = c.j_monte_carlo;
                    (record, c.log)
                }
                Err(e) => {
                    record.ok = false;
                    record.error = Some(e.to_string());
                    (record, Vec::new())
                }
            }
        })
        .collect();
    fs::create_dir_all(out.join("logs"))?;
    for (rec, log) in &outputs {
        if !log.is_empty() {
            let path = out
                .join("logs")
                .join(format!("{}_seed{}.csv", rec.algorithm, rec.seed));
            let mut buf = Vec::new();
            write_round_log_csv(log, &mut buf)?;
            fs::write(path, buf)?;
        }
    }
    let records: Vec<RunRecord> = outputs.into_iter().map(|(r, _)| r).collect();
    let order: Vec<String> = spec.algorithms.iter().map(|a| a.label()).collect();
    let results = ResultsFile {
        toolkit: TOOLKIT.to_string(),
        config_hash,
        name: spec.name.clone(),
        aggregates: aggregate(&records, &order),
        records,
    };
    let results_path = out.join("results.json");
    fs::write(
        &results_path,
        serde_json::to_string_pretty(&results)? + "\n",
    )?;
    Ok(RunSummary {
        results_path,
        results,
        data,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub algorithm: String,
    pub x: usize,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
}

fn collect_results(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect_results(&p, found)?;
        } else if p.file_name().is_some_and(|n| n == "results.json") {
            found.push(p);
        }
    }
    Ok(())
}

/// Long-format rows `(algorithm, x = n, mean, std, n_seeds)` over every `results.json`
/// under `dir`, using successful per-seed records.
pub fn report(dir: &Path) -> Result<Vec<ReportRow>> {
    let mut files = Vec::new();
    collect_results(dir, &mut files)?;
    if files.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no results.json under {}",
            dir.display()
        )));
    }
    let mut groups: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for f in files {
        let results: ResultsFile = serde_json::from_str(&fs::read_to_string(&f)?)?;
        for r in results.records.iter().filter(|r| r.ok) {
            if let Some(score) = r.score() {
                groups
                    .entry((r.algorithm.clone(), r.n))
                    .or_default()
                    .push(score);
            }
        }
    }
    Ok(groups
        .into_iter()
        .map(|((algorithm, x), v)| {
            let (mean, std) = population_stats(&v);
            ReportRow {
                algorithm,
                x,
                mean: mean.unwrap_or(f64::NAN),
                std: std.unwrap_or(f64::NAN),
                n_seeds: v.len(),
            }
        })
        .collect())
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from("algorithm,x,mean,std,n_seeds\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.algorithm, r.x, r.mean, r.std, r.n_seeds
        ));
    }
    s
}
