//! Behavior policies, offline dataset sampling and JSONL persistence.
//!
//! File format: line 1 is the [`DatasetMeta`] object, every following line one
//! [`Transition`] `{"s":…,"a":…,"r":…,"sp":…,"mask":0|1}`. Reals are written in
//! shortest round-trip form, so `load(save(ds)) == ds` bit for bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::{Cartpole, CartpoleState, EnvConfig, EnvKind};
use crate::error::{Error, Result};
use crate::mdp::{occupancy, policy_return, TabularMdp, TabularPolicy};
use crate::state::{Policy, State};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub s: State,
    pub a: usize,
    pub r: f64,
    pub sp: State,
    /// 0 when `sp` is terminal (or the episode was truncated): no bootstrap.
    pub mask: u8,
}

impl Transition {
    pub fn bootstrap(&self) -> f64 {
        f64::from(self.mask)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScheme {
    /// `(s, a)` drawn i.i.d. from the exact discounted occupancy of the behavior policy.
    ExactOccupancy,
    /// Consecutive transitions harvested from behavior episodes (not i.i.d.).
    TrajectoryHarvest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BehaviorDescriptor {
    Tabular { policy: TabularPolicy },
    Uniform { n_actions: usize },
    DiscretizedQ(DiscretizedQPolicy),
}

impl Policy for BehaviorDescriptor {
    fn n_actions(&self) -> usize {
        match self {
            BehaviorDescriptor::Tabular { policy } => policy.n_actions(),
            BehaviorDescriptor::Uniform { n_actions } => *n_actions,
            BehaviorDescriptor::DiscretizedQ(q) => q.n_actions(),
        }
    }

    fn action_probs(&self, s: &State, out: &mut [f64]) {
        match self {
            BehaviorDescriptor::Tabular { policy } => policy.action_probs(s, out),
            BehaviorDescriptor::Uniform { n_actions } => out.fill(1.0 / *n_actions as f64),
            BehaviorDescriptor::DiscretizedQ(q) => q.action_probs(s, out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env: EnvConfig,
    pub behavior: BehaviorDescriptor,
    pub seed: u64,
    pub n: usize,
    pub gamma: f64,
    pub rmax: f64,
    pub sampling: SamplingScheme,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_explore: Option<f64>,
    /// Exact `J(π_b)`; tabular environments only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_behavior: Option<f64>,
}

impl DatasetMeta {
    /// SHA-256 of the serialized metadata.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub transitions: Vec<Transition>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn gamma(&self) -> f64 {
        self.meta.gamma
    }

    /// Validates every transition against the metadata.
    pub fn validate(&self) -> Result<()> {
        if self.meta.n != self.transitions.len() {
            return Err(Error::Parse {
                line: self.transitions.len() + 2,
                message: format!(
                    "expected {} transitions, found {}",
                    self.meta.n,
                    self.transitions.len()
                ),
            });
        }
        for (i, t) in self.transitions.iter().enumerate() {
            self.check_transition(t).map_err(|message| Error::Parse {
                line: i + 2,
                message,
            })?;
        }
        Ok(())
    }

    fn check_transition(&self, t: &Transition) -> std::result::Result<(), String> {
        if !(t.r.is_finite() && (0.0..=self.meta.rmax).contains(&t.r)) {
            return Err(format!("reward {} outside [0, {}]", t.r, self.meta.rmax));
        }
        if t.mask > 1 {
            return Err(format!("mask must be 0 or 1, got {}", t.mask));
        }
        let kind = &self.meta.env.kind;
        let state_ok = |s: &State| match kind {
            EnvKind::Gridworld(p) => matches!(s, State::Discrete(i) if *i < p.n_states),
            EnvKind::Cartpole(_) => {
                matches!(s, State::Continuous(v) if v.len() == 4 && v.iter().all(|x| x.is_finite()))
            }
        };
        let n_actions = match kind {
            EnvKind::Gridworld(p) => p.n_actions,
            EnvKind::Cartpole(_) => 2,
        };
        if !state_ok(&t.s) || !state_ok(&t.sp) {
            return Err("state out of range for environment".into());
        }
        if t.a >= n_actions {
            return Err(format!("action {} out of range", t.a));
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.meta)?;
        out.push('\n');
        for t in &self.transitions {
            out.push_str(&serde_json::to_string(t)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Parses a JSONL dataset. Errors carry the 1-based line number; no partial
    /// dataset is ever returned.
    pub fn from_jsonl_str(text: &str) -> Result<Dataset> {
        let mut lines = text.lines().enumerate();
        let meta: DatasetMeta = match lines.next() {
            Some((_, line)) => serde_json::from_str(line).map_err(|e| Error::Parse {
                line: 1,
                message: e.to_string(),
            })?,
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "missing metadata line".into(),
                })
            }
        };
        let mut transitions = Vec::with_capacity(meta.n.min(1 << 24));
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let t: Transition = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            transitions.push(t);
        }
        let ds = Dataset { meta, transitions };
        ds.validate()?;
        Ok(ds)
    }
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    f.write_all(ds.to_jsonl_string()?.as_bytes())?;
    f.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::from_jsonl_str(&fs::read_to_string(path)?)
}

/// i.i.d. tabular dataset: `(s, a) ∼ d_{π_b}`, `r = R(s, a)`, `s′ ∼ P(·|s, a)`.
pub fn sample_tabular_dataset(
    env: &EnvConfig,
    mdp: &TabularMdp,
    behavior: &TabularPolicy,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidConfig(
            "dataset size must be at least 1".into(),
        ));
    }
    let mu = occupancy(mdp, behavior)?;
    let j_behavior = policy_return(mdp, behavior)?;
    let na = mdp.n_actions();
    let pair_dist =
        WeightedIndex::new(&mu).map_err(|e| Error::InvalidConfig(format!("occupancy: {e}")))?;
    let next_dists = (0..mdp.n_pairs())
        .map(|i| WeightedIndex::new(mdp.transition_row(i / na, i % na)))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::InvalidMdp(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transitions = (0..n)
        .map(|_| {
            let i = pair_dist.sample(&mut rng);
            let (s, a) = (i / na, i % na);
            let sp = next_dists[i].sample(&mut rng);
            Transition {
                s: State::Discrete(s),
                a,
                r: mdp.reward(s, a),
                sp: State::Discrete(sp),
                mask: 1,
            }
        })
        .collect();
    Ok(Dataset {
        meta: DatasetMeta {
            env: env.clone(),
            behavior: BehaviorDescriptor::Tabular {
                policy: behavior.clone(),
            },
            seed,
            n,
            gamma: mdp.gamma(),
            rmax: mdp.rmax(),
            sampling: SamplingScheme::ExactOccupancy,
            epsilon_explore: None,
            j_behavior: Some(j_behavior),
        },
        transitions,
    })
}

/// Samples an action from `probs` mixed with the uniform distribution at rate `epsilon`.
pub fn sample_epsilon<R: Rng + ?Sized>(probs: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return rng.random_range(0..probs.len());
    }
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

/// Harvests `n` transitions from successive cartpole episodes under ε-greedy(behavior).
/// Terminal and truncated steps carry `mask = 0`.
pub fn sample_cartpole_dataset(
    env: &EnvConfig,
    behavior: &BehaviorDescriptor,
    n: usize,
    seed: u64,
    epsilon_explore: f64,
) -> Result<Dataset> {
    let params = match &env.kind {
        EnvKind::Cartpole(p) => p.clone(),
        EnvKind::Gridworld(_) => {
            return Err(Error::InvalidConfig(
                "cartpole sampling on a gridworld config".into(),
            ))
        }
    };
    if n == 0 {
        return Err(Error::InvalidConfig(
            "dataset size must be at least 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&epsilon_explore) {
        return Err(Error::InvalidConfig(
            "epsilon_explore must be in [0, 1]".into(),
        ));
    }
    let cart = Cartpole::new(params.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = Vec::with_capacity(n);
    let mut probs = vec![0.0; 2];
    let mut s = cart.reset(&mut rng);
    let mut t = 0usize;
    while transitions.len() < n {
        let state = State::Continuous(s.to_vec());
        behavior.action_probs(&state, &mut probs);
        let a = sample_epsilon(&probs, epsilon_explore, &mut rng);
        let out = cart.step(&s, a)?;
        t += 1;
        let done = out.terminal || t >= params.max_episode_steps;
        transitions.push(Transition {
            s: state,
            a,
            r: out.reward,
            sp: State::Continuous(out.state.to_vec()),
            mask: u8::from(!done),
        });
        if done {
            s = cart.reset(&mut rng);
            t = 0;
        } else {
            s = out.state;
        }
    }
    Ok(Dataset {
        meta: DatasetMeta {
            env: env.clone(),
            behavior: behavior.clone(),
            seed,
            n,
            gamma: params.gamma,
            rmax: 1.0,
            sampling: SamplingScheme::TrajectoryHarvest,
            epsilon_explore: Some(epsilon_explore),
            j_behavior: None,
        },
        transitions,
    })
}

/// Greedy policy of a Q table over a uniform grid discretization of the cartpole state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedQPolicy {
    pub bins: Vec<usize>,
    pub lows: Vec<f64>,
    pub highs: Vec<f64>,
    pub n_actions: usize,
    /// `[cell][a]`.
    pub q: Vec<f64>,
}

impl DiscretizedQPolicy {
    /// Classic coarse grid: position and velocity ignored, 6 angle × 12 angular-velocity bins.
    pub fn cartpole_grid() -> Self {
        let bins = vec![1, 1, 6, 12];
        let cells: usize = bins.iter().product();
        DiscretizedQPolicy {
            bins,
            lows: vec![-2.4, -3.0, -12f64.to_radians(), -50f64.to_radians()],
            highs: vec![2.4, 3.0, 12f64.to_radians(), 50f64.to_radians()],
            n_actions: 2,
            q: vec![0.0; cells * 2],
        }
    }

    pub fn cell(&self, s: &[f64]) -> usize {
        let mut idx = 0;
        for (d, &x) in s.iter().enumerate() {
            let nb = self.bins[d];
            let frac = (x - self.lows[d]) / (self.highs[d] - self.lows[d]);
            let b = ((frac * nb as f64).floor().max(0.0) as usize).min(nb - 1);
            idx = idx * nb + b;
        }
        idx
    }

    pub fn greedy(&self, s: &[f64]) -> usize {
        let c = self.cell(s);
        let row = &self.q[c * self.n_actions..(c + 1) * self.n_actions];
        let mut best = 0;
        for (a, &q) in row.iter().enumerate() {
            if q > row[best] {
                best = a;
            }
        }
        best
    }
}

impl Policy for DiscretizedQPolicy {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn action_probs(&self, s: &State, out: &mut [f64]) {
        let v = s
            .vector()
            .expect("discretized policy needs a continuous state");
        out.fill(0.0);
        out[self.greedy(v)] = 1.0;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorTraining {
    pub episodes: usize,
    pub alpha: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
}

impl Default for BehaviorTraining {
    fn default() -> Self {
        BehaviorTraining {
            episodes: 1500,
            alpha: 0.1,
            epsilon_start: 1.0,
            epsilon_end: 0.01,
        }
    }
}

/// Online tabular Q-learning on the discretized cartpole; returns the frozen greedy policy.
pub fn train_cartpole_behavior(
    cart: &Cartpole,
    training: &BehaviorTraining,
    seed: u64,
) -> DiscretizedQPolicy {
    let mut pol = DiscretizedQPolicy::cartpole_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = cart.params.gamma;
    let na = pol.n_actions;
    let episodes = training.episodes.max(1);
    for ep in 0..episodes {
        let frac = ep as f64 / episodes as f64;
        let eps = training.epsilon_start + (training.epsilon_end - training.epsilon_start) * frac;
        let alpha = training.alpha.max(0.5 / (1.0 + ep as f64 / 50.0)).min(0.5);
        let mut s: CartpoleState = cart.reset(&mut rng);
        for _ in 0..cart.params.max_episode_steps {
            let v = s.to_vec();
            let a = if rng.random::<f64>() < eps {
                rng.random_range(0..na)
            } else {
                pol.greedy(&v)
            };
            let out = cart.step(&s, a).expect("non-terminal by loop invariant");
            let c = pol.cell(&v);
            let target = if out.terminal {
                out.reward
            } else {
                let cp = pol.cell(&out.state.to_vec());
                let next = pol.q[cp * na..(cp + 1) * na]
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max);
                out.reward + gamma * next
            };
            let q = &mut pol.q[c * na + a];
            *q += alpha * (target - *q);
            if out.terminal {
                break;
            }
            s = out.state;
        }
    }
    pol
}
