//! Seeded environments: random tabular MDPs ("gridworlds") and a native cartpole.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub seed: u64,
    #[serde(flatten)]
    pub kind: EnvKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "env_kind", rename_all = "snake_case")]
pub enum EnvKind {
    Gridworld(GridworldParams),
    Cartpole(CartpoleParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridworldParams {
    pub n_states: usize,
    pub n_actions: usize,
    /// Maximum number of successor states per (s, a).
    #[serde(default = "default_branching")]
    pub branching: usize,
    /// Probability that a reward entry is zeroed after being drawn.
    #[serde(default)]
    pub reward_sparsity: f64,
    #[serde(default = "default_grid_gamma")]
    pub gamma: f64,
}

fn default_branching() -> usize {
    2
}

fn default_grid_gamma() -> f64 {
    0.9
}

impl EnvConfig {
    pub fn gridworld(seed: u64, params: GridworldParams) -> Self {
        EnvConfig {
            seed,
            kind: EnvKind::Gridworld(params),
        }
    }

    pub fn cartpole(seed: u64, params: CartpoleParams) -> Self {
        EnvConfig {
            seed,
            kind: EnvKind::Cartpole(params),
        }
    }

    pub fn gamma(&self) -> f64 {
        match &self.kind {
            EnvKind::Gridworld(p) => p.gamma,
            EnvKind::Cartpole(p) => p.gamma,
        }
    }

    pub fn rmax(&self) -> f64 {
        1.0
    }
}

/// Random tabular MDP: each (s, a) has at most `branching` successors with random
/// weights; rewards are uniform on `[0, 1)` then zeroed with probability
/// `reward_sparsity`. `s₀ = 0`, `Rmax = 1`.
pub fn make_gridworld(config: &EnvConfig) -> Result<TabularMdp> {
    let p = match &config.kind {
        EnvKind::Gridworld(p) => p,
        EnvKind::Cartpole(_) => {
            return Err(Error::InvalidConfig(
                "make_gridworld on a cartpole config".into(),
            ))
        }
    };
    if p.n_states < 2 || p.n_actions < 2 {
        return Err(Error::InvalidConfig(
            "gridworld needs at least 2 states and 2 actions".into(),
        ));
    }
    if p.branching == 0 {
        return Err(Error::InvalidConfig("branching must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&p.reward_sparsity) {
        return Err(Error::InvalidConfig(
            "reward_sparsity must be in [0, 1]".into(),
        ));
    }
    let (ns, na) = (p.n_states, p.n_actions);
    let k = p.branching.min(ns);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut transition = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na];
    for sa in 0..ns * na {
        let succ = sample(&mut rng, ns, k).into_vec();
        let weights: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.05).collect();
        let total: f64 = weights.iter().sum();
        let row = &mut transition[sa * ns..(sa + 1) * ns];
        let mut acc = 0.0;
        for (i, (&sp, w)) in succ.iter().zip(&weights).enumerate() {
            let prob = if i + 1 == k { 1.0 - acc } else { w / total };
            row[sp] = prob;
            acc += prob;
        }
        let r: f64 = rng.random();
        let keep = rng.random::<f64>() >= p.reward_sparsity;
        reward[sa] = if keep { r } else { 0.0 };
    }
    TabularMdp::new(ns, na, transition, reward, p.gamma, 0, 1.0)
}

/// Physics constants of the classic cart-pole task (Euler integration).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CartpoleParams {
    pub gravity: f64,
    pub mass_cart: f64,
    pub mass_pole: f64,
    /// Half the pole length.
    pub half_length: f64,
    pub force_mag: f64,
    pub tau: f64,
    pub theta_threshold: f64,
    pub x_threshold: f64,
    pub max_episode_steps: usize,
    pub gamma: f64,
}

impl Default for CartpoleParams {
    fn default() -> Self {
        CartpoleParams {
            gravity: 9.8,
            mass_cart: 1.0,
            mass_pole: 0.1,
            half_length: 0.5,
            force_mag: 10.0,
            tau: 0.02,
            theta_threshold: 12.0 * std::f64::consts::PI / 180.0,
            x_threshold: 2.4,
            max_episode_steps: 200,
            gamma: 0.99,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartpoleState {
    pub cart_position: f64,
    pub cart_velocity: f64,
    pub pole_angle: f64,
    pub pole_angular_velocity: f64,
}

impl CartpoleState {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.cart_position,
            self.cart_velocity,
            self.pole_angle,
            self.pole_angular_velocity,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v {
            [x, xd, th, thd] => Ok(CartpoleState {
                cart_position: *x,
                cart_velocity: *xd,
                pole_angle: *th,
                pole_angular_velocity: *thd,
            }),
            _ => Err(Error::Shape(format!(
                "cartpole state needs 4 entries, got {}",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartpoleStep {
    pub state: CartpoleState,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cartpole {
    pub params: CartpoleParams,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub steps: usize,
    pub discounted_return: f64,
    pub total_reward: f64,
}

impl Cartpole {
    pub fn new(params: CartpoleParams) -> Self {
        Cartpole { params }
    }

    pub fn n_actions(&self) -> usize {
        2
    }

    pub fn is_terminal(&self, s: &CartpoleState) -> bool {
        s.pole_angle.abs() > self.params.theta_threshold
            || s.cart_position.abs() > self.params.x_threshold
    }

    /// Each field i.i.d. uniform on `[−0.05, 0.05]`.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> CartpoleState {
        let mut u = || rng.random_range(-0.05..=0.05);
        CartpoleState {
            cart_position: u(),
            cart_velocity: u(),
            pole_angle: u(),
            pole_angular_velocity: u(),
        }
    }

    /// One Euler step. Reward is 1 for every step taken from a non-terminal state.
    pub fn step(&self, s: &CartpoleState, action: usize) -> Result<CartpoleStep> {
        if self.is_terminal(s) {
            return Err(Error::TerminalState);
        }
        if action > 1 {
            return Err(Error::InvalidConfig(format!("cartpole action {action}")));
        }
        let p = &self.params;
        let total_mass = p.mass_cart + p.mass_pole;
        let pole_mass_length = p.mass_pole * p.half_length;
        let force = if action == 1 {
            p.force_mag
        } else {
            -p.force_mag
        };
        let (sin, cos) = s.pole_angle.sin_cos();
        let temp = (force + pole_mass_length * s.pole_angular_velocity.powi(2) * sin) / total_mass;
        let theta_acc = (p.gravity * sin - cos * temp)
            / (p.half_length * (4.0 / 3.0 - p.mass_pole * cos * cos / total_mass));
        let x_acc = temp - pole_mass_length * theta_acc * cos / total_mass;
        let next = CartpoleState {
            cart_position: s.cart_position + p.tau * s.cart_velocity,
            cart_velocity: s.cart_velocity + p.tau * x_acc,
            pole_angle: s.pole_angle + p.tau * s.pole_angular_velocity,
            pole_angular_velocity: s.pole_angular_velocity + p.tau * theta_acc,
        };
        Ok(CartpoleStep {
            state: next,
            reward: 1.0,
            terminal: self.is_terminal(&next),
        })
    }

    /// Runs one episode from a fresh reset, truncated at `max_episode_steps`.
    pub fn run_episode<R, F>(&self, rng: &mut R, mut policy: F) -> EpisodeStats
    where
        R: Rng + ?Sized,
        F: FnMut(&CartpoleState, &mut R) -> usize,
    {
        let mut s = self.reset(rng);
        let mut stats = EpisodeStats {
            steps: 0,
            discounted_return: 0.0,
            total_reward: 0.0,
        };
        let mut discount = 1.0;
        while stats.steps < self.params.max_episode_steps {
            let a = policy(&s, rng);
            let out = self
                .step(&s, a)
                .expect("non-terminal state by loop invariant");
            stats.steps += 1;
            stats.total_reward += out.reward;
            stats.discounted_return += discount * out.reward;
            discount *= self.params.gamma;
            if out.terminal {
                break;
            }
            s = out.state;
        }
        stats
    }
}
