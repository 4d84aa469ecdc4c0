//! State-action feature maps `φ: S × A → ℝᵈ` with `‖φ(s, a)‖₂ ≤ 1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::State;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[serde(try_from = "RawFeatureMap", into = "RawFeatureMap")]
pub enum FeatureMap {
    /// Indicator of `s·n_actions + a`.
    OneHot { n_states: usize, n_actions: usize },
    /// Per-action blocks of `cos(wᵢ·s/σ + βᵢ)/√d_w`.
    RandomFourier {
        state_dim: usize,
        n_actions: usize,
        d_w: usize,
        bandwidth: f64,
        seed: u64,
        /// `d_w × state_dim`, row-major.
        weights: Vec<Vec<f64>>,
        phases: Vec<f64>,
    },
}

/// Unchecked wire form; every map passes through [`FeatureMap::validate`].
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawFeatureMap {
    OneHot {
        n_states: usize,
        n_actions: usize,
    },
    RandomFourier {
        state_dim: usize,
        n_actions: usize,
        d_w: usize,
        bandwidth: f64,
        seed: u64,
        weights: Vec<Vec<f64>>,
        phases: Vec<f64>,
    },
}

impl TryFrom<RawFeatureMap> for FeatureMap {
    type Error = Error;

    fn try_from(raw: RawFeatureMap) -> Result<Self> {
        let map = match raw {
            RawFeatureMap::OneHot {
                n_states,
                n_actions,
            } => FeatureMap::OneHot {
                n_states,
                n_actions,
            },
            RawFeatureMap::RandomFourier {
                state_dim,
                n_actions,
                d_w,
                bandwidth,
                seed,
                weights,
                phases,
            } => FeatureMap::RandomFourier {
                state_dim,
                n_actions,
                d_w,
                bandwidth,
                seed,
                weights,
                phases,
            },
        };
        map.validate()?;
        Ok(map)
    }
}

impl From<FeatureMap> for RawFeatureMap {
    fn from(map: FeatureMap) -> Self {
        match map {
            FeatureMap::OneHot {
                n_states,
                n_actions,
            } => RawFeatureMap::OneHot {
                n_states,
                n_actions,
            },
            FeatureMap::RandomFourier {
                state_dim,
                n_actions,
                d_w,
                bandwidth,
                seed,
                weights,
                phases,
            } => RawFeatureMap::RandomFourier {
                state_dim,
                n_actions,
                d_w,
                bandwidth,
                seed,
                weights,
                phases,
            },
        }
    }
}

pub fn one_hot(n_states: usize, n_actions: usize) -> Result<FeatureMap> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::InvalidConfig(
            "one-hot sizes must be at least 1".into(),
        ));
    }
    Ok(FeatureMap::OneHot {
        n_states,
        n_actions,
    })
}

pub fn random_fourier(
    state_dim: usize,
    n_actions: usize,
    d_w: usize,
    bandwidth: f64,
    seed: u64,
) -> Result<FeatureMap> {
    if d_w == 0 || state_dim == 0 || n_actions == 0 {
        return Err(Error::InvalidConfig(
            "random Fourier sizes must be at least 1".into(),
        ));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "bandwidth {bandwidth} must be positive"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = (0..d_w)
        .map(|_| (0..state_dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let phases = (0..d_w)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    Ok(FeatureMap::RandomFourier {
        state_dim,
        n_actions,
        d_w,
        bandwidth,
        seed,
        weights,
        phases,
    })
}

/// Median pairwise Euclidean distance of a probe set.
pub fn median_bandwidth(probe: &[Vec<f64>]) -> Result<f64> {
    let mut dists = Vec::with_capacity(probe.len() * probe.len().saturating_sub(1) / 2);
    for (i, x) in probe.iter().enumerate() {
        for y in &probe[i + 1..] {
            dists.push(
                x.iter()
                    .zip(y)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt(),
            );
        }
    }
    if dists.is_empty() {
        return Err(Error::InvalidConfig(
            "median heuristic needs at least two states".into(),
        ));
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    let med = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if med > 0.0 {
        Ok(med)
    } else {
        Err(Error::InvalidConfig(
            "probe states are all identical".into(),
        ))
    }
}

impl FeatureMap {
    /// Checks sizes, shapes and finiteness so that featurizing never panics on a valid state.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        match self {
            FeatureMap::OneHot {
                n_states,
                n_actions,
            } => {
                if *n_states == 0 || *n_actions == 0 {
                    return bad("one-hot sizes must be at least 1".into());
                }
                if n_states.checked_mul(*n_actions).is_none() {
                    return bad("one-hot dimension overflows".into());
                }
            }
            FeatureMap::RandomFourier {
                state_dim,
                n_actions,
                d_w,
                bandwidth,
                weights,
                phases,
                ..
            } => {
                if *d_w == 0 || *state_dim == 0 || *n_actions == 0 {
                    return bad("random Fourier sizes must be at least 1".into());
                }
                if d_w.checked_mul(*n_actions).is_none() {
                    return bad("random Fourier dimension overflows".into());
                }
                if !(*bandwidth > 0.0 && bandwidth.is_finite()) {
                    return bad(format!("bandwidth {bandwidth} must be positive"));
                }
                if weights.len() != *d_w || weights.iter().any(|w| w.len() != *state_dim) {
                    return bad(format!("weights must be {d_w} × {state_dim}"));
                }
                if phases.len() != *d_w {
                    return bad(format!("expected {d_w} phases, got {}", phases.len()));
                }
                if weights
                    .iter()
                    .flatten()
                    .chain(phases)
                    .any(|x| !x.is_finite())
                {
                    return bad("weights and phases must be finite".into());
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::OneHot {
                n_states,
                n_actions,
            } => n_states * n_actions,
            FeatureMap::RandomFourier { d_w, n_actions, .. } => d_w * n_actions,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            FeatureMap::OneHot { n_actions, .. } | FeatureMap::RandomFourier { n_actions, .. } => {
                *n_actions
            }
        }
    }

    /// Checks that `s` is a state this map can featurize.
    pub fn check_state(&self, s: &State) -> Result<()> {
        match (self, s) {
            (FeatureMap::OneHot { n_states, .. }, State::Discrete(i)) if i < n_states => Ok(()),
            (FeatureMap::RandomFourier { state_dim, .. }, State::Continuous(v))
                if v.len() == *state_dim && v.iter().all(|x| x.is_finite()) =>
            {
                Ok(())
            }
            _ => Err(Error::Shape(format!(
                "state {s:?} incompatible with feature map"
            ))),
        }
    }

    /// State part of the random Fourier map, `[cos(wᵢ·s/σ + βᵢ)]ᵢ/√d_w`.
    pub fn state_features(&self, s: &[f64]) -> Vec<f64> {
        match self {
            FeatureMap::RandomFourier {
                d_w,
                bandwidth,
                weights,
                phases,
                ..
            } => {
                let scale = 1.0 / (*d_w as f64).sqrt();
                weights
                    .iter()
                    .zip(phases)
                    .map(|(w, b)| {
                        let proj: f64 = w.iter().zip(s).map(|(wi, si)| wi * si).sum();
                        scale * (proj / bandwidth + b).cos()
                    })
                    .collect()
            }
            FeatureMap::OneHot { .. } => {
                panic!("state_features is defined for random Fourier maps")
            }
        }
    }

    /// Writes `φ(s, a)` into `out` (length `dim()`).
    ///
    /// Panics when `s` fails [`FeatureMap::check_state`].
    pub fn fill(&self, s: &State, a: usize, out: &mut [f64]) {
        out.fill(0.0);
        match self {
            FeatureMap::OneHot { n_actions, .. } => {
                let i = s.index().expect("one-hot map needs a discrete state");
                out[i * n_actions + a] = 1.0;
            }
            FeatureMap::RandomFourier { d_w, .. } => {
                let v = s
                    .vector()
                    .expect("random Fourier map needs a continuous state");
                let block = self.state_features(v);
                out[a * d_w..(a + 1) * d_w].copy_from_slice(&block);
            }
        }
    }

    pub fn features(&self, s: &State, a: usize) -> Result<Vec<f64>> {
        self.check_state(s)?;
        if a >= self.n_actions() {
            return Err(Error::Shape(format!("action {a} out of range")));
        }
        let mut out = vec![0.0; self.dim()];
        self.fill(s, a, &mut out);
        Ok(out)
    }

    /// `[φ(s, a)]_a` as one `n_actions × dim` buffer, row per action.
    pub fn all_actions(&self, s: &State) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d * self.n_actions()];
        for (a, row) in out.chunks_mut(d).enumerate() {
            self.fill(s, a, row);
        }
        out
    }

    /// `φ(s, a)ᵀθ` for every action.
    pub fn action_scores(&self, s: &State, theta: &[f64]) -> Vec<f64> {
        match self {
            FeatureMap::OneHot { n_actions, .. } => {
                let i = s.index().expect("one-hot map needs a discrete state");
                theta[i * n_actions..(i + 1) * n_actions].to_vec()
            }
            FeatureMap::RandomFourier { d_w, n_actions, .. } => {
                let v = s
                    .vector()
                    .expect("random Fourier map needs a continuous state");
                let block = self.state_features(v);
                (0..*n_actions)
                    .map(|a| {
                        block
                            .iter()
                            .zip(&theta[a * d_w..(a + 1) * d_w])
                            .map(|(x, t)| x * t)
                            .sum()
                    })
                    .collect()
            }
        }
    }
}
