use serde::{Deserialize, Serialize};

/// An environment state: a tabular index or a real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum State {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl State {
    pub fn index(&self) -> Option<usize> {
        match self {
            State::Discrete(s) => Some(*s),
            State::Continuous(_) => None,
        }
    }

    pub fn vector(&self) -> Option<&[f64]> {
        match self {
            State::Discrete(_) => None,
            State::Continuous(v) => Some(v),
        }
    }
}

/// A stochastic policy over a finite action set.
pub trait Policy {
    fn n_actions(&self) -> usize;

    /// Writes π(·|s) into `out` (length `n_actions`).
    fn action_probs(&self, s: &State, out: &mut [f64]);

    fn probs_vec(&self, s: &State) -> Vec<f64> {
        let mut out = vec![0.0; self.n_actions()];
        self.action_probs(s, &mut out);
        out
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn n_actions(&self) -> usize {
        (**self).n_actions()
    }

    fn action_probs(&self, s: &State, out: &mut [f64]) {
        (**self).action_probs(s, out)
    }
}
