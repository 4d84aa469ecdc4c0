//! Finite discounted MDPs and their exact dynamic-programming oracles.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{Policy, State};

const STOCHASTIC_TOL: f64 = 1e-12;

/// Largest `|S|·|A|` accepted by the dense exact solvers.
pub const MAX_PAIRS: usize = 10_000;

/// A finite MDP `(S, A, P, R, γ, s₀)` with rewards in `[0, rmax]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMdp", into = "RawMdp")]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// Flat `[s][a][s′]`.
    transition: Vec<f64>,
    /// Flat `[s][a]`.
    reward: Vec<f64>,
    gamma: f64,
    s0: usize,
    rmax: f64,
}

#[derive(Serialize, Deserialize)]
struct RawMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
    gamma: f64,
    s0: usize,
    rmax: f64,
}

impl TryFrom<RawMdp> for TabularMdp {
    type Error = Error;

    fn try_from(raw: RawMdp) -> Result<Self> {
        if raw.transition.len() != raw.n_states
            || raw.transition.iter().any(|row| {
                row.len() != raw.n_actions || row.iter().any(|p| p.len() != raw.n_states)
            })
        {
            return Err(Error::InvalidMdp("transition has wrong shape".into()));
        }
        if raw.reward.len() != raw.n_states || raw.reward.iter().any(|r| r.len() != raw.n_actions) {
            return Err(Error::InvalidMdp("reward has wrong shape".into()));
        }
        TabularMdp::new(
            raw.n_states,
            raw.n_actions,
            raw.transition.into_iter().flatten().flatten().collect(),
            raw.reward.into_iter().flatten().collect(),
            raw.gamma,
            raw.s0,
            raw.rmax,
        )
    }
}

impl From<TabularMdp> for RawMdp {
    fn from(m: TabularMdp) -> Self {
        let (ns, na) = (m.n_states, m.n_actions);
        RawMdp {
            n_states: ns,
            n_actions: na,
            transition: (0..ns)
                .map(|s| (0..na).map(|a| m.transition_row(s, a).to_vec()).collect())
                .collect(),
            reward: m.reward.chunks(na).map(<[f64]>::to_vec).collect(),
            gamma: m.gamma,
            s0: m.s0,
            rmax: m.rmax,
        }
    }
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        s0: usize,
        rmax: f64,
    ) -> Result<Self> {
        let mdp = TabularMdp {
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
            s0,
            rmax,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    fn validate(&self) -> Result<()> {
        let (ns, na) = (self.n_states, self.n_actions);
        if ns == 0 || na == 0 {
            return Err(Error::InvalidMdp(
                "need at least one state and one action".into(),
            ));
        }
        if ns.checked_mul(na).is_none_or(|p| p > MAX_PAIRS) {
            return Err(Error::InvalidMdp(format!(
                "|S||A| = {ns}x{na} exceeds the cap of {MAX_PAIRS}"
            )));
        }
        if self.transition.len() != ns * na * ns || self.reward.len() != ns * na {
            return Err(Error::InvalidMdp("array lengths do not match sizes".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidMdp(format!(
                "gamma {} not in [0, 1)",
                self.gamma
            )));
        }
        if self.s0 >= ns {
            return Err(Error::InvalidMdp(format!("s0 {} out of range", self.s0)));
        }
        if !(self.rmax > 0.0 && self.rmax.is_finite()) {
            return Err(Error::InvalidMdp("rmax must be positive and finite".into()));
        }
        for s in 0..ns {
            for a in 0..na {
                let row = self.transition_row(s, a);
                if row.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
                    return Err(Error::InvalidMdp(format!(
                        "negative probability at ({s},{a})"
                    )));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(Error::InvalidMdp(format!(
                        "transition row ({s},{a}) sums to {total}"
                    )));
                }
                let r = self.reward(s, a);
                if !(0.0..=self.rmax).contains(&r) {
                    return Err(Error::InvalidMdp(format!(
                        "reward {r} at ({s},{a}) outside [0, {}]",
                        self.rmax
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn s0(&self) -> usize {
        self.s0
    }

    pub fn rmax(&self) -> f64 {
        self.rmax
    }

    /// `Rmax / (1 − γ)`.
    pub fn vmax(&self) -> f64 {
        self.rmax / (1.0 - self.gamma)
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    /// Returns a copy with `R(s, a)` replaced. The new value must still lie in `[0, rmax]`.
    pub fn with_reward(&self, s: usize, a: usize, r: f64) -> Result<Self> {
        let mut m = self.clone();
        m.reward[s * self.n_actions + a] = r;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// State-action transition matrix under `pi`: `P^π[(s,a),(s′,a′)] = P(s′|s,a)·π(a′|s′)`.
    fn pair_transition(&self, pi: &TabularPolicy) -> DMatrix<f64> {
        let (ns, na) = (self.n_states, self.n_actions);
        let sa = ns * na;
        let mut p = DMatrix::zeros(sa, sa);
        for s in 0..ns {
            for a in 0..na {
                let i = s * na + a;
                for (sp, &prob) in self.transition_row(s, a).iter().enumerate() {
                    if prob == 0.0 {
                        continue;
                    }
                    for ap in 0..na {
                        p[(i, sp * na + ap)] += prob * pi.prob(sp, ap);
                    }
                }
            }
        }
        p
    }

    fn check_policy(&self, pi: &TabularPolicy) -> Result<()> {
        if pi.n_states != self.n_states || pi.n_actions != self.n_actions {
            return Err(Error::Shape(format!(
                "policy is {}x{}, MDP is {}x{}",
                pi.n_states, pi.n_actions, self.n_states, self.n_actions
            )));
        }
        Ok(())
    }
}

/// A stationary stochastic policy over a finite MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TryFrom<Vec<Vec<f64>>> for TabularPolicy {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        TabularPolicy::from_rows(&rows)
    }
}

impl From<TabularPolicy> for Vec<Vec<f64>> {
    fn from(p: TabularPolicy) -> Self {
        p.probs.chunks(p.n_actions).map(<[f64]>::to_vec).collect()
    }
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || probs.len() != n_states * n_actions {
            return Err(Error::InvalidPolicy(format!(
                "expected {n_states}x{n_actions} probabilities, got {}",
                probs.len()
            )));
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            if row.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
                return Err(Error::InvalidPolicy(format!("negative entry in row {s}")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidPolicy(format!("row {s} sums to {total}")));
            }
        }
        Ok(TabularPolicy {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(Error::InvalidPolicy("ragged rows".into()));
        }
        Self::new(rows.len(), n_actions, rows.concat())
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        TabularPolicy {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Deterministic policy taking `actions[s]` in state `s`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::InvalidPolicy(format!("action {a} out of range")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Self::new(actions.len(), n_actions, probs)
    }

    /// `(1 − w)·self + w·other`.
    pub fn mix(&self, other: &TabularPolicy, w: f64) -> Result<Self> {
        if self.probs.len() != other.probs.len() || !(0.0..=1.0).contains(&w) {
            return Err(Error::InvalidPolicy("incompatible mixture".into()));
        }
        let probs = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(p, q)| (1.0 - w) * p + w * q)
            .collect();
        Ok(TabularPolicy {
            n_states: self.n_states,
            n_actions: self.n_actions,
            probs,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Materializes any policy over a discrete state space.
    pub fn from_policy<P: Policy>(pi: &P, n_states: usize) -> Result<Self> {
        let na = pi.n_actions();
        let mut probs = vec![0.0; n_states * na];
        for s in 0..n_states {
            pi.action_probs(&State::Discrete(s), &mut probs[s * na..(s + 1) * na]);
        }
        Self::new(n_states, na, probs)
    }
}

impl Policy for TabularPolicy {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn action_probs(&self, s: &State, out: &mut [f64]) {
        let s = s
            .index()
            .expect("tabular policy evaluated on a continuous state");
        out.copy_from_slice(self.row(s));
    }
}

/// Dense action-value table `[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn new(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::Shape(format!(
                "Q table expects {} values, got {}",
                n_states * n_actions,
                values.len()
            )));
        }
        Ok(QTable {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        QTable {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    /// `f(s, π) = Σ_a π(a|s) f(s, a)`.
    pub fn state_value(&self, s: usize, pi: &TabularPolicy) -> f64 {
        pi.row(s)
            .iter()
            .zip(&self.values[s * self.n_actions..(s + 1) * self.n_actions])
            .map(|(p, q)| p * q)
            .sum()
    }

    pub fn max_abs_diff(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Lowest-index argmax action per state.
    pub fn greedy_actions(&self) -> Vec<usize> {
        self.values
            .chunks(self.n_actions)
            .map(|row| {
                let mut best = 0;
                for (a, &q) in row.iter().enumerate() {
                    if q > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }
}

/// `Q^π`, the fixed point of `𝒯^π`, from the `|S||A|` linear system `(I − γP^π)Q = R`.
pub fn exact_q(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<QTable> {
    mdp.check_policy(pi)?;
    let sa = mdp.n_pairs();
    let p = mdp.pair_transition(pi);
    let lhs = DMatrix::<f64>::identity(sa, sa) - p * mdp.gamma;
    let rhs = DVector::from_column_slice(&mdp.reward);
    let q = crate::linalg::solve(&lhs, &rhs)?;
    QTable::new(mdp.n_states, mdp.n_actions, q.iter().copied().collect())
}

/// `J(π) = Q^π(s₀, π)`.
pub fn policy_return(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<f64> {
    let q = exact_q(mdp, pi)?;
    Ok(q.state_value(mdp.s0, pi))
}

/// Normalized discounted state-action occupancy `d_π`, flat `[s][a]`.
///
/// Solves the flow equation `(I − γP^π)ᵀ d = (1 − γ)ρ` with `ρ(s, a) = 1[s = s₀]π(a|s₀)`.
pub fn occupancy(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<Vec<f64>> {
    mdp.check_policy(pi)?;
    let (na, sa) = (mdp.n_actions, mdp.n_pairs());
    let p = mdp.pair_transition(pi);
    let lhs = (DMatrix::<f64>::identity(sa, sa) - p * mdp.gamma).transpose();
    let mut rho = DVector::zeros(sa);
    for a in 0..na {
        rho[mdp.s0 * na + a] = (1.0 - mdp.gamma) * pi.prob(mdp.s0, a);
    }
    let d = crate::linalg::solve(&lhs, &rho)?;
    // Clamp round-off negatives; the true solution is non-negative.
    Ok(d.iter().map(|&x| x.max(0.0)).collect())
}

/// `(𝒯^π f)(s, a) = R(s, a) + γ·E_{s′∼P(·|s,a)}[f(s′, π)]`.
pub fn bellman_backup(mdp: &TabularMdp, pi: &TabularPolicy, f: &QTable) -> Result<QTable> {
    mdp.check_policy(pi)?;
    if f.n_states != mdp.n_states || f.n_actions != mdp.n_actions {
        return Err(Error::Shape("Q table does not match MDP".into()));
    }
    if f.values.iter().any(|x| !x.is_finite()) {
        return Err(Error::Shape("Q table has non-finite entries".into()));
    }
    let v: Vec<f64> = (0..mdp.n_states).map(|s| f.state_value(s, pi)).collect();
    let mut out = Vec::with_capacity(mdp.n_pairs());
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let ev: f64 = mdp
                .transition_row(s, a)
                .iter()
                .zip(&v)
                .map(|(p, x)| p * x)
                .sum();
            out.push(mdp.reward(s, a) + mdp.gamma * ev);
        }
    }
    QTable::new(mdp.n_states, mdp.n_actions, out)
}

/// Optimal action values by value iteration until the sup-norm change is below `tol`.
pub fn optimal_q(mdp: &TabularMdp, tol: f64) -> QTable {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut q = QTable::zeros(ns, na);
    loop {
        let v: Vec<f64> = q
            .values
            .chunks(na)
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mut delta = 0.0f64;
        for s in 0..ns {
            for a in 0..na {
                let ev: f64 = mdp
                    .transition_row(s, a)
                    .iter()
                    .zip(&v)
                    .map(|(p, x)| p * x)
                    .sum();
                let new = mdp.reward(s, a) + mdp.gamma * ev;
                delta = delta.max((new - q.values[s * na + a]).abs());
                q.values[s * na + a] = new;
            }
        }
        if delta < tol {
            return q;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn single_state(gamma: f64) -> TabularMdp {
        TabularMdp::new(1, 1, vec![1.0], vec![1.0], gamma, 0, 1.0).unwrap()
    }

    fn chain() -> TabularMdp {
        // s0 -> s1 (absorbing); R(s0) = 0, R(s1) = 1.
        TabularMdp::new(2, 1, vec![0.0, 1.0, 0.0, 1.0], vec![0.0, 1.0], 0.5, 0, 1.0).unwrap()
    }

    fn random_mdp(rng: &mut ChaCha8Rng, ns: usize, na: usize, gamma: f64) -> TabularMdp {
        let mut t = Vec::new();
        for _ in 0..ns * na {
            let row: Vec<f64> = (0..ns).map(|_| rng.random::<f64>()).collect();
            let total: f64 = row.iter().sum();
            t.extend(row.iter().map(|x| x / total));
        }
        let r = (0..ns * na).map(|_| rng.random::<f64>()).collect();
        TabularMdp::new(ns, na, t, r, gamma, 0, 1.0).unwrap()
    }

    fn random_policy(rng: &mut ChaCha8Rng, ns: usize, na: usize) -> TabularPolicy {
        let mut p = Vec::new();
        for _ in 0..ns {
            let row: Vec<f64> = (0..na).map(|_| rng.random::<f64>() + 1e-3).collect();
            let total: f64 = row.iter().sum();
            p.extend(row.iter().map(|x| x / total));
        }
        TabularPolicy::new(ns, na, p).unwrap()
    }

    /// Policy-evaluation value iteration: the independent oracle for `exact_q`.
    fn evaluate_by_iteration(mdp: &TabularMdp, pi: &TabularPolicy, steps: usize) -> QTable {
        let mut q = QTable::zeros(mdp.n_states(), mdp.n_actions());
        for _ in 0..steps {
            q = bellman_backup(mdp, pi, &q).unwrap();
        }
        q
    }

    #[test]
    fn single_state_value_is_geometric_series() {
        let mdp = single_state(0.9);
        let pi = TabularPolicy::uniform(1, 1);
        let q = exact_q(&mdp, &pi).unwrap();
        assert!((q.get(0, 0) - 10.0).abs() < 1e-12);
        assert!((policy_return(&mdp, &pi).unwrap() - 10.0).abs() < 1e-12);
        let d = occupancy(&mdp, &pi).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_chain() {
        let mdp = chain();
        let pi = TabularPolicy::uniform(2, 1);
        let q = exact_q(&mdp, &pi).unwrap();
        let oracle = evaluate_by_iteration(&mdp, &pi, 1000);
        assert!((oracle.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((oracle.get(1, 0) - 2.0).abs() < 1e-12);
        assert!((q.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((q.get(1, 0) - 2.0).abs() < 1e-12);
        assert!((policy_return(&mdp, &pi).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_q_matches_value_iteration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mdp = random_mdp(&mut rng, 5, 2, 0.9);
        let pi = random_policy(&mut rng, 5, 2);
        let q = exact_q(&mdp, &pi).unwrap();
        let mut oracle = QTable::zeros(5, 2);
        loop {
            let next = bellman_backup(&mdp, &pi, &oracle).unwrap();
            let delta = next.max_abs_diff(&oracle);
            oracle = next;
            if delta < 1e-12 {
                break;
            }
        }
        assert!(q.max_abs_diff(&oracle) < 1e-8);
    }

    #[test]
    fn backup_of_zero_is_reward_and_fixed_point_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mdp = random_mdp(&mut rng, 4, 3, 0.8);
        let pi = random_policy(&mut rng, 4, 3);
        let zero = QTable::zeros(4, 3);
        assert_eq!(
            bellman_backup(&mdp, &pi, &zero).unwrap().values,
            mdp.rewards()
        );
        let q = exact_q(&mdp, &pi).unwrap();
        assert!(bellman_backup(&mdp, &pi, &q).unwrap().max_abs_diff(&q) < 1e-9);
    }

    #[test]
    fn backup_is_affine() {
        // 𝒯(αf) − 𝒯(0) = αγP^π f, checked against a direct matrix product.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mdp = random_mdp(&mut rng, 3, 2, 0.7);
        let pi = random_policy(&mut rng, 3, 2);
        let f = QTable::new(3, 2, (0..6).map(|_| rng.random::<f64>()).collect()).unwrap();
        let alpha = 2.5;
        let scaled = QTable::new(3, 2, f.values.iter().map(|x| alpha * x).collect()).unwrap();
        let lhs = bellman_backup(&mdp, &pi, &scaled).unwrap();
        let base = bellman_backup(&mdp, &pi, &QTable::zeros(3, 2)).unwrap();
        let pf = mdp.pair_transition(&pi) * DVector::from_column_slice(&f.values);
        for i in 0..6 {
            let expect = alpha * mdp.gamma() * pf[i];
            assert!((lhs.values[i] - base.values[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn occupancy_value_identity_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let gamma = rng.random_range(0.0..0.95);
            let mdp = random_mdp(&mut rng, 4, 2, gamma);
            let pi = random_policy(&mut rng, 4, 2);
            let j = policy_return(&mdp, &pi).unwrap();
            assert!((0.0..=mdp.vmax() + 1e-9).contains(&j));
            let d = occupancy(&mdp, &pi).unwrap();
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let via_d: f64 =
                d.iter().zip(mdp.rewards()).map(|(x, r)| x * r).sum::<f64>() / (1.0 - mdp.gamma());
            assert!((via_d - j).abs() < 1e-8);
        }
    }

    #[test]
    fn raising_reward_never_lowers_return() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mdp = random_mdp(&mut rng, 4, 2, 0.9);
        let pi = random_policy(&mut rng, 4, 2);
        let j = policy_return(&mdp, &pi).unwrap();
        for s in 0..4 {
            for a in 0..2 {
                let bumped = mdp.with_reward(s, a, 1.0).unwrap();
                assert!(policy_return(&bumped, &pi).unwrap() >= j - 1e-12);
            }
        }
    }

    #[test]
    fn rejects_invalid_inputs() {
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![1.0], 1.0, 0, 1.0).is_err());
        assert!(TabularMdp::new(1, 1, vec![0.9], vec![1.0], 0.5, 0, 1.0).is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![2.0], 0.5, 0, 1.0).is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![1.0], 0.5, 1, 1.0).is_err());
        assert!(TabularPolicy::new(1, 2, vec![0.5, 0.6]).is_err());
        assert!(TabularMdp::from_json("{\"n_states\":1}").is_err());
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mdp = random_mdp(&mut rng, 3, 2, 0.9);
        let back = TabularMdp::from_json(&mdp.to_json().unwrap()).unwrap();
        assert_eq!(mdp, back);
    }
}
