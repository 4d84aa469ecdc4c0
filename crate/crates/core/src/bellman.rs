//! Empirical Bellman error `ℰ(f, π; 𝒟) = ℒ(f, f, π; 𝒟) − min_{f′} ℒ(f′, f, π; 𝒟)` where
//! `ℒ(f′, f, π; 𝒟)` is the mean of `(f′(s, a) − r − γ f(s′, π))²` over the dataset.
//!
//! Two forms are provided:
//!
//! * finite classes of Q tables, with the minimum taken explicitly over the class;
//! * linear classes `f = φᵀθ`, where the inner minimum is a least-squares regression and
//!   everything reduces to the sample moments in [`MomentMatrices`].
//!
//! With `ψ = Σ_{a′} π(a′|s′) φ(s′, a′)` (zeroed at terminal transitions),
//! `Σ = E[φφᵀ]`, `B = E[φψᵀ]`, `C = E[ψψᵀ]`, `b = E[φ r]`, `c = E[ψ r]`, the linear error
//! is the quadratic `θᵀ(I − γΣ†B)ᵀΣ(I − γΣ†B)θ − 2θᵀ(I − γΣ†B)ᵀb + bᵀΣ†b`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::linalg::{default_rtol, pinv};
use crate::mdp::{bellman_backup, QTable, TabularMdp, TabularPolicy};
use crate::state::{Policy, State};

/// Sample moments of a dataset under a feature map and a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentMatrices {
    #[serde(with = "crate::serde_mat::matrix")]
    pub sigma: DMatrix<f64>,
    #[serde(with = "crate::serde_mat::matrix")]
    pub big_b: DMatrix<f64>,
    #[serde(with = "crate::serde_mat::matrix")]
    pub big_c: DMatrix<f64>,
    #[serde(with = "crate::serde_mat::vector")]
    pub b_vec: DVector<f64>,
    #[serde(with = "crate::serde_mat::vector")]
    pub c_vec: DVector<f64>,
    /// `φ(s₀, π)`, averaged over the start states when there are several.
    #[serde(with = "crate::serde_mat::vector")]
    pub phi0: DVector<f64>,
    /// `E[r²]`; only needed by the definition-based error path.
    pub r_sq_mean: f64,
    pub gamma: f64,
    pub n: usize,
}

impl MomentMatrices {
    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn default_rtol(&self) -> f64 {
        default_rtol(self.dim(), self.dim())
    }

    /// Precomputes the quadratic form of `ℰ(θ)`.
    pub fn bellman_form(&self, rtol: f64) -> Result<LinearBellmanForm> {
        self.bellman_form_with_pinv(pinv(&self.sigma, rtol)?)
    }

    /// [`MomentMatrices::bellman_form`] with a precomputed `Σ†`.
    pub fn bellman_form_with_pinv(&self, sigma_pinv: DMatrix<f64>) -> Result<LinearBellmanForm> {
        let d = self.dim();
        if sigma_pinv.shape() != (d, d) {
            return Err(Error::Shape(
                "sigma pseudo-inverse has the wrong shape".into(),
            ));
        }
        let a = DMatrix::<f64>::identity(d, d) - &sigma_pinv * &self.big_b * self.gamma;
        let hessian = a.transpose() * &self.sigma * &a;
        // Exact symmetrization; the product is symmetric up to round-off.
        let hessian = (&hessian + hessian.transpose()) * 0.5;
        let linear = a.transpose() * &self.b_vec * 2.0;
        let constant = self.b_vec.dot(&(&sigma_pinv * &self.b_vec));
        Ok(LinearBellmanForm {
            hessian,
            linear,
            constant,
            sigma_pinv,
        })
    }

    /// `‖ΣΣ†B − B‖_F / max(‖B‖_F, 1)`; zero in exact arithmetic.
    pub fn range_identity_residual(&self, rtol: f64) -> Result<f64> {
        let sp = pinv(&self.sigma, rtol)?;
        let lhs = &self.sigma * sp * &self.big_b;
        Ok((lhs - &self.big_b).norm() / self.big_b.norm().max(1.0))
    }
}

/// `ℰ(θ) = θᵀHθ − θᵀℓ + κ` with `H = (I − γΣ†B)ᵀΣ(I − γΣ†B)`, `ℓ = 2(I − γΣ†B)ᵀb`,
/// `κ = bᵀΣ†b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBellmanForm {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
    pub sigma_pinv: DMatrix<f64>,
}

impl LinearBellmanForm {
    pub fn eval(&self, theta: &DVector<f64>) -> f64 {
        theta.dot(&(&self.hessian * theta)) - theta.dot(&self.linear) + self.constant
    }
}

fn check_theta(theta: &DVector<f64>, m: &MomentMatrices) -> Result<()> {
    if theta.len() != m.dim() {
        return Err(Error::Shape(format!(
            "theta has length {}, moments have dimension {}",
            theta.len(),
            m.dim()
        )));
    }
    Ok(())
}

/// `ℰ(φᵀθ, π; 𝒟)` by its definition: mean squared TD error of `θ` minus the residual of
/// regressing the targets `r + γψᵀθ` onto `φ`.
pub fn bellman_error_linear(theta: &DVector<f64>, m: &MomentMatrices) -> Result<f64> {
    check_theta(theta, m)?;
    let g = m.gamma;
    let sp = pinv(&m.sigma, m.default_rtol())?;
    let b_theta = &m.big_b * theta;
    let c_theta = &m.big_c * theta;
    // E[y²] with y = r + γψᵀθ
    let y_sq = m.r_sq_mean + 2.0 * g * m.c_vec.dot(theta) + g * g * theta.dot(&c_theta);
    // E[φ y]
    let u = &m.b_vec + &b_theta * g;
    let td_loss = theta.dot(&(&m.sigma * theta)) - 2.0 * theta.dot(&u) + y_sq;
    let regression_residual = y_sq - u.dot(&(&sp * &u));
    Ok(td_loss - regression_residual)
}

/// `ℰ(φᵀθ, π; 𝒟)` from the closed quadratic form (independent algebraic route).
pub fn bellman_error_quadratic(theta: &DVector<f64>, m: &MomentMatrices) -> Result<f64> {
    check_theta(theta, m)?;
    Ok(m.bellman_form(m.default_rtol())?.eval(theta))
}

/// Accumulates moments for a fixed dataset and feature map. The policy-independent
/// parts (`Σ`, `b`, `E[r²]`, the `φ(s′, ·)` cache) are computed once; [`MomentBuilder::moments`]
/// rebuilds `B`, `C`, `c`, `φ₀` for each policy.
pub struct MomentBuilder<'a> {
    fm: &'a FeatureMap,
    gamma: f64,
    n: usize,
    /// `n × d`, row i = φ(sᵢ, aᵢ).
    phi: DMatrix<f64>,
    phi_t: DMatrix<f64>,
    /// One `n × d` matrix per action, row i = φ(s′ᵢ, a).
    next_phi: Vec<DMatrix<f64>>,
    next_states: Vec<State>,
    masks: Vec<f64>,
    rewards: DVector<f64>,
    start_states: Vec<State>,
    sigma: DMatrix<f64>,
    b_vec: DVector<f64>,
    r_sq_mean: f64,
    /// `(rtol, Σ†)` for the first cutoff requested.
    sigma_pinv: OnceLock<(f64, DMatrix<f64>)>,
}

impl<'a> MomentBuilder<'a> {
    pub fn new(ds: &Dataset, fm: &'a FeatureMap, start_states: &[State]) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if start_states.is_empty() {
            return Err(Error::InvalidConfig("need at least one start state".into()));
        }
        let (n, d, na) = (ds.len(), fm.dim(), fm.n_actions());
        for s in start_states {
            fm.check_state(s)?;
        }
        let mut phi = DMatrix::zeros(n, d);
        let mut next_phi = vec![DMatrix::zeros(n, d); na];
        let mut row = vec![0.0; d];
        for (i, t) in ds.transitions.iter().enumerate() {
            fm.check_state(&t.s)?;
            fm.check_state(&t.sp)?;
            if t.a >= na {
                return Err(Error::Shape(format!("action {} out of range", t.a)));
            }
            fm.fill(&t.s, t.a, &mut row);
            phi.row_mut(i).copy_from_slice(&row);
            for (a, m) in next_phi.iter_mut().enumerate() {
                fm.fill(&t.sp, a, &mut row);
                m.row_mut(i).copy_from_slice(&row);
            }
        }
        let rewards = DVector::from_iterator(n, ds.transitions.iter().map(|t| t.r));
        let inv_n = 1.0 / n as f64;
        let phi_t = phi.transpose();
        let sigma = &phi_t * &phi * inv_n;
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        let b_vec = &phi_t * &rewards * inv_n;
        let r_sq_mean = rewards.dot(&rewards) * inv_n;
        Ok(MomentBuilder {
            fm,
            gamma: ds.gamma(),
            n,
            phi,
            phi_t,
            next_phi,
            next_states: ds.transitions.iter().map(|t| t.sp.clone()).collect(),
            masks: ds.transitions.iter().map(|t| t.bootstrap()).collect(),
            rewards,
            start_states: start_states.to_vec(),
            sigma,
            b_vec,
            r_sq_mean,
            sigma_pinv: OnceLock::new(),
        })
    }

    /// `Σ†` at cutoff `rtol`, cached across calls with the same cutoff.
    pub fn sigma_pinv(&self, rtol: f64) -> Result<DMatrix<f64>> {
        if let Some((r, p)) = self.sigma_pinv.get() {
            if *r == rtol {
                return Ok(p.clone());
            }
            return pinv(&self.sigma, rtol);
        }
        let p = pinv(&self.sigma, rtol)?;
        let _ = self.sigma_pinv.set((rtol, p.clone()));
        Ok(p)
    }

    pub fn default_rtol(&self) -> f64 {
        default_rtol(self.fm.dim(), self.fm.dim())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn feature_map(&self) -> &FeatureMap {
        self.fm
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn rewards(&self) -> &DVector<f64> {
        &self.rewards
    }

    pub fn masks(&self) -> &[f64] {
        &self.masks
    }

    /// `φ(s′ᵢ, a)ᵀθ` for every transition and action, `n × |A|`.
    pub fn next_scores(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let na = self.next_phi.len();
        let mut out = DMatrix::zeros(self.n, na);
        for (a, m) in self.next_phi.iter().enumerate() {
            out.set_column(a, &(m * theta));
        }
        out
    }

    /// Rows `φ(s′ᵢ, a)` for one action.
    pub fn next_phi(&self, a: usize) -> &DMatrix<f64> {
        &self.next_phi[a]
    }

    /// Moments for policy `pi`.
    pub fn moments<P: Policy>(&self, pi: &P) -> MomentMatrices {
        let na = self.next_phi.len();
        let mut probs = DMatrix::zeros(self.n, na);
        let mut buf = vec![0.0; na];
        for (i, s) in self.next_states.iter().enumerate() {
            pi.action_probs(s, &mut buf);
            for a in 0..na {
                probs[(i, a)] = buf[a];
            }
        }
        let phi0 = self.start_features(pi);
        self.moments_from_probs(&probs, phi0)
    }

    /// `φ(s₀, π)` averaged over the start states.
    pub fn start_features<P: Policy>(&self, pi: &P) -> DVector<f64> {
        let d = self.fm.dim();
        let na = self.fm.n_actions();
        let mut phi0 = DVector::zeros(d);
        let mut buf = vec![0.0; na];
        let w = 1.0 / self.start_states.len() as f64;
        for s in &self.start_states {
            pi.action_probs(s, &mut buf);
            let all = self.fm.all_actions(s);
            for (a, p) in buf.iter().enumerate() {
                for (k, x) in all[a * d..(a + 1) * d].iter().enumerate() {
                    phi0[k] += w * p * x;
                }
            }
        }
        phi0
    }

    /// Moments given `π(a|s′ᵢ)` as an `n × |A|` matrix.
    pub fn moments_from_probs(&self, probs: &DMatrix<f64>, phi0: DVector<f64>) -> MomentMatrices {
        let d = self.fm.dim();
        let mut psi = DMatrix::zeros(self.n, d);
        for (a, m) in self.next_phi.iter().enumerate() {
            let mut weights = probs.column(a).clone_owned();
            for (w, mask) in weights.iter_mut().zip(&self.masks) {
                *w *= mask;
            }
            // psi += diag(weights) · m
            for j in 0..d {
                let col = m.column(j);
                let mut out = psi.column_mut(j);
                for i in 0..self.n {
                    out[i] += weights[i] * col[i];
                }
            }
        }
        let inv_n = 1.0 / self.n as f64;
        // Explicit transposes route the products through the blocked gemm kernel.
        let psi_t = psi.transpose();
        let big_b = &self.phi_t * &psi * inv_n;
        let big_c = &psi_t * &psi * inv_n;
        let big_c = (&big_c + big_c.transpose()) * 0.5;
        let c_vec = &psi_t * &self.rewards * inv_n;
        MomentMatrices {
            sigma: self.sigma.clone(),
            big_b,
            big_c,
            b_vec: self.b_vec.clone(),
            c_vec,
            phi0,
            r_sq_mean: self.r_sq_mean,
            gamma: self.gamma,
            n: self.n,
        }
    }
}

/// Moments of `ds` under `fm` and `pi`, with `φ₀ = φ(s₀, π)` averaged over `start_states`.
pub fn moment_matrices<P: Policy>(
    ds: &Dataset,
    fm: &FeatureMap,
    pi: &P,
    start_states: &[State],
) -> Result<MomentMatrices> {
    Ok(MomentBuilder::new(ds, fm, start_states)?.moments(pi))
}

/// A finite value-function class ℱ and policy class Π over a tabular MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteClass {
    pub q_functions: Vec<QTable>,
    pub policies: Vec<TabularPolicy>,
}

impl FiniteClass {
    /// Checks `0 ≤ f ≤ Vmax` for every member.
    pub fn validate(&self, vmax: f64) -> Result<()> {
        if self.q_functions.is_empty() {
            return Err(Error::EmptyClass);
        }
        for (i, f) in self.q_functions.iter().enumerate() {
            if f.values
                .iter()
                .any(|&v| !(0.0..=vmax * (1.0 + 1e-12)).contains(&v))
            {
                return Err(Error::InvalidConfig(format!(
                    "class member {i} leaves [0, {vmax}]"
                )));
            }
        }
        Ok(())
    }
}

/// Per-(s, a) sufficient statistics of a tabular dataset for the squared TD loss.
#[derive(Debug, Clone)]
pub struct TabularStats {
    n_states: usize,
    n_actions: usize,
    n: usize,
    gamma: f64,
    count: Vec<f64>,
    sum_r: Vec<f64>,
    sum_r2: Vec<f64>,
    /// `[sa][s′]` counts of bootstrapped transitions.
    next_count: Vec<f64>,
    /// `[sa][s′]` reward sums of bootstrapped transitions.
    next_r: Vec<f64>,
}

impl TabularStats {
    pub fn new(ds: &Dataset, n_states: usize, n_actions: usize) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let sa = n_states * n_actions;
        let mut st = TabularStats {
            n_states,
            n_actions,
            n: ds.len(),
            gamma: ds.gamma(),
            count: vec![0.0; sa],
            sum_r: vec![0.0; sa],
            sum_r2: vec![0.0; sa],
            next_count: vec![0.0; sa * n_states],
            next_r: vec![0.0; sa * n_states],
        };
        for t in &ds.transitions {
            let (s, sp) = match (t.s.index(), t.sp.index()) {
                (Some(s), Some(sp)) if s < n_states && sp < n_states && t.a < n_actions => (s, sp),
                _ => return Err(Error::Shape("transition outside the tabular space".into())),
            };
            let i = s * n_actions + t.a;
            st.count[i] += 1.0;
            st.sum_r[i] += t.r;
            st.sum_r2[i] += t.r * t.r;
            if t.mask == 1 {
                st.next_count[i * n_states + sp] += 1.0;
                st.next_r[i * n_states + sp] += t.r;
            }
        }
        Ok(st)
    }

    /// Per-(s, a) sums of the targets `y = r + γ f(s′, π)` and of `y²`.
    fn target_sums(&self, f: &QTable, pi: &TabularPolicy) -> (Vec<f64>, Vec<f64>) {
        let ns = self.n_states;
        let v: Vec<f64> = (0..ns).map(|s| f.state_value(s, pi)).collect();
        let g = self.gamma;
        let sa = self.count.len();
        let mut sy = vec![0.0; sa];
        let mut sy2 = vec![0.0; sa];
        for i in 0..sa {
            let (mut cv, mut cv2, mut rv) = (0.0, 0.0, 0.0);
            let row = i * ns..(i + 1) * ns;
            for ((&c, &nr), &vs) in self.next_count[row.clone()]
                .iter()
                .zip(&self.next_r[row])
                .zip(&v)
            {
                if c != 0.0 {
                    cv += c * vs;
                    cv2 += c * vs * vs;
                    rv += nr * vs;
                }
            }
            sy[i] = self.sum_r[i] + g * cv;
            sy2[i] = self.sum_r2[i] + 2.0 * g * rv + g * g * cv2;
        }
        (sy, sy2)
    }

    fn loss_with(&self, f_prime: &QTable, sy: &[f64], sy2: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..self.count.len() {
            let q = f_prime.values[i];
            total += self.count[i] * q * q - 2.0 * q * sy[i] + sy2[i];
        }
        total / self.n as f64
    }

    /// `ℒ(f′, f, π; 𝒟)`.
    pub fn squared_td_loss(&self, f_prime: &QTable, f: &QTable, pi: &TabularPolicy) -> f64 {
        let (sy, sy2) = self.target_sums(f, pi);
        self.loss_with(f_prime, &sy, &sy2)
    }

    /// `ℰ(f, π; 𝒟)` with the minimum over `class`.
    pub fn bellman_error(&self, f: &QTable, pi: &TabularPolicy, class: &[QTable]) -> Result<f64> {
        if class.is_empty() {
            return Err(Error::EmptyClass);
        }
        let (sy, sy2) = self.target_sums(f, pi);
        let own = self.loss_with(f, &sy, &sy2);
        let best = class
            .iter()
            .map(|g| self.loss_with(g, &sy, &sy2))
            .fold(f64::INFINITY, f64::min);
        Ok(own - best)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_states, self.n_actions)
    }
}

/// `ℒ(f′, f, π; 𝒟)` summed transition by transition (reference route).
pub fn squared_td_loss(f_prime: &QTable, f: &QTable, pi: &TabularPolicy, ds: &Dataset) -> f64 {
    let g = ds.gamma();
    let total: f64 = ds
        .transitions
        .iter()
        .map(|t| {
            let (s, sp) = (t.s.index().unwrap(), t.sp.index().unwrap());
            let target = t.r + g * t.bootstrap() * f.state_value(sp, pi);
            let e = f_prime.get(s, t.a) - target;
            e * e
        })
        .sum();
    total / ds.len() as f64
}

/// `ℰ(f, π; 𝒟) = ℒ(f, f, π; 𝒟) − min_{f′ ∈ ℱ} ℒ(f′, f, π; 𝒟)`.
pub fn bellman_error_finite(
    f: &QTable,
    pi: &TabularPolicy,
    ds: &Dataset,
    cls: &FiniteClass,
) -> Result<f64> {
    if cls.q_functions.is_empty() {
        return Err(Error::EmptyClass);
    }
    let stats = TabularStats::new(ds, f.n_states, f.n_actions)?;
    stats.bellman_error(f, pi, &cls.q_functions)
}

/// Concentrability coefficient; `Infinite` is a tagged sentinel, never a float infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Concentrability {
    Finite(f64),
    Infinite,
}

/// `max_{f ∈ ℱ} ‖f − 𝒯^π f‖²_{2,ν} / ‖f − 𝒯^π f‖²_{2,μ}` with exact backups.
///
/// Members with both norms zero are skipped; a zero denominator with a nonzero
/// numerator yields [`Concentrability::Infinite`].
pub fn concentrability(
    nu: &[f64],
    mu: &[f64],
    cls: &FiniteClass,
    pi: &TabularPolicy,
    mdp: &TabularMdp,
) -> Result<Concentrability> {
    let sa = mdp.n_pairs();
    if nu.len() != sa || mu.len() != sa {
        return Err(Error::Shape("distributions must cover every (s, a)".into()));
    }
    if cls.q_functions.is_empty() {
        return Err(Error::EmptyClass);
    }
    let mut worst: Option<f64> = None;
    for f in &cls.q_functions {
        let tf = bellman_backup(mdp, pi, f)?;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..sa {
            let e = f.values[i] - tf.values[i];
            num += nu[i] * e * e;
            den += mu[i] * e * e;
        }
        if den == 0.0 {
            if num == 0.0 {
                continue;
            }
            return Ok(Concentrability::Infinite);
        }
        let ratio = num / den;
        worst = Some(worst.map_or(ratio, |w: f64| w.max(ratio)));
    }
    worst
        .map(Concentrability::Finite)
        .ok_or(Error::DegenerateConcentrability)
}
