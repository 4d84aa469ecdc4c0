//! Pessimistic policy evaluation.
//!
//! * Version spaces over finite classes: keep every `f` whose empirical Bellman error is
//!   at most `ε`, evaluate `π` by the smallest `f(s₀, π)` among them, and select the policy
//!   with the best pessimistic value.
//! * Regularized linear evaluation: `argmin_θ φ(s₀, π)ᵀθ + λ·ℰ(θ, π; 𝒟)`, solved in closed
//!   form through the quadratic representation of `ℰ`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bellman::{FiniteClass, LinearBellmanForm, MomentMatrices, TabularStats};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{inverse, minimize_quadratic};
use crate::mdp::TabularPolicy;

/// Critical threshold `139·Vmax²·log(|ℱ||Π|/δ)/n + 39·ε_ℱ`.
pub fn epsilon_r(
    n: usize,
    vmax: f64,
    size_f: usize,
    size_pi: usize,
    delta: f64,
    eps_f: f64,
) -> Result<f64> {
    if n == 0 || size_f == 0 || size_pi == 0 {
        return Err(Error::InvalidConfig(
            "n and class sizes must be at least 1".into(),
        ));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidConfig(format!("delta {delta} not in (0, 1)")));
    }
    if eps_f < 0.0 {
        return Err(Error::InvalidConfig("eps_f must be non-negative".into()));
    }
    let log_term = (size_f as f64).ln() + (size_pi as f64).ln() - delta.ln();
    Ok(139.0 * vmax * vmax * log_term / n as f64 + 39.0 * eps_f)
}

/// How the version-space radius is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EpsilonMode {
    /// The critical threshold [`epsilon_r`].
    Theoretical {
        delta: f64,
        eps_f: f64,
    },
    /// Per policy, the `q`-quantile of the class members' Bellman errors.
    Quantile {
        q: f64,
    },
    Fixed {
        value: f64,
    },
}

impl Default for EpsilonMode {
    fn default() -> Self {
        EpsilonMode::Theoretical {
            delta: 0.1,
            eps_f: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionSpaceResult {
    pub member_mask: Vec<bool>,
    /// `ℰ(fᵢ, π; 𝒟)` for every class member.
    pub errors: Vec<f64>,
    pub epsilon: f64,
    /// `min_{f ∈ ℱ_{π,ε}} f(s₀, π)`.
    pub pessimistic_value: f64,
    pub pessimistic_f: usize,
}

fn class_errors(stats: &TabularStats, pi: &TabularPolicy, cls: &FiniteClass) -> Result<Vec<f64>> {
    cls.q_functions
        .iter()
        .map(|f| stats.bellman_error(f, pi, &cls.q_functions))
        .collect()
}

fn version_space_from_errors(
    errors: Vec<f64>,
    pi: &TabularPolicy,
    cls: &FiniteClass,
    epsilon: f64,
    s0: usize,
    policy_index: usize,
) -> Result<VersionSpaceResult> {
    let member_mask: Vec<bool> = errors.iter().map(|&e| e <= epsilon).collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, f) in cls.q_functions.iter().enumerate() {
        if member_mask[i] {
            let v = f.state_value(s0, pi);
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
    }
    let (pessimistic_f, pessimistic_value) = best.ok_or(Error::EmptyVersionSpace {
        policy: policy_index,
        epsilon,
    })?;
    Ok(VersionSpaceResult {
        member_mask,
        errors,
        epsilon,
        pessimistic_value,
        pessimistic_f,
    })
}

/// `ℱ_{π,ε} = {f ∈ ℱ : ℰ(f, π; 𝒟) ≤ ε}` and its pessimistic value at `s₀`.
pub fn version_space(
    pi: &TabularPolicy,
    ds: &Dataset,
    cls: &FiniteClass,
    epsilon: f64,
    s0: usize,
) -> Result<VersionSpaceResult> {
    if cls.q_functions.is_empty() {
        return Err(Error::EmptyClass);
    }
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "epsilon {epsilon} must be >= 0"
        )));
    }
    let f0 = &cls.q_functions[0];
    let stats = TabularStats::new(ds, f0.n_states, f0.n_actions)?;
    let errors = class_errors(&stats, pi, cls)?;
    version_space_from_errors(errors, pi, cls, epsilon, s0, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub policy: usize,
    /// Pessimistic value per policy; `None` when its version space is empty.
    pub scores: Vec<Option<f64>>,
    pub epsilons: Vec<f64>,
}

fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (q.clamp(0.0, 1.0) * (v.len() - 1) as f64).round() as usize;
    v[pos]
}

/// `π̂ = argmax_{π ∈ Π} min_{f ∈ ℱ_{π,ε}} f(s₀, π)`, lowest index on ties.
pub fn info_theoretic_select(
    ds: &Dataset,
    cls: &FiniteClass,
    mode: &EpsilonMode,
    vmax: f64,
    s0: usize,
) -> Result<Selection> {
    if cls.q_functions.is_empty() || cls.policies.is_empty() {
        return Err(Error::EmptyClass);
    }
    let f0 = &cls.q_functions[0];
    let stats = TabularStats::new(ds, f0.n_states, f0.n_actions)?;
    let fixed_eps = match mode {
        EpsilonMode::Theoretical { delta, eps_f } => Some(epsilon_r(
            ds.len(),
            vmax,
            cls.q_functions.len(),
            cls.policies.len(),
            *delta,
            *eps_f,
        )?),
        EpsilonMode::Fixed { value } => Some(*value),
        EpsilonMode::Quantile { .. } => None,
    };
    let per_policy: Vec<(f64, Option<f64>)> = cls
        .policies
        .par_iter()
        .enumerate()
        .map(|(k, pi)| -> Result<(f64, Option<f64>)> {
            let errors = class_errors(&stats, pi, cls)?;
            let eps = match (fixed_eps, mode) {
                (Some(e), _) => e,
                (None, EpsilonMode::Quantile { q }) => quantile(&errors, *q),
                _ => unreachable!(),
            };
            match version_space_from_errors(errors, pi, cls, eps, s0, k) {
                Ok(vs) => Ok((eps, Some(vs.pessimistic_value))),
                Err(Error::EmptyVersionSpace { .. }) => Ok((eps, None)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let mut best: Option<(usize, f64)> = None;
    for (k, (_, score)) in per_policy.iter().enumerate() {
        if let Some(v) = score {
            if best.is_none_or(|(_, b)| *v > b) {
                best = Some((k, *v));
            }
        }
    }
    let (policy, _) = best.ok_or(Error::AllVersionSpacesEmpty)?;
    Ok(Selection {
        policy,
        scores: per_policy.iter().map(|(_, s)| *s).collect(),
        epsilons: per_policy.iter().map(|(e, _)| *e).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PessimisticEvalConfig {
    pub lambda: f64,
    /// Relative pseudo-inverse cutoff; `None` uses `1e-10·d`.
    #[serde(default)]
    pub rtol: Option<f64>,
    /// Coefficient of an optional `κ‖θ‖²` term (Lagrangian of a norm ball on `θ`).
    /// Zero reproduces the unconstrained estimator exactly.
    #[serde(default)]
    pub ridge: f64,
}

impl PessimisticEvalConfig {
    pub fn new(lambda: f64) -> Self {
        PessimisticEvalConfig {
            lambda,
            rtol: None,
            ridge: 0.0,
        }
    }
}

/// `argmin_θ φ(s₀, π)ᵀθ + λ·ℰ(θ, π; 𝒟)`: minimizes `θᵀHθ − θᵀ(ℓ − φ₀/λ)` with the
/// quadratic form `(H, ℓ)` of `ℰ`.
pub fn pessimistic_eval_linear(
    m: &MomentMatrices,
    cfg: &PessimisticEvalConfig,
) -> Result<DVector<f64>> {
    if !(cfg.lambda > 0.0 && cfg.lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "lambda {} must be positive",
            cfg.lambda
        )));
    }
    if cfg.ridge < 0.0 {
        return Err(Error::InvalidConfig("ridge must be non-negative".into()));
    }
    if m.n == 0 {
        return Err(Error::EmptyDataset);
    }
    let rtol = cfg.rtol.unwrap_or_else(|| m.default_rtol());
    pessimistic_eval_with_form(m, &m.bellman_form(rtol)?, cfg)
}

/// [`pessimistic_eval_linear`] given the precomputed quadratic form of `ℰ`.
pub fn pessimistic_eval_with_form(
    m: &MomentMatrices,
    form: &LinearBellmanForm,
    cfg: &PessimisticEvalConfig,
) -> Result<DVector<f64>> {
    if !(cfg.lambda > 0.0 && cfg.lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "lambda {} must be positive",
            cfg.lambda
        )));
    }
    if cfg.ridge < 0.0 {
        return Err(Error::InvalidConfig("ridge must be non-negative".into()));
    }
    let rtol = cfg.rtol.unwrap_or_else(|| m.default_rtol());
    let d = m.dim();
    let h = &form.hessian + DMatrix::<f64>::identity(d, d) * cfg.ridge;
    let g = &form.linear - &m.phi0 / cfg.lambda;
    minimize_quadratic(&h, &g, rtol)
}

/// Closed-form minimizer when `Σ` and `A = I − γΣ⁻¹B` are invertible:
/// `θ = A⁻¹Σ⁻¹b − A⁻¹Σ⁻¹A⁻ᵀφ₀/(2λ)`.
pub fn closed_form_pessimistic(m: &MomentMatrices, lambda: f64) -> Result<DVector<f64>> {
    let (sigma_inv, a_inv) = invertible_parts(m)?;
    let lstd = &a_inv * &sigma_inv * &m.b_vec;
    let pess = &a_inv * &sigma_inv * a_inv.transpose() * &m.phi0 / (2.0 * lambda);
    Ok(lstd - pess)
}

/// `(Σ⁻¹, A⁻¹)`, or an error when either inverse does not exist.
pub(crate) fn invertible_parts(m: &MomentMatrices) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = m.dim();
    let sigma_inv = inverse(&m.sigma).ok_or_else(|| Error::Shape("sigma is singular".into()))?;
    let a = DMatrix::<f64>::identity(d, d) - &sigma_inv * &m.big_b * m.gamma;
    let a_inv = inverse(&a).ok_or_else(|| Error::Shape("I − γΣ⁻¹B is singular".into()))?;
    Ok((sigma_inv, a_inv))
}

/// `φ₀ᵀθ + λ·ℰ(θ)` (with `ℰ` from the quadratic form).
pub fn pessimistic_objective(theta: &DVector<f64>, m: &MomentMatrices, lambda: f64) -> Result<f64> {
    let form = m.bellman_form(m.default_rtol())?;
    Ok(m.phi0.dot(theta) + lambda * form.eval(theta))
}
