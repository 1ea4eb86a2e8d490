//! INDIAN and baseline first-order optimizers.
//!
//! INDIAN evolves a pair `(θ, ψ)`:
//!
//! ```text
//! θ' = θ + γ [ (1/β − α) θ − ψ/β − β v ]
//! ψ' = ψ + γ [ (1/β − α) θ − ψ/β ]
//! ```
//!
//! where `v` is a subgradient selection of the mini-batch loss at `θ`. Points
//! with `v = 0` and `ψ = (1 − αβ) θ` are fixed points.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numkit::{NumError, ParamVector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("invalid hyper-parameter: {0}")]
    HyperParam(String),
    #[error("dimension mismatch: {left} vs {right}")]
    Dimension { left: usize, right: usize },
    #[error("non-finite update at coordinate {index}")]
    Overflow { index: usize },
}

impl From<NumError> for OptimError {
    fn from(e: NumError) -> Self {
        match e {
            NumError::DimensionMismatch { left, right } => OptimError::Dimension { left, right },
            NumError::Overflow { index } => OptimError::Overflow { index },
        }
    }
}

fn same_len(a: &ParamVector, b: &ParamVector) -> Result<(), OptimError> {
    if a.len() != b.len() {
        return Err(OptimError::Dimension {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

fn finite(v: Vec<f64>) -> Result<ParamVector, OptimError> {
    let v = ParamVector::new(v);
    v.check_finite()?;
    Ok(v)
}

/// Viscous damping `alpha` and Newton damping `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub alpha: f64,
    pub beta: f64,
}

impl HyperParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, OptimError> {
        if !(alpha > 0.0 && alpha.is_finite()) || !(beta > 0.0 && beta.is_finite()) {
            return Err(OptimError::HyperParam(format!(
                "alpha and beta must be positive, got ({alpha}, {beta})"
            )));
        }
        Ok(HyperParams { alpha, beta })
    }

    /// `ψ` coordinate of the steady state above `θ`: `(1 − αβ) θ`.
    pub fn steady_psi(&self, theta: &ParamVector) -> ParamVector {
        theta.scale(1.0 - self.alpha * self.beta)
    }
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams { alpha: 0.5, beta: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub theta: ParamVector,
    pub psi: ParamVector,
    pub k: u64,
}

impl OptimState {
    pub fn new(theta: ParamVector, psi: ParamVector) -> Result<Self, OptimError> {
        same_len(&theta, &psi)?;
        theta.check_finite()?;
        psi.check_finite()?;
        Ok(OptimState { theta, psi, k: 0 })
    }
}

/// Starts INDIAN so that the first displacement is `−γ₀ ∇J(θ₀)`:
/// `ψ₀ = (1 − αβ) θ₀ − (β² − β) ∇J(θ₀)`.
pub fn indian_init(theta0: &ParamVector, grad0: &ParamVector, hp: &HyperParams) -> Result<OptimState, OptimError> {
    same_len(theta0, grad0)?;
    let (a, b) = (hp.alpha, hp.beta);
    let shift = 1.0 - a * b;
    let coupling = b * b - b;
    let psi: Vec<f64> = theta0
        .iter()
        .zip(grad0.iter())
        .map(|(t, g)| shift * t - coupling * g)
        .collect();
    OptimState::new(theta0.clone(), finite(psi)?)
}

/// One INDIAN update with step `gamma` and selection `v`.
pub fn indian_step(state: &OptimState, v: &ParamVector, gamma: f64, hp: &HyperParams) -> Result<OptimState, OptimError> {
    same_len(&state.theta, v)?;
    // (1/β − α)θ − ψ/β, written so that it vanishes exactly at ψ = (1 − αβ)θ
    let shift = 1.0 - hp.alpha * hp.beta;
    let n = state.theta.len();
    let mut theta = Vec::with_capacity(n);
    let mut psi = Vec::with_capacity(n);
    for ((t, p), g) in state.theta.iter().zip(state.psi.iter()).zip(v.iter()) {
        let drift = (shift * t - p) / hp.beta;
        theta.push(t + gamma * (drift - hp.beta * g));
        psi.push(p + gamma * drift);
    }
    Ok(OptimState {
        theta: finite(theta)?,
        psi: finite(psi)?,
        k: state.k + 1,
    })
}

/// Projects `(θ, ψ)` jointly onto the Euclidean ball of `radius`.
pub fn project_to_ball(state: &mut OptimState, radius: f64) {
    let sq: f64 = state.theta.iter().chain(state.psi.iter()).map(|x| x * x).sum();
    let norm = sq.sqrt();
    if norm > radius {
        let s = radius / norm;
        state.theta = state.theta.scale(s);
        state.psi = state.psi.scale(s);
    }
}

pub fn sgd_step(theta: &ParamVector, v: &ParamVector, gamma: f64) -> Result<ParamVector, OptimError> {
    same_len(theta, v)?;
    finite(theta.iter().zip(v.iter()).map(|(t, g)| t - gamma * g).collect())
}

/// Polyak heavy ball: `buf' = μ buf − γ v`, `θ' = θ + buf'`.
pub fn heavyball_step(
    theta: &ParamVector,
    buf: &ParamVector,
    v: &ParamVector,
    gamma: f64,
    mu: f64,
) -> Result<(ParamVector, ParamVector), OptimError> {
    same_len(theta, v)?;
    same_len(theta, buf)?;
    let new_buf: Vec<f64> = buf.iter().zip(v.iter()).map(|(b, g)| mu * b - gamma * g).collect();
    let new_theta: Vec<f64> = theta.iter().zip(&new_buf).map(|(t, b)| t + b).collect();
    Ok((finite(new_theta)?, finite(new_buf)?))
}

/// ADAGRAD: `G' = G + v⊙v`, `θ' = θ − γ v / (√G' + ε)`.
pub fn adagrad_step(
    theta: &ParamVector,
    accum: &ParamVector,
    v: &ParamVector,
    gamma: f64,
    eps: f64,
) -> Result<(ParamVector, ParamVector), OptimError> {
    same_len(theta, v)?;
    same_len(theta, accum)?;
    let mut new_theta = Vec::with_capacity(theta.len());
    let mut new_accum = Vec::with_capacity(theta.len());
    for ((t, a), g) in theta.iter().zip(accum.iter()).zip(v.iter()) {
        let a1 = a + g * g;
        // g == 0 leaves the coordinate alone even when a1 == 0 and eps == 0
        let delta = if *g == 0.0 { 0.0 } else { gamma * g / (a1.sqrt() + eps) };
        new_theta.push(t - delta);
        new_accum.push(a1);
    }
    Ok((finite(new_theta)?, finite(new_accum)?))
}

/// Bias-corrected ADAM. `k` is the 1-based index of this step.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    theta: &ParamVector,
    m: &ParamVector,
    s: &ParamVector,
    v: &ParamVector,
    gamma: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    k: u64,
) -> Result<(ParamVector, ParamVector, ParamVector), OptimError> {
    same_len(theta, v)?;
    same_len(theta, m)?;
    same_len(theta, s)?;
    let kk = k.max(1) as i32;
    let c1 = 1.0 - beta1.powi(kk);
    let c2 = 1.0 - beta2.powi(kk);
    let n = theta.len();
    let (mut nt, mut nm, mut ns) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let g = v[i];
        let m1 = beta1 * m[i] + (1.0 - beta1) * g;
        let s1 = beta2 * s[i] + (1.0 - beta2) * g * g;
        let m_hat = m1 / c1;
        let s_hat = s1 / c2;
        let delta = if m_hat == 0.0 { 0.0 } else { gamma * m_hat / (s_hat.sqrt() + eps) };
        nt.push(theta[i] - delta);
        nm.push(m1);
        ns.push(s1);
    }
    Ok((finite(nt)?, finite(nm)?, finite(ns)?))
}

/// Step-size sequence `γ_k`, `k ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    /// `γ_k = γ₀ (k + 1)^(−q)`
    PowerDecay { gamma0: f64, q: f64 },
    Constant { gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Admissibility {
    Admissible,
    Inadmissible(String),
}

impl Admissibility {
    pub fn is_admissible(&self) -> bool {
        matches!(self, Admissibility::Admissible)
    }
}

impl StepSchedule {
    pub fn validate(&self) -> Result<(), OptimError> {
        let ok = match *self {
            StepSchedule::PowerDecay { gamma0, q } => gamma0 > 0.0 && gamma0.is_finite() && q >= 0.0 && q.is_finite(),
            StepSchedule::Constant { gamma } => gamma > 0.0 && gamma.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(OptimError::HyperParam(format!("invalid step schedule {self:?}")))
        }
    }

    pub fn gamma_at(&self, k: u64) -> f64 {
        match *self {
            StepSchedule::PowerDecay { gamma0, q } => {
                if q == 0.0 {
                    gamma0
                } else {
                    gamma0 * ((k + 1) as f64).powf(-q)
                }
            }
            StepSchedule::Constant { gamma } => gamma,
        }
    }

    /// Initial step `γ₀`.
    pub fn gamma0(&self) -> f64 {
        self.gamma_at(0)
    }

    /// Same schedule shape with a different initial step.
    pub fn with_gamma0(&self, gamma0: f64) -> StepSchedule {
        match *self {
            StepSchedule::PowerDecay { q, .. } => StepSchedule::PowerDecay { gamma0, q },
            StepSchedule::Constant { .. } => StepSchedule::Constant { gamma: gamma0 },
        }
    }

    /// Positive steps with a divergent sum and `γ_k log k → 0`.
    pub fn admissibility(&self) -> Admissibility {
        let q = match *self {
            StepSchedule::PowerDecay { q, .. } => q,
            StepSchedule::Constant { .. } => 0.0,
        };
        if q <= 0.0 {
            Admissibility::Inadmissible("fails o(1/log k)".into())
        } else if q > 1.0 {
            Admissibility::Inadmissible("fails divergent sum".into())
        } else {
            Admissibility::Admissible
        }
    }
}

pub fn check_schedule_admissible(schedule: &StepSchedule) -> Admissibility {
    schedule.admissibility()
}

/// Optimizer choice with its own constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Indian {
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_beta")]
        beta: f64,
        /// Radius of the optional `(θ, ψ)` projection ball.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        project_radius: Option<f64>,
    },
    Sgd,
    Heavyball {
        #[serde(default = "default_mu")]
        mu: f64,
    },
    Adagrad {
        #[serde(default = "default_adagrad_eps")]
        eps: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_alpha() -> f64 {
    0.5
}
fn default_beta() -> f64 {
    0.1
}
fn default_mu() -> f64 {
    0.9
}
fn default_adagrad_eps() -> f64 {
    1e-8
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl OptimizerKind {
    pub fn indian(alpha: f64, beta: f64) -> Self {
        OptimizerKind::Indian {
            alpha,
            beta,
            project_radius: None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            OptimizerKind::Indian { alpha, beta, .. } => format!("indian_a{alpha}_b{beta}"),
            OptimizerKind::Sgd => "sgd".into(),
            OptimizerKind::Heavyball { mu } => format!("heavyball_mu{mu}"),
            OptimizerKind::Adagrad { .. } => "adagrad".into(),
            OptimizerKind::Adam { .. } => "adam".into(),
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        match *self {
            OptimizerKind::Indian {
                alpha,
                beta,
                project_radius,
            } => {
                HyperParams::new(alpha, beta)?;
                if let Some(r) = project_radius {
                    if !(r > 0.0) {
                        return Err(OptimError::HyperParam(format!("project_radius must be positive, got {r}")));
                    }
                }
            }
            OptimizerKind::Sgd => {}
            OptimizerKind::Heavyball { mu } => {
                if !(0.0..1.0).contains(&mu) {
                    return Err(OptimError::HyperParam(format!("mu must lie in [0, 1), got {mu}")));
                }
            }
            OptimizerKind::Adagrad { eps } => {
                if !(eps >= 0.0) {
                    return Err(OptimError::HyperParam(format!("eps must be non-negative, got {eps}")));
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps >= 0.0) {
                    return Err(OptimError::HyperParam("adam constants out of range".into()));
                }
            }
        }
        Ok(())
    }

    pub fn hyper_params(&self) -> Option<HyperParams> {
        match *self {
            OptimizerKind::Indian { alpha, beta, .. } => Some(HyperParams { alpha, beta }),
            _ => None,
        }
    }
}

/// Mutable optimizer state driven by a runner.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Indian {
        hp: HyperParams,
        state: OptimState,
        project_radius: Option<f64>,
    },
    Sgd {
        theta: ParamVector,
        k: u64,
    },
    Heavyball {
        mu: f64,
        theta: ParamVector,
        buf: ParamVector,
        k: u64,
    },
    Adagrad {
        eps: f64,
        theta: ParamVector,
        accum: ParamVector,
        k: u64,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        theta: ParamVector,
        m: ParamVector,
        s: ParamVector,
        k: u64,
    },
}

impl Optimizer {
    /// `grad0` is only used by INDIAN to set `ψ₀`.
    pub fn start(kind: &OptimizerKind, theta0: ParamVector, grad0: &ParamVector) -> Result<Self, OptimError> {
        kind.validate()?;
        let n = theta0.len();
        Ok(match *kind {
            OptimizerKind::Indian {
                alpha,
                beta,
                project_radius,
            } => {
                let hp = HyperParams::new(alpha, beta)?;
                let state = indian_init(&theta0, grad0, &hp)?;
                Optimizer::Indian {
                    hp,
                    state,
                    project_radius,
                }
            }
            OptimizerKind::Sgd => Optimizer::Sgd { theta: theta0, k: 0 },
            OptimizerKind::Heavyball { mu } => Optimizer::Heavyball {
                mu,
                theta: theta0,
                buf: ParamVector::zeros(n),
                k: 0,
            },
            OptimizerKind::Adagrad { eps } => Optimizer::Adagrad {
                eps,
                theta: theta0,
                accum: ParamVector::zeros(n),
                k: 0,
            },
            OptimizerKind::Adam { beta1, beta2, eps } => Optimizer::Adam {
                beta1,
                beta2,
                eps,
                theta: theta0,
                m: ParamVector::zeros(n),
                s: ParamVector::zeros(n),
                k: 0,
            },
        })
    }

    pub fn step(&mut self, v: &ParamVector, gamma: f64) -> Result<(), OptimError> {
        match self {
            Optimizer::Indian {
                hp,
                state,
                project_radius,
            } => {
                let mut next = indian_step(state, v, gamma, hp)?;
                if let Some(r) = project_radius {
                    project_to_ball(&mut next, *r);
                }
                *state = next;
            }
            Optimizer::Sgd { theta, k } => {
                *theta = sgd_step(theta, v, gamma)?;
                *k += 1;
            }
            Optimizer::Heavyball { mu, theta, buf, k } => {
                let (t, b) = heavyball_step(theta, buf, v, gamma, *mu)?;
                *theta = t;
                *buf = b;
                *k += 1;
            }
            Optimizer::Adagrad { eps, theta, accum, k } => {
                let (t, a) = adagrad_step(theta, accum, v, gamma, *eps)?;
                *theta = t;
                *accum = a;
                *k += 1;
            }
            Optimizer::Adam {
                beta1,
                beta2,
                eps,
                theta,
                m,
                s,
                k,
            } => {
                *k += 1;
                let (t, m1, s1) = adam_step(theta, m, s, v, gamma, *beta1, *beta2, *eps, *k)?;
                *theta = t;
                *m = m1;
                *s = s1;
            }
        }
        Ok(())
    }

    pub fn theta(&self) -> &ParamVector {
        match self {
            Optimizer::Indian { state, .. } => &state.theta,
            Optimizer::Sgd { theta, .. }
            | Optimizer::Heavyball { theta, .. }
            | Optimizer::Adagrad { theta, .. }
            | Optimizer::Adam { theta, .. } => theta,
        }
    }

    pub fn psi(&self) -> Option<&ParamVector> {
        match self {
            Optimizer::Indian { state, .. } => Some(&state.psi),
            _ => None,
        }
    }

    pub fn hyper_params(&self) -> Option<HyperParams> {
        match self {
            Optimizer::Indian { hp, .. } => Some(*hp),
            _ => None,
        }
    }

    pub fn iterations(&self) -> u64 {
        match self {
            Optimizer::Indian { state, .. } => state.k,
            Optimizer::Sgd { k, .. }
            | Optimizer::Heavyball { k, .. }
            | Optimizer::Adagrad { k, .. }
            | Optimizer::Adam { k, .. } => *k,
        }
    }
}
