//! Continuous-time inertial Newton dynamics.
//!
//! The flow
//!
//! ```text
//! θ̇ + β v + (α − 1/β) θ + ψ/β = 0,    v ∈ DJ(θ)
//! ψ̇ +       (α − 1/β) θ + ψ/β = 0
//! ```
//!
//! is integrated with explicit Euler, which is exactly the INDIAN update with
//! a constant step and full-batch selections. Along solutions both
//!
//! ```text
//! E_min = (1 − √(αβ))² J(θ) + ½ ‖(α − 1/β) θ + ψ/β‖²
//! E_max = (1 + √(αβ))² J(θ) + ½ ‖(α − 1/β) θ + ψ/β‖²
//! ```
//!
//! are non-increasing.

use thiserror::Error;

use crate::numkit::ParamVector;
use crate::objective::{residual_to_s, Objective, ObjectiveError};
use crate::optim::{indian_step, HyperParams, OptimError, OptimState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energies {
    pub e_min: f64,
    pub e_max: f64,
    pub e: f64,
}

pub fn lyapunov(theta: &ParamVector, psi: &ParamVector, j_value: f64, hp: &HyperParams) -> Energies {
    let (a, b) = (hp.alpha, hp.beta);
    let lin = a - 1.0 / b;
    let inv_b = 1.0 / b;
    let mut coupling = 0.0;
    for (t, p) in theta.iter().zip(psi.iter()) {
        let w = lin * t + inv_b * p;
        coupling += w * w;
    }
    let kinetic = 0.5 * coupling;
    let r = (a * b).sqrt();
    let e_min = (1.0 - r) * (1.0 - r) * j_value + kinetic;
    let e_max = (1.0 + r) * (1.0 + r) * j_value + kinetic;
    Energies {
        e_min,
        e_max,
        e: e_min + e_max,
    }
}

/// Uniformly sampled Euler trajectory. States are stored flat, one row of
/// `dim` coordinates per time.
#[derive(Debug, Clone)]
pub struct FlowTrajectory {
    pub dim: usize,
    pub h: f64,
    pub hp: HyperParams,
    pub times: Vec<f64>,
    thetas: Vec<f64>,
    psis: Vec<f64>,
    pub values: Vec<f64>,
    pub energies: Vec<Energies>,
    /// Norm of the selection used at each state; the last entry is evaluated
    /// at the terminal state.
    pub subgrad_norms: Vec<f64>,
    /// Set when integration stopped early on a non-finite value.
    pub overflowed: bool,
}

impl FlowTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn theta(&self, i: usize) -> &[f64] {
        &self.thetas[i * self.dim..(i + 1) * self.dim]
    }

    pub fn psi(&self, i: usize) -> &[f64] {
        &self.psis[i * self.dim..(i + 1) * self.dim]
    }

    pub fn state(&self, i: usize) -> OptimState {
        OptimState {
            theta: ParamVector::from(self.theta(i)),
            psi: ParamVector::from(self.psi(i)),
            k: i as u64,
        }
    }

    pub fn last_state(&self) -> OptimState {
        self.state(self.len() - 1)
    }

    /// Distance of the terminal state to the steady-state set.
    pub fn terminal_residual(&self) -> f64 {
        let s = self.last_state();
        let g = *self.subgrad_norms.last().expect("nonempty trajectory");
        residual_to_s(&s.theta, &s.psi, g, self.hp.alpha, self.hp.beta)
    }

    /// Largest one-step increase of each energy as `(e_min, e_max, e)`.
    pub fn max_energy_increase(&self) -> (f64, f64, f64) {
        let mut worst = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for w in self.energies.windows(2) {
            worst.0 = worst.0.max(w[1].e_min - w[0].e_min);
            worst.1 = worst.1.max(w[1].e_max - w[0].e_max);
            worst.2 = worst.2.max(w[1].e - w[0].e);
        }
        worst
    }
}

/// Explicit Euler integration with constant step `h` up to `t_end`, storing
/// every one of the `⌈t_end/h⌉ + 1` states.
pub fn euler_flow(
    oracle: &dyn Objective,
    theta0: &ParamVector,
    psi0: &ParamVector,
    hp: &HyperParams,
    h: f64,
    t_end: f64,
) -> Result<FlowTrajectory, DynamicsError> {
    if !(h > 0.0) || !(t_end >= h) {
        return Err(DynamicsError::Argument(format!("need h > 0 and t_end >= h (got h={h}, t_end={t_end})")));
    }
    let steps = (t_end / h).ceil() as usize;
    let dim = theta0.len();
    let mut traj = FlowTrajectory {
        dim,
        h,
        hp: *hp,
        times: Vec::with_capacity(steps + 1),
        thetas: Vec::with_capacity((steps + 1) * dim),
        psis: Vec::with_capacity((steps + 1) * dim),
        values: Vec::with_capacity(steps + 1),
        energies: Vec::with_capacity(steps + 1),
        subgrad_norms: Vec::with_capacity(steps + 1),
        overflowed: false,
    };
    let mut state = OptimState::new(theta0.clone(), psi0.clone())?;
    for k in 0..=steps {
        let ev = oracle.eval_full(&state.theta)?;
        if !ev.value.is_finite() || ev.subgrad.first_non_finite().is_some() {
            traj.overflowed = true;
            break;
        }
        traj.times.push(k as f64 * h);
        traj.thetas.extend_from_slice(state.theta.as_slice());
        traj.psis.extend_from_slice(state.psi.as_slice());
        traj.values.push(ev.value);
        traj.energies.push(lyapunov(&state.theta, &state.psi, ev.value, hp));
        traj.subgrad_norms.push(ev.subgrad.norm2());
        if k == steps {
            break;
        }
        match indian_step(&state, &ev.subgrad, h, hp) {
            Ok(next) => state = next,
            Err(OptimError::Overflow { .. }) => {
                traj.overflowed = true;
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFitResult {
    /// Least-squares slope of `log(series)` against `log(t)`.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub n_points: usize,
}

pub const MIN_FIT_POINTS: usize = 10;

/// Log-log least squares over the samples with `t` inside `window`.
pub fn fit_rate(times: &[f64], series: &[f64], window: (f64, f64)) -> Result<RateFitResult, DynamicsError> {
    if times.len() != series.len() {
        return Err(DynamicsError::Argument("times and series differ in length".into()));
    }
    let (lo, hi) = window;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&t, &y) in times.iter().zip(series) {
        if t < lo || t > hi {
            continue;
        }
        if !(t > 0.0) || !(y > 0.0) {
            return Err(DynamicsError::Argument(format!("non-positive sample ({t}, {y}) inside the fit window")));
        }
        xs.push(t.ln());
        ys.push(y.ln());
    }
    if xs.len() < MIN_FIT_POINTS {
        return Err(DynamicsError::Argument(format!(
            "{} points in window, need at least {MIN_FIT_POINTS}",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut ss_res = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        let r = y - (slope * x + intercept);
        ss_res += r * r;
    }
    let r_squared = if syy == 0.0 { 1.0 } else { (1.0 - ss_res / syy).clamp(0.0, 1.0) };
    Ok(RateFitResult {
        slope,
        intercept,
        r_squared,
        window,
        n_points: xs.len(),
    })
}

/// Subtracts the limit value: `known` when given, otherwise the minimum over
/// the trailing 10% of the series.
pub fn shift_by_limit(series: &[f64], known: Option<f64>) -> Vec<f64> {
    let limit = known.unwrap_or_else(|| {
        let tail = (series.len() / 10).max(1);
        series[series.len() - tail..].iter().cloned().fold(f64::INFINITY, f64::min)
    });
    series.iter().map(|v| v - limit).collect()
}

/// Default fit window `[t_end/10, t_end]`.
pub fn default_window(t_end: f64) -> (f64, f64) {
    (t_end / 10.0, t_end)
}

/// Rate fit of `J(θ(t)) − J̄` over `window`, `J̄` as in [`shift_by_limit`].
pub fn fit_value_rate(traj: &FlowTrajectory, known_min: Option<f64>, window: (f64, f64)) -> Result<RateFitResult, DynamicsError> {
    let gap = shift_by_limit(&traj.values, known_min);
    fit_rate(&traj.times, &gap, window)
}

/// Solution of the flow for the scalar quadratic `J = λθ²/2`, which is linear:
/// `d/dt (θ, ψ) = A (θ, ψ)` with
/// `A = [[1/β − α − βλ, −1/β], [1/β − α, −1/β]]`. Evaluated as a matrix
/// exponential via a scaled Taylor series and repeated squaring.
pub fn linear_flow_exact(lambda: f64, hp: &HyperParams, theta0: f64, psi0: f64, t: f64) -> (f64, f64) {
    let (a, b) = (hp.alpha, hp.beta);
    let m = [[1.0 / b - a - b * lambda, -1.0 / b], [1.0 / b - a, -1.0 / b]];
    let e = expm2([[m[0][0] * t, m[0][1] * t], [m[1][0] * t, m[1][1] * t]]);
    (e[0][0] * theta0 + e[0][1] * psi0, e[1][0] * theta0 + e[1][1] * psi0)
}

type M2 = [[f64; 2]; 2];

fn mul2(x: &M2, y: &M2) -> M2 {
    [
        [
            x[0][0] * y[0][0] + x[0][1] * y[1][0],
            x[0][0] * y[0][1] + x[0][1] * y[1][1],
        ],
        [
            x[1][0] * y[0][0] + x[1][1] * y[1][0],
            x[1][0] * y[0][1] + x[1][1] * y[1][1],
        ],
    ]
}

fn expm2(m: M2) -> M2 {
    let norm = m.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let s = [[m[0][0] * scale, m[0][1] * scale], [m[1][0] * scale, m[1][1] * scale]];
    let mut result = [[1.0, 0.0], [0.0, 1.0]];
    let mut term = [[1.0, 0.0], [0.0, 1.0]];
    for k in 1..=20 {
        term = mul2(&term, &s);
        let inv = 1.0 / k as f64;
        for r in &mut term {
            for v in r.iter_mut() {
                *v *= inv;
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        result = mul2(&result, &result);
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{PowerAbs, Quadratic};
    use crate::optim::indian_init;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from(v)
    }

    const HP: HyperParams = HyperParams { alpha: 0.5, beta: 0.1 };

    #[test]
    fn energy_on_steady_states() {
        let theta = pv(&[1.5, -0.5]);
        let psi = HP.steady_psi(&theta);
        let j = 3.25;
        let e = lyapunov(&theta, &psi, j, &HP);
        assert!((e.e - 2.0 * (1.0 + 0.05) * j).abs() < 1e-12);
    }

    #[test]
    fn energy_with_unit_alpha_beta() {
        let hp = HyperParams::new(2.0, 0.5).unwrap();
        let (theta, psi) = (pv(&[1.0]), pv(&[3.0]));
        let e = lyapunov(&theta, &psi, 7.0, &hp);
        // (α − 1/β)θ + ψ/β = 0 + 6
        assert_eq!(e.e_min, 18.0);
    }

    #[test]
    fn energy_hand_value() {
        let e = lyapunov(&pv(&[1.0]), &pv(&[1.0]), 2.0, &HP);
        let r = 0.05f64.sqrt();
        let want = (1.0 - r) * (1.0 - r) * 2.0 + 0.125;
        assert!((e.e_min - want).abs() < 1e-12, "{} vs {want}", e.e_min);
        assert!((e.e_max - ((1.0 + r) * (1.0 + r) * 2.0 + 0.125)).abs() < 1e-12);
    }

    #[test]
    fn flow_from_steady_state_is_constant() {
        let q = Quadratic::identity(2);
        let theta = pv(&[0.0, 0.0]);
        let traj = euler_flow(&q, &theta, &HP.steady_psi(&theta), &HP, 0.01, 1.0).unwrap();
        assert_eq!(traj.len(), 101);
        assert!(traj.energies.iter().all(|e| *e == traj.energies[0]));
        assert_eq!(traj.theta(100), theta.as_slice());
    }

    #[test]
    fn flow_argument_errors() {
        let q = Quadratic::identity(1);
        let t = pv(&[1.0]);
        assert!(euler_flow(&q, &t, &t, &HP, 0.0, 1.0).is_err());
        assert!(euler_flow(&q, &t, &t, &HP, 0.1, 0.05).is_err());
    }

    #[test]
    fn flow_overflow_returns_partial_trajectory() {
        // huge step on a stiff quadratic blows up
        let q = Quadratic::diagonal(&[1e6], vec![0.0]).unwrap();
        let t = pv(&[1.0]);
        let traj = euler_flow(&q, &t, &HP.steady_psi(&t), &HP, 1.0, 2000.0).unwrap();
        assert!(traj.overflowed);
        assert!(traj.len() < 2001);
        assert!(traj.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn matrix_exponential_on_diagonal_case() {
        // αβ = 1 and λ = 0 decouple into θ̇ = −θ... check against scalar exp
        let e = expm2([[-3.0, 0.0], [0.0, 0.5]]);
        assert!((e[0][0] - (-3.0f64).exp()).abs() < 1e-14);
        assert!((e[1][1] - 0.5f64.exp()).abs() < 1e-14);
        assert!(e[0][1].abs() < 1e-15);
    }

    #[test]
    fn euler_tracks_linear_solution() {
        let h = 1e-4;
        let q = Quadratic::identity(1);
        let theta0 = pv(&[1.0]);
        let s = indian_init(&theta0, &theta0, &HP).unwrap();
        let traj = euler_flow(&q, &s.theta, &s.psi, &HP, h, 1.0).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..traj.len() {
            let (te, pe) = linear_flow_exact(1.0, &HP, s.theta[0], s.psi[0], traj.times[i]);
            worst = worst.max((traj.theta(i)[0] - te).abs()).max((traj.psi(i)[0] - pe).abs());
        }
        assert!(worst <= 10.0 * h, "{worst}");
    }

    #[test]
    fn fit_exact_power_laws() {
        let t: Vec<f64> = (1..=200).map(|i| i as f64 * 0.5).collect();
        let inv: Vec<f64> = t.iter().map(|x| 1.0 / x).collect();
        let r = fit_rate(&t, &inv, (1.0, 100.0)).unwrap();
        assert!((r.slope + 1.0).abs() < 1e-12 && (r.r_squared - 1.0).abs() < 1e-12);
        let inv2: Vec<f64> = t.iter().map(|x| 3.0 * x.powi(-2)).collect();
        let r = fit_rate(&t, &inv2, (1.0, 100.0)).unwrap();
        assert!((r.slope + 2.0).abs() < 1e-12);
        assert!((r.intercept - 3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn fit_needs_enough_positive_points() {
        let t: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        let y = vec![1.0; 20];
        assert!(fit_rate(&t, &y, (1.0, 5.0)).is_err());
        let mut z = y.clone();
        z[10] = 0.0;
        assert!(fit_rate(&t, &z, (1.0, 20.0)).is_err());
        assert!(fit_rate(&t, &y[..5], (1.0, 20.0)).is_err());
    }

    #[test]
    fn shift_uses_tail_minimum() {
        let s = vec![5.0, 4.0, 3.0, 2.5, 2.2, 2.1, 2.05, 2.02, 2.01, 2.0];
        let out = shift_by_limit(&s, None);
        assert_eq!(out[9], 0.0);
        assert_eq!(shift_by_limit(&s, Some(1.0))[0], 4.0);
    }

    #[test]
    fn energies_non_increasing_on_smooth_quadratic() {
        let q = Quadratic::diagonal(&[1.0, 3.0], vec![0.0, 0.0]).unwrap();
        let theta0 = pv(&[1.0, -0.5]);
        let g0 = q.eval_full(&theta0).unwrap().subgrad;
        let s = indian_init(&theta0, &g0, &HP).unwrap();
        let traj = euler_flow(&q, &s.theta, &s.psi, &HP, 1e-4, 5.0).unwrap();
        let (a, b, c) = traj.max_energy_increase();
        assert!(a <= 1e-8 && b <= 1e-8 && c <= 1e-8, "{a} {b} {c}");
    }

    #[test]
    fn discrete_chain_rule_on_smooth_objective() {
        let q = Quadratic::diagonal(&[1.0, 2.0], vec![0.3, 0.0]).unwrap();
        let h = 1e-5;
        let theta0 = pv(&[1.0, 1.0]);
        let g0 = q.eval_full(&theta0).unwrap().subgrad;
        let s = indian_init(&theta0, &g0, &HP).unwrap();
        let traj = euler_flow(&q, &s.theta, &s.psi, &HP, h, 1000.0 * h).unwrap();
        for k in 0..1000 {
            let dj = (traj.values[k + 1] - traj.values[k]) / h;
            let v = q.eval_full(&ParamVector::from(traj.theta(k))).unwrap().subgrad;
            let vel: Vec<f64> = traj.theta(k + 1).iter().zip(traj.theta(k)).map(|(a, b)| (a - b) / h).collect();
            let pred = crate::numkit::dot_slices(v.as_slice(), &vel).unwrap();
            assert!((dj - pred).abs() <= 0.05 * pred.abs(), "step {k}: {dj} vs {pred}");
        }
    }

    #[test]
    fn strongly_convex_quadratic_converges_faster_than_one_over_t() {
        let q = Quadratic::identity(2);
        let theta0 = pv(&[1.0, -1.0]);
        let g0 = q.eval_full(&theta0).unwrap().subgrad;
        let s = indian_init(&theta0, &g0, &HP).unwrap();
        let traj = euler_flow(&q, &s.theta, &s.psi, &HP, 1e-3, 100.0).unwrap();
        let fit = fit_value_rate(&traj, q.known_minimum(), (10.0, 100.0)).unwrap();
        assert!(fit.slope <= -1.0, "{fit:?}");
        assert!(traj.terminal_residual() <= 1e-3);
    }

    #[test]
    fn power_abs_flow_reaches_steady_set() {
        let f = PowerAbs::new(4.0).unwrap();
        let hp = HyperParams::new(2.0, 0.1).unwrap();
        let theta0 = pv(&[1.0]);
        let g0 = f.eval_full(&theta0).unwrap().subgrad;
        let s = indian_init(&theta0, &g0, &hp).unwrap();
        let traj = euler_flow(&f, &s.theta, &s.psi, &hp, 1e-3, 100.0).unwrap();
        assert!(traj.terminal_residual() <= 1e-3, "{}", traj.terminal_residual());
    }
}
