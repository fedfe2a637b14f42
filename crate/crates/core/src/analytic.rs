//! Deterministic survival probabilities `q_k(t)`.
//!
//! `q_k(t)` is the probability that the population founded by one host with
//! `k` spores is still alive at time `t`. It solves the backward system
//!
//! ```text
//! q_k' = -(rho + beta k) q_k + beta k sum_j p_j [1 - (1 - q_{k-1})(1 - q_j)],   q_k(0) = 1,
//! ```
//!
//! with `q_0 = 0`: a type-`k` host is removed at rate `rho`, or one of its
//! spores is released at rate `beta k`, after which a type-`(k-1)` host and an
//! independent type-`j` host remain. For `k = 1` this reduces to
//! `q_1' = -(rho + beta) q_1 + beta sum_j p_j q_j`.
//!
//! The system is solved on types `1..=K` after replacing the offspring law by
//! that of `J 1{J <= K}`. The modified process is dominated by the original,
//! so truncated solutions are lower bounds that increase with `K`.

use serde::Serialize;

use crate::error::{AnalyticError, ModelError};
use crate::model::{DecayWindow, ModelParams};
use crate::ode::{self, ErrorNorm, HalvingSettings};

pub const DEFAULT_SOLVER_TOL: f64 = 1e-9;
/// Default relative change per unit time below which `e^{lambda t} q_1(t)` counts as settled.
pub const DEFAULT_CONSTANT_TOL: f64 = 1e-8;
/// Largest `|C(2K) - C(K)|` for which the truncation level is accepted.
pub const K_DOUBLING_ACCEPT: f64 = 1e-6;
/// Offspring tail mass that an automatically chosen truncation may discard.
pub const AUTO_TAIL_MASS: f64 = 1e-13;
/// Relative accuracy for the long solves behind the constant and bound estimates.
const LONG_SOLVE_REL_TOL: f64 = 1e-10;
/// Output spacing for the constant estimate.
const CONSTANT_GRID_STEP: f64 = 0.1;
/// Keeps `e^{-lambda t}` well above the subnormal range on long solves.
const MAX_DECAY_EXPONENT: f64 = 600.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveSource {
    Ode,
    ClosedForm,
    MonteCarlo,
}

impl CurveSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            CurveSource::Ode => "ode",
            CurveSource::ClosedForm => "closed_form",
            CurveSource::MonteCarlo => "monte_carlo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub t: f64,
    pub q: f64,
    /// Error bound (ODE), zero (closed form), or standard error (Monte Carlo).
    pub err: f64,
}

/// `q_k` on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalCurve {
    k: u32,
    points: Vec<CurvePoint>,
    source: CurveSource,
}

impl SurvivalCurve {
    /// Requires a nonempty, strictly increasing grid and probabilities in `[0, 1]`.
    pub fn new(k: u32, points: Vec<CurvePoint>, source: CurveSource) -> Result<Self, AnalyticError> {
        if k == 0 {
            return Err(AnalyticError::InvalidInput("curve type must be at least 1".into()));
        }
        if points.is_empty() {
            return Err(AnalyticError::InvalidInput("curve has no points".into()));
        }
        if points.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(AnalyticError::InvalidInput("curve grid must be strictly increasing".into()));
        }
        if let Some(p) = points.iter().find(|p| !(0.0..=1.0).contains(&p.q)) {
            return Err(AnalyticError::InvalidInput(format!(
                "q = {} at t = {} is not a probability",
                p.q, p.t
            )));
        }
        Ok(Self { k, points, source })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn source(&self) -> CurveSource {
        self.source
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.t)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.q)
    }

    /// Nonincreasing in `t` up to `slack`.
    pub fn is_nonincreasing(&self, slack: f64) -> bool {
        self.points.windows(2).all(|w| w[1].q <= w[0].q + slack)
    }
}

/// Backward system on types `1..=K` with the offspring law of `J 1{J <= K}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSystem {
    params: ModelParams,
    max_type: usize,
    /// `p~_0..=p~_K`.
    probs: Vec<f64>,
}

impl TruncatedSystem {
    pub fn new(params: ModelParams, max_type: usize) -> Result<Self, AnalyticError> {
        if max_type == 0 {
            return Err(AnalyticError::InvalidInput("truncation level K must be at least 1".into()));
        }
        let probs = params.offspring().truncated_probs(max_type);
        Ok(Self {
            params,
            max_type,
            probs,
        })
    }

    /// Smallest `K >= min_types` covering the whole table support, or leaving at
    /// most [`AUTO_TAIL_MASS`] of a parametric law above `K`.
    pub fn covering(params: ModelParams, min_types: usize) -> Result<Self, AnalyticError> {
        let d = params.offspring();
        let k = match d.max_support() {
            Some(j) => j,
            None => {
                let mut k = 1;
                while 1.0 - d.probs_up_to(k).iter().sum::<f64>() > AUTO_TAIL_MASS && k < 100_000 {
                    k += 1;
                }
                k
            }
        };
        Self::new(params, k.max(min_types).max(1))
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// `K`.
    pub fn max_type(&self) -> usize {
        self.max_type
    }

    pub fn truncated_probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn truncated_mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    pub fn with_max_type(&self, max_type: usize) -> Result<Self, AnalyticError> {
        Self::new(self.params.clone(), max_type)
    }

    /// Largest diagonal plus off-diagonal rate, used to pick a stable first step.
    fn stiffness(&self) -> f64 {
        self.params.rho() + 2.0 * self.params.beta() * self.max_type as f64
    }

    fn rhs_into(&self, q: &[f64], dq: &mut [f64]) {
        let beta = self.params.beta();
        let rho = self.params.rho();
        // G = sum_j p~_j q_j, with q_0 = 0.
        let g: f64 = self.probs[1..].iter().zip(q).map(|(p, qj)| p * qj).sum();
        let mut prev = 0.0;
        for (i, (&qk, d)) in q.iter().zip(dq.iter_mut()).enumerate() {
            let rate = beta * (i + 1) as f64;
            // sum_j p~_j [q_{k-1} + q_j - q_{k-1} q_j] = q_{k-1} + (1 - q_{k-1}) G
            *d = -(rho + rate) * qk + rate * (prev + (1.0 - prev) * g);
            prev = qk;
        }
    }
}

/// Time derivative of `(q_1, ..., q_K)` under the truncated backward system.
pub fn backward_rhs(q: &[f64], sys: &TruncatedSystem) -> Vec<f64> {
    assert_eq!(q.len(), sys.max_type, "state length must equal the truncation level");
    let mut out = vec![0.0; q.len()];
    sys.rhs_into(q, &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub t_max: f64,
    pub tol: f64,
    /// Output grid spacing; rounded down so the grid ends exactly at `t_max`.
    pub output_step: Option<f64>,
    pub norm: ErrorNorm,
}

impl SolveOptions {
    pub fn new(t_max: f64, tol: f64) -> Self {
        Self {
            t_max,
            tol,
            output_step: None,
            norm: ErrorNorm::Absolute,
        }
    }

    pub fn with_output_step(mut self, step: f64) -> Self {
        self.output_step = Some(step);
        self
    }

    pub fn relative(mut self) -> Self {
        self.norm = ErrorNorm::Relative;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalSolution {
    /// `curves[k - 1]` is `q_k`.
    pub curves: Vec<SurvivalCurve>,
    /// Accepted RK4 step.
    pub step: f64,
    /// Component updates clamped back into `[0, 1]`.
    pub clamped: u64,
    /// Step-halving discrepancy of the accepted run, in the requested norm.
    pub discrepancy: f64,
}

impl SurvivalSolution {
    pub fn curve(&self, k: u32) -> Option<&SurvivalCurve> {
        self.curves.get((k as usize).checked_sub(1)?)
    }

    pub fn times(&self) -> Vec<f64> {
        self.curves[0].times().collect()
    }
}

/// Solve the truncated system on `[0, t_max]` to absolute accuracy `tol`.
pub fn solve_survival(sys: &TruncatedSystem, t_max: f64, tol: f64) -> Result<SurvivalSolution, AnalyticError> {
    solve_survival_with(sys, &SolveOptions::new(t_max, tol))
}

pub fn solve_survival_with(sys: &TruncatedSystem, opts: &SolveOptions) -> Result<SurvivalSolution, AnalyticError> {
    if !(opts.t_max > 0.0 && opts.t_max.is_finite()) {
        return Err(AnalyticError::InvalidInput(format!("t_max must be positive, got {}", opts.t_max)));
    }
    if !(opts.tol > 0.0) {
        return Err(AnalyticError::InvalidInput(format!("tol must be positive, got {}", opts.tol)));
    }
    let step = opts.output_step.unwrap_or_else(|| (opts.t_max / 100.0).min(0.1));
    if !(step > 0.0) {
        return Err(AnalyticError::InvalidInput(format!("output step must be positive, got {step}")));
    }
    let intervals = (opts.t_max / step - 1e-9).ceil().max(1.0) as usize;
    let dt_out = opts.t_max / intervals as f64;
    let settings = HalvingSettings {
        tol: opts.tol,
        norm: opts.norm,
        initial_substeps: (dt_out * sys.stiffness()).ceil().max(1.0) as usize,
        bounds: Some((0.0, 1.0)),
    };
    let y0 = vec![1.0; sys.max_type];
    let f = |q: &[f64], dq: &mut [f64]| sys.rhs_into(q, dq);
    let sol = ode::integrate_validated(&f, &y0, opts.t_max, intervals, &settings)?;
    let traj = &sol.trajectory;
    let curves = (0..sys.max_type)
        .map(|i| {
            let points = traj
                .times
                .iter()
                .zip(&traj.states)
                .zip(&sol.errors)
                .map(|((&t, y), e)| CurvePoint { t, q: y[i], err: e[i] })
                .collect();
            SurvivalCurve::new(i as u32 + 1, points, CurveSource::Ode)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SurvivalSolution {
        curves,
        step: sol.step,
        clamped: traj.clamped,
        discrepancy: sol.discrepancy,
    })
}

/// Survival probability when hosts never create new hosts (`p_0 = 1`):
/// the founder is still present and holds at least one unreleased spore.
pub fn closed_form_mu0(k: u32, t: f64, beta: f64, rho: f64) -> f64 {
    // 1 - (1 - e^{-beta t})^k, evaluated without cancellation for large t.
    let all_released = (k as f64 * (-(-beta * t).exp()).ln_1p()).exp_m1();
    (-rho * t).exp() * -all_released
}

/// `q_1(t)` for `rho = 0`, `p_0 + p_2 = 1`, `p_0 != p_2` (linear birth-death chain).
pub fn closed_form_linear_fractional(t: f64, beta: f64, p0: f64, p2: f64) -> Result<f64, AnalyticError> {
    check_linear_fractional(p0, p2)?;
    let d = p0 - p2;
    let e = (-beta * d * t).exp();
    Ok(d * e / (p0 - p2 * e))
}

/// Leading constant `1 - p_2 / p_0` of the subcritical linear-fractional case.
pub fn linear_fractional_constant(p0: f64, p2: f64) -> Result<f64, AnalyticError> {
    check_linear_fractional(p0, p2)?;
    if p2 > p0 {
        return Err(AnalyticError::InvalidInput(format!(
            "p2 = {p2} > p0 = {p0} is supercritical; no decay constant"
        )));
    }
    Ok(1.0 - p2 / p0)
}

fn check_linear_fractional(p0: f64, p2: f64) -> Result<(), AnalyticError> {
    if !(p0 >= 0.0 && p2 >= 0.0 && ((p0 + p2) - 1.0).abs() <= 1e-12) {
        return Err(AnalyticError::InvalidInput(format!(
            "linear-fractional form needs p0 + p2 = 1, got p0 = {p0}, p2 = {p2}"
        )));
    }
    if p0 == p2 {
        return Err(AnalyticError::InvalidInput("p0 = p2 is the critical case".into()));
    }
    Ok(())
}

/// `(p0, p2)` if the model is the linear birth-death chain (`rho = 0`, support `{0, 2}`).
pub fn linear_fractional_form(params: &ModelParams) -> Option<(f64, f64)> {
    let probs = params.offspring().table_probs()?;
    if params.rho() != 0.0 || probs.len() > 3 || probs.get(1).copied().unwrap_or(0.0) != 0.0 {
        return None;
    }
    let p0 = probs[0];
    let p2 = probs.get(2).copied().unwrap_or(0.0);
    check_linear_fractional(p0, p2).ok()?;
    Some((p0, p2))
}

/// Whether the offspring law is the point mass at 0.
pub fn is_zero_offspring(params: &ModelParams) -> bool {
    params.offspring().table_probs() == Some(&[1.0][..])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantEstimate {
    pub c_hat: f64,
    /// Time at which `e^{lambda t} q_1(t)` was read off.
    pub t_star: f64,
    pub truncation: usize,
    pub lambda: f64,
    /// Relative change per unit time of `e^{lambda t} q_1(t)` at `t_star`.
    pub last_relative_change: f64,
    /// Estimate obtained with truncation `2K`.
    pub c_hat_doubled: f64,
    pub k_doubling_change: f64,
    pub k_doubling_accepted: bool,
    /// Largest relative increase of `e^{lambda t} q_1(t)` between grid points.
    pub max_relative_increase: f64,
    pub solver_step: f64,
}

struct ScaledTrace {
    times: Vec<f64>,
    scaled: Vec<f64>,
    step: f64,
}

fn scaled_q1_trace(sys: &TruncatedSystem, lambda: f64, t_max: f64) -> Result<ScaledTrace, AnalyticError> {
    let opts = SolveOptions::new(t_max, LONG_SOLVE_REL_TOL)
        .with_output_step(CONSTANT_GRID_STEP)
        .relative();
    let sol = solve_survival_with(sys, &opts)?;
    let q1 = &sol.curves[0];
    Ok(ScaledTrace {
        times: q1.times().collect(),
        scaled: q1.points().iter().map(|p| (lambda * p.t).exp() * p.q).collect(),
        step: sol.step,
    })
}

struct Settled {
    c_hat: f64,
    t_star: f64,
    change: f64,
}

fn settle(trace: &ScaledTrace, t_floor: f64, tol: f64) -> Result<Settled, AnalyticError> {
    for i in 1..trace.times.len() {
        let t = trace.times[i];
        if t < t_floor {
            continue;
        }
        let h = trace.scaled[i];
        let dt = t - trace.times[i - 1];
        let change = (h - trace.scaled[i - 1]).abs() / (h * dt);
        if change < tol {
            return Ok(Settled {
                c_hat: h,
                t_star: t,
                change,
            });
        }
    }
    let n = trace.scaled.len();
    Err(AnalyticError::NotConverged {
        t_max: *trace.times.last().unwrap_or(&0.0),
        last_h: trace.scaled[n.saturating_sub(5)..].to_vec(),
    })
}

/// Read off `C = lim e^{lambda t} q_1(t)` from the solved system.
pub fn estimate_constant(
    sys: &TruncatedSystem,
    window: &DecayWindow,
    tol: f64,
) -> Result<ConstantEstimate, AnalyticError> {
    let lambda = sys.params().decay_rate();
    if lambda <= 0.0 {
        return Err(ModelError::NotSubcritical { lambda }.into());
    }
    if !(tol > 0.0) {
        return Err(AnalyticError::InvalidInput(format!("tol must be positive, got {tol}")));
    }
    let t_floor = 10.0 / window.a();
    let t_max = (4.0 * t_floor).min(MAX_DECAY_EXPONENT / lambda).max(t_floor + 1.0);
    let trace = scaled_q1_trace(sys, lambda, t_max)?;
    let settled = settle(&trace, t_floor, tol)?;
    let doubled = sys.with_max_type(2 * sys.max_type())?;
    let doubled_trace = scaled_q1_trace(&doubled, lambda, t_max)?;
    let doubled_settled = settle(&doubled_trace, t_floor, tol)?;
    let max_relative_increase = trace
        .scaled
        .windows(2)
        .map(|w| (w[1] - w[0]) / w[0])
        .fold(0.0f64, f64::max);
    let change = (doubled_settled.c_hat - settled.c_hat).abs();
    Ok(ConstantEstimate {
        // e^{lambda t} q_1(t) starts at 1 and never increases, so C <= 1; only rounding can exceed it.
        c_hat: settled.c_hat.min(1.0),
        t_star: settled.t_star,
        truncation: sys.max_type(),
        lambda,
        last_relative_change: settled.change,
        c_hat_doubled: doubled_settled.c_hat,
        k_doubling_change: change,
        k_doubling_accepted: change < K_DOUBLING_ACCEPT,
        max_relative_increase,
        solver_step: trace.step,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerBoundReport {
    /// Truncation level chosen from `epsilon`.
    pub k0: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub t_max: f64,
    /// `inf_t ln q_1(t) + (lambda + epsilon) t` over the grid, for the process truncated at `k0`.
    pub min_log_margin: f64,
    pub argmin_t: f64,
    /// `exp(min_log_margin)`: a valid `c_1` in `q_1(t) >= c_1 e^{-(lambda + epsilon) t}` on the grid.
    pub implied_c1: f64,
    /// The margin is increasing again at the end of the grid, so its infimum has been seen.
    pub stabilized: bool,
    /// `inf_t ln q_1(t) + lambda t` for the untruncated-as-given system.
    pub min_scaled_log: f64,
}

/// Check that `ln q_1(t) + (lambda + epsilon) t` is bounded below and report the implied constant.
pub fn truncation_lower_bound_check(sys: &TruncatedSystem, epsilon: f64) -> Result<LowerBoundReport, AnalyticError> {
    let params = sys.params();
    let lambda = params.decay_rate();
    if lambda <= 0.0 {
        return Err(ModelError::NotSubcritical { lambda }.into());
    }
    if !(epsilon > 0.0) {
        return Err(AnalyticError::InvalidInput(format!("epsilon must be positive, got {epsilon}")));
    }
    let k0 = params.truncation_level(epsilon);
    let modified = sys.with_max_type(k0)?;
    let t_max = (20.0 / epsilon + 20.0 / lambda).min(MAX_DECAY_EXPONENT / (lambda + epsilon));
    let opts = SolveOptions::new(t_max, LONG_SOLVE_REL_TOL)
        .with_output_step(CONSTANT_GRID_STEP)
        .relative();
    let bounded = solve_survival_with(&modified, &opts)?;
    let margins: Vec<(f64, f64)> = bounded.curves[0]
        .points()
        .iter()
        .map(|p| (p.t, p.q.ln() + (lambda + epsilon) * p.t))
        .collect();
    let (argmin_index, &(argmin_t, min_log_margin)) = margins
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("nonempty grid");
    let last = margins.len() - 1;
    let stabilized = argmin_index < last && margins[last].1 > min_log_margin;
    let full = solve_survival_with(sys, &opts)?;
    let min_scaled_log = full.curves[0]
        .points()
        .iter()
        .map(|p| p.q.ln() + lambda * p.t)
        .fold(f64::INFINITY, f64::min);
    Ok(LowerBoundReport {
        k0,
        lambda,
        epsilon,
        t_max,
        min_log_margin,
        argmin_t,
        implied_c1: min_log_margin.exp(),
        stabilized,
        min_scaled_log,
    })
}
