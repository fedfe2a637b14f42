//! Fixed-step classical Runge-Kutta integration with step-halving validation.
//!
//! The integrator runs with `n` and `2n` substeps per output interval and
//! accepts the finer run once the two agree to the requested tolerance at
//! every output point; otherwise `n` doubles. For a fourth-order method the
//! difference over-estimates the finer run's error by a factor of about 15.

use crate::error::SolverError;

/// Largest number of substep doublings attempted before giving up.
pub const MAX_DOUBLINGS: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorNorm {
    /// `|y_n - y_2n|`.
    Absolute,
    /// `|y_n - y_2n| / |y_2n|`, for quantities that decay over many orders of magnitude.
    Relative,
}

/// Output of a fixed-step run on a uniform grid `t_i = i * t_max / intervals`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `states[i]` is the state at `times[i]`.
    pub states: Vec<Vec<f64>>,
    /// Number of component updates that were clamped into the admissible box.
    pub clamped: u64,
}

/// A validated trajectory with per-point error estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedTrajectory {
    pub trajectory: Trajectory,
    /// Componentwise `|y_n - y_2n| / 15`, same shape as `states`, in absolute units.
    pub errors: Vec<Vec<f64>>,
    pub substeps_per_interval: usize,
    pub step: f64,
    /// Largest discrepancy between the two accepted runs under the chosen norm.
    pub discrepancy: f64,
}

struct Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Scratch {
    fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }
}

/// One RK4 step of the autonomous system `y' = f(y)`, in place.
pub fn rk4_step<F>(f: &F, y: &mut [f64], h: f64)
where
    F: Fn(&[f64], &mut [f64]),
{
    let mut scratch = Scratch::new(y.len());
    rk4_step_with(f, y, h, &mut scratch)
}

#[allow(clippy::needless_range_loop)]
fn rk4_step_with<F>(f: &F, y: &mut [f64], h: f64, s: &mut Scratch)
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = y.len();
    f(y, &mut s.k1);
    for i in 0..n {
        s.tmp[i] = y[i] + 0.5 * h * s.k1[i];
    }
    f(&s.tmp, &mut s.k2);
    for i in 0..n {
        s.tmp[i] = y[i] + 0.5 * h * s.k2[i];
    }
    f(&s.tmp, &mut s.k3);
    for i in 0..n {
        s.tmp[i] = y[i] + h * s.k3[i];
    }
    f(&s.tmp, &mut s.k4);
    for i in 0..n {
        y[i] += h / 6.0 * (s.k1[i] + 2.0 * s.k2[i] + 2.0 * s.k3[i] + s.k4[i]);
    }
}

/// Integrate from `y0` at `t = 0` to `t_max` with `substeps` RK4 steps per
/// output interval. Components are clamped into `bounds` after every step.
pub fn integrate<F>(
    f: &F,
    y0: &[f64],
    t_max: f64,
    intervals: usize,
    substeps: usize,
    bounds: Option<(f64, f64)>,
) -> Trajectory
where
    F: Fn(&[f64], &mut [f64]),
{
    let dt_out = t_max / intervals as f64;
    let h = dt_out / substeps as f64;
    let mut y = y0.to_vec();
    let mut scratch = Scratch::new(y.len());
    let mut times = Vec::with_capacity(intervals + 1);
    let mut states = Vec::with_capacity(intervals + 1);
    let mut clamped = 0;
    times.push(0.0);
    states.push(y.clone());
    for i in 1..=intervals {
        for _ in 0..substeps {
            rk4_step_with(f, &mut y, h, &mut scratch);
            if let Some((lo, hi)) = bounds {
                for v in y.iter_mut() {
                    if *v < lo {
                        *v = lo;
                        clamped += 1;
                    } else if *v > hi {
                        *v = hi;
                        clamped += 1;
                    }
                }
            }
        }
        times.push(i as f64 * t_max / intervals as f64);
        states.push(y.clone());
    }
    Trajectory { times, states, clamped }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalvingSettings {
    pub tol: f64,
    pub norm: ErrorNorm,
    pub initial_substeps: usize,
    pub bounds: Option<(f64, f64)>,
}

/// Integrate with successively halved steps until two runs agree to `tol`.
pub fn integrate_validated<F>(
    f: &F,
    y0: &[f64],
    t_max: f64,
    intervals: usize,
    settings: &HalvingSettings,
) -> Result<ValidatedTrajectory, SolverError>
where
    F: Fn(&[f64], &mut [f64]),
{
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(SolverError::InvalidInput(format!("t_max must be positive, got {t_max}")));
    }
    if !(settings.tol > 0.0) {
        return Err(SolverError::InvalidInput(format!("tol must be positive, got {}", settings.tol)));
    }
    if intervals == 0 {
        return Err(SolverError::InvalidInput("need at least one output interval".into()));
    }
    let mut substeps = settings.initial_substeps.max(1);
    let mut coarse = integrate(f, y0, t_max, intervals, substeps, settings.bounds);
    let mut estimate = f64::INFINITY;
    for _ in 0..MAX_DOUBLINGS {
        let fine = integrate(f, y0, t_max, intervals, 2 * substeps, settings.bounds);
        estimate = discrepancy(&coarse, &fine, settings.norm);
        if estimate <= settings.tol {
            let errors = coarse
                .states
                .iter()
                .zip(&fine.states)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs() / 15.0).collect())
                .collect();
            return Ok(ValidatedTrajectory {
                trajectory: fine,
                errors,
                substeps_per_interval: 2 * substeps,
                step: t_max / intervals as f64 / (2 * substeps) as f64,
                discrepancy: estimate,
            });
        }
        substeps *= 2;
        coarse = fine;
    }
    Err(SolverError::StepUnderflow {
        h: t_max / intervals as f64 / substeps as f64,
        tol: settings.tol,
        estimate,
    })
}

fn discrepancy(a: &Trajectory, b: &Trajectory, norm: ErrorNorm) -> f64 {
    let mut worst: f64 = 0.0;
    for (sa, sb) in a.states.iter().zip(&b.states) {
        for (x, y) in sa.iter().zip(sb) {
            let d = (x - y).abs();
            let d = match norm {
                ErrorNorm::Absolute => d,
                ErrorNorm::Relative => {
                    if *y == 0.0 {
                        if d == 0.0 { 0.0 } else { f64::INFINITY }
                    } else {
                        d / y.abs()
                    }
                }
            };
            if d.is_nan() {
                return f64::INFINITY;
            }
            worst = worst.max(d);
        }
    }
    worst
}
