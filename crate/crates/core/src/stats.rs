//! Monte Carlo estimates of survival probabilities, the Gumbel comparison for
//! extinction times of large populations, and tail-rate fitting.

use serde::Serialize;

use crate::analytic::{CurvePoint, CurveSource, SurvivalCurve};
use crate::error::{ModelError, StatsError};
use crate::model::ModelParams;
use crate::simulator::{self, BatchOptions, PopulationState};

/// Two-sided 95% standard normal quantile.
pub const Z_95: f64 = 1.959963984540054;

/// `w` at which the standard Gumbel CDF equals 1/2: `-ln ln 2`.
pub fn gumbel_median() -> f64 {
    -(2f64.ln()).ln()
}

/// Standard Gumbel CDF `exp(-exp(-w))`.
pub fn gumbel_cdf(w: f64) -> f64 {
    (-(-w).exp()).exp()
}

/// Inverse of [`gumbel_cdf`] on `(0, 1)`.
pub fn gumbel_quantile(p: f64) -> f64 {
    -(-p.ln()).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    Wilson95,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateWithCI {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: u64,
    pub successes: u64,
    pub method: IntervalMethod,
}

impl EstimateWithCI {
    pub fn contains(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }

    /// Binomial standard error `sqrt(p (1 - p) / n)` at the point estimate.
    pub fn standard_error(&self) -> f64 {
        (self.point * (1.0 - self.point) / self.n as f64).sqrt()
    }
}

/// Wilson score interval for `successes` out of `n` at normal quantile `z`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> EstimateWithCI {
    assert!(n > 0 && successes <= n, "need 0 <= successes <= n and n >= 1");
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    EstimateWithCI {
        point: p,
        ci_low: (center - half).clamp(0.0, p),
        ci_high: (center + half).clamp(p, 1.0),
        n,
        successes,
        method: IntervalMethod::Wilson95,
    }
}

/// Fraction of `n` replicates, each started from one type-`k` host, alive at time `t`.
pub fn estimate_qk(
    k: u32,
    t: f64,
    params: &ModelParams,
    seed: u64,
    n: u64,
    options: &BatchOptions,
) -> Result<EstimateWithCI, StatsError> {
    estimate_qk_from(k, t, params, seed, 0, n, options)
}

/// As [`estimate_qk`], on streams `first_stream..first_stream + n`.
pub fn estimate_qk_from(
    k: u32,
    t: f64,
    params: &ModelParams,
    seed: u64,
    first_stream: u64,
    n: u64,
    options: &BatchOptions,
) -> Result<EstimateWithCI, StatsError> {
    if n == 0 {
        return Err(StatsError::InvalidInput("need at least one replicate".into()));
    }
    let init = PopulationState::single(k)?;
    let alive = simulator::map_replicate_range(seed, first_stream..first_stream + n, options, |rng| {
        simulator::run_to_extinction(&init, params, rng, Some(t), options.max_events).map(|o| o.survived())
    })?;
    let successes = alive.iter().filter(|&&a| a).count() as u64;
    Ok(wilson_interval(successes, n, Z_95))
}

/// Monte Carlo curve of `q_k` at the given times; each time point uses its
/// own block of `n` streams so points are independent.
pub fn monte_carlo_curve(
    k: u32,
    times: &[f64],
    params: &ModelParams,
    seed: u64,
    n: u64,
    options: &BatchOptions,
) -> Result<SurvivalCurve, StatsError> {
    monte_carlo_curve_from(k, times, params, seed, 0, n, options)
}

/// As [`monte_carlo_curve`], with stream blocks starting at `first_stream`
/// so several curves can share one master seed without overlap.
pub fn monte_carlo_curve_from(
    k: u32,
    times: &[f64],
    params: &ModelParams,
    seed: u64,
    first_stream: u64,
    n: u64,
    options: &BatchOptions,
) -> Result<SurvivalCurve, StatsError> {
    let mut points = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        let est = estimate_qk_from(k, t, params, seed, first_stream + i as u64 * n, n, options)?;
        points.push(CurvePoint {
            t,
            q: est.point,
            err: est.standard_error(),
        });
    }
    SurvivalCurve::new(k, points, CurveSource::MonteCarlo).map_err(|e| StatsError::InvalidInput(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthConditionReport {
    /// `sum k z_k`.
    pub first_moment: f64,
    /// `sum k^2 z_k`.
    pub second_moment: f64,
    pub exponent: f64,
    /// `sum k^2 z_k / (sum k z_k)^(1 + a / lambda)`; should be small.
    pub ratio: f64,
    /// Ratio of at least one: spores are too concentrated for the Gumbel limit to be expected.
    pub suspect: bool,
}

/// Finite-size version of the requirement that `sum k^2 z_k` be small against
/// `(sum k z_k)^(1 + a / lambda)`. Advisory only.
pub fn check_growth_condition(
    z: &PopulationState,
    a: f64,
    lambda: f64,
) -> Result<GrowthConditionReport, StatsError> {
    if z.is_extinct() {
        return Err(StatsError::InvalidInput("initial counts are empty".into()));
    }
    if !(lambda > 0.0) {
        return Err(ModelError::NotSubcritical { lambda }.into());
    }
    let first = z.spores() as f64;
    let second: f64 = z.counts().iter().map(|(&k, &n)| (k as f64) * (k as f64) * n as f64).sum();
    let exponent = 1.0 + a / lambda;
    let ratio = second / first.powf(exponent);
    Ok(GrowthConditionReport {
        first_moment: first,
        second_moment: second,
        exponent,
        ratio,
        suspect: ratio >= 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantileRow {
    pub p: f64,
    pub predicted_w: f64,
    pub empirical_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GumbelReport {
    pub lambda: f64,
    pub c: f64,
    /// `sum k z_k`.
    pub total_spores: f64,
    /// Predicted location of `T`: `ln(C sum k z_k) / lambda`.
    pub location: f64,
    /// Predicted scale of `T`: `1 / lambda`.
    pub scale: f64,
    pub replicates: u64,
    /// KS distance between the law of `lambda T - ln(C sum k z_k)` and the standard Gumbel.
    pub ks_distance: f64,
    pub empirical_median: f64,
    pub predicted_median: f64,
    pub quantiles: Vec<QuantileRow>,
    /// Raw extinction times, in replicate order.
    pub extinction_times: Vec<f64>,
}

impl GumbelReport {
    /// `lambda T - ln(C sum k z_k)` per replicate, in replicate order.
    pub fn centered(&self) -> Vec<f64> {
        centered(&self.extinction_times, self.lambda, self.c, self.total_spores)
    }
}

fn centered(times: &[f64], lambda: f64, c: f64, total: f64) -> Vec<f64> {
    let shift = (c * total).ln();
    times.iter().map(|t| lambda * t - shift).collect()
}

pub const REPORTED_QUANTILES: [f64; 7] = [0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95];

/// Simulate extinction times from `z` and compare the centered, scaled times with the standard Gumbel law.
pub fn gumbel_experiment(
    z: &PopulationState,
    params: &ModelParams,
    c: f64,
    seed: u64,
    replicates: u64,
    options: &BatchOptions,
) -> Result<GumbelReport, StatsError> {
    let lambda = params.decay_rate();
    if lambda <= 0.0 {
        return Err(ModelError::NotSubcritical { lambda }.into());
    }
    if !(c > 0.0 && c <= 1.0) {
        return Err(StatsError::InvalidInput(format!("constant C = {c} must lie in (0, 1]")));
    }
    if z.is_extinct() {
        return Err(StatsError::InvalidInput("initial counts are empty".into()));
    }
    let outcomes = simulator::run_batch(z, params, seed, replicates, None, options)?;
    let times: Vec<f64> = outcomes.iter().map(|o| o.extinction_time.time()).collect();
    let total = z.spores() as f64;
    let mut w = centered(&times, lambda, c, total);
    w.sort_by(f64::total_cmp);
    let quantiles = REPORTED_QUANTILES
        .iter()
        .map(|&p| QuantileRow {
            p,
            predicted_w: gumbel_quantile(p),
            empirical_w: sorted_quantile(&w, p),
        })
        .collect();
    Ok(GumbelReport {
        lambda,
        c,
        total_spores: total,
        location: (c * total).ln() / lambda,
        scale: 1.0 / lambda,
        replicates,
        ks_distance: ks_distance_sorted(&w, gumbel_cdf),
        empirical_median: sorted_quantile(&w, 0.5),
        predicted_median: gumbel_median(),
        quantiles,
        extinction_times: times,
    })
}

/// Linear-interpolation quantile of an ascending sample.
pub fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub lambda_hat: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Least-squares slope of `-ln q` against `t` over `[t_lo, t_hi]`.
///
/// Monte Carlo curves with positive standard errors are fitted with weights
/// `(q / err)^2`, the inverse delta-method variance of `ln q`, and the
/// reported standard error uses those known variances. Other curves use
/// ordinary least squares with a residual-based standard error.
pub fn fit_decay_rate(curve: &SurvivalCurve, window: (f64, f64)) -> Result<DecayFit, StatsError> {
    let (lo, hi) = window;
    if !(lo < hi) {
        return Err(StatsError::InvalidInput(format!("empty fit window [{lo}, {hi}]")));
    }
    let pts: Vec<&CurvePoint> = curve.points().iter().filter(|p| p.t >= lo && p.t <= hi).collect();
    if let Some(p) = pts.iter().find(|p| !(p.q > 0.0)) {
        return Err(StatsError::Window { t: p.t, q: p.q });
    }
    if pts.len() < 2 {
        return Err(StatsError::InvalidInput(format!(
            "fit window [{lo}, {hi}] holds {} point(s); need at least 2",
            pts.len()
        )));
    }
    let weighted = curve.source() == CurveSource::MonteCarlo && pts.iter().all(|p| p.err > 0.0);
    let xs: Vec<f64> = pts.iter().map(|p| p.t).collect();
    let ys: Vec<f64> = pts.iter().map(|p| -p.q.ln()).collect();
    let ws: Vec<f64> = if weighted {
        pts.iter().map(|p| (p.q / p.err).powi(2)).collect()
    } else {
        vec![1.0; pts.len()]
    };
    let sw: f64 = ws.iter().sum();
    let x_bar = xs.iter().zip(&ws).map(|(x, w)| w * x).sum::<f64>() / sw;
    let y_bar = ys.iter().zip(&ws).map(|(y, w)| w * y).sum::<f64>() / sw;
    let sxx: f64 = xs.iter().zip(&ws).map(|(x, w)| w * (x - x_bar).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .zip(&ws)
        .map(|((x, y), w)| w * (x - x_bar) * (y - y_bar))
        .sum();
    let slope = sxy / sxx;
    let intercept = y_bar - slope * x_bar;
    let stderr = if weighted {
        (1.0 / sxx).sqrt()
    } else if pts.len() > 2 {
        let rss: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        (rss / (pts.len() - 2) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    Ok(DecayFit {
        lambda_hat: slope,
        stderr,
        intercept,
        points: pts.len(),
    })
}

/// `sup_x |F_n(x) - F(x)|` for the empirical CDF `F_n` of `sample`.
pub fn ks_distance<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    ks_distance_sorted(&sorted, cdf)
}

fn ks_distance_sorted<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> f64 {
    assert!(!sorted.is_empty(), "KS distance of an empty sample");
    let n = sorted.len() as f64;
    sorted.iter().enumerate().fold(0.0, |d: f64, (i, &x)| {
        let f = cdf(x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoSampleKs {
    pub statistic: f64,
    /// Asymptotic p-value with the usual small-sample correction.
    pub p_value: f64,
}

/// Two-sample Kolmogorov-Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> TwoSampleKs {
    assert!(!a.is_empty() && !b.is_empty(), "KS test needs two nonempty samples");
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = n * m / (n + m);
    let sq = ne.sqrt();
    TwoSampleKs {
        statistic: d,
        p_value: kolmogorov_survival((sq + 0.12 + 0.11 / sq) * d),
    }
}

/// `P(K > x)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.18 {
        // Theta-function form converges fast for small x.
        let pi2 = std::f64::consts::PI.powi(2);
        let s: f64 = (1..=6)
            .map(|j| {
                let odd = (2 * j - 1) as f64;
                (-odd * odd * pi2 / (8.0 * x * x)).exp()
            })
            .sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / x * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=20)
            .map(|j| {
                let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (j * j) as f64 * x * x).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}
