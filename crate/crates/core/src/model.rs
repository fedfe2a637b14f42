//! Model parameters: the offspring spore-count law, the release and removal
//! rates, and the quantities derived from them.

use rand::Rng;
use rand_distr::{Distribution, Geometric, Poisson};
use serde::Serialize;

use crate::error::ModelError;

/// Probabilities must sum to one within this tolerance to be accepted as-is.
pub const NORMALIZATION_TOL: f64 = 1e-12;
/// Deviations below this are renormalized away; anything larger is an error.
pub const RENORMALIZATION_LIMIT: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
enum Law {
    Table { probs: Vec<f64>, cdf: Vec<f64> },
    Poisson { rate: f64, sampler: Poisson<f64> },
    Geometric { success: f64, sampler: Geometric },
}

/// Law of the spore count `J` carried by a newly created host.
///
/// `J = 0` is allowed and means no new host appears.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringDistribution {
    law: Law,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OffspringKind {
    Table,
    Poisson,
    Geometric,
}

impl OffspringDistribution {
    /// Finite table `p_0, p_1, ..., p_J`.
    pub fn table(probs: Vec<f64>) -> Result<Self, ModelError> {
        if probs.is_empty() {
            return Err(ModelError::EmptyTable);
        }
        if let Some((index, &value)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(ModelError::InvalidProbability { index, value });
        }
        let sum: f64 = probs.iter().sum();
        let deviation = (sum - 1.0).abs();
        if deviation > RENORMALIZATION_LIMIT {
            return Err(ModelError::Normalization { sum });
        }
        let mut probs = probs;
        if deviation > NORMALIZATION_TOL {
            probs.iter_mut().for_each(|p| *p /= sum);
        }
        // Drop trailing zeros so the support bound is tight.
        while probs.len() > 1 && probs[probs.len() - 1] == 0.0 {
            probs.pop();
        }
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        *cdf.last_mut().expect("nonempty") = 1.0;
        Ok(Self {
            law: Law::Table { probs, cdf },
        })
    }

    pub fn poisson(rate: f64) -> Result<Self, ModelError> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "rate",
                value: rate,
            });
        }
        let sampler = Poisson::new(rate).map_err(|_| ModelError::InvalidParameter {
            name: "rate",
            value: rate,
        })?;
        Ok(Self {
            law: Law::Poisson { rate, sampler },
        })
    }

    /// Geometric law on `{0, 1, 2, ...}`: `P(J = j) = p (1 - p)^j`.
    pub fn geometric(success: f64) -> Result<Self, ModelError> {
        if !(success.is_finite() && success > 0.0 && success <= 1.0) {
            return Err(ModelError::InvalidParameter {
                name: "p",
                value: success,
            });
        }
        let sampler = Geometric::new(success).map_err(|_| ModelError::InvalidParameter {
            name: "p",
            value: success,
        })?;
        Ok(Self {
            law: Law::Geometric { success, sampler },
        })
    }

    pub fn kind(&self) -> OffspringKind {
        match self.law {
            Law::Table { .. } => OffspringKind::Table,
            Law::Poisson { .. } => OffspringKind::Poisson,
            Law::Geometric { .. } => OffspringKind::Geometric,
        }
    }

    /// Table probabilities (after any renormalization), if this is a table law.
    pub fn table_probs(&self) -> Option<&[f64]> {
        match &self.law {
            Law::Table { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Largest `j` with `p_j > 0`, or `None` for unbounded support.
    pub fn max_support(&self) -> Option<usize> {
        match &self.law {
            Law::Table { probs, .. } => Some(probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)),
            _ => None,
        }
    }

    pub fn pmf(&self, j: usize) -> f64 {
        match &self.law {
            Law::Table { probs, .. } => probs.get(j).copied().unwrap_or(0.0),
            Law::Poisson { rate, .. } => {
                let log_fact: f64 = (1..=j).map(|i| (i as f64).ln()).sum();
                (j as f64 * rate.ln() - rate - log_fact).exp()
            }
            Law::Geometric { success, .. } => success * (1.0 - success).powi(j as i32),
        }
    }

    /// `(p_0, ..., p_n)`, computed by recurrence for the parametric laws.
    pub fn probs_up_to(&self, n: usize) -> Vec<f64> {
        match &self.law {
            Law::Table { probs, .. } => (0..=n).map(|j| probs.get(j).copied().unwrap_or(0.0)).collect(),
            Law::Poisson { rate, .. } => {
                let mut out = Vec::with_capacity(n + 1);
                let mut p = (-rate).exp();
                for j in 0..=n {
                    if j > 0 {
                        p *= rate / j as f64;
                    }
                    out.push(p);
                }
                out
            }
            Law::Geometric { success, .. } => {
                let mut out = Vec::with_capacity(n + 1);
                let mut p = *success;
                for _ in 0..=n {
                    out.push(p);
                    p *= 1.0 - success;
                }
                out
            }
        }
    }

    /// Law of `J * 1{J <= max_type}`: all mass above `max_type` moves to 0.
    pub fn truncated_probs(&self, max_type: usize) -> Vec<f64> {
        let mut probs = self.probs_up_to(max_type);
        let kept: f64 = probs[1..].iter().sum();
        probs[0] = (1.0 - kept).max(0.0);
        probs
    }

    pub fn mean(&self) -> f64 {
        self.mean_and_second_moment().0
    }

    pub fn second_moment(&self) -> f64 {
        self.mean_and_second_moment().1
    }

    /// `(sum k p_k, sum k^2 p_k)`.
    pub fn mean_and_second_moment(&self) -> (f64, f64) {
        match &self.law {
            Law::Table { probs, .. } => probs.iter().enumerate().fold((0.0, 0.0), |(m1, m2), (k, p)| {
                let k = k as f64;
                (m1 + k * p, m2 + k * k * p)
            }),
            Law::Poisson { rate, .. } => (*rate, rate + rate * rate),
            Law::Geometric { success, .. } => {
                let q = 1.0 - success;
                (q / success, q * (2.0 - success) / (success * success))
            }
        }
    }

    /// Smallest `k0 >= 1` with `sum_{k <= k0} k p_k > mean - slack`.
    pub fn truncation_level(&self, slack: f64) -> usize {
        let target = self.mean() - slack;
        let mut n = 64;
        loop {
            let mut partial = 0.0;
            for (k, p) in self.probs_up_to(n).iter().enumerate().skip(1) {
                partial += k as f64 * p;
                if partial > target {
                    return k;
                }
            }
            if n >= 1 << 20 {
                return n;
            }
            n *= 2;
        }
    }

    /// Exact draw from the law.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match &self.law {
            Law::Table { cdf, .. } => {
                let u: f64 = rng.random();
                cdf.partition_point(|&c| c <= u).min(cdf.len() - 1) as u32
            }
            Law::Poisson { sampler, .. } => sampler.sample(rng) as u32,
            Law::Geometric { sampler, .. } => sampler.sample(rng).min(u32::MAX as u64) as u32,
        }
    }

    /// Short human-readable description used in reports.
    pub fn describe(&self) -> String {
        match &self.law {
            Law::Table { probs, .. } => format!("table{probs:?}"),
            Law::Poisson { rate, .. } => format!("poisson({rate})"),
            Law::Geometric { success, .. } => format!("geometric({success})"),
        }
    }
}

/// Spore release rate `beta`, host removal rate `rho` and the offspring law.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    beta: f64,
    rho: f64,
    offspring: OffspringDistribution,
}

impl ModelParams {
    pub fn new(beta: f64, rho: f64, offspring: OffspringDistribution) -> Result<Self, ModelError> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "beta",
                value: beta,
            });
        }
        if !(rho.is_finite() && rho >= 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "rho",
                value: rho,
            });
        }
        Ok(Self { beta, rho, offspring })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn offspring(&self) -> &OffspringDistribution {
        &self.offspring
    }

    /// Tail decay rate `rho + beta (1 - mean)`. May be nonpositive.
    pub fn decay_rate(&self) -> f64 {
        self.rho + self.beta * (1.0 - self.offspring.mean())
    }

    pub fn is_subcritical(&self) -> bool {
        self.decay_rate() > 0.0
    }

    /// `min(lambda, beta)`, the ceiling for the correction exponent `a`.
    pub fn rate_ceiling(&self) -> f64 {
        self.decay_rate().min(self.beta)
    }

    /// Truncation level `k0` for slack `epsilon` (see [`OffspringDistribution::truncation_level`]).
    pub fn truncation_level(&self, epsilon: f64) -> usize {
        self.offspring.truncation_level(epsilon / self.beta)
    }

    pub fn validate(&self, require_subcritical: bool) -> ValidationReport {
        let (mean, m2) = self.offspring.mean_and_second_moment();
        let lambda = self.decay_rate();
        let mut checks = vec![
            HypothesisCheck {
                name: "positive_mean",
                passed: mean > 0.0,
                required: false,
                detail: format!("mean offspring spores = {mean}"),
            },
            HypothesisCheck {
                name: "subcritical",
                passed: lambda > 0.0,
                required: require_subcritical,
                detail: format!("lambda = rho + beta*(1 - mean) = {lambda}"),
            },
            HypothesisCheck {
                name: "finite_second_moment",
                passed: m2.is_finite(),
                required: true,
                detail: format!("sum k^2 p_k = {m2}"),
            },
        ];
        let zero_mean = mean == 0.0;
        if zero_mean {
            checks[0].detail.push_str(" (no new hosts; closed form available)");
        }
        let passed = checks.iter().all(|c| c.passed || !c.required);
        ValidationReport {
            checks,
            passed,
            zero_mean,
            lambda,
            mean,
            second_moment: m2,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Whether failure of this check fails the whole report.
    pub required: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<HypothesisCheck>,
    pub passed: bool,
    /// Mean offspring count is zero: the exponential tail asymptotics do not apply but the
    /// survival probability is known in closed form.
    pub zero_mean: bool,
    pub lambda: f64,
    pub mean: f64,
    pub second_moment: f64,
}

impl ValidationReport {
    pub fn check(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Correction exponent `a` and slack `epsilon`, with
/// `0 < a < min(lambda, beta)` and `0 < epsilon < min(lambda, beta) - a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayWindow {
    a: f64,
    epsilon: f64,
}

impl DecayWindow {
    pub fn new(params: &ModelParams, a: f64, epsilon: f64) -> Result<Self, ModelError> {
        let lambda = params.decay_rate();
        if lambda <= 0.0 {
            return Err(ModelError::NotSubcritical { lambda });
        }
        let ceiling = params.rate_ceiling();
        if !(a > 0.0 && a < ceiling) {
            return Err(ModelError::DecayExponent { a, ceiling });
        }
        if !(epsilon > 0.0 && epsilon < ceiling - a) {
            return Err(ModelError::Slack {
                epsilon,
                limit: ceiling - a,
            });
        }
        Ok(Self { a, epsilon })
    }

    /// `a = min(lambda, beta) / 2`, `epsilon = min(lambda, beta) / 4`.
    pub fn default_for(params: &ModelParams) -> Result<Self, ModelError> {
        let ceiling = params.rate_ceiling();
        Self::new(params, ceiling / 2.0, ceiling / 4.0)
    }

    /// Default `epsilon` paired with a user-chosen `a`.
    pub fn with_a(params: &ModelParams, a: f64) -> Result<Self, ModelError> {
        let ceiling = params.rate_ceiling();
        Self::new(params, a, ((ceiling - a) / 2.0).min(ceiling / 4.0))
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}
