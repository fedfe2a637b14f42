//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "model": {"beta": 1.0, "rho": 0.0, "offspring": {"kind": "table", "probs": [0.6, 0.0, 0.4]}},
//!   "experiment": {"kind": "constant"},
//!   "output": {"dir": "out/constant"}
//! }
//! ```
//!
//! Unknown keys are rejected. Every optional field is filled with its default
//! during parsing, and the filled-in config is what gets recorded in artifact
//! metadata.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use spore_core::analytic::{DEFAULT_CONSTANT_TOL, DEFAULT_SOLVER_TOL};
use spore_core::simulator::DEFAULT_MAX_EVENTS;
use spore_core::{DecayWindow, ModelError, ModelParams, OffspringDistribution, PopulationState};

/// Version of the config and artifact schemas.
pub const SCHEMA_VERSION: u32 = 1;

/// A config problem, located by the JSON path of the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: ModelSpec,
    experiment: RawExperiment,
    #[serde(default)]
    output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub beta: f64,
    pub rho: f64,
    pub offspring: OffspringSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OffspringSpec {
    Table { probs: Vec<f64> },
    Poisson { rate: f64 },
    /// Geometric on `{0, 1, ...}` with success probability `p`.
    Geometric { p: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Artifact directory; `--out-dir` overrides it.
    #[serde(default)]
    pub dir: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurvivalMethod {
    Ode,
    MonteCarlo,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawExperiment {
    Survival {
        #[serde(default)]
        k: Option<Vec<u32>>,
        t_max: f64,
        #[serde(default)]
        t_step: Option<f64>,
        #[serde(default)]
        truncation: Option<usize>,
        #[serde(default)]
        tol: Option<f64>,
        #[serde(default)]
        method: Option<SurvivalMethod>,
        #[serde(default)]
        mc_times: Option<Vec<f64>>,
        #[serde(default)]
        replicates: Option<u64>,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        max_events: Option<u64>,
    },
    Constant {
        #[serde(default)]
        truncation: Option<usize>,
        #[serde(default)]
        a: Option<f64>,
        #[serde(default)]
        epsilon: Option<f64>,
        #[serde(default)]
        tol: Option<f64>,
    },
    Gumbel {
        z: BTreeMap<String, u64>,
        #[serde(default)]
        c: Option<f64>,
        #[serde(default)]
        replicates: Option<u64>,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        a: Option<f64>,
        #[serde(default)]
        truncation: Option<usize>,
        #[serde(default)]
        max_events: Option<u64>,
    },
    Oracle {
        #[serde(default)]
        k: Option<Vec<u32>>,
        #[serde(default)]
        t: Option<Vec<f64>>,
        #[serde(default)]
        tol: Option<f64>,
        #[serde(default)]
        replicates: Option<u64>,
        #[serde(default)]
        seed: Option<u64>,
    },
    Slope {
        #[serde(default)]
        k: Option<u32>,
        #[serde(default)]
        window: Option<[f64; 2]>,
        #[serde(default)]
        truncation: Option<usize>,
        #[serde(default)]
        tol: Option<f64>,
    },
}

/// Experiment with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    Survival {
        k: Vec<u32>,
        t_max: f64,
        t_step: f64,
        truncation: usize,
        tol: f64,
        method: SurvivalMethod,
        mc_times: Vec<f64>,
        replicates: u64,
        seed: Option<u64>,
        max_events: u64,
    },
    Constant {
        truncation: usize,
        a: f64,
        epsilon: f64,
        tol: f64,
    },
    Gumbel {
        z: BTreeMap<u32, u64>,
        /// `None` means: derive `C` when running.
        c: Option<f64>,
        replicates: u64,
        seed: Option<u64>,
        a: f64,
        truncation: usize,
        max_events: u64,
    },
    Oracle {
        k: Vec<u32>,
        t: Vec<f64>,
        tol: f64,
        replicates: u64,
        seed: Option<u64>,
    },
    Slope {
        k: u32,
        window: [f64; 2],
        truncation: usize,
        tol: f64,
    },
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Survival { .. } => "survival",
            Experiment::Constant { .. } => "constant",
            Experiment::Gumbel { .. } => "gumbel",
            Experiment::Oracle { .. } => "oracle",
            Experiment::Slope { .. } => "slope",
        }
    }

    /// Whether the experiment draws random numbers.
    pub fn is_randomized(&self) -> bool {
        match self {
            Experiment::Survival { method, .. } => *method != SurvivalMethod::Ode,
            Experiment::Gumbel { .. } => true,
            Experiment::Oracle { replicates, .. } => *replicates > 0,
            Experiment::Constant { .. } | Experiment::Slope { .. } => false,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Experiment::Survival { seed, .. } | Experiment::Gumbel { seed, .. } | Experiment::Oracle { seed, .. } => {
                *seed
            }
            _ => None,
        }
    }

    pub fn set_seed(&mut self, value: u64) {
        match self {
            Experiment::Survival { seed, .. } | Experiment::Gumbel { seed, .. } | Experiment::Oracle { seed, .. } => {
                *seed = Some(value)
            }
            _ => {}
        }
    }
}

/// A validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub model: ModelSpec,
    pub experiment: Experiment,
    pub output: OutputSpec,
    #[serde(skip)]
    pub params: ModelParams,
}

/// Parse and validate a JSON config, filling defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::new(path, e.into_inner().to_string())
    })?;
    let params = build_params(&raw.model)?;
    let experiment = resolve_experiment(raw.experiment, &params)?;
    Ok(ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        model: raw.model,
        experiment,
        output: raw.output,
        params,
    })
}

fn model_error(err: ModelError) -> ConfigError {
    let path = match &err {
        ModelError::EmptyTable | ModelError::InvalidProbability { .. } | ModelError::Normalization { .. } => {
            "model.offspring.probs"
        }
        ModelError::InvalidParameter { name: "beta", .. } => "model.beta",
        ModelError::InvalidParameter { name: "rho", .. } => "model.rho",
        ModelError::InvalidParameter { name: "rate", .. } => "model.offspring.rate",
        ModelError::InvalidParameter { name: "p", .. } => "model.offspring.p",
        ModelError::InvalidParameter { .. } => "model",
        ModelError::NotSubcritical { .. } => "model",
        ModelError::DecayExponent { .. } => "experiment.a",
        ModelError::Slack { .. } => "experiment.epsilon",
    };
    ConfigError::new(path, err.to_string())
}

pub fn build_params(spec: &ModelSpec) -> Result<ModelParams, ConfigError> {
    let offspring = match &spec.offspring {
        OffspringSpec::Table { probs } => OffspringDistribution::table(probs.clone()),
        OffspringSpec::Poisson { rate } => OffspringDistribution::poisson(*rate),
        OffspringSpec::Geometric { p } => OffspringDistribution::geometric(*p),
    }
    .map_err(model_error)?;
    ModelParams::new(spec.beta, spec.rho, offspring).map_err(model_error)
}

fn require_subcritical(params: &ModelParams, experiment: &str) -> Result<(), ConfigError> {
    let lambda = params.decay_rate();
    if lambda > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::new(
            "model",
            format!(
                "the {experiment} experiment needs a subcritical model, \
                 lambda = rho + beta*(1 - mean offspring) > 0; got lambda = {lambda}"
            ),
        ))
    }
}

fn positive(value: f64, path: &str) -> Result<f64, ConfigError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(ConfigError::new(path, format!("must be a positive number, got {value}")))
    }
}

fn types(k: Option<Vec<u32>>, default: Vec<u32>, path: &str) -> Result<Vec<u32>, ConfigError> {
    let k = k.unwrap_or(default);
    if k.is_empty() {
        return Err(ConfigError::new(path, "must list at least one type"));
    }
    if k.contains(&0) {
        return Err(ConfigError::new(path, "types start at 1"));
    }
    Ok(k)
}

fn truncation(requested: Option<usize>, params: &ModelParams, min_types: usize, path: &str) -> Result<usize, ConfigError> {
    match requested {
        Some(0) => Err(ConfigError::new(path, "truncation level must be at least 1")),
        Some(k) if k < min_types => Err(ConfigError::new(
            path,
            format!("truncation level {k} is below the largest requested type {min_types}"),
        )),
        Some(k) => Ok(k),
        None => spore_core::TruncatedSystem::covering(params.clone(), min_types)
            .map(|s| s.max_type())
            .map_err(|e| ConfigError::new(path, e.to_string())),
    }
}

fn replicates(value: Option<u64>, default: u64, path: &str) -> Result<u64, ConfigError> {
    match value.unwrap_or(default) {
        0 => Err(ConfigError::new(path, "must be at least 1")),
        n => Ok(n),
    }
}

fn resolve_experiment(raw: RawExperiment, params: &ModelParams) -> Result<Experiment, ConfigError> {
    match raw {
        RawExperiment::Survival {
            k,
            t_max,
            t_step,
            truncation: trunc,
            tol,
            method,
            mc_times,
            replicates: reps,
            seed,
            max_events,
        } => {
            let k = types(k, vec![1], "experiment.k")?;
            let t_max = positive(t_max, "experiment.t_max")?;
            let t_step = positive(t_step.unwrap_or((t_max / 100.0).min(0.1)), "experiment.t_step")?;
            let max_k = *k.iter().max().expect("nonempty") as usize;
            let method = method.unwrap_or(SurvivalMethod::Ode);
            let mc_times = mc_times.unwrap_or_else(|| (1..=10).map(|i| t_max * i as f64 / 10.0).collect());
            if mc_times.is_empty() || mc_times.windows(2).any(|w| !(w[1] > w[0])) || mc_times[0] < 0.0 {
                return Err(ConfigError::new(
                    "experiment.mc_times",
                    "must be a nonempty, strictly increasing list of nonnegative times",
                ));
            }
            Ok(Experiment::Survival {
                truncation: truncation(trunc, params, max_k, "experiment.truncation")?,
                k,
                t_max,
                t_step,
                tol: positive(tol.unwrap_or(DEFAULT_SOLVER_TOL), "experiment.tol")?,
                method,
                mc_times,
                replicates: replicates(reps, 10_000, "experiment.replicates")?,
                seed,
                max_events: max_events.unwrap_or(DEFAULT_MAX_EVENTS).max(1),
            })
        }
        RawExperiment::Constant {
            truncation: trunc,
            a,
            epsilon,
            tol,
        } => {
            require_subcritical(params, "constant")?;
            let window = decay_window(params, a, epsilon)?;
            Ok(Experiment::Constant {
                truncation: truncation(trunc, params, 1, "experiment.truncation")?,
                a: window.a(),
                epsilon: window.epsilon(),
                tol: positive(tol.unwrap_or(DEFAULT_CONSTANT_TOL), "experiment.tol")?,
            })
        }
        RawExperiment::Gumbel {
            z,
            c,
            replicates: reps,
            seed,
            a,
            truncation: trunc,
            max_events,
        } => {
            require_subcritical(params, "gumbel")?;
            let mut counts = BTreeMap::new();
            for (key, n) in z {
                let k: u32 = key
                    .parse()
                    .ok()
                    .filter(|&k| k >= 1)
                    .ok_or_else(|| ConfigError::new(format!("experiment.z.{key}"), "keys must be types >= 1"))?;
                if n > 0 {
                    counts.insert(k, n);
                }
            }
            if counts.is_empty() {
                return Err(ConfigError::new("experiment.z", "initial population is empty"));
            }
            if let Some(c) = c {
                if !(c > 0.0 && c <= 1.0) {
                    return Err(ConfigError::new("experiment.c", format!("must lie in (0, 1], got {c}")));
                }
            }
            let window = decay_window(params, a, None)?;
            Ok(Experiment::Gumbel {
                z: counts,
                c,
                replicates: replicates(reps, 2_000, "experiment.replicates")?,
                seed,
                a: window.a(),
                truncation: truncation(trunc, params, 1, "experiment.truncation")?,
                max_events: max_events.unwrap_or(DEFAULT_MAX_EVENTS).max(1),
            })
        }
        RawExperiment::Oracle {
            k,
            t,
            tol,
            replicates: reps,
            seed,
        } => {
            let zero = spore_core::analytic::is_zero_offspring(params);
            let lf = spore_core::analytic::linear_fractional_form(params).is_some();
            if !zero && !lf {
                return Err(ConfigError::new(
                    "experiment.kind",
                    "the oracle experiment needs a closed form: offspring law {p_0 = 1}, \
                     or rho = 0 with p_0 + p_2 = 1 and p_0 > p_2",
                ));
            }
            if lf {
                require_subcritical(params, "oracle")?;
            }
            let k = types(k, if zero { vec![1, 2, 5] } else { vec![1] }, "experiment.k")?;
            if lf && k != [1] {
                return Err(ConfigError::new("experiment.k", "the linear-fractional closed form covers k = 1 only"));
            }
            let t = t.unwrap_or_else(|| {
                if zero {
                    vec![0.5, 1.0, 2.0]
                } else {
                    vec![1.0, 2.0, 5.0, 10.0, 20.0, 40.0]
                }
            });
            if t.is_empty() || t.windows(2).any(|w| !(w[1] > w[0])) || !(t[0] > 0.0) {
                return Err(ConfigError::new("experiment.t", "must be a nonempty, strictly increasing list of positive times"));
            }
            let default_tol = if zero { 1e-8 } else { 1e-7 };
            Ok(Experiment::Oracle {
                k,
                t,
                tol: positive(tol.unwrap_or(default_tol), "experiment.tol")?,
                replicates: reps.unwrap_or(0),
                seed,
            })
        }
        RawExperiment::Slope {
            k,
            window,
            truncation: trunc,
            tol,
        } => {
            require_subcritical(params, "slope")?;
            let k = k.unwrap_or(1);
            if k == 0 {
                return Err(ConfigError::new("experiment.k", "types start at 1"));
            }
            let lambda = params.decay_rate();
            let window = window.unwrap_or([20.0 / lambda, 40.0 / lambda]);
            if !(window[0] >= 0.0 && window[1] > window[0] && window[1].is_finite()) {
                return Err(ConfigError::new("experiment.window", "must be [t_lo, t_hi] with 0 <= t_lo < t_hi"));
            }
            Ok(Experiment::Slope {
                k,
                window,
                truncation: truncation(trunc, params, k as usize, "experiment.truncation")?,
                tol: positive(tol.unwrap_or(DEFAULT_SOLVER_TOL), "experiment.tol")?,
            })
        }
    }
}

fn decay_window(params: &ModelParams, a: Option<f64>, epsilon: Option<f64>) -> Result<DecayWindow, ConfigError> {
    let window = match (a, epsilon) {
        (None, None) => DecayWindow::default_for(params),
        (Some(a), None) => DecayWindow::with_a(params, a),
        (a, Some(eps)) => DecayWindow::new(params, a.unwrap_or(params.rate_ceiling() / 2.0), eps),
    };
    window.map_err(model_error)
}

impl ExperimentConfig {
    /// Initial population for the Gumbel experiment.
    pub fn initial_population(&self) -> Option<PopulationState> {
        match &self.experiment {
            Experiment::Gumbel { z, .. } => PopulationState::from_counts(z.iter().map(|(&k, &n)| (k, n))).ok(),
            _ => None,
        }
    }

    /// Canonical JSON of the resolved config; input to the config hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LF_MODEL: &str = r#""model": {"beta": 1.0, "rho": 0.0, "offspring": {"kind": "table", "probs": [0.6, 0.0, 0.4]}}"#;

    #[test]
    fn minimal_survival_config_gets_defaults() {
        let text = format!(r#"{{{LF_MODEL}, "experiment": {{"kind": "survival", "t_max": 10}}}}"#);
        let cfg = parse_config(&text).unwrap();
        match &cfg.experiment {
            Experiment::Survival {
                k,
                t_step,
                truncation,
                tol,
                method,
                replicates,
                seed,
                ..
            } => {
                assert_eq!(k, &vec![1]);
                assert_eq!(*t_step, 0.1);
                assert_eq!(*truncation, 2);
                assert_eq!(*tol, DEFAULT_SOLVER_TOL);
                assert_eq!(*method, SurvivalMethod::Ode);
                assert_eq!(*replicates, 10_000);
                assert_eq!(*seed, None);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(!cfg.experiment.is_randomized());
        assert!(cfg.canonical_json().contains("\"t_step\":0.1"));
    }

    #[test]
    fn bad_probabilities_name_the_path() {
        let text = r#"{"model": {"beta": 1, "rho": 0, "offspring": {"kind": "table", "probs": [0.5, 0.4]}},
                       "experiment": {"kind": "survival", "t_max": 1}}"#;
        let err = parse_config(text).unwrap_err();
        assert_eq!(err.path, "model.offspring.probs");
    }

    #[test]
    fn gumbel_needs_subcritical_model() {
        let text = r#"{"model": {"beta": 1, "rho": 0, "offspring": {"kind": "table", "probs": [0, 0, 1]}},
                       "experiment": {"kind": "gumbel", "z": {"1": 100}}}"#;
        let err = parse_config(text).unwrap_err();
        assert_eq!(err.path, "model");
        assert!(err.message.contains("lambda = rho + beta*(1 - mean offspring) > 0"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected_with_path() {
        let text = format!(r#"{{{LF_MODEL}, "experiment": {{"kind": "constant", "bogus": 1}}}}"#);
        let err = parse_config(&text).unwrap_err();
        assert!(err.message.contains("bogus"), "{err}");
        let text = r#"{"model": {"beta": 1, "rho": 0, "gamma": 2, "offspring": {"kind": "poisson", "rate": 0.5}},
                       "experiment": {"kind": "constant"}}"#;
        let err = parse_config(text).unwrap_err();
        assert_eq!(err.path, "model.gamma");
        assert!(err.message.contains("gamma"));
    }

    #[test]
    fn type_errors_carry_nested_paths() {
        let text = r#"{"model": {"beta": "fast", "rho": 0, "offspring": {"kind": "poisson", "rate": 0.5}},
                       "experiment": {"kind": "constant"}}"#;
        assert_eq!(parse_config(text).unwrap_err().path, "model.beta");
        let text = r#"{"model": {"beta": 1, "rho": 0, "offspring": {"kind": "poisson", "rate": -1}},
                       "experiment": {"kind": "constant"}}"#;
        assert_eq!(parse_config(text).unwrap_err().path, "model.offspring.rate");
    }

    #[test]
    fn gumbel_counts_are_parsed() {
        let text = format!(r#"{{{LF_MODEL}, "experiment": {{"kind": "gumbel", "z": {{"1": 10000, "3": 250}}, "seed": 4}}}}"#);
        let cfg = parse_config(&text).unwrap();
        let z = cfg.initial_population().unwrap();
        assert_eq!(z.hosts(), 10_250);
        assert_eq!(z.spores(), 10_750);
        assert_eq!(cfg.experiment.seed(), Some(4));
        let bad = format!(r#"{{{LF_MODEL}, "experiment": {{"kind": "gumbel", "z": {{"0": 5}}}}}}"#);
        assert_eq!(parse_config(&bad).unwrap_err().path, "experiment.z.0");
    }

    #[test]
    fn oracle_requires_closed_form() {
        let text = r#"{"model": {"beta": 1, "rho": 0.5, "offspring": {"kind": "table", "probs": [0.5, 0.3, 0.2]}},
                       "experiment": {"kind": "oracle"}}"#;
        assert_eq!(parse_config(text).unwrap_err().path, "experiment.kind");
        let text = format!(r#"{{{LF_MODEL}, "experiment": {{"kind": "oracle"}}}}"#);
        assert!(parse_config(&text).is_ok());
    }

    #[test]
    fn decay_window_bounds_enforced() {
        let text = format!(r#"{{{LF_MODEL}, "experiment": {{"kind": "constant", "a": 0.5}}}}"#);
        assert_eq!(parse_config(&text).unwrap_err().path, "experiment.a");
    }
}
