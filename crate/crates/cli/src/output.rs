//! Artifact formatting and writing.
//!
//! CSV files use LF line endings and print floats with `{:.16e}`, which
//! round-trips every `f64`. Each run also writes `manifest.json` holding the
//! shared metadata and the list of artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use spore_core::rng::RNG_ALGORITHM;
use spore_core::SurvivalCurve;

use crate::config::ExperimentConfig;

pub const TOOL_NAME: &str = "spore";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance block embedded in every JSON artifact.
///
/// Holds nothing that depends on the machine, the clock or the thread count,
/// so reruns produce byte-identical files.
#[derive(Debug, Clone, Serialize)]
pub struct Metadata<'a> {
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub config_sha256: String,
    pub rng_algorithm: &'static str,
    pub seed: Option<u64>,
    pub config: &'a ExperimentConfig,
}

impl<'a> Metadata<'a> {
    pub fn new(config: &'a ExperimentConfig) -> Self {
        Self {
            tool: TOOL_NAME,
            tool_version: TOOL_VERSION,
            config_sha256: config_hash(config),
            rng_algorithm: RNG_ALGORITHM,
            seed: config.experiment.seed(),
            config,
        }
    }
}

/// SHA-256 of the canonical resolved config, as lowercase hex.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let digest = Sha256::digest(config.canonical_json().as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Format a float so that parsing it back gives the same bits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub const CURVE_HEADER: &str = "k,t,q,err,source";
pub const SAMPLE_HEADER: &str = "replicate,T";

/// Curves as CSV with columns `k,t,q,err,source`.
pub fn curves_csv<'a, I: IntoIterator<Item = &'a SurvivalCurve>>(curves: I) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for curve in curves {
        for p in curve.points() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                curve.k(),
                fmt_float(p.t),
                fmt_float(p.q),
                fmt_float(p.err),
                curve.source().as_str()
            );
        }
    }
    out
}

/// Extinction times as CSV with columns `replicate,T`.
pub fn samples_csv(samples: &[f64]) -> String {
    let mut out = String::from(SAMPLE_HEADER);
    out.push('\n');
    for (i, t) in samples.iter().enumerate() {
        let _ = writeln!(out, "{i},{}", fmt_float(*t));
    }
    out
}

/// Write curves to `path` as CSV.
pub fn emit_curves_csv(curves: &[SurvivalCurve], path: &Path) -> std::io::Result<()> {
    fs::write(path, curves_csv(curves))
}

/// Write a sample of extinction times to `path` as CSV.
pub fn emit_samples_csv(samples: &[f64], path: &Path) -> std::io::Result<()> {
    fs::write(path, samples_csv(samples))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

impl Artifact {
    pub fn new(name: impl Into<String>, contents: String) -> Self {
        Self {
            name: name.into(),
            contents,
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    metadata: &'a Metadata<'a>,
    artifacts: Vec<&'a str>,
}

/// Write all artifacts plus `manifest.json` into `dir`. If any write fails,
/// files already written by this call are removed.
pub fn write_artifacts(dir: &Path, metadata: &Metadata<'_>, artifacts: &[Artifact]) -> Result<Vec<PathBuf>, (PathBuf, std::io::Error)> {
    fs::create_dir_all(dir).map_err(|e| (dir.to_path_buf(), e))?;
    let manifest = Artifact::new(
        "manifest.json",
        to_json(&Manifest {
            metadata,
            artifacts: artifacts.iter().map(|a| a.name.as_str()).collect(),
        }),
    );
    let mut written = Vec::new();
    for artifact in artifacts.iter().chain(std::iter::once(&manifest)) {
        let path = dir.join(&artifact.name);
        if let Err(e) = fs::write(&path, &artifact.contents) {
            remove_all(&written);
            let _ = fs::remove_file(&path);
            return Err((path, e));
        }
        written.push(path);
    }
    Ok(written)
}

fn remove_all(paths: &[PathBuf]) {
    for p in paths {
        let _ = fs::remove_file(p);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use spore_core::{CurvePoint, CurveSource};

    #[test]
    fn floats_round_trip() {
        for x in [0.0, 1.0, 0.1, 1.0 / 3.0, 5e-324, f64::MAX, -2.5e-17, std::f64::consts::PI] {
            let s = fmt_float(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn curve_csv_layout() {
        let curve = SurvivalCurve::new(
            2,
            vec![
                CurvePoint { t: 0.0, q: 1.0, err: 0.0 },
                CurvePoint { t: 0.5, q: 0.25, err: 1e-3 },
            ],
            CurveSource::MonteCarlo,
        )
        .unwrap();
        let csv = curves_csv([&curve]);
        let lines: Vec<&str> = csv.split('\n').collect();
        assert_eq!(lines[0], "k,t,q,err,source");
        assert_eq!(lines[2], "2,5.0000000000000000e-1,2.5000000000000000e-1,1.0000000000000000e-3,monte_carlo");
        assert_eq!(lines.len(), 4);
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn samples_csv_layout() {
        assert_eq!(samples_csv(&[1.5, 2.0]), "replicate,T\n0,1.5000000000000000e0\n1,2.0000000000000000e0\n");
    }
}
