//! Versioned JSON run configurations.

use crate::error::CliError;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use specclip::bayes::ChannelSpec;
use specclip::noise::NoiseSpec;
use specclip::optim::TheoremConstants;
use std::path::{Path, PathBuf};

pub const SCHEMA: &str = "specclip/1";

/// Reads `path`, checks the `schema` tag and deserializes the remaining
/// fields (unknown fields are rejected). Returns the typed config and its
/// canonical JSON form (defaults filled, keys sorted).
pub fn load<T: DeserializeOwned + Serialize>(path: &Path) -> Result<(T, Value), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message)))
}

pub fn parse<T: DeserializeOwned + Serialize>(text: &str) -> Result<(T, Value), CliError> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| CliError::config(format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| CliError::config("config must be a JSON object"))?;
    match obj.remove("schema") {
        Some(Value::String(s)) if s == SCHEMA => {}
        Some(other) => return Err(CliError::config(format!("unsupported schema {other}, expected \"{SCHEMA}\""))),
        None => return Err(CliError::config(format!("missing \"schema\": \"{SCHEMA}\""))),
    }
    let typed: T = serde_json::from_value(value).map_err(|e| CliError::config(format!("invalid config: {e}")))?;
    let canonical = serde_json::to_value(&typed).map_err(|e| CliError::config(e.to_string()))?;
    Ok((typed, canonical))
}

fn default_draws() -> usize {
    specclip::localization::DEFAULT_BASELINE_DRAWS
}

fn default_realizations() -> usize {
    64
}

fn default_count() -> usize {
    1
}

fn default_multiplier() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source", deny_unknown_fields)]
pub enum SignalSource {
    File { path: PathBuf },
    /// `strength·a bᵀ + noise·Z` with random-sign unit vectors `a`, `b`.
    Delocalized { m: usize, n: usize, strength: f64, noise: f64 },
    Gaussian { m: usize, n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source", deny_unknown_fields)]
pub enum NoiseSource {
    File { path: PathBuf },
    Model { spec: NoiseSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub signal: SignalSource,
    pub noise: NoiseSource,
    #[serde(default = "default_draws")]
    pub draws: usize,
    /// Zero-based singular direction of the signal.
    #[serde(default)]
    pub direction: usize,
    /// Noise draws for the Spearman and Hill statistics (model noise only).
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub m: usize,
    pub n: usize,
    pub spec: NoiseSpec,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    #[serde(default)]
    pub log: bool,
}

impl GridSpec {
    pub fn points(&self) -> Result<Vec<f64>, CliError> {
        if self.count == 0 || !(self.lo <= self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(CliError::config("grid needs count >= 1 and finite lo <= hi"));
        }
        if self.log {
            if !(self.lo > 0.0) {
                return Err(CliError::config("log grid needs lo > 0"));
            }
            return Ok(specclip::bayes::log_grid(self.lo, self.hi, self.count));
        }
        if self.count == 1 {
            return Ok(vec![self.lo]);
        }
        let step = (self.hi - self.lo) / (self.count - 1) as f64;
        Ok((0..self.count).map(|k| self.lo + step * k as f64).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BayesConfig {
    pub channel: ChannelSpec,
    pub grid: GridSpec,
    /// Surrogate temperature; the error-minimizing τ when omitted.
    #[serde(default)]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub constants: TheoremConstants,
    pub epsilon: f64,
    /// Scales every minimal threshold; must be at least 1.
    #[serde(default = "default_multiplier")]
    pub multiplier: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_is_required() {
        let ok = r#"{"schema":"specclip/1","m":2,"n":3,"spec":{"model":"contamination","alpha":0.1,"sigma":1,"heavy":{"family":"cauchy","gamma":1}}}"#;
        let (cfg, canon): (NoiseConfig, Value) = parse(ok).unwrap();
        assert_eq!(cfg.count, 1);
        assert_eq!(canon["count"], 1);
        assert!(parse::<NoiseConfig>(&ok.replace("specclip/1", "specclip/0")).is_err());
        assert!(parse::<NoiseConfig>(&ok.replace(r#""schema":"specclip/1","#, "")).is_err());
        assert!(parse::<NoiseConfig>(&ok.replace(r#""m":2"#, r#""m":2,"bogus":1"#)).is_err());
    }

    #[test]
    fn grids() {
        let g = GridSpec { lo: -1.0, hi: 1.0, count: 5, log: false };
        assert_eq!(g.points().unwrap(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(GridSpec { lo: -1.0, hi: 1.0, count: 3, log: true }.points().is_err());
    }
}
