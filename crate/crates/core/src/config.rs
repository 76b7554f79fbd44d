//! Run configuration: strict JSON parsing, defaults, validation and the
//! canonical hash that ties persisted artifacts to the run that made them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::abc::{Kernel, PriorSpec};
use crate::error::{Error, Result};
use crate::experiment::ExperimentPlan;
use crate::models::FixtureSpec;
use crate::regression::BasisSpec;
use crate::semiauto::TargetFunctional;

/// Which statistics the pilot rejection step compares.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotStatistics {
    #[default]
    Raw,
    /// Summaries from a projector fitted on the pilot batch itself.
    Projected,
}

fn default_pilot_m() -> usize {
    10_000
}
fn default_pilot_fraction() -> f64 {
    0.05
}
fn default_expand() -> f64 {
    0.1
}
fn default_main_m() -> usize {
    100_000
}
fn default_main_fraction() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PilotConfig {
    #[serde(rename = "M", default = "default_pilot_m")]
    pub m: usize,
    #[serde(default = "default_pilot_fraction")]
    pub accept_fraction: f64,
    #[serde(default)]
    pub statistics: PilotStatistics,
    /// Widening of the pilot bounding box, as a fraction of its range.
    #[serde(default = "default_expand")]
    pub expand: f64,
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self {
            m: default_pilot_m(),
            accept_fraction: default_pilot_fraction(),
            statistics: PilotStatistics::Raw,
            expand: default_expand(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructConfig {
    /// Draws in the truncated-prior batch used to fit the projector.
    #[serde(rename = "M", default = "default_pilot_m")]
    pub m: usize,
}

impl Default for ConstructConfig {
    fn default() -> Self {
        Self { m: default_pilot_m() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MainConfig {
    #[serde(rename = "M", default = "default_main_m")]
    pub m: usize,
    #[serde(default = "default_main_fraction")]
    pub accept_fraction: f64,
    #[serde(default)]
    pub kernel: Kernel,
}

impl Default for MainConfig {
    fn default() -> Self {
        Self {
            m: default_main_m(),
            accept_fraction: default_main_fraction(),
            kernel: Kernel::Uniform,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdjustConfig {
    #[serde(default)]
    pub regression_adjust: bool,
    #[serde(default)]
    pub marginal_adjust: bool,
}

fn model_from_json<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<FixtureSpec, D::Error> {
    use serde::de::Error as _;
    match serde_json::Value::deserialize(d)? {
        serde_json::Value::String(s) => s.parse().map_err(|e: Error| D::Error::custom(e.to_string())),
        other => serde_json::from_value(other).map_err(D::Error::custom),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Fixture as `{"name": {params}}` or the string `"name:k=v,..."`.
    #[serde(deserialize_with = "model_from_json")]
    pub model: FixtureSpec,
    /// Replaces the fixture's prior. Oracles assume the fixture prior and
    /// are not reported when this is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorSpec>,
    #[serde(default)]
    pub pilot: PilotConfig,
    #[serde(default)]
    pub construct: ConstructConfig,
    #[serde(default)]
    pub main: MainConfig,
    #[serde(default = "BasisSpec::identity")]
    pub basis: BasisSpec,
    #[serde(default)]
    pub ridge_lambda: f64,
    /// Target functionals; the fixture's defaults when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<TargetFunctional>>,
    #[serde(default)]
    pub adjust: AdjustConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentPlan>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn range_error(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn check_fraction(path: &str, f: f64) -> Result<()> {
    if f > 0.0 && f <= 1.0 {
        Ok(())
    } else {
        Err(range_error(path, format!("{f} is outside (0, 1]")))
    }
}

fn check_count(path: &str, n: usize) -> Result<()> {
    if n > 0 {
        Ok(())
    } else {
        Err(range_error(path, "must be positive"))
    }
}

impl RunConfig {
    /// A config with every optional field at its default.
    pub fn new(model: FixtureSpec, seed: u64) -> Self {
        Self {
            model,
            prior: None,
            pilot: PilotConfig::default(),
            construct: ConstructConfig::default(),
            main: MainConfig::default(),
            basis: BasisSpec::identity(),
            ridge_lambda: 0.0,
            targets: None,
            adjust: AdjustConfig::default(),
            experiment: None,
            seed,
            out_dir: None,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config {
                path,
                message: e.into_inner().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_count("pilot.M", self.pilot.m)?;
        check_fraction("pilot.accept_fraction", self.pilot.accept_fraction)?;
        if !(self.pilot.expand >= 0.0 && self.pilot.expand.is_finite()) {
            return Err(range_error("pilot.expand", "must be a finite value ≥ 0"));
        }
        check_count("construct.M", self.construct.m)?;
        check_count("main.M", self.main.m)?;
        check_fraction("main.accept_fraction", self.main.accept_fraction)?;
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return Err(range_error("ridge_lambda", "must be a finite value ≥ 0"));
        }
        if let Some(t) = &self.targets {
            if t.is_empty() {
                return Err(range_error("targets", "must not be empty"));
            }
        }
        if let Some(p) = &self.prior {
            p.validate().map_err(|e| range_error("prior", e.to_string()))?;
        }
        if let Some(plan) = &self.experiment {
            plan.validate().map_err(|e| match e {
                Error::Config { path, message } => range_error(&format!("experiment.{path}"), message),
                other => range_error("experiment", other.to_string()),
            })?;
        }
        Ok(())
    }

    /// Canonical JSON: sorted keys, defaults filled, output directory left out.
    pub fn canonical_json(&self) -> String {
        let mut copy = self.clone();
        copy.out_dir = None;
        let value = serde_json::to_value(&copy).expect("config serialises");
        serde_json::to_string(&value).expect("value serialises")
    }

    /// Hex SHA-256 of [`canonical_json`](Self::canonical_json).
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

/// Reads and validates a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    RunConfig::from_json_str(&text)
}
