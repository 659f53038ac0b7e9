//! Experiment configuration: a flat key = value TOML file plus repeatable
//! `--override section.key=value` patches applied before deserialization.

use halfspace::distributions::DistKind;
use halfspace::learner::CalibrationConstants;
use halfspace::oracles::{AdversaryStrategy, NoiseModel};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("override `{arg}` is not of the form section.key=value")]
    BadOverride { arg: String },
    #[error("invalid field {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub distribution: DistributionSection,
    pub noise: NoiseSection,
    pub learning: LearningSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionSection {
    pub kind: KindName,
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KindName {
    UniformSphere,
    IsotropicGaussian,
}

impl From<KindName> for DistKind {
    fn from(k: KindName) -> Self {
        match k {
            KindName::UniformSphere => DistKind::UniformSphere,
            KindName::IsotropicGaussian => DistKind::IsotropicGaussian,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub model: ModelName,
    pub strategy: StrategyName,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub eta_sweep: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    Malicious,
    AdversarialLabel,
}

impl From<ModelName> for NoiseModel {
    fn from(m: ModelName) -> Self {
        match m {
            ModelName::Malicious => NoiseModel::Malicious,
            ModelName::AdversarialLabel => NoiseModel::AdversarialLabel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyName {
    RandomFlip,
    AntiTarget,
    BandAttack,
    InBandLabelFlip,
}

impl From<StrategyName> for AdversaryStrategy {
    fn from(s: StrategyName) -> Self {
        match s {
            StrategyName::RandomFlip => AdversaryStrategy::RandomFlip,
            StrategyName::AntiTarget => AdversaryStrategy::AntiTarget,
            StrategyName::BandAttack => AdversaryStrategy::BandAttack,
            StrategyName::InBandLabelFlip => AdversaryStrategy::InBandLabelFlip,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningSection {
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub epsilon_sweep: Option<Vec<f64>>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Angle of the simulated starting vector; absent means the honest
    /// two-candidate bootstrap.
    #[serde(default)]
    pub cheat_w0_angle: Option<f64>,
}

fn default_delta() -> f64 {
    0.1
}

fn default_trials() -> usize {
    10
}

/// Schedule knobs; every field optional, defaults taken from the desk-scale
/// calibration preset for the configured distribution.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub n_per_round: Option<usize>,
    pub m_per_round: Option<usize>,
    pub c2_tilde: Option<f64>,
    pub c4_tilde: Option<f64>,
    pub kappa: Option<f64>,
    pub c1_prime: Option<f64>,
    pub c2_prime: Option<f64>,
    pub c3_prime: Option<f64>,
    pub c4_prime: Option<f64>,
    pub c6: Option<f64>,
    pub growth_m: Option<f64>,
    pub lambda: Option<f64>,
    pub c_admissible: Option<f64>,
    pub xi_floor: Option<f64>,
    pub hinge_max_iters: Option<usize>,
    /// Baseline label budget for `compare`; defaults to the localized
    /// learner's total label budget (paired comparison).
    pub baseline_labels: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<String>,
}

impl ExperimentConfig {
    pub fn from_str_with_overrides(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(ConfigError::Parse)?;
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        let cfg: ExperimentConfig = toml::Table::try_into(table)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_string(),
            source,
        })?;
        Self::from_str_with_overrides(&text, overrides)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.distribution.dim < 2 {
            return Err(ConfigError::Invalid {
                field: "distribution.dim",
                reason: format!("{} < 2", self.distribution.dim),
            });
        }
        if self.learning.trials < 1 {
            return Err(ConfigError::Invalid {
                field: "learning.trials",
                reason: "trials must be >= 1".into(),
            });
        }
        if self.noise.eta.is_none() && self.noise.eta_sweep.is_none() {
            return Err(ConfigError::Invalid {
                field: "noise.eta",
                reason: "set eta or eta_sweep".into(),
            });
        }
        if matches!(&self.noise.eta_sweep, Some(v) if v.is_empty()) {
            return Err(ConfigError::Invalid {
                field: "noise.eta_sweep",
                reason: "sweep list is empty".into(),
            });
        }
        if self.learning.epsilon.is_none() && self.learning.epsilon_sweep.is_none() {
            return Err(ConfigError::Invalid {
                field: "learning.epsilon",
                reason: "set epsilon or epsilon_sweep".into(),
            });
        }
        if matches!(&self.learning.epsilon_sweep, Some(v) if v.is_empty()) {
            return Err(ConfigError::Invalid {
                field: "learning.epsilon_sweep",
                reason: "sweep list is empty".into(),
            });
        }
        // Strategy/model compatibility mirrors the oracle's rule so the
        // failure is a config error rather than a per-trial error.
        let model: NoiseModel = self.noise.model.into();
        let ok = match self.noise.strategy {
            StrategyName::RandomFlip => true,
            StrategyName::AntiTarget | StrategyName::BandAttack => model == NoiseModel::Malicious,
            StrategyName::InBandLabelFlip => model == NoiseModel::AdversarialLabel,
        };
        if !ok {
            return Err(ConfigError::Invalid {
                field: "noise.strategy",
                reason: format!(
                    "strategy {:?} is incompatible with model {:?}",
                    self.noise.strategy, self.noise.model
                ),
            });
        }
        Ok(())
    }

    pub fn eta_points(&self) -> Vec<f64> {
        match (&self.noise.eta_sweep, self.noise.eta) {
            (Some(v), _) => v.clone(),
            (None, Some(e)) => vec![e],
            (None, None) => vec![],
        }
    }

    pub fn epsilon_points(&self) -> Vec<f64> {
        match (&self.learning.epsilon_sweep, self.learning.epsilon) {
            (Some(v), _) => v.clone(),
            (None, Some(e)) => vec![e],
            (None, None) => vec![],
        }
    }

    /// Calibration constants: the desk-scale preset patched by the schedule
    /// section.
    pub fn constants(&self) -> CalibrationConstants {
        let kind: DistKind = self.distribution.kind.into();
        let mut c = CalibrationConstants::desk_scale(kind);
        let s = &self.schedule;
        if let Some(v) = s.c2_tilde {
            c.c2_tilde = v;
        }
        if let Some(v) = s.c4_tilde {
            c.c4_tilde = v;
        }
        if let Some(v) = s.kappa {
            c.kappa = Some(v);
        }
        if let Some(v) = s.c1_prime {
            c.c1_prime = v;
        }
        if let Some(v) = s.c2_prime {
            c.c2_prime = v;
        }
        if let Some(v) = s.c3_prime {
            c.c3_prime = v;
        }
        if let Some(v) = s.c4_prime {
            c.c4_prime = Some(v);
        }
        if let Some(v) = s.c6 {
            c.c6 = v;
        }
        if let Some(v) = s.growth_m {
            c.growth_m = v;
        }
        if let Some(v) = s.lambda {
            c.lambda = v;
        }
        if let Some(v) = s.c_admissible {
            c.c_admissible = v;
        }
        if let Some(v) = s.xi_floor {
            c.xi_floor = v;
        }
        c
    }
}

/// Applies one `section.key=value` override onto the parsed TOML tree. The
/// value is parsed as TOML (so numbers and booleans work) with a string
/// fallback.
fn apply_override(table: &mut toml::Table, arg: &str) -> Result<(), ConfigError> {
    let (path, value) = arg
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride {
            arg: arg.to_string(),
        })?;
    let segments: Vec<&str> = path.trim().split('.').collect();
    if segments.len() < 2 || segments.iter().any(|s| s.is_empty()) {
        return Err(ConfigError::BadOverride {
            arg: arg.to_string(),
        });
    }
    let parsed: toml::Value = match format!("x = {value}").parse::<toml::Table>() {
        Ok(t) => t["x"].clone(),
        Err(_) => toml::Value::String(value.trim().to_string()),
    };
    let mut node = table;
    for seg in &segments[..segments.len() - 1] {
        node = node
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| ConfigError::BadOverride {
                arg: arg.to_string(),
            })?;
    }
    node.insert(segments.last().unwrap().to_string(), parsed);
    Ok(())
}
