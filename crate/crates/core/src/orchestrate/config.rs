use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::QLearningConfig;
use crate::distill::{RegimeKind, StudentConfig};
use crate::env::{Dynamics, ObjectProbs};
use crate::priors::{DegradationSpec, StateValue};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("bad override '{0}' (expected key=value)")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Expert training budget plus Q-learning hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertConfig {
    pub budget: u64,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub discount: f64,
    pub max_episode_steps: usize,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        let q = QLearningConfig::default();
        ExpertConfig {
            budget: 30_000,
            learning_rate: q.learning_rate,
            epsilon: q.epsilon,
            discount: q.discount,
            max_episode_steps: q.max_episode_steps,
        }
    }
}

impl ExpertConfig {
    pub fn q_learning(&self) -> QLearningConfig {
        QLearningConfig {
            learning_rate: self.learning_rate,
            epsilon: self.epsilon,
            discount: self.discount,
            max_episode_steps: self.max_episode_steps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    /// Boltzmann temperature turning Q-values into action probabilities.
    pub temperature: f64,
    /// Reduction of a Q-row to the state value used for degraded-state selection.
    pub state_value: StateValue,
    /// Temperature of the softmax over state values.
    pub selection_temperature: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            temperature: 1.0,
            state_value: StateValue::Max,
            selection_temperature: 1.0,
        }
    }
}

/// A named prior setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub name: String,
    #[serde(flatten)]
    pub degradation: DegradationSpec,
}

impl Setting {
    pub fn new(name: &str, degradation: DegradationSpec) -> Self {
        Setting {
            name: name.to_string(),
            degradation,
        }
    }

    /// Expert, random degradation at 15/30/50 % and structural degradation of
    /// 3/5/10 states.
    pub fn standard() -> Vec<Setting> {
        let rd = |p| DegradationSpec::Random { noise_p: p, seed: None };
        let sd = |n| DegradationSpec::Structural { n_states: n, seed: None };
        vec![
            Setting::new("EP", DegradationSpec::None),
            Setting::new("RD15", rd(0.15)),
            Setting::new("RD30", rd(0.30)),
            Setting::new("RD50", rd(0.50)),
            Setting::new("SD3", sd(3)),
            Setting::new("SD5", sd(5)),
            Setting::new("SD10", sd(10)),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub n_resamples: usize,
    pub confidence: f64,
    pub profile_min: f64,
    pub profile_max: f64,
    pub profile_points: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            n_resamples: 2000,
            confidence: 0.95,
            profile_min: -1.0,
            profile_max: 1.0,
            profile_points: 201,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub n_worlds: usize,
    /// Worker threads; 0 uses every available core.
    pub jobs: usize,
    pub output_dir: PathBuf,
    /// Cache trained experts under `<output_dir>/experts` and reuse them.
    pub save_experts: bool,
    pub objects: ObjectProbs,
    pub dynamics: Dynamics,
    pub expert: ExpertConfig,
    pub student: StudentConfig,
    pub prior: PriorConfig,
    pub settings: Vec<Setting>,
    pub regimes: Vec<RegimeKind>,
    pub report: ReportConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 0,
            n_worlds: 1000,
            jobs: 0,
            output_dir: PathBuf::from("results"),
            save_experts: true,
            objects: ObjectProbs::default(),
            dynamics: Dynamics::default(),
            expert: ExpertConfig::default(),
            student: StudentConfig::default(),
            prior: PriorConfig::default(),
            settings: Setting::standard(),
            regimes: RegimeKind::ALL.to_vec(),
            report: ReportConfig::default(),
        }
    }
}

/// Sets `dotted.key` in a TOML table, parsing `value` as a TOML literal and
/// falling back to a bare string.
fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::Override(assignment.to_string()));
    }
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cursor = table;
    for part in parts {
        cursor = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| ConfigError::Override(format!("'{part}' in '{key}' is not a table")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Parses TOML text, applies `key=value` overrides, and validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.to_path_buf(),
                source,
            })?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.objects.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let d = self.dynamics;
        if !(0.0..=1.0).contains(&d.termination_prob) || !(0.0..=1.0).contains(&d.transition_noise) {
            return invalid("dynamics probabilities must lie in [0, 1]".into());
        }
        let s = &self.student;
        if s.updates == 0 || s.eval_every == 0 || s.updates % s.eval_every != 0 {
            return invalid("student.updates must be a positive multiple of student.eval_every".into());
        }
        if s.updates / s.eval_every < 2 {
            return invalid("need at least two evaluation points per run".into());
        }
        if s.temperature <= 0.0 || self.prior.temperature <= 0.0 || self.prior.selection_temperature <= 0.0 {
            return invalid("temperatures must be positive".into());
        }
        if !(s.discount > 0.0 && s.discount <= 1.0) || !(self.expert.discount > 0.0 && self.expert.discount <= 1.0) {
            return invalid("discounts must lie in (0, 1]".into());
        }
        if s.max_episode_steps == 0 || self.expert.max_episode_steps == 0 {
            return invalid("episode step caps must be positive".into());
        }
        if self.regimes.is_empty() {
            return invalid("no regimes selected".into());
        }
        let mut names: Vec<&str> = self.settings.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return invalid("setting names must be unique".into());
        }
        for setting in &self.settings {
            if setting.name.is_empty() || setting.name.contains([',', '"', '\n']) || setting.name == super::BASELINE_SETTING {
                return invalid(format!("bad setting name '{}'", setting.name));
            }
            setting
                .degradation
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("setting {}: {e}", setting.name)))?;
        }
        if !(0.0 < self.report.confidence && self.report.confidence < 1.0) || self.report.n_resamples < 1000 {
            return invalid("report needs confidence in (0, 1) and at least 1000 resamples".into());
        }
        if self.report.profile_points == 0 || self.report.profile_min > self.report.profile_max {
            return invalid("bad performance-profile grid".into());
        }
        Ok(())
    }

    /// The config with execution-only fields (jobs, paths, caching) reset.
    pub fn canonical(&self) -> ExperimentConfig {
        ExperimentConfig {
            jobs: 0,
            output_dir: PathBuf::new(),
            save_experts: false,
            ..self.clone()
        }
    }

    /// Hash of everything that influences results.
    pub fn results_hash(&self) -> String {
        let json = serde_json::to_string(&self.canonical()).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn setting(&self, name: &str) -> Option<&Setting> {
        self.settings.iter().find(|s| s.name == name)
    }
}
