use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use samsa_core::attention::{AttentionConfig, AttentionKind};
use samsa_core::model::ModelConfig;
use samsa_core::tasks::{TaskSpec, TrainConfig};

pub const ENV_PREFIX: &str = "SAMSA_";

/// Keys that are valid but absent from the serialized defaults.
const OPTIONAL_KEYS: [(&str, &str, &str); 2] = [
    (
        "train",
        "stop_at",
        "stop once validation accuracy reaches this value",
    ),
    ("run", "data_dir", "dataset cache directory"),
];

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub seed: u64,
    /// 32 or 64.
    pub precision: u32,
    pub out_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: 32,
            out_dir: PathBuf::from("runs/latest"),
            data_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub n_depth: usize,
    #[serde(flatten)]
    pub layer: AttentionConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            n_depth: 2,
            layer: samsa_core::tasks::seq_select_layer(AttentionKind::Samsa),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run: RunSection,
    pub task: TaskSpec,
    pub model: ModelSection,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run: RunSection::default(),
            task: TaskSpec::default(),
            model: ModelSection::default(),
            train: samsa_core::tasks::seq_select_recipe(),
        }
    }
}

impl RunConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            n_depth: self.model.n_depth,
            layer: self.model.layer,
            input: self.task.input_spec(),
            head: self.task.head_spec(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !matches!(self.run.precision, 32 | 64) {
            return Err(ConfigError(format!(
                "run.precision must be 32 or 64, got {}",
                self.run.precision
            )));
        }
        let err = |e: samsa_core::Error| ConfigError(e.to_string());
        self.task.validate().map_err(err)?;
        self.train.validate().map_err(err)?;
        self.model_config().validate().map_err(err)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn defaults_table() -> Table {
    Table::try_from(RunConfig::default()).expect("defaults serialize")
}

/// Every `section.key` with its default rendering.
pub fn known_keys() -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for (section, body) in defaults_table() {
        if let Value::Table(t) = body {
            for (key, v) in t {
                out.insert(format!("{section}.{key}"), v.to_string());
            }
        }
    }
    for (section, key, what) in OPTIONAL_KEYS {
        out.entry(format!("{section}.{key}"))
            .or_insert_with(|| format!("unset ({what})"));
    }
    out
}

pub fn keys_help() -> String {
    let mut s = String::from(
        "Config keys (file section.key, env SAMSA_SECTION_KEY, flag --set section.key=value):\n",
    );
    for (k, v) in known_keys() {
        s.push_str(&format!("  {k:<22} {v}\n"));
    }
    s
}

/// Parses a scalar the way it would appear on the right of `key = ...`,
/// falling back to a bare string.
fn parse_scalar(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Layered configuration: defaults, then file, then environment, then flags.
#[derive(Debug, Default)]
pub struct Layers {
    table: Table,
}

impl Layers {
    pub fn new() -> Self {
        Self {
            table: defaults_table(),
        }
    }

    fn set(&mut self, dotted: &str, value: Value, origin: &str) -> Result<(), ConfigError> {
        let known = known_keys();
        if !known.contains_key(dotted) {
            return Err(ConfigError(format!("unknown key `{dotted}` ({origin})")));
        }
        let (section, key) = dotted.split_once('.').expect("known keys are dotted");
        let Some(Value::Table(t)) = self.table.get_mut(section) else {
            unreachable!("sections come from the defaults")
        };
        t.insert(key.to_string(), value);
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let file: Table =
            toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let origin = format!("in {}", path.display());
        for (section, body) in file {
            match body {
                Value::Table(t) => {
                    for (key, v) in t {
                        self.set(&format!("{section}.{key}"), v, &origin)?;
                    }
                }
                _ => return Err(ConfigError(format!("unknown key `{section}` ({origin})"))),
            }
        }
        Ok(())
    }

    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(
        &mut self,
        vars: I,
    ) -> Result<(), ConfigError> {
        let by_env: BTreeMap<String, String> = known_keys()
            .into_keys()
            .map(|k| {
                (
                    format!("{ENV_PREFIX}{}", k.replace('.', "_").to_uppercase()),
                    k,
                )
            })
            .collect();
        for (name, raw) in vars {
            if !name.starts_with(ENV_PREFIX) || name == "SAMSA_LOG" {
                continue;
            }
            match by_env.get(&name) {
                Some(key) => self.set(key, parse_scalar(&raw), &format!("environment {name}"))?,
                None => return Err(ConfigError(format!("unknown key `{name}` (environment)"))),
            }
        }
        Ok(())
    }

    pub fn apply_assignment(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, raw) = assignment.split_once('=').ok_or_else(|| {
            ConfigError(format!("expected section.key=value, got `{assignment}`"))
        })?;
        self.set(key.trim(), parse_scalar(raw.trim()), "flag --set")
    }

    pub fn apply_flag(&mut self, key: &str, raw: &str) -> Result<(), ConfigError> {
        self.set(key, parse_scalar(raw), "flag")
    }

    pub fn resolve(self) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig = self
            .table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = Layers::new().resolve().unwrap();
        assert_eq!(cfg, RunConfig::default());
        let again: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn precedence_flag_over_env_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[model]\nk = 8\n[train]\nlr = 0.5\nsteps = 3\n").unwrap();
        let mut l = Layers::new();
        l.apply_file(&path).unwrap();
        l.apply_env([
            ("SAMSA_MODEL_K".to_string(), "12".to_string()),
            ("SAMSA_TRAIN_STEPS".to_string(), "4".to_string()),
        ])
        .unwrap();
        l.apply_flag("model.k", "16").unwrap();
        let cfg = l.resolve().unwrap();
        assert_eq!(cfg.model.layer.k, 16);
        assert_eq!(cfg.train.steps, 4);
        assert_eq!(cfg.train.lr, 0.5);
    }

    #[test]
    fn unknown_keys_are_named() {
        let mut l = Layers::new();
        let e = l.apply_assignment("model.kk=3").unwrap_err();
        assert!(e.0.contains("model.kk"));
        let e = l
            .apply_env([("SAMSA_TRAIN_LR_MAX".to_string(), "1".to_string())])
            .unwrap_err();
        assert!(e.0.contains("SAMSA_TRAIN_LR_MAX"));
    }

    #[test]
    fn enums_and_optionals_parse() {
        let mut l = Layers::new();
        l.apply_assignment("model.mode=soft").unwrap();
        l.apply_assignment("train.stop_at=0.9").unwrap();
        l.apply_assignment("task.kind=\"graph-degree\"").unwrap();
        let cfg = l.resolve().unwrap();
        assert_eq!(cfg.train.stop_at, Some(0.9));
        assert_eq!(cfg.model.layer.mode, samsa_core::sampler::SampleMode::Soft);
    }

    #[test]
    fn bad_values_rejected() {
        let mut l = Layers::new();
        l.apply_flag("run.precision", "16").unwrap();
        assert!(l.resolve().is_err());
        let mut l = Layers::new();
        l.apply_flag("model.tau", "-1").unwrap();
        assert!(l.resolve().is_err());
    }
}
