//! Run configuration files and dotted-path overrides.

use std::path::{Path, PathBuf};

use hybridgan::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// Environment variable naming the directory that holds run directories
/// when `output_dir` is not configured.
pub const OUTPUT_ROOT_VAR: &str = "HYBRIDGAN_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Seeds initialization, data order and the image pools. Takes precedence
    /// over `train.seed`.
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: None,
            output_dir: None,
            seed: 0,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug)]
pub enum ConfigError {
    Read(PathBuf, std::io::Error),
    Parse(String),
    Override(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Read(p, e) => write!(f, "{}: {e}", p.display()),
            ConfigError::Parse(m) => write!(f, "invalid config: {m}"),
            ConfigError::Override(m) => write!(f, "invalid override: {m}"),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Parses the right-hand side of an override as a TOML value, falling back to
/// a bare string so `manifest=data/m.txt` works without quotes.
fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Applies `a.b.c=value` to `table`, creating intermediate tables.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(format!("{spec:?} is not KEY=VALUE")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError::Override(format!("{path:?} has an empty key")));
    }
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut cursor = table;
    for key in parents {
        let entry = cursor
            .entry(key.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Override(format!("{key:?} in {path:?} is not a table")))?;
    }
    cursor.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Reads `path` (if any), applies overrides in order and fills defaults.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Read(p.to_path_buf(), e))?;
                text.parse::<Table>().map_err(|e| ConfigError::Parse(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut config: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.train.seed = config.seed;
        // Relative paths in a config file are relative to the file.
        if let Some(base) = path.and_then(Path::parent) {
            for p in [&mut config.manifest, &mut config.output_dir].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(config)
    }

    /// The run directory: `output_dir`, else `$HYBRIDGAN_OUTPUT_ROOT/seed-<seed>`,
    /// else `runs/seed-<seed>`.
    pub fn run_dir(&self) -> PathBuf {
        if let Some(d) = &self.output_dir {
            return d.clone();
        }
        let root = std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
        root.join(format!("seed-{}", self.seed))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run configs always serialize")
    }
}
