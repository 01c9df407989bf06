//! Experiment configuration: a TOML file with `[data]`, `[model]`, `[train]`,
//! `[eval]` and `[analyze]` sections plus top-level `seed`, `seeds` and
//! `output_dir`. Relative paths resolve against the file's directory.

use std::path::{Path, PathBuf};

use proxyrca::data::{AttributeKind, SynthConfig};
use proxyrca::eval::EvalConfig;
use proxyrca::model::ModelConfig;
use proxyrca::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// `user<TAB>item<TAB>timestamp` log.
    pub interactions: Option<PathBuf>,
    pub attributes: Option<PathBuf>,
    pub attribute_kind: AttributeKind,
    /// Generates the corpus instead of reading files.
    pub synthetic: Option<SynthConfig>,
    /// Seed of the synthetic generator.
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            interactions: None,
            attributes: None,
            attribute_kind: AttributeKind::Dense,
            synthetic: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyzeTask {
    Groups,
    Probe,
    Removal,
    Growth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub tasks: Vec<AnalyzeTask>,
    pub removal_ratios: Vec<f64>,
    pub partitions: usize,
    pub probe_hidden: usize,
    pub probe_epochs: usize,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig {
            tasks: vec![AnalyzeTask::Groups, AnalyzeTask::Probe, AnalyzeTask::Removal, AnalyzeTask::Growth],
            removal_ratios: vec![0.0, 0.5, 0.9],
            partitions: 4,
            probe_hidden: 64,
            probe_epochs: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Seeds for multi-run analyses; empty means `[seed]`.
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub analyze: AnalyzeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            seeds: Vec::new(),
            output_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            analyze: AnalyzeConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads `path`, applies `key=value` overrides in order, and resolves
    /// relative paths.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, overrides)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut value: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Input(format!("invalid config: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(value)
            .try_into()
            .map_err(|e| CliError::Input(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(p) = &mut self.data.interactions {
            fix(p);
        }
        if let Some(p) = &mut self.data.attributes {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.train.validate()?;
        match (&self.data.interactions, &self.data.synthetic) {
            (Some(_), Some(_)) => {
                return Err(CliError::Input(
                    "[data] needs either `interactions` or `[data.synthetic]`, not both".into(),
                ))
            }
            (None, None) => return Err(CliError::Input("[data] needs `interactions` or `[data.synthetic]`".into())),
            _ => {}
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(CliError::Input("eval.ks must be non-empty positive cutoffs".into()));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    /// Hash of the data section alone; ties prepared datasets to configs.
    pub fn data_hash(&self) -> String {
        digest(&serde_json::to_string(&self.data).expect("config serializes"))
    }

    /// Hash of the data and model sections: everything that fixes
    /// parameter names and shapes.
    pub fn config_hash(&self) -> String {
        let json = serde_json::json!({ "data": self.data, "model": self.model });
        digest(&json.to_string())
    }
}

fn digest(s: &str) -> String {
    Sha256::digest(s.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// `a.b.c=value`; the value is read as a TOML literal and falls back to a
/// bare string.
pub fn apply_override(root: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Input(format!("override `{spec}` is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Input(format!("override key `{key}` is malformed")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Input(format!("override `{key}`: `{part}` is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
