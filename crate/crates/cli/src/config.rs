//! Experiment configuration: one TOML file plus `key.path=value` overrides.

use std::path::{Path, PathBuf};

use netgain_core::identification::ScalingConfig;
use netgain_core::network::{evaluation_order, TrainingConfig};
use netgain_core::plant::DatasetConfig;
use netgain_core::topology::{BlockDims, InterconnectionTopology};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "NETGAIN_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Pre-generated dataset; defaults to `<output_dir>/data`.
    #[serde(default)]
    pub dataset_path: Option<PathBuf>,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub scaling: ScalingConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub checkpoint: CheckpointConfig,
    #[serde(default)]
    pub certify: CertifyConfig,
    #[serde(default)]
    pub compare: CompareConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            output_dir: default_output_dir(),
            dataset_path: None,
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            scaling: ScalingConfig::default(),
            training: TrainingConfig::default(),
            checkpoint: CheckpointConfig::default(),
            certify: CertifyConfig::default(),
            compare: CompareConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Networked,
    Rnn,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Networked => "networked",
            Family::Rnn => "rnn",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub blocks: Vec<BlockDims>,
    /// Rows of `M`, one per entry of the stacked input `u`.
    pub coupling: Vec<Vec<f64>>,
    /// Rows of `u` that receive the pump signal.
    pub input_rows: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub family: Family,
    /// Interconnection; the three-tank cascade when absent.
    pub topology: Option<TopologyConfig>,
    /// State size of every three-tank block; ignored with an explicit topology.
    pub state_dim: usize,
    /// Per-block direct feedthrough; none when absent.
    pub feedthrough: Option<Vec<bool>>,
    pub radius: f64,
    /// Fixed network gain, or the initial one when `training.train_gamma_M` is set.
    pub gamma_m: f64,
    pub rnn_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            family: Family::Networked,
            topology: None,
            state_dim: 2,
            feedthrough: None,
            radius: 0.95,
            gamma_m: 4.0,
            rnn_hidden: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckpointConfig {
    /// Epochs between checkpoints.
    pub every: usize,
}

impl Default for CheckpointConfig {
    fn default() -> Self {
        CheckpointConfig { every: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifyConfig {
    pub probe_pairs: usize,
    pub probe_length: usize,
    pub seed: u64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig {
            probe_pairs: 50,
            probe_length: 128,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    /// Training seeds; each one is a repetition of the whole grid.
    pub seeds: Vec<u64>,
    pub networked: NetworkedGrid,
    pub rnn: RnnGrid,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            seeds: vec![0, 1, 2],
            networked: NetworkedGrid::default(),
            rnn: RnnGrid::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkedGrid {
    pub state_dims: Vec<usize>,
    /// Overrides `training.learning_rate` for this family.
    pub learning_rate: Option<f64>,
}

impl Default for NetworkedGrid {
    fn default() -> Self {
        NetworkedGrid {
            state_dims: vec![1, 2, 3],
            learning_rate: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RnnGrid {
    pub hidden: Vec<usize>,
    pub learning_rate: Option<f64>,
}

impl Default for RnnGrid {
    fn default() -> Self {
        RnnGrid {
            hidden: vec![2, 3, 5],
            learning_rate: None,
        }
    }
}

fn invalid(path: &str, message: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {message}"))
}

fn positive(path: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(path, format!("must be positive and finite, got {v}")))
    }
}

impl ExperimentConfig {
    /// Reads `path` (or the defaults when `None`), applies overrides and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        let origin = path.map_or_else(|| "<defaults>".to_string(), |p| p.display().to_string());
        Self::from_toml(&text, overrides, &origin)
    }

    pub fn from_toml(text: &str, overrides: &[String], origin: &str) -> Result<Self, CliError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(format!("{origin}: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner().to_string();
            let message = inner.split("\nin `").next().unwrap_or_default().trim_end();
            CliError::Config(format!("{origin}: {path}: {message}"))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let core = |path: &str, r: netgain_core::Result<()>| {
            r.map_err(|e| match e {
                netgain_core::Error::Config(m) | netgain_core::Error::Domain(m) => invalid(path, m),
                other => invalid(path, other),
            })
        };
        core("dataset", self.dataset.validate())?;
        core("training", self.training.validate())?;
        core("scaling", self.scaling.validate())?;
        let m = &self.model;
        if !(m.radius > 0.0 && m.radius < 1.0) {
            return Err(invalid("model.radius", format!("must lie in (0, 1), got {}", m.radius)));
        }
        positive("model.gamma_m", m.gamma_m)?;
        if m.state_dim == 0 {
            return Err(invalid("model.state_dim", "must be at least 1"));
        }
        if m.rnn_hidden == 0 {
            return Err(invalid("model.rnn_hidden", "must be at least 1"));
        }
        let topology = self.topology()?;
        if let Some(ft) = &m.feedthrough {
            if ft.len() != topology.len() {
                return Err(invalid("model.feedthrough", format!("expected {} entries, got {}", topology.len(), ft.len())));
            }
            evaluation_order(&topology, ft).map_err(|e| CliError::Certificate(format!("model.feedthrough: {e}")))?;
        }
        if self.checkpoint.every == 0 {
            return Err(invalid("checkpoint.every", "must be at least 1"));
        }
        if self.certify.probe_pairs == 0 || self.certify.probe_length == 0 {
            return Err(invalid("certify", "probe_pairs and probe_length must be at least 1"));
        }
        let c = &self.compare;
        if c.seeds.is_empty() {
            return Err(invalid("compare.seeds", "must not be empty"));
        }
        if c.networked.state_dims.iter().any(|&n| n == 0) {
            return Err(invalid("compare.networked.state_dims", "entries must be at least 1"));
        }
        if c.rnn.hidden.iter().any(|&n| n == 0) {
            return Err(invalid("compare.rnn.hidden", "entries must be at least 1"));
        }
        if let Some(lr) = c.networked.learning_rate {
            positive("compare.networked.learning_rate", lr)?;
        }
        if let Some(lr) = c.rnn.learning_rate {
            positive("compare.rnn.learning_rate", lr)?;
        }
        Ok(())
    }

    /// Interconnection of the networked model with the configured state sizes.
    pub fn topology(&self) -> Result<InterconnectionTopology, CliError> {
        match &self.model.topology {
            None => Ok(InterconnectionTopology::three_tank(self.model.state_dim)),
            Some(t) => {
                let topo = InterconnectionTopology::from_rows(t.blocks.clone(), &t.coupling)
                    .map_err(|e| invalid("model.topology", e))?;
                if t.input_rows.is_empty() || t.input_rows.iter().any(|&r| r >= topo.input_width()) {
                    return Err(invalid(
                        "model.topology.input_rows",
                        format!("must be nonempty and below {}", topo.input_width()),
                    ));
                }
                if topo.output_width() != 3 {
                    return Err(invalid(
                        "model.topology.blocks",
                        format!("outputs must add up to the 3 tank levels, got {}", topo.output_width()),
                    ));
                }
                Ok(topo)
            }
        }
    }

    /// Rows of the networked model input that carry the pump signal.
    pub fn input_rows(&self) -> Vec<usize> {
        match &self.model.topology {
            None => vec![1],
            Some(t) => t.input_rows.clone(),
        }
    }

    /// `output_dir`, placed under the output root when one is set and the path is relative.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.dataset_path.clone().unwrap_or_else(|| self.output_dir().join("data"))
    }
}

/// Sets the leaf `a.b.c` of `table` to `value`, parsed as a TOML value when
/// possible and as a bare string otherwise.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` must have the form key.path=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override `{spec}` has an empty key segment")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (leaf, parents) = parts.split_last().expect("nonempty key");
    let mut node = table;
    for (depth, p) in parents.iter().enumerate() {
        let entry = node.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| {
            CliError::Config(format!("override `{spec}`: `{}` is not a table", parts[..=depth].join(".")))
        })?;
    }
    node.insert(leaf.to_string(), value);
    Ok(())
}
