//! Experiment configuration: JSON schema, defaults, validation, overrides.
//!
//! Every field has a default matching the reference setup, so an empty JSON
//! object is a complete configuration. Unknown keys are rejected, and
//! validation reports constraint violations with JSON-pointer paths.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pfedwn::channel::ChannelParams;
use pfedwn::em::EmConfig;
use pfedwn::model::{Arch, BatchMode, TrainConfig};
use pfedwn::topology::{Area, PlacementMode, TargetRule, TopologyConfig};

use crate::RunnerError;

/// Experiment mode, mirrored by the CLI subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Pfedwn,
    Local,
    Fedavg,
    Fedprox,
    ChannelSweep,
    Validate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Write final models as little-endian f64 binaries next to the metrics.
    pub save_models: bool,
    pub topology: TopologyBlock,
    pub channel: ChannelBlock,
    pub data: DataBlock,
    pub train: TrainBlock,
    pub em: EmBlock,
    pub sweep: SweepBlock,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Pfedwn,
            master_seed: 42,
            output_dir: PathBuf::from("out"),
            save_models: false,
            topology: TopologyBlock::default(),
            channel: ChannelBlock::default(),
            data: DataBlock::default(),
            train: TrainBlock::default(),
            em: EmBlock::default(),
            sweep: SweepBlock::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyBlock {
    pub area: [f64; 2],
    /// Fixed neighbor count; mutually exclusive with `density`.
    pub n_neighbors: Option<usize>,
    /// Point-process density per square meter.
    pub density: Option<f64>,
    /// `center`, `nearest-center`, or an explicit `[x, y]` position.
    pub target_rule: TargetRuleBlock,
    pub min_separation: f64,
}

impl Default for TopologyBlock {
    fn default() -> Self {
        TopologyBlock {
            area: [50.0, 50.0],
            n_neighbors: Some(10),
            density: None,
            target_rule: TargetRuleBlock::Center,
            min_separation: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetRuleBlock {
    Center,
    NearestCenter,
    #[serde(untagged)]
    At([f64; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelBlock {
    pub n_subchannels: usize,
    pub rayleigh_factor: f64,
    pub pathloss_exponent: f64,
    pub ref_distance: f64,
    pub tx_power: f64,
    pub frequency: f64,
    pub boltzmann: f64,
    pub noise_temp: f64,
    pub bandwidth: f64,
    pub fading_threshold: f64,
    pub gamma_th: f64,
    pub epsilon: f64,
    pub conditional_error: bool,
}

impl Default for ChannelBlock {
    fn default() -> Self {
        let p = ChannelParams::default();
        ChannelBlock {
            n_subchannels: p.n_subchannels,
            rayleigh_factor: p.rayleigh_factor,
            pathloss_exponent: p.pathloss_exponent,
            ref_distance: p.ref_distance,
            tx_power: p.tx_power,
            frequency: p.frequency,
            boltzmann: p.boltzmann,
            noise_temp: p.noise_temp,
            bandwidth: p.bandwidth,
            fading_threshold: p.fading_threshold,
            gamma_th: p.sinr_threshold,
            epsilon: p.error_threshold,
            conditional_error: p.conditional_error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataBlock {
    pub source: DataSource,
    pub n_classes: usize,
    pub dim: usize,
    pub per_class_count: usize,
    pub cluster_spread: f64,
    pub dirichlet_alpha: f64,
    pub train_fraction: f64,
    pub standardize: bool,
}

impl Default for DataBlock {
    fn default() -> Self {
        DataBlock {
            source: DataSource::Synthetic,
            n_classes: 6,
            dim: 8,
            per_class_count: 120,
            cluster_spread: 2.0,
            dirichlet_alpha: 0.1,
            train_fraction: 0.75,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic,
    #[serde(rename_all = "snake_case")]
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainBlock {
    pub eta: f64,
    /// Local epochs per round for the target client.
    pub epochs: usize,
    /// Communication rounds.
    pub rounds: usize,
    pub alpha: f64,
    pub batch: BatchBlock,
    pub l2: f64,
    pub prox_mu: f64,
    /// Sample per-round transmission drops with each link's error
    /// probability.
    pub drops: bool,
    pub init_scale: f64,
    /// Hidden width when the architecture is the perceptron.
    pub arch: ArchBlock,
}

impl Default for TrainBlock {
    fn default() -> Self {
        TrainBlock {
            eta: 0.1,
            epochs: 1,
            rounds: 100,
            alpha: 0.5,
            batch: BatchBlock::Full,
            l2: 0.0,
            prox_mu: 0.01,
            drops: false,
            init_scale: 0.01,
            arch: ArchBlock::Softmax,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchBlock {
    Softmax,
    #[serde(rename_all = "snake_case")]
    Mlp {
        #[serde(default = "default_hidden_width")]
        hidden: usize,
    },
}

fn default_hidden_width() -> usize {
    32
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchBlock {
    Full,
    #[serde(rename_all = "snake_case")]
    Minibatch {
        size: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmBlock {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub inner_steps: usize,
    pub inner_learning_rate: f64,
    pub update_models: bool,
    /// Local epochs each selected neighbor trains before weight estimation.
    pub warmup_epochs: usize,
    pub refresh_each_round: bool,
}

impl Default for EmBlock {
    fn default() -> Self {
        let e = EmConfig::default();
        EmBlock {
            max_iterations: e.max_iterations,
            tolerance: e.tolerance,
            inner_steps: e.inner_steps,
            inner_learning_rate: e.inner_learning_rate,
            update_models: e.update_models,
            warmup_epochs: 30,
            refresh_each_round: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepBlock {
    pub gamma_th: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub density: Vec<f64>,
    pub n_subchannels: Vec<usize>,
    pub replications: usize,
}

impl Default for SweepBlock {
    fn default() -> Self {
        SweepBlock {
            gamma_th: vec![5.0, 10.0, 15.0],
            epsilon: vec![0.05],
            density: vec![3e-3],
            n_subchannels: vec![14],
            replications: 20,
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a configuration file, applying dot-path
    /// overrides before deserialization.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self, RunnerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunnerError::Io(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text, overrides)
    }

    pub fn from_json(text: &str, overrides: &[(String, String)]) -> Result<Self, RunnerError> {
        let mut value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| RunnerError::Config(format!("invalid JSON: {e}")))?;
        for (path, raw) in overrides {
            apply_override(&mut value, path, raw)?;
        }
        let config: ExperimentConfig = serde_json::from_value(value)
            .map_err(|e| RunnerError::Config(format!("invalid configuration: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Constraint validation with JSON-pointer paths in every message.
    pub fn validate(&self) -> Result<(), RunnerError> {
        let mut errors = Vec::new();
        if self.topology.n_neighbors.is_some() && self.topology.density.is_some() {
            errors.push("/topology: exactly one of n_neighbors and density may be set".to_string());
        }
        if self.topology.area[0] <= 0.0 || self.topology.area[1] <= 0.0 {
            errors.push("/topology/area: dimensions must be positive".to_string());
        }
        if let Some(d) = self.topology.density {
            if d < 0.0 {
                errors.push("/topology/density: must be non-negative".to_string());
            }
        }
        if self.topology.min_separation < 0.0 {
            errors.push("/topology/min_separation: must be non-negative".to_string());
        }
        let c = &self.channel;
        for (name, v) in [
            ("rayleigh_factor", c.rayleigh_factor),
            ("ref_distance", c.ref_distance),
            ("tx_power", c.tx_power),
            ("frequency", c.frequency),
            ("boltzmann", c.boltzmann),
            ("noise_temp", c.noise_temp),
            ("bandwidth", c.bandwidth),
            ("fading_threshold", c.fading_threshold),
            ("gamma_th", c.gamma_th),
        ] {
            if !(v > 0.0) {
                errors.push(format!("/channel/{name}: must be positive"));
            }
        }
        if c.n_subchannels == 0 {
            errors.push("/channel/n_subchannels: must be at least 1".to_string());
        }
        if c.pathloss_exponent < 2.0 {
            errors.push("/channel/pathloss_exponent: must be at least 2".to_string());
        }
        if !(c.epsilon > 0.0 && c.epsilon < 1.0) {
            errors.push("/channel/epsilon: must lie in (0, 1)".to_string());
        }
        if self.data.n_classes == 0 {
            errors.push("/data/n_classes: must be at least 1".to_string());
        }
        if self.data.dim == 0 {
            errors.push("/data/dim: must be at least 1".to_string());
        }
        if !(self.data.dirichlet_alpha > 0.0) {
            errors.push("/data/dirichlet_alpha: must be positive".to_string());
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            errors.push("/data/train_fraction: must lie in (0, 1)".to_string());
        }
        if self.data.cluster_spread < 0.0 {
            errors.push("/data/cluster_spread: must be non-negative".to_string());
        }
        let t = &self.train;
        if t.eta < 0.0 {
            errors.push("/train/eta: must be non-negative".to_string());
        }
        if t.epochs == 0 {
            errors.push("/train/epochs: must be at least 1".to_string());
        }
        if t.rounds == 0 {
            errors.push("/train/rounds: must be at least 1".to_string());
        }
        if !(0.0..=1.0).contains(&t.alpha) {
            errors.push("/train/alpha: must lie in [0, 1]".to_string());
        }
        if t.l2 < 0.0 {
            errors.push("/train/l2: must be non-negative".to_string());
        }
        if t.prox_mu < 0.0 {
            errors.push("/train/prox_mu: must be non-negative".to_string());
        }
        if let BatchBlock::Minibatch { size } = t.batch {
            if size == 0 {
                errors.push("/train/batch/size: must be at least 1".to_string());
            }
        }
        if let ArchBlock::Mlp { hidden } = t.arch {
            if hidden == 0 {
                errors.push("/train/arch/hidden: must be at least 1".to_string());
            }
        }
        if self.em.max_iterations == 0 {
            errors.push("/em/max_iterations: must be at least 1".to_string());
        }
        if self.em.tolerance < 0.0 {
            errors.push("/em/tolerance: must be non-negative".to_string());
        }
        if self.sweep.replications == 0 {
            errors.push("/sweep/replications: must be at least 1".to_string());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(RunnerError::Config(errors.join("; ")))
        }
    }

    /// Hex prefix of the SHA-256 of the canonical serialized config; stamped
    /// on every emitted file. The output directory does not identify the
    /// experiment and is excluded.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let text = serde_json::to_string(&canonical).expect("config serialization");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_topology_config(&self) -> TopologyConfig {
        let mode = match (self.topology.n_neighbors, self.topology.density) {
            (_, Some(d)) => PlacementMode::Density(d),
            (Some(n), None) => PlacementMode::FixedCount(n),
            (None, None) => PlacementMode::FixedCount(10),
        };
        TopologyConfig {
            area: Area::new(self.topology.area[0], self.topology.area[1]),
            mode,
            target_rule: match self.topology.target_rule {
                TargetRuleBlock::Center => TargetRule::Center,
                TargetRuleBlock::NearestCenter => TargetRule::NearestCenter,
                TargetRuleBlock::At(p) => TargetRule::At(p),
            },
            min_separation: self.topology.min_separation,
        }
    }

    pub fn to_channel_params(&self) -> ChannelParams {
        let c = &self.channel;
        ChannelParams {
            n_subchannels: c.n_subchannels,
            rayleigh_factor: c.rayleigh_factor,
            pathloss_exponent: c.pathloss_exponent,
            ref_distance: c.ref_distance,
            tx_power: c.tx_power,
            frequency: c.frequency,
            boltzmann: c.boltzmann,
            noise_temp: c.noise_temp,
            bandwidth: c.bandwidth,
            fading_threshold: c.fading_threshold,
            sinr_threshold: c.gamma_th,
            error_threshold: c.epsilon,
            conditional_error: c.conditional_error,
        }
    }

    /// Architecture for the configured learner over a dataset of the given
    /// shape. Loaded datasets may not match the synthetic-data block, so the
    /// shape always comes from the actual data.
    pub fn arch_for(&self, dim: usize, n_classes: usize) -> Arch {
        match self.train.arch {
            ArchBlock::Softmax => Arch::Softmax { dim, n_classes },
            ArchBlock::Mlp { hidden } => Arch::Mlp { dim, hidden, n_classes },
        }
    }

    pub fn to_arch(&self) -> Arch {
        self.arch_for(self.data.dim, self.data.n_classes)
    }

    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.eta,
            local_epochs: self.train.epochs,
            batch: match self.train.batch {
                BatchBlock::Full => BatchMode::Full,
                BatchBlock::Minibatch { size } => {
                    BatchMode::Minibatch { size, seed: self.master_seed }
                }
            },
            l2: self.train.l2,
        }
    }

    pub fn to_em_config(&self) -> EmConfig {
        EmConfig {
            max_iterations: self.em.max_iterations,
            tolerance: self.em.tolerance,
            inner_steps: self.em.inner_steps,
            inner_learning_rate: self.em.inner_learning_rate,
            inner_l2: 0.0,
            update_models: self.em.update_models,
        }
    }
}

/// Sets `value` at the dot path, parsing the raw string as JSON when
/// possible and falling back to a plain string.
fn apply_override(
    value: &mut serde_json::Value,
    path: &str,
    raw: &str,
) -> Result<(), RunnerError> {
    if path.is_empty() {
        return Err(RunnerError::Config("override path is empty".into()));
    }
    let parsed: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = value;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        if !cursor.is_object() {
            return Err(RunnerError::Config(format!(
                "override path {path}: segment {segment} is not an object"
            )));
        }
        let map = cursor.as_object_mut().expect("checked");
        if i == segments.len() - 1 {
            map.insert((*segment).to_string(), parsed);
            return Ok(());
        }
        cursor = map
            .entry((*segment).to_string())
            .or_insert_with(|| serde_json::Value::Object(serde_json::Map::new()));
    }
    unreachable!("loop returns on the final segment")
}
