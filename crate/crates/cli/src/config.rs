//! Experiment configuration: a flat TOML table. Every key is optional and
//! falls back to the default below; unknown keys are rejected.
//!
//! ```toml
//! data_dir = "data"
//! checkpoint_dir = "checkpoints"
//! report_dir = "reports"
//! seed = 0
//!
//! node_count = 300
//! extent_x_km = 100.0
//! extent_y_km = 60.0
//! mesh_neighbors = 6
//! mesh_seed = 7
//! steps = 240
//! kappa = 0.1
//! velocity_gain = 1.0
//! melt_sensitivity = 0.002
//! noise = 0.001
//! accumulation = 1.0
//! physics_seed = 11
//!
//! horizons = [1, 15]
//! epochs = 500
//! lr0 = 0.001
//! weight_decay = 0.0001
//! weight_decay_mode = "decoupled"   # or "coupled"
//! beta1 = 0.9
//! beta2 = 0.999
//! adam_eps = 1e-8
//! lambda_v = 1.0
//! lambda_h = 1.0
//! batch_size = 8
//! hidden = 128
//! activation = "relu"               # relu | tanh | identity
//! velocity_input = "components"     # or "magnitude-only"
//! t_scale = 240.0
//!
//! t0 = 60
//! t1 = 240
//! scan_mode = "chained"             # or "frozen"
//!
//! ablation_sets = [[1], [1, 15], [1, 15, 30], [1, 6, 15, 30], [1, 3, 6, 15, 30]]
//! ablation_h2 = [2, 3, 4, 6, 8, 9, 12, 15, 18, 24, 36]
//! ```

use std::path::{Path, PathBuf};

use horizon_gcn::horizon::HorizonSet;
use horizon_gcn::model::VelocityInput;
use horizon_gcn::numeric::Activation;
use horizon_gcn::rollout::ScanMode;
use horizon_gcn::synthetic::{MeshSpec, SyntheticConfig};
use horizon_gcn::train::{AdamConfig, TrainConfig, WeightDecayMode};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
    pub seed: u64,

    pub node_count: usize,
    pub extent_x_km: f64,
    pub extent_y_km: f64,
    pub mesh_neighbors: usize,
    pub mesh_seed: u64,
    pub steps: usize,
    pub kappa: f64,
    pub velocity_gain: f64,
    pub melt_sensitivity: f64,
    pub noise: f64,
    pub accumulation: f64,
    pub physics_seed: u64,

    pub horizons: Vec<usize>,
    pub epochs: usize,
    pub lr0: f64,
    pub weight_decay: f64,
    pub weight_decay_mode: String,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub lambda_v: f64,
    pub lambda_h: f64,
    pub batch_size: usize,
    pub hidden: usize,
    pub activation: String,
    pub velocity_input: String,
    pub t_scale: f64,

    pub t0: usize,
    pub t1: usize,
    pub scan_mode: String,

    pub ablation_sets: Vec<Vec<usize>>,
    pub ablation_h2: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let syn = SyntheticConfig::default();
        Self {
            data_dir: "data".into(),
            checkpoint_dir: "checkpoints".into(),
            report_dir: "reports".into(),
            seed: 0,
            node_count: syn.mesh.node_count,
            extent_x_km: syn.mesh.extent_km[0],
            extent_y_km: syn.mesh.extent_km[1],
            mesh_neighbors: syn.mesh.neighbors,
            mesh_seed: syn.mesh.seed,
            steps: syn.steps,
            kappa: syn.kappa,
            velocity_gain: syn.velocity_gain,
            melt_sensitivity: syn.melt_sensitivity,
            noise: syn.noise,
            accumulation: syn.accumulation,
            physics_seed: syn.seed,
            horizons: vec![1, 15],
            epochs: 500,
            lr0: 1e-3,
            weight_decay: 1e-4,
            weight_decay_mode: "decoupled".into(),
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            lambda_v: 1.0,
            lambda_h: 1.0,
            batch_size: 8,
            hidden: 128,
            activation: "relu".into(),
            velocity_input: "components".into(),
            t_scale: 240.0,
            t0: 60,
            t1: 240,
            scan_mode: "chained".into(),
            ablation_sets: vec![vec![1], vec![1, 15], vec![1, 15, 30], vec![1, 6, 15, 30], vec![1, 3, 6, 15, 30]],
            ablation_h2: vec![2, 3, 4, 6, 8, 9, 12, 15, 18, 24, 36],
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Checks every derived value so that a bad file fails before any work.
    pub fn validate(&self) -> Result<(), CliError> {
        self.synthetic(0.0).validate().map_err(|e| usage(format!("config: {e}")))?;
        self.train_config()?.validate().map_err(|e| usage(format!("config: {e}")))?;
        self.scan()?;
        if self.t0 < 1 || self.t1 <= self.t0 || self.t1 > self.steps {
            return Err(usage(format!(
                "config: evaluation window t0={} t1={} invalid for {} months",
                self.t0, self.t1, self.steps
            )));
        }
        for set in &self.ablation_sets {
            if !set.contains(&1) {
                return Err(usage(format!("config: ablation set {set:?} lacks horizon 1")));
            }
            HorizonSet::new(set.iter().copied()).map_err(|e| usage(format!("config: {e}")))?;
        }
        if self.ablation_h2.contains(&0) {
            return Err(usage("config: ablation_h2 entries must be positive"));
        }
        Ok(())
    }

    pub fn synthetic(&self, melt_rate: f64) -> SyntheticConfig {
        SyntheticConfig {
            mesh: MeshSpec {
                node_count: self.node_count,
                extent_km: [self.extent_x_km, self.extent_y_km],
                neighbors: self.mesh_neighbors,
                seed: self.mesh_seed,
            },
            melt_rate,
            steps: self.steps,
            kappa: self.kappa,
            velocity_gain: self.velocity_gain,
            melt_sensitivity: self.melt_sensitivity,
            noise: self.noise,
            accumulation: self.accumulation,
            flat_initial: None,
            seed: self.physics_seed,
        }
    }

    pub fn horizon_set(&self) -> Result<HorizonSet, CliError> {
        HorizonSet::new(self.horizons.iter().copied()).map_err(|e| usage(format!("config: {e}")))
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let parse = |what: &str, e: horizon_gcn::Error| usage(format!("config: {what}: {e}"));
        let mut cfg = TrainConfig::new(self.horizon_set()?);
        cfg.epochs = self.epochs;
        cfg.lr0 = self.lr0;
        cfg.adam = AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
            decay_mode: self
                .weight_decay_mode
                .parse::<WeightDecayMode>()
                .map_err(|e| parse("weight_decay_mode", e))?,
        };
        cfg.lambda_v = self.lambda_v;
        cfg.lambda_h = self.lambda_h;
        cfg.batch_size = self.batch_size;
        cfg.seed = self.seed;
        cfg.hidden = self.hidden;
        cfg.activation = self.activation.parse::<Activation>().map_err(|e| parse("activation", e))?;
        cfg.velocity_input = self
            .velocity_input
            .parse::<VelocityInput>()
            .map_err(|e| parse("velocity_input", e))?;
        cfg.t_scale = self.t_scale;
        Ok(cfg)
    }

    pub fn scan(&self) -> Result<ScanMode, CliError> {
        self.scan_mode
            .parse()
            .map_err(|e| usage(format!("config: scan_mode: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn overrides_and_rejections() {
        let cfg = ExperimentConfig::from_toml("epochs = 3\nhorizons = [1, 6]\nhidden = 16\n").unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.train_config().unwrap().horizons.as_slice(), &[1, 6]);
        assert!(ExperimentConfig::from_toml("epoch = 3").is_err());
        assert!(ExperimentConfig::from_toml("horizons = [15]").is_err());
        assert!(ExperimentConfig::from_toml("activation = \"gelu\"").is_err());
        assert!(ExperimentConfig::from_toml("t0 = 240").is_err());
        assert!(ExperimentConfig::from_toml("ablation_sets = [[2, 3]]").is_err());
        assert!(ExperimentConfig::from_toml("kappa = 1.5").is_err());
    }
}
