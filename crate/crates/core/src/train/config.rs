use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::{Heuristic, DEFAULT_EPS_I};
use crate::model::{ModelKind, ModelSpec};

/// Step-decayed learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay_epochs: Vec<usize>,
    pub factor: f64,
}

impl LrSchedule {
    pub fn rate(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.initial * self.factor.powi(decays as i32)
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial: 1e-3,
            decay_epochs: vec![24, 28],
            factor: 0.2,
        }
    }
}

/// Where stage 2 gets its per-scene DAGs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DagSource {
    /// Predicted once per scene by the frozen stage-1 model.
    #[default]
    Learned,
    /// Labeled from the ground-truth futures.
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "K_prop")]
    pub k_prop: usize,
    pub eps_i: f64,
    pub heuristic: Heuristic,
    pub gamma: f64,
    pub alpha: [f64; 3],
    pub lr: LrSchedule,
    pub batch_size: usize,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub teacher_forcing: bool,
    pub proposal_loss: bool,
    pub hidden: usize,
    pub gru_hidden: usize,
    pub type_embed: usize,
    pub dag_source: DagSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            k: 6,
            k_prop: 15,
            eps_i: DEFAULT_EPS_I,
            heuristic: Heuristic::Sparse,
            gamma: 5.0,
            alpha: [1.0, 2.0, 4.0],
            lr: LrSchedule::default(),
            batch_size: 16,
            epochs_stage1: 30,
            epochs_stage2: 30,
            teacher_forcing: true,
            proposal_loss: true,
            hidden: 64,
            gru_hidden: 64,
            type_embed: 16,
            dag_source: DagSource::Learned,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.k == 0 || self.k_prop == 0 {
            return fail("K and K_prop must be at least 1".into());
        }
        if !(self.lr.initial > 0.0 && self.lr.factor > 0.0) {
            return fail("learning rate and decay factor must be positive".into());
        }
        if self.lr.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return fail("decay epochs must be strictly ascending".into());
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1".into());
        }
        if !(self.eps_i >= 0.0 && self.eps_i.is_finite()) {
            return fail(format!("eps_i must be a non-negative number of seconds, got {}", self.eps_i));
        }
        if !(self.gamma >= 0.0) || self.alpha.iter().any(|&a| !(a > 0.0)) {
            return fail("focal gamma must be non-negative and alpha weights positive".into());
        }
        if self.hidden == 0 || self.gru_hidden == 0 || self.type_embed == 0 {
            return fail("layer widths must be positive".into());
        }
        Ok(())
    }

    pub fn model_spec(&self, kind: ModelKind, t_fut: usize) -> ModelSpec {
        ModelSpec {
            kind,
            hidden: self.hidden,
            gru_hidden: self.gru_hidden,
            type_embed: self.type_embed,
            t_fut,
            k: self.k,
            k_prop: self.k_prop,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
