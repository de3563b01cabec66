//! Two-stage training: dense full fine-tune, then expert fine-tuning on a
//! granularity-bucketed resample, with the LoRA / classic-MoE / full
//! baselines driven through the same loop for the ablation.

mod adapt;
mod checkpoint;
mod trainer;

pub use adapt::{
    adapt_checkpoint, expand_to_gmoe, expand_to_gmoe_params, lora_params_from_dense,
    moe_params_from_dense,
};
pub use checkpoint::{config_hash, Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use trainer::{
    resample_stage2, resume_training, train_stage1, train_stage2, AuditRecord, BucketLoss,
    StepRecord, TrainOutcome,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Variant;

/// Which fine-tuning method a stage-2 run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TuningMethod {
    Gmoe,
    Lora,
    Moe,
    Full,
}

impl TuningMethod {
    pub const ALL: [TuningMethod; 4] = [
        TuningMethod::Lora,
        TuningMethod::Moe,
        TuningMethod::Full,
        TuningMethod::Gmoe,
    ];

    /// The architecture variant this method trains.
    pub fn architecture(&self) -> Variant {
        match self {
            TuningMethod::Gmoe => Variant::GMoe,
            TuningMethod::Lora => Variant::Lora,
            TuningMethod::Moe => Variant::Moe,
            TuningMethod::Full => Variant::Dense,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TuningMethod::Gmoe => "gmoe",
            TuningMethod::Lora => "lora",
            TuningMethod::Moe => "moe",
            TuningMethod::Full => "full",
        }
    }
}

impl std::fmt::Display for TuningMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TuningMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmoe" => Ok(TuningMethod::Gmoe),
            "lora" => Ok(TuningMethod::Lora),
            "moe" => Ok(TuningMethod::Moe),
            "full" => Ok(TuningMethod::Full),
            other => Err(Error::Config(format!("unknown tuning method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    #[default]
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: u8,
    /// Required: the two published reference values disagree, so there is
    /// no safe default (see the example configs).
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_warmup_ratio")]
    pub warmup_ratio: f64,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default = "default_variant")]
    pub variant: TuningMethod,
    /// Stop after this many optimizer steps without changing the schedule
    /// plan; resuming from the resulting checkpoint continues the same
    /// trajectory.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default = "default_grad_clip")]
    pub grad_clip_norm: f64,
    #[serde(default = "default_audit_every")]
    pub audit_every: usize,
    #[serde(default = "default_moe_aux_weight")]
    pub moe_aux_weight: f64,
}

fn default_warmup_ratio() -> f64 {
    0.03
}
fn default_epochs() -> usize {
    1
}
fn default_batch_size() -> usize {
    4
}
fn default_variant() -> TuningMethod {
    TuningMethod::Gmoe
}
fn default_grad_clip() -> f64 {
    1.0
}
fn default_audit_every() -> usize {
    50
}
fn default_moe_aux_weight() -> f64 {
    0.01
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.stage, 1 | 2) {
            return Err(Error::Config(format!("stage {} not in {{1,2}}", self.stage)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if self.audit_every == 0 {
            return Err(Error::Config("audit_every must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(Error::Config("warmup_ratio must lie in [0,1]".into()));
        }
        Ok(())
    }
}
