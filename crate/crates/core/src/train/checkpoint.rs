//! Checkpoint container: a flat, versioned JSON document mapping parameter
//! names to shape + row-major values, plus optimizer state, vocabulary,
//! configs, and lineage. serde_json writes f64 with shortest round-trip
//! encoding, so save/load is value-exact and reruns are byte-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::AdamState;
use crate::train::TrainConfig;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub stage: u8,
    pub step: u64,
    pub model_config: ModelConfig,
    pub params: ModelParams,
    /// Tokenizer table; index is the token id.
    pub vocab: Vec<String>,
    pub optimizer: AdamState,
    /// Hash of (model config, train config) under which this was trained.
    pub config_hash: String,
    /// Provenance trail: stage-1 run, adaptations, stage-2 runs.
    pub lineage: Vec<String>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        Ok(ckpt)
    }
}

/// Hash of the run configuration. `max_steps` is excluded: it truncates
/// execution without changing the schedule plan, so a truncated run and
/// its resumption share a hash.
pub fn config_hash(model_cfg: &ModelConfig, train_cfg: &TrainConfig) -> String {
    let mut plan = train_cfg.clone();
    plan.max_steps = None;
    let payload = serde_json::to_string(&(model_cfg, &plan)).expect("configs serialize");
    let digest = Sha256::digest(payload.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;
    use crate::train::TuningMethod;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn small_ckpt() -> Checkpoint {
        let mut cfg = ModelConfig::toy();
        cfg.vocab_size = 32;
        cfg.d_model = 16;
        cfg.n_heads = 2;
        cfg.d_ff = 8;
        cfg.max_seq_len = 16;
        let params =
            ModelParams::init_dense(&cfg, &mut ChaCha20Rng::seed_from_u64(4)).unwrap();
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            stage: 1,
            step: 7,
            model_config: cfg,
            params,
            vocab: vec!["<pad>".into(), "<unk>".into(), "<eos>".into()],
            optimizer: AdamState::default(),
            config_hash: "abc".into(),
            lineage: vec!["stage1".into()],
        }
    }

    #[test]
    fn save_load_is_value_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = small_ckpt();
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.params.variant, Variant::Dense);
    }

    #[test]
    fn save_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let ckpt = small_ckpt();
        ckpt.save(&a).unwrap();
        ckpt.save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn hash_ignores_max_steps_only() {
        let model_cfg = ModelConfig::toy();
        let base = TrainConfig {
            stage: 1,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            warmup_ratio: 0.03,
            schedule: Default::default(),
            epochs: 1,
            batch_size: 4,
            seed: 7,
            variant: TuningMethod::Gmoe,
            max_steps: None,
            grad_clip_norm: 1.0,
            audit_every: 50,
            moe_aux_weight: 0.01,
        };
        let mut truncated = base.clone();
        truncated.max_steps = Some(5);
        assert_eq!(
            config_hash(&model_cfg, &base),
            config_hash(&model_cfg, &truncated)
        );
        let mut different = base.clone();
        different.seed = 8;
        assert_ne!(
            config_hash(&model_cfg, &base),
            config_hash(&model_cfg, &different)
        );
    }
}
