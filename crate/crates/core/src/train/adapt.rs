//! Turning a dense stage-1 model into each stage-2 parameterization.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_chacha::rand_core::SeedableRng;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, Variant};
use crate::tensor::{AdamState, Tensor};
use crate::train::checkpoint::Checkpoint;
use crate::train::TuningMethod;

const ADAPT_INIT_STD: f64 = 0.02;

/// Copy each block's FFN into three identical experts and freeze
/// everything that is not an expert. The copies are bitwise, so the
/// expanded model computes exactly the dense function.
pub fn expand_to_gmoe_params(dense: &ModelParams, cfg: &ModelConfig) -> Result<ModelParams> {
    if dense.variant != Variant::Dense {
        return Err(Error::State(format!(
            "expected a dense checkpoint, found variant {}",
            dense.variant
        )));
    }
    let mut params = dense.clone();
    params.variant = Variant::GMoe;
    for layer in 0..cfg.n_layers {
        for suffix in ["w1", "b1", "w2", "b2"] {
            let ffn = params
                .remove(&format!("block{layer}.ffn.{suffix}"))
                .ok_or_else(|| Error::State(format!("block{layer}.ffn.{suffix} missing")))?;
            for expert in 0..cfg.n_granularity_experts {
                params.insert_tensor(
                    &format!("block{layer}.expert{expert}.{suffix}"),
                    ffn.clone(),
                    true,
                );
            }
        }
    }
    params.freeze_all();
    for layer in 0..cfg.n_layers {
        for expert in 0..cfg.n_granularity_experts {
            for suffix in ["w1", "b1", "w2", "b2"] {
                params.set_trainable(&format!("block{layer}.expert{expert}.{suffix}"), true);
            }
        }
    }
    Ok(params)
}

/// Classic-MoE baseline: the FFN is copied into `moe_baseline_experts`
/// experts behind a fresh random gate; only the MoE layers train.
pub fn moe_params_from_dense<R: Rng>(
    dense: &ModelParams,
    cfg: &ModelConfig,
    rng: &mut R,
) -> Result<ModelParams> {
    if dense.variant != Variant::Dense {
        return Err(Error::State(format!(
            "expected a dense checkpoint, found variant {}",
            dense.variant
        )));
    }
    let mut params = dense.clone();
    params.variant = Variant::Moe;
    for layer in 0..cfg.n_layers {
        for suffix in ["w1", "b1", "w2", "b2"] {
            let ffn = params
                .remove(&format!("block{layer}.ffn.{suffix}"))
                .ok_or_else(|| Error::State(format!("block{layer}.ffn.{suffix} missing")))?;
            for expert in 0..cfg.moe_baseline_experts {
                params.insert_tensor(
                    &format!("block{layer}.moe.expert{expert}.{suffix}"),
                    ffn.clone(),
                    true,
                );
            }
        }
        params.insert_tensor(
            &format!("block{layer}.moe.gate.w"),
            Tensor::randn(&[cfg.d_model, cfg.moe_baseline_experts], ADAPT_INIT_STD, rng),
            true,
        );
    }
    params.freeze_all();
    for layer in 0..cfg.n_layers {
        params.set_trainable(&format!("block{layer}.moe.gate.w"), true);
        for expert in 0..cfg.moe_baseline_experts {
            for suffix in ["w1", "b1", "w2", "b2"] {
                params.set_trainable(
                    &format!("block{layer}.moe.expert{expert}.{suffix}"),
                    true,
                );
            }
        }
    }
    Ok(params)
}

/// LoRA adapters on attention q,k,v,o and both FFN matrices; A is
/// Gaussian, B zero, so the adapted model starts exactly at the base.
pub fn lora_params_from_dense<R: Rng>(
    dense: &ModelParams,
    cfg: &ModelConfig,
    rng: &mut R,
) -> Result<ModelParams> {
    if dense.variant != Variant::Dense {
        return Err(Error::State(format!(
            "expected a dense checkpoint, found variant {}",
            dense.variant
        )));
    }
    let mut params = dense.clone();
    params.variant = Variant::Lora;
    params.freeze_all();
    let r = cfg.lora_rank;
    for layer in 0..cfg.n_layers {
        let targets = [
            (format!("block{layer}.attn.wq"), cfg.d_model, cfg.d_model),
            (format!("block{layer}.attn.wk"), cfg.d_model, cfg.d_model),
            (format!("block{layer}.attn.wv"), cfg.d_model, cfg.d_model),
            (format!("block{layer}.attn.wo"), cfg.d_model, cfg.d_model),
            (format!("block{layer}.ffn.w1"), cfg.d_model, cfg.d_ff),
            (format!("block{layer}.ffn.w2"), cfg.d_ff, cfg.d_model),
        ];
        for (name, d_in, d_out) in targets {
            params.insert_tensor(
                &format!("{name}.lora_a"),
                Tensor::randn(&[d_in, r], ADAPT_INIT_STD, rng),
                true,
            );
            params.insert_tensor(&format!("{name}.lora_b"), Tensor::zeros(&[r, d_out]), true);
        }
    }
    Ok(params)
}

/// Stage-2 entry: expand a dense stage-1 checkpoint for the granularity
/// experts. The optimizer starts fresh.
pub fn expand_to_gmoe(ckpt: &Checkpoint) -> Result<Checkpoint> {
    adapt_checkpoint(ckpt, TuningMethod::Gmoe, 0)
}

/// Prepare a dense stage-1 checkpoint for any stage-2 method. `seed`
/// drives the freshly initialized tensors (MoE gates, LoRA A matrices).
pub fn adapt_checkpoint(
    ckpt: &Checkpoint,
    method: TuningMethod,
    seed: u64,
) -> Result<Checkpoint> {
    if ckpt.params.variant != Variant::Dense {
        return Err(Error::State(format!(
            "checkpoint already adapted to {}",
            ckpt.params.variant
        )));
    }
    let cfg = &ckpt.model_config;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let params = match method {
        TuningMethod::Gmoe => expand_to_gmoe_params(&ckpt.params, cfg)?,
        TuningMethod::Moe => moe_params_from_dense(&ckpt.params, cfg, &mut rng)?,
        TuningMethod::Lora => lora_params_from_dense(&ckpt.params, cfg, &mut rng)?,
        TuningMethod::Full => {
            let mut p = ckpt.params.clone();
            for name in p.names().cloned().collect::<Vec<_>>() {
                p.set_trainable(&name, true);
            }
            p
        }
    };
    let mut out = ckpt.clone();
    out.params = params;
    out.stage = 2;
    out.step = 0;
    out.optimizer = AdamState::default();
    out.lineage.push(format!("adapt:{method}"));
    Ok(out)
}
