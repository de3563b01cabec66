//! The optimizer loop shared by both stages and all four methods.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{GranularityLevel, TaskToken};
use crate::data::{Dataset, InstructionSample};
use crate::error::{Error, Result};
use crate::model::{
    assemble_sequence, bind_params, forward_sample, ModelConfig, ModelParams, SequenceBatch,
    Vocab,
};
use crate::tensor::{
    cross_entropy_masked_value, AdamState, AdamW, LrSchedule, Tape, Tensor,
};
use crate::train::checkpoint::{config_hash, Checkpoint, CHECKPOINT_FORMAT_VERSION};
use crate::train::TrainConfig;

/// One JSONL log line; one record per sample per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    /// Masked cross-entropy of this sample, exactly as optimized.
    pub loss: f64,
    pub task_token: TaskToken,
    pub granularity: GranularityLevel,
    pub variant: String,
}

/// Result of the periodic in-loop audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub step: usize,
    /// Logged losses equal a standalone masked cross-entropy of the same
    /// logits, bitwise, for every sample of the batch.
    pub losses_match_bitwise: bool,
    /// No frozen tensor changed across the optimizer step.
    pub frozen_unchanged: bool,
}

/// Mean training loss per granularity bucket, before and after stage 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketLoss {
    pub before: BTreeMap<GranularityLevel, f64>,
    pub after: BTreeMap<GranularityLevel, f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub records: Vec<StepRecord>,
    pub audits: Vec<AuditRecord>,
    pub bucket_loss: Option<BucketLoss>,
    /// The learning rate applied at each executed step.
    pub lr_trace: Vec<f64>,
}

/// Stage 1: full-parameter fine-tuning of a fresh dense model on the
/// mixed multi-task stream. Builds the vocabulary from the data.
pub fn train_stage1(
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if cfg.stage != 1 {
        return Err(Error::Config(format!(
            "train_stage1 called with stage {}",
            cfg.stage
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Train("empty dataset".into()));
    }
    let corpus = dataset
        .samples
        .iter()
        .flat_map(|s| [s.prompt.as_str(), s.target.as_str()]);
    let vocab = Vocab::build(corpus, model_cfg.vocab_size)?;
    let params =
        ModelParams::init_dense(model_cfg, &mut ChaCha20Rng::seed_from_u64(cfg.seed))?;
    run_loop(
        params,
        vocab,
        dataset,
        model_cfg,
        cfg,
        AdamState::default(),
        0,
        1,
        vec![format!("stage1:seed{}", cfg.seed)],
        false,
    )
}

/// Stage 2: fine-tune an adapted checkpoint on the granularity-bucketed
/// stream, recording per-bucket loss before and after.
pub fn train_stage2(
    ckpt: &Checkpoint,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.stage != 2 {
        return Err(Error::Config(format!(
            "train_stage2 called with stage {}",
            cfg.stage
        )));
    }
    if ckpt.params.variant != cfg.variant.architecture() {
        return Err(Error::State(format!(
            "checkpoint variant {} does not match method {}; adapt it first",
            ckpt.params.variant, cfg.variant
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Train("empty dataset".into()));
    }
    let vocab = Vocab::from_names(ckpt.vocab.clone());
    let mut lineage = ckpt.lineage.clone();
    lineage.push(format!("stage2:{}:seed{}", cfg.variant, cfg.seed));
    run_loop(
        ckpt.params.clone(),
        vocab,
        dataset,
        &ckpt.model_config,
        cfg,
        ckpt.optimizer.clone(),
        ckpt.step as usize,
        2,
        lineage,
        true,
    )
}

/// Continue a truncated run to its planned end; the trajectory is the one
/// the untruncated run would have taken.
pub fn resume_training(
    ckpt: &Checkpoint,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ckpt.stage != cfg.stage {
        return Err(Error::State(format!(
            "checkpoint is stage {}, config says {}",
            ckpt.stage, cfg.stage
        )));
    }
    if config_hash(&ckpt.model_config, cfg) != ckpt.config_hash {
        return Err(Error::State(
            "config hash mismatch: resuming under a different plan".into(),
        ));
    }
    let vocab = Vocab::from_names(ckpt.vocab.clone());
    run_loop(
        ckpt.params.clone(),
        vocab,
        dataset,
        &ckpt.model_config,
        cfg,
        ckpt.optimizer.clone(),
        ckpt.step as usize,
        ckpt.stage,
        ckpt.lineage.clone(),
        false,
    )
}

/// Encode a sample into its assembled sequence.
pub(crate) fn prepare_sample(
    sample: &InstructionSample,
    images: &[crate::model::Image],
    vocab: &Vocab,
    model_cfg: &ModelConfig,
) -> Result<SequenceBatch> {
    let prompt_ids = vocab.encode(&sample.prompt);
    let mut answer_ids = vocab.encode(&sample.target);
    answer_ids.push(vocab.eos_id());
    assemble_sequence(
        images.to_vec(),
        prompt_ids,
        answer_ids,
        sample.granularity,
        sample.task,
        model_cfg,
    )
}

/// Next-token targets and prediction mask from an assembled sequence:
/// position p predicts token p+1, masked where p+1 is an answer position.
pub(crate) fn shifted_targets(batch: &SequenceBatch) -> (Vec<u32>, Vec<bool>) {
    let len = batch.seq_len();
    let text = batch.text_ids();
    let answer_positions = batch.loss_mask();
    let mut targets = vec![0u32; len];
    let mut mask = vec![false; len];
    for p in 0..len.saturating_sub(1) {
        let next = p + 1;
        if next >= batch.n_image_tokens {
            targets[p] = text[next - batch.n_image_tokens];
            mask[p] = answer_positions[next];
        }
    }
    (targets, mask)
}

#[allow(clippy::too_many_arguments)]
fn run_loop(
    mut params: ModelParams,
    vocab: Vocab,
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    mut opt_state: AdamState,
    start_step: usize,
    stage: u8,
    lineage: Vec<String>,
    with_bucket_loss: bool,
) -> Result<TrainOutcome> {
    let sequences: Vec<SequenceBatch> = dataset
        .samples
        .iter()
        .zip(&dataset.images)
        .map(|(s, imgs)| prepare_sample(s, imgs, &vocab, model_cfg))
        .collect::<Result<_>>()?;
    let n = sequences.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let planned_total = cfg.epochs * batches_per_epoch;
    let end_step = cfg
        .max_steps
        .map_or(planned_total, |m| m.min(planned_total));
    let schedule = LrSchedule::new(cfg.learning_rate, planned_total, cfg.warmup_ratio);
    let optimizer = AdamW {
        weight_decay: cfg.weight_decay,
        ..AdamW::default()
    };
    let trainable = params.trainable_names();
    let frozen: Vec<String> = params
        .names()
        .filter(|n| !params.is_trainable(n))
        .cloned()
        .collect();

    let bucket_before = if with_bucket_loss {
        Some(mean_loss_per_level(&params, model_cfg, &sequences)?)
    } else {
        None
    };

    let mut records = Vec::new();
    let mut audits = Vec::new();
    let mut lr_trace = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let mut order_epoch = usize::MAX;

    for step in start_step..end_step {
        let epoch = step / batches_per_epoch;
        if epoch != order_epoch {
            order = epoch_order(n, cfg.seed, epoch);
            order_epoch = epoch;
        }
        let b0 = (step % batches_per_epoch) * cfg.batch_size;
        let batch: Vec<usize> = order[b0..(b0 + cfg.batch_size).min(n)].to_vec();
        let lr = schedule.lr_at(step);

        let mut tape = Tape::new();
        let vars = bind_params(&mut tape, &params);
        let mut ce_vars = Vec::new();
        let mut aux_vars = Vec::new();
        let mut sample_info = Vec::new();
        for &idx in &batch {
            let seq = &sequences[idx];
            let out = forward_sample(&mut tape, &vars, &params, model_cfg, seq)?;
            let (targets, mask) = shifted_targets(seq);
            let ce = tape.cross_entropy_masked(out.logits, &targets, &mask)?;
            ce_vars.push(ce);
            if let Some(aux) = out.aux_loss {
                aux_vars.push(aux);
            }
            sample_info.push((idx, out.logits, targets, mask, ce));
        }
        let mut total = mean_of(&mut tape, &ce_vars)?;
        if !aux_vars.is_empty() {
            let aux_mean = mean_of(&mut tape, &aux_vars)?;
            let weighted = tape.scale(aux_mean, cfg.moe_aux_weight);
            total = tape.add(total, weighted)?;
        }
        let loss_value = tape.value(total).scalar_value();
        if !loss_value.is_finite() {
            return Err(Error::Train(format!(
                "non-finite loss {loss_value} at step {step} (lr {lr:.3e}, batch {batch:?})"
            )));
        }
        tape.backward(total)?;

        let audit_now = step % cfg.audit_every == 0;
        let frozen_hash_before = audit_now.then(|| hash_tensors(&params, &frozen));

        // Collect trainable gradients, clip by global norm, apply AdamW.
        let mut grads: Vec<(String, Tensor)> = trainable
            .iter()
            .map(|name| {
                let var = vars.get(name)?;
                Ok((name.clone(), tape.grad(var)))
            })
            .collect::<Result<_>>()?;
        let norm: f64 = grads
            .iter()
            .flat_map(|(_, g)| g.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if cfg.grad_clip_norm > 0.0 && norm > cfg.grad_clip_norm {
            let factor = cfg.grad_clip_norm / norm;
            for (_, g) in grads.iter_mut() {
                for v in g.data_mut() {
                    *v *= factor;
                }
            }
        }
        optimizer.begin_step(&mut opt_state);
        for (name, grad) in &grads {
            optimizer.update(&mut opt_state, name, params.get_mut(name)?, grad, lr)?;
        }

        for &(idx, _, _, _, ce) in &sample_info {
            let sample = &dataset.samples[idx];
            records.push(StepRecord {
                step,
                lr,
                loss: tape.value(ce).scalar_value(),
                task_token: sample.task,
                granularity: sample.granularity,
                variant: params.variant.to_string(),
            });
        }
        lr_trace.push(lr);

        if audit_now {
            let losses_match = sample_info.iter().all(|(_, logits, targets, mask, ce)| {
                let logged = tape.value(*ce).scalar_value();
                cross_entropy_masked_value(tape.value(*logits), targets, mask)
                    .map(|v| v.to_bits() == logged.to_bits())
                    .unwrap_or(false)
            });
            let frozen_unchanged =
                frozen_hash_before == Some(hash_tensors(&params, &frozen));
            audits.push(AuditRecord {
                step,
                losses_match_bitwise: losses_match,
                frozen_unchanged,
            });
        }
    }

    let bucket_after = if with_bucket_loss {
        Some(mean_loss_per_level(&params, model_cfg, &sequences)?)
    } else {
        None
    };
    let checkpoint = Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        stage,
        step: end_step as u64,
        model_config: model_cfg.clone(),
        params,
        vocab: vocab.names().to_vec(),
        optimizer: opt_state,
        config_hash: config_hash(model_cfg, cfg),
        lineage,
    };
    Ok(TrainOutcome {
        checkpoint,
        records,
        audits,
        bucket_loss: bucket_before.map(|before| BucketLoss {
            before,
            after: bucket_after.expect("computed together"),
        }),
        lr_trace,
    })
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(
        seed.wrapping_add((epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
    );
    order.shuffle(&mut rng);
    order
}

fn mean_of(tape: &mut Tape, vars: &[crate::tensor::Var]) -> Result<crate::tensor::Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(tape.scale(acc, 1.0 / vars.len() as f64))
}

fn hash_tensors(params: &ModelParams, names: &[String]) -> u64 {
    let mut hasher = DefaultHasher::new();
    for name in names {
        name.hash(&mut hasher);
        let tensor = params.get(name).expect("frozen name exists");
        for v in tensor.data() {
            v.to_bits().hash(&mut hasher);
        }
    }
    hasher.finish()
}

/// Mean masked cross-entropy per granularity bucket, no gradient pass.
fn mean_loss_per_level(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    sequences: &[SequenceBatch],
) -> Result<BTreeMap<GranularityLevel, f64>> {
    let mut sums: BTreeMap<GranularityLevel, (f64, usize)> = BTreeMap::new();
    for seq in sequences {
        let mut tape = Tape::new();
        let vars = bind_params(&mut tape, params);
        let out = forward_sample(&mut tape, &vars, params, model_cfg, seq)?;
        let (targets, mask) = shifted_targets(seq);
        let loss = cross_entropy_masked_value(tape.value(out.logits), &targets, &mask)?;
        let entry = sums.entry(seq.granularity).or_insert((0.0, 0));
        entry.0 += loss;
        entry.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(level, (sum, count))| (level, sum / count as f64))
        .collect())
}

/// Deterministic per-task sampling without replacement, then a global
/// shuffle. Tasks absent from the quota map get quota zero.
pub fn resample_stage2(
    samples: &[InstructionSample],
    quotas: &BTreeMap<TaskToken, usize>,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut selected = Vec::new();
    for task in TaskToken::ALL {
        let quota = quotas.get(&task).copied().unwrap_or(0);
        let mut pool: Vec<usize> = (0..samples.len())
            .filter(|&i| samples[i].task == task)
            .collect();
        if quota > pool.len() {
            return Err(Error::Quota {
                task: task.as_str().to_string(),
                requested: quota,
                available: pool.len(),
            });
        }
        pool.shuffle(&mut rng);
        selected.extend_from_slice(&pool[..quota]);
    }
    selected.shuffle(&mut rng);
    Ok(selected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::route_granularity;
    use crate::data::{generate_dataset, GenConfig};

    fn quotas(pairs: &[(TaskToken, usize)]) -> BTreeMap<TaskToken, usize> {
        pairs.iter().copied().collect()
    }

    fn sample_pool() -> Vec<InstructionSample> {
        let data = generate_dataset(
            31,
            &GenConfig {
                n_scenes: 6,
                n_change_pairs: 2,
                ..GenConfig::default()
            },
        )
        .unwrap();
        data.samples
    }

    #[test]
    fn resample_respects_quotas_exactly() {
        let pool = sample_pool();
        let q = quotas(&[(TaskToken::Vg, 3), (TaskToken::Seg, 2), (TaskToken::Cap, 1)]);
        let picked = resample_stage2(&pool, &q, 5).unwrap();
        let mut by_task: BTreeMap<TaskToken, usize> = BTreeMap::new();
        for &i in &picked {
            *by_task.entry(pool[i].task).or_insert(0) += 1;
        }
        assert_eq!(by_task.get(&TaskToken::Vg), Some(&3));
        assert_eq!(by_task.get(&TaskToken::Seg), Some(&2));
        assert_eq!(by_task.get(&TaskToken::Cap), Some(&1));
        assert_eq!(by_task.get(&TaskToken::Vqa), None);
    }

    #[test]
    fn resample_zero_quota_excludes_task() {
        let pool = sample_pool();
        let q = quotas(&[(TaskToken::Vg, 2)]);
        let picked = resample_stage2(&pool, &q, 5).unwrap();
        assert!(picked.iter().all(|&i| pool[i].task == TaskToken::Vg));
    }

    #[test]
    fn resample_same_seed_same_selection() {
        let pool = sample_pool();
        let q = quotas(&[(TaskToken::Vg, 4), (TaskToken::Vqa, 5)]);
        assert_eq!(
            resample_stage2(&pool, &q, 9).unwrap(),
            resample_stage2(&pool, &q, 9).unwrap()
        );
    }

    #[test]
    fn resample_quota_overflow_is_an_error() {
        let pool = sample_pool();
        let q = quotas(&[(TaskToken::Ccd, 1000)]);
        assert!(matches!(
            resample_stage2(&pool, &q, 1),
            Err(Error::Quota { .. })
        ));
    }

    #[test]
    fn resample_buckets_match_router_rederivation() {
        let pool = sample_pool();
        let q = quotas(&[
            (TaskToken::Vg, 3),
            (TaskToken::Seg, 3),
            (TaskToken::Vqa, 3),
            (TaskToken::Ccd, 1),
        ]);
        for &i in &resample_stage2(&pool, &q, 2).unwrap() {
            assert_eq!(
                route_granularity(&pool[i].prompt).unwrap(),
                pool[i].granularity
            );
        }
    }

    #[test]
    fn shifted_targets_mask_counts_answer_tokens() {
        let cfg = ModelConfig::toy();
        let batch = assemble_sequence(
            vec![crate::model::Image::zeros(32, 32, 1)],
            vec![5, 6, 7],
            vec![8, 9, 2],
            GranularityLevel::Image,
            TaskToken::Cap,
            &cfg,
        )
        .unwrap();
        let (targets, mask) = shifted_targets(&batch);
        assert_eq!(mask.iter().filter(|m| **m).count(), 3);
        let l = batch.seq_len();
        // Predictions for the three answer tokens come from the three
        // positions immediately before them.
        assert!(mask[l - 4] && mask[l - 3] && mask[l - 2]);
        assert!(!mask[l - 1]);
        assert_eq!(targets[l - 4], 8);
        assert_eq!(targets[l - 2], 2);
    }
}
