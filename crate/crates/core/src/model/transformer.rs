//! The decoder-only forward pass, generic over the four variants.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::params::{ModelConfig, ModelParams, Variant};
use crate::model::sequence::{Image, SequenceBatch};
use crate::tensor::{Tape, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Parameter tensors bound as tape leaves, by name.
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::State(format!("parameter {name} not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Bind every parameter tensor onto the tape as a leaf.
pub fn bind_params(tape: &mut Tape, params: &ModelParams) -> ParamVars {
    let vars = params
        .iter()
        .map(|(name, tensor)| (name.clone(), tape.leaf(tensor.clone())))
        .collect();
    ParamVars { vars }
}

/// Which expert saw how many tokens, per MoE block (indexed by layer).
#[derive(Debug, Clone, Default)]
pub struct ForwardTrace {
    pub expert_tokens_per_block: Vec<Vec<usize>>,
}

impl ForwardTrace {
    /// Expert indices with nonzero traffic in the given block.
    pub fn active_experts(&self, block: usize) -> Vec<usize> {
        self.expert_tokens_per_block[block]
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(e, _)| e)
            .collect()
    }
}

pub struct ForwardResult {
    /// [seq_len, vocab] next-token logits.
    pub logits: Var,
    /// Load-balance auxiliary statistic, classic-MoE variant only
    /// (unweighted; the trainer applies the loss weight).
    pub aux_loss: Option<Var>,
    pub trace: ForwardTrace,
}

/// Flatten non-overlapping patches and project them to d_model.
pub fn patch_tokens(
    tape: &mut Tape,
    vars: &ParamVars,
    cfg: &ModelConfig,
    image: &Image,
) -> Result<Var> {
    if image.height % cfg.patch_size != 0 || image.width % cfg.patch_size != 0 {
        return Err(Error::ShapeMismatch {
            op: "patch_encode",
            lhs: vec![image.height, image.width],
            rhs: vec![cfg.patch_size, cfg.patch_size],
        });
    }
    if image.channels != cfg.image_channels {
        return Err(Error::ShapeMismatch {
            op: "patch_encode channels",
            lhs: vec![image.channels],
            rhs: vec![cfg.image_channels],
        });
    }
    let p = cfg.patch_size;
    let (gh, gw) = (image.height / p, image.width / p);
    let mut flat = vec![0.0; gh * gw * cfg.patch_dim()];
    let mut row = 0;
    for py in 0..gh {
        for px in 0..gw {
            let base = row * cfg.patch_dim();
            let mut k = 0;
            for dy in 0..p {
                for dx in 0..p {
                    for c in 0..image.channels {
                        let y = py * p + dy;
                        let x = px * p + dx;
                        flat[base + k] =
                            image.data[(y * image.width + x) * image.channels + c];
                        k += 1;
                    }
                }
            }
            row += 1;
        }
    }
    let patches = tape.leaf(Tensor::new(vec![gh * gw, cfg.patch_dim()], flat)?);
    let projected = tape.matmul(patches, vars.get("patch.w")?)?;
    tape.add_row_broadcast(projected, vars.get("patch.b")?)
}

/// Causal next-token logits for one assembled sample.
pub fn forward_sample(
    tape: &mut Tape,
    vars: &ParamVars,
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &SequenceBatch,
) -> Result<ForwardResult> {
    let mut parts = Vec::with_capacity(batch.images.len() + 1);
    for image in &batch.images {
        parts.push(patch_tokens(tape, vars, cfg, image)?);
    }
    let text_ids = batch.text_ids();
    if !text_ids.is_empty() {
        for &id in &text_ids {
            if id as usize >= cfg.vocab_size {
                return Err(Error::Data(format!(
                    "token id {id} out of vocab range {}",
                    cfg.vocab_size
                )));
            }
        }
        let tok = tape.embedding(vars.get("embed.tok")?, &text_ids)?;
        parts.push(tok);
    }
    let mut x = tape.concat_rows(&parts)?;
    let seq_len = tape.value(x).shape()[0];
    if seq_len > cfg.max_seq_len {
        return Err(Error::SequenceOverflow {
            length: seq_len,
            budget: cfg.max_seq_len,
        });
    }
    let positions: Vec<usize> = (0..seq_len).collect();
    let pos = tape.gather_rows(vars.get("embed.pos")?, &positions)?;
    x = tape.add(x, pos)?;

    // Additive causal mask: position i attends only to positions <= i.
    let mut mask_data = vec![0.0; seq_len * seq_len];
    for i in 0..seq_len {
        for j in (i + 1)..seq_len {
            mask_data[i * seq_len + j] = -1e30;
        }
    }
    let causal = tape.leaf(Tensor::new(vec![seq_len, seq_len], mask_data)?);

    let mut trace = ForwardTrace {
        expert_tokens_per_block: vec![vec![]; cfg.n_layers],
    };
    let mut aux_total: Option<Var> = None;
    for layer in 0..cfg.n_layers {
        let prefix = format!("block{layer}");
        x = attention_residual(tape, vars, params.variant, cfg, &prefix, x, causal)?;
        let h = tape.layer_norm(
            x,
            vars.get(&format!("{prefix}.ln2.g"))?,
            vars.get(&format!("{prefix}.ln2.b"))?,
            LAYER_NORM_EPS,
        )?;
        let ffn_out = match params.variant {
            Variant::Dense => {
                trace.expert_tokens_per_block[layer] = vec![seq_len];
                dense_ffn(tape, vars, &format!("{prefix}.ffn"), h)?
            }
            Variant::Lora => {
                trace.expert_tokens_per_block[layer] = vec![seq_len];
                lora_ffn(tape, vars, cfg, &prefix, h)?
            }
            Variant::GMoe => {
                let expert = batch.granularity.expert_index();
                let mut tokens = vec![0usize; cfg.n_granularity_experts];
                tokens[expert] = seq_len;
                trace.expert_tokens_per_block[layer] = tokens;
                dense_ffn(tape, vars, &format!("{prefix}.expert{expert}"), h)?
            }
            Variant::Moe => {
                let (out, aux, tokens) = moe_ffn(tape, vars, cfg, &prefix, h)?;
                trace.expert_tokens_per_block[layer] = tokens;
                aux_total = Some(match aux_total {
                    None => aux,
                    Some(acc) => tape.add(acc, aux)?,
                });
                out
            }
        };
        x = tape.add(x, ffn_out)?;
    }
    let xf = tape.layer_norm(x, vars.get("ln_f.g")?, vars.get("ln_f.b")?, LAYER_NORM_EPS)?;
    let logits = tape.matmul(xf, vars.get("head.w")?)?;
    let logits = tape.add_row_broadcast(logits, vars.get("head.b")?)?;
    Ok(ForwardResult {
        logits,
        aux_loss: aux_total,
        trace,
    })
}

fn attention_residual(
    tape: &mut Tape,
    vars: &ParamVars,
    variant: Variant,
    cfg: &ModelConfig,
    prefix: &str,
    x: Var,
    causal: Var,
) -> Result<Var> {
    let h = tape.layer_norm(
        x,
        vars.get(&format!("{prefix}.ln1.g"))?,
        vars.get(&format!("{prefix}.ln1.b"))?,
        LAYER_NORM_EPS,
    )?;
    let project = |tape: &mut Tape, w: &str, b: &str| -> Result<Var> {
        let name = format!("{prefix}.attn.{w}");
        let out = match variant {
            Variant::Lora => lora_linear(tape, vars, cfg, h, &name)?,
            _ => tape.matmul(h, vars.get(&name)?)?,
        };
        tape.add_row_broadcast(out, vars.get(&format!("{prefix}.attn.{b}"))?)
    };
    let q = project(tape, "wq", "bq")?;
    let k = project(tape, "wk", "bk")?;
    let v = project(tape, "wv", "bv")?;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for head in 0..cfg.n_heads {
        let (start, end) = (head * dh, (head + 1) * dh);
        let qh = tape.slice_cols(q, start, end)?;
        let kh = tape.slice_cols(k, start, end)?;
        let vh = tape.slice_cols(v, start, end)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let scores = tape.add(scores, causal)?;
        let attn = tape.softmax_rows(scores)?;
        heads.push(tape.matmul(attn, vh)?);
    }
    let merged = tape.concat_cols(&heads)?;
    let name = format!("{prefix}.attn.wo");
    let out = match variant {
        Variant::Lora => lora_linear(tape, vars, cfg, merged, &name)?,
        _ => tape.matmul(merged, vars.get(&name)?)?,
    };
    let out = tape.add_row_broadcast(out, vars.get(&format!("{prefix}.attn.bo"))?)?;
    tape.add(x, out)
}

fn dense_ffn(tape: &mut Tape, vars: &ParamVars, prefix: &str, h: Var) -> Result<Var> {
    let h1 = tape.matmul(h, vars.get(&format!("{prefix}.w1"))?)?;
    let h1 = tape.add_row_broadcast(h1, vars.get(&format!("{prefix}.b1"))?)?;
    let h1 = tape.gelu(h1);
    let h2 = tape.matmul(h1, vars.get(&format!("{prefix}.w2"))?)?;
    tape.add_row_broadcast(h2, vars.get(&format!("{prefix}.b2"))?)
}

/// x @ (W + (alpha/r) B_a B_b), with the base weight frozen elsewhere.
fn lora_linear(
    tape: &mut Tape,
    vars: &ParamVars,
    cfg: &ModelConfig,
    x: Var,
    weight_name: &str,
) -> Result<Var> {
    let base = tape.matmul(x, vars.get(weight_name)?)?;
    let a = vars.get(&format!("{weight_name}.lora_a"))?;
    let b = vars.get(&format!("{weight_name}.lora_b"))?;
    let low = tape.matmul(x, a)?;
    let low = tape.matmul(low, b)?;
    let scaled = tape.scale(low, cfg.lora_alpha / cfg.lora_rank as f64);
    tape.add(base, scaled)
}

fn lora_ffn(
    tape: &mut Tape,
    vars: &ParamVars,
    cfg: &ModelConfig,
    prefix: &str,
    h: Var,
) -> Result<Var> {
    let h1 = lora_linear(tape, vars, cfg, h, &format!("{prefix}.ffn.w1"))?;
    let h1 = tape.add_row_broadcast(h1, vars.get(&format!("{prefix}.ffn.b1"))?)?;
    let h1 = tape.gelu(h1);
    let h2 = lora_linear(tape, vars, cfg, h1, &format!("{prefix}.ffn.w2"))?;
    tape.add_row_broadcast(h2, vars.get(&format!("{prefix}.ffn.b2"))?)
}

/// Classic top-1 gated mixture: each token runs through the expert its
/// gate prefers, scaled by the gate probability, plus the switch-style
/// load-balance statistic n_experts * sum_e f_e * pbar_e.
fn moe_ffn(
    tape: &mut Tape,
    vars: &ParamVars,
    cfg: &ModelConfig,
    prefix: &str,
    h: Var,
) -> Result<(Var, Var, Vec<usize>)> {
    let n_experts = cfg.moe_baseline_experts;
    let seq_len = tape.value(h).shape()[0];
    let gate_logits = tape.matmul(h, vars.get(&format!("{prefix}.moe.gate.w"))?)?;
    let probs = tape.softmax_rows(gate_logits)?;
    let top: Vec<usize> = {
        let p = tape.value(probs);
        (0..seq_len)
            .map(|i| {
                let row = &p.data()[i * n_experts..(i + 1) * n_experts];
                let mut best = 0;
                for (e, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = e;
                    }
                }
                best
            })
            .collect()
    };
    let mut tokens = vec![0usize; n_experts];
    for &e in &top {
        tokens[e] += 1;
    }
    let mut combined: Option<Var> = None;
    for expert in 0..n_experts {
        let rows: Vec<usize> = (0..seq_len).filter(|&i| top[i] == expert).collect();
        if rows.is_empty() {
            continue;
        }
        let xe = tape.gather_rows(h, &rows)?;
        let ye = dense_ffn(tape, vars, &format!("{prefix}.moe.expert{expert}"), xe)?;
        let placed = tape.scatter_rows(ye, &rows, seq_len)?;
        combined = Some(match combined {
            None => placed,
            Some(acc) => tape.add(acc, placed)?,
        });
    }
    let combined = combined.expect("every token routes somewhere");
    let top_probs = tape.select_per_row(probs, &top)?;
    let out = tape.mul_rows_by_vec(combined, top_probs)?;

    // Load-balance statistic: fractions are constants, mean gate
    // probabilities stay differentiable.
    let fractions: Vec<f64> = tokens
        .iter()
        .map(|&c| c as f64 / seq_len as f64)
        .collect();
    let f_row = tape.leaf(Tensor::new(vec![1, n_experts], fractions)?);
    let mean_row = tape.leaf(Tensor::new(
        vec![1, seq_len],
        vec![1.0 / seq_len as f64; seq_len],
    )?);
    let pbar = tape.matmul(mean_row, probs)?;
    let prod = tape.mul(f_row, pbar)?;
    let aux = tape.sum(prod);
    let aux = tape.scale(aux, n_experts as f64);
    Ok((out, aux, tokens))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{GranularityLevel, TaskToken};
    use crate::model::params::ModelParams;
    use crate::model::sequence::assemble_sequence;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 32,
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            d_ff: 24,
            max_seq_len: 48,
            patch_size: 4,
            image_channels: 1,
            n_granularity_experts: 3,
            moe_baseline_experts: 4,
            lora_rank: 2,
            lora_alpha: 4.0,
            grid_n: 4,
        }
    }

    fn sample(cfg: &ModelConfig, level: GranularityLevel) -> SequenceBatch {
        let img = Image::new(
            8,
            8,
            1,
            (0..64).map(|i| (i % 7) as f64 / 7.0).collect(),
        )
        .unwrap();
        assemble_sequence(
            vec![img],
            vec![3, 4, 5],
            vec![6, 7],
            level,
            TaskToken::Cap,
            cfg,
        )
        .unwrap()
    }

    #[test]
    fn patch_count_matches_arithmetic() {
        let cfg = small_cfg();
        let params = ModelParams::init_dense(&cfg, &mut ChaCha20Rng::seed_from_u64(3)).unwrap();
        let mut tape = Tape::new();
        let vars = bind_params(&mut tape, &params);
        let img = Image::zeros(8, 8, 1);
        let tokens = patch_tokens(&mut tape, &vars, &cfg, &img).unwrap();
        assert_eq!(tape.value(tokens).shape(), &[4, 16]);
    }

    #[test]
    fn zero_image_zero_bias_gives_zero_tokens() {
        let cfg = small_cfg();
        let params = ModelParams::init_dense(&cfg, &mut ChaCha20Rng::seed_from_u64(3)).unwrap();
        let mut tape = Tape::new();
        let vars = bind_params(&mut tape, &params);
        let img = Image::zeros(8, 8, 1);
        let tokens = patch_tokens(&mut tape, &vars, &cfg, &img).unwrap();
        assert!(tape.value(tokens).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn patch_projection_matches_hand_matmul() {
        let mut cfg = small_cfg();
        cfg.patch_size = 2;
        let params = ModelParams::init_dense(&cfg, &mut ChaCha20Rng::seed_from_u64(5)).unwrap();
        let mut tape = Tape::new();
        let vars = bind_params(&mut tape, &params);
        // 2x2 image = one 2x2 patch.
        let img = Image::new(2, 2, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let tokens = patch_tokens(&mut tape, &vars, &cfg, &img).unwrap();
        let w = params.get("patch.w").unwrap();
        let d = cfg.d_model;
        for j in 0..d {
            let mut want = 0.0;
            for (k, &pv) in [0.1, 0.2, 0.3, 0.4].iter().enumerate() {
                want += pv * w.data()[k * d + j];
            }
            assert!((tape.value(tokens).data()[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_property_later_tokens_do_not_leak_back() {
        let cfg = small_cfg();
        let params = ModelParams::init_dense(&cfg, &mut ChaCha20Rng::seed_from_u64(7)).unwrap();
        let base = sample(&cfg, GranularityLevel::Image);
        let mut perturbed = base.clone();
        // Perturb the last answer token (position seq_len-1, index j).
        let j = base.seq_len() - 1;
        *perturbed.answer_ids.last_mut().unwrap() = 9;

        let run = |batch: &SequenceBatch| -> Vec<f64> {
            let mut tape = Tape::new();
            let vars = bind_params(&mut tape, &params);
            let out = forward_sample(&mut tape, &vars, &params, &cfg, batch).unwrap();
            tape.value(out.logits).data().to_vec()
        };
        let a = run(&base);
        let b = run(&perturbed);
        let vocab = cfg.vocab_size;
        for pos in 0..j {
            for t in 0..vocab {
                assert_eq!(a[pos * vocab + t], b[pos * vocab + t], "leak at {pos}");
            }
        }
        // And the perturbed position itself does change.
        assert!(a[j * vocab..].iter().zip(&b[j * vocab..]).any(|(x, y)| x != y));
    }

    #[test]
    fn gmoe_runs_exactly_one_expert_per_block() {
        let cfg = small_cfg();
        let dense =
            ModelParams::init_dense(&cfg, &mut ChaCha20Rng::seed_from_u64(11)).unwrap();
        let gmoe = crate::train::expand_to_gmoe_params(&dense, &cfg).unwrap();
        for level in GranularityLevel::ALL {
            let batch = sample(&cfg, level);
            let mut tape = Tape::new();
            let vars = bind_params(&mut tape, &gmoe);
            let out = forward_sample(&mut tape, &vars, &gmoe, &cfg, &batch).unwrap();
            for layer in 0..cfg.n_layers {
                assert_eq!(out.trace.active_experts(layer), vec![level.expert_index()]);
            }
        }
    }

    #[test]
    fn moe_gates_cover_every_token() {
        let cfg = small_cfg();
        let dense =
            ModelParams::init_dense(&cfg, &mut ChaCha20Rng::seed_from_u64(13)).unwrap();
        let moe = crate::train::moe_params_from_dense(
            &dense,
            &cfg,
            &mut ChaCha20Rng::seed_from_u64(14),
        )
        .unwrap();
        let batch = sample(&cfg, GranularityLevel::Image);
        let mut tape = Tape::new();
        let vars = bind_params(&mut tape, &moe);
        let out = forward_sample(&mut tape, &vars, &moe, &cfg, &batch).unwrap();
        assert!(out.aux_loss.is_some());
        for layer in 0..cfg.n_layers {
            let total: usize = out.trace.expert_tokens_per_block[layer].iter().sum();
            assert_eq!(total, batch.seq_len());
        }
    }
}
