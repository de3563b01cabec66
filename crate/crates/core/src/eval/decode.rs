//! Greedy autoregressive decoding.

use crate::codec::route_granularity;
use crate::data::InstructionSample;
use crate::error::Result;
use crate::model::{
    assemble_sequence, bind_params, forward_sample, Image, ModelConfig, ModelParams, Vocab,
};
use crate::tensor::Tape;

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub text: String,
    /// Budget was zero: nothing was generated, by construction.
    pub empty_budget: bool,
    pub tokens_generated: usize,
}

/// Argmax decoding until the end token or the budget. Deterministic:
/// argmax ties resolve to the lowest token id.
pub fn greedy_decode(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    vocab: &Vocab,
    sample: &InstructionSample,
    images: &[Image],
    max_new: usize,
) -> Result<DecodeOutput> {
    // The router, not the annotation, decides the expert: hand-built
    // prompts without a task token fail here with a routing error.
    let granularity = route_granularity(&sample.prompt)?;
    if max_new == 0 {
        return Ok(DecodeOutput {
            text: String::new(),
            empty_budget: true,
            tokens_generated: 0,
        });
    }
    let prompt_ids = vocab.encode(&sample.prompt);
    let mut answer_ids: Vec<u32> = Vec::new();
    for _ in 0..max_new {
        let batch = assemble_sequence(
            images.to_vec(),
            prompt_ids.clone(),
            answer_ids.clone(),
            granularity,
            sample.task,
            model_cfg,
        )?;
        let mut tape = Tape::new();
        let vars = bind_params(&mut tape, params);
        let out = forward_sample(&mut tape, &vars, params, model_cfg, &batch)?;
        let logits = tape.value(out.logits);
        let vocab_size = logits.shape()[1];
        let last = &logits.data()[(batch.seq_len() - 1) * vocab_size..];
        let mut best = 0usize;
        for (i, &v) in last.iter().enumerate() {
            if v > last[best] {
                best = i;
            }
        }
        if best as u32 == vocab.eos_id() {
            break;
        }
        answer_ids.push(best as u32);
    }
    Ok(DecodeOutput {
        text: vocab.decode(&answer_ids),
        empty_budget: false,
        tokens_generated: answer_ids.len(),
    })
}
