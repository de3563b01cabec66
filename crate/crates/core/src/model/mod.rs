//! The toy multimodal transformer and its fine-tuning variants.
//!
//! One architecture, four parameterizations: dense (stage 1 and the
//! full-fine-tune baseline), granularity-routed MoE with three experts and
//! a zero-parameter router, a classic top-1 gated MoE baseline, and a
//! LoRA-adapted dense model with frozen base weights.

mod params;
mod sequence;
mod tokenizer;
mod transformer;

pub use params::{count_parameters, ModelConfig, ModelParams, ParamCounts, Variant};
pub use sequence::{assemble_sequence, Image, SequenceBatch};
pub use tokenizer::Vocab;
pub use transformer::{
    bind_params, forward_sample, patch_tokens, ForwardResult, ForwardTrace, ParamVars,
    LAYER_NORM_EPS,
};
