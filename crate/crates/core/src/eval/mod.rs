//! Inference-to-metrics glue: greedy decoding, split evaluation, and the
//! four-way fine-tuning ablation.

mod ablation;
mod decode;
mod split;

pub use ablation::{run_ablation, AblationConfig, AblationReport, AblationRow};
pub use decode::{greedy_decode, DecodeOutput};
pub use split::{evaluate_split, score_texts, DecodeRecord, EvalOptions};
