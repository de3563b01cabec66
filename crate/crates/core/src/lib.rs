//! Desk-scale multi-granularity vision-language testbed.
//!
//! The crate implements, end to end and at a size where every claim is
//! checkable on one CPU core:
//!
//! - a text-only unified representation for boxes (`[x1, y1, x2, y2]` in
//!   [0, 100]) and masks (row-wise RLE semantic descriptors) — [`codec`];
//! - a small multimodal transformer over 64-bit floats with reverse-mode
//!   autodiff — [`tensor`], [`model`];
//! - a granularity-routed mixture-of-experts layer whose router is a pure
//!   function of the prompt's task token — [`model`];
//! - the two-stage training scheme (dense full fine-tune, then FFN
//!   duplication into three experts with everything else frozen) and the
//!   LoRA / classic-MoE / full-fine-tune ablation variants — [`train`];
//! - synthetic multi-granularity task generation with analytically exact
//!   ground truth — [`data`];
//! - the evaluation metric suite (BLEU, ROUGE-L, exact-match METEOR,
//!   CIDEr, box accuracy, segmentation scores), each with an independent
//!   oracle in the test suite — [`metrics`], [`eval`].

pub mod codec;
pub mod data;
pub mod metrics;
pub mod model;
pub mod train;
pub mod error;
pub mod eval;
pub mod tensor;

pub use error::{Error, Result};
