//! Evaluation metrics for every task family, over a documented tokenizer.
//!
//! Text metrics (BLEU, ROUGE-L, exact-match METEOR, CIDEr) operate on
//! lowercased, punctuation-detached whitespace tokens. Spatial metrics
//! (box IoU / acc@t, segmentation confusion scores) operate on the codec's
//! normalized boxes and masks. Each metric has an independent brute-force
//! oracle in the test suite.

mod report;
mod seg;
mod text;

pub use report::{MetricConfig, MetricReport};
pub use seg::{
    classification_accuracy, grounding_accuracy, iou_bbox, normalize_class_text,
    segmentation_scores, ClassCounts, ClassScores, SegScores,
};
pub use text::{
    bleu, cider, corpus_bleu, meteor_exact, rouge_l, tokenize_for_metrics, BleuScore,
    BleuSmoothing, CiderReport,
};
