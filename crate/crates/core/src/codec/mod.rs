//! The unified text-only representation: boxes and masks as plain text.
//!
//! Boxes are normalized to integers in [0, 100] and rendered as
//! `[x1, y1, x2, y2]`. Masks go through an N-by-N descriptor grid and a
//! row-wise run-length text form (`label*count` tokens, `|` between rows).
//! Prompts carry a bracketed task token, from which a training-free router
//! derives the granularity level.

mod bbox;
mod descriptor;
mod labels;
mod maskio;
mod prompt;

pub use bbox::{bbox_to_text, normalize_bbox, parse_bbox_text, BBox, NormalizedBBox};
pub use descriptor::{
    decode_mask, descriptor_to_text, encode_mask, parse_descriptor_text,
    parse_descriptor_text_lenient, DescriptorSequence, RepairReport, Run,
};
pub use labels::{LabelSet, Mask};
pub use maskio::{read_mask_file, read_pgm_image, write_mask_file, write_pgm_image};
pub use prompt::{
    build_prompt, route_granularity, route_granularity_lenient, template_catalog,
    GranularityLevel, PromptTemplate, TaskToken, TEMPLATE_TABLE_VERSION,
};
