//! Assembled training/inference sequences: image tokens, then instruction
//! tokens, then answer tokens.

use serde::{Deserialize, Serialize};

use crate::codec::{GranularityLevel, TaskToken};
use crate::error::{Error, Result};
use crate::model::params::ModelConfig;

/// Dense pixel tensor, HWC row-major, values in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch {
                op: "Image::new",
                lhs: vec![height, width, channels],
                rhs: vec![data.len()],
            });
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_gray(width: usize, height: usize, gray: &[u8]) -> Result<Self> {
        Image::new(
            height,
            width,
            1,
            gray.iter().map(|&v| v as f64 / 255.0).collect(),
        )
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn patch_count(&self, patch_size: usize) -> usize {
        (self.height / patch_size) * (self.width / patch_size)
    }
}

/// One assembled sequence. Token order is [image tokens (first image
/// first)] + [instruction] + [answer]; the loss mask is true exactly on
/// answer positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceBatch {
    pub images: Vec<Image>,
    pub n_image_tokens: usize,
    pub prompt_ids: Vec<u32>,
    pub answer_ids: Vec<u32>,
    pub granularity: GranularityLevel,
    pub task: TaskToken,
}

impl SequenceBatch {
    pub fn seq_len(&self) -> usize {
        self.n_image_tokens + self.prompt_ids.len() + self.answer_ids.len()
    }

    /// True exactly on answer positions; zero on image and instruction.
    pub fn loss_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.seq_len()];
        for slot in mask.iter_mut().skip(self.n_image_tokens + self.prompt_ids.len()) {
            *slot = true;
        }
        mask
    }

    /// All text ids in sequence order (instruction then answer).
    pub fn text_ids(&self) -> Vec<u32> {
        let mut ids = self.prompt_ids.clone();
        ids.extend_from_slice(&self.answer_ids);
        ids
    }
}

/// Validate shapes and budget and lay out the sequence.
pub fn assemble_sequence(
    images: Vec<Image>,
    prompt_ids: Vec<u32>,
    answer_ids: Vec<u32>,
    granularity: GranularityLevel,
    task: TaskToken,
    cfg: &ModelConfig,
) -> Result<SequenceBatch> {
    if images.is_empty() || images.len() > 2 {
        return Err(Error::Data(format!(
            "sequence takes 1 or 2 images, got {}",
            images.len()
        )));
    }
    let mut n_image_tokens = 0;
    for image in &images {
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
        n_image_tokens += image.patch_count(cfg.patch_size);
    }
    if prompt_ids.is_empty() {
        return Err(Error::Data("empty instruction token list".into()));
    }
    let length = n_image_tokens + prompt_ids.len() + answer_ids.len();
    if length > cfg.max_seq_len {
        return Err(Error::SequenceOverflow {
            length,
            budget: cfg.max_seq_len,
        });
    }
    Ok(SequenceBatch {
        images,
        n_image_tokens,
        prompt_ids,
        answer_ids,
        granularity,
        task,
    })
}
