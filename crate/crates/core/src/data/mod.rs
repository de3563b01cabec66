//! Synthetic multi-granularity task generation and JSONL ingestion.

mod jsonl;
mod samples;
mod scene;

pub use jsonl::{export_jsonl, ingest_jsonl, read_labels_file, write_labels_file, RecordError};
pub use samples::{
    catalog_label_set, generate_dataset, scene_to_samples, write_dataset, GenConfig,
    GeneratedDataset, CHANGE_LABEL,
};
pub use scene::{
    generate_change_pair, generate_scene, ChangeKind, ChangePair, SceneKnobs, SceneSpec, Shape,
    ShapeKind,
};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{route_granularity, GranularityLevel, TaskToken};
use crate::error::{Error, Result};
use crate::model::Image;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthetic,
    Ingested,
}

/// The universal training/eval record, exactly the JSONL schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionSample {
    pub schema_version: u32,
    pub id: String,
    pub task: TaskToken,
    /// Image file paths relative to the dataset root.
    pub images: Vec<String>,
    pub prompt: String,
    pub target: String,
    pub granularity: GranularityLevel,
    pub provenance: Provenance,
}

impl InstructionSample {
    /// Type invariants: schema version, image count by task, and the
    /// granularity annotation agreeing with the router.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Data(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.id.is_empty() {
            return Err(Error::Data("empty sample id".into()));
        }
        let n = self.images.len();
        let count_ok = match self.task {
            TaskToken::Ccd => n == 2,
            // Single-image semantic segmentation or two-image change
            // detection, both under [SEG].
            TaskToken::Seg => n == 1 || n == 2,
            _ => n == 1,
        };
        if !count_ok {
            return Err(Error::Data(format!(
                "task {} with {n} image(s) violates the image-count invariant",
                self.task
            )));
        }
        let routed = route_granularity(&self.prompt)?;
        if routed != self.granularity {
            return Err(Error::Data(format!(
                "granularity {} disagrees with router {routed}",
                self.granularity
            )));
        }
        if self.target.is_empty() {
            return Err(Error::Data("empty target".into()));
        }
        Ok(())
    }
}

/// Records plus their loaded image tensors, parallel by index.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<InstructionSample>,
    pub images: Vec<Vec<Image>>,
}

impl Dataset {
    pub fn new(samples: Vec<InstructionSample>, images: Vec<Vec<Image>>) -> Result<Self> {
        if samples.len() != images.len() {
            return Err(Error::Data(format!(
                "{} records but {} image groups",
                samples.len(),
                images.len()
            )));
        }
        Ok(Dataset { samples, images })
    }

    /// Ingest a JSONL file and load every referenced image. Records that
    /// fail validation are returned separately, never silently dropped.
    pub fn load(jsonl: &Path, image_root: &Path) -> Result<(Self, Vec<RecordError>)> {
        let (samples, mut errors) = ingest_jsonl(jsonl, image_root)?;
        let mut kept = Vec::new();
        let mut images = Vec::new();
        for sample in samples {
            let mut group = Vec::new();
            let mut failed = false;
            for rel in &sample.images {
                match crate::codec::read_pgm_image(&image_root.join(rel)) {
                    Ok((w, h, gray)) => group.push(Image::from_gray(w, h, &gray)?),
                    Err(e) => {
                        errors.push(RecordError {
                            line: 0,
                            id: Some(sample.id.clone()),
                            message: format!("image {rel}: {e}"),
                        });
                        failed = true;
                        break;
                    }
                }
            }
            if !failed {
                kept.push(sample);
                images.push(group);
            }
        }
        Ok((Dataset::new(kept, images)?, errors))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Subset view in the given index order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
        }
    }

    pub fn filter_task(&self, task: TaskToken) -> Dataset {
        let indices: Vec<usize> = (0..self.len())
            .filter(|&i| self.samples[i].task == task)
            .collect();
        self.select(&indices)
    }
}
