//! JSONL ingestion with per-record structured errors, plus label files.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::LabelSet;
use crate::data::InstructionSample;
use crate::error::Result;

/// One rejected record; collected, never silently dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordError {
    /// 1-based line number; 0 when the failure is not line-addressable.
    pub line: usize,
    pub id: Option<String>,
    pub message: String,
}

/// Parse and validate every line. Image existence is checked against
/// `image_root`; loading happens later so a bad pixel file surfaces with
/// its record id.
pub fn ingest_jsonl(
    path: &Path,
    image_root: &Path,
) -> Result<(Vec<InstructionSample>, Vec<RecordError>)> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    let mut errors = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: InstructionSample = match serde_json::from_str(&line) {
            Ok(s) => s,
            Err(e) => {
                errors.push(RecordError {
                    line: line_no,
                    id: None,
                    message: format!("schema violation: {e}"),
                });
                continue;
            }
        };
        if let Err(e) = sample.validate() {
            errors.push(RecordError {
                line: line_no,
                id: Some(sample.id.clone()),
                message: e.to_string(),
            });
            continue;
        }
        let missing: Vec<&String> = sample
            .images
            .iter()
            .filter(|rel| !image_root.join(rel).is_file())
            .collect();
        if !missing.is_empty() {
            errors.push(RecordError {
                line: line_no,
                id: Some(sample.id.clone()),
                message: format!("missing image file(s): {missing:?}"),
            });
            continue;
        }
        samples.push(sample);
    }
    Ok((samples, errors))
}

pub fn export_jsonl(samples: &[InstructionSample], path: &Path) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    for sample in samples {
        serde_json::to_writer(&mut out, sample)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// One label name per line, id = line index; line 0 is "background".
pub fn write_labels_file(path: &Path, labels: &LabelSet) -> Result<()> {
    std::fs::write(path, labels.names().join("\n") + "\n")?;
    Ok(())
}

pub fn read_labels_file(path: &Path) -> Result<LabelSet> {
    let text = std::fs::read_to_string(path)?;
    LabelSet::new(text.lines().map(str::to_string).collect())
}
