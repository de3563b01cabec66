//! Label sets and integer label grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered class names. Id 0 is always "background".
///
/// Names must survive the descriptor text syntax, so on top of being unique
/// and non-empty they may not contain '*', ':', '|', or whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.first().map(String::as_str) != Some("background") {
            return Err(Error::LabelSet(
                "label id 0 must be named \"background\"".into(),
            ));
        }
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::LabelSet(format!("label {i} is empty")));
            }
            if name
                .chars()
                .any(|c| c == '*' || c == ':' || c == '|' || c.is_whitespace())
            {
                return Err(Error::LabelSet(format!(
                    "label {name:?} contains a reserved character"
                )));
            }
            if names[..i].contains(name) {
                return Err(Error::LabelSet(format!("duplicate label {name:?}")));
            }
        }
        Ok(LabelSet { names })
    }

    /// Background plus the given foreground names.
    pub fn with_background(foreground: &[&str]) -> Result<Self> {
        let mut names = vec!["background".to_string()];
        names.extend(foreground.iter().map(|s| s.to_string()));
        LabelSet::new(names)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false // always holds background
    }

    pub fn name(&self, id: u32) -> Result<&str> {
        self.names
            .get(id as usize)
            .map(String::as_str)
            .ok_or_else(|| Error::UnknownLabel(format!("id {id}")))
    }

    pub fn id(&self, name: &str) -> Result<u32> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| i as u32)
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub const BACKGROUND: u32 = 0;
}

/// Integer label grid over image pixels, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
}

impl Mask {
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::DegenerateInput(format!(
                "mask dimensions {width}x{height}"
            )));
        }
        if labels.len() != width * height {
            return Err(Error::ShapeMismatch {
                op: "Mask::new",
                lhs: vec![height, width],
                rhs: vec![labels.len()],
            });
        }
        Ok(Mask {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, label: u32) -> Result<Self> {
        Mask::new(width, height, vec![label; width * height])
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, label: u32) {
        self.labels[y * self.width + x] = label;
    }

    /// Every label id must exist in `labels`.
    pub fn validate_against(&self, labels: &LabelSet) -> Result<()> {
        for &id in &self.labels {
            if id as usize >= labels.len() {
                return Err(Error::UnknownLabel(format!("id {id}")));
            }
        }
        Ok(())
    }

    /// Copy with every label not equal to `keep` set to background.
    pub fn binarized(&self, keep: u32) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            labels: self
                .labels
                .iter()
                .map(|&l| if l == keep { keep } else { LabelSet::BACKGROUND })
                .collect(),
        }
    }
}
