//! Task tokens, the prompt template table, and the training-free router.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bracketed task prefix identifying the task family of a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskToken {
    #[serde(rename = "[CAP]")]
    Cap,
    #[serde(rename = "[CLS]")]
    Cls,
    #[serde(rename = "[VQA]")]
    Vqa,
    #[serde(rename = "[VG]")]
    Vg,
    #[serde(rename = "[REF]")]
    Ref,
    #[serde(rename = "[SEG]")]
    Seg,
    #[serde(rename = "[CCD]")]
    Ccd,
}

impl TaskToken {
    pub const ALL: [TaskToken; 7] = [
        TaskToken::Cap,
        TaskToken::Cls,
        TaskToken::Vqa,
        TaskToken::Vg,
        TaskToken::Ref,
        TaskToken::Seg,
        TaskToken::Ccd,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskToken::Cap => "[CAP]",
            TaskToken::Cls => "[CLS]",
            TaskToken::Vqa => "[VQA]",
            TaskToken::Vg => "[VG]",
            TaskToken::Ref => "[REF]",
            TaskToken::Seg => "[SEG]",
            TaskToken::Ccd => "[CCD]",
        }
    }
}

impl fmt::Display for TaskToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskToken {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskToken::ALL
            .iter()
            .find(|t| t.as_str() == s)
            .copied()
            .ok_or_else(|| Error::Routing(format!("unknown task token {s:?}")))
    }
}

/// Visual granularity a sample operates at; selects the expert.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum GranularityLevel {
    Image,
    Region,
    Pixel,
}

impl GranularityLevel {
    pub const ALL: [GranularityLevel; 3] = [
        GranularityLevel::Image,
        GranularityLevel::Region,
        GranularityLevel::Pixel,
    ];

    /// Expert index inside a granularity-routed MoE block.
    pub fn expert_index(&self) -> usize {
        match self {
            GranularityLevel::Image => 0,
            GranularityLevel::Region => 1,
            GranularityLevel::Pixel => 2,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            GranularityLevel::Image => "image",
            GranularityLevel::Region => "region",
            GranularityLevel::Pixel => "pixel",
        }
    }
}

impl fmt::Display for GranularityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Version of the template wording below; bump on any text change.
pub const TEMPLATE_TABLE_VERSION: u32 = 1;

/// One entry of the prompt template table. Bodies contain `{slot}`
/// placeholders; template ids are 1-based within a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub task: TaskToken,
    pub id: u32,
    pub image_count: usize,
    pub body: &'static str,
}

const TEMPLATES: &[PromptTemplate] = &[
    PromptTemplate {
        task: TaskToken::Cap,
        id: 1,
        image_count: 1,
        body: "Please provide a brief description of the image.",
    },
    PromptTemplate {
        task: TaskToken::Cls,
        id: 1,
        image_count: 1,
        body: "Choose the best category describe the image from: {class_names}. Only output the category.",
    },
    PromptTemplate {
        task: TaskToken::Vqa,
        id: 1,
        image_count: 1,
        body: "{question}.",
    },
    PromptTemplate {
        task: TaskToken::Vg,
        id: 1,
        image_count: 1,
        body: "{object}.",
    },
    PromptTemplate {
        task: TaskToken::Seg,
        id: 1,
        image_count: 1,
        body: "Can you segment the {class_name} in this image?",
    },
    PromptTemplate {
        task: TaskToken::Seg,
        id: 2,
        image_count: 1,
        body: "Please segment the {class_name} in this image.",
    },
    PromptTemplate {
        task: TaskToken::Seg,
        id: 3,
        image_count: 1,
        body: "What is {class_name} in this image? Please respond with segmentation mask.",
    },
    PromptTemplate {
        task: TaskToken::Seg,
        id: 4,
        image_count: 1,
        body: "What is {class_name} in this image? Please output segmentation mask.",
    },
    // Two-image change detection rides on the [SEG] token.
    PromptTemplate {
        task: TaskToken::Seg,
        id: 5,
        image_count: 2,
        body: "Please Segment the building area in the images that have changed in the second image..",
    },
    PromptTemplate {
        task: TaskToken::Ccd,
        id: 1,
        image_count: 2,
        body: "Please briefly describe the changes in these two images.",
    },
    PromptTemplate {
        task: TaskToken::Ccd,
        id: 2,
        image_count: 2,
        body: "What are the differences between these two images?",
    },
    PromptTemplate {
        task: TaskToken::Ccd,
        id: 3,
        image_count: 2,
        body: "Can you describe the key changes in the second image compared to the first?",
    },
    PromptTemplate {
        task: TaskToken::Ccd,
        id: 4,
        image_count: 2,
        body: "What visual changes can be observed between the two images?",
    },
    PromptTemplate {
        task: TaskToken::Ccd,
        id: 5,
        image_count: 2,
        body: "Highlight the main differences between the two images.",
    },
    PromptTemplate {
        task: TaskToken::Ccd,
        id: 6,
        image_count: 2,
        body: "What has been altered in the second image compared to the first one?",
    },
    PromptTemplate {
        task: TaskToken::Ccd,
        id: 7,
        image_count: 2,
        body: "Describe any noticeable transformations in these images.",
    },
    PromptTemplate {
        task: TaskToken::Ccd,
        id: 8,
        image_count: 2,
        body: "What specific details have changed from the first image to the second?",
    },
    PromptTemplate {
        task: TaskToken::Ccd,
        id: 9,
        image_count: 2,
        body: "Point out the adjustments made between these two images.",
    },
    PromptTemplate {
        task: TaskToken::Ccd,
        id: 10,
        image_count: 2,
        body: "What are the most significant changes visible in the images?",
    },
];

pub fn template_catalog() -> &'static [PromptTemplate] {
    TEMPLATES
}

/// Render a prompt: `<image>` markers (one per image, space separated),
/// newline, task token, one space, template body with slots substituted.
pub fn build_prompt(
    task: TaskToken,
    template_id: u32,
    slots: &BTreeMap<String, String>,
    images: usize,
) -> Result<String> {
    let template = TEMPLATES
        .iter()
        .find(|t| t.task == task && t.id == template_id)
        .ok_or_else(|| {
            Error::Template(format!("no template {template_id} for task {task}"))
        })?;
    if images != template.image_count {
        return Err(Error::Template(format!(
            "template {task} #{template_id} takes {} image(s), got {images}",
            template.image_count
        )));
    }
    let body = substitute_slots(template.body, slots)?;
    let markers = vec!["<image>"; images].join(" ");
    Ok(format!("{markers}\n{} {body}", task.as_str()))
}

fn substitute_slots(body: &str, slots: &BTreeMap<String, String>) -> Result<String> {
    let mut out = String::with_capacity(body.len());
    let mut used: Vec<&str> = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}').ok_or_else(|| {
            Error::Template("unterminated slot placeholder".into())
        })?;
        let name = &after[..close];
        let value = slots
            .get(name)
            .ok_or_else(|| Error::Template(format!("missing slot {name:?}")))?;
        out.push_str(value);
        used.push(name);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    for name in slots.keys() {
        if !used.contains(&name.as_str()) {
            return Err(Error::Template(format!("unused slot {name:?}")));
        }
    }
    Ok(out)
}

/// Map the prompt's single task token to its granularity level.
/// Zero or multiple task tokens is a routing error.
pub fn route_granularity(prompt: &str) -> Result<GranularityLevel> {
    let mut found: Option<TaskToken> = None;
    let mut count = 0usize;
    for token in TaskToken::ALL {
        let occurrences = prompt.matches(token.as_str()).count();
        count += occurrences;
        if occurrences > 0 {
            found = Some(token);
        }
    }
    match (found, count) {
        (Some(token), 1) => Ok(level_of(token)),
        (_, 0) => Err(Error::Routing("no task token in prompt".into())),
        (_, n) => Err(Error::Routing(format!("{n} task tokens in prompt"))),
    }
}

/// Lenient variant: falls back to image level with a warning flag instead
/// of failing on zero or multiple tokens.
pub fn route_granularity_lenient(prompt: &str) -> (GranularityLevel, bool) {
    match route_granularity(prompt) {
        Ok(level) => (level, false),
        Err(_) => (GranularityLevel::Image, true),
    }
}

fn level_of(token: TaskToken) -> GranularityLevel {
    match token {
        TaskToken::Cap | TaskToken::Cls | TaskToken::Vqa | TaskToken::Ccd => {
            GranularityLevel::Image
        }
        TaskToken::Vg | TaskToken::Ref => GranularityLevel::Region,
        // Change detection prompts also carry [SEG], so two-image change
        // detection routes pixel-level as well.
        TaskToken::Seg => GranularityLevel::Pixel,
    }
}
