//! Turning scenes into instruction samples and datasets on disk.

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{
    bbox_to_text, build_prompt, descriptor_to_text, encode_mask, normalize_bbox,
    route_granularity, LabelSet, TaskToken,
};
use crate::data::scene::{
    generate_change_pair, generate_scene, ChangePair, SceneKnobs, SceneSpec, CLASS_CATALOG,
};
use crate::data::{Dataset, InstructionSample, Provenance, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::model::Image;

/// Label used by change-detection masks.
pub const CHANGE_LABEL: &str = "changed";

/// The one label set every synthetic dataset shares: background, the
/// shape classes, then the change label.
pub fn catalog_label_set() -> LabelSet {
    let mut names: Vec<&str> = CLASS_CATALOG.iter().map(|(n, _)| *n).collect();
    names.push(CHANGE_LABEL);
    LabelSet::with_background(&names).expect("catalog names are valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub n_scenes: usize,
    pub n_change_pairs: usize,
    #[serde(default = "default_canvas")]
    pub canvas: usize,
    #[serde(default = "default_min_shapes")]
    pub min_shapes: usize,
    #[serde(default = "default_max_shapes")]
    pub max_shapes: usize,
    #[serde(default = "default_min_size")]
    pub min_size: usize,
    #[serde(default = "default_max_size")]
    pub max_size: usize,
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
}

fn default_canvas() -> usize {
    32
}
fn default_min_shapes() -> usize {
    1
}
fn default_max_shapes() -> usize {
    3
}
fn default_min_size() -> usize {
    8
}
fn default_max_size() -> usize {
    16
}
fn default_grid_n() -> usize {
    8
}

impl GenConfig {
    pub fn knobs(&self) -> SceneKnobs {
        SceneKnobs {
            canvas: self.canvas,
            min_shapes: self.min_shapes,
            max_shapes: self.max_shapes,
            min_size: self.min_size,
            max_size: self.max_size,
        }
    }
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_scenes: 24,
            n_change_pairs: 8,
            canvas: default_canvas(),
            min_shapes: default_min_shapes(),
            max_shapes: default_max_shapes(),
            min_size: default_min_size(),
            max_size: default_max_size(),
            grid_n: default_grid_n(),
        }
    }
}

/// Generated records plus their rendered images, keyed by relative path.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub samples: Vec<InstructionSample>,
    pub images: BTreeMap<String, (usize, usize, Vec<u8>)>,
    pub labels: LabelSet,
}

impl GeneratedDataset {
    /// In-memory dataset, no filesystem round trip.
    pub fn to_dataset(&self) -> Result<Dataset> {
        let mut groups = Vec::with_capacity(self.samples.len());
        for sample in &self.samples {
            let mut group = Vec::new();
            for path in &sample.images {
                let (w, h, gray) = self
                    .images
                    .get(path)
                    .ok_or_else(|| Error::Data(format!("missing generated image {path}")))?;
                group.push(Image::from_gray(*w, *h, gray)?);
            }
            groups.push(group);
        }
        Dataset::new(self.samples.clone(), groups)
    }
}

/// One sample per task per applicable object for every scene, plus change
/// captioning and change segmentation for every pair. Deterministic in
/// (seed, config), including all file names.
pub fn generate_dataset(seed: u64, cfg: &GenConfig) -> Result<GeneratedDataset> {
    cfg.knobs().validate()?;
    let labels = catalog_label_set();
    let mut master = ChaCha20Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    let mut images = BTreeMap::new();
    for k in 0..cfg.n_scenes {
        let scene_seed = master.next_u64();
        let scene = generate_scene(scene_seed, &cfg.knobs())?;
        let image_path = format!("images/scene_{k:05}.pgm");
        images.insert(
            image_path.clone(),
            (scene.canvas, scene.canvas, scene.image()),
        );
        samples.extend(scene_to_samples(
            &scene,
            &format!("s{k:05}"),
            &image_path,
            cfg.grid_n,
            &labels,
        )?);
    }
    for k in 0..cfg.n_change_pairs {
        let pair_seed = master.next_u64();
        let pair = generate_change_pair(pair_seed, &cfg.knobs())?;
        let path_a = format!("images/pair_{k:05}_a.pgm");
        let path_b = format!("images/pair_{k:05}_b.pgm");
        images.insert(
            path_a.clone(),
            (pair.before.canvas, pair.before.canvas, pair.before.image()),
        );
        images.insert(
            path_b.clone(),
            (pair.after.canvas, pair.after.canvas, pair.after.image()),
        );
        samples.extend(change_pair_to_samples(
            &pair,
            &format!("p{k:05}"),
            &path_a,
            &path_b,
            cfg.grid_n,
            &labels,
        )?);
    }
    Ok(GeneratedDataset {
        samples,
        images,
        labels,
    })
}

/// CLS, CAP, VQA, VG per object, SEG per present class.
pub fn scene_to_samples(
    scene: &SceneSpec,
    id_base: &str,
    image_path: &str,
    grid_n: usize,
    labels: &LabelSet,
) -> Result<Vec<InstructionSample>> {
    let mut out = Vec::new();
    let mask = scene.mask();
    let class_names: Vec<&str> = CLASS_CATALOG.iter().map(|(n, _)| *n).collect();
    let mut make = |task: TaskToken, suffix: &str, prompt: String, target: String| {
        let sample = InstructionSample {
            schema_version: SCHEMA_VERSION,
            id: format!("{id_base}-{suffix}"),
            task,
            images: vec![image_path.to_string()],
            prompt: prompt.clone(),
            target,
            granularity: route_granularity(&prompt).expect("templates carry one token"),
            provenance: Provenance::Synthetic,
        };
        out.push(sample);
    };

    // Scene classification over the whole catalog.
    if let Some(class) = scene.class_label() {
        let prompt = build_prompt(
            TaskToken::Cls,
            1,
            &slots(&[("class_names", &class_names.join(", "))]),
            1,
        )?;
        make(TaskToken::Cls, "cls", prompt, class.to_string());
    }

    // Captioning.
    let prompt = build_prompt(TaskToken::Cap, 1, &BTreeMap::new(), 1)?;
    make(TaskToken::Cap, "cap", prompt, scene.caption());

    // VQA: one presence question per catalog class, one count question.
    let present = scene.classes_present();
    for (ci, &class) in class_names.iter().enumerate() {
        let question = format!("Is there a {class} in this image?");
        let prompt = build_prompt(TaskToken::Vqa, 1, &slots(&[("question", &question)]), 1)?;
        let answer = if present.contains(&class) { "yes" } else { "no" };
        make(TaskToken::Vqa, &format!("vqa{ci}"), prompt, answer.to_string());
    }
    let prompt = build_prompt(
        TaskToken::Vqa,
        1,
        &slots(&[("question", "How many shapes are in this image?")]),
        1,
    )?;
    make(
        TaskToken::Vqa,
        "vqacount",
        prompt,
        scene.shapes.len().to_string(),
    );

    // Visual grounding per object; (color, class) pairs are unambiguous
    // because classes are distinct per scene.
    for (si, shape) in scene.shapes.iter().enumerate() {
        let object = format!("the {} {}", shape.color_name(), shape.class_name());
        let prompt = build_prompt(TaskToken::Vg, 1, &slots(&[("object", &object)]), 1)?;
        let nb = normalize_bbox(shape.bbox, scene.canvas as u32, scene.canvas as u32)?;
        make(TaskToken::Vg, &format!("vg{si}"), prompt, bbox_to_text(nb));
    }

    // Segmentation per present class, as a binary class-vs-background
    // mask; the four prompt wordings rotate deterministically.
    for (si, shape) in scene.shapes.iter().enumerate() {
        let class = shape.class_name();
        let template = (scene.seed as usize + si) % 4 + 1;
        let prompt = build_prompt(
            TaskToken::Seg,
            template as u32,
            &slots(&[("class_name", class)]),
            1,
        )?;
        let class_id = labels.id(class)?;
        let binary = mask.binarized(class_id);
        let target = descriptor_to_text(&encode_mask(&binary, grid_n, labels)?, labels)?;
        make(TaskToken::Seg, &format!("seg{si}"), prompt, target);
    }
    Ok(out)
}

/// Change captioning plus two-image change segmentation.
pub fn change_pair_to_samples(
    pair: &ChangePair,
    id_base: &str,
    path_a: &str,
    path_b: &str,
    grid_n: usize,
    labels: &LabelSet,
) -> Result<Vec<InstructionSample>> {
    let mut out = Vec::new();
    let template = (pair.before.seed as usize % 10 + 1) as u32;
    let prompt = build_prompt(TaskToken::Ccd, template, &BTreeMap::new(), 2)?;
    out.push(InstructionSample {
        schema_version: SCHEMA_VERSION,
        id: format!("{id_base}-ccd"),
        task: TaskToken::Ccd,
        images: vec![path_a.to_string(), path_b.to_string()],
        prompt: prompt.clone(),
        target: pair.caption(),
        granularity: route_granularity(&prompt)?,
        provenance: Provenance::Synthetic,
    });

    let change_id = labels.id(CHANGE_LABEL)?;
    let change_mask = pair.change_mask(change_id);
    let target = descriptor_to_text(&encode_mask(&change_mask, grid_n, labels)?, labels)?;
    let prompt = build_prompt(TaskToken::Seg, 5, &BTreeMap::new(), 2)?;
    out.push(InstructionSample {
        schema_version: SCHEMA_VERSION,
        id: format!("{id_base}-cd"),
        task: TaskToken::Seg,
        images: vec![path_a.to_string(), path_b.to_string()],
        prompt: prompt.clone(),
        target,
        granularity: route_granularity(&prompt)?,
        provenance: Provenance::Synthetic,
    });
    Ok(out)
}

fn slots(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// Write images, labels.txt, and data.jsonl under `out_dir`.
pub fn write_dataset(out_dir: &Path, dataset: &GeneratedDataset) -> Result<()> {
    std::fs::create_dir_all(out_dir.join("images"))?;
    for (path, (w, h, gray)) in &dataset.images {
        crate::codec::write_pgm_image(&out_dir.join(path), *w, *h, gray)?;
    }
    crate::data::write_labels_file(&out_dir.join("labels.txt"), &dataset.labels)?;
    crate::data::export_jsonl(&dataset.samples, &out_dir.join("data.jsonl"))?;
    Ok(())
}
