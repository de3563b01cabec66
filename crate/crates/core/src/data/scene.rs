//! Deterministic synthetic scenes: colored rectangles and ellipses on a
//! textured background, with analytically exact ground truth.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::codec::{BBox, Mask};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
}

/// (class name, shape kind, 1-based label id) catalog. Change masks use
/// the extra "changed" label appended after these.
pub const CLASS_CATALOG: [(&str, ShapeKind); 4] = [
    ("building", ShapeKind::Rectangle),
    ("field", ShapeKind::Rectangle),
    ("lake", ShapeKind::Ellipse),
    ("tank", ShapeKind::Ellipse),
];

pub const COLOR_CATALOG: [(&str, u8); 4] =
    [("dark", 60), ("gray", 120), ("bright", 180), ("white", 240)];

const BACKGROUND_NOISE: u8 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    /// Index into [`CLASS_CATALOG`]; the mask label id is this + 1.
    pub class: usize,
    /// Index into [`COLOR_CATALOG`].
    pub color: usize,
    pub bbox: BBox,
}

impl Shape {
    pub fn class_name(&self) -> &'static str {
        CLASS_CATALOG[self.class].0
    }

    pub fn kind(&self) -> ShapeKind {
        CLASS_CATALOG[self.class].1
    }

    pub fn color_name(&self) -> &'static str {
        COLOR_CATALOG[self.color].0
    }

    pub fn area(&self) -> u64 {
        ((self.bbox.x2 - self.bbox.x1) as u64) * ((self.bbox.y2 - self.bbox.y1) as u64)
    }

    fn covers(&self, x: usize, y: usize) -> bool {
        let (x, y) = (x as f64 + 0.5, y as f64 + 0.5);
        let (x1, y1, x2, y2) = (
            self.bbox.x1 as f64,
            self.bbox.y1 as f64,
            self.bbox.x2 as f64,
            self.bbox.y2 as f64,
        );
        if x < x1 || x > x2 || y < y1 || y > y2 {
            return false;
        }
        match self.kind() {
            ShapeKind::Rectangle => true,
            ShapeKind::Ellipse => {
                let (cx, cy) = ((x1 + x2) / 2.0, (y1 + y2) / 2.0);
                let (rx, ry) = ((x2 - x1) / 2.0, (y2 - y1) / 2.0);
                let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
                dx * dx + dy * dy <= 1.0
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneKnobs {
    pub canvas: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub min_size: usize,
    pub max_size: usize,
}

impl Default for SceneKnobs {
    fn default() -> Self {
        SceneKnobs {
            canvas: 32,
            min_shapes: 1,
            max_shapes: 3,
            min_size: 6,
            max_size: 12,
        }
    }
}

impl SceneKnobs {
    pub fn validate(&self) -> Result<()> {
        if self.canvas < 16 {
            return Err(Error::Generation(format!(
                "canvas {} too small (need at least twice the patch size)",
                self.canvas
            )));
        }
        if self.min_shapes == 0
            || self.min_shapes > self.max_shapes
            || self.max_shapes > CLASS_CATALOG.len()
        {
            return Err(Error::Generation(format!(
                "shape count range {}..={} invalid (classes must be distinct per scene, max {})",
                self.min_shapes,
                self.max_shapes,
                CLASS_CATALOG.len()
            )));
        }
        if self.min_size < 4 || self.min_size > self.max_size || self.max_size >= self.canvas {
            return Err(Error::Generation(format!(
                "shape size range {}..={} invalid for canvas {}",
                self.min_size, self.max_size, self.canvas
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub canvas: usize,
    pub shapes: Vec<Shape>,
}

/// Deterministic scene: classes are distinct within a scene (so captions
/// mention each class exactly once) and boxes never overlap (so masks,
/// boxes, and captions are mutually exact).
pub fn generate_scene(seed: u64, knobs: &SceneKnobs) -> Result<SceneSpec> {
    knobs.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n_shapes = rng.gen_range(knobs.min_shapes..=knobs.max_shapes);
    let mut class_order: Vec<usize> = (0..CLASS_CATALOG.len()).collect();
    class_order.shuffle(&mut rng);
    let mut shapes: Vec<Shape> = Vec::with_capacity(n_shapes);
    for &class in class_order.iter().take(n_shapes) {
        let shape = place_shape(&mut rng, knobs, class, &shapes)?;
        shapes.push(shape);
    }
    Ok(SceneSpec {
        seed,
        canvas: knobs.canvas,
        shapes,
    })
}

fn place_shape<R: Rng>(
    rng: &mut R,
    knobs: &SceneKnobs,
    class: usize,
    placed: &[Shape],
) -> Result<Shape> {
    let color = rng.gen_range(0..COLOR_CATALOG.len());
    for _ in 0..200 {
        let w = rng.gen_range(knobs.min_size..=knobs.max_size) as u32;
        let h = rng.gen_range(knobs.min_size..=knobs.max_size) as u32;
        let x1 = rng.gen_range(0..=(knobs.canvas as u32 - w));
        let y1 = rng.gen_range(0..=(knobs.canvas as u32 - h));
        let bbox = BBox::new(x1, y1, x1 + w, y1 + h)?;
        let candidate = Shape { class, color, bbox };
        if placed.iter().all(|s| !boxes_overlap(s.bbox, bbox)) {
            return Ok(candidate);
        }
    }
    Err(Error::Generation(format!(
        "could not place {} without overlap; fewer or smaller shapes needed",
        CLASS_CATALOG[class].0
    )))
}

fn boxes_overlap(a: BBox, b: BBox) -> bool {
    a.x1 < b.x2 && b.x1 < a.x2 && a.y1 < b.y2 && b.y1 < a.y2
}

impl SceneSpec {
    /// Label grid: background 0, shape pixels carry class id + 1.
    pub fn mask(&self) -> Mask {
        let mut labels = vec![0u32; self.canvas * self.canvas];
        for shape in &self.shapes {
            for y in 0..self.canvas {
                for x in 0..self.canvas {
                    if shape.covers(x, y) {
                        labels[y * self.canvas + x] = shape.class as u32 + 1;
                    }
                }
            }
        }
        Mask::new(self.canvas, self.canvas, labels).expect("canvas is positive")
    }

    /// Grayscale rendering: shapes at their color level over deterministic
    /// low-amplitude background noise.
    pub fn image(&self) -> Vec<u8> {
        let mut noise_rng = ChaCha20Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut gray = vec![0u8; self.canvas * self.canvas];
        for v in gray.iter_mut() {
            *v = noise_rng.gen_range(0..=BACKGROUND_NOISE);
        }
        for shape in &self.shapes {
            let level = COLOR_CATALOG[shape.color].1;
            for y in 0..self.canvas {
                for x in 0..self.canvas {
                    if shape.covers(x, y) {
                        gray[y * self.canvas + x] = level;
                    }
                }
            }
        }
        gray
    }

    /// Scene class: the class of the largest shape (first wins ties).
    pub fn class_label(&self) -> Option<&'static str> {
        self.shapes
            .iter()
            .max_by(|a, b| a.area().cmp(&b.area()))
            .map(Shape::class_name)
    }

    /// Invertible caption: "a {color} {class} at the {position}", shapes
    /// joined by " and ".
    pub fn caption(&self) -> String {
        if self.shapes.is_empty() {
            return "an empty scene".to_string();
        }
        self.shapes
            .iter()
            .map(|s| {
                format!(
                    "a {} {} at the {}",
                    s.color_name(),
                    s.class_name(),
                    position_name(s.bbox, self.canvas)
                )
            })
            .collect::<Vec<_>>()
            .join(" and ")
    }

    pub fn classes_present(&self) -> Vec<&'static str> {
        self.shapes.iter().map(Shape::class_name).collect()
    }
}

/// Nine-zone position of a box center: thirds in each axis.
pub fn position_name(bbox: BBox, canvas: usize) -> &'static str {
    let cx = (bbox.x1 + bbox.x2) as f64 / 2.0;
    let cy = (bbox.y1 + bbox.y2) as f64 / 2.0;
    let third = canvas as f64 / 3.0;
    let col = (cx / third).min(2.0) as usize;
    let row = (cy / third).min(2.0) as usize;
    const NAMES: [[&str; 3]; 3] = [
        ["top left", "top center", "top right"],
        ["middle left", "center", "middle right"],
        ["bottom left", "bottom center", "bottom right"],
    ];
    NAMES[row][col]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChangeKind {
    Added,
    Removed,
    Moved,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChangePair {
    pub before: SceneSpec,
    pub after: SceneSpec,
    pub kind: ChangeKind,
}

/// Mutate one shape of the base scene: add a new class, remove one, or
/// move one. The change mask is the exact pixel disagreement of the two
/// scene masks.
pub fn generate_change_pair(seed: u64, knobs: &SceneKnobs) -> Result<ChangePair> {
    let before = generate_scene(seed, knobs)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5bf0_3635);
    let mut feasible = vec![ChangeKind::Removed, ChangeKind::Moved];
    if before.shapes.len() < CLASS_CATALOG.len() {
        feasible.push(ChangeKind::Added);
    }
    let kind = *feasible.choose(&mut rng).expect("non-empty");
    let mut after = before.clone();
    // The after image re-noises with its own seed but identical shape
    // geometry except the mutation.
    after.seed = seed ^ 0x0bad_cafe;
    let mut kind = kind;
    match kind {
        ChangeKind::Added => {
            let used: Vec<usize> = before.shapes.iter().map(|s| s.class).collect();
            let mut free: Vec<usize> = (0..CLASS_CATALOG.len())
                .filter(|c| !used.contains(c))
                .collect();
            free.shuffle(&mut rng);
            match place_shape(&mut rng, knobs, free[0], &before.shapes) {
                Ok(shape) => after.shapes.push(shape),
                Err(_) => {
                    // Crowded canvas: fall back to a removal.
                    kind = ChangeKind::Removed;
                    let victim = rng.gen_range(0..after.shapes.len());
                    after.shapes.remove(victim);
                }
            }
        }
        ChangeKind::Removed => {
            let victim = rng.gen_range(0..after.shapes.len());
            after.shapes.remove(victim);
        }
        ChangeKind::Moved => {
            let victim = rng.gen_range(0..after.shapes.len());
            let moved = after.shapes.remove(victim);
            let others = after.shapes.clone();
            let mut replaced = place_shape(&mut rng, knobs, moved.class, &others)?;
            // A move must actually move.
            for _ in 0..50 {
                if replaced.bbox != moved.bbox {
                    break;
                }
                replaced = place_shape(&mut rng, knobs, moved.class, &others)?;
            }
            if replaced.bbox == moved.bbox {
                return Err(Error::Generation(
                    "no free position to move the shape to".into(),
                ));
            }
            replaced.color = moved.color;
            after.shapes.push(replaced);
        }
    }
    Ok(ChangePair {
        before,
        after,
        kind,
    })
}

impl ChangePair {
    /// Pixels whose labels differ between the two scenes, as a binary
    /// mask with the given change label id.
    pub fn change_mask(&self, change_label: u32) -> Mask {
        let before = self.before.mask();
        let after = self.after.mask();
        let labels = before
            .labels
            .iter()
            .zip(&after.labels)
            .map(|(b, a)| if b == a { 0 } else { change_label })
            .collect();
        Mask::new(before.width, before.height, labels).expect("same canvas")
    }

    /// Invertible change caption matching the mutation kind.
    pub fn caption(&self) -> String {
        match self.kind {
            ChangeKind::Added => {
                let shape = self.after.shapes.last().expect("added shape");
                format!(
                    "a {} {} was added at the {}",
                    shape.color_name(),
                    shape.class_name(),
                    position_name(shape.bbox, self.after.canvas)
                )
            }
            ChangeKind::Removed => {
                let removed = self
                    .before
                    .shapes
                    .iter()
                    .find(|s| !self.after.shapes.contains(s))
                    .expect("removed shape");
                format!(
                    "the {} {} at the {} was removed",
                    removed.color_name(),
                    removed.class_name(),
                    position_name(removed.bbox, self.before.canvas)
                )
            }
            ChangeKind::Moved => {
                let old = self
                    .before
                    .shapes
                    .iter()
                    .find(|s| !self.after.shapes.contains(s))
                    .expect("moved shape origin");
                let new = self
                    .after
                    .shapes
                    .iter()
                    .find(|s| !self.before.shapes.contains(s))
                    .expect("moved shape destination");
                format!(
                    "the {} {} moved from the {} to the {}",
                    old.color_name(),
                    old.class_name(),
                    position_name(old.bbox, self.before.canvas),
                    position_name(new.bbox, self.after.canvas)
                )
            }
        }
    }
}
