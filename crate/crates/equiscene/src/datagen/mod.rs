//! Moving-digits-on-static-backgrounds dataset generation.
//!
//! Digits (28x28 intensity sprites) are placed on a 64x64 canvas over a
//! procedurally generated background and moved by per-step rotations or
//! translations applied cumulatively, with steps resampled whenever any
//! visible object mass would leave the canvas.

pub mod colors;
pub mod mnist;
mod store;
pub mod synth;
mod trajectory;

pub use mnist::load_mnist;
pub use store::{gen_dataset, DatasetManifest, DatasetReader, FORMAT_VERSION};
pub use synth::synthetic_corpus;
pub use trajectory::{
    composite_alpha_over, gen_pooled_sequence, ground_truth_affine, placement_leaves_canvas,
    render_frame, sample_training_pair, sequence_has_rich_motion, simulate_sequence,
    simulate_track, simulate_trajectory, warped_alpha_for_placement, warped_alpha_mask, TrackSim,
};

use crate::error::{Error, Result};
use crate::frame::CANVAS;
use crate::rng::{pick, stream, uniform_u32, uniform_usize, TAG_BACKGROUND};
use crate::warp::AffineParams;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DIGIT_SIZE: usize = 28;
/// Visibility threshold for the boundary rule and mask oracles.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One digit sprite: 28x28 intensities in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitSprite {
    pub intensity: Vec<f32>,
    pub label: u8,
    pub split: Split,
    pub source_index: u32,
}

impl DigitSprite {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.intensity[y * DIGIT_SIZE + x] as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diamond {
    pub center: (i32, i32),
    pub radius: u32,
    pub color_name: String,
    pub color: [f64; 3],
}

/// Background: a base color with five diamonds composited in order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackgroundSpec {
    pub id: u32,
    pub split: Split,
    pub base_color_name: String,
    pub base_color: [f64; 3],
    pub diamonds: Vec<Diamond>,
    /// (3, 64, 64) composite, kept out of the JSON manifest.
    #[serde(skip)]
    pub rendered: Vec<f64>,
}

impl BackgroundSpec {
    pub fn pixel(&self, c: usize, y: usize, x: usize) -> f64 {
        self.rendered[(c * CANVAS + y) * CANVAS + x]
    }
}

pub const NUM_DIAMONDS: usize = 5;
pub const RADIUS_MIN: u32 = 7;
pub const RADIUS_MAX: u32 = 10;

/// Randomly generated background satisfying the distinct-color rule.
pub fn gen_background(rng: &mut ChaCha8Rng, id: u32, split: Split) -> BackgroundSpec {
    let mut chosen: Vec<(u8, u8, u8)> = Vec::with_capacity(NUM_DIAMONDS + 1);
    let mut next_color = |rng: &mut ChaCha8Rng| -> (&'static str, [f64; 3]) {
        loop {
            let entry = pick(rng, &colors::NAMED_COLORS);
            let rgb = (entry.1, entry.2, entry.3);
            if !chosen.contains(&rgb) {
                chosen.push(rgb);
                return (entry.0, colors::as_rgb(entry));
            }
        }
    };
    let (base_name, base_color) = next_color(rng);
    let diamonds: Vec<Diamond> = (0..NUM_DIAMONDS)
        .map(|_| {
            let center = (
                uniform_u32(rng, CANVAS as u32) as i32,
                uniform_u32(rng, CANVAS as u32) as i32,
            );
            let radius = RADIUS_MIN + uniform_u32(rng, RADIUS_MAX - RADIUS_MIN + 1);
            let (name, color) = next_color(rng);
            Diamond { center, radius, color_name: name.to_string(), color }
        })
        .collect();

    let mut rendered = vec![0.0f64; 3 * CANVAS * CANVAS];
    for y in 0..CANVAS {
        for x in 0..CANVAS {
            let mut px = base_color;
            // Later diamonds overdraw earlier ones; membership is the L1 ball.
            for d in &diamonds {
                let l1 = (x as i32 - d.center.0).abs() + (y as i32 - d.center.1).abs();
                if l1 <= d.radius as i32 {
                    px = d.color;
                }
            }
            for c in 0..3 {
                rendered[(c * CANVAS + y) * CANVAS + x] = px[c];
            }
        }
    }
    BackgroundSpec {
        id,
        split,
        base_color_name: base_name.to_string(),
        base_color,
        diamonds,
        rendered,
    }
}

/// One inter-frame motion step, in the figure convention: positive angles
/// rotate counterclockwise and positive dy moves up, both with a bottom-left
/// origin. The pixel-frame realization lives in [`trajectory`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectoryStep {
    Rotation { degrees: i32 },
    Translation { dx: i32, dy: i32 },
}

/// Object placement: digit center position (pixel coords) plus cumulative
/// rotation angle (figure convention). Rigid motions close under
/// composition, so this pair describes any reachable placement exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub center: (f64, f64),
    pub angle_degrees: f64,
}

/// One digit's trajectory through a sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectTrack {
    pub sprite: DigitSprite,
    /// Top-left canvas pixel of the initial (axis-aligned) placement.
    pub initial_position: (i32, i32),
    pub steps: Vec<TrajectoryStep>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoSequence {
    pub id: u32,
    pub split: Split,
    pub seed: u64,
    pub background_id: u32,
    pub objects: Vec<ObjectTrack>,
    #[serde(skip)]
    pub frames: Vec<crate::frame::Frame>,
}

impl VideoSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// The single-object track; manipulation and statistics semantics are
    /// defined for N = 1.
    pub fn object(&self) -> &ObjectTrack {
        &self.objects[0]
    }
}

/// How sprites are sourced, recorded in the manifest for reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpriteSource {
    Mnist { dir: String },
    Synthetic { seed: u64, train_count: usize, test_count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Frames per sequence.
    pub m: usize,
    /// Digits per video. Manipulation semantics assume 1.
    pub n: usize,
    pub canvas: usize,
    pub digit_size: usize,
    pub num_backgrounds_per_split: usize,
    pub rotation_set: Vec<i32>,
    pub translation_set: Vec<i32>,
    pub seed: u64,
    pub max_redo: usize,
    pub sprite_source: SpriteSource,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            m: 5,
            n: 1,
            canvas: CANVAS,
            digit_size: DIGIT_SIZE,
            num_backgrounds_per_split: 64,
            rotation_set: vec![-15, -12, -9, -6, -3, 3, 6, 9, 12, 15],
            translation_set: vec![-10, -8, -6, -4, -2, 2, 4, 6, 8, 10],
            seed: 0,
            max_redo: 100,
            sprite_source: SpriteSource::Synthetic { seed: 0, train_count: 6000, test_count: 1000 },
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidDimensions(format!("m = {} < 2", self.m)));
        }
        if self.n == 0 {
            return Err(Error::InvalidDimensions("n = 0".into()));
        }
        if self.canvas != CANVAS || self.digit_size != DIGIT_SIZE {
            return Err(Error::InvalidDimensions(format!(
                "canvas {}x / digit {} unsupported (expected {CANVAS}/{DIGIT_SIZE})",
                self.canvas, self.digit_size
            )));
        }
        if self.rotation_set.contains(&0) {
            return Err(Error::InvalidDimensions("rotation_set contains 0".into()));
        }
        if self.translation_set.contains(&0) {
            return Err(Error::InvalidDimensions("translation_set contains 0".into()));
        }
        if self.rotation_set.is_empty() && self.translation_set.is_empty() {
            return Err(Error::InvalidDimensions("both step value sets empty".into()));
        }
        Ok(())
    }

    /// Stable hash of the serialized config (FNV-1a 64).
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a(json.as_bytes()))
    }

    pub fn background_pool(&self, split: Split) -> Vec<BackgroundSpec> {
        (0..self.num_backgrounds_per_split as u32)
            .map(|id| {
                let split_tag = match split {
                    Split::Train => 0,
                    Split::Test => 1,
                };
                let mut rng = stream(self.seed, &[TAG_BACKGROUND, split_tag, id as u64]);
                gen_background(&mut rng, id, split)
            })
            .collect()
    }

    /// Materialize the sprite corpus for both splits.
    pub fn load_sprites(&self) -> Result<(Vec<DigitSprite>, Vec<DigitSprite>)> {
        match &self.sprite_source {
            SpriteSource::Mnist { dir } => load_mnist(std::path::Path::new(dir)),
            SpriteSource::Synthetic { seed, train_count, test_count } => {
                Ok(synthetic_corpus(*seed, *train_count, *test_count))
            }
        }
    }
}

/// FNV-1a 64, used for config hashing and name-keyed init streams.
pub fn fnv1a_pub(bytes: &[u8]) -> u64 {
    fnv1a(bytes)
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Uniform step: rotation or translation with probability 1/2 each (always
/// the non-empty kind if one value set is empty), values uniform over their
/// sets, translation axes sampled independently.
pub fn sample_step(rng: &mut ChaCha8Rng, config: &DatasetConfig) -> TrajectoryStep {
    let rotation = if config.rotation_set.is_empty() {
        false
    } else if config.translation_set.is_empty() {
        true
    } else {
        uniform_u32(rng, 2) == 0
    };
    if rotation {
        TrajectoryStep::Rotation { degrees: *pick(rng, &config.rotation_set) }
    } else {
        TrajectoryStep::Translation {
            dx: *pick(rng, &config.translation_set),
            dy: *pick(rng, &config.translation_set),
        }
    }
}

impl ObjectTrack {
    /// Center of the initial axis-aligned placement.
    pub fn initial_center(&self) -> (f64, f64) {
        (
            self.initial_position.0 as f64 + (DIGIT_SIZE as f64 - 1.0) / 2.0,
            self.initial_position.1 as f64 + (DIGIT_SIZE as f64 - 1.0) / 2.0,
        )
    }

    /// Pose before any step is applied.
    pub fn initial_pose(&self) -> Pose {
        Pose { center: self.initial_center(), angle_degrees: 0.0 }
    }

    /// Poses for frames 0..=len(steps), steps applied cumulatively.
    pub fn poses(&self) -> Vec<Pose> {
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        let mut pose = self.initial_pose();
        out.push(pose);
        for step in &self.steps {
            pose = trajectory::apply_step(pose, *step);
            out.push(pose);
        }
        out
    }

    /// Cumulative pixel-frame placement map for frame `k`: sends the initial
    /// placement to the frame-`k` placement.
    pub fn placement(&self, k: usize) -> AffineParams {
        trajectory::placement_affine(self.poses()[k], self.initial_center())
    }
}

pub(crate) fn pick_idx(rng: &mut ChaCha8Rng, n: usize) -> usize {
    uniform_usize(rng, n)
}
