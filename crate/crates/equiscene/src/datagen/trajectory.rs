//! Trajectory simulation, frame rendering, and ground-truth transforms.
//!
//! Figure-to-pixel convention, handled here and only here: the step values
//! use a bottom-left origin with counterclockwise-positive angles, while the
//! canvas is y-down, so a rotation step of `+d` degrees becomes a pixel-frame
//! rotation by `-d` about the digit's current center and a translation step
//! `(dx, dy)` becomes a pixel translation `(dx, -dy)`.

use super::{
    BackgroundSpec, DatasetConfig, DigitSprite, ObjectTrack, Pose, TrajectoryStep,
    VideoSequence, ALPHA_MIN, DIGIT_SIZE,
};
use crate::error::{Error, Result};
use crate::frame::{Frame, CANVAS, FRAME_LEN};
use crate::rng::uniform_u32;
use crate::warp::{compose, invert, make_rotation, AffineParams, CoordFrame};
use rand_chacha::ChaCha8Rng;

pub(super) fn apply_step(pose: Pose, step: TrajectoryStep) -> Pose {
    match step {
        TrajectoryStep::Rotation { degrees } => Pose {
            center: pose.center,
            angle_degrees: pose.angle_degrees + degrees as f64,
        },
        TrajectoryStep::Translation { dx, dy } => Pose {
            center: (pose.center.0 + dx as f64, pose.center.1 - dy as f64),
            angle_degrees: pose.angle_degrees,
        },
    }
}

/// Pixel-frame map sending the initial placement to `pose`:
/// p -> R(-angle) * (p - c0) + center.
pub(super) fn placement_affine(pose: Pose, initial_center: (f64, f64)) -> AffineParams {
    let r = make_rotation(-pose.angle_degrees, (0.0, 0.0), CoordFrame::Pixel);
    let (c0x, c0y) = initial_center;
    AffineParams::new(
        r.a11,
        r.a12,
        pose.center.0 - (r.a11 * c0x + r.a12 * c0y),
        r.a21,
        r.a22,
        pose.center.1 - (r.a21 * c0x + r.a22 * c0y),
        CoordFrame::Pixel,
    )
}

/// Bilinear sample of the initially-placed sprite field at a canvas point
/// mapped through `inv_placement` (the placement inverse). Zero outside the
/// sprite.
fn sample_alpha(
    sprite: &DigitSprite,
    initial_position: (i32, i32),
    inv_placement: &AffineParams,
    qx: f64,
    qy: f64,
) -> f64 {
    let (sx, sy) = inv_placement.apply(qx, qy);
    let lx = sx - initial_position.0 as f64;
    let ly = sy - initial_position.1 as f64;
    let x0 = lx.floor();
    let y0 = ly.floor();
    let (wx, wy) = (lx - x0, ly - y0);
    let mut acc = 0.0;
    for (dy, dx, w) in [
        (0.0, 0.0, (1.0 - wx) * (1.0 - wy)),
        (0.0, 1.0, wx * (1.0 - wy)),
        (1.0, 0.0, (1.0 - wx) * wy),
        (1.0, 1.0, wx * wy),
    ] {
        let (px, py) = (x0 + dx, y0 + dy);
        if px >= 0.0 && py >= 0.0 && (px as usize) < DIGIT_SIZE && (py as usize) < DIGIT_SIZE {
            acc += w * sprite.at(px as usize, py as usize);
        }
    }
    acc
}

/// Full-canvas alpha mask of a track under an arbitrary placement map.
pub fn warped_alpha_for_placement(track: &ObjectTrack, placement: &AffineParams) -> Vec<f64> {
    let inv = invert(placement).expect("placements are rigid motions");
    let mut out = vec![0.0; CANVAS * CANVAS];
    for y in 0..CANVAS {
        for x in 0..CANVAS {
            out[y * CANVAS + x] =
                sample_alpha(&track.sprite, track.initial_position, &inv, x as f64, y as f64);
        }
    }
    out
}

/// Full-canvas alpha mask of a track at one frame.
pub fn warped_alpha_mask(track: &ObjectTrack, frame: usize) -> Vec<f64> {
    warped_alpha_for_placement(track, &track.placement(frame))
}

/// Whether visible object mass escapes the canvas under `placement`.
pub fn placement_leaves_canvas(track: &ObjectTrack, placement: &AffineParams) -> bool {
    leaves_canvas(&track.sprite, track.initial_position, placement)
}

/// True when any visible alpha (> ALPHA_MIN) of the placed sprite falls
/// outside the canvas under `placement`. Evaluates the warped alpha field on
/// the out-of-canvas region the transformed sprite box can reach, so it is
/// exactly the padded-canvas criterion.
fn leaves_canvas(
    sprite: &DigitSprite,
    initial_position: (i32, i32),
    placement: &AffineParams,
) -> bool {
    let (px, py) = (initial_position.0 as f64, initial_position.1 as f64);
    let d = DIGIT_SIZE as f64;
    // Transformed sprite box, padded by the bilinear footprint.
    let corners = [
        placement.apply(px - 1.0, py - 1.0),
        placement.apply(px + d, py - 1.0),
        placement.apply(px - 1.0, py + d),
        placement.apply(px + d, py + d),
    ];
    let min_x = corners.iter().map(|c| c.0).fold(f64::MAX, f64::min).floor() as i64 - 1;
    let max_x = corners.iter().map(|c| c.0).fold(f64::MIN, f64::max).ceil() as i64 + 1;
    let min_y = corners.iter().map(|c| c.1).fold(f64::MAX, f64::min).floor() as i64 - 1;
    let max_y = corners.iter().map(|c| c.1).fold(f64::MIN, f64::max).ceil() as i64 + 1;
    let inv = invert(placement).expect("placements are rigid motions");
    let side = CANVAS as i64;
    for qy in min_y..=max_y {
        for qx in min_x..=max_x {
            if qx >= 0 && qx < side && qy >= 0 && qy < side {
                continue;
            }
            if sample_alpha(sprite, initial_position, &inv, qx as f64, qy as f64) > ALPHA_MIN {
                return true;
            }
        }
    }
    false
}

/// A simulated track plus its per-frame alpha masks.
pub struct TrackSim {
    pub track: ObjectTrack,
    pub masks: Vec<Vec<f64>>,
}

/// Simulate one object: random initial placement, then M-1 steps applied
/// cumulatively, resampling any step whose result would leave the canvas.
pub fn simulate_track(
    sprite: &DigitSprite,
    rng: &mut ChaCha8Rng,
    config: &DatasetConfig,
) -> Result<TrackSim> {
    let span = (CANVAS - DIGIT_SIZE + 1) as u32;
    let initial_position =
        (uniform_u32(rng, span) as i32, uniform_u32(rng, span) as i32);
    let mut track = ObjectTrack {
        sprite: sprite.clone(),
        initial_position,
        steps: Vec::with_capacity(config.m - 1),
    };
    let mut pose = track.initial_pose();
    for _ in 1..config.m {
        let mut accepted = None;
        for _attempt in 0..config.max_redo {
            let step = super::sample_step(rng, config);
            let cand = apply_step(pose, step);
            let placement = placement_affine(cand, track.initial_center());
            if !leaves_canvas(sprite, initial_position, &placement) {
                accepted = Some((step, cand));
                break;
            }
        }
        let Some((step, cand)) = accepted else {
            return Err(Error::Generation(format!(
                "no in-canvas step found after {} redraws (initial position {:?})",
                config.max_redo, initial_position
            )));
        };
        track.steps.push(step);
        pose = cand;
    }
    let masks = (0..config.m).map(|k| warped_alpha_mask(&track, k)).collect();
    Ok(TrackSim { track, masks })
}

/// Composite an alpha mask over a background: white foreground,
/// out = alpha + (1 - alpha) * background, clamped to [0, 1].
pub fn composite_alpha_over(mask: &[f64], background: &[f64]) -> Vec<f64> {
    debug_assert_eq!(mask.len(), CANVAS * CANVAS);
    debug_assert_eq!(background.len(), FRAME_LEN);
    let mut out = vec![0.0f64; FRAME_LEN];
    for c in 0..3 {
        for i in 0..CANVAS * CANVAS {
            let a = mask[i];
            out[c * CANVAS * CANVAS + i] =
                (a + (1.0 - a) * background[c * CANVAS * CANVAS + i]).clamp(0.0, 1.0);
        }
    }
    out
}

fn to_frame(rgb: Vec<f64>) -> Frame {
    Frame::new(rgb.into_iter().map(|v| v as f32).collect()).expect("frame sized")
}

/// Render a sprite at a pose over a background.
pub fn render_frame(sprite: &DigitSprite, pose: Pose, background: &BackgroundSpec) -> Frame {
    // Positionless track stand-in: place the sprite so that pose math sees
    // the same center convention as simulation.
    let track = ObjectTrack {
        sprite: sprite.clone(),
        initial_position: (0, 0),
        steps: Vec::new(),
    };
    let placement = placement_affine(pose, track.initial_center());
    let inv = invert(&placement).expect("rigid");
    let mut mask = vec![0.0; CANVAS * CANVAS];
    for y in 0..CANVAS {
        for x in 0..CANVAS {
            mask[y * CANVAS + x] = sample_alpha(sprite, (0, 0), &inv, x as f64, y as f64);
        }
    }
    to_frame(composite_alpha_over(&mask, &background.rendered))
}

/// Simulate a full sequence over one background. `sprites` supplies the
/// configured N objects, composited in order.
pub fn simulate_sequence(
    sprites: &[&DigitSprite],
    background: &BackgroundSpec,
    rng: &mut ChaCha8Rng,
    config: &DatasetConfig,
    id: u32,
    seed: u64,
) -> Result<(VideoSequence, Vec<Vec<Vec<f64>>>)> {
    let sims: Vec<TrackSim> = sprites
        .iter()
        .map(|s| simulate_track(s, rng, config))
        .collect::<Result<_>>()?;
    let mut frames = Vec::with_capacity(config.m);
    for k in 0..config.m {
        let mut rgb = background.rendered.clone();
        for sim in &sims {
            rgb = composite_alpha_over(&sim.masks[k], &rgb);
        }
        frames.push(to_frame(rgb));
    }
    let mut masks = Vec::with_capacity(sims.len());
    let mut objects = Vec::with_capacity(sims.len());
    for sim in sims {
        masks.push(sim.masks);
        objects.push(sim.track);
    }
    Ok((
        VideoSequence {
            id,
            split: background.split,
            seed,
            background_id: background.id,
            objects,
            frames,
        },
        masks,
    ))
}

/// Single-object convenience wrapper around [`simulate_sequence`].
pub fn simulate_trajectory(
    sprite: &DigitSprite,
    background: &BackgroundSpec,
    rng: &mut ChaCha8Rng,
    config: &DatasetConfig,
) -> Result<VideoSequence> {
    let (seq, _) = simulate_sequence(&[sprite], background, rng, config, 0, 0)?;
    Ok(seq)
}

/// Composed pixel-frame map sending the object's frame-`i` placement to its
/// frame-`j` placement (first object's track). `i > j` yields the inverse;
/// `i == j` the identity.
pub fn ground_truth_affine(seq: &VideoSequence, i: usize, j: usize) -> Result<AffineParams> {
    let m = seq.len();
    if i >= m || j >= m {
        return Err(Error::IndexOutOfRange(format!("frame pair ({i}, {j}) of {m}")));
    }
    let track = seq.object();
    let ci = track.placement(i);
    let cj = track.placement(j);
    compose(&cj, &invert(&ci)?)
}

/// Uniform ordered pair of distinct frame indices plus the frames.
pub fn sample_training_pair<'a>(
    seq: &'a VideoSequence,
    rng: &mut ChaCha8Rng,
) -> (&'a Frame, &'a Frame, (usize, usize)) {
    let m = seq.len();
    debug_assert!(m >= 2);
    let i = uniform_u32(rng, m as u32) as usize;
    let j0 = uniform_u32(rng, m as u32 - 1) as usize;
    let j = if j0 >= i { j0 + 1 } else { j0 };
    (&seq.frames[i], &seq.frames[j], (i, j))
}

/// Figure-selection filter: at least two steps of each kind and cumulatively
/// large motion (|rotation| >= 24 degrees or |translation| >= 16 px).
pub fn sequence_has_rich_motion(seq: &VideoSequence) -> bool {
    let steps = &seq.object().steps;
    let rotations = steps
        .iter()
        .filter(|s| matches!(s, TrajectoryStep::Rotation { .. }))
        .count();
    let translations = steps.len() - rotations;
    let total_rot: i32 = steps
        .iter()
        .map(|s| match s {
            TrajectoryStep::Rotation { degrees } => *degrees,
            _ => 0,
        })
        .sum();
    let (mut tx, mut ty) = (0i32, 0i32);
    for s in steps {
        if let TrajectoryStep::Translation { dx, dy } = s {
            tx += dx;
            ty += dy;
        }
    }
    rotations >= 2
        && translations >= 2
        && (total_rot.abs() >= 24 || tx.abs() + ty.abs() >= 16)
}

/// Split-pooled sequence generation used by the dataset writer and the eval
/// pair sampler: uniform digit and background choice from the given pools.
pub fn gen_pooled_sequence(
    sprites: &[DigitSprite],
    backgrounds: &[BackgroundSpec],
    rng: &mut ChaCha8Rng,
    config: &DatasetConfig,
    id: u32,
    seed: u64,
) -> Result<(VideoSequence, Vec<Vec<Vec<f64>>>)> {
    let bg = &backgrounds[super::pick_idx(rng, backgrounds.len())];
    let chosen: Vec<&DigitSprite> =
        (0..config.n).map(|_| &sprites[super::pick_idx(rng, sprites.len())]).collect();
    simulate_sequence(&chosen, bg, rng, config, id, seed).map_err(|e| match e {
        Error::Generation(msg) => {
            Error::Generation(format!("sequence {id} (seed {seed}): {msg}"))
        }
        other => other,
    })
}
