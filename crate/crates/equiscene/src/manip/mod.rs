//! Scene manipulations over a frozen model, plus figure-grid emission.
//!
//! All three manipulations are argument patterns of the h-composition
//! h(x1, x2, x3, x4) = g(T^Z(f_o(x1), f_o(x2)) ∘ f_o(x3) + f_b(x4)).

mod grid;

pub use grid::{load_figure_cells, render_figure_grid};

use crate::error::Result;
use crate::frame::{Frame, CANVAS};
use crate::model::{self, ModelState, ObjectCode, SceneCode};
use crate::warp::{pixel_to_normalized, AffineParams};

/// Object and motion from sequence i, background from x_j1:
/// h(x_i1, x_i2, x_i1, x_j1).
pub fn swap_background(
    state: &ModelState,
    x_i1: &Frame,
    x_i2: &Frame,
    x_j1: &Frame,
) -> Result<Frame> {
    model::compose_h(state, x_i1, x_i2, x_i1, x_j1)
}

/// Scene from x_j1 moved by the transformation exhibited by x_i1 -> x_i2:
/// h(x_i1, x_i2, x_j1, x_j1).
pub fn retarget_transform(
    state: &ModelState,
    x_i1: &Frame,
    x_i2: &Frame,
    x_j1: &Frame,
) -> Result<Frame> {
    model::compose_h(state, x_i1, x_i2, x_j1, x_j1)
}

/// Object from x_j1, background from x_k1, motion from x_i1 -> x_i2:
/// h(x_i1, x_i2, x_j1, x_k1).
pub fn full_mix(
    state: &ModelState,
    x_i1: &Frame,
    x_i2: &Frame,
    x_j1: &Frame,
    x_k1: &Frame,
) -> Result<Frame> {
    model::compose_h(state, x_i1, x_i2, x_j1, x_k1)
}

/// Diagnostic that bypasses the learned transform head: warp the object code
/// by a given pixel-frame affine instead. `gt` is the sampling map (output
/// coordinates to source coordinates, like `affine_warp`); pass the inverse
/// of a forward placement change to advance a scene along it.
pub fn reconstruct_with_gt_transform(
    state: &ModelState,
    x1: &Frame,
    gt: &AffineParams,
) -> Result<Frame> {
    let t = pixel_to_normalized(gt, CANVAS, CANVAS)?;
    let z_o = model::encode_object(state, x1);
    let z_b = model::encode_background(state, x1);
    let warped = model::apply_transform(state, &t, &z_o)?;
    let scene = model::compose_scene(&ObjectCode(warped.0), &z_b)?;
    model::render(state, &SceneCode(scene.0))
}
