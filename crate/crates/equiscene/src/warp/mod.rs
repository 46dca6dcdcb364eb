//! Affine transform algebra and differentiable warping.
//!
//! Transforms are 2x3 matrices `p -> L*p + t` tagged with the coordinate
//! convention they live in. Pixel coordinates have x increasing rightward and
//! y increasing downward with pixel centers at integer positions; normalized
//! coordinates span [-1, 1] on both axes with pixel centers at
//! `(2i + 1)/S - 1` (align-corners = false), so a translation by `dx` pixels
//! maps to `2*dx/W` normalized units exactly.

mod sample;

pub use sample::{
    affine_grid, affine_warp, affine_warp_t, bilinear_sample, warp_backward, Grid2D, MapView,
};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Coordinate convention an affine transform is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoordFrame {
    /// Canvas pixel units, origin at the top-left pixel center, y down.
    Pixel,
    /// Both axes span [-1, 1], pixel centers at (2i+1)/S - 1.
    Normalized,
}

/// A 2D affine map `p -> [[a11, a12], [a21, a22]] * p + (tx, ty)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub a11: f64,
    pub a12: f64,
    pub tx: f64,
    pub a21: f64,
    pub a22: f64,
    pub ty: f64,
    pub frame: CoordFrame,
}

const SINGULAR_EPS: f64 = 1e-9;

impl AffineParams {
    pub fn new(a11: f64, a12: f64, tx: f64, a21: f64, a22: f64, ty: f64, frame: CoordFrame) -> Self {
        Self { a11, a12, tx, a21, a22, ty, frame }
    }

    /// Identity map in the given frame.
    pub fn identity(frame: CoordFrame) -> Self {
        Self::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, frame)
    }

    /// Determinant of the linear part.
    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    /// Apply the map to a point.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.a11 * x + self.a12 * y + self.tx,
            self.a21 * x + self.a22 * y + self.ty,
        )
    }

    /// Row-major `[a11, a12, tx, a21, a22, ty]`, the layout the model's
    /// transform head predicts.
    pub fn to_row_major(&self) -> [f64; 6] {
        [self.a11, self.a12, self.tx, self.a21, self.a22, self.ty]
    }

    pub fn from_row_major(m: [f64; 6], frame: CoordFrame) -> Self {
        Self::new(m[0], m[1], m[2], m[3], m[4], m[5], frame)
    }

    /// Maximum absolute difference over the six parameters.
    pub fn max_abs_diff(&self, other: &AffineParams) -> f64 {
        self.to_row_major()
            .iter()
            .zip(other.to_row_major().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Rotation by `degrees` about `center`, using the standard matrix
/// `[[cos, -sin], [sin, cos]]`. In a y-down pixel frame this reads as a
/// clockwise screen rotation; the dataset layer negates angles in one place
/// to honor the y-up figure convention.
pub fn make_rotation(degrees: f64, center: (f64, f64), frame: CoordFrame) -> AffineParams {
    let theta = degrees.to_radians();
    let (s, c) = theta.sin_cos();
    let (cx, cy) = center;
    // t = center - R * center, so the center is a fixed point.
    let tx = cx - (c * cx - s * cy);
    let ty = cy - (s * cx + c * cy);
    AffineParams::new(c, -s, tx, s, c, ty, frame)
}

/// Pure translation by `(dx, dy)`.
pub fn make_translation(dx: f64, dy: f64, frame: CoordFrame) -> AffineParams {
    AffineParams::new(1.0, 0.0, dx, 0.0, 1.0, dy, frame)
}

/// Composition `p -> outer(inner(p))`. Both maps must share a frame.
pub fn compose(outer: &AffineParams, inner: &AffineParams) -> Result<AffineParams> {
    if outer.frame != inner.frame {
        return Err(Error::FrameMismatch { expected: outer.frame, got: inner.frame });
    }
    let (o, i) = (outer, inner);
    Ok(AffineParams::new(
        o.a11 * i.a11 + o.a12 * i.a21,
        o.a11 * i.a12 + o.a12 * i.a22,
        o.a11 * i.tx + o.a12 * i.ty + o.tx,
        o.a21 * i.a11 + o.a22 * i.a21,
        o.a21 * i.a12 + o.a22 * i.a22,
        o.a21 * i.tx + o.a22 * i.ty + o.ty,
        o.frame,
    ))
}

/// Inverse map. Fails when the linear part is singular.
pub fn invert(a: &AffineParams) -> Result<AffineParams> {
    let det = a.det();
    if det.abs() < SINGULAR_EPS {
        return Err(Error::SingularTransform { det });
    }
    let (i11, i12, i21, i22) = (a.a22 / det, -a.a12 / det, -a.a21 / det, a.a11 / det);
    Ok(AffineParams::new(
        i11,
        i12,
        -(i11 * a.tx + i12 * a.ty),
        i21,
        i22,
        -(i21 * a.tx + i22 * a.ty),
        a.frame,
    ))
}

// Pixel index i on an axis of size s has normalized center (2i + 1)/s - 1,
// i.e. n = d*i + e with d = 2/s and e = 1/s - 1.
fn axis_scale(s: usize) -> (f64, f64) {
    let sf = s as f64;
    (2.0 / sf, 1.0 / sf - 1.0)
}

/// Re-express a pixel-frame map over [-1, 1]^2 coordinates.
pub fn pixel_to_normalized(a: &AffineParams, width: usize, height: usize) -> Result<AffineParams> {
    if a.frame != CoordFrame::Pixel {
        return Err(Error::FrameMismatch { expected: CoordFrame::Pixel, got: a.frame });
    }
    convert(a, width, height, true)
}

/// Inverse of [`pixel_to_normalized`].
pub fn normalized_to_pixel(a: &AffineParams, width: usize, height: usize) -> Result<AffineParams> {
    if a.frame != CoordFrame::Normalized {
        return Err(Error::FrameMismatch { expected: CoordFrame::Normalized, got: a.frame });
    }
    convert(a, width, height, false)
}

// Conjugate A by the pixel->normalized change of coordinates S(p) = D*p + e:
// to_norm computes S A S^-1, the other direction S^-1 A S.
fn convert(a: &AffineParams, width: usize, height: usize, to_norm: bool) -> Result<AffineParams> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions(format!("{width}x{height}")));
    }
    let (dx, ex) = axis_scale(width);
    let (dy, ey) = axis_scale(height);
    let (sx, sy, ox, oy, frame) = if to_norm {
        (dx, dy, ex, ey, CoordFrame::Normalized)
    } else {
        (1.0 / dx, 1.0 / dy, -ex / dx, -ey / dy, CoordFrame::Pixel)
    };
    // N = S A S^-1 with S = diag(sx, sy) p + (ox, oy).
    let l11 = a.a11;
    let l12 = a.a12 * sx / sy;
    let l21 = a.a21 * sy / sx;
    let l22 = a.a22;
    let tx = sx * a.tx + ox - (l11 * ox + l12 * oy);
    let ty = sy * a.ty + oy - (l21 * ox + l22 * oy);
    Ok(AffineParams::new(l11, l12, tx, l21, l22, ty, frame))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: &AffineParams, b: &AffineParams, tol: f64) {
        assert!(
            a.max_abs_diff(b) <= tol,
            "transforms differ by {:e} > {:e}:\n{:?}\n{:?}",
            a.max_abs_diff(b),
            tol,
            a,
            b
        );
    }

    #[test]
    fn rotation_zero_is_identity() {
        let r = make_rotation(0.0, (0.0, 0.0), CoordFrame::Pixel);
        assert_close(&r, &AffineParams::identity(CoordFrame::Pixel), 0.0);
    }

    #[test]
    fn rotation_quarter_turn() {
        let r = make_rotation(90.0, (0.0, 0.0), CoordFrame::Pixel);
        let expect = AffineParams::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, CoordFrame::Pixel);
        assert_close(&r, &expect, 1e-12);
    }

    #[test]
    fn rotation_fifteen_degrees() {
        // High-precision trigonometric evaluation, frozen.
        let c = 0.965_925_826_289_068_3;
        let s = 0.258_819_045_102_520_74;
        let r = make_rotation(15.0, (0.0, 0.0), CoordFrame::Pixel);
        let expect = AffineParams::new(c, -s, 0.0, s, c, 0.0, CoordFrame::Pixel);
        assert_close(&r, &expect, 1e-5);
    }

    #[test]
    fn rotation_determinant_is_one() {
        for i in -360..=360 {
            let r = make_rotation(i as f64 * 0.5, (17.0, -4.0), CoordFrame::Pixel);
            assert!((r.det() - 1.0).abs() < 1e-9, "det {} at {}", r.det(), i);
        }
    }

    #[test]
    fn rotation_fixes_center() {
        let r = make_rotation(33.0, (31.5, 31.5), CoordFrame::Pixel);
        let (x, y) = r.apply(31.5, 31.5);
        assert!((x - 31.5).abs() < 1e-12 && (y - 31.5).abs() < 1e-12);
    }

    #[test]
    fn translation_examples() {
        let t = make_translation(0.0, 0.0, CoordFrame::Pixel);
        assert_close(&t, &AffineParams::identity(CoordFrame::Pixel), 0.0);
        let t = make_translation(10.0, 4.0, CoordFrame::Pixel);
        assert!(t.tx == 10.0 && t.ty == 4.0 && t.a11 == 1.0 && t.a12 == 0.0);
        let t = make_translation(-8.0, -6.0, CoordFrame::Pixel);
        assert!(t.tx == -8.0 && t.ty == -6.0);
    }

    #[test]
    fn compose_identity_is_noop() {
        let a = make_rotation(14.0, (3.0, 5.0), CoordFrame::Pixel);
        let id = AffineParams::identity(CoordFrame::Pixel);
        assert_close(&compose(&id, &a).unwrap(), &a, 0.0);
        assert_close(&compose(&a, &id).unwrap(), &a, 0.0);
    }

    #[test]
    fn compose_translations_add() {
        let a = make_translation(3.0, 0.0, CoordFrame::Pixel);
        let b = make_translation(0.0, 5.0, CoordFrame::Pixel);
        let expect = make_translation(3.0, 5.0, CoordFrame::Pixel);
        assert_close(&compose(&a, &b).unwrap(), &expect, 1e-12);
    }

    #[test]
    fn compose_rotations_add_angles() {
        // Oracle: an independently constructed rotation at the summed angle.
        let a = make_rotation(15.0, (0.0, 0.0), CoordFrame::Pixel);
        let b = make_rotation(12.0, (0.0, 0.0), CoordFrame::Pixel);
        let expect = make_rotation(27.0, (0.0, 0.0), CoordFrame::Pixel);
        assert_close(&compose(&a, &b).unwrap(), &expect, 1e-6);
    }

    #[test]
    fn compose_frame_mismatch_errors() {
        let a = AffineParams::identity(CoordFrame::Pixel);
        let b = AffineParams::identity(CoordFrame::Normalized);
        assert!(compose(&a, &b).is_err());
    }

    #[test]
    fn invert_cases() {
        let id = AffineParams::identity(CoordFrame::Pixel);
        assert_close(&invert(&id).unwrap(), &id, 0.0);

        let t = make_translation(10.0, 4.0, CoordFrame::Pixel);
        assert_close(&invert(&t).unwrap(), &make_translation(-10.0, -4.0, CoordFrame::Pixel), 1e-12);

        let r = make_rotation(15.0, (7.0, -2.0), CoordFrame::Pixel);
        assert_close(&invert(&r).unwrap(), &make_rotation(-15.0, (7.0, -2.0), CoordFrame::Pixel), 1e-6);
    }

    #[test]
    fn invert_singular_errors() {
        let a = AffineParams::new(1.0, 2.0, 0.0, 0.5, 1.0, 0.0, CoordFrame::Pixel);
        assert!(matches!(invert(&a), Err(Error::SingularTransform { .. })));
    }

    #[test]
    fn pixel_to_normalized_identity() {
        let id = AffineParams::identity(CoordFrame::Pixel);
        let n = pixel_to_normalized(&id, 64, 64).unwrap();
        assert_close(&n, &AffineParams::identity(CoordFrame::Normalized), 1e-12);
    }

    #[test]
    fn pixel_to_normalized_half_canvas_shift() {
        let t = make_translation(32.0, 0.0, CoordFrame::Pixel);
        let n = pixel_to_normalized(&t, 64, 64).unwrap();
        assert!((n.tx - 1.0).abs() < 1e-12, "tx {}", n.tx);
        assert!(n.ty.abs() < 1e-12);
    }

    #[test]
    fn pixel_to_normalized_center_rotation_fixes_origin() {
        // Pixel (31.5, 31.5) is normalized (0, 0) on a 64x64 canvas, so a
        // rotation about it must fix the normalized origin. Checked against
        // the pixel-space map at sample points.
        let r = make_rotation(15.0, (31.5, 31.5), CoordFrame::Pixel);
        let n = pixel_to_normalized(&r, 64, 64).unwrap();
        let (x, y) = n.apply(0.0, 0.0);
        assert!(x.abs() < 1e-12 && y.abs() < 1e-12, "origin moved to ({x}, {y})");

        for &(px, py) in &[(0.0, 0.0), (10.0, 50.0), (63.0, 17.0)] {
            let (qx, qy) = r.apply(px, py);
            let nx = (2.0 * px + 1.0) / 64.0 - 1.0;
            let ny = (2.0 * py + 1.0) / 64.0 - 1.0;
            let (sx, sy) = n.apply(nx, ny);
            let (ex, ey) = ((2.0 * qx + 1.0) / 64.0 - 1.0, (2.0 * qy + 1.0) / 64.0 - 1.0);
            assert!((sx - ex).abs() < 1e-12 && (sy - ey).abs() < 1e-12);
        }
    }

    #[test]
    fn conversion_rejects_bad_input() {
        let t = make_translation(1.0, 2.0, CoordFrame::Pixel);
        assert!(pixel_to_normalized(&t, 0, 64).is_err());
        let n = AffineParams::identity(CoordFrame::Normalized);
        assert!(pixel_to_normalized(&n, 64, 64).is_err());
    }

    fn arb_affine() -> impl Strategy<Value = AffineParams> {
        (
            -2.0f64..2.0,
            -2.0f64..2.0,
            -3.0f64..3.0,
            -2.0f64..2.0,
            -2.0f64..2.0,
            -3.0f64..3.0,
        )
            .prop_map(|(a11, a12, tx, a21, a22, ty)| {
                AffineParams::new(a11, a12, tx, a21, a22, ty, CoordFrame::Pixel)
            })
    }

    proptest! {
        #[test]
        fn compose_is_associative(a in arb_affine(), b in arb_affine(), c in arb_affine()) {
            let left = compose(&a, &compose(&b, &c).unwrap()).unwrap();
            let right = compose(&compose(&a, &b).unwrap(), &c).unwrap();
            prop_assert!(left.max_abs_diff(&right) < 1e-9);
        }

        #[test]
        fn invert_round_trips(a in arb_affine()) {
            prop_assume!(a.det().abs() > 1e-3);
            let inv = invert(&a).unwrap();
            let id = compose(&a, &inv).unwrap();
            prop_assert!(id.max_abs_diff(&AffineParams::identity(CoordFrame::Pixel)) < 1e-9);
        }

        #[test]
        fn normalization_round_trips(a in arb_affine(), w in 1usize..128, h in 1usize..128) {
            let n = pixel_to_normalized(&a, w, h).unwrap();
            let back = normalized_to_pixel(&n, w, h).unwrap();
            prop_assert!(back.max_abs_diff(&a) < 1e-9);
        }
    }
}
