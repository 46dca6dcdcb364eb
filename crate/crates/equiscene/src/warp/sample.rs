//! Bilinear grid sampling with the inverse-warp convention: the affine matrix
//! maps output coordinates to source coordinates. Out-of-range samples read as
//! zero. Forward and backward kernels live here so the autodiff layer and the
//! plain dataset path share one implementation.

use super::{AffineParams, CoordFrame};
use crate::error::{Error, Result};
use crate::nn::scalar::Scalar;

/// Borrowed view of a (C, H, W) feature map.
#[derive(Clone, Copy)]
pub struct MapView<'a, T> {
    pub data: &'a [T],
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl<'a, T: Scalar> MapView<'a, T> {
    pub fn new(data: &'a [T], c: usize, h: usize, w: usize) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::ShapeMismatch(format!(
                "map data length {} != {}x{}x{}",
                data.len(),
                c,
                h,
                w
            )));
        }
        Ok(Self { data, c, h, w })
    }
}

/// Per-output-pixel source coordinates in the normalized frame, row-major.
#[derive(Debug, Clone)]
pub struct Grid2D {
    height: usize,
    width: usize,
    samples: Vec<(f64, f64)>,
}

impl Grid2D {
    pub fn new(height: usize, width: usize, samples: Vec<(f64, f64)>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidDimensions(format!("{height}x{width}")));
        }
        if samples.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "grid has {} samples for {}x{}",
                samples.len(),
                height,
                width
            )));
        }
        Ok(Self { height, width, samples })
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }
}

/// Source-coordinate grid for an affine map over an `h` x `w` output.
pub fn affine_grid(a: &AffineParams, h: usize, w: usize) -> Result<Grid2D> {
    if a.frame != CoordFrame::Normalized {
        return Err(Error::FrameMismatch { expected: CoordFrame::Normalized, got: a.frame });
    }
    let mut samples = Vec::with_capacity(h * w);
    for iy in 0..h {
        let ny = (2.0 * iy as f64 + 1.0) / h as f64 - 1.0;
        for ix in 0..w {
            let nx = (2.0 * ix as f64 + 1.0) / w as f64 - 1.0;
            samples.push(a.apply(nx, ny));
        }
    }
    Grid2D::new(h, w, samples)
}

#[inline]
fn to_source_px<T: Scalar>(n: T, size: usize) -> T {
    // Inverse of n = (2i + 1)/S - 1.
    (n + T::ONE) * T::from_f64(size as f64 / 2.0) - T::from_f64(0.5)
}

/// Sample `input` at the grid's source coordinates, bilinear, zeros fill.
pub fn bilinear_sample<T: Scalar>(input: MapView<'_, T>, grid: &Grid2D) -> Vec<T> {
    let (c, ih, iw) = (input.c, input.h, input.w);
    let (oh, ow) = (grid.height, grid.width);
    let mut out = vec![T::ZERO; c * oh * ow];
    for (o, &(snx, sny)) in grid.samples.iter().enumerate() {
        let sx = to_source_px(T::from_f64(snx), iw);
        let sy = to_source_px(T::from_f64(sny), ih);
        let x0f = sx.floor();
        let y0f = sy.floor();
        let wx = sx - x0f;
        let wy = sy - y0f;
        let x0 = x0f.to_f64() as i64;
        let y0 = y0f.to_f64() as i64;
        for ch in 0..c {
            let plane = &input.data[ch * ih * iw..(ch + 1) * ih * iw];
            let at = |x: i64, y: i64| -> T {
                if x < 0 || y < 0 || x >= iw as i64 || y >= ih as i64 {
                    T::ZERO
                } else {
                    plane[y as usize * iw + x as usize]
                }
            };
            let v00 = at(x0, y0);
            let v01 = at(x0 + 1, y0);
            let v10 = at(x0, y0 + 1);
            let v11 = at(x0 + 1, y0 + 1);
            let top = v00 * (T::ONE - wx) + v01 * wx;
            let bot = v10 * (T::ONE - wx) + v11 * wx;
            out[ch * oh * ow + o] = top * (T::ONE - wy) + bot * wy;
        }
    }
    out
}

/// Warp a (C, H, W) map by a normalized-frame affine. Output pixel `p` takes
/// the bilinearly interpolated input value at `a(p)`.
pub fn affine_warp<T: Scalar>(input: MapView<'_, T>, a: &AffineParams) -> Result<Vec<T>> {
    let grid = affine_grid(a, input.h, input.w)?;
    Ok(bilinear_sample(input, &grid))
}

/// [`affine_warp`] with the whole coordinate chain evaluated in `T`, so the
/// autodiff forward and [`warp_backward`] linearize the exact same arithmetic.
pub fn affine_warp_t<T: Scalar>(input: MapView<'_, T>, theta: [T; 6]) -> Vec<T> {
    let (c, h, w) = (input.c, input.h, input.w);
    let mut out = vec![T::ZERO; c * h * w];
    for iy in 0..h {
        let ny = T::from_f64((2.0 * iy as f64 + 1.0) / h as f64 - 1.0);
        for ix in 0..w {
            let nx = T::from_f64((2.0 * ix as f64 + 1.0) / w as f64 - 1.0);
            let sx = to_source_px(theta[0] * nx + theta[1] * ny + theta[2], w);
            let sy = to_source_px(theta[3] * nx + theta[4] * ny + theta[5], h);
            let x0f = sx.floor();
            let y0f = sy.floor();
            let wx = sx - x0f;
            let wy = sy - y0f;
            let x0 = x0f.to_f64() as i64;
            let y0 = y0f.to_f64() as i64;
            for ch in 0..c {
                let plane = &input.data[ch * h * w..(ch + 1) * h * w];
                let at = |x: i64, y: i64| -> T {
                    if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                        T::ZERO
                    } else {
                        plane[y as usize * w + x as usize]
                    }
                };
                let top = at(x0, y0) * (T::ONE - wx) + at(x0 + 1, y0) * wx;
                let bot = at(x0, y0 + 1) * (T::ONE - wx) + at(x0 + 1, y0 + 1) * wx;
                out[(ch * h + iy) * w + ix] = top * (T::ONE - wy) + bot * wy;
            }
        }
    }
    out
}

/// Backward pass of [`affine_warp`]: gradients of `sum(grad_out * warp)` with
/// respect to the input map and the six affine parameters
/// `[a11, a12, tx, a21, a22, ty]`.
pub fn warp_backward<T: Scalar>(
    input: MapView<'_, T>,
    theta: [T; 6],
    grad_out: &[T],
) -> (Vec<T>, [T; 6]) {
    let (c, h, w) = (input.c, input.h, input.w);
    debug_assert_eq!(grad_out.len(), c * h * w);
    let mut grad_input = vec![T::ZERO; c * h * w];
    let mut grad_theta = [T::ZERO; 6];
    let half_w = T::from_f64(w as f64 / 2.0);
    let half_h = T::from_f64(h as f64 / 2.0);
    for iy in 0..h {
        let ny = T::from_f64((2.0 * iy as f64 + 1.0) / h as f64 - 1.0);
        for ix in 0..w {
            let nx = T::from_f64((2.0 * ix as f64 + 1.0) / w as f64 - 1.0);
            let snx = theta[0] * nx + theta[1] * ny + theta[2];
            let sny = theta[3] * nx + theta[4] * ny + theta[5];
            let sx = to_source_px(snx, w);
            let sy = to_source_px(sny, h);
            let x0f = sx.floor();
            let y0f = sy.floor();
            let wx = sx - x0f;
            let wy = sy - y0f;
            let x0 = x0f.to_f64() as i64;
            let y0 = y0f.to_f64() as i64;
            let mut dval_dx = T::ZERO;
            let mut dval_dy = T::ZERO;
            for ch in 0..c {
                let plane_off = ch * h * w;
                let g = grad_out[plane_off + iy * w + ix];
                let mut scatter = |x: i64, y: i64, wgt: T| -> T {
                    if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                        T::ZERO
                    } else {
                        let idx = plane_off + y as usize * w + x as usize;
                        grad_input[idx] += g * wgt;
                        input.data[idx]
                    }
                };
                let v00 = scatter(x0, y0, (T::ONE - wx) * (T::ONE - wy));
                let v01 = scatter(x0 + 1, y0, wx * (T::ONE - wy));
                let v10 = scatter(x0, y0 + 1, (T::ONE - wx) * wy);
                let v11 = scatter(x0 + 1, y0 + 1, wx * wy);
                dval_dx += g * ((v01 - v00) * (T::ONE - wy) + (v11 - v10) * wy);
                dval_dy += g * ((v10 - v00) * (T::ONE - wx) + (v11 - v01) * wx);
            }
            // Chain through source pixel coords to the normalized affine.
            let dsx = dval_dx * half_w;
            let dsy = dval_dy * half_h;
            grad_theta[0] += dsx * nx;
            grad_theta[1] += dsx * ny;
            grad_theta[2] += dsx;
            grad_theta[3] += dsy * nx;
            grad_theta[4] += dsy * ny;
            grad_theta[5] += dsy;
        }
    }
    (grad_input, grad_theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warp::{compose, make_rotation, make_translation, pixel_to_normalized};
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    // Independent double-loop oracle: re-derives the whole convention from
    // scratch with plain arithmetic. Kept free of any call into the kernel.
    fn oracle_warp(input: &[f64], c: usize, h: usize, w: usize, m: [f64; 6]) -> Vec<f64> {
        let mut out = vec![0.0; c * h * w];
        for ch in 0..c {
            for oy in 0..h {
                for ox in 0..w {
                    let nx = (2.0 * ox as f64 + 1.0) / w as f64 - 1.0;
                    let ny = (2.0 * oy as f64 + 1.0) / h as f64 - 1.0;
                    let sxn = m[0] * nx + m[1] * ny + m[2];
                    let syn = m[3] * nx + m[4] * ny + m[5];
                    let sx = (sxn + 1.0) * w as f64 / 2.0 - 0.5;
                    let sy = (syn + 1.0) * h as f64 / 2.0 - 0.5;
                    let mut acc = 0.0;
                    let x0 = sx.floor() as i64;
                    let y0 = sy.floor() as i64;
                    for (dy, dx) in [(0i64, 0i64), (0, 1), (1, 0), (1, 1)] {
                        let (px, py) = (x0 + dx, y0 + dy);
                        if px < 0 || py < 0 || px >= w as i64 || py >= h as i64 {
                            continue;
                        }
                        let wx = if dx == 0 { 1.0 - (sx - x0 as f64) } else { sx - x0 as f64 };
                        let wy = if dy == 0 { 1.0 - (sy - y0 as f64) } else { sy - y0 as f64 };
                        acc += wx * wy * input[(ch * h + py as usize) * w + px as usize];
                    }
                    out[(ch * h + oy as usize) * w + ox] = acc;
                }
            }
        }
        out
    }

    fn rand_unit(rng: &mut ChaCha8Rng) -> f64 {
        rng.next_u32() as f64 / u32::MAX as f64
    }

    fn rand_map(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rand_unit(rng) * 2.0 - 1.0).collect()
    }

    fn rand_affine(rng: &mut ChaCha8Rng) -> AffineParams {
        AffineParams::new(
            1.0 + 0.5 * (rand_unit(rng) - 0.5),
            0.5 * (rand_unit(rng) - 0.5),
            rand_unit(rng) - 0.5,
            0.5 * (rand_unit(rng) - 0.5),
            1.0 + 0.5 * (rand_unit(rng) - 0.5),
            rand_unit(rng) - 0.5,
            CoordFrame::Normalized,
        )
    }

    #[test]
    fn identity_warp_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = rand_map(&mut rng, 3 * 11 * 9);
        let view = MapView::new(&data, 3, 11, 9).unwrap();
        let out = affine_warp(view, &AffineParams::identity(CoordFrame::Normalized)).unwrap();
        for (a, b) in out.iter().zip(data.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn integer_translation_moves_hot_pixel() {
        // 1x8x8 single-hot map, translation params: the hot pixel moves by
        // exactly the inverse pixel offset (inverse-warp convention).
        let mut data = vec![0.0f64; 64];
        data[3 * 8 + 5] = 1.0; // (x=5, y=3)
        let view = MapView::new(&data, 1, 8, 8).unwrap();
        let t = pixel_to_normalized(&make_translation(2.0, -1.0, CoordFrame::Pixel), 8, 8).unwrap();
        let out = affine_warp(view, &t).unwrap();
        // Output pixel p reads input at p + (2, -1): hot pixel appears at (3, 4).
        for y in 0..8 {
            for x in 0..8 {
                let expect = if (x, y) == (3, 4) { 1.0 } else { 0.0 };
                assert!((out[y * 8 + x] - expect).abs() < 1e-6, "at ({x},{y})");
            }
        }
    }

    #[test]
    fn rotation_preserves_constant_interior() {
        let data = vec![0.75f64; 16 * 16];
        let view = MapView::new(&data, 1, 16, 16).unwrap();
        let r = pixel_to_normalized(&make_rotation(30.0, (7.5, 7.5), CoordFrame::Pixel), 16, 16).unwrap();
        let out = affine_warp(view, &r).unwrap();
        // Interior pixels whose preimage stays in range keep the constant.
        for y in 4..12 {
            for x in 4..12 {
                assert!((out[y * 16 + x] - 0.75).abs() < 1e-9, "at ({x},{y})");
            }
        }
    }

    #[test]
    fn matches_bruteforce_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..200 {
            let c = 1 + (rng.next_u32() % 4) as usize;
            let h = 2 + (rng.next_u32() % 15) as usize;
            let w = 2 + (rng.next_u32() % 15) as usize;
            let data = rand_map(&mut rng, c * h * w);
            let a = rand_affine(&mut rng);
            let out = affine_warp(MapView::new(&data, c, h, w).unwrap(), &a).unwrap();
            let expect = oracle_warp(&data, c, h, w, a.to_row_major());
            for (i, (x, y)) in out.iter().zip(expect.iter()).enumerate() {
                assert!((x - y).abs() < 1e-5, "case {case} idx {i}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn warp_composes_exactly_on_integer_translations() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let data = rand_map(&mut rng, 2 * 12 * 12);
        let view = MapView::new(&data, 2, 12, 12).unwrap();
        let a = pixel_to_normalized(&make_translation(3.0, 1.0, CoordFrame::Pixel), 12, 12).unwrap();
        let b = pixel_to_normalized(&make_translation(-1.0, 2.0, CoordFrame::Pixel), 12, 12).unwrap();
        let two = affine_warp(MapView::new(&affine_warp(view, &b).unwrap(), 2, 12, 12).unwrap(), &a).unwrap();
        let once = affine_warp(view, &compose(&b, &a).unwrap()).unwrap();
        // Exact where the intermediate read stays in range: the outer warp
        // shifts reads by (3, 1), so x < 9 and y < 11.
        for ch in 0..2 {
            for y in 0..11 {
                for x in 0..9 {
                    let i = (ch * 12 + y) * 12 + x;
                    assert!((two[i] - once[i]).abs() < 1e-6, "at {i}");
                }
            }
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (c, h, w) = (2, 7, 6);
        let step = 1e-4;
        for _ in 0..20 {
            let data = rand_map(&mut rng, c * h * w);
            let a = rand_affine(&mut rng);
            let theta: [f64; 6] = a.to_row_major();
            // Random linear functional of the output keeps the check generic.
            let weights = rand_map(&mut rng, c * h * w);
            let loss = |d: &[f64], th: [f64; 6]| -> f64 {
                let out = oracle_warp(d, c, h, w, th);
                out.iter().zip(weights.iter()).map(|(o, g)| o * g).sum()
            };
            let view = MapView::new(&data, c, h, w).unwrap();
            let (gin, gtheta) = warp_backward(view, theta, &weights);

            for p in 0..6 {
                let mut tp = theta;
                tp[p] += step;
                let mut tm = theta;
                tm[p] -= step;
                let fd = (loss(&data, tp) - loss(&data, tm)) / (2.0 * step);
                let rel = (gtheta[p] - fd).abs() / fd.abs().max(1e-4);
                assert!(rel < 1e-3, "theta[{p}]: analytic {} vs fd {}", gtheta[p], fd);
            }
            for i in (0..data.len()).step_by(7) {
                let mut dp = data.clone();
                dp[i] += step;
                let mut dm = data.clone();
                dm[i] -= step;
                let fd = (loss(&dp, theta) - loss(&dm, theta)) / (2.0 * step);
                let rel = (gin[i] - fd).abs() / fd.abs().max(1e-4);
                assert!(rel < 1e-3, "input[{i}]: analytic {} vs fd {}", gin[i], fd);
            }
        }
    }

    #[test]
    fn grid_invariants() {
        let a = AffineParams::identity(CoordFrame::Normalized);
        let g = affine_grid(&a, 5, 7).unwrap();
        assert_eq!(g.samples().len(), 35);
        assert!(Grid2D::new(2, 2, vec![(0.0, 0.0)]).is_err());
        let pixel_frame = AffineParams::identity(CoordFrame::Pixel);
        assert!(affine_grid(&pixel_frame, 4, 4).is_err());
    }
}
