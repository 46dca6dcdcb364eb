//! Differentiable operations. Convolutions lower to im2col + GEMM; the
//! affine warp delegates to the shared kernels in [`crate::warp`].

use super::scalar::Scalar;
use super::tape::Var;
use super::tensor::Tensor;
use crate::warp::{affine_warp_t, warp_backward, MapView};

fn binary_shape_check<T: Scalar>(a: &Var<T>, b: &Var<T>, op: &str) {
    assert_eq!(a.value.dims(), b.value.dims(), "{op}: shape mismatch");
}

/// C(m,n) = A(m,k) * B(k,n); `ta`/`tb` read the operand transposed.
fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    out: &mut [T],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        T::gemm_strided(
            m,
            k,
            n,
            T::ONE,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            T::ZERO,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Convolution geometry shared by conv2d and conv_transpose2d.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kh) / self.stride + 1,
            (w + 2 * self.pad - self.kw) / self.stride + 1,
        )
    }

    pub fn transpose_out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h - 1) * self.stride + self.kh - 2 * self.pad,
            (w - 1) * self.stride + self.kw - 2 * self.pad,
        )
    }
}

/// Gather (C,H,W) into patch-major columns (C*kh*kw, Ho*Wo).
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, g: ConvGeom, cols: &mut [T]) {
    let (ho, wo) = g.out_size(h, w);
    debug_assert_eq!(cols.len(), c * g.kh * g.kw * ho * wo);
    let mut row = 0;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                let mut o = 0;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        for _ in 0..wo {
                            dst[o] = T::ZERO;
                            o += 1;
                        }
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        dst[o] = if ix < 0 || ix >= w as isize {
                            T::ZERO
                        } else {
                            src_row[ix as usize]
                        };
                        o += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-accumulate columns back to (C,H,W); adjoint of [`im2col`].
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, g: ConvGeom, x: &mut [T]) {
    let (ho, wo) = g.out_size(h, w);
    debug_assert_eq!(cols.len(), c * g.kh * g.kw * ho * wo);
    let mut row = 0;
    for ch in 0..c {
        let plane = &mut x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                let mut o = 0;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        o += wo;
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += src[o];
                        }
                        o += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

impl<T: Scalar> Var<T> {
    pub fn add(&self, other: &Var<T>) -> Var<T> {
        binary_shape_check(self, other, "add");
        let mut out = self.value.clone();
        {
            let dst = out.data_mut();
            for (d, s) in dst.iter_mut().zip(other.value.data()) {
                *d += *s;
            }
        }
        let id = self.graph.push(
            vec![self.id, other.id],
            Some(Box::new(move |g, emit| {
                emit(0, g.clone());
                emit(1, g.clone());
            })),
        );
        self.graph.make_var(id, out)
    }

    pub fn sub(&self, other: &Var<T>) -> Var<T> {
        binary_shape_check(self, other, "sub");
        let mut out = self.value.clone();
        {
            let dst = out.data_mut();
            for (d, s) in dst.iter_mut().zip(other.value.data()) {
                *d = *d - *s;
            }
        }
        let id = self.graph.push(
            vec![self.id, other.id],
            Some(Box::new(move |g, emit| {
                emit(0, g.clone());
                emit(1, g.map(|v| -v));
            })),
        );
        self.graph.make_var(id, out)
    }

    pub fn mul(&self, other: &Var<T>) -> Var<T> {
        binary_shape_check(self, other, "mul");
        let mut out = self.value.clone();
        {
            let dst = out.data_mut();
            for (d, s) in dst.iter_mut().zip(other.value.data()) {
                *d = *d * *s;
            }
        }
        let a = self.value.clone();
        let b = other.value.clone();
        let id = self.graph.push(
            vec![self.id, other.id],
            Some(Box::new(move |g, emit| {
                let mut ga = g.clone();
                for (d, s) in ga.data_mut().iter_mut().zip(b.data()) {
                    *d = *d * *s;
                }
                emit(0, ga);
                let mut gb = g.clone();
                for (d, s) in gb.data_mut().iter_mut().zip(a.data()) {
                    *d = *d * *s;
                }
                emit(1, gb);
            })),
        );
        self.graph.make_var(id, out)
    }

    pub fn scale(&self, c: T) -> Var<T> {
        let out = self.value.map(|v| v * c);
        let id = self.graph.push(
            vec![self.id],
            Some(Box::new(move |g, emit| emit(0, g.map(|v| v * c)))),
        );
        self.graph.make_var(id, out)
    }

    pub fn sum_all(&self) -> Var<T> {
        let mut acc = T::ZERO;
        for &v in self.value.data() {
            acc += v;
        }
        let dims = self.value.dims().to_vec();
        let id = self.graph.push(
            vec![self.id],
            Some(Box::new(move |g, emit| {
                emit(0, Tensor::full(&dims, g.item()));
            })),
        );
        self.graph.make_var(id, Tensor::scalar_value(acc))
    }

    pub fn mean_all(&self) -> Var<T> {
        let n = T::from_f64(self.value.len() as f64);
        self.sum_all().scale(T::ONE / n)
    }

    /// Mean squared error against `other`, a scalar var.
    pub fn mse(&self, other: &Var<T>) -> Var<T> {
        let d = self.sub(other);
        d.mul(&d).mean_all()
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<T> {
        let s = T::from_f64(slope);
        let out = self.value.map(|v| if v > T::ZERO { v } else { v * s });
        let x = self.value.clone();
        let id = self.graph.push(
            vec![self.id],
            Some(Box::new(move |g, emit| {
                let mut gx = g.clone();
                for (d, &v) in gx.data_mut().iter_mut().zip(x.data()) {
                    if v <= T::ZERO {
                        *d = *d * s;
                    }
                }
                emit(0, gx);
            })),
        );
        self.graph.make_var(id, out)
    }

    pub fn sigmoid(&self) -> Var<T> {
        let out = self.value.map(|v| T::ONE / (T::ONE + (-v).exp()));
        let y = out.clone();
        let id = self.graph.push(
            vec![self.id],
            Some(Box::new(move |g, emit| {
                let mut gx = g.clone();
                for (d, &v) in gx.data_mut().iter_mut().zip(y.data()) {
                    *d = *d * v * (T::ONE - v);
                }
                emit(0, gx);
            })),
        );
        self.graph.make_var(id, out)
    }

    /// x(B,F) * w(F,G) + bias(G).
    pub fn linear(&self, w: &Var<T>, bias: &Var<T>) -> Var<T> {
        let (bsz, f) = (self.value.dims()[0], self.value.dims()[1]);
        let (wf, gdim) = (w.value.dims()[0], w.value.dims()[1]);
        assert_eq!(f, wf, "linear: feature dim mismatch");
        assert_eq!(bias.value.dims(), [gdim], "linear: bias dim mismatch");
        let mut out = vec![T::ZERO; bsz * gdim];
        gemm(bsz, f, gdim, self.value.data(), false, w.value.data(), false, &mut out);
        for row in out.chunks_mut(gdim) {
            for (d, &bv) in row.iter_mut().zip(bias.value.data()) {
                *d += bv;
            }
        }
        let x = self.value.clone();
        let wt = w.value.clone();
        let id = self.graph.push(
            vec![self.id, w.id, bias.id],
            Some(Box::new(move |g, emit| {
                let gd = g.data();
                let mut gx = vec![T::ZERO; bsz * f];
                gemm(bsz, gdim, f, gd, false, wt.data(), true, &mut gx);
                emit(0, Tensor::new(&[bsz, f], gx).unwrap());
                let mut gw = vec![T::ZERO; f * gdim];
                gemm(f, bsz, gdim, x.data(), true, gd, false, &mut gw);
                emit(1, Tensor::new(&[f, gdim], gw).unwrap());
                let mut gb = vec![T::ZERO; gdim];
                for row in gd.chunks(gdim) {
                    for (d, &v) in gb.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                emit(2, Tensor::new(&[gdim], gb).unwrap());
            })),
        );
        self.graph.make_var(id, Tensor::new(&[bsz, gdim], out).unwrap())
    }

    /// 2D convolution: x(B,C,H,W) * w(O,C,kh,kw) + bias(O).
    pub fn conv2d(&self, w: &Var<T>, bias: &Var<T>, stride: usize, pad: usize) -> Var<T> {
        let d = self.value.dims();
        let (bsz, c, h, wd) = (d[0], d[1], d[2], d[3]);
        let wd_dims = w.value.dims();
        let (o, wc, kh, kw) = (wd_dims[0], wd_dims[1], wd_dims[2], wd_dims[3]);
        assert_eq!(c, wc, "conv2d: channel mismatch");
        assert_eq!(bias.value.dims(), [o], "conv2d: bias mismatch");
        let geom = ConvGeom { kh, kw, stride, pad };
        let (ho, wo) = geom.out_size(h, wd);
        let ckk = c * kh * kw;
        let mut out = vec![T::ZERO; bsz * o * ho * wo];
        let mut cols = vec![T::ZERO; ckk * ho * wo];
        for bi in 0..bsz {
            im2col(&self.value.data()[bi * c * h * wd..], c, h, wd, geom, &mut cols);
            let y = &mut out[bi * o * ho * wo..(bi + 1) * o * ho * wo];
            gemm(o, ckk, ho * wo, w.value.data(), false, &cols, false, y);
            for (oc, plane) in y.chunks_mut(ho * wo).enumerate() {
                let bv = bias.value.data()[oc];
                for v in plane {
                    *v += bv;
                }
            }
        }
        let x = self.value.clone();
        let wt = w.value.clone();
        let id = self.graph.push(
            vec![self.id, w.id, bias.id],
            Some(Box::new(move |g, emit| {
                let gd = g.data();
                let mut gx = vec![T::ZERO; bsz * c * h * wd];
                let mut gw = vec![T::ZERO; o * ckk];
                let mut gb = vec![T::ZERO; o];
                let mut cols = vec![T::ZERO; ckk * ho * wo];
                let mut gcols = vec![T::ZERO; ckk * ho * wo];
                for bi in 0..bsz {
                    let gy = &gd[bi * o * ho * wo..(bi + 1) * o * ho * wo];
                    im2col(&x.data()[bi * c * h * wd..], c, h, wd, geom, &mut cols);
                    // gw += gy * cols^T
                    unsafe {
                        T::gemm_strided(
                            o,
                            ho * wo,
                            ckk,
                            T::ONE,
                            gy.as_ptr(),
                            (ho * wo) as isize,
                            1,
                            cols.as_ptr(),
                            1,
                            (ho * wo) as isize,
                            T::ONE,
                            gw.as_mut_ptr(),
                            ckk as isize,
                            1,
                        );
                    }
                    gemm(ckk, o, ho * wo, wt.data(), true, gy, false, &mut gcols);
                    col2im(&gcols, c, h, wd, geom, &mut gx[bi * c * h * wd..(bi + 1) * c * h * wd]);
                    for (oc, plane) in gy.chunks(ho * wo).enumerate() {
                        for &v in plane {
                            gb[oc] += v;
                        }
                    }
                }
                emit(0, Tensor::new(&[bsz, c, h, wd], gx).unwrap());
                emit(1, Tensor::new(&[o, c, kh, kw], gw).unwrap());
                emit(2, Tensor::new(&[o], gb).unwrap());
            })),
        );
        self.graph.make_var(id, Tensor::new(&[bsz, o, ho, wo], out).unwrap())
    }

    /// Transposed 2D convolution: x(B,C,H,W) * w(C,O,kh,kw) + bias(O).
    pub fn conv_transpose2d(&self, w: &Var<T>, bias: &Var<T>, stride: usize, pad: usize) -> Var<T> {
        let d = self.value.dims();
        let (bsz, c, h, wd) = (d[0], d[1], d[2], d[3]);
        let wdims = w.value.dims();
        let (wc, o, kh, kw) = (wdims[0], wdims[1], wdims[2], wdims[3]);
        assert_eq!(c, wc, "conv_transpose2d: channel mismatch");
        assert_eq!(bias.value.dims(), [o], "conv_transpose2d: bias mismatch");
        let geom = ConvGeom { kh, kw, stride, pad };
        let (ho, wo) = geom.transpose_out_size(h, wd);
        debug_assert_eq!(geom.out_size(ho, wo), (h, wd));
        let okk = o * kh * kw;
        let mut out = vec![T::ZERO; bsz * o * ho * wo];
        let mut cols = vec![T::ZERO; okk * h * wd];
        for bi in 0..bsz {
            let x_item = &self.value.data()[bi * c * h * wd..(bi + 1) * c * h * wd];
            // cols = W^T(okk, c) * x(c, h*w)
            gemm(okk, c, h * wd, w.value.data(), true, x_item, false, &mut cols);
            let y = &mut out[bi * o * ho * wo..(bi + 1) * o * ho * wo];
            col2im(&cols, o, ho, wo, geom, y);
            for (oc, plane) in y.chunks_mut(ho * wo).enumerate() {
                let bv = bias.value.data()[oc];
                for v in plane {
                    *v += bv;
                }
            }
        }
        let x = self.value.clone();
        let wt = w.value.clone();
        let id = self.graph.push(
            vec![self.id, w.id, bias.id],
            Some(Box::new(move |g, emit| {
                let gd = g.data();
                let mut gx = vec![T::ZERO; bsz * c * h * wd];
                let mut gw = vec![T::ZERO; c * okk];
                let mut gb = vec![T::ZERO; o];
                let mut gcols = vec![T::ZERO; okk * h * wd];
                for bi in 0..bsz {
                    let gy = &gd[bi * o * ho * wo..(bi + 1) * o * ho * wo];
                    im2col(gy, o, ho, wo, geom, &mut gcols);
                    let gx_item = &mut gx[bi * c * h * wd..(bi + 1) * c * h * wd];
                    gemm(c, okk, h * wd, wt.data(), false, &gcols, false, gx_item);
                    // gw(c, okk) += x(c, h*w) * gcols^T
                    let x_item = &x.data()[bi * c * h * wd..(bi + 1) * c * h * wd];
                    unsafe {
                        T::gemm_strided(
                            c,
                            h * wd,
                            okk,
                            T::ONE,
                            x_item.as_ptr(),
                            (h * wd) as isize,
                            1,
                            gcols.as_ptr(),
                            1,
                            (h * wd) as isize,
                            T::ONE,
                            gw.as_mut_ptr(),
                            okk as isize,
                            1,
                        );
                    }
                    for (oc, plane) in gy.chunks(ho * wo).enumerate() {
                        for &v in plane {
                            gb[oc] += v;
                        }
                    }
                }
                emit(0, Tensor::new(&[bsz, c, h, wd], gx).unwrap());
                emit(1, Tensor::new(&[c, o, kh, kw], gw).unwrap());
                emit(2, Tensor::new(&[o], gb).unwrap());
            })),
        );
        self.graph.make_var(id, Tensor::new(&[bsz, o, ho, wo], out).unwrap())
    }

    /// Global average pool (B,C,H,W) -> (B,C).
    pub fn global_avg_pool(&self) -> Var<T> {
        let d = self.value.dims();
        let (bsz, c, h, w) = (d[0], d[1], d[2], d[3]);
        let inv = T::ONE / T::from_f64((h * w) as f64);
        let mut out = vec![T::ZERO; bsz * c];
        for (i, plane) in self.value.data().chunks(h * w).enumerate() {
            let mut acc = T::ZERO;
            for &v in plane {
                acc += v;
            }
            out[i] = acc * inv;
        }
        let id = self.graph.push(
            vec![self.id],
            Some(Box::new(move |g, emit| {
                let mut gx = vec![T::ZERO; bsz * c * h * w];
                for (i, chunk) in gx.chunks_mut(h * w).enumerate() {
                    let gv = g.data()[i] * inv;
                    for v in chunk {
                        *v = gv;
                    }
                }
                emit(0, Tensor::new(&[bsz, c, h, w], gx).unwrap());
            })),
        );
        self.graph.make_var(id, Tensor::new(&[bsz, c], out).unwrap())
    }

    /// Concatenate along the feature axis: (B,F1) ++ (B,F2) -> (B,F1+F2).
    pub fn concat_features(&self, other: &Var<T>) -> Var<T> {
        let (b1, f1) = (self.value.dims()[0], self.value.dims()[1]);
        let (b2, f2) = (other.value.dims()[0], other.value.dims()[1]);
        assert_eq!(b1, b2, "concat_features: batch mismatch");
        let mut out = vec![T::ZERO; b1 * (f1 + f2)];
        for bi in 0..b1 {
            out[bi * (f1 + f2)..bi * (f1 + f2) + f1]
                .copy_from_slice(&self.value.data()[bi * f1..(bi + 1) * f1]);
            out[bi * (f1 + f2) + f1..(bi + 1) * (f1 + f2)]
                .copy_from_slice(&other.value.data()[bi * f2..(bi + 1) * f2]);
        }
        let id = self.graph.push(
            vec![self.id, other.id],
            Some(Box::new(move |g, emit| {
                let gd = g.data();
                let mut ga = vec![T::ZERO; b1 * f1];
                let mut gb = vec![T::ZERO; b1 * f2];
                for bi in 0..b1 {
                    ga[bi * f1..(bi + 1) * f1]
                        .copy_from_slice(&gd[bi * (f1 + f2)..bi * (f1 + f2) + f1]);
                    gb[bi * f2..(bi + 1) * f2]
                        .copy_from_slice(&gd[bi * (f1 + f2) + f1..(bi + 1) * (f1 + f2)]);
                }
                emit(0, Tensor::new(&[b1, f1], ga).unwrap());
                emit(1, Tensor::new(&[b1, f2], gb).unwrap());
            })),
        );
        self.graph.make_var(id, Tensor::new(&[b1, f1 + f2], out).unwrap())
    }

    /// Warp each item of x(B,C,H,W) by its row of theta(B,6), the normalized
    /// inverse-warp affine `[a11, a12, tx, a21, a22, ty]`. Bilinear, zeros
    /// fill, differentiable in both inputs.
    pub fn affine_grid_sample(&self, theta: &Var<T>) -> Var<T> {
        let d = self.value.dims();
        let (bsz, c, h, w) = (d[0], d[1], d[2], d[3]);
        assert_eq!(theta.value.dims(), [bsz, 6], "affine_grid_sample: theta shape");
        let plane = c * h * w;
        let mut out = vec![T::ZERO; bsz * plane];
        for bi in 0..bsz {
            let view = MapView::new(&self.value.data()[bi * plane..(bi + 1) * plane], c, h, w)
                .expect("sized above");
            let mut th = [T::ZERO; 6];
            th.copy_from_slice(&theta.value.data()[bi * 6..(bi + 1) * 6]);
            out[bi * plane..(bi + 1) * plane].copy_from_slice(&affine_warp_t(view, th));
        }
        let x = self.value.clone();
        let thv = theta.value.clone();
        let id = self.graph.push(
            vec![self.id, theta.id],
            Some(Box::new(move |g, emit| {
                let gd = g.data();
                let mut gx = vec![T::ZERO; bsz * plane];
                let mut gth = vec![T::ZERO; bsz * 6];
                for bi in 0..bsz {
                    let view =
                        MapView::new(&x.data()[bi * plane..(bi + 1) * plane], c, h, w).unwrap();
                    let mut th = [T::ZERO; 6];
                    th.copy_from_slice(&thv.data()[bi * 6..(bi + 1) * 6]);
                    let (gi, gt) =
                        warp_backward(view, th, &gd[bi * plane..(bi + 1) * plane]);
                    gx[bi * plane..(bi + 1) * plane].copy_from_slice(&gi);
                    gth[bi * 6..(bi + 1) * 6].copy_from_slice(&gt);
                }
                emit(0, Tensor::new(&[bsz, c, h, w], gx).unwrap());
                emit(1, Tensor::new(&[bsz, 6], gth).unwrap());
            })),
        );
        self.graph.make_var(id, Tensor::new(&[bsz, c, h, w], out).unwrap())
    }
}
