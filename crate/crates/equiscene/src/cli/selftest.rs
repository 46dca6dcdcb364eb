//! Data-free self checks: warp kernels against an independent oracle,
//! gradient spot checks, loss identities, and the identity initialization.

use crate::error::{Error, Result};
use crate::model::{self, ModelConfig, ModelState, IDENTITY_THETA};
use crate::nn::{Graph, Tensor};
use crate::rng::stream;
use crate::warp::{affine_warp, warp_backward, AffineParams, CoordFrame, MapView};
use rand_chacha::ChaCha8Rng;
use rand_core::RngCore;

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    rng.next_u32() as f64 / u32::MAX as f64
}

// Deliberately re-derives the sampling convention with plain loops; this is
// the reference the fast kernel is judged against.
fn oracle_warp(input: &[f64], c: usize, h: usize, w: usize, m: [f64; 6]) -> Vec<f64> {
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for oy in 0..h {
            for ox in 0..w {
                let nx = (2.0 * ox as f64 + 1.0) / w as f64 - 1.0;
                let ny = (2.0 * oy as f64 + 1.0) / h as f64 - 1.0;
                let sx = ((m[0] * nx + m[1] * ny + m[2]) + 1.0) * w as f64 / 2.0 - 0.5;
                let sy = ((m[3] * nx + m[4] * ny + m[5]) + 1.0) * h as f64 / 2.0 - 0.5;
                let (x0, y0) = (sx.floor() as i64, sy.floor() as i64);
                let mut acc = 0.0;
                for (dy, dx) in [(0i64, 0i64), (0, 1), (1, 0), (1, 1)] {
                    let (px, py) = (x0 + dx, y0 + dy);
                    if px < 0 || py < 0 || px >= w as i64 || py >= h as i64 {
                        continue;
                    }
                    let wx = if dx == 0 { 1.0 - (sx - x0 as f64) } else { sx - x0 as f64 };
                    let wy = if dy == 0 { 1.0 - (sy - y0 as f64) } else { sy - y0 as f64 };
                    acc += wx * wy * input[(ch * h + py as usize) * w + px as usize];
                }
                out[(ch * h + oy) * w + ox] = acc;
            }
        }
    }
    out
}

fn fail(suite: &str, detail: String) -> Error {
    Error::Training(format!("selftest {suite} failed: {detail}"))
}

fn warp_oracle_suite(cases: usize) -> Result<()> {
    let mut rng = stream(0x5E1F, &[1]);
    for case in 0..cases {
        let c = 1 + (rng.next_u32() % 4) as usize;
        let h = 2 + (rng.next_u32() % 15) as usize;
        let w = 2 + (rng.next_u32() % 15) as usize;
        let data: Vec<f64> = (0..c * h * w).map(|_| unit(&mut rng) * 2.0 - 1.0).collect();
        let a = AffineParams::new(
            1.0 + 0.5 * (unit(&mut rng) - 0.5),
            0.5 * (unit(&mut rng) - 0.5),
            unit(&mut rng) - 0.5,
            0.5 * (unit(&mut rng) - 0.5),
            1.0 + 0.5 * (unit(&mut rng) - 0.5),
            unit(&mut rng) - 0.5,
            CoordFrame::Normalized,
        );
        let fast = affine_warp(MapView::new(&data, c, h, w)?, &a)?;
        let slow = oracle_warp(&data, c, h, w, a.to_row_major());
        for (i, (x, y)) in fast.iter().zip(slow.iter()).enumerate() {
            if (x - y).abs() > 1e-5 {
                return Err(fail("warp-oracle", format!("case {case} idx {i}: {x} vs {y}")));
            }
        }
    }
    Ok(())
}

fn warp_gradient_suite(cases: usize) -> Result<()> {
    let mut rng = stream(0x5E1F, &[2]);
    let (c, h, w) = (2, 7, 6);
    let step = 1e-4;
    for case in 0..cases {
        let data: Vec<f64> = (0..c * h * w).map(|_| unit(&mut rng) * 2.0 - 1.0).collect();
        let weights: Vec<f64> = (0..c * h * w).map(|_| unit(&mut rng) * 2.0 - 1.0).collect();
        let theta = [
            1.0 + 0.4 * (unit(&mut rng) - 0.5),
            0.4 * (unit(&mut rng) - 0.5),
            unit(&mut rng) - 0.5,
            0.4 * (unit(&mut rng) - 0.5),
            1.0 + 0.4 * (unit(&mut rng) - 0.5),
            unit(&mut rng) - 0.5,
        ];
        let loss = |th: [f64; 6]| -> f64 {
            oracle_warp(&data, c, h, w, th)
                .iter()
                .zip(&weights)
                .map(|(o, g)| o * g)
                .sum()
        };
        let (_, gtheta) = warp_backward(MapView::new(&data, c, h, w)?, theta, &weights);
        for p in 0..6 {
            let (mut tp, mut tm) = (theta, theta);
            tp[p] += step;
            tm[p] -= step;
            let fd = (loss(tp) - loss(tm)) / (2.0 * step);
            let rel = (gtheta[p] - fd).abs() / fd.abs().max(1e-4);
            if rel > 1e-3 {
                return Err(fail(
                    "warp-gradient",
                    format!("case {case} theta[{p}]: {} vs fd {fd}", gtheta[p]),
                ));
            }
        }
    }
    Ok(())
}

fn loss_identity_suite() -> Result<()> {
    let g: Graph<f32> = Graph::inference();
    let a = g.var(Tensor::full(&[2, 3, 8, 8], 0.0));
    let b = g.var(Tensor::full(&[2, 3, 8, 8], 0.5));
    let exact = |x: f64, y: f64, what: &str| -> Result<()> {
        if (x - y).abs() > 1e-9 {
            return Err(fail("loss-identity", format!("{what}: {x} != {y}")));
        }
        Ok(())
    };
    exact(a.mse(&a).value().item() as f64, 0.0, "mse(x,x)")?;
    exact(a.mse(&b).value().item() as f64, 0.25, "half-offset mse")?;
    // Dyadic parts make the weighted sum exact even in f32.
    let s = g.var(Tensor::scalar_value(0.25f32));
    let e = g.var(Tensor::scalar_value(0.5f32));
    let i = g.var(Tensor::scalar_value(0.125f32));
    let total = s.add(&e.scale(1.0)).add(&i.scale(1.0)).value().item() as f64;
    exact(total, 0.875, "total additivity")?;
    let only_scene = s.add(&e.scale(0.0)).add(&i.scale(0.0)).value().item() as f64;
    exact(only_scene, 0.25, "zero coefficients")?;
    // Generic parts hold to the loss-identity tolerance.
    let (gs, ge, gi) = (
        g.var(Tensor::scalar_value(0.1f32)),
        g.var(Tensor::scalar_value(0.2f32)),
        g.var(Tensor::scalar_value(0.3f32)),
    );
    let generic = gs.add(&ge.scale(1.0)).add(&gi.scale(1.0)).value().item() as f64;
    if (generic - 0.6).abs() > 1e-6 {
        return Err(fail("loss-identity", format!("generic additivity: {generic}")));
    }
    Ok(())
}

fn identity_init_suite() -> Result<()> {
    let state = ModelState::init(&ModelConfig {
        latent_channels: 8,
        stem_channels: 4,
        head_embed: 8,
        head_hidden: 8,
        param_seed: 0x1D,
        ..Default::default()
    })?;
    let mut rng = stream(0x5E1F, &[3]);
    for case in 0..20 {
        let frame = |rng: &mut ChaCha8Rng| {
            crate::frame::Frame::new(
                (0..crate::frame::FRAME_LEN)
                    .map(|_| rng.next_u32() as f32 / u32::MAX as f32)
                    .collect(),
            )
            .expect("frame sized")
        };
        let z1 = model::encode_object(&state, &frame(&mut rng));
        let z2 = model::encode_object(&state, &frame(&mut rng));
        let t = model::predict_transform(&state, &z1, &z2)?;
        if t.to_row_major().map(|v| v as f32) != IDENTITY_THETA {
            return Err(fail("identity-init", format!("case {case}: {t:?}")));
        }
    }
    Ok(())
}

/// Run every suite, printing one line each.
pub fn run() -> Result<()> {
    let suites: [(&str, fn() -> Result<()>); 4] = [
        ("warp-oracle", || warp_oracle_suite(200)),
        ("warp-gradient", || warp_gradient_suite(10)),
        ("loss-identity", loss_identity_suite),
        ("identity-init", identity_init_suite),
    ];
    for (name, suite) in suites {
        suite()?;
        println!("ok {name}");
    }
    Ok(())
}
