//! Procedural stroke-glyph digit corpus.
//!
//! A deterministic stand-in sprite source for environments without the real
//! digit files: ten hand-authored stroke skeletons rasterized at 28x28 with
//! per-sample jitter (scale, rotation, shear, stroke width). Same value
//! range and shape contract as the file-loaded sprites.

use super::{DigitSprite, Split, DIGIT_SIZE};
use crate::rng::{self, stream, uniform_f64, TAG_SPRITES};
use rand_chacha::ChaCha8Rng;

type Stroke = Vec<(f64, f64)>;

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from_deg: f64, to_deg: f64, n: usize) -> Stroke {
    (0..=n)
        .map(|i| {
            let t = (from_deg + (to_deg - from_deg) * i as f64 / n as f64).to_radians();
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

/// Skeletons in a unit box, x right, y down.
fn skeleton(digit: u8) -> Vec<Stroke> {
    match digit {
        0 => vec![arc(0.5, 0.5, 0.30, 0.40, 0.0, 360.0, 28)],
        1 => vec![vec![(0.32, 0.26), (0.52, 0.10), (0.52, 0.90)]],
        2 => vec![vec![
            (0.22, 0.30),
            (0.26, 0.16),
            (0.44, 0.08),
            (0.64, 0.12),
            (0.74, 0.26),
            (0.68, 0.44),
            (0.45, 0.62),
            (0.22, 0.90),
            (0.78, 0.90),
        ]],
        3 => vec![
            arc(0.47, 0.29, 0.24, 0.21, -150.0, 110.0, 14),
            arc(0.45, 0.69, 0.27, 0.23, -70.0, 160.0, 14),
        ],
        4 => vec![
            vec![(0.62, 0.08), (0.18, 0.60), (0.84, 0.60)],
            vec![(0.62, 0.08), (0.62, 0.92)],
        ],
        5 => vec![vec![
            (0.74, 0.10),
            (0.28, 0.10),
            (0.26, 0.44),
            (0.50, 0.40),
            (0.72, 0.52),
            (0.74, 0.72),
            (0.56, 0.88),
            (0.28, 0.84),
        ]],
        6 => vec![
            vec![(0.66, 0.10), (0.44, 0.28), (0.32, 0.52), (0.30, 0.68)],
            arc(0.50, 0.68, 0.20, 0.20, 0.0, 360.0, 20),
        ],
        7 => vec![vec![(0.20, 0.12), (0.80, 0.12), (0.42, 0.92)]],
        8 => vec![
            arc(0.5, 0.30, 0.20, 0.19, 0.0, 360.0, 20),
            arc(0.5, 0.70, 0.24, 0.22, 0.0, 360.0, 20),
        ],
        9 => vec![
            arc(0.50, 0.32, 0.21, 0.21, 0.0, 360.0, 20),
            vec![(0.71, 0.34), (0.66, 0.66), (0.56, 0.90)],
        ],
        _ => unreachable!("digit class 0-9"),
    }
}

fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 { ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    (dx * dx + dy * dy).sqrt()
}

fn render_glyph(digit: u8, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let scale = 0.85 + 0.25 * uniform_f64(rng);
    let rot = (uniform_f64(rng) - 0.5) * 16f64.to_radians();
    let shear = (uniform_f64(rng) - 0.5) * 0.22;
    let dx = (uniform_f64(rng) - 0.5) * 2.4;
    let dy = (uniform_f64(rng) - 0.5) * 2.4;
    let thickness = 2.4 + 1.0 * uniform_f64(rng);
    let (s, c) = rot.sin_cos();
    let size = DIGIT_SIZE as f64;
    let box_scale = size * 0.82 * scale;
    let margin = (size - box_scale) / 2.0;
    let place = |(x, y): (f64, f64)| -> (f64, f64) {
        // Center, shear, rotate, then place into the sprite box.
        let (ux, uy) = (x - 0.5 + shear * (y - 0.5), y - 0.5);
        let (rx, ry) = (c * ux - s * uy, s * ux + c * uy);
        (
            (rx + 0.5) * box_scale + margin + dx,
            (ry + 0.5) * box_scale + margin + dy,
        )
    };
    let strokes: Vec<Stroke> = skeleton(digit)
        .into_iter()
        .map(|st| st.into_iter().map(place).collect())
        .collect();
    let mut out = vec![0.0f32; DIGIT_SIZE * DIGIT_SIZE];
    for py in 0..DIGIT_SIZE {
        for px in 0..DIGIT_SIZE {
            let p = (px as f64, py as f64);
            let mut dist = f64::MAX;
            for st in &strokes {
                for seg in st.windows(2) {
                    dist = dist.min(dist_to_segment(p, seg[0], seg[1]));
                }
            }
            let v = ((thickness - dist) * 1.2 + 0.5).clamp(0.0, 1.0);
            out[py * DIGIT_SIZE + px] = v as f32;
        }
    }
    out
}

/// Deterministic corpus: `train_n` + `test_n` sprites cycling the ten classes.
pub fn synthetic_corpus(
    seed: u64,
    train_n: usize,
    test_n: usize,
) -> (Vec<DigitSprite>, Vec<DigitSprite>) {
    let make = |split: Split, n: usize, tag: u64| -> Vec<DigitSprite> {
        (0..n)
            .map(|i| {
                let mut rng = stream(seed, &[TAG_SPRITES, tag, i as u64]);
                let label = (rng::uniform_u32(&mut rng, 10)) as u8;
                DigitSprite {
                    intensity: render_glyph(label, &mut rng),
                    label,
                    split,
                    source_index: i as u32,
                }
            })
            .collect()
    };
    (make(Split::Train, train_n, 0), make(Split::Test, test_n, 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_in_range() {
        let (a_train, a_test) = synthetic_corpus(9, 20, 10);
        let (b_train, _) = synthetic_corpus(9, 20, 10);
        assert_eq!(a_train.len(), 20);
        assert_eq!(a_test.len(), 10);
        assert_eq!(a_train[7].intensity, b_train[7].intensity);
        for s in a_train.iter().chain(a_test.iter()) {
            assert_eq!(s.intensity.len(), DIGIT_SIZE * DIGIT_SIZE);
            assert!(s.intensity.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(s.label < 10);
            // Every glyph has some ink.
            let mass: f32 = s.intensity.iter().sum();
            assert!(mass > 55.0, "glyph {} too faint: {mass}", s.label);
        }
    }

    #[test]
    fn different_splits_differ() {
        let (train, test) = synthetic_corpus(9, 5, 5);
        assert!(train[0].intensity != test[0].intensity || train[0].label != test[0].label);
    }
}
