//! Quantitative harness: paired eval generation, MSE/PSNR for the two
//! manipulations, the two model-free baselines, and transform statistics.

mod report;

pub use report::{emit_report, quartiles, EvalReport, SummaryStats};

use crate::datagen::{
    ground_truth_affine, placement_leaves_canvas, sample_training_pair, simulate_sequence,
    warped_alpha_for_placement, BackgroundSpec, DatasetConfig, DigitSprite, VideoSequence,
};
use crate::error::{Error, Result};
use crate::frame::{batch_tensor, Frame};
use crate::model::{BoundModel, ModelState};
use crate::nn::Graph;
use crate::rng::{stream, uniform_usize, TAG_STATS};
use crate::warp::{compose, CoordFrame};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Per-pixel float mean squared error.
pub fn mse(a: &Frame, b: &Frame) -> f64 {
    a.mse(b)
}

/// Peak signal-to-noise ratio in dB for unit-peak float images; identical
/// frames yield the +inf sentinel, which summaries exclude and count.
pub fn psnr(a: &Frame, b: &Frame) -> f64 {
    let m = mse(a, b);
    if m == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * m.log10()
    }
}

/// Per-example values with mean and 1.96*sd/sqrt(n) confidence interval.
/// `count` is the number of requested examples; infinite entries (identical
/// frames under PSNR) are excluded from the moments and counted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub ci95: f64,
    pub count: usize,
    pub excluded_inf: usize,
}

impl MetricSummary {
    pub fn from_values(values: Vec<f64>) -> Self {
        let count = values.len();
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let excluded_inf = count - finite.len();
        let n = finite.len();
        let mean = if n == 0 { f64::NAN } else { finite.iter().sum::<f64>() / n as f64 };
        let ci95 = if n > 1 {
            let var = finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            1.96 * var.sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        Self { values, mean, ci95, count, excluded_inf }
    }
}

/// Two sequences with distinct digit and background, shared frame indices,
/// and the two manipulation ground-truth composites.
pub struct EvalPair {
    pub seq1: VideoSequence,
    pub seq2: VideoSequence,
    pub i: usize,
    pub j: usize,
    /// Object of seq1 at its frame-j placement over seq2's background.
    pub bg_target: Frame,
    /// Seq2's scene advanced by seq1's frame i -> j transform.
    pub tf_target: Frame,
    /// Seq2's background with no object.
    pub bg2_frame: Frame,
}

const PAIR_RESAMPLE_CAP: usize = 100;

/// Build one eval pair; resamples everything when the transform replay would
/// push seq2's object out of canvas.
pub fn make_eval_pair(
    rng: &mut ChaCha8Rng,
    config: &DatasetConfig,
    backgrounds: &[BackgroundSpec],
    digits: &[DigitSprite],
) -> Result<EvalPair> {
    if backgrounds.len() < 2 || digits.len() < 2 {
        return Err(Error::EmptyInput("need at least two backgrounds and digits".into()));
    }
    for _ in 0..PAIR_RESAMPLE_CAP {
        let d1 = uniform_usize(rng, digits.len());
        let d2 = loop {
            let c = uniform_usize(rng, digits.len());
            if c != d1 {
                break c;
            }
        };
        let b1 = uniform_usize(rng, backgrounds.len());
        let b2 = loop {
            let c = uniform_usize(rng, backgrounds.len());
            if c != b1 {
                break c;
            }
        };
        let (seq1, masks1) =
            simulate_sequence(&[&digits[d1]], &backgrounds[b1], rng, config, 0, 0)?;
        let (seq2, _) = simulate_sequence(&[&digits[d2]], &backgrounds[b2], rng, config, 1, 0)?;
        let (_, _, (i, j)) = sample_training_pair(&seq1, rng);

        let bg2 = &backgrounds[b2];
        let bg_target = composite_frame(&masks1[0][j], &bg2.rendered);

        // Replay seq1's i -> j canvas-space transform onto seq2's object.
        let gt1 = ground_truth_affine(&seq1, i, j)?;
        let track2 = seq2.object();
        let replayed = compose(&gt1, &track2.placement(i))?;
        if placement_leaves_canvas(track2, &replayed) {
            continue;
        }
        let tf_mask = warped_alpha_for_placement(track2, &replayed);
        let tf_target = composite_frame(&tf_mask, &bg2.rendered);
        let bg2_frame = Frame::new(bg2.rendered.iter().map(|&v| v as f32).collect())?;
        return Ok(EvalPair { seq1, seq2, i, j, bg_target, tf_target, bg2_frame });
    }
    Err(Error::Generation(format!(
        "no valid eval pair after {PAIR_RESAMPLE_CAP} resamples"
    )))
}

fn composite_frame(mask: &[f64], background: &[f64]) -> Frame {
    let rgb = crate::datagen::composite_alpha_over(mask, background);
    Frame::new(rgb.into_iter().map(|v| v as f32).collect()).expect("frame sized")
}

/// Generate `n` eval pairs from independent seeded streams, in parallel.
pub fn make_eval_pairs(
    seed: u64,
    n: usize,
    config: &DatasetConfig,
    backgrounds: &[BackgroundSpec],
    digits: &[DigitSprite],
) -> Result<Vec<EvalPair>> {
    (0..n as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(seed, &[TAG_STATS, 0xEE, t]);
            make_eval_pair(&mut rng, config, backgrounds, digits)
        })
        .collect()
}

enum ManipKind {
    Background,
    Transform,
}

/// Batched model predictions for one manipulation over all pairs; returns
/// (mse summary, psnr summary).
fn eval_manip(
    state: &ModelState,
    pairs: &[EvalPair],
    kind: ManipKind,
) -> Result<(MetricSummary, MetricSummary)> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no eval pairs".into()));
    }
    const CHUNK: usize = 16;
    let chunk_results: Vec<Vec<(f64, f64)>> = pairs
        .par_chunks(CHUNK)
        .map(|chunk| {
            let g = Graph::inference();
            let bound: BoundModel<'_> = state.bind(&g);
            let x1: Vec<&Frame> = chunk.iter().map(|p| &p.seq1.frames[p.i]).collect();
            let x2: Vec<&Frame> = chunk.iter().map(|p| &p.seq1.frames[p.j]).collect();
            let (x3, x4, targets): (Vec<&Frame>, Vec<&Frame>, Vec<&Frame>) = match kind {
                // x̂ = g(T^Z(f_o(x1_i), f_o(x1_j)) ∘ f_o(x1_i) + f_b(x2_i))
                ManipKind::Background => (
                    chunk.iter().map(|p| &p.seq1.frames[p.i]).collect(),
                    chunk.iter().map(|p| &p.seq2.frames[p.i]).collect(),
                    chunk.iter().map(|p| &p.bg_target).collect(),
                ),
                // x̂ = g(T^Z(f_o(x1_i), f_o(x1_j)) ∘ f_o(x2_i) + f_b(x2_i))
                ManipKind::Transform => (
                    chunk.iter().map(|p| &p.seq2.frames[p.i]).collect(),
                    chunk.iter().map(|p| &p.seq2.frames[p.i]).collect(),
                    chunk.iter().map(|p| &p.tf_target).collect(),
                ),
            };
            let out = bound.compose_h(
                &g.var(batch_tensor(&x1)),
                &g.var(batch_tensor(&x2)),
                &g.var(batch_tensor(&x3)),
                &g.var(batch_tensor(&x4)),
            );
            let plane = crate::frame::FRAME_LEN;
            out.value()
                .data()
                .chunks(plane)
                .zip(targets)
                .map(|(pred, target)| {
                    let frame = Frame::new(pred.to_vec()).expect("frame sized");
                    (mse(&frame, target), psnr(&frame, target))
                })
                .collect()
        })
        .collect();
    let mut mses = Vec::with_capacity(pairs.len());
    let mut psnrs = Vec::with_capacity(pairs.len());
    for chunk in chunk_results {
        for (m, p) in chunk {
            mses.push(m);
            psnrs.push(p);
        }
    }
    Ok((MetricSummary::from_values(mses), MetricSummary::from_values(psnrs)))
}

/// Background manipulation quality against its composite ground truth.
pub fn eval_background_manip(
    state: &ModelState,
    pairs: &[EvalPair],
) -> Result<(MetricSummary, MetricSummary)> {
    eval_manip(state, pairs, ManipKind::Background)
}

/// Transform manipulation quality against its replayed ground truth.
pub fn eval_transform_manip(
    state: &ModelState,
    pairs: &[EvalPair],
) -> Result<(MetricSummary, MetricSummary)> {
    eval_manip(state, pairs, ManipKind::Transform)
}

/// Model-free upper bound: a frame against the other sampled frame of the
/// same video (seq2 at the shared indices).
pub fn baseline_video_frames(pairs: &[EvalPair]) -> Result<(MetricSummary, MetricSummary)> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no eval pairs".into()));
    }
    let values: Vec<(f64, f64)> = pairs
        .iter()
        .map(|p| {
            let (a, b) = (&p.seq2.frames[p.i], &p.seq2.frames[p.j]);
            (mse(a, b), psnr(a, b))
        })
        .collect();
    Ok((
        MetricSummary::from_values(values.iter().map(|v| v.0).collect()),
        MetricSummary::from_values(values.iter().map(|v| v.1).collect()),
    ))
}

/// Model-free upper bound: the bare background against the full frame.
pub fn baseline_no_object(pairs: &[EvalPair]) -> Result<(MetricSummary, MetricSummary)> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no eval pairs".into()));
    }
    let values: Vec<(f64, f64)> = pairs
        .iter()
        .map(|p| {
            let full = &p.seq2.frames[p.i];
            (mse(&p.bg2_frame, full), psnr(&p.bg2_frame, full))
        })
        .collect();
    Ok((
        MetricSummary::from_values(values.iter().map(|v| v.0).collect()),
        MetricSummary::from_values(values.iter().map(|v| v.1).collect()),
    ))
}

/// Which transform population to analyze.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformSource {
    GroundTruth,
    Learned,
}

/// Entrywise statistics of 2x3 transform matrices over sampled frame pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformStats {
    pub source: String,
    pub frame: String,
    pub n_pairs: usize,
    pub mean: [f64; 6],
    pub max: [f64; 6],
    pub min: [f64; 6],
}

/// Sample fresh trajectories and accumulate per-entry mean/max/min of either
/// the ground-truth pixel-frame affine or the learned normalized transform.
pub fn analyze_transform_stats(
    source: TransformSource,
    state: Option<&ModelState>,
    config: &DatasetConfig,
    digits: &[DigitSprite],
    backgrounds: &[BackgroundSpec],
    n_pairs: usize,
    seed: u64,
) -> Result<TransformStats> {
    if n_pairs == 0 {
        return Err(Error::EmptyInput("n_pairs = 0".into()));
    }
    if digits.is_empty() {
        return Err(Error::EmptyInput("no digit sprites".into()));
    }
    let entries: Vec<[f64; 6]> = match source {
        TransformSource::GroundTruth => (0..n_pairs as u64)
            .into_par_iter()
            .map(|t| -> Result<[f64; 6]> {
                let mut rng = stream(seed, &[TAG_STATS, 1, t]);
                let sprite = &digits[uniform_usize(&mut rng, digits.len())];
                let sim = crate::datagen::simulate_track(sprite, &mut rng, config)?;
                let track = sim.track;
                let m = config.m;
                let i = uniform_usize(&mut rng, m);
                let j = {
                    let j0 = uniform_usize(&mut rng, m - 1);
                    if j0 >= i {
                        j0 + 1
                    } else {
                        j0
                    }
                };
                let gt = compose(
                    &track.placement(j),
                    &crate::warp::invert(&track.placement(i))?,
                )?;
                Ok(gt.to_row_major())
            })
            .collect::<Result<_>>()?,
        TransformSource::Learned => {
            let state = state
                .ok_or_else(|| Error::EmptyInput("learned statistics need a model".into()))?;
            if backgrounds.is_empty() {
                return Err(Error::EmptyInput("learned statistics need backgrounds".into()));
            }
            const CHUNK: usize = 16;
            let starts: Vec<usize> = (0..n_pairs).step_by(CHUNK).collect();
            let chunks: Vec<Vec<[f64; 6]>> = starts
                .par_iter()
                .map(|&start| -> Result<Vec<[f64; 6]>> {
                    let count = CHUNK.min(n_pairs - start);
                    let mut frames_i = Vec::with_capacity(count);
                    let mut frames_j = Vec::with_capacity(count);
                    for t in start..start + count {
                        let mut rng = stream(seed, &[TAG_STATS, 2, t as u64]);
                        let (seq, _) = crate::datagen::gen_pooled_sequence(
                            digits,
                            backgrounds,
                            &mut rng,
                            config,
                            t as u32,
                            seed,
                        )?;
                        let (a, b, _) = sample_training_pair(&seq, &mut rng);
                        frames_i.push(a.clone());
                        frames_j.push(b.clone());
                    }
                    let g = Graph::inference();
                    let bound = state.bind(&g);
                    let zi =
                        bound.encode_object(&g.var(batch_tensor(&frames_i.iter().collect::<Vec<_>>())));
                    let zj =
                        bound.encode_object(&g.var(batch_tensor(&frames_j.iter().collect::<Vec<_>>())));
                    let theta = bound.predict_transform(&zi, &zj);
                    Ok(theta
                        .value()
                        .data()
                        .chunks(6)
                        .map(|row| {
                            let mut out = [0.0; 6];
                            for (o, &v) in out.iter_mut().zip(row) {
                                *o = v as f64;
                            }
                            out
                        })
                        .collect())
                })
                .collect::<Result<_>>()?;
            chunks.into_iter().flatten().collect()
        }
    };
    let mut mean = [0.0f64; 6];
    let mut max = [f64::MIN; 6];
    let mut min = [f64::MAX; 6];
    for e in &entries {
        for k in 0..6 {
            mean[k] += e[k];
            max[k] = max[k].max(e[k]);
            min[k] = min[k].min(e[k]);
        }
    }
    for v in &mut mean {
        *v /= entries.len() as f64;
    }
    let (source_name, frame) = match source {
        TransformSource::GroundTruth => ("ground_truth", CoordFrame::Pixel),
        TransformSource::Learned => ("learned", CoordFrame::Normalized),
    };
    Ok(TransformStats {
        source: source_name.to_string(),
        frame: format!("{frame:?}").to_lowercase(),
        n_pairs: entries.len(),
        mean,
        max,
        min,
    })
}
