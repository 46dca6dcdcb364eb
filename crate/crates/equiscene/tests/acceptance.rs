//! Acceptance suite: one test per criterion, each printing a pass line.
//!
//! Criterion 6 (the desk-scale training run) is `#[ignore]` because it
//! trains for hours on CPU; run it with `cargo test --test acceptance --
//! --include-ignored`. It caches its dataset and checkpoint under
//! `EQUISCENE_ACCEPT_DIR` (default `/root/work/accept`) and reuses them on
//! re-runs via the training loop's resume semantics.

use equiscene::datagen::{
    gen_dataset, synthetic_corpus, DatasetConfig, DatasetReader, Split, SpriteSource,
};
use equiscene::evalsuite::{
    analyze_transform_stats, baseline_no_object, baseline_video_frames, eval_background_manip,
    eval_transform_manip, make_eval_pairs, MetricSummary, TransformSource,
};
use equiscene::frame::{Frame, FRAME_LEN};
use equiscene::model::{self, ModelConfig, ModelState, IDENTITY_THETA};
use equiscene::nn::{Graph, Tensor, Var};
use equiscene::rng::stream;
use equiscene::train::{train_loop, TrainingConfig};
use equiscene::warp::{affine_warp, warp_backward, AffineParams, CoordFrame, MapView};
use rand_chacha::ChaCha8Rng;
use rand_core::RngCore;
use std::path::PathBuf;
use std::time::Instant;

// ---- acceptance profile (criterion 6) ----
const ACCEPT_DATA_SEED: u64 = 77;
const ACCEPT_TRAIN_SEQUENCES: usize = 20_000;
const ACCEPT_TEST_SEQUENCES: usize = 200;
const ACCEPT_STEPS: u64 = 8_000;
const ACCEPT_LR: f64 = 3e-4;
const ACCEPT_TRAIN_SEED: u64 = 33;
const ACCEPT_EVAL_PAIRS: usize = 2_000;
const ACCEPT_EVAL_SEED: u64 = 99;

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    rng.next_u32() as f64 / u32::MAX as f64
}

// Brute-force bilinear warp, re-derived from the convention definition and
// independent of the library kernels.
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

fn rand_affine(rng: &mut ChaCha8Rng) -> AffineParams {
    AffineParams::new(
        1.0 + 0.6 * (unit(rng) - 0.5),
        0.6 * (unit(rng) - 0.5),
        1.2 * (unit(rng) - 0.5),
        0.6 * (unit(rng) - 0.5),
        1.0 + 0.6 * (unit(rng) - 0.5),
        1.2 * (unit(rng) - 0.5),
        CoordFrame::Normalized,
    )
}

#[test]
fn criterion_1_warp_matches_bruteforce_oracle() {
    let start = Instant::now();
    let mut rng = stream(0xACCE, &[1]);
    for case in 0..1000 {
        let c = 1 + (rng.next_u32() % 4) as usize;
        let h = 2 + (rng.next_u32() % 15) as usize;
        let w = 2 + (rng.next_u32() % 15) as usize;
        let data: Vec<f64> = (0..c * h * w).map(|_| unit(&mut rng) * 2.0 - 1.0).collect();
        let a = rand_affine(&mut rng);
        let fast = affine_warp(MapView::new(&data, c, h, w).unwrap(), &a).unwrap();
        let slow = oracle_warp(&data, c, h, w, a.to_row_major());
        for (i, (x, y)) in fast.iter().zip(slow.iter()).enumerate() {
            assert!(
                (x - y).abs() < 1e-5,
                "case {case} idx {i}: kernel {x} vs oracle {y}"
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    println!("criterion 1 pass: 1000 warp cases match the brute-force oracle ({elapsed:?})");
}

#[test]
fn criterion_2_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut rng = stream(0xACCE, &[2]);
    let step = 1e-4;
    // 50 warp cases: d/d(theta) and sampled d/d(input) in double precision.
    // Bilinear sampling is piecewise linear, so central differences are only
    // valid away from the integer-lattice kinks; affines whose sample points
    // come within the differencing span of a kink are resampled.
    let clear_of_kinks = |m: [f64; 6], h: usize, w: usize| -> bool {
        let margin = 4.0 * 1e-4 * (h.max(w) as f64);
        for oy in 0..h {
            for ox in 0..w {
                let nx = (2.0 * ox as f64 + 1.0) / w as f64 - 1.0;
                let ny = (2.0 * oy as f64 + 1.0) / h as f64 - 1.0;
                let sx = ((m[0] * nx + m[1] * ny + m[2]) + 1.0) * w as f64 / 2.0 - 0.5;
                let sy = ((m[3] * nx + m[4] * ny + m[5]) + 1.0) * h as f64 / 2.0 - 0.5;
                if (sx - sx.round()).abs() < margin || (sy - sy.round()).abs() < margin {
                    return false;
                }
            }
        }
        true
    };
    for case in 0..50 {
        let (c, h, w) = (2, 6 + (rng.next_u32() % 4) as usize, 6 + (rng.next_u32() % 4) as usize);
        let data: Vec<f64> = (0..c * h * w).map(|_| unit(&mut rng) * 2.0 - 1.0).collect();
        let weights: Vec<f64> = (0..c * h * w).map(|_| unit(&mut rng) * 2.0 - 1.0).collect();
        let theta = loop {
            let cand = rand_affine(&mut rng).to_row_major();
            if clear_of_kinks(cand, h, w) {
                break cand;
            }
        };
        let loss = |d: &[f64], th: [f64; 6]| -> f64 {
            oracle_warp(d, c, h, w, th).iter().zip(&weights).map(|(o, g)| o * g).sum()
        };
        let (gin, gtheta) = warp_backward(MapView::new(&data, c, h, w).unwrap(), theta, &weights);
        for p in 0..6 {
            let (mut tp, mut tm) = (theta, theta);
            tp[p] += step;
            tm[p] -= step;
            let fd = (loss(&data, tp) - loss(&data, tm)) / (2.0 * step);
            let rel = (gtheta[p] - fd).abs() / fd.abs().max(1e-4);
            assert!(rel < 1e-3, "warp case {case} theta[{p}]: {} vs {fd}", gtheta[p]);
        }
        for i in (0..data.len()).step_by(11) {
            let mut dp = data.clone();
            dp[i] += step;
            let mut dm = data.clone();
            dm[i] -= step;
            let fd = (loss(&dp, theta) - loss(&dm, theta)) / (2.0 * step);
            let rel = (gin[i] - fd).abs() / fd.abs().max(1e-4);
            assert!(rel < 1e-3, "warp case {case} input[{i}]: {} vs {fd}", gin[i]);
        }
    }
    // 50 transform-head cases: the predict_transform pipeline (pool, embed,
    // leaky relu, ordered concat, hidden, output) built in f64 with random
    // parameters so gradients flow through every stage.
    let (cz, hz, he, hh) = (8usize, 4usize, 16usize, 16usize);
    for case in 0..50 {
        let mk = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
            (0..n).map(|_| (unit(rng) * 2.0 - 1.0) * 0.5).collect()
        };
        let z1d = mk(&mut rng, cz * hz * hz);
        let z2d = mk(&mut rng, cz * hz * hz);
        let ew = mk(&mut rng, cz * he);
        let eb = mk(&mut rng, he);
        let hw = mk(&mut rng, 2 * he * hh);
        let hb = mk(&mut rng, hh);
        let ow = mk(&mut rng, hh * 6);
        let ob = mk(&mut rng, 6);
        let sel = mk(&mut rng, 6);
        let run = |z1d: &[f64], z2d: &[f64]| -> (f64, Graph<f64>, Var<f64>, Var<f64>, Var<f64>) {
            let g: Graph<f64> = Graph::new();
            let z1 = g.var(Tensor::new(&[1, cz, hz, hz], z1d.to_vec()).unwrap());
            let z2 = g.var(Tensor::new(&[1, cz, hz, hz], z2d.to_vec()).unwrap());
            let embed_w = g.var(Tensor::new(&[cz, he], ew.clone()).unwrap());
            let embed_b = g.var(Tensor::new(&[he], eb.clone()).unwrap());
            let hidden_w = g.var(Tensor::new(&[2 * he, hh], hw.clone()).unwrap());
            let hidden_b = g.var(Tensor::new(&[hh], hb.clone()).unwrap());
            let out_w = g.var(Tensor::new(&[hh, 6], ow.clone()).unwrap());
            let out_b = g.var(Tensor::new(&[6], ob.clone()).unwrap());
            let emb = |z: &Var<f64>| {
                z.global_avg_pool().linear(&embed_w, &embed_b).leaky_relu(0.1)
            };
            let theta = emb(&z1)
                .concat_features(&emb(&z2))
                .linear(&hidden_w, &hidden_b)
                .leaky_relu(0.1)
                .linear(&out_w, &out_b);
            let picks = g.var(Tensor::new(&[1, 6], sel.clone()).unwrap());
            let loss = theta.mul(&picks).sum_all();
            (loss.value().item(), g, loss, z1, z2)
        };
        let (_, g, loss, z1, z2) = run(&z1d, &z2d);
        let grads = g.backward(&loss);
        for (vi, (var, base)) in [(&z1, &z1d), (&z2, &z2d)].iter().enumerate() {
            let analytic = grads.get(var).unwrap();
            for i in (0..base.len()).step_by(17) {
                let mut dp = base.to_vec();
                dp[i] += step;
                let mut dm = base.to_vec();
                dm[i] -= step;
                let (fp, ..) = if vi == 0 { run(&dp, &z2d) } else { run(&z1d, &dp) };
                let (fm, ..) = if vi == 0 { run(&dm, &z2d) } else { run(&z1d, &dm) };
                let fd = (fp - fm) / (2.0 * step);
                let rel = (analytic.data()[i] - fd).abs() / fd.abs().max(1e-4);
                assert!(
                    rel < 1e-3,
                    "head case {case} z{} [{i}]: {} vs {fd}",
                    vi + 1,
                    analytic.data()[i]
                );
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    println!("criterion 2 pass: warp and transform-head gradients match finite differences ({elapsed:?})");
}

fn random_frame(rng: &mut ChaCha8Rng) -> Frame {
    Frame::new((0..FRAME_LEN).map(|_| rng.next_u32() as f32 / u32::MAX as f32).collect()).unwrap()
}

#[test]
fn criterion_3_fresh_model_predicts_identity_exactly() {
    let state = ModelState::init(&ModelConfig::default()).unwrap();
    let mut rng = stream(0xACCE, &[3]);
    for case in 0..100 {
        let z1 = model::encode_object(&state, &random_frame(&mut rng));
        let z2 = model::encode_object(&state, &random_frame(&mut rng));
        let t = model::predict_transform(&state, &z1, &z2).unwrap();
        assert_eq!(
            t.to_row_major().map(|v| v as f32),
            IDENTITY_THETA,
            "pair {case} deviates from the identity"
        );
    }
    println!("criterion 3 pass: 100 fresh-model pairs return the identity transform bitwise");
}

#[test]
fn criterion_4_ground_truth_statistics() {
    let start = Instant::now();
    let config = DatasetConfig { seed: ACCEPT_DATA_SEED, ..Default::default() };
    let (digits, _) = config.load_sprites().unwrap();
    let stats = analyze_transform_stats(
        TransformSource::GroundTruth,
        None,
        &config,
        &digits,
        &[],
        40_000,
        0x7AB1,
    )
    .unwrap();
    let expect_lin = [0.990, -0.003, 0.003, 0.990];
    let got_lin = [stats.mean[0], stats.mean[1], stats.mean[3], stats.mean[4]];
    for (g, e) in got_lin.iter().zip(expect_lin.iter()) {
        assert!((g - e).abs() <= 0.01, "linear mean {got_lin:?} vs {expect_lin:?}");
    }
    assert!(stats.mean[2].abs() <= 1.5, "mean tx {}", stats.mean[2]);
    assert!(stats.mean[5].abs() <= 1.5, "mean ty {}", stats.mean[5]);
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 300, "took {elapsed:?}");
    println!(
        "criterion 4 pass: 40k-pair mean linear {:?} within ±0.01, mean translation ({:.3}, {:.3}) within ±1.5 ({elapsed:?})",
        got_lin, stats.mean[2], stats.mean[5]
    );
}

#[test]
fn criterion_5_loss_identities() {
    let g: Graph<f32> = Graph::inference();
    // L_inv(x, x) = 0 exactly.
    let x = g.var(Tensor::full(&[1, 64, 16, 16], 0.37));
    assert_eq!(x.mse(&x).value().item(), 0.0);
    // Analytic MSE: all-0 vs all-0.5 -> 0.25 exact to 1e-9.
    let a = g.var(Tensor::full(&[1, 3, 64, 64], 0.0f32));
    let b = g.var(Tensor::full(&[1, 3, 64, 64], 0.5f32));
    assert!((a.mse(&b).value().item() as f64 - 0.25).abs() < 1e-9);
    // Total additivity, exact on dyadic parts.
    let (s, e, i) = (
        g.var(Tensor::scalar_value(0.25f32)),
        g.var(Tensor::scalar_value(0.5f32)),
        g.var(Tensor::scalar_value(0.125f32)),
    );
    let total = s.add(&e.scale(1.0)).add(&i.scale(1.0)).value().item() as f64;
    assert!((total - 0.875).abs() < 1e-9);
    let scene_only = s.add(&e.scale(0.0)).add(&i.scale(0.0)).value().item() as f64;
    assert!((scene_only - 0.25).abs() < 1e-9);
    println!("criterion 5 pass: loss identities hold to 1e-9");
}

fn accept_root() -> PathBuf {
    PathBuf::from(std::env::var("EQUISCENE_ACCEPT_DIR").unwrap_or("/root/work/accept".into()))
}

fn accept_dataset_config() -> DatasetConfig {
    DatasetConfig { seed: ACCEPT_DATA_SEED, ..Default::default() }
}

fn accept_training_config() -> TrainingConfig {
    TrainingConfig {
        steps: ACCEPT_STEPS,
        learning_rate: ACCEPT_LR,
        seed: ACCEPT_TRAIN_SEED,
        checkpoint_every: 500,
        ..Default::default()
    }
}

/// Criterion 6: the desk-scale training run (reduced CPU profile: 8,000
/// steps at defaults otherwise, lr raised to compress the shortened
/// schedule). Hours on first run; later runs reuse the cached dataset and
/// checkpoint.
#[test]
#[ignore = "desk-scale training run (hours on CPU); run with --include-ignored"]
fn criterion_6_training_run_relative_ordering() {
    let root = accept_root();
    let data_dir = root.join("data");
    let run_dir = root.join("run");
    let config = accept_dataset_config();
    if !data_dir.join("train").join("manifest.json").exists() {
        let (train, test) = config.load_sprites().unwrap();
        gen_dataset(
            &config,
            &train,
            &test,
            &data_dir,
            ACCEPT_TRAIN_SEQUENCES,
            ACCEPT_TEST_SEQUENCES,
        )
        .unwrap();
    }
    let reader = DatasetReader::open(&data_dir, Split::Train).unwrap();
    assert!(reader.len() >= 20_000, "acceptance dataset too small: {}", reader.len());
    drop(reader);

    // Resumes (or validates) the cached run; a no-op when already at
    // ACCEPT_STEPS with the same trajectory hash.
    let outcome =
        train_loop(&ModelConfig::default(), &accept_training_config(), &data_dir, &run_dir)
            .unwrap();
    let (state, _) = model::load_checkpoint(&outcome.checkpoint).unwrap();
    assert!(state.step >= ACCEPT_STEPS, "checkpoint at step {}", state.step);

    // ≥ 2,000 eval pairs from the test pools.
    let test_reader = DatasetReader::open(&data_dir, Split::Test).unwrap();
    let (_, test_digits) = config.load_sprites().unwrap();
    let pairs = make_eval_pairs(
        ACCEPT_EVAL_SEED,
        ACCEPT_EVAL_PAIRS,
        &config,
        test_reader.backgrounds(),
        &test_digits,
    )
    .unwrap();
    let (_, bg_psnr) = eval_background_manip(&state, &pairs).unwrap();
    let (_, tf_psnr) = eval_transform_manip(&state, &pairs).unwrap();
    let (_, vf_psnr) = baseline_video_frames(&pairs).unwrap();
    let (_, no_psnr) = baseline_no_object(&pairs).unwrap();

    // (a) background manipulation beats both baselines, no-object by >= 2 dB.
    assert!(
        bg_psnr.mean > vf_psnr.mean && bg_psnr.mean > no_psnr.mean,
        "background manip {:.3} dB does not beat baselines ({:.3}, {:.3})",
        bg_psnr.mean,
        vf_psnr.mean,
        no_psnr.mean
    );
    assert!(
        bg_psnr.mean >= no_psnr.mean + 2.0,
        "background manip {:.3} dB < no-object {:.3} + 2 dB",
        bg_psnr.mean,
        no_psnr.mean
    );
    // (b) transform manipulation within ±1.5 dB of the video-frames baseline.
    assert!(
        (tf_psnr.mean - vf_psnr.mean).abs() <= 1.5,
        "transform manip {:.3} dB vs video frames {:.3} dB",
        tf_psnr.mean,
        vf_psnr.mean
    );
    // (c) baselines are model-free (no model argument exists) and repeat
    // bit-exactly on regenerated pairs.
    let pairs2 = make_eval_pairs(
        ACCEPT_EVAL_SEED,
        ACCEPT_EVAL_PAIRS,
        &config,
        test_reader.backgrounds(),
        &test_digits,
    )
    .unwrap();
    let (vf2_mse, vf2_psnr) = baseline_video_frames(&pairs2).unwrap();
    let (no2_mse, no2_psnr) = baseline_no_object(&pairs2).unwrap();
    let (vf_mse, _) = baseline_video_frames(&pairs).unwrap();
    let (no_mse, _) = baseline_no_object(&pairs).unwrap();
    assert_eq!(vf_mse.values, vf2_mse.values);
    assert_eq!(no_mse.values, no2_mse.values);
    assert_eq!(vf_psnr.mean.to_bits(), vf2_psnr.mean.to_bits());
    assert_eq!(no_psnr.mean.to_bits(), no2_psnr.mean.to_bits());

    println!(
        "criterion 6 pass: bg {:.3} dB > baselines ({:.3}, {:.3}), no-object gap {:.3} dB >= 2; \
         transform {:.3} dB within ±1.5 of video frames; baselines reproduce bit-exactly",
        bg_psnr.mean,
        vf_psnr.mean,
        no_psnr.mean,
        bg_psnr.mean - no_psnr.mean,
        tf_psnr.mean
    );
    report_summary("bg", &bg_psnr);
    report_summary("tf", &tf_psnr);
    report_summary("vf", &vf_psnr);
    report_summary("no", &no_psnr);
}

fn report_summary(tag: &str, s: &MetricSummary) {
    println!(
        "  {tag}: mean {:.4} ± {:.4} dB over {} (excluded {})",
        s.mean, s.ci95, s.count, s.excluded_inf
    );
}

#[test]
fn criterion_7_manipulation_wiring_is_exact() {
    let state = ModelState::init(&ModelConfig {
        latent_channels: 8,
        stem_channels: 4,
        head_embed: 8,
        head_hidden: 8,
        param_seed: 41,
        ..Default::default()
    })
    .unwrap();
    let mut rng = stream(0xACCE, &[7]);
    for _ in 0..5 {
        let (a, b, c, d) = (
            random_frame(&mut rng),
            random_frame(&mut rng),
            random_frame(&mut rng),
            random_frame(&mut rng),
        );
        let h =
            |x1: &Frame, x2: &Frame, x3: &Frame, x4: &Frame| model::compose_h(&state, x1, x2, x3, x4).unwrap();
        assert_eq!(
            equiscene::manip::swap_background(&state, &a, &b, &c).unwrap().data(),
            h(&a, &b, &a, &c).data()
        );
        assert_eq!(
            equiscene::manip::retarget_transform(&state, &a, &b, &c).unwrap().data(),
            h(&a, &b, &c, &c).data()
        );
        assert_eq!(
            equiscene::manip::full_mix(&state, &a, &b, &c, &d).unwrap().data(),
            h(&a, &b, &c, &d).data()
        );
    }
    println!("criterion 7 pass: manipulations are pixel-identical to direct h-composition");
}

#[test]
fn criterion_8_end_to_end_determinism() {
    let bin = env!("CARGO_BIN_EXE_equiscene");
    let tmp = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let out = std::process::Command::new(bin).args(args).output().unwrap();
        assert!(
            out.status.success(),
            "command {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    // gen-data twice with one seed: byte-identical trees.
    for dir in ["d1", "d2"] {
        let out = tmp.path().join(dir);
        run(&[
            "gen-data",
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "5",
            "--train-sequences",
            "8",
            "--test-sequences",
            "4",
            "--train-sprites",
            "16",
            "--test-sprites",
            "8",
        ]);
    }
    for split in ["train", "test"] {
        let dir1 = tmp.path().join("d1").join(split);
        for entry in std::fs::read_dir(&dir1).unwrap() {
            let name = entry.unwrap().file_name();
            let a = std::fs::read(dir1.join(&name)).unwrap();
            let b = std::fs::read(tmp.path().join("d2").join(split).join(&name)).unwrap();
            assert_eq!(a, b, "{split}/{name:?} differs across identical gen-data runs");
        }
    }
    // train twice with one seed in deterministic mode: identical loss logs.
    for dir in ["r1", "r2"] {
        let out = tmp.path().join(dir);
        run(&[
            "--deterministic",
            "train",
            "--data",
            tmp.path().join("d1").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--steps",
            "12",
            "--seed",
            "9",
            "--batch-size",
            "4",
            "--latent-channels",
            "16",
            "--stem-channels",
            "8",
        ]);
    }
    let l1 = std::fs::read(tmp.path().join("r1").join("train_log.jsonl")).unwrap();
    let l2 = std::fs::read(tmp.path().join("r2").join("train_log.jsonl")).unwrap();
    assert!(!l1.is_empty());
    assert_eq!(l1, l2, "loss logs differ across identical deterministic runs");
    println!("criterion 8 pass: gen-data trees byte-identical; deterministic training logs identical");
}
