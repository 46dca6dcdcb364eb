//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 data-format
//! error. Every artifact directory receives the exact resolved run
//! configuration (`run_config.json`) so outputs can be reproduced from it.

mod selftest;

use crate::datagen::{
    self, DatasetConfig, DatasetReader, Split, SpriteSource, VideoSequence,
};
use crate::error::{Error, Result};
use crate::evalsuite::{
    analyze_transform_stats, baseline_no_object, baseline_video_frames, emit_report,
    eval_background_manip, eval_transform_manip, make_eval_pairs, EvalReport, TransformSource,
};
use crate::frame::Frame;
use crate::manip;
use crate::model::{load_checkpoint, ModelConfig, ModelState};
use crate::train::{train_loop, TrainingConfig};
use crate::warp::invert;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(name = "equiscene", version, about = "Equivariant scene representations: dataset generation, training, manipulation, and evaluation")]
struct Cli {
    /// JSON config file with flat dotted keys mirroring the flags
    /// (e.g. {"train.steps": 8000}); explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Pin all numerics to a single thread. Results are bit-identical either
    /// way (parallel work is counter-seeded and reduced in fixed order);
    /// the flag removes even scheduling variation for CI runs.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the moving-digit dataset (both splits).
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        train_sequences: Option<usize>,
        #[arg(long)]
        test_sequences: Option<usize>,
        /// Directory with the four IDX digit files; uses the synthetic
        /// stroke-glyph corpus when omitted.
        #[arg(long)]
        mnist: Option<PathBuf>,
        #[arg(long)]
        sprite_seed: Option<u64>,
        #[arg(long)]
        train_sprites: Option<usize>,
        #[arg(long)]
        test_sprites: Option<usize>,
        /// Frames per sequence.
        #[arg(long)]
        m: Option<usize>,
        /// Digits per video.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        backgrounds: Option<usize>,
    },
    /// Train on a generated dataset, resuming from <out>/checkpoint.bin.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        alpha_equiv: Option<f64>,
        #[arg(long)]
        alpha_inv: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        checkpoint_every: Option<u64>,
        #[arg(long)]
        latent_channels: Option<usize>,
        #[arg(long)]
        stem_channels: Option<usize>,
        #[arg(long)]
        head_embed: Option<usize>,
        #[arg(long)]
        head_hidden: Option<usize>,
        #[arg(long)]
        param_seed: Option<u64>,
    },
    /// Render manipulation figure grids from a trained checkpoint.
    Render {
        #[arg(long, value_enum)]
        mode: RenderMode,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate manipulations and baselines over fresh test pairs.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Entrywise statistics of ground-truth or learned transforms.
    AnalyzeTransforms {
        #[arg(long, value_enum)]
        source: StatsSource,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the data-free warp-oracle and loss-identity suites.
    Selftest,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum RenderMode {
    Recon,
    SwapBg,
    Retarget,
    Mix,
    GtTransform,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum StatsSource {
    Gt,
    Learned,
}

/// Flat dotted-key config file; flags override file values.
struct FileConfig {
    map: Map<String, Value>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let map = match path {
            None => Map::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
                let value: Value = serde_json::from_str(&text)?;
                match value {
                    Value::Object(m) => m,
                    _ => return Err(Error::Format("config file must be a JSON object".into())),
                }
            }
        };
        Ok(Self { map })
    }

    fn resolve<T: serde::de::DeserializeOwned>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.map.get(key) {
            Some(raw) => serde_json::from_value(raw.clone())
                .map_err(|e| Error::Format(format!("config key {key}: {e}"))),
            None => Ok(default),
        }
    }
}

fn write_run_config(out_dir: &Path, command: &str, body: Value) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut doc = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
    });
    if let (Some(obj), Value::Object(map)) = (doc.as_object_mut(), body) {
        for (k, v) in map {
            obj.insert(k, v);
        }
    }
    let hash = format!("{:016x}", datagen::fnv1a_pub(doc.to_string().as_bytes()));
    if let Some(obj) = doc.as_object_mut() {
        obj.insert("config_hash".into(), Value::String(hash));
    }
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    std::fs::write(out_dir.join("run_config.json"), bytes)?;
    Ok(())
}

/// Run the CLI; returns the process exit code.
pub fn main(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version are successful exits;真 usage errors exit 2.
            let _ = e.print();
            return if e.exit_code() == 0 { 0 } else { 2 };
        }
    };
    if cli.deterministic {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error category={} msg={:?}", e.category(), e.to_string());
            match e.category() {
                "data-format" => 3,
                _ => 1,
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let deterministic = cli.deterministic;
    match cli.command {
        Command::GenData {
            out,
            seed,
            train_sequences,
            test_sequences,
            mnist,
            sprite_seed,
            train_sprites,
            test_sprites,
            m,
            n,
            backgrounds,
        } => {
            let seed = file.resolve(seed, "gen-data.seed", 0)?;
            let train_sequences =
                file.resolve(train_sequences, "gen-data.train-sequences", 1000)?;
            let test_sequences = file.resolve(test_sequences, "gen-data.test-sequences", 200)?;
            let sprite_source = match mnist {
                Some(dir) => SpriteSource::Mnist { dir: dir.display().to_string() },
                None => SpriteSource::Synthetic {
                    seed: file.resolve(sprite_seed, "gen-data.sprite-seed", 0)?,
                    train_count: file.resolve(train_sprites, "gen-data.train-sprites", 6000)?,
                    test_count: file.resolve(test_sprites, "gen-data.test-sprites", 1000)?,
                },
            };
            let config = DatasetConfig {
                m: file.resolve(m, "gen-data.m", 5)?,
                n: file.resolve(n, "gen-data.n", 1)?,
                num_backgrounds_per_split: file.resolve(backgrounds, "gen-data.backgrounds", 64)?,
                seed,
                sprite_source,
                ..Default::default()
            };
            config.validate()?;
            let (train, test) = config.load_sprites()?;
            let (train_manifest, test_manifest) =
                datagen::gen_dataset(&config, &train, &test, &out, train_sequences, test_sequences)?;
            let mut body = json!({
                "dataset": config,
                "train_sequences": train_sequences,
                "test_sequences": test_sequences,
                "deterministic": deterministic,
                "gen-data.seed": seed,
                "gen-data.train-sequences": train_sequences,
                "gen-data.test-sequences": test_sequences,
                "gen-data.m": config.m,
                "gen-data.n": config.n,
                "gen-data.backgrounds": config.num_backgrounds_per_split,
            });
            if let SpriteSource::Synthetic { seed, train_count, test_count } =
                &config.sprite_source
            {
                let obj = body.as_object_mut().expect("object literal");
                obj.insert("gen-data.sprite-seed".into(), json!(seed));
                obj.insert("gen-data.train-sprites".into(), json!(train_count));
                obj.insert("gen-data.test-sprites".into(), json!(test_count));
            }
            write_run_config(&out, "gen-data", body)?;
            println!(
                "wrote {} train + {} test sequences under {} (config hash {})",
                train_manifest.num_sequences,
                test_manifest.num_sequences,
                out.display(),
                train_manifest.config_hash
            );
            Ok(())
        }
        Command::Train {
            data,
            out,
            steps,
            alpha_equiv,
            alpha_inv,
            seed,
            batch_size,
            lr,
            checkpoint_every,
            latent_channels,
            stem_channels,
            head_embed,
            head_hidden,
            param_seed,
        } => {
            let defaults = TrainingConfig::default();
            let training = TrainingConfig {
                alpha_equiv: file.resolve(alpha_equiv, "train.alpha-equiv", defaults.alpha_equiv)?,
                alpha_inv: file.resolve(alpha_inv, "train.alpha-inv", defaults.alpha_inv)?,
                batch_size: file.resolve(batch_size, "train.batch-size", defaults.batch_size)?,
                steps: file.resolve(steps, "train.steps", defaults.steps)?,
                learning_rate: file.resolve(lr, "train.lr", defaults.learning_rate)?,
                seed: file.resolve(seed, "train.seed", defaults.seed)?,
                checkpoint_every: file.resolve(
                    checkpoint_every,
                    "train.checkpoint-every",
                    defaults.checkpoint_every,
                )?,
                ..defaults
            };
            let md = ModelConfig::default();
            let model = ModelConfig {
                latent_channels: file.resolve(
                    latent_channels,
                    "train.latent-channels",
                    md.latent_channels,
                )?,
                stem_channels: file.resolve(stem_channels, "train.stem-channels", md.stem_channels)?,
                head_embed: file.resolve(head_embed, "train.head-embed", md.head_embed)?,
                head_hidden: file.resolve(head_hidden, "train.head-hidden", md.head_hidden)?,
                param_seed: file.resolve(param_seed, "train.param-seed", md.param_seed)?,
                ..md
            };
            write_run_config(
                &out,
                "train",
                json!({
                    "data": data.display().to_string(),
                    "model": model,
                    "training": training,
                    "deterministic": deterministic,
                    "train.steps": training.steps,
                    "train.alpha-equiv": training.alpha_equiv,
                    "train.alpha-inv": training.alpha_inv,
                    "train.seed": training.seed,
                    "train.batch-size": training.batch_size,
                    "train.lr": training.learning_rate,
                    "train.checkpoint-every": training.checkpoint_every,
                    "train.latent-channels": model.latent_channels,
                    "train.stem-channels": model.stem_channels,
                    "train.head-embed": model.head_embed,
                    "train.head-hidden": model.head_hidden,
                    "train.param-seed": model.param_seed,
                }),
            )?;
            let outcome = train_loop(&model, &training, &data, &out)?;
            if let Some(last) = outcome.final_loss {
                println!(
                    "finished at step {}: scene {:.5} equiv {:.5} inv {:.5} total {:.5}",
                    last.step + 1,
                    last.scene,
                    last.equiv,
                    last.inv,
                    last.total
                );
            } else {
                println!("emitted initial checkpoint (0 steps requested)");
            }
            println!("checkpoint: {}", outcome.checkpoint.display());
            Ok(())
        }
        Command::Render { mode, checkpoint, data, seed, out } => {
            let seed = file.resolve(seed, "render.seed", 0)?;
            let (state, _) = load_checkpoint(&checkpoint)?;
            let reader = DatasetReader::open(&data, Split::Test)?;
            run_render(mode, &state, &reader, seed, &out)?;
            write_run_config(
                &out,
                "render",
                json!({
                    "mode": format!("{mode:?}"),
                    "checkpoint": checkpoint.display().to_string(),
                    "data": data.display().to_string(),
                    "seed": seed,
                    "deterministic": deterministic,
                }),
            )
        }
        Command::Eval { checkpoint, data, n, seed, out } => {
            let n = file.resolve(n, "eval.n", 10_000)?;
            let seed = file.resolve(seed, "eval.seed", 0)?;
            let (state, _) = load_checkpoint(&checkpoint)?;
            let report = run_eval(&state, &data, n, seed, &out)?;
            write_run_config(
                &out,
                "eval",
                json!({
                    "checkpoint": checkpoint.display().to_string(),
                    "data": data.display().to_string(),
                    "n": n,
                    "seed": seed,
                    "deterministic": deterministic,
                }),
            )?;
            print_report(&report);
            Ok(())
        }
        Command::AnalyzeTransforms { source, n, seed, out, checkpoint, data } => {
            let n = file.resolve(n, "analyze-transforms.n", 40_000)?;
            let seed = file.resolve(seed, "analyze-transforms.seed", 0)?;
            let config = match &data {
                Some(dir) => DatasetReader::open(dir, Split::Train)?.manifest.config,
                None => DatasetConfig::default(),
            };
            let (digits, _) = config.load_sprites()?;
            let stats = match source {
                StatsSource::Gt => analyze_transform_stats(
                    TransformSource::GroundTruth,
                    None,
                    &config,
                    &digits,
                    &[],
                    n,
                    seed,
                )?,
                StatsSource::Learned => {
                    let ckpt = checkpoint.ok_or_else(|| {
                        Error::EmptyInput("--checkpoint required for --source learned".into())
                    })?;
                    let (state, _) = load_checkpoint(&ckpt)?;
                    let backgrounds = config.background_pool(Split::Train);
                    analyze_transform_stats(
                        TransformSource::Learned,
                        Some(&state),
                        &config,
                        &digits,
                        &backgrounds,
                        n,
                        seed,
                    )?
                }
            };
            std::fs::create_dir_all(&out)?;
            let mut bytes = serde_json::to_vec_pretty(&stats)?;
            bytes.push(b'\n');
            std::fs::write(out.join("transform_stats.json"), bytes)?;
            write_run_config(
                &out,
                "analyze-transforms",
                json!({
                    "source": stats.source,
                    "n": n,
                    "seed": seed,
                    "deterministic": deterministic,
                }),
            )?;
            println!("{} transforms over {} pairs ({} frame):", stats.source, stats.n_pairs, stats.frame);
            for (label, row) in [("mean", stats.mean), ("max", stats.max), ("min", stats.min)] {
                println!(
                    "  {label:<4} [{:8.3} {:8.3} {:8.3}; {:8.3} {:8.3} {:8.3}]",
                    row[0], row[1], row[2], row[3], row[4], row[5]
                );
            }
            Ok(())
        }
        Command::Selftest => selftest::run(),
    }
}

fn print_report(report: &EvalReport) {
    println!("PSNR over {} examples (95% CI):", report.n_examples);
    for (name, pair) in [
        ("Background manipulation", &report.background_manipulation),
        ("Transform manipulation", &report.transform_manipulation),
        ("Baseline: Video frames", &report.baseline_video_frames),
        ("Baseline: No object", &report.baseline_no_object),
    ] {
        println!("  {name:<24} {:7.3} ± {:.3}", pair.psnr.mean, pair.psnr.ci95);
    }
}

/// Shared by the CLI and the acceptance suite.
pub fn run_eval(
    state: &ModelState,
    data: &Path,
    n: usize,
    seed: u64,
    out: &Path,
) -> Result<EvalReport> {
    let reader = DatasetReader::open(data, Split::Test)?;
    let config = reader.manifest.config.clone();
    let (_, test_digits) = config.load_sprites()?;
    let pairs = make_eval_pairs(seed, n, &config, reader.backgrounds(), &test_digits)?;
    let bg = eval_background_manip(state, &pairs)?;
    let tf = eval_transform_manip(state, &pairs)?;
    let vf = baseline_video_frames(&pairs)?;
    let no = baseline_no_object(&pairs)?;
    let report = EvalReport::new(
        pairs.len(),
        (&bg.0, &bg.1),
        (&tf.0, &tf.1),
        (&vf.0, &vf.1),
        (&no.0, &no.1),
    );
    emit_report(&report, out)?;
    Ok(report)
}

/// Pick test sequences with rich motion for figures, seeded and stable.
fn pick_figure_sequences(
    reader: &DatasetReader,
    seed: u64,
    count: usize,
) -> Result<Vec<VideoSequence>> {
    let total = reader.len() as u32;
    if total == 0 {
        return Err(Error::EmptyInput("no test sequences to render".into()));
    }
    let mut rng = crate::rng::stream(seed, &[0xF1]);
    let mut chosen = Vec::with_capacity(count);
    let mut used = std::collections::BTreeSet::new();
    let mut scanned = 0;
    while chosen.len() < count && scanned < 10 * total {
        let id = crate::rng::uniform_u32(&mut rng, total);
        scanned += 1;
        if used.contains(&id) {
            continue;
        }
        let seq = reader.load_sequence(id)?;
        if datagen::sequence_has_rich_motion(&seq) {
            used.insert(id);
            chosen.push(seq);
        }
    }
    // Fall back to arbitrary distinct sequences when the pool is too small
    // to satisfy the motion filter.
    let mut id = 0u32;
    while chosen.len() < count && (id as usize) < reader.len() {
        if !used.contains(&id) {
            chosen.push(reader.load_sequence(id)?);
            used.insert(id);
        }
        id += 1;
    }
    if chosen.len() < count {
        return Err(Error::EmptyInput(format!(
            "need {count} sequences, found {}",
            chosen.len()
        )));
    }
    Ok(chosen)
}

fn run_render(
    mode: RenderMode,
    state: &ModelState,
    reader: &DatasetReader,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let file_name = |stem: &str| out.join(format!("figure_{stem}.png"));
    match mode {
        RenderMode::Recon => {
            let seqs = pick_figure_sequences(reader, seed, 3)?;
            let mut rows = Vec::new();
            for seq in &seqs {
                rows.push(seq.frames.clone());
                let recon: Result<Vec<Frame>> = seq
                    .frames
                    .iter()
                    .map(|xt| Ok(crate::model::forward_pair(state, &seq.frames[0], xt)?.0))
                    .collect();
                rows.push(recon?);
            }
            manip::render_figure_grid(&rows, &file_name("recon"))
        }
        RenderMode::SwapBg => {
            let seqs = pick_figure_sequences(reader, seed, 2)?;
            let (a, b) = (&seqs[0], &seqs[1]);
            let swapped: Result<Vec<Frame>> = a
                .frames
                .iter()
                .map(|xt| manip::swap_background(state, &a.frames[0], xt, &b.frames[0]))
                .collect();
            manip::render_figure_grid(
                &[a.frames.clone(), b.frames.clone(), swapped?],
                &file_name("swap_bg"),
            )
        }
        RenderMode::Retarget => {
            let seqs = pick_figure_sequences(reader, seed, 2)?;
            let (motion, scene) = (&seqs[0], &seqs[1]);
            let retargeted: Result<Vec<Frame>> = motion
                .frames
                .iter()
                .map(|xt| {
                    manip::retarget_transform(state, &motion.frames[0], xt, &scene.frames[0])
                })
                .collect();
            manip::render_figure_grid(
                &[motion.frames.clone(), scene.frames.clone(), retargeted?],
                &file_name("retarget"),
            )
        }
        RenderMode::Mix => {
            let seqs = pick_figure_sequences(reader, seed, 3)?;
            let (r1, r2, r3) = (&seqs[0], &seqs[1], &seqs[2]);
            let m = r1.frames.len();
            let mut row4 = Vec::with_capacity(m);
            let mut row5 = Vec::with_capacity(m);
            let mut row6 = Vec::with_capacity(m);
            for k in 0..m {
                row4.push(manip::swap_background(
                    state,
                    &r1.frames[0],
                    &r1.frames[k],
                    &r2.frames[0],
                )?);
                row5.push(manip::retarget_transform(
                    state,
                    &r3.frames[0],
                    &r3.frames[k],
                    &r1.frames[0],
                )?);
                row6.push(manip::full_mix(
                    state,
                    &r3.frames[0],
                    &r3.frames[k],
                    &r1.frames[k],
                    &r2.frames[k],
                )?);
            }
            manip::render_figure_grid(
                &[
                    r1.frames.clone(),
                    r2.frames.clone(),
                    r3.frames.clone(),
                    row4,
                    row5,
                    row6,
                ],
                &file_name("mix"),
            )
        }
        RenderMode::GtTransform => {
            let seqs = pick_figure_sequences(reader, seed, 3)?;
            let mut rows = Vec::new();
            for seq in &seqs {
                rows.push(seq.frames.clone());
                let mut recon = Vec::with_capacity(seq.frames.len());
                for k in 0..seq.frames.len() {
                    // The latent transform is the sampling map that advances
                    // the frame-0 placement to frame k.
                    let gt = datagen::ground_truth_affine(seq, 0, k)?;
                    recon.push(manip::reconstruct_with_gt_transform(
                        state,
                        &seq.frames[0],
                        &invert(&gt)?,
                    )?);
                }
                rows.push(recon);
            }
            manip::render_figure_grid(&rows, &file_name("gt_transform"))
        }
    }?;
    println!("figure written under {}", out.display());
    Ok(())
}
