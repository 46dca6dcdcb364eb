//! The three-term objective and the optimization loop.
//!
//! All three losses are per-element mean squared errors:
//! scene (reconstruction of x2 through the warped scene code), equiv
//! (transformed object code against the second frame's code), and inv
//! (background code constancy). `total = scene + a_eq * equiv + a_inv * inv`.

mod adam;

pub use adam::Adam;

use crate::datagen::{sample_training_pair, DatasetReader, Split};
use crate::error::{Error, Result};
use crate::frame::FRAME_LEN;
use crate::model::{
    load_checkpoint, save_checkpoint, BoundModel, CheckpointExtra, ModelConfig, ModelState,
};
use crate::nn::{Graph, Tensor, Var};
use crate::rng::{stream, uniform_usize, TAG_TRAIN_STEP};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub alpha_equiv: f64,
    pub alpha_inv: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            alpha_equiv: 1.0,
            alpha_inv: 1.0,
            batch_size: 32,
            steps: 50_000,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            checkpoint_every: 500,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_equiv < 0.0 || self.alpha_inv < 0.0 {
            return Err(Error::InvalidDimensions("loss coefficients must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidDimensions("batch_size = 0".into()));
        }
        Ok(())
    }

    /// Hash over the fields that define the optimization trajectory; the run
    /// extent (`steps`, `checkpoint_every`) may change across resumes.
    pub fn trajectory_hash(&self, model: &ModelConfig, data_hash: &str) -> String {
        let key = serde_json::json!({
            "alpha_equiv": self.alpha_equiv,
            "alpha_inv": self.alpha_inv,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "seed": self.seed,
            "model": model,
            "data": data_hash,
        });
        format!("{:016x}", crate::datagen::fnv1a_pub(key.to_string().as_bytes()))
    }
}

/// Per-step loss values.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub step: u64,
    pub scene: f64,
    pub equiv: f64,
    pub inv: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// total = scene + a_eq*equiv + a_inv*inv within tolerance.
    pub fn additivity_gap(&self, cfg: &TrainingConfig) -> f64 {
        (self.total - (self.scene + cfg.alpha_equiv * self.equiv + cfg.alpha_inv * self.inv)).abs()
    }
}

/// Reconstruction loss: mean squared error over pixels and channels.
pub fn loss_scene(xhat2: &Var<f32>, x2: &Var<f32>) -> Var<f32> {
    xhat2.mse(x2)
}

/// Equivariance loss: T applied to z_o1 against z_o2.
pub fn loss_equiv(model: &BoundModel<'_>, theta: &Var<f32>, z_o1: &Var<f32>, z_o2: &Var<f32>) -> Var<f32> {
    model.apply_transform(theta, z_o1).mse(z_o2)
}

/// Invariance loss: background codes across the pair.
pub fn loss_inv(z_b1: &Var<f32>, z_b2: &Var<f32>) -> Var<f32> {
    z_b1.mse(z_b2)
}

/// Weighted sum of the three parts.
pub fn loss_total(
    scene: &Var<f32>,
    equiv: &Var<f32>,
    inv: &Var<f32>,
    cfg: &TrainingConfig,
) -> Var<f32> {
    scene
        .add(&equiv.scale(cfg.alpha_equiv as f32))
        .add(&inv.scale(cfg.alpha_inv as f32))
}

/// Loss breakdown on a batch without touching the parameters.
pub fn evaluate_loss(
    state: &ModelState,
    x1: &Tensor<f32>,
    x2: &Tensor<f32>,
    cfg: &TrainingConfig,
) -> LossBreakdown {
    let graph = Graph::inference();
    let bound = state.bind(&graph);
    let x1v = graph.var(x1.clone());
    let x2v = graph.var(x2.clone());
    let fwd = bound.forward_pair(&x1v, &x2v);
    let scene = loss_scene(&fwd.xhat2, &x2v);
    let equiv = loss_equiv(&bound, &fwd.theta, &fwd.z_o1, &fwd.z_o2);
    let inv = loss_inv(&fwd.z_b1, &fwd.z_b2);
    let total = loss_total(&scene, &equiv, &inv, cfg);
    LossBreakdown {
        step: state.step,
        scene: scene.value().item() as f64,
        equiv: equiv.value().item() as f64,
        inv: inv.value().item() as f64,
        total: total.value().item() as f64,
    }
}

/// One gradient update on a prepared batch. Returns the loss breakdown.
pub fn train_step(
    state: &mut ModelState,
    opt: &mut Adam,
    x1: &Tensor<f32>,
    x2: &Tensor<f32>,
    cfg: &TrainingConfig,
    batch_ids: &[u32],
) -> Result<LossBreakdown> {
    let graph = Graph::new();
    let bound = state.bind(&graph);
    let x1v = graph.var(x1.clone());
    let x2v = graph.var(x2.clone());
    let fwd = bound.forward_pair(&x1v, &x2v);
    let scene = loss_scene(&fwd.xhat2, &x2v);
    let equiv = loss_equiv(&bound, &fwd.theta, &fwd.z_o1, &fwd.z_o2);
    let inv = loss_inv(&fwd.z_b1, &fwd.z_b2);
    let total = loss_total(&scene, &equiv, &inv, cfg);
    let breakdown = LossBreakdown {
        step: state.step,
        scene: scene.value().item() as f64,
        equiv: equiv.value().item() as f64,
        inv: inv.value().item() as f64,
        total: total.value().item() as f64,
    };
    if !breakdown.total.is_finite() {
        return Err(Error::Training(format!(
            "non-finite loss {breakdown:?} at step {} (seed {}, batch {batch_ids:?})",
            state.step, cfg.seed
        )));
    }
    let grads = graph.backward(&total);
    let per_param: Vec<Option<Tensor<f32>>> = bound
        .vars()
        .iter()
        .map(|v| grads.get(v).cloned())
        .collect();
    drop(grads);
    drop(bound);
    opt.apply(state, &per_param, cfg)?;
    state.step += 1;
    Ok(breakdown)
}

/// Bounded FIFO cache over sequence files.
struct SeqCache {
    reader: DatasetReader,
    cache: BTreeMap<u32, crate::datagen::VideoSequence>,
    order: VecDeque<u32>,
    cap: usize,
}

impl SeqCache {
    fn new(reader: DatasetReader, cap: usize) -> Self {
        Self { reader, cache: BTreeMap::new(), order: VecDeque::new(), cap }
    }

    fn get(&mut self, id: u32) -> Result<&crate::datagen::VideoSequence> {
        if !self.cache.contains_key(&id) {
            let seq = self.reader.load_sequence(id)?;
            if self.order.len() >= self.cap {
                if let Some(evict) = self.order.pop_front() {
                    self.cache.remove(&evict);
                }
            }
            self.order.push_back(id);
            self.cache.insert(id, seq);
        }
        Ok(self.cache.get(&id).expect("just inserted"))
    }
}

pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub final_loss: Option<LossBreakdown>,
}

/// Full training loop with periodic checkpoints and a line-delimited JSON
/// loss log. Resumes from `<out_dir>/checkpoint.bin` when present, refusing
/// checkpoints whose trajectory hash disagrees.
pub fn train_loop(
    model_config: &ModelConfig,
    cfg: &TrainingConfig,
    data_dir: &Path,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_config.validate()?;
    let reader = DatasetReader::open(data_dir, Split::Train)?;
    if reader.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no training sequences under {}",
            data_dir.display()
        )));
    }
    let num_sequences = reader.len();
    let data_hash = reader.manifest.config_hash.clone();
    let run_hash = cfg.trajectory_hash(model_config, &data_hash);
    std::fs::create_dir_all(out_dir)?;
    let ckpt_path = out_dir.join("checkpoint.bin");

    let (mut state, mut opt) = if ckpt_path.exists() {
        let (state, extra) = load_checkpoint(&ckpt_path)?;
        if extra.run_config_hash != run_hash {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint trajectory hash {} != requested {}",
                extra.run_config_hash, run_hash
            )));
        }
        if state.config != *model_config {
            return Err(Error::ConfigMismatch("checkpoint model config differs".into()));
        }
        let opt = Adam::from_moments(&state, extra.optimizer)?;
        (state, opt)
    } else {
        let state = ModelState::init(model_config)?;
        let opt = Adam::new(&state);
        (state, opt)
    };

    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out_dir.join("train_log.jsonl"))?;
    let mut cache = SeqCache::new(reader, 2048);
    let save = |state: &ModelState, opt: &Adam| -> Result<()> {
        save_checkpoint(
            &ckpt_path,
            state,
            &CheckpointExtra {
                run_config_hash: run_hash.clone(),
                seed: cfg.seed,
                optimizer: Some(opt.moments()),
            },
        )
    };
    if state.step == 0 {
        save(&state, &opt)?;
    }

    let mut last = None;
    while state.step < cfg.steps {
        // Per-step stream: the batch at step s is a pure function of
        // (seed, s), so resumed runs retrace the interrupted trajectory.
        let mut rng = stream(cfg.seed, &[TAG_TRAIN_STEP, state.step]);
        let mut ids = Vec::with_capacity(cfg.batch_size);
        let mut x1 = Vec::with_capacity(cfg.batch_size * FRAME_LEN);
        let mut x2 = Vec::with_capacity(cfg.batch_size * FRAME_LEN);
        for _ in 0..cfg.batch_size {
            let id = uniform_usize(&mut rng, num_sequences) as u32;
            ids.push(id);
            let seq = cache.get(id)?;
            let (a, b, _) = sample_training_pair(seq, &mut rng);
            x1.extend_from_slice(a.data());
            x2.extend_from_slice(b.data());
        }
        let dims = [cfg.batch_size, 3, crate::frame::CANVAS, crate::frame::CANVAS];
        let x1 = Tensor::new(&dims, x1)?;
        let x2 = Tensor::new(&dims, x2)?;
        let breakdown = train_step(&mut state, &mut opt, &x1, &x2, cfg, &ids)?;
        serde_json::to_writer(&mut log, &breakdown)?;
        log.write_all(b"\n")?;
        if state.step % cfg.checkpoint_every == 0 || state.step == cfg.steps {
            log.flush()?;
            save(&state, &opt)?;
        }
        last = Some(breakdown);
    }
    log.flush()?;
    save(&state, &opt)?;
    let final_path = out_dir.join("checkpoint_final.bin");
    std::fs::copy(&ckpt_path, &final_path)?;
    Ok(TrainOutcome {
        checkpoint: ckpt_path,
        log: out_dir.join("train_log.jsonl"),
        final_loss: last,
    })
}
