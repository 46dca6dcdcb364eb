//! The learnable pieces: object encoder `f_o`, background encoder `f_b`,
//! renderer `g`, and the transform head `T^Z`, plus scene composition.
//!
//! Both encoders share one architecture with separate parameters: a stem
//! conv, two stride-2 downsampling convs to the 16x16 latent grid, then
//! three residual bottleneck blocks. The renderer mirrors it upward (without
//! residuals) and ends in a sigmoid. The transform head pools each object
//! code, embeds, concatenates in input order, and regresses six affine
//! parameters through a zero-initialized final layer whose bias is the
//! identity transform, so a fresh model predicts exactly the identity.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointExtra, OptimMoments};

use crate::error::{Error, Result};
use crate::frame::{batch_tensor, Frame, CANVAS, FRAME_CHANNELS};
use crate::nn::{Graph, Tensor, Var};
use crate::rng::{stream, uniform_f64, TAG_INIT};
use crate::warp::{AffineParams, CoordFrame};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const LEAKY_SLOPE: f64 = 0.1;
const RES_BLOCKS: usize = 3;

/// Identity transform in the head's row-major parameter layout.
pub const IDENTITY_THETA: [f32; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Latent channels C_z.
    pub latent_channels: usize,
    /// Latent grid side H_z = W_z; the two stride-2 stages fix it to canvas/4.
    pub latent_size: usize,
    pub stem_channels: usize,
    /// Pooled embedding width of the transform head.
    pub head_embed: usize,
    pub head_hidden: usize,
    pub param_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_channels: 64,
            latent_size: 16,
            stem_channels: 32,
            head_embed: 128,
            head_hidden: 128,
            param_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_size * 4 != CANVAS {
            return Err(Error::InvalidDimensions(format!(
                "latent_size {} != canvas/4",
                self.latent_size
            )));
        }
        if self.latent_channels == 0 || self.stem_channels < 2 {
            return Err(Error::InvalidDimensions("degenerate channel widths".into()));
        }
        if self.latent_channels % 2 != 0 {
            return Err(Error::InvalidDimensions("latent_channels must be even".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", crate::datagen::fnv1a_pub(json.as_bytes()))
    }
}

/// Spatial object code on the latent grid.
#[derive(Debug, Clone)]
pub struct ObjectCode(pub Tensor<f32>);

/// Spatial background code, same shape as the object code.
#[derive(Debug, Clone)]
pub struct BackgroundCode(pub Tensor<f32>);

/// Combined scene code fed to the renderer.
#[derive(Debug, Clone)]
pub struct SceneCode(pub Tensor<f32>);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor<f32>,
}

/// All learnable parameters plus bookkeeping.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub config: ModelConfig,
    params: Vec<Param>,
    by_name: BTreeMap<String, usize>,
    pub step: u64,
}

fn kaiming_uniform(dims: &[usize], fan_in: usize, seed: u64, name: &str) -> Tensor<f32> {
    let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
    let bound = gain * (3.0 / fan_in as f64).sqrt();
    let mut rng = stream(seed, &[TAG_INIT, crate::datagen::fnv1a_pub(name.as_bytes())]);
    let n: usize = dims.iter().product();
    let data: Vec<f32> = (0..n)
        .map(|_| ((uniform_f64(&mut rng) * 2.0 - 1.0) * bound) as f32)
        .collect();
    Tensor::new(dims, data).expect("init shape")
}

impl ModelState {
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut state = Self {
            config: config.clone(),
            params: Vec::new(),
            by_name: BTreeMap::new(),
            step: 0,
        };
        let seed = config.param_seed;
        let (cs, cz) = (config.stem_channels, config.latent_channels);
        let mid = cz / 2;

        let conv = |state: &mut Self, name: String, o: usize, c: usize, k: usize| {
            state.insert(format!("{name}.w"), kaiming_uniform(&[o, c, k, k], c * k * k, seed, &name));
            state.insert(format!("{name}.b"), Tensor::zeros(&[o]));
        };
        for enc in ["f_o", "f_b"] {
            conv(&mut state, format!("{enc}.stem"), cs, FRAME_CHANNELS, 3);
            conv(&mut state, format!("{enc}.down1"), cs, cs, 3);
            conv(&mut state, format!("{enc}.down2"), cz, cs, 3);
            for r in 0..RES_BLOCKS {
                conv(&mut state, format!("{enc}.res{r}.c1"), mid, cz, 1);
                conv(&mut state, format!("{enc}.res{r}.c2"), mid, mid, 3);
                conv(&mut state, format!("{enc}.res{r}.c3"), cz, mid, 1);
            }
        }
        // Renderer: transposed architecture, not residual.
        conv(&mut state, "g.r1".into(), cz, cz, 3);
        state.insert(
            "g.up1.w".into(),
            kaiming_uniform(&[cz, cs, 4, 4], cz * 16, seed, "g.up1"),
        );
        state.insert("g.up1.b".into(), Tensor::zeros(&[cs]));
        conv(&mut state, "g.r2".into(), cs, cs, 3);
        state.insert(
            "g.up2.w".into(),
            kaiming_uniform(&[cs, cs / 2, 4, 4], cs * 16, seed, "g.up2"),
        );
        state.insert("g.up2.b".into(), Tensor::zeros(&[cs / 2]));
        conv(&mut state, "g.out".into(), FRAME_CHANNELS, cs / 2, 3);
        // Transform head: shared embed, order kept by concatenation.
        let (he, hh) = (config.head_embed, config.head_hidden);
        state.insert("t_z.embed.w".into(), kaiming_uniform(&[cz, he], cz, seed, "t_z.embed"));
        state.insert("t_z.embed.b".into(), Tensor::zeros(&[he]));
        state.insert(
            "t_z.hidden.w".into(),
            kaiming_uniform(&[2 * he, hh], 2 * he, seed, "t_z.hidden"),
        );
        state.insert("t_z.hidden.b".into(), Tensor::zeros(&[hh]));
        // Zero weights + identity bias: a fresh head is exactly the identity.
        state.insert("t_z.out.w".into(), Tensor::zeros(&[hh, 6]));
        state.insert(
            "t_z.out.b".into(),
            Tensor::new(&[6], IDENTITY_THETA.to_vec()).expect("bias shape"),
        );
        Ok(state)
    }

    fn insert(&mut self, name: String, tensor: Tensor<f32>) {
        debug_assert!(!self.by_name.contains_key(&name), "duplicate param {name}");
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Param { name, tensor });
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn param(&self, name: &str) -> &Tensor<f32> {
        &self.params[self.by_name[name]].tensor
    }

    pub fn set_param(&mut self, name: &str, tensor: Tensor<f32>) {
        let idx = self.by_name[name];
        debug_assert_eq!(self.params[idx].tensor.dims(), tensor.dims());
        self.params[idx].tensor = tensor;
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Register every parameter as a leaf on `graph`.
    pub fn bind<'s>(&'s self, graph: &Graph<f32>) -> BoundModel<'s> {
        let vars = self.params.iter().map(|p| graph.var(p.tensor.clone())).collect();
        BoundModel { state: self, vars }
    }
}

/// Model parameters registered on a tape for one forward/backward pass.
pub struct BoundModel<'s> {
    state: &'s ModelState,
    vars: Vec<Var<f32>>,
}

/// Everything [`BoundModel::forward_pair`] produces.
pub struct ForwardPair {
    pub xhat2: Var<f32>,
    pub theta: Var<f32>,
    pub z_o1: Var<f32>,
    pub z_o2: Var<f32>,
    pub z_b1: Var<f32>,
    pub z_b2: Var<f32>,
}

impl<'s> BoundModel<'s> {
    pub fn state(&self) -> &ModelState {
        self.state
    }

    pub fn var(&self, name: &str) -> &Var<f32> {
        &self.vars[self.state.by_name[name]]
    }

    pub fn vars(&self) -> &[Var<f32>] {
        &self.vars
    }

    fn encoder(&self, prefix: &str, x: &Var<f32>) -> Var<f32> {
        let v = |suffix: &str| self.var(&format!("{prefix}.{suffix}"));
        let mut h = x.conv2d(v("stem.w"), v("stem.b"), 1, 1).leaky_relu(LEAKY_SLOPE);
        h = h.conv2d(v("down1.w"), v("down1.b"), 2, 1).leaky_relu(LEAKY_SLOPE);
        h = h.conv2d(v("down2.w"), v("down2.b"), 2, 1).leaky_relu(LEAKY_SLOPE);
        for r in 0..RES_BLOCKS {
            let rv = |s: &str| self.var(&format!("{prefix}.res{r}.{s}"));
            let inner = h
                .conv2d(rv("c1.w"), rv("c1.b"), 1, 0)
                .leaky_relu(LEAKY_SLOPE)
                .conv2d(rv("c2.w"), rv("c2.b"), 1, 1)
                .leaky_relu(LEAKY_SLOPE)
                .conv2d(rv("c3.w"), rv("c3.b"), 1, 0);
            h = h.add(&inner);
        }
        h
    }

    /// f_o over a batch (B,3,64,64) -> (B,C_z,16,16).
    pub fn encode_object(&self, x: &Var<f32>) -> Var<f32> {
        self.check_frame_batch(x);
        self.encoder("f_o", x)
    }

    /// f_b over a batch.
    pub fn encode_background(&self, x: &Var<f32>) -> Var<f32> {
        self.check_frame_batch(x);
        self.encoder("f_b", x)
    }

    fn check_frame_batch(&self, x: &Var<f32>) {
        let d = x.dims();
        assert!(
            d.len() == 4 && d[1] == FRAME_CHANNELS && d[2] == CANVAS && d[3] == CANVAS,
            "expected (B,3,64,64) frame batch, got {d:?}"
        );
    }

    /// T^Z: six affine parameters from an ordered pair of object codes.
    pub fn predict_transform(&self, z1: &Var<f32>, z2: &Var<f32>) -> Var<f32> {
        assert_eq!(z1.dims(), z2.dims(), "predict_transform: code shapes differ");
        let v = |s: &str| self.var(s);
        let embed = |z: &Var<f32>| {
            z.global_avg_pool()
                .linear(v("t_z.embed.w"), v("t_z.embed.b"))
                .leaky_relu(LEAKY_SLOPE)
        };
        embed(z1)
            .concat_features(&embed(z2))
            .linear(v("t_z.hidden.w"), v("t_z.hidden.b"))
            .leaky_relu(LEAKY_SLOPE)
            .linear(v("t_z.out.w"), v("t_z.out.b"))
    }

    /// Apply a predicted transform to an object code on the latent grid.
    pub fn apply_transform(&self, theta: &Var<f32>, z: &Var<f32>) -> Var<f32> {
        z.affine_grid_sample(theta)
    }

    /// Scene composition is the elementwise sum.
    pub fn compose_scene(&self, z_obj: &Var<f32>, z_bg: &Var<f32>) -> Var<f32> {
        z_obj.add(z_bg)
    }

    /// g: decode a scene code into frames in [0,1].
    pub fn render(&self, scene: &Var<f32>) -> Var<f32> {
        let v = |s: &str| self.var(s);
        scene
            .conv2d(v("g.r1.w"), v("g.r1.b"), 1, 1)
            .leaky_relu(LEAKY_SLOPE)
            .conv_transpose2d(v("g.up1.w"), v("g.up1.b"), 2, 1)
            .leaky_relu(LEAKY_SLOPE)
            .conv2d(v("g.r2.w"), v("g.r2.b"), 1, 1)
            .leaky_relu(LEAKY_SLOPE)
            .conv_transpose2d(v("g.up2.w"), v("g.up2.b"), 2, 1)
            .leaky_relu(LEAKY_SLOPE)
            .conv2d(v("g.out.w"), v("g.out.b"), 1, 1)
            .sigmoid()
    }

    /// The training composition:
    /// x̂2 = g(T^Z(f_o(x1), f_o(x2)) ∘ f_o(x1) + f_b(x1)).
    pub fn forward_pair(&self, x1: &Var<f32>, x2: &Var<f32>) -> ForwardPair {
        let z_o1 = self.encode_object(x1);
        let z_o2 = self.encode_object(x2);
        let z_b1 = self.encode_background(x1);
        let z_b2 = self.encode_background(x2);
        let theta = self.predict_transform(&z_o1, &z_o2);
        let warped = self.apply_transform(&theta, &z_o1);
        let scene = self.compose_scene(&warped, &z_b1);
        let xhat2 = self.render(&scene);
        ForwardPair { xhat2, theta, z_o1, z_o2, z_b1, z_b2 }
    }

    /// h(x1, x2, x3, x4) = g(T^Z(f_o(x1), f_o(x2)) ∘ f_o(x3) + f_b(x4)):
    /// transformation from (x1, x2), object from x3, background from x4.
    pub fn compose_h(
        &self,
        x1: &Var<f32>,
        x2: &Var<f32>,
        x3: &Var<f32>,
        x4: &Var<f32>,
    ) -> Var<f32> {
        let theta = self.predict_transform(&self.encode_object(x1), &self.encode_object(x2));
        let warped = self.apply_transform(&theta, &self.encode_object(x3));
        let scene = self.compose_scene(&warped, &self.encode_background(x4));
        self.render(&scene)
    }
}

// ---- Single-frame convenience API over an inference graph. ----

fn single(frame: &Frame) -> Tensor<f32> {
    batch_tensor(&[frame])
}

fn code_dims(state: &ModelState) -> [usize; 4] {
    [1, state.config.latent_channels, state.config.latent_size, state.config.latent_size]
}

fn check_code(state: &ModelState, t: &Tensor<f32>) -> Result<()> {
    if t.dims() != code_dims(state) {
        return Err(Error::ShapeMismatch(format!(
            "code dims {:?}, expected {:?}",
            t.dims(),
            code_dims(state)
        )));
    }
    Ok(())
}

pub fn encode_object(state: &ModelState, x: &Frame) -> ObjectCode {
    let g = Graph::inference();
    ObjectCode(g.var(single(x)).pipe_encode(state, "f_o"))
}

pub fn encode_background(state: &ModelState, x: &Frame) -> BackgroundCode {
    let g = Graph::inference();
    BackgroundCode(g.var(single(x)).pipe_encode(state, "f_b"))
}

trait PipeEncode {
    fn pipe_encode(self, state: &ModelState, prefix: &str) -> Tensor<f32>;
}

impl PipeEncode for Var<f32> {
    fn pipe_encode(self, state: &ModelState, prefix: &str) -> Tensor<f32> {
        let bound = state.bind(self.graph());
        bound.encoder(prefix, &self).value().clone()
    }
}

/// Normalized-frame affine predicted for an ordered pair of codes.
pub fn predict_transform(
    state: &ModelState,
    z1: &ObjectCode,
    z2: &ObjectCode,
) -> Result<AffineParams> {
    check_code(state, &z1.0)?;
    check_code(state, &z2.0)?;
    let g = Graph::inference();
    let bound = state.bind(&g);
    let theta = bound.predict_transform(&g.var(z1.0.clone()), &g.var(z2.0.clone()));
    let t = theta.value().data();
    Ok(AffineParams::new(
        t[0] as f64,
        t[1] as f64,
        t[2] as f64,
        t[3] as f64,
        t[4] as f64,
        t[5] as f64,
        CoordFrame::Normalized,
    ))
}

/// Warp an object code by a normalized-frame transform.
pub fn apply_transform(state: &ModelState, t: &AffineParams, z: &ObjectCode) -> Result<ObjectCode> {
    if t.frame != CoordFrame::Normalized {
        return Err(Error::FrameMismatch { expected: CoordFrame::Normalized, got: t.frame });
    }
    check_code(state, &z.0)?;
    let g = Graph::inference();
    let bound = state.bind(&g);
    let theta = g.var(Tensor::new(&[1, 6], t.to_row_major().iter().map(|&v| v as f32).collect())?);
    Ok(ObjectCode(bound.apply_transform(&theta, &g.var(z.0.clone())).value().clone()))
}

pub fn compose_scene(z_obj: &ObjectCode, z_bg: &BackgroundCode) -> Result<SceneCode> {
    if z_obj.0.dims() != z_bg.0.dims() {
        return Err(Error::ShapeMismatch("object/background code shapes differ".into()));
    }
    let g: Graph<f32> = Graph::inference();
    Ok(SceneCode(g.var(z_obj.0.clone()).add(&g.var(z_bg.0.clone())).value().clone()))
}

pub fn render(state: &ModelState, scene: &SceneCode) -> Result<Frame> {
    check_code(state, &scene.0)?;
    let g = Graph::inference();
    let bound = state.bind(&g);
    let out = bound.render(&g.var(scene.0.clone()));
    Frame::new(out.value().data().to_vec())
}

/// Single-pair forward returning the reconstruction and the transform.
pub fn forward_pair(state: &ModelState, x1: &Frame, x2: &Frame) -> Result<(Frame, AffineParams)> {
    let g = Graph::inference();
    let bound = state.bind(&g);
    let out = bound.forward_pair(&g.var(single(x1)), &g.var(single(x2)));
    let t = out.theta.value().data();
    Ok((
        Frame::new(out.xhat2.value().data().to_vec())?,
        AffineParams::new(
            t[0] as f64,
            t[1] as f64,
            t[2] as f64,
            t[3] as f64,
            t[4] as f64,
            t[5] as f64,
            CoordFrame::Normalized,
        ),
    ))
}

/// Single-frame h-composition.
pub fn compose_h(state: &ModelState, x1: &Frame, x2: &Frame, x3: &Frame, x4: &Frame) -> Result<Frame> {
    let g = Graph::inference();
    let bound = state.bind(&g);
    let out = bound.compose_h(
        &g.var(single(x1)),
        &g.var(single(x2)),
        &g.var(single(x3)),
        &g.var(single(x4)),
    );
    Frame::new(out.value().data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_core::RngCore;

    fn small_config() -> ModelConfig {
        ModelConfig {
            latent_channels: 8,
            latent_size: 16,
            stem_channels: 4,
            head_embed: 8,
            head_hidden: 8,
            param_seed: 3,
        }
    }

    fn random_frame(seed: u64) -> Frame {
        let mut rng = stream(seed, &[77]);
        Frame::new(
            (0..crate::frame::FRAME_LEN)
                .map(|_| rng.next_u32() as f32 / u32::MAX as f32)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn default_config_shapes() {
        let state = ModelState::init(&ModelConfig::default()).unwrap();
        let code = encode_object(&state, &random_frame(1));
        assert_eq!(code.0.dims(), [1, 64, 16, 16]);
        let bg = encode_background(&state, &random_frame(1));
        assert_eq!(bg.0.dims(), [1, 64, 16, 16]);
        let scene = compose_scene(&code, &bg).unwrap();
        let frame = render(&state, &scene).unwrap();
        assert!(frame.in_unit_range());
    }

    #[test]
    fn encoders_are_deterministic() {
        let state = ModelState::init(&small_config()).unwrap();
        let x = random_frame(2);
        let a = encode_object(&state, &x);
        let b = encode_object(&state, &x);
        assert_eq!(a.0.data(), b.0.data());
        assert!(a.0.all_finite());
    }

    #[test]
    fn fresh_model_predicts_identity_bitwise() {
        let state = ModelState::init(&small_config()).unwrap();
        for s in 0..100 {
            let z1 = encode_object(&state, &random_frame(100 + s));
            let z2 = encode_object(&state, &random_frame(200 + s));
            let t = predict_transform(&state, &z1, &z2).unwrap();
            assert_eq!(
                t.to_row_major().map(|v| v as f32),
                IDENTITY_THETA,
                "pair {s} not identity"
            );
        }
    }

    #[test]
    fn batch_matches_single_frame_loop() {
        let state = ModelState::init(&small_config()).unwrap();
        let frames: Vec<Frame> = (0..4).map(|i| random_frame(300 + i)).collect();
        let g = Graph::inference();
        let bound = state.bind(&g);
        let batch = bound.encode_object(&g.var(batch_tensor(&frames.iter().collect::<Vec<_>>())));
        let per = frames.iter().map(|f| encode_object(&state, f)).collect::<Vec<_>>();
        let plane = batch.value().len() / 4;
        for (i, code) in per.iter().enumerate() {
            for (a, b) in code.0.data().iter().zip(&batch.value().data()[i * plane..(i + 1) * plane])
            {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn apply_transform_matches_warp_module_exactly() {
        // Integer latent-pixel translation: exact shift per the warp oracle.
        let state = ModelState::init(&small_config()).unwrap();
        let z = encode_object(&state, &random_frame(4));
        let t = crate::warp::pixel_to_normalized(
            &crate::warp::make_translation(3.0, -2.0, CoordFrame::Pixel),
            state.config.latent_size,
            state.config.latent_size,
        )
        .unwrap();
        let out = apply_transform(&state, &t, &z).unwrap();
        let ls = state.config.latent_size;
        for c in 0..state.config.latent_channels {
            for y in 0..ls {
                for x in 0..ls {
                    let sx = x as i64 + 3;
                    let sy = y as i64 - 2;
                    let expect = if sx >= 0 && sy >= 0 && (sx as usize) < ls && (sy as usize) < ls
                    {
                        z.0.data()[(c * ls + sy as usize) * ls + sx as usize]
                    } else {
                        0.0
                    };
                    let got = out.0.data()[(c * ls + y) * ls + x];
                    assert!((got - expect).abs() < 1e-6);
                }
            }
        }
        // Identity and zero-code edge cases.
        let id = AffineParams::identity(CoordFrame::Normalized);
        let same = apply_transform(&state, &id, &z).unwrap();
        for (a, b) in same.0.data().iter().zip(z.0.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let zeros = ObjectCode(Tensor::zeros(&code_dims(&state)));
        let still_zero = apply_transform(&state, &t, &zeros).unwrap();
        assert!(still_zero.0.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn compose_scene_examples() {
        let state = ModelState::init(&small_config()).unwrap();
        let z = encode_object(&state, &random_frame(5));
        let zero_bg = BackgroundCode(Tensor::zeros(&code_dims(&state)));
        let s = compose_scene(&z, &zero_bg).unwrap();
        assert_eq!(s.0.data(), z.0.data());
        let zb = encode_background(&state, &random_frame(6));
        let ab = compose_scene(&z, &zb).unwrap();
        let ba = compose_scene(&ObjectCode(zb.0.clone()), &BackgroundCode(z.0.clone())).unwrap();
        assert_eq!(ab.0.data(), ba.0.data());
    }

    #[test]
    fn forward_pair_reduces_to_plain_reconstruction_at_init() {
        // T = identity at init, so x̂2 = g(f_o(x1) + f_b(x1)).
        let state = ModelState::init(&small_config()).unwrap();
        let (x1, x2) = (random_frame(7), random_frame(8));
        let (xhat, theta) = forward_pair(&state, &x1, &x2).unwrap();
        assert_eq!(theta.to_row_major().map(|v| v as f32), IDENTITY_THETA);
        let direct = render(
            &state,
            &SceneCode(
                compose_scene(&encode_object(&state, &x1), &encode_background(&state, &x1))
                    .unwrap()
                    .0,
            ),
        )
        .unwrap();
        // The warp by the exact identity is exact, so frames agree to f32.
        for (a, b) in xhat.data().iter().zip(direct.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        // Degenerate same-frame input stays well-defined.
        let (xx, _) = forward_pair(&state, &x1, &x1).unwrap();
        assert!(xx.in_unit_range());
    }

    #[test]
    fn compose_h_definitional_wiring() {
        let state = ModelState::init(&small_config()).unwrap();
        let (x1, x2, x4) = (random_frame(9), random_frame(10), random_frame(12));
        let h = compose_h(&state, &x1, &x2, &x1, &x1).unwrap();
        let (fp, _) = forward_pair(&state, &x1, &x2).unwrap();
        assert_eq!(h.data(), fp.data());
        let mixed = compose_h(&state, &x1, &x2, &x2, &x4).unwrap();
        assert!(mixed.in_unit_range());
    }

    #[test]
    fn encoders_share_no_parameters() {
        let state = ModelState::init(&small_config()).unwrap();
        let prefixes = ["f_o.", "f_b.", "g.", "t_z."];
        let mut counts = [0usize; 4];
        for name in state.param_names() {
            let hits: Vec<usize> = prefixes
                .iter()
                .enumerate()
                .filter(|(_, p)| name.starts_with(**p))
                .map(|(i, _)| i)
                .collect();
            assert_eq!(hits.len(), 1, "{name} belongs to {hits:?}");
            counts[hits[0]] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0));
    }

    #[test]
    fn gradients_reach_every_component() {
        let state = ModelState::init(&small_config()).unwrap();
        let g = Graph::new();
        let bound = state.bind(&g);
        let x1 = g.var(single(&random_frame(13)));
        let x2 = g.var(single(&random_frame(14)));
        let out = bound.forward_pair(&x1, &x2);
        let loss = out
            .xhat2
            .mse(&x2)
            .add(&out.z_o2.affine_grid_sample(&out.theta).mse(&out.z_o1))
            .add(&out.z_b1.mse(&out.z_b2));
        let grads = g.backward(&loss);
        for prefix in ["f_o.", "f_b.", "g.", "t_z."] {
            let mut max_grad = 0.0f64;
            for (p, v) in state.params().iter().zip(bound.vars()) {
                if p.name.starts_with(prefix) {
                    if let Some(gr) = grads.get(v) {
                        max_grad = max_grad.max(gr.max_abs());
                    }
                }
            }
            assert!(max_grad > 0.0, "no gradient reached {prefix}");
        }
    }
}
