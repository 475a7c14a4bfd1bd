use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::pooling::Hierarchy;
use crate::autodiff::{ConvLayout, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::io::{self, ModelSidecar, SkeletonFile, FORMAT_VERSION};
use crate::motion::{MotionClip, DEFAULT_FPS, DEFAULT_WINDOW};
use crate::quat::{Quaternion, MIN_NORM};
use crate::skeleton::Skeleton;

/// Per-joint dynamic channels: quaternion (4) then root translation (3).
pub const DYNAMIC_CHANNELS: usize = 7;
pub const ROOT_CHANNELS: std::ops::Range<usize> = 4..7;
const POOL_LEVELS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub window: usize,
    /// Encoder widths per level; the last one is the latent width.
    pub channels: [usize; 2],
    pub kernel: usize,
    /// Width of the static (offset) embedding.
    pub static_channels: usize,
    pub fps: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { window: DEFAULT_WINDOW, channels: [32, 64], kernel: 5, static_channels: 8, fps: DEFAULT_FPS }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 4 != 0 {
            return Err(Error::InvalidConfig(format!("window {} must be a positive multiple of 4", self.window)));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::InvalidKernel(self.kernel));
        }
        if self.channels.contains(&0) || self.static_channels == 0 {
            return Err(Error::InvalidConfig("channel counts must be positive".into()));
        }
        if !(self.fps > 0.0) {
            return Err(Error::InvalidConfig(format!("fps must be positive, got {}", self.fps)));
        }
        Ok(())
    }

    pub fn latent_shape(&self, prototypes: usize) -> [usize; 3] {
        [self.window / 4, prototypes, self.channels[1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    A,
    B,
}

impl Side {
    fn idx(self) -> usize {
        match self {
            Side::A => 0,
            Side::B => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Module {
    EncoderA,
    DecoderA,
    EncoderB,
    DecoderB,
}

impl Module {
    pub const ALL: [Module; 4] = [Module::EncoderA, Module::DecoderA, Module::EncoderB, Module::DecoderB];

    pub fn encoder(side: Side) -> Self {
        match side {
            Side::A => Module::EncoderA,
            Side::B => Module::EncoderB,
        }
    }

    pub fn decoder(side: Side) -> Self {
        match side {
            Side::A => Module::DecoderA,
            Side::B => Module::DecoderB,
        }
    }

    pub fn prefix(self) -> &'static str {
        match self {
            Module::EncoderA => "encoder_a.",
            Module::DecoderA => "decoder_a.",
            Module::EncoderB => "encoder_b.",
            Module::DecoderB => "decoder_b.",
        }
    }

    fn side(self) -> Side {
        match self {
            Module::EncoderA | Module::DecoderA => Side::A,
            Module::EncoderB | Module::DecoderB => Side::B,
        }
    }

    fn layers(self) -> [&'static str; 4] {
        match self {
            Module::EncoderA | Module::EncoderB => ["static1", "static2", "conv1", "conv2"],
            Module::DecoderA | Module::DecoderB => ["static1", "static2", "deconv1", "deconv2"],
        }
    }
}

/// Encoder output, `[T / 4, prototypes, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode(pub Tensor);

impl LatentCode {
    pub fn shape(&self) -> &[usize] {
        self.0.shape()
    }
    pub fn data(&self) -> &[f64] {
        self.0.data()
    }
}

/// Parameter handles of the modules bound into one graph.
pub struct Bound {
    vars: Vec<Option<Var>>,
}

impl Bound {
    pub fn var(&self, param: usize) -> Option<Var> {
        self.vars[param]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetargetModel {
    config: NetConfig,
    skeletons: [Skeleton; 2],
    hierarchies: [Hierarchy; 2],
    params: ParamStore,
    stage: String,
    trained_steps: u64,
}

impl PartialEq for Hierarchy {
    fn eq(&self, other: &Self) -> bool {
        self.raw_maps() == other.raw_maps()
    }
}

fn checked_hierarchies(config: &NetConfig, a: &Skeleton, b: &Skeleton) -> Result<[Hierarchy; 2]> {
    config.validate()?;
    let ha = Hierarchy::for_skeleton(a, POOL_LEVELS)?;
    let hb = Hierarchy::for_skeleton(b, POOL_LEVELS)?;
    for k in 1..=POOL_LEVELS {
        if ha.levels[k].parent != hb.levels[k].parent {
            return Err(Error::TopologyMismatch(format!(
                "pooling level {k}: '{}' gives {:?}, '{}' gives {:?}",
                a.name(),
                ha.levels[k].parent,
                b.name(),
                hb.levels[k].parent
            )));
        }
    }
    Ok([ha, hb])
}

impl RetargetModel {
    /// Fresh model with weights uniform in `+-sqrt(1 / (C_in K))` and zero biases.
    pub fn new(config: NetConfig, skeleton_a: Skeleton, skeleton_b: Skeleton, seed: u64) -> Result<Self> {
        let hierarchies = checked_hierarchies(&config, &skeleton_a, &skeleton_b)?;
        let mut model = Self {
            config,
            skeletons: [skeleton_a, skeleton_b],
            hierarchies,
            params: ParamStore::new(),
            stage: "init".into(),
            trained_steps: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for m in Module::ALL {
            for (layer, [w, b]) in m.layers().into_iter().zip(model.layer_shapes(m)) {
                let fan_in = (w[2] * w[3]) as f64;
                let bound = (1.0 / fan_in).sqrt();
                let data = (0..w.iter().product()).map(|_| rng.random_range(-bound..bound)).collect();
                model.params.push(format!("{}{layer}.weight", m.prefix()), Tensor::new(w.to_vec(), data)?);
                model.params.push(format!("{}{layer}.bias", m.prefix()), Tensor::zeros(&b));
            }
        }
        Ok(model)
    }

    /// Weight `[blocks, C_out, C_in, K]` and bias `[J, C_out]` shapes per layer.
    fn layer_shapes(&self, m: Module) -> [[Vec<usize>; 2]; 4] {
        let h = &self.hierarchies[m.side().idx()];
        let (l0, l1) = (&h.levels[0].layout, &h.levels[1].layout);
        let NetConfig { channels: [c1, c2], kernel: k, static_channels: s, .. } = self.config;
        let conv = |l: &ConvLayout, cin: usize, cout: usize, k: usize| [vec![l.blocks(), cout, cin, k], vec![l.joints(), cout]];
        let statics = [conv(l0, 3, s, 1), conv(l1, s, s, 1)];
        let [s1, s2] = statics;
        match m {
            Module::EncoderA | Module::EncoderB => {
                [s1, s2, conv(l0, DYNAMIC_CHANNELS + s, c1, k), conv(l1, c1 + s, c2, k)]
            }
            Module::DecoderA | Module::DecoderB => [s1, s2, conv(l1, c2 + s, c1, k), conv(l0, c1 + s, DYNAMIC_CHANNELS, k)],
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }
    pub fn skeleton(&self, side: Side) -> &Skeleton {
        &self.skeletons[side.idx()]
    }
    pub fn hierarchy(&self, side: Side) -> &Hierarchy {
        &self.hierarchies[side.idx()]
    }
    pub fn params(&self) -> &ParamStore {
        &self.params
    }
    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
    pub fn stage(&self) -> &str {
        &self.stage
    }
    pub fn trained_steps(&self) -> u64 {
        self.trained_steps
    }
    pub fn set_progress(&mut self, stage: &str, trained_steps: u64) {
        self.stage = stage.to_string();
        self.trained_steps = trained_steps;
    }

    pub fn latent_shape(&self) -> [usize; 3] {
        self.config.latent_shape(self.hierarchies[0].prototypes())
    }

    /// Indices of the parameter tensors that belong to `m`.
    pub fn module_params(&self, m: Module) -> Vec<usize> {
        (0..self.params.len()).filter(|&i| self.params.name(i).starts_with(m.prefix())).collect()
    }

    /// Puts the parameters of `modules` on `g`. Tensors of modules listed in
    /// `trainable` become differentiable leaves, the rest are constants.
    pub fn bind(&self, g: &mut Graph, modules: &[Module], trainable: &[Module]) -> Bound {
        let mut vars = vec![None; self.params.len()];
        for &m in modules {
            let train = trainable.contains(&m);
            for i in self.module_params(m) {
                let t = self.params.get(i).clone();
                vars[i] = Some(if train { g.param(t) } else { g.constant(t) });
            }
        }
        Bound { vars }
    }

    fn layer(&self, bound: &Bound, m: Module, layer: &str) -> Result<(Var, Var)> {
        let get = |suffix: &str| {
            let name = format!("{}{layer}.{suffix}", m.prefix());
            let i = self.params.index_of(&name).ok_or_else(|| Error::Format(format!("missing parameter {name}")))?;
            bound.vars[i].ok_or_else(|| Error::InvalidConfig(format!("module {} is not bound", m.prefix())))
        };
        Ok((get("weight")?, get("bias")?))
    }

    /// Offset embeddings at the skeleton level and after the first pooling.
    fn static_embeddings(&self, g: &mut Graph, bound: &Bound, m: Module) -> Result<(Var, Var)> {
        let side = m.side();
        let (s, h) = (self.skeleton(side), self.hierarchy(side));
        let offsets = g.constant(Tensor::new(vec![1, s.joint_count(), 3], s.offsets_flat())?);
        let (w1, b1) = self.layer(bound, m, "static1")?;
        let e = g.skeletal_conv(offsets, w1, b1, &h.levels[0].layout)?;
        let e1 = g.tanh(e);
        let p = g.pool(e1, &h.maps[0], 1)?;
        let (w2, b2) = self.layer(bound, m, "static2")?;
        let e = g.skeletal_conv(p, w2, b2, &h.levels[1].layout)?;
        Ok((e1, g.tanh(e)))
    }

    fn with_static(&self, g: &mut Graph, x: Var, emb: Var) -> Result<Var> {
        let t = g.shape(x)[0];
        let tiled = g.repeat0(emb, t)?;
        g.concat(&[x, tiled], 2)
    }

    /// `[T, J, 7]` network input for `clip`.
    pub fn input_tensor(&self, side: Side, clip: &MotionClip) -> Result<Tensor> {
        let s = self.skeleton(side);
        clip.check_skeleton(s)?;
        if clip.frames() != self.config.window {
            return Err(Error::WindowLengthMismatch { expected: self.config.window, found: clip.frames() });
        }
        let (j, root) = (s.joint_count(), s.root());
        let mut data = vec![0.0; clip.frames() * j * DYNAMIC_CHANNELS];
        for t in 0..clip.frames() {
            for k in 0..j {
                let cell = &mut data[(t * j + k) * DYNAMIC_CHANNELS..(t * j + k + 1) * DYNAMIC_CHANNELS];
                cell[..4].copy_from_slice(&clip.rotation(t, k).to_array());
                if k == root {
                    cell[ROOT_CHANNELS].copy_from_slice(&clip.root_translation()[t]);
                }
            }
        }
        Tensor::new(vec![clip.frames(), j, DYNAMIC_CHANNELS], data)
    }

    /// Encoder on the graph: `[T, J, 7] -> [T / 4, J', C]`.
    pub fn encode_var(&self, g: &mut Graph, bound: &Bound, side: Side, x: Var) -> Result<Var> {
        let m = Module::encoder(side);
        let h = self.hierarchy(side);
        let (e1, e2) = self.static_embeddings(g, bound, m)?;
        let x = self.with_static(g, x, e1)?;
        let (w, b) = self.layer(bound, m, "conv1")?;
        let y = g.skeletal_conv(x, w, b, &h.levels[0].layout)?;
        let y = g.tanh(y);
        let y = g.pool(y, &h.maps[0], 2)?;
        let y = self.with_static(g, y, e2)?;
        let (w, b) = self.layer(bound, m, "conv2")?;
        let y = g.skeletal_conv(y, w, b, &h.levels[1].layout)?;
        g.pool(y, &h.maps[1], 2)
    }

    /// Decoder on the graph: `[T / 4, J', C] -> [T, J, 7]` raw output.
    pub fn decode_var(&self, g: &mut Graph, bound: &Bound, side: Side, z: Var) -> Result<Var> {
        let expected = self.latent_shape();
        if g.shape(z) != expected {
            return Err(Error::ShapeMismatch(format!("latent {:?}, model expects {expected:?}", g.shape(z))));
        }
        let m = Module::decoder(side);
        let h = self.hierarchy(side);
        let (e1, e2) = self.static_embeddings(g, bound, m)?;
        let y = g.unpool(z, &h.maps[1], 2)?;
        let y = self.with_static(g, y, e2)?;
        let (w, b) = self.layer(bound, m, "deconv1")?;
        let y = g.skeletal_conv(y, w, b, &h.levels[1].layout)?;
        let y = g.tanh(y);
        let y = g.unpool(y, &h.maps[0], 2)?;
        let y = self.with_static(g, y, e1)?;
        let (w, b) = self.layer(bound, m, "deconv2")?;
        g.skeletal_conv(y, w, b, &h.levels[0].layout)
    }

    /// Splits raw decoder output into rotations `[T, J, 4]` and root `[T, 3]`.
    pub fn split_output(&self, g: &mut Graph, side: Side, out: Var) -> Result<(Var, Var)> {
        let rot = g.index_select(out, 2, &[0, 1, 2, 3])?;
        let root = g.index_select(out, 1, &[self.skeleton(side).root()])?;
        let root = g.index_select(root, 2, &[4, 5, 6])?;
        let t = g.shape(out)[0];
        let root = g.reshape(root, &[t, 3])?;
        Ok((rot, root))
    }

    /// Maps raw decoder output back to the input encoding: unit rotation rows
    /// and root channels on the root joint only.
    pub fn decoded_to_input(&self, g: &mut Graph, side: Side, out: Var) -> Result<Var> {
        let shape = g.shape(out).to_vec();
        let rot = g.index_select(out, 2, &[0, 1, 2, 3])?;
        let rot = g.normalize_rows(rot)?;
        let trans = g.index_select(out, 2, &[4, 5, 6])?;
        let root = self.skeleton(side).root();
        let mut mask = Tensor::zeros(&[shape[0], shape[1], 3]);
        for t in 0..shape[0] {
            mask.data_mut()[(t * shape[1] + root) * 3..(t * shape[1] + root + 1) * 3].fill(1.0);
        }
        let mask = g.constant(mask);
        let trans = g.mul(trans, mask)?;
        g.concat(&[rot, trans], 2)
    }

    pub fn encode(&self, side: Side, clip: &MotionClip) -> Result<LatentCode> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, &[Module::encoder(side)], &[]);
        let x = g.constant(self.input_tensor(side, clip)?);
        let z = self.encode_var(&mut g, &bound, side, x)?;
        Ok(LatentCode(g.value(z).clone()))
    }

    /// Raw `[T, J, 7]` decoder output before normalization.
    pub fn decode_raw(&self, side: Side, z: &LatentCode) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, &[Module::decoder(side)], &[]);
        let z = g.constant(z.0.clone());
        let out = self.decode_var(&mut g, &bound, side, z)?;
        Ok(g.value(out).clone())
    }

    pub fn decode(&self, side: Side, z: &LatentCode) -> Result<MotionClip> {
        let raw = self.decode_raw(side, z)?;
        Ok(self.clip_from_raw(side, &raw))
    }

    /// Builds a valid clip from raw decoder output. Each rotation row is
    /// divided by its norm and sign-canonicalized; degenerate rows become identity.
    pub fn clip_from_raw(&self, side: Side, raw: &Tensor) -> MotionClip {
        let s = self.skeleton(side);
        let (t_len, j) = (raw.shape()[0], raw.shape()[1]);
        let mut rotations = Vec::with_capacity(t_len);
        let mut root = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let frame = &raw.data()[t * j * DYNAMIC_CHANNELS..(t + 1) * j * DYNAMIC_CHANNELS];
            rotations.push(
                frame
                    .chunks(DYNAMIC_CHANNELS)
                    .map(|c| {
                        let n = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2] + c[3] * c[3]).sqrt();
                        if n > MIN_NORM && n.is_finite() {
                            Quaternion::new(c[0] / n, c[1] / n, c[2] / n, c[3] / n).canonical()
                        } else {
                            Quaternion::IDENTITY
                        }
                    })
                    .collect(),
            );
            let r = &frame[s.root() * DYNAMIC_CHANNELS..];
            root.push([r[4], r[5], r[6]].map(|v| if v.is_finite() { v } else { 0.0 }));
        }
        MotionClip::from_parts_unchecked(s.name().to_string(), self.config.fps, root, rotations)
    }

    /// Decoder B applied to encoder A.
    pub fn retarget(&self, clip: &MotionClip) -> Result<MotionClip> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, &[Module::EncoderA, Module::DecoderB], &[]);
        let x = g.constant(self.input_tensor(Side::A, clip)?);
        let z = self.encode_var(&mut g, &bound, Side::A, x)?;
        let out = self.decode_var(&mut g, &bound, Side::B, z)?;
        Ok(self.clip_from_raw(Side::B, g.value(out)))
    }

    /// [`retarget`](Self::retarget) for every clip on up to `workers` threads,
    /// in input order. Errors carry the failing clip's index.
    pub fn retarget_batch(&self, clips: &[MotionClip], workers: usize) -> Result<Vec<MotionClip>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        let results: Vec<Result<MotionClip>> = pool.install(|| clips.par_iter().map(|c| self.retarget(c)).collect());
        results
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.map_err(|e| Error::InvalidMotion(format!("clip {i}: {e}"))))
            .collect()
    }

    // ------------------------------------------------------------ storage

    pub fn sidecar(&self) -> ModelSidecar {
        ModelSidecar {
            format_version: FORMAT_VERSION,
            window: self.config.window,
            channels: self.config.channels.to_vec(),
            kernel: self.config.kernel,
            static_channels: self.config.static_channels,
            fps: self.config.fps,
            skeleton_a: self.skeletons[0].name().to_string(),
            skeleton_b: self.skeletons[1].name().to_string(),
            pooling_a: self.hierarchies[0].raw_maps(),
            pooling_b: self.hierarchies[1].raw_maps(),
            skeletons: [SkeletonFile::from_skeleton(&self.skeletons[0]), SkeletonFile::from_skeleton(&self.skeletons[1])],
            stage: self.stage.clone(),
            trained_steps: self.trained_steps,
        }
    }

    pub fn from_parts(sidecar: ModelSidecar, params: ParamStore) -> Result<Self> {
        let &[c1, c2] = sidecar.channels.as_slice() else {
            return Err(Error::Format(format!("expected two channel widths, got {:?}", sidecar.channels)));
        };
        let config = NetConfig {
            window: sidecar.window,
            channels: [c1, c2],
            kernel: sidecar.kernel,
            static_channels: sidecar.static_channels,
            fps: sidecar.fps,
        };
        let [fa, fb] = sidecar.skeletons;
        let mut a = fa.into_skeleton()?;
        let mut b = fb.into_skeleton()?;
        for (s, name, maps) in [(&mut a, &sidecar.skeleton_a, sidecar.pooling_a), (&mut b, &sidecar.skeleton_b, sidecar.pooling_b)] {
            if s.name() != name {
                return Err(Error::Format(format!("sidecar names skeleton '{name}' but embeds '{}'", s.name())));
            }
            *s = s.clone().with_pooling(maps)?;
        }
        let template = Self::new(config, a, b, 0)?;
        if template.params.len() != params.len() {
            return Err(Error::Format(format!("checkpoint has {} tensors, model needs {}", params.len(), template.params.len())));
        }
        for (i, (name, t)) in template.params.iter().enumerate() {
            if params.name(i) != name || params.get(i).shape() != t.shape() {
                return Err(Error::Format(format!(
                    "checkpoint tensor {i} is '{}' {:?}, expected '{name}' {:?}",
                    params.name(i),
                    params.get(i).shape(),
                    t.shape()
                )));
            }
        }
        Ok(Self { params, stage: sidecar.stage, trained_steps: sidecar.trained_steps, ..template })
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Writes the checkpoint to `path` and the sidecar to `path.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.params.to_bytes())?;
        fs::write(Self::sidecar_path(path), io::sidecar_to_json(&self.sidecar()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side = Self::sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::Format(format!("{}: {e}", side.display())))?;
        let sidecar = io::sidecar_from_json(&text).map_err(|e| Error::Format(format!("{}: {e}", side.display())))?;
        let bytes = fs::read(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let params = ParamStore::from_bytes(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Self::from_parts(sidecar, params)
    }
}
