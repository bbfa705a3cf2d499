//! Generator, patch critic and frozen teacher classifier.
//!
//! Generator layout (input side `S`, divisible by 8):
//!
//! ```text
//! L ─ triplicate ─ backbone (VGG-16 blocks 1-4, pools after 1-3) ─ S/8 map
//!                     ├─ color branch: 2 × Conv-BN-ReLU ──────────────┐
//!                     └─ class branch: 4 × Conv-BN-ReLU, FC×3 ─ g ────┤ concat(color, broadcast g)
//!                                                    └─ head ─ softmax → y
//! fusion: 6 × Conv-ReLU (2× upsample after 2nd and 4th), Conv→2 + tanh, bilinear 2× → (a,b)
//! ```
//!
//! Parameter names carry their group as a prefix (`backbone.`, `color.`,
//! `class.`, `fusion.`, `critic.`), which is what [`parameter_partition`] keys on.

use std::cell::Cell;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{Archive, ArchiveError};
use crate::autograd::{Graph, Var};
use crate::colorspace::triplicate_luminance;
use crate::nn::{BatchNorm, Conv2d, Linear, Mode, ParamStore};
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("shape: {0}")]
    Shape(String),
    #[error("weight loading: layer {layer}: {reason}")]
    WeightLoad { layer: String, reason: String },
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("parameter {0} belongs to no group")]
    Unassigned(String),
    #[error("parameter {0} appears in more than one group")]
    Overlap(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub input_side: usize,
    pub num_classes: usize,
    /// Output channels of the four backbone stages.
    pub backbone_widths: [usize; 4],
    /// Convolutions per backbone stage.
    pub backbone_depths: [usize; 4],
    pub color_widths: [usize; 2],
    pub class_conv_width: usize,
    pub fc_widths: [usize; 3],
    pub head_widths: [usize; 6],
}

impl GeneratorConfig {
    /// Full-width layout: VGG-16 channel counts, 512-channel S/8 features.
    pub fn paper(side: usize, num_classes: usize) -> Self {
        GeneratorConfig {
            input_side: side,
            num_classes,
            backbone_widths: [64, 128, 256, 512],
            backbone_depths: [2, 2, 3, 3],
            color_widths: [256, 128],
            class_conv_width: 512,
            fc_widths: [1024, 512, 256],
            head_widths: [256, 128, 64, 64, 32, 32],
        }
    }

    /// Same topology at one eighth of the widths, for CPU-scale runs.
    pub fn desk(side: usize, num_classes: usize) -> Self {
        GeneratorConfig {
            input_side: side,
            num_classes,
            backbone_widths: [8, 16, 32, 64],
            backbone_depths: [2, 2, 3, 3],
            color_widths: [32, 16],
            class_conv_width: 64,
            fc_widths: [128, 64, 32],
            head_widths: [32, 16, 16, 8, 8, 8],
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.input_side == 0 || self.input_side % 8 != 0 {
            return Err(NetworkError::Config(format!(
                "input side {} is not a positive multiple of 8",
                self.input_side
            )));
        }
        if self.num_classes < 2 {
            return Err(NetworkError::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        let widths = self
            .backbone_widths
            .iter()
            .chain(&self.color_widths)
            .chain(&self.fc_widths)
            .chain(&self.head_widths)
            .chain(std::iter::once(&self.class_conv_width));
        if widths.copied().any(|w| w == 0) || self.backbone_depths.contains(&0) {
            return Err(NetworkError::Config("zero-width layer".into()));
        }
        Ok(())
    }

    /// Spatial side of the class-branch grid after its two stride-2 convolutions.
    fn class_grid(&self) -> usize {
        let s = self.input_side / 8;
        s.div_ceil(2).div_ceil(2)
    }
}

/// Per-sample outputs of one generator forward pass, as graph nodes.
pub struct GeneratorForward {
    /// Encoded chrominance `[N,2,S,S]`.
    pub ab: Var,
    pub logits: Var,
    /// Row-wise log class probabilities `[N,m]`.
    pub log_probs: Var,
    /// Parameter nodes, aligned with [`Generator::params`].
    pub params: Vec<Var>,
}

/// Plain-value generator output.
#[derive(Clone, Debug)]
pub struct GeneratorOutput {
    pub ab: Tensor,
    pub class_dist: Vec<ClassDistribution>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassDistribution {
    probs: Vec<f64>,
}

impl ClassDistribution {
    pub const TOLERANCE: f64 = 1e-5;

    pub fn new(probs: Vec<f64>) -> Result<Self, NetworkError> {
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(NetworkError::Shape("negative or non-finite probability".into()));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > Self::TOLERANCE {
            return Err(NetworkError::Shape(format!("probabilities sum to {s}")));
        }
        Ok(ClassDistribution { probs })
    }

    pub fn uniform(m: usize) -> Self {
        ClassDistribution {
            probs: vec![1.0 / m as f64; m],
        }
    }

    pub fn one_hot(m: usize, k: usize) -> Self {
        let mut probs = vec![0.0; m];
        probs[k] = 1.0;
        ClassDistribution { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Rows of an `[N,m]` probability tensor.
    pub fn rows(t: &Tensor) -> Vec<ClassDistribution> {
        let m = t.shape()[1];
        t.data()
            .chunks(m)
            .map(|r| ClassDistribution { probs: r.to_vec() })
            .collect()
    }
}

fn check_luminance(l: &Tensor, side: usize) -> Result<(), NetworkError> {
    let s = l.shape();
    if s.len() != 4 || s[1] != 1 || s[2] != side || s[3] != side || s[0] == 0 {
        return Err(NetworkError::Shape(format!(
            "expected luminance [N,1,{side},{side}], got {s:?}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    params: ParamStore,
    buffers: ParamStore,
    backbone: Vec<Vec<Conv2d>>,
    color: Vec<(Conv2d, BatchNorm)>,
    class_convs: Vec<(Conv2d, BatchNorm)>,
    fcs: Vec<Linear>,
    class_head: Linear,
    head: Vec<Conv2d>,
    out: Conv2d,
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self, NetworkError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let mut b = ParamStore::new();

        let mut backbone = Vec::new();
        let mut c_in = 3;
        for (stage, (&w, &depth)) in config
            .backbone_widths
            .iter()
            .zip(&config.backbone_depths)
            .enumerate()
        {
            let mut convs = Vec::new();
            for i in 0..depth {
                let name = format!("backbone.conv{}_{}", stage + 1, i + 1);
                convs.push(Conv2d::new(&mut p, &name, c_in, w, 3, 1, 1, true, &mut rng));
                c_in = w;
            }
            backbone.push(convs);
        }
        let shared_c = c_in;

        let mut color = Vec::new();
        let mut c = shared_c;
        for (i, &w) in config.color_widths.iter().enumerate() {
            let name = format!("color.conv{}", i + 1);
            let conv = Conv2d::new(&mut p, &name, c, w, 3, 1, 1, false, &mut rng);
            let bn = BatchNorm::new(&mut p, &mut b, &format!("color.bn{}", i + 1), w);
            color.push((conv, bn));
            c = w;
        }
        let color_c = c;

        let mut class_convs = Vec::new();
        let mut c = shared_c;
        for i in 0..4 {
            let stride = if i % 2 == 0 { 2 } else { 1 };
            let w = config.class_conv_width;
            let conv = Conv2d::new(&mut p, &format!("class.conv{}", i + 1), c, w, 3, stride, 1, false, &mut rng);
            let bn = BatchNorm::new(&mut p, &mut b, &format!("class.bn{}", i + 1), w);
            class_convs.push((conv, bn));
            c = w;
        }
        let grid = config.class_grid();
        let mut f_in = c * grid * grid;
        let mut fcs = Vec::new();
        for (i, &w) in config.fc_widths.iter().enumerate() {
            fcs.push(Linear::new(&mut p, &format!("class.fc{}", i + 1), f_in, w, &mut rng));
            f_in = w;
        }
        let global_c = f_in;
        let class_head = Linear::new(&mut p, "class.head", global_c, config.num_classes, &mut rng);

        let mut head = Vec::new();
        let mut c = color_c + global_c;
        for (i, &w) in config.head_widths.iter().enumerate() {
            head.push(Conv2d::new(&mut p, &format!("fusion.conv{}", i + 1), c, w, 3, 1, 1, true, &mut rng));
            c = w;
        }
        let out = Conv2d::new(&mut p, "fusion.out", c, 2, 3, 1, 1, true, &mut rng);

        Ok(Generator {
            config,
            params: p,
            buffers: b,
            backbone,
            color,
            class_convs,
            fcs,
            class_head,
            head,
            out,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Batch-norm running statistics.
    pub fn buffers(&self) -> &ParamStore {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut ParamStore {
        &mut self.buffers
    }

    /// Builds the forward pass for an encoded luminance batch `[N,1,S,S]`.
    /// In [`Mode::Train`] batch-norm running statistics are updated.
    pub fn forward(
        &mut self,
        g: &mut Graph,
        luminance: &Tensor,
        mode: Mode,
        trainable: bool,
    ) -> Result<GeneratorForward, NetworkError> {
        let side = self.config.input_side;
        check_luminance(luminance, side)?;
        let n = luminance.shape()[0];
        let vars = self.params.bind(g, trainable);

        let mut h = g.constant(triplicate_luminance(luminance));
        for (stage, convs) in self.backbone.iter().enumerate() {
            for conv in convs {
                h = conv.forward(g, &vars, h);
                h = g.relu(h);
            }
            if stage < 3 {
                h = g.max_pool2(h);
            }
        }
        let shared = h;

        let mut c = shared;
        for (conv, bn) in &self.color {
            c = conv.forward(g, &vars, c);
            c = bn.forward(g, &vars, &mut self.buffers, c, mode);
            c = g.relu(c);
        }

        let mut k = shared;
        for (conv, bn) in &self.class_convs {
            k = conv.forward(g, &vars, k);
            k = bn.forward(g, &vars, &mut self.buffers, k, mode);
            k = g.relu(k);
        }
        let flat = g.value(k).len() / n;
        k = g.reshape(k, &[n, flat]);
        for fc in &self.fcs {
            k = fc.forward(g, &vars, k);
            k = g.relu(k);
        }
        let global = k;
        let logits = self.class_head.forward(g, &vars, global);
        let log_probs = g.log_softmax(logits);

        let grid = side / 8;
        let spread = g.spatial_broadcast(global, grid, grid);
        let mut f = g.concat_channels(&[c, spread]);
        for (i, conv) in self.head.iter().enumerate() {
            f = conv.forward(g, &vars, f);
            f = g.relu(f);
            if i == 1 || i == 3 {
                f = g.upsample2(f);
            }
        }
        f = self.out.forward(g, &vars, f);
        f = g.tanh(f);
        let ab = g.resize_bilinear(f, side, side);

        Ok(GeneratorForward {
            ab,
            logits,
            log_probs,
            params: vars,
        })
    }

    /// Inference-mode forward pass (running batch-norm statistics, no tape).
    pub fn infer(&mut self, luminance: &Tensor) -> Result<GeneratorOutput, NetworkError> {
        let mut g = Graph::inference();
        let out = self.forward(&mut g, luminance, Mode::Eval, false)?;
        let probs = g.value(out.log_probs).map(f64::exp);
        Ok(GeneratorOutput {
            ab: g.value(out.ab).clone(),
            class_dist: ClassDistribution::rows(&probs),
        })
    }

    /// Loads backbone weights from an archive. Every `backbone.*` parameter
    /// must be present with a matching shape; the first mismatch is reported.
    pub fn load_backbone(&mut self, weights: &Archive) -> Result<(), NetworkError> {
        let mut staged = Vec::new();
        for (i, name) in self.params.names().iter().enumerate() {
            if !name.starts_with("backbone.") {
                continue;
            }
            let layer = name.rsplit_once('.').map_or(name.as_str(), |(l, _)| l).to_string();
            let t = weights.get(name).ok_or_else(|| NetworkError::WeightLoad {
                layer: layer.clone(),
                reason: format!("missing array {name}"),
            })?;
            let want = self.params.values()[i].shape();
            if t.shape() != want {
                return Err(NetworkError::WeightLoad {
                    layer,
                    reason: format!("shape {:?}, expected {:?}", t.shape(), want),
                });
            }
            staged.push((i, t.clone()));
        }
        for (i, t) in staged {
            self.params.values_mut()[i] = t;
        }
        Ok(())
    }

    /// Backbone parameters as an archive (the weight-file format).
    pub fn backbone_archive(&self) -> Archive {
        let mut a = Archive::new();
        a.metadata.insert("kind".into(), "backbone".into());
        for (name, t) in self.params.iter() {
            if name.starts_with("backbone.") {
                a.push(name, t.clone());
            }
        }
        a
    }
}

/// Seeded random initialization, with the shared backbone optionally loaded
/// from a weight file. The backbone stays trainable either way.
pub fn init_weights(
    config: GeneratorConfig,
    seed: u64,
    backbone_weights: Option<&Path>,
) -> Result<Generator, NetworkError> {
    let mut g = Generator::new(config, seed)?;
    if let Some(path) = backbone_weights {
        let archive = Archive::load(path)?;
        g.load_backbone(&archive)?;
    }
    Ok(g)
}

/// Anything that maps a batch of stacked `(L,a,b)` images `[N,3,S,S]` to one
/// scalar score per sample.
pub trait Critic {
    fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var>;

    /// Per-sample scores, shape `[N]`.
    fn score(&self, g: &mut Graph, params: &[Var], input: Var) -> Var;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticConfig {
    pub input_side: usize,
    /// Widths of the three stride-2 and the one stride-1 convolution.
    pub widths: [usize; 4],
}

impl CriticConfig {
    pub fn paper(side: usize) -> Self {
        CriticConfig {
            input_side: side,
            widths: [64, 128, 256, 512],
        }
    }

    pub fn desk(side: usize) -> Self {
        CriticConfig {
            input_side: side,
            widths: [8, 16, 32, 64],
        }
    }
}

/// Markovian patch critic: one unbounded score per `8×8`-stride patch.
#[derive(Clone, Debug)]
pub struct PatchCritic {
    config: CriticConfig,
    params: ParamStore,
    convs: Vec<Conv2d>,
    out: Conv2d,
}

impl PatchCritic {
    pub fn new(config: CriticConfig, seed: u64) -> Result<Self, NetworkError> {
        if config.input_side == 0 || config.input_side % 8 != 0 {
            return Err(NetworkError::Config(format!(
                "input side {} is not a positive multiple of 8",
                config.input_side
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let mut convs = Vec::new();
        let mut c = 3;
        for (i, &w) in config.widths.iter().enumerate() {
            let name = format!("critic.conv{}", i + 1);
            let conv = if i < 3 {
                Conv2d::new(&mut p, &name, c, w, 4, 2, 1, true, &mut rng)
            } else {
                Conv2d::new(&mut p, &name, c, w, 3, 1, 1, true, &mut rng)
            };
            convs.push(conv);
            c = w;
        }
        let out = Conv2d::new(&mut p, "critic.out", c, 1, 3, 1, 1, true, &mut rng);
        Ok(PatchCritic {
            config,
            params: p,
            convs,
            out,
        })
    }

    pub fn config(&self) -> &CriticConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Score map `[N,1,S/8,S/8]`.
    pub fn patch_map(&self, g: &mut Graph, params: &[Var], input: Var) -> Var {
        let mut h = input;
        for conv in &self.convs {
            h = conv.forward(g, params, h);
            h = g.leaky_relu(h, LEAKY_SLOPE);
        }
        self.out.forward(g, params, h)
    }

    /// Plain-value score maps, `[N,S/8,S/8]`.
    pub fn discriminator_forward(&self, lab: &Tensor) -> Result<Tensor, NetworkError> {
        let s = lab.shape();
        let side = self.config.input_side;
        if s.len() != 4 || s[1] != 3 || s[2] != side || s[3] != side {
            return Err(NetworkError::Shape(format!(
                "expected [N,3,{side},{side}] Lab stack, got {s:?}"
            )));
        }
        let mut g = Graph::inference();
        let params = self.params.bind(&mut g, false);
        let x = g.constant(lab.clone());
        let m = self.patch_map(&mut g, &params, x);
        let out = g.value(m).clone();
        Ok(out.reshape(&[s[0], side / 8, side / 8]))
    }
}

impl Critic for PatchCritic {
    fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params.bind(g, trainable)
    }

    /// Mean patch score.
    fn score(&self, g: &mut Graph, params: &[Var], input: Var) -> Var {
        let map = self.patch_map(g, params, input);
        let patches = (g.value(map).len() / g.shape(map)[0]) as f64;
        let s = g.sum_rest(map);
        g.scale(s, 1.0 / patches)
    }
}

/// Stacks an encoded luminance batch `[N,1,S,S]` with chrominance `[N,2,S,S]`.
pub fn stack_lab(g: &mut Graph, luminance: Var, ab: Var) -> Var {
    g.concat_channels(&[luminance, ab])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub num_classes: usize,
    pub widths: [usize; 3],
    pub seed: u64,
    /// Logit multiplier; sharpens the otherwise near-uniform output of a
    /// random network.
    pub temperature_inv: u32,
}

impl TeacherConfig {
    pub fn desk(num_classes: usize) -> Self {
        TeacherConfig {
            num_classes,
            widths: [8, 16, 32],
            seed: 0x7eac_4e12,
            temperature_inv: 4,
        }
    }
}

/// Frozen classifier producing target class distributions from `(L,L,L)`.
/// Its parameters never enter a trainable graph.
#[derive(Clone, Debug)]
pub struct Teacher {
    config: TeacherConfig,
    params: ParamStore,
    convs: Vec<Conv2d>,
    head: Linear,
    invocations: Cell<u64>,
}

impl Teacher {
    pub fn new(config: TeacherConfig) -> Result<Self, NetworkError> {
        if config.num_classes < 2 {
            return Err(NetworkError::Config("teacher needs at least 2 classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamStore::new();
        let mut convs = Vec::new();
        let mut c = 3;
        for (i, &w) in config.widths.iter().enumerate() {
            convs.push(Conv2d::new(&mut p, &format!("teacher.conv{}", i + 1), c, w, 3, 1, 1, true, &mut rng));
            c = w;
        }
        let head = Linear::new(&mut p, "teacher.head", c, config.num_classes, &mut rng);
        Ok(Teacher {
            config,
            params: p,
            convs,
            head,
            invocations: Cell::new(0),
        })
    }

    pub fn config(&self) -> &TeacherConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Replaces the weights, e.g. with a pretrained classifier exported to
    /// an archive. Names and shapes must match.
    pub fn load(&mut self, weights: &Archive) -> Result<(), NetworkError> {
        let mut staged = Vec::new();
        for (i, name) in self.params.names().iter().enumerate() {
            let t = weights.get(name).ok_or_else(|| NetworkError::WeightLoad {
                layer: name.clone(),
                reason: "missing".into(),
            })?;
            if t.shape() != self.params.values()[i].shape() {
                return Err(NetworkError::WeightLoad {
                    layer: name.clone(),
                    reason: format!("shape {:?}", t.shape()),
                });
            }
            staged.push((i, t.clone()));
        }
        for (i, t) in staged {
            self.params.values_mut()[i] = t;
        }
        Ok(())
    }

    /// How many batches this teacher has classified.
    pub fn invocations(&self) -> u64 {
        self.invocations.get()
    }

    /// Target distributions `[N,m]` for an encoded luminance batch `[N,1,H,W]`.
    pub fn forward(&self, luminance: &Tensor) -> Result<Tensor, NetworkError> {
        let s = luminance.shape();
        if s.len() != 4 || s[1] != 1 || s[2] < 4 || s[3] < 4 {
            return Err(NetworkError::Shape(format!("teacher input {s:?}")));
        }
        self.invocations.set(self.invocations.get() + 1);
        let mut g = Graph::inference();
        let vars = self.params.bind(&mut g, false);
        let mut h = g.constant(triplicate_luminance(luminance));
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&mut g, &vars, h);
            h = g.relu(h);
            if i < 2 {
                h = g.max_pool2(h);
            }
        }
        let (hh, ww) = (g.shape(h)[2], g.shape(h)[3]);
        let pooled = g.value(h).data().chunks(hh * ww).map(|c| c.iter().sum::<f64>() / (hh * ww) as f64).collect();
        let n = s[0];
        let c = g.shape(h)[1];
        let pooled = g.constant(Tensor::new(vec![n, c], pooled));
        let logits = self.head.forward(&mut g, &vars, pooled);
        let logits = g.scale(logits, self.config.temperature_inv as f64);
        let lp = g.log_softmax(logits);
        Ok(g.value(lp).map(f64::exp))
    }

    pub fn teacher_forward(&self, luminance: &Tensor) -> Result<Vec<ClassDistribution>, NetworkError> {
        Ok(ClassDistribution::rows(&self.forward(luminance)?))
    }
}

/// Generator and critic parameter names, split by role.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParameterPartition {
    pub shared: Vec<String>,
    pub color_branch: Vec<String>,
    pub class_branch: Vec<String>,
    pub fusion: Vec<String>,
    pub critic: Vec<String>,
}

impl ParameterPartition {
    pub fn groups(&self) -> [(&'static str, &[String]); 5] {
        [
            ("shared", &self.shared),
            ("color_branch", &self.color_branch),
            ("class_branch", &self.class_branch),
            ("fusion", &self.fusion),
            ("critic", &self.critic),
        ]
    }

    pub fn generator_groups(&self) -> [(&'static str, &[String]); 4] {
        let [a, b, c, d, _] = self.groups();
        [a, b, c, d]
    }

    pub fn len(&self) -> usize {
        self.groups().iter().map(|(_, g)| g.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Assigns every parameter name to exactly one group.
pub fn partition_names<'a>(
    names: impl IntoIterator<Item = &'a str>,
) -> Result<ParameterPartition, PartitionError> {
    let mut p = ParameterPartition::default();
    let mut seen = std::collections::HashSet::new();
    for name in names {
        if !seen.insert(name) {
            return Err(PartitionError::Overlap(name.to_string()));
        }
        let group = match name.split('.').next() {
            Some("backbone") => &mut p.shared,
            Some("color") => &mut p.color_branch,
            Some("class") => &mut p.class_branch,
            Some("fusion") => &mut p.fusion,
            Some("critic") => &mut p.critic,
            _ => return Err(PartitionError::Unassigned(name.to_string())),
        };
        group.push(name.to_string());
    }
    Ok(p)
}

pub fn parameter_partition(
    generator: &Generator,
    critic: &PatchCritic,
) -> Result<ParameterPartition, PartitionError> {
    partition_names(
        generator
            .params()
            .names()
            .iter()
            .chain(critic.params().names())
            .map(String::as_str),
    )
}
