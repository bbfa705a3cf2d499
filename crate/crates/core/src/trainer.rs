//! Alternating critic / generator optimization, checkpoints and the
//! metrics log.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{Archive, ArchiveError};
use crate::autograd::Graph;
use crate::data::{batch_iterator, batches_per_epoch, Batch, DataError, SampleSource};
use crate::losses::{
    critic_objective, generator_objective, GeneratorObjectiveInputs, LossError, LossReport,
    LossWeights,
};
use crate::networks::{
    Critic, CriticConfig, Generator, GeneratorConfig, NetworkError, PatchCritic, Teacher,
    TeacherConfig,
};
use crate::nn::{Mode, ParamStore};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const METRICS_FILE: &str = "metrics.log";
pub const CHECKPOINT_FILE: &str = "checkpoint.lab";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("non-finite {term} at step {step}")]
    NonFinite { term: &'static str, step: u64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("epoch {epoch}, step {step}: {source}")]
    At {
        epoch: u64,
        step: u64,
        #[source]
        source: Box<TrainError>,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// All three loss terms.
    Full,
    /// No class-distribution term (`λ_s = 0`).
    NoClass,
    /// No adversarial term (`λ_g = 0`); the critic is never trained.
    NoAdversarial,
}

/// Layer-width profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub profile: Profile,
    pub variant: Variant,
    pub epochs: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub critic_steps_per_gen_step: usize,
    pub seed: u64,
    pub side: usize,
    pub num_classes: usize,
    /// Stops after this many generator updates, mid-epoch if need be.
    pub max_steps: Option<u64>,
    pub backbone_weights: Option<PathBuf>,
    pub teacher_weights: Option<PathBuf>,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Side 64, 10 classes, batch 4.
    pub fn desk() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            profile: Profile::Desk,
            variant: Variant::Full,
            epochs: 5,
            batch_size: 4,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            critic_steps_per_gen_step: 1,
            seed: 0,
            side: 64,
            num_classes: 10,
            max_steps: None,
            backbone_weights: None,
            teacher_weights: None,
            weights: LossWeights::default(),
        }
    }

    /// Side 224, 1000 classes, batch 10, full layer widths.
    pub fn paper() -> Self {
        TrainConfig {
            profile: Profile::Paper,
            batch_size: 10,
            side: 224,
            num_classes: 1000,
            ..Self::desk()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let c: TrainConfig = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_toml(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.critic_steps_per_gen_step == 0 {
            return bad("critic_steps_per_gen_step must be at least 1".into());
        }
        if self.side == 0 || self.side % 8 != 0 {
            return bad(format!("side {} is not a positive multiple of 8", self.side));
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2".into());
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0,1), got {b}"));
            }
        }
        self.weights.validate()?;
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Loss weights after the variant switches its term off.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights;
        match self.variant {
            Variant::Full => {}
            Variant::NoClass => w.lambda_s = 0.0,
            Variant::NoAdversarial => w.lambda_g = 0.0,
        }
        w
    }

    pub fn trains_critic(&self) -> bool {
        self.effective_weights().lambda_g > 0.0
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        match self.profile {
            Profile::Desk => GeneratorConfig::desk(self.side, self.num_classes),
            Profile::Paper => GeneratorConfig::paper(self.side, self.num_classes),
        }
    }

    pub fn critic_config(&self) -> CriticConfig {
        match self.profile {
            Profile::Desk => CriticConfig::desk(self.side),
            Profile::Paper => CriticConfig::paper(self.side),
        }
    }
}

/// Everything a run mutates, plus the frozen teacher.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub generator: Generator,
    pub critic: PatchCritic,
    pub teacher: Teacher,
    pub gen_opt: Adam,
    pub critic_opt: Adam,
    /// Generator updates performed so far.
    pub step: u64,
}

fn mix_seed(seed: u64, step: u64, k: u64) -> u64 {
    let mut z = seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ k.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let mut generator = Generator::new(config.generator_config(), config.seed)?;
        if let Some(p) = &config.backbone_weights {
            generator.load_backbone(&Archive::load(p)?)?;
        }
        let critic = PatchCritic::new(config.critic_config(), config.seed.wrapping_add(1))?;
        let mut teacher = Teacher::new(TeacherConfig::desk(config.num_classes))?;
        if let Some(p) = &config.teacher_weights {
            teacher.load(&Archive::load(p)?)?;
        }
        let gen_opt = Adam::new(config.adam(), generator.params().values());
        let critic_opt = Adam::new(config.adam(), critic.params().values());
        Ok(TrainState {
            config,
            generator,
            critic,
            teacher,
            gen_opt,
            critic_opt,
            step: 0,
        })
    }

    fn check(&self, term: &'static str, v: f64) -> Result<(), TrainError> {
        if v.is_finite() {
            Ok(())
        } else {
            Err(TrainError::NonFinite { term, step: self.step })
        }
    }

    /// Critic updates on a detached fake, then one generator update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<LossReport, TrainError> {
        let weights = self.config.effective_weights();
        let lum = batch.luminance();
        let real_ab = batch.target_ab();
        let mut report = LossReport::default();

        let mut g = Graph::new();
        let fwd = self.generator.forward(&mut g, &lum, Mode::Train, true)?;
        let fake_ab = g.value(fwd.ab).clone();

        if self.config.trains_critic() {
            let real = Tensor::concat_channels(&[&lum, &real_ab]);
            let fake = Tensor::concat_channels(&[&lum, &fake_ab]);
            for k in 0..self.config.critic_steps_per_gen_step {
                let mut gc = Graph::new();
                let params = self.critic.bind(&mut gc, true);
                let r = gc.constant(real.clone());
                let f = gc.constant(fake.clone());
                let seed = mix_seed(self.config.seed, self.step, k as u64);
                let terms = critic_objective(&mut gc, &self.critic, &params, r, f, &weights, seed)?;
                self.check("critic_real", terms.real_mean)?;
                self.check("critic_fake", terms.fake_mean)?;
                self.check("gradient_penalty", terms.gradient_penalty)?;
                self.check("total_critic", terms.total_value)?;
                let grads = gc.grad(terms.total, &params, false);
                let grads: Vec<Option<Tensor>> = grads.into_iter().map(|v| v.map(|v| gc.value(v).clone())).collect();
                self.critic_opt.step(self.critic.params_mut().values_mut(), &grads);
                report.critic_real = terms.real_mean;
                report.critic_fake = terms.fake_mean;
                report.gradient_penalty = terms.gradient_penalty;
                report.total_critic = terms.total_value;
            }
        }

        let teacher_dist = if weights.lambda_s > 0.0 {
            Some(self.teacher.forward(&lum)?)
        } else {
            None
        };
        let critic_params = if weights.lambda_g > 0.0 {
            self.critic.bind(&mut g, false)
        } else {
            Vec::new()
        };
        let real_v = g.constant(real_ab);
        let lum_v = g.constant(lum);
        let terms = generator_objective(
            &mut g,
            GeneratorObjectiveInputs {
                pred_ab: fwd.ab,
                real_ab: real_v,
                luminance: lum_v,
                log_probs: fwd.log_probs,
                teacher: teacher_dist.as_ref(),
                critic: (weights.lambda_g > 0.0).then_some((&self.critic as &dyn Critic, critic_params.as_slice())),
            },
            &weights,
        )?;
        report.color_error = terms.color_error;
        report.adv_generator = terms.adversarial.unwrap_or(0.0);
        report.class_kl = terms.class_kl.unwrap_or(0.0);
        report.total_generator = terms.total_value;
        if let Some(term) = report.first_non_finite() {
            return Err(TrainError::NonFinite { term, step: self.step });
        }
        let grads = g.grad(terms.total, &fwd.params, false);
        let grads: Vec<Option<Tensor>> = grads.into_iter().map(|v| v.map(|v| g.value(v).clone())).collect();
        self.gen_opt.step(self.generator.params_mut().values_mut(), &grads);
        self.step += 1;
        Ok(report)
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new();
        let meta = &mut a.metadata;
        meta.insert("kind".into(), "checkpoint".into());
        meta.insert("checkpoint_version".into(), CHECKPOINT_VERSION.to_string());
        meta.insert("step".into(), self.step.to_string());
        meta.insert("config".into(), self.config.to_toml());
        let sections: [(&str, &ParamStore); 4] = [
            ("generator", self.generator.params()),
            ("buffers", self.generator.buffers()),
            ("critic", self.critic.params()),
            ("teacher", self.teacher.params()),
        ];
        for (section, store) in sections {
            for (name, t) in store.iter() {
                a.push(format!("{section}/{name}"), t.clone());
            }
        }
        self.gen_opt.export("adam_generator", &mut a);
        self.critic_opt.export("adam_critic", &mut a);
        a
    }

    /// Rebuilds a state; nothing is returned unless every array is present
    /// with the expected shape.
    pub fn from_archive(a: &Archive) -> Result<Self, TrainError> {
        let bad = |m: String| TrainError::Checkpoint(m);
        let version = a
            .metadata
            .get("checkpoint_version")
            .ok_or_else(|| bad("missing checkpoint_version".into()))?;
        if version != &CHECKPOINT_VERSION.to_string() {
            return Err(bad(format!("version {version}, expected {CHECKPOINT_VERSION}")));
        }
        let config_text = a.metadata.get("config").ok_or_else(|| bad("missing config".into()))?;
        let mut config = TrainConfig::from_toml(config_text)?;
        // Weight files were consumed at creation; the archive carries the result.
        config.backbone_weights = None;
        config.teacher_weights = None;
        let step = a
            .metadata
            .get("step")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("missing step".into()))?;
        let mut s = TrainState::new(config.clone())?;
        fill(a, "generator", s.generator.params_mut())?;
        fill(a, "buffers", s.generator.buffers_mut())?;
        fill(a, "critic", s.critic.params_mut())?;
        let mut teacher_weights = Archive::new();
        for name in s.teacher.params().names() {
            let t = a
                .get(&format!("teacher/{name}"))
                .ok_or_else(|| bad(format!("missing teacher/{name}")))?;
            teacher_weights.push(name.clone(), t.clone());
        }
        s.teacher.load(&teacher_weights)?;
        s.gen_opt = Adam::import(config.adam(), "adam_generator", a, s.generator.params().values()).map_err(bad)?;
        s.critic_opt = Adam::import(config.adam(), "adam_critic", a, s.critic.params().values()).map_err(bad)?;
        s.step = step;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        Ok(self.to_archive().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_archive(&Archive::load(path)?)
    }
}

fn fill(a: &Archive, section: &str, store: &mut ParamStore) -> Result<(), TrainError> {
    let names: Vec<String> = store.names().to_vec();
    for (i, name) in names.iter().enumerate() {
        let key = format!("{section}/{name}");
        let t = a
            .get(&key)
            .ok_or_else(|| TrainError::Checkpoint(format!("missing {key}")))?;
        if t.shape() != store.values()[i].shape() {
            return Err(TrainError::Checkpoint(format!(
                "{key}: shape {:?}, expected {:?}",
                t.shape(),
                store.values()[i].shape()
            )));
        }
        store.values_mut()[i] = t.clone();
    }
    Ok(())
}

/// Loads only the generator (and its batch-norm statistics) from a
/// checkpoint, for inference.
pub fn load_generator(path: &Path) -> Result<Generator, TrainError> {
    Ok(TrainState::load(path)?.generator)
}

/// Total steps a run with this config and corpus size performs.
pub fn planned_steps(config: &TrainConfig, corpus_len: usize) -> u64 {
    let full = config.epochs * batches_per_epoch(corpus_len, config.batch_size) as u64;
    config.max_steps.map_or(full, |m| m.min(full))
}

/// Keeps the records of steps before `step`, dropping any written after
/// the checkpoint being resumed.
fn truncate_log(path: &Path, step: u64) -> Result<(), TrainError> {
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(());
    };
    let kept: String = text
        .lines()
        .filter(|l| LossReport::parse_log_line(l).is_some_and(|(s, _)| s < step))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(path, kept).map_err(io_err(path))
}

/// Runs (or resumes) training, appending one record per step to
/// `out/metrics.log` and writing `out/checkpoint.lab` after every epoch
/// and when the run stops.
pub fn fit(
    state: &mut TrainState,
    source: &dyn SampleSource,
    out_dir: &Path,
) -> Result<Vec<LossReport>, TrainError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let log_path = out_dir.join(METRICS_FILE);
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    truncate_log(&log_path, state.step)?;
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(io_err(&log_path))?;

    let per_epoch = batches_per_epoch(source.len(), state.config.batch_size) as u64;
    let total = planned_steps(&state.config, source.len());
    let mut reports = Vec::new();
    while state.step < total {
        let epoch = state.step / per_epoch;
        let skip = (state.step % per_epoch) as usize;
        let batches = batch_iterator(source, state.config.batch_size, Some(state.config.seed), epoch)?
            .skip_batches(skip);
        for batch in batches {
            if state.step >= total {
                break;
            }
            let step = state.step;
            let at = |e: TrainError| TrainError::At {
                epoch,
                step,
                source: Box::new(e),
            };
            let batch = batch.map_err(|e| at(e.into()))?;
            let report = state.train_step(&batch).map_err(at)?;
            writeln!(log, "{}", report.to_log_line(step)).map_err(io_err(&log_path))?;
            reports.push(report);
        }
        log.flush().map_err(io_err(&log_path))?;
        state.save(&ckpt_path)?;
    }
    if total == 0 || reports.is_empty() {
        state.save(&ckpt_path)?;
    }
    Ok(reports)
}

/// Reads a metrics log back.
pub fn read_metrics(path: &Path) -> Result<Vec<(u64, LossReport)>, TrainError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .map(|l| {
            LossReport::parse_log_line(l)
                .ok_or_else(|| TrainError::Checkpoint(format!("malformed metrics record: {l}")))
        })
        .collect()
}
