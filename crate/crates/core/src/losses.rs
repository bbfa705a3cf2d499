//! Training objective: colour regression error, class-distribution KL, and
//! the Wasserstein critic terms with gradient penalty.
//!
//! Every expectation is a mini-batch mean. Each loss has a graph form used
//! for training and, where useful, a plain-value form used for reporting.

use std::fmt::Write as _;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{Graph, Var};
use crate::networks::{ClassDistribution, Critic};
use crate::tensor::Tensor;

/// Floor applied to generated probabilities inside the KL term.
pub const KL_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("critic: {0}")]
    Critic(String),
    #[error("invalid loss weights: {0}")]
    Weights(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_g: f64,
    pub lambda_s: f64,
    pub gp_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_g: 0.1,
            lambda_s: 0.003,
            gp_weight: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        for (name, v) in [
            ("lambda_g", self.lambda_g),
            ("lambda_s", self.lambda_s),
            ("gp_weight", self.gp_weight),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(LossError::Weights(format!("{name} = {v}")));
            }
        }
        Ok(())
    }

    /// `color + λ_g · adversarial + λ_s · kl`.
    pub fn combine(&self, color: f64, adversarial: f64, kl: f64) -> f64 {
        color + self.lambda_g * adversarial + self.lambda_s * kl
    }
}

/// Scalars recorded for one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub color_error: f64,
    pub class_kl: f64,
    pub adv_generator: f64,
    pub critic_real: f64,
    pub critic_fake: f64,
    pub gradient_penalty: f64,
    pub total_generator: f64,
    pub total_critic: f64,
}

impl LossReport {
    pub const FIELDS: [&'static str; 8] = [
        "color_error",
        "class_kl",
        "adv_generator",
        "critic_real",
        "critic_fake",
        "gradient_penalty",
        "total_generator",
        "total_critic",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.color_error,
            self.class_kl,
            self.adv_generator,
            self.critic_real,
            self.critic_fake,
            self.gradient_penalty,
            self.total_generator,
            self.total_critic,
        ]
    }

    /// Name of the first non-finite field, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        Self::FIELDS
            .iter()
            .zip(self.values())
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| *n)
    }

    /// One metrics-log record: `step=<n> name=value ...`. Values use the
    /// shortest representation that round-trips.
    pub fn to_log_line(&self, step: u64) -> String {
        let mut s = format!("step={step}");
        for (name, v) in Self::FIELDS.iter().zip(self.values()) {
            let _ = write!(s, " {name}={v:?}");
        }
        s
    }

    pub fn parse_log_line(line: &str) -> Option<(u64, LossReport)> {
        let mut fields = line.split_whitespace();
        let step = fields.next()?.strip_prefix("step=")?.parse().ok()?;
        let mut vals = [0.0; 8];
        for (slot, name) in vals.iter_mut().zip(Self::FIELDS) {
            let (k, v) = fields.next()?.split_once('=')?;
            if k != name {
                return None;
            }
            *slot = v.parse().ok()?;
        }
        let [color_error, class_kl, adv_generator, critic_real, critic_fake, gradient_penalty, total_generator, total_critic] =
            vals;
        Some((
            step,
            LossReport {
                color_error,
                class_kl,
                adv_generator,
                critic_real,
                critic_fake,
                gradient_penalty,
                total_generator,
                total_critic,
            },
        ))
    }
}

fn pixel_count(shape: &[usize]) -> usize {
    shape[0] * shape[2..].iter().product::<usize>()
}

/// Mean over batch and pixels of the squared Euclidean distance between
/// predicted and real `(a,b)` pairs. Inputs are `[N,2,H,W]`.
pub fn color_error_value(pred: &Tensor, real: &Tensor) -> Result<f64, LossError> {
    if pred.shape() != real.shape() || pred.shape().len() != 4 {
        return Err(LossError::Shape(format!("{:?} vs {:?}", pred.shape(), real.shape())));
    }
    let sq: f64 = pred
        .data()
        .iter()
        .zip(real.data())
        .map(|(p, r)| (p - r) * (p - r))
        .sum();
    Ok(sq / pixel_count(pred.shape()) as f64)
}

pub fn color_error(g: &mut Graph, pred: Var, real: Var) -> Result<Var, LossError> {
    if g.shape(pred) != g.shape(real) || g.shape(pred).len() != 4 {
        return Err(LossError::Shape(format!("{:?} vs {:?}", g.shape(pred), g.shape(real))));
    }
    let pixels = pixel_count(g.shape(pred)) as f64;
    let d = g.sub(pred, real);
    let sq = g.square(d);
    let s = g.sum_all(sq);
    Ok(g.scale(s, 1.0 / pixels))
}

/// Batch mean of `KL(y_v ‖ y)` with `0·log 0 = 0` and generated
/// probabilities floored at [`KL_FLOOR`].
pub fn class_kl_value(
    target: &[ClassDistribution],
    predicted: &[ClassDistribution],
) -> Result<f64, LossError> {
    if target.len() != predicted.len() || target.is_empty() {
        return Err(LossError::Shape(format!(
            "{} targets vs {} predictions",
            target.len(),
            predicted.len()
        )));
    }
    let mut total = 0.0;
    for (t, p) in target.iter().zip(predicted) {
        if t.len() != p.len() {
            return Err(LossError::Shape(format!("{} classes vs {}", t.len(), p.len())));
        }
        total += t
            .probs()
            .iter()
            .zip(p.probs())
            .filter(|(&tv, _)| tv > 0.0)
            .map(|(&tv, &pv)| tv * (tv.ln() - pv.max(KL_FLOOR).ln()))
            .sum::<f64>();
    }
    Ok(total / target.len() as f64)
}

/// Graph form of [`class_kl_value`]; `log_probs` are the generator's
/// log-softmax outputs `[N,m]`, `target` is constant.
pub fn class_kl(g: &mut Graph, target: &Tensor, log_probs: Var) -> Result<Var, LossError> {
    if target.shape() != g.shape(log_probs) {
        return Err(LossError::Shape(format!(
            "target {:?} vs prediction {:?}",
            target.shape(),
            g.shape(log_probs)
        )));
    }
    let n = target.shape()[0] as f64;
    let entropy_term: f64 = target
        .data()
        .iter()
        .filter(|&&t| t > 0.0)
        .map(|&t| t * t.ln())
        .sum();
    let floored = g.clamp_min(log_probs, KL_FLOOR.ln());
    let weighted = g.mask_mul(floored, Rc::new(target.clone()));
    let cross = g.sum_all(weighted);
    let kl = g.scale(cross, -1.0 / n);
    Ok(g.add_scalar(kl, entropy_term / n))
}

/// One interpolation coefficient `u ~ U[0,1)` per sample.
pub fn interpolation_weights(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

fn checked_scores(g: &mut Graph, critic: &dyn Critic, params: &[Var], x: Var) -> Result<Var, LossError> {
    let n = g.shape(x)[0];
    let s = critic.score(g, params, x);
    if g.shape(s) != [n] {
        return Err(LossError::Critic(format!(
            "expected one score per sample ({n}), got shape {:?}",
            g.shape(s)
        )));
    }
    Ok(s)
}

/// Mean over the batch of `(‖∇_Î D(Î)‖₂ − 1)²` at `Î = u·real + (1−u)·fake`.
///
/// The input gradient is built with `create_graph`, so the result is
/// differentiable with respect to critic parameters.
pub fn gradient_penalty(
    g: &mut Graph,
    critic: &dyn Critic,
    params: &[Var],
    real: Var,
    fake: Var,
    seed: u64,
) -> Result<Var, LossError> {
    let shape = g.shape(real).to_vec();
    if g.shape(fake) != shape.as_slice() {
        return Err(LossError::Shape(format!("real {:?} vs fake {:?}", shape, g.shape(fake))));
    }
    let probe = g.param(Tensor::scalar(0.0));
    if !g.requires_grad(probe) {
        return Err(LossError::Critic(
            "gradient penalty needs a recording graph".into(),
        ));
    }
    let n = shape[0];
    let inner = g.value(real).len() / n;
    let u = interpolation_weights(n, seed);
    let mixed: Vec<f64> = g
        .value(real)
        .data()
        .iter()
        .zip(g.value(fake).data())
        .enumerate()
        .map(|(i, (&r, &f))| {
            let w = u[i / inner];
            w * r + (1.0 - w) * f
        })
        .collect();
    let interp = g.param(Tensor::new(shape.clone(), mixed));
    let scores = checked_scores(g, critic, params, interp)?;
    let total = g.sum_all(scores);
    let grad = match g.grad(total, &[interp], true)[0] {
        Some(v) => v,
        None => g.constant(Tensor::zeros(&shape)),
    };
    let sq = g.square(grad);
    let per_sample = g.sum_rest(sq);
    let norm = g.sqrt(per_sample);
    let gap = g.add_scalar(norm, -1.0);
    let pen = g.square(gap);
    Ok(g.mean_all(pen))
}

pub struct CriticTerms {
    pub total: Var,
    pub real_mean: f64,
    pub fake_mean: f64,
    pub gradient_penalty: f64,
    pub total_value: f64,
}

/// `−(mean D(real) − mean D(fake)) + gp_weight · penalty`, minimized by the critic.
pub fn critic_objective(
    g: &mut Graph,
    critic: &dyn Critic,
    params: &[Var],
    real: Var,
    fake: Var,
    weights: &LossWeights,
    seed: u64,
) -> Result<CriticTerms, LossError> {
    let sr = checked_scores(g, critic, params, real)?;
    let sf = checked_scores(g, critic, params, fake)?;
    let mr = g.mean_all(sr);
    let mf = g.mean_all(sf);
    let gap = g.sub(mr, mf);
    let neg_gap = g.neg(gap);
    let gp = gradient_penalty(g, critic, params, real, fake, seed)?;
    let weighted = g.scale(gp, weights.gp_weight);
    let total = g.add(neg_gap, weighted);
    Ok(CriticTerms {
        total,
        real_mean: g.value(mr).item(),
        fake_mean: g.value(mf).item(),
        gradient_penalty: g.value(gp).item(),
        total_value: g.value(total).item(),
    })
}

pub struct GeneratorTerms {
    pub total: Var,
    pub color_error: f64,
    /// `−mean D(L, pred)`, when the adversarial term is active.
    pub adversarial: Option<f64>,
    pub class_kl: Option<f64>,
    pub total_value: f64,
}

/// Inputs to the generator objective. Critic parameters should be bound as
/// constants so only the generator receives gradients.
pub struct GeneratorObjectiveInputs<'a> {
    pub pred_ab: Var,
    pub real_ab: Var,
    pub luminance: Var,
    pub log_probs: Var,
    pub teacher: Option<&'a Tensor>,
    pub critic: Option<(&'a dyn Critic, &'a [Var])>,
}

/// `color + λ_g · (−mean D(L, pred)) + λ_s · KL(y_v ‖ y)`. A term with zero
/// weight (or missing inputs) is not built at all.
pub fn generator_objective(
    g: &mut Graph,
    inputs: GeneratorObjectiveInputs<'_>,
    weights: &LossWeights,
) -> Result<GeneratorTerms, LossError> {
    let color = color_error(g, inputs.pred_ab, inputs.real_ab)?;
    let mut total = color;
    let mut adversarial = None;
    if weights.lambda_g > 0.0 {
        if let Some((critic, params)) = inputs.critic {
            let stacked = g.concat_channels(&[inputs.luminance, inputs.pred_ab]);
            let s = checked_scores(g, critic, params, stacked)?;
            let m = g.mean_all(s);
            let adv = g.neg(m);
            adversarial = Some(g.value(adv).item());
            let w = g.scale(adv, weights.lambda_g);
            total = g.add(total, w);
        }
    }
    let mut kl_value = None;
    if weights.lambda_s > 0.0 {
        if let Some(target) = inputs.teacher {
            let kl = class_kl(g, target, inputs.log_probs)?;
            kl_value = Some(g.value(kl).item());
            let w = g.scale(kl, weights.lambda_s);
            total = g.add(total, w);
        }
    }
    Ok(GeneratorTerms {
        total,
        color_error: g.value(color).item(),
        adversarial,
        class_kl: kl_value,
        total_value: g.value(total).item(),
    })
}

/// Closed-form critics used to check the penalty and objective arithmetic.
pub mod analytic {
    use super::*;

    /// `D(x) = scale · Σ x_i / √n`, `n` the per-sample element count; its
    /// input-gradient norm is `|scale|` everywhere.
    pub struct LinearCritic {
        pub scale: f64,
    }

    impl Critic for LinearCritic {
        fn bind(&self, _g: &mut Graph, _trainable: bool) -> Vec<Var> {
            Vec::new()
        }

        fn score(&self, g: &mut Graph, _params: &[Var], input: Var) -> Var {
            let n = g.shape(input)[0];
            let per = (g.value(input).len() / n) as f64;
            let s = g.sum_rest(input);
            g.scale(s, self.scale / per.sqrt())
        }
    }

    /// Ignores its input.
    pub struct ConstantCritic {
        pub value: f64,
    }

    impl Critic for ConstantCritic {
        fn bind(&self, _g: &mut Graph, _trainable: bool) -> Vec<Var> {
            Vec::new()
        }

        fn score(&self, g: &mut Graph, _params: &[Var], input: Var) -> Var {
            let n = g.shape(input)[0];
            g.constant(Tensor::full(&[n], self.value))
        }
    }

    /// Scores real and fake batches with fixed values, told apart by the
    /// sign of the first element.
    pub struct TableCritic {
        pub positive: f64,
        pub negative: f64,
    }

    impl Critic for TableCritic {
        fn bind(&self, _g: &mut Graph, _trainable: bool) -> Vec<Var> {
            Vec::new()
        }

        fn score(&self, g: &mut Graph, _params: &[Var], input: Var) -> Var {
            let n = g.shape(input)[0];
            let v = if g.value(input).data()[0] >= 0.0 {
                self.positive
            } else {
                self.negative
            };
            g.constant(Tensor::full(&[n], v))
        }
    }
}
