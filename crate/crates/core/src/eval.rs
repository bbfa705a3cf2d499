//! Chrominance PSNR, corpus evaluation against a zero-chroma baseline,
//! colorization of arbitrary-size images, and naturalness aggregation.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colorspace::{
    decode_chroma, encode_luminance, in_gamut, lab_to_rgb, rgb_to_lab, to_grayscale, LabImage,
    RgbImage, AB_MAX, AB_MIN,
};
use crate::data::resize;
use crate::networks::{Generator, NetworkError};
use crate::tensor::{resize_bilinear, Tensor};

/// Reported for identical chrominance instead of +∞.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("no judgments for method {0}")]
    NoJudgments(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Network(#[from] NetworkError),
}

fn to_8bit(v: f64) -> f64 {
    (v + 128.0).round().clamp(0.0, 255.0)
}

/// PSNR between two chrominance planes pairs after 8-bit encoding
/// (`a + 128`, `b + 128`, rounded and clamped), peak 255. Luminance is ignored.
pub fn psnr_ab(pred: &LabImage, truth: &LabImage) -> Result<f64, EvalError> {
    if pred.width != truth.width || pred.height != truth.height {
        return Err(EvalError::Dimensions(format!(
            "{}x{} vs {}x{}",
            pred.width, pred.height, truth.width, truth.height
        )));
    }
    let n = (pred.a.len() * 2) as f64;
    let sq: f64 = pred
        .a
        .iter()
        .zip(&truth.a)
        .chain(pred.b.iter().zip(&truth.b))
        .map(|(&p, &t)| {
            let d = to_8bit(p) - to_8bit(t);
            d * d
        })
        .sum();
    Ok(psnr_from_mse(sq / n))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// Largest chroma scale in `[0,1]` keeping `(l, s·a, s·b)` inside the sRGB gamut.
fn gamut_scale(l: f64, a: f64, b: f64) -> f64 {
    if in_gamut([l, a, b], 0.0) {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if in_gamut([l, mid * a, mid * b], 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Predicted Lab image at the input's resolution. The input is reduced to
/// its luminance first, so colour and grey twins give identical results.
pub fn colorize_lab(generator: &mut Generator, img: &RgbImage) -> Result<LabImage, EvalError> {
    let side = generator.config().input_side;
    let gray = to_grayscale(img);
    let full = rgb_to_lab(&gray);
    let small = rgb_to_lab(&resize(&gray, side));
    let input = Tensor::new(
        vec![1, 1, side, side],
        small.l.iter().map(|&v| encode_luminance(v)).collect(),
    );
    let out = generator.infer(&input)?;
    let (w, h) = (img.width(), img.height());
    let ab = resize_bilinear(&out.ab, h, w);
    let plane = w * h;
    let decode = |v: f64| decode_chroma(v).clamp(AB_MIN, AB_MAX);
    let a = ab.data()[..plane].iter().map(|&v| decode(v)).collect();
    let b = ab.data()[plane..2 * plane].iter().map(|&v| decode(v)).collect();
    Ok(LabImage {
        width: w,
        height: h,
        l: full.l,
        a,
        b,
    })
}

/// Colorizes an image. Out-of-gamut predictions are desaturated at fixed
/// luminance so the input's lightness survives the trip to 8-bit RGB.
pub fn colorize(generator: &mut Generator, img: &RgbImage) -> Result<RgbImage, EvalError> {
    let mut lab = colorize_lab(generator, img)?;
    for i in 0..lab.l.len() {
        let s = gamut_scale(lab.l[i], lab.a[i], lab.b[i]);
        lab.a[i] *= s;
        lab.b[i] *= s;
    }
    Ok(lab_to_rgb(&lab))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub source_id: String,
    pub psnr: f64,
    pub baseline_psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_image: Vec<ImageScore>,
    pub mean_psnr: f64,
    /// Mean PSNR of the `a = b = 0` predictor.
    pub baseline_mean_psnr: f64,
    pub image_count: usize,
    /// `(source, reason)` for images that could not be scored.
    pub failures: Vec<(String, String)>,
}

impl EvalReport {
    pub fn from_scores(per_image: Vec<ImageScore>, failures: Vec<(String, String)>) -> Self {
        let n = per_image.len();
        let mean = |f: fn(&ImageScore) -> f64| {
            if n == 0 {
                f64::NAN
            } else {
                per_image.iter().map(f).sum::<f64>() / n as f64
            }
        };
        EvalReport {
            mean_psnr: mean(|s| s.psnr),
            baseline_mean_psnr: mean(|s| s.baseline_psnr),
            image_count: n,
            per_image,
            failures,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("images          {}\n", self.image_count));
        s.push_str(&format!("failures        {}\n", self.failures.len()));
        s.push_str(&format!("mean psnr (ab)  {:.4} dB\n", self.mean_psnr));
        s.push_str(&format!("baseline psnr   {:.4} dB\n", self.baseline_mean_psnr));
        for i in &self.per_image {
            s.push_str(&format!("{:.4}\t{:.4}\t{}\n", i.psnr, i.baseline_psnr, i.source_id));
        }
        for (src, why) in &self.failures {
            s.push_str(&format!("failed\t{src}\t{why}\n"));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Scores one image against its own chrominance.
pub fn score_image(generator: &mut Generator, img: &RgbImage, source_id: &str) -> Result<ImageScore, EvalError> {
    let truth = rgb_to_lab(img);
    let pred = colorize_lab(generator, img)?;
    let baseline = truth.neutral();
    Ok(ImageScore {
        source_id: source_id.to_string(),
        psnr: psnr_ab(&pred, &truth)?,
        baseline_psnr: psnr_ab(&baseline, &truth)?,
    })
}

/// Colorizes every image at its own resolution. Unreadable images are
/// listed in `failures` and excluded from the means.
pub fn evaluate_model(generator: &mut Generator, images: &[PathBuf]) -> Result<EvalReport, EvalError> {
    if images.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let mut scores = Vec::new();
    let mut failures = Vec::new();
    for path in images {
        let id = path.display().to_string();
        let scored = RgbImage::load(path)
            .map_err(|e| e.to_string())
            .and_then(|img| score_image(generator, &img, &id).map_err(|e| e.to_string()));
        match scored {
            Ok(s) => scores.push(s),
            Err(why) => failures.push((id, why)),
        }
    }
    Ok(EvalReport::from_scores(scores, failures))
}

/// Same as [`evaluate_model`] for images already in memory.
pub fn evaluate_images(generator: &mut Generator, images: &[(String, RgbImage)]) -> Result<EvalReport, EvalError> {
    if images.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let mut scores = Vec::new();
    let mut failures = Vec::new();
    for (id, img) in images {
        match score_image(generator, img, id) {
            Ok(s) => scores.push(s),
            Err(e) => failures.push((id.clone(), e.to_string())),
        }
    }
    Ok(EvalReport::from_scores(scores, failures))
}

/// One participant verdict.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub image_id: String,
    pub method_id: String,
    pub realistic: bool,
    pub participant_id: String,
}

/// Percentage of a method's judgments marked realistic.
pub fn naturalness(judgments: &[Judgment], method_id: &str) -> Result<f64, EvalError> {
    let (yes, total) = judgments
        .iter()
        .filter(|j| j.method_id == method_id)
        .fold((0usize, 0usize), |(y, t), j| (y + j.realistic as usize, t + 1));
    if total == 0 {
        return Err(EvalError::NoJudgments(method_id.to_string()));
    }
    Ok(100.0 * yes as f64 / total as f64)
}

/// `(realistic, total, percentage)` per method, sorted by method id.
pub fn naturalness_table(judgments: &[Judgment]) -> BTreeMap<String, (usize, usize, f64)> {
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for j in judgments {
        let e = counts.entry(j.method_id.clone()).or_default();
        e.0 += j.realistic as usize;
        e.1 += 1;
    }
    counts
        .into_iter()
        .map(|(m, (y, t))| (m, (y, t, 100.0 * y as f64 / t as f64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::GeneratorConfig;
    use proptest::prelude::*;

    fn lab(w: usize, h: usize, f: impl Fn(usize) -> (f64, f64)) -> LabImage {
        let n = w * h;
        let (a, b): (Vec<f64>, Vec<f64>) = (0..n).map(f).unzip();
        LabImage {
            width: w,
            height: h,
            l: vec![50.0; n],
            a,
            b,
        }
    }

    #[test]
    fn identical_is_capped() {
        let x = lab(4, 4, |i| (i as f64, -(i as f64)));
        assert_eq!(psnr_ab(&x, &x).unwrap(), PSNR_CAP);
    }

    #[test]
    fn constant_offset_closed_form() {
        let t = lab(8, 8, |i| ((i % 7) as f64, -3.0));
        let p = lab(8, 8, |i| ((i % 7) as f64 + 16.0, 13.0));
        let expect = 10.0 * (255.0f64.powi(2) / 256.0).log10();
        assert!((psnr_ab(&p, &t).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(psnr_ab(&lab(2, 2, |_| (0.0, 0.0)), &lab(2, 3, |_| (0.0, 0.0))).is_err());
    }

    #[test]
    fn ignores_luminance() {
        let t = lab(4, 4, |i| (i as f64, 2.0));
        let mut p = lab(4, 4, |i| (i as f64 + 3.0, 0.0));
        let before = psnr_ab(&p, &t).unwrap();
        p.l.iter_mut().for_each(|v| *v = 90.0);
        assert_eq!(psnr_ab(&p, &t).unwrap(), before);
    }

    #[test]
    fn naturalness_ratios() {
        let j = |m: &str, r| Judgment {
            image_id: "i".into(),
            method_id: m.into(),
            realistic: r,
            participant_id: "p".into(),
        };
        let set: Vec<_> = (0..10).map(|i| j("a", i < 7)).chain([j("b", true)]).collect();
        assert_eq!(naturalness(&set, "a").unwrap(), 70.0);
        assert_eq!(naturalness(&set, "b").unwrap(), 100.0);
        assert!(matches!(naturalness(&set, "c"), Err(EvalError::NoJudgments(_))));
        assert_eq!(naturalness_table(&set)["a"], (7, 10, 70.0));
    }

    #[test]
    fn colorize_keeps_resolution_and_luminance() {
        let mut g = Generator::new(GeneratorConfig::desk(16, 4), 3).unwrap();
        let img = RgbImage::from_fn(21, 13, |x, y| [(x * 12) as u8, (y * 19) as u8, 90]);
        let out = colorize(&mut g, &img).unwrap();
        assert_eq!((out.width(), out.height()), (21, 13));
        let a = to_grayscale(&img);
        let b = to_grayscale(&out);
        let worst = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as i32 - y as i32).abs()).max().unwrap();
        assert!(worst <= 1, "{worst}");
        assert_eq!(colorize(&mut g, &a).unwrap(), out);
    }

    proptest! {
        #[test]
        fn psnr_is_symmetric(seed in 0u64..1000) {
            let t = lab(5, 5, |i| (((i as u64 * 31 + seed) % 97) as f64 - 48.0, 1.0));
            let p = lab(5, 5, |i| (((i as u64 * 17 + seed) % 89) as f64 - 40.0, -1.0));
            prop_assert_eq!(psnr_ab(&p, &t).unwrap(), psnr_ab(&t, &p).unwrap());
        }
    }
}
