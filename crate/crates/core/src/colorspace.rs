//! sRGB ↔ CIE Lab (D65) conversion and the value encodings the networks use.
//!
//! Network encodings:
//! * luminance `L ∈ [0,100]` is fed as `L/100`;
//! * chrominance `a,b ∈ [-128,127]` map affinely onto `[-1,1]`.

use std::path::Path;
use std::sync::OnceLock;

use thiserror::Error;

use crate::tensor::Tensor;

/// CIE constants ε = 216/24389 and κ = 24389/27.
pub const EPSILON: f64 = 216.0 / 24389.0;
pub const KAPPA: f64 = 24389.0 / 27.0;

pub const AB_MIN: f64 = -128.0;
pub const AB_MAX: f64 = 127.0;

/// Linear sRGB → XYZ, D65.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

#[derive(Debug, Error)]
pub enum ColorError {
    #[error("expected 3 channels, got {0}")]
    Channels(usize),
    #[error("buffer of {len} bytes does not hold a {width}x{height}x3 image")]
    BufferSize { width: usize, height: usize, len: usize },
    #[error("plane sizes disagree with {width}x{height}")]
    PlaneSize { width: usize, height: usize },
    #[error("image i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

/// 8-bit interleaved RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ColorError> {
        Self::from_raw(width, height, 3, data)
    }

    /// Validates channel count and buffer size.
    pub fn from_raw(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<u8>,
    ) -> Result<Self, ColorError> {
        if channels != 3 {
            return Err(ColorError::Channels(channels));
        }
        if data.len() != width * height * 3 {
            return Err(ColorError::BufferSize {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        RgbImage {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn load(path: &Path) -> Result<Self, ColorError> {
        let img = image::open(path).map_err(|source| ColorError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::from_image(img.to_rgb8()))
    }

    pub fn save(&self, path: &Path) -> Result<(), ColorError> {
        self.to_image()
            .save(path)
            .map_err(|source| ColorError::Io {
                path: path.display().to_string(),
                source,
            })
    }

    pub fn from_image(img: image::RgbImage) -> Self {
        let (w, h) = img.dimensions();
        RgbImage {
            width: w as usize,
            height: h as usize,
            data: img.into_raw(),
        }
    }

    pub fn to_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer size is an invariant")
    }
}

/// Planar Lab image.
#[derive(Clone, Debug, PartialEq)]
pub struct LabImage {
    pub width: usize,
    pub height: usize,
    pub l: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl LabImage {
    pub fn new(
        width: usize,
        height: usize,
        l: Vec<f64>,
        a: Vec<f64>,
        b: Vec<f64>,
    ) -> Result<Self, ColorError> {
        let n = width * height;
        if l.len() != n || a.len() != n || b.len() != n {
            return Err(ColorError::PlaneSize { width, height });
        }
        Ok(LabImage {
            width,
            height,
            l,
            a,
            b,
        })
    }

    /// Same luminance, zero chrominance.
    pub fn neutral(&self) -> LabImage {
        let n = self.l.len();
        LabImage {
            width: self.width,
            height: self.height,
            l: self.l.clone(),
            a: vec![0.0; n],
            b: vec![0.0; n],
        }
    }

    pub fn clamped(mut self) -> LabImage {
        self.l.iter_mut().for_each(|v| *v = v.clamp(0.0, 100.0));
        for p in [&mut self.a, &mut self.b] {
            p.iter_mut().for_each(|v| *v = v.clamp(AB_MIN, AB_MAX));
        }
        self
    }
}

fn xyz_to_rgb_matrix() -> &'static [[f64; 3]; 3] {
    static INV: OnceLock<[[f64; 3]; 3]> = OnceLock::new();
    INV.get_or_init(|| invert3(&RGB_TO_XYZ))
}

/// Reference white: the XYZ of linear RGB (1,1,1), so the neutral axis maps
/// exactly onto a = b = 0.
fn white() -> [f64; 3] {
    let m = &RGB_TO_XYZ;
    [
        m[0].iter().sum(),
        m[1].iter().sum(),
        m[2].iter().sum(),
    ]
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let det = m[0][0] * c(1, 2, 1, 2) - m[0][1] * c(1, 2, 0, 2) + m[0][2] * c(1, 2, 0, 1);
    [
        [c(1, 2, 1, 2) / det, -c(0, 2, 1, 2) / det, c(0, 1, 1, 2) / det],
        [-c(1, 2, 0, 2) / det, c(0, 2, 0, 2) / det, -c(0, 1, 0, 2) / det],
        [c(1, 2, 0, 1) / det, -c(0, 2, 0, 1) / det, c(0, 1, 0, 1) / det],
    ]
}

fn srgb_decode(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn srgb_encode(c: f64) -> f64 {
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

/// One 8-bit sRGB pixel to `[L, a, b]`.
pub fn srgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = rgb.map(|c| srgb_decode(c as f64 / 255.0));
    let w = white();
    let m = &RGB_TO_XYZ;
    let mut f = [0.0; 3];
    for i in 0..3 {
        let xyz = m[i][0] * lin[0] + m[i][1] * lin[1] + m[i][2] * lin[2];
        f[i] = lab_f(xyz / w[i]);
    }
    [
        116.0 * f[1] - 16.0,
        500.0 * (f[0] - f[1]),
        200.0 * (f[1] - f[2]),
    ]
}

/// `[L, a, b]` to linear-light sRGB, without clamping.
pub fn lab_to_linear_rgb(lab: [f64; 3]) -> [f64; 3] {
    let [l, a, b] = lab;
    let fy = (l + 16.0) / 116.0;
    let fx = fy + a / 500.0;
    let fz = fy - b / 200.0;
    let inv = |f: f64| {
        let f3 = f * f * f;
        if f3 > EPSILON {
            f3
        } else {
            (116.0 * f - 16.0) / KAPPA
        }
    };
    let yr = if l > KAPPA * EPSILON { fy * fy * fy } else { l / KAPPA };
    let w = white();
    let xyz = [inv(fx) * w[0], yr * w[1], inv(fz) * w[2]];
    let m = xyz_to_rgb_matrix();
    let mut rgb = [0.0; 3];
    for i in 0..3 {
        rgb[i] = m[i][0] * xyz[0] + m[i][1] * xyz[1] + m[i][2] * xyz[2];
    }
    rgb
}

/// `[L, a, b]` to 8-bit sRGB; out-of-gamut values clamp per channel.
pub fn lab_to_srgb(lab: [f64; 3]) -> [u8; 3] {
    lab_to_linear_rgb(lab).map(|c| {
        let v = srgb_encode(c.clamp(0.0, 1.0)) * 255.0;
        if v.is_finite() {
            v.round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    })
}

/// True when the Lab colour lies inside the sRGB gamut (up to `tol` in linear light).
pub fn in_gamut(lab: [f64; 3], tol: f64) -> bool {
    lab_to_linear_rgb(lab)
        .iter()
        .all(|&c| c >= -tol && c <= 1.0 + tol)
}

pub fn rgb_to_lab(img: &RgbImage) -> LabImage {
    let n = img.width * img.height;
    let (mut l, mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for px in img.data.chunks_exact(3) {
        let [pl, pa, pb] = srgb_to_lab([px[0], px[1], px[2]]);
        l.push(pl.clamp(0.0, 100.0));
        a.push(pa.clamp(AB_MIN, AB_MAX));
        b.push(pb.clamp(AB_MIN, AB_MAX));
    }
    LabImage {
        width: img.width,
        height: img.height,
        l,
        a,
        b,
    }
}

pub fn lab_to_rgb(img: &LabImage) -> RgbImage {
    let mut data = Vec::with_capacity(img.l.len() * 3);
    for i in 0..img.l.len() {
        data.extend_from_slice(&lab_to_srgb([img.l[i], img.a[i], img.b[i]]));
    }
    RgbImage {
        width: img.width,
        height: img.height,
        data,
    }
}

/// Luminance-only 8-bit rendering of an image (Lab with a = b = 0, back to
/// sRGB). Idempotent: a grey image maps to itself.
pub fn to_grayscale(img: &RgbImage) -> RgbImage {
    lab_to_rgb(&rgb_to_lab(img).neutral())
}

pub fn encode_luminance(l: f64) -> f64 {
    l / 100.0
}

pub fn decode_luminance(t: f64) -> f64 {
    t * 100.0
}

/// `[-128,127] → [-1,1]`.
pub fn encode_chroma(v: f64) -> f64 {
    (v - AB_MIN) * 2.0 / (AB_MAX - AB_MIN) - 1.0
}

/// Inverse of [`encode_chroma`].
pub fn decode_chroma(t: f64) -> f64 {
    (t + 1.0) * (AB_MAX - AB_MIN) / 2.0 + AB_MIN
}

/// Replicates an encoded luminance batch `[N,1,H,W]` (or a bare `[H,W]`
/// plane) into the three-channel `[N,3,H,W]` layout classifiers expect.
pub fn triplicate_luminance(l: &Tensor) -> Tensor {
    let l = match l.shape().len() {
        2 => {
            let s = l.shape();
            l.clone().reshape(&[1, 1, s[0], s[1]])
        }
        4 => {
            assert_eq!(l.shape()[1], 1, "luminance must have one channel");
            l.clone()
        }
        r => panic!("luminance tensor of rank {r}"),
    };
    Tensor::concat_channels(&[&l, &l, &l])
}
