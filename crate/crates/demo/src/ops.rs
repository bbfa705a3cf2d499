//! Target-independent implementations behind the browser bindings.

use chroma_core::colorspace::{in_gamut, lab_to_rgb, lab_to_srgb, rgb_to_lab, RgbImage, AB_MAX, AB_MIN};
use chroma_core::eval::psnr_ab;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Luminance used to render the a and b planes.
pub const PLANE_L: f64 = 65.0;

pub fn from_rgba(rgba: &[u8], width: usize, height: usize) -> Result<RgbImage, String> {
    if width == 0 || height == 0 || rgba.len() != width * height * 4 {
        return Err(format!("expected {width}x{height} RGBA ({} bytes), got {}", width * height * 4, rgba.len()));
    }
    let rgb = rgba.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
    RgbImage::new(width, height, rgb).map_err(|e| e.to_string())
}

pub fn to_rgba(img: &RgbImage) -> Vec<u8> {
    img.data().chunks_exact(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect()
}

/// L as grey, then a alone and b alone at [`PLANE_L`], in one row.
pub fn planes(img: &RgbImage) -> Vec<u8> {
    let (w, h) = (img.width(), img.height());
    let lab = rgb_to_lab(img);
    let mut out = vec![0u8; w * h * 12];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let cells = [
                lab_to_srgb([lab.l[i], 0.0, 0.0]),
                lab_to_srgb([PLANE_L, lab.a[i], 0.0]),
                lab_to_srgb([PLANE_L, 0.0, lab.b[i]]),
            ];
            for (k, c) in cells.iter().enumerate() {
                let o = (y * 3 * w + k * w + x) * 4;
                out[o..o + 4].copy_from_slice(&[c[0], c[1], c[2], 255]);
            }
        }
    }
    out
}

/// Chroma coordinate of grid cell `i` out of `size`.
pub fn grid_value(i: usize, size: usize) -> f64 {
    if size < 2 {
        return 0.0;
    }
    AB_MIN + (AB_MAX - AB_MIN) * i as f64 / (size - 1) as f64
}

pub fn ab_slice(l: f64, size: usize) -> Vec<u8> {
    let mut out = vec![0u8; size * size * 4];
    for y in 0..size {
        let b = grid_value(size - 1 - y, size);
        for x in 0..size {
            let lab = [l, grid_value(x, size), b];
            if in_gamut(lab, 0.0) {
                let c = lab_to_srgb(lab);
                let o = (y * size + x) * 4;
                out[o..o + 4].copy_from_slice(&[c[0], c[1], c[2], 255]);
            }
        }
    }
    out
}

pub fn gamut_coverage(l: f64, size: usize) -> f64 {
    if size == 0 {
        return 0.0;
    }
    let inside = (0..size * size)
        .filter(|i| in_gamut([l, grid_value(i % size, size), grid_value(i / size, size)], 0.0))
        .count();
    inside as f64 / (size * size) as f64
}

pub struct Trial {
    pub psnr: f64,
    pub baseline_psnr: f64,
    pub image: RgbImage,
}

pub fn noise_trial(img: &RgbImage, sigma: f64, seed: u64) -> Result<Trial, String> {
    let truth = rgb_to_lab(img);
    let normal = Normal::new(0.0, sigma.max(0.0)).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = truth.clone();
    for v in noisy.a.iter_mut().chain(noisy.b.iter_mut()) {
        *v = (*v + normal.sample(&mut rng)).clamp(AB_MIN, AB_MAX);
    }
    let psnr = psnr_ab(&noisy, &truth).map_err(|e| e.to_string())?;
    let baseline_psnr = psnr_ab(&truth.neutral(), &truth).map_err(|e| e.to_string())?;
    Ok(Trial {
        psnr,
        baseline_psnr,
        image: lab_to_rgb(&noisy),
    })
}
