//! Browser bindings for the Lab colour tools. Images cross the boundary as
//! RGBA bytes in canvas `ImageData` order; alpha is ignored on input.

use wasm_bindgen::prelude::*;

pub mod ops;

fn js(e: String) -> JsError {
    JsError::new(&e)
}

/// L, a and b planes side by side in one RGBA image of width `3 * width`.
#[wasm_bindgen]
pub fn lab_planes(rgba: &[u8], width: u32, height: u32) -> Result<Vec<u8>, JsError> {
    let img = ops::from_rgba(rgba, width as usize, height as usize).map_err(js)?;
    Ok(ops::planes(&img))
}

/// `size x size` RGBA slice of the ab plane at luminance `l`; a grows to the
/// right, b grows upward, out-of-gamut cells are transparent.
#[wasm_bindgen]
pub fn ab_slice(l: f64, size: u32) -> Vec<u8> {
    ops::ab_slice(l, size as usize)
}

/// Fraction of a `size x size` ab grid at luminance `l` that sRGB can show.
#[wasm_bindgen]
pub fn gamut_coverage(l: f64, size: u32) -> f64 {
    ops::gamut_coverage(l, size as usize)
}

#[wasm_bindgen]
pub struct NoiseTrial {
    pub psnr: f64,
    pub baseline_psnr: f64,
    rgba: Vec<u8>,
}

#[wasm_bindgen]
impl NoiseTrial {
    /// The noisy image as RGBA.
    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
}

/// Adds Gaussian noise of standard deviation `sigma` to a and b and scores the
/// result against the clean image, next to the zero-chroma baseline.
#[wasm_bindgen]
pub fn noise_trial(rgba: &[u8], width: u32, height: u32, sigma: f64, seed: u64) -> Result<NoiseTrial, JsError> {
    let img = ops::from_rgba(rgba, width as usize, height as usize).map_err(js)?;
    let t = ops::noise_trial(&img, sigma, seed).map_err(js)?;
    Ok(NoiseTrial {
        psnr: t.psnr,
        baseline_psnr: t.baseline_psnr,
        rgba: ops::to_rgba(&t.image),
    })
}
