use chroma_core::colorspace::{lab_to_srgb, RgbImage};
use demo::ops::{ab_slice, from_rgba, gamut_coverage, grid_value, noise_trial, planes, to_rgba, PLANE_L};

fn swatch() -> RgbImage {
    RgbImage::from_fn(32, 24, |x, y| [(90 + x * 3) as u8, (120 + y) as u8, (140 - x) as u8])
}

#[test]
fn rgba_round_trip_and_size_check() {
    let img = swatch();
    let rgba = to_rgba(&img);
    assert_eq!(rgba.len(), 32 * 24 * 4);
    assert_eq!(from_rgba(&rgba, 32, 24).unwrap(), img);
    assert!(from_rgba(&rgba, 31, 24).is_err());
    assert!(from_rgba(&[], 0, 0).is_err());
}

#[test]
fn planes_of_a_grey_image_are_neutral() {
    let grey = RgbImage::from_fn(5, 3, |_, _| [100, 100, 100]);
    let out = planes(&grey);
    assert_eq!(out.len(), 5 * 3 * 3 * 4);
    let neutral = lab_to_srgb([PLANE_L, 0.0, 0.0]);
    for y in 0..3 {
        assert_eq!(&out[(y * 15) * 4..(y * 15) * 4 + 3], &[100, 100, 100]);
        for x in 5..15 {
            let o = (y * 15 + x) * 4;
            assert_eq!(&out[o..o + 3], &neutral);
        }
    }
}

#[test]
fn gamut_slice_geometry() {
    let size = 65;
    assert_eq!(grid_value(0, size), -128.0);
    assert_eq!(grid_value(size - 1, size), 127.0);
    let slice = ab_slice(50.0, size);
    let alpha = |x: usize, y: usize| slice[(y * size + x) * 4 + 3];
    // Cell 32 is a = b = -0.5, next to the neutral axis.
    assert_eq!(alpha(32, 32), 255);
    assert_eq!(alpha(size - 1, 0), 0);
    assert_eq!(alpha(0, size - 1), 0);
    let mid = gamut_coverage(50.0, size);
    assert!(mid > 0.1 && mid < 0.9, "{mid}");
    assert!(gamut_coverage(2.0, size) < mid);
    assert!(gamut_coverage(99.0, size) < mid);
}

#[test]
fn noise_psnr_tracks_sigma() {
    let img = swatch();
    let clean = noise_trial(&img, 0.0, 1).unwrap();
    assert_eq!(clean.psnr, 99.0);
    assert_eq!(clean.image, img);
    for sigma in [4.0, 10.0, 20.0] {
        let t = noise_trial(&img, sigma, 7).unwrap();
        let expected = 20.0 * (255.0 / sigma as f64).log10();
        assert!((t.psnr - expected).abs() < 0.4, "sigma {sigma}: {} vs {expected}", t.psnr);
        assert_eq!(t.baseline_psnr, clean.baseline_psnr);
    }
    let a = noise_trial(&img, 10.0, 3).unwrap();
    let b = noise_trial(&img, 10.0, 3).unwrap();
    assert_eq!((a.psnr, a.image), (b.psnr, b.image));
}
