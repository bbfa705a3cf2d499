use chroma_core::colorspace::{decode_chroma, encode_chroma, lab_to_srgb, srgb_to_lab, triplicate_luminance};
use chroma_core::networks::{Teacher, TeacherConfig};
use chroma_core::tensor::Tensor;

const GOLDEN: &str = include_str!("golden/teacher_m10.json");

fn ramp(side: usize) -> Tensor {
    let data = (0..side * side).map(|i| ((i % side) + 2 * (i / side)) as f64 / (3 * side) as f64).collect();
    Tensor::new(vec![1, 1, side, side], data)
}

#[test]
fn teacher_matches_golden_vector() {
    let teacher = Teacher::new(TeacherConfig::desk(10)).unwrap();
    let probs = teacher.forward(&ramp(64)).unwrap();
    let golden: Vec<f64> = serde_json::from_str(GOLDEN).unwrap();
    assert_eq!(golden.len(), 10);
    assert_eq!(probs.shape(), [1, 10]);
    assert!((probs.sum() - 1.0).abs() < 1e-12);
    for (got, want) in probs.data().iter().zip(&golden) {
        assert!((got - want).abs() < 1e-12, "{:?} vs {golden:?}", probs.data());
    }
}

#[test]
fn ramp_is_triplicated() {
    let r = ramp(8);
    let t = triplicate_luminance(&r);
    assert_eq!(t.shape(), [1, 3, 8, 8]);
    for c in 0..3 {
        assert_eq!(&t.data()[c * 64..(c + 1) * 64], r.data());
    }
    assert!(Teacher::new(TeacherConfig::desk(10)).unwrap().forward(&r).is_ok());
}

#[test]
fn pure_red_matches_reference_colorimetry() {
    let [l, a, b] = srgb_to_lab([255, 0, 0]);
    for (got, want) in [(l, 53.2408), (a, 80.0925), (b, 67.2032)] {
        assert!((got - want).abs() < 1e-2, "{l} {a} {b}");
    }
}

#[test]
fn chroma_encoding_is_affine() {
    assert!((encode_chroma(0.0) - (128.0 * 2.0 / 255.0 - 1.0)).abs() < 1e-15);
    assert_eq!(encode_chroma(-128.0), -1.0);
    assert_eq!(encode_chroma(127.0), 1.0);
    assert!((decode_chroma(encode_chroma(33.5)) - 33.5).abs() < 1e-12);
    assert_eq!(lab_to_srgb([50.0, 200.0, 0.0]).len(), 3);
}
