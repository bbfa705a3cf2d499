use std::collections::BTreeSet;
use std::fs;

use proptest::prelude::*;

use chroma_core::colorspace::{srgb_to_lab, RgbImage};
use chroma_core::data::{batch_iterator, batches_per_epoch, ImageCorpus, SampleSource};
use chroma_core::trainer::{TrainConfig, TrainError, TrainState};

#[test]
fn corpus_samples_are_encoded_lab() {
    let dir = tempfile::tempdir().unwrap();
    RgbImage::from_fn(448, 300, |_, _| [200, 120, 40]).save(&dir.path().join("wide.png")).unwrap();
    RgbImage::from_fn(40, 90, |x, y| [(x * 6) as u8, (y * 2) as u8, 90]).save(&dir.path().join("tall.jpg")).unwrap();
    fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let corpus = ImageCorpus::from_dir(dir.path(), 64).unwrap();
    assert_eq!(corpus.len(), 2);

    let s = corpus.sample(1).unwrap();
    assert!(s.source_id.ends_with("wide.png"));
    assert_eq!(s.input_l.shape(), [1, 64, 64]);
    assert_eq!(s.target_ab.shape(), [2, 64, 64]);
    let [l, a, b] = srgb_to_lab([200, 120, 40]);
    let want = [l / 100.0, (a + 128.0) * 2.0 / 255.0 - 1.0, (b + 128.0) * 2.0 / 255.0 - 1.0];
    assert!(s.input_l.data().iter().all(|v| (v - want[0]).abs() < 1e-9));
    let (pa, pb) = s.target_ab.data().split_at(64 * 64);
    assert!(pa.iter().all(|v| (v - want[1]).abs() < 1e-9));
    assert!(pb.iter().all(|v| (v - want[2]).abs() < 1e-9));

    let t = corpus.sample(0).unwrap();
    assert!(t.input_l.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(t.target_ab.data().iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn manifest_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    RgbImage::from_fn(8, 8, |_, _| [1, 2, 3]).save(&dir.path().join("a.png")).unwrap();
    let manifest = dir.path().join("list.txt");
    fs::write(&manifest, "a.png\nmissing.png\n").unwrap();
    let err = ImageCorpus::from_manifest(&manifest, 8).unwrap_err().to_string();
    assert!(err.contains("list.txt:2:") && err.contains("missing.png"), "{err}");
}

#[test]
fn damaged_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.lab");
    let state = TrainState::new(TrainConfig { side: 16, num_classes: 4, ..TrainConfig::desk() }).unwrap();
    state.save(&path).unwrap();
    let loaded = TrainState::load(&path).unwrap();
    assert_eq!(loaded.generator.params().values(), state.generator.params().values());
    assert_eq!(loaded.config, state.config);

    let mut bytes = fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(TrainState::load(&path), Err(TrainError::Archive(_))));
}

struct Indices(usize);

impl SampleSource for Indices {
    fn len(&self) -> usize {
        self.0
    }

    fn sample(&self, i: usize) -> Result<chroma_core::data::Sample, chroma_core::data::DataError> {
        Ok(chroma_core::data::sample_from_image(&RgbImage::from_fn(8, 8, |_, _| [0, 0, 0]), 8, i.to_string()))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_epoch_covers_the_corpus_once(n in 1usize..40, bs in 1usize..9, seed in any::<u64>(), epoch in 0u64..5) {
        let source = Indices(n);
        let batches: Vec<_> = batch_iterator(&source, bs, Some(seed), epoch).unwrap().map(Result::unwrap).collect();
        prop_assert_eq!(batches.len(), batches_per_epoch(n, bs));
        let ids: Vec<String> = batches.iter().flat_map(|b| b.source_ids().into_iter().map(str::to_string)).collect();
        let unique: BTreeSet<usize> = ids.iter().map(|s| s.parse().unwrap()).collect();
        prop_assert_eq!(ids.len(), n);
        prop_assert_eq!(unique, (0..n).collect::<BTreeSet<_>>());
        let again: Vec<String> = batch_iterator(&source, bs, Some(seed), epoch).unwrap()
            .flat_map(|b| b.unwrap().source_ids().into_iter().map(str::to_string).collect::<Vec<_>>())
            .collect();
        prop_assert_eq!(ids, again);
    }
}
