//! Self-supervised training pairs: a colour image becomes an encoded
//! luminance input and its encoded chrominance target.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use walkdir::WalkDir;

use crate::colorspace::{encode_chroma, encode_luminance, rgb_to_lab, ColorError, RgbImage};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot ingest {path}: {source}")]
    Ingest {
        path: String,
        #[source]
        source: ColorError,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}:{line}: {reason}")]
    Manifest {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One training pair. `input_l` is `[1,S,S]`, `target_ab` is `[2,S,S]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input_l: Tensor,
    pub target_ab: Tensor,
    pub source_id: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub samples: Vec<Sample>,
}

impl Batch {
    pub fn new(samples: Vec<Sample>) -> Result<Self, DataError> {
        let first = samples
            .first()
            .ok_or_else(|| DataError::Config("empty batch".into()))?;
        let shape = first.input_l.shape().to_vec();
        if let Some(bad) = samples.iter().find(|s| s.input_l.shape() != shape.as_slice()) {
            return Err(DataError::Config(format!(
                "{} has shape {:?}, batch uses {:?}",
                bad.source_id,
                bad.input_l.shape(),
                shape
            )));
        }
        Ok(Batch { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `[N,1,S,S]`.
    pub fn luminance(&self) -> Tensor {
        stack(self.samples.iter().map(|s| &s.input_l))
    }

    /// `[N,2,S,S]`.
    pub fn target_ab(&self) -> Tensor {
        stack(self.samples.iter().map(|s| &s.target_ab))
    }

    pub fn source_ids(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.source_id.as_str()).collect()
    }
}

fn stack<'a>(parts: impl ExactSizeIterator<Item = &'a Tensor>) -> Tensor {
    let n = parts.len();
    let mut shape = Vec::new();
    let mut data = Vec::new();
    for t in parts {
        shape = t.shape().to_vec();
        data.extend_from_slice(t.data());
    }
    shape.insert(0, n);
    Tensor::new(shape, data)
}

/// Bilinear resize to exactly `side × side`, then Lab split and encoding.
pub fn sample_from_image(img: &RgbImage, side: usize, source_id: impl Into<String>) -> Sample {
    let resized = resize(img, side);
    let lab = rgb_to_lab(&resized);
    let plane = side * side;
    let input_l = Tensor::new(vec![1, side, side], lab.l.iter().map(|&v| encode_luminance(v)).collect());
    let mut ab = Vec::with_capacity(2 * plane);
    ab.extend(lab.a.iter().map(|&v| encode_chroma(v)));
    ab.extend(lab.b.iter().map(|&v| encode_chroma(v)));
    Sample {
        input_l,
        target_ab: Tensor::new(vec![2, side, side], ab),
        source_id: source_id.into(),
    }
}

pub fn resize(img: &RgbImage, side: usize) -> RgbImage {
    if img.width() == side && img.height() == side {
        return img.clone();
    }
    let out = imageops::resize(&img.to_image(), side as u32, side as u32, FilterType::Triangle);
    RgbImage::from_image(out)
}

pub fn prepare_sample(path: &Path, side: usize) -> Result<Sample, DataError> {
    let img = RgbImage::load(path).map_err(|source| DataError::Ingest {
        path: path.display().to_string(),
        source,
    })?;
    Ok(sample_from_image(&img, side, path.display().to_string()))
}

/// Random-access collection of training samples.
pub trait SampleSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn sample(&self, index: usize) -> Result<Sample, DataError>;
}

/// Image files on disk, decoded on demand.
#[derive(Clone, Debug)]
pub struct ImageCorpus {
    paths: Vec<PathBuf>,
    side: usize,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

impl ImageCorpus {
    pub fn from_paths(paths: Vec<PathBuf>, side: usize) -> Result<Self, DataError> {
        if paths.is_empty() {
            return Err(DataError::Config("empty corpus".into()));
        }
        Ok(ImageCorpus { paths, side })
    }

    /// Every PNG/JPEG under `dir`, sorted by path.
    pub fn from_dir(dir: &Path, side: usize) -> Result<Self, DataError> {
        let mut paths = Vec::new();
        for entry in WalkDir::new(dir).follow_links(true) {
            let entry = entry.map_err(|e| DataError::Io {
                path: dir.display().to_string(),
                source: e.into(),
            })?;
            if entry.file_type().is_file() && is_image(entry.path()) {
                paths.push(entry.into_path());
            }
        }
        paths.sort();
        if paths.is_empty() {
            return Err(DataError::Config(format!("no images under {}", dir.display())));
        }
        Self::from_paths(paths, side)
    }

    /// One path per line; blank lines and `#` comments ignored; relative
    /// paths resolve against the manifest's directory.
    pub fn from_manifest(manifest: &Path, side: usize) -> Result<Self, DataError> {
        let text = fs::read_to_string(manifest).map_err(|source| DataError::Io {
            path: manifest.display().to_string(),
            source,
        })?;
        let base = manifest.parent().unwrap_or(Path::new("."));
        let mut paths = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let p = base.join(line);
            if !p.is_file() {
                return Err(DataError::Manifest {
                    path: manifest.display().to_string(),
                    line: i + 1,
                    reason: format!("{} is not a file", p.display()),
                });
            }
            paths.push(p);
        }
        if paths.is_empty() {
            return Err(DataError::Config(format!("manifest {} lists no images", manifest.display())));
        }
        Self::from_paths(paths, side)
    }

    /// A directory is walked; a file is read as a manifest.
    pub fn open(path: &Path, side: usize) -> Result<Self, DataError> {
        if path.is_dir() {
            Self::from_dir(path, side)
        } else {
            Self::from_manifest(path, side)
        }
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }

    pub fn side(&self) -> usize {
        self.side
    }
}

impl SampleSource for ImageCorpus {
    fn len(&self) -> usize {
        self.paths.len()
    }

    fn sample(&self, index: usize) -> Result<Sample, DataError> {
        prepare_sample(&self.paths[index], self.side)
    }
}

/// Samples already decoded into memory.
#[derive(Clone, Debug, Default)]
pub struct MemoryCorpus {
    pub samples: Vec<Sample>,
}

impl MemoryCorpus {
    /// Decodes every image of `source` once.
    pub fn load(source: &dyn SampleSource) -> Result<Self, DataError> {
        let samples = (0..source.len()).map(|i| source.sample(i)).collect::<Result<_, _>>()?;
        Ok(MemoryCorpus { samples })
    }
}

impl SampleSource for MemoryCorpus {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn sample(&self, index: usize) -> Result<Sample, DataError> {
        Ok(self.samples[index].clone())
    }
}

/// Sample order for one epoch: corpus order without a seed, otherwise a
/// permutation depending only on `(seed, epoch)`.
pub fn epoch_order(n: usize, shuffle_seed: Option<u64>, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(seed) = shuffle_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
    }
    order
}

pub fn batches_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

pub struct BatchIter<'a> {
    source: &'a dyn SampleSource,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = Result<Batch, DataError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        Some(
            idx.iter()
                .map(|&i| self.source.sample(i))
                .collect::<Result<Vec<_>, _>>()
                .and_then(Batch::new),
        )
    }
}

impl BatchIter<'_> {
    /// Skips the first `n` batches of the epoch.
    pub fn skip_batches(mut self, n: usize) -> Self {
        self.pos = (n * self.batch_size).min(self.order.len());
        self
    }
}

/// Batches for one epoch. Every sample appears exactly once; the final
/// batch may be partial.
pub fn batch_iterator<'a>(
    source: &'a dyn SampleSource,
    batch_size: usize,
    shuffle_seed: Option<u64>,
    epoch: u64,
) -> Result<BatchIter<'a>, DataError> {
    if source.is_empty() {
        return Err(DataError::Config("empty corpus".into()));
    }
    if batch_size == 0 {
        return Err(DataError::Config("batch_size must be at least 1".into()));
    }
    Ok(BatchIter {
        source,
        order: epoch_order(source.len(), shuffle_seed, epoch),
        batch_size,
        pos: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(n: usize, side: usize) -> MemoryCorpus {
        MemoryCorpus {
            samples: (0..n)
                .map(|i| {
                    let img = RgbImage::from_fn(side, side, |x, y| [(x * 9 + i) as u8, (y * 7) as u8, (i * 3) as u8]);
                    sample_from_image(&img, side, format!("img{i:03}"))
                })
                .collect(),
        }
    }

    #[test]
    fn partition_sizes() {
        let c = synthetic(25, 4);
        let sizes: Vec<usize> = batch_iterator(&c, 10, Some(1), 0)
            .unwrap()
            .map(|b| b.unwrap().len())
            .collect();
        assert_eq!(sizes, [10, 10, 5]);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let c = MemoryCorpus::default();
        assert!(matches!(batch_iterator(&c, 4, None, 0), Err(DataError::Config(_))));
    }

    #[test]
    fn seeds_change_order_and_epochs_differ() {
        assert_eq!(epoch_order(100, Some(1), 0), epoch_order(100, Some(1), 0));
        assert_ne!(epoch_order(100, Some(1), 0), epoch_order(100, Some(2), 0));
        assert_ne!(epoch_order(100, Some(1), 0), epoch_order(100, Some(1), 1));
        assert_eq!(epoch_order(5, None, 3), [0, 1, 2, 3, 4]);
    }

    #[test]
    fn gray_source_has_near_zero_target() {
        let img = RgbImage::from_fn(12, 9, |x, y| {
            let v = (x * 20 + y) as u8;
            [v, v, v]
        });
        let s = sample_from_image(&img, 8, "g");
        let offset = encode_chroma(0.0);
        let worst = s.target_ab.data().iter().map(|v| (v - offset).abs()).fold(0.0, f64::max);
        assert!(worst <= 0.01, "{worst}");
    }

    #[test]
    fn batch_tensors_keep_sources_aligned() {
        let c = synthetic(3, 4);
        let b = batch_iterator(&c, 3, None, 0).unwrap().next().unwrap().unwrap();
        assert_eq!(b.luminance().shape(), [3, 1, 4, 4]);
        assert_eq!(b.target_ab().shape(), [3, 2, 4, 4]);
        assert_eq!(b.target_ab().sample(2).data(), c.samples[2].target_ab.data());
        assert_eq!(b.source_ids(), ["img000", "img001", "img002"]);
    }
}
