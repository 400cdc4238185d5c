//! Image datasets: a deterministic synthetic benchmark and an IDX file
//! reader for externally supplied data.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

/// Labeled images with intensities in [0, 1].
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub width: usize,
    pub height: usize,
    pub n_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.labels.len() {
            return Err(Error::Simulator(format!(
                "{} images but {} labels",
                self.images.len(),
                self.labels.len()
            )));
        }
        if self.images.is_empty() {
            return Err(Error::Simulator("dataset is empty".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Simulator("need at least two classes".into()));
        }
        let px = self.pixels();
        if px == 0 {
            return Err(Error::Simulator("zero-pixel images".into()));
        }
        for (i, img) in self.images.iter().enumerate() {
            if img.len() != px {
                return Err(Error::Simulator(format!(
                    "image {i} has {} pixels, expected {px}",
                    img.len()
                )));
            }
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(Error::Simulator(format!(
                "label {bad} outside 0..{}",
                self.n_classes
            )));
        }
        Ok(())
    }
}

/// Synthetic band dataset: each class lights up its own horizontal band of
/// rows, so classes are pixel-disjoint and separable by construction. Band
/// pixels draw from U[0.7, 1.0], background from U[0, 0.05].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    /// Images are `side x side`.
    pub side: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Simulator("synthetic data needs at least two classes".into()));
        }
        if self.side < self.classes {
            return Err(Error::Simulator(format!(
                "side {} too small for {} row bands",
                self.side, self.classes
            )));
        }
        if self.train == 0 || self.valid == 0 || self.test == 0 {
            return Err(Error::Simulator("every split needs at least one sample".into()));
        }
        Ok(())
    }

    /// Rows owned by a class: bands partition [0, side) contiguously.
    fn band(&self, class: usize) -> std::ops::Range<usize> {
        let lo = class * self.side / self.classes;
        let hi = (class + 1) * self.side / self.classes;
        lo..hi
    }

    fn sample(&self, class: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let rows = self.band(class);
        let mut img = vec![0.0; self.side * self.side];
        for r in 0..self.side {
            for c in 0..self.side {
                let lit = rows.contains(&r);
                img[r * self.side + c] = if lit {
                    rng.gen_range(0.7..1.0)
                } else {
                    rng.gen_range(0.0..0.05)
                };
            }
        }
        img
    }

    fn split(&self, n: usize, seed: u64) -> Dataset {
        // Round-robin labels give balanced classes; a seeded shuffle breaks
        // the class-ordered presentation stream.
        let mut labels: Vec<usize> = (0..n).map(|i| i % self.classes).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..labels.len()).rev() {
            let j = rng.gen_range(0..=i);
            labels.swap(i, j);
        }
        let images = labels
            .iter()
            .enumerate()
            .map(|(i, &class)| {
                let mut r = ChaCha8Rng::seed_from_u64(seeding::mix(seed, i as u64));
                self.sample(class, &mut r)
            })
            .collect();
        Dataset {
            images,
            labels,
            width: self.side,
            height: self.side,
            n_classes: self.classes,
        }
    }

    /// Builds (train, valid, test) splits. Each split draws from its own
    /// seed stream, so resizing one split leaves the others untouched.
    pub fn generate(&self, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
        self.validate()?;
        let train = self.split(self.train, seeding::mix(seed, 0x7261_494e));
        let valid = self.split(self.valid, seeding::mix(seed, 0x7661_4c49));
        let test = self.split(self.test, seeding::mix(seed, 0x7465_5354));
        Ok((train, valid, test))
    }
}

const IDX_IMAGE_MAGIC: u32 = 2051;
const IDX_LABEL_MAGIC: u32 = 2049;

fn read_u32_be(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    let slice = bytes
        .get(at..at + 4)
        .ok_or_else(|| Error::Simulator(format!("{}: truncated header", path.display())))?;
    Ok(u32::from_be_bytes(slice.try_into().unwrap()))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(buf)
}

/// Loads an IDX image/label file pair (the MNIST container format:
/// big-endian headers, u8 payload). Pixels are scaled to [0, 1]; the class
/// count is the largest label plus one. `limit` truncates to the first N
/// samples.
pub fn load_idx(images: &Path, labels: &Path, limit: Option<usize>) -> Result<Dataset> {
    let img_bytes = read_all(images)?;
    let magic = read_u32_be(&img_bytes, 0, images)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Simulator(format!(
            "{}: image magic {magic}, expected {IDX_IMAGE_MAGIC}",
            images.display()
        )));
    }
    let count = read_u32_be(&img_bytes, 4, images)? as usize;
    let height = read_u32_be(&img_bytes, 8, images)? as usize;
    let width = read_u32_be(&img_bytes, 12, images)? as usize;
    let px = width * height;
    let need = 16 + count * px;
    if img_bytes.len() < need {
        return Err(Error::Simulator(format!(
            "{}: {} bytes, header promises {need}",
            images.display(),
            img_bytes.len()
        )));
    }

    let lbl_bytes = read_all(labels)?;
    let magic = read_u32_be(&lbl_bytes, 0, labels)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Simulator(format!(
            "{}: label magic {magic}, expected {IDX_LABEL_MAGIC}",
            labels.display()
        )));
    }
    let lbl_count = read_u32_be(&lbl_bytes, 4, labels)? as usize;
    if lbl_count != count {
        return Err(Error::Simulator(format!(
            "{count} images but {lbl_count} labels"
        )));
    }
    if lbl_bytes.len() < 8 + count {
        return Err(Error::Simulator(format!(
            "{}: truncated label payload",
            labels.display()
        )));
    }

    let take = limit.map_or(count, |l| l.min(count));
    let images_v: Vec<Vec<f64>> = (0..take)
        .map(|i| {
            img_bytes[16 + i * px..16 + (i + 1) * px]
                .iter()
                .map(|&b| b as f64 / 255.0)
                .collect()
        })
        .collect();
    let labels_v: Vec<usize> = lbl_bytes[8..8 + take].iter().map(|&b| b as usize).collect();
    let n_classes = labels_v.iter().copied().max().unwrap_or(0) + 1;
    let ds = Dataset { images: images_v, labels: labels_v, width, height, n_classes: n_classes.max(2) };
    ds.validate()?;
    Ok(ds)
}

/// Where the simulator gets its data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Generated band images, seeded from the experiment seed.
    Synthetic(SyntheticSpec),
    /// IDX file pairs on disk; `limit` truncates each split.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        valid_images: PathBuf,
        valid_labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
}

impl DatasetSource {
    /// Loads or generates (train, valid) splits.
    pub fn load(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSource::Synthetic(spec) => {
                let (train, valid, _test) = spec.generate(seed)?;
                Ok((train, valid))
            }
            DatasetSource::Idx { train_images, train_labels, valid_images, valid_labels, limit } => {
                let train = load_idx(train_images, train_labels, *limit)?;
                let valid = load_idx(valid_images, valid_labels, *limit)?;
                if train.pixels() != valid.pixels() {
                    return Err(Error::Simulator(format!(
                        "train images have {} pixels, valid {}",
                        train.pixels(),
                        valid.pixels()
                    )));
                }
                Ok((train, valid))
            }
        }
    }
}
