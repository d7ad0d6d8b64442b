//! Synthetic generators and a CIFAR-10 binary reader.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::MixtureSpec;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const CIFAR_RECORD: usize = 3073;
pub const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";
/// Fraction of synthetic samples held out.
pub const HELDOUT_FRACTION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Ring { k: usize, radius: f64, sigma: f64, n: usize, seed: u64 },
    Sprites { side: usize, n: usize, seed: u64 },
    Cifar10 { path: PathBuf, subsample_n: usize, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub sample_shape: Vec<usize>,
    data: Vec<f64>,
    pub labels: Option<Vec<u8>>,
    pub train: Vec<usize>,
    pub heldout: Vec<usize>,
    pub provenance: Provenance,
    pub mixture: Option<MixtureSpec>,
}

impl Dataset {
    fn new(sample_shape: Vec<usize>, data: Vec<f64>, labels: Option<Vec<u8>>, train: Vec<usize>, heldout: Vec<usize>, provenance: Provenance) -> Self {
        Dataset {
            sample_shape,
            data,
            labels,
            train,
            heldout,
            provenance,
            mixture: None,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.sample_dim()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample_dim(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn is_image(&self) -> bool {
        self.sample_shape.len() == 3
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let d = self.sample_dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let mut v = Vec::with_capacity(indices.len() * self.sample_dim());
        for &i in indices {
            v.extend_from_slice(self.sample(i));
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.sample_shape);
        Tensor::new(shape, v).expect("gathered shape matches data")
    }

    /// Uniform draw with replacement from the train split.
    pub fn train_batch(&self, m: usize, rng: &mut Rng) -> Tensor {
        let idx: Vec<usize> = (0..m).map(|_| self.train[rng.below(self.train.len() as u64) as usize]).collect();
        self.gather(&idx)
    }

    pub fn heldout_batch(&self, m: usize, rng: &mut Rng) -> Result<Tensor> {
        if self.heldout.is_empty() {
            return Err(Error::Dataset("no heldout split".into()));
        }
        let idx: Vec<usize> = (0..m).map(|_| self.heldout[rng.below(self.heldout.len() as u64) as usize]).collect();
        Ok(self.gather(&idx))
    }

    /// Standard deviation over every value of every sample.
    pub fn value_std(&self) -> f64 {
        let n = self.data.len() as f64;
        let mean = self.data.iter().sum::<f64>() / n;
        (self.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
    }

    /// Seed of the evaluation reference stream for synthetic data.
    pub fn reference_seed(&self) -> u64 {
        match &self.provenance {
            Provenance::Ring { seed, .. } | Provenance::Sprites { seed, .. } | Provenance::Cifar10 { seed, .. } => *seed,
        }
    }

    /// Evaluation reference set: a fresh draw from the generating process for
    /// synthetic data (stream "reference"), the heldout split for CIFAR-10.
    pub fn reference_set(&self, n: usize) -> Result<Tensor> {
        let mut rng = Rng::new(self.reference_seed(), "reference");
        match &self.provenance {
            Provenance::Ring { .. } => {
                let mix = self.mixture.as_ref().expect("ring datasets carry their mixture");
                let (v, _) = mix.sample(n, &mut rng);
                Tensor::new(vec![n, 2], v)
            }
            Provenance::Sprites { side, .. } => {
                let mut v = Vec::with_capacity(n * side * side);
                for _ in 0..n {
                    v.extend(draw_sprite(*side, &mut rng));
                }
                Tensor::new(vec![n, 1, *side, *side], v)
            }
            Provenance::Cifar10 { .. } => {
                let take = n.min(self.heldout.len());
                Ok(self.gather(&self.heldout[..take]))
            }
        }
    }

    fn check_splits(&self) {
        debug_assert!(self.train.iter().all(|i| !self.heldout.contains(i)));
    }
}

fn split(n: usize) -> (Vec<usize>, Vec<usize>) {
    let h = ((n as f64) * HELDOUT_FRACTION).round() as usize;
    ((0..n - h).collect(), (n - h..n).collect())
}

pub fn gen_ring(k: usize, radius: f64, sigma: f64, n: usize, seed: u64) -> Result<(Dataset, MixtureSpec)> {
    if k < 2 {
        return Err(Error::invalid("modes", "need at least 2 modes"));
    }
    if n < 10 * k {
        return Err(Error::invalid("n", format!("need at least {} samples for {k} modes", 10 * k)));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid("radius", "must be positive"));
    }
    let mix = MixtureSpec::ring(k, radius, sigma)?;
    let (data, _) = mix.sample(n, &mut Rng::new(seed, "ring"));
    let (train, heldout) = split(n);
    let mut ds = Dataset::new(vec![2], data, None, train, heldout, Provenance::Ring { k, radius, sigma, n, seed });
    ds.mixture = Some(mix.clone());
    ds.check_splits();
    Ok((ds, mix))
}

/// Gray levels of sprite shapes over a background of −1.
pub const SPRITE_LEVELS: [f64; 2] = [0.0, 1.0];

fn draw_sprite(side: usize, rng: &mut Rng) -> Vec<f64> {
    let mut img = vec![-1.0; side * side];
    let shapes = 1 + rng.below(2) as usize;
    for _ in 0..shapes {
        let level = SPRITE_LEVELS[rng.below(2) as usize];
        if rng.bernoulli(0.5) {
            let w = 2 + rng.below((side / 2 - 1) as u64) as usize;
            let h = 2 + rng.below((side / 2 - 1) as u64) as usize;
            let x0 = rng.below((side - w + 1) as u64) as usize;
            let y0 = rng.below((side - h + 1) as u64) as usize;
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    img[y * side + x] = level;
                }
            }
        } else {
            let r = 1.5 + rng.uniform() * (side as f64 / 4.0 - 1.5);
            let cx = r + rng.uniform() * (side as f64 - 2.0 * r);
            let cy = r + rng.uniform() * (side as f64 - 2.0 * r);
            for y in 0..side {
                for x in 0..side {
                    let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                    if dx * dx + dy * dy <= r * r {
                        img[y * side + x] = level;
                    }
                }
            }
        }
    }
    img
}

/// One-channel images of rectangles and discs on a dark background.
pub fn gen_sprites(side: usize, n: usize, seed: u64) -> Result<Dataset> {
    if side != 8 && side != 16 {
        return Err(Error::invalid("side", format!("must be 8 or 16, got {side}")));
    }
    if n < 256 {
        return Err(Error::invalid("n", "need at least 256 sprites"));
    }
    let mut rng = Rng::new(seed, "sprites");
    let mut data = Vec::with_capacity(n * side * side);
    for _ in 0..n {
        data.extend(draw_sprite(side, &mut rng));
    }
    let (train, heldout) = split(n);
    Ok(Dataset::new(vec![1, side, side], data, None, train, heldout, Provenance::Sprites { side, n, seed }))
}

fn read_records(path: &Path) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path)?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Dataset(format!(
            "{}: size {} is not a multiple of {CIFAR_RECORD}",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes)
}

fn decode_record(rec: &[u8], labels: &mut Vec<u8>, data: &mut Vec<f64>) -> Result<()> {
    if rec[0] > 9 {
        return Err(Error::Dataset(format!("label byte {} outside 0..=9", rec[0])));
    }
    labels.push(rec[0]);
    data.extend(rec[1..].iter().map(|&v| v as f64 / 127.5 - 1.0));
    Ok(())
}

/// Seeded uniform subsample of `subsample_n` train records, plus an equally
/// sized (at most) heldout draw from the test batch.
pub fn load_cifar10(dir: &Path, subsample_n: usize, seed: u64) -> Result<Dataset> {
    let missing: Vec<&str> = CIFAR_TRAIN_FILES
        .iter()
        .chain(std::iter::once(&CIFAR_TEST_FILE))
        .copied()
        .filter(|f| !dir.join(f).is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Dataset(format!(
            "{} is missing {}; expected {} and {CIFAR_TEST_FILE}",
            dir.display(),
            missing.join(", "),
            CIFAR_TRAIN_FILES.join(", ")
        )));
    }
    if subsample_n == 0 {
        return Err(Error::invalid("subsample", "must be at least 1"));
    }
    let train_bytes: Vec<Vec<u8>> = CIFAR_TRAIN_FILES.iter().map(|f| read_records(&dir.join(f))).collect::<Result<_>>()?;
    let test_bytes = read_records(&dir.join(CIFAR_TEST_FILE))?;
    let mut offsets = Vec::new();
    for (fi, b) in train_bytes.iter().enumerate() {
        offsets.extend((0..b.len() / CIFAR_RECORD).map(|r| (fi, r)));
    }
    let mut rng = Rng::new(seed, "cifar10");
    let take = subsample_n.min(offsets.len());
    let mut picks = rng.permutation(offsets.len());
    picks.truncate(take);
    picks.sort_unstable();

    let mut labels = Vec::new();
    let mut data = Vec::new();
    for p in picks {
        let (fi, r) = offsets[p];
        decode_record(&train_bytes[fi][r * CIFAR_RECORD..(r + 1) * CIFAR_RECORD], &mut labels, &mut data)?;
    }
    let test_n = test_bytes.len() / CIFAR_RECORD;
    let mut held = rng.permutation(test_n);
    held.truncate(take.min(test_n));
    held.sort_unstable();
    for r in &held {
        decode_record(&test_bytes[r * CIFAR_RECORD..(r + 1) * CIFAR_RECORD], &mut labels, &mut data)?;
    }
    let ds = Dataset::new(
        vec![3, 32, 32],
        data,
        Some(labels),
        (0..take).collect(),
        (take..take + held.len()).collect(),
        Provenance::Cifar10 {
            path: dir.to_path_buf(),
            subsample_n,
            seed,
        },
    );
    ds.check_splits();
    Ok(ds)
}
