//! Seeded synthetic datasets, worker shards and mini-batch iteration.

use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::LossModel;
use crate::seed;

/// Centers of `GaussianCluster` data are drawn uniformly from `[-3, 3]^d`.
pub const CLUSTER_HALF_WIDTH: f64 = 3.0;
/// Per-coordinate standard deviation around the cluster center.
pub const CLUSTER_SPREAD: f64 = 0.1;
/// Default noise amplitude for `LinearWithNoise`.
pub const DEFAULT_LINEAR_NOISE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    /// Ignored by `QuadraticBowl`.
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DatasetKind {
    GaussianCluster,
    LinearWithNoise {
        noise: f64,
    },
    /// Labels produced by a frozen MLP with this hidden width.
    MlpTeacher {
        hidden: usize,
    },
}

impl DatasetKind {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetKind::GaussianCluster => "gaussian_cluster",
            DatasetKind::LinearWithNoise { .. } => "linear_with_noise",
            DatasetKind::MlpTeacher { .. } => "mlp_teacher",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    dim: usize,
    seed: u64,
    kind: Option<DatasetKind>,
    generator: Option<Vec<f64>>,
}

/// Deterministically generates `n` samples of dimension `dim`.
pub fn generate(kind: DatasetKind, n: usize, dim: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Usage("dataset size n must be >= 1".into()));
    }
    if dim == 0 {
        return Err(Error::Usage("dataset dimension must be >= 1".into()));
    }
    let mut rng = seed::rng(seed);
    let normal = |rng: &mut seed::Rng| -> f64 { StandardNormal.sample(rng) };

    let (samples, generator) = match kind {
        DatasetKind::GaussianCluster => {
            let center: Vec<f64> = (0..dim)
                .map(|_| rng.random_range(-CLUSTER_HALF_WIDTH..=CLUSTER_HALF_WIDTH))
                .collect();
            let samples = (0..n)
                .map(|_| Sample {
                    features: center
                        .iter()
                        .map(|c| c + CLUSTER_SPREAD * normal(&mut rng))
                        .collect(),
                    target: 0.0,
                })
                .collect();
            (samples, Some(center))
        }
        DatasetKind::LinearWithNoise { noise } => {
            if !(noise.is_finite() && noise >= 0.0) {
                return Err(Error::config("dataset.noise", "must be finite and >= 0"));
            }
            let truth: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let samples = (0..n)
                .map(|_| {
                    let features: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
                    let clean: f64 = truth.iter().zip(&features).map(|(a, b)| a * b).sum();
                    let eps = normal(&mut rng);
                    Sample {
                        features,
                        target: clean + noise * eps,
                    }
                })
                .collect();
            (samples, Some(truth))
        }
        DatasetKind::MlpTeacher { hidden } => {
            if hidden == 0 {
                return Err(Error::config("model.hidden_width", "must be at least 1"));
            }
            let teacher = LossModel::tiny_mlp(dim, hidden);
            let weights: Vec<f64> = (0..teacher.param_dim())
                .map(|_| rng.random_range(-1.0..=1.0))
                .collect();
            let samples = (0..n)
                .map(|_| {
                    let features: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
                    let target = teacher.mlp_forward(&weights, &features, None);
                    Sample { features, target }
                })
                .collect();
            (samples, Some(weights))
        }
    };
    Ok(Dataset {
        samples,
        dim,
        seed,
        kind: Some(kind),
        generator,
    })
}

impl Dataset {
    /// Wraps externally provided samples; all must share one dimension.
    pub fn from_samples(samples: Vec<Sample>) -> Result<Self> {
        let dim = samples
            .first()
            .map(|s| s.features.len())
            .ok_or_else(|| Error::Usage("dataset must contain at least one sample".into()))?;
        if let Some(bad) = samples.iter().find(|s| s.features.len() != dim) {
            return Err(Error::Dimension {
                context: "dataset sample",
                expected: dim,
                got: bad.features.len(),
            });
        }
        Ok(Dataset {
            samples,
            dim,
            seed: 0,
            kind: None,
            generator: None,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn kind(&self) -> Option<DatasetKind> {
        self.kind
    }

    /// Cluster center, true regression weights or teacher weights.
    pub fn generator(&self) -> Option<&[f64]> {
        self.generator.as_deref()
    }

    /// Component-wise feature mean, summed in sample order.
    pub fn feature_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for s in &self.samples {
            for (m, f) in mean.iter_mut().zip(&s.features) {
                *m += f;
            }
        }
        let n = self.samples.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Writes `feature_0..feature_{d-1},target` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.dim).map(|i| format!("feature_{i}")).collect();
        header.push("target".into());
        w.write_record(&header)?;
        for s in &self.samples {
            let row: Vec<String> = s
                .features
                .iter()
                .chain(std::iter::once(&s.target))
                .map(|v| format!("{v:.16e}"))
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        let dim = headers.len().saturating_sub(1);
        if dim == 0 || headers.get(dim) != Some("target") {
            return Err(Error::Usage(format!(
                "{}: expected header feature_0..feature_{{d-1}},target",
                path.display()
            )));
        }
        let mut samples = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
            let (features, target) = vals.split_at(dim);
            samples.push(Sample {
                features: features.to_vec(),
                target: target[0],
            });
        }
        Dataset::from_samples(samples)
    }
}

/// An ordered set of sample indices into a dataset, stored ascending.
#[derive(Debug, Clone)]
pub struct MiniBatch<'a> {
    dataset: &'a Dataset,
    indices: Vec<usize>,
}

impl<'a> MiniBatch<'a> {
    /// The slice `X_(start, n_b)`.
    pub fn contiguous(dataset: &'a Dataset, start: usize, n_b: usize) -> Result<Self> {
        if n_b == 0 || start + n_b > dataset.len() {
            return Err(Error::Usage(format!(
                "batch [{start}, {}) outside dataset of {}",
                start + n_b,
                dataset.len()
            )));
        }
        Ok(MiniBatch {
            dataset,
            indices: (start..start + n_b).collect(),
        })
    }

    /// Arbitrary indices; duplicates are kept, order is normalized to ascending.
    pub fn from_indices(dataset: &'a Dataset, mut indices: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.len()) {
            return Err(Error::Usage(format!(
                "sample index {bad} outside dataset of {}",
                dataset.len()
            )));
        }
        indices.sort_unstable();
        Ok(MiniBatch { dataset, indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = &'a Sample> + '_ {
        let samples = self.dataset.samples();
        self.indices.iter().map(move |&i| &samples[i])
    }
}

/// The sample ranges owned by one worker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub worker: usize,
    pub ranges: Vec<Range<usize>>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.ranges.iter().map(|r| r.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.ranges.iter().flat_map(|r| r.clone())
    }
}

/// Splits `[0, n)` into `workers` contiguous blocks whose sizes differ by at
/// most one; the first `n % workers` blocks get the extra sample.
pub fn shard(dataset: &Dataset, workers: usize) -> Result<Vec<Shard>> {
    let n = dataset.len();
    if workers == 0 {
        return Err(Error::Usage("workers must be >= 1".into()));
    }
    if workers > n {
        return Err(Error::Usage(format!(
            "{workers} workers for only {n} samples"
        )));
    }
    let (base, extra) = (n / workers, n % workers);
    let mut start = 0;
    Ok((0..workers)
        .map(|worker| {
            let size = base + usize::from(worker < extra);
            let range = start..start + size;
            start += size;
            Shard {
                worker,
                ranges: vec![range],
            }
        })
        .collect())
}

/// Position in a shard's batch sequence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BatchCursor {
    pub epoch: u64,
    pub offset: usize,
}

/// Visiting order of the shard in `epoch`, reshuffled per epoch.
fn epoch_order(shard: &Shard, epoch_seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = shard.indices().collect();
    let mut rng = seed::keyed_rng(epoch_seed, &[shard.worker as u64, epoch]);
    order.shuffle(&mut rng);
    order
}

/// Returns the next `n_b` samples of the shard and the advanced cursor.
///
/// Each epoch visits every shard sample exactly once in a freshly shuffled
/// order. A batch that straddles an epoch boundary takes the tail of one
/// epoch and the head of the next.
pub fn next_batch<'a>(
    dataset: &'a Dataset,
    shard: &Shard,
    n_b: usize,
    cursor: BatchCursor,
    epoch_seed: u64,
) -> Result<(MiniBatch<'a>, BatchCursor)> {
    let mut stream = BatchStream::new(shard.clone(), n_b, epoch_seed)?;
    stream.seek(cursor);
    let batch = stream.next_batch(dataset)?;
    Ok((batch, stream.cursor()))
}

/// Stateful form of [`next_batch`] that caches the current epoch order.
#[derive(Debug, Clone)]
pub struct BatchStream {
    shard: Shard,
    n_b: usize,
    epoch_seed: u64,
    cursor: BatchCursor,
    order: Vec<usize>,
}

impl BatchStream {
    pub fn new(shard: Shard, n_b: usize, epoch_seed: u64) -> Result<Self> {
        if n_b == 0 {
            return Err(Error::Usage("batch size must be >= 1".into()));
        }
        if n_b > shard.len() {
            return Err(Error::Usage(format!(
                "batch size {n_b} exceeds shard size {} of worker {}",
                shard.len(),
                shard.worker
            )));
        }
        let order = epoch_order(&shard, epoch_seed, 0);
        Ok(BatchStream {
            shard,
            n_b,
            epoch_seed,
            cursor: BatchCursor::default(),
            order,
        })
    }

    pub fn cursor(&self) -> BatchCursor {
        self.cursor
    }

    pub fn seek(&mut self, cursor: BatchCursor) {
        if cursor.epoch != self.cursor.epoch {
            self.order = epoch_order(&self.shard, self.epoch_seed, cursor.epoch);
        }
        self.cursor = cursor;
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_b);
        while out.len() < self.n_b {
            if self.cursor.offset == self.order.len() {
                self.cursor = BatchCursor {
                    epoch: self.cursor.epoch + 1,
                    offset: 0,
                };
                self.order = epoch_order(&self.shard, self.epoch_seed, self.cursor.epoch);
            }
            let take = (self.n_b - out.len()).min(self.order.len() - self.cursor.offset);
            out.extend_from_slice(&self.order[self.cursor.offset..self.cursor.offset + take]);
            self.cursor.offset += take;
        }
        out
    }

    pub fn next_batch<'a>(&mut self, dataset: &'a Dataset) -> Result<MiniBatch<'a>> {
        MiniBatch::from_indices(dataset, self.next_indices())
    }
}
