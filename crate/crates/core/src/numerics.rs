//! Dense vector primitives, distances, the shared random projection and the
//! keyed random streams every other module draws from.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Norms below this are treated as zero by [`cosine_similarity`].
pub const ZERO_NORM_EPS: f64 = 1e-12;

/// A flat parameter vector: the unit every device trains, uploads and receives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelParams(Vec<f64>);

impl ModelParams {
    /// Wraps `values`, rejecting empty or non-finite input.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("model parameters"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    /// Crate-internal constructor for values already known to be finite.
    pub(crate) fn from_vec(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn dot(&self, other: &ModelParams) -> Result<f64> {
        check_dims(self.dim(), other.dim())?;
        Ok(dot(&self.0, &other.0))
    }

    /// `self + scale * other`.
    pub fn add_scaled(&self, scale: f64, other: &ModelParams) -> Result<ModelParams> {
        check_dims(self.dim(), other.dim())?;
        Ok(Self(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + scale * b)
                .collect(),
        ))
    }

    pub fn sub(&self, other: &ModelParams) -> Result<ModelParams> {
        self.add_scaled(-1.0, other)
    }

    pub fn scale(&self, factor: f64) -> ModelParams {
        Self(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn check_dims(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::DimensionMismatch { left, right });
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Coordinate-wise mean of a non-empty set of equal-dimension models.
pub fn mean(models: &[ModelParams]) -> Result<ModelParams> {
    let first = models.first().ok_or(Error::Empty("model set"))?;
    let mut acc = vec![0.0; first.dim()];
    for m in models {
        check_dims(first.dim(), m.dim())?;
        for (a, v) in acc.iter_mut().zip(m.as_slice()) {
            *a += v;
        }
    }
    let n = models.len() as f64;
    Ok(ModelParams(acc.into_iter().map(|v| v / n).collect()))
}

pub fn euclidean_distance(a: &ModelParams, b: &ModelParams) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    Ok(a.0
        .iter()
        .zip(&b.0)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Cosine similarity; zero when either vector has (near) zero norm.
pub fn cosine_similarity(a: &ModelParams, b: &ModelParams) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    let (na, nb) = (a.norm(), b.norm());
    if na < ZERO_NORM_EPS || nb < ZERO_NORM_EPS {
        return Ok(0.0);
    }
    Ok((dot(&a.0, &b.0) / (na * nb)).clamp(-1.0, 1.0))
}

/// Linear-interpolated percentile (`q` in `[0, 100]`) of a non-empty sample.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("percentile sample"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Ok(sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// A deterministic random stream keyed by `(seed, stream_id)`.
///
/// The ChaCha key is the SHA-256 digest of the seed and the label, so two
/// streams with different labels are independent and a stream never depends
/// on which other streams were created before it.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: String,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: impl Into<String>) -> Self {
        let stream_id = stream_id.into();
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(stream_id.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        Self {
            seed,
            stream_id,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// Derives a child stream; the child's label is `"<parent>/<label>"`.
    pub fn child(&self, label: impl AsRef<str>) -> Self {
        Self::new(self.seed, format!("{}/{}", self.stream_id, label.as_ref()))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> &str {
        &self.stream_id
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn index(&mut self, upper: usize) -> usize {
        self.rng.random_range(0..upper)
    }

    pub fn coin(&mut self) -> bool {
        self.rng.random::<bool>()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// The `d_feat x dim` projection matrix shared by every attacker in a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Projector {
    rows: Vec<Vec<f64>>,
    input_dim: usize,
}

impl Projector {
    /// Draws i.i.d. `±1/sqrt(d_feat)` entries, row-major.
    pub fn random(input_dim: usize, d_feat: usize, rng: &mut RngStream) -> Result<Self> {
        if d_feat == 0 {
            return Err(Error::InvalidArgument("d_feat must be positive".into()));
        }
        if d_feat > input_dim {
            return Err(Error::InvalidArgument(format!(
                "d_feat ({d_feat}) exceeds model dimension ({input_dim})"
            )));
        }
        let mag = 1.0 / (d_feat as f64).sqrt();
        let rows = (0..d_feat)
            .map(|_| {
                (0..input_dim)
                    .map(|_| if rng.coin() { mag } else { -mag })
                    .collect()
            })
            .collect();
        Ok(Self { rows, input_dim })
    }

    pub fn identity(dim: usize) -> Self {
        let rows = (0..dim)
            .map(|i| {
                let mut row = vec![0.0; dim];
                row[i] = 1.0;
                row
            })
            .collect();
        Self {
            rows,
            input_dim: dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn project(&self, w: &ModelParams) -> Result<ModelParams> {
        check_dims(self.input_dim, w.dim())?;
        Ok(ModelParams(
            self.rows.iter().map(|row| dot(row, w.as_slice())).collect(),
        ))
    }
}

/// One-shot projection of `w` with a freshly drawn matrix.
pub fn random_projection(w: &ModelParams, d_feat: usize, rng: &mut RngStream) -> Result<ModelParams> {
    Projector::random(w.dim(), d_feat, rng)?.project(w)
}
