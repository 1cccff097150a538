//! Synthetic parallel spaces with known ground truth.
//!
//! A target space is an orthogonal rotation of the source plus optional
//! Gaussian noise. Without noise, relative representations w.r.t. parallel
//! anchors are identical on both sides.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{normalize_rows, EmbeddingSpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub dim: usize,
    pub noise_sigma: f64,
    pub rng_seed: u64,
    pub n_classes: Option<usize>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::InvalidConfig("n_samples must be >= 2".into()));
        }
        if self.dim < 2 {
            return Err(Error::InvalidConfig("dim must be >= 2".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

pub fn sample_keys(n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len();
    (0..n).map(|i| format!("w{i:0width$}")).collect()
}

/// Haar-ish random orthogonal matrix: QR of a Gaussian matrix with the
/// diagonal of R made positive.
pub fn random_orthogonal(d: usize, rng_seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let g = gaussian(&mut rng, d, d);
    let m = DMatrix::from_fn(d, d, |i, j| g[[i, j]]);
    let qr = m.qr();
    let q = qr.q();
    let r = qr.r();
    Array2::from_shape_fn((d, d), |(i, j)| {
        let sign = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
        q[(i, j)] * sign
    })
}

/// Isotropic unit-norm source space with keys `w0..`.
pub fn random_space(id: &str, n: usize, dim: usize, rng_seed: u64) -> Result<EmbeddingSpace> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    EmbeddingSpace::new(id, sample_keys(n), gaussian(&mut rng, n, dim))
}

/// `normalize(X·Q + sigma·noise)` with the keys of `space_x`, same row order.
pub fn make_parallel_space(
    id: &str,
    space_x: &EmbeddingSpace,
    q: ArrayView2<f64>,
    noise_sigma: f64,
    rng_seed: u64,
) -> Result<EmbeddingSpace> {
    if q.nrows() != space_x.dim() {
        return Err(Error::DimMismatch {
            expected: space_x.dim(),
            got: q.nrows(),
        });
    }
    let mut y = space_x.vectors().dot(&q);
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let noise = gaussian(&mut rng, y.nrows(), y.ncols());
        y.zip_mut_with(&noise, |v, n| {
            *v += noise_sigma * n
        });
    }
    EmbeddingSpace::new(id, space_x.keys().to_vec(), y)
}

/// Same space with rows in a random order. Returns the space and
/// `perm`, where new row `i` is old row `perm[i]`.
pub fn shuffle_space(space: &EmbeddingSpace, rng_seed: u64) -> Result<(EmbeddingSpace, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut perm: Vec<usize> = (0..space.len()).collect();
    perm.shuffle(&mut rng);
    Ok((space.subset(space.id(), &perm)?, perm))
}

/// Unit-norm Gaussian clusters around random unit centroids.
///
/// `noise_sigma` is the per-coordinate spread around each centroid. Labels
/// cycle through the classes so every class is populated.
pub fn make_class_clusters(spec: &SynthSpec) -> Result<(EmbeddingSpace, Vec<usize>)> {
    spec.validate()?;
    let classes = spec.n_classes.unwrap_or(2);
    if classes < 1 {
        return Err(Error::InvalidConfig("n_classes must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let centroids = normalize_rows(gaussian(&mut rng, classes, spec.dim).view())?;
    let labels: Vec<usize> = (0..spec.n_samples).map(|i| i % classes).collect();
    let mut points = centroids.select(Axis(0), &labels);
    points.zip_mut_with(&gaussian(&mut rng, spec.n_samples, spec.dim), |v, n| {
        *v += spec.noise_sigma * n
    });
    let space = EmbeddingSpace::new("clusters", sample_keys(spec.n_samples), points)?;
    Ok((space, labels))
}

/// A source space and its rotated (optionally noisy) counterpart.
///
/// Both share keys; the target rows are shuffled so row order carries no
/// correspondence.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub x: EmbeddingSpace,
    pub y: EmbeddingSpace,
    pub labels_x: Option<Vec<usize>>,
    pub labels_y: Option<Vec<usize>>,
    pub rotation: Array2<f64>,
}

// sub-streams derived from the spec seed
fn stream(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x100).wrapping_add(k)
}

fn finish_pair(spec: &SynthSpec, x: EmbeddingSpace, labels: Option<Vec<usize>>) -> Result<SyntheticPair> {
    let rotation = random_orthogonal(spec.dim, stream(spec.rng_seed, 1));
    let y = make_parallel_space("y", &x, rotation.view(), spec.noise_sigma, stream(spec.rng_seed, 2))?;
    let (y, perm) = shuffle_space(&y, stream(spec.rng_seed, 3))?;
    let labels_y = labels.as_ref().map(|l| perm.iter().map(|&i| l[i]).collect());
    Ok(SyntheticPair {
        x,
        y,
        labels_x: labels,
        labels_y,
        rotation,
    })
}

/// Isotropic source of `n_samples` points; target is
/// `normalize(X·Q + noise_sigma·N)`.
pub fn make_benchmark_pair(spec: &SynthSpec) -> Result<SyntheticPair> {
    spec.validate()?;
    let x = random_space("x", spec.n_samples, spec.dim, stream(spec.rng_seed, 0))?;
    finish_pair(spec, x, None)
}

/// Class clusters with per-coordinate `cluster_spread`, related to the
/// target as in [`make_benchmark_pair`].
pub fn make_labeled_pair(spec: &SynthSpec, cluster_spread: f64) -> Result<SyntheticPair> {
    if !(cluster_spread >= 0.0) {
        return Err(Error::InvalidConfig("cluster spread must be >= 0".into()));
    }
    let inner = SynthSpec {
        noise_sigma: cluster_spread,
        rng_seed: stream(spec.rng_seed, 0),
        ..*spec
    };
    let (x, labels) = make_class_clusters(&inner)?;
    let x = x.subset("x", &(0..x.len()).collect::<Vec<_>>())?;
    finish_pair(spec, x, Some(labels))
}

/// `x ↦ x·Q` applied to a single vector, for isometry checks.
pub fn rotate(x: &Array1<f64>, q: ArrayView2<f64>) -> Array1<f64> {
    x.dot(&q)
}
