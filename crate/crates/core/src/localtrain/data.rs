//! Local datasets and synthetic generators for the two convex tasks.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major feature matrix plus labels held by one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalDataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    dim: usize,
}

impl LocalDataset {
    pub fn new(features: Vec<f64>, labels: Vec<f64>, dim: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("dataset must hold at least one sample"));
        }
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                got: features.len(),
            });
        }
        if features.iter().chain(&labels).any(|v| !v.is_finite()) {
            return Err(Error::Domain("dataset entries must be finite".into()));
        }
        Ok(LocalDataset { features, labels, dim })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn samples(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.features.chunks_exact(self.dim).zip(self.labels.iter().copied())
    }

    /// Concatenate several datasets of the same dimension.
    pub fn pooled<'a>(parts: impl IntoIterator<Item = &'a LocalDataset>) -> Result<Self> {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut dim = None;
        for p in parts {
            if *dim.get_or_insert(p.dim) != p.dim {
                return Err(Error::DimensionMismatch { expected: dim.unwrap(), got: p.dim });
            }
            features.extend_from_slice(&p.features);
            labels.extend_from_slice(&p.labels);
        }
        LocalDataset::new(features, labels, dim.ok_or(Error::Empty("no datasets to pool"))?)
    }

    /// Extreme eigenvalues (min, max) of the sample second-moment matrix X^T X / d.
    pub fn gram_spectrum(&self) -> (f64, f64) {
        let x = DMatrix::from_row_slice(self.len(), self.dim, &self.features);
        let gram = x.transpose() * &x / self.len() as f64;
        let eig = SymmetricEigen::new(gram).eigenvalues;
        let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo.max(0.0), hi)
    }
}

/// Knobs for the synthetic classification data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Number of features including the constant bias column.
    pub dim: usize,
    /// Probability of flipping a label.
    pub label_noise: f64,
    /// Maximum shift of a device's feature mean along the true separating
    /// direction; device k gets a shift linearly spaced in [-skew, skew].
    pub label_skew: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            dim: 10,
            label_noise: 0.1,
            label_skew: 0.5,
        }
    }
}

fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Ground-truth separator shared by all devices.
pub fn true_separator<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    gaussian_vec(rng, dim)
}

/// Noisy linearly separable data for one device, labels in {-1, +1}.
pub fn synthetic_logistic<R: Rng + ?Sized>(
    rng: &mut R,
    separator: &[f64],
    samples: usize,
    spec: &SyntheticSpec,
    shift: f64,
) -> Result<LocalDataset> {
    let dim = separator.len();
    let norm = separator[1..].iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let mut features = Vec::with_capacity(samples * dim);
    let mut labels = Vec::with_capacity(samples);
    for _ in 0..samples {
        let mut x = gaussian_vec(rng, dim);
        x[0] = 1.0;
        for (xi, wi) in x[1..].iter_mut().zip(&separator[1..]) {
            *xi += shift * wi / norm;
        }
        let margin: f64 = x.iter().zip(separator).map(|(a, b)| a * b).sum();
        let mut y = if margin >= 0.0 { 1.0 } else { -1.0 };
        if rng.random::<f64>() < spec.label_noise {
            y = -y;
        }
        features.extend_from_slice(&x);
        labels.push(y);
    }
    LocalDataset::new(features, labels, dim)
}

/// Per-device shift for the label-skew knob.
pub fn device_shift(device: usize, num_devices: usize, skew: f64) -> f64 {
    if num_devices <= 1 {
        0.0
    } else {
        skew * (2.0 * device as f64 / (num_devices - 1) as f64 - 1.0)
    }
}

/// Least-squares data y = x^T w + noise with Gaussian features.
pub fn synthetic_regression<R: Rng + ?Sized>(
    rng: &mut R,
    target: &[f64],
    samples: usize,
    noise: f64,
) -> Result<LocalDataset> {
    let dim = target.len();
    let mut features = Vec::with_capacity(samples * dim);
    let mut labels = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x = gaussian_vec(rng, dim);
        let y = x.iter().zip(target).map(|(a, b)| a * b).sum::<f64>()
            + noise * rng.sample::<f64, _>(StandardNormal);
        features.extend_from_slice(&x);
        labels.extend([y]);
    }
    LocalDataset::new(features, labels, dim)
}

/// Least-squares data whose second-moment matrix X^T X / d has exactly the
/// eigenvalues `spectrum` (one sample per eigenvalue, random rotation).
pub fn regression_with_spectrum<R: Rng + ?Sized>(
    rng: &mut R,
    spectrum: &[f64],
    labels: &[f64],
) -> Result<LocalDataset> {
    let dim = spectrum.len();
    if labels.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: labels.len() });
    }
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let scale = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        dim,
        spectrum.iter().map(|l| (l * dim as f64).sqrt()),
    ));
    // X = S Q^T gives X^T X / d = Q diag(spectrum) Q^T.
    let x = scale * q.transpose();
    let mut features = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        features.extend(x.row(i).iter().copied());
    }
    LocalDataset::new(features, labels.to_vec(), dim)
}
