//! Deterministic random streams and the samplers built on them.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream selected
//! by `(master seed, tag, index)`. Work is split into fixed batches (or one
//! stream per path) before it is handed to rayon, so results never depend on
//! how many worker threads happen to run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::linalg::{det, stable_qr, Matrix};

pub type StreamRng = ChaCha8Rng;

/// Number of batches used for batch-means standard errors.
pub const BATCHES: usize = 32;

/// Stream tags keep unrelated consumers of one master seed apart.
pub mod tags {
    pub const HAAR_CALIBRATION: u64 = 1;
    pub const RADON_DIRECT: u64 = 2;
    pub const RADON_TRUNCATED: u64 = 3;
    pub const QR_CLAIM: u64 = 4;
    pub const QR_BOUNDARY: u64 = 5;
    pub const A1_AVERAGE: u64 = 6;
    pub const A1_ASCENT: u64 = 7;
    pub const IBP: u64 = 8;
    pub const DET_GROWTH: u64 = 9;
    pub const CAPACITY: u64 = 10;
    pub const BESM: u64 = 11;
    pub const WISHART: u64 = 12;
    pub const GIRSANOV: u64 = 13;
    pub const A1_BALLS: u64 = 14;
    pub const QR_FIDELITY: u64 = 15;
    pub const CLAIM_1D: u64 = 16;
}

pub fn stream(seed: u64, tag: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 40) ^ index);
    rng
}

#[inline]
pub fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gaussian_matrix(d: usize, scale: f64, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(d, |_, _| scale * normal(rng))
}

/// Haar-distributed element of `O(d)`: QR of a Gaussian matrix with the
/// diagonal of `R` made positive.
pub fn haar_orthogonal(d: usize, rng: &mut impl Rng) -> Matrix {
    loop {
        let g = gaussian_matrix(d, 1.0, rng);
        // Gram–Schmidt already produces a positive diagonal in R.
        if let Ok(qr) = stable_qr(&g) {
            return qr.q;
        }
    }
}

/// Uniform point in the centred Euclidean ball of radius `r` in `R^n`.
pub fn uniform_in_ball(n: usize, r: f64, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let u: f64 = rng.random();
        let rad = r * u.powf(1.0 / n as f64);
        return g.into_iter().map(|v| v * rad / norm).collect();
    }
}

/// Uniform point in the Frobenius ball `B(center, r)`, resampling the
/// probability-zero event of an exactly singular draw.
pub fn uniform_in_matrix_ball(center: &Matrix, r: f64, rng: &mut impl Rng) -> Matrix {
    let d = center.dim();
    loop {
        let v = uniform_in_ball(d * d, r, rng);
        let mut x = center.clone();
        for (a, b) in x.as_mut_slice().iter_mut().zip(v) {
            *a += b;
        }
        if det(&x) != 0.0 {
            return x;
        }
    }
}

/// Volume of the unit ball in `R^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    // V_0 = 1, V_1 = 2, V_n = 2π/n · V_{n-2}
    let mut v = [1.0, 2.0];
    if n < 2 {
        return v[n];
    }
    for k in 2..=n {
        let next = 2.0 * std::f64::consts::PI / k as f64 * v[k % 2];
        v[k % 2] = next;
    }
    v[n % 2]
}

/// Splits `n` samples into [`BATCHES`] batches, runs each on its own stream
/// (in parallel) and returns the per-batch outputs in batch order.
pub fn par_batches<T, F>(seed: u64, tag: u64, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut StreamRng, usize) -> T + Sync,
{
    let sizes = batch_sizes(n);
    sizes
        .into_par_iter()
        .enumerate()
        .map(|(b, count)| {
            let mut rng = stream(seed, tag, b as u64);
            f(&mut rng, count)
        })
        .collect()
}

pub fn batch_sizes(n: usize) -> Vec<usize> {
    let base = n / BATCHES;
    let extra = n % BATCHES;
    (0..BATCHES).map(|b| base + usize::from(b < extra)).collect()
}

/// Mean with a batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub stderr: f64,
}

impl MeanSe {
    pub fn scaled(self, s: f64) -> Self {
        Self { mean: self.mean * s, stderr: self.stderr * s.abs() }
    }
}

/// Monte Carlo means of `k` observables. `sample` draws one sample and writes
/// its `k` observations into the buffer.
pub fn batch_means<F>(seed: u64, tag: u64, n: usize, k: usize, sample: F) -> Vec<MeanSe>
where
    F: Fn(&mut StreamRng, &mut [f64]) + Sync,
{
    let per_batch = par_batches(seed, tag, n, |rng, count| {
        let mut sums = vec![0.0; k];
        let mut obs = vec![0.0; k];
        for _ in 0..count {
            obs.iter_mut().for_each(|v| *v = 0.0);
            sample(rng, &mut obs);
            for (s, o) in sums.iter_mut().zip(&obs) {
                *s += o;
            }
        }
        (count, sums)
    });
    combine_batches(&per_batch, k)
}

/// Pools per-batch `(count, sums)` into means and batch-means standard errors.
pub fn combine_batches(per_batch: &[(usize, Vec<f64>)], k: usize) -> Vec<MeanSe> {
    let total: usize = per_batch.iter().map(|(c, _)| c).sum();
    let used: Vec<&(usize, Vec<f64>)> = per_batch.iter().filter(|(c, _)| *c > 0).collect();
    let nb = used.len() as f64;
    (0..k)
        .map(|j| {
            let mean = if total == 0 {
                0.0
            } else {
                used.iter().map(|(_, s)| s[j]).sum::<f64>() / total as f64
            };
            let stderr = if used.len() < 2 {
                0.0
            } else {
                let var = used
                    .iter()
                    .map(|(c, s)| {
                        let b = s[j] / *c as f64;
                        (b - mean) * (b - mean)
                    })
                    .sum::<f64>()
                    / (nb - 1.0);
                (var / nb).sqrt()
            };
            MeanSe { mean, stderr }
        })
        .collect()
}
