//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by a
//! 64-bit seed. Child seeds are derived with SplitMix64 so that
//! `(seed, index)` always maps to the same stream, independent of how work
//! is scheduled across threads.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::psd_factor;
use crate::Result;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of child stream `index` under `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn standard_normal_vector(rng: &mut Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

/// Draws from `N(mean, cov)` as `mean + L e` with `L L^T = cov`.
///
/// Semidefinite covariances are fine; zero directions produce no spread.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    factor: Option<DMatrix<f64>>,
    /// Diagonal of `factor` when the factor is diagonal.
    diagonal: Option<Vec<f64>>,
}

impl GaussianSampler {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        crate::error::check_dim("gaussian covariance", mean.len(), cov.nrows())?;
        let factor = psd_factor(cov, "covariance")?;
        let factor = if factor.iter().all(|&v| v == 0.0) {
            None
        } else {
            Some(factor)
        };
        let diagonal = factor
            .as_ref()
            .filter(|l| crate::linalg::is_diagonal(l))
            .map(|l| l.diagonal().iter().copied().collect());
        Ok(Self {
            mean,
            factor,
            diagonal,
        })
    }

    pub fn zero_mean(cov: &DMatrix<f64>) -> Result<Self> {
        Self::new(DVector::zeros(cov.nrows()), cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_degenerate(&self) -> bool {
        self.factor.is_none()
    }

    pub fn sample(&self, rng: &mut Rng) -> DVector<f64> {
        match &self.factor {
            None => self.mean.clone(),
            Some(l) => &self.mean + l * standard_normal_vector(rng, l.ncols()),
        }
    }

    /// Adds a zero-mean draw (ignoring the stored mean) to `target`.
    pub fn add_noise(&self, rng: &mut Rng, target: &mut DVector<f64>) {
        self.add_noise_slice(rng, target.as_mut_slice());
    }

    /// [`Self::add_noise`] on a slice of length [`Self::dim`].
    pub fn add_noise_slice(&self, rng: &mut Rng, target: &mut [f64]) {
        if let Some(d) = &self.diagonal {
            for (t, &s) in target.iter_mut().zip(d) {
                let e: f64 = StandardNormal.sample(rng);
                *t += s * e;
            }
        } else if let Some(l) = &self.factor {
            let e = standard_normal_vector(rng, l.ncols());
            let mut tv = nalgebra::DVectorViewMut::from_slice(target, l.nrows());
            tv.gemv(1.0, l, &e, 1.0);
        }
    }
}
