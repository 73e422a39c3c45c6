//! Instances shared by the integration test targets.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rdsctl::synthesis::{factorize_gram, DEFAULT_RANK_TOL};
use rdsctl::system::gram_closed_form;
use rdsctl::{AffineCoefficients, DMatrix, DVector, DistributionModel, GramFactor};

pub fn m1(x: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, x)
}

/// `a = a0 + a1 xi`, `b = b0 + b1 xi`, `xi ~ N(mu, var)`.
pub struct Scalar {
    pub a0: f64,
    pub a1: f64,
    pub b0: f64,
    pub b1: f64,
    pub mu: f64,
    pub var: f64,
}

impl Scalar {
    pub fn factor(&self) -> GramFactor {
        let coeffs = AffineCoefficients::new(
            m1(self.a0),
            vec![m1(self.a1)],
            m1(self.b0),
            vec![m1(self.b1)],
            m1(1.0),
            vec![m1(0.0)],
            m1(0.0),
            vec![m1(0.0)],
        )
        .unwrap();
        let model =
            DistributionModel::new(DVector::from_element(1, self.mu), m1(self.var)).unwrap();
        let gram = gram_closed_form(&coeffs, &model).unwrap();
        factorize_gram(&gram, DEFAULT_RANK_TOL).unwrap()
    }

    /// `E[(x0 + x1 xi)(y0 + y1 xi)]`.
    pub fn moment(&self, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
        let e2 = self.var + self.mu * self.mu;
        x0 * y0 + (x0 * y1 + x1 * y0) * self.mu + x1 * y1 * e2
    }

    pub fn eaa(&self) -> f64 {
        self.moment(self.a0, self.a1, self.a0, self.a1)
    }
    pub fn eab(&self) -> f64 {
        self.moment(self.a0, self.a1, self.b0, self.b1)
    }
    pub fn ebb(&self) -> f64 {
        self.moment(self.b0, self.b1, self.b0, self.b1)
    }

    pub fn optimal_gain(&self) -> f64 {
        -self.eab() / self.ebb()
    }

    pub fn optimal_rate(&self) -> f64 {
        (self.eaa() - self.eab().powi(2) / self.ebb()).sqrt()
    }

    /// `sqrt(E[(a + b f)^2])`.
    pub fn closed_loop_rate(&self, f: f64) -> f64 {
        let (c0, c1) = (self.a0 + self.b0 * f, self.a1 + self.b1 * f);
        self.moment(c0, c1, c0, c1).sqrt()
    }
}

/// Random scalar instance whose optimal rate lies in `[0.1, 0.9]`.
pub fn random_scalar(rng: &mut ChaCha8Rng) -> Scalar {
    loop {
        let s = Scalar {
            a0: rng.random_range(-1.5..1.5),
            a1: rng.random_range(-0.5..0.5),
            b0: rng.random_range(0.3..2.0),
            b1: rng.random_range(-0.5..0.5),
            mu: rng.random_range(-1.0..1.0),
            var: rng.random_range(0.01..0.5),
        };
        let rate = s.optimal_rate();
        if (0.1..=0.9).contains(&rate) {
            return s;
        }
    }
}

/// Random affine system with `n, m <= 3` and two parameters.
pub fn random_system(rng: &mut ChaCha8Rng) -> (AffineCoefficients, DistributionModel) {
    let n = rng.random_range(1..=3);
    let m = rng.random_range(1..=3);
    let z = 2;
    let mut mat = |r: usize, c: usize, s: f64| DMatrix::from_fn(r, c, |_, _| rng.random_range(-s..s));
    let coeffs = AffineCoefficients::new(
        mat(n, n, 1.0),
        (0..z).map(|_| mat(n, n, 0.2)).collect(),
        mat(n, m, 1.0) + DMatrix::identity(n, m),
        (0..z).map(|_| mat(n, m, 0.2)).collect(),
        DMatrix::identity(n, n),
        vec![DMatrix::zeros(n, n); z],
        DMatrix::zeros(n, m),
        vec![DMatrix::zeros(n, m); z],
    )
    .unwrap();
    let l = mat(z, z, 0.5);
    let cov = &l * l.transpose() + DMatrix::identity(z, z) * 0.05;
    let mean = DVector::from_fn(z, |_, _| rng.random_range(-0.5..0.5));
    (coeffs, DistributionModel::new(mean, cov).unwrap())
}


/// Random affine maps of the given sizes with entries in `[-1, 1]`.
pub fn random_coeffs(rng: &mut ChaCha8Rng, n: usize, m: usize, p: usize, z: usize) -> AffineCoefficients {
    let mut mat = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    AffineCoefficients::new(
        mat(n, n),
        (0..z).map(|_| mat(n, n)).collect(),
        mat(n, m),
        (0..z).map(|_| mat(n, m)).collect(),
        mat(p, n),
        (0..z).map(|_| mat(p, n)).collect(),
        mat(p, m),
        (0..z).map(|_| mat(p, m)).collect(),
    )
    .unwrap()
}

/// Random Gaussian parameter law with a full-rank covariance.
pub fn random_model(rng: &mut ChaCha8Rng, z: usize) -> DistributionModel {
    let l = DMatrix::from_fn(z, z, |_, _| rng.random_range(-0.5..0.5));
    let cov = &l * l.transpose() + DMatrix::identity(z, z) * 0.01;
    let mean = DVector::from_fn(z, |_, _| rng.random_range(-1.0..1.0));
    DistributionModel::new(mean, cov).unwrap()
}
