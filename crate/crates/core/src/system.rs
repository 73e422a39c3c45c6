//! Random linear systems with affine parameter dependence.
//!
//! The system is
//!
//! ```text
//! x[k+1] = A(xi[k]) x[k] + B(xi[k]) u[k]
//! y[k]   = C(xi[k]) x[k] + D(xi[k]) u[k]
//! ```
//!
//! with `A(xi) = A0 + sum_j xi_j A_j` (same for B, C, D) and `xi[k]` i.i.d.
//! The parameter law is summarized by its first two moments
//! ([`DistributionModel`]); the support is taken to be all of `R^Z`.

use nalgebra::{DMatrix, DVector};

use crate::error::check_dim;
use crate::linalg::{asymmetry, min_eig, symmetrize};
use crate::rng::{rng_from_seed, GaussianSampler};
use crate::{Error, Result};

/// First and second moments of the i.i.d. parameter `xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionModel {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    samples: Option<Vec<DVector<f64>>>,
}

impl DistributionModel {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let z = mean.len();
        if z == 0 {
            return Err(Error::Input("parameter dimension must be positive".into()));
        }
        if covariance.shape() != (z, z) {
            return Err(Error::Input(format!(
                "covariance must be {z}x{z}, got {}x{}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        let asym = asymmetry(&covariance);
        if asym > 1e-9 {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        let covariance = symmetrize(&covariance);
        let me = min_eig(&covariance);
        if me < -1e-10 {
            return Err(Error::NotPsd {
                what: "parameter covariance",
                min_eig: me,
            });
        }
        Ok(Self {
            mean,
            covariance,
            samples: None,
        })
    }

    /// A point mass at `mean`.
    pub fn deterministic(mean: DVector<f64>) -> Result<Self> {
        let z = mean.len();
        Self::new(mean, DMatrix::zeros(z, z))
    }

    /// Sample mean and unbiased sample covariance of `samples`, which are kept.
    ///
    /// A single sample yields a zero covariance.
    pub fn from_samples(samples: Vec<DVector<f64>>) -> Result<Self> {
        let (mean, cov) = sample_moments(&samples)?;
        let mut model = Self::new(mean, cov)?;
        model.samples = Some(samples);
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn samples(&self) -> Option<&[DVector<f64>]> {
        self.samples.as_deref()
    }

    /// Same mean, covariance discarded.
    pub fn without_covariance(&self) -> Self {
        Self {
            mean: self.mean.clone(),
            covariance: DMatrix::zeros(self.dim(), self.dim()),
            samples: None,
        }
    }

    pub fn sampler(&self) -> Result<GaussianSampler> {
        GaussianSampler::new(self.mean.clone(), &self.covariance)
    }
}

/// Sample mean and unbiased (`1/(N-1)`) covariance; zero covariance for one sample.
pub fn sample_moments(samples: &[DVector<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Input("sample list is empty".into()))?;
    let z = first.len();
    for s in samples {
        check_dim("sample", z, s.len())?;
    }
    let n = samples.len();
    let mut mean = DVector::zeros(z);
    for s in samples {
        mean += s;
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(z, z);
    if n > 1 {
        for s in samples {
            let d = s - &mean;
            cov.ger(1.0, &d, &d, 1.0);
        }
        cov /= (n - 1) as f64;
    }
    Ok((mean, symmetrize(&cov)))
}

/// Coefficient matrices evaluated at one parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

/// `M(xi) = M0 + sum_j xi_j M_j` for each of A, B, C, D.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineCoefficients {
    n: usize,
    m: usize,
    p: usize,
    z: usize,
    a0: DMatrix<f64>,
    a: Vec<DMatrix<f64>>,
    b0: DMatrix<f64>,
    b: Vec<DMatrix<f64>>,
    c0: DMatrix<f64>,
    c: Vec<DMatrix<f64>>,
    d0: DMatrix<f64>,
    d: Vec<DMatrix<f64>>,
}

fn check_shape(name: &str, mat: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if mat.shape() != (rows, cols) {
        return Err(Error::Input(format!(
            "{name} must be {rows}x{cols}, got {}x{}",
            mat.nrows(),
            mat.ncols()
        )));
    }
    Ok(())
}

fn affine_eval(base: &DMatrix<f64>, terms: &[DMatrix<f64>], xi: &DVector<f64>) -> DMatrix<f64> {
    let mut out = base.clone();
    for (t, &x) in terms.iter().zip(xi.iter()) {
        if x != 0.0 {
            out += t * x;
        }
    }
    out
}

impl AffineCoefficients {
    /// Builds and validates the coefficient maps.
    ///
    /// Each term list must have one matrix per parameter component.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a0: DMatrix<f64>,
        a: Vec<DMatrix<f64>>,
        b0: DMatrix<f64>,
        b: Vec<DMatrix<f64>>,
        c0: DMatrix<f64>,
        c: Vec<DMatrix<f64>>,
        d0: DMatrix<f64>,
        d: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = a0.nrows();
        let m = b0.ncols();
        let p = c0.nrows();
        let z = a.len();
        if n == 0 || m == 0 || p == 0 || z == 0 {
            return Err(Error::Input(
                "dimensions n, m, p and Z must all be positive".into(),
            ));
        }
        check_shape("A0", &a0, n, n)?;
        check_shape("B0", &b0, n, m)?;
        check_shape("C0", &c0, p, n)?;
        check_shape("D0", &d0, p, m)?;
        for (name, list) in [("B", &b), ("C", &c), ("D", &d)] {
            if list.len() != z {
                return Err(Error::Input(format!(
                    "{name} term list has {} entries, expected Z = {z}",
                    list.len()
                )));
            }
        }
        for j in 0..z {
            check_shape(&format!("A{}", j + 1), &a[j], n, n)?;
            check_shape(&format!("B{}", j + 1), &b[j], n, m)?;
            check_shape(&format!("C{}", j + 1), &c[j], p, n)?;
            check_shape(&format!("D{}", j + 1), &d[j], p, m)?;
        }
        Ok(Self {
            n,
            m,
            p,
            z,
            a0,
            a,
            b0,
            b,
            c0,
            c,
            d0,
            d,
        })
    }

    /// All-zero maps of the given sizes, for filling in with the setters.
    pub fn zeros(n: usize, m: usize, p: usize, z: usize) -> Result<Self> {
        Self::new(
            DMatrix::zeros(n, n),
            vec![DMatrix::zeros(n, n); z],
            DMatrix::zeros(n, m),
            vec![DMatrix::zeros(n, m); z],
            DMatrix::zeros(p, n),
            vec![DMatrix::zeros(p, n); z],
            DMatrix::zeros(p, m),
            vec![DMatrix::zeros(p, m); z],
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn z(&self) -> usize {
        self.z
    }

    pub fn a0(&self) -> &DMatrix<f64> {
        &self.a0
    }
    pub fn b0(&self) -> &DMatrix<f64> {
        &self.b0
    }
    pub fn c0(&self) -> &DMatrix<f64> {
        &self.c0
    }
    pub fn d0(&self) -> &DMatrix<f64> {
        &self.d0
    }
    /// `A_j` for `j` in `1..=Z`.
    pub fn a_term(&self, j: usize) -> &DMatrix<f64> {
        &self.a[j - 1]
    }
    pub fn b_term(&self, j: usize) -> &DMatrix<f64> {
        &self.b[j - 1]
    }
    pub fn c_term(&self, j: usize) -> &DMatrix<f64> {
        &self.c[j - 1]
    }
    pub fn d_term(&self, j: usize) -> &DMatrix<f64> {
        &self.d[j - 1]
    }

    /// Access by name: `'A'`, `'B'`, `'C'` or `'D'`, index 0 for the constant part.
    pub fn term(&self, which: char, j: usize) -> Option<&DMatrix<f64>> {
        let (base, list) = match which {
            'A' => (&self.a0, &self.a),
            'B' => (&self.b0, &self.b),
            'C' => (&self.c0, &self.c),
            'D' => (&self.d0, &self.d),
            _ => return None,
        };
        match j {
            0 => Some(base),
            j => list.get(j - 1),
        }
    }

    /// Mutable access by name: `"A"`, `"B"`, `"C"` or `"D"`, index 0 for the constant part.
    pub fn term_mut(&mut self, which: char, j: usize) -> Option<&mut DMatrix<f64>> {
        let z = self.z;
        let (base, list) = match which {
            'A' => (&mut self.a0, &mut self.a),
            'B' => (&mut self.b0, &mut self.b),
            'C' => (&mut self.c0, &mut self.c),
            'D' => (&mut self.d0, &mut self.d),
            _ => return None,
        };
        match j {
            0 => Some(base),
            j if j <= z => Some(&mut list[j - 1]),
            _ => None,
        }
    }

    pub fn eval(&self, xi: &DVector<f64>) -> Result<Coefficients> {
        check_dim("parameter vector", self.z, xi.len())?;
        Ok(Coefficients {
            a: affine_eval(&self.a0, &self.a, xi),
            b: affine_eval(&self.b0, &self.b, xi),
            c: affine_eval(&self.c0, &self.c, xi),
            d: affine_eval(&self.d0, &self.d, xi),
        })
    }

    pub fn eval_ab(&self, xi: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        check_dim("parameter vector", self.z, xi.len())?;
        Ok((
            affine_eval(&self.a0, &self.a, xi),
            affine_eval(&self.b0, &self.b, xi),
        ))
    }

    /// `A(xi) x + B(xi) u` without forming the evaluated matrices.
    pub(crate) fn apply_state(&self, xi: &[f64], x: &[f64], u: &DVector<f64>) -> DVector<f64> {
        let xv = nalgebra::DVectorView::from_slice(x, self.n);
        let mut out = &self.a0 * xv + &self.b0 * u;
        for ((&s, a), b) in xi[..self.z].iter().zip(&self.a).zip(&self.b) {
            if s != 0.0 {
                out.gemv(s, a, &xv, 1.0);
                out.gemv(s, b, u, 1.0);
            }
        }
        out
    }

    /// `C(xi) x + D(xi) u` without forming the evaluated matrices.
    pub(crate) fn apply_output(&self, xi: &[f64], x: &[f64], u: &DVector<f64>) -> DVector<f64> {
        let xv = nalgebra::DVectorView::from_slice(x, self.n);
        let mut out = &self.c0 * xv + &self.d0 * u;
        for ((&s, c), d) in xi[..self.z].iter().zip(&self.c).zip(&self.d) {
            if s != 0.0 {
                out.gemv(s, c, &xv, 1.0);
                out.gemv(s, d, u, 1.0);
            }
        }
        out
    }

    /// Affine decomposition of the row-vectorized pair: `r(xi) = r0 + sum_j xi_j r_j`.
    pub fn row_terms(&self) -> (DVector<f64>, Vec<DVector<f64>>) {
        let r0 = row_vector(&self.a0, &self.b0);
        let rj = (0..self.z)
            .map(|j| row_vector(&self.a[j], &self.b[j]))
            .collect();
        (r0, rj)
    }
}

/// Convenience alias for [`AffineCoefficients::eval`].
pub fn eval_coeff(coeffs: &AffineCoefficients, xi: &DVector<f64>) -> Result<Coefficients> {
    coeffs.eval(xi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomLinearSystem {
    pub coeffs: AffineCoefficients,
    pub label: String,
}

impl RandomLinearSystem {
    pub fn new(coeffs: AffineCoefficients, label: impl Into<String>) -> Self {
        Self {
            coeffs,
            label: label.into(),
        }
    }

    pub fn n(&self) -> usize {
        self.coeffs.n
    }
    pub fn m(&self) -> usize {
        self.coeffs.m
    }
    pub fn p(&self) -> usize {
        self.coeffs.p
    }
    pub fn z(&self) -> usize {
        self.coeffs.z
    }

    fn check_args(&self, x: &DVector<f64>, u: &DVector<f64>, xi: &DVector<f64>) -> Result<()> {
        check_dim("state", self.n(), x.len())?;
        check_dim("input", self.m(), u.len())?;
        check_dim("parameter vector", self.z(), xi.len())
    }

    /// `A(xi) x + B(xi) u`.
    pub fn step(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        xi: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check_args(x, u, xi)?;
        Ok(self.coeffs.apply_state(xi.as_slice(), x.as_slice(), u))
    }

    /// `C(xi) x + D(xi) u`.
    pub fn output(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        xi: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check_args(x, u, xi)?;
        Ok(self.coeffs.apply_output(xi.as_slice(), x.as_slice(), u))
    }
}

/// `[row_1(A), ..., row_n(A), row_1(B), ..., row_n(B)]`.
pub fn row_vector(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DVector<f64> {
    let n = a.nrows();
    let mut out = Vec::with_capacity(a.len() + b.len());
    for i in 0..n {
        out.extend(a.row(i).iter());
    }
    for i in 0..b.nrows() {
        out.extend(b.row(i).iter());
    }
    DVector::from_vec(out)
}

/// Inverse of [`row_vector`].
pub fn from_row_vector(r: &DVector<f64>, n: usize, m: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_dim("row vector", (n + m) * n, r.len())?;
    let a = DMatrix::from_row_slice(n, n, &r.as_slice()[..n * n]);
    let b = DMatrix::from_row_slice(n, m, &r.as_slice()[n * n..]);
    Ok((a, b))
}

/// `E[r(xi)^T r(xi)]` for the row-vectorized coefficient pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    n: usize,
    m: usize,
    g: DMatrix<f64>,
}

impl GramMatrix {
    /// Validates size and PSD-ness (relative tolerance `1e-8`).
    pub fn new(n: usize, m: usize, g: DMatrix<f64>) -> Result<Self> {
        let size = (n + m) * n;
        if g.shape() != (size, size) {
            return Err(Error::Input(format!(
                "Gram matrix for n={n}, m={m} must be {size}x{size}, got {}x{}",
                g.nrows(),
                g.ncols()
            )));
        }
        let asym = asymmetry(&g);
        let scale = g.amax().max(1.0);
        if asym > 1e-9 * scale {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        let g = symmetrize(&g);
        let eig = nalgebra::SymmetricEigen::new(g.clone());
        let max = eig.eigenvalues.max().max(1.0);
        let min = eig.eigenvalues.min();
        if min < -1e-8 * max {
            return Err(Error::NotPsd {
                what: "Gram matrix",
                min_eig: min,
            });
        }
        Ok(Self { n, m, g })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }
}

/// Exact Gram for affine maps:
/// `r0'r0 + sum_j mu_j (r0'r_j + r_j'r0) + sum_jl (S_jl + mu_j mu_l) r_j'r_l`.
pub fn gram_closed_form(
    coeffs: &AffineCoefficients,
    model: &DistributionModel,
) -> Result<GramMatrix> {
    check_dim("distribution model", coeffs.z, model.dim())?;
    let (r0, rj) = coeffs.row_terms();
    let mu = model.mean();
    let s = model.covariance();
    let size = r0.len();
    let mut g = DMatrix::zeros(size, size);
    g.ger(1.0, &r0, &r0, 1.0);
    for j in 0..coeffs.z {
        if mu[j] != 0.0 {
            g.ger(mu[j], &r0, &rj[j], 1.0);
            g.ger(mu[j], &rj[j], &r0, 1.0);
        }
        for l in 0..coeffs.z {
            let w = s[(j, l)] + mu[j] * mu[l];
            if w != 0.0 {
                g.ger(w, &rj[j], &rj[l], 1.0);
            }
        }
    }
    GramMatrix::new(coeffs.n, coeffs.m, symmetrize(&g))
}

/// Sample mean of `r(xi)^T r(xi)` over the given parameter values.
pub fn gram_empirical(coeffs: &AffineCoefficients, xi_samples: &[DVector<f64>]) -> Result<GramMatrix> {
    if xi_samples.is_empty() {
        return Err(Error::Input("empirical Gram needs at least one sample".into()));
    }
    let size = (coeffs.n + coeffs.m) * coeffs.n;
    let mut g = DMatrix::zeros(size, size);
    for xi in xi_samples {
        let (a, b) = coeffs.eval_ab(xi)?;
        let r = row_vector(&a, &b);
        g.ger(1.0, &r, &r, 1.0);
    }
    g /= xi_samples.len() as f64;
    GramMatrix::new(coeffs.n, coeffs.m, symmetrize(&g))
}

/// Empirical Gram over `n_samples` Gaussian draws from `model`; seed-deterministic.
pub fn gram_monte_carlo(
    coeffs: &AffineCoefficients,
    model: &DistributionModel,
    n_samples: usize,
    seed: u64,
) -> Result<GramMatrix> {
    if n_samples == 0 {
        return Err(Error::Input("n_samples must be at least 1".into()));
    }
    check_dim("distribution model", coeffs.z, model.dim())?;
    let sampler = model.sampler()?;
    if sampler.is_degenerate() {
        return gram_empirical(coeffs, std::slice::from_ref(model.mean()));
    }
    let size = (coeffs.n + coeffs.m) * coeffs.n;
    let mut rng = rng_from_seed(seed);
    let mut g = DMatrix::zeros(size, size);
    for _ in 0..n_samples {
        let xi = sampler.sample(&mut rng);
        let (a, b) = coeffs.eval_ab(&xi)?;
        let r = row_vector(&a, &b);
        g.ger(1.0, &r, &r, 1.0);
    }
    g /= n_samples as f64;
    GramMatrix::new(coeffs.n, coeffs.m, symmetrize(&g))
}
