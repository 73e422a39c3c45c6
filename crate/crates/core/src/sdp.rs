//! Small dense LMI engine.
//!
//! For an affine map `M(v) = M0 + sum_i v_i M_i` of symmetric matrices,
//! [`max_min_eig`] maximizes `lambda_min(M(v))` over `v`. It is the
//! epigraph problem `max t s.t. M(v) - t I >= 0`, solved by a log-det
//! barrier path-following Newton method:
//!
//! ```text
//! phi_s(v, t) = -s t - log det(M(v) - t I)
//! ```
//!
//! Each stage centers `phi_s` with damped Newton steps and then grows `s`.
//! At a center `W = S^{-1} / tr(S^{-1})` is dual feasible (`tr W = 1`,
//! `tr(M_i W) = 0`), so `tr(M0 W)` bounds the optimum from above; the
//! reported `residual` is `max_i |tr(M_i W)|`, how far the certificate is
//! from exact dual feasibility.
//!
//! [`max_min_eig_within`] adds a second affine map `D(v)` as a domain: the
//! barrier gains `-log det D(v)`, so iterates stay in `{v : D(v) > 0}`,
//! but `D` does not enter the objective. Synthesis uses it to cap `tr X`.
//!
//! Sizes here are tens of rows and a few dozen variables, so everything is
//! dense.

use std::ops::AddAssign;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::linalg::{asymmetry, symmetrize};
use crate::{Error, Result};

/// Ascending eigenvalues and matching orthonormal eigenvectors (as columns).
pub fn eig_sym(s: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !s.is_square() {
        return Err(Error::Input("eig_sym needs a square matrix".into()));
    }
    let asym = asymmetry(s);
    if asym > 1e-9 * s.amax().max(1.0) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let n = s.nrows();
    let eig = SymmetricEigen::new(symmetrize(s));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// `v -> M0 + sum_i v_i M_i` over symmetric matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMatrixMap {
    m0: DMatrix<f64>,
    terms: Vec<DMatrix<f64>>,
}

impl AffineMatrixMap {
    /// Inputs are symmetrized; asymmetry beyond `1e-9` (relative to the
    /// largest entry, floored at 1) is rejected.
    pub fn new(m0: DMatrix<f64>, terms: Vec<DMatrix<f64>>) -> Result<Self> {
        let size = m0.nrows();
        let check = |m: &DMatrix<f64>| -> Result<DMatrix<f64>> {
            if m.shape() != (size, size) {
                return Err(Error::Input(format!(
                    "affine map term must be {size}x{size}, got {}x{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            let asym = asymmetry(m);
            if asym > 1e-9 * m.amax().max(1.0) {
                return Err(Error::NotSymmetric { asymmetry: asym });
            }
            Ok(symmetrize(m))
        };
        let m0 = check(&m0)?;
        let terms = terms.iter().map(check).collect::<Result<Vec<_>>>()?;
        Ok(Self { m0, terms })
    }

    /// Builds the map from a linear matrix function evaluated on the unit
    /// vectors, plus the constant part.
    pub fn from_linear(
        m0: DMatrix<f64>,
        var_count: usize,
        mut linear: impl FnMut(&DVector<f64>) -> DMatrix<f64>,
    ) -> Result<Self> {
        let terms = (0..var_count)
            .map(|i| {
                let mut e = DVector::zeros(var_count);
                e[i] = 1.0;
                linear(&e)
            })
            .collect();
        Self::new(m0, terms)
    }

    pub fn size(&self) -> usize {
        self.m0.nrows()
    }

    pub fn var_count(&self) -> usize {
        self.terms.len()
    }

    pub fn constant(&self) -> &DMatrix<f64> {
        &self.m0
    }

    pub fn term(&self, i: usize) -> &DMatrix<f64> {
        &self.terms[i]
    }

    pub fn eval(&self, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        crate::error::check_dim("LMI variable vector", self.var_count(), v.len())?;
        let mut out = self.m0.clone();
        for (t, &x) in self.terms.iter().zip(v.iter()) {
            if x != 0.0 {
                out += t * x;
            }
        }
        Ok(out)
    }

    fn eval_unchecked(&self, v: nalgebra::DVectorView<'_, f64>) -> DMatrix<f64> {
        let mut out = self.m0.clone();
        for (t, &x) in self.terms.iter().zip(v.iter()) {
            if x != 0.0 {
                out += t * x;
            }
        }
        out
    }

    /// `c * M(v)`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            m0: &self.m0 * c,
            terms: self.terms.iter().map(|t| t * c).collect(),
        }
    }

    /// Block-diagonal stacking of maps over the same variables.
    pub fn block_diag(parts: &[&AffineMatrixMap]) -> Result<Self> {
        let q = parts.first().map_or(0, |p| p.var_count());
        if parts.iter().any(|p| p.var_count() != q) {
            return Err(Error::Input("block_diag parts must share variables".into()));
        }
        let size: usize = parts.iter().map(|p| p.size()).sum();
        let stack = |pick: &dyn Fn(&AffineMatrixMap) -> &DMatrix<f64>| {
            let mut out = DMatrix::zeros(size, size);
            let mut off = 0;
            for p in parts {
                let s = p.size();
                out.view_mut((off, off), (s, s)).copy_from(pick(p));
                off += s;
            }
            out
        };
        let m0 = stack(&|p| &p.m0);
        let terms = (0..q).map(|i| stack(&|p| &p.terms[i])).collect();
        Ok(Self { m0, terms })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    /// Duality gap below tolerance.
    Converged,
    /// `t` grew past the unboundedness threshold.
    Unbounded,
    /// Stopped early: the achieved value already reached `stop_above`.
    ReachedTarget,
    /// Stopped early: the dual bound fell below `stop_below`.
    BelowTarget,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct SdpOptions {
    /// Newton decrement threshold for centering, relative to `max(1, |phi|)`.
    pub grad_tol: f64,
    pub max_newton: usize,
    pub max_stages: usize,
    /// Target duality gap, relative to `max(1, |M0|_F)`.
    pub gap_tol: f64,
    /// Barrier parameter growth per stage.
    pub barrier_growth: f64,
    /// `t` beyond this (relative to `max(1, |M0|_F)`) is reported unbounded.
    pub unbounded_threshold: f64,
    pub stop_above: Option<f64>,
    pub stop_below: Option<f64>,
    pub start: Option<DVector<f64>>,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-9,
            max_newton: 200,
            max_stages: 30,
            gap_tol: 1e-8,
            barrier_growth: 10.0,
            unbounded_threshold: 1e8,
            stop_above: None,
            stop_below: None,
            start: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SdpResult {
    pub v_star: DVector<f64>,
    /// `lambda_min(M(v_star))`, recomputed from the returned point.
    pub t_star: f64,
    /// Dual upper bound on the optimum from the last centered point.
    pub upper_bound: f64,
    pub iterations: usize,
    pub converged: bool,
    pub status: SdpStatus,
    /// Dual-feasibility defect of the certificate behind `upper_bound`.
    pub residual: f64,
}

struct Barrier<'a> {
    map: &'a AffineMatrixMap,
    domain: Option<&'a AffineMatrixMap>,
}

struct Eval {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
    bound: f64,
    residual: f64,
}

/// `-log det S` and `S^{-1}`, or `None` outside the cone.
fn neg_log_det(s: &DMatrix<f64>, want_inverse: bool) -> Option<(f64, Option<DMatrix<f64>>)> {
    let n = s.nrows();
    let chol = Cholesky::new(s.clone())?;
    let l = chol.l_dirty();
    let mut ld = 0.0;
    for d in 0..n {
        let x = l[(d, d)];
        if !(x > 0.0 && x.is_finite()) {
            return None;
        }
        ld += x.ln();
    }
    let inv = want_inverse.then(|| symmetrize(&chol.inverse()));
    Some((-2.0 * ld, inv))
}

/// Adds `tr(A_i A_j)` for `A_i = S^{-1} M_i` into `hess`, and `-tr(A_i)` into `grad`.
fn accumulate(prods: &[DMatrix<f64>], grad: &mut DVector<f64>, hess: &mut DMatrix<f64>) {
    let k = prods.len();
    let transposed: Vec<DMatrix<f64>> = prods.iter().map(|p| p.transpose()).collect();
    for i in 0..k {
        grad[i] -= prods[i].trace();
        for j in i..k {
            let h = prods[i].dot(&transposed[j]);
            hess[(i, j)] += h;
            if i != j {
                hess[(j, i)] += h;
            }
        }
    }
}

impl Barrier<'_> {
    fn q(&self) -> usize {
        self.map.var_count()
    }

    fn slack(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let q = self.q();
        let mut s = self.map.eval_unchecked(z.rows(0, q));
        for d in 0..s.nrows() {
            s[(d, d)] -= z[q];
        }
        s
    }

    fn value(&self, z: &DVector<f64>, s_par: f64) -> Option<f64> {
        let q = self.q();
        let (mut val, _) = neg_log_det(&self.slack(z), false)?;
        if let Some(dom) = self.domain {
            val += neg_log_det(&dom.eval_unchecked(z.rows(0, q)), false)?.0;
        }
        Some(val - s_par * z[q])
    }

    fn eval(&self, z: &DVector<f64>, s_par: f64) -> Option<Eval> {
        let q = self.q();
        let (nld, s_inv) = neg_log_det(&self.slack(z), true)?;
        let s_inv = s_inv.unwrap();
        let mut value = nld - s_par * z[q];
        let mut grad = DVector::zeros(q + 1);
        let mut hess = DMatrix::zeros(q + 1, q + 1);
        let mut prods: Vec<DMatrix<f64>> = self.map.terms.iter().map(|m| &s_inv * m).collect();
        prods.push(-&s_inv);
        accumulate(&prods, &mut grad, &mut hess);
        grad[q] -= s_par;

        // Dual certificate: W = S^{-1}/tr(S^{-1}), W_d = D^{-1}/tr(S^{-1}).
        let tr = s_inv.trace();
        let mut bound = self.map.m0.dot(&s_inv) / tr;
        let mut dual: Vec<f64> = prods[..q].iter().map(|p| p.trace() / tr).collect();

        if let Some(dom) = self.domain {
            let (dnld, d_inv) = neg_log_det(&dom.eval_unchecked(z.rows(0, q)), true)?;
            let d_inv = d_inv.unwrap();
            value += dnld;
            let dprods: Vec<DMatrix<f64>> = dom.terms.iter().map(|m| &d_inv * m).collect();
            let mut dgrad = DVector::zeros(q);
            let mut dhess = DMatrix::zeros(q, q);
            accumulate(&dprods, &mut dgrad, &mut dhess);
            grad.rows_mut(0, q).add_assign(&dgrad);
            hess.view_mut((0, 0), (q, q)).add_assign(&dhess);
            bound += dom.m0.dot(&d_inv) / tr;
            for (d, p) in dual.iter_mut().zip(&dprods) {
                *d += p.trace() / tr;
            }
        }
        let residual = dual.iter().fold(0.0f64, |a, &r| a.max(r.abs()));
        Some(Eval {
            value,
            grad,
            hess,
            bound,
            residual,
        })
    }
}

/// Solves `H d = -g` after Jacobi scaling, so variables whose curvature
/// differs by many orders of magnitude are treated alike.
fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let dim = hess.nrows();
    let d: Vec<f64> = (0..dim)
        .map(|i| {
            let h = hess[(i, i)];
            if h > 0.0 && h.is_finite() {
                1.0 / h.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(dim, dim, |i, j| hess[(i, j)] * d[i] * d[j]);
    let rhs = DVector::from_fn(dim, |i, _| -grad[i] * d[i]);
    let mut reg = 1e-14;
    for _ in 0..12 {
        let mut h = scaled.clone();
        for i in 0..dim {
            h[(i, i)] += reg;
        }
        if let Some(ch) = Cholesky::new(h) {
            let mut step = ch.solve(&rhs);
            for i in 0..dim {
                step[i] *= d[i];
            }
            if step.iter().all(|x| x.is_finite()) {
                return Some(step);
            }
        }
        reg *= 100.0;
    }
    None
}

/// Maximizes `lambda_min(M(v))`.
///
/// Deterministic. An unbounded objective comes back with
/// `status == Unbounded` (and `t_star` at the last iterate) rather than as
/// an error; hitting the iteration budget returns the best iterate with
/// `converged == false`.
pub fn max_min_eig(map: &AffineMatrixMap, opts: &SdpOptions) -> Result<SdpResult> {
    solve(map, None, opts)
}

/// [`max_min_eig`] restricted to `{v : D(v) >= 0}`.
///
/// `domain` must be strictly feasible at the start point (zero unless
/// `opts.start` is set). Its eigenvalues do not enter the objective.
pub fn max_min_eig_within(
    map: &AffineMatrixMap,
    domain: &AffineMatrixMap,
    opts: &SdpOptions,
) -> Result<SdpResult> {
    if domain.var_count() != map.var_count() {
        return Err(Error::Input("domain and map must share variables".into()));
    }
    solve(map, Some(domain), opts)
}

fn solve(
    map: &AffineMatrixMap,
    domain: Option<&AffineMatrixMap>,
    opts: &SdpOptions,
) -> Result<SdpResult> {
    let q = map.var_count();
    let size = map.size();
    if size == 0 {
        return Err(Error::Input("empty LMI".into()));
    }
    let scale = map.m0.norm().max(1.0);
    let barrier = Barrier { map, domain };

    let v0 = match &opts.start {
        Some(v) => {
            crate::error::check_dim("SDP start point", q, v.len())?;
            v.clone()
        }
        None => DVector::zeros(q),
    };
    if let Some(dom) = domain {
        if !(crate::linalg::min_eig(&dom.eval(&v0)?) > 0.0) {
            return Err(Error::Input(
                "start point is not strictly inside the domain".into(),
            ));
        }
    }
    let m_start = map.eval(&v0)?;
    let lam0 = crate::linalg::min_eig(&m_start);
    if !lam0.is_finite() {
        return Err(Error::Solver("non-finite map value at start point".into()));
    }
    let mut z = v0.clone().resize_vertically(q + 1, 0.0);
    // Start one "start-point scale" below lambda_min so every eigenvalue of
    // the slack is of that order and the first center is close.
    let spread = scale.max(m_start.norm());
    z[q] = lam0 - spread;

    let mut s_par = size as f64 / spread;
    let mut iterations = 0;
    let mut status = SdpStatus::IterationLimit;
    let mut upper_bound = f64::INFINITY;
    let mut residual = f64::INFINITY;

    'stages: for _ in 0..opts.max_stages {
        let mut centered = false;
        for _ in 0..opts.max_newton {
            let ev = barrier
                .eval(&z, s_par)
                .ok_or_else(|| Error::Solver("iterate left the barrier domain".into()))?;
            let dir = newton_direction(&ev.hess, &ev.grad)
                .ok_or_else(|| Error::Solver("singular Newton system".into()))?;
            let slope = ev.grad.dot(&dir);
            if -slope <= opts.grad_tol * ev.value.abs().max(1.0) {
                centered = true;
                upper_bound = ev.bound;
                residual = ev.residual;
                break;
            }
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-8 {
                let trial = &z + &dir * alpha;
                if let Some(val) = barrier.value(&trial, s_par) {
                    if val <= ev.value + 0.25 * alpha * slope {
                        z = trial;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            iterations += 1;
            if !accepted {
                // Stalled at working precision.
                centered = true;
                upper_bound = ev.bound;
                residual = ev.residual;
                break;
            }
            if opts.stop_above.is_some_and(|target| z[q] >= target) {
                status = SdpStatus::ReachedTarget;
                break 'stages;
            }
            if z[q] > opts.unbounded_threshold * scale {
                status = SdpStatus::Unbounded;
                break 'stages;
            }
        }
        if !centered {
            break;
        }
        if opts
            .stop_below
            .is_some_and(|target| upper_bound < target && residual <= 1e-6)
        {
            status = SdpStatus::BelowTarget;
            break;
        }
        if size as f64 / s_par <= opts.gap_tol * scale.max(z[q].abs()) {
            status = SdpStatus::Converged;
            break;
        }
        s_par *= opts.barrier_growth;
    }

    let v_star = z.rows(0, q).into_owned();
    let t_star = crate::linalg::min_eig(&map.eval(&v_star)?);
    Ok(SdpResult {
        v_star,
        t_star,
        upper_bound: upper_bound.max(t_star),
        iterations,
        converged: status == SdpStatus::Converged,
        status,
        residual,
    })
}

/// Feasibility of `M(v) >= -margin I`, with a witness when feasible.
pub fn is_feasible(
    map: &AffineMatrixMap,
    margin: f64,
    opts: &SdpOptions,
) -> Result<(bool, Option<DVector<f64>>, SdpResult)> {
    feasibility(map, None, margin, opts)
}

/// [`is_feasible`] over `{v : D(v) >= 0}`.
pub fn is_feasible_within(
    map: &AffineMatrixMap,
    domain: &AffineMatrixMap,
    margin: f64,
    opts: &SdpOptions,
) -> Result<(bool, Option<DVector<f64>>, SdpResult)> {
    feasibility(map, Some(domain), margin, opts)
}

fn feasibility(
    map: &AffineMatrixMap,
    domain: Option<&AffineMatrixMap>,
    margin: f64,
    opts: &SdpOptions,
) -> Result<(bool, Option<DVector<f64>>, SdpResult)> {
    if margin < 0.0 {
        return Err(Error::Input("feasibility margin must be nonnegative".into()));
    }
    // Any iterate with t >= -margin already certifies feasibility, and a
    // dual bound below -margin certifies the opposite.
    let opts = SdpOptions {
        stop_above: Some(opts.stop_above.map_or(-margin, |s| s.min(-margin))),
        stop_below: None,
        ..opts.clone()
    };
    let res = match domain {
        Some(d) => max_min_eig_within(map, d, &opts)?,
        None => max_min_eig(map, &opts)?,
    };
    let feasible = res.status == SdpStatus::Unbounded || res.t_star >= -margin;
    let witness = feasible.then(|| res.v_star.clone());
    Ok((feasible, witness, res))
}
