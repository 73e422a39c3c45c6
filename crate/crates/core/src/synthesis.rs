//! Gain synthesis and analysis for second-moment exponential stability.
//!
//! With `Gbar^T Gbar = E[r^T r]`, `r = [row(A), row(B)]`, and the stacked
//! column blocks `GpA`, `GpB` of `Gbar`, a gain `F = Y X^{-1}` achieves
//! convergence rate `lambda` for the state feedback loop whenever
//!
//! ```text
//! [ lambda^2 X        *     ]
//! [ GpA X + GpB Y   X ⊗ I   ]  >= 0,   X >= I.
//! ```
//!
//! The normalization `X >= I` removes the trivial solution of the
//! homogeneous inequality. [`synthesize`] bisects on `lambda^2`.
//!
//! For a fixed gain the Lyapunov condition
//! `E[lambda^2 P - Acl^T P Acl] >= 0` is the LMI
//! `lambda^2 P - Abar^T (P ⊗ I) Abar >= 0` with `Abar = GpA + GpB F`
//! ([`analyze`]).

use nalgebra::{Cholesky, Complex, DMatrix, DVector};

use crate::linalg::{kron_identity, min_eig};
use crate::sdp::{eig_sym, is_feasible_within, max_min_eig_within, AffineMatrixMap, SdpOptions};
use crate::system::GramMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GramFactor {
    n: usize,
    m: usize,
    gbar: DMatrix<f64>,
    gpa: DMatrix<f64>,
    gpb: DMatrix<f64>,
}

impl GramFactor {
    /// Wraps an explicit factor `Gbar` (`nbar x (n+m)n`).
    pub fn from_gbar(n: usize, m: usize, gbar: DMatrix<f64>) -> Result<Self> {
        let width = (n + m) * n;
        if gbar.ncols() != width || gbar.nrows() == 0 {
            return Err(Error::Input(format!(
                "Gbar must have {width} columns and at least one row, got {}x{}",
                gbar.nrows(),
                gbar.ncols()
            )));
        }
        let nbar = gbar.nrows();
        let mut gpa = DMatrix::zeros(n * nbar, n);
        let mut gpb = DMatrix::zeros(n * nbar, m);
        for i in 0..n {
            gpa.view_mut((i * nbar, 0), (nbar, n))
                .copy_from(&gbar.view((0, i * n), (nbar, n)));
            gpb.view_mut((i * nbar, 0), (nbar, m))
                .copy_from(&gbar.view((0, n * n + i * m), (nbar, m)));
        }
        Ok(Self {
            n,
            m,
            gbar,
            gpa,
            gpb,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn nbar(&self) -> usize {
        self.gbar.nrows()
    }
    pub fn gbar(&self) -> &DMatrix<f64> {
        &self.gbar
    }
    /// `[Gbar_A1; ...; Gbar_An]`.
    pub fn gpa(&self) -> &DMatrix<f64> {
        &self.gpa
    }
    /// `[Gbar_B1; ...; Gbar_Bn]`.
    pub fn gpb(&self) -> &DMatrix<f64> {
        &self.gpb
    }

    /// `GpA + GpB F`.
    pub fn closed_loop_stack(&self, f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if f.shape() != (self.m, self.n) {
            return Err(Error::Input(format!(
                "gain must be {}x{}, got {}x{}",
                self.m,
                self.n,
                f.nrows(),
                f.ncols()
            )));
        }
        Ok(&self.gpa + &self.gpb * f)
    }

    /// `Abar^T (P ⊗ I) Abar`, which equals `E[Acl^T P Acl]`.
    pub fn expected_quadratic(&self, f: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let abar = self.closed_loop_stack(f)?;
        Ok(abar.transpose() * kron_identity(p, self.nbar()) * &abar)
    }
}

/// Eigen-factorizes the Gram matrix, keeping eigenpairs above
/// `rank_tol * lambda_max`.
pub fn factorize_gram(gram: &GramMatrix, rank_tol: f64) -> Result<GramFactor> {
    let (vals, vecs) = eig_sym(gram.matrix())?;
    let lmax = vals.max();
    if !(lmax > 0.0) {
        return Err(Error::Input("Gram matrix is zero".into()));
    }
    let lmin = vals.min();
    if lmin < -1e-8 * lmax.max(1.0) {
        return Err(Error::NotPsd {
            what: "Gram matrix",
            min_eig: lmin,
        });
    }
    let kept: Vec<usize> = (0..vals.len())
        .rev()
        .filter(|&i| vals[i] > rank_tol * lmax)
        .collect();
    let width = vals.len();
    let mut gbar = DMatrix::zeros(kept.len(), width);
    for (row, &i) in kept.iter().enumerate() {
        let s = vals[i].sqrt();
        for c in 0..width {
            gbar[(row, c)] = s * vecs[(c, i)];
        }
    }
    GramFactor::from_gbar(gram.n(), gram.m(), gbar)
}

pub const DEFAULT_RANK_TOL: f64 = 1e-9;

fn sym_var_count(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Symmetric matrix from its upper triangle, row by row.
pub fn unpack_sym(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            x[(i, j)] = v[k];
            x[(j, i)] = v[k];
            k += 1;
        }
    }
    x
}

pub fn pack_sym(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows();
    let mut out = Vec::with_capacity(sym_var_count(n));
    for i in 0..n {
        for j in i..n {
            out.push(x[(i, j)]);
        }
    }
    out
}

/// Splits the synthesis variable vector into `(X, Y)`.
pub fn unpack_xy(v: &DVector<f64>, n: usize, m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = sym_var_count(n);
    let x = unpack_sym(&v.as_slice()[..k], n);
    let y = DMatrix::from_row_slice(m, n, &v.as_slice()[k..k + m * n]);
    (x, y)
}

pub fn pack_xy(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DVector<f64> {
    let mut out = pack_sym(x);
    for i in 0..y.nrows() {
        out.extend(y.row(i).iter());
    }
    DVector::from_vec(out)
}

fn block2(tl: &DMatrix<f64>, bl: &DMatrix<f64>, br: &DMatrix<f64>) -> DMatrix<f64> {
    let a = tl.nrows();
    let b = br.nrows();
    let mut out = DMatrix::zeros(a + b, a + b);
    out.view_mut((0, 0), (a, a)).copy_from(tl);
    out.view_mut((a, 0), (b, a)).copy_from(bl);
    out.view_mut((0, a), (a, b)).copy_from(&bl.transpose());
    out.view_mut((a, a), (b, b)).copy_from(br);
    out
}

fn diag_join(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ra, rb) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(ra + rb, ra + rb);
    out.view_mut((0, 0), (ra, ra)).copy_from(a);
    out.view_mut((ra, ra), (rb, rb)).copy_from(b);
    out
}

/// The synthesis block `[lambda^2 X, *; GpA X + GpB Y, X ⊗ I]`.
pub fn synthesis_block(
    factor: &GramFactor,
    lambda: f64,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> DMatrix<f64> {
    let t = factor.gpa() * x + factor.gpb() * y;
    block2(&(x * (lambda * lambda)), &t, &kron_identity(x, factor.nbar()))
}

/// Affine map over `(X, Y)` whose value is the synthesis block stacked
/// block-diagonally with `X - I`.
pub fn build_synthesis_lmi(factor: &GramFactor, lambda: f64) -> Result<AffineMatrixMap> {
    if !(lambda > 0.0) {
        return Err(Error::Input("lambda must be positive".into()));
    }
    let (n, m) = (factor.n(), factor.m());
    let q = sym_var_count(n) + m * n;
    let main = n + n * factor.nbar();
    let m0 = diag_join(&DMatrix::zeros(main, main), &-DMatrix::identity(n, n));
    AffineMatrixMap::from_linear(m0, q, |v| {
        let (x, y) = unpack_xy(v, n, m);
        diag_join(&synthesis_block(factor, lambda, &x, &y), &x)
    })
}

/// `{v : n * cap - tr(X(v)) >= 0}` for a packed symmetric `X` leading `q`
/// variables.
///
/// Both LMIs are homogeneous in their matrix variables apart from the
/// `X >= I` normalization, so without a cap a barrier method can chase
/// feasibility along ever larger, ever worse conditioned `X`. Capping the
/// trace at `n * cap` bounds `cond(X)` by `n * cap` and keeps every solve
/// bounded.
pub fn trace_cap_domain(n: usize, q: usize, cap: f64) -> Result<AffineMatrixMap> {
    if !(cap >= 1.0) {
        return Err(Error::Input("condition cap must be at least 1".into()));
    }
    let m0 = DMatrix::from_element(1, 1, n as f64 * cap);
    AffineMatrixMap::from_linear(m0, q, |v| {
        let x = unpack_sym(&v.as_slice()[..sym_var_count(n)], n);
        DMatrix::from_element(1, 1, -x.trace())
    })
}

/// Starts the barrier in the middle of the capped domain unless the caller
/// chose a start point: near the origin the first centering has to climb
/// many orders of magnitude in the scale of `X`.
fn centered_start(sdp: &SdpOptions, start: impl FnOnce() -> DVector<f64>) -> SdpOptions {
    SdpOptions {
        start: Some(sdp.start.clone().unwrap_or_else(start)),
        ..sdp.clone()
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    /// Bisection stops once the `lambda^2` bracket is narrower than this.
    pub tol_lambda2: f64,
    pub eps_feas: f64,
    /// Upper end for [`analyze`].
    pub lambda_max: f64,
    /// Largest admissible `tr(X) / n` (and `tr(P) / n`); see
    /// [`trace_cap_domain`].
    pub max_condition: f64,
    pub sdp: SdpOptions,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            lambda_lo: 1e-4,
            lambda_hi: 1.0 - 1e-6,
            tol_lambda2: 1e-5,
            eps_feas: 1e-8,
            lambda_max: 10.0,
            max_condition: 1e12,
            sdp: SdpOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub lambda_star: f64,
    pub nbar: usize,
    /// `(lambda, feasible)` for every LMI solved, in order.
    pub trace: Vec<(f64, bool)>,
    /// `lambda_min` of the synthesis block at `(lambda_star, X, Y)`.
    pub lmi_margin: f64,
    pub x_condition: f64,
}

#[derive(Debug, Clone)]
pub struct AnalysisResult {
    pub p: DMatrix<f64>,
    pub lambda_star: f64,
    pub trace: Vec<(f64, bool)>,
}

/// Smallest feasible `lambda`, its witness and the `(lambda, feasible)` trace.
type Bisection<W> = (f64, W, Vec<(f64, bool)>);

/// Bisection on `lambda^2` over `[lo, hi]` with a monotone oracle.
///
/// Returns the smallest bracketed feasible `lambda`, its witness and the
/// verdict trace; `None` when `hi` is infeasible.
fn bisect<W>(
    lo: f64,
    hi: f64,
    tol_lambda2: f64,
    mut feasible: impl FnMut(f64) -> Result<Option<W>>,
) -> Result<Option<Bisection<W>>> {
    let mut trace = Vec::new();
    let Some(mut best) = feasible(hi)? else {
        trace.push((hi, false));
        return Ok(None);
    };
    trace.push((hi, true));
    if let Some(w) = feasible(lo)? {
        trace.push((lo, true));
        return Ok(Some((lo, w, trace)));
    }
    trace.push((lo, false));
    let (mut lo2, mut hi2) = (lo * lo, hi * hi);
    while hi2 - lo2 > tol_lambda2 {
        let mid2 = 0.5 * (lo2 + hi2);
        let mid = mid2.sqrt();
        match feasible(mid)? {
            Some(w) => {
                best = w;
                hi2 = mid2;
                trace.push((mid, true));
            }
            None => {
                lo2 = mid2;
                trace.push((mid, false));
            }
        }
    }
    Ok(Some((hi2.sqrt(), best, trace)))
}

fn condition_spd(x: &DMatrix<f64>) -> f64 {
    let (vals, _) = match eig_sym(x) {
        Ok(e) => e,
        Err(_) => return f64::INFINITY,
    };
    let (lo, hi) = (vals.min(), vals.max());
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// `F = Y X^{-1}` through a Cholesky solve of `X F^T = Y^T`.
fn recover_gain(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ch = Cholesky::new(x.clone()).ok_or(Error::Factorization {
        what: "X (gain recovery)",
    })?;
    Ok(ch.solve(&y.transpose()).transpose())
}

fn synthesis_setup(
    factor: &GramFactor,
    opts: &SynthesisOptions,
) -> Result<(AffineMatrixMap, SdpOptions)> {
    let (n, m) = (factor.n(), factor.m());
    let domain = trace_cap_domain(n, sym_var_count(n) + m * n, opts.max_condition)?;
    let sdp = centered_start(&opts.sdp, || {
        pack_xy(&(DMatrix::identity(n, n) * (0.5 * opts.max_condition)), &DMatrix::zeros(m, n))
    });
    Ok((domain, sdp))
}

fn analysis_setup(n: usize, opts: &SynthesisOptions) -> Result<(AffineMatrixMap, SdpOptions)> {
    let domain = trace_cap_domain(n, sym_var_count(n), opts.max_condition)?;
    let sdp = centered_start(&opts.sdp, || {
        DVector::from_vec(pack_sym(&(DMatrix::identity(n, n) * (0.5 * opts.max_condition))))
    });
    Ok((domain, sdp))
}

/// The single verdict [`synthesize`] bisects on: is rate `lambda`
/// achievable? Returns the packed `(X, Y)` witness when it is.
pub fn synthesis_feasible(
    factor: &GramFactor,
    lambda: f64,
    opts: &SynthesisOptions,
) -> Result<Option<DVector<f64>>> {
    let (domain, sdp) = synthesis_setup(factor, opts)?;
    let map = build_synthesis_lmi(factor, lambda)?;
    let (ok, witness, _) = is_feasible_within(&map, &domain, opts.eps_feas, &sdp)?;
    Ok(if ok { witness } else { None })
}

/// The verdict [`analyze`] bisects on; returns the packed `P` witness.
pub fn analysis_feasible(
    factor: &GramFactor,
    f: &DMatrix<f64>,
    lambda: f64,
    opts: &SynthesisOptions,
) -> Result<Option<DVector<f64>>> {
    let (domain, sdp) = analysis_setup(factor.n(), opts)?;
    let map = build_analysis_lmi(factor, f, lambda)?;
    let (ok, witness, _) = is_feasible_within(&map, &domain, opts.eps_feas, &sdp)?;
    Ok(if ok { witness } else { None })
}

/// Minimal-`lambda` state feedback gain for the factored Gram.
pub fn synthesize(factor: &GramFactor, opts: &SynthesisOptions) -> Result<SynthesisResult> {
    if !(0.0 < opts.lambda_lo && opts.lambda_lo < opts.lambda_hi) {
        return Err(Error::Input("need 0 < lambda_lo < lambda_hi".into()));
    }
    let (n, m) = (factor.n(), factor.m());
    let (domain, sdp) = synthesis_setup(factor, opts)?;
    let found = bisect(opts.lambda_lo, opts.lambda_hi, opts.tol_lambda2, |lambda| {
        let map = build_synthesis_lmi(factor, lambda)?;
        let (ok, witness, _) = is_feasible_within(&map, &domain, opts.eps_feas, &sdp)?;
        Ok(if ok { witness } else { None })
    })?;
    let Some((lambda_star, witness, trace)) = found else {
        return Err(Error::NotStabilizable {
            lambda: opts.lambda_hi,
        });
    };

    // The bisection witness is wherever the solver first crossed the
    // margin; solve to optimality at lambda_star for a centered one.
    let map = build_synthesis_lmi(factor, lambda_star)?;
    let witness = match max_min_eig_within(&map, &domain, &sdp) {
        Ok(res) if res.t_star >= -opts.eps_feas => res.v_star,
        Ok(res) => {
            log::debug!(
                "optimal witness margin {:e} below tolerance; keeping bisection witness",
                res.t_star
            );
            witness
        }
        Err(e) => {
            log::debug!("optimal witness solve failed: {e}");
            witness
        }
    };
    let (x, y) = unpack_xy(&witness, n, m);
    // Report X with lambda_min(X) = 1; F is invariant to the scale.
    let lo = min_eig(&x);
    let (x, y) = if lo > 0.0 { (x / lo, y / lo) } else { (x, y) };

    let x_condition = condition_spd(&x);
    if x_condition > 1e8 {
        log::warn!("X is poorly conditioned (cond {x_condition:e}); recovered gain may be inaccurate");
    } else {
        log::debug!("cond(X) = {x_condition:e}");
    }
    let f = recover_gain(&x, &y)?;
    let lmi_margin = min_eig(&synthesis_block(factor, lambda_star, &x, &y));
    Ok(SynthesisResult {
        x,
        y,
        f,
        lambda_star,
        nbar: factor.nbar(),
        trace,
        lmi_margin,
        x_condition,
    })
}

/// Affine map over `P` with value
/// `diag(lambda^2 P - Abar^T (P ⊗ I) Abar, P - I)`.
pub fn build_analysis_lmi(
    factor: &GramFactor,
    f: &DMatrix<f64>,
    lambda: f64,
) -> Result<AffineMatrixMap> {
    let n = factor.n();
    let abar = factor.closed_loop_stack(f)?;
    let nbar = factor.nbar();
    let m0 = diag_join(&DMatrix::zeros(n, n), &-DMatrix::identity(n, n));
    AffineMatrixMap::from_linear(m0, sym_var_count(n), |v| {
        let p = unpack_sym(v.as_slice(), n);
        let lyap = &p * (lambda * lambda) - abar.transpose() * kron_identity(&p, nbar) * &abar;
        diag_join(&lyap, &p)
    })
}

/// Minimal `lambda` in `(0, lambda_max]` certified for the fixed gain `f`.
pub fn analyze(
    factor: &GramFactor,
    f: &DMatrix<f64>,
    opts: &SynthesisOptions,
) -> Result<AnalysisResult> {
    factor.closed_loop_stack(f)?;
    if !(0.0 < opts.lambda_lo && opts.lambda_lo < opts.lambda_max) {
        return Err(Error::Input("need 0 < lambda_lo < lambda_max".into()));
    }
    let n = factor.n();
    let (domain, sdp) = analysis_setup(n, opts)?;
    let found = bisect(opts.lambda_lo, opts.lambda_max, opts.tol_lambda2, |lambda| {
        let map = build_analysis_lmi(factor, f, lambda)?;
        let (ok, witness, _) = is_feasible_within(&map, &domain, opts.eps_feas, &sdp)?;
        Ok(if ok { witness } else { None })
    })?;
    let Some((lambda_star, witness, trace)) = found else {
        return Err(Error::UnboundedGrowth {
            lambda_max: opts.lambda_max,
        });
    };
    Ok(AnalysisResult {
        p: unpack_sym(witness.as_slice(), n),
        lambda_star,
        trace,
    })
}

/// Ackermann pole placement for `u = F x`, so that `eig(A + b F)` are `poles`.
///
/// Complex poles must come in conjugate pairs.
pub fn pole_place_siso(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    poles: &[Complex<f64>],
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || b.shape() != (n, 1) {
        return Err(Error::Input("pole placement needs A (n x n) and b (n x 1)".into()));
    }
    if poles.len() != n {
        return Err(Error::Dimension {
            context: "pole list",
            expected: n,
            got: poles.len(),
        });
    }
    // Characteristic polynomial, highest degree first.
    let mut coeffs = vec![Complex::new(1.0, 0.0)];
    for &p in poles {
        let mut next = vec![Complex::new(0.0, 0.0); coeffs.len() + 1];
        for (k, &c) in coeffs.iter().enumerate() {
            next[k] += c;
            next[k + 1] -= c * p;
        }
        coeffs = next;
    }
    let scale = coeffs.iter().map(|c| c.norm()).fold(1.0, f64::max);
    if coeffs.iter().any(|c| c.im.abs() > 1e-9 * scale) {
        return Err(Error::Input("complex poles must be closed under conjugation".into()));
    }
    let real: Vec<f64> = coeffs.iter().map(|c| c.re).collect();

    let mut ctrb = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for k in 0..n {
        ctrb.set_column(k, &col.column(0));
        col = a * col;
    }
    let svd = ctrb.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-12 * smax.max(f64::MIN_POSITIVE) * n as f64)
        .count();
    if rank < n {
        return Err(Error::Uncontrollable { rank, n });
    }

    // phi(A) by Horner.
    let mut phi = DMatrix::zeros(n, n);
    for &c in &real {
        phi = &phi * a;
        for d in 0..n {
            phi[(d, d)] += c;
        }
    }
    // Last row of ctrb^{-1}: solve ctrb^T w = e_n.
    let mut e_n = DVector::zeros(n);
    e_n[n - 1] = 1.0;
    let w = ctrb
        .transpose()
        .lu()
        .solve(&e_n)
        .ok_or(Error::Uncontrollable { rank, n })?;
    let f = -(phi.transpose() * w);
    Ok(DMatrix::from_row_slice(1, n, f.as_slice()))
}

/// [`pole_place_siso`] for real poles.
pub fn pole_place_siso_real(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    poles: &[f64],
) -> Result<DMatrix<f64>> {
    let poles: Vec<_> = poles.iter().map(|&p| Complex::new(p, 0.0)).collect();
    pole_place_siso(a, b, &poles)
}
