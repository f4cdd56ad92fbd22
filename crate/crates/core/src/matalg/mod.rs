//! Dense linear-algebra kernel.
//!
//! Everything above this module works in terms of a handful of primitives:
//! a sorted, sign-normalized SVD, the Moore–Penrose pseudo-inverse, the
//! symmetric PSD square root, truncation to rank `r`, the range projections
//! `L_C`/`R_C`, and the rank-constrained least-squares solve
//!
//! ```text
//! min ‖Q − P·G‖²  over rank(P) ≤ r   ⇒   P̂ = [Q·R_G]_r · G†
//! ```
//!
//! which is well defined for singular `G`. Decompositions are delegated to
//! `nalgebra`; this module owns ordering, sign conventions, rank cutoffs and
//! the failure modes.

use nalgebra::{DMatrix, DVector};

mod jacobi;

use crate::error::{dims, Error, Result};

/// Dense real matrix with value semantics.
pub type Mat = DMatrix<f64>;

/// Relative gap below which two consecutive singular values count as tied.
const TIE_REL_TOL: f64 = 1e-10;

/// Relative asymmetry accepted by [`sqrt_psd`].
const SYMMETRY_REL_TOL: f64 = 1e-9;

/// Thin singular value decomposition `C = U·diag(S)·Vᵀ`.
///
/// `U` is `m×k` and `V` is `s×k` with `k = min(m, s)`; both have orthonormal
/// columns. Singular values are sorted in descending order and the first
/// non-negligible entry of every left singular vector is nonnegative.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: Mat,
    pub s: Vec<f64>,
    pub v: Mat,
}

impl SvdFactors {
    /// Numerical rank under the relative cutoff `tol·σ_max` (`tol = 0` picks
    /// the default `max(m, s)·ε`).
    pub fn rank(&self, tol: f64) -> usize {
        let cutoff = self.cutoff(tol);
        self.s.iter().take_while(|&&s| s > cutoff).count()
    }

    fn cutoff(&self, tol: f64) -> f64 {
        let smax = self.s.first().copied().unwrap_or(0.0);
        let rel = if tol > 0.0 {
            tol
        } else {
            self.u.nrows().max(self.v.nrows()) as f64 * f64::EPSILON
        };
        rel * smax
    }

    pub fn reconstruct(&self) -> Mat {
        scaled_outer(&self.u, &self.s, &self.v, self.s.len())
    }
}

/// Truncated SVD triple `U_r Σ_r V_rᵀ = [C]_r`.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub u: Mat,
    pub sigma: Vec<f64>,
    pub v: Mat,
    /// `σ_r = σ_{r+1}` with `r < rank C`: the truncation is not unique.
    pub nonunique: bool,
}

impl TruncatedSvd {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn product(&self) -> Mat {
        scaled_outer(&self.u, &self.sigma, &self.v, self.sigma.len())
    }
}

fn ensure_finite(c: &Mat, what: &str) -> Result<()> {
    if c.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} contains NaN or Inf")))
    }
}

/// `Σ_{i<k} s_i u_i v_iᵀ`
fn scaled_outer(u: &Mat, s: &[f64], v: &Mat, k: usize) -> Mat {
    let mut us = u.columns(0, k).into_owned();
    for (i, mut col) in us.column_iter_mut().enumerate() {
        col *= s[i];
    }
    us * v.columns(0, k).transpose()
}

/// Sorted thin SVD with the sign convention described on [`SvdFactors`].
pub fn svd(c: &Mat) -> Result<SvdFactors> {
    ensure_finite(c, "svd input")?;
    let (m, n) = c.shape();
    let k = m.min(n);
    if k == 0 {
        return Ok(SvdFactors {
            u: Mat::zeros(m, 0),
            s: Vec::new(),
            v: Mat::zeros(n, 0),
        });
    }
    let tall = m >= n;
    let work = if tall { c.clone() } else { c.transpose() };
    let (w, s_unsorted, rv) = jacobi::one_sided_svd(&work).ok_or_else(|| {
        Error::NumericalFailure(format!("SVD of a {} matrix did not converge", dims(m, n)))
    })?;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s_unsorted[b].total_cmp(&s_unsorted[a]));
    let s: Vec<f64> = order.iter().map(|&i| s_unsorted[i]).collect();
    let mut left = Mat::from_fn(work.nrows(), k, |r, c| w[(r, order[c])]);
    let right = Mat::from_fn(k, k, |r, c| rv[(r, order[c])]);
    complete_orthonormal(&mut left, &s);
    let (mut u, mut v) = if tall { (left, right) } else { (right, left) };
    for i in 0..k {
        let flip = u
            .column(i)
            .iter()
            .find(|x| x.abs() > 1e-12)
            .is_some_and(|&x| x < 0.0);
        if flip {
            u.column_mut(i).neg_mut();
            v.column_mut(i).neg_mut();
        }
    }
    Ok(SvdFactors { u, s, v })
}

/// Replaces the columns that belong to zero singular values with unit
/// vectors orthogonal to everything already present.
fn complete_orthonormal(u: &mut Mat, s: &[f64]) {
    let rows = u.nrows();
    let mut candidate = 0;
    for col in 0..u.ncols() {
        if s[col] > 0.0 {
            continue;
        }
        while candidate < rows {
            let mut e = DVector::zeros(rows);
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for other in (0..u.ncols()).filter(|&o| o != col && (s[o] > 0.0 || o < col)) {
                    let proj = u.column(other).dot(&e);
                    e -= u.column(other) * proj;
                }
            }
            let norm = e.norm();
            if norm > 0.5 {
                u.set_column(col, &(e / norm));
                break;
            }
        }
    }
}

/// Moore–Penrose pseudo-inverse. Singular values at or below `tol·σ_max`
/// are treated as zero; `tol = 0` selects `max(rows, cols)·ε`.
pub fn pinv(c: &Mat, tol: f64) -> Result<Mat> {
    if tol < 0.0 || !tol.is_finite() {
        return Err(Error::InvalidInput(format!("pinv tolerance must be >= 0, got {tol}")));
    }
    let f = svd(c)?;
    Ok(pinv_from_svd(&f, tol))
}

fn pinv_from_svd(f: &SvdFactors, tol: f64) -> Mat {
    let r = f.rank(tol);
    let inv: Vec<f64> = f.s[..r].iter().map(|s| 1.0 / s).collect();
    scaled_outer(&f.v, &inv, &f.u, r)
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
pub fn sym_eigen(m: &Mat) -> Result<(Vec<f64>, Mat)> {
    ensure_finite(m, "eigen input")?;
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::DimensionMismatch {
            context: "symmetric eigendecomposition",
            expected: "square matrix".into(),
            actual: dims(n, m.ncols()),
        });
    }
    if n == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    let sym = (m + m.transpose()) * 0.5;
    let (raw, vecs) = jacobi::symmetric_eigen(&sym)
        .ok_or_else(|| Error::NumericalFailure("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| raw[b].total_cmp(&raw[a]));
    let values = order.iter().map(|&i| raw[i]).collect();
    let vectors = Mat::from_fn(n, n, |r, c| vecs[(r, order[c])]);
    Ok((values, vectors))
}

/// Eigenvalues (descending) of a symmetric matrix.
pub fn sym_eigenvalues(m: &Mat) -> Result<Vec<f64>> {
    sym_eigen(m).map(|(v, _)| v)
}

fn check_symmetric(m: &Mat) -> Result<()> {
    let (r, c) = m.shape();
    if r != c {
        return Err(Error::DimensionMismatch {
            context: "sqrt_psd",
            expected: "square matrix".into(),
            actual: dims(r, c),
        });
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_REL_TOL * scale {
        return Err(Error::InvalidInput(format!(
            "matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    Ok(())
}

/// Roots of the eigenvalues; those within the round-off band
/// `|λ| ≤ n·ε·|λ|_max` count as zero so that a singular input keeps a
/// numerically clean null space instead of `√ε`-sized junk.
fn sqrt_from_eigen(values: &[f64], vectors: &Mat) -> Mat {
    let band = clamp_band(values);
    let roots: Vec<f64> = values
        .iter()
        .map(|&l| if l <= band { 0.0 } else { l.sqrt() })
        .collect();
    let n = values.len();
    scaled_outer(vectors, &roots, vectors, n)
}

fn clamp_band(values: &[f64]) -> f64 {
    let lmax = values.iter().fold(0.0f64, |a, l| a.max(l.abs()));
    values.len() as f64 * f64::EPSILON * lmax
}

/// Symmetric PSD square root `R` with `R·R = M`.
///
/// Eigenvalues in `[−n·ε·|λ|_max, 0)` are clamped to zero; anything more
/// negative is rejected with [`Error::NotPsd`].
pub fn sqrt_psd(m: &Mat) -> Result<Mat> {
    ensure_finite(m, "sqrt_psd input")?;
    check_symmetric(m)?;
    let (values, vectors) = sym_eigen(m)?;
    let clamp = clamp_band(&values);
    if let Some(&min) = values.last() {
        if min < -clamp {
            return Err(Error::NotPsd { min_eigenvalue: min });
        }
    }
    Ok(sqrt_from_eigen(&values, &vectors))
}

/// Square root after projecting onto the PSD cone: every negative eigenvalue
/// is set to zero. Used for sampled second-moment matrices.
pub fn sqrt_psd_repaired(m: &Mat) -> Result<Mat> {
    ensure_finite(m, "sqrt_psd input")?;
    check_symmetric(m)?;
    let (values, vectors) = sym_eigen(m)?;
    Ok(sqrt_from_eigen(&values, &vectors))
}

/// Truncated SVD `[C]_r` keeping the first `r` computed singular triples
/// (fewer if `rank C < r`).
pub fn truncated_svd(c: &Mat, r: usize) -> Result<TruncatedSvd> {
    let f = svd(c)?;
    let rank = f.rank(0.0);
    let keep = r.min(rank);
    let nonunique = keep < rank && keep > 0 && {
        let gap = f.s[keep - 1] - f.s[keep];
        gap <= TIE_REL_TOL * f.s[0]
    };
    Ok(TruncatedSvd {
        u: f.u.columns(0, keep).into_owned(),
        sigma: f.s[..keep].to_vec(),
        v: f.v.columns(0, keep).into_owned(),
        nonunique,
    })
}

/// Best rank-`r` approximation `[C]_r = Σ_{i≤r} σ_i u_i v_iᵀ`. Returns `C`
/// unchanged when `r ≥ rank C`.
pub fn truncate(c: &Mat, r: usize) -> Result<Mat> {
    let f = svd(c)?;
    if r >= f.rank(0.0) {
        return Ok(c.clone());
    }
    Ok(scaled_outer(&f.u, &f.s, &f.v, r))
}

/// Orthogonal projection `L_C` onto the column space of `C`.
pub fn left_proj(c: &Mat) -> Result<Mat> {
    let f = svd(c)?;
    let r = f.rank(0.0);
    let ones = vec![1.0; r];
    Ok(scaled_outer(&f.u, &ones, &f.u, r))
}

/// Orthogonal projection `R_C` onto the row space of `C`.
pub fn right_proj(c: &Mat) -> Result<Mat> {
    let f = svd(c)?;
    let r = f.rank(0.0);
    let ones = vec![1.0; r];
    Ok(scaled_outer(&f.v, &ones, &f.v, r))
}

/// Squared Frobenius norm.
pub fn frob2(c: &Mat) -> f64 {
    c.norm_squared()
}

/// Precomputed `G†` and `R_G` for a fixed constraint matrix `G`.
///
/// The greedy fits solve against the same `G_j` on every iteration, so the
/// SVD of `G_j` is done once.
#[derive(Debug, Clone)]
pub struct RowSpace {
    pub g: Mat,
    pub g_pinv: Mat,
    pub proj: Mat,
}

impl RowSpace {
    pub fn new(g: &Mat) -> Result<Self> {
        let f = svd(g)?;
        let r = f.rank(0.0);
        let ones = vec![1.0; r];
        Ok(Self {
            g: g.clone(),
            g_pinv: pinv_from_svd(&f, 0.0),
            proj: scaled_outer(&f.v, &ones, &f.v, r),
        })
    }
}

/// Result of the rank-constrained solve, retaining the truncated SVD of
/// `Q·R_G` so that the solution can be factored later.
#[derive(Debug, Clone)]
pub struct RankConstrainedSolution {
    pub p: Mat,
    pub core: TruncatedSvd,
}

impl RankConstrainedSolution {
    pub fn nonunique(&self) -> bool {
        self.core.nonunique
    }
}

/// Minimum-norm minimizer of `‖Q − P·G‖²` over matrices `P` of rank at most `r`.
pub fn rank_constrained_solve(q: &Mat, g: &Mat, r: usize) -> Result<RankConstrainedSolution> {
    let space = RowSpace::new(g)?;
    solve_in_row_space(q, &space, r)
}

/// [`rank_constrained_solve`] against a cached [`RowSpace`].
pub fn solve_in_row_space(q: &Mat, space: &RowSpace, r: usize) -> Result<RankConstrainedSolution> {
    if q.ncols() != space.g.ncols() {
        return Err(Error::DimensionMismatch {
            context: "rank_constrained_solve",
            expected: format!("Q with {} columns", space.g.ncols()),
            actual: dims(q.nrows(), q.ncols()),
        });
    }
    let core = truncated_svd(&(q * &space.proj), r)?;
    let p = core.product() * &space.g_pinv;
    Ok(RankConstrainedSolution { p, core })
}

/// Smallest positive singular value (under the default rank cutoff).
pub fn min_positive_singular_value(c: &Mat) -> Result<Option<f64>> {
    let f = svd(c)?;
    let r = f.rank(0.0);
    Ok(if r == 0 { None } else { Some(f.s[r - 1]) })
}

/// `diag(v)` as a dense matrix.
pub fn diag(v: &[f64]) -> Mat {
    Mat::from_diagonal(&DVector::from_column_slice(v))
}
