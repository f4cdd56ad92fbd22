//! Jacobi kernels: one-sided (Hestenes) SVD and the cyclic symmetric
//! eigensolver. Both are slow compared to bidiagonal/tridiagonal QR but keep
//! high relative accuracy on rank-deficient input.

use super::Mat;

const MAX_SWEEPS: usize = 80;

/// One-sided Jacobi SVD of a tall matrix (`rows ≥ cols`).
///
/// Returns `(U, s, V)` with `U` `rows×cols`, unsorted `s`, and `V`
/// `cols×cols`. Columns of `U` belonging to zero (or round-off) singular values
/// are left as zero; the caller completes them. `None` on non-convergence.
pub(super) fn one_sided_svd(a: &Mat) -> Option<(Mat, Vec<f64>, Mat)> {
    let (m, n) = a.shape();
    debug_assert!(m >= n);
    let mut w = a.clone();
    let mut v = Mat::identity(n, n);
    let tol = (m as f64) * f64::EPSILON;
    // columns below this squared norm are round-off and are left unrotated,
    // otherwise pairs of noise columns can rotate forever
    let negligible = (f64::EPSILON * a.norm()).powi(2);

    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n - 1 {
            for j in i + 1..n {
                let (alpha, beta, gamma) = {
                    let ci = w.column(i);
                    let cj = w.column(j);
                    (ci.norm_squared(), cj.norm_squared(), ci.dot(&cj))
                };
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() || alpha.min(beta) <= negligible {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut w, i, j, c, s);
                rotate_columns(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return None;
    }

    let mut s = Vec::with_capacity(n);
    for mut col in w.column_iter_mut() {
        let norm2 = col.norm_squared();
        if norm2 <= negligible {
            col.fill(0.0);
            s.push(0.0);
        } else {
            let norm = norm2.sqrt();
            col /= norm;
            s.push(norm);
        }
    }
    Some((w, s, v))
}

fn rotate_columns(x: &mut Mat, i: usize, j: usize, c: f64, s: f64) {
    for k in 0..x.nrows() {
        let xi = x[(k, i)];
        let xj = x[(k, j)];
        x[(k, i)] = c * xi - s * xj;
        x[(k, j)] = s * xi + c * xj;
    }
}

/// Cyclic Jacobi eigensolver for a symmetric matrix. Returns unsorted
/// eigenvalues and the matching eigenvector columns.
pub(super) fn symmetric_eigen(m: &Mat) -> Option<(Vec<f64>, Mat)> {
    let n = m.nrows();
    let mut a = m.clone();
    let mut v = Mat::identity(n, n);
    let total = a.norm();
    if total == 0.0 {
        return Some((vec![0.0; n], v));
    }

    // off-diagonal entries this small move eigenvalues by at most n·ε·‖A‖
    let negligible = f64::EPSILON * total;
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= negligible || apq.abs() <= f64::EPSILON * (a[(p, p)] * a[(q, q)]).abs().sqrt() {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta.is_infinite() {
                    0.0
                } else {
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                if t == 0.0 {
                    continue;
                }
                rotated = true;
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A ← JᵀAJ with J the (p, q) rotation
                rotate_columns(&mut a, p, q, c, s);
                for k in 0..n {
                    let ap = a[(p, k)];
                    let aq = a[(q, k)];
                    a[(p, k)] = c * ap - s * aq;
                    a[(q, k)] = s * ap + c * aq;
                }
                rotate_columns(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return None;
    }
    Some(((0..n).map(|i| a[(i, i)]).collect(), v))
}
