//! Seeded sampling for simulations and oracles. Every random draw in the
//! workspace goes through [`SimRng`] (ChaCha8) created by [`rng`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};

use crate::covmodel::{lift_with, vstack, Lifting};
use crate::error::{Error, Result};
use crate::matalg::{self, Mat};

pub type SimRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn standard_normal(rng: &mut SimRng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn uniform(rng: &mut SimRng, rows: usize, cols: usize, lo: f64, hi: f64) -> Mat {
    let dist = Uniform::new(lo, hi).expect("lo < hi");
    Mat::from_fn(rows, cols, |_, _| rng.sample(dist))
}

/// `s` columns of `mean + cov^{1/2} g` with `g` standard normal.
pub fn gaussian(rng: &mut SimRng, mean: &[f64], cov: &Mat, s: usize) -> Result<Mat> {
    let root = matalg::sqrt_psd(cov)?;
    let mut x = root * standard_normal(rng, mean.len(), s);
    for mut col in x.column_iter_mut() {
        for (v, m) in col.iter_mut().zip(mean) {
            *v += m;
        }
    }
    Ok(x)
}

/// Random correlation matrix (unit diagonal) of a Gram matrix with `m + 2`
/// random factors.
pub fn random_correlation(rng: &mut SimRng, m: usize) -> Mat {
    let a = standard_normal(rng, m, m + 2);
    let g = &a * a.transpose();
    let d: Vec<f64> = (0..m).map(|i| 1.0 / g[(i, i)].sqrt()).collect();
    Mat::from_fn(m, m, |i, k| if i == k { 1.0 } else { g[(i, k)] * d[i] * d[k] })
}

/// Draws from the model behind the analytic Gaussian moments: zero-mean
/// `x ~ N(0, E_xx)`, `y_j = x + σ_j ξ_j`, and the second-degree block taken as
/// the centred variable `x∘x − 1 + σ_j²(ξ_j∘ξ_j − 1)`.
///
/// Returns `(X, Z)` with `Z` laid out like the analytic pack for `lifting`.
pub fn analytic_model_samples(
    rng: &mut SimRng,
    exx: &Mat,
    noise_sd: &[f64],
    s: usize,
    lifting: Lifting,
) -> Result<(Mat, Mat)> {
    let m = exx.nrows();
    let x = gaussian(rng, &vec![0.0; m], exx, s)?;
    let x2 = x.map(|v| v * v - 1.0);
    let mut blocks = Vec::with_capacity(noise_sd.len());
    for &sd in noise_sd {
        let xi = standard_normal(rng, m, s);
        let lin = &x + &xi * sd;
        let sq = &x2 + xi.map(|v| sd * sd * (v * v - 1.0));
        let mut parts = Vec::new();
        if lifting.has_constant() {
            parts.push(Mat::from_element(1, s, 1.0));
        }
        parts.push(lin);
        if lifting.has_square() {
            parts.push(sq);
        }
        blocks.push(vstack(&parts));
    }
    Ok((x, vstack(&blocks)))
}

/// Shape of a randomized Gaussian sensor instance.
#[derive(Debug, Clone)]
pub struct GaussianInstance {
    pub signal_dim: usize,
    pub obs_dims: Vec<usize>,
    pub ranks: Vec<usize>,
    pub noise_sd: f64,
}

impl GaussianInstance {
    /// `m ∈ [2, 4]`, `p ∈ [2, 3]`, `n_j ∈ [1, 4]`, `r_j ∈ [1, min(m, n_j)]`.
    pub fn random(rng: &mut SimRng) -> Self {
        let m = rng.random_range(2..=4);
        let p = rng.random_range(2..=3);
        let obs_dims: Vec<usize> = (0..p).map(|_| rng.random_range(1..=4)).collect();
        let ranks = obs_dims.iter().map(|&n| rng.random_range(1..=n.min(m))).collect();
        Self {
            signal_dim: m,
            obs_dims,
            ranks,
            noise_sd: 0.5,
        }
    }

    /// `s` draws of `x ~ N(μ, LLᵀ)` (random `μ`, `L`) and `y_j = A_j x + σ ξ_j`.
    pub fn sample(&self, rng: &mut SimRng, s: usize) -> (Mat, Vec<Mat>) {
        let m = self.signal_dim;
        let mu = standard_normal(rng, m, 1);
        let l = standard_normal(rng, m, m);
        let mut x = l * standard_normal(rng, m, s);
        for mut col in x.column_iter_mut() {
            col += mu.column(0);
        }
        let ys = self
            .obs_dims
            .iter()
            .map(|&n| {
                let a = standard_normal(rng, n, m);
                a * &x + standard_normal(rng, n, s) * self.noise_sd
            })
            .collect();
        (x, ys)
    }
}

/// Empirical `E‖x − P z‖²` over sample columns.
pub fn empirical_mse(x: &Mat, p: &Mat, z: &Mat) -> Result<f64> {
    if p.ncols() != z.nrows() || x.ncols() != z.ncols() || x.nrows() != p.nrows() {
        return Err(Error::InvalidInput("empirical_mse: inconsistent shapes".into()));
    }
    Ok(matalg::frob2(&(x - p * z)) / x.ncols() as f64)
}

/// Lifts each sensor's samples and stacks them.
pub fn lift_observations(ys: &[Mat], lifting: Lifting) -> Mat {
    let blocks: Vec<Mat> = ys.iter().map(|y| lift_with(y, lifting)).collect();
    vstack(&blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_draws() {
        let a = standard_normal(&mut rng(7), 3, 4);
        let b = standard_normal(&mut rng(7), 3, 4);
        assert_eq!(a, b);
    }

    #[test]
    fn correlation_has_unit_diagonal() {
        let c = random_correlation(&mut rng(1), 4);
        assert!(c.diagonal().iter().all(|d| *d == 1.0));
        assert!(matalg::sym_eigenvalues(&c).unwrap()[3] > 0.0);
    }

    #[test]
    fn analytic_samples_shape() {
        let exx = Mat::identity(3, 3);
        let (x, z) = analytic_model_samples(&mut rng(2), &exx, &[0.1, 0.2], 5, Lifting::Full).unwrap();
        assert_eq!(x.shape(), (3, 5));
        assert_eq!(z.shape(), (14, 5));
        assert!(z.row(0).iter().all(|v| *v == 1.0));
    }
}
