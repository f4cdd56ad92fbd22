//! Benchmark inputs.

use sdwsn_core::covmodel::{gaussian_analytic_covariances, sample_covariances};
use sdwsn_core::sim;
use sdwsn_core::{CovariancePack, Lifting, Mat};

pub fn random_matrix(seed: u64, rows: usize, cols: usize) -> Mat {
    sim::standard_normal(&mut sim::rng(seed), rows, cols)
}

pub fn example1_pack() -> CovariancePack {
    let exx = Mat::from_row_slice(3, 3, &[1.0, 0.64, 0.08, 0.64, 1.0, 0.08, 0.08, 0.08, 1.0]);
    gaussian_analytic_covariances(&exx, &[0.9, 0.65], &[1, 1], Lifting::Reduced).expect("valid moments")
}

/// Two sensors observing an `m`-dimensional signal through random masks,
/// `s` samples, full lifting, half-rank compression.
pub fn masked_pack(m: usize, s: usize) -> CovariancePack {
    let mut rng = sim::rng(7);
    let x = sim::uniform(&mut rng, m, s, 0.0, 1.0);
    let ys: Vec<Mat> = [0.2, 0.1]
        .iter()
        .map(|&b| sim::standard_normal(&mut rng, m, s).component_mul(&x) + sim::standard_normal(&mut rng, m, s) * b)
        .collect();
    sample_covariances(&x, &ys, &[m / 2, m / 2], Lifting::Full).expect("valid moments")
}
