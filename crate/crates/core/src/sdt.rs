//! Second-degree sensors, the fusion center, single-block solvers and the
//! ideal-channel error evaluations.

use crate::covmodel::{hstack, BlockPartition, CovariancePack, Lifting};
use crate::error::{dims, Error, Result};
use crate::matalg::{self, Mat, TruncatedSvd};

/// How a fitted block `P_j = U Σ Vᵀ G_j†` is split into `T_j·S_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FactorVariant {
    /// `T_j = U`, `S_j = Σ Vᵀ G_j†`.
    #[default]
    Orthonormal,
    /// `T_j = U Σ`, `S_j = Vᵀ G_j†`.
    Weighted,
}

impl std::str::FromStr for FactorVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orthonormal" => Ok(Self::Orthonormal),
            "weighted" => Ok(Self::Weighted),
            other => Err(Error::InvalidInput(format!("unknown factor variant '{other}'"))),
        }
    }
}

/// `u_j = S0 + S1·y_j + S2·(y_j∘y_j)`.
///
/// `s0` is absent for the reduced lifting, `s2` for the linear one.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondDegreeSensor {
    pub s0: Option<Mat>,
    pub s1: Mat,
    pub s2: Option<Mat>,
}

impl SecondDegreeSensor {
    /// Splits a stacked `S_j` laid out as the block's lifting.
    pub fn from_stacked(s: &Mat, n: usize, lifting: Lifting) -> Result<Self> {
        let want = lifting.block_size(n);
        if s.ncols() != want {
            return Err(Error::DimensionMismatch {
                context: "sensor matrix",
                expected: format!("{} columns", want),
                actual: dims(s.nrows(), s.ncols()),
            });
        }
        let off = usize::from(lifting.has_constant());
        Ok(Self {
            s0: lifting.has_constant().then(|| s.columns(0, 1).into_owned()),
            s1: s.columns(off, n).into_owned(),
            s2: lifting.has_square().then(|| s.columns(off + n, n).into_owned()),
        })
    }

    pub fn lifting(&self) -> Lifting {
        match (&self.s0, &self.s2) {
            (Some(_), _) => Lifting::Full,
            (None, Some(_)) => Lifting::Reduced,
            (None, None) => Lifting::Linear,
        }
    }

    pub fn rank(&self) -> usize {
        self.s1.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.s1.ncols()
    }

    /// `[S0 S1 S2]` in lifted order.
    pub fn stacked(&self) -> Mat {
        let mut parts = Vec::with_capacity(3);
        if let Some(s0) = &self.s0 {
            parts.push(s0.clone());
        }
        parts.push(self.s1.clone());
        if let Some(s2) = &self.s2 {
            parts.push(s2.clone());
        }
        hstack(self.rank(), &parts)
    }

    /// Compresses observation columns `y` (`n_j×s`) to `r_j×s`.
    pub fn apply(&self, y: &Mat) -> Result<Mat> {
        if y.nrows() != self.obs_dim() {
            return Err(Error::DimensionMismatch {
                context: "sensor input",
                expected: format!("{} rows", self.obs_dim()),
                actual: dims(y.nrows(), y.ncols()),
            });
        }
        let mut u = &self.s1 * y;
        if let Some(s2) = &self.s2 {
            u += s2 * y.map(|v| v * v);
        }
        if let Some(s0) = &self.s0 {
            for mut col in u.column_iter_mut() {
                col += s0.column(0);
            }
        }
        Ok(u)
    }
}

/// `T = [T_1 … T_p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionCenter {
    pub blocks: Vec<Mat>,
}

impl FusionCenter {
    pub fn concat(&self) -> Mat {
        let rows = self.blocks.first().map_or(0, |b| b.nrows());
        hstack(rows, &self.blocks)
    }
}

/// A fitted network: sensors, fusion center and the partition they obey.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub sensors: Vec<SecondDegreeSensor>,
    pub fusion: FusionCenter,
    pub partition: BlockPartition,
}

impl NetworkModel {
    pub fn new(
        sensors: Vec<SecondDegreeSensor>,
        fusion: FusionCenter,
        partition: BlockPartition,
    ) -> Result<Self> {
        let p = partition.sensors();
        if sensors.len() != p || fusion.blocks.len() != p {
            return Err(Error::DimensionMismatch {
                context: "network model",
                expected: format!("{p} sensors and fusion blocks"),
                actual: format!("{} sensors, {} blocks", sensors.len(), fusion.blocks.len()),
            });
        }
        for (j, (s, t)) in sensors.iter().zip(&fusion.blocks).enumerate() {
            let r = partition.rank(j);
            let ok = s.lifting() == partition.lifting()
                && s.rank() == r
                && s.obs_dim() == partition.obs_dim(j)
                && t.shape() == (partition.signal_dim(), r);
            if !ok {
                return Err(Error::InvalidInput(format!(
                    "sensor {} does not match the partition (rank {r}, n_j {}, {} lifting)",
                    j + 1,
                    partition.obs_dim(j),
                    partition.lifting().name()
                )));
            }
        }
        Ok(Self {
            sensors,
            fusion,
            partition,
        })
    }

    /// `P_j = T_j S_j` for each sensor.
    pub fn composite_blocks(&self) -> Vec<Mat> {
        self.sensors
            .iter()
            .zip(&self.fusion.blocks)
            .map(|(s, t)| t * s.stacked())
            .collect()
    }

    /// `P = [P_1 … P_p]`, `m × lifted_dim`.
    pub fn composite(&self) -> Mat {
        hstack(self.partition.signal_dim(), &self.composite_blocks())
    }

    /// Stacked sensor matrices `S_j`.
    pub fn sensor_matrices(&self) -> Vec<Mat> {
        self.sensors.iter().map(SecondDegreeSensor::stacked).collect()
    }

    /// `x̂ = Σ T_j u_j` column by column.
    pub fn apply(&self, ys: &[Mat]) -> Result<Mat> {
        if ys.len() != self.sensors.len() {
            return Err(Error::DimensionMismatch {
                context: "apply_network",
                expected: format!("{} observation blocks", self.sensors.len()),
                actual: format!("{}", ys.len()),
            });
        }
        let cols = ys.first().map_or(0, |y| y.ncols());
        let mut x = Mat::zeros(self.partition.signal_dim(), cols);
        for ((s, t), y) in self.sensors.iter().zip(&self.fusion.blocks).zip(ys) {
            if y.ncols() != cols {
                return Err(Error::InvalidInput(
                    "observation blocks disagree on sample count".into(),
                ));
            }
            x += t * s.apply(y)?;
        }
        Ok(x)
    }
}

/// A rank-constrained block optimum with its factors kept for extraction:
/// `p = u·diag(sigma)·coeff`, where `coeff = V_kᵀ·G_j†`.
#[derive(Debug, Clone)]
pub struct BlockSolution {
    pub p: Mat,
    pub u: Mat,
    pub sigma: Vec<f64>,
    pub coeff: Mat,
    pub nonunique: bool,
}

impl BlockSolution {
    pub fn from_core(core: &TruncatedSvd, g_pinv: &Mat) -> Self {
        let coeff = core.v.transpose() * g_pinv;
        let mut weighted = core.u.clone();
        for (mut col, s) in weighted.column_iter_mut().zip(&core.sigma) {
            col *= *s;
        }
        Self {
            p: &weighted * &coeff,
            u: core.u.clone(),
            sigma: core.sigma.clone(),
            coeff,
            nonunique: core.nonunique,
        }
    }

    pub fn zero(rows: usize, cols: usize) -> Self {
        Self {
            p: Mat::zeros(rows, cols),
            u: Mat::zeros(rows, 0),
            sigma: Vec::new(),
            coeff: Mat::zeros(0, cols),
            nonunique: false,
        }
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// Places a block fitted on the signal rows `rows` into an `m`-row layout.
    pub(crate) fn embed_rows(self, m: usize, start: usize) -> Self {
        let pad = |a: &Mat| {
            let mut out = Mat::zeros(m, a.ncols());
            out.view_mut((start, 0), a.shape()).copy_from(a);
            out
        };
        Self {
            p: pad(&self.p),
            u: pad(&self.u),
            ..self
        }
    }

    /// `(T_j, S_j)` padded with zero columns/rows to exactly `r` transmitted
    /// coordinates.
    pub fn factor(&self, variant: FactorVariant, r: usize) -> (Mat, Mat) {
        let k = self.rank().min(r);
        let (m, b) = (self.p.nrows(), self.p.ncols());
        let mut t = Mat::zeros(m, r);
        let mut s = Mat::zeros(r, b);
        for i in 0..k {
            let (tw, sw) = match variant {
                FactorVariant::Orthonormal => (1.0, self.sigma[i]),
                FactorVariant::Weighted => (self.sigma[i], 1.0),
            };
            t.set_column(i, &(self.u.column(i) * tw));
            s.set_row(i, &(self.coeff.row(i) * sw));
        }
        (t, s)
    }
}

/// `(T_j, S_j)` from the truncated-SVD triple of `[Q_j R_{G_j}]_r` and `G_j†`.
pub fn factor_model(core: &TruncatedSvd, g_pinv: &Mat, variant: FactorVariant) -> (Mat, Mat) {
    let sol = BlockSolution::from_core(core, g_pinv);
    sol.factor(variant, core.rank())
}

/// Single-sensor second-degree transform
/// `[E_xz (E_zz^{1/2})†]_r (E_zz^{1/2})†`.
pub fn sdt_single(exz: &Mat, ezz: &Mat, r: usize) -> Result<BlockSolution> {
    if ezz.nrows() != ezz.ncols() || exz.ncols() != ezz.nrows() {
        return Err(Error::DimensionMismatch {
            context: "sdt_single",
            expected: format!("E_zz {}x{}", exz.ncols(), exz.ncols()),
            actual: dims(ezz.nrows(), ezz.ncols()),
        });
    }
    let root_pinv = matalg::pinv(&matalg::sqrt_psd_repaired(ezz)?, 0.0)?;
    let core = matalg::truncated_svd(&(exz * &root_pinv), r)?;
    Ok(BlockSolution::from_core(&core, &root_pinv))
}

/// Moment-form MSE `E‖x − P z‖²` for the concatenated `P` (`m × lifted_dim`).
pub fn error_exact(p: &Mat, pack: &CovariancePack) -> Result<f64> {
    check_composite(p, pack)?;
    Ok(crate::covmodel::reduce(pack)?.error(p))
}

/// `E‖x − P z‖² = tr E_xx − 2 tr(P E_zx) + tr(P E_zz Pᵀ)` without square
/// roots; used as an independent cross-check of [`error_exact`].
pub fn error_direct(p: &Mat, pack: &CovariancePack) -> Result<f64> {
    check_composite(p, pack)?;
    let cross: f64 = p.component_mul(&pack.exz).sum();
    let quad = (p * &pack.ezz).component_mul(p).sum();
    Ok(pack.exx.trace() - 2.0 * cross + quad)
}

fn check_composite(p: &Mat, pack: &CovariancePack) -> Result<()> {
    if p.shape() != pack.exz.shape() {
        return Err(Error::DimensionMismatch {
            context: "composite model",
            expected: dims(pack.exz.nrows(), pack.exz.ncols()),
            actual: dims(p.nrows(), p.ncols()),
        });
    }
    Ok(())
}

/// The spectral pieces of the block-optimal error at sensor `j` with the
/// other blocks held fixed (`x̄ = x − w_j`, `w_j = Σ_{i≠j} P_i z_i`).
#[derive(Debug, Clone)]
pub struct BlockErrorTerms {
    pub trace_exx: f64,
    /// `tr(2 E_{w_j x} − E_{w_j w_j})`.
    pub beta: f64,
    /// Spectrum of `E_{x̄z_j} E_{z_jz_j}† E_{z_jx̄}`, descending.
    pub delta: Vec<f64>,
    /// Spectrum of the same product restricted to the non-squared
    /// coordinates (constant and `y_j`), descending.
    pub delta_linear: Vec<f64>,
    /// Spectrum of `C_j H_j† C_jᵀ`: what the squared coordinates add once the
    /// linear part is accounted for. Empty for the linear lifting.
    pub mu: Vec<f64>,
    pub rank: usize,
}

impl BlockErrorTerms {
    pub fn delta_top(&self) -> f64 {
        self.delta.iter().take(self.rank).sum()
    }

    /// `tr E_xx − Σ_{i≤r_j} δ_i − β_j`, clamped at zero.
    pub fn value(&self) -> f64 {
        (self.trace_exx - self.delta_top() - self.beta).max(0.0)
    }

    /// Unconstrained block optimum split into linear and squared gains:
    /// `tr E_xx − Σ δ_linear − Σ μ − β`.
    pub fn full_rank_value(&self) -> f64 {
        let lin: f64 = self.delta_linear.iter().sum();
        let mu: f64 = self.mu.iter().sum();
        (self.trace_exx - lin - mu - self.beta).max(0.0)
    }
}

/// Error of the best rank-`r_j` block `j` given the other blocks of `p_all`
/// (block `j` of `p_all` is ignored).
pub fn error_block_formula(j: usize, p_all: &[Mat], pack: &CovariancePack) -> Result<f64> {
    Ok(block_error_terms(j, p_all, pack)?.value())
}

pub fn block_error_terms(j: usize, p_all: &[Mat], pack: &CovariancePack) -> Result<BlockErrorTerms> {
    let part = &pack.partition;
    let p = part.sensors();
    if j >= p {
        return Err(Error::InvalidInput(format!("block index {j} out of range")));
    }
    if p_all.len() != p {
        return Err(Error::DimensionMismatch {
            context: "block error",
            expected: format!("{p} blocks"),
            actual: format!("{}", p_all.len()),
        });
    }
    let m = part.signal_dim();
    let mut others: Vec<Mat> = Vec::with_capacity(p);
    for (i, b) in p_all.iter().enumerate() {
        let want = (m, part.block_size(i));
        if b.shape() != want {
            return Err(Error::DimensionMismatch {
                context: "block error",
                expected: dims(want.0, want.1),
                actual: dims(b.nrows(), b.ncols()),
            });
        }
        others.push(if i == j { Mat::zeros(want.0, want.1) } else { b.clone() });
    }
    let w = hstack(m, &others);
    let beta = 2.0 * w.component_mul(&pack.exz).sum() - (&w * &pack.ezz).component_mul(&w).sum();

    // E_{x̄ z_j} = E_{x z_j} − W E_{z z_j}
    let exbar_z = pack.exz_block(j) - &w * pack.ezz_cols(j);
    let ezz_j = pack.ezz_block(j, j);
    let delta = explained_spectrum(&exbar_z, &ezz_j)?;

    let lin: Vec<usize> = part
        .constant_local()
        .into_iter()
        .chain(part.linear_local(j))
        .collect();
    let e_u = exbar_z.select_columns(&lin);
    let e_uu = ezz_j.select_rows(&lin).select_columns(&lin);
    let delta_linear = explained_spectrum(&e_u, &e_uu)?;

    let mu = match part.square_local(j) {
        Some(sq) => {
            let sq: Vec<usize> = sq.collect();
            let e_s = exbar_z.select_columns(&sq);
            let e_us = ezz_j.select_rows(&lin).select_columns(&sq);
            let e_ss = ezz_j.select_rows(&sq).select_columns(&sq);
            let uu_pinv = matalg::pinv(&e_uu, 0.0)?;
            let c = &e_s - &e_u * &uu_pinv * &e_us;
            let h = &e_ss - e_us.transpose() * &uu_pinv * &e_us;
            let h = (&h + h.transpose()) * 0.5;
            explained_spectrum(&c, &h)?
        }
        None => Vec::new(),
    };

    Ok(BlockErrorTerms {
        trace_exx: pack.exx.trace(),
        beta,
        delta,
        delta_linear,
        mu,
        rank: part.rank(j),
    })
}

/// Eigenvalues of `A B† Aᵀ` for PSD `B`, via the singular values of
/// `A (B^{1/2})†` so the spectrum is real and nonnegative.
pub(crate) fn explained_spectrum(a: &Mat, b: &Mat) -> Result<Vec<f64>> {
    if a.ncols() == 0 {
        return Ok(Vec::new());
    }
    let root_pinv = matalg::pinv(&matalg::sqrt_psd_repaired(b)?, 0.0)?;
    Ok(matalg::svd(&(a * root_pinv))?
        .s
        .into_iter()
        .map(|s| s * s)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covmodel::{gaussian_analytic_covariances, BlockPartition};

    fn lcg(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Mat::from_fn(rows, cols, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn sdt_identity_covariance() {
        let exz = lcg(2, 5, 1);
        let sol = sdt_single(&exz, &Mat::identity(5, 5), 2).unwrap();
        assert!((sol.p - exz).amax() < 1e-12);
    }

    #[test]
    fn sdt_zero_cross() {
        let a = lcg(5, 5, 2);
        let sol = sdt_single(&Mat::zeros(3, 5), &(&a * a.transpose()), 2).unwrap();
        assert_eq!(sol.p.amax(), 0.0);
    }

    #[test]
    fn sdt_matches_solver() {
        let a = lcg(2, 2, 3);
        let ezz = &a * a.transpose();
        let exz = lcg(2, 2, 4);
        let sol = sdt_single(&exz, &ezz, 1).unwrap();
        let root = matalg::sqrt_psd(&ezz).unwrap();
        let q = &exz * matalg::pinv(&root, 0.0).unwrap();
        let other = matalg::rank_constrained_solve(&q, &root, 1).unwrap();
        assert!((sol.p - other.p).amax() < 1e-10);
    }

    #[test]
    fn factor_variants_agree() {
        let g = lcg(4, 6, 5);
        let q = lcg(3, 6, 6);
        let space = matalg::RowSpace::new(&g).unwrap();
        let sol = matalg::solve_in_row_space(&q, &space, 2).unwrap();
        let (t1, s1) = factor_model(&sol.core, &space.g_pinv, FactorVariant::Orthonormal);
        let (t2, s2) = factor_model(&sol.core, &space.g_pinv, FactorVariant::Weighted);
        assert!((&t1 * &s1 - &sol.p).amax() < 1e-10);
        assert!((&t2 * &s2 - &sol.p).amax() < 1e-10);
        assert!((t1.transpose() * &t1 - Mat::identity(2, 2)).amax() < 1e-10);
    }

    #[test]
    fn factor_rank_one() {
        let core = TruncatedSvd {
            u: Mat::from_column_slice(2, 1, &[0.6, 0.8]),
            sigma: vec![2.0],
            v: Mat::from_column_slice(2, 1, &[1.0, 0.0]),
            nonunique: false,
        };
        let (t, s) = factor_model(&core, &Mat::identity(2, 2), FactorVariant::Orthonormal);
        assert_eq!(t, core.u);
        assert_eq!(s, Mat::from_row_slice(1, 2, &[2.0, 0.0]));
    }

    #[test]
    fn factor_pads_to_rank() {
        let sol = BlockSolution::zero(3, 5);
        let (t, s) = sol.factor(FactorVariant::Orthonormal, 2);
        assert_eq!(t.shape(), (3, 2));
        assert_eq!(s.shape(), (2, 5));
    }

    #[test]
    fn sensor_roundtrip_and_apply() {
        let s = lcg(2, 7, 7);
        let sensor = SecondDegreeSensor::from_stacked(&s, 3, Lifting::Full).unwrap();
        assert_eq!(sensor.stacked(), s);
        let y = lcg(3, 4, 8);
        let direct = &s * crate::covmodel::lift_sample(&y);
        assert!((sensor.apply(&y).unwrap() - direct).amax() < 1e-14);
        assert!(SecondDegreeSensor::from_stacked(&s, 2, Lifting::Full).is_err());
        let red = SecondDegreeSensor::from_stacked(&lcg(2, 6, 9), 3, Lifting::Reduced).unwrap();
        assert_eq!(red.lifting(), Lifting::Reduced);
        assert!(red.s0.is_none());
    }

    #[test]
    fn error_exact_zero_model_uncorrelated() {
        let part = BlockPartition::new(2, vec![1], vec![1], Lifting::Full).unwrap();
        let pack = CovariancePack::new(Mat::identity(2, 2) * 3.0, Mat::zeros(2, 3), Mat::identity(3, 3), part).unwrap();
        assert!((error_exact(&Mat::zeros(2, 3), &pack).unwrap() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn error_exact_matches_direct_form() {
        let exx = Mat::from_row_slice(3, 3, &[1.0, 0.64, 0.08, 0.64, 1.0, 0.08, 0.08, 0.08, 1.0]);
        let pack = gaussian_analytic_covariances(&exx, &[0.9, 0.65], &[1, 1], Lifting::Full).unwrap();
        let p = lcg(3, 14, 10);
        let a = error_exact(&p, &pack).unwrap();
        let b = error_direct(&p, &pack).unwrap();
        assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
    }

    #[test]
    fn block_formula_single_sensor_has_zero_beta() {
        let exx = Mat::from_row_slice(3, 3, &[1.0, 0.64, 0.08, 0.64, 1.0, 0.08, 0.08, 0.08, 1.0]);
        let pack = gaussian_analytic_covariances(&exx, &[0.5], &[1], Lifting::Full).unwrap();
        let terms = block_error_terms(0, &[Mat::zeros(3, 7)], &pack).unwrap();
        assert_eq!(terms.beta, 0.0);
        let sol = sdt_single(&pack.exz, &pack.ezz, 1).unwrap();
        let exact = error_exact(&sol.p, &pack).unwrap();
        assert!((terms.value() - exact).abs() < 1e-9);
    }

    #[test]
    fn block_formula_uninformative() {
        let part = BlockPartition::new(2, vec![2, 1], vec![1, 1], Lifting::Full).unwrap();
        let pack = CovariancePack::new(Mat::identity(2, 2), Mat::zeros(2, 8), Mat::zeros(8, 8), part).unwrap();
        let blocks = vec![lcg(2, 5, 11), lcg(2, 3, 12)];
        let v = error_block_formula(0, &blocks, &pack).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
    }
}
