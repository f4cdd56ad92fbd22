//! Second-moment inputs for the fits.
//!
//! A [`CovariancePack`] carries `E_xx`, `E_xz`, `E_zz` for the stacked lifted
//! observation `z = [z_1; …; z_p]`, together with the [`BlockPartition`] that
//! says where each sensor's block starts and how it is laid out. Moments are
//! raw (no mean subtraction); with the full lifting the constant coordinate
//! absorbs the means.

use std::ops::Range;

use crate::error::{dims, Error, Result};
use crate::matalg::{self, Mat};

/// Layout of one sensor's lifted vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Lifting {
    /// `[1; y; y∘y]`, size `2n + 1`.
    #[default]
    Full,
    /// `[y; y∘y]`, size `2n`: no constant term.
    Reduced,
    /// `[y]`, size `n`: the linear network.
    Linear,
}

impl Lifting {
    pub fn block_size(self, n: usize) -> usize {
        match self {
            Lifting::Full => 2 * n + 1,
            Lifting::Reduced => 2 * n,
            Lifting::Linear => n,
        }
    }

    pub fn has_constant(self) -> bool {
        self == Lifting::Full
    }

    pub fn has_square(self) -> bool {
        self != Lifting::Linear
    }

    /// Offset of the linear `y` part inside a block.
    fn linear_offset(self) -> usize {
        usize::from(self.has_constant())
    }

    pub fn name(self) -> &'static str {
        match self {
            Lifting::Full => "full",
            Lifting::Reduced => "reduced",
            Lifting::Linear => "linear",
        }
    }
}

impl std::str::FromStr for Lifting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Lifting::Full),
            "reduced" => Ok(Lifting::Reduced),
            "linear" => Ok(Lifting::Linear),
            other => Err(Error::InvalidInput(format!("unknown lifting '{other}'"))),
        }
    }
}

/// Sensor count, observation dimensions, ranks, and the signal split used
/// by the block-diagonal initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPartition {
    signal_dim: usize,
    obs_dims: Vec<usize>,
    ranks: Vec<usize>,
    signal_split: Vec<usize>,
    lifting: Lifting,
}

impl BlockPartition {
    /// Builds a partition with the as-even-as-possible signal split.
    pub fn new(
        signal_dim: usize,
        obs_dims: Vec<usize>,
        ranks: Vec<usize>,
        lifting: Lifting,
    ) -> Result<Self> {
        let p = obs_dims.len();
        if p == 0 {
            return Err(Error::InvalidInput("at least one sensor is required".into()));
        }
        if signal_dim == 0 || obs_dims.contains(&0) {
            return Err(Error::InvalidInput(
                "signal and observation dimensions must be positive".into(),
            ));
        }
        if ranks.len() != p {
            return Err(Error::DimensionMismatch {
                context: "partition ranks",
                expected: format!("{p} ranks"),
                actual: format!("{} ranks", ranks.len()),
            });
        }
        for (j, (&r, &n)) in ranks.iter().zip(&obs_dims).enumerate() {
            if r > signal_dim.min(n) {
                return Err(Error::InvalidInput(format!(
                    "rank r_{} = {r} exceeds min(m, n_j) = {}",
                    j + 1,
                    signal_dim.min(n)
                )));
            }
        }
        let signal_split = even_split(signal_dim, p);
        Ok(Self {
            signal_dim,
            obs_dims,
            ranks,
            signal_split,
            lifting,
        })
    }

    pub fn with_signal_split(mut self, split: Vec<usize>) -> Result<Self> {
        if split.len() != self.obs_dims.len()
            || split.iter().sum::<usize>() != self.signal_dim
            || split.contains(&0)
        {
            return Err(Error::InvalidInput(format!(
                "signal split {split:?} must have {} positive parts summing to {}",
                self.obs_dims.len(),
                self.signal_dim
            )));
        }
        self.signal_split = split;
        Ok(self)
    }

    pub fn with_lifting(&self, lifting: Lifting) -> Self {
        Self {
            lifting,
            ..self.clone()
        }
    }

    pub fn with_ranks(&self, ranks: Vec<usize>) -> Result<Self> {
        Self::new(self.signal_dim, self.obs_dims.clone(), ranks, self.lifting)?
            .with_signal_split(self.signal_split.clone())
    }

    pub fn sensors(&self) -> usize {
        self.obs_dims.len()
    }

    pub fn signal_dim(&self) -> usize {
        self.signal_dim
    }

    pub fn obs_dim(&self, j: usize) -> usize {
        self.obs_dims[j]
    }

    pub fn obs_dims(&self) -> &[usize] {
        &self.obs_dims
    }

    pub fn rank(&self, j: usize) -> usize {
        self.ranks[j]
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn total_rank(&self) -> usize {
        self.ranks.iter().sum()
    }

    pub fn signal_split(&self) -> &[usize] {
        &self.signal_split
    }

    pub fn lifting(&self) -> Lifting {
        self.lifting
    }

    pub fn block_size(&self, j: usize) -> usize {
        self.lifting.block_size(self.obs_dims[j])
    }

    /// Global index range of sensor `j`'s lifted block.
    pub fn block_range(&self, j: usize) -> Range<usize> {
        let start: usize = (0..j).map(|i| self.block_size(i)).sum();
        start..start + self.block_size(j)
    }

    pub fn lifted_dim(&self) -> usize {
        (0..self.sensors()).map(|j| self.block_size(j)).sum()
    }

    /// Global index range of the rank-`r_j` slice of the stacked transmission.
    pub fn rank_range(&self, j: usize) -> Range<usize> {
        let start: usize = self.ranks[..j].iter().sum();
        start..start + self.ranks[j]
    }

    /// Range of signal rows assigned to sensor `j` by the initialization split.
    pub fn signal_range(&self, j: usize) -> Range<usize> {
        let start: usize = self.signal_split[..j].iter().sum();
        start..start + self.signal_split[j]
    }

    /// Within-block index of the constant coordinate.
    pub fn constant_local(&self) -> Option<usize> {
        self.lifting.has_constant().then_some(0)
    }

    /// Within-block range of the linear coordinates `y_j`.
    pub fn linear_local(&self, j: usize) -> Range<usize> {
        let off = self.lifting.linear_offset();
        off..off + self.obs_dims[j]
    }

    /// Within-block range of the squared coordinates `y_j∘y_j`.
    pub fn square_local(&self, j: usize) -> Option<Range<usize>> {
        self.lifting.has_square().then(|| {
            let off = self.lifting.linear_offset() + self.obs_dims[j];
            off..off + self.obs_dims[j]
        })
    }

    /// Global indices of the coordinates of block `j` that survive in
    /// `target` lifting (which must be no richer than this one).
    fn retained_indices(&self, j: usize, target: Lifting) -> Vec<usize> {
        let base = self.block_range(j).start;
        let mut idx = Vec::new();
        if target.has_constant() {
            if let Some(c) = self.constant_local() {
                idx.push(base + c);
            }
        }
        idx.extend(self.linear_local(j).map(|i| base + i));
        if target.has_square() {
            if let Some(sq) = self.square_local(j) {
                idx.extend(sq.map(|i| base + i));
            }
        }
        idx
    }
}

/// As-even-as-possible split of `m` into `p` positive parts (larger parts
/// first). Parts are zero when `p > m`.
pub fn even_split(m: usize, p: usize) -> Vec<usize> {
    (0..p).map(|j| m / p + usize::from(j < m % p)).collect()
}

/// Raw second moments `E_xx`, `E_xz`, `E_zz` plus their block partition.
#[derive(Debug, Clone)]
pub struct CovariancePack {
    pub exx: Mat,
    pub exz: Mat,
    pub ezz: Mat,
    pub partition: BlockPartition,
}

impl CovariancePack {
    pub fn new(exx: Mat, exz: Mat, ezz: Mat, partition: BlockPartition) -> Result<Self> {
        let m = partition.signal_dim();
        let l = partition.lifted_dim();
        let check = |what: &'static str, mat: &Mat, r: usize, c: usize| {
            if mat.shape() != (r, c) {
                Err(Error::DimensionMismatch {
                    context: what,
                    expected: dims(r, c),
                    actual: dims(mat.nrows(), mat.ncols()),
                })
            } else {
                Ok(())
            }
        };
        check("E_xx", &exx, m, m)?;
        check("E_xz", &exz, m, l)?;
        check("E_zz", &ezz, l, l)?;
        for (name, mat) in [("E_xx", &exx), ("E_xz", &exz), ("E_zz", &ezz)] {
            if !mat.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} contains NaN or Inf")));
            }
        }
        for (name, mat) in [("E_xx", &exx), ("E_zz", &ezz)] {
            let scale = mat.amax().max(1.0);
            if (mat - mat.transpose()).amax() > 1e-9 * scale {
                return Err(Error::InvalidInput(format!("{name} is not symmetric")));
            }
        }
        Ok(Self {
            exx,
            exz,
            ezz,
            partition,
        })
    }

    pub fn sensors(&self) -> usize {
        self.partition.sensors()
    }

    /// `E_{x z_j}`
    pub fn exz_block(&self, j: usize) -> Mat {
        let r = self.partition.block_range(j);
        self.exz.columns(r.start, r.len()).into_owned()
    }

    /// `E_{z_i z_j}`
    pub fn ezz_block(&self, i: usize, j: usize) -> Mat {
        let ri = self.partition.block_range(i);
        let rj = self.partition.block_range(j);
        self.ezz
            .view((ri.start, rj.start), (ri.len(), rj.len()))
            .into_owned()
    }

    /// `E_{z z_j}`: all rows, block `j` columns.
    pub fn ezz_cols(&self, j: usize) -> Mat {
        let r = self.partition.block_range(j);
        self.ezz.columns(r.start, r.len()).into_owned()
    }

    /// The same moments with each block reduced to a poorer lifting.
    ///
    /// `Linear` drops the constant and squared coordinates, leaving
    /// `E_xy`, `E_yy`; `Reduced` drops only the constant.
    pub fn restrict(&self, target: Lifting) -> Result<Self> {
        let current = self.partition.lifting();
        let allowed = match current {
            Lifting::Full => true,
            Lifting::Reduced => target != Lifting::Full,
            Lifting::Linear => target == Lifting::Linear,
        };
        if !allowed {
            return Err(Error::InvalidInput(format!(
                "cannot restrict {} lifting to {}",
                current.name(),
                target.name()
            )));
        }
        let idx: Vec<usize> = (0..self.sensors())
            .flat_map(|j| self.partition.retained_indices(j, target))
            .collect();
        let exz = self.exz.select_columns(&idx);
        let ezz = self.ezz.select_rows(&idx).select_columns(&idx);
        Self::new(
            self.exx.clone(),
            exz,
            ezz,
            self.partition.with_lifting(target),
        )
    }

    /// Linear-network moments `E_xy`, `E_yy` in pack form.
    pub fn linear(&self) -> Result<Self> {
        self.restrict(Lifting::Linear)
    }

    pub fn with_partition(&self, partition: BlockPartition) -> Result<Self> {
        Self::new(self.exx.clone(), self.exz.clone(), self.ezz.clone(), partition)
    }
}

/// Lifts an `n×s` block of observation columns into `[1; y; y∘y]`.
pub fn lift_sample(y: &Mat) -> Mat {
    lift_with(y, Lifting::Full)
}

/// Lifts observation columns with the given layout.
pub fn lift_with(y: &Mat, lifting: Lifting) -> Mat {
    let (n, s) = y.shape();
    let rows = lifting.block_size(n);
    let off = lifting.linear_offset();
    let mut z = Mat::zeros(rows, s);
    for c in 0..s {
        if lifting.has_constant() {
            z[(0, c)] = 1.0;
        }
        for i in 0..n {
            let v = y[(i, c)];
            z[(off + i, c)] = v;
            if lifting.has_square() {
                z[(off + n + i, c)] = v * v;
            }
        }
    }
    z
}

/// Stacked lifted observations for all sensors.
pub fn lift_all(ys: &[Mat], lifting: Lifting) -> Mat {
    let blocks: Vec<Mat> = ys.iter().map(|y| lift_with(y, lifting)).collect();
    vstack(&blocks)
}

pub fn vstack(blocks: &[Mat]) -> Mat {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, 0), b.shape()).copy_from(b);
        at += b.nrows();
    }
    out
}

pub fn hstack(rows: usize, blocks: &[Mat]) -> Mat {
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((0, at), b.shape()).copy_from(b);
        at += b.ncols();
    }
    out
}

/// Training-sample moments: `E_xz = X·Zᵀ/s`, `E_zz = Z·Zᵀ/s`, `E_xx = X·Xᵀ/s`.
pub fn sample_covariances(x: &Mat, ys: &[Mat], ranks: &[usize], lifting: Lifting) -> Result<CovariancePack> {
    let s = x.ncols();
    if s == 0 {
        return Err(Error::InvalidInput("at least one sample is required".into()));
    }
    for (j, y) in ys.iter().enumerate() {
        if y.ncols() != s {
            return Err(Error::DimensionMismatch {
                context: "observation samples",
                expected: format!("{s} columns for sensor {}", j + 1),
                actual: dims(y.nrows(), y.ncols()),
            });
        }
    }
    let partition = BlockPartition::new(
        x.nrows(),
        ys.iter().map(|y| y.nrows()).collect(),
        ranks.to_vec(),
        lifting,
    )?;
    let z = lift_all(ys, lifting);
    let inv = 1.0 / s as f64;
    let exx = symmetrize(&(x * x.transpose() * inv));
    let exz = x * z.transpose() * inv;
    let ezz = symmetrize(&(&z * z.transpose() * inv));
    CovariancePack::new(exx, exz, ezz, partition)
}

fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Analytic moments for `y_j = x + σ_j ξ_j` with Gaussian `x` in correlation
/// form and independent white Gaussian noise.
///
/// The squared coordinates follow the Gaussian fourth-moment rules in
/// deviation form: `E[x_i² x_k²] = 2ρ_ik²`, `E[ξ²ξ²] = 2σ⁴·I`, and all odd
/// cross moments vanish, so the second-degree block of sensor `j` is
/// modelled as `x∘x + ξ_j∘ξ_j` centred at its mean. The constant coordinate
/// (full lifting only) has unit power and is uncorrelated with the rest.
pub fn gaussian_analytic_covariances(
    exx: &Mat,
    noise_sd: &[f64],
    ranks: &[usize],
    lifting: Lifting,
) -> Result<CovariancePack> {
    let m = exx.nrows();
    if exx.ncols() != m {
        return Err(Error::DimensionMismatch {
            context: "gaussian_analytic_covariances",
            expected: "square E_xx".into(),
            actual: dims(m, exx.ncols()),
        });
    }
    if (exx - exx.transpose()).amax() > 1e-12 * exx.amax().max(1.0) {
        return Err(Error::InvalidInput("E_xx is not symmetric".into()));
    }
    if exx.diagonal().iter().any(|d| (d - 1.0).abs() > 1e-12) {
        return Err(Error::InvalidInput(
            "analytic moments require E_xx in correlation form (unit diagonal)".into(),
        ));
    }
    if noise_sd.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::InvalidInput("noise standard deviations must be >= 0".into()));
    }
    let p = noise_sd.len();
    let partition = BlockPartition::new(m, vec![m; p], ranks.to_vec(), Lifting::Full)?;

    let exx2 = exx.map(|rho| 2.0 * rho * rho);
    let l = partition.lifted_dim();
    let mut exz = Mat::zeros(m, l);
    let mut ezz = Mat::zeros(l, l);
    for i in 0..p {
        let bi = partition.block_range(i).start;
        exz.view_mut((0, bi + 1), (m, m)).copy_from(exx);
        for j in 0..p {
            let bj = partition.block_range(j).start;
            ezz[(bi, bj)] = 1.0;
            let mut lin = exx.clone();
            let mut sq = exx2.clone();
            if i == j {
                let var = noise_sd[i] * noise_sd[i];
                for d in 0..m {
                    lin[(d, d)] += var;
                    sq[(d, d)] += 2.0 * var * var;
                }
            }
            ezz.view_mut((bi + 1, bj + 1), (m, m)).copy_from(&lin);
            ezz.view_mut((bi + 1 + m, bj + 1 + m), (m, m)).copy_from(&sq);
        }
    }
    CovariancePack::new(exx.clone(), exz, ezz, partition)?.restrict(lifting)
}

/// The reduced problem `min ‖H − Σ P_j G_j‖²`.
#[derive(Debug, Clone)]
pub struct ReducedForm {
    pub h: Mat,
    pub g: Vec<Mat>,
    pub sqrt_ezz: Mat,
    /// `‖E_xx^{1/2}‖² − ‖H‖²`: the part of the error no model can remove.
    pub floor: f64,
}

impl ReducedForm {
    /// `φ(P) = ‖H − P·E_zz^{1/2}‖²` for the concatenated `P = [P_1 … P_p]`.
    pub fn objective(&self, p: &Mat) -> f64 {
        matalg::frob2(&(&self.h - p * &self.sqrt_ezz))
    }

    /// Moment-form MSE `‖E_xx^{1/2}‖² − ‖H‖² + φ(P)`, clamped at zero.
    pub fn error(&self, p: &Mat) -> f64 {
        (self.floor + self.objective(p)).max(0.0)
    }
}

/// Splits `E_zz^{1/2}` into sensor row blocks and forms `H = E_xz·(E_zz^{1/2})†`.
pub fn reduce(pack: &CovariancePack) -> Result<ReducedForm> {
    let sqrt_ezz = matalg::sqrt_psd_repaired(&pack.ezz)?;
    let h = &pack.exz * matalg::pinv(&sqrt_ezz, 0.0)?;
    let g = (0..pack.sensors())
        .map(|j| {
            let r = pack.partition.block_range(j);
            sqrt_ezz.rows(r.start, r.len()).into_owned()
        })
        .collect();
    let floor = pack.exx.trace() - matalg::frob2(&h);
    Ok(ReducedForm {
        h,
        g,
        sqrt_ezz,
        floor,
    })
}
