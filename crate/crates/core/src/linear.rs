//! The linear network (`S_{j,0} = 0`, `S_{j,2} = 0`) fitted with the same
//! greedy machinery, its block error, and the second-degree-vs-linear test.

use crate::covmodel::{BlockPartition, CovariancePack};
use crate::error::{dims, Error, Result};
use crate::matalg::Mat;
use crate::mbi::{extract_models, mbi_fit, FitConfig, FitTrace, IdealFit};
use crate::sdt::{block_error_terms, BlockErrorTerms, FactorVariant, NetworkModel};

/// `F_j = T_j B_j` (`m×n_j`, rank ≤ `r_j`) and the factored network.
#[derive(Debug, Clone)]
pub struct LinearNetworkModel {
    pub blocks: Vec<Mat>,
    pub model: NetworkModel,
}

impl LinearNetworkModel {
    pub fn apply(&self, ys: &[Mat]) -> Result<Mat> {
        self.model.apply(ys)
    }

    /// The same network written in a richer lifting's layout.
    pub fn embedded(&self, partition: &BlockPartition) -> Result<Vec<Mat>> {
        embed_linear(&self.blocks, partition)
    }
}

/// Fits the linear network on the `y`-moments of `pack` (whatever its
/// lifting). Returns the model, the raw fit and the restricted pack.
pub fn linear_fit_full(pack: &CovariancePack, cfg: &FitConfig) -> Result<(LinearNetworkModel, IdealFit, CovariancePack)> {
    let lin = pack.linear()?;
    let red = crate::covmodel::reduce(&lin)?;
    let fit = mbi_fit(&red, &lin, cfg)?;
    let model = extract_models(&fit.blocks, &lin, FactorVariant::default())?;
    let model = LinearNetworkModel {
        blocks: fit.block_matrices(),
        model,
    };
    Ok((model, fit, lin))
}

pub fn linear_fit(pack: &CovariancePack, cfg: &FitConfig) -> Result<(LinearNetworkModel, FitTrace)> {
    let (model, fit, _) = linear_fit_full(pack, cfg)?;
    Ok((model, fit.trace))
}

/// Places `F_j` in the `y` columns of each lifted block; constant and
/// squared columns are zero.
pub fn embed_linear(f: &[Mat], partition: &BlockPartition) -> Result<Vec<Mat>> {
    if f.len() != partition.sensors() {
        return Err(Error::DimensionMismatch {
            context: "embed_linear",
            expected: format!("{} blocks", partition.sensors()),
            actual: format!("{}", f.len()),
        });
    }
    f.iter()
        .enumerate()
        .map(|(j, fj)| {
            let n = partition.obs_dim(j);
            let m = partition.signal_dim();
            if fj.shape() != (m, n) {
                return Err(Error::DimensionMismatch {
                    context: "embed_linear",
                    expected: dims(m, n),
                    actual: dims(fj.nrows(), fj.ncols()),
                });
            }
            let mut out = Mat::zeros(m, partition.block_size(j));
            out.view_mut((0, partition.linear_local(j).start), (m, n)).copy_from(fj);
            Ok(out)
        })
        .collect()
}

/// Block-optimal linear error at sensor `j` given the other `F_i`.
pub fn error_linear_formula(j: usize, f_all: &[Mat], pack: &CovariancePack) -> Result<f64> {
    Ok(linear_error_terms(j, f_all, pack)?.value())
}

/// `σ_i` are the `delta` field and `α_j` the `beta` field of the result.
pub fn linear_error_terms(j: usize, f_all: &[Mat], pack: &CovariancePack) -> Result<BlockErrorTerms> {
    block_error_terms(j, f_all, &pack.linear()?)
}

/// Outcome of the second-degree-vs-linear condition at one block.
#[derive(Debug, Clone)]
pub struct Comparison {
    /// `α_j − β_j < Σ_{i≤r_j}(δ_i − σ_i)` beyond round-off.
    pub holds: bool,
    /// `(α_j − β_j) − Σ_{i≤r_j}(δ_i − σ_i)`; negative when the condition holds.
    pub gap: f64,
    pub sd_error: f64,
    pub linear_error: f64,
    pub sd: BlockErrorTerms,
    pub linear: BlockErrorTerms,
}

impl Comparison {
    /// `Σ μ_{j,i}`: the squared coordinates' contribution at full rank.
    pub fn mu_sum(&self) -> f64 {
        self.sd.mu.iter().sum()
    }
}

/// Relative size under which a gap is treated as round-off.
const GAP_REL_TOL: f64 = 1e-10;

/// Compares the block-`j` optimum of the second-degree network (other
/// blocks `p_all`) against the block-`j` optimum of the linear network
/// (other blocks `f_all`).
pub fn compare_condition(j: usize, p_all: &[Mat], f_all: &[Mat], pack: &CovariancePack) -> Result<Comparison> {
    let sd = block_error_terms(j, p_all, pack)?;
    let linear = linear_error_terms(j, f_all, pack)?;
    let gain: f64 = sd.delta_top() - linear.delta_top();
    let gap = (linear.beta - sd.beta) - gain;
    let scale = sd.trace_exx.abs().max(f64::MIN_POSITIVE);
    Ok(Comparison {
        holds: gap < -GAP_REL_TOL * scale,
        gap,
        sd_error: sd.value(),
        linear_error: linear.value(),
        sd,
        linear,
    })
}
