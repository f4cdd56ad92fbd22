//! Greedy maximum-block-improvement fit for ideal channels.

use std::io::{self, Write};

use crate::covmodel::{hstack, CovariancePack, ReducedForm};
use crate::error::{dims, Error, Result};
use crate::matalg::{self, Mat, RowSpace};
use crate::sdt::{sdt_single, BlockSolution, FactorVariant, FusionCenter, NetworkModel, SecondDegreeSensor};

/// Starting point `P^(0)`.
#[derive(Debug, Clone, Default)]
pub enum InitStrategy {
    /// Block-diagonal decoupling: sensor `j` estimates only its share of the
    /// signal rows with its own single-sensor transform.
    #[default]
    PerBlockSdt,
    Zero,
    /// Caller-supplied blocks `P_j` (`m × block_size(j)`), each of rank
    /// at most `r_j`.
    Given(Vec<Mat>),
}

/// Which block(s) an iteration updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateRule {
    /// Solve every block, keep only the best improvement.
    #[default]
    MaxImprovement,
    /// Round-robin: block `q mod p` is re-solved and always accepted.
    Cyclic,
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub epsilon: f64,
    pub max_iterations: usize,
    pub init: InitStrategy,
    pub rule: UpdateRule,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-9,
            max_iterations: 100,
            init: InitStrategy::default(),
            rule: UpdateRule::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(Error::InvalidInput("epsilon must be >= 0".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Objective history of a fit. `objectives[0]` is the value at the starting
/// point; `objectives[q]` and `chosen_block[q - 1]` describe iteration `q`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitTrace {
    pub objectives: Vec<f64>,
    pub chosen_block: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub nonunique_flags: Vec<bool>,
}

impl FitTrace {
    fn start(initial: f64) -> Self {
        Self {
            objectives: vec![initial],
            ..Self::default()
        }
    }

    fn push(&mut self, objective: f64, chosen: usize, nonunique: bool) {
        self.objectives.push(objective);
        self.chosen_block.push(chosen);
        self.nonunique_flags.push(nonunique);
        self.iterations += 1;
    }

    pub fn initial(&self) -> f64 {
        self.objectives[0]
    }

    pub fn last(&self) -> f64 {
        *self.objectives.last().expect("trace always holds the initial value")
    }

    /// Largest increase between consecutive entries (≤ 0 for a monotone run).
    pub fn max_increase(&self) -> f64 {
        self.objectives
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        self.objectives.len() < 2 || self.max_increase() <= slack
    }

    /// CSV with columns `iteration,<value>,<choice>`; the choice column is
    /// empty for the starting point. Values use 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W, value: &str, choice: &str) -> io::Result<()> {
        writeln!(w, "iteration,{value},{choice}")?;
        for (q, obj) in self.objectives.iter().enumerate() {
            match q.checked_sub(1).map(|i| self.chosen_block[i]) {
                Some(k) => writeln!(w, "{q},{obj:.16e},{k}")?,
                None => writeln!(w, "{q},{obj:.16e},")?,
            }
        }
        Ok(())
    }

    /// Ideal-fit CSV (`iteration,objective,chosen_block`), blocks numbered from 1.
    pub fn to_csv(&self) -> String {
        let shifted = FitTrace {
            chosen_block: self.chosen_block.iter().map(|k| k + 1).collect(),
            ..self.clone()
        };
        let mut buf = Vec::new();
        shifted
            .write_csv(&mut buf, "objective", "chosen_block")
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("ASCII output")
    }
}

#[derive(Debug, Clone)]
pub struct IdealFit {
    pub blocks: Vec<BlockSolution>,
    pub trace: FitTrace,
}

impl IdealFit {
    pub fn composite(&self) -> Mat {
        let m = self.blocks.first().map_or(0, |b| b.p.nrows());
        let parts: Vec<Mat> = self.blocks.iter().map(|b| b.p.clone()).collect();
        hstack(m, &parts)
    }

    pub fn block_matrices(&self) -> Vec<Mat> {
        self.blocks.iter().map(|b| b.p.clone()).collect()
    }
}

/// `P_j^(0)`: sensor `j` fits signal rows `signal_range(j)` from its own
/// lifted observation, zero elsewhere.
pub fn initial_iterations(pack: &CovariancePack) -> Result<Vec<BlockSolution>> {
    let part = &pack.partition;
    let m = part.signal_dim();
    (0..part.sensors())
        .map(|j| {
            let rows = part.signal_range(j);
            let exz = pack.exz_block(j).rows(rows.start, rows.len()).into_owned();
            let sol = sdt_single(&exz, &pack.ezz_block(j, j), part.rank(j))?;
            Ok(sol.embed_rows(m, rows.start))
        })
        .collect()
}

/// Blocks given as plain matrices; factors are recovered by an SVD so the
/// result can still be extracted into sensors.
fn given_blocks(blocks: &[Mat], pack: &CovariancePack) -> Result<Vec<BlockSolution>> {
    let part = &pack.partition;
    if blocks.len() != part.sensors() {
        return Err(Error::DimensionMismatch {
            context: "initial blocks",
            expected: format!("{} blocks", part.sensors()),
            actual: format!("{}", blocks.len()),
        });
    }
    blocks
        .iter()
        .enumerate()
        .map(|(j, b)| {
            let want = (part.signal_dim(), part.block_size(j));
            if b.shape() != want {
                return Err(Error::DimensionMismatch {
                    context: "initial block",
                    expected: dims(want.0, want.1),
                    actual: dims(b.nrows(), b.ncols()),
                });
            }
            let f = matalg::svd(b)?;
            let k = f.rank(0.0);
            if k > part.rank(j) {
                return Err(Error::InvalidInput(format!(
                    "initial block {} has rank {k} > r_j = {}",
                    j + 1,
                    part.rank(j)
                )));
            }
            let core = matalg::TruncatedSvd {
                u: f.u.columns(0, k).into_owned(),
                sigma: f.s[..k].to_vec(),
                v: f.v.columns(0, k).into_owned(),
                nonunique: false,
            };
            Ok(BlockSolution::from_core(&core, &Mat::identity(want.1, want.1)))
        })
        .collect()
}

fn starting_blocks(pack: &CovariancePack, init: &InitStrategy) -> Result<Vec<BlockSolution>> {
    let part = &pack.partition;
    match init {
        InitStrategy::PerBlockSdt => initial_iterations(pack),
        InitStrategy::Zero => Ok((0..part.sensors())
            .map(|j| BlockSolution::zero(part.signal_dim(), part.block_size(j)))
            .collect()),
        InitStrategy::Given(b) => given_blocks(b, pack),
    }
}

/// Cached state of the greedy loop: `PG_j = P_j G_j` per block.
struct Sweep<'a> {
    red: &'a ReducedForm,
    spaces: Vec<RowSpace>,
    ranks: Vec<usize>,
    pg: Vec<Mat>,
}

impl<'a> Sweep<'a> {
    fn new(red: &'a ReducedForm, pack: &CovariancePack, blocks: &[BlockSolution]) -> Result<Self> {
        let spaces = red.g.iter().map(RowSpace::new).collect::<Result<Vec<_>>>()?;
        let pg = blocks.iter().zip(&red.g).map(|(b, g)| &b.p * g).collect();
        Ok(Self {
            red,
            spaces,
            ranks: pack.partition.ranks().to_vec(),
            pg,
        })
    }

    fn residual(&self) -> Mat {
        self.pg.iter().fold(self.red.h.clone(), |acc, pg| acc - pg)
    }

    /// Best block-`j` replacement: `(solution, new P_j G_j, φ)`.
    fn candidate(&self, residual: &Mat, j: usize) -> Result<(BlockSolution, Mat, f64)> {
        let q = residual + &self.pg[j];
        let sol = matalg::solve_in_row_space(&q, &self.spaces[j], self.ranks[j])?;
        let block = BlockSolution::from_core(&sol.core, &self.spaces[j].g_pinv);
        let pg = &block.p * &self.spaces[j].g;
        let phi = matalg::frob2(&(q - &pg));
        Ok((block, pg, phi))
    }

    fn accept(&mut self, j: usize, pg: Mat) {
        self.pg[j] = pg;
    }
}

/// Fits `min ‖H − Σ P_j G_j‖²` over rank-`r_j` blocks.
pub fn mbi_fit(red: &ReducedForm, pack: &CovariancePack, cfg: &FitConfig) -> Result<IdealFit> {
    cfg.validate()?;
    if red.g.len() != pack.sensors() {
        return Err(Error::DimensionMismatch {
            context: "mbi_fit",
            expected: format!("{} G blocks", pack.sensors()),
            actual: format!("{}", red.g.len()),
        });
    }
    let mut blocks = starting_blocks(pack, &cfg.init)?;
    let mut sweep = Sweep::new(red, pack, &blocks)?;
    let mut phi = matalg::frob2(&sweep.residual());
    let mut trace = FitTrace::start(phi);
    let p = blocks.len();
    let mut recent = Vec::with_capacity(p);

    for q in 0..cfg.max_iterations {
        let residual = sweep.residual();
        let (k, (block, pg, next)) = match cfg.rule {
            UpdateRule::MaxImprovement => {
                let mut best: Option<(usize, (BlockSolution, Mat, f64))> = None;
                for j in 0..p {
                    let cand = sweep.candidate(&residual, j)?;
                    // strict `<` keeps the smallest index on ties
                    if best.as_ref().is_none_or(|(_, b)| cand.2 < b.2) {
                        best = Some((j, cand));
                    }
                }
                best.expect("at least one sensor")
            }
            UpdateRule::Cyclic => {
                let j = q % p;
                (j, sweep.candidate(&residual, j)?)
            }
        };
        let nonunique = block.nonunique;
        sweep.accept(k, pg);
        blocks[k] = block;
        let change = (phi - next).abs();
        phi = next;
        trace.push(phi, k, nonunique);

        let done = match cfg.rule {
            UpdateRule::MaxImprovement => change <= cfg.epsilon,
            UpdateRule::Cyclic => {
                recent.push(change);
                if recent.len() > p {
                    recent.remove(0);
                }
                recent.len() == p && recent.iter().sum::<f64>() <= cfg.epsilon
            }
        };
        if done {
            trace.converged = true;
            break;
        }
    }
    Ok(IdealFit { blocks, trace })
}

/// Largest decrease of `φ` any single-block re-solve could still achieve
/// from `blocks` (zero at a coordinate-wise minimum).
pub fn stationarity_gap(red: &ReducedForm, pack: &CovariancePack, blocks: &[BlockSolution]) -> Result<f64> {
    let sweep = Sweep::new(red, pack, blocks)?;
    let residual = sweep.residual();
    let phi = matalg::frob2(&residual);
    let mut gap: f64 = 0.0;
    for j in 0..blocks.len() {
        let (_, _, cand) = sweep.candidate(&residual, j)?;
        gap = gap.max(phi - cand);
    }
    Ok(gap)
}

/// `(‖H‖ + φ(P^(0))^{1/2} + 1) / σ_min⁺(E_zz^{1/2})`: iterates of the greedy
/// fit stay inside this Frobenius ball when their rows lie in the range of
/// `E_zz`. `None` if `E_zz = 0`.
pub fn iterate_norm_bound(red: &ReducedForm, initial_objective: f64) -> Result<Option<f64>> {
    let smin = matalg::min_positive_singular_value(&red.sqrt_ezz)?;
    Ok(smin.map(|s| (red.h.norm() + initial_objective.sqrt() + 1.0) / s))
}

/// Sensors and fusion center from fitted blocks.
pub fn extract_models(
    blocks: &[BlockSolution],
    pack: &CovariancePack,
    variant: FactorVariant,
) -> Result<NetworkModel> {
    let part = &pack.partition;
    let mut sensors = Vec::with_capacity(blocks.len());
    let mut fusion = Vec::with_capacity(blocks.len());
    for (j, b) in blocks.iter().enumerate() {
        let (t, s) = b.factor(variant, part.rank(j));
        sensors.push(SecondDegreeSensor::from_stacked(&s, part.obs_dim(j), part.lifting())?);
        fusion.push(t);
    }
    NetworkModel::new(sensors, FusionCenter { blocks: fusion }, part.clone())
}

/// `x̂ = Σ_j T_j [S_{j,0} + S_{j,1} y_j + S_{j,2} y_j²]` for each sample column.
pub fn apply_network(model: &NetworkModel, ys: &[Mat]) -> Result<Mat> {
    model.apply(ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covmodel::{gaussian_analytic_covariances, reduce, Lifting};

    fn example1() -> CovariancePack {
        let exx = Mat::from_row_slice(3, 3, &[1.0, 0.64, 0.08, 0.64, 1.0, 0.08, 0.08, 0.08, 1.0]);
        gaussian_analytic_covariances(&exx, &[0.9, 0.65], &[1, 1], Lifting::Reduced).unwrap()
    }

    #[test]
    fn single_block_converges_to_sdt() {
        let exx = Mat::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let pack = gaussian_analytic_covariances(&exx, &[0.4], &[1], Lifting::Full).unwrap();
        let red = reduce(&pack).unwrap();
        let cfg = FitConfig {
            init: InitStrategy::Zero,
            ..FitConfig::default()
        };
        let fit = mbi_fit(&red, &pack, &cfg).unwrap();
        let sdt = sdt_single(&pack.exz, &pack.ezz, 1).unwrap();
        assert!((fit.composite() - &sdt.p).amax() < 1e-10);
        assert!(fit.trace.converged);
        assert!(fit.trace.iterations <= 2);
        let drop = fit.trace.initial() - fit.trace.last();
        let exact = crate::sdt::error_exact(&Mat::zeros(2, 5), &pack).unwrap()
            - crate::sdt::error_exact(&sdt.p, &pack).unwrap();
        assert!((drop - exact).abs() < 1e-10);
    }

    #[test]
    fn huge_epsilon_stops_after_one_update() {
        let pack = example1();
        let red = reduce(&pack).unwrap();
        let cfg = FitConfig {
            epsilon: 1e9,
            ..FitConfig::default()
        };
        let fit = mbi_fit(&red, &pack, &cfg).unwrap();
        assert_eq!(fit.trace.iterations, 1);
        assert!(fit.trace.converged);
    }

    #[test]
    fn example1_trace_is_monotone() {
        let pack = example1();
        let red = reduce(&pack).unwrap();
        let cfg = FitConfig {
            epsilon: 0.0,
            max_iterations: 50,
            ..FitConfig::default()
        };
        let fit = mbi_fit(&red, &pack, &cfg).unwrap();
        assert!(fit.trace.is_monotone(1e-10));
        assert!(fit.trace.objectives.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn uninformative_init_is_zero() {
        let part = crate::covmodel::BlockPartition::new(2, vec![1, 1], vec![1, 1], Lifting::Full).unwrap();
        let pack = CovariancePack::new(Mat::identity(2, 2), Mat::zeros(2, 6), Mat::identity(6, 6), part).unwrap();
        let init = initial_iterations(&pack).unwrap();
        assert!(init.iter().all(|b| b.p.amax() == 0.0));
    }

    #[test]
    fn extraction_reassembles() {
        let pack = example1();
        let red = reduce(&pack).unwrap();
        let fit = mbi_fit(&red, &pack, &FitConfig::default()).unwrap();
        for variant in [FactorVariant::Orthonormal, FactorVariant::Weighted] {
            let model = extract_models(&fit.blocks, &pack, variant).unwrap();
            assert!((model.composite() - fit.composite()).amax() < 1e-10);
        }
        let model = extract_models(&fit.blocks, &pack, FactorVariant::Orthonormal).unwrap();
        for t in &model.fusion.blocks {
            assert!((t.transpose() * t - Mat::identity(t.ncols(), t.ncols())).amax() < 1e-10);
        }
    }

    #[test]
    fn zero_rank_block_is_empty() {
        let exx = Mat::identity(2, 2);
        let pack = gaussian_analytic_covariances(&exx, &[0.3, 0.3], &[0, 1], Lifting::Full).unwrap();
        let red = reduce(&pack).unwrap();
        let fit = mbi_fit(&red, &pack, &FitConfig::default()).unwrap();
        let model = extract_models(&fit.blocks, &pack, FactorVariant::Orthonormal).unwrap();
        assert_eq!(model.fusion.blocks[0].shape(), (2, 0));
        assert_eq!(model.sensors[0].stacked().shape(), (0, 5));
        assert_eq!(fit.blocks[0].p.amax(), 0.0);
    }

    #[test]
    fn trace_csv_layout() {
        let mut t = FitTrace::start(2.0);
        t.push(1.5, 0, false);
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "iteration,objective,chosen_block");
        assert_eq!(lines[1], "0,2.0000000000000000e0,");
        assert_eq!(lines[2], "1,1.5000000000000000e0,1");
    }

    #[test]
    fn rejects_bad_config() {
        let pack = example1();
        let red = reduce(&pack).unwrap();
        let cfg = FitConfig {
            max_iterations: 0,
            ..FitConfig::default()
        };
        assert!(mbi_fit(&red, &pack, &cfg).is_err());
    }
}
