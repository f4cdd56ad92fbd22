//! Alternating fit through nonideal channels: sensor `j` transmits
//! `w_j = D_j S_j z_j + η_j` and the fusion center forms `x̂ = T w`.

use crate::covmodel::{CovariancePack, hstack};
use crate::error::{dims, Error, Result};
use crate::matalg::{self, Mat};
use crate::mbi::{FitConfig, FitTrace};
use crate::sdt::NetworkModel;

/// Fading matrices `D_j` and channel-noise covariances `E_{η_jη_j}`.
/// Noise in different channels is uncorrelated.
#[derive(Debug, Clone)]
pub struct ChannelSpec {
    pub d: Vec<Mat>,
    pub noise: Vec<Mat>,
}

impl ChannelSpec {
    pub fn new(d: Vec<Mat>, noise: Vec<Mat>) -> Result<Self> {
        if d.len() != noise.len() {
            return Err(Error::InvalidInput(format!(
                "{} fading matrices but {} noise covariances",
                d.len(),
                noise.len()
            )));
        }
        for (j, (dj, ej)) in d.iter().zip(&noise).enumerate() {
            let r = dj.nrows();
            if dj.ncols() != r || ej.shape() != (r, r) {
                return Err(Error::DimensionMismatch {
                    context: "channel",
                    expected: format!("square D_{0} and E_eta_{0} of equal size", j + 1),
                    actual: format!("{} and {}", dims(dj.nrows(), dj.ncols()), dims(ej.nrows(), ej.ncols())),
                });
            }
            if d.iter().chain(&noise).any(|m| !m.iter().all(|v| v.is_finite())) {
                return Err(Error::InvalidInput("channel matrices must be finite".into()));
            }
            if r > 0 {
                let lam = matalg::sym_eigenvalues(ej)?;
                let floor = -(r as f64) * f64::EPSILON * lam[0].abs().max(1.0);
                if lam[r - 1] < floor {
                    return Err(Error::NotPsd {
                        min_eigenvalue: lam[r - 1],
                    });
                }
            }
        }
        Ok(Self { d, noise })
    }

    /// `D_j = I`, no noise.
    pub fn ideal(ranks: &[usize]) -> Self {
        Self {
            d: ranks.iter().map(|&r| Mat::identity(r, r)).collect(),
            noise: ranks.iter().map(|&r| Mat::zeros(r, r)).collect(),
        }
    }

    fn check(&self, pack: &CovariancePack) -> Result<()> {
        let ranks = pack.partition.ranks();
        if self.d.len() != ranks.len() || self.d.iter().zip(ranks).any(|(d, &r)| d.nrows() != r) {
            return Err(Error::DimensionMismatch {
                context: "channel",
                expected: format!("D_j sizes {ranks:?}"),
                actual: format!("{:?}", self.d.iter().map(|d| d.nrows()).collect::<Vec<_>>()),
            });
        }
        Ok(())
    }
}

/// Fusion matrix `T` (`m × Σr_j`), sensor matrices `S_j` and the ψ history.
#[derive(Debug, Clone)]
pub struct ChannelFitState {
    pub t: Mat,
    pub s: Vec<Mat>,
    pub trace: FitTrace,
}

impl ChannelFitState {
    pub fn new(t: Mat, s: Vec<Mat>) -> Self {
        Self {
            t,
            s,
            trace: FitTrace::default(),
        }
    }

    /// Starts from an ideal-channel network.
    pub fn from_model(model: &NetworkModel) -> Self {
        Self::new(model.fusion.concat(), model.sensor_matrices())
    }

    pub fn t_block(&self, j: usize, pack: &CovariancePack) -> Mat {
        let r = pack.partition.rank_range(j);
        self.t.columns(r.start, r.len()).into_owned()
    }

    /// Per-sensor `T_j D_j S_j`.
    pub fn effective_blocks(&self, ch: &ChannelSpec, pack: &CovariancePack) -> Vec<Mat> {
        (0..self.s.len())
            .map(|j| self.t_block(j, pack) * &ch.d[j] * &self.s[j])
            .collect()
    }

    /// Trace CSV with columns `iteration,psi,chosen_candidate` (0 is the
    /// fusion-only candidate, `j` the one that also replaced `S_j`).
    pub fn trace_csv(&self) -> String {
        let mut buf = Vec::new();
        self.trace
            .write_csv(&mut buf, "psi", "chosen_candidate")
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("ASCII output")
    }
}

fn check_sensors(s: &[Mat], pack: &CovariancePack) -> Result<()> {
    let part = &pack.partition;
    if s.len() != part.sensors() {
        return Err(Error::DimensionMismatch {
            context: "sensor matrices",
            expected: format!("{}", part.sensors()),
            actual: format!("{}", s.len()),
        });
    }
    for (j, sj) in s.iter().enumerate() {
        let want = (part.rank(j), part.block_size(j));
        if sj.shape() != want {
            return Err(Error::DimensionMismatch {
                context: "sensor matrix",
                expected: dims(want.0, want.1),
                actual: dims(sj.nrows(), sj.ncols()),
            });
        }
    }
    Ok(())
}

/// `blockdiag(D_j S_j)`: `Σr_j × lifted_dim`.
fn channel_operator(s: &[Mat], ch: &ChannelSpec, pack: &CovariancePack) -> Mat {
    let part = &pack.partition;
    let mut out = Mat::zeros(part.total_rank(), part.lifted_dim());
    for (j, sj) in s.iter().enumerate() {
        let rows = part.rank_range(j);
        let cols = part.block_range(j);
        out.view_mut((rows.start, cols.start), (rows.len(), cols.len()))
            .copy_from(&(&ch.d[j] * sj));
    }
    out
}

fn noise_blockdiag(ch: &ChannelSpec, pack: &CovariancePack) -> Mat {
    let part = &pack.partition;
    let mut out = Mat::zeros(part.total_rank(), part.total_rank());
    for (j, e) in ch.noise.iter().enumerate() {
        let at = part.rank_range(j).start;
        out.view_mut((at, at), e.shape()).copy_from(e);
    }
    out
}

/// `E_xw` and `E_ww` of the received vector `w`.
pub fn propagate_channel_cov(s: &[Mat], ch: &ChannelSpec, pack: &CovariancePack) -> Result<(Mat, Mat)> {
    ch.check(pack)?;
    check_sensors(s, pack)?;
    let ds = channel_operator(s, ch, pack);
    let exw = &pack.exz * ds.transpose();
    let eww = &ds * &pack.ezz * ds.transpose() + noise_blockdiag(ch, pack);
    Ok((exw, (&eww + eww.transpose()) * 0.5))
}

/// `T = E_xw E_ww†` and the error it attains,
/// `tr E_xx − ‖E_xw (E_ww^{1/2})†‖²`.
pub fn fusion_update(exw: &Mat, eww: &Mat, exx: &Mat) -> Result<(Mat, f64)> {
    if eww.nrows() != eww.ncols() || exw.ncols() != eww.nrows() || exx.nrows() != exw.nrows() {
        return Err(Error::DimensionMismatch {
            context: "fusion_update",
            expected: format!("E_ww {0}x{0}", exw.ncols()),
            actual: dims(eww.nrows(), eww.ncols()),
        });
    }
    let t = exw * matalg::pinv(eww, 0.0)?;
    let root_pinv = matalg::pinv(&matalg::sqrt_psd_repaired(eww)?, 0.0)?;
    let explained = matalg::frob2(&(exw * root_pinv));
    Ok((t, (exx.trace() - explained).max(0.0)))
}

/// `Ŝ_j = (T_j D_j)† E_{x_(j) z_j} E_{z_j z_j}†` with
/// `E_{x_(j) z_j} = E_{x z_j} − Σ_{i≠j} T_i D_i S_i E_{z_i z_j}`.
pub fn sensor_update(j: usize, t: &Mat, s: &[Mat], ch: &ChannelSpec, pack: &CovariancePack) -> Result<Mat> {
    ch.check(pack)?;
    check_sensors(s, pack)?;
    let part = &pack.partition;
    if j >= part.sensors() {
        return Err(Error::InvalidInput(format!("sensor index {j} out of range")));
    }
    if t.shape() != (part.signal_dim(), part.total_rank()) {
        return Err(Error::DimensionMismatch {
            context: "fusion matrix",
            expected: dims(part.signal_dim(), part.total_rank()),
            actual: dims(t.nrows(), t.ncols()),
        });
    }
    let mut others = s.to_vec();
    others[j] = Mat::zeros(part.rank(j), part.block_size(j));
    let w_others = t * channel_operator(&others, ch, pack);
    let residual = pack.exz_block(j) - w_others * pack.ezz_cols(j);
    let rr = part.rank_range(j);
    let tj_dj = t.columns(rr.start, rr.len()) * &ch.d[j];
    Ok(matalg::pinv(&tj_dj, 0.0)? * residual * matalg::pinv(&pack.ezz_block(j, j), 0.0)?)
}

/// `ψ = tr E_xx − ‖E_xw (E_ww^{1/2})†‖² + ‖E_xw (E_ww^{1/2})† − T E_ww^{1/2}‖²`.
pub fn psi(t: &Mat, s: &[Mat], ch: &ChannelSpec, pack: &CovariancePack) -> Result<f64> {
    let (exw, eww) = propagate_channel_cov(s, ch, pack)?;
    check_fusion(t, &exw)?;
    let root = matalg::sqrt_psd_repaired(&eww)?;
    let k = &exw * matalg::pinv(&root, 0.0)?;
    let v = pack.exx.trace() - matalg::frob2(&k) + matalg::frob2(&(&k - t * root));
    Ok(v.max(0.0))
}

/// `E‖x − T w‖² = tr E_xx − 2 tr(T E_wx) + tr(T E_ww Tᵀ)`.
pub fn psi_direct(t: &Mat, s: &[Mat], ch: &ChannelSpec, pack: &CovariancePack) -> Result<f64> {
    let (exw, eww) = propagate_channel_cov(s, ch, pack)?;
    check_fusion(t, &exw)?;
    Ok(pack.exx.trace() - 2.0 * t.component_mul(&exw).sum() + (t * &eww).component_mul(t).sum())
}

fn check_fusion(t: &Mat, exw: &Mat) -> Result<()> {
    if t.shape() != exw.shape() {
        return Err(Error::DimensionMismatch {
            context: "fusion matrix",
            expected: dims(exw.nrows(), exw.ncols()),
            actual: dims(t.nrows(), t.ncols()),
        });
    }
    Ok(())
}

/// One round of candidates from sensors `s`: the fused `T'` and, per sensor,
/// `Ŝ_j` computed against `T'`. Returns `(T', [(ψ, S)])` with candidate 0
/// keeping every `S_j`.
/// `(ψ, sensors)` for each candidate.
type Candidates = Vec<(f64, Vec<Mat>)>;

fn candidates(s: &[Mat], ch: &ChannelSpec, pack: &CovariancePack) -> Result<(Mat, Candidates)> {
    let (exw, eww) = propagate_channel_cov(s, ch, pack)?;
    let (t_new, _) = fusion_update(&exw, &eww, &pack.exx)?;
    let mut out = Vec::with_capacity(s.len() + 1);
    out.push((psi(&t_new, s, ch, pack)?, s.to_vec()));
    for j in 0..s.len() {
        let mut cand = s.to_vec();
        cand[j] = sensor_update(j, &t_new, s, ch, pack)?;
        out.push((psi(&t_new, &cand, ch, pack)?, cand));
    }
    Ok((t_new, out))
}

/// Alternating fit. Each iteration recomputes `T` from the current sensors,
/// then offers `p + 1` candidates — the new `T` alone, or the new `T`
/// together with one re-optimized `S_j` — and accepts the one with the
/// smallest ψ (lowest index on ties). `cfg.init` is not used; the starting
/// point is `init`.
pub fn ai_fit(pack: &CovariancePack, ch: &ChannelSpec, cfg: &FitConfig, init: ChannelFitState) -> Result<ChannelFitState> {
    cfg.validate()?;
    let ChannelFitState { mut t, mut s, .. } = init;
    let mut value = psi(&t, &s, ch, pack)?;
    let mut trace = FitTrace::default();
    trace.objectives.push(value);

    for _ in 0..cfg.max_iterations {
        let (t_new, cands) = candidates(&s, ch, pack)?;
        let (k, _) = cands
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bk, bv), (k, (v, _))| if *v < bv { (k, *v) } else { (bk, bv) });
        let (next, chosen) = cands.into_iter().nth(k).expect("candidate index in range");
        t = t_new;
        s = chosen;
        let change = (value - next).abs();
        value = next;
        trace.objectives.push(value);
        trace.chosen_block.push(k);
        trace.nonunique_flags.push(false);
        trace.iterations += 1;
        if !value.is_finite() {
            return Err(Error::NumericalFailure("objective became non-finite".into()));
        }
        if change <= cfg.epsilon {
            trace.converged = true;
            break;
        }
    }
    Ok(ChannelFitState { t, s, trace })
}

/// Largest ψ decrease available from re-running the fusion update alone or
/// any single sensor update (with the re-fused `T`) at `state`.
pub fn stationarity_gap(state: &ChannelFitState, ch: &ChannelSpec, pack: &CovariancePack) -> Result<f64> {
    let current = psi(&state.t, &state.s, ch, pack)?;
    let (_, cands) = candidates(&state.s, ch, pack)?;
    let mut gap: f64 = 0.0;
    for (v, _) in &cands {
        gap = gap.max(current - v);
    }
    for j in 0..state.s.len() {
        let mut s = state.s.clone();
        s[j] = sensor_update(j, &state.t, &state.s, ch, pack)?;
        gap = gap.max(current - psi(&state.t, &s, ch, pack)?);
    }
    Ok(gap)
}

/// Stacked `T_j D_j S_j` as one `m × lifted_dim` matrix.
pub fn effective_composite(state: &ChannelFitState, ch: &ChannelSpec, pack: &CovariancePack) -> Mat {
    hstack(pack.partition.signal_dim(), &state.effective_blocks(ch, pack))
}
