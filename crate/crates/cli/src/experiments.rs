//! Config-driven experiment runs: build moments, fit the second-degree and
//! linear networks, and evaluate them with the core error routines.

use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};

use sdwsn_core::channel::{ai_fit, ChannelFitState, ChannelSpec};
use sdwsn_core::covmodel::{
    gaussian_analytic_covariances, reduce, sample_covariances, CovariancePack, Lifting,
};
use sdwsn_core::linear::linear_fit_full;
use sdwsn_core::mbi::{extract_models, mbi_fit, FitConfig, FitTrace, IdealFit};
use sdwsn_core::sdt::{error_exact, FactorVariant};
use sdwsn_core::sim::{self, SimRng};
use sdwsn_core::Mat;

use crate::config::{ExperimentConfig, Mask, Mode, Source};
use crate::imageio;

pub const SECOND_DEGREE: &str = "second-degree";
pub const LINEAR: &str = "linear";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    /// `iteration,objective,chosen_block`
    Ideal,
    /// `iteration,psi,chosen_candidate`
    Channel,
}

#[derive(Debug, Clone)]
pub struct MethodResult {
    pub name: String,
    pub mse: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: FitTrace,
    pub kind: TraceKind,
}

impl MethodResult {
    fn ideal(name: &str, mse: f64, trace: FitTrace) -> Self {
        Self {
            name: name.into(),
            mse,
            iterations: trace.iterations,
            converged: trace.converged,
            trace,
            kind: TraceKind::Ideal,
        }
    }

    fn channel(name: &str, state: &ChannelFitState) -> Self {
        Self {
            name: name.into(),
            mse: state.trace.last(),
            iterations: state.trace.iterations,
            converged: state.trace.converged,
            trace: state.trace.clone(),
            kind: TraceKind::Channel,
        }
    }

    pub fn trace_csv(&self) -> String {
        match self.kind {
            TraceKind::Ideal => self.trace.to_csv(),
            TraceKind::Channel => {
                let mut buf = Vec::new();
                self.trace
                    .write_csv(&mut buf, "psi", "chosen_candidate")
                    .expect("writing to a Vec cannot fail");
                String::from_utf8(buf).expect("ASCII output")
            }
        }
    }
}

/// Per-column reconstruction errors `‖X(i) − X̂(i)‖²`, one vector per method.
#[derive(Debug, Clone)]
pub struct ColumnErrors {
    pub methods: Vec<String>,
    pub errors: Vec<Vec<f64>>,
}

impl ColumnErrors {
    pub fn mean(&self, method: &str) -> Option<f64> {
        let k = self.methods.iter().position(|m| m == method)?;
        let e = &self.errors[k];
        Some(e.iter().sum::<f64>() / e.len().max(1) as f64)
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub experiment: String,
    pub methods: Vec<MethodResult>,
    pub per_column: Option<ColumnErrors>,
    /// Source and reconstructed images (image mode).
    pub images: Vec<(String, Mat)>,
    /// Moments the fits were trained on.
    pub pack: CovariancePack,
    pub wall_time: Duration,
}

impl RunReport {
    pub fn method(&self, name: &str) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.name == name)
    }

    pub fn mse(&self, name: &str) -> Option<f64> {
        self.method(name).map(|m| m.mse)
    }

    fn check(&self) -> Result<()> {
        for m in &self.methods {
            ensure!(
                m.mse.is_finite() && m.mse >= 0.0,
                "{}: MSE {} is not a finite nonnegative value",
                m.name,
                m.mse
            );
            ensure!(m.trace.objectives.iter().all(|v| v.is_finite()), "{}: non-finite objective in the trace", m.name);
        }
        if let Some(pc) = &self.per_column {
            ensure!(pc.errors.iter().flatten().all(|v| v.is_finite()), "non-finite per-column error");
        }
        Ok(())
    }
}

/// Runs the experiment a config describes.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    let start = Instant::now();
    let mut report = match (cfg.mode, cfg.source) {
        (Mode::Ideal, Source::AnalyticGaussian) => run_example1(cfg),
        (Mode::Ideal, Source::SampleData) => run_example2(cfg),
        (Mode::Ideal, Source::Image) => run_example4(cfg),
        (Mode::Channel, Source::AnalyticGaussian) => run_example5(cfg),
        (Mode::Channel, _) => bail!("channel mode supports source = \"analytic-gaussian\" only"),
    }?;
    report.wall_time = start.elapsed();
    report.check()?;
    Ok(report)
}

fn experiment_name(cfg: &ExperimentConfig, default: &str) -> String {
    cfg.name.clone().unwrap_or_else(|| default.into())
}

fn with_split(pack: CovariancePack, cfg: &ExperimentConfig) -> Result<CovariancePack> {
    match &cfg.partition.signal_split {
        Some(split) => {
            let part = pack.partition.clone().with_signal_split(split.clone())?;
            Ok(pack.with_partition(part)?)
        }
        None => Ok(pack),
    }
}

fn analytic_pack(cfg: &ExperimentConfig) -> Result<CovariancePack> {
    let exx = cfg.exx()?;
    let m = exx.nrows();
    ensure!(
        cfg.obs_dims(m).iter().all(|&n| n == m),
        "analytic Gaussian moments observe the whole signal: every n_j must equal m = {m}"
    );
    let sigma = cfg.per_sensor("sigma", &cfg.noise.sigma)?;
    let pack = gaussian_analytic_covariances(&exx, &sigma, &cfg.partition.ranks, cfg.lifting()?)?;
    with_split(pack, cfg)
}

/// Greedy second-degree fit on `pack` and the linear fit on its `y`-moments.
fn ideal_pair(pack: &CovariancePack, fit_cfg: &FitConfig) -> Result<(IdealFit, IdealFit, CovariancePack)> {
    let sd = mbi_fit(&reduce(pack)?, pack, fit_cfg)?;
    let (_, lin, lin_pack) = linear_fit_full(pack, fit_cfg)?;
    Ok((sd, lin, lin_pack))
}

fn ideal_methods(pack: &CovariancePack, sd: &IdealFit, lin: &IdealFit, lin_pack: &CovariancePack) -> Result<Vec<MethodResult>> {
    Ok(vec![
        MethodResult::ideal(SECOND_DEGREE, error_exact(&sd.composite(), pack)?, sd.trace.clone()),
        MethodResult::ideal(LINEAR, error_exact(&lin.composite(), lin_pack)?, lin.trace.clone()),
    ])
}

/// Analytic Gaussian moments, ideal channels.
pub fn run_example1(cfg: &ExperimentConfig) -> Result<RunReport> {
    let pack = analytic_pack(cfg)?;
    let (sd, lin, lin_pack) = ideal_pair(&pack, &cfg.fit_config()?)?;
    Ok(RunReport {
        experiment: experiment_name(cfg, "analytic-gaussian"),
        methods: ideal_methods(&pack, &sd, &lin, &lin_pack)?,
        per_column: None,
        images: Vec::new(),
        pack,
        wall_time: Duration::ZERO,
    })
}

/// Simulated data: `x ~ U[0,1]^m`, `A_j` with `U[0,1]` entries,
/// `y_j = A_j x + β_j ξ_j` with standard normal `ξ_j`; fits use the sample
/// moments of `data.samples` draws.
pub fn run_example2(cfg: &ExperimentConfig) -> Result<RunReport> {
    let m = cfg.signal.dim.context("signal.dim is required for sample-data")?;
    let beta = cfg.per_sensor("beta", &cfg.noise.beta)?;
    let s = cfg.data.samples;
    let mut rng = sim::rng(cfg.seed);
    let x = sim::uniform(&mut rng, m, s, 0.0, 1.0);
    let ys: Vec<Mat> = cfg
        .obs_dims(m)
        .iter()
        .zip(&beta)
        .map(|(&n, &b)| {
            let a = sim::uniform(&mut rng, n, m, 0.0, 1.0);
            a * &x + sim::standard_normal(&mut rng, n, s) * b
        })
        .collect();
    let pack = sample_covariances(&x, &ys, &cfg.partition.ranks, cfg.lifting()?)?;
    let pack = with_split(pack, cfg)?;
    let (sd, lin, lin_pack) = ideal_pair(&pack, &cfg.fit_config()?)?;
    Ok(RunReport {
        experiment: experiment_name(cfg, "sample-data"),
        methods: ideal_methods(&pack, &sd, &lin, &lin_pack)?,
        per_column: None,
        images: Vec::new(),
        pack,
        wall_time: Duration::ZERO,
    })
}

/// Observed image pair for [`run_example4`]: `Y_j = A_j∘X + β_j Ξ_j`.
pub fn image_observations(rng: &mut SimRng, x: &Mat, beta: &[f64], mask: Mask) -> Vec<Mat> {
    let (h, w) = x.shape();
    beta.iter()
        .map(|&b| {
            let a = match mask {
                Mask::Gaussian => sim::standard_normal(rng, h, w),
                Mask::Ones => Mat::from_element(h, w, 1.0),
            };
            let xi = sim::standard_normal(rng, h, w);
            a.component_mul(x) + xi * b
        })
        .collect()
}

/// 0-based indices of the training columns: the even ones counting from 1.
pub fn training_columns(w: usize) -> Vec<usize> {
    (1..w).step_by(2).collect()
}

fn select_columns(m: &Mat, cols: &[usize]) -> Mat {
    Mat::from_fn(m.nrows(), cols.len(), |r, c| m[(r, cols[c])])
}

fn column_errors(x: &Mat, xhat: &Mat) -> Vec<f64> {
    (0..x.ncols()).map(|i| (x.column(i) - xhat.column(i)).norm_squared()).collect()
}

pub fn load_image(cfg: &ExperimentConfig) -> Result<Mat> {
    match (&cfg.image.path, cfg.image.synthetic) {
        (Some(p), None) => imageio::read_image(&cfg.resolve(p)),
        (None, Some(n)) => {
            ensure!(n >= 2, "image.synthetic must be at least 2");
            Ok(imageio::synthetic(n))
        }
        (Some(_), Some(_)) => bail!("give image.path or image.synthetic, not both"),
        (None, None) => bail!("image mode needs image.path or image.synthetic"),
    }
}

/// Image compression: each image column is a sample of `x`; both sensors see
/// the whole column through a random Hadamard mask plus noise. Fits use the
/// even columns; every column is reconstructed.
pub fn run_example4(cfg: &ExperimentConfig) -> Result<RunReport> {
    let x = load_image(cfg)?;
    let (h, w) = x.shape();
    ensure!(w >= 2, "the image needs at least two columns");
    if let Some(m) = cfg.signal.dim {
        ensure!(m == h, "signal.dim = {m} but the image has {h} rows");
    }
    ensure!(
        cfg.obs_dims(h).iter().all(|&n| n == h),
        "image sensors observe whole columns: every n_j must equal the image height {h}"
    );
    let beta = cfg.per_sensor("beta", &cfg.noise.beta)?;
    let mut rng = sim::rng(cfg.seed);
    let ys = image_observations(&mut rng, &x, &beta, cfg.image.mask);

    let train = training_columns(w);
    let xt = select_columns(&x, &train);
    let yt: Vec<Mat> = ys.iter().map(|y| select_columns(y, &train)).collect();
    let lifting = cfg.lifting()?;
    let pack = with_split(sample_covariances(&xt, &yt, &cfg.partition.ranks, lifting)?, cfg)?;
    let (sd, lin, lin_pack) = ideal_pair(&pack, &cfg.fit_config()?)?;

    let x_sd = sd.composite() * sim::lift_observations(&ys, lifting);
    let x_lin = lin.composite() * sim::lift_observations(&ys, Lifting::Linear);
    let per_column = ColumnErrors {
        methods: vec![SECOND_DEGREE.into(), LINEAR.into()],
        errors: vec![column_errors(&x, &x_sd), column_errors(&x, &x_lin)],
    };
    Ok(RunReport {
        experiment: experiment_name(cfg, "image"),
        methods: ideal_methods(&pack, &sd, &lin, &lin_pack)?,
        per_column: Some(per_column),
        images: vec![
            ("source".into(), x),
            (SECOND_DEGREE.into(), x_sd),
            (LINEAR.into(), x_lin),
        ],
        pack,
        wall_time: Duration::ZERO,
    })
}

/// Starting point for the channel fit: the ideal-channel greedy fit, factored.
pub fn channel_start(pack: &CovariancePack, fit_cfg: &FitConfig, variant: FactorVariant) -> Result<ChannelFitState> {
    let fit = mbi_fit(&reduce(pack)?, pack, fit_cfg)?;
    let model = extract_models(&fit.blocks, pack, variant)?;
    Ok(ChannelFitState::from_model(&model))
}

/// Second-degree and linear networks fitted through the channel.
pub fn channel_pair(
    pack: &CovariancePack,
    ch: &ChannelSpec,
    fit_cfg: &FitConfig,
    variant: FactorVariant,
) -> Result<(ChannelFitState, ChannelFitState, CovariancePack)> {
    let sd = ai_fit(pack, ch, fit_cfg, channel_start(pack, fit_cfg, variant)?)?;
    let lin_pack = pack.linear()?;
    let lin = ai_fit(&lin_pack, ch, fit_cfg, channel_start(&lin_pack, fit_cfg, variant)?)?;
    Ok((sd, lin, lin_pack))
}

/// Analytic Gaussian moments through fading, noisy channels.
pub fn run_example5(cfg: &ExperimentConfig) -> Result<RunReport> {
    let pack = analytic_pack(cfg)?;
    let ch = cfg.channel_spec()?;
    let (sd, lin, _) = channel_pair(&pack, &ch, &cfg.fit_config()?, cfg.variant()?)?;
    Ok(RunReport {
        experiment: experiment_name(cfg, "channel"),
        methods: vec![MethodResult::channel(SECOND_DEGREE, &sd), MethodResult::channel(LINEAR, &lin)],
        per_column: None,
        images: Vec::new(),
        pack,
        wall_time: Duration::ZERO,
    })
}
