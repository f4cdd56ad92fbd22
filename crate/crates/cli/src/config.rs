//! Experiment configuration (TOML). Relative file references resolve against
//! the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::Deserialize;

use sdwsn_core::covmodel::Lifting;
use sdwsn_core::mbi::{FitConfig, InitStrategy};
use sdwsn_core::sdt::FactorVariant;
use sdwsn_core::{textio, ChannelSpec, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Ideal,
    Channel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    AnalyticGaussian,
    SampleData,
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Svg,
    #[default]
    Both,
}

impl Format {
    pub fn csv(self) -> bool {
        self != Format::Svg
    }

    pub fn svg(self) -> bool {
        self != Format::Csv
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub mode: Mode,
    pub source: Source,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub signal: SignalConfig,
    pub partition: PartitionConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub channel: Option<ChannelConfig>,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub image: ImageConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// `E_xx` inline (rows) or from a delimited text file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    pub exx: Option<Vec<Vec<f64>>>,
    pub exx_file: Option<PathBuf>,
    /// Signal dimension `m` when it is not implied by `E_xx`.
    pub dim: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    /// `r_j`; their count is the number of sensors `p`.
    pub ranks: Vec<usize>,
    /// `n_j`; defaults to `m` for every sensor.
    pub obs_dims: Option<Vec<usize>>,
    #[serde(default = "default_lifting")]
    pub lifting: String,
    /// `m_j` for the per-block starting point; as even as possible if absent.
    pub signal_split: Option<Vec<usize>>,
}

fn default_lifting() -> String {
    "full".into()
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Observation noise standard deviations (`σ_j`, or `δ_j` in channel mode).
    pub sigma: Option<Vec<f64>>,
    /// Noise gains `β_j` for simulated data and images.
    pub beta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// Fading matrices `D_j`, inline.
    pub d: Option<Vec<Vec<Vec<f64>>>>,
    pub d_files: Option<Vec<PathBuf>>,
    /// `E_{η_jη_j} = γ_j² I`.
    pub gamma: Option<Vec<f64>>,
    /// Full channel-noise covariances, inline.
    pub noise: Option<Vec<Vec<Vec<f64>>>>,
    pub noise_files: Option<Vec<PathBuf>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_init")]
    pub init: String,
    #[serde(default = "default_variant")]
    pub variant: String,
}

fn default_epsilon() -> f64 {
    1e-9
}

fn default_max_iterations() -> usize {
    100
}

fn default_init() -> String {
    "per-block-sdt".into()
}

fn default_variant() -> String {
    "orthonormal".into()
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            max_iterations: default_max_iterations(),
            init: default_init(),
            variant: default_variant(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Training samples drawn for `sample-data`.
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    1000
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            samples: default_samples(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageConfig {
    /// PGM (binary or ASCII) or delimited text.
    pub path: Option<PathBuf>,
    /// Side of the built-in synthetic test image when no path is given.
    pub synthetic: Option<usize>,
    #[serde(default)]
    pub mask: Mask,
}

/// Entries of the Hadamard masks `A_j` in image mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mask {
    /// Independent standard normal entries.
    #[default]
    Gaussian,
    /// All ones: the sensors see the image itself.
    Ones,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub format: Option<Format>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn sensors(&self) -> usize {
        self.partition.ranks.len()
    }

    pub fn lifting(&self) -> Result<Lifting> {
        Ok(self.partition.lifting.parse()?)
    }

    pub fn fit_config(&self) -> Result<FitConfig> {
        let init = match self.fit.init.as_str() {
            "per-block-sdt" => InitStrategy::PerBlockSdt,
            "zero" => InitStrategy::Zero,
            other => bail!("unknown fit.init '{other}' (per-block-sdt | zero)"),
        };
        let cfg = FitConfig {
            epsilon: self.fit.epsilon,
            max_iterations: self.fit.max_iterations,
            init,
            ..FitConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn variant(&self) -> Result<FactorVariant> {
        Ok(self.fit.variant.parse()?)
    }

    pub fn exx(&self) -> Result<Mat> {
        match (&self.signal.exx, &self.signal.exx_file) {
            (Some(rows), None) => rows_to_mat(rows).context("signal.exx"),
            (None, Some(f)) => read_matrix_file(&self.resolve(f)),
            (Some(_), Some(_)) => bail!("give signal.exx or signal.exx_file, not both"),
            (None, None) => bail!("signal.exx (or signal.exx_file) is required"),
        }
    }

    pub fn signal_dim(&self) -> Result<usize> {
        match self.signal.dim {
            Some(m) => Ok(m),
            None => Ok(self.exx()?.nrows()),
        }
    }

    pub fn obs_dims(&self, m: usize) -> Vec<usize> {
        self.partition.obs_dims.clone().unwrap_or_else(|| vec![m; self.sensors()])
    }

    /// Per-sensor values of a noise list, checked against `p`.
    pub fn per_sensor(&self, what: &str, v: &Option<Vec<f64>>) -> Result<Vec<f64>> {
        let v = v.clone().with_context(|| format!("noise.{what} is required for this experiment"))?;
        ensure!(
            v.len() == self.sensors(),
            "noise.{what} has {} entries for {} sensors",
            v.len(),
            self.sensors()
        );
        ensure!(v.iter().all(|x| x.is_finite() && *x >= 0.0), "noise.{what} must be finite and >= 0");
        Ok(v)
    }

    pub fn channel_spec(&self) -> Result<ChannelSpec> {
        let ch = self.channel.as_ref().context("a [channel] section is required in channel mode")?;
        ch.spec(&self.partition.ranks, |p| self.resolve(p))
    }

    fn validate(&self) -> Result<()> {
        ensure!(!self.partition.ranks.is_empty(), "partition.ranks must list at least one sensor");
        if let Some(n) = &self.partition.obs_dims {
            ensure!(n.len() == self.sensors(), "partition.obs_dims and partition.ranks differ in length");
        }
        self.partition.lifting.parse::<Lifting>()?;
        self.fit.variant.parse::<FactorVariant>()?;
        ensure!(self.data.samples > 0, "data.samples must be positive");
        match (self.mode, self.source) {
            (Mode::Ideal, _) | (Mode::Channel, Source::AnalyticGaussian) => Ok(()),
            (Mode::Channel, _) => bail!("channel mode supports source = \"analytic-gaussian\" only"),
        }
    }
}

impl ChannelConfig {
    pub fn from_path(path: &Path) -> Result<ChannelConfig> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn spec(&self, ranks: &[usize], resolve: impl Fn(&Path) -> PathBuf) -> Result<ChannelSpec> {
        let d = matrices("d", &self.d, &self.d_files, &resolve)?.context("channel.d (or channel.d_files) is required")?;
        let noise = match (&self.gamma, matrices("noise", &self.noise, &self.noise_files, &resolve)?) {
            (Some(g), None) => {
                ensure!(g.len() == ranks.len(), "channel.gamma has {} entries for {} sensors", g.len(), ranks.len());
                g.iter().zip(ranks).map(|(g, &r)| Mat::identity(r, r) * (g * g)).collect()
            }
            (None, Some(n)) => n,
            (None, None) => ranks.iter().map(|&r| Mat::zeros(r, r)).collect(),
            (Some(_), Some(_)) => bail!("give channel.gamma or channel noise matrices, not both"),
        };
        ensure!(d.len() == ranks.len(), "channel.d has {} matrices for {} sensors", d.len(), ranks.len());
        Ok(ChannelSpec::new(d, noise)?)
    }
}

fn matrices(
    what: &str,
    inline: &Option<Vec<Vec<Vec<f64>>>>,
    files: &Option<Vec<PathBuf>>,
    resolve: &impl Fn(&Path) -> PathBuf,
) -> Result<Option<Vec<Mat>>> {
    match (inline, files) {
        (Some(ms), None) => Ok(Some(
            ms.iter()
                .enumerate()
                .map(|(j, m)| rows_to_mat(m).with_context(|| format!("channel.{what}[{j}]")))
                .collect::<Result<_>>()?,
        )),
        (None, Some(fs)) => Ok(Some(fs.iter().map(|f| read_matrix_file(&resolve(f))).collect::<Result<_>>()?)),
        (Some(_), Some(_)) => bail!("give channel.{what} inline or as files, not both"),
        (None, None) => Ok(None),
    }
}

pub fn rows_to_mat(rows: &[Vec<f64>]) -> Result<Mat> {
    let cols = rows.first().map_or(0, Vec::len);
    ensure!(rows.iter().all(|r| r.len() == cols), "ragged matrix rows");
    ensure!(rows.iter().flatten().all(|v| v.is_finite()), "matrix entries must be finite");
    Ok(Mat::from_fn(rows.len(), cols, |r, c| rows[r][c]))
}

pub fn read_matrix_file(path: &Path) -> Result<Mat> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    textio::parse_matrix(&text).with_context(|| format!("parsing {}", path.display()))
}
