use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use clap::{Args, Parser, Subcommand};

use sdwsn_core::covmodel::reduce;
use sdwsn_core::linear::{compare_condition, linear_fit_full};
use sdwsn_core::mbi::{extract_models, mbi_fit, FitConfig, InitStrategy};
use sdwsn_core::sdt::{error_exact, FactorVariant, FusionCenter, NetworkModel};
use sdwsn_core::{ai_fit, CovariancePack};

use sdwsn_cli::config::{read_matrix_file, ChannelConfig, ExperimentConfig, Format};
use sdwsn_cli::experiments::{channel_start, LINEAR, SECOND_DEGREE};
use sdwsn_cli::{report, store};

#[derive(Parser)]
#[command(name = "sdwsn", version, about = "Second-degree sensor network compression experiments")]
struct Cli {
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: the config's output.dir, else ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit a network for ideal channels on a stored moment pack.
    FitIdeal {
        #[arg(long)]
        pack: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Fit a network through fading, noisy channels on a stored moment pack.
    FitChannel {
        #[arg(long)]
        pack: PathBuf,
        /// TOML file with the [channel] keys (d, d_files, gamma, noise, noise_files).
        #[arg(long)]
        channel: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Apply a stored network to observation files (one n_j × s matrix per sensor).
    Apply {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        obs: Vec<PathBuf>,
    },
    /// Fit second-degree and linear networks and test the per-block ordering condition.
    Compare {
        #[arg(long)]
        pack: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
    },
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, default_value_t = 1e-9)]
    epsilon: f64,
    #[arg(long, default_value_t = 100)]
    max_iterations: usize,
    /// per-block-sdt | zero
    #[arg(long, default_value = "per-block-sdt")]
    init: String,
    /// orthonormal | weighted
    #[arg(long, default_value = "orthonormal")]
    variant: FactorVariant,
}

impl FitArgs {
    fn config(&self) -> Result<FitConfig> {
        let init = match self.init.as_str() {
            "per-block-sdt" => InitStrategy::PerBlockSdt,
            "zero" => InitStrategy::Zero,
            other => anyhow::bail!("unknown --init '{other}' (per-block-sdt | zero)"),
        };
        let cfg = FitConfig {
            epsilon: self.epsilon,
            max_iterations: self.max_iterations,
            init,
            ..FitConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let format = cli.format.unwrap_or_default();
    let out = |fallback: Option<&PathBuf>| cli.out.clone().or_else(|| fallback.cloned()).unwrap_or_else(|| PathBuf::from("out"));
    match &cli.command {
        Command::Run { config } => {
            let mut cfg = ExperimentConfig::from_path(config)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let dir = out(cfg.output.dir.as_ref().map(|d| cfg.resolve(d)).as_ref());
            let format = cli.format.or(cfg.output.format).unwrap_or_default();
            let rep = sdwsn_cli::run(&cfg)?;
            report::write_outputs(&rep, &dir, format)?;
            print!("{}", report::summary(&rep));
            println!("outputs in {}", dir.display());
        }
        Command::FitIdeal { pack, fit } => {
            let pack = store::read_pack(pack)?;
            let dir = out(None);
            let cfg = fit.config()?;
            let f = mbi_fit(&reduce(&pack)?, &pack, &cfg)?;
            let mse = error_exact(&f.composite(), &pack)?;
            let model = extract_models(&f.blocks, &pack, fit.variant)?;
            store::write_model(&dir.join("model"), &model)?;
            if format.csv() {
                write_file(&dir, "trace.csv", &f.trace.to_csv())?;
                write_file(&dir, "report.csv", &report_line(pack.partition.lifting().name(), mse, &f.trace))?;
            }
            println!("mse {mse:.10e} after {} iterations (converged {})", f.trace.iterations, f.trace.converged);
            println!("model in {}", dir.join("model").display());
        }
        Command::FitChannel { pack, channel, fit } => {
            let pack = store::read_pack(pack)?;
            let dir = out(None);
            let base = channel.parent().map(Path::to_path_buf).unwrap_or_default();
            let ch = ChannelConfig::from_path(channel)?.spec(pack.partition.ranks(), |p| {
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                }
            })?;
            let cfg = fit.config()?;
            let state = ai_fit(&pack, &ch, &cfg, channel_start(&pack, &cfg, fit.variant)?)?;
            // Stored fusion blocks absorb the fading: x̂ = Σ (T_j D_j) S_j z_j.
            let sensors = pack
                .partition
                .ranks()
                .iter()
                .enumerate()
                .map(|(j, _)| {
                    sdwsn_core::SecondDegreeSensor::from_stacked(&state.s[j], pack.partition.obs_dim(j), pack.partition.lifting())
                })
                .collect::<sdwsn_core::Result<Vec<_>>>()?;
            let fusion = FusionCenter {
                blocks: (0..sensors.len()).map(|j| state.t_block(j, &pack) * &ch.d[j]).collect(),
            };
            let model = NetworkModel::new(sensors, fusion, pack.partition.clone())?;
            store::write_model(&dir.join("model"), &model)?;
            if format.csv() {
                write_file(&dir, "trace.csv", &state.trace_csv())?;
                write_file(&dir, "report.csv", &report_line("channel", state.trace.last(), &state.trace))?;
            }
            println!(
                "psi {:.10e} after {} iterations (converged {})",
                state.trace.last(),
                state.trace.iterations,
                state.trace.converged
            );
            println!("model in {}", dir.join("model").display());
        }
        Command::Apply { model, obs } => {
            let model = store::read_model(model)?;
            let ys = obs.iter().map(|p| read_matrix_file(p)).collect::<Result<Vec<_>>>()?;
            ensure!(
                ys.len() == model.partition.sensors(),
                "{} observation files for {} sensors",
                ys.len(),
                model.partition.sensors()
            );
            let xhat = model.apply(&ys)?;
            let dir = out(None);
            fs::create_dir_all(&dir)?;
            store::write_matrix_file(&dir.join("xhat.csv"), &xhat)?;
            println!("{} estimates written to {}", xhat.ncols(), dir.join("xhat.csv").display());
        }
        Command::Compare { pack, fit } => {
            let pack = store::read_pack(pack)?;
            let dir = out(None);
            let text = compare(&pack, &fit.config()?, &dir, format)?;
            print!("{text}");
        }
    }
    Ok(())
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn report_line(name: &str, mse: f64, trace: &sdwsn_core::FitTrace) -> String {
    format!(
        "method,mse,iterations,converged\n{name},{mse:.16e},{},{}\n",
        trace.iterations, trace.converged
    )
}

fn compare(pack: &CovariancePack, cfg: &FitConfig, dir: &Path, format: Format) -> Result<String> {
    let sd = mbi_fit(&reduce(pack)?, pack, cfg)?;
    let (lin, lin_fit, lin_pack) = linear_fit_full(pack, cfg)?;
    let sd_mse = error_exact(&sd.composite(), pack)?;
    let lin_mse = error_exact(&lin_fit.composite(), &lin_pack)?;
    let blocks = sd.block_matrices();
    let mut table = String::from("block,condition,gap,sd_block_error,linear_block_error\n");
    let mut text = format!("{SECOND_DEGREE} mse {sd_mse:.10e}\n{LINEAR} mse {lin_mse:.10e}\n");
    for j in 0..pack.partition.sensors() {
        let c = compare_condition(j, &blocks, &lin.blocks, pack)?;
        let _ = writeln!(table, "{},{},{:.16e},{:.16e},{:.16e}", j + 1, c.holds, c.gap, c.sd_error, c.linear_error);
        let _ = writeln!(
            text,
            "block {}: condition {} (gap {:.3e}); block-optimal errors {:.10e} vs {:.10e}",
            j + 1,
            c.holds,
            c.gap,
            c.sd_error,
            c.linear_error
        );
    }
    if format.csv() {
        let mut rep = String::from("method,mse,iterations,converged\n");
        let _ = writeln!(rep, "{SECOND_DEGREE},{sd_mse:.16e},{},{}", sd.trace.iterations, sd.trace.converged);
        let _ = writeln!(rep, "{LINEAR},{lin_mse:.16e},{},{}", lin_fit.trace.iterations, lin_fit.trace.converged);
        write_file(dir, "report.csv", &rep)?;
        write_file(dir, "compare.csv", &table)?;
    }
    Ok(text)
}
