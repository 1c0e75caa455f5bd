use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use emitterlab::correlator::HistogramMode;
use emitterlab::inference::{CurveFitOptions, Irf};
use emitterlab_cli::commands::{
    cmd_budget, cmd_correlate, cmd_fit, cmd_pipeline, cmd_simulate, read_histogram_file,
    write_histogram_file, Timescale,
};
use emitterlab_cli::output::{thread_budget, write_json};
use emitterlab_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "emitterlab", version, about = "Photon statistics of a three-level emitter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one acquisition and write two PTT1 channel files.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Excitation power (mW); the first configured power by default.
        #[arg(long)]
        power: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a coincidence histogram from PTT1 files.
    Correlate {
        /// One or more PTT1 files; channel 0 starts, channel 1 stops.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Bin width (ns).
        #[arg(long, default_value_t = 0.17)]
        bin: f64,
        /// Half-window (ns).
        #[arg(long, default_value_t = 20.0)]
        window: f64,
        #[arg(long, default_value = "full")]
        mode: HistogramMode,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the short-delay antibunching model to a histogram.
    FitShort(FitArgs),
    /// Fit the long-delay bunching model to a histogram.
    FitLong(FitArgs),
    /// Simulate, correlate and fit every configured power.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detection efficiency budget and quantum yield.
    Budget {
        #[arg(long)]
        config: PathBuf,
        /// Fitted η_det·η_Q.
        #[arg(long)]
        eta_product: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        eta_product_stderr: f64,
    },
}

#[derive(clap::Args)]
struct FitArgs {
    histogram: PathBuf,
    /// Fit settings (response width, boundary) from this configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Hold λ₂ (ns⁻¹) fixed in the short-delay fit.
    #[arg(long)]
    lambda2: Option<f64>,
    /// JSON result file; the text report always goes to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(path: &Path, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn fit(args: &FitArgs, scale: Timescale) -> Result<(), CliError> {
    let (irf, mut opts) = match &args.config {
        Some(path) => {
            let cfg = RunConfig::load(path)?;
            let opts = CurveFitOptions {
                boundary: cfg.fit.boundary,
                ..CurveFitOptions::default()
            };
            (cfg.irf(), opts)
        }
        None => (Irf::new(1.2), CurveFitOptions::default()),
    };
    opts.lambda2 = args.lambda2;
    let h = read_histogram_file(&args.histogram)?;
    let result = cmd_fit(&h, scale, &irf, &opts)?;
    print!("{}", result.report());
    if let Some(out) = &args.out {
        write_json(out, &result)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate {
            config,
            power,
            seed,
            out,
        } => {
            let cfg = load(&config, seed)?;
            let power = power
                .or_else(|| cfg.powers.first().copied())
                .ok_or_else(|| CliError::Config("no --power and no configured powers".into()))?;
            let out = out.unwrap_or_else(|| cfg.output.clone());
            let written = cmd_simulate(&cfg, power, &out)?;
            println!("{}", written.ch0.display());
            println!("{}", written.ch1.display());
            println!("{}", written.meta.display());
        }
        Command::Correlate {
            inputs,
            bin,
            window,
            mode,
            out,
        } => {
            let h = cmd_correlate(&inputs, bin, window, mode)?;
            match out {
                Some(path) => write_histogram_file(&h, &path)?,
                None => emitterlab::correlator::write_histogram(&h, std::io::stdout().lock())?,
            }
        }
        Command::FitShort(args) => fit(&args, Timescale::Short)?,
        Command::FitLong(args) => fit(&args, Timescale::Long)?,
        Command::Pipeline { config, seed, out } => {
            let cfg = load(&config, seed)?;
            let out = out.unwrap_or_else(|| cfg.output.clone());
            let report = cmd_pipeline(&cfg, &out, thread_budget()?)?;
            print!("{}", report.text());
        }
        Command::Budget {
            config,
            eta_product,
            eta_product_stderr,
        } => {
            let cfg = RunConfig::load(&config)?;
            let report = cmd_budget(&cfg.budget, eta_product.map(|v| (v, eta_product_stderr)))?;
            print!("{}", report.text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("emitterlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
