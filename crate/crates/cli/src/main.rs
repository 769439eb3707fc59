use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dexc::config::{ExperimentConfig, Protocol};
use dexc::eval::{Method, MetricsReport};
use dexc::phantoms::PhantomKind;
use dexc::pipeline::{bench, method_name, write_bench_csv, Experiment};

/// Exit status when a solver stopped before meeting its tolerance.
const EXIT_NOT_CONVERGED: u8 = 2;

#[derive(Parser)]
#[command(
    name = "dexc",
    version,
    about = "Dual-energy tomography with material separation",
    allow_negative_numbers = true
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Without it a 128px HY experiment is used.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    kind: Option<PhantomKind>,
    #[arg(long, global = true)]
    size: Option<usize>,
    #[arg(long, global = true)]
    n_angles: Option<usize>,
    #[arg(long, global = true, value_enum)]
    protocol: Option<ProtocolArg>,
    #[arg(long, global = true)]
    noise: Option<f64>,
    /// Phantom rotation before projection, degrees.
    #[arg(long, global = true)]
    rotation: Option<f64>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Worker threads for the parallel kernels.
    #[arg(long, global = true, env = "DEXC_WORKERS")]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    SameOperator,
    AlternatingEnergy,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Ip,
    Jtv,
    Both,
}

impl MethodArg {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodArg::Ip => vec![Method::Ip],
            MethodArg::Jtv => vec![Method::Jtv],
            MethodArg::Both => vec![Method::Ip, Method::Jtv],
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the two material images.
    GeneratePhantom,
    /// Project the stored phantom into noisy low/high sinograms.
    Simulate,
    /// Reconstruct from stored sinograms.
    Reconstruct {
        #[arg(long, value_enum, default_value = "ip")]
        method: MethodArg,
    },
    /// Threshold stored reconstructions to the true material fractions.
    Segment {
        #[arg(long, value_enum, default_value = "both")]
        method: MethodArg,
    },
    /// Segment and score stored reconstructions into metrics.csv.
    Evaluate {
        #[arg(long, value_enum, default_value = "both")]
        method: MethodArg,
    },
    /// Full pipeline.
    Run,
    /// IPM iteration counts and timings over the configured sizes.
    Bench {
        /// Comma separated sizes, overriding the config. Bare `--sizes` means none.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        sizes: Option<Vec<usize>>,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn build_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::with_phantom(PhantomKind::Hy, 128),
    };
    if let Some(v) = &c.output_dir {
        cfg.output_dir = v.clone();
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.kind {
        cfg.phantom.kind = v;
    }
    if let Some(v) = c.size {
        cfg.phantom.size = v;
    }
    if let Some(v) = c.n_angles {
        cfg.geometry.n_angles = v;
    }
    if let Some(v) = c.protocol {
        cfg.geometry.protocol = match v {
            ProtocolArg::SameOperator => Protocol::SameOperator,
            ProtocolArg::AlternatingEnergy => Protocol::AlternatingEnergy,
        };
    }
    if let Some(v) = c.noise {
        cfg.simulation.noise_level = v;
    }
    if let Some(v) = c.rotation {
        cfg.simulation.rotation_deg = v;
    }
    if let Some(v) = c.alpha {
        cfg.ip.alpha = v;
    }
    if let Some(v) = c.beta {
        cfg.ip.beta = v;
    }
    if let Some(v) = c.gamma {
        cfg.jtv.solver.gamma = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_metrics(rows: &[(Method, MetricsReport)]) {
    for (m, r) in rows {
        println!(
            "{:<4} misclassification {:.4}  l2 {:.4}/{:.4}  ssim {:.4}/{:.4}",
            method_name(*m),
            r.misclassification,
            r.l2_error_1,
            r.l2_error_2,
            r.ssim_1,
            r.ssim_2
        );
    }
}

fn execute(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.common.workers {
        dexc::par::configure_workers(n)?;
    }
    let cfg = build_config(&cli.common).context("invalid configuration")?;
    let exp = Experiment::new(cfg)?;
    let mut converged = true;
    match cli.command {
        Command::GeneratePhantom => {
            exp.generate_phantom()?;
        }
        Command::Simulate => {
            let phantom = exp
                .load_phantom()
                .context("no phantom; run generate-phantom first")?;
            exp.simulate(&phantom)?;
        }
        Command::Reconstruct { method } => {
            let m = exp
                .load_sinograms()
                .context("no sinograms; run simulate first")?;
            let truth = exp.load_phantom().ok();
            for method in method.methods() {
                let o = exp.reconstruct(method, &m, truth.as_ref())?;
                println!(
                    "{} parameter {} converged {}",
                    method_name(method),
                    o.parameter,
                    o.converged
                );
                converged &= o.converged;
            }
        }
        Command::Segment { method } | Command::Evaluate { method } => {
            let truth = exp.load_phantom()?;
            let mut rows = Vec::new();
            for method in method.methods() {
                let recon = exp
                    .load_recon(method)
                    .with_context(|| format!("no {} reconstruction", method_name(method)))?;
                rows.push((method, exp.evaluate(method, &recon, &truth)?));
            }
            if matches!(cli.command, Command::Evaluate { .. }) {
                exp.write_metrics(&rows)?;
                print_metrics(&rows);
            }
        }
        Command::Run => {
            let summary = exp.run()?;
            print_metrics(&summary.metrics);
            converged = summary.all_converged;
        }
        Command::Bench { sizes, out } => {
            let mut cfg = exp.cfg.clone();
            if let Some(s) = sizes {
                cfg.bench.sizes = s;
            }
            if cfg.bench.alpha < cfg.bench.beta {
                bail!("bench alpha must be at least beta");
            }
            let rows = bench(&cfg, &cfg.ipm_config())?;
            match out {
                Some(path) => write_bench_csv(BufWriter::new(File::create(path)?), &rows)?,
                None => write_bench_csv(std::io::stdout().lock(), &rows)?,
            }
        }
    }
    Ok(converged)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            log::warn!("a solver did not converge; artifacts were written anyway");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
