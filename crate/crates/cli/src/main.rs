use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sidda_cli::commands::{
    cmd_compare, cmd_embed, cmd_eval, cmd_gen, cmd_train, parse_methods, EmbedArgs, EvalArgs, GenArgs, GenKind,
};
use sidda_cli::{CliError, Result};
use sidda_core::data::ShiftConfig;
use sidda_core::metrics::DEFAULT_NEIGHBORS;

#[derive(Parser)]
#[command(name = "sidda", version, about = "Sinkhorn-divergence domain adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Shapes,
    Astro,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShiftKind {
    None,
    Poisson,
    Psf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and optionally a shifted twin.
    Gen {
        kind: Kind,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "none")]
        shift: ShiftKind,
        /// Signal-to-noise ratio for `--shift poisson`.
        #[arg(long)]
        snr: Option<f64>,
        /// Kernel width for `--shift psf`.
        #[arg(long)]
        eps: Option<f64>,
        /// Output file for the unshifted set.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every seed of a run config.
    Train { config: PathBuf },
    /// Evaluate a checkpoint on one dataset, or on a source/target pair.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        target: Option<PathBuf>,
        /// Use the validation split held out during training.
        #[arg(long)]
        val_fraction: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Isomap embedding of pooled source and target latents as CSV.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = DEFAULT_NEIGHBORS)]
        k: usize,
        #[arg(long)]
        max_points: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one config under several alignment methods.
    Compare {
        config: PathBuf,
        /// Comma-separated: none, sidda, mmd, wasserstein, fixed(a,b).
        #[arg(long, default_value = "sidda,mmd,wasserstein")]
        methods: String,
    },
}

fn shift_config(kind: ShiftKind, snr: Option<f64>, eps: Option<f64>) -> Result<ShiftConfig> {
    match kind {
        ShiftKind::None => Ok(ShiftConfig::None),
        ShiftKind::Poisson => snr
            .map(|snr| ShiftConfig::Poisson { snr })
            .ok_or_else(|| CliError::config("--shift poisson needs --snr")),
        ShiftKind::Psf => eps
            .map(|eps| ShiftConfig::Psf { eps })
            .ok_or_else(|| CliError::config("--shift psf needs --eps")),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { kind, n, size, seed, shift, snr, eps, out } => {
            let args = GenArgs {
                kind: match kind {
                    Kind::Shapes => GenKind::Shapes,
                    Kind::Astro => GenKind::Astro,
                },
                n,
                size,
                seed,
                shift: shift_config(shift, snr, eps)?,
                out,
            };
            for f in cmd_gen(&args)? {
                println!("{}  {} samples, classes {:?}, sha256 {}", f.path.display(), f.count, f.class_counts, f.sha256);
            }
        }
        Command::Train { config } => {
            let report = cmd_train(&config)?;
            print_json(&report.aggregate)?;
        }
        Command::Eval { checkpoint, data, target, val_fraction, out } => {
            print_json(&cmd_eval(&EvalArgs { checkpoint, data, target, val_fraction, out })?)?;
        }
        Command::Embed { checkpoint, source, target, k, max_points, out } => {
            let s = cmd_embed(&EmbedArgs { checkpoint, source, target, k, max_points, out: out.clone() })?;
            println!("wrote {} rows to {}", s.rows, out.display());
            println!("silhouette  latent {:.4}  embedded {:.4}", s.silhouette_latent, s.silhouette_embedded);
            println!("residual variance {:.4}", s.residual_variance);
        }
        Command::Compare { config, methods } => {
            print_json(&cmd_compare(&config, &parse_methods(&methods)?)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
