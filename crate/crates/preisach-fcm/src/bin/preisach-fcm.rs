use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use preisach_fcm::cli::{self, CommandOutcome, DiffTolerance, Overrides, RunConfig};
use preisach_fcm::linearize::DcPolicy;
use preisach_fcm::Result;

#[derive(Parser)]
#[command(name = "preisach-fcm", version, about = "Preisach hysteresis fitting and harmonic coupling matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Harmonic truncation order N.
    #[arg(long)]
    order: Option<usize>,
    /// dc-excluded or dc-free-flux.
    #[arg(long)]
    dc_policy: Option<DcPolicy>,
    /// Phase steps per perturbed harmonic.
    #[arg(long)]
    nphi: Option<usize>,
    /// Perturbation step Δv (V rms per harmonic order).
    #[arg(long)]
    dv: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model from open-circuit test recordings.
    Fit(Common),
    /// Drive the model with a recorded current and emit flux and loop traces.
    Simulate(Common),
    /// Analytic coupling matrices about the configured drive.
    Linearize(Common),
    /// Perturbation sweep, circle fit and circularity metric.
    Bench(Common),
    /// Compare two companion CSV files entry by entry.
    ReportDiff {
        first: PathBuf,
        second: PathBuf,
        /// Relative magnitude tolerance.
        #[arg(long, default_value_t = 0.02)]
        mag_tol: f64,
        /// Phase tolerance in degrees.
        #[arg(long, default_value_t = 2.0)]
        phase_tol: f64,
        /// Only odd rows and odd columns.
        #[arg(long)]
        odd_only: bool,
        /// Highest harmonic compared.
        #[arg(long)]
        max_index: Option<usize>,
        /// Write the diff here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Write synthetic test recordings of the configured model.
    Synth(Common),
}

fn config(c: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&c.config)?;
    cfg.apply(&Overrides {
        order: c.order,
        dc_policy: c.dc_policy,
        nphi: c.nphi,
        dv: c.dv,
    })?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<CommandOutcome> {
    match cli.command {
        Command::Fit(c) => cli::cmd_fit(&config(&c)?),
        Command::Simulate(c) => cli::cmd_simulate(&config(&c)?),
        Command::Linearize(c) => cli::cmd_linearize(&config(&c)?),
        Command::Bench(c) => cli::cmd_bench(&config(&c)?),
        Command::Synth(c) => cli::cmd_synth(&config(&c)?),
        Command::ReportDiff {
            first,
            second,
            mag_tol,
            phase_tol,
            odd_only,
            max_index,
            output,
        } => {
            let tol = DiffTolerance {
                rel_mag: mag_tol,
                phase_deg: phase_tol,
                odd_only,
                max_index,
            };
            cli::cmd_report_diff(&first, &second, &tol, output.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(out) => {
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", out.summary.trim_end());
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
