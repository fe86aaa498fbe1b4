use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use qcbohm_cli::commands::{self, CommonOpts};

/// Bohmian-trajectory hybrid quantum-classical dynamics: evolve mixed
/// ensembles and probe where the scheme departs from exact quantum
/// mechanics.
#[derive(Parser)]
#[command(name = "qcbohm", version, about, max_term_width = 80)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evolve an ensemble, recording observables, final replica states,
    /// and sample wavefunctions.
    Evolve(RunArgs),
    /// Track both ensemble energies against a decoupled baseline run.
    EnergyAudit(RunArgs),
    /// Compare guided positions against the ensemble-mean density.
    Equivariance(RunArgs),
    /// Compare a straight run against one interrupted by a mid-run
    /// redraw of the guided positions.
    Composability(RunArgs),
    /// Evolve two preparations of the same density matrix and measure
    /// how far apart they end up.
    RhoTest(RunArgs),
    /// Compare the hybrid scheme against the exact two-coordinate
    /// reference for a harmonically coupled pair.
    ExactCompare(RunArgs),
    /// Run the pinned self-test battery.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Key = value run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Directory for CSV artifacts and summary.json (created if absent).
    #[arg(long)]
    out: PathBuf,
    /// Override the config file's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 sizes the pool to the machine.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

impl RunArgs {
    fn common(&self) -> CommonOpts {
        CommonOpts {
            config: self.config.clone(),
            out: self.out.clone(),
            seed: self.seed,
            threads: self.threads,
        }
    }
}

#[derive(Args)]
struct SelftestArgs {
    /// Directory for checks.csv and summary.json (created if absent).
    #[arg(long, default_value = "selftest-out")]
    out: PathBuf,
    /// Worker threads; 0 sizes the pool to the machine.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Evolve(a) => commands::evolve(&a.common()),
        Cmd::EnergyAudit(a) => commands::energy_audit(&a.common()),
        Cmd::Equivariance(a) => commands::equivariance(&a.common()),
        Cmd::Composability(a) => commands::composability(&a.common()),
        Cmd::RhoTest(a) => commands::rho_test(&a.common()),
        Cmd::ExactCompare(a) => commands::exact_compare(&a.common()),
        Cmd::Selftest(a) => commands::selftest(&a.out, a.threads),
    };
    let code = match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.status()
        }
    };
    std::process::exit(code);
}
