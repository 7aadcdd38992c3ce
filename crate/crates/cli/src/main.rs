use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use dekohere::harness::{self, RunOptions, Subcommand, EXIT_USAGE};
use dekohere::scenario::parse_scenario;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    /// Closed-form or master-equation states over the time grid.
    Propagate,
    /// Monte Carlo averages of random unitary trajectories with standard errors.
    Mc,
    /// Both of the above and entrywise z-scores between them.
    Compare,
    /// Choi spectra of the dynamical map over the time grid.
    CpAudit,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::Propagate => Subcommand::Propagate,
            Command::Mc => Subcommand::Mc,
            Command::Compare => Subcommand::Compare,
            Command::CpAudit => Subcommand::CpAudit,
        }
    }
}

/// Decoherence scenarios: closed forms, Monte Carlo trajectories and CP audits.
///
/// Worker threads are capped by DEKOHERE_THREADS (0 or unset = automatic).
/// Exit codes: 0 success, 1 usage or parse error, 2 numerical invariant violation.
#[derive(Debug, Parser)]
#[command(name = "dekohere", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides `mc.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `mc.n_samples`.
    #[arg(long)]
    samples: Option<usize>,
    /// Time steps over [0, t_max] for trajectories and time-ordered propagators.
    #[arg(long)]
    steps: Option<usize>,
    /// Output directory; files go to <out>/<command>/.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE as u8)
        }
    }
}

fn execute(cli: &Cli) -> Result<i32, String> {
    let threads = harness::threads_from_env().map_err(|e| e.to_string())?;
    let scenario = parse_scenario(&cli.scenario).map_err(|e| format!("{}: {e}", cli.scenario.display()))?;
    let opts = RunOptions {
        seed: cli.seed,
        samples: cli.samples,
        steps: cli.steps,
        out_dir: cli.out.clone(),
    };
    let sub = Subcommand::from(cli.command);
    let report = harness::with_threads(threads, || harness::run(sub, &scenario, &opts))
        .and_then(|r| r)
        .map_err(|e| e.to_string())?;
    for entry in &report.manifest {
        println!("{}\t{}\t{} rows", entry.observable, entry.path, entry.rows);
    }
    for note in &report.notes {
        println!("note: {note}");
    }
    if let Some(z) = report.max_abs_z {
        println!("max |z| = {z:.3}");
    }
    if let Some(n) = report.non_cp_points {
        println!(
            "non-CP time points: {n} (min Choi eigenvalue {:.6e})",
            report.min_choi_eigenvalue.unwrap_or(f64::NAN)
        );
    }
    println!("max invariant violation = {:.3e}", report.max_invariant_violation);
    Ok(report.exit_code())
}
