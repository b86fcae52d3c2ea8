use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fraqflow::config::{parse_config, parse_values, RunConfig, SweepAxis};
use fraqflow::diagnostics::Severity;
use fraqflow::experiment::{run_experiment, run_sweep, RunStatus, RunSummary};

#[derive(Parser)]
#[command(name = "fraqflow", version, about = "Fractional nonlinear diffusion simulator")]
struct Cli {
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress the run summary on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Run one child experiment per value of a parameter.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
    },
}

fn load(path: &Path, out: Option<PathBuf>) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut cfg = parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if out.is_some() {
        cfg.out = out;
    }
    if cfg.out.is_none() {
        cfg.out = Some(PathBuf::from("out"));
    }
    Ok(cfg)
}

fn status_name(s: RunStatus) -> &'static str {
    match s {
        RunStatus::Ok => "ok",
        RunStatus::FatalViolations => "fatal violations",
        RunStatus::Failed => "failed",
        RunStatus::Partial => "partial",
    }
}

fn report(summary: &RunSummary, quiet: bool) {
    for t in &summary.ledger_totals {
        if t.severity == Severity::Warning && t.violations > 0 {
            eprintln!(
                "warning: {} failed at {} of {} steps",
                t.check, t.violations, t.checked
            );
        }
    }
    for e in &summary.sweep {
        if let Some(msg) = &e.error {
            eprintln!("error: child {}: {msg}", e.dir.display());
        }
    }
    if let Some(msg) = &summary.error {
        eprintln!("error: {msg}");
    }
    if summary.fatal_violations > 0 {
        eprintln!("error: {} dissipation inequality violations", summary.fatal_violations);
    }
    if quiet {
        return;
    }
    println!("status: {}", status_name(summary.status));
    if summary.sweep.is_empty() {
        println!("steps: {}  t: {}", summary.steps, summary.final_t);
        if let Some(t) = summary.extinct_at {
            println!("extinct at: {t}");
        }
        if let Some(f) = &summary.extinction_fit {
            println!("fitted extinction time: {} (R² {})", f.t_star, f.r_squared);
        }
        if let Some(r) = summary.final_rayleigh {
            println!("final Rayleigh quotient: {r}");
        }
        if let Some(p) = &summary.profile {
            println!("profile residual: {:e}", p.residual);
        }
        if let Some(c) = &summary.convergence {
            println!("distance to profile at s = {}: {:e}", c.final_s, c.final_distance);
        }
    } else {
        let axis = summary.sweep_axis.map_or("value", SweepAxis::as_str);
        for e in &summary.sweep {
            println!("{axis} = {}: {}", e.value, status_name(e.status));
        }
    }
    if let Some(dir) = &summary.config.out {
        println!("output: {}", dir.display());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (path, sweep) = match &cli.command {
        Command::Run { config } => (config, None),
        Command::Sweep { config, axis, values } => match parse_values(values) {
            Ok(v) if !v.is_empty() => (config, Some((*axis, v))),
            Ok(_) => {
                eprintln!("error: --values is empty");
                return ExitCode::from(2);
            }
            Err(e) => {
                eprintln!("error: --values: {e}");
                return ExitCode::from(2);
            }
        },
    };
    let cfg = match load(path, cli.out.clone()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match sweep {
        Some((axis, values)) => run_sweep(&cfg, axis, &values),
        None => run_experiment(&cfg),
    };
    match result {
        Ok(summary) => {
            report(&summary, cli.quiet);
            ExitCode::from(summary.status.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
