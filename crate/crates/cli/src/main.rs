//! `osculate`: describe osculating groups, run verification suites and probes
//! on geometry files.
//!
//! Exit codes: 0 pass, 1 verification failure, 2 configuration error.

mod commands;
mod error;
mod report;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{config, CliResult};
use crate::run::{parse_handle, parse_vector, Command, ProbeKind, RunConfig, Suite};

#[derive(Parser)]
#[command(name = "osculate", version, about = "Osculating nilpotent groups and parabolic tangent groupoid probes")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Base point `x1,...,xn`; repeat for several.
    #[arg(long = "point", allow_hyphen_values = true)]
    points: Vec<String>,
    /// RNG seed for all sampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Random samples per point.
    #[arg(long)]
    samples: Option<usize>,
    /// Dyadic t-grid exponents `coarse..fine` (default 3..10).
    #[arg(long = "t-grid")]
    t_grid: Option<String>,
    /// Also write the JSON report to this file.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Export t-grid residual series as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Osculating group at a point: b tensor, skew rank, bracket table.
    Describe {
        /// Geometry file or `.run` file.
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run verification suites; exits 1 if any check fails.
    Verify {
        input: PathBuf,
        #[arg(long, value_enum)]
        suite: Option<Suite>,
        /// Exponential map `[label=]descriptor` (fs, conn, chart,
        /// translation, broken, raw(...)); repeatable.
        #[arg(long = "handle")]
        handles: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Run one probe and report its t-grid residuals.
    Probe {
        #[arg(value_enum)]
        kind: ProbeKind,
        input: PathBuf,
        /// First field: frame field name or component tuple.
        #[arg(long = "X")]
        x: Option<String>,
        #[arg(long = "Y")]
        y: Option<String>,
        /// First curve: name or tuple over `t`.
        #[arg(long)]
        a: Option<String>,
        #[arg(long)]
        b: Option<String>,
        #[arg(long)]
        h1: Option<String>,
        #[arg(long)]
        h2: Option<String>,
        /// Transition arrow `h1,...,hp,n1,...,nq`.
        #[arg(long, allow_hyphen_values = true)]
        arrow: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Execute a `.run` file with the command it names.
    Run {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn base_config(input: &Path, command: Option<Command>) -> CliResult<RunConfig> {
    if !RunConfig::is_run_file(input) {
        let mut run = RunConfig::new(input.to_path_buf());
        run.command = command;
        return Ok(run);
    }
    let mut run = RunConfig::load(input)?;
    match (run.command, command) {
        (Some(a), Some(b)) if a != b => {
            return Err(config(format!("{} is a {a:?} run, not {b:?}", input.display())));
        }
        (None, None) => return Err(config(format!("{} does not name a command", input.display()))),
        (None, Some(c)) => run.command = Some(c),
        _ => {}
    }
    Ok(run)
}

fn apply_common(run: &mut RunConfig, c: Common) -> CliResult<()> {
    if !c.points.is_empty() {
        run.points = c.points.iter().map(|p| parse_vector(p)).collect::<CliResult<_>>()?;
    }
    if let Some(s) = c.seed {
        run.seed = s;
    }
    if let Some(n) = c.samples {
        if n == 0 {
            return Err(config("--samples must be positive"));
        }
        run.samples = n;
    }
    if let Some(g) = c.t_grid {
        run.grid = g.parse()?;
    }
    if c.output.is_some() {
        run.output = c.output;
    }
    if c.csv.is_some() {
        run.csv = c.csv;
    }
    Ok(())
}

fn build(cli: Cli) -> CliResult<RunConfig> {
    match cli.command {
        Cmd::Describe { input, common } => {
            let mut run = base_config(&input, Some(Command::Describe))?;
            apply_common(&mut run, common)?;
            Ok(run)
        }
        Cmd::Verify { input, suite, handles, common } => {
            let mut run = base_config(&input, Some(Command::Verify))?;
            if let Some(s) = suite {
                run.suite = s;
            }
            if !handles.is_empty() {
                run.handles = handles
                    .iter()
                    .map(|h| {
                        // `label=descriptor`, unless the `=` sits inside raw(...)
                        match h.split_once('=').filter(|(l, _)| !l.contains('(')) {
                            Some((label, spec)) => Ok((label.trim().to_string(), parse_handle(spec)?)),
                            None => Ok((h.trim().to_string(), parse_handle(h)?)),
                        }
                    })
                    .collect::<CliResult<_>>()?;
            }
            apply_common(&mut run, common)?;
            Ok(run)
        }
        Cmd::Probe { kind, input, x, y, a, b, h1, h2, arrow, common } => {
            let mut run = base_config(&input, Some(Command::Probe))?;
            run.probe = Some(kind);
            run.x = x.or(run.x);
            run.y = y.or(run.y);
            run.a = a.or(run.a);
            run.b = b.or(run.b);
            if let Some(h) = h1 {
                run.h1 = Some(parse_handle(&h)?);
            }
            if let Some(h) = h2 {
                run.h2 = Some(parse_handle(&h)?);
            }
            if let Some(v) = arrow {
                run.arrow = Some(parse_vector(&v)?);
            }
            apply_common(&mut run, common)?;
            Ok(run)
        }
        Cmd::Run { input, common } => {
            if !RunConfig::is_run_file(&input) {
                return Err(config(format!("{} is not a .run file", input.display())));
            }
            let mut run = base_config(&input, None)?;
            apply_common(&mut run, common)?;
            Ok(run)
        }
    }
}

fn execute(run: &RunConfig) -> CliResult<bool> {
    let outcome = commands::execute(run)?;
    let json = outcome.report.to_json();
    print!("{json}");
    if let Some(path) = &run.output {
        report::write_text(path, &json)?;
    }
    if let Some(path) = &run.csv {
        report::write_csv(path, &outcome.series)?;
    }
    Ok(outcome.report.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build(cli).and_then(|run| execute(&run));
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("osculate: verification failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("osculate: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
