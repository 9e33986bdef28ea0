//! Batch driver: `estimate run`, `estimate eoc`, `estimate kernels`.

use clap::{Parser, Subcommand};
use dgsiac::bspline::SiacKernel;
use dgsiac::harness::{format_eoc, format_sci, read_csv, recompute_eocs, run_sweep, Overrides, RunConfig};
use dgsiac::Error;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_ROW_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "estimate", version, about = "dG + SIAC a posteriori error estimator sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a convergence sweep from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Include meshes finer than N = 32.
        #[arg(long)]
        full: bool,
        #[arg(long)]
        problem: Option<String>,
        #[arg(long)]
        q: Option<usize>,
        /// Comma-separated mesh sizes.
        #[arg(long = "N", value_delimiter = ',')]
        n: Option<Vec<usize>>,
        /// Comma-separated diffusion strengths.
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the EoCs of a table and compare with the stored ones.
    Eoc { csv: PathBuf },
    /// Dump the SIAC kernel of degree q as JSON.
    Kernels {
        #[arg(long)]
        q: usize,
        #[arg(long)]
        dump: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run {
            config,
            full,
            problem,
            q,
            n,
            eps,
            out,
        } => run(
            config,
            Overrides {
                problem,
                q,
                n,
                eps,
                out,
                full,
            },
        ),
        Command::Eoc { csv } => eoc(csv),
        Command::Kernels { q, dump } => kernels(q, dump),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument(_) | Error::Csv(_) | Error::Json(_) => {
                    ExitCode::from(EXIT_CONFIG)
                }
                _ => ExitCode::from(EXIT_ROW_FAILURE),
            }
        }
    }
}

fn run(path: PathBuf, overrides: Overrides) -> Result<ExitCode, Error> {
    let mut config = RunConfig::load(&path)?;
    config.apply(&overrides);
    config.validate()?;
    let outcome = run_sweep(&config, |row| match &row.error {
        None => eprintln!(
            "eps={} N={}: r1 {} ratio {}",
            format_sci(row.eps),
            row.n,
            row.values[2].map(format_sci).unwrap_or_default(),
            row.ratio.map(format_sci).unwrap_or_default()
        ),
        Some(e) => eprintln!("eps={} N={}: FAILED {e}", format_sci(row.eps), row.n),
    })?;
    println!("{}", outcome.csv.display());
    println!("{}", outcome.json.display());
    Ok(if outcome.failures() > 0 {
        ExitCode::from(EXIT_ROW_FAILURE)
    } else {
        ExitCode::SUCCESS
    })
}

fn eoc(path: PathBuf) -> Result<ExitCode, Error> {
    let rows = read_csv(&path)?;
    let checks = recompute_eocs(&rows);
    let mut bad = 0;
    println!("eps,N,column,stored,recomputed,consistent");
    for c in &checks {
        if c.stored.is_none() && c.recomputed.is_none() {
            continue;
        }
        let ok = c.consistent();
        bad += usize::from(!ok);
        println!(
            "{},{},{},{},{},{}",
            format_sci(c.eps),
            c.n,
            c.column,
            c.stored.map(format_eoc).unwrap_or_default(),
            c.recomputed.map(format_eoc).unwrap_or_default(),
            ok
        );
    }
    Ok(if bad > 0 {
        ExitCode::from(EXIT_ROW_FAILURE)
    } else {
        ExitCode::SUCCESS
    })
}

fn kernels(q: usize, dump: PathBuf) -> Result<ExitCode, Error> {
    if q == 0 {
        return Err(Error::Config("q must be >= 1".into()));
    }
    let dumps = vec![SiacKernel::new(q, q + 1)?.dump(), SiacKernel::new(q, q + 2)?.dump()];
    std::fs::write(&dump, serde_json::to_string_pretty(&dumps)?)?;
    println!("{}", dump.display());
    Ok(ExitCode::SUCCESS)
}
