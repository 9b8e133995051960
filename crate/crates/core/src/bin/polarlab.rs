use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use polarlab::job::{self, JobConfig};
use polarlab::surfaces::CATALOG;

#[derive(Parser)]
#[command(name = "polarlab", version, about = "Polar, spectral and Darboux transforms of isothermic surfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a JSON job configuration.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Grid size as NUxNV (overrides the config).
        #[arg(long)]
        grid: Option<String>,
    },
    /// List catalog surfaces.
    Catalog,
}

fn run(config: PathBuf, out: Option<PathBuf>, grid: Option<String>) -> Result<i32, polarlab::Error> {
    let mut cfg = JobConfig::load(&config)?;
    if let Some(g) = grid {
        let (nu, nv) = job::parse_grid(&g)?;
        cfg.grid.nu = nu;
        cfg.grid.nv = nv;
    }
    let dir = out.or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("polarlab_out"));
    let outcome = job::run(&cfg, &dir)?;
    for s in &outcome.summary.steps {
        println!("{:<18} {}  {}", s.step, if s.pass { "pass" } else { "FAIL" }, dir.join(&s.report).display());
    }
    for r in outcome.reports.iter().filter(|r| !r.pass) {
        if let Some(e) = &r.error {
            eprintln!("{}: {e}", r.step);
        }
        for (name, c) in r.checks.iter().filter(|(_, c)| !c.pass) {
            eprintln!("{}: {name} = {:?} exceeds {:e}", r.step, c.value, c.tol);
        }
    }
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let code = match cli.command {
        Command::Catalog => {
            for (name, about) in CATALOG {
                println!("{name:<18} {about}");
            }
            0
        }
        Command::Run { config, out, grid } => run(config, out, grid).unwrap_or_else(|e| {
            eprintln!("error: {e}");
            job::exit_code(&e)
        }),
    };
    ExitCode::from(code as u8)
}
