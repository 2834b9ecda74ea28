use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use kkdyn::conserved::{two_center_sphere, TwoCenterSpec};
use kkdyn::scenario::{load_config, run_scenario, RunOptions, RunReport};
use kkdyn::{ConfigError, Vec3};

#[derive(Parser)]
#[command(name = "kkdyn", version, about = "Kaluza-Klein monopole dynamics and conserved-quantity checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate scenarios and run their checks.
    Run {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        #[command(flatten)]
        opts: Opts,
    },
    /// Run only the pointwise checks of a scenario (no integration).
    CheckKilling {
        config: PathBuf,
        #[command(flatten)]
        opts: Opts,
    },
    /// Print the confinement sphere of two NUT charges at ±a.
    Sphere {
        m1: f64,
        m2: f64,
        #[arg(allow_negative_numbers = true)]
        ax: f64,
        #[arg(allow_negative_numbers = true)]
        ay: f64,
        #[arg(allow_negative_numbers = true)]
        az: f64,
    },
}

#[derive(clap::Args)]
struct Opts {
    /// Directory for the CSV and JSON outputs.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override the integrator's relative tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Override the sampling seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Opts {
    fn run_options(&self, static_only: bool) -> RunOptions {
        RunOptions { out_dir: self.out_dir.clone(), rel_tol: self.tol, seed: self.seed, static_only }
    }
}

fn print_report(report: &RunReport) {
    println!("== {} (seed {})", report.name, report.seed);
    for w in &report.warnings {
        println!("   warning: {w}");
    }
    for c in &report.checks {
        let verdict = match (c.informational, c.passed) {
            (true, _) => "INFO",
            (false, true) => "PASS",
            (false, false) => "FAIL",
        };
        let note = c.note.as_deref().map(|n| format!("  ({n})")).unwrap_or_default();
        println!("   {verdict} {:<48} {:>12.3e} < {:.1e}{note}", c.name, c.measured, c.threshold);
    }
    println!("   {}", if report.passed { "passed" } else { "FAILED" });
}

fn run(configs: &[PathBuf], opts: RunOptions) -> ExitCode {
    let parsed: Result<Vec<_>, (PathBuf, ConfigError)> =
        configs.iter().map(|p| load_config(p).map_err(|e| (p.clone(), e))).collect();
    let parsed = match parsed {
        Ok(v) => v,
        Err((path, e)) => {
            eprintln!("{}: {e}", path.display());
            return ExitCode::from(2);
        }
    };
    let reports: Vec<_> = parsed.par_iter().map(|cfg| run_scenario(cfg, &opts)).collect();
    let mut ok = true;
    for (path, r) in configs.iter().zip(reports) {
        match r {
            Ok(report) => {
                print_report(&report);
                ok &= report.passed;
            }
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                return ExitCode::from(2);
            }
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { configs, opts } => run(&configs, opts.run_options(false)),
        Command::CheckKilling { config, opts } => run(&[config], opts.run_options(true)),
        Command::Sphere { m1, m2, ax, ay, az } => {
            let sphere = TwoCenterSpec::new(m1, m2, Vec3::new(ax, ay, az), 1.0).and_then(|tc| two_center_sphere(&tc));
            match sphere {
                Ok(s) => {
                    println!("rho    {:.17e}", s.rho);
                    println!("center {:.17e} {:.17e} {:.17e}", s.center[0], s.center[1], s.center[2]);
                    println!("radius {:.17e}", s.radius);
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
