use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pukf::flops::{flops_report, report_csv};
use pukf::harness::{compare_forms, consistency_stats, monte_carlo, run_scenario, Scenario, Variant, WeightSpec};
use pukf::scenarios::Config;
use pukf::Error;

#[derive(Parser)]
#[command(name = "pukf", version, about = "Partial-update Kalman filter experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// falling-body, imu-cam or tumbler
    #[arg(long, default_value = "falling-body")]
    scenario: String,
    /// ekf, schmidt, pu, sr-pu, ud-pu or mekf-pu
    #[arg(long, default_value = "pu")]
    filter: String,
    /// Comma list, `dnl`, `dc`, `dnl:base=<list>` or `dc:base=<list>`
    #[arg(long, default_value = "default")]
    weights: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
    /// Key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Single seeded run, CSV time series
    Run(Common),
    /// Monte Carlo campaign, CSV of per-epoch statistics
    MonteCarlo {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Full, square-root and UD partial update on identical data
    Compare(Common),
    /// Evaluate the flop-count formulas
    Flops {
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        m: usize,
        #[arg(long, default_value_t = 3)]
        q: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration of a scenario
    ExportConfig {
        #[arg(long, default_value = "falling-body")]
        scenario: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Filter(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidRunCount => Failure::Config(e.to_string()),
            _ => Failure::Filter(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn load_config(path: &Option<PathBuf>) -> Result<Config, Failure> {
    Ok(match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    })
}

fn setup(c: &Common) -> Result<(Scenario, Variant, WeightSpec), Failure> {
    let cfg = load_config(&c.config)?;
    let sc = Scenario::from_name(&c.scenario, &cfg)?;
    let variant = Variant::parse(&c.filter)?;
    let weights = WeightSpec::parse(&c.weights)?;
    Ok((sc, variant, weights))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Run(c) => {
            let (sc, variant, weights) = setup(&c)?;
            let rec = run_scenario(&sc, variant, &weights, c.seed)?;
            rec.write_csv(output(&c.out)?)?;
            if let Some(f) = rec.failure {
                return Err(Failure::Filter(f));
            }
        }
        Cmd::MonteCarlo { common: c, runs, jobs } => {
            let (sc, variant, weights) = setup(&c)?;
            let report = monte_carlo(&sc, variant, &weights, runs, c.seed, jobs)?;
            report.write_csv(output(&c.out)?)?;
            eprintln!("runs {} diverged {}", report.run_count, report.divergence_count);
            for (i, s) in consistency_stats(&report).iter().enumerate() {
                eprintln!("state {i}: sigma ratio {:.3}, mean error z {:.3}", s.ratio, s.z);
            }
        }
        Cmd::Compare(c) => {
            let (sc, _, weights) = setup(&c)?;
            let Scenario::FallingBody(p) = sc else {
                return Err(Failure::Config("compare supports the falling-body scenario only".into()));
            };
            let beta = match weights {
                WeightSpec::Default => p.beta.to_vec(),
                WeightSpec::Static(b) => b,
                _ => return Err(Failure::Config("compare needs static weights".into())),
            };
            let cmp = compare_forms(&p, &beta, c.seed)?;
            let mut out = output(&c.out)?;
            writeln!(out, "forms,max_state_dev,max_cov_dev")?;
            writeln!(out, "{},{:e},{:e}", cmp.variants.join(" "), cmp.max_state_dev, cmp.max_cov_dev)?;
        }
        Cmd::Flops { n, m, q, out } => {
            if n == 0 || m == 0 || q == 0 {
                return Err(Failure::Config("n, m and q must be at least 1".into()));
            }
            output(&out)?.write_all(report_csv(&flops_report(n, m, q)).as_bytes())?;
        }
        Cmd::ExportConfig { scenario, config, out } => {
            let sc = Scenario::from_name(&scenario, &load_config(&config)?)?;
            output(&out)?.write_all(sc.to_config_text().as_bytes())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Filter(msg)) => {
            eprintln!("filter failure: {msg}");
            ExitCode::from(3)
        }
    }
}
