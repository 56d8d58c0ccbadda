use std::path::PathBuf;
use std::process::ExitCode;

use aging_ctrw::cli::{error_kind, error_message, parse_family, parse_list, run, Command, Overrides, Scenario};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aging-ctrw", version, about = "Aging CTRW limits: sampling, aging probabilities, FFPE and verification")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Scenario file (TOML). Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Comma-separated aging times.
    #[arg(long, global = true)]
    t0: Option<String>,
    /// Comma-separated observation times.
    #[arg(long, global = true)]
    t: Option<String>,
    /// `kind[:key=value,...]`, e.g. `brownian:mu=0,a=1` or `stable:beta=1.5`.
    #[arg(long, global = true)]
    family: Option<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Draw aged increments and write one CSV per (t0, t).
    Sample,
    /// Aging probabilities by kernel convolution (JSON).
    Aging,
    /// Run the identity battery (JSON).
    Verify,
    /// Solve the aged FFPE and compare with convolution and Monte Carlo.
    Ffpe,
    /// Probabilities along t0 and the fitted log-log slope.
    Asymptotics,
    /// Self-similarity test of aged increments.
    Selfsim,
    /// Distance between aged and fresh increments as alpha approaches 1.
    Stationarity,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Sample => Command::Sample,
            Cmd::Aging => Command::Aging,
            Cmd::Verify => Command::Verify,
            Cmd::Ffpe => Command::Ffpe,
            Cmd::Asymptotics => Command::Asymptotics,
            Cmd::Selfsim => Command::Selfsim,
            Cmd::Stationarity => Command::Stationarity,
        }
    }
}

fn scenario(cli: &Cli) -> aging_ctrw::Result<Scenario> {
    let o = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        alpha: cli.alpha,
        t0: cli.t0.as_deref().map(parse_list).transpose()?,
        t: cli.t.as_deref().map(parse_list).transpose()?,
        family: cli.family.as_deref().map(parse_family).transpose()?,
    };
    Scenario::resolve(cli.config.as_deref(), &o)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", error_message("invalid_config", &format!("--threads: {e}")));
            return ExitCode::from(2);
        }
    }
    let result = scenario(&cli).and_then(|s| run(cli.command.into(), &s));
    match result {
        Ok(o) if o.failed.is_empty() => {
            for f in &o.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Ok(o) => {
            for f in &o.failed {
                eprintln!("{}", error_message("check_failed", f));
            }
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("{}", error_message(error_kind(&e), &e.to_string()));
            ExitCode::from(2)
        }
    }
}
