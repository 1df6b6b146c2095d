use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use bitscale::cli::{self, CliError};

#[derive(Parser)]
#[command(name = "bitscale", version, about = "Desk-scale quantization and bit-level scaling experiments")]
struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, env = "BITSCALE_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Output directory, overriding the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit, compare and plot experiment records from JSONL files.
    Report {
        #[arg(required = true)]
        records: Vec<PathBuf>,
        #[arg(long, default_value = "bitscale-report")]
        out: PathBuf,
    },
    /// Check the fast paths against brute-force references.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the JSON schema for config files.
    Schema,
}

fn pool(jobs: Option<usize>) -> anyhow::Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        anyhow::ensure!(n > 0, "--jobs must be at least 1");
        b = b.num_threads(n);
    }
    b.build().context("building worker pool")
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let pool = match pool(cli.jobs) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    match cli.command {
        Command::Run { config, out } => match pool.install(|| cli::run(&config, out.as_deref())) {
            Ok((dir, m)) => {
                println!("wrote {} files to {}", m.files.len() + 1, dir.display());
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::Report { records, out } => match pool.install(|| cli::report(&records, &out)) {
            Ok(m) => {
                println!("wrote {} files to {}", m.files.len() + 1, out.display());
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::Selftest { seed } => match pool.install(|| bitscale::oracle::selftest(seed)) {
            Ok(cases) => {
                let mut ok = true;
                for c in &cases {
                    println!("{} {:<28} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                    ok &= c.passed;
                }
                if ok {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(2)
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Schema => {
            print!("{}", cli::config::SCHEMA);
            ExitCode::SUCCESS
        }
    }
}
