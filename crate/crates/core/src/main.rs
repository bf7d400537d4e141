use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use torus_alltoall::bench::{self, BenchConfig, DimsSpec, TransportKind};
use torus_alltoall::factorization::Dims;

#[derive(Parser)]
#[command(
    name = "torus-a2a",
    version,
    about = "Torus-factorized all-to-all: benchmark, verify, inspect layouts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time the direct and factorized all-to-all over a range of block sizes.
    Bench {
        /// Number of ranks.
        #[arg(long)]
        p: usize,
        #[arg(long, default_value = "threads")]
        transport: TransportKind,
        /// Torus shape, `a,b,c` or `auto:d`. Repeat for several variants.
        #[arg(long = "dims")]
        dims: Vec<DimsSpec>,
        /// Elements per block, comma separated. Defaults to 1..10, 20..100, …, 10000.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
        #[arg(long, default_value_t = 40)]
        reps: usize,
        #[arg(long, default_value_t = 8)]
        warmups: usize,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Verify every variant against the oracle before timing it.
        #[arg(long)]
        check: bool,
        /// Join an external TCP world as this rank.
        #[arg(long, requires = "root")]
        rank: Option<usize>,
        /// Address of rank 0, `host:port`.
        #[arg(long)]
        root: Option<String>,
        /// Seconds to wait for a peer before giving up.
        #[arg(long, default_value_t = 30)]
        timeout_secs: u64,
    },
    /// Check the factorized exchange on every p from 2 to pmax.
    Verify {
        #[arg(long)]
        pmax: usize,
        /// Elements per block, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "1,3,16")]
        blocks: Vec<usize>,
    },
    /// Print the index table of one round (or all rounds).
    LayoutDump {
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        #[arg(long)]
        round: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Bench {
            p,
            transport,
            dims,
            counts,
            reps,
            warmups,
            csv,
            check,
            rank,
            root,
            timeout_secs,
        } => {
            if rank.is_some() && transport != TransportKind::Tcp {
                bail!("--rank only applies to --transport tcp");
            }
            let cfg = BenchConfig {
                p,
                transport,
                dims: if dims.is_empty() { vec![DimsSpec::Auto(2)] } else { dims },
                counts: counts.unwrap_or_else(bench::default_counts),
                reps,
                warmups,
                check,
                tcp_rank: rank,
                tcp_root: root,
                timeout: Duration::from_secs(timeout_secs),
            };
            let Some(report) = bench::bench_run(&cfg)? else {
                return Ok(ExitCode::SUCCESS);
            };
            match &csv {
                Some(path) => {
                    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
                    let mut w = BufWriter::new(file);
                    bench::write_csv(&report.rows, &mut w)?;
                    w.flush()?;
                    print!("{}", report.summary());
                }
                None => {
                    bench::write_csv(&report.rows, io::stdout().lock())?;
                    eprint!("{}", report.summary());
                }
            }
            if !report.all_checks_passed() {
                eprintln!("error: oracle check failed");
                return Ok(ExitCode::FAILURE);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { pmax, blocks } => {
            let summary = bench::verify_run(pmax, &blocks);
            for f in &summary.failures {
                println!("FAIL {f}");
            }
            println!("{} runs, {} failures", summary.runs, summary.failures.len());
            Ok(if summary.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::LayoutDump { dims, round } => {
            let dims = Dims::new(dims)?;
            let rounds: Vec<usize> = match round {
                Some(k) => vec![k],
                None => (0..dims.d()).collect(),
            };
            for k in rounds {
                print!("{}", bench::layout_dump(&dims, k)?);
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
