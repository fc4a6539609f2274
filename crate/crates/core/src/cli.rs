//! The `grm` command line: `fit`, `report`, `sample` and `check`.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{ArgAction, Parser, Subcommand};

use crate::error::{GrmError, Result};
use crate::family::Family;
use crate::gibbs::{gibbs_sample, GibbsConfig};
use crate::io::{self, CountMatrix};
use crate::model::Normalizability;
use crate::solver::{fit_detailed, FitConfig, Symmetrize};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "grm", version, about = "Fit, sample and inspect generalized root models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model to a sparse counts file.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "poisson")]
        family: Family,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        k: u64,
        #[arg(long, default_value_t = 0.01)]
        lambda: f64,
        #[arg(long, default_value_t = 9, value_parser = clap::value_parser!(u64).range(1..))]
        nq: u64,
        #[arg(long, default_value_t = true, action = ArgAction::Set)]
        simplified: bool,
        #[arg(long, default_value_t = false, action = ArgAction::Set)]
        stagewise: bool,
        #[arg(long, default_value = "mean")]
        symmetrize: Symmetrize,
        #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
        newton_max: u64,
        /// Worker threads; 0 uses one per core.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the top positive and negative entries of every block.
    Report {
        #[arg(long)]
        model: PathBuf,
        /// One token per line; variables are named x1, x2, ... without it.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        top: usize,
    },
    /// Draw instances from a model by Gibbs sampling.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        burnin: usize,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        thin: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the sufficient normalizability condition along simplex directions.
    Check {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1000)]
        dirs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn execute(cmd: Command, stdout: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Fit {
            data,
            family,
            k,
            lambda,
            nq,
            simplified,
            stagewise,
            symmetrize,
            newton_max,
            threads,
            seed,
            out,
        } => {
            let counts = io::read_counts(&data)?;
            let x = counts.to_dense();
            let cfg = FitConfig {
                lambda,
                nq: nq as usize,
                newton_max: newton_max as usize,
                symmetrize,
                stagewise,
                simplified,
                seed,
                ..Default::default()
            };
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| GrmError::InvalidArgument(format!("thread pool: {e}")))?;
            let result = pool.install(|| fit_detailed(&x, family, k as usize, &cfg))?;
            let iters: usize = result.nodes.iter().map(|n| n.trace.len()).max().unwrap_or(0);
            log::info!("fitted {} nodes, at most {iters} Newton iterations per node", result.nodes.len());
            io::write_model(&out, &result.model)
        }
        Command::Report { model, vocab, top } => {
            let m = io::read_model(&model)?;
            let vocab = match vocab {
                Some(path) => io::read_vocab(path)?,
                None => io::default_vocab(m.p()),
            };
            let report = io::report_top(&m, &vocab, top)?;
            stdout.write_all(report.render().as_bytes())?;
            Ok(())
        }
        Command::Sample {
            model,
            n,
            burnin,
            thin,
            seed,
            out,
        } => {
            let m = io::read_model(&model)?;
            let cfg = GibbsConfig {
                burnin,
                thin: thin as usize,
                seed,
            };
            let x = gibbs_sample(&m, n, &cfg)?;
            let mut counts = CountMatrix::from_dense(&x)?;
            counts.p = m.p();
            io::write_counts(&out, &counts)
        }
        Command::Check { model, dirs, seed } => {
            let m = io::read_model(&model)?;
            match m.family() {
                Family::Poisson => writeln!(stdout, "normalizable: always (Poisson)")?,
                Family::Exponential => match m.check_normalizable(dirs, seed) {
                    Normalizability::Ok => writeln!(stdout, "normalizable: yes ({dirs} random directions plus vertices and midpoints)")?,
                    Normalizability::ViolatedAt(u) => {
                        let u: Vec<String> = u.iter().map(|v| format!("{v:.6}")).collect();
                        writeln!(stdout, "normalizable: not established; linear radial term >= 0 at u = [{}]", u.join(", "))?
                    }
                },
            }
            Ok(())
        }
    }
}

/// Runs the command line `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_RUNTIME
        }
    }
}
