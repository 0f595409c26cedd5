use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use viewsim_core::edm::{reconstruct_incremental, reconstruct_spectral};
use viewsim_core::harness::{run_experiment_with_jobs, write_report, ReportFormat};
use viewsim_core::observers::FixedPointCodec;
use viewsim_core::{DistanceMatrix, Error, ExperimentConfig, Report, Result};

#[derive(Parser)]
#[command(name = "viewsim", version, about = "3D recognition from 2D view similarities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Incremental,
    Spectral,
}

#[derive(Subcommand)]
enum Command {
    /// Run a paired experiment and write its report.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides master_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides output_path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        /// Worker threads; all cores when absent.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Rebuild point coordinates from a CSV distance matrix.
    Reconstruct {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        dim: usize,
        #[arg(long, value_enum, default_value = "incremental")]
        method: Method,
    },
    /// Run an experiment and print the decision agreement matrix.
    CompareObservers {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Interleave digits of vectors read from stdin, one per line.
    #[command(group(ArgGroup::new("mode").required(true).args(["encode", "decode"])))]
    Interleave {
        #[arg(long)]
        encode: bool,
        #[arg(long)]
        decode: bool,
        /// Integer and fractional digits per coordinate, as P.Q.
        #[arg(long)]
        digits: String,
        /// Added to every coordinate before encoding.
        #[arg(long, default_value_t = 0.0)]
        offset: f64,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { config, seed, out, format, jobs } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(o) = out {
                cfg.output_path = o;
            }
            let report = experiment(&cfg, jobs)?;
            let dir = &cfg.output_path;
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let format = match format {
                Format::Json => ReportFormat::Json,
                Format::Csv => ReportFormat::Csv,
            };
            let path = dir.join(format.file_name());
            write_report(&report, format, &path)?;
            print_summary(&report);
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Reconstruct { matrix, dim, method } => {
            let d = read_matrix(&matrix)?;
            let emb = match method {
                Method::Incremental => reconstruct_incremental(&d, dim)?,
                Method::Spectral => reconstruct_spectral(&d, dim)?,
            };
            let mut out = io::stdout().lock();
            for p in emb.points() {
                let row: Vec<String> = p.iter().map(f64::to_string).collect();
                writeln!(out, "{}", row.join(",")).map_err(|e| Error::io("<stdout>", e))?;
            }
            eprintln!("rank {} max residual {:e}", emb.rank(), emb.quality());
            Ok(())
        }
        Command::CompareObservers { config, jobs } => {
            let report = experiment(&ExperimentConfig::from_file(&config)?, jobs)?;
            print!("{}", report.agreement_table());
            print_summary(&report);
            Ok(())
        }
        Command::Interleave { encode, digits, offset, .. } => {
            let codec = FixedPointCodec::from_spec(&digits, offset)?;
            interleave(&codec, encode)
        }
    }
}

fn experiment(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<Report> {
    let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    run_experiment_with_jobs(cfg, jobs)
}

fn print_summary(report: &Report) {
    for s in &report.summaries {
        println!(
            "{:<12} error {:.4} [{:.4}, {:.4}] failures {}",
            s.observer.name(),
            s.error_rate,
            s.ci_low,
            s.ci_high,
            s.failures
        );
    }
}

fn read_matrix(path: &Path) -> Result<DistanceMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidArgument(format!("{}: bad number {v:?}", path.display())))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    DistanceMatrix::from_rows(&rows)
}

fn interleave(codec: &FixedPointCodec, encode: bool) -> Result<()> {
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line.map_err(|e| Error::io("<stdin>", e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let text = if encode {
            let x = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|v| !v.is_empty())
                .map(|v| v.parse::<f64>().map_err(|_| Error::InvalidArgument(format!("bad number {v:?}"))))
                .collect::<Result<Vec<_>>>()?;
            codec.encode(&x)?
        } else {
            let int_len = line.split('.').next().unwrap_or("").len();
            let p = codec.int_digits() as usize;
            if int_len == 0 || int_len % p != 0 {
                return Err(Error::MalformedString(line.to_string()));
            }
            let x = codec.decode(line, int_len / p)?;
            x.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
        };
        writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}
