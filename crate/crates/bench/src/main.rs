use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ncdecomp::examples::Algorithm;
use ncdecomp_bench::config::{ParamOverrides, DEFAULT_MAX_ITERS};
use ncdecomp_bench::table::{proportion_table, TableOptions};
use ncdecomp_bench::verify::{all_suites, quick_suites};
use ncdecomp_bench::{run_config, write_csv, write_plots, ConfigError, ReportError, RunConfig};
use thiserror::Error;

/// Exit status when a verification check fails.
const VERIFY_FAILED: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "ncdecomp", version, about = "Decomposition algorithms for nonconvex problems: experiments and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every (sample, initial point) trial of one configuration and write a CSV report.
    Run(RunArgs),
    /// Run the invariant suites and print pass counts. Exits 3 if any check fails.
    Verify {
        /// Skip the trial-based suites, which take several minutes.
        #[arg(long)]
        quick: bool,
    },
    /// Convergence proportions of every applicable algorithm and example.
    Table3 {
        #[arg(long)]
        blocks: usize,
        #[arg(long, default_value_t = 10)]
        samples: usize,
        #[arg(long, default_value_t = 10)]
        inits: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = default_threads())]
        parallelism: usize,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON file with the run configuration; replaces the other flags.
    #[arg(long, conflicts_with_all = ["example", "algorithm", "blocks", "samples", "inits", "seed", "out"])]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    example: Option<u8>,
    #[arg(long, required_unless_present = "config", value_parser = ["pd", "spd", "dd", "sdd"])]
    algorithm: Option<String>,
    #[arg(long, required_unless_present = "config")]
    blocks: Option<usize>,
    #[arg(long, required_unless_present = "config")]
    samples: Option<usize>,
    #[arg(long, required_unless_present = "config")]
    inits: Option<usize>,
    #[arg(long, required_unless_present = "config")]
    seed: Option<u64>,
    #[arg(long, required_unless_present = "config")]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    max_iters: usize,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    /// Write `NA` in the time column so reports are reproducible byte for byte.
    #[arg(long)]
    no_timing: bool,
    /// Directory for per-trial `iteration objective` files.
    #[arg(long)]
    plot_dir: Option<PathBuf>,
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Report(_) | CliError::Read { .. } => 2,
        }
    }
}

fn load(args: RunArgs) -> Result<RunConfig, CliError> {
    if let Some(path) = args.config {
        let text = fs::read_to_string(&path).map_err(|source| CliError::Read { path: path.clone(), source })?;
        return Ok(RunConfig::from_json(&text, &path)?);
    }
    // clap enforces presence of these when no config file is given
    let algorithm: Algorithm = args.algorithm.unwrap_or_default().parse().map_err(ConfigError::from)?;
    Ok(RunConfig {
        example: args.example.unwrap_or_default(),
        algorithm,
        blocks: args.blocks.unwrap_or_default(),
        samples: args.samples.unwrap_or_default(),
        inits: args.inits.unwrap_or_default(),
        seed: args.seed.unwrap_or_default(),
        params: ParamOverrides::default(),
        max_iters: args.max_iters,
        out: args.out.unwrap_or_default(),
        parallelism: args.parallelism,
        timing: !args.no_timing,
        plot_dir: args.plot_dir,
    })
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let config = load(args)?.validate()?;
    let report = run_config(&config);
    write_csv(&report, &config.config.out)?;
    if let Some(dir) = &config.config.plot_dir {
        write_plots(&report, dir)?;
    }
    let failed = report.rows.iter().filter(|r| r.error.is_some()).count();
    println!(
        "{} trials, {} convergent, written to {}",
        report.rows.len(),
        report.converged(),
        config.config.out.display()
    );
    if failed > 0 {
        eprintln!("{failed} trials could not be started and are counted as non-convergent");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Verify { quick } => {
            let suites = if quick { quick_suites() } else { all_suites() };
            for s in &suites {
                print!("{s}");
            }
            let ok = suites.iter().all(|s| s.passed());
            println!("{}", if ok { "all checks passed" } else { "some checks FAILED" });
            return if ok { ExitCode::SUCCESS } else { ExitCode::from(VERIFY_FAILED) };
        }
        Command::Table3 { blocks, samples, inits, seed, parallelism, out } => {
            let opts = TableOptions { blocks, samples, inits, seed, parallelism: parallelism.max(1) };
            let table = proportion_table(&opts);
            print!("{table}");
            match out {
                Some(path) => fs::write(&path, table.to_csv())
                    .map_err(|source| CliError::Report(ReportError::Io { path: path.clone(), source })),
                None => Ok(()),
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
