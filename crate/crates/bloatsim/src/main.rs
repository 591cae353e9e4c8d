//! Command-line front end: run factor grids to CSV, validate configuration
//! files, or trace a single run event by event.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use bloatsim::experiment::runner::{run_grid, Parallelism};
use bloatsim::experiment::{build_setup, cell_seed, parse_config, FactorGrid, ScenarioConfig};
use bloatsim::mptcp::CcAlgorithm;
use bloatsim::qdisc::DisciplineKind;
use bloatsim::world;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bloatsim",
    version,
    about = "Deterministic multipath-TCP bottleneck simulator comparing queue disciplines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a (qdisc x cc x delay) grid with repetitions and write
    /// runs.csv + aggregate.csv.
    Run {
        /// Scenario file (`key = value` lines); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Queue disciplines, comma-separated
        /// (droptail, codel, codel-lifo, fq-codel, fq-codel-lifo).
        #[arg(long, value_delimiter = ',')]
        qdisc: Option<Vec<DisciplineKind>>,
        /// Congestion control algorithms, comma-separated
        /// (lia, rtt-compensator, uncoupled, fully-coupled).
        #[arg(long, value_delimiter = ',')]
        cc: Option<Vec<CcAlgorithm>>,
        /// Path-A delay sweep in milliseconds, comma-separated.
        #[arg(long = "delay-a", value_delimiter = ',')]
        delay_a: Option<Vec<f64>>,
        /// Repetitions per cell.
        #[arg(long)]
        reps: Option<u32>,
        /// Base seed for the repetition streams.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads: 1 = sequential, 0 = one per core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Output directory for the CSV files (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse a scenario file and print the fully resolved configuration.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a single cell with a per-event log on stdout.
    Trace {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = DisciplineKind::Codel)]
        qdisc: DisciplineKind,
        #[arg(long, default_value_t = CcAlgorithm::Lia)]
        cc: CcAlgorithm,
        /// Path-A delay in milliseconds.
        #[arg(long = "delay-a", default_value_t = 1.0)]
        delay_a: f64,
        /// Repetition index used for seed derivation.
        #[arg(long, default_value_t = 0)]
        rep: u32,
        /// Explicit seed (overrides the derived one).
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Failures split by exit code: configuration problems exit 1, simulation
/// failures exit 2.
enum CliError {
    Config(String),
    Run(String),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Run(msg)) => {
            eprintln!("run failure: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<ScenarioConfig, CliError> {
    let Some(path) = path else {
        return Ok(ScenarioConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            qdisc,
            cc,
            delay_a,
            reps,
            seed,
            jobs,
            out,
        } => {
            let mut cfg = load_config(config.as_ref())?;
            if let Some(r) = reps {
                cfg.reps = r;
            }
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            if let Some(d) = &delay_a {
                cfg.delay_a_ms = d.clone();
            }
            cfg.check().map_err(CliError::Config)?;

            let mut grid = FactorGrid::default_for(&cfg);
            if let Some(q) = qdisc {
                grid.qdiscs = q;
            }
            if let Some(c) = cc {
                grid.ccs = c;
            }
            grid.check().map_err(CliError::Config)?;

            fs::create_dir_all(&out)
                .map_err(|e| CliError::Config(format!("{}: {e}", out.display())))?;

            let outcome = run_grid(&cfg, &grid, Parallelism::from_jobs(jobs));

            let runs_path = out.join("runs.csv");
            let agg_path = out.join("aggregate.csv");
            fs::write(&runs_path, outcome.runs_csv())
                .map_err(|e| CliError::Run(format!("{}: {e}", runs_path.display())))?;
            fs::write(&agg_path, outcome.aggregate_csv())
                .map_err(|e| CliError::Run(format!("{}: {e}", agg_path.display())))?;

            let total: usize = outcome.cells.iter().map(|c| c.runs.len()).sum();
            if outcome.failures > 0 {
                for report in outcome.failure_reports() {
                    eprintln!("failed run: {report}");
                }
                return Err(CliError::Run(format!(
                    "{} of {total} runs failed; partial results in {}",
                    outcome.failures,
                    out.display()
                )));
            }
            println!(
                "wrote {total} runs across {} cells to {}",
                outcome.cells.len(),
                out.display()
            );
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = load_config(Some(&config))?;
            print!("{}", cfg.render());
            println!("ok");
            Ok(())
        }
        Command::Trace {
            config,
            qdisc,
            cc,
            delay_a,
            rep,
            seed,
        } => {
            let cfg = load_config(config.as_ref())?;
            cfg.check().map_err(CliError::Config)?;
            let seed = seed.unwrap_or_else(|| cell_seed(cfg.base_seed, qdisc, cc, delay_a, rep));
            let setup = build_setup(&cfg, qdisc, cc, delay_a, seed, true);
            let record = world::run_once(&setup).map_err(|e| {
                CliError::Run(format!(
                    "{qdisc}/{cc}/delay_a {delay_a} ms (seed {seed}): {e}"
                ))
            })?;
            println!(
                "done at {}s: {} bytes delivered, {} drops ({} admission, {} law)",
                record.done_at.as_secs_f64(),
                record.delivered_bytes,
                record.drops_total(),
                record.drops_admission,
                record.drops_law,
            );
            Ok(())
        }
    }
}
