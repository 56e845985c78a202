use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use essn::certify::{certify_with, verdict_report, Mode, Protocol};
use essn::engine::{replay_log, replay_trace, EngineConfig};
use essn::genchk::experiment::{run_experiment, write_csv, Grid};
use essn::genchk::{generate_mixed, WorkloadParams};
use essn::history::{parse_trace, resolve_reads, InputTrace, KtoFlavor, MvSchedule, RfPolicy};
use essn::mvsg::aligned_mvsg;
use essn::tictoc::{check_mutual_incompatibility, Case, Ts};

#[derive(Debug, Parser)]
#[command(
    name = "essn",
    version,
    about = "Commit-time serializability certification for multiversion histories"
)]
struct Cli {
    /// Seed for generated workloads.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Read-from policy used to bind unresolved reads.
    #[arg(long, global = true, default_value = "as_of_read_commit")]
    policy: RfPolicy,
    /// Known total order: commit or begin.
    #[arg(long, global = true, default_value = "commit")]
    kto: KtoFlavor,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a mixed long/short workload trace.
    Generate {
        #[arg(long, default_value_t = WorkloadParams::default().n_keys)]
        n_keys: usize,
        #[arg(long, default_value_t = WorkloadParams::default().read_size)]
        read_size: usize,
        #[arg(long, default_value_t = WorkloadParams::default().n_shorts)]
        n_shorts: usize,
        #[arg(long, default_value_t = WorkloadParams::default().pivot_prob)]
        pivot_prob: f64,
        #[arg(long, default_value_t = WorkloadParams::default().short_hit_prob)]
        short_hit_prob: f64,
    },
    /// Bind every unresolved read of a trace under the read-from policy.
    Resolve { file: PathBuf },
    /// Print per-transaction stamps and verdicts.
    Certify {
        /// ssn, essn, ssi or all.
        #[arg(long, default_value = "all")]
        protocol: String,
        /// sequential (aborted transactions are excised) or targets.
        #[arg(long, default_value = "sequential", value_parser = ["sequential", "targets"])]
        mode: String,
        file: PathBuf,
    },
    /// Run a trace through the commit-protocol engine and print its event log.
    Replay {
        #[arg(long)]
        shortcut: bool,
        #[arg(long)]
        stall_bypass: bool,
        /// Re-execute this event log and check it line by line instead.
        #[arg(long)]
        verify: Option<PathBuf>,
        file: Option<PathBuf>,
    },
    /// Run the abort-rate grid and write CSV.
    Experiment {
        /// default (5x5 cells, 50 repeats) or small (3x3 cells, 5 repeats).
        #[arg(long, default_value = "default", value_parser = ["default", "small"])]
        grid: String,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Commit-timestamp feasibility of a reference schedule.
    Tictoc {
        /// war, skew, a or b.
        #[arg(long)]
        case: Case,
        #[arg(long)]
        c2: Ts,
        #[arg(long, default_value_t = 0)]
        c3: Ts,
    },
}

enum Failure {
    Usage(String),
    Internal(String),
}

fn usage(e: impl ToString) -> Failure {
    Failure::Usage(e.to_string())
}

fn internal(e: impl ToString) -> Failure {
    Failure::Internal(e.to_string())
}

fn read_file(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_trace(path: &Path) -> Result<InputTrace, Failure> {
    parse_trace(&read_file(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_schedule(path: &Path, policy: RfPolicy) -> Result<MvSchedule, Failure> {
    Ok(resolve_reads(&load_trace(path)?, policy))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => {
            fs::write(path, text).map_err(|e| internal(format!("{}: {e}", path.display())))
        }
        None => io::stdout().write_all(text.as_bytes()).map_err(internal),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let out = cli.out.as_deref();
    match cli.command {
        Command::Generate {
            n_keys,
            read_size,
            n_shorts,
            pivot_prob,
            short_hit_prob,
        } => {
            let params = WorkloadParams {
                n_keys,
                read_size,
                n_shorts,
                pivot_prob,
                short_hit_prob,
                seed: cli.seed,
                rf_policy: cli.policy,
                kto_flavor: cli.kto,
                ..WorkloadParams::default()
            };
            let trace = generate_mixed(&params).map_err(usage)?;
            emit(out, &format!("{trace}\n"))
        }
        Command::Resolve { file } => {
            let schedule = load_schedule(&file, cli.policy)?;
            emit(out, &format!("{schedule}\n"))
        }
        Command::Certify {
            protocol,
            mode,
            file,
        } => {
            let mode = if mode == "targets" {
                Mode::Targets
            } else {
                Mode::Sequential
            };
            let schedule = load_schedule(&file, cli.policy)?;
            let g = aligned_mvsg(&schedule, cli.kto).map_err(usage)?;
            let text = if protocol == "all" {
                verdict_report(&g, mode)
            } else {
                let protocol: Protocol = protocol.parse().map_err(usage)?;
                let result = certify_with(&g, protocol, mode).map_err(usage)?;
                result
                    .txns
                    .iter()
                    .map(|c| {
                        format!(
                            "{} sigma={} pi={} eta={} xi={} {}={}\n",
                            c.txn, c.sigma, c.pi, c.eta, c.xi, protocol, c.verdict
                        )
                    })
                    .collect()
            };
            emit(out, &text)
        }
        Command::Replay {
            shortcut,
            stall_bypass,
            verify,
            file,
        } => {
            let cfg = EngineConfig {
                kto: cli.kto,
                rf_policy: cli.policy,
                shortcut,
                stall_bypass,
            };
            if let Some(log_path) = verify {
                let log: Vec<String> = read_file(&log_path)?.lines().map(str::to_string).collect();
                replay_log(&log, cfg).map_err(internal)?;
                return emit(out, &format!("verified {} log lines\n", log.len()));
            }
            let file = file.ok_or_else(|| usage("replay needs a trace file or --verify"))?;
            let trace = load_trace(&file)?;
            let engine = replay_trace(trace.events(), cfg).map_err(usage)?;
            let mut text = engine.log().join("\n");
            text.push('\n');
            emit(out, &text)
        }
        Command::Experiment { grid, repeats } => {
            let (grid, mut params) = if grid == "small" {
                let probs = vec![0.0, 0.5, 1.0];
                (
                    Grid {
                        pivot_probs: probs.clone(),
                        short_hit_probs: probs,
                        ..Grid::default()
                    },
                    WorkloadParams {
                        repeats: 5,
                        ..WorkloadParams::default()
                    },
                )
            } else {
                (Grid::default(), WorkloadParams::default())
            };
            params.seed = cli.seed;
            if let Some(r) = repeats {
                params.repeats = r;
            }
            let rows = run_experiment(&grid, &params).map_err(usage)?;
            let mut buf = Vec::new();
            write_csv(&rows, &mut buf).map_err(internal)?;
            emit(out, &String::from_utf8(buf).map_err(internal)?)?;
            if let Some(path) = out {
                eprintln!("wrote {} rows to {}", rows.len(), path.display());
            }
            Ok(())
        }
        Command::Tictoc { case, c2, c3 } => {
            let interval = case.interval(c2, c3).map_err(usage)?;
            let verdict = if interval.is_empty() {
                "infeasible"
            } else {
                "feasible"
            };
            let mut text = format!("case {case}: t1 interval {interval} {verdict}\n");
            if matches!(case, Case::A | Case::B) {
                let c = check_mutual_incompatibility(c2, c3).map_err(usage)?;
                text.push_str(&format!(
                    "a_feasible={} b_feasible={}\n",
                    c.a_feasible, c.b_feasible
                ));
            }
            emit(out, &text)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(1)
        }
    }
}
