//! Command-line front end: compile artifacts, serve them, replay logs
//! locally or against a server, validate engines, and benchmark backends.
//!
//! Exit codes: 0 on success, 1 on any tool failure (parse, connection,
//! validation), 2 on usage errors (via the argument parser).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use streplay::backend::{ClearBackend, MockBackend};
use streplay::client::{replay_log, LocalSession, LogReport, StepService};
use streplay::compiler::{compile, CompileOptions, CompiledNet, ScenarioFilter};
use streplay::logio::{parse_csv, parse_xes, EventLog};
use streplay::net::parse_pnml;
use streplay::oracle::validate_engine;
use streplay::protocol::{Mode, RemoteSession, Server};

#[derive(Parser)]
#[command(name = "streplay", version, about = "Token-replay conformance checking as data-oblivious matrix arithmetic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a PNML net into a matrix artifact.
    Compile {
        /// Input PNML file.
        pnml: PathBuf,
        /// Output artifact path.
        #[arg(short, long)]
        out: PathBuf,
        /// Maximum tokens per place the engine must represent.
        #[arg(long, default_value_t = 7)]
        bound: i64,
        /// Keep scenarios that no replay from the initial marking can
        /// trigger (needed for exhaustive engine validation).
        #[arg(long)]
        exhaustive: bool,
    },
    /// Serve a compiled artifact over TCP.
    Serve {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long, default_value = "clear")]
        backend: Mode,
        #[arg(long, default_value = "127.0.0.1:9090")]
        listen: String,
    },
    /// Replay an event log and report fitness.
    Replay(ReplayArgs),
    /// Check a net's compiled engine against the reference semantics.
    Validate {
        /// Input PNML file.
        pnml: PathBuf,
    },
    /// Replay a log under several backends, reporting wall time and
    /// operation counts.
    Bench {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        log: PathBuf,
        /// Comma-separated backend list.
        #[arg(long, value_delimiter = ',', default_value = "clear,mock")]
        backends: Vec<Mode>,
    },
}

#[derive(Args)]
struct ReplayArgs {
    /// Event log (.csv or .xes).
    #[arg(long)]
    log: PathBuf,
    /// Replay in-process instead of over the network.
    #[arg(long, requires = "artifact", conflicts_with = "connect")]
    local: bool,
    /// Compiled artifact (required with --local).
    #[arg(long)]
    artifact: Option<PathBuf>,
    /// Server endpoint to replay against.
    #[arg(long, conflicts_with = "local")]
    connect: Option<String>,
    /// Arithmetic backend (local) or session mode (remote).
    #[arg(long, default_value = "clear")]
    backend: Mode,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "json")]
    format: ReportFormat,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Compile {
            pnml,
            out,
            bound,
            exhaustive,
        } => {
            let net = parse_pnml(&fs::read_to_string(&pnml)?)?;
            let compiled = compile(
                &net,
                CompileOptions {
                    marking_bound: bound,
                    filter: if exhaustive {
                        ScenarioFilter::Exhaustive
                    } else {
                        ScenarioFilter::StepReachable
                    },
                },
            )?;
            fs::write(&out, compiled.to_json()?)?;
            println!(
                "compiled {} places, {} transitions, {} scenarios -> {}",
                compiled.place_count(),
                compiled.transition_count(),
                compiled.scenario_count(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve {
            artifact,
            backend,
            listen,
        } => {
            let compiled = load_artifact(&artifact)?;
            let server = Server::spawn(&compiled, backend, &listen)?;
            println!("serving {} in {backend} mode on {}", artifact.display(), server.addr());
            loop {
                std::thread::park();
            }
        }
        Command::Replay(args) => {
            let log = load_log(&args.log)?;
            let report = if args.local {
                let compiled = load_artifact(args.artifact.as_ref().unwrap())?;
                replay_with_backend(&compiled, args.backend, &log)?
            } else {
                let endpoint = args
                    .connect
                    .ok_or("either --local --artifact <path> or --connect <addr> is required")?;
                let mut session = RemoteSession::connect(&endpoint, args.backend)?;
                replay_log(&mut session, &log)?
            };
            match &args.out {
                Some(path) => {
                    let file = fs::File::create(path)?;
                    write_report(&report, args.format, file)?;
                }
                None => write_report(&report, args.format, std::io::stdout().lock())?,
            }
            eprintln!(
                "aggregate fitness {:.6} over {} cases ({} variants, {} skipped)",
                report.aggregate_fitness,
                report.cases,
                report.variants.len(),
                report.skipped.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { pnml } => {
            let net = parse_pnml(&fs::read_to_string(&pnml)?)?;
            let compiled = compile(
                &net,
                CompileOptions {
                    marking_bound: 7,
                    filter: ScenarioFilter::Exhaustive,
                },
            )?;
            let report = validate_engine(&net, &compiled, 1)?;
            println!("{}/{} cases pass", report.passed, report.total);
            if report.all_passed() {
                Ok(ExitCode::SUCCESS)
            } else {
                for failure in &report.failures {
                    eprintln!("FAIL {failure}");
                }
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Bench {
            artifact,
            log,
            backends,
        } => {
            let compiled = load_artifact(&artifact)?;
            let log = load_log(&log)?;
            for mode in backends {
                bench_backend(&compiled, mode, &log)?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_artifact(path: &Path) -> Result<CompiledNet, Box<dyn std::error::Error>> {
    Ok(CompiledNet::from_json(&fs::read_to_string(path)?)?)
}

fn load_log(path: &Path) -> Result<EventLog, Box<dyn std::error::Error>> {
    let text = fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("xes")) {
        return Ok(parse_xes(&text)?);
    }
    let has_timestamp = text
        .lines()
        .next()
        .is_some_and(|h| h.split(',').any(|c| c.trim() == "timestamp"));
    Ok(parse_csv(
        text.as_bytes(),
        "case_id",
        "activity",
        has_timestamp.then_some("timestamp"),
    )?)
}

fn replay_with_backend(
    compiled: &CompiledNet,
    mode: Mode,
    log: &EventLog,
) -> Result<LogReport, Box<dyn std::error::Error>> {
    match mode {
        Mode::Clear => Ok(replay_log(&mut LocalSession::new(ClearBackend, compiled)?, log)?),
        Mode::Mock => {
            let width = MockBackend::width_for(
                compiled.marking_bound,
                compiled.delta.iter().copied().max().unwrap_or(1),
            );
            Ok(replay_log(
                &mut LocalSession::new(MockBackend::new(width), compiled)?,
                log,
            )?)
        }
        Mode::Encrypted => Err("the encrypted backend is a plug-in point and is not built in".into()),
    }
}

fn write_report<W: std::io::Write>(
    report: &LogReport,
    format: ReportFormat,
    w: W,
) -> Result<(), Box<dyn std::error::Error>> {
    match format {
        ReportFormat::Json => report.write_json(w)?,
        ReportFormat::Csv => report.write_csv(w)?,
    }
    Ok(())
}

fn bench_backend(
    compiled: &CompiledNet,
    mode: Mode,
    log: &EventLog,
) -> Result<(), Box<dyn std::error::Error>> {
    println!("== backend: {mode} ==");
    match mode {
        Mode::Clear => {
            let mut session = LocalSession::new(ClearBackend, compiled)?;
            bench_run(&mut session, log)?;
        }
        Mode::Mock => {
            let width = MockBackend::width_for(
                compiled.marking_bound,
                compiled.delta.iter().copied().max().unwrap_or(1),
            );
            let mut session = LocalSession::new(MockBackend::new(width), compiled)?;
            bench_run(&mut session, log)?;
            let account = session.backend().snapshot_account();
            println!(
                "ops: mat_vec={} (macs={}), add={}, sub_clamped={}, div_const={}, min_const={}, scale={}, sum={}, concat={}, mul_scalar={}, affine_scalar={}",
                account.mat_vec,
                account.macs,
                account.add,
                account.sub_clamped,
                account.div_const,
                account.min_const,
                account.scale,
                account.sum,
                account.concat,
                account.mul_scalar,
                account.affine_scalar,
            );
        }
        Mode::Encrypted => {
            return Err("the encrypted backend is a plug-in point and is not built in".into())
        }
    }
    Ok(())
}

fn bench_run<S: StepService>(
    service: &mut S,
    log: &EventLog,
) -> Result<(), Box<dyn std::error::Error>> {
    for (trace, cases) in &log.variants {
        let started = Instant::now();
        let result = streplay::client::replay_trace(service, trace)?;
        let elapsed = started.elapsed();
        println!(
            "{:>9.3?}  cases={cases} events={} fitness={:.4}{}",
            elapsed,
            trace.len(),
            result.fitness,
            if result.fitness < 1.0 { "  UNFITTING" } else { "" }
        );
    }
    Ok(())
}
