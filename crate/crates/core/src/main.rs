use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use hearsay::checker::{check_all, Report};
use hearsay::netsim::{run, SimOutcome};
use hearsay::scenario::Scenario;
use hearsay::strategy::utility;
use hearsay::trace::{read_jsonl, write_jsonl};

#[derive(Parser)]
#[command(name = "hearsay", version, about = "Simulate and check Hearsay payment runs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and optionally check it.
    Run {
        scenario: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Run all checks and print the report.
        #[arg(long)]
        check: bool,
        /// Print final balances, executed counts and utilities.
        #[arg(long)]
        summary: bool,
        /// Print the check report as JSON instead of text.
        #[arg(long, requires = "check")]
        json: bool,
    },
    /// Check a trace file offline.
    Check {
        trace: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Run and check a scenario over many seeds.
    Sweep {
        scenario: PathBuf,
        /// Inclusive range `a..b`; defaults to the scenario's seeds.
        #[arg(long)]
        seeds: Option<String>,
        /// Parallel workers; 1 runs sequentially.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

const EXIT_INPUT: u8 = 2;
const EXIT_NON_QUIESCENT: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run {
            scenario,
            seed,
            trace,
            check,
            summary,
            json,
        } => cmd_run(&scenario, seed, trace.as_deref(), check, summary, json),
        Cmd::Check { trace, json } => cmd_check(&trace, json),
        Cmd::Sweep {
            scenario,
            seeds,
            workers,
        } => cmd_sweep(&scenario, seeds.as_deref(), workers),
    }
}

fn input_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_INPUT)
}

fn print_report(report: &Report, json: bool) {
    if json {
        println!("{}", serde_json::to_string_pretty(report).expect("report serializes"));
    } else {
        print!("{report}");
    }
}

fn cmd_run(path: &Path, seed: Option<u64>, trace: Option<&Path>, check: bool, summary: bool, json: bool) -> ExitCode {
    let scenario = match Scenario::load(path) {
        Ok(s) => s,
        Err(e) => return input_error(e),
    };
    let seed = match seed {
        Some(s) => s,
        None => match scenario.seed_list() {
            Ok(seeds) => seeds[0],
            Err(e) => return input_error(e),
        },
    };
    let outcome = match scenario.config(seed).map_err(|e| e.to_string()).and_then(|c| run(&c).map_err(|e| e.to_string())) {
        Ok(o) => o,
        Err(e) => return input_error(e),
    };
    if let Some(p) = trace {
        let written = File::create(p).and_then(|f| write_jsonl(BufWriter::new(f), &outcome.trace));
        if let Err(e) = written {
            return input_error(format!("cannot write {}: {e}", p.display()));
        }
    }
    if summary {
        print_summary(&outcome);
    }
    let mut code = 0;
    if check {
        let report = check_all(&outcome.trace).expect("simulator traces have a header");
        print_report(&report, json);
        code = report.exit_code();
    }
    if code == 0 && !outcome.quiescent {
        eprintln!("run stopped after {} steps without reaching quiescence", outcome.steps);
        code = EXIT_NON_QUIESCENT.into();
    }
    ExitCode::from(code as u8)
}

fn print_summary(outcome: &SimOutcome) {
    let header = match &outcome.trace[0].event {
        hearsay::trace::TraceEvent::Header(h) => h,
        _ => unreachable!("simulator writes the header first"),
    };
    let reference = header.compliant().first().copied().unwrap_or(hearsay::types::AgentId(0));
    let view = &outcome.stacks[reference.index()].ledger;
    println!(
        "steps {} ticks {} quiescent {} (balances as seen by agent {reference})",
        outcome.steps, outcome.final_tick, outcome.quiescent
    );
    println!("{:>5} {:<20} {:>10} {:>9} {:>12}", "agent", "kind", "balance", "executed", "utility");
    for s in &outcome.stacks {
        let a = s.id();
        let kind = serde_json::to_value(header.kind_of(a).expect("listed"))
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        let u = utility(&outcome.trace, a).expect("header has a valid cost");
        let approx = *u.total.numer() as f64 / *u.total.denom() as f64;
        println!(
            "{:>5} {:<20} {:>10} {:>9} {:>12.2}",
            a.0,
            kind,
            view.balance(a),
            s.ledger.executed().len(),
            approx
        );
    }
}

fn cmd_check(path: &Path, json: bool) -> ExitCode {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) => return input_error(format!("cannot read {}: {e}", path.display())),
    };
    let records = match read_jsonl(BufReader::new(file)) {
        Ok(r) => r,
        Err(e) => return input_error(format!("ill-formed trace: {e}")),
    };
    let report = match check_all(&records) {
        Ok(r) => r,
        Err(e) => return input_error(e),
    };
    print_report(&report, json);
    ExitCode::from(report.exit_code() as u8)
}

fn parse_seeds(s: &str) -> Option<Vec<u64>> {
    let (a, b) = s.split_once("..")?;
    let a: u64 = a.trim().parse().ok()?;
    let b: u64 = b.trim_start_matches('=').trim().parse().ok()?;
    (a <= b).then(|| (a..=b).collect())
}

fn cmd_sweep(path: &Path, seeds: Option<&str>, workers: usize) -> ExitCode {
    let scenario = match Scenario::load(path) {
        Ok(s) => s,
        Err(e) => return input_error(e),
    };
    let seeds = match seeds {
        Some(s) => match parse_seeds(s) {
            Some(v) => v,
            None => return input_error(format!("bad seed range {s:?}, expected a..b")),
        },
        None => match scenario.seed_list() {
            Ok(v) => v,
            Err(e) => return input_error(e),
        },
    };
    if let Err(e) = scenario.config(seeds[0]) {
        return input_error(e);
    }
    let one = |seed: u64| -> (u64, Report) {
        let config = scenario.config(seed).expect("validated above");
        let outcome = run(&config).expect("validated above");
        (seed, check_all(&outcome.trace).expect("simulator traces have a header"))
    };
    let mut results: Vec<(u64, Report)> = if workers > 1 {
        match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => pool.install(|| seeds.par_iter().map(|&s| one(s)).collect()),
            Err(e) => return input_error(e),
        }
    } else {
        seeds.iter().map(|&s| one(s)).collect()
    };
    results.sort_by_key(|(s, _)| *s);

    let passed = results.iter().filter(|(_, r)| r.all_pass()).count();
    for (seed, r) in results.iter().filter(|(_, r)| !r.all_pass()) {
        for c in r.checks.iter().filter(|c| !c.passed()) {
            println!("seed {seed}: {c}");
        }
    }
    println!("{passed}/{} PASS", results.len());
    let code = results.iter().map(|(_, r)| r.exit_code()).max_by_key(|&c| match c {
        1 => 2,
        3 => 1,
        _ => 0,
    });
    ExitCode::from(code.unwrap_or(0) as u8)
}
