//! Command-line front end: `lint`, `run`, `simulate-budget` and `prune`.

use std::fs;
use std::io::{self, BufRead, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::backend::{load_transcript, Backend, TranscriptBackend};
use crate::budget::{simulate, TraceStep, TrajectoryRow};
use crate::clock::{Clock, FixedClock, SystemClock};
use crate::contract::{apply_profile, baseline, load_contract, parse_contract, validate, ContractDoc, ContractError};
use crate::diag::{has_errors, Diagnostic};
use crate::engine::{
    metrics_export, parse_binding, resume, run_result, run_to_end, start_run, ApprovalToken, Bindings, Outcome, RunState,
    Runtime,
};
use crate::fallback::{EmbeddingCache, HashEmbedder};
use crate::telemetry::{prune_dir, redact_value, JsonlSink, RetentionPolicy};

/// Exit code for an invalid contract or bad input.
pub const EXIT_INVALID: u8 = 1;
/// Exit code for unreadable or unwritable files.
pub const EXIT_IO: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "parcer", version, about = "Lint and run operational contracts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a contract file.
    Lint(LintArgs),
    /// Execute a contract against a backend.
    Run(RunArgs),
    /// Replay the budget controller over a MUS trace.
    SimulateBudget(SimulateArgs),
    /// Delete run logs and exports older than their retention window.
    Prune(PruneArgs),
}

#[derive(Debug, Args)]
pub struct LintArgs {
    pub path: PathBuf,
    #[arg(long, value_parser = ["research", "coding", "education"])]
    pub profile: Option<String>,
    #[arg(long)]
    pub mini: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSel {
    Mock(PathBuf),
    Http,
}

impl FromStr for BackendSel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            Some(("mock", path)) if !path.is_empty() => Ok(BackendSel::Mock(path.into())),
            None if s == "http" => Ok(BackendSel::Http),
            _ => Err(format!("expected mock:<transcript> or http, got \"{s}\"")),
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub path: PathBuf,
    #[arg(long)]
    pub backend: BackendSel,
    #[arg(long = "bind", value_name = "KEY=VALUE")]
    pub bind: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "fixed-clock", value_name = "MS")]
    pub fixed_clock: Option<i64>,
    /// Approve destructive tools without asking.
    #[arg(long)]
    pub yes: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub contract: PathBuf,
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    pub dir: PathBuf,
    /// Contract whose retention windows apply; the baseline when omitted.
    #[arg(long)]
    pub contract: Option<PathBuf>,
    #[arg(long, value_name = "MS")]
    pub now: Option<i64>,
}

/// Runs one command and returns its exit code.
pub fn execute(cli: Cli) -> u8 {
    match cli.command {
        Command::Lint(a) => cmd_lint(&a, &mut io::stdout().lock()),
        Command::Run(a) => cmd_run(&a),
        Command::SimulateBudget(a) => cmd_simulate_budget(&a),
        Command::Prune(a) => cmd_prune(&a),
    }
}

fn read(path: &Path) -> Result<String, u8> {
    fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        EXIT_IO
    })
}

fn contract_diagnostics(err: ContractError) -> Vec<Diagnostic> {
    match err {
        ContractError::Diagnostics(d) => d,
        other => vec![Diagnostic::error("profile", other.to_string())],
    }
}

/// Lints `text`. Returns the contract (when it parsed) and every diagnostic.
pub fn lint_source(text: &str, profile: Option<&str>, mini: bool) -> (Option<ContractDoc>, Vec<Diagnostic>) {
    let parsed = if mini {
        load_contract(text).map(|(_, p)| p)
    } else {
        parse_contract(text)
    };
    let parsed = match parsed {
        Ok(p) => p,
        Err(f) => return (None, f.diagnostics),
    };
    let mut diags = parsed.diagnostics;
    let doc = match profile {
        None => parsed.doc,
        Some(id) => match apply_profile(&parsed.doc, id) {
            Ok(d) => d,
            Err(e) => {
                diags.extend(contract_diagnostics(e));
                return (None, diags);
            }
        },
    };
    diags.extend(validate(&doc));
    (Some(doc), diags)
}

pub fn cmd_lint(args: &LintArgs, out: &mut dyn Write) -> u8 {
    let text = match read(&args.path) {
        Ok(t) => t,
        Err(code) => return code,
    };
    let (_, diags) = lint_source(&text, args.profile.as_deref(), args.mini);
    for d in &diags {
        let _ = writeln!(out, "{d}");
    }
    if has_errors(&diags) {
        EXIT_INVALID
    } else {
        let _ = writeln!(out, "OK");
        0
    }
}

fn load_valid(path: &Path) -> Result<ContractDoc, u8> {
    let text = read(path)?;
    let parsed = load_contract(&text).map_err(|f| {
        for d in &f.diagnostics {
            eprintln!("{d}");
        }
        EXIT_INVALID
    })?;
    Ok(parsed.1.doc)
}

fn write_json(path: &Path, mut v: Value, redact: bool) -> io::Result<()> {
    if redact {
        redact_value(&mut v);
    }
    let mut text = serde_json::to_string_pretty(&v).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

/// Asks on the terminal whether `tool` may run.
fn confirm(tool: &str) -> bool {
    if !io::stdin().is_terminal() {
        return false;
    }
    eprint!("approve destructive tool \"{tool}\"? [y/N] ");
    let _ = io::stderr().flush();
    let mut line = String::new();
    io::stdin().lock().read_line(&mut line).is_ok() && matches!(line.trim(), "y" | "Y" | "yes")
}

fn drive(state: &mut RunState, rt: &Runtime<'_>) -> Result<Outcome, crate::engine::EngineError> {
    loop {
        let outcome = run_to_end(state, rt)?;
        let Some(tool) = state.pending_confirmation.clone() else { return Ok(outcome) };
        if !confirm(&tool) {
            return Ok(outcome);
        }
        let token = ApprovalToken {
            correlation_id: state.correlation_id.clone(),
            tool,
        };
        resume(state, &token)?;
    }
}

pub fn cmd_run(args: &RunArgs) -> u8 {
    let contract = match load_valid(&args.path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let mut bindings = Bindings::new();
    for b in &args.bind {
        match parse_binding(b) {
            Ok((k, v)) => {
                bindings.insert(k, v);
            }
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_INVALID;
            }
        }
    }
    let mut state = match start_run(&contract, &bindings, args.seed) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    state.auto_approve = args.yes;

    let backend: Box<dyn Backend> = match &args.backend {
        BackendSel::Mock(path) => match load_transcript(path) {
            Ok(t) => Box::new(TranscriptBackend::new(t)),
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                return EXIT_IO;
            }
        },
        BackendSel::Http => match http_backend(&state) {
            Ok(b) => b,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_INVALID;
            }
        },
    };
    let clock: Box<dyn Clock> = match args.fixed_clock {
        Some(ms) => Box::new(FixedClock::new(ms)),
        None => Box::new(SystemClock),
    };
    if let Err(e) = fs::create_dir_all(&args.out) {
        eprintln!("error: cannot create {}: {e}", args.out.display());
        return EXIT_IO;
    }
    let redact = state.contract.telemetry_spec.pii_redaction;
    let stem = args.out.join(&state.correlation_id);
    let with_ext = |ext: &str| PathBuf::from(format!("{}.{ext}", stem.display()));
    let sink = match JsonlSink::create(&with_ext("trace.jsonl"), redact) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_IO;
        }
    };
    let embedder = HashEmbedder::new(args.seed);
    let cache = EmbeddingCache::new(args.out.join(&state.contract.fallback.cache_dir));
    let mut rt = Runtime::new(backend.as_ref(), clock.as_ref());
    rt.sink = Some(&sink);
    rt.embedder = Some(&embedder);
    rt.cache = Some(&cache);

    let outcome = match drive(&mut state, &rt) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            Outcome::Failed
        }
    };
    let metrics = metrics_export(&state).render(&state.contract.telemetry_spec.metrics_include);
    let written = sink
        .flush()
        .map_err(|e| e.to_string())
        .and_then(|_| write_json(&with_ext("run.json"), run_result(&state), redact).map_err(|e| e.to_string()))
        .and_then(|_| write_json(&with_ext("metrics.json"), metrics, redact).map_err(|e| e.to_string()));
    if let Err(e) = written {
        eprintln!("error: {e}");
        return EXIT_IO;
    }
    match outcome {
        Outcome::Failed => {
            let why = state.failures.last().map(|f| format!("{}: {}", f.phase, f.message));
            eprintln!("run failed: {}", why.unwrap_or_else(|| "unknown cause".into()));
        }
        Outcome::AwaitingConfirmation => {
            eprintln!(
                "awaiting confirmation for {}; rerun with --yes to approve",
                state.pending_confirmation.as_deref().unwrap_or("?")
            );
        }
        _ => {}
    }
    println!("{} {}", outcome.as_str(), with_ext("run.json").display());
    outcome.exit_code()
}

#[cfg(feature = "http")]
fn http_backend(state: &RunState) -> Result<Box<dyn Backend>, String> {
    crate::backend::HttpBackend::from_env(state.contract.model_profile.model_family.clone(), state.options.price_per_token)
        .map(|b| Box::new(b) as Box<dyn Backend>)
        .map_err(|e| e.to_string())
}

#[cfg(not(feature = "http"))]
fn http_backend(_: &RunState) -> Result<Box<dyn Backend>, String> {
    Err("built without the http feature".into())
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Bad { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Parses a MUS trace: one sample per line, optionally followed by cost and
/// wall-clock columns. A non-numeric first line is taken as a header.
/// Returns each step with its 1-based line number.
pub fn parse_trace(reader: impl BufRead) -> Result<Vec<(usize, TraceStep)>, TraceError> {
    let mut steps = Vec::new();
    for (i, text) in reader.lines().enumerate() {
        let text = text?;
        let line = i + 1;
        let fields: Vec<&str> = text.split(',').map(str::trim).collect();
        if fields.iter().all(|f| f.is_empty()) || fields[0].starts_with('#') {
            continue;
        }
        if i == 0 && fields[0].chars().any(|c| c.is_ascii_alphabetic()) && fields[0].parse::<f64>().is_err() {
            continue;
        }
        let num = |idx: usize| -> Result<f64, TraceError> {
            match fields.get(idx).filter(|s| !s.is_empty()) {
                None => Ok(0.0),
                Some(s) => s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| TraceError::Bad {
                    line,
                    message: format!("not a number: \"{s}\""),
                }),
            }
        };
        let mus = num(0)?;
        if !(0.0..=100.0).contains(&mus) {
            return Err(TraceError::Bad {
                line,
                message: format!("MUS sample {mus} outside [0, 100]"),
            });
        }
        steps.push((
            line,
            TraceStep {
                mus,
                cost_usd: num(1)?,
                wall_ms: num(2)?,
            },
        ));
    }
    Ok(steps)
}

/// Writes trajectory rows as CSV with a header.
pub fn write_trajectory(rows: &[TrajectoryRow], w: impl Write) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["step", "mus", "ema", "token_budget", "tool_budget", "mode", "event"])?;
    for r in rows {
        wtr.write_record([
            r.step.to_string(),
            r.mus.to_string(),
            r.ema.to_string(),
            r.token_budget.to_string(),
            r.tool_budget.to_string(),
            r.mode.as_str().to_string(),
            r.event.map_or("", |d| d.as_str()).to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn cmd_simulate_budget(args: &SimulateArgs) -> u8 {
    let contract = match load_valid(&args.contract) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let file = match fs::File::open(&args.trace) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.trace.display());
            return EXIT_IO;
        }
    };
    let steps = match parse_trace(io::BufReader::new(file)) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {}: {e}", args.trace.display());
            return EXIT_INVALID;
        }
    };
    let trace: Vec<TraceStep> = steps.iter().map(|(_, s)| *s).collect();
    let rows = match simulate(&contract.budget, contract.model_profile.tool_call_budget_max, &trace) {
        Ok((rows, _)) => rows,
        Err(e) => {
            let line = match &e {
                crate::budget::BudgetError::AtStep { step, .. } => steps.get(*step).map(|(l, _)| *l),
                _ => None,
            };
            match line {
                Some(l) => eprintln!("error: {}: line {l}: {e}", args.trace.display()),
                None => eprintln!("error: {e}"),
            }
            return EXIT_INVALID;
        }
    };
    let written = fs::File::create(&args.out)
        .map_err(csv::Error::from)
        .and_then(|f| write_trajectory(&rows, io::BufWriter::new(f)));
    if let Err(e) = written {
        eprintln!("error: cannot write {}: {e}", args.out.display());
        return EXIT_IO;
    }
    0
}

pub fn cmd_prune(args: &PruneArgs) -> u8 {
    let policy = match &args.contract {
        None => RetentionPolicy::from(&baseline().telemetry_spec),
        Some(p) => match load_valid(p) {
            Ok(c) => RetentionPolicy::from(&c.telemetry_spec),
            Err(code) => return code,
        },
    };
    let now = args.now.unwrap_or_else(|| SystemClock.now_ms());
    match prune_dir(&args.dir, now, &policy) {
        Ok(n) => {
            println!("pruned {n}");
            0
        }
        Err(e) => {
            eprintln!("error: {}: {e}", args.dir.display());
            EXIT_IO
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::BASELINE_SOURCE;

    #[test]
    fn backend_selector() {
        assert_eq!("http".parse::<BackendSel>().unwrap(), BackendSel::Http);
        assert_eq!("mock:a/b.jsonl".parse::<BackendSel>().unwrap(), BackendSel::Mock("a/b.jsonl".into()));
        assert!("mock:".parse::<BackendSel>().is_err());
        assert!("grpc".parse::<BackendSel>().is_err());
    }

    #[test]
    fn lint_baseline_and_bad_sum() {
        let (_, d) = lint_source(BASELINE_SOURCE, None, false);
        assert!(!has_errors(&d), "{d:?}");
        let bad = BASELINE_SOURCE.replace("traceability:0.10}", "traceability:0.00}");
        let (_, d) = lint_source(&bad, None, false);
        assert!(has_errors(&d));
        assert!(d.iter().any(|x| x.message.contains("0.9")), "{d:?}");
    }

    #[test]
    fn trace_parsing() {
        let steps = parse_trace("mus\n50\n\n12.5,0.01,300\n".as_bytes()).unwrap();
        assert_eq!(steps.len(), 2);
        assert_eq!(steps[1].0, 4);
        assert_eq!(steps[1].1.cost_usd, 0.01);
        let err = parse_trace("10\n20\n101\n".as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 3:"), "{err}");
        assert!(parse_trace("".as_bytes()).unwrap().is_empty());
    }
}
