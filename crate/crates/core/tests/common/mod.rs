#![allow(dead_code)]

pub mod oracles;

use std::path::PathBuf;

use parcer_core::backend::{load_transcript, Transcript, TranscriptBackend};
use parcer_core::clock::FixedClock;
use parcer_core::contract::{baseline, ContractDoc};
use parcer_core::engine::{run_to_end, start_run, Bindings, Outcome, RunState, Runtime};
use parcer_core::exec::ExecMode;
use parcer_core::telemetry::JsonlSink;

pub const EPOCH_MS: i64 = 1_735_689_600_000;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn transcript(name: &str) -> Transcript {
    load_transcript(fixture(&format!("transcripts/{name}"))).expect("fixture transcript loads")
}

pub fn bindings(extra: &[(&str, &str)]) -> Bindings {
    let mut b = Bindings::new();
    b.insert("context_input".into(), "Search endpoint p95 is 3.1 s; budget 2000 tokens.".into());
    for (k, v) in extra {
        b.insert(k.to_string(), v.to_string());
    }
    b
}

pub struct Finished {
    pub state: RunState,
    pub outcome: Outcome,
    pub backend: TranscriptBackend,
    pub trace: String,
}

pub fn run_with(contract: &ContractDoc, t: Transcript, b: &Bindings, seed: u64, yes: bool) -> Finished {
    let backend = TranscriptBackend::new(t);
    let clock = FixedClock::new(EPOCH_MS);
    let sink = JsonlSink::in_memory(contract.telemetry_spec.pii_redaction);
    let mut state = start_run(contract, b, seed).expect("run starts");
    state.auto_approve = yes;
    let mut rt = Runtime::new(&backend, &clock);
    rt.sink = Some(&sink);
    rt.mode = ExecMode::Sequential;
    let outcome = run_to_end(&mut state, &rt).expect("run completes");
    Finished { state, outcome, trace: sink.contents(), backend }
}

pub fn run_fixture(name: &str) -> Finished {
    run_with(baseline(), transcript(name), &bindings(&[]), 7, false)
}
