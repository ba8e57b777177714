use std::fs;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use serde::Serialize;
use serde_json::{json, Value};
use stez_core::engine::{InvariantReport, ScenarioRun};
use stez_core::events::{lifecycle_trace, parse_jsonl, write_jsonl, Event, EventKind};
use stez_core::nav::{parse_decimal, reconcile, BigRational, NavQuote, NavReport};
use stez_core::replay::{audit_log, ReplayState};
use stez_core::{Engine, Scenario, TokenUnits};
use stez_query::{Snapshot, SnapshotCell};

use crate::args::Window;

/// Anything that is not a usage error.
#[derive(Debug)]
pub enum Failure {
    /// Invariant, strict-mode or tolerance failure.
    Check(Value),
    /// I/O or parse failure.
    Input(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

pub type Outcome = Result<Value, Failure>;

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

pub fn load_scenario(path: &Path, params: Option<&Path>) -> anyhow::Result<Scenario> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let Some(params) = params else {
        return Scenario::from_json(&text).with_context(|| format!("in {}", path.display()));
    };
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| anyhow!("scenario parse error at line {}, column {}: {e}", e.line(), e.column()))
        .with_context(|| format!("in {}", path.display()))?;
    let over_text = fs::read_to_string(params).with_context(|| format!("reading {}", params.display()))?;
    let over: Value = serde_json::from_str(&over_text)
        .map_err(|e| anyhow!("params parse error at line {}, column {}: {e}", e.line(), e.column()))
        .with_context(|| format!("in {}", params.display()))?;
    if !over.is_object() || !value.is_object() {
        return Err(anyhow!("scenario and params must be JSON objects"));
    }
    merge(value.as_object_mut().unwrap().entry("params").or_insert(json!({})), over);
    Scenario::from_json(&value.to_string()).with_context(|| format!("in {}", path.display()))
}

pub fn load_log(path: &Path) -> anyhow::Result<Vec<Event>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_jsonl(&text).with_context(|| format!("in {}", path.display()))
}

fn report_of(engine: &Engine, invariants: &InvariantReport) -> Value {
    let log = engine.log();
    let rejected = log.iter().filter(|e| matches!(e.kind, EventKind::Rejected { .. })).count();
    json!({
        "blocks": engine.next_block(),
        "events": log.len(),
        "rejected_ops": rejected,
        "state_digest": engine.state_digest(),
        "log_digest": engine.log_digest(),
        "lifecycle": lifecycle_trace(log),
        "state": to_value(&Snapshot::capture(engine).state()),
        "invariants": to_value(invariants),
    })
}

pub fn run(scenario: &Path, log: &Path, strict: bool, params: Option<&Path>) -> Outcome {
    let scenario = load_scenario(scenario, params)?;
    let mut run = ScenarioRun::new(&scenario, strict).map_err(anyhow::Error::from)?;
    let result = loop {
        match run.step() {
            Ok(true) => continue,
            Ok(false) => break Ok(()),
            Err(e) => break Err(e),
        }
    };
    let engine = run.engine();
    fs::write(log, write_jsonl(engine.log())).with_context(|| format!("writing {}", log.display()))?;
    let invariants = engine.check_invariants();
    let mut report = report_of(engine, &invariants);
    if let Err(e) = result {
        report["error"] = json!(e.to_string());
        return Err(Failure::Check(report));
    }
    if !invariants.all_passed() {
        return Err(Failure::Check(report));
    }
    Ok(report)
}

pub fn check(log: &Path, scenario: Option<&Path>, strict: bool, params: Option<&Path>) -> Outcome {
    let events = load_log(log)?;
    let (audit, state) = audit_log(&events);
    let mut passed = audit.all_passed();
    let mut report = json!({
        "events": events.len(),
        "log": to_value(&audit),
    });
    if let Some(st) = &state {
        report["final"] = final_state(st);
    }
    if let Some(path) = scenario {
        let scenario = load_scenario(path, params)?;
        let rerun = stez_core::run_scenario(&scenario, strict);
        let (equivalent, detail, engine_checks) = match &rerun {
            Ok(engine) => {
                let same_log = engine.log() == events.as_slice();
                let same_state = state.as_ref() == Some(&ReplayState::from_ledger(engine.ledger()));
                let detail = match (same_log, same_state) {
                    (true, true) => "ok".to_string(),
                    (false, _) => first_difference(engine.log(), &events),
                    (true, false) => "replayed state differs from the engine".to_string(),
                };
                (same_log && same_state, detail, Some(engine.check_invariants()))
            }
            Err(e) => (false, e.to_string(), None),
        };
        passed &= equivalent && engine_checks.as_ref().is_some_and(|c| c.all_passed());
        report["replay_equivalence"] = json!({"passed": equivalent, "detail": detail});
        report["engine"] = engine_checks.map(|c| to_value(&c)).unwrap_or(Value::Null);
    }
    report["passed"] = json!(passed);
    if passed {
        Ok(report)
    } else {
        Err(Failure::Check(report))
    }
}

fn final_state(st: &ReplayState) -> Value {
    json!({
        "ledger": st.ledger,
        "supply": st.supply,
        "frozen_total": st.frozen_total().to_string(),
        "finalizable_total": st.finalizable_total().to_string(),
        "holders": st.balances.len(),
    })
}

fn first_difference(expected: &[Event], actual: &[Event]) -> String {
    match expected.iter().zip(actual).position(|(a, b)| a != b) {
        Some(i) => format!("logs differ at event {i}"),
        None => format!("log has {} events, re-run produced {}", actual.len(), expected.len()),
    }
}

pub fn parse_fx(fx: &str) -> anyhow::Result<BigRational> {
    let text = match fx.strip_prefix('@') {
        Some(path) => fs::read_to_string(path).with_context(|| format!("reading {path}"))?,
        None => fx.to_string(),
    };
    parse_decimal(text.trim()).map_err(anyhow::Error::from)
}

pub fn nav(log: &Path, block: u64, holdings: u64, fx: Option<&str>) -> Outcome {
    let events = load_log(log)?;
    let fx = fx.map(parse_fx).transpose()?;
    let quote = NavQuote::from_log(&events, block, fx).context("quoting")?;
    let report = NavReport::new(quote, TokenUnits(holdings)).context("valuing")?;
    Ok(to_value(&report))
}

pub fn reconcile_window(log: &Path, window: Window, tolerance_bp: u64) -> Outcome {
    let events = load_log(log)?;
    let attribution = reconcile(&events, window.t0, window.t1, tolerance_bp).context("reconciling")?;
    let report = to_value(&attribution);
    if attribution.within_tolerance {
        Ok(report)
    } else {
        Err(Failure::Check(report))
    }
}

pub fn serve(scenario: &Path, listen: SocketAddr, strict: bool, params: Option<&Path>, block_ms: u64) -> Outcome {
    let scenario = load_scenario(scenario, params)?;
    let mut run = ScenarioRun::new(&scenario, strict).map_err(anyhow::Error::from)?;
    let cell = Arc::new(SnapshotCell::new(Snapshot::capture(run.engine())));
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .with_context(|| format!("binding {listen}"))?;
        eprintln!("listening on {}", listener.local_addr()?);
        let writer_cell = cell.clone();
        let writer = tokio::spawn(async move {
            loop {
                match run.step() {
                    Ok(more) => {
                        writer_cell.publish(Snapshot::capture(run.engine()));
                        if !more {
                            break Ok(run.engine().next_block());
                        }
                    }
                    Err(e) => break Err(e),
                }
                if block_ms > 0 {
                    tokio::time::sleep(Duration::from_millis(block_ms)).await;
                }
            }
        });
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        stez_query::serve(listener, cell, shutdown).await.context("serving")?;
        writer.abort();
        Ok(json!({"stopped": true}))
    })
    .map_err(Failure::Input)
}
