//! Acceptance suite. Every criterion prints one PASS/FAIL line on stderr,
//! also when the test harness captures output.

mod reporting_criteria;
mod support;

use std::any::Any;
use std::io::Write;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Criterion 1 runtime limit.
pub const RATE_RUNTIME_LIMIT: Duration = Duration::from_secs(10);
/// Criterion 5 runtime limit.
pub const ALLOCATION_RUNTIME_LIMIT: Duration = Duration::from_secs(5);
/// Criterion 6 runtime limit, per run.
pub const DETERMINISM_RUN_LIMIT: Duration = Duration::from_secs(5);
/// Criterion 4: deviation of exact claims from `(1 - p) ×` pre-slash, mutez, exclusive.
pub const SLASH_CLAIM_TOLERANCE_MUTEZ: u64 = 1;
/// Criterion 4: deviation of floored balances and payouts, mutez, exclusive.
pub const SLASH_FLOORED_TOLERANCE_MUTEZ: u64 = 2;
/// Criterion 8: default reconciliation tolerance.
pub const RECONCILE_TOLERANCE_BP: u64 = 5;
/// Criterion 8: "well under" the tolerance, in basis points, exclusive.
pub const RECONCILE_WELL_UNDER_BP: u64 = 1;

static SERIAL: Mutex<()> = Mutex::new(());

fn panic_text(p: &(dyn Any + Send)) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

/// Runs one criterion alone and reports it.
fn criterion(id: u32, title: &str, body: impl FnOnce() -> String) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(body));
    let elapsed = start.elapsed();
    let line = match &outcome {
        Ok(detail) => format!("acceptance {id:>2} PASS {title}: {detail} [{elapsed:.2?}]"),
        Err(p) => format!("acceptance {id:>2} FAIL {title}: {} [{elapsed:.2?}]", panic_text(p.as_ref())),
    };
    let _ = writeln!(std::io::stderr(), "{line}");
    if let Err(p) = outcome {
        resume_unwind(p);
    }
}

#[test]
fn criterion_01_exchange_rate_preservation() {
    criterion(1, "exchange-rate preservation", ledger_criteria::rate_preservation);
}

#[test]
fn criterion_02_zero_supply_floor() {
    criterion(2, "zero-supply floor", ledger_criteria::zero_supply_floor);
}

#[test]
fn criterion_03_supply_conservation() {
    criterion(3, "supply conservation", engine_criteria::supply_conservation);
}

#[test]
fn criterion_04_slash_socialization() {
    criterion(4, "slash socialization", ledger_criteria::slash_socialization);
}

#[test]
fn criterion_05_allocation_constraints() {
    criterion(5, "allocation constraints", engine_criteria::allocation_constraints);
}

#[test]
fn criterion_06_determinism() {
    criterion(6, "determinism", engine_criteria::determinism);
}

#[test]
fn criterion_07_unbonding_lifecycle() {
    criterion(7, "unbonding lifecycle", engine_criteria::unbonding_lifecycle);
}

#[test]
fn criterion_08_reconciliation() {
    criterion(8, "reconciliation", reporting_criteria::reconciliation);
}

#[test]
fn criterion_09_log_replay_equivalence() {
    criterion(9, "log-replay equivalence", reporting_criteria::log_replay_equivalence);
}

#[test]
fn criterion_10_query_surface_consistency() {
    criterion(10, "query-surface consistency", reporting_criteria::query_surface);
}
