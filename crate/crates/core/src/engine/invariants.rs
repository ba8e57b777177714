use serde::Serialize;

use crate::registry::validate_plan;

use super::Engine;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InvariantCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InvariantReport {
    pub checks: Vec<InvariantCheck>,
}

impl InvariantReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &InvariantCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&InvariantCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn check_of(name: &'static str, failure: Option<String>) -> InvariantCheck {
    InvariantCheck {
        name,
        passed: failure.is_none(),
        detail: failure.unwrap_or_else(|| "ok".into()),
    }
}

pub(super) fn check(engine: &Engine) -> InvariantReport {
    let ledger = engine.ledger();
    let l = ledger.staking_ledger();
    let s = ledger.token_supply();
    let quote = ledger.exchange_rate();

    let zero_supply = if s.is_zero() && (!l.is_zero() || quote.ratio() != (1, 1)) {
        Some(format!("S = 0 but L = {l}, quote = {quote}"))
    } else {
        None
    };

    let rate_definition = if !s.is_zero() && quote.ratio() != (l.get() as u128, s.get() as u128) {
        Some(format!("quote {:?} differs from L/S = {l}/{s}", quote.ratio()))
    } else {
        None
    };

    let balances: u128 = ledger.balances().values().map(|b| b.get() as u128).sum();
    let totals = ledger.totals();
    let audit = engine.supply_audit();
    let supply = if balances != s.get() as u128 {
        Some(format!("S = {s} but balances sum to {balances}"))
    } else if totals.minted.checked_sub(totals.burned) != Some(s.get() as u128) {
        Some(format!(
            "S = {s} but minted {} - burned {}",
            totals.minted, totals.burned
        ))
    } else {
        audit
            .violations
            .first()
            .map(|v| format!("{} supply violations, first: {v}", audit.violations.len()))
    };

    let decomposition = engine
        .plans()
        .values()
        .find_map(|p| validate_plan(p).err().map(|e| format!("plan for cycle {}: {e}", p.effective_cycle)));

    let gap = ledger.conservation_gap();
    let conservation = (gap != 0).then(|| {
        format!(
            "deposited {} + rewarded {} - slashed {} - paid {} differs from L + F + E by {gap}",
            totals.deposited, totals.rewarded, totals.slashed, totals.paid_out
        )
    });

    let c = ledger.cycle();
    let u = ledger.unbonding_period();
    let window = ledger.frozen().values().find_map(|b| {
        let inside = b.request_cycle <= c && b.request_cycle + u > c;
        (!inside).then(|| format!("bucket {} outside ({}, {c}]", b.request_cycle, c as i128 - u as i128))
    });
    let buckets = ledger.frozen().values().find_map(|b| {
        (b.remaining_total > b.original_total).then(|| {
            format!(
                "bucket {} remaining {} exceeds original {}",
                b.request_cycle, b.remaining_total, b.original_total
            )
        })
    });

    InvariantReport {
        checks: vec![
            check_of("zero_supply_floor", zero_supply),
            check_of("exchange_rate_definition", rate_definition),
            check_of("supply_conservation", supply),
            check_of("ledger_decomposition", decomposition),
            check_of("conservation", conservation),
            check_of("frozen_window", window.or(buckets)),
        ],
    }
}
