//! The totally ordered event log.
//!
//! Events serialize to one JSON object per line with a fixed field order, so
//! two logs from the same scenario compare byte for byte.

use serde::{Deserialize, Serialize};

use crate::fixedpoint::{self, Fraction, Mutez, TokenUnits};
use crate::ledger::{
    AccountId, BlockLevel, Cycle, DepositRecord, FinalizationRecord, MaturationRecord,
    RedemptionRecord, SlashRecord,
};
use crate::registry::AllocationPlan;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub block: BlockLevel,
    pub cycle: Cycle,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardSource {
    Scenario,
    Model,
}

/// Ledger totals at a boundary, used to detect tampering on replay.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub ledger: Mutez,
    pub supply: TokenUnits,
    #[serde(with = "fixedpoint::u128_string")]
    pub frozen_total: u128,
    #[serde(with = "fixedpoint::u128_string")]
    pub finalizable_total: u128,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Deposit(DepositRecord),
    RedemptionRequested(RedemptionRecord),
    BucketMatured(MaturationRecord),
    RedemptionFinalized(FinalizationRecord),
    Reward {
        amount: Mutez,
        source: RewardSource,
    },
    Slash(SlashRecord),
    ValidatorRegistered {
        validator: AccountId,
        fee_bp: u16,
        capacity: Mutez,
        self_bond: Mutez,
        sequence: u64,
    },
    ValidatorUpdated {
        validator: AccountId,
        fee_bp: u16,
        capacity: Mutez,
    },
    ValidatorUnregistered {
        validator: AccountId,
    },
    Allocation(AllocationPlan),
    Rejected {
        op_index: usize,
        op: String,
        reason: String,
    },
    CycleEnd {
        /// The cycle that just closed.
        closed: Cycle,
        #[serde(flatten)]
        checkpoint: Checkpoint,
    },
    ScenarioEnd {
        #[serde(flatten)]
        checkpoint: Checkpoint,
        state_digest: String,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Deposit(_) => "deposit",
            EventKind::RedemptionRequested(_) => "redemption_requested",
            EventKind::BucketMatured(_) => "bucket_matured",
            EventKind::RedemptionFinalized(_) => "redemption_finalized",
            EventKind::Reward { .. } => "reward",
            EventKind::Slash(_) => "slash",
            EventKind::ValidatorRegistered { .. } => "validator_registered",
            EventKind::ValidatorUpdated { .. } => "validator_updated",
            EventKind::ValidatorUnregistered { .. } => "validator_unregistered",
            EventKind::Allocation(_) => "allocation",
            EventKind::Rejected { .. } => "rejected",
            EventKind::CycleEnd { .. } => "cycle_end",
            EventKind::ScenarioEnd { .. } => "scenario_end",
        }
    }

    /// Steps of the staking lifecycle this event realizes: deposit (1), add
    /// to ledger (2a), mint (2b), stake distribution (3), burn (4), queued
    /// release (5), finalize (6).
    pub fn lifecycle_steps(&self) -> &'static [&'static str] {
        match self {
            EventKind::Deposit(_) => &["1", "2a", "2b"],
            EventKind::Allocation(plan) if plan.total_assigned() > 0 => &["3"],
            EventKind::RedemptionRequested(_) => &["4", "5"],
            EventKind::RedemptionFinalized(_) => &["6"],
            _ => &[],
        }
    }

    pub fn slash_fraction(&self) -> Option<Fraction> {
        match self {
            EventKind::Slash(s) => Some(s.fraction),
            _ => None,
        }
    }
}

impl Event {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("events always serialize")
    }
}

/// Lifecycle steps in order of first occurrence.
pub fn lifecycle_trace<'a>(events: impl IntoIterator<Item = &'a Event>) -> Vec<&'static str> {
    let mut seen: Vec<&'static str> = Vec::new();
    for e in events {
        for step in e.kind.lifecycle_steps() {
            if !seen.contains(step) {
                seen.push(step);
            }
        }
    }
    seen
}

/// Serializes a log as JSON lines.
pub fn write_jsonl(events: &[Event]) -> String {
    let mut out = String::with_capacity(events.len() * 128);
    for e in events {
        out.push_str(&e.to_json_line());
        out.push('\n');
    }
    out
}

#[derive(Debug, thiserror::Error)]
#[error("line {line}: {source}")]
pub struct LogParseError {
    pub line: usize,
    #[source]
    pub source: serde_json::Error,
}

/// Parses a JSON-lines log; blank lines are skipped.
pub fn parse_jsonl(text: &str) -> Result<Vec<Event>, LogParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| LogParseError { line: i + 1, source }))
        .collect()
}
