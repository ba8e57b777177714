//! Rebuilds `(L, S, F, E)` and token balances from an event log alone.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::engine::{InvariantCheck, InvariantReport};
use crate::events::{Checkpoint, Event, EventKind};
use crate::fixedpoint::{ExchangeRate, Mutez, TokenUnits};
use crate::ledger::{AccountId, BlockLevel, Cycle, LedgerState};
use crate::registry::validate_plan;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error("sequence gap: expected event {expected}, found {found}")]
    Gap { expected: u64, found: u64 },
    #[error("event {seq} goes back in time (block {block} after {previous})")]
    OutOfOrder {
        seq: u64,
        block: BlockLevel,
        previous: BlockLevel,
    },
    #[error("event {seq} follows the end of the scenario")]
    AfterEnd { seq: u64 },
    #[error("event {seq}: {reason}")]
    Inconsistent { seq: u64, reason: String },
    #[error("event {seq}: checkpoint {field} is {logged} but replay gives {replayed}")]
    CheckpointMismatch {
        seq: u64,
        field: &'static str,
        logged: String,
        replayed: String,
    },
    #[error("log is incomplete: {0}")]
    Incomplete(String),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ReplayState {
    pub ledger: Mutez,
    pub supply: TokenUnits,
    pub frozen: BTreeMap<Cycle, Mutez>,
    pub finalizable: BTreeMap<AccountId, Mutez>,
    pub balances: BTreeMap<AccountId, TokenUnits>,
    pub deposited: u128,
    pub rewarded: u128,
    pub slashed: u128,
    pub paid_out: u128,
}

impl ReplayState {
    pub fn from_ledger(ledger: &LedgerState) -> Self {
        let t = ledger.totals();
        ReplayState {
            ledger: ledger.staking_ledger(),
            supply: ledger.token_supply(),
            frozen: ledger
                .frozen()
                .iter()
                .map(|(c, b)| (*c, b.remaining_total))
                .collect(),
            finalizable: ledger.finalizable().clone(),
            balances: ledger.balances().clone(),
            deposited: t.deposited,
            rewarded: t.rewarded,
            slashed: t.slashed,
            paid_out: t.paid_out,
        }
    }

    pub fn rate(&self) -> ExchangeRate {
        ExchangeRate::new(self.ledger, self.supply)
    }

    pub fn frozen_total(&self) -> u128 {
        self.frozen.values().map(|m| m.get() as u128).sum()
    }

    pub fn finalizable_total(&self) -> u128 {
        self.finalizable.values().map(|m| m.get() as u128).sum()
    }

    pub fn conservation_gap(&self) -> i128 {
        let flows = (self.deposited + self.rewarded) as i128 - (self.slashed + self.paid_out) as i128;
        flows
            - (self.ledger.get() as i128 + self.frozen_total() as i128 + self.finalizable_total() as i128)
    }

    fn checkpoint_matches(&self, seq: u64, cp: &Checkpoint) -> Result<(), ReplayError> {
        let pairs: [(&'static str, u128, u128); 4] = [
            ("ledger", cp.ledger.get() as u128, self.ledger.get() as u128),
            ("supply", cp.supply.get() as u128, self.supply.get() as u128),
            ("frozen_total", cp.frozen_total, self.frozen_total()),
            ("finalizable_total", cp.finalizable_total, self.finalizable_total()),
        ];
        for (field, logged, replayed) in pairs {
            if logged != replayed {
                return Err(ReplayError::CheckpointMismatch {
                    seq,
                    field,
                    logged: logged.to_string(),
                    replayed: replayed.to_string(),
                });
            }
        }
        Ok(())
    }
}

fn add(seq: u64, a: u64, b: u64, what: &str) -> Result<u64, ReplayError> {
    a.checked_add(b).ok_or_else(|| ReplayError::Inconsistent {
        seq,
        reason: format!("{what} overflows"),
    })
}

fn sub(seq: u64, a: u64, b: u64, what: &str) -> Result<u64, ReplayError> {
    a.checked_sub(b).ok_or_else(|| ReplayError::Inconsistent {
        seq,
        reason: format!("{what} would go negative ({a} - {b})"),
    })
}

/// Incremental replayer. Enforces contiguous sequence numbers and
/// non-decreasing blocks, and verifies every checkpoint it meets.
#[derive(Clone, Debug, Default)]
pub struct LogReplay {
    state: ReplayState,
    next_seq: u64,
    last_block: Option<BlockLevel>,
    ended_at: Option<BlockLevel>,
}

impl LogReplay {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self) -> &ReplayState {
        &self.state
    }

    pub fn into_state(self) -> ReplayState {
        self.state
    }

    /// Block of the `scenario_end` event, once seen.
    pub fn ended_at(&self) -> Option<BlockLevel> {
        self.ended_at
    }

    pub fn last_block(&self) -> Option<BlockLevel> {
        self.last_block
    }

    pub fn apply(&mut self, e: &Event) -> Result<(), ReplayError> {
        let seq = e.seq;
        if seq != self.next_seq {
            return Err(ReplayError::Gap {
                expected: self.next_seq,
                found: seq,
            });
        }
        if self.ended_at.is_some() {
            return Err(ReplayError::AfterEnd { seq });
        }
        if let Some(prev) = self.last_block {
            if e.block < prev {
                return Err(ReplayError::OutOfOrder {
                    seq,
                    block: e.block,
                    previous: prev,
                });
            }
        }
        let st = &mut self.state;
        match &e.kind {
            EventKind::Deposit(d) => {
                st.ledger = Mutez(add(seq, st.ledger.get(), d.credited.get(), "ledger")?);
                st.supply = TokenUnits(add(seq, st.supply.get(), d.minted.get(), "supply")?);
                let bal = st.balances.entry(d.account.clone()).or_default();
                *bal = TokenUnits(add(seq, bal.get(), d.minted.get(), "balance")?);
                st.deposited += d.credited.get() as u128;
            }
            EventKind::RedemptionRequested(r) => {
                st.ledger = Mutez(sub(seq, st.ledger.get(), r.frozen.get(), "ledger")?);
                st.supply = TokenUnits(sub(seq, st.supply.get(), r.burned.get(), "supply")?);
                let bal = st.balances.get(&r.requester).copied().unwrap_or_default();
                let left = sub(seq, bal.get(), r.burned.get(), "balance")?;
                if left == 0 {
                    st.balances.remove(&r.requester);
                } else {
                    st.balances.insert(r.requester.clone(), TokenUnits(left));
                }
                let bucket = st.frozen.entry(r.bucket_cycle).or_default();
                *bucket = Mutez(add(seq, bucket.get(), r.frozen.get(), "bucket")?);
            }
            EventKind::BucketMatured(m) => {
                let bucket = st.frozen.remove(&m.bucket_cycle).ok_or_else(|| ReplayError::Inconsistent {
                    seq,
                    reason: format!("no frozen bucket for cycle {}", m.bucket_cycle),
                })?;
                if bucket != m.remaining {
                    return Err(ReplayError::Inconsistent {
                        seq,
                        reason: format!("bucket {} holds {bucket}, event says {}", m.bucket_cycle, m.remaining),
                    });
                }
                let paid: u128 = m.payouts.iter().map(|p| p.payout.get() as u128).sum();
                let dust_to_ledger = if m.dust_to_ledger { m.dust.get() as u128 } else { 0 };
                if paid + dust_to_ledger != m.remaining.get() as u128 {
                    return Err(ReplayError::Inconsistent {
                        seq,
                        reason: "payouts and dust do not add up to the bucket".into(),
                    });
                }
                for p in &m.payouts {
                    let e = st.finalizable.entry(p.requester.clone()).or_default();
                    *e = Mutez(add(seq, e.get(), p.payout.get(), "finalizable")?);
                }
                if m.dust_to_ledger {
                    st.ledger = Mutez(add(seq, st.ledger.get(), m.dust.get(), "ledger")?);
                }
            }
            EventKind::RedemptionFinalized(f) => {
                let have = st.finalizable.get(&f.requester).copied().unwrap_or_default();
                let left = sub(seq, have.get(), f.paid.get(), "finalizable")?;
                if left == 0 {
                    st.finalizable.remove(&f.requester);
                } else {
                    st.finalizable.insert(f.requester.clone(), Mutez(left));
                }
                st.paid_out += f.paid.get() as u128;
            }
            EventKind::Reward { amount, .. } => {
                st.ledger = Mutez(add(seq, st.ledger.get(), amount.get(), "ledger")?);
                st.rewarded += amount.get() as u128;
            }
            EventKind::Slash(s) => {
                if s.ledger_before != st.ledger || s.ledger_after > s.ledger_before {
                    return Err(ReplayError::Inconsistent {
                        seq,
                        reason: format!(
                            "slash moves ledger {} -> {} but replay holds {}",
                            s.ledger_before, s.ledger_after, st.ledger
                        ),
                    });
                }
                st.slashed += (s.ledger_before.get() - s.ledger_after.get()) as u128;
                st.ledger = s.ledger_after;
                for b in &s.buckets {
                    let bucket = st.frozen.get_mut(&b.bucket_cycle).ok_or_else(|| ReplayError::Inconsistent {
                        seq,
                        reason: format!("slash names unknown bucket {}", b.bucket_cycle),
                    })?;
                    if *bucket != b.before || b.after > b.before {
                        return Err(ReplayError::Inconsistent {
                            seq,
                            reason: format!("bucket {} slash does not match replay", b.bucket_cycle),
                        });
                    }
                    st.slashed += (b.before.get() - b.after.get()) as u128;
                    *bucket = b.after;
                }
                if s.buckets.len() != st.frozen.len() {
                    return Err(ReplayError::Inconsistent {
                        seq,
                        reason: "slash skipped an active bucket".into(),
                    });
                }
            }
            EventKind::CycleEnd { checkpoint, .. } => st.checkpoint_matches(seq, checkpoint)?,
            EventKind::ScenarioEnd { checkpoint, .. } => {
                st.checkpoint_matches(seq, checkpoint)?;
                self.ended_at = Some(e.block);
            }
            EventKind::ValidatorRegistered { .. }
            | EventKind::ValidatorUpdated { .. }
            | EventKind::ValidatorUnregistered { .. }
            | EventKind::Allocation(_)
            | EventKind::Rejected { .. } => {}
        }
        self.next_seq += 1;
        self.last_block = Some(e.block);
        Ok(())
    }
}

/// Replays a complete log. A non-empty log must end with `scenario_end`.
pub fn replay_complete(events: &[Event]) -> Result<LogReplay, ReplayError> {
    let mut r = LogReplay::new();
    for e in events {
        r.apply(e)?;
    }
    if !events.is_empty() && r.ended_at.is_none() {
        return Err(ReplayError::Incomplete(format!(
            "no scenario_end after event {}",
            events.len() - 1
        )));
    }
    Ok(r)
}

/// State after every event at or before `block`.
pub fn state_at_block(events: &[Event], block: BlockLevel) -> Result<ReplayState, ReplayError> {
    ensure_covers(events, block)?;
    let mut r = LogReplay::new();
    for e in events.iter().take_while(|e| e.block <= block) {
        r.apply(e)?;
    }
    Ok(r.into_state())
}

/// The log is known to cover `block` when it has a `scenario_end` at or
/// after it, or any event past it.
pub fn ensure_covers(events: &[Event], block: BlockLevel) -> Result<(), ReplayError> {
    let covered = events.iter().rev().any(|e| {
        e.block > block || (matches!(e.kind, EventKind::ScenarioEnd { .. }) && e.block >= block)
    });
    if covered {
        Ok(())
    } else {
        Err(ReplayError::Incomplete(format!("log does not reach block {block}")))
    }
}

/// Checks a log on its own: integrity, checkpoints, conservation, the
/// zero-supply floor, supply accounting and every allocation plan.
pub fn audit_log(events: &[Event]) -> (InvariantReport, Option<ReplayState>) {
    let mut r = LogReplay::new();
    let mut integrity = None;
    let mut conservation = None;
    let mut floor = None;
    let mut supply = None;
    let mut decomposition = None;
    for e in events {
        if let Err(err) = r.apply(e) {
            match err {
                ReplayError::CheckpointMismatch { .. } | ReplayError::Inconsistent { .. } => {
                    conservation = Some(err.to_string())
                }
                _ => integrity = Some(err.to_string()),
            }
            break;
        }
        let st = r.state();
        if floor.is_none() && st.supply.is_zero() && !st.ledger.is_zero() {
            floor = Some(format!("event {}: S = 0 but L = {}", e.seq, st.ledger));
        }
        if supply.is_none() {
            let sum: u128 = st.balances.values().map(|b| b.get() as u128).sum();
            if sum != st.supply.get() as u128 {
                supply = Some(format!("event {}: S = {} but balances sum to {sum}", e.seq, st.supply));
            }
        }
        if let (None, EventKind::Allocation(plan)) = (&decomposition, &e.kind) {
            decomposition = validate_plan(plan)
                .err()
                .map(|v| format!("event {}: plan for cycle {}: {v}", e.seq, plan.effective_cycle));
        }
    }
    let failed = integrity.is_some() || conservation.is_some();
    if !failed && !events.is_empty() && r.ended_at().is_none() {
        integrity = Some(format!("no scenario_end after event {}", events.len() - 1));
    }
    if conservation.is_none() && r.state().conservation_gap() != 0 {
        conservation = Some(format!("flows differ from L + F + E by {}", r.state().conservation_gap()));
    }
    let check = |name, failure: Option<String>| InvariantCheck {
        name,
        passed: failure.is_none(),
        detail: failure.unwrap_or_else(|| "ok".into()),
    };
    let report = InvariantReport {
        checks: vec![
            check("log_integrity", integrity),
            check("conservation", conservation),
            check("zero_supply_floor", floor),
            check("supply_conservation", supply),
            check("ledger_decomposition", decomposition),
        ],
    };
    let state = report.all_passed().then(|| r.into_state());
    (report, state)
}
