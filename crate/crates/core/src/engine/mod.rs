//! Deterministic block/cycle scheduler.
//!
//! Within a block, user operations apply first in input order, then
//! block-timed rewards and slashes. At the last block of cycle `k` the
//! engine applies cycle-end rewards and slashes, matures buckets due at
//! `k + 1`, computes the allocation plan effective at `k + 1 + delay`, and
//! refreshes the eligible set, in that order.

mod invariants;
mod params;
mod scenario;

use std::collections::BTreeMap;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::events::{Checkpoint, Event, EventKind, RewardSource};
use crate::fixedpoint::{Fraction, Mutez, TokenUnits};
use crate::ledger::{AccountId, BlockLevel, Cycle, LedgerError, LedgerState};
use crate::registry::{compute_allocation, AllocationPlan, Registry, RegistryError};

pub use invariants::{InvariantCheck, InvariantReport};
pub use params::ChainParams;
pub use scenario::{Action, IndexedOp, Scenario, ScenarioOp, Timing};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("scenario parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("op #{index}: {reason}")]
    InvalidOp { index: usize, reason: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OpError {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("strict mode: op #{index} ({op}) at block {block} rejected: {reason}")]
    Rejected {
        index: usize,
        op: &'static str,
        block: BlockLevel,
        reason: OpError,
    },
    #[error("scenario already finished")]
    Finished,
}

/// Records every change of `S` together with the transition that caused it.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SupplyAudit {
    pub observed: u64,
    pub violations: Vec<String>,
}

impl SupplyAudit {
    fn observe(&mut self, transition: &str, before: TokenUnits, after: TokenUnits) {
        self.observed += 1;
        let allowed = match transition {
            "deposit" => after >= before,
            "request_unstake" => after <= before,
            _ => after == before,
        };
        if !allowed {
            self.violations
                .push(format!("{transition} changed supply from {before} to {after}"));
        }
    }
}

pub struct Engine {
    params: ChainParams,
    strict: bool,
    ledger: LedgerState,
    registry: Registry,
    /// Keyed by effective cycle.
    plans: BTreeMap<Cycle, AllocationPlan>,
    eligible: Vec<AccountId>,
    deferred: Vec<IndexedOp>,
    log: Vec<Event>,
    audit: SupplyAudit,
    next_block: BlockLevel,
    finished: bool,
}

#[derive(Serialize)]
struct DigestView<'a> {
    params: &'a ChainParams,
    ledger: &'a LedgerState,
    registry: &'a Registry,
    plans: &'a BTreeMap<Cycle, AllocationPlan>,
    eligible: &'a [AccountId],
}

impl Engine {
    pub fn new(params: ChainParams, strict: bool) -> Result<Self, ScenarioError> {
        params.validate()?;
        Ok(Engine {
            ledger: LedgerState::new(params.unbonding_period),
            params,
            strict,
            registry: Registry::new(),
            plans: BTreeMap::new(),
            eligible: Vec::new(),
            deferred: Vec::new(),
            log: Vec::new(),
            audit: SupplyAudit::default(),
            next_block: 0,
            finished: false,
        })
    }

    pub fn params(&self) -> &ChainParams {
        &self.params
    }

    pub fn ledger(&self) -> &LedgerState {
        &self.ledger
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn plans(&self) -> &BTreeMap<Cycle, AllocationPlan> {
        &self.plans
    }

    pub fn plan_for(&self, effective_cycle: Cycle) -> Option<&AllocationPlan> {
        self.plans.get(&effective_cycle)
    }

    /// Validators in the eligible set as of the last boundary.
    pub fn eligible(&self) -> &[AccountId] {
        &self.eligible
    }

    pub fn log(&self) -> &[Event] {
        &self.log
    }

    pub fn supply_audit(&self) -> &SupplyAudit {
        &self.audit
    }

    /// The next block to be executed.
    pub fn next_block(&self) -> BlockLevel {
        self.next_block
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// SHA-256 over the canonical serialization of the full state.
    pub fn state_digest(&self) -> String {
        let view = DigestView {
            params: &self.params,
            ledger: &self.ledger,
            registry: &self.registry,
            plans: &self.plans,
            eligible: &self.eligible,
        };
        let bytes = serde_json::to_vec(&view).expect("state serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn log_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for e in &self.log {
            hasher.update(e.to_json_line().as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            ledger: self.ledger.staking_ledger(),
            supply: self.ledger.token_supply(),
            frozen_total: self.ledger.frozen_total(),
            finalizable_total: self.ledger.finalizable_total(),
        }
    }

    fn emit(&mut self, kind: EventKind) {
        let event = Event {
            seq: self.log.len() as u64,
            block: self.ledger.block_level(),
            cycle: self.ledger.cycle(),
            kind,
        };
        self.log.push(event);
    }

    /// Executes the next block with `ops` (all belonging to that block) and
    /// returns the events it produced.
    pub fn step_block(&mut self, ops: &[IndexedOp]) -> Result<&[Event], EngineError> {
        if self.finished {
            return Err(EngineError::Finished);
        }
        let block = self.next_block;
        let cycle = self.params.cycle_of(block);
        self.ledger.set_clock(block, cycle);
        let first_event = self.log.len();
        debug_assert!(ops.iter().all(|o| o.op.at_block == block));

        for op in ops.iter().filter(|o| o.op.action.timing().is_none()) {
            self.apply_op(op)?;
        }
        for op in ops {
            match op.op.action.timing() {
                Some(Timing::Block) => self.apply_op(op)?,
                Some(Timing::CycleEnd) => self.deferred.push(op.clone()),
                None => {}
            }
        }
        self.model_reward(cycle);

        if self.params.is_last_block_of_cycle(block) {
            self.end_cycle(cycle)?;
        }
        self.next_block = block + 1;
        Ok(&self.log[first_event..])
    }

    fn end_cycle(&mut self, cycle: Cycle) -> Result<(), EngineError> {
        for op in std::mem::take(&mut self.deferred) {
            self.apply_op(&op)?;
        }

        let boundary = cycle + 1;
        let supply = self.ledger.token_supply();
        for record in self.ledger.mature_buckets(boundary) {
            self.emit(EventKind::BucketMatured(record));
        }
        self.audit.observe("bucket_matured", supply, self.ledger.token_supply());

        let eligible = self.registry.eligible_set(boundary, &self.params.allocation);
        let plan = compute_allocation(
            &eligible,
            self.ledger.staking_ledger(),
            &self.params.allocation,
            boundary,
            self.params.consensus_rights_delay,
        );
        self.eligible = eligible.iter().map(|v| v.address.clone()).collect();
        self.plans.insert(plan.effective_cycle, plan.clone());
        self.emit(EventKind::Allocation(plan));

        let checkpoint = self.checkpoint();
        self.emit(EventKind::CycleEnd {
            closed: cycle,
            checkpoint,
        });
        Ok(())
    }

    fn model_reward(&mut self, cycle: Cycle) {
        if self.params.reward_per_block.is_zero() || self.ledger.token_supply().is_zero() {
            return;
        }
        let Some(plan) = self.plans.get(&cycle) else {
            return;
        };
        if plan.ledger_at_computation.is_zero() {
            return;
        }
        let amount = self.params.reward_per_block.get() as u128 * plan.total_assigned()
            / plan.ledger_at_computation.get() as u128;
        let amount = Mutez(amount as u64);
        if amount.is_zero() {
            return;
        }
        let supply = self.ledger.token_supply();
        if self.ledger.accrue_rewards(amount).is_ok() {
            self.audit.observe("reward", supply, self.ledger.token_supply());
            self.emit(EventKind::Reward {
                amount,
                source: RewardSource::Model,
            });
        }
    }

    fn apply_op(&mut self, op: &IndexedOp) -> Result<(), EngineError> {
        let name = op.op.action.name();
        let supply = self.ledger.token_supply();
        let result = self.transition(&op.op.action);
        self.audit.observe(name, supply, self.ledger.token_supply());
        match result {
            Ok(events) => {
                for e in events {
                    self.emit(e);
                }
                Ok(())
            }
            Err(reason) => {
                if self.strict {
                    return Err(EngineError::Rejected {
                        index: op.index,
                        op: name,
                        block: self.ledger.block_level(),
                        reason,
                    });
                }
                self.emit(EventKind::Rejected {
                    op_index: op.index,
                    op: name.to_owned(),
                    reason: reason.to_string(),
                });
                Ok(())
            }
        }
    }

    fn transition(&mut self, action: &Action) -> Result<Vec<EventKind>, OpError> {
        let cycle = self.ledger.cycle();
        let kind = match action {
            Action::Deposit { account, amount } => {
                EventKind::Deposit(self.ledger.deposit(account, *amount)?)
            }
            Action::RequestUnstake { account, units } => {
                let (_, record) = self.ledger.request_unstake(account, *units)?;
                EventKind::RedemptionRequested(record)
            }
            Action::FinalizeUnstake { ticket, caller } => {
                EventKind::RedemptionFinalized(self.ledger.finalize_unstake(*ticket, caller)?)
            }
            Action::RegisterValidator {
                validator,
                fee_bp,
                capacity,
                self_bond,
            } => {
                let v = self
                    .registry
                    .register(validator, *fee_bp, *capacity, *self_bond, cycle)?;
                EventKind::ValidatorRegistered {
                    validator: v.address.clone(),
                    fee_bp: v.fee_bp,
                    capacity: v.declared_capacity,
                    self_bond: v.self_bond,
                    sequence: v.registered_at.sequence,
                }
            }
            Action::UpdateValidator {
                validator,
                fee_bp,
                capacity,
            } => {
                let v = self.registry.update_parameters(validator, *fee_bp, *capacity)?;
                EventKind::ValidatorUpdated {
                    validator: v.address.clone(),
                    fee_bp: v.fee_bp,
                    capacity: v.declared_capacity,
                }
            }
            Action::UnregisterValidator { validator } => {
                self.registry.unregister(validator)?;
                EventKind::ValidatorUnregistered {
                    validator: validator.clone(),
                }
            }
            Action::Reward { amount, .. } => {
                if amount.is_zero() {
                    return Ok(Vec::new());
                }
                self.ledger.accrue_rewards(*amount)?;
                EventKind::Reward {
                    amount: *amount,
                    source: RewardSource::Scenario,
                }
            }
            Action::Slash {
                validator,
                p_num,
                p_den,
                ..
            } => {
                if self.registry.get(validator).is_none() {
                    return Err(RegistryError::UnknownValidator(validator.clone()).into());
                }
                let fraction = Fraction::new(*p_num, *p_den).map_err(LedgerError::from)?;
                let mut record = self.ledger.apply_slash(fraction)?;
                self.registry
                    .record_slash(validator, cycle)
                    .expect("validator checked above");
                self.eligible.retain(|v| v != validator);
                record.validator = Some(validator.clone());
                EventKind::Slash(record)
            }
        };
        Ok(vec![kind])
    }

    /// Emits the terminating `scenario_end` event. A run with no blocks has
    /// an empty log and emits nothing.
    pub fn finish(&mut self) {
        if self.finished {
            return;
        }
        self.finished = true;
        if self.next_block == 0 {
            return;
        }
        let checkpoint = self.checkpoint();
        let state_digest = self.state_digest();
        self.emit(EventKind::ScenarioEnd {
            checkpoint,
            state_digest,
        });
    }

    pub fn check_invariants(&self) -> InvariantReport {
        invariants::check(self)
    }

    #[cfg(test)]
    pub(crate) fn ledger_mut(&mut self) -> &mut LedgerState {
        &mut self.ledger
    }
}

/// Drives a scenario block by block.
pub struct ScenarioRun {
    engine: Engine,
    ops: Vec<IndexedOp>,
    cursor: usize,
    blocks: u64,
}

impl ScenarioRun {
    pub fn new(scenario: &Scenario, strict: bool) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        Ok(ScenarioRun {
            engine: Engine::new(scenario.params.clone(), strict)?,
            ops: scenario.indexed_ops(),
            cursor: 0,
            blocks: scenario.block_count(),
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn into_engine(self) -> Engine {
        self.engine
    }

    pub fn total_blocks(&self) -> u64 {
        self.blocks
    }

    /// Runs one block; returns `false` once the scenario is finished.
    pub fn step(&mut self) -> Result<bool, EngineError> {
        if self.engine.is_finished() {
            return Ok(false);
        }
        let block = self.engine.next_block();
        if block >= self.blocks {
            self.engine.finish();
            return Ok(false);
        }
        let start = self.cursor;
        while self.cursor < self.ops.len() && self.ops[self.cursor].op.at_block == block {
            self.cursor += 1;
        }
        let ops = &self.ops[start..self.cursor];
        self.engine.step_block(ops)?;
        Ok(true)
    }

    pub fn run_to_end(mut self) -> Result<Engine, EngineError> {
        while self.step()? {}
        Ok(self.engine)
    }
}

/// Runs a scenario to completion and returns the final engine (state + log).
pub fn run_scenario(scenario: &Scenario, strict: bool) -> Result<Engine, EngineError> {
    ScenarioRun::new(scenario, strict)?.run_to_end()
}
