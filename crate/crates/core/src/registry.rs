//! Validator registration, eligibility and the per-cycle stake distribution.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixedpoint::{apply_basis_points, Mutez, BASIS_POINTS, MUTEZ_PER_TEZ};
use crate::ledger::{AccountId, Cycle};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("validator {0} is already registered")]
    Duplicate(AccountId),
    #[error("fee of {0} bp is outside 0..=10000")]
    FeeOutOfRange(u64),
    #[error("unknown validator {0}")]
    UnknownValidator(AccountId),
}

/// Position in the registration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RegistrationStamp {
    pub cycle: Cycle,
    pub sequence: u64,
}

/// Reserved; carried through snapshots but not used by allocation.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerformanceCounters {
    pub blocks_baked: u64,
    pub attestations: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatorRecord {
    pub address: AccountId,
    pub fee_bp: u16,
    pub declared_capacity: Mutez,
    pub self_bond: Mutez,
    pub registered_at: RegistrationStamp,
    pub slash_history: Vec<Cycle>,
    pub active: bool,
    pub performance: PerformanceCounters,
}

impl ValidatorRecord {
    fn slashed_within(&self, at_cycle: Cycle, lookback: u64) -> bool {
        self.slash_history
            .iter()
            .any(|&s| s <= at_cycle && at_cycle - s <= lookback)
    }
}

/// Caps and eligibility thresholds for allocation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AllocationParams {
    /// Stake a validator may receive per unit of self-bond.
    pub overstake_multiple: u64,
    /// Per-validator share of `L`, in basis points.
    pub global_cap_bp: u64,
    pub min_self_bond: Mutez,
    /// Cycles a slashed validator stays ineligible.
    pub slash_lookback: u64,
}

impl Default for AllocationParams {
    fn default() -> Self {
        AllocationParams {
            overstake_multiple: 9,
            global_cap_bp: 1_000,
            min_self_bond: Mutez(6_000 * MUTEZ_PER_TEZ),
            slash_lookback: 10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registry {
    validators: BTreeMap<AccountId, ValidatorRecord>,
    next_sequence: u64,
}

fn check_fee(fee_bp: u64) -> Result<u16, RegistryError> {
    if fee_bp > BASIS_POINTS {
        return Err(RegistryError::FeeOutOfRange(fee_bp));
    }
    Ok(fee_bp as u16)
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, address: &AccountId) -> Option<&ValidatorRecord> {
        self.validators.get(address)
    }

    pub fn validators(&self) -> impl Iterator<Item = &ValidatorRecord> {
        self.validators.values()
    }

    pub fn len(&self) -> usize {
        self.validators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.validators.is_empty()
    }

    /// Registers a validator during `cycle`. It becomes allocatable at the
    /// next cycle boundary.
    ///
    /// A previously unregistered address may register again and gets a fresh
    /// sequence number; its slash history is kept.
    pub fn register(
        &mut self,
        address: &AccountId,
        fee_bp: u64,
        capacity: Mutez,
        self_bond: Mutez,
        cycle: Cycle,
    ) -> Result<&ValidatorRecord, RegistryError> {
        let fee_bp = check_fee(fee_bp)?;
        let slash_history = match self.validators.get(address) {
            Some(v) if v.active => return Err(RegistryError::Duplicate(address.clone())),
            Some(v) => v.slash_history.clone(),
            None => Vec::new(),
        };
        let record = ValidatorRecord {
            address: address.clone(),
            fee_bp,
            declared_capacity: capacity,
            self_bond,
            registered_at: RegistrationStamp {
                cycle,
                sequence: self.next_sequence,
            },
            slash_history,
            active: true,
            performance: PerformanceCounters::default(),
        };
        self.next_sequence += 1;
        self.validators.insert(address.clone(), record);
        Ok(&self.validators[address])
    }

    /// New parameters apply from the next allocation computation; plans
    /// already computed are not touched.
    pub fn update_parameters(
        &mut self,
        address: &AccountId,
        fee_bp: u64,
        capacity: Mutez,
    ) -> Result<&ValidatorRecord, RegistryError> {
        let fee_bp = check_fee(fee_bp)?;
        let record = self
            .validators
            .get_mut(address)
            .filter(|v| v.active)
            .ok_or_else(|| RegistryError::UnknownValidator(address.clone()))?;
        record.fee_bp = fee_bp;
        record.declared_capacity = capacity;
        Ok(record)
    }

    pub fn unregister(&mut self, address: &AccountId) -> Result<(), RegistryError> {
        let record = self
            .validators
            .get_mut(address)
            .filter(|v| v.active)
            .ok_or_else(|| RegistryError::UnknownValidator(address.clone()))?;
        record.active = false;
        Ok(())
    }

    pub fn record_slash(&mut self, address: &AccountId, cycle: Cycle) -> Result<(), RegistryError> {
        let record = self
            .validators
            .get_mut(address)
            .ok_or_else(|| RegistryError::UnknownValidator(address.clone()))?;
        record.slash_history.push(cycle);
        Ok(())
    }

    /// Validators allocatable in `at_cycle`, in registration order.
    pub fn eligible_set(&self, at_cycle: Cycle, params: &AllocationParams) -> Vec<&ValidatorRecord> {
        let mut set: Vec<&ValidatorRecord> = self
            .validators
            .values()
            .filter(|v| is_eligible(v, at_cycle, params))
            .collect();
        set.sort_by_key(|v| v.registered_at);
        set
    }

    pub fn is_eligible(&self, address: &AccountId, at_cycle: Cycle, params: &AllocationParams) -> bool {
        self.validators
            .get(address)
            .is_some_and(|v| is_eligible(v, at_cycle, params))
    }
}

fn is_eligible(v: &ValidatorRecord, at_cycle: Cycle, params: &AllocationParams) -> bool {
    v.active
        && v.registered_at.cycle < at_cycle
        && !v.slashed_within(at_cycle, params.slash_lookback)
        && v.self_bond >= params.min_self_bond
        && !v.declared_capacity.is_zero()
}

/// `min(declared capacity, overstake_multiple × self_bond, global share of L)`.
pub fn effective_cap(v: &ValidatorRecord, params: &AllocationParams, ledger: Mutez) -> Mutez {
    let bonded = Mutez(v.self_bond.get().saturating_mul(params.overstake_multiple));
    let global = apply_basis_points(ledger, params.global_cap_bp);
    v.declared_capacity.min(bonded).min(global)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub validator: AccountId,
    pub assigned: Mutez,
    pub fee_bp: u16,
    pub cap: Mutez,
    /// The validator was filled to its cap.
    pub capped: bool,
}

/// Stake distribution computed at the boundary before `for_cycle`, governing
/// rights in `effective_cycle`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub for_cycle: Cycle,
    pub effective_cycle: Cycle,
    pub ledger_at_computation: Mutez,
    /// In fill order.
    pub assignments: Vec<Assignment>,
    pub unassigned: Mutez,
}

impl AllocationPlan {
    pub fn assigned_to(&self, validator: &AccountId) -> Mutez {
        self.assignments
            .iter()
            .find(|a| &a.validator == validator)
            .map(|a| a.assigned)
            .unwrap_or_default()
    }

    pub fn total_assigned(&self) -> u128 {
        self.assignments.iter().map(|a| a.assigned.get() as u128).sum()
    }
}

/// Greedy fill: cheapest fee first, ties broken by registration sequence
/// and then address. Each validator takes `min(remaining, cap)`.
pub fn compute_allocation(
    eligible: &[&ValidatorRecord],
    ledger: Mutez,
    params: &AllocationParams,
    for_cycle: Cycle,
    consensus_rights_delay: u64,
) -> AllocationPlan {
    let mut order: Vec<&ValidatorRecord> = eligible.to_vec();
    order.sort_by(|a, b| {
        a.fee_bp
            .cmp(&b.fee_bp)
            .then(a.registered_at.sequence.cmp(&b.registered_at.sequence))
            .then_with(|| a.address.cmp(&b.address))
    });
    let mut remaining = ledger.get();
    let assignments = order
        .into_iter()
        .map(|v| {
            let cap = effective_cap(v, params, ledger);
            let assigned = remaining.min(cap.get());
            remaining -= assigned;
            Assignment {
                validator: v.address.clone(),
                assigned: Mutez(assigned),
                fee_bp: v.fee_bp,
                cap,
                capped: assigned == cap.get(),
            }
        })
        .collect();
    AllocationPlan {
        for_cycle,
        effective_cycle: for_cycle + consensus_rights_delay,
        ledger_at_computation: ledger,
        assignments,
        unassigned: Mutez(remaining),
    }
}

/// Why a plan fails the allocation constraints.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanViolation {
    #[error("{validator} assigned {assigned} above cap {cap}")]
    OverCap {
        validator: AccountId,
        assigned: Mutez,
        cap: Mutez,
    },
    #[error("assigned {assigned} + unassigned {unassigned} != ledger {ledger}")]
    Inconsistent {
        assigned: u128,
        unassigned: Mutez,
        ledger: Mutez,
    },
    #[error("{0} appears more than once")]
    DuplicateValidator(AccountId),
}

/// Capacity and consistency check used by the invariant checker.
pub fn validate_plan(plan: &AllocationPlan) -> Result<(), PlanViolation> {
    let mut seen = std::collections::BTreeSet::new();
    for a in &plan.assignments {
        if !seen.insert(&a.validator) {
            return Err(PlanViolation::DuplicateValidator(a.validator.clone()));
        }
        if a.assigned > a.cap {
            return Err(PlanViolation::OverCap {
                validator: a.validator.clone(),
                assigned: a.assigned,
                cap: a.cap,
            });
        }
    }
    let assigned = plan.total_assigned();
    if assigned + plan.unassigned.get() as u128 != plan.ledger_at_computation.get() as u128 {
        return Err(PlanViolation::Inconsistent {
            assigned,
            unassigned: plan.unassigned,
            ledger: plan.ledger_at_computation,
        });
    }
    Ok(())
}
