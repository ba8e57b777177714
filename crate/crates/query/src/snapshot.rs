//! Immutable views of the simulator, captured between blocks.

use std::collections::BTreeSet;
use std::sync::{Arc, RwLock};

use serde::Serialize;
use stez_core::engine::ChainParams;
use stez_core::fixedpoint::u128_string;
use stez_core::ledger::{BlockLevel, Cycle, RedemptionTicket};
use stez_core::nav::{rate_of, RationalView};
use stez_core::registry::{effective_cap, RegistrationStamp};
use stez_core::{AccountId, AllocationPlan, Engine, LedgerState, Mutez, Registry, TokenUnits};

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub blocks_processed: u64,
    pub params: ChainParams,
    pub ledger: LedgerState,
    pub registry: Registry,
    pub plans: Vec<AllocationPlan>,
    pub eligible: BTreeSet<AccountId>,
    pub log_len: usize,
    pub state_digest: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RateView {
    #[serde(flatten)]
    pub value: RationalView,
    pub is_floor: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StateView {
    pub block: BlockLevel,
    pub cycle: Cycle,
    pub blocks_processed: u64,
    pub ledger: Mutez,
    pub supply: TokenUnits,
    pub rate: RateView,
    #[serde(with = "u128_string")]
    pub frozen_total: u128,
    #[serde(with = "u128_string")]
    pub finalizable_total: u128,
    pub log_len: usize,
    pub state_digest: String,
    pub params: ChainParams,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ValidatorView {
    pub address: AccountId,
    pub fee_bp: u16,
    pub declared_capacity: Mutez,
    pub self_bond: Mutez,
    pub effective_cap: Mutez,
    pub registered_at: RegistrationStamp,
    pub slash_history: Vec<Cycle>,
    pub active: bool,
    pub eligible: bool,
    pub current_assignment: Mutez,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BalanceView {
    pub address: AccountId,
    pub token_balance: TokenUnits,
    /// Floor value of the balance at the current rate.
    pub value: Mutez,
    pub finalizable: Mutez,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TicketsView {
    pub address: AccountId,
    pub tickets: Vec<RedemptionTicket>,
}

impl Snapshot {
    pub fn capture(engine: &Engine) -> Self {
        Snapshot {
            blocks_processed: engine.next_block(),
            params: engine.params().clone(),
            ledger: engine.ledger().clone(),
            registry: engine.registry().clone(),
            plans: engine.plans().values().cloned().collect(),
            eligible: engine.eligible().iter().cloned().collect(),
            log_len: engine.log().len(),
            state_digest: engine.state_digest(),
        }
    }

    pub fn state(&self) -> StateView {
        state_view(self)
    }

    pub fn validators(&self) -> Vec<ValidatorView> {
        let cycle = self.ledger.cycle();
        let current = self.allocation(cycle);
        self.registry
            .validators()
            .map(|v| ValidatorView {
                address: v.address.clone(),
                fee_bp: v.fee_bp,
                declared_capacity: v.declared_capacity,
                self_bond: v.self_bond,
                effective_cap: effective_cap(v, &self.params.allocation, self.ledger.staking_ledger()),
                registered_at: v.registered_at,
                slash_history: v.slash_history.clone(),
                active: v.active,
                eligible: self.eligible.contains(&v.address),
                current_assignment: current.map(|p| p.assigned_to(&v.address)).unwrap_or_default(),
            })
            .collect()
    }

    /// Plan in force during `effective_cycle`.
    pub fn allocation(&self, effective_cycle: Cycle) -> Option<&AllocationPlan> {
        self.plans.iter().find(|p| p.effective_cycle == effective_cycle)
    }

    pub fn balance(&self, address: &AccountId) -> BalanceView {
        let units = self.ledger.balance_of(address);
        BalanceView {
            address: address.clone(),
            token_balance: units,
            value: self.ledger.value_of(units),
            finalizable: self.ledger.finalizable_of(address),
        }
    }

    pub fn tickets(&self, address: &AccountId) -> TicketsView {
        TicketsView {
            address: address.clone(),
            tickets: self.ledger.tickets_of(address).cloned().collect(),
        }
    }
}

fn state_view(s: &Snapshot) -> StateView {
    let l = s.ledger.staking_ledger();
    let supply = s.ledger.token_supply();
    StateView {
        block: s.ledger.block_level(),
        cycle: s.ledger.cycle(),
        blocks_processed: s.blocks_processed,
        ledger: l,
        supply,
        rate: RateView {
            value: RationalView::from(&rate_of(l, supply)),
            is_floor: supply.is_zero(),
        },
        frozen_total: s.ledger.frozen_total(),
        finalizable_total: s.ledger.finalizable_total(),
        log_len: s.log_len,
        state_digest: s.state_digest.clone(),
        params: s.params.clone(),
    }
}

/// The single swap point between the simulation writer and readers.
#[derive(Debug)]
pub struct SnapshotCell {
    current: RwLock<Arc<Snapshot>>,
}

impl SnapshotCell {
    pub fn new(snapshot: Snapshot) -> Self {
        SnapshotCell {
            current: RwLock::new(Arc::new(snapshot)),
        }
    }

    pub fn load(&self) -> Arc<Snapshot> {
        Arc::clone(&self.current.read().unwrap_or_else(|e| e.into_inner()))
    }

    pub fn publish(&self, snapshot: Snapshot) {
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(snapshot);
    }
}
