//! Liquid-staking ledger simulator: exact integer ledger, validator
//! allocation, a block-stepped engine, log replay and NAV reporting.

pub mod engine;
pub mod events;
pub mod fixedpoint;
pub mod ledger;
pub mod nav;
pub mod registry;
pub mod replay;

pub use engine::{run_scenario, ChainParams, Engine, EngineError, Scenario, ScenarioError};
pub use events::{Event, EventKind};
pub use fixedpoint::{ArithmeticError, ExchangeRate, Fraction, Mutez, TokenUnits};
pub use ledger::{AccountId, LedgerError, LedgerState};
pub use registry::{AllocationParams, AllocationPlan, Registry, RegistryError};
