//! Scenario files: `{"params": {...}, "blocks": n, "ops": [...]}`.

use serde::{Deserialize, Serialize};

use crate::fixedpoint::{Mutez, TokenUnits};
use crate::ledger::{AccountId, BlockLevel, TicketId};

use super::{ChainParams, ScenarioError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Timing {
    /// Applied in the block, after user operations.
    #[default]
    Block,
    /// Deferred to the end of the block's cycle.
    CycleEnd,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Action {
    Deposit {
        account: AccountId,
        amount: Mutez,
    },
    RequestUnstake {
        account: AccountId,
        units: TokenUnits,
    },
    FinalizeUnstake {
        ticket: TicketId,
        caller: AccountId,
    },
    RegisterValidator {
        validator: AccountId,
        fee_bp: u64,
        capacity: Mutez,
        self_bond: Mutez,
    },
    UpdateValidator {
        validator: AccountId,
        fee_bp: u64,
        capacity: Mutez,
    },
    UnregisterValidator {
        validator: AccountId,
    },
    Reward {
        amount: Mutez,
        #[serde(default)]
        timing: Timing,
    },
    Slash {
        validator: AccountId,
        p_num: u64,
        p_den: u64,
        #[serde(default)]
        timing: Timing,
    },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Deposit { .. } => "deposit",
            Action::RequestUnstake { .. } => "request_unstake",
            Action::FinalizeUnstake { .. } => "finalize_unstake",
            Action::RegisterValidator { .. } => "register_validator",
            Action::UpdateValidator { .. } => "update_validator",
            Action::UnregisterValidator { .. } => "unregister_validator",
            Action::Reward { .. } => "reward",
            Action::Slash { .. } => "slash",
        }
    }

    /// Reward and slash ops; everything else is a user operation.
    pub fn timing(&self) -> Option<Timing> {
        match self {
            Action::Reward { timing, .. } | Action::Slash { timing, .. } => Some(*timing),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioOp {
    pub at_block: BlockLevel,
    #[serde(flatten)]
    pub action: Action,
}

impl ScenarioOp {
    pub fn new(at_block: BlockLevel, action: Action) -> Self {
        ScenarioOp { at_block, action }
    }
}

/// An op tagged with its position in the scenario file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexedOp {
    pub index: usize,
    pub op: ScenarioOp,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub params: ChainParams,
    /// Number of blocks to run. Defaults to the end of the cycle holding the
    /// last op.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<u64>,
    #[serde(default)]
    pub ops: Vec<ScenarioOp>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.params.validate()?;
        let blocks = self.block_count();
        for (index, op) in self.ops.iter().enumerate() {
            if op.at_block >= blocks {
                return Err(ScenarioError::InvalidOp {
                    index,
                    reason: format!("at_block {} is past the last block {}", op.at_block, blocks.saturating_sub(1)),
                });
            }
            if let Action::Slash { p_num, p_den, .. } = op.action {
                if p_den == 0 || p_num > p_den {
                    return Err(ScenarioError::InvalidOp {
                        index,
                        reason: format!("slash fraction {p_num}/{p_den} is not in [0, 1]"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn block_count(&self) -> u64 {
        if let Some(b) = self.blocks {
            return b;
        }
        match self.ops.iter().map(|o| o.at_block).max() {
            None => 0,
            Some(last) => (self.params.cycle_of(last) + 1) * self.params.blocks_per_cycle,
        }
    }

    /// Ops ordered by `(at_block, input position)`.
    pub fn indexed_ops(&self) -> Vec<IndexedOp> {
        let mut ops: Vec<IndexedOp> = self
            .ops
            .iter()
            .cloned()
            .enumerate()
            .map(|(index, op)| IndexedOp { index, op })
            .collect();
        ops.sort_by_key(|o| (o.op.at_block, o.index));
        ops
    }
}
