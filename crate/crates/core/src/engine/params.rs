use serde::{Deserialize, Serialize};

use crate::fixedpoint::{Mutez, BASIS_POINTS};
use crate::ledger::{BlockLevel, Cycle};
use crate::registry::AllocationParams;

use super::ScenarioError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainParams {
    pub blocks_per_cycle: u64,
    pub unbonding_period: u64,
    pub consensus_rights_delay: u64,
    pub allocation: AllocationParams,
    /// Built-in reward model: mutez credited per block, scaled by the
    /// assigned fraction of the plan in effect. Zero disables it.
    pub reward_per_block: Mutez,
}

impl Default for ChainParams {
    fn default() -> Self {
        ChainParams {
            blocks_per_cycle: 64,
            unbonding_period: 4,
            consensus_rights_delay: 2,
            allocation: AllocationParams::default(),
            reward_per_block: Mutez::ZERO,
        }
    }
}

impl ChainParams {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let positive = [
            ("blocks_per_cycle", self.blocks_per_cycle),
            ("unbonding_period", self.unbonding_period),
            ("consensus_rights_delay", self.consensus_rights_delay),
            ("allocation.overstake_multiple", self.allocation.overstake_multiple),
            ("allocation.global_cap_bp", self.allocation.global_cap_bp),
            ("allocation.min_self_bond", self.allocation.min_self_bond.get()),
            ("allocation.slash_lookback", self.allocation.slash_lookback),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(ScenarioError::InvalidParams(format!("{name} must be positive")));
            }
        }
        if self.allocation.global_cap_bp > BASIS_POINTS {
            return Err(ScenarioError::InvalidParams(
                "allocation.global_cap_bp must not exceed 10000".into(),
            ));
        }
        Ok(())
    }

    pub fn cycle_of(&self, block: BlockLevel) -> Cycle {
        block / self.blocks_per_cycle
    }

    pub fn is_last_block_of_cycle(&self, block: BlockLevel) -> bool {
        (block + 1).is_multiple_of(self.blocks_per_cycle)
    }
}
