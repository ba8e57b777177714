//! The protocol ledger: staking ledger `L`, token supply `S`, frozen buckets
//! `F`, finalizable balances `E`, and the balance-changing transitions.
//!
//! Every transition validates first and commits second, so an `Err` leaves
//! the state untouched.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixedpoint::{
    self, burn_value, mint_amount, pro_rata, scale_by_remainder, ArithmeticError, ExchangeRate,
    Fraction, Mutez, TokenUnits,
};

pub type BlockLevel = u64;
pub type Cycle = u64;
pub type TicketId = u64;

/// Account identifier (an address string).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AccountId(String);

impl AccountId {
    pub fn new(id: impl Into<String>) -> Self {
        AccountId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AccountId {
    fn from(s: &str) -> Self {
        AccountId(s.to_owned())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("deposit of zero mutez")]
    EmptyDeposit,
    #[error("redemption of zero units")]
    ZeroBurn,
    #[error("account {account} holds {available} units, cannot redeem {requested}")]
    InsufficientBalance {
        account: AccountId,
        requested: TokenUnits,
        available: TokenUnits,
    },
    #[error("token supply is zero")]
    EmptySystem,
    #[error("rewards cannot accrue while the token supply is zero")]
    RewardOnEmptySystem,
    #[error("unknown ticket {0}")]
    UnknownTicket(TicketId),
    #[error("ticket {ticket} is still frozen until cycle {maturity_cycle}")]
    TooEarly {
        ticket: TicketId,
        maturity_cycle: Cycle,
    },
    #[error("ticket {0} has already been paid")]
    AlreadyPaid(TicketId),
    #[error(transparent)]
    Arithmetic(#[from] ArithmeticError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TicketStatus {
    Pending,
    Finalizable,
    Paid,
}

/// A non-transferable claim on a frozen bucket.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedemptionTicket {
    pub ticket_id: TicketId,
    pub requester: AccountId,
    pub burned_units: TokenUnits,
    /// Value frozen at request time.
    pub frozen_amount: Mutez,
    pub request_cycle: Cycle,
    pub maturity_cycle: Cycle,
    pub status: TicketStatus,
    /// Set when the bucket matures.
    pub payout: Option<Mutez>,
}

/// All redemptions requested during one cycle.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrozenBucket {
    pub request_cycle: Cycle,
    pub maturity_cycle: Cycle,
    pub original_total: Mutez,
    pub remaining_total: Mutez,
    pub tickets: Vec<TicketId>,
}

/// Cumulative flows, used for the conservation identity
/// `deposited + rewarded - slashed - paid_out = L + ΣF + ΣE`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowTotals {
    #[serde(with = "fixedpoint::u128_string")]
    pub deposited: u128,
    #[serde(with = "fixedpoint::u128_string")]
    pub rewarded: u128,
    #[serde(with = "fixedpoint::u128_string")]
    pub slashed: u128,
    #[serde(with = "fixedpoint::u128_string")]
    pub paid_out: u128,
    #[serde(with = "fixedpoint::u128_string")]
    pub minted: u128,
    #[serde(with = "fixedpoint::u128_string")]
    pub burned: u128,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepositRecord {
    pub account: AccountId,
    pub credited: Mutez,
    pub minted: TokenUnits,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedemptionRecord {
    pub ticket: TicketId,
    pub requester: AccountId,
    pub burned: TokenUnits,
    pub frozen: Mutez,
    pub bucket_cycle: Cycle,
    pub maturity_cycle: Cycle,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TicketPayout {
    pub ticket: TicketId,
    pub requester: AccountId,
    pub payout: Mutez,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaturationRecord {
    pub bucket_cycle: Cycle,
    pub maturity_cycle: Cycle,
    pub original: Mutez,
    pub remaining: Mutez,
    pub payouts: Vec<TicketPayout>,
    pub dust: Mutez,
    /// `false` only when the supply is zero: the dust then goes to the last
    /// ticket of the bucket so that `S = 0 ⇒ L = 0` keeps holding.
    pub dust_to_ledger: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalizationRecord {
    pub ticket: TicketId,
    pub requester: AccountId,
    pub caller: AccountId,
    pub paid: Mutez,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketSlash {
    pub bucket_cycle: Cycle,
    pub before: Mutez,
    pub after: Mutez,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlashRecord {
    pub validator: Option<AccountId>,
    pub fraction: Fraction,
    pub ledger_before: Mutez,
    pub ledger_after: Mutez,
    pub buckets: Vec<BucketSlash>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerState {
    staking_ledger: Mutez,
    token_supply: TokenUnits,
    frozen: BTreeMap<Cycle, FrozenBucket>,
    finalizable: BTreeMap<AccountId, Mutez>,
    balances: BTreeMap<AccountId, TokenUnits>,
    tickets: BTreeMap<TicketId, RedemptionTicket>,
    block_level: BlockLevel,
    cycle: Cycle,
    unbonding_period: u64,
    next_ticket_id: TicketId,
    totals: FlowTotals,
}

impl LedgerState {
    pub fn new(unbonding_period: u64) -> Self {
        LedgerState {
            staking_ledger: Mutez::ZERO,
            token_supply: TokenUnits::ZERO,
            frozen: BTreeMap::new(),
            finalizable: BTreeMap::new(),
            balances: BTreeMap::new(),
            tickets: BTreeMap::new(),
            block_level: 0,
            cycle: 0,
            unbonding_period,
            next_ticket_id: 0,
            totals: FlowTotals::default(),
        }
    }

    pub fn staking_ledger(&self) -> Mutez {
        self.staking_ledger
    }

    pub fn token_supply(&self) -> TokenUnits {
        self.token_supply
    }

    pub fn exchange_rate(&self) -> ExchangeRate {
        ExchangeRate::new(self.staking_ledger, self.token_supply)
    }

    pub fn frozen(&self) -> &BTreeMap<Cycle, FrozenBucket> {
        &self.frozen
    }

    pub fn finalizable(&self) -> &BTreeMap<AccountId, Mutez> {
        &self.finalizable
    }

    pub fn finalizable_of(&self, account: &AccountId) -> Mutez {
        self.finalizable.get(account).copied().unwrap_or_default()
    }

    pub fn balances(&self) -> &BTreeMap<AccountId, TokenUnits> {
        &self.balances
    }

    pub fn balance_of(&self, account: &AccountId) -> TokenUnits {
        self.balances.get(account).copied().unwrap_or_default()
    }

    pub fn tickets(&self) -> &BTreeMap<TicketId, RedemptionTicket> {
        &self.tickets
    }

    pub fn ticket(&self, id: TicketId) -> Option<&RedemptionTicket> {
        self.tickets.get(&id)
    }

    pub fn tickets_of<'a>(
        &'a self,
        account: &'a AccountId,
    ) -> impl Iterator<Item = &'a RedemptionTicket> + 'a {
        self.tickets.values().filter(move |t| &t.requester == account)
    }

    pub fn block_level(&self) -> BlockLevel {
        self.block_level
    }

    pub fn cycle(&self) -> Cycle {
        self.cycle
    }

    pub fn unbonding_period(&self) -> u64 {
        self.unbonding_period
    }

    pub fn totals(&self) -> &FlowTotals {
        &self.totals
    }

    pub fn frozen_total(&self) -> u128 {
        self.frozen.values().map(|b| b.remaining_total.get() as u128).sum()
    }

    pub fn finalizable_total(&self) -> u128 {
        self.finalizable.values().map(|m| m.get() as u128).sum()
    }

    /// `(inflows - outflows) - (L + ΣF + ΣE)`; zero on a consistent ledger.
    pub fn conservation_gap(&self) -> i128 {
        let t = &self.totals;
        let flows = (t.deposited + t.rewarded) as i128 - (t.slashed + t.paid_out) as i128;
        let held =
            self.staking_ledger.get() as i128 + self.frozen_total() as i128 + self.finalizable_total() as i128;
        flows - held
    }

    /// Redeemable value of `units` at the current rate, zero on an empty system.
    pub fn value_of(&self, units: TokenUnits) -> Mutez {
        burn_value(units, self.staking_ledger, self.token_supply).unwrap_or_default()
    }

    pub fn set_clock(&mut self, block_level: BlockLevel, cycle: Cycle) {
        self.block_level = block_level;
        self.cycle = cycle;
    }

    /// Mints against a deposit of `delta` mutez.
    pub fn deposit(&mut self, account: &AccountId, delta: Mutez) -> Result<DepositRecord, LedgerError> {
        if delta.is_zero() {
            return Err(LedgerError::EmptyDeposit);
        }
        let minted = mint_amount(delta, self.staking_ledger, self.token_supply)?;
        let ledger = self.staking_ledger.checked_add(delta)?;
        let supply = self.token_supply.checked_add(TokenUnits(minted.get()))?;
        let balance = self.balance_of(account).checked_add(minted)?;

        self.staking_ledger = ledger;
        self.token_supply = supply;
        self.balances.insert(account.clone(), balance);
        self.totals.deposited += delta.get() as u128;
        self.totals.minted += minted.get() as u128;
        Ok(DepositRecord {
            account: account.clone(),
            credited: delta,
            minted,
        })
    }

    /// Burns `units` immediately and moves their value into the current
    /// cycle's frozen bucket.
    pub fn request_unstake(
        &mut self,
        account: &AccountId,
        units: TokenUnits,
    ) -> Result<(RedemptionTicket, RedemptionRecord), LedgerError> {
        if units.is_zero() {
            return Err(LedgerError::ZeroBurn);
        }
        if self.token_supply.is_zero() {
            return Err(LedgerError::EmptySystem);
        }
        let available = self.balance_of(account);
        if available < units {
            return Err(LedgerError::InsufficientBalance {
                account: account.clone(),
                requested: units,
                available,
            });
        }
        let value = burn_value(units, self.staking_ledger, self.token_supply)?;
        let ledger = self.staking_ledger.checked_sub(value)?;
        let supply = self.token_supply.checked_sub(units)?;
        let bucket_cycle = self.cycle;
        let maturity_cycle = bucket_cycle
            .checked_add(self.unbonding_period)
            .ok_or(ArithmeticError::Overflow)?;
        let (original, remaining) = match self.frozen.get(&bucket_cycle) {
            Some(b) => (
                b.original_total.checked_add(value)?,
                b.remaining_total.checked_add(value)?,
            ),
            None => (value, value),
        };

        let ticket = RedemptionTicket {
            ticket_id: self.next_ticket_id,
            requester: account.clone(),
            burned_units: units,
            frozen_amount: value,
            request_cycle: bucket_cycle,
            maturity_cycle,
            status: TicketStatus::Pending,
            payout: None,
        };
        self.next_ticket_id += 1;
        self.staking_ledger = ledger;
        self.token_supply = supply;
        let left = available.get() - units.get();
        if left == 0 {
            self.balances.remove(account);
        } else {
            self.balances.insert(account.clone(), TokenUnits(left));
        }
        let bucket = self.frozen.entry(bucket_cycle).or_insert_with(|| FrozenBucket {
            request_cycle: bucket_cycle,
            maturity_cycle,
            original_total: Mutez::ZERO,
            remaining_total: Mutez::ZERO,
            tickets: Vec::new(),
        });
        bucket.original_total = original;
        bucket.remaining_total = remaining;
        bucket.tickets.push(ticket.ticket_id);
        self.tickets.insert(ticket.ticket_id, ticket.clone());
        self.totals.burned += units.get() as u128;

        let record = RedemptionRecord {
            ticket: ticket.ticket_id,
            requester: account.clone(),
            burned: units,
            frozen: value,
            bucket_cycle,
            maturity_cycle,
        };
        Ok((ticket, record))
    }

    /// Closes every bucket whose maturity cycle is `boundary` (or earlier).
    ///
    /// Each ticket is paid `floor(frozen * remaining / original)`; the floor
    /// dust goes back to `L`. Buckets are removed once matured, so calling this
    /// twice for the same boundary is a no-op.
    pub fn mature_buckets(&mut self, boundary: Cycle) -> Vec<MaturationRecord> {
        let due: Vec<Cycle> = self
            .frozen
            .values()
            .filter(|b| b.maturity_cycle <= boundary)
            .map(|b| b.request_cycle)
            .collect();
        let mut records = Vec::with_capacity(due.len());
        for cycle in due {
            let bucket = self.frozen.remove(&cycle).expect("bucket listed above");
            let mut payouts = Vec::with_capacity(bucket.tickets.len());
            let mut paid: u64 = 0;
            for id in &bucket.tickets {
                let ticket = &self.tickets[id];
                let payout = pro_rata(ticket.frozen_amount, bucket.remaining_total, bucket.original_total);
                paid += payout.get();
                payouts.push(TicketPayout {
                    ticket: *id,
                    requester: ticket.requester.clone(),
                    payout,
                });
            }
            let dust = Mutez(bucket.remaining_total.get() - paid);
            let dust_to_ledger = !self.token_supply.is_zero();
            if dust_to_ledger {
                self.staking_ledger = Mutez(self.staking_ledger.get() + dust.get());
            } else if let Some(last) = payouts.last_mut() {
                last.payout = Mutez(last.payout.get() + dust.get());
            }
            for p in &payouts {
                let ticket = self.tickets.get_mut(&p.ticket).expect("bucket ticket exists");
                ticket.status = TicketStatus::Finalizable;
                ticket.payout = Some(p.payout);
                let e = self.finalizable.entry(p.requester.clone()).or_default();
                *e = Mutez(e.get() + p.payout.get());
            }
            records.push(MaturationRecord {
                bucket_cycle: bucket.request_cycle,
                maturity_cycle: bucket.maturity_cycle,
                original: bucket.original_total,
                remaining: bucket.remaining_total,
                payouts,
                dust,
                dust_to_ledger,
            });
        }
        records
    }

    /// Pays a matured ticket to its requester. Anyone may call it.
    pub fn finalize_unstake(
        &mut self,
        ticket_id: TicketId,
        caller: &AccountId,
    ) -> Result<FinalizationRecord, LedgerError> {
        let ticket = self
            .tickets
            .get(&ticket_id)
            .ok_or(LedgerError::UnknownTicket(ticket_id))?;
        let payout = match ticket.status {
            TicketStatus::Pending => {
                return Err(LedgerError::TooEarly {
                    ticket: ticket_id,
                    maturity_cycle: ticket.maturity_cycle,
                })
            }
            TicketStatus::Paid => return Err(LedgerError::AlreadyPaid(ticket_id)),
            TicketStatus::Finalizable => ticket.payout.unwrap_or_default(),
        };
        let requester = ticket.requester.clone();
        let left = self.finalizable_of(&requester).checked_sub(payout)?;

        if left.is_zero() {
            self.finalizable.remove(&requester);
        } else {
            self.finalizable.insert(requester.clone(), left);
        }
        let ticket = self.tickets.get_mut(&ticket_id).expect("checked above");
        ticket.status = TicketStatus::Paid;
        self.totals.paid_out += payout.get() as u128;
        Ok(FinalizationRecord {
            ticket: ticket_id,
            requester,
            caller: caller.clone(),
            paid: payout,
        })
    }

    /// Credits net rewards to `L`; `S` is untouched.
    pub fn accrue_rewards(&mut self, delta: Mutez) -> Result<(), LedgerError> {
        if delta.is_zero() {
            return Ok(());
        }
        if self.token_supply.is_zero() {
            return Err(LedgerError::RewardOnEmptySystem);
        }
        self.staking_ledger = self.staking_ledger.checked_add(delta)?;
        self.totals.rewarded += delta.get() as u128;
        Ok(())
    }

    /// Deducts the fraction `p` from `L` and from every bucket still frozen.
    pub fn apply_slash(&mut self, p: Fraction) -> Result<SlashRecord, LedgerError> {
        let p = Fraction::new(p.num, p.den)?;
        let ledger_before = self.staking_ledger;
        let ledger_after = scale_by_remainder(ledger_before, p.num, p.den)?;
        let mut slashed = (ledger_before.get() - ledger_after.get()) as u128;
        let mut buckets = Vec::with_capacity(self.frozen.len());
        for bucket in self.frozen.values_mut() {
            let before = bucket.remaining_total;
            let after = scale_by_remainder(before, p.num, p.den)?;
            bucket.remaining_total = after;
            slashed += (before.get() - after.get()) as u128;
            buckets.push(BucketSlash {
                bucket_cycle: bucket.request_cycle,
                before,
                after,
            });
        }
        self.staking_ledger = ledger_after;
        self.totals.slashed += slashed;
        Ok(SlashRecord {
            validator: None,
            fraction: p,
            ledger_before,
            ledger_after,
            buckets,
        })
    }

    #[cfg(test)]
    pub(crate) fn corrupt_ledger(&mut self, ledger: Mutez) {
        self.staking_ledger = ledger;
    }
}
