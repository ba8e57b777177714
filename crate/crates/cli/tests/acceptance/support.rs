//! Independent oracles and workload generators. Nothing here calls the
//! arithmetic under test.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use stez_core::engine::{Action, ScenarioOp, Timing};
use stez_core::registry::ValidatorRecord;
use stez_core::{AllocationParams, ChainParams, Mutez, Scenario, TokenUnits};

pub type Rng8 = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng8 {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn int(v: impl Into<BigInt>) -> BigRational {
    BigRational::from_integer(v.into())
}

pub fn rat(n: impl Into<BigInt>, d: impl Into<BigInt>) -> BigRational {
    BigRational::new(n.into(), d.into())
}

/// `L / S`, or 1 on an empty supply.
pub fn rate(l: u64, s: u64) -> BigRational {
    if s == 0 {
        int(1)
    } else {
        rat(l, s)
    }
}

pub fn floor_div(a: u128, b: u128) -> u128 {
    a / b
}

pub fn expected_mint(delta: u64, l: u64, s: u64) -> Option<u64> {
    if s == 0 {
        return Some(delta);
    }
    if l == 0 {
        return None;
    }
    Some(floor_div(delta as u128 * s as u128, l as u128) as u64)
}

pub fn expected_burn(units: u64, l: u64, s: u64) -> u64 {
    floor_div(units as u128 * l as u128, s as u128) as u64
}

pub fn expected_scaled(amount: u64, num: u64, den: u64) -> u64 {
    floor_div(amount as u128 * (den - num) as u128, den as u128) as u64
}

pub fn expected_cap(capacity: u64, self_bond: u64, p: &AllocationParams, ledger: u64) -> u64 {
    let by_bond = (self_bond as u128 * p.overstake_multiple as u128).min(u64::MAX as u128) as u64;
    let global = floor_div(ledger as u128 * p.global_cap_bp as u128, 10_000) as u64;
    capacity.min(by_bond).min(global)
}

/// Plain description of a validator, independent of the registry types.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub address: String,
    pub fee_bp: u64,
    pub sequence: u64,
    pub cap: u64,
}

/// Greedy fill by `(fee, sequence, address)`; returns `(address, assigned)`
/// in fill order and the unassigned remainder.
pub fn greedy(mut candidates: Vec<Candidate>, ledger: u64) -> (Vec<(String, u64)>, u64) {
    candidates.sort_by(|a, b| (a.fee_bp, a.sequence, &a.address).cmp(&(b.fee_bp, b.sequence, &b.address)));
    let mut left = ledger;
    let fills = candidates
        .into_iter()
        .map(|c| {
            let take = left.min(c.cap);
            left -= take;
            (c.address, take)
        })
        .collect();
    (fills, left)
}

pub fn small_params() -> ChainParams {
    ChainParams {
        blocks_per_cycle: 8,
        unbonding_period: 3,
        consensus_rights_delay: 2,
        allocation: AllocationParams {
            overstake_multiple: 9,
            global_cap_bp: 5_000,
            min_self_bond: Mutez(1_000_000),
            slash_lookback: 2,
        },
        reward_per_block: Mutez::ZERO,
    }
}

pub fn deposit(at: u64, who: &str, amount: u64) -> ScenarioOp {
    ScenarioOp::new(at, Action::Deposit { account: who.into(), amount: Mutez(amount) })
}

pub fn unstake(at: u64, who: &str, units: u64) -> ScenarioOp {
    ScenarioOp::new(at, Action::RequestUnstake { account: who.into(), units: TokenUnits(units) })
}

pub fn finalize(at: u64, ticket: u64, caller: &str) -> ScenarioOp {
    ScenarioOp::new(at, Action::FinalizeUnstake { ticket, caller: caller.into() })
}

pub fn reward(at: u64, amount: u64, timing: Timing) -> ScenarioOp {
    ScenarioOp::new(at, Action::Reward { amount: Mutez(amount), timing })
}

pub fn slash(at: u64, who: &str, p_num: u64, p_den: u64, timing: Timing) -> ScenarioOp {
    ScenarioOp::new(at, Action::Slash { validator: who.into(), p_num, p_den, timing })
}

pub fn register(at: u64, who: &str, fee_bp: u64, capacity: u64, self_bond: u64) -> ScenarioOp {
    ScenarioOp::new(
        at,
        Action::RegisterValidator { validator: who.into(), fee_bp, capacity: Mutez(capacity), self_bond: Mutez(self_bond) },
    )
}

fn timing(r: &mut Rng8) -> Timing {
    if r.gen_bool(0.3) {
        Timing::CycleEnd
    } else {
        Timing::Block
    }
}

/// A mixed workload: registrations, tez-scale flows, rewards, slashes and
/// registry churn. Many ops are rejected on purpose (bad tickets, excess
/// burns); the run is non-strict.
pub fn campaign(seed: u64, blocks: u64, ops: usize) -> Scenario {
    let mut r = rng(seed);
    let validators = 6;
    let mut list: Vec<ScenarioOp> = (0..validators)
        .map(|i| {
            register(
                0,
                &format!("v{i}"),
                r.gen_range(0..2_000),
                r.gen_range(1..400) * 1_000_000_000,
                r.gen_range(1..60) * 1_000_000_000,
            )
        })
        .collect();
    let mut tickets = 0u64;
    for _ in 0..ops {
        let at = r.gen_range(0..blocks);
        let who = format!("u{}", r.gen_range(0..8));
        let v = format!("v{}", r.gen_range(0..validators));
        list.push(match r.gen_range(0..20) {
            0..=5 => deposit(at, &who, r.gen_range(1_000_000..500_000_000_000) + r.gen_range(0..1_000_000)),
            6..=9 => {
                tickets += 1;
                unstake(at, &who, r.gen_range(1..200_000_000_000))
            }
            10..=11 => finalize(at, r.gen_range(0..tickets.max(1)), &who),
            12..=14 => reward(at, r.gen_range(0..5_000_000_000), timing(&mut r)),
            15 => slash(at, &v, r.gen_range(0..=500), 10_000, timing(&mut r)),
            16 => ScenarioOp::new(
                at,
                Action::UpdateValidator {
                    validator: v.as_str().into(),
                    fee_bp: r.gen_range(0..2_000),
                    capacity: Mutez(r.gen_range(0..400) * 1_000_000_000),
                },
            ),
            17 => ScenarioOp::new(at, Action::UnregisterValidator { validator: v.as_str().into() }),
            _ => register(
                at,
                &v,
                r.gen_range(0..2_000),
                r.gen_range(1..400) * 1_000_000_000,
                r.gen_range(0..60) * 1_000_000_000,
            ),
        });
    }
    Scenario { params: small_params(), blocks: Some(blocks), ops: list }
}

/// `(L, S, F by bucket cycle, E by account)` folded from raw JSON lines.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Folded {
    pub ledger: u128,
    pub supply: u128,
    pub frozen: BTreeMap<u64, u128>,
    pub finalizable: BTreeMap<String, u128>,
}

fn num(v: &Value) -> u128 {
    match v {
        Value::String(s) => s.parse().expect("decimal string"),
        Value::Number(n) => n.as_u64().expect("integer") as u128,
        other => panic!("not an amount: {other}"),
    }
}

impl Folded {
    /// Applies one raw JSON event.
    pub fn apply(&mut self, e: &Value) {
        match e["kind"].as_str().expect("kind") {
            "deposit" => {
                self.ledger += num(&e["credited"]);
                self.supply += num(&e["minted"]);
            }
            "redemption_requested" => {
                self.ledger -= num(&e["frozen"]);
                self.supply -= num(&e["burned"]);
                *self.frozen.entry(e["bucket_cycle"].as_u64().unwrap()).or_default() += num(&e["frozen"]);
            }
            "bucket_matured" => {
                self.frozen.remove(&e["bucket_cycle"].as_u64().unwrap());
                for p in e["payouts"].as_array().unwrap() {
                    *self.finalizable.entry(p["requester"].as_str().unwrap().to_string()).or_default() +=
                        num(&p["payout"]);
                }
                if e["dust_to_ledger"].as_bool().unwrap() {
                    self.ledger += num(&e["dust"]);
                }
            }
            "redemption_finalized" => {
                let who = e["requester"].as_str().unwrap().to_string();
                let left = self.finalizable[&who] - num(&e["paid"]);
                if left == 0 {
                    self.finalizable.remove(&who);
                } else {
                    self.finalizable.insert(who, left);
                }
            }
            "reward" => self.ledger += num(&e["amount"]),
            "slash" => {
                self.ledger = num(&e["ledger_after"]);
                for b in e["buckets"].as_array().unwrap() {
                    self.frozen.insert(b["bucket_cycle"].as_u64().unwrap(), num(&b["after"]));
                }
            }
            _ => {}
        }
    }

    pub fn rate(&self) -> BigRational {
        if self.supply == 0 {
            int(1)
        } else {
            rat(self.ledger, self.supply)
        }
    }
}

pub fn json_events(text: &str) -> Vec<Value> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("json line"))
        .collect()
}

/// Untyped fold of a JSON-lines log. Independent of the library's event
/// types and replayer.
pub fn fold_jsonl(text: &str) -> Folded {
    let mut f = Folded::default();
    for e in json_events(text) {
        f.apply(&e);
    }
    f
}

pub fn amount(v: &Value) -> u128 {
    num(v)
}

/// Steps one block with `actions`, in order, and returns its events.
pub fn step(engine: &mut stez_core::Engine, actions: Vec<Action>) -> Vec<stez_core::Event> {
    let block = engine.next_block();
    let ops: Vec<stez_core::engine::IndexedOp> = actions
        .into_iter()
        .enumerate()
        .map(|(index, a)| stez_core::engine::IndexedOp { index, op: ScenarioOp::new(block, a) })
        .collect();
    engine.step_block(&ops).expect("step").to_vec()
}

pub fn dec(r: &BigRational) -> String {
    stez_core::nav::format_decimal(r, 6)
}

/// Eligibility for allocation at cycle `at`.
pub fn oracle_eligible(v: &ValidatorRecord, at: u64, p: &AllocationParams) -> bool {
    v.active
        && v.registered_at.cycle < at
        && !v.slash_history.iter().any(|&s| s <= at && at <= s + p.slash_lookback)
        && v.self_bond >= p.min_self_bond
        && v.declared_capacity.get() > 0
}
