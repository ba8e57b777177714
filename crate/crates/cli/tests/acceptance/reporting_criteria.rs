use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use num_bigint::BigInt;
use num_rational::BigRational;
use rand::Rng;
use serde_json::Value;
use stez_core::engine::{Action, ScenarioRun, Timing};
use stez_core::events::{parse_jsonl, write_jsonl};
use stez_core::nav::reconcile;
use stez_core::replay::{replay_complete, ReplayState};
use stez_core::{AccountId, ChainParams, Engine, Mutez, Scenario};
use stez_query::{router, Snapshot, SnapshotCell};
use tower::ServiceExt;

use crate::support::*;
use crate::{RECONCILE_TOLERANCE_BP, RECONCILE_WELL_UNDER_BP};

/// Explained and bounded pieces of a window, folded from raw JSON.
struct WindowOracle {
    delta_r: BigRational,
    rewards: BigRational,
    slashing: BigRational,
    resets: BigRational,
    dust_bound: BigRational,
    start_rate: BigRational,
}

fn window_oracle(events: &[Value], t0: u64, t1: u64) -> WindowOracle {
    let mut f = Folded::default();
    let mut it = events.iter().peekable();
    while let Some(e) = it.next_if(|e| e["block"].as_u64().unwrap() <= t0) {
        f.apply(e);
    }
    let start_rate = f.rate();
    let zero = int(0);
    let (mut rewards, mut slashing, mut resets, mut dust_bound) = (zero.clone(), zero.clone(), zero.clone(), zero.clone());
    for e in it.take_while(|e| e["block"].as_u64().unwrap() <= t1) {
        let (s_before, l_before, r_before) = (f.supply, f.ledger, f.rate());
        f.apply(e);
        let reset = s_before == 0 || f.supply == 0;
        match e["kind"].as_str().unwrap() {
            "reward" if s_before > 0 => rewards += rat(amount(&e["amount"]), s_before),
            "slash" if s_before > 0 => slashing -= rat(l_before - f.ledger, s_before),
            "deposit" | "redemption_requested" if reset => resets += f.rate() - r_before,
            "deposit" => {
                let unit = if r_before > int(1) { r_before } else { int(1) };
                dust_bound += unit / int(f.supply);
            }
            "redemption_requested" => dust_bound += rat(1, f.supply),
            "bucket_matured" if e["dust_to_ledger"].as_bool().unwrap() && s_before > 0 => {
                dust_bound += rat(e["payouts"].as_array().unwrap().len() as u64, s_before)
            }
            _ => {}
        }
    }
    WindowOracle { delta_r: f.rate() - &start_rate, rewards, slashing, resets, dust_bound, start_rate }
}

fn rewards_only_case(seed: u64) -> (Engine, u64, u64) {
    let mut r = rng(seed);
    let mut engine = Engine::new(small_params(), false).unwrap();
    let users = ["a", "b", "c"];
    step(
        &mut engine,
        users.iter().map(|u| Action::Deposit { account: (*u).into(), amount: Mutez(r.gen_range(1..5_000_000_000)) }).collect(),
    );
    for _ in 0..r.gen_range(1..5) {
        step(&mut engine, vec![Action::Reward { amount: Mutez(r.gen_range(0..90_000_000)), timing: Timing::Block }]);
    }
    let t0 = engine.next_block() - 1;
    for _ in 0..r.gen_range(1..12) {
        let actions = (0..r.gen_range(0..3))
            .map(|_| Action::Reward {
                amount: Mutez(r.gen_range(0..90_000_000)),
                timing: if r.gen_bool(0.5) { Timing::Block } else { Timing::CycleEnd },
            })
            .collect();
        step(&mut engine, actions);
    }
    let t1 = engine.next_block() - 1;
    engine.finish();
    (engine, t0, t1)
}

pub fn reconciliation() -> String {
    let zero = int(0);

    let rewards_windows = 300u64;
    for seed in 0..rewards_windows {
        let (engine, t0, t1) = rewards_only_case(8_000_000 + seed);
        let a = reconcile(engine.log(), t0, t1, RECONCILE_TOLERANCE_BP).unwrap();
        let oracle = window_oracle(&json_events(&write_jsonl(engine.log())), t0, t1);
        assert_eq!(a.residual, zero, "seed {seed}: rewards-only residual");
        assert_eq!(a.rewards_rate, a.delta_r, "seed {seed}");
        assert_eq!(a.delta_r, oracle.delta_r, "seed {seed}");
        assert_eq!(a.rewards_rate, oracle.rewards, "seed {seed}");
        assert!(a.within_tolerance);
    }

    let slash_windows = 300u64;
    for seed in 0..slash_windows {
        let mut r = rng(8_500_000 + seed);
        let mut engine = Engine::new(small_params(), false).unwrap();
        step(
            &mut engine,
            vec![
                Action::RegisterValidator { validator: "v".into(), fee_bp: 0, capacity: Mutez(1), self_bond: Mutez(1_000_000) },
                Action::Deposit { account: "a".into(), amount: Mutez(r.gen_range(20..9_000_000_000)) },
                Action::Deposit { account: "b".into(), amount: Mutez(r.gen_range(20..9_000_000_000)) },
            ],
        );
        let l = engine.ledger().staking_ledger().get();
        step(&mut engine, vec![Action::Reward { amount: Mutez((20 - l % 20) % 20), timing: Timing::Block }]);
        let (l, s) = (engine.ledger().staking_ledger().get(), engine.ledger().token_supply().get());
        assert_eq!(l % 20, 0);
        let t0 = engine.next_block() - 1;
        step(&mut engine, vec![Action::Slash { validator: "v".into(), p_num: 5, p_den: 100, timing: Timing::Block }]);
        step(&mut engine, vec![]);
        let t1 = engine.next_block() - 1;
        engine.finish();
        let a = reconcile(engine.log(), t0, t1, RECONCILE_TOLERANCE_BP).unwrap();
        let expected = rat(expected_scaled(l, 5, 100), s) - rat(l, s);
        assert_eq!(a.delta_r, expected, "seed {seed}: slash delta");
        assert_eq!(a.delta_r, -rate(l, s) / int(20), "seed {seed}: 5% of R");
        assert_eq!(a.slashing_rate, a.delta_r, "seed {seed}");
        assert_eq!(a.residual, zero, "seed {seed}");
    }

    let campaigns = 60u64;
    let mut windows = 0u64;
    let mut worst_bp = zero.clone();
    let mut nonzero = 0u64;
    for seed in 0..campaigns {
        let scenario = campaign(9_000_000 + seed, 200, 500);
        let engine = stez_core::run_scenario(&scenario, false).unwrap();
        let text = write_jsonl(engine.log());
        let json = json_events(&text);
        let mut r = rng(9_500_000 + seed);
        let last = engine.ledger().block_level();
        for _ in 0..6 {
            let t0 = r.gen_range(0..=last);
            let t1 = r.gen_range(t0..=last);
            let a = reconcile(engine.log(), t0, t1, RECONCILE_TOLERANCE_BP).unwrap();
            let o = window_oracle(&json, t0, t1);
            let context = format!("seed {seed} window {t0}:{t1}");
            assert_eq!(a.delta_r, o.delta_r, "{context}: delta");
            assert_eq!(a.rewards_rate, o.rewards, "{context}: rewards");
            assert_eq!(a.slashing_rate, o.slashing, "{context}: slashing");
            assert_eq!(a.reset_rate, o.resets, "{context}: resets");
            let residual = &o.delta_r - &o.rewards - &o.slashing - &o.resets;
            assert_eq!(a.residual, residual, "{context}: residual");
            assert_eq!(a.dust_bound, o.dust_bound, "{context}: dust bound");
            assert!(residual >= zero, "{context}: negative residual {}", dec(&residual));
            assert!(residual <= o.dust_bound, "{context}: residual {} above dust bound {}", dec(&residual), dec(&o.dust_bound));
            if o.start_rate != zero {
                let bp = &residual / &o.start_rate * int(10_000);
                assert_eq!(a.residual_bp.as_ref(), Some(&bp), "{context}");
                assert!(bp < int(RECONCILE_WELL_UNDER_BP as i64), "{context}: residual {} bp", dec(&bp));
                if bp > worst_bp {
                    worst_bp = bp;
                }
            }
            assert!(a.within_tolerance, "{context}: outside {RECONCILE_TOLERANCE_BP} bp");
            if residual > zero {
                nonzero += 1;
            }
            windows += 1;
        }
    }
    format!(
        "{rewards_windows} rewards-only windows exact, {slash_windows} single 5% slashes exact, {windows} mixed windows ({nonzero} with dust) worst residual {} bp",
        stez_core::nav::format_decimal(&worst_bp, 12)
    )
}

pub fn log_replay_equivalence() -> String {
    let campaigns = 150u64;
    let mut events = 0usize;
    for seed in 0..campaigns {
        let scenario = campaign(10_000_000 + seed, 180, 450);
        let engine = stez_core::run_scenario(&scenario, false).unwrap();
        let ledger = engine.ledger();
        let text = write_jsonl(engine.log());
        events += engine.log().len();

        let folded = fold_jsonl(&text);
        assert_eq!(folded.ledger, ledger.staking_ledger().get() as u128, "seed {seed}: L");
        assert_eq!(folded.supply, ledger.token_supply().get() as u128, "seed {seed}: S");
        let frozen: BTreeMap<u64, u128> =
            ledger.frozen().values().map(|b| (b.request_cycle, b.remaining_total.get() as u128)).collect();
        assert_eq!(folded.frozen, frozen, "seed {seed}: frozen buckets");
        let finalizable: BTreeMap<String, u128> = ledger
            .finalizable()
            .iter()
            .filter(|(_, m)| !m.is_zero())
            .map(|(a, m)| (a.as_str().to_string(), m.get() as u128))
            .collect();
        assert_eq!(folded.finalizable, finalizable, "seed {seed}: finalizable");
        assert_eq!(folded.rate(), rate(ledger.staking_ledger().get(), ledger.token_supply().get()));

        let parsed = parse_jsonl(&text).unwrap();
        assert_eq!(parsed.as_slice(), engine.log(), "seed {seed}: JSONL round trip");
        let replayed = replay_complete(&parsed).unwrap().into_state();
        assert_eq!(replayed, ReplayState::from_ledger(ledger), "seed {seed}: replayed state");
    }
    format!("{campaigns} campaigns, {events} events; untyped fold and replayer both reproduce L, S, buckets and claims")
}

async fn get(app: &axum::Router, uri: &str) -> (StatusCode, Value) {
    let response = app.clone().oneshot(Request::get(uri).body(Body::empty()).unwrap()).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn round_half_even(l: u64, s: u64, digits: u32) -> String {
    let scale = BigInt::from(10u64).pow(digits);
    let n = BigInt::from(l) * &scale;
    let d = BigInt::from(s);
    let (mut q, r) = (&n / &d, &n % &d);
    let twice: BigInt = r * 2;
    if twice > d || (twice == d && &q % 2 == BigInt::from(1)) {
        q += 1;
    }
    let int_part = &q / &scale;
    let frac = format!("{:0>width$}", (&q % &scale).to_string(), width = digits as usize);
    format!("{int_part}.{frac}")
}

fn reduced(l: u64, s: u64) -> (String, String) {
    if s == 0 {
        return ("1".into(), "1".into());
    }
    let r = rate(l, s);
    (r.numer().to_string(), r.denom().to_string())
}

#[derive(Default)]
struct TicketOracle {
    requester: String,
    burned: u128,
    frozen: u128,
    request_cycle: u64,
    maturity_cycle: u64,
    payout: Option<u128>,
    paid: bool,
}

/// Boundary snapshots of a stepped campaign, every endpoint checked
/// against the engine and against a fold of the published log.
pub fn query_surface() -> String {
    let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    runtime.block_on(async {
        let campaigns = 12u64;
        let mut requests = 0u64;
        for seed in 0..campaigns {
            let scenario: Scenario = campaign(11_000_000 + seed, 120, 300);
            let params: ChainParams = scenario.params.clone();
            let mut run = ScenarioRun::new(&scenario, false).unwrap();
            let cell = Arc::new(SnapshotCell::new(Snapshot::capture(run.engine())));
            let app = router(cell.clone());
            while run.step().unwrap() {
                let engine = run.engine();
                let block = engine.ledger().block_level();
                if !params.is_last_block_of_cycle(block) {
                    continue;
                }
                cell.publish(Snapshot::capture(engine));
                let context = format!("seed {seed} block {block}");
                let json = json_events(&write_jsonl(engine.log()));
                let mut folded = Folded::default();
                let mut tickets: BTreeMap<u64, TicketOracle> = BTreeMap::new();
                for e in &json {
                    folded.apply(e);
                    match e["kind"].as_str().unwrap() {
                        "redemption_requested" => {
                            tickets.insert(
                                e["ticket"].as_u64().unwrap(),
                                TicketOracle {
                                    requester: e["requester"].as_str().unwrap().into(),
                                    burned: amount(&e["burned"]),
                                    frozen: amount(&e["frozen"]),
                                    request_cycle: e["bucket_cycle"].as_u64().unwrap(),
                                    maturity_cycle: e["maturity_cycle"].as_u64().unwrap(),
                                    ..TicketOracle::default()
                                },
                            );
                        }
                        "bucket_matured" => {
                            for p in e["payouts"].as_array().unwrap() {
                                tickets.get_mut(&p["ticket"].as_u64().unwrap()).unwrap().payout = Some(amount(&p["payout"]));
                            }
                        }
                        "redemption_finalized" => tickets.get_mut(&e["ticket"].as_u64().unwrap()).unwrap().paid = true,
                        _ => {}
                    }
                }
                let (l, s) = (folded.ledger as u64, folded.supply as u64);

                let (status, state) = get(&app, "/ledger/state").await;
                assert_eq!(status, StatusCode::OK);
                assert_eq!(amount(&state["ledger"]), folded.ledger, "{context}: L");
                assert_eq!(amount(&state["supply"]), folded.supply, "{context}: S");
                let (n, d) = reduced(l, s);
                assert_eq!(state["rate"]["numerator"], n.as_str(), "{context}");
                assert_eq!(state["rate"]["denominator"], d.as_str(), "{context}");
                let decimal = if s == 0 { round_half_even(1, 1, 12) } else { round_half_even(l, s, 12) };
                assert_eq!(state["rate"]["decimal"], decimal.as_str(), "{context}");
                assert_eq!(state["rate"]["is_floor"], s == 0);
                assert_eq!(state["block"], block);
                assert_eq!(state["cycle"], params.cycle_of(block));
                assert_eq!(state["log_len"], json.len());
                assert_eq!(state["state_digest"], engine.state_digest().as_str());
                assert_eq!(amount(&state["frozen_total"]), folded.frozen.values().sum::<u128>(), "{context}");
                assert_eq!(amount(&state["finalizable_total"]), folded.finalizable.values().sum::<u128>(), "{context}");

                let (status, validators) = get(&app, "/ledger/validators").await;
                assert_eq!(status, StatusCode::OK);
                let listed = validators.as_array().unwrap();
                assert_eq!(listed.len(), engine.registry().len());
                let current = engine.plan_for(params.cycle_of(block));
                for v in engine.registry().validators() {
                    let view = listed.iter().find(|x| x["address"] == v.address.as_str()).unwrap();
                    let who = format!("{context} {}", v.address);
                    assert_eq!(view["fee_bp"], v.fee_bp, "{who}");
                    assert_eq!(amount(&view["declared_capacity"]), v.declared_capacity.get() as u128, "{who}");
                    assert_eq!(amount(&view["self_bond"]), v.self_bond.get() as u128, "{who}");
                    let cap = expected_cap(v.declared_capacity.get(), v.self_bond.get(), &params.allocation, l);
                    assert_eq!(amount(&view["effective_cap"]), cap as u128, "{who}: effective cap");
                    assert_eq!(view["active"], v.active, "{who}");
                    assert_eq!(view["slash_history"], serde_json::to_value(&v.slash_history).unwrap(), "{who}");
                    let eligible = oracle_eligible(v, params.cycle_of(block) + 1, &params.allocation);
                    assert_eq!(view["eligible"], eligible, "{who}: eligible");
                    let assigned = current
                        .and_then(|p| p.assignments.iter().find(|a| a.validator == v.address))
                        .map_or(0, |a| a.assigned.get());
                    assert_eq!(amount(&view["current_assignment"]), assigned as u128, "{who}: assignment");
                }

                for plan in engine.plans().values() {
                    let (status, body) = get(&app, &format!("/ledger/allocations?cycle={}", plan.effective_cycle)).await;
                    assert_eq!(status, StatusCode::OK, "{context}");
                    assert_eq!(body, serde_json::to_value(plan).unwrap(), "{context}: plan {}", plan.effective_cycle);
                    let sum: u128 = body["assignments"].as_array().unwrap().iter().map(|a| amount(&a["assigned"])).sum();
                    assert_eq!(sum + amount(&body["unassigned"]), amount(&body["ledger_at_computation"]));
                    requests += 1;
                }
                let missing = engine.plans().keys().max().copied().unwrap_or(0) + 1;
                let (status, body) = get(&app, &format!("/ledger/allocations?cycle={missing}")).await;
                assert_eq!(status, StatusCode::NOT_FOUND, "{context}");
                assert_eq!(body["error"], "not_found");

                for i in 0..8 {
                    let user = format!("u{i}");
                    let (status, bal) = get(&app, &format!("/user/{user}/balance")).await;
                    assert_eq!(status, StatusCode::OK);
                    let units = engine.ledger().balance_of(&AccountId::new(user.clone())).get();
                    assert_eq!(bal["token_balance"], units.to_string(), "{context} {user}");
                    assert_eq!(amount(&bal["value"]), expected_burn(units, l, s) as u128, "{context} {user}: value");
                    assert_eq!(amount(&bal["finalizable"]), folded.finalizable.get(&user).copied().unwrap_or(0), "{context} {user}");

                    let (status, listed) = get(&app, &format!("/user/{user}/tickets")).await;
                    assert_eq!(status, StatusCode::OK);
                    let listed = listed["tickets"].as_array().unwrap();
                    let mine: Vec<(&u64, &TicketOracle)> = tickets.iter().filter(|(_, t)| t.requester == user).collect();
                    assert_eq!(listed.len(), mine.len(), "{context} {user}: ticket count");
                    for (id, t) in mine {
                        let view = listed.iter().find(|x| x["ticket_id"] == *id).unwrap();
                        assert_eq!(amount(&view["burned_units"]), t.burned);
                        assert_eq!(amount(&view["frozen_amount"]), t.frozen);
                        assert_eq!(view["request_cycle"], t.request_cycle);
                        assert_eq!(view["maturity_cycle"], t.maturity_cycle);
                        let status = match (t.paid, t.payout) {
                            (true, _) => "paid",
                            (false, Some(_)) => "finalizable",
                            (false, None) => "pending",
                        };
                        assert_eq!(view["status"], status, "{context} ticket {id}");
                        assert_eq!(view["payout"].as_str().map(|p| p.parse::<u128>().unwrap()), t.payout, "{context} ticket {id}");
                    }
                    requests += 2;
                }
                requests += 3;
            }
        }
        format!("{campaigns} campaigns, {requests} requests across all five endpoints matched the engine and log oracles")
    })
}
