//! Exchange-rate quotes, indicative NAV and window reconciliation.

use num_bigint::{BigInt, Sign};
pub use num_rational::BigRational;
use num_traits::Signed;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::events::{Event, EventKind};
use crate::fixedpoint::{u128_string, Mutez, TokenUnits, BASIS_POINTS, UNITS_PER_TOKEN};
use crate::ledger::BlockLevel;
use crate::replay::{ensure_covers, state_at_block, LogReplay, ReplayError, ReplayState};

pub const DEFAULT_TOLERANCE_BP: u64 = 5;
pub const DISPLAY_DIGITS: u32 = 12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NavError {
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("an FX rate is required for reference-currency output")]
    MissingFx,
    #[error("invalid decimal {0:?}")]
    InvalidDecimal(String),
    #[error("window start {t0} is after its end {t1}")]
    InvalidWindow { t0: BlockLevel, t1: BlockLevel },
}

fn big(v: impl Into<BigInt>) -> BigRational {
    BigRational::from_integer(v.into())
}

/// Parses a plain non-negative decimal such as `0.5`, `12` or `1.000001`.
pub fn parse_decimal(text: &str) -> Result<BigRational, NavError> {
    let bad = || NavError::InvalidDecimal(text.to_string());
    let t = text.trim();
    let t = t.strip_prefix('+').unwrap_or(t);
    let (int, frac) = match t.split_once('.') {
        Some((i, f)) => (i, f),
        None => (t, ""),
    };
    if int.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let digits = format!("{int}{frac}");
    let num: BigInt = if digits.is_empty() { BigInt::from(0) } else { digits.parse().map_err(|_| bad())? };
    let den = BigInt::from(10u32).pow(frac.len() as u32);
    Ok(BigRational::new(num, den))
}

/// Renders with `digits` fractional digits, rounding half to even.
pub fn format_decimal(value: &BigRational, digits: u32) -> String {
    let negative = value.numer().sign() == Sign::Minus;
    let scale = BigInt::from(10u32).pow(digits);
    let scaled = value.abs() * big(scale.clone());
    let floor = scaled.floor().to_integer();
    let rem = scaled - big(floor.clone());
    let half = BigRational::new(BigInt::from(1), BigInt::from(2));
    let two = BigInt::from(2);
    let rounded = if rem > half || (rem == half && &floor % &two == BigInt::from(1)) {
        floor + 1
    } else {
        floor
    };
    let int = &rounded / &scale;
    let frac = &rounded % &scale;
    let sign = if negative && rounded.sign() != Sign::NoSign { "-" } else { "" };
    if digits == 0 {
        return format!("{sign}{int}");
    }
    format!("{sign}{int}.{:0>width$}", frac.to_string(), width = digits as usize)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RationalView {
    pub numerator: String,
    pub denominator: String,
    pub decimal: String,
}

impl From<&BigRational> for RationalView {
    fn from(r: &BigRational) -> Self {
        RationalView {
            numerator: r.numer().to_string(),
            denominator: r.denom().to_string(),
            decimal: format_decimal(r, DISPLAY_DIGITS),
        }
    }
}

fn ser_rational<S: Serializer>(r: &BigRational, s: S) -> Result<S::Ok, S::Error> {
    RationalView::from(r).serialize(s)
}

fn ser_opt_rational<S: Serializer>(r: &Option<BigRational>, s: S) -> Result<S::Ok, S::Error> {
    r.as_ref().map(RationalView::from).serialize(s)
}

fn ser_opt_decimal<S: Serializer>(r: &Option<BigRational>, s: S) -> Result<S::Ok, S::Error> {
    r.as_ref().map(|v| format_decimal(v, DISPLAY_DIGITS)).serialize(s)
}

/// `L / S` as an exact rational, or 1 when the supply is zero.
pub fn rate_of(ledger: Mutez, supply: TokenUnits) -> BigRational {
    if supply.is_zero() {
        big(1)
    } else {
        BigRational::new(BigInt::from(ledger.get()), BigInt::from(supply.get()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NavQuote {
    pub block: BlockLevel,
    pub ledger: Mutez,
    pub supply: TokenUnits,
    #[serde(serialize_with = "ser_rational")]
    pub rate_tez_per_token: BigRational,
    #[serde(serialize_with = "ser_opt_decimal")]
    pub fx: Option<BigRational>,
}

impl NavQuote {
    pub fn new(block: BlockLevel, ledger: Mutez, supply: TokenUnits, fx: Option<BigRational>) -> Self {
        NavQuote {
            block,
            ledger,
            supply,
            rate_tez_per_token: rate_of(ledger, supply),
            fx,
        }
    }

    /// Quote after every event at or before `block`.
    pub fn from_log(events: &[Event], block: BlockLevel, fx: Option<BigRational>) -> Result<Self, NavError> {
        let st = state_at_block(events, block)?;
        Ok(NavQuote::new(block, st.ledger, st.supply, fx))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Denomination {
    Tez,
    Reference,
}

/// `H × R`, times FX for reference-currency output. Exact until rendering.
pub fn indicative_nav(holdings: TokenUnits, quote: &NavQuote, denomination: Denomination) -> Result<BigRational, NavError> {
    let tokens = BigRational::new(BigInt::from(holdings.get()), BigInt::from(UNITS_PER_TOKEN));
    let tez = tokens * &quote.rate_tez_per_token;
    match denomination {
        Denomination::Tez => Ok(tez),
        Denomination::Reference => {
            let fx = quote.fx.as_ref().ok_or(NavError::MissingFx)?;
            Ok(tez * fx)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NavReport {
    #[serde(flatten)]
    pub quote: NavQuote,
    pub holdings: TokenUnits,
    pub value_tez: String,
    pub indicative_value: Option<String>,
}

impl NavReport {
    pub fn new(quote: NavQuote, holdings: TokenUnits) -> Result<Self, NavError> {
        let tez = indicative_nav(holdings, &quote, Denomination::Tez)?;
        let reference = match quote.fx {
            Some(_) => Some(indicative_nav(holdings, &quote, Denomination::Reference)?),
            None => None,
        };
        Ok(NavReport {
            value_tez: format_decimal(&tez, DISPLAY_DIGITS),
            indicative_value: reference.map(|v| format_decimal(&v, DISPLAY_DIGITS)),
            quote,
            holdings,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FlowComponent {
    pub deposits: u64,
    #[serde(with = "u128_string")]
    pub deposited: u128,
    #[serde(with = "u128_string")]
    pub minted: u128,
    pub redemptions: u64,
    #[serde(with = "u128_string")]
    pub burned: u128,
    #[serde(with = "u128_string")]
    pub frozen: u128,
    pub maturations: u64,
    #[serde(with = "u128_string")]
    pub dust_to_ledger: u128,
    /// Flows that empty the supply or restart it from zero.
    pub supply_resets: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Attribution {
    pub window: (BlockLevel, BlockLevel),
    pub start: NavQuote,
    pub end: NavQuote,
    #[serde(serialize_with = "ser_rational")]
    pub delta_r: BigRational,
    #[serde(with = "u128_string")]
    pub rewards_component: u128,
    #[serde(serialize_with = "ser_rational")]
    pub rewards_rate: BigRational,
    /// Stake removed from `L` by slashes. Frozen losses are reported apart
    /// since they do not move the rate.
    #[serde(with = "u128_string")]
    pub slashing_component: u128,
    #[serde(with = "u128_string")]
    pub frozen_slashed: u128,
    #[serde(serialize_with = "ser_rational")]
    pub slashing_rate: BigRational,
    pub flow_component: FlowComponent,
    #[serde(serialize_with = "ser_rational")]
    pub reset_rate: BigRational,
    #[serde(serialize_with = "ser_rational")]
    pub residual: BigRational,
    #[serde(serialize_with = "ser_opt_rational")]
    pub residual_bp: Option<BigRational>,
    #[serde(serialize_with = "ser_rational")]
    pub dust_bound: BigRational,
    pub tolerance_bp: u64,
    pub within_tolerance: bool,
}

impl Attribution {
    pub fn explained(&self) -> BigRational {
        &self.rewards_rate + &self.slashing_rate + &self.reset_rate
    }

    pub fn residual_within_dust_bound(&self) -> bool {
        self.residual.abs() <= self.dust_bound
    }
}

/// Attributes `R(t1) - R(t0)` over the events in `(t0, t1]`, rebuilding
/// `L` and `S` from the log.
pub fn reconcile(events: &[Event], t0: BlockLevel, t1: BlockLevel, tolerance_bp: u64) -> Result<Attribution, NavError> {
    if t0 > t1 {
        return Err(NavError::InvalidWindow { t0, t1 });
    }
    ensure_covers(events, t1)?;
    let mut replay = LogReplay::new();
    let mut it = events.iter().peekable();
    while let Some(e) = it.next_if(|e| e.block <= t0) {
        replay.apply(e)?;
    }
    let start_state = replay.state().clone();
    let zero = big(0);
    let mut rewards_component = 0u128;
    let mut rewards_rate = zero.clone();
    let mut slashing_component = 0u128;
    let mut frozen_slashed = 0u128;
    let mut slashing_rate = zero.clone();
    let mut reset_rate = zero.clone();
    let mut dust_bound = zero.clone();
    let mut flows = FlowComponent::default();

    for e in it.take_while(|e| e.block <= t1) {
        let before: ReplayState = replay.state().clone();
        replay.apply(e)?;
        let after = replay.state();
        let r_before = rate_of(before.ledger, before.supply);
        let s_before = before.supply.get();
        let is_reset = s_before == 0 || after.supply.is_zero();
        match &e.kind {
            EventKind::Reward { amount, .. } => {
                rewards_component += amount.get() as u128;
                if s_before > 0 {
                    rewards_rate += BigRational::new(amount.get().into(), s_before.into());
                }
            }
            EventKind::Slash(s) => {
                let lost = s.ledger_before.get() - s.ledger_after.get();
                slashing_component += lost as u128;
                frozen_slashed += s
                    .buckets
                    .iter()
                    .map(|b| (b.before.get() - b.after.get()) as u128)
                    .sum::<u128>();
                if s_before > 0 {
                    slashing_rate -= BigRational::new(lost.into(), s_before.into());
                }
            }
            EventKind::Deposit(d) => {
                flows.deposits += 1;
                flows.deposited += d.credited.get() as u128;
                flows.minted += d.minted.get() as u128;
                if is_reset {
                    flows.supply_resets += 1;
                    reset_rate += rate_of(after.ledger, after.supply) - &r_before;
                } else {
                    let one = big(1);
                    let unit = if r_before > one { r_before.clone() } else { one };
                    dust_bound += unit / big(after.supply.get());
                }
            }
            EventKind::RedemptionRequested(r) => {
                flows.redemptions += 1;
                flows.burned += r.burned.get() as u128;
                flows.frozen += r.frozen.get() as u128;
                if is_reset {
                    flows.supply_resets += 1;
                    reset_rate += rate_of(after.ledger, after.supply) - &r_before;
                } else {
                    dust_bound += BigRational::new(1.into(), after.supply.get().into());
                }
            }
            EventKind::BucketMatured(m) => {
                flows.maturations += 1;
                if m.dust_to_ledger {
                    flows.dust_to_ledger += m.dust.get() as u128;
                    if s_before > 0 {
                        dust_bound += BigRational::new((m.payouts.len() as u64).into(), s_before.into());
                    }
                }
            }
            _ => {}
        }
    }

    let end_state = replay.state();
    let start = NavQuote::new(t0, start_state.ledger, start_state.supply, None);
    let end = NavQuote::new(t1, end_state.ledger, end_state.supply, None);
    let delta_r = &end.rate_tez_per_token - &start.rate_tez_per_token;
    let explained = &rewards_rate + &slashing_rate + &reset_rate;
    let residual = &delta_r - explained;
    let r0 = &start.rate_tez_per_token;
    let residual_bp = (*r0 != zero).then(|| &residual / r0 * big(BASIS_POINTS));
    let within_tolerance = match &residual_bp {
        Some(bp) => bp.abs() <= big(tolerance_bp),
        None => residual == zero,
    };
    Ok(Attribution {
        window: (t0, t1),
        start,
        end,
        delta_r,
        rewards_component,
        rewards_rate,
        slashing_component,
        frozen_slashed,
        slashing_rate,
        flow_component: flows,
        reset_rate,
        residual,
        residual_bp,
        dust_bound,
        tolerance_bp,
        within_tolerance,
    })
}
