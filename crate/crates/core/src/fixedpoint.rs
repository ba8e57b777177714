//! Exact integer arithmetic for mutez and token units.
//!
//! Every conversion between tez and sTEZ goes through this module. Products
//! are taken in `u128` so no intermediate can overflow, and every quotient is
//! floored. Floor always favours the pool: a depositor never receives more
//! units than the exact quotient and a redeemer never receives more mutez.

use std::cmp::Ordering;
use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// 1 tez = 1,000,000 mutez.
pub const MUTEZ_PER_TEZ: u64 = 1_000_000;

/// sTEZ carries six decimals, the same granularity as mutez.
pub const UNITS_PER_TOKEN: u64 = 1_000_000;

/// Basis-point denominator.
pub const BASIS_POINTS: u64 = 10_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ArithmeticError {
    #[error("arithmetic overflow")]
    Overflow,
    #[error("arithmetic underflow")]
    Underflow,
    #[error("invariant violated: ledger holds {ledger} mutez against a supply of {supply} units")]
    InvariantViolation { ledger: u64, supply: u64 },
    #[error("cannot burn {requested} units out of a supply of {supply}")]
    InsufficientSupply { requested: u64, supply: u64 },
    #[error("token supply is zero")]
    EmptySystem,
    #[error("invalid fraction {num}/{den}")]
    InvalidFraction { num: u64, den: u64 },
}

macro_rules! amount_type {
    ($(#[$meta:meta])* $name:ident, $expecting:literal) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u64);

        impl $name {
            pub const ZERO: $name = $name(0);

            pub const fn new(value: u64) -> Self {
                $name(value)
            }

            pub const fn get(self) -> u64 {
                self.0
            }

            pub fn is_zero(self) -> bool {
                self.0 == 0
            }

            pub fn checked_add(self, other: $name) -> Result<$name, ArithmeticError> {
                self.0
                    .checked_add(other.0)
                    .map($name)
                    .ok_or(ArithmeticError::Overflow)
            }

            pub fn checked_sub(self, other: $name) -> Result<$name, ArithmeticError> {
                self.0
                    .checked_sub(other.0)
                    .map($name)
                    .ok_or(ArithmeticError::Underflow)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }

        impl From<u64> for $name {
            fn from(value: u64) -> Self {
                $name(value)
            }
        }

        // Decimal strings on the wire: JSON consumers commonly lose precision
        // above 2^53.
        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.collect_str(&self.0)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                deserializer.deserialize_any(U64Visitor($expecting)).map($name)
            }
        }
    };
}

amount_type!(
    /// An amount of tez in its smallest unit.
    Mutez,
    "a mutez amount as a decimal string or non-negative integer"
);

amount_type!(
    /// An amount of sTEZ in its smallest indivisible unit.
    TokenUnits,
    "a token amount as a decimal string or non-negative integer"
);

struct U64Visitor(&'static str);

impl Visitor<'_> for U64Visitor {
    type Value = u64;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0)
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<u64, E> {
        Ok(v)
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<u64, E> {
        u64::try_from(v).map_err(|_| E::invalid_value(de::Unexpected::Signed(v), &self))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<u64, E> {
        v.parse::<u64>()
            .map_err(|_| E::invalid_value(de::Unexpected::Str(v), &self))
    }
}

/// Serde adapter for `u128` running totals, written as decimal strings.
pub mod u128_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &u128, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(value)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<u128, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A fraction `num/den` with `num <= den`, used for slash penalties.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub const ZERO: Fraction = Fraction { num: 0, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Self, ArithmeticError> {
        if den == 0 || num > den {
            return Err(ArithmeticError::InvalidFraction { num, den });
        }
        Ok(Fraction { num, den })
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// The exchange rate `L/S` in tez per token, held as the exact pair.
///
/// With a zero supply the rate is the neutral floor quote of exactly 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExchangeRate {
    pub ledger: Mutez,
    pub supply: TokenUnits,
}

impl ExchangeRate {
    pub fn new(ledger: Mutez, supply: TokenUnits) -> Self {
        ExchangeRate { ledger, supply }
    }

    pub fn is_floor(&self) -> bool {
        self.supply.is_zero()
    }

    /// `(numerator, denominator)` of the quoted rate; `(1, 1)` at the floor.
    pub fn ratio(&self) -> (u128, u128) {
        if self.is_floor() {
            (1, 1)
        } else {
            (self.ledger.get() as u128, self.supply.get() as u128)
        }
    }

    /// Renders the quote with `digits` fractional digits, rounding half to even.
    pub fn to_decimal_string(&self, digits: u32) -> String {
        let (num, den) = self.ratio();
        render_ratio_u128(num, den, digits)
    }
}

impl PartialOrd for ExchangeRate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExchangeRate {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = self.ratio();
        let (c, d) = other.ratio();
        // a, c < 2^64 and b, d < 2^64 so the cross products fit in u128.
        (a * d).cmp(&(c * b))
    }
}

impl fmt::Display for ExchangeRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_decimal_string(12))
    }
}

fn render_ratio_u128(num: u128, den: u128, digits: u32) -> String {
    let whole = num / den;
    let rem = num % den;
    if digits == 0 {
        let mut q = whole;
        if round_half_even_up(rem, den, q) {
            q += 1;
        }
        return q.to_string();
    }
    // rem < den < 2^64, so rem * 10^digits fits for digits <= 19.
    let scale = 10u128.pow(digits.min(19));
    let scaled = rem * scale;
    let mut frac = scaled / den;
    let frac_rem = scaled % den;
    let mut whole = whole;
    if round_half_even_up(frac_rem, den, frac) {
        frac += 1;
        if frac == scale {
            frac = 0;
            whole += 1;
        }
    }
    format!("{whole}.{frac:0width$}", width = digits.min(19) as usize)
}

fn round_half_even_up(rem: u128, den: u128, last: u128) -> bool {
    match (rem * 2).cmp(&den) {
        Ordering::Greater => true,
        Ordering::Equal => last % 2 == 1,
        Ordering::Less => false,
    }
}

/// Units minted for a deposit of `delta` against a pool of `ledger` mutez
/// backing `supply` units.
///
/// An empty pool mints 1:1. Otherwise the result is `floor(delta * S / L)`.
pub fn mint_amount(
    delta: Mutez,
    ledger: Mutez,
    supply: TokenUnits,
) -> Result<TokenUnits, ArithmeticError> {
    match (ledger.is_zero(), supply.is_zero()) {
        (true, true) => Ok(TokenUnits(delta.get())),
        (false, false) => {
            let units = delta.get() as u128 * supply.get() as u128 / ledger.get() as u128;
            u64::try_from(units)
                .map(TokenUnits)
                .map_err(|_| ArithmeticError::Overflow)
        }
        _ => Err(ArithmeticError::InvariantViolation {
            ledger: ledger.get(),
            supply: supply.get(),
        }),
    }
}

/// Mutez released by burning `units`: `floor(units * L / S)`.
///
/// Burning the whole supply returns the whole ledger.
pub fn burn_value(
    units: TokenUnits,
    ledger: Mutez,
    supply: TokenUnits,
) -> Result<Mutez, ArithmeticError> {
    if supply.is_zero() {
        return Err(ArithmeticError::EmptySystem);
    }
    if units > supply {
        return Err(ArithmeticError::InsufficientSupply {
            requested: units.get(),
            supply: supply.get(),
        });
    }
    // units <= supply, so the quotient is at most `ledger`.
    let value = units.get() as u128 * ledger.get() as u128 / supply.get() as u128;
    Ok(Mutez(value as u64))
}

/// What is left of `amount` after deducting the fraction `p_num/p_den`:
/// `floor(amount * (p_den - p_num) / p_den)`.
pub fn scale_by_remainder(amount: Mutez, p_num: u64, p_den: u64) -> Result<Mutez, ArithmeticError> {
    let p = Fraction::new(p_num, p_den)?;
    let kept = amount.get() as u128 * (p.den - p.num) as u128 / p.den as u128;
    Ok(Mutez(kept as u64))
}

/// `floor(amount * num / den)` for `num <= den`.
pub(crate) fn pro_rata(amount: Mutez, num: Mutez, den: Mutez) -> Mutez {
    if den.is_zero() {
        return Mutez::ZERO;
    }
    debug_assert!(num <= den);
    Mutez((amount.get() as u128 * num.get() as u128 / den.get() as u128) as u64)
}

/// `floor(amount * bp / 10_000)`.
pub fn apply_basis_points(amount: Mutez, bp: u64) -> Mutez {
    let v = amount.get() as u128 * bp as u128 / BASIS_POINTS as u128;
    Mutez(v.min(u64::MAX as u128) as u64)
}
