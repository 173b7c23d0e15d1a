//! Scalar abstraction shared by the economic calculus and the agents.
//!
//! Expectations are computed in whatever scalar the caller picks (`f32`,
//! `f64` or an exact [`BigRational`]). Every inequality that decides an
//! outcome and every conversion to integer token units goes through
//! [`Scalar::to_exact`] so that strict comparisons never flip on rounding.

use std::fmt::{Debug, Display};
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, One, Signed, ToPrimitive};

use crate::Amount;

pub trait Scalar: Num + Clone + Debug + PartialOrd + FromPrimitive + Send + Sync + 'static {
    /// Exact rational value, `None` for NaN or infinities.
    fn to_exact(&self) -> Option<BigRational>;

    fn from_exact(value: &BigRational) -> Self;

    /// Lossy view used for reporting and CSV output.
    fn to_f64(&self) -> f64;

    fn from_amount(amount: Amount) -> Self {
        Self::from_u64(amount).expect("token amounts are representable in every scalar")
    }
}

/// Binary floats are read through their shortest round-trip decimal form, so
/// `0.15_f64` becomes exactly `3/20` rather than the nearest dyadic rational.
fn float_to_exact<F: Display>(value: F, finite: bool) -> Option<BigRational> {
    if !finite {
        return None;
    }
    parse_decimal(&value.to_string())
}

pub(crate) fn parse_decimal(text: &str) -> Option<BigRational> {
    let (negative, digits) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    let mut numer = BigInt::from_str(&format!("{int_part}{frac_part}")).ok()?;
    if negative {
        numer = -numer;
    }
    let denom = num_traits::pow(BigInt::from(10u32), frac_part.len());
    Some(BigRational::new(numer, denom))
}

impl Scalar for f64 {
    fn to_exact(&self) -> Option<BigRational> {
        float_to_exact(*self, self.is_finite())
    }

    fn from_exact(value: &BigRational) -> Self {
        ratio_to_f64(value)
    }

    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Scalar for f32 {
    fn to_exact(&self) -> Option<BigRational> {
        float_to_exact(*self, self.is_finite())
    }

    fn from_exact(value: &BigRational) -> Self {
        ratio_to_f64(value) as f32
    }

    fn to_f64(&self) -> f64 {
        f64::from(*self)
    }
}

impl Scalar for BigRational {
    fn to_exact(&self) -> Option<BigRational> {
        Some(self.clone())
    }

    fn from_exact(value: &BigRational) -> Self {
        value.clone()
    }

    fn to_f64(&self) -> f64 {
        ratio_to_f64(self)
    }
}

fn ratio_to_f64(value: &BigRational) -> f64 {
    match (value.numer().to_f64(), value.denom().to_f64()) {
        (Some(n), Some(d)) if n.is_finite() && d.is_finite() => n / d,
        _ => {
            // Huge numerators or denominators: scale both down first.
            let shift = value
                .numer()
                .bits()
                .max(value.denom().bits())
                .saturating_sub(1000);
            let n = (value.numer() >> shift).to_f64().unwrap_or(f64::NAN);
            let d = (value.denom() >> shift).to_f64().unwrap_or(f64::NAN);
            n / d
        }
    }
}

pub fn exact_amount(amount: Amount) -> BigRational {
    BigRational::from_integer(BigInt::from(amount))
}

/// Rounds half away from zero.
pub fn round_half_away(value: &BigRational) -> BigInt {
    value.round().to_integer()
}

/// Converts a non-negative exact value to whole token units, rounding half
/// away from zero. Returns `None` if the value is negative or overflows.
pub fn round_to_amount(value: &BigRational) -> Option<Amount> {
    if value.is_negative() {
        return None;
    }
    round_half_away(value).to_u64()
}

/// `base^exp` for any scalar, by repeated squaring.
pub fn powi<S: Scalar>(base: &S, exp: u32) -> S {
    let mut acc = S::one();
    let mut b = base.clone();
    let mut e = exp;
    while e > 0 {
        if e & 1 == 1 {
            acc = acc * b.clone();
        }
        b = b.clone() * b;
        e >>= 1;
    }
    acc
}

pub(crate) fn exact_pow(base: &BigRational, exp: u32) -> BigRational {
    num_traits::pow(base.clone(), exp as usize)
}

pub(crate) fn is_unit_interval(value: &BigRational) -> bool {
    !value.is_negative() && *value <= BigRational::one()
}
