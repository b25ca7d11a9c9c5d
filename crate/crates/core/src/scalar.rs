//! Numeric backends shared by every reduction in the crate.
//!
//! Statistics are written once against [`Scalar`] and instantiated twice:
//! with [`BigRational`] when the inputs are decimal-rational (identities are
//! then checked with exact equality) and with `f64` for irrational-valued
//! inputs such as freshly drawn gaussians.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde_json::{json, Value};

use crate::error::{Error, Result};

/// Relative tolerance used when an identity is checked in double precision.
pub const FLOAT_REL_TOL: f64 = 1e-9;

pub trait Scalar:
    Clone
    + Debug
    + PartialEq
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + for<'a> Add<&'a Self, Output = Self>
    + for<'a> Sub<&'a Self, Output = Self>
    + for<'a> Mul<&'a Self, Output = Self>
    + for<'a> Div<&'a Self, Output = Self>
{
    /// True for backends where `==` is exact equality of real numbers.
    const EXACT: bool;

    fn zero() -> Self;
    fn from_count(n: usize) -> Self;
    fn to_f64(&self) -> f64;
    fn from_f64_lossy(x: f64) -> Self;

    fn one() -> Self {
        Self::from_count(1)
    }

    fn is_zero_value(&self) -> bool {
        self.agrees_with(&Self::zero())
    }

    fn square(&self) -> Self {
        self.clone() * self
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    /// Identity check: exact equality for rationals, relative tolerance
    /// [`FLOAT_REL_TOL`] (with an absolute floor of the same size) for floats.
    fn agrees_with(&self, other: &Self) -> bool;

    fn to_json(&self) -> Value;
}

impl Scalar for f64 {
    const EXACT: bool = false;

    fn zero() -> Self {
        0.0
    }

    fn from_count(n: usize) -> Self {
        n as f64
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn from_f64_lossy(x: f64) -> Self {
        x
    }

    fn agrees_with(&self, other: &Self) -> bool {
        let scale = self.abs().max(other.abs()).max(1.0);
        (self - other).abs() <= FLOAT_REL_TOL * scale
    }

    fn to_json(&self) -> Value {
        json!({ "approx": self })
    }
}

impl Scalar for BigRational {
    const EXACT: bool = true;

    fn zero() -> Self {
        Zero::zero()
    }

    fn one() -> Self {
        One::one()
    }

    fn from_count(n: usize) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn from_f64_lossy(x: f64) -> Self {
        BigRational::from_float(x).unwrap_or_else(Zero::zero)
    }

    fn is_zero_value(&self) -> bool {
        Zero::is_zero(self)
    }

    fn agrees_with(&self, other: &Self) -> bool {
        self == other
    }

    fn to_json(&self) -> Value {
        json!({
            "exact": self.to_string(),
            "numerator": self.numer().to_string(),
            "denominator": self.denom().to_string(),
            "approx": Scalar::to_f64(self),
        })
    }
}

/// Parses decimal text (`-12.5`, `3e-2`, `.25`) or a fraction (`5/12`) into
/// an exact rational. Never routes through binary floating point.
pub fn parse_decimal(text: &str) -> Result<BigRational> {
    let invalid = |reason: &str| Error::InvalidNumber {
        text: text.to_string(),
        reason: reason.to_string(),
    };
    let s = text.trim();
    if s.is_empty() {
        return Err(invalid("empty value"));
    }
    if let Some((num, den)) = s.split_once('/') {
        let num: BigInt = num.trim().parse().map_err(|_| invalid("bad numerator"))?;
        let den: BigInt = den.trim().parse().map_err(|_| invalid("bad denominator"))?;
        if den.is_zero() {
            return Err(invalid("zero denominator"));
        }
        return Ok(BigRational::new(num, den));
    }

    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(pos) => {
            let exp: i64 = s[pos + 1..]
                .parse()
                .map_err(|_| invalid("bad exponent"))?;
            (&s[..pos], exp)
        }
        None => (s, 0),
    };
    let (negative, digits) = match mantissa.as_bytes().first() {
        Some(b'-') => (true, &mantissa[1..]),
        Some(b'+') => (false, &mantissa[1..]),
        _ => (false, mantissa),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(invalid("no digits"));
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return Err(invalid("not a finite decimal number"));
    }
    if exponent.unsigned_abs() > 4096 {
        return Err(invalid("exponent out of range"));
    }

    let all_digits = format!("{int_part}{frac_part}");
    let mut value = BigRational::from_integer(all_digits.parse::<BigInt>().unwrap_or_default());
    let shift = exponent - frac_part.len() as i64;
    let ten = BigInt::from(10);
    let scale = BigRational::from_integer(num_traits::pow(ten, shift.unsigned_abs() as usize));
    if shift >= 0 {
        value *= scale;
    } else {
        value /= scale;
    }
    Ok(if negative { -value } else { value })
}

/// Renders a rational as a terminating decimal when one exists (denominator
/// of the form 2^a·5^b), else as `p/q`.
pub fn format_exact(value: &BigRational) -> String {
    let mut den = value.denom().clone();
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    let mut twos = 0usize;
    let mut fives = 0usize;
    while (&den % &two).is_zero() {
        den /= &two;
        twos += 1;
    }
    while (&den % &five).is_zero() {
        den /= &five;
        fives += 1;
    }
    if !den.is_one() {
        return value.to_string();
    }
    let places = twos.max(fives);
    if places == 0 {
        return value.numer().to_string();
    }
    let scaled = value * BigRational::from_integer(num_traits::pow(BigInt::from(10), places));
    let digits = scaled.to_integer().abs().to_string();
    let padded = format!("{digits:0>width$}", width = places + 1);
    let (int_part, frac_part) = padded.split_at(padded.len() - places);
    let sign = if value.is_negative() { "-" } else { "" };
    format!("{sign}{int_part}.{frac_part}")
}

/// Arithmetic mean. Identical values return that value unchanged, so a
/// constant float column has mean and variance free of summation rounding.
pub(crate) fn mean<T: Scalar>(values: &[T]) -> T {
    if let Some(first) = values.first() {
        if values.iter().all(|v| v == first) {
            return first.clone();
        }
    }
    let mut total = T::zero();
    for v in values {
        total = total + v;
    }
    total / T::from_count(values.len())
}

/// Sample variance with divisor `len − 1`. Caller guarantees `len ≥ 2`.
pub(crate) fn sample_variance<T: Scalar>(values: &[T]) -> T {
    let m = mean(values);
    let mut ss = T::zero();
    for v in values {
        let d = v.clone() - &m;
        ss = ss + &d.square();
    }
    ss / T::from_count(values.len() - 1)
}

pub(crate) fn sample_covariance<T: Scalar>(a: &[T], b: &[T]) -> T {
    let ma = mean(a);
    let mb = mean(b);
    let mut s = T::zero();
    for (x, y) in a.iter().zip(b) {
        s = s + &((x.clone() - &ma) * &(y.clone() - &mb));
    }
    s / T::from_count(a.len() - 1)
}
