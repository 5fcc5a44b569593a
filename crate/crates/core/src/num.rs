//! Scalar abstractions shared by the numeric parts of the crate.
//!
//! Money arithmetic (taxation, settlement) is written against [`Scalar`], which
//! is implemented by `f32`, `f64` and exact rationals. Geometry and statistics
//! need transcendental functions and use [`Real`] instead.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{Float, FromPrimitive, Num, Signed, ToPrimitive};

/// A number that supports exact field arithmetic and conversion to and from
/// primitive floats.
pub trait Scalar:
    Num + Signed + Clone + PartialOrd + Debug + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// Converts from `f64`. For rational types the conversion is exact.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::zero)
    }

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn from_count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("usize fits every scalar")
    }

    fn max_of(a: Self, b: Self) -> Self {
        if a >= b {
            a
        } else {
            b
        }
    }

    fn min_of(a: Self, b: Self) -> Self {
        if a <= b {
            a
        } else {
            b
        }
    }

    fn clamp_to(self, lo: Self, hi: Self) -> Self {
        Self::min_of(Self::max_of(self, lo), hi)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
impl Scalar for BigRational {}
impl Scalar for Ratio<i64> {}

/// floating point: f32 or f64
pub trait Real: Scalar + Float {}
impl Real for f32 {}
impl Real for f64 {}

/// Exact decimal parse into a rational, e.g. `"0.22"` -> 22/100.
pub fn parse_exact_decimal(text: &str) -> Option<BigRational> {
    let text = text.trim();
    let (neg, digits) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let joined = format!("{}{}", int_part, frac_part);
    let numer: BigInt = joined.parse().ok()?;
    let denom = BigInt::from(10u32).pow(frac_part.len() as u32);
    let r = BigRational::new(numer, denom);
    Some(if neg { -r } else { r })
}
