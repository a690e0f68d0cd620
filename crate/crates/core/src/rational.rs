//! Exact rational numbers used for every time, length, speed and ratio.
//!
//! [`Rational`] wraps an arbitrary-precision `BigRational`. It is always kept
//! in lowest terms with a positive denominator, so equal values have equal
//! representations and serialization is canonical.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};
use std::str::FromStr;

use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A point on the (abstract) time axis.
pub type TimePoint = Rational;
/// A length of time or an amount of work.
pub type Duration = Rational;

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Rational(BigRational);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseRationalError {
    #[error("empty rational literal")]
    Empty,
    #[error("invalid rational literal `{0}`")]
    Invalid(String),
    #[error("zero denominator in `{0}`")]
    ZeroDenominator(String),
}

impl Rational {
    pub fn new(numer: i64, denom: i64) -> Self {
        assert!(denom != 0, "zero denominator");
        Rational(BigRational::new(BigInt::from(numer), BigInt::from(denom)))
    }

    pub fn from_bigints(numer: BigInt, denom: BigInt) -> Self {
        assert!(!denom.is_zero(), "zero denominator");
        Rational(BigRational::new(numer, denom))
    }

    pub fn integer(value: i64) -> Self {
        Rational(BigRational::from_integer(BigInt::from(value)))
    }

    pub fn zero() -> Self {
        Rational(BigRational::zero())
    }

    pub fn one() -> Self {
        Rational(BigRational::one())
    }

    /// `2^exp`, exact for negative exponents too.
    pub fn pow2(exp: i64) -> Self {
        let magnitude = BigInt::one() << exp.unsigned_abs();
        if exp >= 0 {
            Rational(BigRational::from_integer(magnitude))
        } else {
            Rational(BigRational::new(BigInt::one(), magnitude))
        }
    }

    pub fn numer(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.0.denom()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }

    pub fn abs(&self) -> Self {
        Rational(self.0.abs())
    }

    pub fn recip(&self) -> Self {
        Rational(self.0.recip())
    }

    pub fn floor(&self) -> BigInt {
        self.0.floor().to_integer()
    }

    pub fn ceil(&self) -> BigInt {
        self.0.ceil().to_integer()
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// Rounds `value` to the nearest multiple of `2^-bits`.
    pub fn from_f64_dyadic(value: f64, bits: u32) -> Self {
        let scale = (2.0f64).powi(bits as i32);
        let scaled = (value * scale).round();
        let numer = BigInt::from(scaled as i128);
        Rational::from_bigints(numer, BigInt::one() << bits)
    }

    /// `floor(log2(self))` for a strictly positive value, computed exactly.
    pub fn floor_log2(&self) -> i64 {
        assert!(self.is_positive(), "floor_log2 of non-positive value");
        let n = self.numer();
        let d = self.denom();
        let mut k = n.bits() as i64 - d.bits() as i64;
        // 2^k <= n/d < 2^(k+1), adjusted by at most one step.
        if Rational::pow2(k) > *self {
            k -= 1;
        }
        if Rational::pow2(k + 1) <= *self {
            k += 1;
        }
        k
    }

    pub fn min_of<'a>(values: impl IntoIterator<Item = &'a Rational>) -> Option<Rational> {
        values.into_iter().min().cloned()
    }

    pub fn max_of<'a>(values: impl IntoIterator<Item = &'a Rational>) -> Option<Rational> {
        values.into_iter().max().cloned()
    }

    /// Greatest common divisor of two non-negative rationals: the largest `g`
    /// such that both are integer multiples of `g`.
    pub fn gcd(&self, other: &Rational) -> Rational {
        let den = self.denom().lcm(other.denom());
        let a = self.numer() * (&den / self.denom());
        let b = other.numer() * (&den / other.denom());
        Rational::from_bigints(a.gcd(&b), den)
    }

    /// Exact decimal expansion, if the value has one (denominator of the form
    /// `2^a 5^b`).
    pub fn to_decimal_string(&self) -> Option<String> {
        let mut den = self.denom().clone();
        let two = BigInt::from(2);
        let five = BigInt::from(5);
        let (mut twos, mut fives) = (0u32, 0u32);
        while (&den % &two).is_zero() {
            den /= &two;
            twos += 1;
        }
        while (&den % &five).is_zero() {
            den /= &five;
            fives += 1;
        }
        if !den.is_one() {
            return None;
        }
        let digits = twos.max(fives);
        let scaled = self.numer() * num_traits::pow(BigInt::from(10), digits as usize) / self.denom();
        if digits == 0 {
            return Some(scaled.to_string());
        }
        let negative = scaled.sign() == Sign::Minus;
        let mut text = scaled.abs().to_string();
        while text.len() <= digits as usize {
            text.insert(0, '0');
        }
        let point = text.len() - digits as usize;
        text.insert(point, '.');
        if negative {
            text.insert(0, '-');
        }
        Some(text)
    }

    /// Decimal approximation for human-facing columns.
    pub fn approx(&self, places: usize) -> String {
        format!("{:.*}", places, self.to_f64())
    }

    pub fn as_big(&self) -> &BigRational {
        &self.0
    }
}

impl From<i64> for Rational {
    fn from(value: i64) -> Self {
        Rational::integer(value)
    }
}

impl From<BigRational> for Rational {
    fn from(value: BigRational) -> Self {
        Rational(value)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl fmt::Debug for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Rational {
    type Err = ParseRationalError;

    /// Accepts `n`, `n/d` and plain decimals such as `-0.125`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Err(ParseRationalError::Empty);
        }
        let invalid = || ParseRationalError::Invalid(s.to_string());
        if let Some((n, d)) = s.split_once('/') {
            let n: BigInt = n.trim().parse().map_err(|_| invalid())?;
            let d: BigInt = d.trim().parse().map_err(|_| invalid())?;
            if d.is_zero() {
                return Err(ParseRationalError::ZeroDenominator(s.to_string()));
            }
            return Ok(Rational::from_bigints(n, d));
        }
        if let Some((int_part, frac_part)) = s.split_once('.') {
            if frac_part.is_empty() || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
                return Err(invalid());
            }
            let negative = int_part.starts_with('-');
            let int_digits = int_part.trim_start_matches(['-', '+']);
            if !int_digits.bytes().all(|b| b.is_ascii_digit()) {
                return Err(invalid());
            }
            let digits = format!("{}{}", int_digits, frac_part);
            let mut numer: BigInt = digits.parse().map_err(|_| invalid())?;
            if negative {
                numer = -numer;
            }
            let denom = num_traits::pow(BigInt::from(10), frac_part.len());
            return Ok(Rational::from_bigints(numer, denom));
        }
        let n: BigInt = s.parse().map_err(|_| invalid())?;
        Ok(Rational(BigRational::from_integer(n)))
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident) => {
        impl $trait<Rational> for Rational {
            type Output = Rational;
            fn $method(self, rhs: Rational) -> Rational {
                Rational(self.0.$method(rhs.0))
            }
        }
        impl<'a> $trait<&'a Rational> for Rational {
            type Output = Rational;
            fn $method(self, rhs: &'a Rational) -> Rational {
                Rational(self.0.$method(&rhs.0))
            }
        }
        impl<'a> $trait<Rational> for &'a Rational {
            type Output = Rational;
            fn $method(self, rhs: Rational) -> Rational {
                Rational((&self.0).$method(rhs.0))
            }
        }
        impl<'a, 'b> $trait<&'b Rational> for &'a Rational {
            type Output = Rational;
            fn $method(self, rhs: &'b Rational) -> Rational {
                Rational((&self.0).$method(&rhs.0))
            }
        }
    };
}

binop!(Add, add);
binop!(Sub, sub);
binop!(Mul, mul);
binop!(Div, div);

impl Neg for Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        Rational(-self.0)
    }
}

impl<'a> Neg for &'a Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        Rational(-&self.0)
    }
}

impl AddAssign<&Rational> for Rational {
    fn add_assign(&mut self, rhs: &Rational) {
        self.0 += &rhs.0;
    }
}

impl AddAssign<Rational> for Rational {
    fn add_assign(&mut self, rhs: Rational) {
        self.0 += rhs.0;
    }
}

impl SubAssign<&Rational> for Rational {
    fn sub_assign(&mut self, rhs: &Rational) {
        self.0 -= &rhs.0;
    }
}

impl SubAssign<Rational> for Rational {
    fn sub_assign(&mut self, rhs: Rational) {
        self.0 -= rhs.0;
    }
}

impl Sum for Rational {
    fn sum<I: Iterator<Item = Rational>>(iter: I) -> Rational {
        iter.fold(Rational::zero(), |acc, x| acc + x)
    }
}

impl<'a> Sum<&'a Rational> for Rational {
    fn sum<I: Iterator<Item = &'a Rational>>(iter: I) -> Rational {
        iter.fold(Rational::zero(), |acc, x| acc + x)
    }
}

fn bigint_to_json(value: &BigInt) -> serde_json::Value {
    match value.to_i64() {
        Some(v) => serde_json::Value::from(v),
        None => serde_json::Value::from(value.to_string()),
    }
}

/// Serialized as an exact decimal string when one exists, otherwise as an
/// integer pair `{"num": n, "den": d}`.
impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self.to_decimal_string() {
            Some(text) => serializer.serialize_str(&text),
            None => {
                let mut map = serializer.serialize_map(Some(2))?;
                map.serialize_entry("num", &bigint_to_json(self.numer()))?;
                map.serialize_entry("den", &bigint_to_json(self.denom()))?;
                map.end()
            }
        }
    }
}

struct RationalVisitor;

fn json_to_bigint<E: de::Error>(value: serde_json::Value) -> Result<BigInt, E> {
    match value {
        serde_json::Value::Number(n) => match n.as_i64() {
            Some(v) => Ok(BigInt::from(v)),
            None => Err(E::custom(format!("non-integer component {}", n))),
        },
        serde_json::Value::String(s) => s
            .trim()
            .parse()
            .map_err(|_| E::custom(format!("invalid integer component `{}`", s))),
        other => Err(E::custom(format!("invalid integer component {}", other))),
    }
}

impl<'de> Visitor<'de> for RationalVisitor {
    type Value = Rational;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a decimal string, an integer, or a {num, den} pair")
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Rational, E> {
        v.parse().map_err(E::custom)
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Rational, E> {
        Ok(Rational::integer(v))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Rational, E> {
        Ok(Rational(BigRational::from_integer(BigInt::from(v))))
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Rational, E> {
        Err(E::custom(format!(
            "floating point literal {} is not exact; use a decimal string",
            v
        )))
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Rational, A::Error> {
        let mut num = None;
        let mut den = None;
        while let Some(key) = map.next_key::<String>()? {
            let value: serde_json::Value = map.next_value()?;
            match key.as_str() {
                "num" => num = Some(json_to_bigint(value)?),
                "den" => den = Some(json_to_bigint(value)?),
                other => return Err(de::Error::unknown_field(other, &["num", "den"])),
            }
        }
        let num = num.ok_or_else(|| de::Error::missing_field("num"))?;
        let den = den.ok_or_else(|| de::Error::missing_field("den"))?;
        if den.is_zero() {
            return Err(de::Error::custom("zero denominator"));
        }
        Ok(Rational::from_bigints(num, den))
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        deserializer.deserialize_any(RationalVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(n: i64, d: i64) -> Rational {
        Rational::new(n, d)
    }

    #[test]
    fn parse_forms() {
        assert_eq!("3".parse::<Rational>().unwrap(), q(3, 1));
        assert_eq!("6/4".parse::<Rational>().unwrap(), q(3, 2));
        assert_eq!("-0.125".parse::<Rational>().unwrap(), q(-1, 8));
        assert_eq!("2.50".parse::<Rational>().unwrap(), q(5, 2));
        assert!("1/0".parse::<Rational>().is_err());
        assert!("abc".parse::<Rational>().is_err());
        assert!("1.".parse::<Rational>().is_err());
    }

    #[test]
    fn decimal_strings() {
        assert_eq!(q(5, 2).to_decimal_string().as_deref(), Some("2.5"));
        assert_eq!(q(-1, 40).to_decimal_string().as_deref(), Some("-0.025"));
        assert_eq!(q(7, 1).to_decimal_string().as_deref(), Some("7"));
        assert_eq!(q(1, 3).to_decimal_string(), None);
    }

    #[test]
    fn serde_forms() {
        assert_eq!(serde_json::to_string(&q(1, 4)).unwrap(), "\"0.25\"");
        assert_eq!(serde_json::to_string(&q(1, 3)).unwrap(), r#"{"num":1,"den":3}"#);
        let parsed: Rational = serde_json::from_str(r#"{"num": 2, "den": 6}"#).unwrap();
        assert_eq!(parsed, q(1, 3));
        let parsed: Rational = serde_json::from_str("12").unwrap();
        assert_eq!(parsed, q(12, 1));
        assert!(serde_json::from_str::<Rational>("0.5").is_err());
    }

    #[test]
    fn floor_log2_exact() {
        assert_eq!(q(1, 1).floor_log2(), 0);
        assert_eq!(q(2, 1).floor_log2(), 1);
        assert_eq!(q(3, 1).floor_log2(), 1);
        assert_eq!(q(4, 1).floor_log2(), 2);
        assert_eq!(q(1, 2).floor_log2(), -1);
        assert_eq!(q(3, 4).floor_log2(), -1);
        assert_eq!(q(1, 3).floor_log2(), -2);
        assert_eq!(q(1023, 1024).floor_log2(), -1);
    }

    #[test]
    fn rational_gcd() {
        assert_eq!(q(1, 2).gcd(&q(3, 4)), q(1, 4));
        assert_eq!(q(2, 1).gcd(&q(3, 1)), q(1, 1));
        assert_eq!(q(0, 1).gcd(&q(3, 2)), q(3, 2));
    }

    #[test]
    fn dyadic_rounding() {
        assert_eq!(Rational::from_f64_dyadic(64.0 - 1e-12, 20), q(64, 1));
        assert_eq!(Rational::from_f64_dyadic(0.75, 20), q(3, 4));
    }

    proptest! {
        #[test]
        fn serde_round_trip(n in -10_000i64..10_000, d in 1i64..5_000) {
            let value = q(n, d);
            let text = serde_json::to_string(&value).unwrap();
            let back: Rational = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back, value.clone());
            let shown: Rational = value.to_string().parse().unwrap();
            prop_assert_eq!(shown, value);
        }

        #[test]
        fn floor_log2_brackets(n in 1i64..1_000_000, d in 1i64..1_000_000) {
            let value = q(n, d);
            let k = value.floor_log2();
            prop_assert!(Rational::pow2(k) <= value);
            prop_assert!(value < Rational::pow2(k + 1));
        }
    }
}
