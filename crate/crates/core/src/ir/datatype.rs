// SPDX-License-Identifier: Apache-2.0

//! Value domains of graph tensors.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use super::Rational;

/// Value domain of a tensor.
///
/// Non-float domains are all dyadic: a value is `mantissa * 2^-frac_bits()`
/// with the mantissa drawn from [`DataType::mantissa_range`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DataType {
    Float32,
    Int { bits: u8, signed: bool },
    /// Exactly {-1, +1}.
    Bipolar,
    /// `bits` total bits of which `int_bits` are integer bits (sign included
    /// when signed).
    Fixed { bits: u8, int_bits: u8, signed: bool },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid datatype `{0}`")]
pub struct ParseDataTypeError(pub String);

impl DataType {
    pub const fn int(bits: u8) -> Self {
        DataType::Int { bits, signed: true }
    }

    pub const fn uint(bits: u8) -> Self {
        DataType::Int { bits, signed: false }
    }

    pub const fn fixed(bits: u8, int_bits: u8) -> Self {
        DataType::Fixed { bits, int_bits, signed: true }
    }

    pub fn is_float(&self) -> bool {
        matches!(self, DataType::Float32)
    }

    pub fn is_integer(&self) -> bool {
        matches!(self, DataType::Int { .. } | DataType::Bipolar)
    }

    /// Storage width in bits. FLOAT32 is 32, BIPOLAR is 1.
    pub fn bits(&self) -> u32 {
        match *self {
            DataType::Float32 => 32,
            DataType::Int { bits, .. } | DataType::Fixed { bits, .. } => bits as u32,
            DataType::Bipolar => 1,
        }
    }

    pub fn signed(&self) -> bool {
        match *self {
            DataType::Float32 | DataType::Bipolar => true,
            DataType::Int { signed, .. } | DataType::Fixed { signed, .. } => signed,
        }
    }

    /// Number of fractional bits; the LSB weight is `2^-frac_bits`.
    pub fn frac_bits(&self) -> u32 {
        match *self {
            DataType::Fixed { bits, int_bits, .. } => (bits - int_bits) as u32,
            _ => 0,
        }
    }

    /// Inclusive range of the integer mantissa, `None` for FLOAT32.
    pub fn mantissa_range(&self) -> Option<(i64, i64)> {
        match *self {
            DataType::Float32 => None,
            DataType::Bipolar => Some((-1, 1)),
            DataType::Int { bits, signed } | DataType::Fixed { bits, signed, .. } => {
                Some(int_range(bits as u32, signed))
            }
        }
    }

    /// Whether `mantissa` is a member of the domain.
    pub fn contains_mantissa(&self, mantissa: i64) -> bool {
        match self {
            DataType::Float32 => true,
            DataType::Bipolar => mantissa == -1 || mantissa == 1,
            _ => {
                let (lo, hi) = self.mantissa_range().unwrap();
                (lo..=hi).contains(&mantissa)
            }
        }
    }

    /// Smallest representable value.
    pub fn min(&self) -> BigRational {
        match self.mantissa_range() {
            Some((lo, _)) => self.mantissa_to_big(lo),
            None => -float32_max(),
        }
    }

    /// Largest representable value.
    pub fn max(&self) -> BigRational {
        match self.mantissa_range() {
            Some((_, hi)) => self.mantissa_to_big(hi),
            None => float32_max(),
        }
    }

    fn mantissa_to_big(&self, m: i64) -> BigRational {
        BigRational::new(BigInt::from(m), BigInt::one() << self.frac_bits())
    }

    /// Real value of a mantissa as an exact rational.
    pub fn mantissa_value(&self, m: i64) -> Rational {
        Rational::new(m, 1i64 << self.frac_bits())
    }

    /// Real value of a mantissa in f64 (exact for every non-float domain).
    pub fn mantissa_to_f64(&self, m: i64) -> f64 {
        m as f64 / (1u64 << self.frac_bits()) as f64
    }

    /// Narrowest integer-mantissa type with `frac` fractional bits covering
    /// `[lo, hi]`. Signed unless `lo >= 0` and `allow_unsigned` is set.
    pub fn covering(lo: i64, hi: i64, frac: u32, allow_unsigned: bool) -> DataType {
        let signed = !(allow_unsigned && lo >= 0);
        let mut bits = 1u32;
        while {
            let (a, b) = int_range(bits, signed);
            !(a <= lo && hi <= b)
        } {
            bits += 1;
        }
        if frac == 0 {
            DataType::Int { bits: bits as u8, signed }
        } else {
            let bits = bits.max(frac);
            DataType::Fixed { bits: bits as u8, int_bits: (bits - frac) as u8, signed }
        }
    }

    /// Narrowest signed type with `frac` fractional bits covering `[lo, hi]`.
    pub fn signed_covering(lo: i64, hi: i64, frac: u32) -> DataType {
        Self::covering(lo, hi, frac, false)
    }

    pub(crate) fn check(&self) -> Result<(), String> {
        match *self {
            DataType::Float32 | DataType::Bipolar => Ok(()),
            DataType::Int { bits, .. } if (1..=32).contains(&bits) => Ok(()),
            DataType::Fixed { bits, int_bits, .. } if (1..=32).contains(&bits) && int_bits <= bits => Ok(()),
            _ => Err(format!("datatype {self} out of range")),
        }
    }
}

pub(crate) fn int_range(bits: u32, signed: bool) -> (i64, i64) {
    if signed {
        (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1)
    } else {
        (0, (1i64 << bits) - 1)
    }
}

fn float32_max() -> BigRational {
    // (2^24 - 1) * 2^104
    let m = (BigInt::one() << 24u32) - BigInt::one();
    BigRational::from_integer(m << 104u32)
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DataType::Float32 => write!(f, "FLOAT32"),
            DataType::Bipolar => write!(f, "BIPOLAR"),
            DataType::Int { bits, signed: true } => write!(f, "INT{bits}"),
            DataType::Int { bits, signed: false } => write!(f, "UINT{bits}"),
            DataType::Fixed { bits, int_bits, signed: true } => write!(f, "FIXED<{bits},{int_bits}>"),
            DataType::Fixed { bits, int_bits, signed: false } => write!(f, "UFIXED<{bits},{int_bits}>"),
        }
    }
}

impl FromStr for DataType {
    type Err = ParseDataTypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseDataTypeError(s.to_string());
        let dt = match s {
            "FLOAT32" => DataType::Float32,
            "BIPOLAR" => DataType::Bipolar,
            _ => {
                if let Some(rest) = s.strip_prefix("UINT") {
                    DataType::uint(rest.parse().map_err(|_| err())?)
                } else if let Some(rest) = s.strip_prefix("INT") {
                    DataType::int(rest.parse().map_err(|_| err())?)
                } else {
                    let (signed, rest) = if let Some(r) = s.strip_prefix("UFIXED<") {
                        (false, r)
                    } else if let Some(r) = s.strip_prefix("FIXED<") {
                        (true, r)
                    } else {
                        return Err(err());
                    };
                    let inner = rest.strip_suffix('>').ok_or_else(err)?;
                    let (a, b) = inner.split_once(',').ok_or_else(err)?;
                    DataType::Fixed {
                        bits: a.trim().parse().map_err(|_| err())?,
                        int_bits: b.trim().parse().map_err(|_| err())?,
                        signed,
                    }
                }
            }
        };
        dt.check().map_err(|_| err())?;
        Ok(dt)
    }
}

impl serde::Serialize for DataType {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for DataType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Whether a rational is an exact power of two (`2^e` for integer `e`).
pub(crate) fn power_of_two_exponent(r: &Rational) -> Option<i32> {
    if *r <= Rational::zero() {
        return None;
    }
    let (n, d) = (*r.numer(), *r.denom());
    if n == 1 && (d as u64).is_power_of_two() {
        Some(-(d.trailing_zeros() as i32))
    } else if d == 1 && (n as u64).is_power_of_two() {
        Some(n.trailing_zeros() as i32)
    } else {
        None
    }
}
