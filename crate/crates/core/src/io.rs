//! JSON helpers. Integers travel as decimal strings so no precision is lost.

use std::fmt::Display;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::matrix::Matrix;

pub fn ser_display<S: Serializer, T: Display>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&v.to_string())
}

/// Integer that accepts either a JSON number or a decimal string.
#[derive(Deserialize)]
#[serde(untagged)]
enum IntRepr {
    Num(i64),
    Str(String),
}

impl IntRepr {
    fn into_bigint<E: serde::de::Error>(self) -> Result<BigInt, E> {
        match self {
            IntRepr::Num(n) => Ok(BigInt::from(n)),
            IntRepr::Str(s) => BigInt::from_str(s.trim()).map_err(|e| E::custom(format!("bad integer {s:?}: {e}"))),
        }
    }
}

pub mod int {
    use super::*;

    pub fn serialize<S: Serializer>(v: &BigInt, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigInt, D::Error> {
        IntRepr::deserialize(d)?.into_bigint()
    }
}

pub mod int_vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[BigInt], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|x| x.to_string()).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BigInt>, D::Error> {
        Vec::<IntRepr>::deserialize(d)?.into_iter().map(|x| x.into_bigint()).collect()
    }
}

pub mod int_matrix {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Matrix<BigInt>, s: S) -> Result<S::Ok, S::Error> {
        m.to_rows()
            .iter()
            .map(|r| r.iter().map(|x| x.to_string()).collect::<Vec<_>>())
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix<BigInt>, D::Error> {
        let rows = Vec::<Vec<IntRepr>>::deserialize(d)?;
        let rows = rows
            .into_iter()
            .map(|r| r.into_iter().map(|x| x.into_bigint()).collect::<Result<Vec<_>, D::Error>>())
            .collect::<Result<Vec<_>, _>>()?;
        Matrix::from_rows(rows).map_err(D::Error::custom)
    }
}

pub mod opt_int_matrix {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "int_matrix")] Matrix<BigInt>);

    pub fn serialize<S: Serializer>(m: &Option<Matrix<BigInt>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(|m| Wrap(m.clone())).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Matrix<BigInt>>, D::Error> {
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

pub mod opt_int {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<BigInt>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref().map(|x| x.to_string()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<BigInt>, D::Error> {
        Option::<IntRepr>::deserialize(d)?.map(|x| x.into_bigint()).transpose()
    }
}

pub mod int_matrix_vec {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "int_matrix")] Matrix<BigInt>);

    pub fn serialize<S: Serializer>(v: &[Matrix<BigInt>], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|m| Wrap(m.clone())).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Matrix<BigInt>>, D::Error> {
        Ok(Vec::<Wrap>::deserialize(d)?.into_iter().map(|w| w.0).collect())
    }
}

/// Rational as a `[numerator, denominator]` pair of decimal strings.
pub fn rational_to_pair(r: &BigRational) -> [String; 2] {
    [r.numer().to_string(), r.denom().to_string()]
}

pub fn pair_to_rational<E: serde::de::Error>(num: BigInt, den: BigInt) -> Result<BigRational, E> {
    if den.is_zero() {
        return Err(E::custom("zero denominator"));
    }
    Ok(BigRational::new(num, den))
}

pub mod rat_vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[BigRational], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(rational_to_pair).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BigRational>, D::Error> {
        let pairs = Vec::<(IntRepr, IntRepr)>::deserialize(d)?;
        pairs
            .into_iter()
            .map(|(n, q)| pair_to_rational(n.into_bigint()?, q.into_bigint()?))
            .collect()
    }
}

/// Parses `N/D` or `N` into an exact rational.
pub fn parse_rational(s: &str) -> Result<BigRational, String> {
    let s = s.trim();
    let (n, d) = match s.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (s, "1"),
    };
    let n = BigInt::from_str(n).map_err(|e| format!("bad numerator in {s:?}: {e}"))?;
    let d = BigInt::from_str(d).map_err(|e| format!("bad denominator in {s:?}: {e}"))?;
    if d.is_zero() {
        return Err(format!("zero denominator in {s:?}"));
    }
    Ok(BigRational::new(n, d))
}

pub fn format_rational(r: &BigRational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}
