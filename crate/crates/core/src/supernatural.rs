//! Supernatural numbers and the ECRS existence decision.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SupernaturalError {
    /// A factor is zero.
    #[error("factor {0} is not a positive integer")]
    InvalidFactor(u64),
    /// A prime appears in both the finite and infinite parts.
    #[error("prime {0} is listed with both finite and infinite multiplicity")]
    OverlappingPrime(u64),
    /// A listed key is composite.
    #[error("{0} is not prime")]
    NotPrime(u64),
}

/// Formal product of primes with multiplicities in N or infinity.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSupernatural")]
pub struct SupernaturalNumber {
    pub finite: BTreeMap<u64, u32>,
    pub infinite: BTreeSet<u64>,
}

#[derive(Deserialize)]
struct RawSupernatural {
    #[serde(default)]
    finite: BTreeMap<u64, u32>,
    #[serde(default)]
    infinite: BTreeSet<u64>,
}

impl TryFrom<RawSupernatural> for SupernaturalNumber {
    type Error = SupernaturalError;

    fn try_from(raw: RawSupernatural) -> Result<Self, Self::Error> {
        SupernaturalNumber::new(raw.finite, raw.infinite)
    }
}

impl SupernaturalNumber {
    /// Validates primality and disjointness; zero multiplicities are dropped.
    pub fn new(finite: BTreeMap<u64, u32>, infinite: BTreeSet<u64>) -> Result<Self, SupernaturalError> {
        for &p in finite.keys().chain(infinite.iter()) {
            if !is_prime(p) {
                return Err(SupernaturalError::NotPrime(p));
            }
        }
        if let Some(&p) = finite.keys().find(|p| infinite.contains(p)) {
            return Err(SupernaturalError::OverlappingPrime(p));
        }
        let finite = finite.into_iter().filter(|&(_, e)| e > 0).collect();
        Ok(SupernaturalNumber { finite, infinite })
    }

    pub fn trivial() -> Self {
        SupernaturalNumber::default()
    }

    /// Supernatural number of `Z[1/p : p in primes]`.
    pub fn with_infinite(primes: &[u64]) -> Result<Self, SupernaturalError> {
        SupernaturalNumber::new(BTreeMap::new(), primes.iter().copied().collect())
    }

    pub fn has_infinite_prime(&self) -> bool {
        !self.infinite.is_empty()
    }

    /// Multiplicity of `p`; `None` means infinite.
    pub fn multiplicity(&self, p: u64) -> Option<u32> {
        if self.infinite.contains(&p) {
            None
        } else {
            Some(self.finite.get(&p).copied().unwrap_or(0))
        }
    }
}

impl fmt::Display for SupernaturalNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = self.finite.iter().map(|(p, e)| format!("{p}^{e}")).collect();
        parts.extend(self.infinite.iter().map(|p| format!("{p}^inf")));
        if parts.is_empty() {
            write!(f, "1")
        } else {
            write!(f, "{}", parts.join(" * "))
        }
    }
}

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2u64;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

/// Trial-division factorization, primes ascending.
pub fn factorize(mut n: u64) -> BTreeMap<u64, u32> {
    let mut out = BTreeMap::new();
    let mut d = 2u64;
    while d * d <= n {
        while n.is_multiple_of(d) {
            *out.entry(d).or_insert(0) += 1;
            n /= d;
        }
        d += 1;
    }
    if n > 1 {
        *out.entry(n).or_insert(0) += 1;
    }
    out
}

/// Multiplicities of the product of a finite factor prefix `p_2, p_3, ...`.
pub fn from_factors(seq: &[u64]) -> Result<SupernaturalNumber, SupernaturalError> {
    let mut finite = BTreeMap::new();
    for &p in seq {
        if p == 0 {
            return Err(SupernaturalError::InvalidFactor(p));
        }
        for (q, e) in factorize(p) {
            *finite.entry(q).or_insert(0) += e;
        }
    }
    Ok(SupernaturalNumber { finite, infinite: BTreeSet::new() })
}

pub fn is_p_divisible(u: &SupernaturalNumber, p: u64) -> bool {
    u.infinite.contains(&p)
}

/// Order of `U / lU`. Primes of infinite multiplicity act invertibly and drop out.
pub fn quotient_order(u: &SupernaturalNumber, l: u64) -> u64 {
    factorize(l)
        .into_iter()
        .filter(|(p, _)| !u.infinite.contains(p))
        .map(|(p, e)| p.pow(e))
        .product()
}

/// A cardinal that is either a natural number or countably infinite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cardinal {
    Finite(u64),
    Infinite,
}

impl Cardinal {
    pub fn is_finite(self) -> bool {
        matches!(self, Cardinal::Finite(_))
    }
}

impl fmt::Display for Cardinal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cardinal::Finite(n) => write!(f, "{n}"),
            Cardinal::Infinite => write!(f, "inf"),
        }
    }
}

impl std::str::FromStr for Cardinal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "inf" | "infinite" | "infinity" => Ok(Cardinal::Infinite),
            t => t.parse().map(Cardinal::Finite).map_err(|e| format!("bad cardinal {t:?}: {e}")),
        }
    }
}

/// Size of the realization matrices promised by a positive decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RealizationSize {
    /// Every realization has exactly this size.
    Exactly(u64),
    /// Some realization of bounded size exists.
    Bounded,
    /// Every realization has unbounded size.
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionReason {
    /// The trace group is p-divisible for some prime; no rank constraint.
    PDivisible,
    /// No infinite primes and rank G does not exceed the index.
    RankWithinIndex,
    /// No infinite primes and rank G exceeds the index.
    RankExceedsIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EcrsDecision {
    pub exists: bool,
    pub size: Option<RealizationSize>,
    pub reason: DecisionReason,
}

/// Decides whether an ECRS realization exists, given `lambda = |tau(G)/tau(H)|`.
pub fn decide_ecrs(rank_g: Cardinal, u: &SupernaturalNumber, lambda: Cardinal) -> EcrsDecision {
    if u.has_infinite_prime() {
        // Bounded matrices force finite rank, so both must be finite.
        let size = if lambda.is_finite() && rank_g.is_finite() {
            RealizationSize::Bounded
        } else {
            RealizationSize::Unbounded
        };
        return EcrsDecision { exists: true, size: Some(size), reason: DecisionReason::PDivisible };
    }
    if rank_g > lambda {
        return EcrsDecision { exists: false, size: None, reason: DecisionReason::RankExceedsIndex };
    }
    let size = match lambda {
        Cardinal::Finite(l) => RealizationSize::Exactly(l),
        Cardinal::Infinite => RealizationSize::Unbounded,
    };
    EcrsDecision { exists: true, size: Some(size), reason: DecisionReason::RankWithinIndex }
}
