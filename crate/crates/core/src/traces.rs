//! Traces of ECS realizations, goodness of rows and equal-trace splitting.

use std::collections::BTreeSet;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;

use crate::exact_core::{content, right_kernel_basis};
use crate::matrix::{dot, Matrix};
use crate::perron::{common_column_sum, is_primitive};
use crate::realization::RealizationSeq;
use crate::supernatural::{factorize, quotient_order, SupernaturalNumber};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    /// A stage lacks equal column sums.
    #[error("stage {0} does not have equal column sums")]
    NotECS(usize),
    /// The level is outside the prefix.
    #[error("level {0} is out of range")]
    BadLevel(usize),
    /// The vector length differs from the level size.
    #[error("vector has length {found}, level has size {expected}")]
    SizeMismatch { expected: usize, found: usize },
    /// The row is identically zero.
    #[error("row is zero")]
    ZeroRow,
    /// The row has a negative entry.
    #[error("row has a negative entry")]
    Negative,
    /// The requested total exceeds the available bound.
    #[error("requested sum {requested} exceeds available {available}")]
    OutOfRange { requested: String, available: String },
}

fn column_sums(seq: &RealizationSeq) -> Result<Vec<BigInt>, TraceError> {
    seq.stages
        .iter()
        .enumerate()
        .map(|(n, s)| common_column_sum(&s.matrix).ok_or(TraceError::NotECS(n)))
        .collect()
}

/// `1^T w / prod_{i<j} c_i` for `w` at 1-based level `j`.
pub fn trace_of_realization(seq: &RealizationSeq, w: &[BigInt], level: usize) -> Result<BigRational, TraceError> {
    let c = column_sums(seq)?;
    let size = seq.level_size(level).ok_or(TraceError::BadLevel(level))?;
    if w.len() != size {
        return Err(TraceError::SizeMismatch { expected: size, found: w.len() });
    }
    let num: BigInt = w.iter().sum();
    let den: BigInt = c[..level - 1].iter().product();
    Ok(BigRational::new(num, den))
}

/// A row trace on Z^n is good iff its nonzero entries are all equal.
pub fn is_good_row(w: &[BigInt]) -> Result<bool, TraceError> {
    if w.iter().any(|x| x.is_negative()) {
        return Err(TraceError::Negative);
    }
    let c = content(w);
    if c.is_zero() {
        return Err(TraceError::ZeroRow);
    }
    Ok(w.iter().all(|x| x.is_zero() || *x == c))
}

/// Some `c` with `0 <= c <= b` and `1^T c = m`.
pub fn rebalance(b: &[BigInt], m: &BigInt) -> Result<Vec<BigInt>, TraceError> {
    if b.iter().any(|x| x.is_negative()) {
        return Err(TraceError::Negative);
    }
    let total: BigInt = b.iter().sum();
    if m.is_negative() || *m > total {
        return Err(TraceError::OutOfRange { requested: m.to_string(), available: total.to_string() });
    }
    // Start from c = b and move units out until the sum is m.
    let mut excess = total - m;
    let mut c = b.to_vec();
    for x in c.iter_mut() {
        let take = excess.clone().min(x.clone());
        *x -= &take;
        excess -= take;
    }
    Ok(c)
}

/// 0/1 matrix of shape `(sum a) x n` whose column `j` holds `a_j` ones.
pub fn split_to_equal_trace(a: &[u64]) -> Matrix<BigInt> {
    let total: u64 = a.iter().sum();
    let mut m = Matrix::zeros(total as usize, a.len());
    let mut row = 0usize;
    for (j, &aj) in a.iter().enumerate() {
        for _ in 0..aj {
            m.set(row, j, BigInt::one());
            row += 1;
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NearlySplitReport {
    pub has_common_right_evec: bool,
    pub has_common_left_evec: bool,
    pub nearly_split_implied: bool,
}

/// Common eigenvector space of every `A_n` with eigenvalue `p_n`.
fn common_eigenspace(seq: &RealizationSeq, left: bool) -> Vec<Vec<BigInt>> {
    let Some(first) = seq.stages.first() else {
        return Vec::new();
    };
    let s = first.matrix.rows();
    if seq.stages.iter().any(|st| !st.matrix.is_square() || st.matrix.rows() != s) {
        return Vec::new();
    }
    let mut stacked = Matrix::zeros(s * seq.stages.len(), s);
    for (n, st) in seq.stages.iter().enumerate() {
        let a = if left { st.matrix.transpose() } else { st.matrix.clone() };
        let mut shifted = a;
        for i in 0..s {
            let v = shifted.get(i, i) - &st.p;
            shifted.set(i, i, v);
        }
        stacked.put_block(n * s, 0, &shifted);
    }
    right_kernel_basis(&stacked)
}

/// Looks for common left and right eigenvectors with nonzero pairing.
pub fn nearly_split_witness(seq: &RealizationSeq) -> NearlySplitReport {
    let right = common_eigenspace(seq, false);
    let left = common_eigenspace(seq, true);
    let paired = left.iter().any(|w| right.iter().any(|v| !dot(w, v).is_zero()));
    NearlySplitReport {
        has_common_right_evec: !right.is_empty(),
        has_common_left_evec: !left.is_empty(),
        nearly_split_implied: paired,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceReport {
    /// `1 / prod_{i<j} c_i` at each level; the trace of a unit vector row-sum.
    pub scale: Vec<String>,
    /// Trace of the marker at each level, when markers are present.
    pub marker_value: Option<Vec<String>>,
    /// Finite-prefix description of the value group `U = union (1/prod c_i) Z`.
    pub value_group: SupernaturalNumber,
    /// ECS with primitive stages, so the row-of-ones trace is faithful.
    pub faithful: bool,
    /// `|tau(G)/tau(H)|` for the marked subgroup.
    pub lambda: Option<u64>,
}

/// Trace data for an ECS realization.
///
/// Primes dividing every column sum are treated as having infinite
/// multiplicity; the finite part is the factorization of the prefix product.
pub fn trace_report(seq: &RealizationSeq) -> Result<TraceReport, TraceError> {
    let c = column_sums(seq)?;
    let mut scale = Vec::with_capacity(c.len() + 1);
    let mut den = BigInt::one();
    scale.push(crate::io::format_rational(&BigRational::one()));
    for ci in &c {
        den *= ci;
        scale.push(crate::io::format_rational(&BigRational::new(BigInt::one(), den.clone())));
    }
    let value_group = prefix_supernatural(&c);
    let faithful = seq.stages.iter().all(|s| is_primitive(&s.matrix).unwrap_or(false));
    let mut marker_value = None;
    let mut lambda = None;
    if let Some(markers) = &seq.markers {
        let vals = markers
            .iter()
            .enumerate()
            .map(|(j, h)| trace_of_realization(seq, h, j + 1))
            .collect::<Result<Vec<_>, _>>()?;
        // tau(H) = t * tau(G) where t is the marker value at level 1.
        if let Some(t) = vals.first().and_then(|v| v.to_integer().to_u64().filter(|_| v.is_integer())) {
            if t > 0 {
                lambda = Some(quotient_order(&value_group, t));
            }
        }
        marker_value = Some(vals.iter().map(crate::io::format_rational).collect());
    }
    Ok(TraceReport { scale, marker_value, value_group, faithful, lambda })
}

fn prefix_supernatural(c: &[BigInt]) -> SupernaturalNumber {
    let small: Vec<u64> = c.iter().filter_map(|x| x.to_u64()).collect();
    if small.len() != c.len() || small.is_empty() {
        return SupernaturalNumber::trivial();
    }
    let mut infinite: Option<BTreeSet<u64>> = None;
    let mut finite = std::collections::BTreeMap::new();
    for &x in &small {
        let f = factorize(x);
        let primes: BTreeSet<u64> = f.keys().copied().collect();
        infinite = Some(match infinite {
            None => primes,
            Some(prev) => prev.intersection(&primes).copied().collect(),
        });
        for (p, e) in f {
            *finite.entry(p).or_insert(0u32) += e;
        }
    }
    let infinite = if small.len() > 1 { infinite.unwrap_or_default() } else { BTreeSet::new() };
    finite.retain(|p, _| !infinite.contains(p));
    SupernaturalNumber::new(finite, infinite).unwrap_or_default()
}
