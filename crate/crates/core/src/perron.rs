//! Primitivity, integer Perron data, equal-sum criteria and shift equivalence.

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{FromPrimitive, One, Signed, ToPrimitive};
use serde::Serialize;

use crate::exact_core::{left_kernel_basis, right_kernel_basis, ExactInt};
use crate::matrix::{dot, Matrix};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PerronError {
    /// The matrix has a negative entry.
    #[error("matrix has a negative entry at ({0}, {1})")]
    NotNonnegative(usize, usize),
    /// The matrix is not square.
    #[error("matrix is not square ({0}x{1})")]
    NonSquare(usize, usize),
    /// No power of the matrix is strictly positive.
    #[error("matrix is not primitive")]
    NotPrimitive,
    /// The Perron eigenvalue is irrational or fractional.
    #[error("Perron eigenvalue is not an integer")]
    NotIntegerEigenvalue,
    /// Matrices in a sequence differ in size.
    #[error("matrices in the sequence have different sizes ({0} vs {1})")]
    SizeMismatch(usize, usize),
    /// The sequence has no matrices.
    #[error("empty matrix sequence")]
    EmptySequence,
    /// Vector and matrix sizes disagree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    /// The eigenvector inner product test contradicts the sums.
    #[error("equal-sums criterion violated: inner product equals size but sums differ")]
    CriterionViolated,
}

/// Integer Perron eigenvalue with content-1 positive eigenvectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerronData<T = BigInt> {
    pub eigenvalue: T,
    pub left: Vec<T>,
    pub right: Vec<T>,
    pub size: usize,
}

fn check_square_nonneg<T: ExactInt>(a: &Matrix<T>) -> Result<(), PerronError> {
    if !a.is_square() {
        return Err(PerronError::NonSquare(a.rows(), a.cols()));
    }
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            if a.get(i, j).is_negative() {
                return Err(PerronError::NotNonnegative(i, j));
            }
        }
    }
    Ok(())
}

fn bool_mul(a: &[Vec<bool>], b: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let n = a.len();
    let mut out = vec![vec![false; n]; n];
    for i in 0..n {
        for k in 0..n {
            if a[i][k] {
                for j in 0..n {
                    out[i][j] |= b[k][j];
                }
            }
        }
    }
    out
}

/// True iff some power of `a` is strictly positive.
///
/// The zero pattern is raised to the Wielandt exponent `(s-1)^2 + 1`, which
/// is positive exactly when `a` is primitive.
pub fn is_primitive<T: ExactInt>(a: &Matrix<T>) -> Result<bool, PerronError> {
    check_square_nonneg(a)?;
    let s = a.rows();
    if s == 0 {
        return Ok(false);
    }
    let pattern: Vec<Vec<bool>> = (0..s).map(|i| (0..s).map(|j| !a.get(i, j).is_zero()).collect()).collect();
    let mut e = (s - 1) * (s - 1) + 1;
    let mut base = pattern;
    let mut acc: Option<Vec<Vec<bool>>> = None;
    while e > 0 {
        if e & 1 == 1 {
            acc = Some(match acc {
                None => base.clone(),
                Some(x) => bool_mul(&x, &base),
            });
        }
        e >>= 1;
        if e > 0 {
            base = bool_mul(&base, &base);
        }
    }
    Ok(acc.is_some_and(|m| m.iter().all(|r| r.iter().all(|&x| x))))
}

fn eval_poly<T: ExactInt>(coeffs: &[T], x: &T) -> T {
    coeffs.iter().rev().fold(T::zero(), |acc, c| acc * x.clone() + c.clone())
}

fn power_iteration_estimate<T: ExactInt + ToPrimitive>(a: &Matrix<T>) -> Option<f64> {
    let s = a.rows();
    let f: Vec<Vec<f64>> = (0..s).map(|i| (0..s).map(|j| a.get(i, j).to_f64().unwrap_or(f64::NAN)).collect()).collect();
    let mut x = vec![1.0f64; s];
    let mut est = 0.0;
    for _ in 0..2000 {
        let y: Vec<f64> = (0..s).map(|i| (0..s).map(|j| f[i][j] * x[j]).sum()).collect();
        let norm: f64 = y.iter().sum();
        if !norm.is_finite() || norm <= 0.0 {
            return None;
        }
        let prev = est;
        est = norm / x.iter().sum::<f64>();
        x = y.iter().map(|v| v / norm).collect();
        if (est - prev).abs() <= 1e-12 * est.abs() {
            break;
        }
    }
    Some(est)
}

fn positive_kernel_vector<T: ExactInt>(basis: Vec<Vec<T>>) -> Option<Vec<T>> {
    if basis.len() != 1 {
        return None;
    }
    let v = basis.into_iter().next().unwrap();
    v.iter().all(|x| x.is_positive()).then_some(v)
}

fn shifted<T: ExactInt>(a: &Matrix<T>, r: &T) -> Matrix<T> {
    let mut m = a.clone();
    for i in 0..a.rows() {
        let v = m.get(i, i).clone() - r.clone();
        m.set(i, i, v);
    }
    m
}

fn try_root<T: ExactInt>(a: &Matrix<T>, r: &T) -> Option<PerronData<T>> {
    let m = shifted(a, r);
    let right = positive_kernel_vector(right_kernel_basis(&m))?;
    let left = positive_kernel_vector(left_kernel_basis(&m))?;
    Some(PerronData { eigenvalue: r.clone(), left, right, size: a.rows() })
}

/// Integer Perron eigenvalue and content-1 eigenvectors of a primitive matrix.
pub fn integer_perron<T: ExactInt + ToPrimitive + FromPrimitive>(a: &Matrix<T>) -> Result<PerronData<T>, PerronError> {
    if !is_primitive(a)? {
        return Err(PerronError::NotPrimitive);
    }
    let rows = a.row_sums();
    let cols = a.col_sums();
    let lo = rows.iter().min().unwrap().clone().max(cols.iter().min().unwrap().clone());
    let hi = rows.iter().max().unwrap().clone().min(cols.iter().max().unwrap().clone());
    // Perron root lies in [lo, hi]; a positive kernel vector certifies it.
    let span = (hi.clone() - lo.clone()).to_u64();
    if let Some(span) = span.filter(|&s| s <= 4096) {
        let poly = crate::exact_core::char_poly(a).map_err(|_| PerronError::NotIntegerEigenvalue)?;
        let mut r = hi.clone();
        for _ in 0..=span {
            if eval_poly(&poly, &r).is_zero() {
                if let Some(d) = try_root(a, &r) {
                    return Ok(d);
                }
            }
            r = r - T::one();
        }
        return Err(PerronError::NotIntegerEigenvalue);
    }
    let est = power_iteration_estimate(a).ok_or(PerronError::NotIntegerEigenvalue)?;
    let center = T::from_f64(est.round()).ok_or(PerronError::NotIntegerEigenvalue)?;
    for delta in [0i64, 1, -1, 2, -2] {
        let r = center.clone() + T::from_i64(delta).unwrap();
        if r < lo || r > hi {
            continue;
        }
        if let Some(d) = try_root(a, &r) {
            return Ok(d);
        }
    }
    Err(PerronError::NotIntegerEigenvalue)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EqualSumsReport {
    #[serde(serialize_with = "crate::io::ser_display")]
    pub eigenvalue: BigInt,
    #[serde(serialize_with = "crate::io::ser_display")]
    pub inner_product: BigInt,
    pub size: usize,
    pub rows_equal: bool,
    pub cols_equal: bool,
    pub sums_equal: bool,
}

/// Checks that `V W = size` forces equal row and column sums.
pub fn check_equal_sums_criterion(a: &Matrix<BigInt>) -> Result<EqualSumsReport, PerronError> {
    let d = integer_perron(a)?;
    let inner = dot(&d.left, &d.right);
    let all_eq = |v: Vec<BigInt>| v.windows(2).all(|w| w[0] == w[1]);
    let rows_equal = all_eq(a.row_sums());
    let cols_equal = all_eq(a.col_sums());
    let report = EqualSumsReport {
        eigenvalue: d.eigenvalue,
        inner_product: inner.clone(),
        size: d.size,
        rows_equal,
        cols_equal,
        sums_equal: rows_equal && cols_equal,
    };
    if inner == BigInt::from(d.size) && !report.sums_equal {
        return Err(PerronError::CriterionViolated);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniqueTraceReport {
    /// Product `C_h ... C_0` divided by the product of spectral radii.
    pub limit_matrix: Matrix<BigRational>,
    pub numeric_rank_at_tol: usize,
    /// Singular values of the limit candidate, descending.
    pub singular_values: Vec<f64>,
    /// Number of factors in the product.
    pub factors: usize,
}

fn all_equal(v: &[BigInt]) -> Option<BigInt> {
    v.windows(2).all(|w| w[0] == w[1]).then(|| v[0].clone())
}

/// Spectral radius of a nonnegative matrix, exact when it is an integer.
pub fn spectral_radius(a: &Matrix<BigInt>) -> Result<BigRational, PerronError> {
    check_square_nonneg(a)?;
    if let Some(r) = all_equal(&a.row_sums()).or_else(|| all_equal(&a.col_sums())) {
        return Ok(Ratio::from_integer(r));
    }
    if let Ok(d) = integer_perron(a) {
        return Ok(Ratio::from_integer(d.eigenvalue));
    }
    let est = power_iteration_estimate(a).ok_or(PerronError::NotIntegerEigenvalue)?;
    Ratio::from_float(est).ok_or(PerronError::NotIntegerEigenvalue)
}

/// Singular values by one-sided Jacobi rotations, descending.
pub fn singular_values(m: &[Vec<f64>]) -> Vec<f64> {
    let rows = m.len();
    let cols = m.first().map_or(0, |r| r.len());
    let mut a: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| m[i][j]).collect()).collect();
    for _ in 0..100 {
        let mut off = 0.0f64;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = a[p].iter().map(|x| x * x).sum();
                let beta: f64 = a[q].iter().map(|x| x * x).sum();
                let gamma: f64 = a[p].iter().zip(&a[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let (x, y) = (a[p][i], a[q][i]);
                    a[p][i] = c * x - s * y;
                    a[q][i] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut sv: Vec<f64> = a.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
    sv
}

/// Normalized product `C_h ... C_0 / prod rho(C_i)` and its numeric rank.
///
/// A sequence shorter than `horizon + 1` is repeated periodically. The rank
/// counts singular values above `tol` times the largest one.
pub fn unique_trace_diagnostic(
    seq: &[Matrix<BigInt>],
    horizon: usize,
    tol: &BigRational,
) -> Result<UniqueTraceReport, PerronError> {
    let first = seq.first().ok_or(PerronError::EmptySequence)?;
    let s = first.rows();
    for c in seq {
        if !c.is_square() {
            return Err(PerronError::NonSquare(c.rows(), c.cols()));
        }
        if c.rows() != s {
            return Err(PerronError::SizeMismatch(s, c.rows()));
        }
    }
    let radii = seq.iter().map(spectral_radius).collect::<Result<Vec<_>, _>>()?;
    let mut prod: Matrix<BigRational> = Matrix::identity(s);
    for n in 0..=horizon {
        let i = n % seq.len();
        let c = seq[i].map(|x| Ratio::from_integer(x.clone()));
        prod = c.mul(&prod).scale(&radii[i].recip());
    }
    let floats: Vec<Vec<f64>> = (0..s).map(|i| (0..s).map(|j| prod.get(i, j).to_f64().unwrap_or(f64::NAN)).collect()).collect();
    let sv = singular_values(&floats);
    let tol = tol.to_f64().unwrap_or(0.0);
    let top = sv.first().copied().unwrap_or(0.0);
    let rank = sv.iter().filter(|&&x| x > tol * top).count();
    Ok(UniqueTraceReport { limit_matrix: prod, numeric_rank_at_tol: rank, singular_values: sv, factors: horizon + 1 })
}

/// Witness matrices and lag for a shift equivalence between `A` and `M`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShiftEquivalence {
    pub x: Matrix<BigInt>,
    pub y: Matrix<BigInt>,
    pub lag: u32,
}

/// Verifies `XM = AX`, `MY = YA`, `XY = A^t` and `YX = M^t`.
pub fn check_shift_equivalence(a: &Matrix<BigInt>, m: &Matrix<BigInt>, se: &ShiftEquivalence) -> Result<bool, PerronError> {
    let (sa, sm) = (a.rows(), m.rows());
    if !a.is_square() || !m.is_square() {
        return Err(PerronError::DimensionMismatch("A and M must be square".into()));
    }
    if se.x.shape() != (sa, sm) || se.y.shape() != (sm, sa) {
        return Err(PerronError::DimensionMismatch(format!(
            "X is {:?} and Y is {:?}; expected {:?} and {:?}",
            se.x.shape(),
            se.y.shape(),
            (sa, sm),
            (sm, sa)
        )));
    }
    Ok(se.x.mul(m) == a.mul(&se.x)
        && m.mul(&se.y) == se.y.mul(a)
        && se.x.mul(&se.y) == a.pow(se.lag)
        && se.y.mul(&se.x) == m.pow(se.lag))
}

/// True iff every column sums to the same value.
pub fn common_column_sum(a: &Matrix<BigInt>) -> Option<BigInt> {
    if a.cols() == 0 {
        return None;
    }
    all_equal(&a.col_sums())
}

/// True iff every row sums to the same value.
pub fn common_row_sum(a: &Matrix<BigInt>) -> Option<BigInt> {
    if a.rows() == 0 {
        return None;
    }
    all_equal(&a.row_sums())
}

pub fn is_nonnegative(a: &Matrix<BigInt>) -> bool {
    a.iter().all(|x| !x.is_negative())
}

pub fn tol_from_f64(x: f64) -> BigRational {
    Ratio::from_float(x).unwrap_or_else(Ratio::one)
}
