//! Exact integer and rational linear algebra.
//!
//! Ranks and determinants use fraction-free elimination. Kernels are computed
//! over the fraction field and scaled back to primitive integer vectors.
//! Unimodular transforms keep their elementary factorization so the same
//! change of basis can be replayed on a whole sequence of matrices.

use std::fmt;

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{One, Signed, Zero};

use crate::matrix::Matrix;

/// Exact integer ring the algebra is generic over (`BigInt` in practice).
pub trait ExactInt: Clone + Integer + Signed + fmt::Debug + fmt::Display {}

impl<T: Clone + Integer + Signed + fmt::Debug + fmt::Display> ExactInt for T {}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExactError {
    /// The two rows of a basis-change request have different contents.
    #[error("content mismatch: source has content {source_content}, target has content {target_content}")]
    ContentMismatch { source_content: String, target_content: String },
    /// No unimodular matrix maps the source row to the target row.
    #[error("no unimodular map exists: {0}")]
    Unsolvable(String),
    /// The operation needs a square matrix.
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    /// The matrix has zero determinant.
    #[error("matrix is singular")]
    Singular,
}

/// Greatest common divisor of the entries; 0 for the zero vector.
pub fn content<T: ExactInt>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |g, x| g.gcd(x))
}

/// Divides out the content. The zero vector is returned unchanged.
pub fn primitive_part<T: ExactInt>(v: &[T]) -> Vec<T> {
    let c = content(v);
    if c.is_zero() {
        return v.to_vec();
    }
    v.iter().map(|x| x.clone() / c.clone()).collect()
}

struct Echelon<T> {
    rank: usize,
    last_pivot: T,
    negated: bool,
}

fn bareiss<T: ExactInt>(m: &Matrix<T>) -> Echelon<T> {
    let mut a = m.clone();
    let (rows, cols) = a.shape();
    let mut prev = T::one();
    let mut row = 0;
    let mut negated = false;
    for c in 0..cols {
        if row == rows {
            break;
        }
        let Some(p) = (row..rows).find(|&i| !a.get(i, c).is_zero()) else {
            continue;
        };
        if p != row {
            a.swap_rows(p, row);
            negated = !negated;
        }
        let piv = a.get(row, c).clone();
        for i in row + 1..rows {
            let lead = a.get(i, c).clone();
            for j in c + 1..cols {
                let v = (piv.clone() * a.get(i, j).clone() - lead.clone() * a.get(row, j).clone())
                    / prev.clone();
                a.set(i, j, v);
            }
            a.set(i, c, T::zero());
        }
        prev = piv;
        row += 1;
    }
    Echelon { rank: row, last_pivot: prev, negated }
}

/// Rank over the rationals.
pub fn rank_rational<T: ExactInt>(m: &Matrix<T>) -> usize {
    bareiss(m).rank
}

/// Exact determinant of a square matrix.
pub fn determinant<T: ExactInt>(m: &Matrix<T>) -> Result<T, ExactError> {
    if !m.is_square() {
        return Err(ExactError::NotSquare(m.rows(), m.cols()));
    }
    if m.rows() == 0 {
        return Ok(T::one());
    }
    let e = bareiss(m);
    if e.rank < m.rows() {
        return Ok(T::zero());
    }
    Ok(if e.negated { -e.last_pivot } else { e.last_pivot })
}

/// True iff `e` is square with determinant ±1.
pub fn is_unimodular<T: ExactInt>(e: &Matrix<T>) -> bool {
    matches!(determinant(e), Ok(d) if d.abs().is_one())
}

/// Maximum absolute column sum.
pub fn colsum_norm<T: ExactInt>(m: &Matrix<T>) -> T {
    (0..m.cols())
        .map(|j| (0..m.rows()).fold(T::zero(), |acc, i| acc + m.get(i, j).abs()))
        .max()
        .unwrap_or_else(T::zero)
}

/// Max absolute entry of a vector, used for sup norms.
pub fn sup_norm<T: ExactInt>(v: &[T]) -> T {
    v.iter().map(|x| x.abs()).max().unwrap_or_else(T::zero)
}

pub fn to_rational<T: ExactInt>(m: &Matrix<T>) -> Matrix<Ratio<T>> {
    m.map(|x| Ratio::from_integer(x.clone()))
}

/// Reduced row echelon form over the fraction field; returns pivot columns.
pub fn rref<T: ExactInt>(m: &Matrix<Ratio<T>>) -> (Matrix<Ratio<T>>, Vec<usize>) {
    let mut a = m.clone();
    let (rows, cols) = a.shape();
    let mut pivots = Vec::new();
    let mut row = 0;
    for c in 0..cols {
        if row == rows {
            break;
        }
        let Some(p) = (row..rows).find(|&i| !a.get(i, c).is_zero()) else {
            continue;
        };
        a.swap_rows(p, row);
        let inv = a.get(row, c).recip();
        for j in c..cols {
            let v = a.get(row, j).clone() * inv.clone();
            a.set(row, j, v);
        }
        for i in 0..rows {
            if i == row || a.get(i, c).is_zero() {
                continue;
            }
            let f = a.get(i, c).clone();
            for j in c..cols {
                let v = a.get(i, j).clone() - f.clone() * a.get(row, j).clone();
                a.set(i, j, v);
            }
        }
        pivots.push(c);
        row += 1;
    }
    (a, pivots)
}

/// Scales a rational vector to a primitive integer vector with the same direction.
pub fn clear_denominators<T: ExactInt>(v: &[Ratio<T>]) -> Vec<T> {
    let l = v.iter().fold(T::one(), |l, x| l.lcm(x.denom()));
    let ints: Vec<T> = v.iter().map(|x| x.numer().clone() * (l.clone() / x.denom().clone())).collect();
    primitive_part(&ints)
}

/// Flips sign so the first nonzero entry is positive.
pub fn normalize_sign<T: ExactInt>(v: &mut [T]) {
    if let Some(first) = v.iter().find(|x| !x.is_zero()) {
        if first.is_negative() {
            v.iter_mut().for_each(|x| *x = -x.clone());
        }
    }
}

/// Basis of the rational right kernel as content-1 integer vectors.
pub fn right_kernel_basis<T: ExactInt>(m: &Matrix<T>) -> Vec<Vec<T>> {
    rational_right_kernel(&to_rational(m))
}

pub fn rational_right_kernel<T: ExactInt>(m: &Matrix<Ratio<T>>) -> Vec<Vec<T>> {
    let (r, pivots) = rref(m);
    let cols = m.cols();
    let mut basis = Vec::new();
    for f in (0..cols).filter(|c| !pivots.contains(c)) {
        let mut x = vec![Ratio::<T>::zero(); cols];
        x[f] = Ratio::one();
        for (i, &pc) in pivots.iter().enumerate() {
            x[pc] = -r.get(i, f).clone();
        }
        let mut v = clear_denominators(&x);
        normalize_sign(&mut v);
        basis.push(v);
    }
    basis
}

/// Basis of the rational left kernel (`x M = 0`) as content-1 integer vectors.
pub fn left_kernel_basis<T: ExactInt>(m: &Matrix<T>) -> Vec<Vec<T>> {
    right_kernel_basis(&m.transpose())
}

/// Inverse over the fraction field.
pub fn rational_inverse<T: ExactInt>(m: &Matrix<Ratio<T>>) -> Result<Matrix<Ratio<T>>, ExactError> {
    if !m.is_square() {
        return Err(ExactError::NotSquare(m.rows(), m.cols()));
    }
    let n = m.rows();
    if n == 0 {
        return Ok(m.clone());
    }
    let mut aug = Matrix::zeros(n, 2 * n);
    aug.put_block(0, 0, m);
    aug.put_block(0, n, &Matrix::identity(n));
    let (r, pivots) = rref(&aug);
    if pivots.len() < n || pivots[n - 1] != n - 1 {
        return Err(ExactError::Singular);
    }
    Ok(r.block(0, n, n, 2 * n))
}

/// Inverse of an integer matrix over the rationals.
pub fn inverse_rational<T: ExactInt>(m: &Matrix<T>) -> Result<Matrix<Ratio<T>>, ExactError> {
    rational_inverse(&to_rational(m))
}

/// Inverse of a unimodular integer matrix.
pub fn integer_inverse<T: ExactInt>(m: &Matrix<T>) -> Result<Matrix<T>, ExactError> {
    let inv = inverse_rational(m)?;
    if inv.iter().any(|x| !x.is_integer()) {
        return Err(ExactError::Unsolvable("inverse is not integral".into()));
    }
    Ok(inv.map(|x| x.to_integer()))
}

/// Characteristic polynomial `det(xI - M)`, coefficients from degree 0 upward.
pub fn char_poly<T: ExactInt>(m: &Matrix<T>) -> Result<Vec<T>, ExactError> {
    if !m.is_square() {
        return Err(ExactError::NotSquare(m.rows(), m.cols()));
    }
    // Faddeev-LeVerrier; every division below is exact over the integers.
    let n = m.rows();
    let mut coeffs = vec![T::zero(); n + 1];
    coeffs[n] = T::one();
    let mut acc = Matrix::<T>::zeros(n, n);
    let mut kk = T::zero();
    for k in 1..=n {
        kk = kk + T::one();
        let mut next = m.mul(&acc);
        for i in 0..n {
            let v = next.get(i, i).clone() + coeffs[n - k + 1].clone();
            next.set(i, i, v);
        }
        acc = next;
        coeffs[n - k] = -(m.mul(&acc).trace() / kk.clone());
    }
    Ok(coeffs)
}

/// Multiplies polynomials given lowest degree first.
pub fn poly_mul<T: ExactInt>(a: &[T], b: &[T]) -> Vec<T> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![T::zero(); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] = out[i + j].clone() + x.clone() * y.clone();
        }
    }
    out
}

/// Elementary integer matrix acting by right multiplication on row vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ElementaryOp<T> {
    /// Permutation swapping coordinates `i` and `j`.
    Swap(usize, usize),
    /// Sign flip of coordinate `i`.
    Negate(usize),
    /// `I + factor * e_from e_to^T`: a row vector gains `factor * r[from]` in slot `to`.
    AddMultiple { from: usize, to: usize, factor: T },
}

impl<T: ExactInt> ElementaryOp<T> {
    pub fn matrix(&self, k: usize) -> Matrix<T> {
        let mut m = Matrix::identity(k);
        match self {
            ElementaryOp::Swap(i, j) => m.swap_rows(*i, *j),
            ElementaryOp::Negate(i) => m.set(*i, *i, -T::one()),
            ElementaryOp::AddMultiple { from, to, factor } => m.set(*from, *to, factor.clone()),
        }
        m
    }

    pub fn inverse(&self) -> Self {
        match self {
            ElementaryOp::AddMultiple { from, to, factor } => {
                ElementaryOp::AddMultiple { from: *from, to: *to, factor: -factor.clone() }
            }
            other => other.clone(),
        }
    }

    /// Applies `r <- r * op` in place.
    pub fn apply_to_row(&self, r: &mut [T]) {
        match self {
            ElementaryOp::Swap(i, j) => r.swap(*i, *j),
            ElementaryOp::Negate(i) => r[*i] = -r[*i].clone(),
            ElementaryOp::AddMultiple { from, to, factor } => {
                r[*to] = r[*to].clone() + factor.clone() * r[*from].clone();
            }
        }
    }
}

/// Element of GL(k, Z) with an elementary factorization `E = op_1 op_2 ... op_m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnimodularTransform<T = num_bigint::BigInt> {
    size: usize,
    matrix: Matrix<T>,
    factorization: Vec<ElementaryOp<T>>,
}

impl<T: ExactInt> UnimodularTransform<T> {
    pub fn identity(k: usize) -> Self {
        UnimodularTransform { size: k, matrix: Matrix::identity(k), factorization: Vec::new() }
    }

    pub fn from_ops(k: usize, ops: Vec<ElementaryOp<T>>) -> Self {
        let matrix = replay(k, &ops);
        UnimodularTransform { size: k, matrix, factorization: ops }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    pub fn factorization(&self) -> &[ElementaryOp<T>] {
        &self.factorization
    }

    /// Rebuilds the matrix from the stored factorization.
    pub fn replay(&self) -> Matrix<T> {
        replay(self.size, &self.factorization)
    }

    pub fn inverse(&self) -> Self {
        let ops: Vec<_> = self.factorization.iter().rev().map(|o| o.inverse()).collect();
        UnimodularTransform::from_ops(self.size, ops)
    }

    /// `self * other`.
    pub fn compose(&self, other: &Self) -> Self {
        let mut ops = self.factorization.clone();
        ops.extend(other.factorization.iter().cloned());
        UnimodularTransform::from_ops(self.size, ops)
    }

    /// `r E`.
    pub fn apply_row(&self, r: &[T]) -> Vec<T> {
        let mut out = r.to_vec();
        for op in &self.factorization {
            op.apply_to_row(&mut out);
        }
        out
    }

    /// `r E^{-1}`.
    pub fn apply_inverse_row(&self, r: &[T]) -> Vec<T> {
        let mut out = r.to_vec();
        for op in self.factorization.iter().rev() {
            op.inverse().apply_to_row(&mut out);
        }
        out
    }
}

fn replay<T: ExactInt>(k: usize, ops: &[ElementaryOp<T>]) -> Matrix<T> {
    // Row i of E is e_i E, so replaying on each basis row builds the product.
    let mut rows = Vec::with_capacity(k);
    for i in 0..k {
        let mut r = vec![T::zero(); k];
        r[i] = T::one();
        for op in ops {
            op.apply_to_row(&mut r);
        }
        rows.push(r);
    }
    Matrix::from_rows(rows).expect("square by construction")
}

/// Column-style Euclidean reduction: returns ops `C` with `r C = content(r) e_1`.
fn reduce_to_e1<T: ExactInt>(r: &[T]) -> Vec<ElementaryOp<T>> {
    let mut v = r.to_vec();
    let mut ops = Vec::new();
    loop {
        let nonzero: Vec<usize> = (0..v.len()).filter(|&i| !v[i].is_zero()).collect();
        if nonzero.len() <= 1 {
            break;
        }
        let m = *nonzero.iter().min_by_key(|&&i| v[i].abs()).unwrap();
        for &j in &nonzero {
            if j == m {
                continue;
            }
            let q = v[j].clone() / v[m].clone();
            if q.is_zero() {
                continue;
            }
            let op = ElementaryOp::AddMultiple { from: m, to: j, factor: -q };
            op.apply_to_row(&mut v);
            ops.push(op);
        }
    }
    if let Some(i) = (0..v.len()).find(|&i| !v[i].is_zero()) {
        if i != 0 {
            let op = ElementaryOp::Swap(0, i);
            op.apply_to_row(&mut v);
            ops.push(op);
        }
        if v[0].is_negative() {
            let op = ElementaryOp::Negate(0);
            op.apply_to_row(&mut v);
            ops.push(op);
        }
    }
    ops
}

/// Finds `E` in GL(k, Z) with `r E^{-1} = target`.
///
/// Both rows are reduced to `c e_1` by integer column operations, so any pair
/// of nonzero rows of equal length and equal content is solvable.
pub fn map_content1_row<T: ExactInt>(r: &[T], target: &[T]) -> Result<UnimodularTransform<T>, ExactError> {
    if r.len() != target.len() {
        return Err(ExactError::Unsolvable(format!(
            "row lengths differ ({} vs {})",
            r.len(),
            target.len()
        )));
    }
    if r.is_empty() {
        return Err(ExactError::Unsolvable("empty rows".into()));
    }
    let (cr, ct) = (content(r), content(target));
    if cr != ct {
        return Err(ExactError::ContentMismatch {
            source_content: cr.to_string(),
            target_content: ct.to_string(),
        });
    }
    if cr.is_zero() {
        return Err(ExactError::Unsolvable("zero rows".into()));
    }
    // r C = c e1 = target D, hence E = D C^{-1}.
    let c_ops = reduce_to_e1(r);
    let mut ops = reduce_to_e1(target);
    ops.extend(c_ops.iter().rev().map(|o| o.inverse()));
    Ok(UnimodularTransform::from_ops(r.len(), ops))
}
