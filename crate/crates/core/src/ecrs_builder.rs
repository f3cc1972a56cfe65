//! ECRS realizations: matrices with all row sums and all column sums equal.
//!
//! Matrices here act on row vectors from the right for the eigenvector
//! algebra (`r M = p r`), which is also the column action used by
//! [`RealizationSeq`] once both eigenvectors are all-ones.
//!
//! The construction starts from stages `[[p, v], [0, I_k]]` with common left
//! eigenvector `(lambda, rho)`, conjugates them to `[[p, (p-1)/lambda u], [0, I]]`,
//! borders them with extra zero rows or columns to reach the target size, and
//! then applies one fixed conjugation that makes every stage positive.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::exact_core::{content, integer_inverse, map_content1_row, rank_rational, ElementaryOp, UnimodularTransform};
use crate::io;
use crate::matrix::Matrix;
use crate::perron::{check_equal_sums_criterion, common_column_sum, common_row_sum, is_nonnegative, is_primitive};
use crate::realization::{Flags, RealizationSeq, Stage};
use crate::supernatural::{decide_ecrs, Cardinal, DecisionReason, SupernaturalNumber};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EcrsError {
    /// A value fails the congruence the construction needs.
    #[error("{value} is not congruent to {residue} modulo {modulus}")]
    CongruenceViolated { value: String, residue: String, modulus: String },
    /// `content(rho)` and `lambda` share a factor.
    #[error("content of rho ({content}) is not coprime to lambda = {lambda}")]
    GcdViolated { content: String, lambda: u64 },
    /// With `k = 1` the stage cannot be moved to the all-ones form.
    #[error("k = 1 with rho = {rho} not congruent to +-1 modulo lambda = {lambda}")]
    K1Unnormalizable { rho: String, lambda: u64 },
    /// The matrix to border is not of full rank.
    #[error("matrix has rank {rank} < {size}")]
    RankDeficient { rank: usize, size: usize },
    /// Block sizes disagree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    /// The finished matrix has a negative entry.
    #[error("stage {stage} has entry {value} at ({row}, {col})")]
    PositivityFailed { stage: usize, row: usize, col: usize, value: String },
    /// The index is below the rank, so no realization of this size exists.
    #[error("lambda = {lambda} is below rank G = {rank} ({reason:?})")]
    LambdaTooSmall { lambda: u64, rank: usize, reason: DecisionReason },
    /// A seed matrix lacks equal row and column sums, or is not primitive.
    #[error("seed matrix rejected: {0}")]
    NotEqualSums(String),
    /// Problem fields are malformed.
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    /// A constructed stage fails an ECRS postcondition.
    #[error("stage {stage} failed verification: {reason}")]
    VerificationFailed { stage: usize, reason: String },
}

/// Input for the ECRS construction.
///
/// Without `seed_matrix` or `q`, stage values must satisfy `p = 1 mod lambda`.
/// With `q` (a power of a prime dividing the trace group infinitely often),
/// stages use `q p` and need `q p = 1 mod lambda`. With `seed_matrix`, the
/// stages are polynomials in the seed and `lambda` must be 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawProblem")]
pub struct EcrsProblem {
    pub k: usize,
    pub lambda: u64,
    #[serde(with = "io::int_vec")]
    pub rho: Vec<BigInt>,
    #[serde(with = "io::int_vec")]
    pub p_seq: Vec<BigInt>,
    #[serde(default, with = "io::opt_int", skip_serializing_if = "Option::is_none")]
    pub q: Option<BigInt>,
    #[serde(default, with = "io::opt_int_matrix", skip_serializing_if = "Option::is_none")]
    pub seed_matrix: Option<Matrix<BigInt>>,
}

#[derive(Deserialize)]
struct RawProblem {
    k: usize,
    lambda: u64,
    #[serde(with = "io::int_vec")]
    rho: Vec<BigInt>,
    #[serde(with = "io::int_vec")]
    p_seq: Vec<BigInt>,
    #[serde(default, with = "io::opt_int")]
    q: Option<BigInt>,
    #[serde(default, with = "io::opt_int_matrix")]
    seed_matrix: Option<Matrix<BigInt>>,
}

impl TryFrom<RawProblem> for EcrsProblem {
    type Error = EcrsError;

    fn try_from(raw: RawProblem) -> Result<Self, Self::Error> {
        let prob = EcrsProblem {
            k: raw.k,
            lambda: raw.lambda,
            rho: raw.rho,
            p_seq: raw.p_seq,
            q: raw.q,
            seed_matrix: raw.seed_matrix,
        };
        prob.validate()?;
        Ok(prob)
    }
}

impl EcrsProblem {
    pub fn new(k: usize, lambda: u64, rho: Vec<BigInt>, p_seq: Vec<BigInt>) -> Result<Self, EcrsError> {
        let prob = EcrsProblem { k, lambda, rho, p_seq, q: None, seed_matrix: None };
        prob.validate()?;
        Ok(prob)
    }

    /// Checks sizes, the gcd condition and the stage congruences.
    pub fn validate(&self) -> Result<(), EcrsError> {
        if self.lambda == 0 {
            return Err(EcrsError::InvalidProblem("lambda must be positive".into()));
        }
        if self.rho.len() != self.k {
            return Err(EcrsError::DimensionMismatch(format!("rho has length {}, k = {}", self.rho.len(), self.k)));
        }
        if self.p_seq.is_empty() {
            return Err(EcrsError::InvalidProblem("p_seq is empty".into()));
        }
        if let Some(n) = self.p_seq.iter().position(|p| *p <= BigInt::one()) {
            return Err(EcrsError::InvalidProblem(format!("p_seq[{n}] = {} <= 1", self.p_seq[n])));
        }
        if self.seed_matrix.is_some() {
            if self.lambda != 1 || self.q.is_some() {
                return Err(EcrsError::InvalidProblem("a seed matrix needs lambda = 1 and no q".into()));
            }
            return Ok(());
        }
        if let Some(q) = &self.q {
            if *q <= BigInt::one() {
                return Err(EcrsError::InvalidProblem(format!("q = {q} <= 1")));
            }
        }
        let lambda = BigInt::from(self.lambda);
        let c = content(&self.rho);
        if !c.gcd(&lambda).is_one() {
            return Err(EcrsError::GcdViolated { content: c.to_string(), lambda: self.lambda });
        }
        for p in self.stage_values() {
            if !p.mod_floor(&lambda).is_one() && !lambda.is_one() {
                return Err(congruence(&p, 1, &lambda));
            }
        }
        Ok(())
    }

    /// Designed eigenvalue of each presentation stage: `p`, or `q p` with `q` set.
    pub fn stage_values(&self) -> Vec<BigInt> {
        match &self.q {
            Some(q) => self.p_seq.iter().map(|p| q * p).collect(),
            None => self.p_seq.clone(),
        }
    }
}

fn congruence(value: &BigInt, residue: i64, modulus: &BigInt) -> EcrsError {
    EcrsError::CongruenceViolated {
        value: value.to_string(),
        residue: residue.to_string(),
        modulus: modulus.to_string(),
    }
}

/// Presentation stages with common left eigenvector `(lambda, rho)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PresentationStages {
    /// `[[p_{n+1}, v_n], [0, I_k]]` with `v_n = rho (p_{n+1} - 1) / lambda`.
    pub matrices: Vec<Matrix<BigInt>>,
    /// `y_n = rho (q_n - 1) / lambda` for levels `1..=N+1`, with `y_1 = 0`.
    pub y: Vec<Vec<BigInt>>,
    /// `r^n = (lambda / q_n, rho)` for levels `1..=N+1`.
    pub trace_rows: Vec<Vec<BigRational>>,
    /// `q_n = p_2 ... p_n`, with `q_1 = 1`.
    pub q: Vec<BigInt>,
}

/// Builds the stages `[[p, v_n], [0, I]]` and the intertwiners `[[1, y_n], [0, I]]`
/// from `diag(p, I)` with trace rows `r^n`.
pub fn presentation_stages(prob: &EcrsProblem) -> Result<PresentationStages, EcrsError> {
    prob.validate()?;
    let k = prob.k;
    let lambda = BigInt::from(prob.lambda);
    let ps = prob.stage_values();
    let scaled = |num: &BigInt| -> Vec<BigInt> { prob.rho.iter().map(|r| r * num / &lambda).collect() };
    let mut matrices = Vec::with_capacity(ps.len());
    for p in &ps {
        let v = scaled(&(p - 1));
        let mut m = Matrix::identity(k + 1);
        m.set(0, 0, p.clone());
        for j in 0..k {
            m.set(0, j + 1, v[j].clone());
        }
        matrices.push(m);
    }
    let mut q = vec![BigInt::one()];
    for p in &ps {
        let next = q.last().expect("nonempty") * p;
        q.push(next);
    }
    let y = q.iter().map(|qn| scaled(&(qn - 1))).collect();
    let trace_rows = q
        .iter()
        .map(|qn| {
            let mut r = vec![BigRational::new(lambda.clone(), qn.clone())];
            r.extend(prob.rho.iter().map(|x| BigRational::from(x.clone())));
            r
        })
        .collect();
    Ok(PresentationStages { matrices, y, trace_rows, q })
}

/// Conjugator `C = [[1, v], [0, E]]` with `C M C^{-1} = [[p, (p-1)/lambda u], [0, I]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Normalization {
    pub v: Vec<BigInt>,
    /// `E` with `rho - lambda v = u E`.
    pub e: UnimodularTransform,
    pub conjugator: UnimodularTransform,
}

impl Normalization {
    pub fn conjugate(&self, m: &Matrix<BigInt>) -> Matrix<BigInt> {
        let c = self.conjugator.matrix();
        c.mul(m).mul(self.conjugator.inverse().matrix())
    }
}

/// Finds `v` and `E` so that `rho - lambda v = u E` with `u` all-ones.
pub fn normalize_to_ones(prob: &EcrsProblem) -> Result<Normalization, EcrsError> {
    prob.validate()?;
    let k = prob.k;
    let lambda = BigInt::from(prob.lambda);
    let rho = &prob.rho;
    let v: Vec<BigInt> = if k == 0 || content(rho).is_one() {
        vec![BigInt::zero(); k]
    } else if k == 1 {
        let r = &rho[0];
        let shift = [BigInt::one(), -BigInt::one()]
            .into_iter()
            .find(|t| (r - t).mod_floor(&lambda).is_zero())
            .ok_or_else(|| EcrsError::K1Unnormalizable { rho: r.to_string(), lambda: prob.lambda })?;
        vec![(r - shift) / &lambda]
    } else {
        // Write rho = c e_1 J; then rho - lambda e_2 J = (c, -lambda, 0, ...) J has content 1.
        let c = content(rho);
        let mut ce1 = vec![BigInt::zero(); k];
        ce1[0] = c;
        let j = map_content1_row(rho, &ce1).map_err(|e| EcrsError::InvalidProblem(e.to_string()))?;
        let mut e2 = vec![BigInt::zero(); k];
        e2[1] = BigInt::one();
        j.apply_row(&e2)
    };
    let target: Vec<BigInt> = rho.iter().zip(&v).map(|(r, x)| r - &lambda * x).collect();
    let ones = vec![BigInt::one(); k];
    let e = if k == 0 {
        UnimodularTransform::identity(0)
    } else {
        map_content1_row(&target, &ones).map_err(|err| EcrsError::InvalidProblem(err.to_string()))?
    };
    if e.apply_row(&ones) != target {
        return Err(EcrsError::VerificationFailed { stage: 0, reason: "u E differs from rho - lambda v".into() });
    }
    // C = [[1, 0], [0, E]] [[1, v], [0, I]] as row-convention factors.
    let mut ops: Vec<ElementaryOp<BigInt>> = e.factorization().iter().map(|op| shift_op(op, 1)).collect();
    ops.extend(
        v.iter()
            .enumerate()
            .filter(|(_, x)| !x.is_zero())
            .map(|(j, x)| ElementaryOp::AddMultiple { from: 0, to: j + 1, factor: x.clone() }),
    );
    let conjugator = UnimodularTransform::from_ops(k + 1, ops);
    Ok(Normalization { v, e, conjugator })
}

fn shift_op(op: &ElementaryOp<BigInt>, by: usize) -> ElementaryOp<BigInt> {
    match op {
        ElementaryOp::Swap(i, j) => ElementaryOp::Swap(i + by, j + by),
        ElementaryOp::Negate(i) => ElementaryOp::Negate(i + by),
        ElementaryOp::AddMultiple { from, to, factor } => {
            ElementaryOp::AddMultiple { from: from + by, to: to + by, factor: factor.clone() }
        }
    }
}

/// Borders `M` with zero columns on the right and the rows `X` below.
pub fn embroider_rows(m: &Matrix<BigInt>, x: &Matrix<BigInt>) -> Result<Matrix<BigInt>, EcrsError> {
    check_full_rank(m)?;
    let s = m.rows();
    if x.rows() > 0 && x.cols() != s {
        return Err(EcrsError::DimensionMismatch(format!("X has {} columns, M has size {s}", x.cols())));
    }
    let big = s + x.rows();
    let mut out = Matrix::zeros(big, big);
    out.put_block(0, 0, m);
    if x.rows() > 0 {
        out.put_block(s, 0, x);
    }
    Ok(out)
}

/// Borders `M` with the columns `[Z; Y]` on the right and zero rows below.
///
/// `Z` sits beside the leading `a = Z.rows()` rows and `Y` beside the rest.
pub fn embroider_cols(m: &Matrix<BigInt>, y: &Matrix<BigInt>, z: &Matrix<BigInt>) -> Result<Matrix<BigInt>, EcrsError> {
    check_full_rank(m)?;
    let s = m.rows();
    if z.rows() + y.rows() != s || z.cols() != y.cols() {
        return Err(EcrsError::DimensionMismatch(format!(
            "[Z; Y] is {}x{} / {}x{}, M has size {s}",
            z.rows(),
            z.cols(),
            y.rows(),
            y.cols()
        )));
    }
    let big = s + z.cols();
    let mut out = Matrix::zeros(big, big);
    out.put_block(0, 0, m);
    if z.cols() > 0 {
        if z.rows() > 0 {
            out.put_block(0, s, z);
        }
        if y.rows() > 0 {
            out.put_block(z.rows(), s, y);
        }
    }
    Ok(out)
}

fn check_full_rank(m: &Matrix<BigInt>) -> Result<(), EcrsError> {
    if !m.is_square() {
        return Err(EcrsError::DimensionMismatch(format!("M is {}x{}", m.rows(), m.cols())));
    }
    let rank = rank_rational(m);
    if rank < m.rows() {
        return Err(EcrsError::RankDeficient { rank, size: m.rows() });
    }
    Ok(())
}

/// How the normalized `(k+1)`-stages reach the target size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "case")]
pub enum EcrsCase {
    /// `lambda = k + 1`: no border.
    KPlusOne,
    /// `k + 1 < lambda <= 2k + 1`: zero columns and rows `X = (0 | I_m | 0)`.
    Narrow,
    /// `lambda > 2k + 1`: zero columns and rows `X = (0 | [I_k; 0])`.
    Wide,
    /// Infinite prime present: `lambda q - k - 1` columns with top entries `p`.
    PDivisible {
        #[serde(with = "io::int")]
        q: BigInt,
    },
    /// Polynomials in a user-supplied seed matrix.
    Commuting,
}

/// Fixed conjugation `N -> C N C^{-1}` tracked with its inverse.
#[derive(Debug, Clone)]
struct Conjugator {
    c: Matrix<BigInt>,
    c_inv: Matrix<BigInt>,
}

impl Conjugator {
    fn identity(n: usize) -> Self {
        Conjugator { c: Matrix::identity(n), c_inv: Matrix::identity(n) }
    }

    /// Column `target += s * column source` with the matching row operation
    /// `row source -= s * row target`, i.e. `N -> R^{-1} N R`.
    fn shear(&mut self, ms: &mut [Matrix<BigInt>], target: usize, source: usize, s: &BigInt) {
        for m in ms.iter_mut() {
            shear_matrix(m, target, source, s);
        }
        let n = self.c.rows();
        for j in 0..n {
            let v = self.c.get(source, j) - s * self.c.get(target, j);
            self.c.set(source, j, v);
        }
        for i in 0..n {
            let v = self.c_inv.get(i, target) + s * self.c_inv.get(i, source);
            self.c_inv.set(i, target, v);
        }
    }
}

fn shear_matrix(m: &mut Matrix<BigInt>, target: usize, source: usize, s: &BigInt) {
    let n = m.rows();
    for i in 0..n {
        let v = m.get(i, target) + s * m.get(i, source);
        m.set(i, target, v);
    }
    for j in 0..n {
        let v = m.get(source, j) - s * m.get(target, j);
        m.set(source, j, v);
    }
}

/// Finished stages and the conjugator that produced them.
#[derive(Debug, Clone)]
pub struct FinishedStages {
    pub seq: RealizationSeq,
    /// `C` with `A_n = C N_n C^{-1}` for the bordered input stages `N_n`.
    pub conjugator: Matrix<BigInt>,
}

/// Conjugates bordered stages to nonnegative primitive matrices with all
/// row and column sums equal to the stage value.
///
/// The inputs must share right eigenvector `e_1` and a left eigenvector that
/// the case-specific shear moves to `(size, 1, ..., 1)`.
pub fn ecrs_finisher(stages: &[Matrix<BigInt>], k: usize, lambda: u64, case: &EcrsCase) -> Result<FinishedStages, EcrsError> {
    let first = stages.first().ok_or_else(|| EcrsError::InvalidProblem("no stages".into()))?;
    let size = first.rows();
    if stages.iter().any(|m| m.shape() != (size, size)) {
        return Err(EcrsError::DimensionMismatch("stages differ in size".into()));
    }
    let mut ms = stages.to_vec();
    let mut conj = Conjugator::identity(size);
    let one = BigInt::one();
    match case {
        EcrsCase::KPlusOne | EcrsCase::Commuting => {}
        EcrsCase::Narrow | EcrsCase::Wide => {
            if k == 0 {
                return Err(EcrsError::DimensionMismatch("bordering needs k >= 1".into()));
            }
            // Each border column picks up the column k places to its left.
            for t in k + 1..size {
                conj.shear(&mut ms, t, t - k, &one);
            }
        }
        EcrsCase::PDivisible { q } => {
            if size < k + 2 || k == 0 {
                return Err(EcrsError::DimensionMismatch(format!("size {size} leaves no border for k = {k}")));
            }
            let lambda = BigInt::from(lambda);
            // Left eigenvector (lambda q, q u, lambda 1): make slot 1 equal 1,
            // then clear the other slots against it.
            let s: BigInt = (q - 1) / &lambda;
            conj.shear(&mut ms, 1, k + 1, &-s);
            for t in 2..=k {
                conj.shear(&mut ms, t, 1, &(BigInt::one() - q));
            }
            for t in k + 1..size {
                conj.shear(&mut ms, t, 1, &(BigInt::one() - &lambda));
            }
        }
    }
    if !matches!(case, EcrsCase::Commuting) {
        // Add the first row to every other row and subtract the other columns from the first.
        for i in 1..size {
            conj.shear(&mut ms, 0, i, &-BigInt::one());
        }
    }
    let mut out = Vec::with_capacity(ms.len());
    for (n, m) in ms.into_iter().enumerate() {
        if let Some((row, col, value)) = first_negative(&m) {
            return Err(EcrsError::PositivityFailed { stage: n, row, col, value: value.to_string() });
        }
        let p = verify_ecrs_stage(n, &m)?;
        out.push(Stage { matrix: m, p });
    }
    let markers = Some(vec![vec![BigInt::one(); size]; out.len() + 1]);
    let flags = Flags { ecs: true, ers: true, ecrs: true, primitive: true };
    let seq = RealizationSeq::new(out, flags, markers).expect("square stages of one size chain");
    Ok(FinishedStages { seq, conjugator: conj.c })
}

fn first_negative(m: &Matrix<BigInt>) -> Option<(usize, usize, BigInt)> {
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            if m.get(i, j).is_negative() {
                return Some((i, j, m.get(i, j).clone()));
            }
        }
    }
    None
}

/// Checks nonnegativity, primitivity and equal row and column sums; returns the sum.
pub fn verify_ecrs_stage(stage: usize, m: &Matrix<BigInt>) -> Result<BigInt, EcrsError> {
    let fail = |reason: String| EcrsError::VerificationFailed { stage, reason };
    if !is_nonnegative(m) {
        return Err(fail("negative entry".into()));
    }
    let p = common_column_sum(m).ok_or_else(|| fail("column sums differ".into()))?;
    if common_row_sum(m) != Some(p.clone()) {
        return Err(fail("row sums differ from column sums".into()));
    }
    if !is_primitive(m).map_err(|e| fail(e.to_string()))? {
        return Err(fail("not primitive".into()));
    }
    let report = check_equal_sums_criterion(m).map_err(|e| fail(e.to_string()))?;
    if report.eigenvalue != p || report.inner_product != BigInt::from(m.rows()) {
        return Err(fail(format!(
            "Perron value {} and inner product {} do not match sum {p} and size {}",
            report.eigenvalue,
            report.inner_product,
            m.rows()
        )));
    }
    Ok(p)
}

/// Polynomial with nonnegative integer coefficients, ascending degree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolyNat(#[serde(with = "io::int_vec")] Vec<BigInt>);

impl PolyNat {
    pub fn new(coefficients: Vec<BigInt>) -> Result<Self, EcrsError> {
        if coefficients.iter().any(|c| c.is_negative()) {
            return Err(EcrsError::InvalidProblem("negative coefficient".into()));
        }
        let mut c = coefficients;
        while c.len() > 1 && c.last().is_some_and(|x| x.is_zero()) {
            c.pop();
        }
        Ok(PolyNat(c))
    }

    pub fn coefficients(&self) -> &[BigInt] {
        &self.0
    }

    pub fn eval(&self, x: &BigInt) -> BigInt {
        self.0.iter().rev().fold(BigInt::zero(), |acc, c| acc * x + c)
    }

    /// `f(A)` by Horner's rule.
    pub fn eval_matrix(&self, a: &Matrix<BigInt>) -> Matrix<BigInt> {
        let n = a.rows();
        let mut acc = Matrix::zeros(n, n);
        for c in self.0.iter().rev() {
            acc = acc.mul(a).add(&Matrix::identity(n).scale(c));
        }
        acc
    }
}

/// Finds `f` with nonnegative coefficients, `f(m) = l` and `f(-1) = +-1`.
///
/// Starts from the base-`m` digits of `l` and moves one unit from a digit to
/// `m` units of the digit below, which shifts `f(-1)` by `m + 1`. Since
/// `f(m) = f(-1) mod (m + 1)`, the condition `l = +-1 mod (m + 1)` is needed.
pub fn poly_for(m: &BigInt, l: &BigInt) -> Result<PolyNat, EcrsError> {
    if *m <= BigInt::one() || !l.is_positive() {
        return Err(EcrsError::InvalidProblem(format!("poly_for needs m > 1 and l > 0, got ({m}, {l})")));
    }
    let m1 = m + 1;
    let r = l.mod_floor(&m1);
    let target = if r.is_one() {
        BigInt::one()
    } else if r == m1.clone() - 1 {
        -BigInt::one()
    } else {
        return Err(congruence(l, 1, &m1).with_residue("+-1"));
    };
    let mut digits = Vec::new();
    let mut rest = l.clone();
    while !rest.is_zero() {
        let (q, d) = rest.div_mod_floor(m);
        digits.push(d);
        rest = q;
    }
    let at_minus_one = |d: &[BigInt]| -> BigInt {
        d.iter().enumerate().map(|(i, c)| if i % 2 == 0 { c.clone() } else { -c }).sum()
    };
    let mut value = at_minus_one(&digits);
    while value != target {
        // Too large: take from an even slot i >= 2; too small: from an odd slot.
        let parity = if value > target { 0 } else { 1 };
        let i = (1..digits.len())
            .find(|&i| i % 2 == parity && digits[i].is_positive())
            .ok_or_else(|| EcrsError::VerificationFailed { stage: 0, reason: format!("no digit move for ({m}, {l})") })?;
        digits[i] -= 1;
        digits[i - 1] += m;
        value = at_minus_one(&digits);
    }
    PolyNat::new(digits)
}

impl EcrsError {
    fn with_residue(self, residue: &str) -> Self {
        match self {
            EcrsError::CongruenceViolated { value, modulus, .. } => {
                EcrsError::CongruenceViolated { value, residue: residue.into(), modulus }
            }
            other => other,
        }
    }
}

/// Stages `A_n = A f_n(A)` with `f_n = poly_for(q, p_n)` for a seed `A` with
/// equal row and column sums `q`. All stages commute and share the all-ones
/// eigenvectors, with Perron value `q p_n`.
pub fn commuting_family(a: &Matrix<BigInt>, p_seq: &[BigInt]) -> Result<RealizationSeq, EcrsError> {
    if !a.is_square() || a.rows() == 0 {
        return Err(EcrsError::NotEqualSums("seed is not a nonempty square matrix".into()));
    }
    let q = common_column_sum(a).ok_or_else(|| EcrsError::NotEqualSums("column sums differ".into()))?;
    if common_row_sum(a) != Some(q.clone()) {
        return Err(EcrsError::NotEqualSums("row sums differ from column sums".into()));
    }
    if !is_nonnegative(a) || !is_primitive(a).unwrap_or(false) {
        return Err(EcrsError::NotEqualSums("seed is not nonnegative and primitive".into()));
    }
    let mut stages = Vec::with_capacity(p_seq.len());
    for (n, p) in p_seq.iter().enumerate() {
        let f = poly_for(&q, p)?;
        let m = a.mul(&f.eval_matrix(a));
        let sum = verify_ecrs_stage(n, &m)?;
        if sum != &q * p {
            return Err(EcrsError::VerificationFailed { stage: n, reason: format!("sum {sum} != q p = {}", &q * p) });
        }
        stages.push(Stage { matrix: m, p: sum });
    }
    let markers = Some(vec![vec![BigInt::one(); a.rows()]; stages.len() + 1]);
    let flags = Flags { ecs: true, ers: true, ecrs: true, primitive: true };
    Ok(RealizationSeq::new(stages, flags, markers).expect("equal sizes chain"))
}

/// Output of [`ecrs_pipeline`].
#[derive(Debug, Clone)]
pub struct EcrsConstruction {
    pub seq: RealizationSeq,
    pub case: EcrsCase,
    pub size: usize,
    /// Cut points into the input `p_seq`: output stage `i` is the product of
    /// inputs `cuts[i]..cuts[i+1]`.
    pub cuts: Vec<usize>,
    /// `C` with `A_n = C M'_n C^{-1}`, where `M'_n` is the bordered presentation
    /// stage in the original coordinates. `1^T C` is the original left eigenvector.
    pub conjugator: Option<Matrix<BigInt>>,
}

/// Builds an ECRS realization of size `lambda` (or `lambda q`), merging
/// adjacent stages when a stage value is too small for positivity.
pub fn ecrs_pipeline(prob: &EcrsProblem) -> Result<EcrsConstruction, EcrsError> {
    prob.validate()?;
    if let Some(seed) = &prob.seed_matrix {
        let seq = commuting_family(seed, &prob.p_seq)?;
        return Ok(EcrsConstruction {
            size: seed.rows(),
            seq,
            case: EcrsCase::Commuting,
            cuts: (0..=prob.p_seq.len()).collect(),
            conjugator: None,
        });
    }
    let k = prob.k;
    let case = match &prob.q {
        Some(q) => EcrsCase::PDivisible { q: q.clone() },
        None => {
            let decision = decide_ecrs(Cardinal::Finite(k as u64 + 1), &SupernaturalNumber::trivial(), Cardinal::Finite(prob.lambda));
            if !decision.exists {
                return Err(EcrsError::LambdaTooSmall { lambda: prob.lambda, rank: k + 1, reason: decision.reason });
            }
            let m = prob.lambda as usize - k - 1;
            if m == 0 {
                EcrsCase::KPlusOne
            } else if m <= k {
                EcrsCase::Narrow
            } else {
                EcrsCase::Wide
            }
        }
    };
    let norm = normalize_to_ones(prob)?;
    let mut cuts: Vec<usize> = (0..=prob.p_seq.len()).collect();
    loop {
        let mut merged = prob.clone();
        // A merged stage has value prod(q p_i), so its border entry is q^(len-1) prod(p_i).
        merged.p_seq = cuts
            .windows(2)
            .map(|w| {
                let p: BigInt = prob.p_seq[w[0]..w[1]].iter().product();
                match &prob.q {
                    Some(q) => p * num_traits::pow(q.clone(), w[1] - w[0] - 1),
                    None => p,
                }
            })
            .collect();
        match build_bordered(&merged, &norm, &case) {
            Ok((seq, conjugator)) => {
                let size = seq.level_size(1).unwrap_or(0);
                return Ok(EcrsConstruction { seq, case, size, cuts, conjugator: Some(conjugator) });
            }
            Err(EcrsError::PositivityFailed { stage, row, col, value }) => {
                if cuts.len() <= 2 {
                    return Err(EcrsError::PositivityFailed { stage, row, col, value });
                }
                log::debug!("stage {stage} not positive ({value} at ({row}, {col})); merging");
                let j = if stage + 2 < cuts.len() { stage + 1 } else { stage };
                cuts.remove(j);
            }
            Err(other) => return Err(other),
        }
    }
}

fn build_bordered(prob: &EcrsProblem, norm: &Normalization, case: &EcrsCase) -> Result<(RealizationSeq, Matrix<BigInt>), EcrsError> {
    let k = prob.k;
    let lambda = BigInt::from(prob.lambda);
    let pres = presentation_stages(prob)?;
    let ps = prob.stage_values();
    let ones = vec![BigInt::one(); k];
    let mut normalized = Vec::with_capacity(ps.len());
    for (n, (m, p)) in pres.matrices.iter().zip(&ps).enumerate() {
        let nm = norm.conjugate(m);
        let c = (p - 1) / &lambda;
        let mut expected = Matrix::identity(k + 1);
        expected.set(0, 0, p.clone());
        for j in 0..k {
            expected.set(0, j + 1, &c * &ones[j]);
        }
        if nm != expected {
            return Err(EcrsError::VerificationFailed { stage: n, reason: "normalization did not reach the all-ones form".into() });
        }
        normalized.push(nm);
    }
    let size = match case {
        EcrsCase::PDivisible { q } => {
            let s: BigInt = &lambda * q;
            usize::try_from(s).map_err(|_| EcrsError::InvalidProblem("size lambda q is too large".into()))?
        }
        _ => prob.lambda as usize,
    };
    let m = size - k - 1;
    let mut bordered = Vec::with_capacity(normalized.len());
    for (nm, p) in normalized.iter().zip(&prob.p_seq) {
        let b = match case {
            EcrsCase::PDivisible { .. } => {
                let mut z = Matrix::zeros(1, m);
                for j in 0..m {
                    z.set(0, j, p.clone());
                }
                embroider_cols(nm, &Matrix::zeros(k, m), &z)?
            }
            _ => {
                let mut x = Matrix::zeros(m, k + 1);
                for i in 0..m.min(k) {
                    x.set(i, i + 1, BigInt::one());
                }
                embroider_rows(nm, &x)?
            }
        };
        bordered.push(b);
    }
    let left = bordered_left_eigenvector(prob, case, size);
    for (n, b) in bordered.iter().enumerate() {
        let p = &ps[n];
        let scaled: Vec<BigInt> = left.iter().map(|x| x * p).collect();
        if b.vec_mul(&left) != scaled {
            return Err(EcrsError::VerificationFailed { stage: n, reason: "bordered stage lost the common left eigenvector".into() });
        }
    }
    let finished = ecrs_finisher(&bordered, k, prob.lambda, case)?;
    // Lift the normalization to the bordered size: diag(C_norm, I).
    let mut lift = Matrix::identity(size);
    lift.put_block(0, 0, norm.conjugator.matrix());
    let total = finished.conjugator.mul(&lift);
    let original_left = original_left_eigenvector(prob, case, size);
    if total.vec_mul(&vec![BigInt::one(); size]) != original_left {
        return Err(EcrsError::VerificationFailed { stage: 0, reason: "1^T C differs from the original left eigenvector".into() });
    }
    if integer_inverse(&total).is_err() {
        return Err(EcrsError::VerificationFailed { stage: 0, reason: "conjugator is not unimodular".into() });
    }
    let mut e1 = vec![BigInt::zero(); size];
    e1[0] = BigInt::one();
    if total.mul_vec(&e1) != vec![BigInt::one(); size] {
        return Err(EcrsError::VerificationFailed { stage: 0, reason: "C e_1 is not all-ones".into() });
    }
    Ok((finished.seq, total))
}

/// Common left eigenvector of the bordered normalized stages.
fn bordered_left_eigenvector(prob: &EcrsProblem, case: &EcrsCase, size: usize) -> Vec<BigInt> {
    let k = prob.k;
    let lambda = BigInt::from(prob.lambda);
    match case {
        EcrsCase::PDivisible { q } => {
            let mut v = vec![&lambda * q];
            v.extend(std::iter::repeat_n(q.clone(), k));
            v.extend(std::iter::repeat_n(lambda.clone(), size - k - 1));
            v
        }
        _ => {
            let mut v = vec![lambda];
            v.extend(std::iter::repeat_n(BigInt::one(), k));
            v.extend(std::iter::repeat_n(BigInt::zero(), size - k - 1));
            v
        }
    }
}

/// The left eigenvector in the original coordinates, `(lambda, rho, 0)` or
/// `(lambda q, q rho, lambda 1)`.
fn original_left_eigenvector(prob: &EcrsProblem, case: &EcrsCase, size: usize) -> Vec<BigInt> {
    let k = prob.k;
    let lambda = BigInt::from(prob.lambda);
    match case {
        EcrsCase::PDivisible { q } => {
            let mut v = vec![&lambda * q];
            v.extend(prob.rho.iter().map(|r| q * r));
            v.extend(std::iter::repeat_n(lambda.clone(), size - k - 1));
            v
        }
        _ => {
            let mut v = vec![lambda];
            v.extend(prob.rho.iter().cloned());
            v.extend(std::iter::repeat_n(BigInt::zero(), size - k - 1));
            v
        }
    }
}

/// `r^1 M_n = p_{n+1} r^1` for every presentation stage.
pub fn is_common_left_eigenvector(pres: &PresentationStages, ps: &[BigInt], r: &[BigInt]) -> bool {
    pres.matrices.iter().zip(ps).all(|(m, p)| m.vec_mul(r) == r.iter().map(|x| x * p).collect::<Vec<_>>())
}
