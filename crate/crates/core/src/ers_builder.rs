//! ERS realizations: upper-triangular presentations `[[p, z], [0, B]]`, the
//! w-sequence matching a target trace row, and transposes of general ECS matrices.
//!
//! Stages act on columns; a trace at level `n` is a row `r^n` with
//! `r^{n+1} M_n = r^n`. The distinguished subgroup is generated by the first
//! basis vector, which every stage maps to `p` times itself.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::ecs_builder::{assemble, ratio, ExtStage};
use crate::exact_core::{colsum_norm, determinant, integer_inverse, inverse_rational, sup_norm, to_rational};
use crate::io;
use crate::matrix::Matrix;
use crate::perron::is_primitive;
use crate::realization::{Flags, RealizationSeq, Stage};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ErsError {
    /// `B` has zero determinant.
    #[error("B is singular")]
    SingularB,
    /// A stage leaves the regime the w-sequence construction needs.
    #[error("regime violated at stage {index}: {reason}")]
    RegimeViolation { index: usize, reason: String },
    /// A matrix does not have the common kernel vector `z`.
    #[error("stage {0} does not annihilate z = (k+1, -1, ..., -1)")]
    KernelMismatch(usize),
    /// Vector or matrix sizes disagree with `k`.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// A stage has `p <= 1` or a malformed trace row.
    #[error("invalid data: {0}")]
    InvalidData(String),
    /// The horizon is zero or longer than the data.
    #[error("horizon {horizon} is outside 1..={available}")]
    BadHorizon { horizon: usize, available: usize },
    /// No merging of stages yields nonnegative primitive matrices.
    #[error("no nonnegative realization at stage {stage}: {reason}")]
    Infeasible { stage: usize, reason: String },
    /// A constructed stage fails an ERS postcondition.
    #[error("stage {stage} failed verification: {reason}")]
    VerificationFailed { stage: usize, reason: String },
}

/// One stage `M_n = [[p, u], [0, B]]` with `u` a row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErsStage {
    #[serde(with = "io::int")]
    pub p: BigInt,
    #[serde(with = "io::int_vec")]
    pub u: Vec<BigInt>,
    #[serde(rename = "B", with = "io::int_matrix")]
    pub b: Matrix<BigInt>,
}

impl ErsStage {
    pub fn new(p: impl Into<BigInt>, u: Vec<BigInt>, b: Matrix<BigInt>) -> Self {
        ErsStage { p: p.into(), u, b }
    }

    pub fn block_matrix(&self) -> Matrix<BigInt> {
        let k = self.u.len();
        let mut m = Matrix::zeros(k + 1, k + 1);
        m.set(0, 0, self.p.clone());
        for j in 0..k {
            m.set(0, j + 1, self.u[j].clone());
        }
        m.put_block(1, 1, &self.b);
        m
    }

    /// The general ECS parameters `(p, v = u^T, B^T)` of the column-sum side.
    fn to_column_form(&self) -> ExtStage {
        ExtStage::new(self.p.clone(), self.u.clone(), self.b.transpose())
    }
}

/// Upper-triangular presentation with a target trace row `(1, rho)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawErs")]
pub struct ErsStageData {
    pub k: usize,
    pub stages: Vec<ErsStage>,
    /// `(1, rho^1)`, length `k + 1`.
    #[serde(with = "io::rat_vec")]
    pub trace_row: Vec<BigRational>,
}

#[derive(Deserialize)]
struct RawErs {
    k: usize,
    stages: Vec<ErsStage>,
    #[serde(with = "io::rat_vec")]
    trace_row: Vec<BigRational>,
}

impl TryFrom<RawErs> for ErsStageData {
    type Error = ErsError;

    fn try_from(raw: RawErs) -> Result<Self, Self::Error> {
        ErsStageData::new(raw.k, raw.stages, raw.trace_row)
    }
}

impl ErsStageData {
    pub fn new(k: usize, stages: Vec<ErsStage>, trace_row: Vec<BigRational>) -> Result<Self, ErsError> {
        if trace_row.len() != k + 1 || !trace_row[0].is_one() {
            return Err(ErsError::InvalidData(format!("trace row must be (1, rho) of length {}", k + 1)));
        }
        for (n, s) in stages.iter().enumerate() {
            if s.u.len() != k || s.b.shape() != (k, k) {
                return Err(ErsError::Dimension(format!("stage {n} does not match k = {k}")));
            }
            if s.p <= BigInt::one() {
                return Err(ErsError::InvalidData(format!("stage {n} has p = {} <= 1", s.p)));
            }
            if determinant(&s.b).map_or(true, |d| d.is_zero()) {
                return Err(ErsError::SingularB);
            }
        }
        Ok(ErsStageData { k, stages, trace_row })
    }

    pub fn rho(&self) -> &[BigRational] {
        &self.trace_row[1..]
    }
}

/// Per-stage outcome of [`verify_ers`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErsStageCheck {
    pub nonnegative: bool,
    /// Common row sum, if all rows agree.
    pub row_sum: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErsReport {
    pub stages: Vec<ErsStageCheck>,
    pub marker_chain: bool,
    /// Finite stand-in for "p > 1 infinitely often".
    pub some_p_exceeds_one: bool,
    pub failures: Vec<String>,
}

impl ErsReport {
    pub fn is_ers(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks nonnegativity, constant row sums and the marker chain `A_n h_n = p h_{n+1}`.
///
/// Without explicit markers the all-ones vectors are used.
pub fn verify_ers(seq: &RealizationSeq) -> ErsReport {
    let mut failures = Vec::new();
    let mut stages = Vec::with_capacity(seq.stages.len());
    let mut sums = Vec::with_capacity(seq.stages.len());
    for (n, s) in seq.stages.iter().enumerate() {
        let nonnegative = !s.matrix.iter().any(Signed::is_negative);
        if !nonnegative {
            failures.push(format!("stage {n} has a negative entry"));
        }
        let rs = s.matrix.row_sums();
        let row_sum = rs.first().filter(|f| rs.iter().all(|x| x == *f)).cloned();
        if row_sum.is_none() {
            failures.push(format!("stage {n} has unequal row sums"));
        }
        stages.push(ErsStageCheck { nonnegative, row_sum: row_sum.as_ref().map(|x| x.to_string()) });
        sums.push(row_sum);
    }
    let mut marker_chain = true;
    for (n, s) in seq.stages.iter().enumerate() {
        let (h, h_next) = match &seq.markers {
            Some(m) => (m[n].clone(), m[n + 1].clone()),
            None => (vec![BigInt::one(); s.matrix.cols()], vec![BigInt::one(); s.matrix.rows()]),
        };
        let Some(p) = &sums[n] else {
            marker_chain = false;
            continue;
        };
        if h.len() != s.matrix.cols() || h_next.len() != s.matrix.rows() {
            marker_chain = false;
            failures.push(format!("stage {n} marker has the wrong length"));
            continue;
        }
        let image = s.matrix.mul_vec(&h);
        if image.iter().zip(&h_next).any(|(a, b)| *a != p * b) {
            marker_chain = false;
            failures.push(format!("stage {n} does not map its marker to {p} times the next"));
        }
    }
    let some_p_exceeds_one = sums.iter().flatten().any(|p| *p > BigInt::one());
    if !some_p_exceeds_one {
        failures.push("no stage has row sum > 1".into());
    }
    ErsReport { stages, marker_chain, some_p_exceeds_one, failures }
}

/// Nearest integer; an exact half rounds toward zero.
pub fn round_half_toward_zero(x: &BigRational) -> BigInt {
    let f = x.floor().to_integer();
    let frac = x - BigRational::from(f.clone());
    let half = BigRational::new(BigInt::one(), BigInt::from(2));
    if frac > half || (frac == half && x.is_negative()) {
        f + 1
    } else {
        f
    }
}

/// Finds `y` with `|z - yB|_inf < |det B|`.
///
/// Rounds `z B^{-1}`, then, if needed, reduces the remainder modulo
/// `d = |det B|` using `d Z^k ⊆ Z^k B`.
pub fn reduce_mod_rowlattice(z: &[BigInt], b: &Matrix<BigInt>) -> Result<Vec<BigInt>, ErsError> {
    let k = z.len();
    if b.shape() != (k, k) {
        return Err(ErsError::Dimension(format!("B is {}x{}, z has length {k}", b.rows(), b.cols())));
    }
    let det = determinant(b).map_err(|e| ErsError::Dimension(e.to_string()))?;
    if det.is_zero() {
        return Err(ErsError::SingularB);
    }
    let d = det.abs();
    let inv = inverse_rational(b).map_err(|_| ErsError::SingularB)?;
    let zr: Vec<BigRational> = z.iter().cloned().map(BigRational::from).collect();
    let mut y: Vec<BigInt> = inv.vec_mul(&zr).iter().map(round_half_toward_zero).collect();
    let rem: Vec<BigInt> = z.iter().zip(b.vec_mul(&y)).map(|(a, c)| a - c).collect();
    if sup_norm(&rem) >= d {
        // rem = d q + r with |r| <= d/2, and d q = (q d B^{-1}) B with d B^{-1} integral.
        let q: Vec<BigInt> = rem.iter().map(|x| round_half_toward_zero(&BigRational::new(x.clone(), d.clone()))).collect();
        let adj = inv.scale(&BigRational::from(d.clone()));
        let qr: Vec<BigRational> = q.into_iter().map(BigRational::from).collect();
        for (yi, extra) in y.iter_mut().zip(adj.vec_mul(&qr)) {
            *yi += extra.to_integer();
        }
    }
    Ok(y)
}

/// Output of [`build_w_sequence`], indexed from stage 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WSequence {
    /// `y_1, ..., y_{N+1}` with `y_1 = 0`.
    pub y: Vec<Vec<BigInt>>,
    /// `w^1, ..., w^N`.
    pub w: Vec<Vec<BigInt>>,
    /// Horizon truncation of the `z` series.
    pub z_inf: Vec<BigRational>,
    /// `S_N = sum_n w^n B_{n-1} ... B_1 / (p_{n+1} ... p_2)`.
    pub partial_sum: Vec<BigRational>,
    /// Exact bound `|S_N - rho|_inf <= colsum(B_N ... B_1) / (2 p_{N+1} ... p_2)`.
    pub rounding_bound: BigRational,
    /// Bound on the series beyond the horizon, assuming later stages stay in regime
    /// with `p` at least the last one; `None` when the last `p` is below 4.
    pub tail_bound: Option<BigRational>,
}

impl WSequence {
    /// Rounding bound plus the tail bound.
    pub fn error_bound(&self) -> Option<BigRational> {
        self.tail_bound.as_ref().map(|t| &self.rounding_bound + t)
    }
}

fn rat_row(v: &[BigInt]) -> Vec<BigRational> {
    v.iter().cloned().map(BigRational::from).collect()
}

fn check_regime(data: &ErsStageData, horizon: usize) -> Result<(), ErsError> {
    if horizon == 0 || horizon > data.stages.len() {
        return Err(ErsError::BadHorizon { horizon, available: data.stages.len() });
    }
    for (n, s) in data.stages[..horizon].iter().enumerate() {
        let norm_b = colsum_norm(&s.b);
        if &norm_b * &norm_b > s.p {
            return Err(ErsError::RegimeViolation { index: n, reason: format!("|B|^2 = {} exceeds p = {}", &norm_b * &norm_b, s.p) });
        }
        if sup_norm(&s.u) >= s.p {
            return Err(ErsError::RegimeViolation { index: n, reason: format!("|z| = {} is not below p = {}", sup_norm(&s.u), s.p) });
        }
        if n > 0 && s.p <= data.stages[n - 1].p {
            return Err(ErsError::RegimeViolation { index: n, reason: "p is not increasing".into() });
        }
    }
    Ok(())
}

/// `(S, Q, Pi)` for the prefix: the trace-row series, `p_{N+1} ... p_2` and `B_N ... B_1`.
fn series(stages: &[(BigInt, Vec<BigInt>, Matrix<BigInt>)], k: usize) -> (Vec<BigRational>, BigInt, Matrix<BigInt>) {
    let mut s = vec![BigRational::zero(); k];
    let mut q = BigInt::one();
    let mut pi: Matrix<BigInt> = Matrix::identity(k);
    for (p, w, b) in stages {
        q *= p;
        let term = pi.vec_mul(w);
        for (si, t) in s.iter_mut().zip(term) {
            *si += BigRational::new(t, q.clone());
        }
        pi = b.mul(&pi);
    }
    (s, q, pi)
}

/// Partial sum `S_N` of the trace-row series for upper-triangular stages.
pub fn trace_row_series(stages: &[ErsStage]) -> Vec<BigRational> {
    let k = stages.first().map_or(0, |s| s.u.len());
    let triples: Vec<_> = stages.iter().map(|s| (s.p.clone(), s.u.clone(), s.b.clone())).collect();
    series(&triples, k).0
}

/// Builds `w^n = z_n + y_{n+1} B_n - p_{n+1} y_n` with `y_{n+1}` rounded from the target.
pub fn build_w_sequence(data: &ErsStageData, horizon: usize) -> Result<WSequence, ErsError> {
    check_regime(data, horizon)?;
    let k = data.k;
    let stages = &data.stages[..horizon];
    let triples: Vec<_> = stages.iter().map(|s| (s.p.clone(), s.u.clone(), s.b.clone())).collect();
    let (z_inf, _, _) = series(&triples, k);
    let diff: Vec<BigRational> = data.rho().iter().zip(&z_inf).map(|(r, z)| r - z).collect();

    let mut y = vec![vec![BigInt::zero(); k]];
    let mut q = BigInt::one();
    let mut pi: Matrix<BigInt> = Matrix::identity(k);
    for s in stages {
        q *= &s.p;
        pi = s.b.mul(&pi);
        let inv = inverse_rational(&pi).map_err(|_| ErsError::SingularB)?;
        let scaled: Vec<BigRational> = diff.iter().map(|d| d * BigRational::from(q.clone())).collect();
        y.push(inv.vec_mul(&scaled).iter().map(round_half_toward_zero).collect());
    }
    let w: Vec<Vec<BigInt>> = stages
        .iter()
        .enumerate()
        .map(|(n, s)| {
            let yb = s.b.vec_mul(&y[n + 1]);
            (0..k).map(|j| &s.u[j] + &yb[j] - &s.p * &y[n][j]).collect()
        })
        .collect();
    let wt: Vec<_> = stages.iter().zip(&w).map(|(s, w)| (s.p.clone(), w.clone(), s.b.clone())).collect();
    let (partial_sum, q, pi) = series(&wt, k);
    let norm = colsum_norm(&pi);
    let rounding_bound = BigRational::new(norm.clone(), &q * 2);
    let last_p = &stages[horizon - 1].p;
    let m = last_p.sqrt();
    let tail_bound = (m >= BigInt::from(2)).then(|| BigRational::new(norm * &m, q * (&m - 1)));
    Ok(WSequence { y, w, z_inf, partial_sum, rounding_bound, tail_bound })
}

/// Checks `F_{n+1} M_n(z) = M_n(w) F_n` with `F_n = [[1, y_n], [0, I]]`.
pub fn check_w_squares(data: &ErsStageData, ws: &WSequence) -> bool {
    let k = data.k;
    let f = |y: &[BigInt]| {
        let mut m = Matrix::identity(k + 1);
        for j in 0..k {
            m.set(0, j + 1, y[j].clone());
        }
        m
    };
    data.stages.iter().zip(&ws.w).enumerate().all(|(n, (s, w))| {
        let mz = s.block_matrix();
        let mw = ErsStage::new(s.p.clone(), w.clone(), s.b.clone()).block_matrix();
        f(&ws.y[n + 1]).mul(&mz) == mw.mul(&f(&ws.y[n]))
    })
}

/// Basis of `(z^T)^perp`: `1`, then `e_i - e_{k+1}`, as columns.
pub fn complement_basis(k: usize) -> Matrix<BigInt> {
    Matrix::from_fn(k + 2, k + 1, |i, j| {
        if j == 0 || i == j {
            BigInt::one()
        } else if i == k + 1 {
            -BigInt::one()
        } else {
            BigInt::zero()
        }
    })
}

/// Restricts each transpose `A_n^T` to `(z^T)^perp`, giving `[[p, v^T], [0, B^T]]`.
pub fn restrict_to_kernel_complement(seq: &[Matrix<BigInt>]) -> Result<Vec<Matrix<BigInt>>, ErsError> {
    let mut out = Vec::with_capacity(seq.len());
    for (n, a) in seq.iter().enumerate() {
        if !a.is_square() || a.rows() < 3 {
            return Err(ErsError::Dimension(format!("stage {n} is {}x{}", a.rows(), a.cols())));
        }
        let k = a.rows() - 2;
        if a.mul_vec(&crate::ecs_builder::kernel_vector(k)).iter().any(|x| !x.is_zero()) {
            return Err(ErsError::KernelMismatch(n));
        }
        let p = complement_basis(k);
        let image = a.transpose().mul(&p);
        // The top (k+1) rows of P are [[1, 0], [1, I]], so C is read off by elimination.
        let top = p.block(0, k + 1, 0, k + 1);
        let top_inv = integer_inverse(&top).map_err(|e| ErsError::Dimension(e.to_string()))?;
        let c = top_inv.mul(&image.block(0, k + 1, 0, k + 1));
        if p.mul(&c) != image {
            return Err(ErsError::KernelMismatch(n));
        }
        out.push(c);
    }
    Ok(out)
}

/// Output of [`ers_pipeline`] with the data needed to audit the trace row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErsConstruction {
    pub seq: RealizationSeq,
    pub w_sequence: WSequence,
    /// Trace row at level 1 recovered from the output matrices, in the input basis.
    pub recovered_rho: Vec<BigRational>,
    /// `|recovered_rho - rho|_inf`.
    pub trace_error: BigRational,
    /// Proven bound on `trace_error`.
    pub trace_bound: BigRational,
}

#[derive(Clone)]
struct Group {
    start: usize,
    stage: ExtStage,
}

/// Builds an ERS realization of size `k + 2` from the first `horizon` stages.
///
/// The w-sequence is normalized level by level from the top (so each
/// `w^n` lies in `[0, p)`), conjugated by one constant block-triangular
/// matrix chosen from the first group's ratio, turned into general ECS matrices
/// and transposed. Failing groups are merged with their successor.
pub fn ers_pipeline(data: &ErsStageData, horizon: usize) -> Result<ErsConstruction, ErsError> {
    let k = data.k;
    let ws = build_w_sequence(data, horizon)?;
    let stages = &data.stages[..horizon];

    // Backward normalization: g_{N+1} = 0, g_n = floor((w^n + g_{n+1} B_n) / p).
    let mut g: Vec<BigInt> = vec![BigInt::zero(); k];
    let mut normalized: Vec<ErsStage> = Vec::with_capacity(horizon);
    for (s, w) in stages.iter().zip(&ws.w).rev() {
        let shifted: Vec<BigInt> = w.iter().zip(s.b.vec_mul(&g)).map(|(a, b)| a + b).collect();
        g = shifted.iter().map(|x| x.div_floor(&s.p)).collect();
        let u = shifted.iter().zip(&g).map(|(x, gi)| x - &s.p * gi).collect();
        normalized.push(ErsStage::new(s.p.clone(), u, s.b.clone()));
    }
    normalized.reverse();
    let g1 = g;

    let mut groups: Vec<Group> =
        normalized.iter().enumerate().map(|(i, s)| Group { start: i, stage: s.to_column_form() }).collect();
    let (matrices, e, w_shift) = loop {
        let stages: Vec<ExtStage> = groups.iter().map(|g| g.stage.clone()).collect();
        let (i, reason) = match assemble(&stages, &ratio(&stages[0]), k) {
            Ok(a) => break (a.built, a.e, a.w),
            Err(f) => f,
        };
        log::debug!("ers group at stage {} fails ({reason}); merging", groups[i].start);
        if groups.len() == 1 {
            return Err(ErsError::Infeasible { stage: groups[0].start, reason });
        }
        let j = if i + 1 < groups.len() { i } else { i - 1 };
        let later = groups.remove(j + 1).stage;
        // Forward composition of the transposed stages reverses the column-side order.
        groups[j].stage = later.then(&groups[j].stage);
    };

    let ecs_mats: Vec<Matrix<BigInt>> = matrices.iter().map(|(m, _)| m.clone()).collect();
    let out_stages: Vec<Stage> =
        matrices.iter().map(|(m, c)| Stage { matrix: m.transpose(), p: c.p.clone() }).collect();
    let markers = Some(vec![vec![BigInt::one(); k + 2]; out_stages.len() + 1]);
    let flags = Flags { ers: true, primitive: true, ..Flags::default() };
    let seq = RealizationSeq::new(out_stages, flags, markers)
        .map_err(|e| ErsError::VerificationFailed { stage: 0, reason: e.to_string() })?;

    let report = verify_ers(&seq);
    if let Some(f) = report.failures.first() {
        return Err(ErsError::VerificationFailed { stage: 0, reason: f.clone() });
    }
    for (n, s) in seq.stages.iter().enumerate() {
        if s.matrix.row_sums().iter().any(|r| *r != s.p) {
            return Err(ErsError::VerificationFailed { stage: n, reason: "row sums differ from p".into() });
        }
        if !is_primitive(&s.matrix).unwrap_or(false) {
            return Err(ErsError::VerificationFailed { stage: n, reason: "not primitive".into() });
        }
    }

    // The transposed side was conjugated by G = [[1, g], [0, H]] with g = (E^{-1} W)^T and
    // H = E^{-T}, so S = S_C H - g Pi / Q + g; the normalization then contributes g_1.
    let blocks = restrict_to_kernel_complement(&ecs_mats)?;
    let recovered_stages: Vec<ErsStage> = blocks
        .iter()
        .map(|c| ErsStage::new(c.get(0, 0).clone(), (1..=k).map(|j| c.get(0, j).clone()).collect(), c.block(1, k + 1, 1, k + 1)))
        .collect();
    for ((c, (_, conj)), grp) in recovered_stages.iter().zip(&matrices).zip(&groups) {
        if c.p != conj.p || c.u != conj.v || c.b != conj.b.transpose() {
            return Err(ErsError::VerificationFailed { stage: grp.start, reason: "block form mismatch".into() });
        }
    }
    let s_c = trace_row_series(&recovered_stages);
    let e_inv = integer_inverse(&e).map_err(|err| ErsError::Dimension(err.to_string()))?;
    let h = e_inv.transpose();
    let g_row: Vec<BigRational> = rat_row(&e_inv.mul_vec(&w_shift));
    let q: BigInt = stages.iter().map(|s| s.p.clone()).product();
    let pi = stages.iter().fold(Matrix::identity(k), |acc: Matrix<BigInt>, s| s.b.mul(&acc));
    let s_h = to_rational(&h).vec_mul(&s_c);
    let g_pi = to_rational(&pi).vec_mul(&g_row);
    let recovered_rho: Vec<BigRational> = (0..k)
        .map(|j| &s_h[j] - &g_pi[j] / BigRational::from(q.clone()) + &g_row[j] + BigRational::from(g1[j].clone()))
        .collect();
    let trace_error = recovered_rho
        .iter()
        .zip(data.rho())
        .map(|(a, b)| (a - b).abs())
        .max()
        .unwrap_or_else(BigRational::zero);
    let trace_bound = ws.rounding_bound.clone();
    if trace_error > trace_bound {
        return Err(ErsError::VerificationFailed {
            stage: 0,
            reason: format!("trace row off by {trace_error}, bound {trace_bound}"),
        });
    }
    Ok(ErsConstruction { seq, w_sequence: ws, recovered_rho, trace_error, trace_bound })
}
