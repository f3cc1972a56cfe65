//! ECS realizations of rank-`k+1` groups presented as extensions of `Z^k` by `Z`.
//!
//! A stage `(p, v, B)` is the block matrix `M = [[p, 0], [v, B]]` acting on
//! columns of `Z ⊕ Z^k`. Builders turn a presentation into `(k+2) x (k+2)`
//! nonnegative matrices with all column sums `p` and kernel spanned by
//! `z = (k+1, -1, ..., -1)`.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::exact_core::{determinant, integer_inverse, rank_rational, ElementaryOp, UnimodularTransform};
use crate::io;
use crate::matrix::Matrix;
use crate::perron::is_primitive;
use crate::realization::{Flags, RealizationSeq, Stage};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EcsError {
    /// The split-case matrix needs `p > (k+1)^2`.
    #[error("p = {p} must exceed (k+1)^2 = {bound}")]
    PTooSmall { p: String, bound: String },
    /// Vector or matrix sizes disagree with `k`.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// A stage has `p <= 1` or a singular `B`.
    #[error("stage {stage} is invalid: {reason}")]
    InvalidStage { stage: usize, reason: String },
    /// The a-parameters violate `a_1 + ... + a_{k+1} = (k+1) a_0`.
    #[error("a-parameters violate the rank-drop constraint")]
    BadConstraint,
    /// No uniform `a` makes the matrix nonnegative; `p` is too small.
    #[error("no nonnegative choice of a at stage {stage}: {reason}")]
    Infeasible { stage: usize, reason: String },
    /// Cut points are not strictly increasing or leave the prefix.
    #[error("bad cut points: {0}")]
    BadCutPoints(String),
    /// The finite prefix cannot meet the convergence tolerance.
    #[error("prefix of {stages} stages cannot meet epsilon = {epsilon}")]
    HorizonExhausted { stages: usize, epsilon: String },
    /// A product of B-matrices is not of B-form.
    #[error("parameter extraction failed: {0}")]
    ParameterExtractionFailed(String),
    /// A constructed stage fails one of the ECS postconditions.
    #[error("stage {stage} failed verification: {reason}")]
    VerificationFailed { stage: usize, reason: String },
}

/// One stage `M_n = [[p, 0], [v, B]]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtStage {
    #[serde(with = "io::int")]
    pub p: BigInt,
    #[serde(with = "io::int_vec")]
    pub v: Vec<BigInt>,
    #[serde(rename = "B", with = "io::int_matrix")]
    pub b: Matrix<BigInt>,
}

impl ExtStage {
    pub fn new(p: impl Into<BigInt>, v: Vec<BigInt>, b: Matrix<BigInt>) -> Self {
        ExtStage { p: p.into(), v, b }
    }

    /// `[[p, 0], [v, B]]` as a `(k+1) x (k+1)` matrix.
    pub fn block_matrix(&self) -> Matrix<BigInt> {
        let k = self.v.len();
        let mut m = Matrix::zeros(k + 1, k + 1);
        m.set(0, 0, self.p.clone());
        for i in 0..k {
            m.set(i + 1, 0, self.v[i].clone());
        }
        m.put_block(1, 1, &self.b);
        m
    }

    /// Reads `(p, v, B)` back from a block matrix with zero top row tail.
    pub fn from_block_matrix(m: &Matrix<BigInt>) -> Option<Self> {
        let n = m.rows();
        if n == 0 || !m.is_square() || (1..n).any(|j| !m.get(0, j).is_zero()) {
            return None;
        }
        Some(ExtStage {
            p: m.get(0, 0).clone(),
            v: (1..n).map(|i| m.get(i, 0).clone()).collect(),
            b: m.block(1, n, 1, n),
        })
    }

    /// The stage `next * self` (apply `self` first).
    pub fn then(&self, next: &ExtStage) -> ExtStage {
        let v = next.b.mul_vec(&self.v).into_iter().zip(&next.v).map(|(bv, v2)| &self.p * v2 + bv).collect();
        ExtStage { p: &self.p * &next.p, v, b: next.b.mul(&self.b) }
    }

    fn is_split(&self) -> bool {
        self.v.iter().all(Zero::is_zero) && self.b.is_identity()
    }
}

/// Presentation `G = lim M_n` of an extension of `Z^k` by `Z`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawExtension")]
pub struct ExtensionData {
    pub k: usize,
    pub stages: Vec<ExtStage>,
}

#[derive(Deserialize)]
struct RawExtension {
    k: usize,
    stages: Vec<ExtStage>,
}

impl TryFrom<RawExtension> for ExtensionData {
    type Error = EcsError;

    fn try_from(raw: RawExtension) -> Result<Self, Self::Error> {
        ExtensionData::new(raw.k, raw.stages)
    }
}

impl ExtensionData {
    pub fn new(k: usize, stages: Vec<ExtStage>) -> Result<Self, EcsError> {
        for (n, s) in stages.iter().enumerate() {
            if s.v.len() != k || s.b.shape() != (k, k) {
                return Err(EcsError::Dimension(format!("stage {n} does not match k = {k}")));
            }
            if s.p <= BigInt::one() {
                return Err(EcsError::InvalidStage { stage: n, reason: format!("p = {} is not > 1", s.p) });
            }
            if determinant(&s.b).map_or(true, |d| d.is_zero()) {
                return Err(EcsError::InvalidStage { stage: n, reason: "B is singular".into() });
            }
        }
        Ok(ExtensionData { k, stages })
    }

    /// Split data `v = 0`, `B = I` with the given `p`'s.
    pub fn split(k: usize, ps: &[u64]) -> Result<Self, EcsError> {
        let stages = ps
            .iter()
            .map(|&p| ExtStage::new(p, vec![BigInt::zero(); k], Matrix::identity(k)))
            .collect();
        ExtensionData::new(k, stages)
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }
}

/// Offsets `a_0, ..., a_{k+1}` of the general ECS matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AParams(Vec<BigInt>);

impl AParams {
    /// Checks `a_1 + ... + a_{k+1} = (k+1) a_0`.
    pub fn new(a: Vec<BigInt>) -> Result<Self, EcsError> {
        if a.len() < 2 {
            return Err(EcsError::Dimension("need at least a_0 and a_1".into()));
        }
        let tail: BigInt = a[1..].iter().sum();
        if tail != BigInt::from(a.len() - 1) * &a[0] {
            return Err(EcsError::BadConstraint);
        }
        Ok(AParams(a))
    }

    pub fn uniform(k: usize, a: impl Into<BigInt>) -> Self {
        AParams(vec![a.into(); k + 2])
    }

    pub fn values(&self) -> &[BigInt] {
        &self.0
    }

    /// Number `k` such that these parameters fit a `(k+2) x (k+2)` matrix.
    pub fn k(&self) -> usize {
        self.0.len() - 2
    }
}

/// `eps_0 = 0`, `eps_i = e_i`, `eps_{k+1} = -(e_1 + ... + e_k)`.
pub fn eps_basis(k: usize) -> Vec<Vec<BigInt>> {
    let mut out = vec![vec![BigInt::zero(); k]];
    for i in 0..k {
        let mut e = vec![BigInt::zero(); k];
        e[i] = BigInt::one();
        out.push(e);
    }
    out.push(vec![-BigInt::one(); k]);
    out
}

/// `z = (k+1, -1, ..., -1)`, the common kernel vector.
pub fn kernel_vector(k: usize) -> Vec<BigInt> {
    let mut z = vec![-BigInt::one(); k + 2];
    z[0] = BigInt::from(k + 1);
    z
}

/// Split-case matrix with `p_n > (k+1)^2`.
pub fn split_ecs_matrix(k: usize, p: &BigInt) -> Result<Matrix<BigInt>, EcsError> {
    let bound = BigInt::from((k + 1) * (k + 1));
    if *p <= bound {
        return Err(EcsError::PTooSmall { p: p.to_string(), bound: bound.to_string() });
    }
    let mut a = vec![BigInt::zero(); k + 2];
    a[0] = BigInt::one();
    a[k + 1] = BigInt::from(k + 1);
    general_ecs_matrix(p, &vec![BigInt::zero(); k], &Matrix::identity(k), &AParams(a))
}

/// The general ECS matrix. The top row is `p` minus each lower column sum.
pub fn general_ecs_matrix(
    p: &BigInt,
    v: &[BigInt],
    b: &Matrix<BigInt>,
    a: &AParams,
) -> Result<Matrix<BigInt>, EcsError> {
    let k = v.len();
    if b.shape() != (k, k) || a.k() != k {
        return Err(EcsError::Dimension(format!(
            "v has length {k}, B is {}x{}, a has {} entries",
            b.rows(),
            b.cols(),
            a.0.len()
        )));
    }
    let a = &a.0;
    let b1 = b.row_sums();
    let n = k + 2;
    let mut m = Matrix::zeros(n, n);
    for j in 0..k {
        m.set(j + 1, 0, &v[j] + &a[0]);
        for i in 0..k {
            m.set(j + 1, i + 1, b.get(j, i) + &v[j] + &a[i + 1]);
        }
        m.set(j + 1, k + 1, &v[j] - &b1[j] + &a[k + 1]);
    }
    for c in 0..n {
        m.set(k + 1, c, a[c].clone());
    }
    for c in 0..n {
        let lower: BigInt = (1..n).map(|r| m.get(r, c).clone()).sum();
        m.set(0, c, p - lower);
    }
    Ok(m)
}

/// Smallest uniform `a >= 1` making the general ECS matrix nonnegative.
pub fn choose_a_params(p: &BigInt, v: &[BigInt], b: &Matrix<BigInt>) -> Result<AParams, EcsError> {
    let k = v.len();
    if b.shape() != (k, k) {
        return Err(EcsError::Dimension(format!("B is {}x{}, expected {k}x{k}", b.rows(), b.cols())));
    }
    // Lower entries are `a + c` for constants `c`; the top row only shrinks as `a` grows.
    let b1 = b.row_sums();
    let mut a = BigInt::one();
    for j in 0..k {
        a = a.max(-&v[j]).max(&b1[j] - &v[j]);
        for i in 0..k {
            a = a.max(-(b.get(j, i) + &v[j]));
        }
    }
    let params = AParams::uniform(k, a);
    let m = general_ecs_matrix(p, v, b, &params)?;
    if let Some(c) = (0..k + 2).find(|&c| m.get(0, c).is_negative()) {
        return Err(EcsError::Infeasible {
            stage: 0,
            reason: format!("top entry of column {c} is {} with a = {}", m.get(0, c), params.0[0]),
        });
    }
    Ok(params)
}

/// Result of reducing a rational vector: `E V - W` is `remainder`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VectorReduction {
    pub e: UnimodularTransform<BigInt>,
    pub w: Vec<BigInt>,
    pub remainder: Vec<BigRational>,
    /// Number of division steps after the floor step.
    pub steps: usize,
}

fn transpose_op(op: &ElementaryOp<BigInt>) -> ElementaryOp<BigInt> {
    match op {
        ElementaryOp::AddMultiple { from, to, factor } => {
            ElementaryOp::AddMultiple { from: *to, to: *from, factor: factor.clone() }
        }
        other => other.clone(),
    }
}

/// Finds unimodular `E` and integral `W` with `E V - W >= 0` and entry sum `< 1`.
///
/// Subtracts floors, then repeatedly replaces the largest entry by its
/// remainder modulo the second largest until one nonzero entry is left.
pub fn reduce_vector(v: &[BigRational]) -> VectorReduction {
    let k = v.len();
    let w0: Vec<BigInt> = v.iter().map(|x| x.floor().to_integer()).collect();
    let mut r: Vec<BigRational> = v.iter().zip(&w0).map(|(x, f)| x - BigRational::from(f.clone())).collect();
    let mut ops = Vec::new();
    loop {
        let mut idx: Vec<usize> = (0..k).filter(|&i| !r[i].is_zero()).collect();
        if idx.len() <= 1 {
            break;
        }
        idx.sort_by(|&i, &j| r[j].cmp(&r[i]));
        let (big, second) = (idx[0], idx[1]);
        let m = (&r[big] / &r[second]).floor().to_integer();
        r[big] = &r[big] - BigRational::from(m.clone()) * &r[second];
        ops.push(ElementaryOp::AddMultiple { from: second, to: big, factor: -m });
    }
    // The ops act on V as a column, so E is the transpose of their row product.
    let steps = ops.len();
    let e = UnimodularTransform::from_ops(k, ops.iter().rev().map(transpose_op).collect());
    let w = e.matrix().mul_vec(&w0);
    VectorReduction { e, w, remainder: r, steps }
}

/// `[[1, 0], [-u, I]]`, the change of basis at one level.
pub fn change_of_basis(u: &[BigInt]) -> Matrix<BigInt> {
    let k = u.len();
    let mut t = Matrix::identity(k + 1);
    for i in 0..k {
        t.set(i + 1, 0, -u[i].clone());
    }
    t
}

/// Moves every `v^n` into `[0, p_n - 1]` entrywise; returns the corrections `u^n`.
///
/// With `T_n = [[1, 0], [-u^{n-1}, I]]` and `u^{-1} = 0`, the new stages
/// satisfy `M'_n T_n = T_{n+1} M_n`.
pub fn normalize_extension(data: &ExtensionData) -> (ExtensionData, Vec<Vec<BigInt>>) {
    let mut prev = vec![BigInt::zero(); data.k];
    let mut stages = Vec::with_capacity(data.len());
    let mut us = Vec::with_capacity(data.len());
    for s in &data.stages {
        let shifted: Vec<BigInt> = s.v.iter().zip(s.b.mul_vec(&prev)).map(|(x, y)| x + y).collect();
        let u: Vec<BigInt> = shifted.iter().map(|x| x.div_floor(&s.p)).collect();
        let v = shifted.iter().zip(&u).map(|(x, ui)| x - &s.p * ui).collect();
        stages.push(ExtStage { p: s.p.clone(), v, b: s.b.clone() });
        us.push(u.clone());
        prev = u;
    }
    (ExtensionData { k: data.k, stages }, us)
}

/// Checks the commuting squares `M'_n T_n = T_{n+1} M_n` by multiplication.
pub fn check_normalization(original: &ExtensionData, normalized: &ExtensionData, us: &[Vec<BigInt>]) -> bool {
    if original.len() != normalized.len() || us.len() != original.len() {
        return false;
    }
    let mut t = Matrix::identity(original.k + 1);
    for ((m, m2), u) in original.stages.iter().zip(&normalized.stages).zip(us) {
        let t_next = change_of_basis(u);
        if m2.block_matrix().mul(&t) != t_next.mul(&m.block_matrix()) {
            return false;
        }
        t = t_next;
    }
    true
}

fn check_cuts(cuts: &[usize], len: usize) -> Result<(), EcsError> {
    if cuts.len() < 2 {
        return Err(EcsError::BadCutPoints("need at least two cut points".into()));
    }
    if cuts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EcsError::BadCutPoints(format!("{cuts:?} is not strictly increasing")));
    }
    if *cuts.last().unwrap() > len {
        return Err(EcsError::BadCutPoints(format!("{cuts:?} exceeds {len} stages")));
    }
    Ok(())
}

/// Composes the stages between consecutive cut points (levels indexed from 0).
pub fn telescope_extension(data: &ExtensionData, cuts: &[usize]) -> Result<ExtensionData, EcsError> {
    check_cuts(cuts, data.len())?;
    let mut stages = Vec::with_capacity(cuts.len() - 1);
    for w in cuts.windows(2) {
        let group = &data.stages[w[0]..w[1]];
        let mut acc = group[0].clone();
        let mut block = acc.block_matrix();
        for s in &group[1..] {
            acc = acc.then(s);
            block = s.block_matrix().mul(&block);
        }
        if acc.block_matrix() != block {
            return Err(EcsError::ParameterExtractionFailed(format!("group {w:?} is not block lower triangular")));
        }
        stages.push(acc);
    }
    Ok(ExtensionData { k: data.k, stages })
}

pub(crate) fn ratio(s: &ExtStage) -> Vec<BigRational> {
    s.v.iter().map(|x| BigRational::new(x.clone(), s.p.clone())).collect()
}

fn max_diff(a: &[BigRational], b: &[BigRational]) -> BigRational {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).max().unwrap_or_else(BigRational::zero)
}

fn within(d: &BigRational, eps: &BigRational) -> bool {
    if eps.is_zero() {
        d.is_zero()
    } else {
        d < eps
    }
}

/// Cut points whose telescoped ratios `v / q` differ pairwise-consecutively by `< epsilon`.
///
/// Groups end at stages whose own ratio `v^n / p_n` is close to the last
/// one; the telescoped differences are then checked exactly. With
/// `epsilon = 0` the differences must vanish.
pub fn select_convergent_prefix(data: &ExtensionData, epsilon: &BigRational) -> Result<Vec<usize>, EcsError> {
    let n = data.len();
    let exhausted = || EcsError::HorizonExhausted { stages: n, epsilon: io::format_rational(epsilon) };
    if n == 0 {
        return Err(exhausted());
    }
    if n == 1 {
        return Ok(vec![0, 1]);
    }
    let ratios: Vec<_> = data.stages.iter().map(ratio).collect();
    let target = &ratios[n - 1];
    let accepts = |cuts: &[usize]| -> Result<bool, EcsError> {
        if cuts.len() < 3 {
            return Ok(false);
        }
        let tele = telescope_extension(data, cuts)?;
        let r: Vec<_> = tele.stages.iter().map(ratio).collect();
        Ok(r.windows(2).all(|w| within(&max_diff(&w[0], &w[1]), epsilon)))
    };
    let every: Vec<usize> = (0..=n).collect();
    if accepts(&every)? {
        return Ok(every);
    }
    let mut threshold = epsilon / BigInt::from(2);
    for _ in 0..16 {
        let mut cuts = vec![0];
        cuts.extend((0..n).filter(|&j| within(&max_diff(&ratios[j], target), &threshold)).map(|j| j + 1));
        if accepts(&cuts)? {
            return Ok(cuts);
        }
        if threshold.is_zero() {
            break;
        }
        threshold /= BigInt::from(4);
    }
    Err(exhausted())
}

/// Simultaneous conjugation by `F = [[1, 0], [-W, E]]`.
pub fn conjugate_stage(s: &ExtStage, e: &Matrix<BigInt>, e_inv: &Matrix<BigInt>, w: &[BigInt]) -> ExtStage {
    let b = e.mul(&s.b).mul(e_inv);
    let ev = e.mul_vec(&s.v);
    let bw = b.mul_vec(w);
    let v = ev.iter().zip(w).zip(bw).map(|((x, wi), y)| x - &s.p * wi + y).collect();
    ExtStage { p: s.p.clone(), v, b }
}

/// Checks the ECS postconditions of one general ECS stage.
pub fn verify_ecs_stage(m: &Matrix<BigInt>, p: &BigInt) -> Result<(), String> {
    let n = m.rows();
    if !m.is_square() || n < 3 {
        return Err(format!("shape {}x{} is not (k+2)x(k+2)", m.rows(), m.cols()));
    }
    if m.iter().any(Signed::is_negative) {
        return Err("negative entry".into());
    }
    if m.col_sums().iter().any(|c| c != p) {
        return Err(format!("column sums {:?} are not all {p}", m.col_sums()));
    }
    if m.mul_vec(&kernel_vector(n - 2)).iter().any(|x| !x.is_zero()) {
        return Err("A z is not zero".into());
    }
    let rank = rank_rational(m);
    if rank != n - 1 {
        return Err(format!("rank {rank}, expected {}", n - 1));
    }
    if !is_primitive(m).map_err(|e| e.to_string())? {
        return Err("not primitive".into());
    }
    Ok(())
}

pub(crate) fn build_stage(s: &ExtStage, k: usize) -> Result<Matrix<BigInt>, String> {
    if s.is_split() && s.p <= BigInt::from((k + 1) * (k + 1)) {
        return Err(format!("split stage needs p > {}", (k + 1) * (k + 1)));
    }
    let a = choose_a_params(&s.p, &s.v, &s.b).map_err(|e| e.to_string())?;
    let m = general_ecs_matrix(&s.p, &s.v, &s.b, &a).map_err(|e| e.to_string())?;
    verify_ecs_stage(&m, &s.p)?;
    Ok(m)
}

/// Largest denominator tried when approximating the target ratio.
const MAX_APPROX_DENOMINATOR: u32 = 32;

/// Stages built under one simultaneous conjugation `(E, W)`.
pub(crate) struct Assembly {
    pub(crate) built: Vec<(Matrix<BigInt>, ExtStage)>,
    pub(crate) e: Matrix<BigInt>,
    pub(crate) w: Vec<BigInt>,
}

/// Conjugates every group by the reduction of `target` and builds general ECS matrices.
///
/// The exact target can have large denominators, which makes `E` and hence
/// `E B E^{-1}` large, so approximations `floor(D target) / D` with small `D`
/// are tried first. On failure returns the furthest failing group.
pub(crate) fn assemble(groups: &[ExtStage], target: &[BigRational], k: usize) -> Result<Assembly, (usize, String)> {
    let mut candidates: Vec<Vec<BigRational>> = (1..=MAX_APPROX_DENOMINATOR)
        .map(|d| {
            let d = BigInt::from(d);
            target.iter().map(|x| BigRational::new((x * BigRational::from(d.clone())).floor().to_integer(), d.clone())).collect()
        })
        .collect();
    candidates.push(target.to_vec());
    candidates.dedup();
    let mut worst: Option<(usize, String)> = None;
    for cand in candidates.iter().rev().take(1).chain(candidates.iter()) {
        let red = reduce_vector(cand);
        let e = red.e.matrix().clone();
        let Ok(e_inv) = integer_inverse(&e) else { continue };
        let mut built = Vec::with_capacity(groups.len());
        let mut failure = None;
        for (i, g) in groups.iter().enumerate() {
            let conj = conjugate_stage(g, &e, &e_inv, &red.w);
            match build_stage(&conj, k) {
                Ok(m) => built.push((m, conj)),
                Err(reason) => {
                    failure = Some((i, reason));
                    break;
                }
            }
        }
        match failure {
            None => return Ok(Assembly { built, e, w: red.w }),
            Some(f) => {
                if worst.as_ref().is_none_or(|w| f.0 > w.0) {
                    worst = Some(f);
                }
            }
        }
    }
    Err(worst.unwrap_or((0, "no candidate conjugation".into())))
}

/// Full construction: normalize, telescope, conjugate, choose `a`, emit general ECS matrices.
///
/// A stage that cannot be made nonnegative and primitive is merged with its
/// neighbour, which multiplies the available `p`.
pub fn ecs_pipeline(data: &ExtensionData, epsilon: &BigRational) -> Result<RealizationSeq, EcsError> {
    let k = data.k;
    let (normal, us) = normalize_extension(data);
    debug_assert!(check_normalization(data, &normal, &us));
    let cuts = select_convergent_prefix(&normal, epsilon)?;
    let tele = telescope_extension(&normal, &cuts)?;
    // Groups stay unconjugated; each pass conjugates with the reduction of the
    // last group's ratio, and a failing group is merged with a neighbour.
    let mut groups: Vec<(usize, ExtStage)> = tele.stages.into_iter().enumerate().map(|(i, s)| (cuts[i], s)).collect();
    let built = loop {
        let stages: Vec<ExtStage> = groups.iter().map(|(_, g)| g.clone()).collect();
        let target = ratio(stages.last().expect("at least one group"));
        let (i, reason) = match assemble(&stages, &target, k) {
            Ok(a) => break a.built,
            Err(f) => f,
        };
        log::debug!("group at stage {} fails ({reason}); merging", groups[i].0);
        if groups.len() == 1 {
            return Err(EcsError::Infeasible { stage: groups[0].0, reason });
        }
        let j = if i + 1 < groups.len() { i } else { i - 1 };
        let next = groups.remove(j + 1).1;
        groups[j].1 = groups[j].1.then(&next);
    };
    let stages: Vec<Stage> = built.into_iter().map(|(matrix, g)| Stage { matrix, p: g.p }).collect();
    for (n, s) in stages.iter().enumerate() {
        verify_ecs_stage(&s.matrix, &s.p).map_err(|reason| EcsError::VerificationFailed { stage: n, reason })?;
    }
    let flags = Flags { ecs: true, primitive: true, ..Flags::default() };
    RealizationSeq::new(stages, flags, None).map_err(|e| EcsError::VerificationFailed { stage: 0, reason: e.to_string() })
}

/// Parameters of a B-matrix `B(p, B, v, a)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BParams {
    pub p: BigInt,
    pub b: Matrix<BigInt>,
    pub v: Vec<BigInt>,
    pub a: BigInt,
}

/// The general ECS matrix with uniform offset `a`.
pub fn b_matrix(params: &BParams) -> Result<Matrix<BigInt>, EcsError> {
    general_ecs_matrix(&params.p, &params.v, &params.b, &AParams::uniform(params.v.len(), params.a.clone()))
}

/// Reads `(p, B, v, a)` off a matrix and checks that it rebuilds the input.
pub fn extract_b_params(m: &Matrix<BigInt>) -> Result<BParams, EcsError> {
    let n = m.rows();
    if !m.is_square() || n < 3 {
        return Err(EcsError::ParameterExtractionFailed(format!("shape {}x{}", m.rows(), m.cols())));
    }
    let k = n - 2;
    let p = m.col(0).into_iter().sum::<BigInt>();
    let a = m.get(k + 1, 0).clone();
    let v: Vec<BigInt> = (0..k).map(|j| m.get(j + 1, 0) - &a).collect();
    let b = Matrix::from_fn(k, k, |j, i| m.get(j + 1, i + 1) - &v[j] - &a);
    let params = BParams { p, b, v, a };
    if b_matrix(&params)? != *m {
        return Err(EcsError::ParameterExtractionFailed(format!("{m} is not of B-form")));
    }
    Ok(params)
}

/// Multiplies two B-matrices and checks the product is `B(pp', BB', p'v + Bv', p'a)`.
pub fn b_compose(left: &BParams, right: &BParams) -> Result<BParams, EcsError> {
    let product = b_matrix(left)?.mul(&b_matrix(right)?);
    let got = extract_b_params(&product)?;
    let bv: Vec<BigInt> = left.b.mul_vec(&right.v);
    let expected = BParams {
        p: &left.p * &right.p,
        b: left.b.mul(&right.b),
        v: left.v.iter().zip(bv).map(|(x, y)| &right.p * x + y).collect(),
        a: &right.p * &left.a,
    };
    if got != expected {
        return Err(EcsError::ParameterExtractionFailed(format!("product parameters {got:?} != {expected:?}")));
    }
    Ok(got)
}
