//! Re-derives the properties a realization claims from its matrices alone.

use num_bigint::BigInt;
use num_traits::One;
use serde::Serialize;

use crate::ers_builder::verify_ers;
use crate::exact_core::right_kernel_basis;
use crate::matrix::Matrix;
use crate::perron::{check_equal_sums_criterion, integer_perron, is_nonnegative, is_primitive};
use crate::realization::{Flags, RealizationSeq};
use crate::traces::{is_good_row, nearly_split_witness, trace_report, NearlySplitReport, TraceReport};

/// Perron data of one square stage, as decimal strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PerronSummary {
    pub eigenvalue: String,
    pub left: Vec<String>,
    pub right: Vec<String>,
    /// `V W` for the content-1 Perron eigenvectors.
    pub inner_product: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageReport {
    pub index: usize,
    pub rows: usize,
    pub cols: usize,
    pub designed_p: String,
    pub nonnegative: bool,
    pub column_sums: Vec<String>,
    pub row_sums: Vec<String>,
    pub primitive: Option<bool>,
    pub perron: Option<PerronSummary>,
}

/// One failed check for a claimed property.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Failure {
    pub stage: Option<usize>,
    pub check: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerificationReport {
    pub claimed: Flags,
    /// Properties that hold on the given prefix, whether claimed or not.
    pub verified: Flags,
    pub stages: Vec<StageReport>,
    /// Right-kernel rank of `A_n ... A_1` for each `n`, when stages are square.
    pub kernel_ranks: Option<Vec<usize>>,
    pub trace: Option<TraceReport>,
    /// Whether the all-ones row is good at the first level.
    pub constant_row_good: Option<bool>,
    pub nearly_split: NearlySplitReport,
    pub failures: Vec<Failure>,
}

impl VerificationReport {
    /// All claimed flags re-verify.
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

fn strings(v: &[BigInt]) -> Vec<String> {
    v.iter().map(|x| x.to_string()).collect()
}

fn all_equal_to(v: &[BigInt], p: &BigInt) -> bool {
    v.iter().all(|x| x == p)
}

fn perron_summary(m: &Matrix<BigInt>) -> Option<PerronSummary> {
    let d = integer_perron(m).ok()?;
    let inner = check_equal_sums_criterion(m).ok().map(|r| r.inner_product.to_string());
    Some(PerronSummary {
        eigenvalue: d.eigenvalue.to_string(),
        left: strings(&d.left),
        right: strings(&d.right),
        inner_product: inner,
    })
}

/// Checks every claimed flag against the matrices.
///
/// ECS: nonnegative with every column sum equal to the designed `p`. ERS:
/// nonnegative with every row sum equal to `p` and the marker chain intact.
/// ECRS: both. Primitive: every stage square and primitive.
pub fn verify_realization(seq: &RealizationSeq) -> VerificationReport {
    let claimed = seq.flags;
    let mut failures = Vec::new();
    let mut stages = Vec::with_capacity(seq.stages.len());
    let (mut ecs, mut rows_ok, mut primitive) = (true, true, true);
    for (n, s) in seq.stages.iter().enumerate() {
        let m = &s.matrix;
        let nonnegative = is_nonnegative(m);
        let cs = m.col_sums();
        let rs = m.row_sums();
        let prim = m.is_square().then(|| is_primitive(m).unwrap_or(false));
        let fail = |check: &str, detail: String| Failure { stage: Some(n), check: check.into(), detail };
        let cols_match = nonnegative && all_equal_to(&cs, &s.p);
        let rows_match = nonnegative && all_equal_to(&rs, &s.p);
        if claimed.ecs || claimed.ecrs {
            if !nonnegative {
                failures.push(fail("nonnegative", "negative entry".into()));
            } else if !cols_match {
                failures.push(fail("column_sums", format!("expected all {}, got {:?}", s.p, strings(&cs))));
            }
        }
        if (claimed.ers || claimed.ecrs) && nonnegative && !rows_match {
            failures.push(fail("row_sums", format!("expected all {}, got {:?}", s.p, strings(&rs))));
        }
        if claimed.ers && !claimed.ecs && !claimed.ecrs && !nonnegative {
            failures.push(fail("nonnegative", "negative entry".into()));
        }
        if claimed.primitive && prim != Some(true) {
            failures.push(fail("primitive", "stage is not square and primitive".into()));
        }
        ecs &= cols_match;
        rows_ok &= rows_match;
        primitive &= prim == Some(true);
        stages.push(StageReport {
            index: n,
            rows: m.rows(),
            cols: m.cols(),
            designed_p: s.p.to_string(),
            nonnegative,
            column_sums: strings(&cs),
            row_sums: strings(&rs),
            primitive: prim,
            perron: if m.is_square() && nonnegative { perron_summary(m) } else { None },
        });
    }
    let ers_report = verify_ers(seq);
    let ers = rows_ok && ers_report.is_ers();
    if claimed.ers || claimed.ecrs {
        for f in &ers_report.failures {
            failures.push(Failure { stage: None, check: "ers".into(), detail: f.clone() });
        }
    }
    let ones_markers = seq
        .markers
        .as_ref()
        .is_none_or(|ms| ms.iter().all(|h| h.iter().all(|x| x.is_one())));
    if claimed.ecrs && !ones_markers {
        failures.push(Failure { stage: None, check: "markers".into(), detail: "ECRS markers must be all-ones".into() });
    }
    let ecrs = ecs && ers && ones_markers;
    let verified = Flags { ecs, ers, ecrs, primitive: primitive && !seq.stages.is_empty() };
    VerificationReport {
        claimed,
        verified,
        stages,
        kernel_ranks: kernel_ranks(seq),
        trace: if ecs { trace_report(seq).ok() } else { None },
        constant_row_good: seq.level_size(1).and_then(|s| is_good_row(&vec![BigInt::one(); s]).ok()),
        nearly_split: nearly_split_witness(seq),
        failures,
    }
}

/// Right-kernel rank of each prefix product `A_n ... A_1`.
pub fn kernel_ranks(seq: &RealizationSeq) -> Option<Vec<usize>> {
    let first = seq.stages.first()?;
    let mut acc = first.matrix.clone();
    let mut out = vec![right_kernel_basis(&acc).len()];
    for s in &seq.stages[1..] {
        acc = s.matrix.checked_mul(&acc)?;
        out.push(right_kernel_basis(&acc).len());
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::realization::Stage;

    fn m(rows: &[&[i64]]) -> Matrix<BigInt> {
        Matrix::from_rows(rows.iter().map(|r| r.iter().map(|&x| BigInt::from(x)).collect()).collect()).unwrap()
    }

    fn stationary(a: Matrix<BigInt>, p: i64, flags: Flags) -> RealizationSeq {
        let stages = vec![Stage { matrix: a.clone(), p: BigInt::from(p) }, Stage { matrix: a, p: BigInt::from(p) }];
        RealizationSeq::new(stages, flags, None).unwrap()
    }

    #[test]
    fn stationary_ecrs_verifies() {
        let flags = Flags { ecs: true, ers: true, ecrs: true, primitive: true };
        let r = verify_realization(&stationary(m(&[&[1, 2], &[2, 1]]), 3, flags));
        assert!(r.ok(), "{:?}", r.failures);
        assert_eq!(r.verified, flags);
        assert_eq!(r.stages[0].perron.as_ref().unwrap().inner_product.as_deref(), Some("2"));
    }

    #[test]
    fn perturbed_entry_names_stage() {
        let flags = Flags { ecs: true, ..Flags::default() };
        let mut seq = stationary(m(&[&[1, 2], &[2, 1]]), 3, flags);
        seq.stages[1].matrix.set(0, 0, BigInt::from(2));
        let r = verify_realization(&seq);
        assert!(!r.ok());
        assert_eq!(r.failures[0].stage, Some(1));
        assert_eq!(r.failures[0].check, "column_sums");
    }

    #[test]
    fn unclaimed_flags_do_not_fail() {
        let r = verify_realization(&stationary(m(&[&[1, 1], &[2, 1]]), 3, Flags::default()));
        assert!(r.ok());
        assert!(!r.verified.ecs);
        assert!(r.verified.primitive);
    }
}
