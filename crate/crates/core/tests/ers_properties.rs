use dimgroup_core::ers_builder::*;
use dimgroup_core::exact_core::{colsum_norm, sup_norm};
use dimgroup_core::perron::{tol_from_f64, unique_trace_diagnostic};
use dimgroup_core::realization::{Flags, RealizationSeq, Stage};
use dimgroup_core::Matrix;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use proptest::prelude::*;

fn bi(x: i64) -> BigInt {
    BigInt::from(x)
}

fn q(n: i64, d: i64) -> BigRational {
    BigRational::new(bi(n), bi(d))
}

fn data_k2(ps: &[i64], zs: &[[i64; 2]], b: Matrix<BigInt>, rho: [(i64, i64); 2]) -> ErsStageData {
    let stages = ps.iter().zip(zs).map(|(&p, z)| ErsStage::new(p, vec![bi(z[0]), bi(z[1])], b.clone())).collect();
    ErsStageData::new(2, stages, vec![BigRational::one(), q(rho[0].0, rho[0].1), q(rho[1].0, rho[1].1)]).unwrap()
}

fn check_construction(out: &ErsConstruction) {
    assert!(verify_ers(&out.seq).is_ers());
    for s in &out.seq.stages {
        assert!(s.matrix.row_sums().iter().all(|r| *r == s.p));
        let ones = vec![BigInt::one(); s.matrix.cols()];
        assert!(s.matrix.mul_vec(&ones).iter().all(|x| *x == s.p));
    }
    assert!(out.trace_error <= out.trace_bound);
    let mats = out.seq.matrices();
    let r = unique_trace_diagnostic(&mats, 12, &tol_from_f64(1e-6)).unwrap();
    assert_eq!(r.numeric_rank_at_tol, 1);
}

#[test]
fn k2_identity_blocks() {
    let data = data_k2(&[100, 1000, 10000, 100000], &[[3, 5], [-7, 2], [11, 0], [1, 1]], Matrix::identity(2), [(1, 3), (1, 7)]);
    check_construction(&ers_pipeline(&data, 4).unwrap());
}

#[test]
fn k2_unipotent_blocks() {
    let b = Matrix::from_rows(vec![vec![bi(1), bi(1)], vec![bi(0), bi(1)]]).unwrap();
    let data = data_k2(&[50, 500, 5000, 50000], &[[1, 2], [3, 4], [0, 9], [2, 2]], b, [(2, 9), (1, 5)]);
    check_construction(&ers_pipeline(&data, 4).unwrap());
}

#[test]
fn transpose_duality_on_corpus() {
    let corpus = [
        vec![vec![1, 2], vec![2, 1]],
        vec![vec![3, 1], vec![2, 2]],
        vec![vec![1, 1, 0], vec![1, 0, 1], vec![0, 1, 1]],
        vec![vec![4, 3, 5], vec![2, 3, 1], vec![1, 1, 1]],
        vec![vec![1, 2], vec![0, 1]],
    ];
    for rows in corpus {
        let m = Matrix::from_rows(rows.into_iter().map(|r| r.into_iter().map(bi).collect()).collect()).unwrap();
        let equal_cols = m.col_sums().windows(2).all(|w| w[0] == w[1]);
        let t = m.transpose();
        let p = t.row_sums()[0].clone();
        let seq = RealizationSeq::new(vec![Stage { matrix: t, p }], Flags::default(), None).unwrap();
        assert_eq!(verify_ers(&seq).is_ers(), equal_cols);
    }
}

#[test]
fn bounds_improve_with_horizon() {
    let data = data_k2(&[100, 1000, 10000, 100000], &[[3, 5], [7, 2], [11, 0], [1, 1]], Matrix::identity(2), [(1, 3), (1, 7)]);
    let bounds: Vec<BigRational> = (1..=4).map(|n| build_w_sequence(&data, n).unwrap().rounding_bound).collect();
    assert!(bounds.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn regime_violation_for_large_z() {
    let data = data_k2(&[100, 1000], &[[100, 0], [0, 0]], Matrix::identity(2), [(0, 1), (0, 1)]);
    assert!(matches!(ers_pipeline(&data, 2), Err(ErsError::RegimeViolation { index: 0, .. })));
}

/// Step factors for p, the z rows, and a common-denominator trace row.
type StageDraw = (Vec<i64>, Vec<[i64; 2]>, (i64, i64, i64));

fn stage_strategy() -> impl Strategy<Value = StageDraw> {
    (
        proptest::collection::vec(10i64..40, 2..5),
        proptest::collection::vec((-9i64..10, -9i64..10).prop_map(|(a, b)| [a, b]), 4),
        (0i64..50, 0i64..50, 51i64..97),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w_sequence_identities((steps, zs, (r0, r1, den)) in stage_strategy()) {
        // Increasing p's built from multiplicative steps.
        let mut ps = Vec::new();
        let mut acc = 1i64;
        for s in &steps {
            acc *= s;
            ps.push(acc);
        }
        let b = Matrix::from_rows(vec![vec![bi(1), bi(1)], vec![bi(0), bi(1)]]).unwrap();
        let data = data_k2(&ps, &zs, b, [(r0, den), (r1, den)]);
        let n = ps.len();
        let ws = build_w_sequence(&data, n).unwrap();
        prop_assert!(check_w_squares(&data, &ws));
        let diff = ws.partial_sum.iter().zip(data.rho()).map(|(a, b)| (a - b).abs()).max().unwrap();
        prop_assert!(diff <= ws.rounding_bound);
        for i in 1..n {
            let s = &data.stages[i];
            let lhs = BigRational::from(sup_norm(&ws.w[i]));
            let rhs = BigRational::from(sup_norm(&s.u)) + BigRational::new(&s.p + colsum_norm(&s.b), bi(2));
            prop_assert!(lhs <= rhs);
        }
        prop_assert!(ws.y[0].iter().all(Zero::is_zero));
    }

    #[test]
    fn rowlattice_bound(z in proptest::collection::vec(-500i64..500, 2), b in proptest::collection::vec(-6i64..7, 4)) {
        let m = Matrix::from_vec(2, 2, b.into_iter().map(bi).collect()).unwrap();
        let det = dimgroup_core::exact_core::determinant(&m).unwrap();
        prop_assume!(!det.is_zero());
        let z: Vec<BigInt> = z.into_iter().map(bi).collect();
        let y = reduce_mod_rowlattice(&z, &m).unwrap();
        let rem: Vec<BigInt> = z.iter().zip(m.vec_mul(&y)).map(|(a, c)| a - c).collect();
        prop_assert!(sup_norm(&rem) < det.abs());
    }
}
