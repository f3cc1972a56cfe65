//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use dimgroup_core::ecrs_builder::{commuting_family, ecrs_pipeline, poly_for, EcrsError, EcrsProblem};
use dimgroup_core::ecs_builder::*;
use dimgroup_core::ers_builder::*;
use dimgroup_core::exact_core::{char_poly, colsum_norm, determinant, is_unimodular, poly_mul, rank_rational, sup_norm};
use dimgroup_core::perron::{check_equal_sums_criterion, integer_perron, is_primitive, tol_from_f64, unique_trace_diagnostic};
use dimgroup_core::realization::RealizationSeq;
use dimgroup_core::supernatural::{decide_ecrs, Cardinal, DecisionReason, RealizationSize, SupernaturalNumber};
use dimgroup_core::traces::is_good_row;
use dimgroup_core::verify::kernel_ranks;
use dimgroup_core::Matrix;
use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn bi(x: i64) -> BigInt {
    BigInt::from(x)
}

fn ints(v: &[i64]) -> Vec<BigInt> {
    v.iter().map(|&x| bi(x)).collect()
}

fn q(n: i64, d: i64) -> BigRational {
    BigRational::new(bi(n), bi(d))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("took {t:?}, limit {limit:?}"))
}

fn random_matrix(rng: &mut ChaCha8Rng, k: usize, lo: i64, hi: i64) -> Matrix<BigInt> {
    loop {
        let m = Matrix::from_fn(k, k, |_, _| bi(rng.gen_range(lo..=hi)));
        if !determinant(&m).unwrap().is_zero() {
            return m;
        }
    }
}

fn split_matrices() -> Outcome {
    let start = Instant::now();
    let mut checked = 0;
    for k in 1..=3usize {
        let lo = ((k + 1) * (k + 1)) as i64;
        for p in (lo + 1..=lo + 30).step_by(3).take(10) {
            let pb = bi(p);
            let a = split_ecs_matrix(k, &pb).map_err(|e| e.to_string())?;
            ensure(a.col_sums().iter().all(|c| *c == pb), || format!("k = {k}, p = {p}: column sums"))?;
            // x (x - 1)^k (x - p), lowest degree first.
            let mut expected = ints(&[0, 1]);
            for _ in 0..k {
                expected = poly_mul(&expected, &ints(&[-1, 1]));
            }
            expected = poly_mul(&expected, &[-pb.clone(), bi(1)]);
            ensure(char_poly(&a).unwrap() == expected, || format!("k = {k}, p = {p}: characteristic polynomial"))?;
            ensure(a.mul_vec(&kernel_vector(k)).iter().all(Zero::is_zero), || format!("k = {k}, p = {p}: Az != 0"))?;
            ensure(rank_rational(&a) == k + 1, || format!("k = {k}, p = {p}: rank"))?;
            ensure(is_primitive(&a).unwrap(), || format!("k = {k}, p = {p}: not primitive"))?;
            checked += 1;
        }
    }
    within(start, Duration::from_secs(5))?;
    Ok(format!("{checked} matrices in {:?}", start.elapsed()))
}

fn general_matrices() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..500 {
        let k = rng.gen_range(1..=4usize);
        let p: i64 = rng.gen_range(1_000..=1_000_000);
        let b = random_matrix(&mut rng, k, -3, 3);
        let nb = colsum_norm(&b);
        ensure(&nb * &nb <= bi(p), || format!("case {case}: |B|^2 > p"))?;
        // Normalized: v >= 0 with total at most p / 2.
        let budget = p / 2 / k as i64;
        let v: Vec<BigInt> = (0..k).map(|_| bi(rng.gen_range(0..=budget))).collect();
        let pb = bi(p);
        let a = choose_a_params(&pb, &v, &b).map_err(|e| format!("case {case}: {e}"))?;
        let m = general_ecs_matrix(&pb, &v, &b, &a).map_err(|e| format!("case {case}: {e}"))?;
        ensure(m.iter().all(|x| !x.is_negative()), || format!("case {case}: negative entry"))?;
        ensure(m.col_sums().iter().all(|c| *c == pb), || format!("case {case}: column sums"))?;
        ensure(m.mul_vec(&kernel_vector(k)).iter().all(Zero::is_zero), || format!("case {case}: Az != 0"))?;
        ensure(rank_rational(&m) == k + 1, || format!("case {case}: rank {} != {}", rank_rational(&m), k + 1))?;
    }
    within(start, Duration::from_secs(30))?;
    Ok(format!("500 instances in {:?}", start.elapsed()))
}

fn vector_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut max_steps = 0;
    for case in 0..500 {
        let k = rng.gen_range(1..=5usize);
        let dens: Vec<i64> = (0..k).map(|_| rng.gen_range(1..=100)).collect();
        let v: Vec<BigRational> = dens.iter().map(|&d| q(rng.gen_range(0..=3 * d), d)).collect();
        let r = reduce_vector(&v);
        let e = r.e.matrix();
        ensure(determinant(e).unwrap().abs().is_one() && is_unimodular(e), || format!("case {case}: E not unimodular"))?;
        let mut total = BigRational::zero();
        for i in 0..k {
            let ev: BigRational = (0..k).map(|j| BigRational::from(e.get(i, j).clone()) * &v[j]).sum();
            let rem = ev - BigRational::from(r.w[i].clone());
            ensure(!rem.is_negative(), || format!("case {case}: EV - W has a negative entry"))?;
            total += rem;
        }
        ensure(total < BigRational::one(), || format!("case {case}: entry sum {total} >= 1"))?;
        let max_den = *dens.iter().max().unwrap() as f64;
        let bound = (10.0 * k as f64 * max_den.log2().max(1.0)).floor() as usize;
        ensure(r.steps <= bound, || format!("case {case}: {} steps > {bound}", r.steps))?;
        max_steps = max_steps.max(r.steps);
    }
    Ok(format!("500 vectors, at most {max_steps} division steps"))
}

fn w_sequences() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..100 {
        let k = rng.gen_range(1..=3usize);
        let mut p = bi(0);
        let mut stages = Vec::with_capacity(8);
        for _ in 0..8 {
            let b = random_matrix(&mut rng, k, -2, 2);
            let nb = colsum_norm(&b);
            let floor = bi(4) * &nb * &nb;
            p = (&p * bi(rng.gen_range(2..=4)) + bi(rng.gen_range(1..=9))).max(floor + 1);
            let zmax: BigInt = (&p - bi(1)).min(bi(1_000));
            let z: Vec<BigInt> = (0..k)
                .map(|_| {
                    let m: i64 = (&zmax).try_into().unwrap();
                    bi(rng.gen_range(-m..=m))
                })
                .collect();
            stages.push(ErsStage::new(p.clone(), z, b));
        }
        let mut trace_row = vec![BigRational::one()];
        trace_row.extend((0..k).map(|_| {
            let d = rng.gen_range(1..=50);
            q(rng.gen_range(0..d), d)
        }));
        let data = ErsStageData::new(k, stages, trace_row).map_err(|e| format!("case {case}: {e}"))?;
        let ws = build_w_sequence(&data, 8).map_err(|e| format!("case {case}: {e}"))?;
        ensure(check_w_squares(&data, &ws), || format!("case {case}: squares do not commute"))?;
        for n in 1..8 {
            let s = &data.stages[n];
            let lhs = BigRational::from(sup_norm(&ws.w[n]));
            let rhs = BigRational::from(sup_norm(&s.u)) + BigRational::new(&s.p + colsum_norm(&s.b), bi(2));
            ensure(lhs < rhs, || format!("case {case}, level {n}: |w| = {lhs} not below {rhs}"))?;
        }
        let diff = ws.partial_sum.iter().zip(data.rho()).map(|(a, b)| (a - b).abs()).max().unwrap();
        ensure(diff <= ws.rounding_bound, || format!("case {case}: |S_N - rho| = {diff} above the bound"))?;
    }
    Ok("100 instances at horizon 8".into())
}

fn b_algebra() -> Outcome {
    let one = Matrix::identity(1);
    let mk = |p: i64, v: i64, a: i64| BParams { p: bi(p), b: one.clone(), v: vec![bi(v)], a: bi(a) };
    let lhs = b_matrix(&mk(7, 1, 1)).unwrap().mul(&b_matrix(&mk(5, 2, 1)).unwrap());
    ensure(lhs == b_matrix(&mk(35, 7, 5)).unwrap(), || "worked k = 1 product differs".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..200 {
        let k = rng.gen_range(1..=4usize);
        let draw = |rng: &mut ChaCha8Rng| BParams {
            p: bi(rng.gen_range(2..50)),
            b: Matrix::from_fn(k, k, |_, _| bi(rng.gen_range(-3..=3))),
            v: (0..k).map(|_| bi(rng.gen_range(-5..=5))).collect(),
            a: bi(rng.gen_range(1..6)),
        };
        let (l, r) = (draw(&mut rng), draw(&mut rng));
        let bv = l.b.mul_vec(&r.v);
        let expected = BParams {
            p: &l.p * &r.p,
            b: l.b.mul(&r.b),
            v: l.v.iter().zip(&bv).map(|(x, y)| &r.p * x + y).collect(),
            a: &r.p * &l.a,
        };
        let product = b_matrix(&l).unwrap().mul(&b_matrix(&r).unwrap());
        ensure(product == b_matrix(&expected).unwrap(), || format!("pair {case}: closure formula fails"))?;
    }
    Ok("worked product and 200 random pairs".into())
}

fn brute_poly_exists(m: i64, l: i64) -> bool {
    fn rec(m: i64, l: i64, deg: u32, at_m: i64, at_neg: i64) -> bool {
        if deg == 5 {
            return at_m == l && at_neg.abs() == 1;
        }
        let w = m.pow(deg);
        let sign = if deg.is_multiple_of(2) { 1 } else { -1 };
        (0..=(l - at_m) / w).any(|a| rec(m, l, deg + 1, at_m + a * w, at_neg + sign * a))
    }
    rec(m, l, 0, 0, 0)
}

fn polynomials() -> Outcome {
    let mut count = 0;
    for m in 2..=6i64 {
        for l in 1..=200i64 {
            let r = l.mod_floor(&(m + 1));
            if r != 1 && r != m {
                continue;
            }
            let f = poly_for(&bi(m), &bi(l)).map_err(|e| format!("m = {m}, l = {l}: {e}"))?;
            ensure(f.coefficients().iter().all(|c| !c.is_negative()), || format!("m = {m}, l = {l}: negative coefficient"))?;
            ensure(f.eval(&bi(m)) == bi(l), || format!("m = {m}, l = {l}: f(m) != l"))?;
            ensure(f.eval(&bi(-1)).abs().is_one(), || format!("m = {m}, l = {l}: f(-1) not +-1"))?;
            count += 1;
        }
    }
    for m in 2..=3i64 {
        for l in 1..=40i64 {
            ensure(poly_for(&bi(m), &bi(l)).is_ok() == brute_poly_exists(m, l), || format!("m = {m}, l = {l}: disagrees with brute force"))?;
        }
    }
    Ok(format!("{count} admissible pairs, brute force agrees"))
}

fn ecrs_cases() -> Outcome {
    let cases: [(usize, u64, [i64; 3]); 4] =
        [(2, 3, [7, 13, 19]), (2, 5, [11, 31, 41]), (2, 7, [29, 43, 71]), (3, 4, [5, 13, 17])];
    for (k, lambda, ps) in cases {
        let tag = format!("(k, lambda) = ({k}, {lambda})");
        let prob = EcrsProblem::new(k, lambda, vec![bi(1); k], ints(&ps)).map_err(|e| format!("{tag}: {e}"))?;
        let out = ecrs_pipeline(&prob).map_err(|e| format!("{tag}: {e}"))?;
        let size = lambda as usize;
        let ones = vec![BigInt::one(); size];
        for s in &out.seq.stages {
            let m = &s.matrix;
            ensure(m.shape() == (size, size), || format!("{tag}: shape {:?}", m.shape()))?;
            ensure(is_primitive(m).unwrap(), || format!("{tag}: not primitive"))?;
            ensure(m.row_sums().iter().chain(&m.col_sums()).all(|x| *x == s.p), || format!("{tag}: sums differ from {}", s.p))?;
            let d = integer_perron(m).map_err(|e| format!("{tag}: {e}"))?;
            ensure(d.eigenvalue == s.p && d.left == ones && d.right == ones, || format!("{tag}: Perron data"))?;
            let report = check_equal_sums_criterion(m).map_err(|e| format!("{tag}: {e}"))?;
            ensure(report.inner_product == bi(lambda as i64), || format!("{tag}: inner product {}", report.inner_product))?;
        }
    }
    let prob = EcrsProblem::new(2, 2, ints(&[1, 1]), ints(&[7, 13, 19])).map_err(|e| e.to_string())?;
    match ecrs_pipeline(&prob) {
        Err(EcrsError::LambdaTooSmall { reason: DecisionReason::RankExceedsIndex, .. }) => {}
        other => return Err(format!("(2, 2) gave {other:?}")),
    }
    Ok("4 sizes realized, (2, 2) rejected".into())
}

fn commuting() -> Outcome {
    let a = Matrix::from_rows(vec![ints(&[1, 2]), ints(&[2, 1])]).unwrap();
    let seq = commuting_family(&a, &ints(&[5, 13, 17])).map_err(|e| e.to_string())?;
    let ms = seq.matrices();
    ensure(ms[0] == Matrix::from_rows(vec![ints(&[7, 8]), ints(&[8, 7])]).unwrap(), || format!("A_1 = {}", ms[0]))?;
    for x in &ms {
        for y in &ms {
            ensure(x.mul(y) == y.mul(x), || "commutator nonzero".into())?;
        }
    }
    let perron: Vec<BigInt> = ms.iter().map(|m| integer_perron(m).unwrap().eigenvalue).collect();
    ensure(perron == ints(&[15, 39, 51]), || format!("Perron values {perron:?}"))?;
    Ok("A_1 = [[7,8],[8,7]], Perron values 15, 39, 51".into())
}

fn ers_instances() -> Vec<ErsStageData> {
    let b1 = Matrix::identity(1);
    let k1 = [(100, 3), (1000, -7), (10000, 11), (100000, 1)]
        .iter()
        .map(|&(p, z)| ErsStage::new(p, vec![bi(z)], b1.clone()))
        .collect();
    let b2 = Matrix::from_rows(vec![ints(&[1, 1]), ints(&[0, 1])]).unwrap();
    let k2 = [(50, [1, 2]), (500, [3, 4]), (5000, [0, 9]), (50000, [2, 2])]
        .iter()
        .map(|&(p, z)| ErsStage::new(p, ints(&z), b2.clone()))
        .collect();
    vec![
        ErsStageData::new(1, k1, vec![BigRational::one(), q(1, 3)]).unwrap(),
        ErsStageData::new(2, k2, vec![BigRational::one(), q(2, 9), q(1, 5)]).unwrap(),
    ]
}

fn ers_pipeline_check() -> Outcome {
    let mut notes = Vec::new();
    for data in ers_instances() {
        let k = data.k;
        let out = ers_pipeline(&data, data.stages.len()).map_err(|e| format!("k = {k}: {e}"))?;
        for s in &out.seq.stages {
            ensure(s.matrix.row_sums().iter().all(|r| *r == s.p), || format!("k = {k}: row sums differ from {}", s.p))?;
        }
        let report = verify_ers(&out.seq);
        ensure(report.is_ers(), || format!("k = {k}: {:?}", report.failures))?;
        let ones_chain = out.seq.markers.as_ref().is_some_and(|ms| ms.iter().all(|h| h.iter().all(One::is_one)));
        ensure(ones_chain, || format!("k = {k}: markers are not all-ones"))?;
        let mats = out.seq.matrices();
        let diag = unique_trace_diagnostic(&mats, 12, &tol_from_f64(1e-6)).map_err(|e| format!("k = {k}: {e}"))?;
        ensure(diag.numeric_rank_at_tol == 1, || format!("k = {k}: numeric rank {}", diag.numeric_rank_at_tol))?;
        let column_side: Vec<_> = mats.iter().map(Matrix::transpose).collect();
        let blocks = restrict_to_kernel_complement(&column_side).map_err(|e| format!("k = {k}: {e}"))?;
        for (c, s) in blocks.iter().zip(&out.seq.stages) {
            let block_form = *c.get(0, 0) == s.p && (1..=k).all(|i| c.get(i, 0).is_zero());
            ensure(block_form, || format!("k = {k}: restriction is not [[p, v], [0, B]]"))?;
        }
        ensure(out.trace_error <= out.trace_bound, || format!("k = {k}: trace error {} above bound {}", out.trace_error, out.trace_bound))?;
        notes.push(format!("k = {k} error {} <= {}", out.trace_error, out.trace_bound));
    }
    Ok(notes.join(", "))
}

/// Direct interval check: `w([0, b]) = [0, w(b)] ∩ w(Z^n)` for every `b <= bmax`.
fn brute_good(w: &[i64], bmax: i64) -> bool {
    let n = w.len();
    let g = w.iter().fold(0i64, |g, x| g.gcd(x));
    let mut b = vec![0i64; n];
    loop {
        let top: i64 = w.iter().zip(&b).map(|(x, y)| x * y).sum();
        let mut reach = vec![false; top as usize + 1];
        let mut c = vec![0i64; n];
        loop {
            reach[w.iter().zip(&c).map(|(x, y)| x * y).sum::<i64>() as usize] = true;
            if !odometer(&mut c, &b) {
                break;
            }
        }
        if (0..=top).step_by(g as usize).any(|m| !reach[m as usize]) {
            return false;
        }
        if !odometer(&mut b, &vec![bmax; n]) {
            return true;
        }
    }
}

fn odometer(x: &mut [i64], max: &[i64]) -> bool {
    for i in 0..x.len() {
        if x[i] < max[i] {
            x[i] += 1;
            return true;
        }
        x[i] = 0;
    }
    false
}

fn goodness() -> Outcome {
    let mut count = 0;
    for n in 1..=4usize {
        let mut w = vec![0i64; n];
        while odometer(&mut w, &vec![3; n]) {
            let fast = is_good_row(&ints(&w)).map_err(|e| format!("{w:?}: {e}"))?;
            ensure(fast == brute_good(&w, 3), || format!("{w:?}: is_good_row says {fast}"))?;
            count += 1;
        }
    }
    Ok(format!("{count} rows agree with interval enumeration"))
}

fn ecs_sequences() -> Vec<RealizationSeq> {
    let mut out = Vec::new();
    for (k, ps) in [(1usize, vec![5u64, 7, 11]), (2, vec![11, 13, 17, 19]), (3, vec![17, 19, 23])] {
        let data = ExtensionData::split(k, &ps).unwrap();
        out.push(ecs_pipeline(&data, &BigRational::one()).unwrap());
    }
    let b = Matrix::from_rows(vec![ints(&[1, 1]), ints(&[0, 1])]).unwrap();
    let stages = [(120, [30, 70]), (450, [100, 260]), (900, [200, 520]), (2000, [440, 1150])]
        .iter()
        .map(|&(p, v)| ExtStage::new(p, ints(&v), b.clone()))
        .collect();
    out.push(ecs_pipeline(&ExtensionData::new(2, stages).unwrap(), &q(1, 100)).unwrap());
    out
}

fn kernel_invariant() -> Outcome {
    let mut products = 0;
    for (i, seq) in ecs_sequences().iter().enumerate() {
        let n = seq.stages.len();
        for start in 0..n {
            for end in start + 1..=n {
                let part = seq.telescope(&[start, end]).ok_or("telescope failed")?;
                let ranks = kernel_ranks(&part).ok_or("kernel rank failed")?;
                ensure(ranks == vec![1], || format!("sequence {i}, product {start}..{end}: kernel rank {ranks:?}"))?;
                products += 1;
            }
        }
    }
    Ok(format!("{products} telescoped products have rank-one kernels"))
}

fn decision_table() -> Outcome {
    use Cardinal::{Finite, Infinite};
    use RealizationSize::{Bounded, Exactly, Unbounded};
    let with_inf = SupernaturalNumber::with_infinite(&[2]).unwrap();
    let without = SupernaturalNumber::new([(3, 2)].into_iter().collect(), Default::default()).unwrap();
    // (rank, lambda, infinite prime present, expected existence, expected size)
    let table: [(Cardinal, Cardinal, bool, bool, Option<RealizationSize>); 12] = [
        (Finite(3), Finite(5), true, true, Some(Bounded)),
        (Finite(3), Infinite, true, true, Some(Unbounded)),
        (Finite(3), Finite(2), true, true, Some(Bounded)),
        (Infinite, Finite(5), true, true, Some(Unbounded)),
        (Infinite, Infinite, true, true, Some(Unbounded)),
        (Infinite, Finite(2), true, true, Some(Unbounded)),
        (Finite(3), Finite(5), false, true, Some(Exactly(5))),
        (Finite(3), Infinite, false, true, Some(Unbounded)),
        (Finite(3), Finite(2), false, false, None),
        (Infinite, Finite(5), false, false, None),
        (Infinite, Infinite, false, true, Some(Unbounded)),
        (Infinite, Finite(2), false, false, None),
    ];
    for (rank, lambda, inf, exists, size) in table {
        let u = if inf { &with_inf } else { &without };
        let d = decide_ecrs(rank, u, lambda);
        ensure(d.exists == exists && d.size == size, || format!("rank {rank}, lambda {lambda}, infinite prime {inf}: {d:?}"))?;
    }
    Ok("12 rows match".into())
}

fn dimgroup(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dimgroup")).args(args).output().expect("run dimgroup")
}

fn perturb_first_entry(src: &Path, dst: &Path, stage: usize) -> Result<(), String> {
    let mut file: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(src).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let entry = &mut file["stages"][stage]["matrix"][0][0];
    let value: BigInt = entry.as_str().ok_or("entry is not a string")?.parse().map_err(|e| format!("{e}"))?;
    *entry = serde_json::Value::String((value + BigInt::one()).to_string());
    std::fs::write(dst, file.to_string()).map_err(|e| e.to_string())
}

fn cli_round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let inputs = [
        ("ecs", r#"{"k": 1, "stages": [{"p": 5, "v": [0], "B": [[1]]}, {"p": 7, "v": [0], "B": [[1]]}, {"p": 11, "v": [0], "B": [[1]]}]}"#, vec!["--epsilon", "1"]),
        ("ers", r#"{"k": 1, "stages": [{"p": 100, "u": [3], "B": [[1]]}, {"p": 1000, "u": [-7], "B": [[1]]}, {"p": 10000, "u": [11], "B": [[1]]}], "trace_row": [[1, 1], [1, 3]]}"#, vec![]),
        ("ecrs", r#"{"k": 2, "lambda": 3, "rho": [1, 1], "p_seq": [7, 13, 19]}"#, vec![]),
    ];
    for (pipeline, text, extra) in inputs {
        let input = dir.path().join(format!("{pipeline}_in.json"));
        let output = dir.path().join(format!("{pipeline}_out.json"));
        let perturbed = dir.path().join(format!("{pipeline}_bad.json"));
        std::fs::write(&input, text).map_err(|e| e.to_string())?;
        let (i, o, b) = (input.to_str().unwrap(), output.to_str().unwrap(), perturbed.to_str().unwrap());
        let mut args = vec!["build", pipeline, "-i", i, "-o", o];
        args.extend(extra);
        let built = dimgroup(&args);
        ensure(built.status.success(), || format!("{pipeline}: build failed: {}", String::from_utf8_lossy(&built.stderr)))?;
        let ok = dimgroup(&["verify", "-i", o]);
        ensure(ok.status.code() == Some(0), || format!("{pipeline}: verify exited {:?}", ok.status.code()))?;
        perturb_first_entry(&output, &perturbed, 1)?;
        let bad = dimgroup(&["verify", "-i", b]);
        let stderr = String::from_utf8_lossy(&bad.stderr);
        ensure(bad.status.code() == Some(4), || format!("{pipeline}: perturbed verify exited {:?}", bad.status.code()))?;
        ensure(stderr.contains("stage 1"), || format!("{pipeline}: failure does not name stage 1: {stderr}"))?;
    }
    Ok("ecs, ers, ecrs round-trip; perturbations rejected at stage 1".into())
}

fn main() {
    let criteria: [Criterion; 13] = [
        ("split matrices", split_matrices),
        ("general ECS matrices", general_matrices),
        ("rational vector reduction", vector_reduction),
        ("w-sequence bounds", w_sequences),
        ("B-matrix algebra", b_algebra),
        ("polynomials with f(-1) = +-1", polynomials),
        ("ECRS pipeline sizes", ecrs_cases),
        ("commuting family", commuting),
        ("ERS pipeline", ers_pipeline_check),
        ("goodness of rows", goodness),
        ("kernel rank of telescoped products", kernel_invariant),
        ("ECRS decision table", decision_table),
        ("CLI round trips", cli_round_trips),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(note) => println!("PASS {:>2} {name}: {note}", n + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", n + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
