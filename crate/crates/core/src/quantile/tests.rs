use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lv(v: f64) -> QuantileLevel {
    QuantileLevel::new(v).unwrap()
}

fn design(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let p = rows[0].len();
    DMatrix::from_fn(rows.len(), p + 1, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] })
}

/// Exhaustive minimum over all exact fits through `k` observations.
fn subset_oracle(x: &DMatrix<f64>, y: &[f64], tau: QuantileLevel, w: &[f64]) -> f64 {
    let (n, k) = x.shape();
    let mut best = f64::INFINITY;
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let a = DMatrix::from_fn(k, k, |r, c| x[(idx[r], c)]);
        let b = DVector::from_iterator(k, idx.iter().map(|&i| y[i]));
        if a.determinant().abs() > 1e-10 {
            if let Some(sol) = a.lu().solve(&b) {
                let obj = weighted_check_loss(x, y, sol.as_slice(), tau, Some(w));
                best = best.min(obj);
            }
        }
        // next combination
        let mut i = k;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < n - k + i {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

#[test]
fn check_loss_branches() {
    assert!((check_loss(2.0, lv(0.9)) - 1.8).abs() < 1e-15);
    assert!((check_loss(-2.0, lv(0.9)) - 0.2).abs() < 1e-15);
    assert_eq!(check_loss(0.0, lv(0.3)), 0.0);
}

#[test]
fn empirical_quantile_examples() {
    let v: Vec<f64> = (1..=10).map(f64::from).collect();
    assert_eq!(empirical_quantile(&v, lv(0.5)).unwrap(), 5.0);
    assert_eq!(empirical_quantile(&[7.0], lv(0.13)).unwrap(), 7.0);
    assert!(matches!(empirical_quantile(&[], lv(0.5)), Err(Error::EmptySample)));
    // n·s that is an integer only up to rounding
    assert_eq!(empirical_quantile(&v, lv(0.3)).unwrap(), 3.0);
    assert_eq!(empirical_quantile(&v, lv(0.7)).unwrap(), 7.0);
}

#[test]
fn empirical_quantile_matches_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let n = rng.random_range(1..60);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0f64).round() * 0.5).collect();
        let s: f64 = rng.random_range(0.001..0.999);
        let mut sorted = v.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // smallest k with k/n ≥ s
        let k = (1..=n).find(|&k| k as f64 >= n as f64 * s - 1e-9).unwrap();
        assert_eq!(empirical_quantile(&v, lv(s)).unwrap(), sorted[k - 1]);
    }
}

#[test]
fn median_of_three() {
    let x = DMatrix::from_element(3, 1, 1.0);
    let sol = fit_quantile_regression(&x, &[1.0, 2.0, 3.0], lv(0.5), None).unwrap();
    assert!((sol.coefficients[0] - 2.0).abs() < 1e-9);
}

#[test]
fn two_points_interpolated() {
    let x = design(&[vec![0.0], vec![1.0]]);
    for t in [0.1, 0.5, 0.93] {
        let sol = fit_quantile_regression(&x, &[1.0, 3.0], lv(t), None).unwrap();
        assert!((sol.coefficients[0] - 1.0).abs() < 1e-9);
        assert!((sol.coefficients[1] - 2.0).abs() < 1e-9);
        assert!(sol.objective.abs() < 1e-9);
    }
}

#[test]
fn rank_deficient_is_singular() {
    let x = design(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0], vec![4.0, 8.0]]);
    let r = fit_quantile_regression(&x, &[1.0, 2.0, 0.0, 5.0], lv(0.5), None);
    assert!(matches!(r, Err(Error::SingularDesign)));
}

#[test]
fn rejects_non_finite_and_zero_weights() {
    let x = design(&[vec![0.0], vec![1.0], vec![2.0]]);
    assert!(fit_quantile_regression(&x, &[1.0, f64::NAN, 0.0], lv(0.5), None).is_err());
    let r = fit_quantile_regression(&x, &[1.0, 2.0, 0.0], lv(0.5), Some(&[0.0, 0.0, 0.0]));
    assert!(matches!(r, Err(Error::ZeroWeights)));
}

#[test]
fn matches_subset_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..200 {
        let p = rng.random_range(0..=2usize);
        let n = rng.random_range(p + 2..=12);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let x = if p == 0 { DMatrix::from_element(n, 1, 1.0) } else { design(&rows) };
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let w: Vec<f64> =
            if case % 2 == 0 { vec![1.0; n] } else { (0..n).map(|_| rng.random_range(0.1..3.0)).collect() };
        let tau = lv(rng.random_range(0.05..0.95));
        let oracle = subset_oracle(&x, &y, tau, &w);
        let sol = fit_quantile_regression(&x, &y, tau, Some(&w)).unwrap();
        let direct = weighted_check_loss(&x, &y, &sol.coefficients, tau, Some(&w));
        assert!((sol.objective - direct).abs() <= 1e-10 * (1.0 + direct), "case {case}");
        assert!(
            (sol.objective - oracle).abs() <= 1e-8 * (1.0 + oracle),
            "case {case}: {} vs {}",
            sol.objective,
            oracle
        );
    }
}

#[test]
fn intercept_only_subgradient_condition() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let n = rng.random_range(5..40);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let s: f64 = rng.random_range(0.05..0.95);
        let x = DMatrix::from_element(n, 1, 1.0);
        let q = fit_quantile_regression(&x, &y, lv(s), None).unwrap().coefficients[0];
        let below = y.iter().filter(|v| **v < q - 1e-9).count() as f64;
        let at_or_below = y.iter().filter(|v| **v <= q + 1e-9).count() as f64;
        let ns = n as f64 * s;
        assert!(below <= ns + 1e-9 && ns <= at_or_below + 1e-9);
    }
}

fn random_instance(seed: u64, n: usize) -> (DMatrix<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.0..2.0), rng.random_range(-1.0..1.0)]).collect();
    let y = rows.iter().map(|r| 1.0 + 2.0 * r[0] - r[1] + (1.0 + r[0]) * rng.random_range(-1.0..1.0f64)).collect();
    (design(&rows), y)
}

#[test]
fn duplication_leaves_solution_unchanged() {
    let (x, y) = random_instance(5, 40);
    let one = fit_quantile_regression(&x, &y, lv(0.7), None).unwrap();
    let x2 = DMatrix::from_fn(80, 3, |i, j| x[(i % 40, j)]);
    let y2: Vec<f64> = (0..80).map(|i| y[i % 40]).collect();
    let two = fit_quantile_regression(&x2, &y2, lv(0.7), None).unwrap();
    for j in 0..3 {
        assert!((one.coefficients[j] - two.coefficients[j]).abs() < 1e-7);
    }
    assert!((2.0 * one.objective - two.objective).abs() < 1e-8 * two.objective);
}

#[test]
fn process_matches_single_fits() {
    let (x, y) = random_instance(9, 300);
    let levels: Vec<QuantileLevel> = (0..60).map(|j| lv(0.3 + 0.01 * j as f64)).collect();
    let path = quantile_process(&x, &y, None, &levels).unwrap();
    for (b, t) in path.iter().zip(&levels) {
        let single = fit_quantile_regression(&x, &y, *t, None).unwrap();
        let obj = weighted_check_loss(&x, &y, b.as_slice(), *t, None);
        assert!((obj - single.objective).abs() <= 1e-9 * single.objective, "level {}", t.value());
    }
}

#[test]
fn process_with_weights_and_working_set() {
    // large enough that the ratio test only scans a working set
    let (x, y) = random_instance(21, 4000);
    let w: Vec<f64> = (0..4000).map(|i| 0.5 + (i % 7) as f64 / 7.0).collect();
    let levels: Vec<QuantileLevel> = (0..25).map(|j| lv(0.45 + 0.02 * j as f64)).collect();
    let path = quantile_process(&x, &y, Some(&w), &levels).unwrap();
    for (b, t) in path.iter().zip(&levels).step_by(4) {
        let single = fit_quantile_regression(&x, &y, *t, Some(&w)).unwrap();
        let obj = weighted_check_loss(&x, &y, b.as_slice(), *t, Some(&w));
        assert!((obj - single.objective).abs() <= 1e-9 * single.objective, "level {}", t.value());
    }
}

#[test]
fn process_noiseless_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rows: Vec<Vec<f64>> = (0..500).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
    let y: Vec<f64> = rows.iter().map(|r| 0.5 - r[0] + 4.0 * r[1]).collect();
    let x = design(&rows);
    let levels: Vec<QuantileLevel> = (1..20).map(|j| lv(j as f64 / 20.0)).collect();
    for b in quantile_process(&x, &y, None, &levels).unwrap() {
        assert!((b[0] - 0.5).abs() < 1e-9 && (b[1] + 1.0).abs() < 1e-9 && (b[2] - 4.0).abs() < 1e-9);
    }
}

#[test]
fn bspline_shapes_and_hinges() {
    let x = DMatrix::from_row_slice(4, 2, &[0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 5.0]);
    let d = bspline_design(&x, &[(1.0, 2.0), (2.0, 3.0)]).unwrap();
    assert_eq!(d.ncols(), 7);
    assert!(d.intercept);
    // row 1 sits exactly on the first knot of column 0
    assert_eq!(d.matrix[(1, 2)], 0.0);
    assert_eq!(d.matrix[(3, 6)], 2.0);
    assert!(matches!(bspline_design(&x, &[(2.0, 1.0), (2.0, 3.0)]), Err(Error::InvalidKnots { column: 0, .. })));
    assert!(bspline_design(&x, &[(1.0, 2.0), (2.0, 9.0)]).is_err());
}

#[test]
fn bspline_contains_linear_functions() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = DMatrix::from_fn(200, 1, |_, _| rng.random_range(-2.0..2.0));
    let knots = default_knots(&x).unwrap();
    let d = bspline_design(&x, &knots).unwrap();
    let y: Vec<f64> = x.column(0).iter().map(|v| 3.0 - 0.5 * v).collect();
    let sol = fit_quantile_regression(&d.matrix, &y, lv(0.6), None).unwrap();
    assert!(sol.objective < 1e-9);
    let fitted = &d.matrix * DVector::from_vec(sol.coefficients);
    for (f, t) in fitted.iter().zip(&y) {
        assert!((f - t).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn check_loss_reflection(u in -100.0..100.0f64, t in 0.01..0.99f64) {
        prop_assert!((check_loss(u, lv(t)) - check_loss(-u, lv(1.0 - t))).abs() < 1e-12 * (1.0 + u.abs()));
        prop_assert!(check_loss(u, lv(t)) >= 0.0);
    }

    #[test]
    fn check_loss_convex(a in -10.0..10.0f64, b in -10.0..10.0f64, l in 0.0..1.0f64, t in 0.01..0.99f64) {
        let tau = lv(t);
        let mid = check_loss(l * a + (1.0 - l) * b, tau);
        prop_assert!(mid <= l * check_loss(a, tau) + (1.0 - l) * check_loss(b, tau) + 1e-12);
    }

    #[test]
    fn fit_scale_and_shift_equivariant(seed in 0u64..1000, c in 0.1..20.0f64, shift in -5.0..5.0f64, t in 0.1..0.9f64) {
        let (x, y) = random_instance(seed, 30);
        let tau = lv(t);
        let base = fit_quantile_regression(&x, &y, tau, None).unwrap();
        let ys: Vec<f64> = y.iter().map(|v| c * v).collect();
        let scaled = fit_quantile_regression(&x, &ys, tau, None).unwrap();
        prop_assert!((scaled.objective - c * base.objective).abs() <= 1e-8 * scaled.objective.max(1e-12));
        let yt: Vec<f64> = y.iter().map(|v| v + shift).collect();
        let shifted = fit_quantile_regression(&x, &yt, tau, None).unwrap();
        prop_assert!((shifted.objective - base.objective).abs() <= 1e-8 * base.objective.max(1e-12));
        // continuous data: the minimizer is unique with probability one
        for j in 0..3 {
            prop_assert!((scaled.coefficients[j] - c * base.coefficients[j]).abs() < 1e-6 * c * (1.0 + base.coefficients[j].abs()));
        }
        prop_assert!((shifted.coefficients[0] - base.coefficients[0] - shift).abs() < 1e-6 * (1.0 + shift.abs()));
    }
}
