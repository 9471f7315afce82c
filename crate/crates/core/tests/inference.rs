use nalgebra::{DMatrix, DVector};
use nlfit_core::data::{self, Dataset, ParamVector};
use nlfit_core::inference::{
    build_report, exact_region, likelihood_region, log_likelihood, profile_log_likelihood, wald_region, GridSpec,
};
use nlfit_core::models::Model;
use nlfit_core::sim::figure1_experiment;
use nlfit_core::solvers::{gauss_newton, SolverOptions};
use nlfit_core::special::{f_cdf, f_quantile};
use nlfit_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

fn pv(v: &[f64]) -> ParamVector {
    ParamVector::new(v.to_vec()).unwrap()
}

fn linear_data(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let e = Normal::new(0.0, 0.7).unwrap();
    let xs: Vec<f64> = (0..n).map(|i| i as f64 * 0.5).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 1.5 - 0.8 * x + e.sample(&mut rng)).collect();
    Dataset::from_xy(&xs, &ys).unwrap()
}

fn mm_data(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let e = Normal::new(0.0, 0.3).unwrap();
    let xs: Vec<f64> = (0..n).map(|i| 0.5 + 2.0 * i as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 6.0 * x / (5.0 + x) + e.sample(&mut rng)).collect();
    Dataset::from_xy(&xs, &ys).unwrap()
}

// P(F(2, m) > x) = (1 + 2x/m)^(-m/2), so the upper quantile has a closed form.
fn f2_quantile(alpha: f64, m: f64) -> f64 {
    m / 2.0 * (alpha.powf(-2.0 / m) - 1.0)
}

#[test]
fn f_quantile_matches_closed_form_for_two_numerator_df() {
    assert!((f_quantile(0.05, 2, 18) - 3.5546).abs() < 1e-3);
    for m in [1u32, 3, 5, 18, 48, 98, 400] {
        for alpha in [0.01, 0.05, 0.1, 0.5, 0.9] {
            let want = f2_quantile(alpha, m as f64);
            let got = f_quantile(alpha, 2, m);
            assert!((got - want).abs() <= 1e-7 * want.max(1.0), "m={m} alpha={alpha}: {got} vs {want}");
        }
    }
}

#[test]
fn f_quantile_matches_statrs() {
    for (d1, d2) in [(1u32, 1u32), (1, 10), (3, 7), (4, 96), (10, 30), (2, 98)] {
        let dist = FisherSnedecor::new(d1 as f64, d2 as f64).unwrap();
        for alpha in [0.01, 0.05, 0.25, 0.5] {
            let want = dist.inverse_cdf(1.0 - alpha);
            let got = f_quantile(alpha, d1, d2);
            assert!((got - want).abs() <= 1e-6 * want.max(1.0), "({d1},{d2}) alpha={alpha}: {got} vs {want}");
        }
    }
}

#[test]
fn f_quantile_round_trip_and_order() {
    assert!((f_quantile(0.5, 1, 1) - 1.0).abs() < 1e-8);
    assert!(f_quantile(0.01, 2, 18) > f_quantile(0.05, 2, 18));
    for (d1, d2) in [(1u32, 2u32), (2, 18), (3, 50), (7, 9), (12, 200)] {
        for alpha in [0.001, 0.01, 0.05, 0.2, 0.5, 0.8, 0.99] {
            let q = f_quantile(alpha, d1, d2);
            let err = (f_cdf(q, d1 as f64, d2 as f64) - (1.0 - alpha)).abs();
            assert!(err < 1e-7, "({d1},{d2}) alpha={alpha}: {err:e}");
        }
    }
}

#[test]
fn report_arithmetic() {
    let d = linear_data(12, 3);
    let fit = gauss_newton(&Model::Linear, &d, &pv(&[0.0, 0.0]), &SolverOptions::default()).unwrap();
    let r = build_report(&fit, 0.05).unwrap();
    assert_eq!(r.s2, fit.s_value / 10.0);
    assert_eq!(r.sigma2_mle, r.s2 * 10.0 / 12.0);

    // Covariance against s^2 (X'X)^{-1} built from the design directly.
    let x = DMatrix::from_fn(12, 2, |i, j| if j == 0 { 1.0 } else { d.row(i)[0] });
    let want = (x.transpose() * &x).try_inverse().unwrap() * r.s2;
    let got = r.covariance_rows();
    for i in 0..2 {
        for j in 0..2 {
            assert!((got[i][j] - want[(i, j)]).abs() < 1e-10 * want[(i, j)].abs().max(1.0));
        }
        let z = 1.959963984540054;
        let (lo, hi) = r.wald_intervals[i];
        assert!((hi - fit.theta_hat[i] - z * want[(i, i)].sqrt()).abs() < 1e-9);
        assert!((fit.theta_hat[i] - lo - z * want[(i, i)].sqrt()).abs() < 1e-9);
    }
}

#[test]
fn zero_residuals_give_zero_covariance() {
    let xs = [0.0, 1.0, 2.0, 3.0];
    let ys: Vec<f64> = xs.iter().map(|x| 2.0 + 0.5 * x).collect();
    let d = Dataset::from_xy(&xs, &ys).unwrap();
    let fit = gauss_newton(&Model::Linear, &d, &pv(&[0.0, 0.0]), &SolverOptions::default()).unwrap();
    let r = build_report(&fit, 0.05).unwrap();
    assert!(r.s2 < 1e-25);
    assert!(r.covariance_rows().iter().flatten().all(|v| v.abs() < 1e-20));
}

#[test]
fn linear_model_regions_coincide() {
    let d = linear_data(20, 11);
    let fit = gauss_newton(&Model::Linear, &d, &pv(&[0.0, 0.0]), &SolverOptions::default()).unwrap();
    let r = build_report(&fit, 0.05).unwrap();
    let wald = wald_region(&fit, &r, 0.05).unwrap();
    let lik = likelihood_region(&fit, &Model::Linear, &d, 0.05, None).unwrap();
    let (se0, se1) = (r.standard_errors[0], r.standard_errors[1]);
    let mut inside = 0;
    for i in 0..50 {
        for j in 0..50 {
            let t = [
                fit.theta_hat[0] + (i as f64 / 49.0 - 0.5) * 8.0 * se0,
                fit.theta_hat[1] + (j as f64 / 49.0 - 0.5) * 8.0 * se1,
            ];
            assert_eq!(wald.contains(&t), lik.contains(&t), "{t:?}");
            inside += wald.contains(&t) as usize;
        }
    }
    assert!(inside > 50 && inside < 2450);
}

#[test]
fn wald_boundary_lies_on_threshold() {
    let d = mm_data(30, 5);
    let fit = gauss_newton(&Model::MichaelisMenten, &d, &pv(&[5.0, 4.0]), &SolverOptions::default()).unwrap();
    let r = build_report(&fit, 0.05).unwrap();
    let wald = wald_region(&fit, &r, 0.05).unwrap();
    assert_eq!(wald.boundary_grid.len(), 360);
    for p in &wald.boundary_grid {
        let q = wald.statistic(p).unwrap();
        assert!((q - wald.threshold).abs() <= 1e-8 * wald.threshold);
    }
    assert!(wald.contains(fit.theta_hat.as_slice()));
}

#[test]
fn likelihood_boundary_is_not_an_ellipse() {
    let d = mm_data(12, 8);
    let fit = gauss_newton(&Model::MichaelisMenten, &d, &pv(&[5.0, 4.0]), &SolverOptions::default()).unwrap();
    let r = build_report(&fit, 0.05).unwrap();
    let wald = wald_region(&fit, &r, 0.05).unwrap();
    let se = &r.standard_errors;
    let grid = GridSpec::centered([fit.theta_hat[0], fit.theta_hat[1]], [8.0 * se[0], 8.0 * se[1]], 201, 201).unwrap();
    let lik = likelihood_region(&fit, &Model::MichaelisMenten, &d, 0.05, Some(&grid)).unwrap();
    assert!(!lik.touches_border);
    for p in &lik.boundary_grid {
        let s = data::residual_sum_squares(&Model::MichaelisMenten, p, &d).unwrap();
        assert!((s - lik.threshold).abs() < 0.02 * lik.threshold);
    }
    let q: Vec<f64> = lik.boundary_grid.iter().map(|p| wald.statistic(p).unwrap() / wald.threshold).collect();
    let spread = q.iter().copied().fold(f64::NEG_INFINITY, f64::max) - q.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(spread > 0.05, "{spread}");
}

#[test]
fn regions_are_nested_in_alpha() {
    let d = mm_data(25, 21);
    let fit = gauss_newton(&Model::MichaelisMenten, &d, &pv(&[5.0, 4.0]), &SolverOptions::default()).unwrap();
    let r = build_report(&fit, 0.05).unwrap();
    let w05 = wald_region(&fit, &r, 0.05).unwrap();
    let w01 = wald_region(&fit, &r, 0.01).unwrap();
    let l05 = likelihood_region(&fit, &Model::MichaelisMenten, &d, 0.05, None).unwrap();
    let l01 = likelihood_region(&fit, &Model::MichaelisMenten, &d, 0.01, None).unwrap();
    let se = &r.standard_errors;
    for i in 0..60 {
        for j in 0..60 {
            let t = [
                fit.theta_hat[0] + (i as f64 / 59.0 - 0.5) * 10.0 * se[0],
                fit.theta_hat[1] + (j as f64 / 59.0 - 0.5) * 10.0 * se[1],
            ];
            if w05.contains(&t) {
                assert!(w01.contains(&t));
            }
            if l05.contains(&t) {
                assert!(l01.contains(&t));
            }
        }
    }
}

#[test]
fn exact_region_uses_supplied_factor() {
    let d = mm_data(25, 2);
    let fit = gauss_newton(&Model::MichaelisMenten, &d, &pv(&[5.0, 4.0]), &SolverOptions::default()).unwrap();
    let ex = exact_region(&fit, &Model::MichaelisMenten, &d, 1.3, None).unwrap();
    assert_eq!(ex.threshold, 1.3 * fit.s_value);
    for t in [[6.0, 5.0], [5.0, 3.0], [6.5, 6.0], [fit.theta_hat[0], fit.theta_hat[1]]] {
        let s = data::residual_sum_squares(&Model::MichaelisMenten, &t, &d).unwrap();
        assert_eq!(ex.contains(&t), s <= 1.3 * fit.s_value);
    }
    assert!(exact_region(&fit, &Model::MichaelisMenten, &d, 0.5, None).is_err());
}

#[test]
fn boundary_grid_needs_two_parameters() {
    let xs: Vec<f64> = (0..15).map(|i| i as f64 * 0.4).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 1.0 + 0.5 * x - 0.1 * x * x + 0.05 * (3.0 * x).sin()).collect();
    let d = Dataset::from_xy(&xs, &ys).unwrap();
    let model = Model::Polynomial(2);
    let fit = gauss_newton(&model, &d, &pv(&[0.0, 0.0, 0.0]), &SolverOptions::default()).unwrap();
    let grid = GridSpec::new([0.0, 0.0], [1.0, 1.0], 10, 10).unwrap();
    assert_eq!(
        likelihood_region(&fit, &model, &d, 0.05, Some(&grid)).unwrap_err(),
        Error::InvalidInput("boundary grid requires p=2".into())
    );
    let lik = likelihood_region(&fit, &model, &d, 0.05, None).unwrap();
    assert!(lik.contains(fit.theta_hat.as_slice()));
}

#[test]
fn grid_without_crossing_is_too_coarse() {
    let d = mm_data(25, 2);
    let fit = gauss_newton(&Model::MichaelisMenten, &d, &pv(&[5.0, 4.0]), &SolverOptions::default()).unwrap();
    let far = GridSpec::new([50.0, 50.0], [60.0, 60.0], 20, 20).unwrap();
    assert_eq!(
        likelihood_region(&fit, &Model::MichaelisMenten, &d, 0.05, Some(&far)).unwrap_err(),
        Error::GridTooCoarse
    );
}

#[test]
fn log_likelihood_values() {
    let d = Dataset::from_xy(&[1.0], &[3.0]).unwrap();
    let l = log_likelihood(&Model::Linear, &pv(&[1.0, 2.0]), 1.0 / (2.0 * std::f64::consts::PI), &d).unwrap();
    assert!(l.abs() < 1e-14);

    let d = mm_data(20, 4);
    let th = pv(&[5.5, 4.0]);
    let s = data::residual_sum_squares(&Model::MichaelisMenten, th.as_slice(), &d).unwrap();
    let n = 20.0;
    let dl = |v: f64| {
        let h = 1e-6 * v;
        (log_likelihood(&Model::MichaelisMenten, &th, v + h, &d).unwrap()
            - log_likelihood(&Model::MichaelisMenten, &th, v - h, &d).unwrap())
            / (2.0 * h)
    };
    assert!(dl(0.9 * s / n) > 0.0);
    assert!(dl(1.1 * s / n) < 0.0);
    let best = log_likelihood(&Model::MichaelisMenten, &th, s / n, &d).unwrap();
    assert!((best - profile_log_likelihood(&Model::MichaelisMenten, &th, &d).unwrap()).abs() < 1e-10);

    let worse = pv(&[4.0, 4.0]);
    assert!(
        log_likelihood(&Model::MichaelisMenten, &worse, 0.3, &d).unwrap()
            < log_likelihood(&Model::MichaelisMenten, &th, 0.3, &d).unwrap()
    );
}

#[test]
fn profile_likelihood_and_least_squares_share_argmax() {
    let d = mm_data(20, 6);
    let mut best_l = (f64::NEG_INFINITY, 0);
    let mut best_s = (f64::INFINITY, 0);
    let pts: Vec<[f64; 2]> = (0..41)
        .flat_map(|i| (0..41).map(move |j| [4.0 + 0.1 * i as f64, 2.0 + 0.15 * j as f64]))
        .collect();
    for (k, t) in pts.iter().enumerate() {
        let l = profile_log_likelihood(&Model::MichaelisMenten, &pv(t), &d).unwrap();
        let s = data::residual_sum_squares(&Model::MichaelisMenten, t, &d).unwrap();
        if l > best_l.0 {
            best_l = (l, k);
        }
        if s < best_s.0 {
            best_s = (s, k);
        }
    }
    assert_eq!(best_l.1, best_s.1);
}

#[test]
fn michaelis_menten_regions_differ_less_with_more_data() {
    let small = figure1_experiment(50, 3, 0.05).unwrap();
    let large = figure1_experiment(100, 3, 0.05).unwrap();
    assert!(small.relative_difference > 0.02, "{}", small.relative_difference);
    assert!(large.relative_difference < small.relative_difference);
}

#[test]
fn weighted_likelihood_region_uses_weighted_objective() {
    let d = mm_data(20, 9);
    let w = DVector::from_fn(20, |i, _| 1.0 + (i % 3) as f64);
    let fit = nlfit_core::solvers::weighted_fit(
        nlfit_core::solvers::Method::GaussNewton,
        &Model::MichaelisMenten,
        &d,
        &pv(&[5.0, 4.0]),
        &SolverOptions::default(),
        Some(&w),
    )
    .unwrap();
    let lik = likelihood_region(&fit, &Model::MichaelisMenten, &d, 0.05, None).unwrap();
    let t = [fit.theta_hat[0] + 0.1, fit.theta_hat[1] - 0.2];
    let sw = data::weighted_rss(&Model::MichaelisMenten, &t, &d, Some(&w)).unwrap();
    assert!((lik.statistic(&t).unwrap() - sw).abs() < 1e-10 * sw);
}
