use nlfit_core::data::{Dataset, ParamVector};
use nlfit_core::hetero::{gls_fit, kernel_weights, nadaraya_watson, power_weights, smooth, Kernel, KernelSpec, VarianceModel};
use nlfit_core::models::{MeanFunction, Model};
use nlfit_core::sim::{interval_coverage_hetero, HeteroDesign};
use nlfit_core::solvers::{gauss_newton, SolverOptions};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, Uniform};

fn pv(v: &[f64]) -> ParamVector {
    ParamVector::new(v.to_vec()).unwrap()
}

/// `sqrt(w) f(x, theta)`, with `sqrt(w)` carried as a second predictor column.
struct Scaled(Model);

impl MeanFunction for Scaled {
    fn id(&self) -> String {
        format!("scaled_{}", self.0.id())
    }
    fn n_params(&self) -> usize {
        self.0.n_params()
    }
    fn domain_error(&self, theta: &[f64], x: &[f64]) -> Option<String> {
        self.0.domain_error(theta, &x[..1])
    }
    fn value(&self, theta: &[f64], x: &[f64]) -> f64 {
        x[1] * self.0.value(theta, &x[..1])
    }
    fn gradient(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        self.0.gradient(theta, &x[..1], out);
        out.iter_mut().for_each(|g| *g *= x[1]);
    }
}

fn hetero_mm(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let xd = Uniform::new(0.5, 60.0).unwrap();
    let e = Normal::new(0.0, 1.0).unwrap();
    let xs: Vec<f64> = (0..n).map(|_| xd.sample(&mut rng)).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|x| {
            let f = 6.0 * x / (5.0 + x);
            f * (1.0 + 0.15 * e.sample(&mut rng))
        })
        .collect();
    Dataset::from_xy(&xs, &ys).unwrap()
}

#[test]
fn user_weights_match_scaled_gauss_newton() {
    let d = hetero_mm(40, 3);
    let w: Vec<f64> = (0..40).map(|i| 0.5 + (i % 4) as f64 * 0.75).collect();
    let opts = SolverOptions::default();
    let init = pv(&[5.0, 4.0]);
    let weighted = gls_fit(&Model::MichaelisMenten, &d, &VarianceModel::UserWeights { weights: w.clone() }, &init, &opts).unwrap();

    let mut x = Vec::with_capacity(80);
    let mut y = Vec::with_capacity(40);
    for i in 0..40 {
        let s = w[i].sqrt();
        x.extend([d.row(i)[0], s]);
        y.push(s * d.y()[i]);
    }
    let scaled = Dataset::new(x, 2, y).unwrap();
    let plain = gauss_newton(&Scaled(Model::MichaelisMenten), &scaled, &init, &opts).unwrap();
    assert!(weighted.is_converged() && plain.is_converged());
    for j in 0..2 {
        assert!((weighted.theta_hat[j] - plain.theta_hat[j]).abs() < 1e-8);
    }
    assert!((weighted.s_value - plain.s_value).abs() < 1e-10 * plain.s_value);
}

#[test]
fn constant_variance_is_plain_gauss_newton() {
    let d = hetero_mm(30, 8);
    let init = pv(&[5.0, 4.0]);
    let opts = SolverOptions::default();
    let a = gls_fit(&Model::MichaelisMenten, &d, &VarianceModel::Constant, &init, &opts).unwrap();
    let b = gauss_newton(&Model::MichaelisMenten, &d, &init, &opts).unwrap();
    for j in 0..2 {
        assert!((a.theta_hat[j] - b.theta_hat[j]).abs() < 1e-10);
    }
}

#[test]
fn power_of_mean_fit_is_a_fixed_point() {
    let d = hetero_mm(80, 12);
    let opts = SolverOptions::default();
    let fit = gls_fit(&Model::MichaelisMenten, &d, &VarianceModel::PowerOfMean { gamma: 2.0 }, &pv(&[5.0, 4.0]), &opts).unwrap();
    assert!(fit.is_converged());
    assert!(fit.gradient_inf_norm <= opts.tol_grad * (1.0 + fit.s_value));
    // Weights refreshed at the estimate reproduce the weights of the final fit.
    let fresh = power_weights(&Model::MichaelisMenten, &d, &fit.theta_hat, 2.0).unwrap();
    let used = fit.weights.as_ref().unwrap();
    for (a, b) in fresh.iter().zip(used) {
        assert!((a - b).abs() < 1e-6 * b);
    }
}

#[test]
fn power_of_mean_fit_is_scale_equivariant() {
    let xs: Vec<f64> = (1..=25).map(|i| i as f64 * 1.7).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 6.0 * x / (5.0 + x)).collect();
    let opts = SolverOptions::default();
    let vm = VarianceModel::PowerOfMean { gamma: 2.0 };
    let base = gls_fit(&Model::MichaelisMenten, &Dataset::from_xy(&xs, &ys).unwrap(), &vm, &pv(&[4.0, 3.0]), &opts).unwrap();
    for c in [0.1, 3.0, 250.0] {
        let yc: Vec<f64> = ys.iter().map(|y| c * y).collect();
        let d = Dataset::from_xy(&xs, &yc).unwrap();
        let f = gls_fit(&Model::MichaelisMenten, &d, &vm, &pv(&[4.0 * c, 3.0]), &opts).unwrap();
        assert!(f.is_converged());
        assert!((f.theta_hat[0] - c * base.theta_hat[0]).abs() < 1e-8 * c * base.theta_hat[0]);
        assert!((f.theta_hat[1] - base.theta_hat[1]).abs() < 1e-8 * base.theta_hat[1]);
    }
}

#[test]
fn weighted_intervals_cover_better() {
    let design = HeteroDesign::default();
    let gls = interval_coverage_hetero(&design, true, 300, 0.05, 2024).unwrap();
    let ols = interval_coverage_hetero(&design, false, 300, 0.05, 2024).unwrap();
    assert!(gls.empirical >= 0.92, "gls {}", gls.empirical);
    assert!(gls.empirical - ols.empirical >= 0.03, "gls {} ols {}", gls.empirical, ols.empirical);
}

#[test]
fn smoother_batch_keeps_query_order() {
    let d = hetero_mm(50, 1);
    let spec = KernelSpec::new(Kernel::Gaussian, 2.0).unwrap();
    let qs: Vec<f64> = (0..40).map(|i| 60.0 - 1.5 * i as f64).collect();
    let batch = smooth(&qs, &d, &spec).unwrap();
    for (q, v) in qs.iter().zip(&batch) {
        assert_eq!(*v, nadaraya_watson(&[*q], &d, &spec).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn weights_normalize_and_estimates_stay_in_range(
        seed in 0u64..1000,
        q in -5.0f64..70.0,
        h in 0.5f64..30.0,
        gaussian in any::<bool>(),
    ) {
        let d = hetero_mm(30, seed);
        let kernel = if gaussian { Kernel::Gaussian } else { Kernel::Epanechnikov };
        let spec = KernelSpec::new(kernel, h).unwrap();
        if let Ok(w) = kernel_weights(&[q], &d, &spec) {
            let total: f64 = w.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            let v = nadaraya_watson(&[q], &d, &spec).unwrap();
            let lo = d.y().iter().copied().fold(f64::INFINITY, f64::min);
            let hi = d.y().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        } else {
            prop_assert!(!gaussian);
        }
    }
}

#[test]
fn invalid_user_weights_are_rejected() {
    let d = hetero_mm(10, 2);
    let mut w = vec![1.0; 10];
    w[3] = 0.0;
    let r = gls_fit(&Model::MichaelisMenten, &d, &VarianceModel::UserWeights { weights: w }, &pv(&[5.0, 4.0]), &SolverOptions::default());
    assert!(r.is_err());
    let short = VarianceModel::UserWeights { weights: vec![1.0; 3] };
    assert!(gls_fit(&Model::MichaelisMenten, &d, &short, &pv(&[5.0, 4.0]), &SolverOptions::default()).is_err());
}
