use nlfit_core::inference::RegionKind;
use nlfit_core::sim::{
    coverage_experiment, figure1_experiment, generate, table1_experiment, GeneratorSpec, TABLE1_INITS,
};

/// Even-odd ray casting.
fn inside_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

#[test]
fn half_level_coverage_is_near_one_half() {
    let c = coverage_experiment(RegionKind::Likelihood, 100, 500, 0.5, 11).unwrap();
    assert!((0.42..=0.58).contains(&c.empirical), "{}", c.empirical);
    assert_eq!(c.replications + c.failed, 500);
    assert_eq!(c.nominal, 0.5);
}

#[test]
fn coverage_runs_are_deterministic() {
    for kind in [RegionKind::Wald, RegionKind::Likelihood] {
        let a = coverage_experiment(kind, 50, 100, 0.05, 3).unwrap();
        let b = coverage_experiment(kind, 50, 100, 0.05, 3).unwrap();
        assert_eq!(a, b);
        assert!((a.mc_stderr - (a.empirical * (1.0 - a.empirical) / a.replications as f64).sqrt()).abs() < 1e-15);
    }
}

#[test]
fn replication_datasets_do_not_depend_on_order() {
    let seed = 1234u64;
    let forward: Vec<_> = (0..20u64).map(|r| generate(&GeneratorSpec::mm_normal(30, seed ^ r)).unwrap()).collect();
    let backward: Vec<_> = (0..20u64).rev().map(|r| generate(&GeneratorSpec::mm_normal(30, seed ^ r)).unwrap()).collect();
    for (r, d) in forward.iter().enumerate() {
        assert_eq!(d, &backward[19 - r]);
    }
}

#[test]
fn figure1_boundaries_enclose_the_estimate() {
    for n in [50, 100] {
        let f = figure1_experiment(n, 4, 0.05).unwrap();
        let th = [f.theta_hat[0], f.theta_hat[1]];
        assert!(inside_polygon(th, &f.wald_boundary));
        assert!(inside_polygon(th, &f.likelihood_boundary));
        assert!(f.areas.area_a > 0.0 && f.areas.area_b > 0.0);
        assert_eq!(f.relative_difference, f.areas.symmetric_difference / f.areas.area_b);
    }
}

#[test]
fn table1_least_squares_rows() {
    let t = table1_experiment(7, 2_000).unwrap();
    assert_eq!(t.rows.len(), 4);
    let good = t.row("nls", &TABLE1_INITS[1]).unwrap();
    let est = good.estimate.as_ref().unwrap();
    assert!((0.04..=0.06).contains(&est[1]) && (95.0..=110.0).contains(&est[0]), "{est:?}");
    let bad = t.row("nls", &TABLE1_INITS[0]).unwrap();
    let negative = bad.estimate.as_ref().is_some_and(|e| e[1] < 0.0);
    assert!(negative || bad.status != "converged", "{bad:?}");
    assert_eq!(t, table1_experiment(7, 2_000).unwrap());
}
