//! Seeded data generators and Monte Carlo experiment drivers.
//!
//! All randomness comes from ChaCha20 (`rand_chacha`) seeded with
//! `seed_from_u64`; replication `r` of an experiment seeded with `s` uses
//! seed `s ^ r`.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{metropolis_fit, ChainSpec};
use crate::data::{self, Dataset, ParamVector};
use crate::error::{Error, Result};
use crate::hetero::{gls_fit, VarianceModel};
use crate::inference::{
    build_report, compare_areas, likelihood_region, wald_region, AreaComparison, GridSpec, RegionKind,
    RegionMetadata,
};
use crate::models::{MeanFunction, Model};
use crate::solvers::{gauss_newton, levenberg_marquardt, FitResult, SolverOptions};

/// Coverage runs fail when more than this fraction of fits fail.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GeneratorKind {
    /// `x = |N(0, 20^2)|`, additive Gamma(shape 10, scale 0.25) noise.
    MmGamma,
    /// `x ~ U(1, 100)`, additive N(0, 1) noise.
    MmNormal,
    /// `log x ~ U(log x_lo, log x_hi)`, noise `N(0, (cv f)^2)`, so `Var(y) ∝ f^2`.
    MmProportional { cv: f64, x_lo: f64, x_hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub n: usize,
    pub theta_star: ParamVector,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn mm_gamma(n: usize, seed: u64) -> Self {
        Self {
            kind: GeneratorKind::MmGamma,
            n,
            theta_star: ParamVector::new(vec![100.0, 0.05]).expect("finite"),
            seed,
        }
    }

    pub fn mm_normal(n: usize, seed: u64) -> Self {
        Self {
            kind: GeneratorKind::MmNormal,
            n,
            theta_star: ParamVector::new(vec![6.0, 5.0]).expect("finite"),
            seed,
        }
    }
}

pub fn generate(spec: &GeneratorSpec) -> Result<Dataset> {
    if spec.n == 0 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    let model = Model::MichaelisMenten;
    if spec.theta_star.len() != 2 {
        return Err(Error::DimensionMismatch("generators use the two-parameter Michaelis-Menten mean".into()));
    }
    let theta = spec.theta_star.as_slice();
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut xs = Vec::with_capacity(spec.n);
    let mut ys = Vec::with_capacity(spec.n);
    let bad = |e: String| Error::InvalidInput(e);
    match spec.kind {
        GeneratorKind::MmGamma => {
            let xd = Normal::new(0.0, 20.0).map_err(|e| bad(e.to_string()))?;
            let ed = Gamma::new(10.0, 0.25).map_err(|e| bad(e.to_string()))?;
            for i in 0..spec.n {
                let x: f64 = xd.sample(&mut rng);
                let x = x.abs();
                let e: f64 = ed.sample(&mut rng);
                xs.push(x);
                ys.push(model.evaluate_checked(theta, &[x], i)? + e);
            }
        }
        GeneratorKind::MmNormal => {
            let xd = Uniform::new(1.0, 100.0).map_err(|e| bad(e.to_string()))?;
            let ed = Normal::new(0.0, 1.0).map_err(|e| bad(e.to_string()))?;
            for i in 0..spec.n {
                let x: f64 = xd.sample(&mut rng);
                let e: f64 = ed.sample(&mut rng);
                xs.push(x);
                ys.push(model.evaluate_checked(theta, &[x], i)? + e);
            }
        }
        GeneratorKind::MmProportional { cv, x_lo, x_hi } => {
            if !(cv > 0.0 && x_lo > 0.0) {
                return Err(bad(format!("cv and x_lo must be positive, got {cv} and {x_lo}")));
            }
            let xd = Uniform::new(x_lo.ln(), x_hi.ln()).map_err(|e| bad(e.to_string()))?;
            let ed = Normal::new(0.0, 1.0).map_err(|e| bad(e.to_string()))?;
            for i in 0..spec.n {
                let x = xd.sample(&mut rng).exp();
                let e: f64 = ed.sample(&mut rng);
                let f = model.evaluate_checked(theta, &[x], i)?;
                xs.push(x);
                ys.push(f * (1.0 + cv * e));
            }
        }
    }
    Dataset::from_xy(&xs, &ys)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub kind: String,
    pub n: usize,
    /// `1 - alpha`.
    pub nominal: f64,
    pub empirical: f64,
    /// Replications that produced a usable fit.
    pub replications: usize,
    pub failed: usize,
    pub mc_stderr: f64,
}

impl CoverageResult {
    fn from_outcomes(kind: String, n: usize, alpha: f64, outcomes: &[Option<bool>]) -> Result<Self> {
        let reps = outcomes.len();
        let failed = outcomes.iter().filter(|o| o.is_none()).count();
        if failed as f64 > MAX_FAILURE_FRACTION * reps as f64 {
            return Err(Error::TooManyFailures { failed, reps });
        }
        let used = reps - failed;
        let hits = outcomes.iter().filter(|o| **o == Some(true)).count();
        let empirical = hits as f64 / used as f64;
        Ok(Self {
            kind,
            n,
            nominal: 1.0 - alpha,
            empirical,
            replications: used,
            failed,
            mc_stderr: (empirical * (1.0 - empirical) / used as f64).sqrt(),
        })
    }
}

fn check_reps(reps: usize, alpha: f64) -> Result<()> {
    if reps < 100 {
        return Err(Error::InvalidInput(format!("coverage runs need at least 100 replications, got {reps}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Coverage of `theta*` by the joint Wald or likelihood region on
/// `mm_normal` data, fitting Gauss-Newton from `theta*`.
pub fn coverage_experiment(kind: RegionKind, n: usize, reps: usize, alpha: f64, seed: u64) -> Result<CoverageResult> {
    check_reps(reps, alpha)?;
    let outcomes: Vec<Option<bool>> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let spec = GeneratorSpec::mm_normal(n, seed ^ r);
            let d = generate(&spec).ok()?;
            let model = Model::MichaelisMenten;
            let fit = gauss_newton(&model, &d, &spec.theta_star, &SolverOptions::default()).ok()?;
            let report = build_report(&fit, alpha).ok()?;
            let star = spec.theta_star.as_slice();
            match kind {
                RegionKind::Wald => Some(wald_region(&fit, &report, alpha).ok()?.contains(star)),
                RegionKind::Likelihood => Some(likelihood_region(&fit, &model, &d, alpha, None).ok()?.contains(star)),
            }
        })
        .collect();
    CoverageResult::from_outcomes(kind.to_string(), n, alpha, &outcomes)
}

/// Setup for the heteroscedastic interval-coverage comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeteroDesign {
    pub n: usize,
    pub cv: f64,
    pub x_lo: f64,
    pub x_hi: f64,
    pub gamma: f64,
}

impl Default for HeteroDesign {
    fn default() -> Self {
        Self {
            n: 200,
            cv: 0.2,
            x_lo: 0.05,
            x_hi: 100.0,
            gamma: 2.0,
        }
    }
}

/// Coverage of `theta1*` by the marginal Wald interval, for the power-of-mean
/// weighted fit (`weighted = true`) or the unweighted fit.
pub fn interval_coverage_hetero(
    design: &HeteroDesign,
    weighted: bool,
    reps: usize,
    alpha: f64,
    seed: u64,
) -> Result<CoverageResult> {
    check_reps(reps, alpha)?;
    let vm = if weighted {
        VarianceModel::PowerOfMean { gamma: design.gamma }
    } else {
        VarianceModel::Constant
    };
    let outcomes: Vec<Option<bool>> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let spec = GeneratorSpec {
                kind: GeneratorKind::MmProportional {
                    cv: design.cv,
                    x_lo: design.x_lo,
                    x_hi: design.x_hi,
                },
                ..GeneratorSpec::mm_normal(design.n, seed ^ r)
            };
            let d = generate(&spec).ok()?;
            let fit = gls_fit(&Model::MichaelisMenten, &d, &vm, &spec.theta_star, &SolverOptions::default()).ok()?;
            let report = build_report(&fit, alpha).ok()?;
            let (lo, hi) = report.wald_intervals[0];
            let t = spec.theta_star[0];
            Some(lo <= t && t <= hi)
        })
        .collect();
    let kind = if weighted { "gls_wald_theta1" } else { "ols_wald_theta1" };
    CoverageResult::from_outcomes(kind.into(), design.n, alpha, &outcomes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    /// `nls` or `bayes`.
    pub method: String,
    pub init: Vec<f64>,
    /// Solver that produced the estimate (`gauss_newton`, `levenberg_marquardt`, `metropolis`).
    pub solver: Option<String>,
    pub status: String,
    pub estimate: Option<Vec<f64>>,
    /// 95% Wald intervals (NLS) or equal-tailed credible intervals (Bayes).
    pub intervals: Option<Vec<(f64, f64)>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Report {
    pub seed: u64,
    pub n: usize,
    pub theta_star: Vec<f64>,
    pub rows: Vec<Table1Row>,
}

impl Table1Report {
    pub fn row(&self, method: &str, init: &[f64]) -> Option<&Table1Row> {
        self.rows.iter().find(|r| r.method == method && r.init == init)
    }
}

pub const TABLE1_INITS: [[f64; 2]; 2] = [[10.0, 3.0], [50.0, 0.1]];

/// Least-squares and posterior fits from two starting points on `mm_gamma`
/// data with `n = 100`. The sampler uses `chain_iterations` iterations
/// with a fifth of them as burn-in.
pub fn table1_experiment(seed: u64, chain_iterations: usize) -> Result<Table1Report> {
    let spec = GeneratorSpec::mm_gamma(100, seed);
    let d = generate(&spec)?;
    let model = Model::MichaelisMenten;
    let mut rows = Vec::new();
    for init in TABLE1_INITS {
        rows.push(nls_row(&model, &d, &init));
    }
    for init in TABLE1_INITS {
        let mut cs = ChainSpec::new(ParamVector::new(init.to_vec())?, seed);
        cs.iterations = chain_iterations;
        cs.burn_in = chain_iterations / 5;
        let row = match metropolis_fit(&model, &d, &cs) {
            Ok(out) => Table1Row {
                method: "bayes".into(),
                init: init.to_vec(),
                solver: Some("metropolis".into()),
                status: "ok".into(),
                estimate: Some(out.summary.mean.clone()),
                intervals: Some(out.summary.credible_intervals.clone()),
                error: None,
            },
            Err(e) => failed_row("bayes", &init, e),
        };
        rows.push(row);
    }
    Ok(Table1Report {
        seed,
        n: d.n(),
        theta_star: spec.theta_star.as_slice().to_vec(),
        rows,
    })
}

fn failed_row(method: &str, init: &[f64], e: Error) -> Table1Row {
    Table1Row {
        method: method.into(),
        init: init.to_vec(),
        solver: None,
        status: "error".into(),
        estimate: None,
        intervals: None,
        error: Some(e.to_string()),
    }
}

/// Gauss-Newton, falling back to Levenberg-Marquardt when it does not converge.
fn nls_row(model: &Model, d: &Dataset, init: &[f64]) -> Table1Row {
    let opts = SolverOptions::default();
    let start = match ParamVector::new(init.to_vec()) {
        Ok(p) => p,
        Err(e) => return failed_row("nls", init, e),
    };
    let gn = gauss_newton(model, d, &start, &opts);
    let (fit, solver): (Result<FitResult>, &str) = match gn {
        Ok(f) if f.is_converged() => (Ok(f), "gauss_newton"),
        _ => (levenberg_marquardt(model, d, &start, &opts), "levenberg_marquardt"),
    };
    match fit {
        Ok(f) => {
            let intervals = build_report(&f, 0.05).ok().map(|r| r.wald_intervals);
            Table1Row {
                method: "nls".into(),
                init: init.to_vec(),
                solver: Some(solver.into()),
                status: f.status.to_string(),
                estimate: Some(f.theta_hat.as_slice().to_vec()),
                intervals,
                error: None,
            }
        }
        Err(e) => failed_row("nls", init, e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Figure1Report {
    pub n: usize,
    pub seed: u64,
    pub theta_hat: Vec<f64>,
    pub alpha: f64,
    pub rectangle: GridSpec,
    pub wald: RegionMetadata,
    pub likelihood: RegionMetadata,
    pub wald_boundary: Vec<[f64; 2]>,
    pub likelihood_boundary: Vec<[f64; 2]>,
    pub areas: AreaComparison,
    /// Symmetric-difference area over the Wald area.
    pub relative_difference: f64,
}

/// Grid nodes per axis for figure-1 contours and area counting.
pub const FIGURE1_GRID: usize = 301;

/// Wald and likelihood regions at level `1 - alpha` for one `mm_normal`
/// dataset. The rectangle starts at `theta_hat +- 4` standard errors and is
/// widened until neither region reaches its edge.
pub fn figure1_experiment(n: usize, seed: u64, alpha: f64) -> Result<Figure1Report> {
    let spec = GeneratorSpec::mm_normal(n, seed);
    let d = generate(&spec)?;
    let model = Model::MichaelisMenten;
    let fit = gauss_newton(&model, &d, &spec.theta_star, &SolverOptions::default())?;
    fit.ensure_converged()?;
    let report = build_report(&fit, alpha)?;
    let wald = wald_region(&fit, &report, alpha)?;
    let centre = [fit.theta_hat[0], fit.theta_hat[1]];
    let mut half = [4.0 * report.standard_errors[0], 4.0 * report.standard_errors[1]];
    for _ in 0..12 {
        let grid = GridSpec::centered(centre, half, FIGURE1_GRID, FIGURE1_GRID)?;
        let lik = likelihood_region(&fit, &model, &d, alpha, Some(&grid))?;
        let wald_inside = wald
            .boundary_grid
            .iter()
            .all(|p| (0..2).all(|k| p[k] > grid.lo[k] && p[k] < grid.hi[k]));
        if lik.touches_border || !wald_inside {
            half = [half[0] * 1.5, half[1] * 1.5];
            continue;
        }
        let areas = compare_areas(&lik, &wald, &grid);
        return Ok(Figure1Report {
            n,
            seed,
            theta_hat: centre.to_vec(),
            alpha,
            rectangle: grid,
            wald: wald.metadata(),
            likelihood: lik.metadata(),
            wald_boundary: wald.boundary_grid.clone(),
            likelihood_boundary: lik.boundary_grid.clone(),
            relative_difference: areas.relative_to_b(),
            areas,
        });
    }
    Err(Error::GridTooCoarse)
}

/// Mean of `y - f(x, theta*)`, the realized noise mean.
pub fn noise_mean<M: MeanFunction + ?Sized>(model: &M, d: &Dataset, theta: &ParamVector) -> Result<f64> {
    let r: DVector<f64> = data::residuals(model, theta.as_slice(), d)?;
    Ok(r.mean())
}
