//! Root-mean-square intrinsic and parameter-effects curvatures of the
//! expectation surface, and the Wald statistic.
//!
//! The second-derivative array is rotated into the orthonormal coordinates
//! given by the thin QR factor of `J`, then split into its tangent and normal
//! components. Curvature in a unit direction `d` is the length of the
//! quadratic combination `sum_jk d_j d_k a_jk` of each component.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, ParamVector};
use crate::error::{Error, Result};
use crate::inference::InferenceReport;
use crate::models::MeanFunction;
use crate::solvers::FitResult;
use crate::special::{f_quantile, normal_quantile};

pub const DEFAULT_DIRECTIONS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub rms_intrinsic: f64,
    pub rms_parameter_effects: f64,
    /// `s sqrt(p F(alpha; p, n-p))`; both RMS values are scaled by it.
    pub scaling_radius: f64,
    pub alpha: f64,
    pub directions_used: usize,
}

/// RMS curvatures of a converged fit.
pub fn curvature_for_fit<M: MeanFunction + ?Sized>(
    fit: &FitResult,
    model: &M,
    data: &Dataset,
    alpha: f64,
) -> Result<CurvatureReport> {
    fit.ensure_converged()?;
    rms_curvatures(model, data, &fit.theta_hat, alpha)
}

pub fn rms_curvatures<M: MeanFunction + ?Sized>(
    model: &M,
    data: &Dataset,
    theta_hat: &ParamVector,
    alpha: f64,
) -> Result<CurvatureReport> {
    rms_curvatures_with(model, data, theta_hat, alpha, DEFAULT_DIRECTIONS)
}

pub fn rms_curvatures_with<M: MeanFunction + ?Sized>(
    model: &M,
    data: &Dataset,
    theta_hat: &ParamVector,
    alpha: f64,
    n_directions: usize,
) -> Result<CurvatureReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if n_directions == 0 {
        return Err(Error::InvalidInput("need at least one direction".into()));
    }
    let (n, p) = (data.n(), model.n_params());
    if n <= p {
        return Err(Error::InvalidInput(format!("need n > p, got n={n}, p={p}")));
    }
    let theta = theta_hat.as_slice();
    let s_value = data::residual_sum_squares(model, theta, data)?;
    let jac = data::jacobian(model, theta, data)?;
    let second = data::second_derivatives(model, theta, data)?;

    let qr = jac.qr();
    let q = qr.q();
    let r = qr.r();
    let rmax = r.diagonal().amax();
    if (0..p).any(|j| !(r[(j, j)].abs() > 1e-12 * rmax)) {
        return Err(Error::SingularJacobian);
    }
    let rinv = r.try_inverse().ok_or(Error::SingularJacobian)?;

    // a_jk over observations, for j <= k.
    let rotated: Vec<DMatrix<f64>> = second.g.iter().map(|g| rinv.transpose() * g * &rinv).collect();
    let mut tangent = Vec::new();
    let mut normal = Vec::new();
    let mut pairs = Vec::new();
    for j in 0..p {
        for k in j..p {
            let a = DVector::from_iterator(n, rotated.iter().map(|m| m[(j, k)]));
            let t = &q * (q.transpose() * &a);
            normal.push(&a - &t);
            tangent.push(t);
            pairs.push((j, k));
        }
    }

    let directions = unit_directions(p, n_directions);
    let mut sum_t = 0.0;
    let mut sum_n = 0.0;
    let mut vt = DVector::zeros(n);
    let mut vn = DVector::zeros(n);
    for d in &directions {
        vt.fill(0.0);
        vn.fill(0.0);
        for (idx, &(j, k)) in pairs.iter().enumerate() {
            let c = if j == k { d[j] * d[j] } else { 2.0 * d[j] * d[k] };
            vt.axpy(c, &tangent[idx], 1.0);
            vn.axpy(c, &normal[idx], 1.0);
        }
        sum_t += vt.norm_squared();
        sum_n += vn.norm_squared();
    }
    let m = directions.len() as f64;
    let s = (s_value / (n - p) as f64).sqrt();
    let rho = s * (p as f64 * f_quantile(alpha, p as u32, (n - p) as u32)).sqrt();
    Ok(CurvatureReport {
        rms_intrinsic: (sum_n / m).sqrt() * rho,
        rms_parameter_effects: (sum_t / m).sqrt() * rho,
        scaling_radius: rho,
        alpha,
        directions_used: directions.len(),
    })
}

/// Deterministic unit directions on the `(p-1)`-sphere: equally spaced
/// angles for `p = 2`, normalized inverse-normal Halton points otherwise.
pub fn unit_directions(p: usize, count: usize) -> Vec<Vec<f64>> {
    match p {
        1 => vec![vec![1.0]],
        2 => (0..count)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / count as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        _ => {
            let bases = first_primes(p);
            (1..=count)
                .map(|i| {
                    let v: Vec<f64> = bases.iter().map(|&b| normal_quantile(halton(i, b))).collect();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    v.into_iter().map(|x| x / norm).collect()
                })
                .collect()
        }
    }
}

fn halton(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

fn first_primes(count: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    let mut c = 2;
    while out.len() < count {
        if out.iter().all(|p| c % p != 0) {
            out.push(c);
        }
        c += 1;
    }
    out
}

/// `(theta_hat - theta0)' V^{-1} (theta_hat - theta0)` with `V` the report's covariance.
pub fn wald_statistic(fit: &FitResult, report: &InferenceReport, theta0: &ParamVector) -> Result<f64> {
    if theta0.len() != fit.n_params() {
        return Err(Error::DimensionMismatch(format!(
            "theta0 has length {}, fit has {} parameters",
            theta0.len(),
            fit.n_params()
        )));
    }
    if !(report.s2 > 0.0) {
        return Err(Error::SingularInformation);
    }
    let info = fit.jacobian_at_hat.transpose() * &fit.jacobian_at_hat;
    let d = fit.theta_hat.to_dvector() - theta0.to_dvector();
    Ok((info * &d).dot(&d) / report.s2)
}
