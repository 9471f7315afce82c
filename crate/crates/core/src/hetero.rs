//! Heteroscedastic nonlinear regression by iteratively reweighted least
//! squares, and the Nadaraya-Watson kernel smoother.

use std::str::FromStr;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, ParamVector};
use crate::error::{Error, Result};
use crate::models::MeanFunction;
use crate::solvers::{self, FitResult, FitStatus, Method, SolverOptions};

/// Cap on weight-refresh cycles.
pub const MAX_OUTER_CYCLES: usize = 50;
/// Outer loop stops when every coordinate moves less than this, relative to `max(|theta_j|, 1)`.
pub const OUTER_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum VarianceModel {
    Constant,
    /// `Var(y_i) ∝ |mu_i|^gamma`, so `w_i = |mu_i|^(-gamma)`.
    PowerOfMean { gamma: f64 },
    UserWeights { weights: Vec<f64> },
}

/// Weighted fit under a variance model.
///
/// The power-of-mean kind alternates a weighted Gauss-Newton fit with a
/// weight refresh at the current fitted means, starting from unit weights.
/// The result carries the weighted Jacobian, the weighted objective and the
/// weights of the final inner fit.
pub fn gls_fit<M: MeanFunction + ?Sized>(
    model: &M,
    data: &Dataset,
    vm: &VarianceModel,
    init: &ParamVector,
    opts: &SolverOptions,
) -> Result<FitResult> {
    match vm {
        VarianceModel::Constant => solvers::gauss_newton(model, data, init, opts),
        VarianceModel::UserWeights { weights } => {
            let w = DVector::from_column_slice(weights);
            solvers::weighted_fit(Method::GaussNewton, model, data, init, opts, Some(&w))
        }
        VarianceModel::PowerOfMean { gamma } => {
            if !gamma.is_finite() {
                return Err(Error::InvalidInput(format!("gamma must be finite, got {gamma}")));
            }
            let mut theta = init.clone();
            let mut w = DVector::from_element(data.n(), 1.0);
            let mut total_iterations = 0;
            let mut cycle = 0;
            loop {
                cycle += 1;
                let mut fit = solvers::weighted_fit(Method::GaussNewton, model, data, &theta, opts, Some(&w))?;
                total_iterations += fit.iterations;
                fit.iterations = total_iterations;
                if !fit.is_converged() {
                    return Ok(fit);
                }
                let moved = fit
                    .theta_hat
                    .as_slice()
                    .iter()
                    .zip(theta.as_slice())
                    .any(|(a, b)| (a - b).abs() > OUTER_TOL * b.abs().max(1.0));
                if !moved {
                    return Ok(fit);
                }
                if cycle == MAX_OUTER_CYCLES {
                    fit.status = FitStatus::MaxIter;
                    fit.converged_on = None;
                    return Ok(fit);
                }
                theta = fit.theta_hat.clone();
                w = power_weights(model, data, &theta, *gamma)?;
            }
        }
    }
}

/// `w_i = |mu_i|^(-gamma)` at `theta`.
pub fn power_weights<M: MeanFunction + ?Sized>(
    model: &M,
    data: &Dataset,
    theta: &ParamVector,
    gamma: f64,
) -> Result<DVector<f64>> {
    let mu = data::fitted_values(model, theta.as_slice(), data)?;
    let w = mu.map(|m| m.abs().powf(-gamma));
    if let Some(i) = w.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::DegenerateWeights { row: i });
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Gaussian,
    Epanechnikov,
}

impl FromStr for Kernel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Kernel::Gaussian),
            "epanechnikov" => Ok(Kernel::Epanechnikov),
            _ => Err(Error::InvalidInput(format!("unknown kernel `{s}`"))),
        }
    }
}

impl std::fmt::Display for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Kernel::Gaussian => "gaussian",
            Kernel::Epanechnikov => "epanechnikov",
        })
    }
}

impl Kernel {
    /// Kernel density at `u`.
    pub fn density(self, u: f64) -> f64 {
        match self {
            Kernel::Gaussian => (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            Kernel::Epanechnikov => {
                if u.abs() < 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kernel: Kernel,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(kernel: Kernel, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidInput(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { kernel, bandwidth })
    }
}

/// Normalized weights `w_i(x) = K(|x - x_i|/h) / sum_j K(|x - x_j|/h)`.
pub fn kernel_weights(query: &[f64], data: &Dataset, spec: &KernelSpec) -> Result<Vec<f64>> {
    if query.len() != data.k() {
        return Err(Error::DimensionMismatch(format!(
            "query has {} coordinates, data has {}",
            query.len(),
            data.k()
        )));
    }
    if !(spec.bandwidth > 0.0 && spec.bandwidth.is_finite()) {
        return Err(Error::InvalidInput(format!("bandwidth must be positive, got {}", spec.bandwidth)));
    }
    let u: Vec<f64> = data
        .rows()
        .map(|row| {
            let d2: f64 = row.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            d2.sqrt() / spec.bandwidth
        })
        .collect();
    let raw: Vec<f64> = match spec.kernel {
        // Shift log-weights by their maximum so distant queries do not underflow.
        Kernel::Gaussian => {
            let umin = u.iter().copied().fold(f64::INFINITY, f64::min);
            u.iter().map(|v| (-0.5 * (v * v - umin * umin)).exp()).collect()
        }
        Kernel::Epanechnikov => u.iter().map(|v| Kernel::Epanechnikov.density(*v)).collect(),
    };
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::EmptyNeighborhood);
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Kernel-weighted average of the responses at `query`.
pub fn nadaraya_watson(query: &[f64], data: &Dataset, spec: &KernelSpec) -> Result<f64> {
    let w = kernel_weights(query, data, spec)?;
    Ok(w.iter().zip(data.y()).map(|(wi, yi)| wi * yi).sum())
}

/// Smooths a batch of one-dimensional queries; output order follows `queries`.
pub fn smooth(queries: &[f64], data: &Dataset, spec: &KernelSpec) -> Result<Vec<f64>> {
    queries
        .par_iter()
        .map(|q| nadaraya_watson(&[*q], data, spec))
        .collect()
}
