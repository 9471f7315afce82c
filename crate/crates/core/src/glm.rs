//! Generalized linear models fitted by iteratively reweighted least squares.
//!
//! With `h = (b')^{-1} o g^{-1}`, the score is
//! `sum_i w_i (y_i - mu_i) h'(eta_i) x_i / phi`, and `h' = 1 / (V(mu) g'(mu))`.
//! The working weights are `W_i = w_i / (phi V(mu_i) g'(mu_i)^2)` and the
//! working response is `z = eta + g'(mu)(y - mu)`.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::{FitStatus, SolverOptions, MAX_CONDITION};

/// `|eta|` beyond this under the logit link signals (quasi-)separation.
pub const SEPARATION_ETA: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    Binomial,
    Poisson,
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    Log,
    Logit,
    Inverse,
}

impl Family {
    pub fn canonical_link(self) -> Link {
        match self {
            Family::Gaussian => Link::Identity,
            Family::Binomial => Link::Logit,
            Family::Poisson => Link::Log,
            Family::Gamma => Link::Inverse,
        }
    }

    /// `V(mu) = b''(theta)`.
    pub fn variance(self, mu: f64) -> f64 {
        match self {
            Family::Gaussian => 1.0,
            Family::Binomial => mu * (1.0 - mu),
            Family::Poisson => mu,
            Family::Gamma => mu * mu,
        }
    }

    /// Dispersion is fixed at 1 for binomial and Poisson.
    pub fn fixed_dispersion(self) -> bool {
        matches!(self, Family::Binomial | Family::Poisson)
    }

    pub fn valid_mean(self, mu: f64) -> bool {
        match self {
            Family::Gaussian => mu.is_finite(),
            Family::Binomial => mu > 0.0 && mu < 1.0,
            Family::Poisson | Family::Gamma => mu > 0.0 && mu.is_finite(),
        }
    }

    pub fn check_response(self, y: f64) -> Option<&'static str> {
        match self {
            Family::Gaussian => None,
            Family::Binomial if !(0.0..=1.0).contains(&y) => Some("binomial response must lie in [0, 1]"),
            Family::Poisson if y < 0.0 => Some("poisson response must be nonnegative"),
            Family::Gamma if y <= 0.0 => Some("gamma response must be positive"),
            _ => None,
        }
    }

    /// Canonical parameter `theta(mu)` and cumulant `b(theta)`.
    fn theta_b(self, mu: f64) -> (f64, f64) {
        match self {
            Family::Gaussian => (mu, 0.5 * mu * mu),
            Family::Binomial => ((mu / (1.0 - mu)).ln(), -(-mu).ln_1p()),
            Family::Poisson => (mu.ln(), mu),
            Family::Gamma => (-1.0 / mu, mu.ln()),
        }
    }

    /// Unit deviance `d(y, mu)`.
    pub fn unit_deviance(self, y: f64, mu: f64) -> f64 {
        let ylog = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
        match self {
            Family::Gaussian => (y - mu) * (y - mu),
            Family::Binomial => 2.0 * (ylog(y, mu) + ylog(1.0 - y, 1.0 - mu)),
            Family::Poisson => 2.0 * (ylog(y, mu) - (y - mu)),
            Family::Gamma => 2.0 * (-(y / mu).ln() + (y - mu) / mu),
        }
    }
}

impl Link {
    pub fn link(self, mu: f64) -> f64 {
        match self {
            Link::Identity => mu,
            Link::Log => mu.ln(),
            Link::Logit => (mu / (1.0 - mu)).ln(),
            Link::Inverse => 1.0 / mu,
        }
    }

    /// `g^{-1}(eta)`. The logit inverse is kept strictly inside (0, 1).
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Identity => eta,
            Link::Log => eta.exp(),
            Link::Logit => {
                let mu = 1.0 / (1.0 + (-eta).exp());
                mu.clamp(f64::EPSILON, 1.0 - f64::EPSILON)
            }
            Link::Inverse => 1.0 / eta,
        }
    }

    /// `g'(mu)`.
    pub fn derivative(self, mu: f64) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::Log => 1.0 / mu,
            Link::Logit => 1.0 / (mu * (1.0 - mu)),
            Link::Inverse => -1.0 / (mu * mu),
        }
    }
}

macro_rules! snake_case_enum {
    ($t:ty, $($v:ident => $s:literal),+) => {
        impl std::fmt::Display for $t {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(match self { $(<$t>::$v => $s),+ })
            }
        }
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok(<$t>::$v),)+
                    _ => Err(Error::InvalidInput(format!("unknown {} `{s}`", stringify!($t).to_lowercase()))),
                }
            }
        }
    };
}

snake_case_enum!(Family, Gaussian => "gaussian", Binomial => "binomial", Poisson => "poisson", Gamma => "gamma");
snake_case_enum!(Link, Identity => "identity", Log => "log", Logit => "logit", Inverse => "inverse");

/// Design matrix, response, and optional prior weights (binomial trial counts).
#[derive(Debug, Clone, PartialEq)]
pub struct GlmData {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub prior_weights: Option<DVector<f64>>,
}

impl GlmData {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows, response has {}",
                x.nrows(),
                y.len()
            )));
        }
        if x.ncols() == 0 || x.nrows() <= x.ncols() {
            return Err(Error::InvalidInput(format!(
                "need more rows ({}) than coefficients ({})",
                x.nrows(),
                x.ncols()
            )));
        }
        if let Some(i) = (0..y.len()).find(|&i| !y[i].is_finite() || x.row(i).iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteEvaluation { row: i });
        }
        Ok(Self {
            x,
            y,
            prior_weights: None,
        })
    }

    /// Design with a leading column of ones.
    pub fn with_intercept(x: &DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let design = x.clone().insert_column(0, 1.0);
        Self::new(design, y)
    }

    pub fn with_prior_weights(mut self, w: DVector<f64>) -> Result<Self> {
        if w.len() != self.y.len() {
            return Err(Error::DimensionMismatch(format!("{} weights for {} rows", w.len(), self.y.len())));
        }
        if let Some(i) = w.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::DegenerateWeights { row: i });
        }
        self.prior_weights = Some(w);
        Ok(self)
    }

    fn prior(&self, i: usize) -> f64 {
        self.prior_weights.as_ref().map_or(1.0, |w| w[i])
    }

    fn validate(&self, family: Family) -> Result<()> {
        for (i, y) in self.y.iter().enumerate() {
            if let Some(reason) = family.check_response(*y) {
                return Err(Error::DomainViolation {
                    row: i,
                    reason: reason.into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub family: Family,
    pub link: Link,
    pub beta_hat: Vec<f64>,
    pub eta: Vec<f64>,
    pub mu: Vec<f64>,
    /// Final working weights `w_i / (phi V g'^2)` with the estimated dispersion.
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub status: FitStatus,
    pub deviance: f64,
    /// Deviance after each accepted iteration, starting with the initial value.
    pub deviance_trace: Vec<f64>,
    /// 1 for binomial and Poisson, Pearson `X^2 / (n - p)` otherwise.
    pub dispersion: f64,
    pub standard_errors: Vec<f64>,
    /// Some `|eta_i| > 30` under the logit link.
    pub separation_warning: bool,
}

struct Working {
    eta: DVector<f64>,
    mu: DVector<f64>,
    deviance: f64,
}

fn mean_state(family: Family, link: Link, data: &GlmData, eta: DVector<f64>) -> Option<Working> {
    let mu = eta.map(|e| link.inverse(e));
    if mu.iter().any(|m| !family.valid_mean(*m)) {
        return None;
    }
    let deviance = (0..data.y.len())
        .map(|i| data.prior(i) * family.unit_deviance(data.y[i], mu[i]))
        .sum::<f64>();
    deviance.is_finite().then_some(Working { eta, mu, deviance })
}

/// Starting means when `beta = 0` is outside the model's mean space.
fn start_mean(family: Family, data: &GlmData, i: usize) -> f64 {
    let y = data.y[i];
    match family {
        Family::Gaussian | Family::Gamma => y,
        Family::Binomial => {
            let m = data.prior(i);
            (m * y + 0.5) / (m + 1.0)
        }
        Family::Poisson => y + 0.1,
    }
}

fn working_weights(family: Family, link: Link, data: &GlmData, mu: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(mu.len(), |i, _| {
        let g = link.derivative(mu[i]);
        data.prior(i) / (family.variance(mu[i]) * g * g)
    })
}

/// Weighted least-squares solve of `X'WX beta = X'W z`.
fn wls(x: &DMatrix<f64>, w: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
    let mut xw = x.clone();
    for (i, wi) in w.iter().enumerate() {
        xw.row_mut(i).scale_mut(*wi);
    }
    let xtwx = x.transpose() * &xw;
    let svd = xtwx.clone().svd(false, false);
    let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularWeightedSystem { condition });
    }
    let rhs = xw.transpose() * z;
    xtwx.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or(Error::SingularWeightedSystem { condition })
}

fn irls_update(family: Family, link: Link, data: &GlmData, st: &Working) -> Result<DVector<f64>> {
    let w = working_weights(family, link, data, &st.mu);
    let z = DVector::from_fn(st.mu.len(), |i, _| {
        st.eta[i] + link.derivative(st.mu[i]) * (data.y[i] - st.mu[i])
    });
    wls(&data.x, &w, &z)
}

fn check_shapes(data: &GlmData, beta: &DVector<f64>) -> Result<()> {
    if beta.len() != data.x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "beta has length {}, design has {} columns",
            beta.len(),
            data.x.ncols()
        )));
    }
    Ok(())
}

fn state_at(family: Family, link: Link, data: &GlmData, beta: &DVector<f64>) -> Result<Working> {
    check_shapes(data, beta)?;
    let eta = &data.x * beta;
    let mu = eta.map(|e| link.inverse(e));
    if let Some(i) = mu.iter().position(|m| !family.valid_mean(*m)) {
        return Err(Error::DomainViolation {
            row: i,
            reason: format!("mean {} outside the {family} mean space", mu[i]),
        });
    }
    mean_state(family, link, data, eta).ok_or(Error::NonFiniteEvaluation { row: 0 })
}

/// One unguarded IRLS update from `beta`.
pub fn irls_step(family: Family, link: Link, data: &GlmData, beta: &DVector<f64>) -> Result<DVector<f64>> {
    data.validate(family)?;
    let st = state_at(family, link, data, beta)?;
    irls_update(family, link, data, &st)
}

/// Score `dL/dbeta = sum_i w_i (y_i - mu_i) x_i / (phi V(mu_i) g'(mu_i))`.
pub fn glm_gradient(
    family: Family,
    link: Link,
    data: &GlmData,
    beta: &DVector<f64>,
    phi: f64,
) -> Result<DVector<f64>> {
    data.validate(family)?;
    let st = state_at(family, link, data, beta)?;
    Ok(score(family, link, data, &st.mu, phi))
}

fn score(family: Family, link: Link, data: &GlmData, mu: &DVector<f64>, phi: f64) -> DVector<f64> {
    let c = DVector::from_fn(mu.len(), |i, _| {
        data.prior(i) * (data.y[i] - mu[i]) / (phi * family.variance(mu[i]) * link.derivative(mu[i]))
    });
    data.x.transpose() * c
}

/// `sum_i w_i (y_i theta_i - b(theta_i)) / phi`, the log-likelihood without
/// the `c(y, phi)` terms that do not depend on `beta`.
pub fn glm_log_likelihood(
    family: Family,
    link: Link,
    data: &GlmData,
    beta: &DVector<f64>,
    phi: f64,
) -> Result<f64> {
    data.validate(family)?;
    let st = state_at(family, link, data, beta)?;
    Ok((0..st.mu.len())
        .map(|i| {
            let (theta, b) = family.theta_b(st.mu[i]);
            data.prior(i) * (data.y[i] * theta - b) / phi
        })
        .sum())
}

pub fn glm_deviance(family: Family, link: Link, data: &GlmData, beta: &DVector<f64>) -> Result<f64> {
    data.validate(family)?;
    Ok(state_at(family, link, data, beta)?.deviance)
}

fn deviance_converged(old: f64, new: f64, tol: f64) -> bool {
    (old - new).abs() / (new.abs() + 0.1) < tol
}

/// IRLS with step halving on the deviance.
///
/// Starts from `init`, else from `beta = 0` when that gives valid means, else
/// from the working response at data-based starting means.
pub fn irls_fit(
    family: Family,
    link: Link,
    data: &GlmData,
    init: Option<&DVector<f64>>,
    opts: &SolverOptions,
) -> Result<GlmFit> {
    opts.validate()?;
    data.validate(family)?;
    let p = data.x.ncols();
    let zero = DVector::zeros(p);
    let mut beta;
    let mut st;
    let mut trace = Vec::new();
    let mut iterations = 0;
    match init {
        Some(b) => {
            beta = b.clone();
            st = state_at(family, link, data, &beta)?;
        }
        None => match state_at(family, link, data, &zero) {
            Ok(s) => {
                beta = zero;
                st = s;
            }
            Err(_) => {
                let mu0 = DVector::from_fn(data.y.len(), |i, _| start_mean(family, data, i));
                let start = Working {
                    eta: mu0.map(|m| link.link(m)),
                    mu: mu0,
                    deviance: f64::INFINITY,
                };
                beta = irls_update(family, link, data, &start)?;
                st = state_at(family, link, data, &beta)?;
                iterations = 1;
            }
        },
    }
    trace.push(st.deviance);

    let mut status = FitStatus::MaxIter;
    while iterations < opts.max_iter {
        let g = score(family, link, data, &st.mu, 1.0);
        if g.amax() <= opts.tol_grad {
            status = FitStatus::Converged;
            break;
        }
        let target = irls_update(family, link, data, &st)?;
        let delta = &target - &beta;
        let mut lambda = 1.0;
        let mut accepted = None;
        let mut full_step_dev = None;
        while lambda >= opts.min_step_scale {
            let trial = &beta + &delta * lambda;
            if let Some(next) = mean_state(family, link, data, &data.x * &trial) {
                full_step_dev.get_or_insert(next.deviance);
                if next.deviance <= st.deviance {
                    accepted = Some((trial, next));
                    break;
                }
            }
            lambda *= 0.5;
        }
        let Some((b_new, s_new)) = accepted else {
            // No decrease at all: stationary up to round-off, or a genuine failure.
            status = match full_step_dev {
                Some(d) if deviance_converged(st.deviance, d, opts.tol_rel_s) => FitStatus::Converged,
                _ => FitStatus::LineSearchFailed,
            };
            break;
        };
        iterations += 1;
        let done = deviance_converged(st.deviance, s_new.deviance, opts.tol_rel_s);
        beta = b_new;
        st = s_new;
        trace.push(st.deviance);
        if done {
            status = FitStatus::Converged;
            break;
        }
    }

    let n = data.y.len();
    let dispersion = if family.fixed_dispersion() {
        1.0
    } else {
        let pearson: f64 = (0..n)
            .map(|i| data.prior(i) * (data.y[i] - st.mu[i]).powi(2) / family.variance(st.mu[i]))
            .sum();
        pearson / (n - p) as f64
    };
    let w1 = working_weights(family, link, data, &st.mu);
    let mut xw = data.x.clone();
    for (i, wi) in w1.iter().enumerate() {
        xw.row_mut(i).scale_mut(*wi);
    }
    let info = data.x.transpose() * xw;
    let standard_errors = match info.cholesky() {
        Some(c) if dispersion > 0.0 => {
            let inv = c.inverse();
            (0..p).map(|j| (dispersion * inv[(j, j)]).sqrt()).collect()
        }
        _ => vec![f64::NAN; p],
    };
    let separation_warning = link == Link::Logit && st.eta.iter().any(|e| e.abs() > SEPARATION_ETA);
    Ok(GlmFit {
        family,
        link,
        beta_hat: beta.iter().copied().collect(),
        eta: st.eta.iter().copied().collect(),
        mu: st.mu.iter().copied().collect(),
        weights: w1.iter().map(|w| w / dispersion).collect(),
        iterations,
        status,
        deviance: st.deviance,
        deviance_trace: trace,
        dispersion,
        standard_errors,
        separation_warning,
    })
}
