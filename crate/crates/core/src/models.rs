//! Catalog of parametric mean functions `f(x, theta)`.
//!
//! Every entry fixes one parameterization. Alternate parameterizations of the
//! same curve (e.g. the reciprocal form of Michaelis-Menten) are separate
//! entries, since inference depends on the parameterization.
//!
//! All catalog models use the first predictor column only.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used to keep evaluation points away from poles.
const POLE_TOL: f64 = 1e-10;

/// A mean function with analytic first derivatives and, optionally, analytic
/// second derivatives.
pub trait MeanFunction: Sync {
    fn id(&self) -> String;

    fn n_params(&self) -> usize;

    /// `Some(reason)` if `(theta, x)` lies outside the valid domain.
    fn domain_error(&self, theta: &[f64], x: &[f64]) -> Option<String>;

    /// Unchecked evaluation.
    fn value(&self, theta: &[f64], x: &[f64]) -> f64;

    /// Unchecked gradient with respect to `theta`, written into `out`.
    fn gradient(&self, theta: &[f64], x: &[f64], out: &mut [f64]);

    fn has_analytic_hessian(&self) -> bool {
        false
    }

    /// Unchecked second-derivative matrix; `None` when not available.
    fn second(&self, _theta: &[f64], _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    fn evaluate_checked(&self, theta: &[f64], x: &[f64], row: usize) -> Result<f64> {
        if let Some(reason) = self.domain_error(theta, x) {
            return Err(Error::DomainViolation { row, reason });
        }
        let v = self.value(theta, x);
        if !v.is_finite() {
            return Err(Error::NonFiniteEvaluation { row });
        }
        Ok(v)
    }

    fn gradient_checked(&self, theta: &[f64], x: &[f64], row: usize, out: &mut [f64]) -> Result<()> {
        if let Some(reason) = self.domain_error(theta, x) {
            return Err(Error::DomainViolation { row, reason });
        }
        self.gradient(theta, x, out);
        if out.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteEvaluation { row });
        }
        Ok(())
    }

    fn second_checked(&self, theta: &[f64], x: &[f64], row: usize) -> Result<DMatrix<f64>> {
        if let Some(reason) = self.domain_error(theta, x) {
            return Err(Error::DomainViolation { row, reason });
        }
        let g = self.second(theta, x).ok_or_else(|| Error::NotAvailable(self.id()))?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEvaluation { row });
        }
        Ok(g)
    }
}

/// Catalog identifiers. String ids are stable lowercase snake case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Model {
    /// `alpha x / (1 + x / beta)`
    BevertonHolt,
    /// `theta1 x / (theta2 + x)`; also accepted as `rectangular_hyperbola`.
    MichaelisMenten,
    /// `x / (theta1 x + theta2)`: Michaelis-Menten with `theta1 = 1/b1`, `theta2 = b2/b1`.
    MichaelisMentenReciprocal,
    /// `theta1 exp(theta2 x)`
    Exponential,
    /// `theta1 - (theta1 - theta2) exp(-theta3 x)`
    Asymptotic,
    /// `theta1 (1 - exp(-theta2 x))`
    NegativeExponential,
    /// `theta1 x^theta2`
    Power,
    /// `theta1 + theta2 log x`
    Logarithmic,
    /// `theta1 + (theta2 - theta1) / (1 + exp(theta3 (x - theta4)))`
    Logistic,
    /// `theta1 + (theta2 - theta1) exp(-exp(theta3 (x - theta4)))`
    Gompertz,
    /// `theta1 + (theta2 - theta1) / (1 + exp(theta3 (log x - log theta4)))`
    LogLogistic,
    /// `theta1 + (theta4 - theta1) (1 - exp(-exp(theta2 (log x - log theta3))))`
    Weibull1,
    /// `theta1 + (theta4 - theta1) exp(-exp(theta2 (log x - log theta3)))`
    Weibull2,
    /// `sum_j theta_{j+1} x^j`, `j = 0..=degree`
    Polynomial(usize),
    /// `theta1 + theta2 x`
    Linear,
}

impl Model {
    /// Every catalog entry, with polynomials of degree 2 and 3 as representatives.
    pub fn catalog() -> Vec<Model> {
        vec![
            Model::BevertonHolt,
            Model::MichaelisMenten,
            Model::MichaelisMentenReciprocal,
            Model::Exponential,
            Model::Asymptotic,
            Model::NegativeExponential,
            Model::Power,
            Model::Logarithmic,
            Model::Logistic,
            Model::Gompertz,
            Model::LogLogistic,
            Model::Weibull1,
            Model::Weibull2,
            Model::Polynomial(2),
            Model::Polynomial(3),
            Model::Linear,
        ]
    }

    /// True when the mean function is linear in `theta`.
    pub fn is_linear_in_params(&self) -> bool {
        matches!(self, Model::Linear | Model::Polynomial(_) | Model::Logarithmic)
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            Model::BevertonHolt => vec!["alpha".into(), "beta".into()],
            _ => (1..=self.n_params()).map(|j| format!("theta{j}")).collect(),
        }
    }

    /// A box of interior parameter values and predictor values on which the
    /// model is smooth and well inside its domain. Used for randomized checks.
    pub fn sampling_box(&self) -> SamplingBox {
        let (theta, x) = match self {
            Model::BevertonHolt => (vec![(0.5, 5.0), (1.0, 20.0)], (0.1, 50.0)),
            Model::MichaelisMenten => (vec![(1.0, 10.0), (0.5, 10.0)], (0.1, 50.0)),
            Model::MichaelisMentenReciprocal => (vec![(0.1, 1.0), (0.1, 2.0)], (0.1, 50.0)),
            Model::Exponential => (vec![(0.5, 3.0), (-0.5, 0.5)], (0.0, 4.0)),
            Model::Asymptotic => (vec![(5.0, 10.0), (0.0, 4.0), (0.1, 1.0)], (0.0, 10.0)),
            Model::NegativeExponential => (vec![(1.0, 10.0), (0.1, 1.0)], (0.0, 10.0)),
            Model::Power => (vec![(0.5, 3.0), (-1.0, 2.0)], (0.1, 10.0)),
            Model::Logarithmic => (vec![(-2.0, 2.0), (-2.0, 2.0)], (0.1, 10.0)),
            Model::Logistic | Model::Gompertz => (
                vec![(0.0, 2.0), (5.0, 10.0), (0.2, 2.0), (1.0, 5.0)],
                (0.0, 6.0),
            ),
            Model::LogLogistic => (
                vec![(0.0, 2.0), (5.0, 10.0), (0.5, 3.0), (1.0, 5.0)],
                (0.1, 10.0),
            ),
            Model::Weibull1 | Model::Weibull2 => (
                vec![(0.0, 2.0), (0.5, 3.0), (1.0, 5.0), (5.0, 10.0)],
                (0.1, 10.0),
            ),
            Model::Polynomial(d) => (vec![(-2.0, 2.0); d + 1], (-2.0, 2.0)),
            Model::Linear => (vec![(-5.0, 5.0), (-5.0, 5.0)], (-5.0, 5.0)),
        };
        SamplingBox { theta, x }
    }

    fn sigmoid(&self) -> Option<Sigmoid> {
        let s = match self {
            Model::Logistic => Sigmoid::new([0, 1, 2, 3], false, Shape::Logistic),
            Model::Gompertz => Sigmoid::new([0, 1, 2, 3], false, Shape::Gompertz),
            Model::LogLogistic => Sigmoid::new([0, 1, 2, 3], true, Shape::Logistic),
            Model::Weibull1 => Sigmoid::new([0, 3, 1, 2], true, Shape::WeibullRising),
            Model::Weibull2 => Sigmoid::new([0, 3, 1, 2], true, Shape::Gompertz),
            _ => return None,
        };
        Some(s)
    }
}

/// Parameter and predictor ranges for randomized checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingBox {
    pub theta: Vec<(f64, f64)>,
    pub x: (f64, f64),
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Model::BevertonHolt => f.write_str("beverton_holt"),
            Model::MichaelisMenten => f.write_str("michaelis_menten"),
            Model::MichaelisMentenReciprocal => f.write_str("michaelis_menten_reciprocal"),
            Model::Exponential => f.write_str("exponential"),
            Model::Asymptotic => f.write_str("asymptotic"),
            Model::NegativeExponential => f.write_str("negative_exponential"),
            Model::Power => f.write_str("power"),
            Model::Logarithmic => f.write_str("logarithmic"),
            Model::Logistic => f.write_str("logistic"),
            Model::Gompertz => f.write_str("gompertz"),
            Model::LogLogistic => f.write_str("log_logistic"),
            Model::Weibull1 => f.write_str("weibull1"),
            Model::Weibull2 => f.write_str("weibull2"),
            Model::Polynomial(d) => write!(f, "polynomial_{d}"),
            Model::Linear => f.write_str("linear"),
        }
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let m = match s {
            "beverton_holt" => Model::BevertonHolt,
            "michaelis_menten" | "rectangular_hyperbola" => Model::MichaelisMenten,
            "michaelis_menten_reciprocal" => Model::MichaelisMentenReciprocal,
            "exponential" => Model::Exponential,
            "asymptotic" => Model::Asymptotic,
            "negative_exponential" => Model::NegativeExponential,
            "power" => Model::Power,
            "logarithmic" => Model::Logarithmic,
            "logistic" => Model::Logistic,
            "gompertz" => Model::Gompertz,
            "log_logistic" => Model::LogLogistic,
            "weibull1" => Model::Weibull1,
            "weibull2" => Model::Weibull2,
            "linear" => Model::Linear,
            other => {
                let degree = other
                    .strip_prefix("polynomial_")
                    .and_then(|d| d.parse::<usize>().ok())
                    .ok_or_else(|| Error::InvalidInput(format!("unknown model id `{other}`")))?;
                Model::Polynomial(degree)
            }
        };
        Ok(m)
    }
}

fn near_zero(v: f64, scale: f64) -> bool {
    v.abs() <= POLE_TOL * scale.abs().max(1.0)
}

impl MeanFunction for Model {
    fn id(&self) -> String {
        self.to_string()
    }

    fn n_params(&self) -> usize {
        match self {
            Model::Asymptotic => 3,
            Model::Logistic | Model::Gompertz | Model::LogLogistic | Model::Weibull1 | Model::Weibull2 => 4,
            Model::Polynomial(d) => d + 1,
            _ => 2,
        }
    }

    fn domain_error(&self, theta: &[f64], x: &[f64]) -> Option<String> {
        let x0 = x[0];
        if theta.iter().any(|t| !t.is_finite()) || !x0.is_finite() {
            return Some("non-finite parameter or predictor".into());
        }
        match self {
            Model::BevertonHolt => {
                if near_zero(theta[1], 1.0) {
                    Some("beta = 0".into())
                } else if near_zero(theta[1] + x0, x0) {
                    Some(format!("pole at beta + x = 0 (x = {x0})"))
                } else {
                    None
                }
            }
            Model::MichaelisMenten => {
                if near_zero(theta[1] + x0, x0) {
                    Some(format!("pole at theta2 + x = 0 (x = {x0})"))
                } else {
                    None
                }
            }
            Model::MichaelisMentenReciprocal => {
                if near_zero(theta[0] * x0 + theta[1], theta[1]) {
                    Some(format!("pole at theta1 x + theta2 = 0 (x = {x0})"))
                } else {
                    None
                }
            }
            Model::Power | Model::Logarithmic => {
                if x0 > 0.0 {
                    None
                } else {
                    Some(format!("requires x > 0 (x = {x0})"))
                }
            }
            Model::LogLogistic => {
                if x0 <= 0.0 {
                    Some(format!("requires x > 0 (x = {x0})"))
                } else if theta[3] <= 0.0 {
                    Some("requires theta4 > 0".into())
                } else {
                    None
                }
            }
            Model::Weibull1 | Model::Weibull2 => {
                if x0 <= 0.0 {
                    Some(format!("requires x > 0 (x = {x0})"))
                } else if theta[2] <= 0.0 {
                    Some("requires theta3 > 0".into())
                } else {
                    None
                }
            }
            _ => None,
        }
    }

    fn value(&self, t: &[f64], x: &[f64]) -> f64 {
        let x = x[0];
        if let Some(s) = self.sigmoid() {
            return s.value(t, x);
        }
        match self {
            Model::BevertonHolt => t[0] * x / (1.0 + x / t[1]),
            Model::MichaelisMenten => t[0] * x / (t[1] + x),
            Model::MichaelisMentenReciprocal => x / (t[0] * x + t[1]),
            Model::Exponential => t[0] * (t[1] * x).exp(),
            Model::Asymptotic => t[0] - (t[0] - t[1]) * (-t[2] * x).exp(),
            Model::NegativeExponential => -t[0] * (-t[1] * x).exp_m1(),
            Model::Power => t[0] * x.powf(t[1]),
            Model::Logarithmic => t[0] + t[1] * x.ln(),
            Model::Polynomial(_) => horner(t, x),
            Model::Linear => t[0] + t[1] * x,
            _ => unreachable!("sigmoid models handled above"),
        }
    }

    fn gradient(&self, t: &[f64], x: &[f64], out: &mut [f64]) {
        let x = x[0];
        if let Some(s) = self.sigmoid() {
            s.gradient(t, x, out);
            return;
        }
        match self {
            Model::BevertonHolt => {
                let d = t[1] + x;
                out[0] = x / (1.0 + x / t[1]);
                out[1] = t[0] * x * x / (d * d);
            }
            Model::MichaelisMenten => {
                let d = t[1] + x;
                out[0] = x / d;
                out[1] = -t[0] * x / (d * d);
            }
            Model::MichaelisMentenReciprocal => {
                let d = t[0] * x + t[1];
                let d2 = d * d;
                out[0] = -x * x / d2;
                out[1] = -x / d2;
            }
            Model::Exponential => {
                let e = (t[1] * x).exp();
                out[0] = e;
                out[1] = t[0] * x * e;
            }
            Model::Asymptotic => {
                let e = (-t[2] * x).exp();
                out[0] = 1.0 - e;
                out[1] = e;
                out[2] = (t[0] - t[1]) * x * e;
            }
            Model::NegativeExponential => {
                let e = (-t[1] * x).exp();
                out[0] = -(-t[1] * x).exp_m1();
                out[1] = t[0] * x * e;
            }
            Model::Power => {
                let xp = x.powf(t[1]);
                out[0] = xp;
                out[1] = t[0] * xp * x.ln();
            }
            Model::Logarithmic => {
                out[0] = 1.0;
                out[1] = x.ln();
            }
            Model::Polynomial(_) => {
                let mut xp = 1.0;
                for o in out.iter_mut() {
                    *o = xp;
                    xp *= x;
                }
            }
            Model::Linear => {
                out[0] = 1.0;
                out[1] = x;
            }
            _ => unreachable!("sigmoid models handled above"),
        }
    }

    fn has_analytic_hessian(&self) -> bool {
        true
    }

    fn second(&self, t: &[f64], x: &[f64]) -> Option<DMatrix<f64>> {
        let x = x[0];
        if let Some(s) = self.sigmoid() {
            return Some(s.second(t, x));
        }
        let p = self.n_params();
        let mut h = DMatrix::zeros(p, p);
        match self {
            Model::BevertonHolt => {
                let d = t[1] + x;
                h[(0, 1)] = x * x / (d * d);
                h[(1, 1)] = -2.0 * t[0] * x * x / (d * d * d);
            }
            Model::MichaelisMenten => {
                let d = t[1] + x;
                h[(0, 1)] = -x / (d * d);
                h[(1, 1)] = 2.0 * t[0] * x / (d * d * d);
            }
            Model::MichaelisMentenReciprocal => {
                let d = t[0] * x + t[1];
                let d3 = d * d * d;
                h[(0, 0)] = 2.0 * x * x * x / d3;
                h[(0, 1)] = 2.0 * x * x / d3;
                h[(1, 1)] = 2.0 * x / d3;
            }
            Model::Exponential => {
                let e = (t[1] * x).exp();
                h[(0, 1)] = x * e;
                h[(1, 1)] = t[0] * x * x * e;
            }
            Model::Asymptotic => {
                let e = (-t[2] * x).exp();
                h[(0, 2)] = x * e;
                h[(1, 2)] = -x * e;
                h[(2, 2)] = -(t[0] - t[1]) * x * x * e;
            }
            Model::NegativeExponential => {
                let e = (-t[1] * x).exp();
                h[(0, 1)] = x * e;
                h[(1, 1)] = -t[0] * x * x * e;
            }
            Model::Power => {
                let xp = x.powf(t[1]);
                let lx = x.ln();
                h[(0, 1)] = xp * lx;
                h[(1, 1)] = t[0] * xp * lx * lx;
            }
            Model::Logarithmic | Model::Polynomial(_) | Model::Linear => {}
            _ => unreachable!("sigmoid models handled above"),
        }
        mirror_upper(&mut h);
        Some(h)
    }
}

fn horner(t: &[f64], x: f64) -> f64 {
    t.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn mirror_upper(h: &mut DMatrix<f64>) {
    for j in 0..h.nrows() {
        for k in (j + 1)..h.ncols() {
            h[(k, j)] = h[(j, k)];
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    /// `1 / (1 + e^u)`
    Logistic,
    /// `exp(-e^u)`
    Gompertz,
    /// `1 - exp(-e^u)`
    WeibullRising,
}

impl Shape {
    /// `(s, s', s'')` at `u`.
    fn eval(self, u: f64) -> (f64, f64, f64) {
        match self {
            Shape::Logistic => {
                let s = if u > 0.0 {
                    let e = (-u).exp();
                    e / (1.0 + e)
                } else {
                    1.0 / (1.0 + u.exp())
                };
                let s1 = -s * (1.0 - s);
                (s, s1, s1 * (2.0 * s - 1.0))
            }
            Shape::Gompertz => {
                let eu = u.exp();
                let s = (-eu).exp();
                (s, -eu * s, s * eu * (eu - 1.0))
            }
            Shape::WeibullRising => {
                let eu = u.exp();
                let g = (-eu).exp();
                (-(-eu).exp_m1(), eu * g, -g * eu * (eu - 1.0))
            }
        }
    }
}

/// Shared structure of the sigmoidal entries:
/// `f = A + (B - A) s(c (t - d))` with `t = x` or `log x` and `d = theta_d` or
/// `log theta_d`.
#[derive(Debug, Clone, Copy)]
struct Sigmoid {
    a: usize,
    b: usize,
    c: usize,
    d: usize,
    log_scale: bool,
    shape: Shape,
}

impl Sigmoid {
    fn new(idx: [usize; 4], log_scale: bool, shape: Shape) -> Self {
        Self {
            a: idx[0],
            b: idx[1],
            c: idx[2],
            d: idx[3],
            log_scale,
            shape,
        }
    }

    /// `(t - d, d'(theta_d), d''(theta_d))`
    fn offset(&self, t: &[f64], x: f64) -> (f64, f64, f64) {
        let td = t[self.d];
        if self.log_scale {
            (x.ln() - td.ln(), 1.0 / td, -1.0 / (td * td))
        } else {
            (x - td, 1.0, 0.0)
        }
    }

    fn value(&self, t: &[f64], x: f64) -> f64 {
        let (dt, _, _) = self.offset(t, x);
        let (s, _, _) = self.shape.eval(t[self.c] * dt);
        t[self.a] + (t[self.b] - t[self.a]) * s
    }

    fn gradient(&self, t: &[f64], x: f64, out: &mut [f64]) {
        let (dt, d1, _) = self.offset(t, x);
        let c = t[self.c];
        let (s, s1, _) = self.shape.eval(c * dt);
        let amp = t[self.b] - t[self.a];
        out[self.a] = 1.0 - s;
        out[self.b] = s;
        out[self.c] = amp * s1 * dt;
        out[self.d] = -amp * s1 * c * d1;
    }

    fn second(&self, t: &[f64], x: f64) -> DMatrix<f64> {
        let (dt, d1, d2) = self.offset(t, x);
        let c = t[self.c];
        let (_, s1, s2) = self.shape.eval(c * dt);
        let amp = t[self.b] - t[self.a];
        let mut h = DMatrix::zeros(4, 4);
        let mut set = |i: usize, j: usize, v: f64| {
            h[(i, j)] = v;
            h[(j, i)] = v;
        };
        set(self.a, self.c, -s1 * dt);
        set(self.b, self.c, s1 * dt);
        set(self.a, self.d, s1 * c * d1);
        set(self.b, self.d, -s1 * c * d1);
        set(self.c, self.c, amp * s2 * dt * dt);
        set(self.c, self.d, -amp * d1 * (s2 * c * dt + s1));
        set(self.d, self.d, amp * c * (s2 * c * d1 * d1 - s1 * d2));
        h
    }
}

/// Checked evaluation at one predictor row.
pub fn evaluate<M: MeanFunction + ?Sized>(model: &M, theta: &[f64], x: &[f64]) -> Result<f64> {
    check_len(model, theta)?;
    model.evaluate_checked(theta, x, 0)
}

/// Checked analytic gradient at one predictor row.
pub fn analytic_gradient<M: MeanFunction + ?Sized>(model: &M, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_len(model, theta)?;
    let mut g = vec![0.0; model.n_params()];
    model.gradient_checked(theta, x, 0, &mut g)?;
    Ok(g)
}

/// Checked analytic second derivatives at one predictor row. Returns
/// [`Error::NotAvailable`] for models without them.
pub fn analytic_second<M: MeanFunction + ?Sized>(model: &M, theta: &[f64], x: &[f64]) -> Result<DMatrix<f64>> {
    check_len(model, theta)?;
    if !model.has_analytic_hessian() {
        return Err(Error::NotAvailable(model.id()));
    }
    model.second_checked(theta, x, 0)
}

fn check_len<M: MeanFunction + ?Sized>(model: &M, theta: &[f64]) -> Result<()> {
    if theta.len() != model.n_params() {
        return Err(Error::DimensionMismatch(format!(
            "theta has length {}, model `{}` requires {}",
            theta.len(),
            model.id(),
            model.n_params()
        )));
    }
    Ok(())
}
