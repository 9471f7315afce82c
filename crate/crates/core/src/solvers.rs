//! Iterative least-squares estimation.
//!
//! Three solvers share one iteration skeleton: Gauss-Newton with step
//! halving, Newton-Raphson on the full Hessian of `S(theta)` (with the same
//! step halving), and Levenberg-Marquardt diagonal damping. Every accepted
//! iteration strictly decreases `S`.
//!
//! Convergence is declared when the gradient satisfies
//! `||2 J'r||_inf <= tol_grad (1 + S)`, or when no further strict decrease
//! can be found and the relative change of `S` (the last accepted one, or the
//! one the linearized model predicts for the next step) is below `tol_rel_s`. A stall alone does not stop the iteration, since a
//! step or two more usually brings the gradient under the tolerance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, ParamVector};
use crate::error::{Error, Result};
use crate::models::MeanFunction;

/// `J'J` condition numbers above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Levenberg-Marquardt gives up once the damping exceeds this.
pub const MAX_DAMPING: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iter: usize,
    pub tol_rel_s: f64,
    pub tol_grad: f64,
    /// Smallest step scale tried by step halving.
    pub min_step_scale: f64,
    /// Initial Levenberg-Marquardt damping.
    pub damping_init: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol_rel_s: 1e-10,
            tol_grad: 1e-8,
            min_step_scale: 2f64.powi(-30),
            damping_init: 1e-3,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.tol_rel_s, self.tol_grad, self.min_step_scale, self.damping_init];
        if self.max_iter == 0 || positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidInput(
                "solver options must be strictly positive with max_iter >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GaussNewton,
    NewtonRaphson,
    LevenbergMarquardt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    MaxIter,
    SingularNormalEquations,
    LineSearchFailed,
}

impl std::fmt::Display for FitStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FitStatus::Converged => "converged",
            FitStatus::MaxIter => "max_iter",
            FitStatus::SingularNormalEquations => "singular_normal_equations",
            FitStatus::LineSearchFailed => "line_search_failed",
        };
        f.write_str(s)
    }
}

/// One row of the iteration trace. Entry 0 is the starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub theta: Vec<f64>,
    pub s_value: f64,
    /// Accepted step scale `lambda_t` (1 for Levenberg-Marquardt, 0 for the start).
    pub step_scale: f64,
    /// Damping used for the accepted Levenberg-Marquardt step.
    pub damping: Option<f64>,
    /// Newton-Raphson fell back to `2 J'J` because the Hessian was not positive definite.
    pub hessian_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: Method,
    pub theta_hat: ParamVector,
    /// `S(theta_hat)`; the weighted sum `sum w_i r_i^2` for weighted fits.
    pub s_value: f64,
    pub iterations: usize,
    pub status: FitStatus,
    pub trace: Vec<TraceEntry>,
    /// Jacobian at `theta_hat`, rows scaled by `sqrt(w_i)` for weighted fits.
    #[serde(skip)]
    pub jacobian_at_hat: DMatrix<f64>,
    /// Unweighted residuals `y - f(theta_hat)`.
    pub residuals: Vec<f64>,
    /// Observation weights of a weighted fit.
    pub weights: Option<Vec<f64>>,
    /// `||J'r||_inf` (weighted) at `theta_hat`.
    pub gradient_inf_norm: f64,
    /// Condition number of `J'J` when the fit stopped on singular normal equations.
    pub condition: Option<f64>,
    /// Which test ended a converged fit.
    pub converged_on: Option<StopTest>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopTest {
    /// `||2 J'r||_inf <= tol_grad (1 + S)`.
    Gradient,
    /// `S` stalled at its floating-point floor with the gradient still above tolerance.
    RelativeS,
}

impl FitResult {
    pub fn n_obs(&self) -> usize {
        self.jacobian_at_hat.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn is_converged(&self) -> bool {
        self.status == FitStatus::Converged
    }

    /// Maps a non-converged status to its error.
    pub fn ensure_converged(&self) -> Result<&Self> {
        match self.status {
            FitStatus::Converged => Ok(self),
            FitStatus::SingularNormalEquations => Err(Error::SingularNormalEquations {
                condition: self.condition.unwrap_or(f64::INFINITY),
            }),
            FitStatus::LineSearchFailed => Err(Error::LineSearchFailed {
                scale: self.trace.last().map_or(0.0, |t| t.step_scale),
            }),
            FitStatus::MaxIter => Err(Error::NotConverged(self.status.to_string())),
        }
    }

    /// True when the objective never increased along the trace.
    pub fn is_monotone(&self) -> bool {
        self.trace.windows(2).all(|w| w[1].s_value <= w[0].s_value)
    }
}

pub fn gauss_newton<M: MeanFunction + ?Sized>(
    model: &M,
    data: &Dataset,
    init: &ParamVector,
    opts: &SolverOptions,
) -> Result<FitResult> {
    fit(Method::GaussNewton, model, data, init, opts)
}

pub fn newton_raphson<M: MeanFunction + ?Sized>(
    model: &M,
    data: &Dataset,
    init: &ParamVector,
    opts: &SolverOptions,
) -> Result<FitResult> {
    fit(Method::NewtonRaphson, model, data, init, opts)
}

pub fn levenberg_marquardt<M: MeanFunction + ?Sized>(
    model: &M,
    data: &Dataset,
    init: &ParamVector,
    opts: &SolverOptions,
) -> Result<FitResult> {
    fit(Method::LevenbergMarquardt, model, data, init, opts)
}

/// Unweighted fit with the chosen method.
pub fn fit<M: MeanFunction + ?Sized>(
    method: Method,
    model: &M,
    data: &Dataset,
    init: &ParamVector,
    opts: &SolverOptions,
) -> Result<FitResult> {
    weighted_fit(method, model, data, init, opts, None)
}

/// Minimizes `sum_i w_i (y_i - f(x_i, theta))^2`; unit weights when `weights` is `None`.
pub fn weighted_fit<M: MeanFunction + ?Sized>(
    method: Method,
    model: &M,
    data: &Dataset,
    init: &ParamVector,
    opts: &SolverOptions,
    weights: Option<&DVector<f64>>,
) -> Result<FitResult> {
    opts.validate()?;
    let p = model.n_params();
    if init.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "init has length {}, model `{}` requires {p}",
            init.len(),
            model.id()
        )));
    }
    if data.n() <= p {
        return Err(Error::InvalidInput(format!(
            "need more observations ({}) than parameters ({p})",
            data.n()
        )));
    }
    if let Some(w) = weights {
        if w.len() != data.n() {
            return Err(Error::DimensionMismatch(format!("{} weights for {} rows", w.len(), data.n())));
        }
        if let Some(i) = w.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::DegenerateWeights { row: i });
        }
    }
    let problem = Problem {
        model,
        data,
        sqrt_w: weights.map(|w| w.map(f64::sqrt)),
    };
    let start = problem.state(&init.to_dvector())?;
    match method {
        Method::GaussNewton | Method::NewtonRaphson => line_search_loop(&problem, start, opts, method),
        Method::LevenbergMarquardt => lm_loop(&problem, start, opts),
    }
}

struct Problem<'a, M: ?Sized> {
    model: &'a M,
    data: &'a Dataset,
    sqrt_w: Option<DVector<f64>>,
}

#[derive(Clone)]
struct State {
    theta: DVector<f64>,
    /// Raw residuals.
    r: DVector<f64>,
    /// Weighted residuals `sqrt(w) r`.
    rw: DVector<f64>,
    /// Weighted Jacobian.
    jw: DMatrix<f64>,
    s: f64,
}

impl State {
    fn gradient_inf(&self) -> f64 {
        (self.jw.transpose() * &self.rw).amax()
    }
}

impl<M: MeanFunction + ?Sized> Problem<'_, M> {
    fn weighted(&self, r: &DVector<f64>) -> DVector<f64> {
        match &self.sqrt_w {
            Some(sw) => r.component_mul(sw),
            None => r.clone(),
        }
    }

    fn objective(&self, theta: &DVector<f64>) -> Result<f64> {
        let r = data::residuals(self.model, theta.as_slice(), self.data)?;
        Ok(self.weighted(&r).norm_squared())
    }

    fn state(&self, theta: &DVector<f64>) -> Result<State> {
        let r = data::residuals(self.model, theta.as_slice(), self.data)?;
        let mut jw = data::jacobian(self.model, theta.as_slice(), self.data)?;
        if let Some(sw) = &self.sqrt_w {
            for (i, w) in sw.iter().enumerate() {
                jw.row_mut(i).scale_mut(*w);
            }
        }
        let rw = self.weighted(&r);
        let s = rw.norm_squared();
        Ok(State {
            theta: theta.clone(),
            r,
            rw,
            jw,
            s,
        })
    }

    /// `J'J - sum_i w_i r_i G_i`, i.e. half the Hessian of the weighted objective.
    fn half_hessian(&self, st: &State) -> Result<DMatrix<f64>> {
        let g = data::second_derivatives(self.model, st.theta.as_slice(), self.data)?;
        let coef = match &self.sqrt_w {
            Some(sw) => st.rw.component_mul(sw),
            None => st.r.clone(),
        };
        Ok(st.jw.transpose() * &st.jw - g.weighted_sum(&coef))
    }
}

/// Status when no further strict decrease is found. If the last accepted step
/// stalled, or the linearized model predicts a relative decrease below
/// `tol_rel_s` for the full step, `S` is at its floating-point floor and the
/// fit counts as converged.
fn floor_status(floor: bool) -> FitStatus {
    if floor {
        FitStatus::Converged
    } else {
        FitStatus::LineSearchFailed
    }
}

fn predicted_stall(st: &State, delta: &DVector<f64>, opts: &SolverOptions) -> bool {
    let jd = &st.jw * delta;
    let predicted = 2.0 * st.rw.dot(&jd) - jd.norm_squared();
    predicted < opts.tol_rel_s * st.s
}

fn gradient_ok(st: &State, opts: &SolverOptions) -> bool {
    st.s == 0.0 || 2.0 * st.gradient_inf() <= opts.tol_grad * (1.0 + st.s)
}

fn trace_entry(st: &State, step_scale: f64, damping: Option<f64>, fallback: bool) -> TraceEntry {
    TraceEntry {
        theta: st.theta.iter().copied().collect(),
        s_value: st.s,
        step_scale,
        damping,
        hessian_fallback: fallback,
    }
}

fn finish<M: MeanFunction + ?Sized>(
    method: Method,
    problem: &Problem<'_, M>,
    st: State,
    iterations: usize,
    status: FitStatus,
    trace: Vec<TraceEntry>,
    condition: Option<f64>,
) -> Result<FitResult> {
    let gradient_inf_norm = st.gradient_inf();
    Ok(FitResult {
        method,
        theta_hat: ParamVector::from_dvector(&st.theta)?,
        s_value: st.s,
        iterations,
        status,
        trace,
        jacobian_at_hat: st.jw,
        residuals: st.r.iter().copied().collect(),
        weights: problem
            .sqrt_w
            .as_ref()
            .map(|sw| sw.iter().map(|v| v * v).collect()),
        gradient_inf_norm,
        condition,
        converged_on: (status == FitStatus::Converged).then_some(StopTest::Gradient),
    })
}

fn finish_at_floor<M: MeanFunction + ?Sized>(
    method: Method,
    problem: &Problem<'_, M>,
    st: State,
    iterations: usize,
    floor: bool,
    trace: Vec<TraceEntry>,
    opts: &SolverOptions,
) -> Result<FitResult> {
    let relative = floor && !gradient_ok(&st, opts);
    let mut fit = finish(method, problem, st, iterations, floor_status(floor), trace, None)?;
    if relative {
        fit.converged_on = Some(StopTest::RelativeS);
    }
    Ok(fit)
}

/// Gauss-Newton increment `delta = (J'J)^{-1} J'r`, computed from the SVD of
/// `J`. Fails with [`Error::SingularNormalEquations`] when `cond(J'J) > 1e12`.
pub fn gauss_newton_step(jac: &DMatrix<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = jac.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { (smax / smin).powi(2) } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularNormalEquations { condition });
    }
    let u = svd.u.as_ref().expect("svd computed with U");
    let vt = svd.v_t.as_ref().expect("svd computed with V^T");
    let coef = (u.transpose() * r).component_div(&svd.singular_values);
    Ok(vt.transpose() * coef)
}

/// Levenberg-Marquardt increment solving `(J'J + mu diag(J'J)) delta = J'r`.
/// `None` if the damped system is not positive definite.
pub fn lm_step(jac: &DMatrix<f64>, r: &DVector<f64>, mu: f64) -> Option<DVector<f64>> {
    let jtj = jac.transpose() * jac;
    let g = jac.transpose() * r;
    let scale = jtj.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut a = jtj.clone();
    for j in 0..a.nrows() {
        // Floor zero columns so the damping still regularizes them.
        let d = jtj[(j, j)].max(1e-15 * scale);
        a[(j, j)] += mu * d;
    }
    a.cholesky().map(|c| c.solve(&g))
}

fn line_search_loop<M: MeanFunction + ?Sized>(
    problem: &Problem<'_, M>,
    start: State,
    opts: &SolverOptions,
    method: Method,
) -> Result<FitResult> {
    let mut st = start;
    let mut trace = vec![trace_entry(&st, 0.0, None, false)];
    let mut stalled = false;
    for iter in 1..=opts.max_iter {
        if gradient_ok(&st, opts) {
            return finish(method, problem, st, iter - 1, FitStatus::Converged, trace, None);
        }
        let mut fallback = false;
        let newton = match method {
            Method::NewtonRaphson => {
                let h = problem.half_hessian(&st)?;
                let g = st.jw.transpose() * &st.rw;
                h.cholesky().map(|c| c.solve(&g))
            }
            _ => None,
        };
        let delta = match newton {
            Some(d) => d,
            None => {
                fallback = method == Method::NewtonRaphson;
                match gauss_newton_step(&st.jw, &st.rw) {
                    Ok(d) => d,
                    Err(Error::SingularNormalEquations { condition }) => {
                        return finish(
                            method,
                            problem,
                            st,
                            iter - 1,
                            FitStatus::SingularNormalEquations,
                            trace,
                            Some(condition),
                        );
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        let mut lambda = 1.0;
        let accepted = loop {
            let trial = &st.theta + &delta * lambda;
            if let Ok(s_new) = problem.objective(&trial) {
                if s_new < st.s {
                    break Some(trial);
                }
            }
            lambda *= 0.5;
            if lambda < opts.min_step_scale {
                break None;
            }
        };
        let Some(theta_new) = accepted else {
            let floor = stalled || predicted_stall(&st, &delta, opts);
            return finish_at_floor(method, problem, st, iter - 1, floor, trace, opts);
        };
        let next = problem.state(&theta_new)?;
        stalled = (st.s - next.s) / st.s < opts.tol_rel_s;
        st = next;
        trace.push(trace_entry(&st, lambda, None, fallback));
        if gradient_ok(&st, opts) {
            return finish(method, problem, st, iter, FitStatus::Converged, trace, None);
        }
    }
    let n = opts.max_iter;
    finish(method, problem, st, n, FitStatus::MaxIter, trace, None)
}

fn lm_loop<M: MeanFunction + ?Sized>(
    problem: &Problem<'_, M>,
    start: State,
    opts: &SolverOptions,
) -> Result<FitResult> {
    let method = Method::LevenbergMarquardt;
    let mut st = start;
    let mut mu = opts.damping_init;
    let mut trace = vec![trace_entry(&st, 0.0, None, false)];
    let mut stalled = false;
    for iter in 1..=opts.max_iter {
        if gradient_ok(&st, opts) {
            return finish(method, problem, st, iter - 1, FitStatus::Converged, trace, None);
        }
        let accepted = loop {
            if let Some(delta) = lm_step(&st.jw, &st.rw, mu) {
                let trial = &st.theta + delta;
                if let Ok(s_new) = problem.objective(&trial) {
                    if s_new < st.s {
                        break Some((trial, mu));
                    }
                }
            }
            mu *= 10.0;
            if mu > MAX_DAMPING {
                break None;
            }
        };
        let Some((theta_new, used)) = accepted else {
            let floor = stalled
                || gauss_newton_step(&st.jw, &st.rw).is_ok_and(|d| predicted_stall(&st, &d, opts));
            return finish_at_floor(method, problem, st, iter - 1, floor, trace, opts);
        };
        mu = used / 10.0;
        let next = problem.state(&theta_new)?;
        stalled = (st.s - next.s) / st.s < opts.tol_rel_s;
        st = next;
        trace.push(trace_entry(&st, 1.0, Some(used), false));
        if gradient_ok(&st, opts) {
            return finish(method, problem, st, iter, FitStatus::Converged, trace, None);
        }
    }
    let n = opts.max_iter;
    finish(method, problem, st, n, FitStatus::MaxIter, trace, None)
}
