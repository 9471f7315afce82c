//! Central finite differences of the mean function. These are verification
//! oracles for the analytic derivatives and a fallback for models without
//! analytic second derivatives.

use nalgebra::DMatrix;

use crate::data::{Dataset, SecondDerivArray};
use crate::error::{Error, Result};
use crate::models::MeanFunction;

/// Per-coordinate relative step; `|theta_j|` is floored at 1 so coordinates
/// near zero still move the function by more than round-off.
fn step(theta_j: f64, root: f64) -> f64 {
    root * theta_j.abs().max(1.0)
}

fn eval_row<M: MeanFunction + ?Sized>(model: &M, theta: &[f64], row: &[f64], i: usize) -> Result<f64> {
    model.evaluate_checked(theta, row, i)
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

/// Central-difference Jacobian with per-coordinate step
/// `h_j = sqrt(eps) max(|theta_j|, 1)`.
pub fn finite_diff_jacobian<M: MeanFunction + ?Sized>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
) -> Result<DMatrix<f64>> {
    check_len(model, theta)?;
    let root = f64::EPSILON.sqrt();
    let p = theta.len();
    let mut jac = DMatrix::zeros(data.n(), p);
    let mut tp = theta.to_vec();
    let mut tm = theta.to_vec();
    for j in 0..p {
        let h = step(theta[j], root);
        tp[j] = theta[j] + h;
        tm[j] = theta[j] - h;
        // Use the realized step to cancel representation error in theta +- h.
        let width = tp[j] - tm[j];
        for (i, row) in data.rows().enumerate() {
            let fp = eval_row(model, &tp, row, i)?;
            let fm = eval_row(model, &tm, row, i)?;
            jac[(i, j)] = (fp - fm) / width;
        }
        tp[j] = theta[j];
        tm[j] = theta[j];
    }
    Ok(jac)
}

/// Central second differences of `f` for every row, symmetrized.
///
/// Uses step `eps^(1/4) max(|theta_j|, 1)`, which balances truncation
/// against round-off for a second difference.
pub fn finite_diff_second_array<M: MeanFunction + ?Sized>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
) -> Result<SecondDerivArray> {
    let raw = finite_diff_second_raw(model, theta, data)?;
    Ok(SecondDerivArray {
        g: raw
            .g
            .into_iter()
            .map(|m| (&m + m.transpose()) * 0.5)
            .collect(),
    })
}

/// The unsymmetrized second-difference array. The `(j, k)` and `(k, j)`
/// entries are computed from differently ordered stencils, so their gap
/// measures round-off.
pub fn finite_diff_second_raw<M: MeanFunction + ?Sized>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
) -> Result<SecondDerivArray> {
    check_len(model, theta)?;
    let root = f64::EPSILON.powf(0.25);
    let p = theta.len();
    let h: Vec<f64> = theta.iter().map(|t| step(*t, root)).collect();
    let mut g = Vec::with_capacity(data.n());
    let mut t = theta.to_vec();
    for (i, row) in data.rows().enumerate() {
        let f0 = eval_row(model, theta, row, i)?;
        let mut m = DMatrix::zeros(p, p);
        for j in 0..p {
            t[j] = theta[j] + h[j];
            let fp = eval_row(model, &t, row, i)?;
            t[j] = theta[j] - h[j];
            let fm = eval_row(model, &t, row, i)?;
            t[j] = theta[j];
            m[(j, j)] = (fp - 2.0 * f0 + fm) / (h[j] * h[j]);
            for k in 0..p {
                if k == j {
                    continue;
                }
                // f(+j,+k) - f(+j,-k) - f(-j,+k) + f(-j,-k), perturbing j first.
                let mut corner = |sj: f64, sk: f64| -> Result<f64> {
                    t[j] = theta[j] + sj * h[j];
                    t[k] = theta[k] + sk * h[k];
                    let v = eval_row(model, &t, row, i);
                    t[j] = theta[j];
                    t[k] = theta[k];
                    v
                };
                let pp = corner(1.0, 1.0)?;
                let pm = corner(1.0, -1.0)?;
                let mp = corner(-1.0, 1.0)?;
                let mm = corner(-1.0, -1.0)?;
                m[(j, k)] = ((pp - pm) - (mp - mm)) / (4.0 * h[j] * h[k]);
            }
        }
        g.push(m);
    }
    Ok(SecondDerivArray { g })
}
