//! Observations, parameter vectors and residual/objective evaluation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::MeanFunction;

/// `n` observations: an `n x k` predictor matrix (stored row-major) and a
/// response vector of length `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    x: Vec<f64>,
    k: usize,
    y: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from row-major predictors with `k` columns.
    pub fn new(x: Vec<f64>, k: usize, y: Vec<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::InvalidInput("dataset needs at least one observation".into()));
        }
        if k == 0 || x.len() != k * y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} predictor values for {} rows of {} columns",
                x.len(),
                y.len(),
                k
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite predictor at row {}", i / k)));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite response at row {i}")));
        }
        Ok(Self { x, k, y })
    }

    /// Single-predictor dataset.
    pub fn from_xy(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} predictor values, {} responses",
                x.len(),
                y.len()
            )));
        }
        Self::new(x.to_vec(), 1, y.to_vec())
    }

    pub fn from_matrix(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} predictor rows, {} responses",
                x.nrows(),
                y.len()
            )));
        }
        let mut flat = Vec::with_capacity(x.len());
        for i in 0..x.nrows() {
            flat.extend(x.row(i).iter());
        }
        Self::new(flat, x.ncols(), y.iter().copied().collect())
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of predictor columns.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.k)
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// First predictor column.
    pub fn x_column(&self, col: usize) -> Vec<f64> {
        self.rows().map(|r| r[col]).collect()
    }

    pub fn x_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n(), self.k, &self.x)
    }

    pub fn y_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.y)
    }

    /// Same predictors with a replaced response vector.
    pub fn with_y(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(self.x.clone(), self.k, y)
    }
}

/// A parameter vector `theta` of length `p >= 1` with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::InvalidInput("parameter vector must be non-empty".into()));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("parameter vector has non-finite entries".into()));
        }
        Ok(Self(theta))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    pub fn from_dvector(v: &DVector<f64>) -> Result<Self> {
        Self::new(v.iter().copied().collect())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Self {
        p.0
    }
}

/// Per-observation `p x p` second-derivative matrices `G_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondDerivArray {
    pub g: Vec<DMatrix<f64>>,
}

impl SecondDerivArray {
    /// Largest relative asymmetry `|G_jk - G_kj| / max(1, |G_jk|)` over all matrices.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for m in &self.g {
            for j in 0..m.nrows() {
                for k in (j + 1)..m.ncols() {
                    let d = (m[(j, k)] - m[(k, j)]).abs() / m[(j, k)].abs().max(1.0);
                    worst = worst.max(d);
                }
            }
        }
        worst
    }

    /// `sum_i w_i G_i`.
    pub fn weighted_sum(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let p = self.g.first().map_or(0, |m| m.nrows());
        let mut acc = DMatrix::zeros(p, p);
        for (gi, wi) in self.g.iter().zip(w.iter()) {
            acc += gi * *wi;
        }
        acc
    }
}

/// Residuals, Jacobian and objective at one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalBundle {
    pub residuals: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub objective: f64,
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

/// Mean function values `f(x_i, theta)` for every row, with domain and
/// finiteness checks.
pub fn fitted_values<M: MeanFunction + ?Sized>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
) -> Result<DVector<f64>> {
    check_len(model, theta)?;
    let mut out = DVector::zeros(data.n());
    for (i, row) in data.rows().enumerate() {
        out[i] = model.evaluate_checked(theta, row, i)?;
    }
    Ok(out)
}

/// Residuals `y_i - f(x_i, theta)`.
pub fn residuals<M: MeanFunction + ?Sized>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
) -> Result<DVector<f64>> {
    let f = fitted_values(model, theta, data)?;
    Ok(DVector::from_iterator(
        data.n(),
        data.y().iter().zip(f.iter()).map(|(y, f)| y - f),
    ))
}

/// `S(theta) = sum_i (y_i - f(x_i, theta))^2`.
pub fn residual_sum_squares<M: MeanFunction + ?Sized>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
) -> Result<f64> {
    Ok(residuals(model, theta, data)?.norm_squared())
}

/// Weighted objective `sum_i w_i r_i^2`; unit weights when `weights` is `None`.
pub fn weighted_rss<M: MeanFunction + ?Sized>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
    weights: Option<&DVector<f64>>,
) -> Result<f64> {
    let r = residuals(model, theta, data)?;
    Ok(match weights {
        None => r.norm_squared(),
        Some(w) => r.iter().zip(w.iter()).map(|(ri, wi)| wi * ri * ri).sum(),
    })
}

/// Analytic Jacobian `J_ij = df(x_i)/dtheta_j`.
pub fn jacobian<M: MeanFunction + ?Sized>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
) -> Result<DMatrix<f64>> {
    check_len(model, theta)?;
    let p = model.n_params();
    let mut jac = DMatrix::zeros(data.n(), p);
    let mut grad = vec![0.0; p];
    for (i, row) in data.rows().enumerate() {
        model.gradient_checked(theta, row, i, &mut grad)?;
        for (j, g) in grad.iter().enumerate() {
            jac[(i, j)] = *g;
        }
    }
    Ok(jac)
}

/// Second-derivative arrays from the model's analytic Hessian, falling back
/// to finite differences when the model has none.
pub fn second_derivatives<M: MeanFunction + ?Sized>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
) -> Result<SecondDerivArray> {
    check_len(model, theta)?;
    if !model.has_analytic_hessian() {
        return crate::numdiff::finite_diff_second_array(model, theta, data);
    }
    let mut g = Vec::with_capacity(data.n());
    for (i, row) in data.rows().enumerate() {
        g.push(model.second_checked(theta, row, i)?);
    }
    Ok(SecondDerivArray { g })
}

/// Residuals, Jacobian and `S` in one pass.
pub fn evaluate<M: MeanFunction + ?Sized>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
) -> Result<EvalBundle> {
    let residuals = residuals(model, theta, data)?;
    let jacobian = jacobian(model, theta, data)?;
    let objective = residuals.norm_squared();
    Ok(EvalBundle {
        residuals,
        jacobian,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Model;

    #[test]
    fn dataset_rejects_bad_shapes() {
        assert!(Dataset::new(vec![], 1, vec![]).is_err());
        assert!(Dataset::new(vec![1.0, 2.0], 1, vec![1.0]).is_err());
        assert!(Dataset::from_xy(&[1.0], &[f64::NAN]).is_err());
        let d = Dataset::new(vec![1.0, 2.0, 3.0, 4.0], 2, vec![5.0, 6.0]).unwrap();
        assert_eq!(d.row(1), &[3.0, 4.0]);
        assert_eq!(d.x_matrix()[(1, 0)], 3.0);
    }

    #[test]
    fn rss_exact_fit_michaelis_menten() {
        let d = Dataset::from_xy(&[5.0], &[3.0]).unwrap();
        let s = residual_sum_squares(&Model::MichaelisMenten, &[6.0, 5.0], &d).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn rss_unit_residuals() {
        let theta = [1.5, 0.2];
        let xs = [0.5, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| Model::Exponential.value(&theta, &[*x]) + 1.0)
            .collect();
        let d = Dataset::from_xy(&xs, &ys).unwrap();
        let s = residual_sum_squares(&Model::Exponential, &theta, &d).unwrap();
        assert!((s - 4.0).abs() < 1e-12);
    }

    #[test]
    fn rss_beverton_holt_hand_value() {
        let d = Dataset::from_xy(&[10.0], &[0.0]).unwrap();
        let s = residual_sum_squares(&Model::BevertonHolt, &[2.0, 10.0], &d).unwrap();
        assert!((s - 100.0).abs() < 1e-12);
    }

    #[test]
    fn rss_flags_pole() {
        let d = Dataset::from_xy(&[5.0], &[1.0]).unwrap();
        let err = residual_sum_squares(&Model::MichaelisMenten, &[6.0, -5.0], &d).unwrap_err();
        assert!(matches!(err, Error::DomainViolation { row: 0, .. }));
    }

    #[test]
    fn eval_bundle_consistency() {
        let d = Dataset::from_xy(&[1.0, 2.0, 4.0, 8.0], &[1.0, 1.8, 2.9, 3.7]).unwrap();
        let b = evaluate(&Model::MichaelisMenten, &[4.0, 2.0], &d).unwrap();
        assert_eq!(b.jacobian.nrows(), 4);
        let s: f64 = b.residuals.iter().map(|r| r * r).sum();
        assert!((b.objective - s).abs() <= 1e-12 * s.max(1e-300));
    }

    #[test]
    fn rss_zero_iff_all_residuals_zero() {
        let d = Dataset::from_xy(&[1.0, 2.0], &[3.0, 5.0]).unwrap();
        assert_eq!(residual_sum_squares(&Model::Linear, &[1.0, 2.0], &d).unwrap(), 0.0);
        assert!(residual_sum_squares(&Model::Linear, &[1.0, 2.0 + 1e-9], &d).unwrap() > 0.0);
    }
}
