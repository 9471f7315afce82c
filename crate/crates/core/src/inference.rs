//! Variance estimates, asymptotic covariance, Wald intervals, and Wald and
//! likelihood confidence regions.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, ParamVector};
use crate::error::{Error, Result};
use crate::models::MeanFunction;
use crate::solvers::FitResult;
use crate::special::{f_quantile, normal_quantile};

/// Number of boundary points traced on a Wald ellipse.
pub const WALD_BOUNDARY_POINTS: usize = 360;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub theta_hat: Vec<f64>,
    pub n: usize,
    pub p: usize,
    /// `S(theta_hat) / (n - p)`.
    pub s2: f64,
    /// `S(theta_hat) / n`.
    pub sigma2_mle: f64,
    #[serde(skip)]
    pub covariance: DMatrix<f64>,
    pub standard_errors: Vec<f64>,
    pub wald_intervals: Vec<(f64, f64)>,
    pub alpha: f64,
}

impl InferenceReport {
    pub fn covariance_rows(&self) -> Vec<Vec<f64>> {
        self.covariance
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

fn information(fit: &FitResult) -> DMatrix<f64> {
    fit.jacobian_at_hat.transpose() * &fit.jacobian_at_hat
}

fn invert_information(info: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = info.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 0.0 && smax / smin <= crate::solvers::MAX_CONDITION) {
        return Err(Error::SingularInformation);
    }
    let inv = info
        .clone()
        .cholesky()
        .ok_or(Error::SingularInformation)?
        .inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// Variance estimates, covariance `s^2 (J'J)^{-1}` and normal-theory Wald
/// intervals at level `1 - alpha`.
pub fn build_report(fit: &FitResult, alpha: f64) -> Result<InferenceReport> {
    check_alpha(alpha)?;
    fit.ensure_converged()?;
    let (n, p) = (fit.n_obs(), fit.n_params());
    if n <= p {
        return Err(Error::InvalidInput(format!("need n > p, got n={n}, p={p}")));
    }
    let s2 = fit.s_value / (n - p) as f64;
    let sigma2_mle = s2 * (n - p) as f64 / n as f64;
    let covariance = invert_information(&information(fit))? * s2;
    let z = normal_quantile(1.0 - alpha / 2.0);
    let standard_errors: Vec<f64> = (0..p).map(|j| covariance[(j, j)].max(0.0).sqrt()).collect();
    let wald_intervals = fit
        .theta_hat
        .as_slice()
        .iter()
        .zip(&standard_errors)
        .map(|(t, se)| (t - z * se, t + z * se))
        .collect();
    Ok(InferenceReport {
        theta_hat: fit.theta_hat.as_slice().to_vec(),
        n,
        p,
        s2,
        sigma2_mle,
        covariance,
        standard_errors,
        wald_intervals,
        alpha,
    })
}

/// `l(theta, sigma2) = -S(theta)/(2 sigma2) - (n/2) log(2 pi sigma2)`.
pub fn log_likelihood<M: MeanFunction + ?Sized>(
    model: &M,
    theta: &ParamVector,
    sigma2: f64,
    data: &Dataset,
) -> Result<f64> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidInput(format!("sigma2 must be positive, got {sigma2}")));
    }
    let s = data::residual_sum_squares(model, theta.as_slice(), data)?;
    let n = data.n() as f64;
    Ok(-s / (2.0 * sigma2) - 0.5 * n * (2.0 * std::f64::consts::PI * sigma2).ln())
}

/// Log-likelihood maximized over `sigma2` at fixed `theta` (`sigma2 = S/n`).
/// Infinite when `S(theta) = 0`.
pub fn profile_log_likelihood<M: MeanFunction + ?Sized>(
    model: &M,
    theta: &ParamVector,
    data: &Dataset,
) -> Result<f64> {
    let s = data::residual_sum_squares(model, theta.as_slice(), data)?;
    let n = data.n() as f64;
    Ok(-0.5 * n * ((2.0 * std::f64::consts::PI * s / n).ln() + 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Wald,
    Likelihood,
}

impl std::fmt::Display for RegionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RegionKind::Wald => "wald",
            RegionKind::Likelihood => "likelihood",
        })
    }
}

/// Serializable description of a region, written as the CSV metadata header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMetadata {
    pub kind: RegionKind,
    pub level: f64,
    pub threshold: f64,
    pub theta_hat: Vec<f64>,
    pub boundary_points: usize,
}

enum Criterion<'a> {
    Quadratic(DMatrix<f64>),
    Objective {
        model: &'a dyn MeanFunction,
        data: &'a Dataset,
        weights: Option<DVector<f64>>,
    },
}

/// Confidence region with a membership predicate and, for two-parameter
/// models, a traced boundary.
pub struct ConfidenceRegion<'a> {
    pub kind: RegionKind,
    /// `1 - alpha`; `None` for an exact region with a caller-supplied factor.
    pub level: Option<f64>,
    /// Region is `{theta : statistic(theta) <= threshold}`.
    pub threshold: f64,
    pub theta_hat: DVector<f64>,
    pub boundary_grid: Vec<[f64; 2]>,
    /// A grid-extracted region reached the rectangle edge.
    pub touches_border: bool,
    criterion: Criterion<'a>,
}

impl std::fmt::Debug for ConfidenceRegion<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConfidenceRegion")
            .field("kind", &self.kind)
            .field("level", &self.level)
            .field("threshold", &self.threshold)
            .field("boundary_points", &self.boundary_grid.len())
            .finish()
    }
}

impl ConfidenceRegion<'_> {
    /// Quadratic form `(theta - theta_hat)' J'J (theta - theta_hat)` for Wald
    /// regions, `S(theta)` for likelihood regions.
    pub fn statistic(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.theta_hat.len() {
            return Err(Error::DimensionMismatch(format!(
                "theta has length {}, region has {} parameters",
                theta.len(),
                self.theta_hat.len()
            )));
        }
        match &self.criterion {
            Criterion::Quadratic(info) => {
                let d = DVector::from_column_slice(theta) - &self.theta_hat;
                Ok((info * &d).dot(&d))
            }
            Criterion::Objective { model, data, weights } => {
                data::weighted_rss(*model, theta, data, weights.as_ref())
            }
        }
    }

    /// Points outside the model domain are outside the region.
    pub fn contains(&self, theta: &[f64]) -> bool {
        matches!(self.statistic(theta), Ok(v) if v <= self.threshold)
    }

    pub fn metadata(&self) -> RegionMetadata {
        RegionMetadata {
            kind: self.kind,
            level: self.level.unwrap_or(f64::NAN),
            threshold: self.threshold,
            theta_hat: self.theta_hat.iter().copied().collect(),
            boundary_points: self.boundary_grid.len(),
        }
    }

    /// `statistic - threshold` on every node of `grid`, row-major in `theta2`
    /// then `theta1` (index `j * nx + i`). Non-finite where the model is undefined.
    pub fn grid_values(&self, grid: &GridSpec) -> Vec<f64> {
        let nodes: Vec<[f64; 2]> = (0..grid.ny)
            .flat_map(|j| (0..grid.nx).map(move |i| grid.node(i, j)))
            .collect();
        nodes
            .par_iter()
            .map(|t| match self.statistic(t) {
                Ok(v) if v.is_finite() => v - self.threshold,
                _ => f64::INFINITY,
            })
            .collect()
    }
}

/// Rectangle `[lo, hi]` sampled at `nx * ny` nodes, both ends included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn new(lo: [f64; 2], hi: [f64; 2], nx: usize, ny: usize) -> Result<Self> {
        let ok = nx >= 2
            && ny >= 2
            && lo.iter().chain(&hi).all(|v| v.is_finite())
            && hi[0] > lo[0]
            && hi[1] > lo[1];
        if !ok {
            return Err(Error::InvalidInput(
                "grid needs finite lo < hi and at least 2 nodes per axis".into(),
            ));
        }
        Ok(Self { lo, hi, nx, ny })
    }

    /// `center +- half_width` per coordinate.
    pub fn centered(center: [f64; 2], half_width: [f64; 2], nx: usize, ny: usize) -> Result<Self> {
        Self::new(
            [center[0] - half_width[0], center[1] - half_width[1]],
            [center[0] + half_width[0], center[1] + half_width[1]],
            nx,
            ny,
        )
    }

    pub fn dx(&self) -> f64 {
        (self.hi[0] - self.lo[0]) / (self.nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        (self.hi[1] - self.lo[1]) / (self.ny - 1) as f64
    }

    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        [self.lo[0] + i as f64 * self.dx(), self.lo[1] + j as f64 * self.dy()]
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }
}

/// Wald region `(theta - theta_hat)' J'J (theta - theta_hat) <= p s^2 F(alpha; p, n-p)`.
pub fn wald_region(fit: &FitResult, report: &InferenceReport, alpha: f64) -> Result<ConfidenceRegion<'static>> {
    check_alpha(alpha)?;
    let (n, p) = (report.n, report.p);
    let info = information(fit);
    invert_information(&info)?;
    let threshold = p as f64 * report.s2 * f_quantile(alpha, p as u32, (n - p) as u32);
    let theta_hat = fit.theta_hat.to_dvector();
    let boundary_grid = if p == 2 {
        wald_ellipse(&info, &theta_hat, threshold)
    } else {
        Vec::new()
    };
    Ok(ConfidenceRegion {
        kind: RegionKind::Wald,
        level: Some(1.0 - alpha),
        threshold,
        theta_hat,
        boundary_grid,
        touches_border: false,
        criterion: Criterion::Quadratic(info),
    })
}

fn wald_ellipse(info: &DMatrix<f64>, center: &DVector<f64>, threshold: f64) -> Vec<[f64; 2]> {
    let eig = info.clone().symmetric_eigen();
    let v = &eig.eigenvectors;
    let r: Vec<f64> = eig.eigenvalues.iter().map(|l| (threshold / l).sqrt()).collect();
    (0..WALD_BOUNDARY_POINTS)
        .map(|k| {
            let t = 2.0 * std::f64::consts::PI * k as f64 / WALD_BOUNDARY_POINTS as f64;
            let (a, b) = (r[0] * t.cos(), r[1] * t.sin());
            [
                center[0] + v[(0, 0)] * a + v[(0, 1)] * b,
                center[1] + v[(1, 0)] * a + v[(1, 1)] * b,
            ]
        })
        .collect()
}

/// Likelihood region `S(theta) <= S(theta_hat) (1 + p/(n-p) F(alpha; p, n-p))`.
///
/// For weighted fits `S` is the weighted objective. The boundary is traced by
/// marching squares over `grid` when given (two-parameter models only).
pub fn likelihood_region<'a, M: MeanFunction>(
    fit: &FitResult,
    model: &'a M,
    data: &'a Dataset,
    alpha: f64,
    grid: Option<&GridSpec>,
) -> Result<ConfidenceRegion<'a>> {
    check_alpha(alpha)?;
    fit.ensure_converged()?;
    let (n, p) = (fit.n_obs(), fit.n_params());
    if n <= p {
        return Err(Error::InvalidInput(format!("need n > p, got n={n}, p={p}")));
    }
    let factor = 1.0 + p as f64 / (n - p) as f64 * f_quantile(alpha, p as u32, (n - p) as u32);
    objective_region(fit, model, data, factor, Some(1.0 - alpha), grid)
}

/// Exact-form region `S(theta) <= c S(theta_hat)` with a caller-supplied `c >= 1`.
pub fn exact_region<'a, M: MeanFunction>(
    fit: &FitResult,
    model: &'a M,
    data: &'a Dataset,
    c: f64,
    grid: Option<&GridSpec>,
) -> Result<ConfidenceRegion<'a>> {
    if !(c >= 1.0 && c.is_finite()) {
        return Err(Error::InvalidInput(format!("threshold factor must be >= 1, got {c}")));
    }
    fit.ensure_converged()?;
    objective_region(fit, model, data, c, None, grid)
}

fn objective_region<'a, M: MeanFunction>(
    fit: &FitResult,
    model: &'a M,
    data: &'a Dataset,
    factor: f64,
    level: Option<f64>,
    grid: Option<&GridSpec>,
) -> Result<ConfidenceRegion<'a>> {
    if data.n() != fit.n_obs() || model.n_params() != fit.n_params() {
        return Err(Error::DimensionMismatch("fit does not match model and data".into()));
    }
    let mut region = ConfidenceRegion {
        kind: RegionKind::Likelihood,
        level,
        threshold: fit.s_value * factor,
        theta_hat: fit.theta_hat.to_dvector(),
        boundary_grid: Vec::new(),
        touches_border: false,
        criterion: Criterion::Objective {
            model,
            data,
            weights: fit.weights.as_ref().map(|w| DVector::from_column_slice(w)),
        },
    };
    if let Some(g) = grid {
        if fit.n_params() != 2 {
            return Err(Error::InvalidInput("boundary grid requires p=2".into()));
        }
        let values = region.grid_values(g);
        let (boundary, touches) = marching_squares(g, &values);
        if boundary.is_empty() {
            return Err(Error::GridTooCoarse);
        }
        region.boundary_grid = boundary;
        region.touches_border = touches;
    }
    Ok(region)
}

/// Traces the zero level of `values` (negative inside) on `grid`.
///
/// Returns the crossing points chained into contour order, and whether any
/// border node lies inside. Saddle cells are resolved with the cell-centre average.
pub fn marching_squares(grid: &GridSpec, values: &[f64]) -> (Vec<[f64; 2]>, bool) {
    let (nx, ny) = (grid.nx, grid.ny);
    assert_eq!(values.len(), nx * ny, "value count must match the grid");
    let v = |i: usize, j: usize| values[j * nx + i];
    let inside = |i: usize, j: usize| v(i, j) <= 0.0;

    let touches = (0..nx).any(|i| inside(i, 0) || inside(i, ny - 1))
        || (0..ny).any(|j| inside(0, j) || inside(nx - 1, j));

    // Edge ids: horizontal edge from (i,j) to (i+1,j) is 2*(j*nx+i),
    // vertical edge from (i,j) to (i,j+1) is 2*(j*nx+i)+1.
    let h_edge = |i: usize, j: usize| 2 * (j * nx + i);
    let v_edge = |i: usize, j: usize| 2 * (j * nx + i) + 1;
    let crossing = |a: (usize, usize), b: (usize, usize)| -> [f64; 2] {
        let (va, vb) = (v(a.0, a.1), v(b.0, b.1));
        let t = if va.is_finite() && vb.is_finite() && va != vb {
            (va / (va - vb)).clamp(0.0, 1.0)
        } else {
            0.5
        };
        let pa = grid.node(a.0, a.1);
        let pb = grid.node(b.0, b.1);
        [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]
    };

    let mut points: HashMap<usize, [f64; 2]> = HashMap::new();
    let mut segments: Vec<(usize, usize)> = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            // Corners counter-clockwise from bottom-left; edges bottom, right, top, left.
            let c = [inside(i, j), inside(i + 1, j), inside(i + 1, j + 1), inside(i, j + 1)];
            let edges = [
                (h_edge(i, j), (i, j), (i + 1, j)),
                (v_edge(i + 1, j), (i + 1, j), (i + 1, j + 1)),
                (h_edge(i, j + 1), (i, j + 1), (i + 1, j + 1)),
                (v_edge(i, j), (i, j), (i, j + 1)),
            ];
            let cut: Vec<usize> = (0..4).filter(|&e| c[e] != c[(e + 1) % 4]).collect();
            for &e in &cut {
                let (id, a, b) = edges[e];
                points.entry(id).or_insert_with(|| crossing(a, b));
            }
            match cut.len() {
                2 => segments.push((edges[cut[0]].0, edges[cut[1]].0)),
                4 => {
                    let centre = 0.25 * (v(i, j) + v(i + 1, j) + v(i + 1, j + 1) + v(i, j + 1));
                    // Pair each cut edge with a neighbour so that the inside
                    // corners are joined through the centre when it is inside.
                    let centre_inside = centre <= 0.0;
                    if centre_inside == c[0] {
                        segments.push((edges[0].0, edges[1].0));
                        segments.push((edges[2].0, edges[3].0));
                    } else {
                        segments.push((edges[3].0, edges[0].0));
                        segments.push((edges[1].0, edges[2].0));
                    }
                }
                _ => {}
            }
        }
    }

    let mut adjacency: HashMap<usize, Vec<usize>> = HashMap::new();
    for (s, &(a, b)) in segments.iter().enumerate() {
        adjacency.entry(a).or_default().push(s);
        adjacency.entry(b).or_default().push(s);
    }
    let mut used = vec![false; segments.len()];
    let mut out = Vec::with_capacity(points.len());
    // Start open chains at edges with one segment so they are traced whole.
    let mut starts: Vec<usize> = segments.iter().map(|s| s.0).collect();
    starts.sort_by_key(|e| adjacency[e].len() != 1);
    for start in starts {
        let mut edge = start;
        let mut first = true;
        while let Some(&s) = adjacency[&edge].iter().find(|&&s| !used[s]) {
            used[s] = true;
            if first {
                out.push(points[&edge]);
                first = false;
            }
            let (a, b) = segments[s];
            edge = if a == edge { b } else { a };
            out.push(points[&edge]);
        }
    }
    (out, touches)
}

/// Enclosed areas of two regions and of their symmetric difference, counted
/// over the cell centres of `grid`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaComparison {
    pub area_a: f64,
    pub area_b: f64,
    pub symmetric_difference: f64,
}

impl AreaComparison {
    /// Symmetric difference relative to the area of `b`.
    pub fn relative_to_b(&self) -> f64 {
        self.symmetric_difference / self.area_b
    }
}

pub fn compare_areas(a: &ConfidenceRegion<'_>, b: &ConfidenceRegion<'_>, grid: &GridSpec) -> AreaComparison {
    let centres: Vec<[f64; 2]> = (0..grid.ny - 1)
        .flat_map(|j| {
            (0..grid.nx - 1).map(move |i| {
                let p = grid.node(i, j);
                [p[0] + 0.5 * grid.dx(), p[1] + 0.5 * grid.dy()]
            })
        })
        .collect();
    let flags: Vec<(bool, bool)> = centres
        .par_iter()
        .map(|c| (a.contains(c), b.contains(c)))
        .collect();
    let cell = grid.cell_area();
    let count = |f: &dyn Fn(&(bool, bool)) -> bool| flags.iter().filter(|x| f(x)).count() as f64 * cell;
    AreaComparison {
        area_a: count(&|x| x.0),
        area_b: count(&|x| x.1),
        symmetric_difference: count(&|x| x.0 != x.1),
    }
}
