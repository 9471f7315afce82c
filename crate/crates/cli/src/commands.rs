use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use nlfit_core::bayes::{metropolis_fit, ChainSpec};
use nlfit_core::curvature::rms_curvatures_with;
use nlfit_core::data::Dataset;
use nlfit_core::glm::{irls_fit, GlmData};
use nlfit_core::hetero::{gls_fit, smooth, KernelSpec, VarianceModel};
use nlfit_core::inference::{build_report, likelihood_region, wald_region, ConfidenceRegion, GridSpec, InferenceReport, RegionKind};
use nlfit_core::models::{MeanFunction, Model};
use nlfit_core::sim::{coverage_experiment, figure1_experiment, generate, table1_experiment, GeneratorSpec};
use nlfit_core::solvers::{self, FitResult, SolverOptions};
use nlfit_core::special::f_quantile;
use nlfit_core::Error;
use serde_json::{json, Map, Value};

use crate::args::{CliConfig, Command, Generator, OutputFormat};
use crate::error::{CliError, CliResult};
use crate::input::{read_csv, read_table};
use crate::output::{csv_grid, csv_table, fmt17, json_pretty, to_value};

/// Text for the output stream, plus an error to report after it is written.
struct Output {
    text: String,
    failure: Option<CliError>,
}

impl From<String> for Output {
    fn from(text: String) -> Self {
        Output { text, failure: None }
    }
}

/// Executes a validated configuration. Output goes to `--output` when given,
/// otherwise to `stdout`.
pub fn run(config: &CliConfig, stdout: &mut dyn Write) -> CliResult<()> {
    let out = match config.command {
        Command::Fit => fit_cmd(config)?,
        Command::Glm => glm_cmd(config)?,
        Command::Region => region_cmd(config)?.into(),
        Command::Curvature => curvature_cmd(config)?.into(),
        Command::Smooth => smooth_cmd(config)?.into(),
        Command::Bayes => bayes_cmd(config)?.into(),
        Command::Simulate => simulate_cmd(config)?.into(),
        Command::Coverage => coverage_cmd(config)?.into(),
        Command::Table1 => json_pretty(&to_value(&table1_experiment(seed(config), config.extras.chain_iterations)?)?).into(),
        Command::Figure1 => json_pretty(&to_value(&figure1_experiment(config.extras.n, seed(config), config.alpha)?)?).into(),
    };
    match &config.output_path {
        Some(p) => write_file(p, &out.text)?,
        None => stdout
            .write_all(out.text.as_bytes())
            .map_err(|e| CliError::Io(format!("stdout: {e}")))?,
    }
    out.failure.map_or(Ok(()), Err)
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn seed(config: &CliConfig) -> u64 {
    config.seed.expect("seeded commands require --seed")
}

fn model(config: &CliConfig) -> Model {
    config.model.expect("validated config has a model")
}

fn data(config: &CliConfig) -> CliResult<Dataset> {
    read_csv(config.input_path.as_deref().expect("validated config has --data"))
}

fn fit_model(config: &CliConfig, m: &Model, d: &Dataset) -> CliResult<FitResult> {
    let init = config.init.as_ref().expect("validated config has --init");
    let opts = SolverOptions::default();
    let fit = match config.extras.gamma {
        Some(gamma) => gls_fit(m, d, &VarianceModel::PowerOfMean { gamma }, init, &opts)?,
        None => solvers::fit(config.solver, m, d, init, &opts)?,
    };
    Ok(fit)
}

fn not_converged(fit: &FitResult) -> Option<CliError> {
    (!fit.is_converged()).then(|| CliError::NotConverged(fit.status.to_string()))
}

fn fit_json(m: &Model, fit: &FitResult, report: Option<&InferenceReport>) -> CliResult<Value> {
    let inference = match report {
        Some(r) => json!({
            "alpha": r.alpha,
            "s2": r.s2,
            "sigma2_mle": r.sigma2_mle,
            "standard_errors": r.standard_errors,
            "wald_intervals": r.wald_intervals,
            "covariance": r.covariance_rows(),
        }),
        None => Value::Null,
    };
    Ok(json!({
        "model": m.id(),
        "parameters": m.param_names(),
        "method": fit.method,
        "status": fit.status,
        "converged_on": fit.converged_on,
        "n": fit.n_obs(),
        "p": fit.n_params(),
        "theta_hat": fit.theta_hat.as_slice(),
        "s_value": fit.s_value,
        "iterations": fit.iterations,
        "gradient_inf_norm": fit.gradient_inf_norm,
        "condition": fit.condition,
        "weights": fit.weights,
        "inference": inference,
        "residuals": fit.residuals,
        "trace": to_value(&fit.trace)?,
    }))
}

fn fit_cmd(config: &CliConfig) -> CliResult<Output> {
    let m = model(config);
    let d = data(config)?;
    let fit = fit_model(config, &m, &d)?;
    let report = match fit.is_converged() {
        true => Some(build_report(&fit, config.alpha)?),
        false => None,
    };
    let text = match config.format {
        OutputFormat::Json => json_pretty(&fit_json(&m, &fit, report.as_ref())?),
        OutputFormat::Csv => {
            let mut s = String::from("parameter,estimate,std_error,lower,upper\n");
            for (j, name) in m.param_names().iter().enumerate() {
                let (se, lo, hi) = match &report {
                    Some(r) => (r.standard_errors[j], r.wald_intervals[j].0, r.wald_intervals[j].1),
                    None => (f64::NAN, f64::NAN, f64::NAN),
                };
                let cells: Vec<String> = [fit.theta_hat[j], se, lo, hi].iter().map(|v| fmt17(*v)).collect();
                s.push_str(&format!("{name},{}\n", cells.join(",")));
            }
            s
        }
    };
    Ok(Output {
        text,
        failure: not_converged(&fit),
    })
}

fn glm_cmd(config: &CliConfig) -> CliResult<Output> {
    let table = read_table(config.input_path.as_deref().expect("validated config has --data"))?;
    let k = table.header.len() - 1;
    let x = DMatrix::from_fn(table.rows.len(), k, |i, j| table.rows[i][j]);
    let y = DVector::from_iterator(table.rows.len(), table.rows.iter().map(|r| r[k]));
    let mut names: Vec<String> = table.predictor_names().to_vec();
    let glm_data = if config.extras.intercept {
        names.insert(0, "(intercept)".into());
        GlmData::with_intercept(&x, y)?
    } else {
        GlmData::new(x, y)?
    };
    let family = config.extras.family.expect("validated glm config");
    let link = config.extras.link.expect("validated glm config");
    let fit = irls_fit(family, link, &glm_data, None, &SolverOptions::default())?;
    let mut out = Map::new();
    out.insert("coefficients".into(), json!(names));
    if let Value::Object(fields) = to_value(&fit)? {
        out.extend(fields);
    }
    let failure = (fit.status != solvers::FitStatus::Converged).then(|| CliError::NotConverged(fit.status.to_string()));
    Ok(Output {
        text: json_pretty(&Value::Object(out)),
        failure,
    })
}

/// Likelihood contour on a rectangle of `theta_hat +- 4` standard errors,
/// widened by half until the contour stays inside.
fn traced_likelihood<'a>(
    fit: &FitResult,
    report: &InferenceReport,
    m: &'a Model,
    d: &'a Dataset,
    alpha: f64,
    nodes: usize,
) -> CliResult<(ConfidenceRegion<'a>, GridSpec)> {
    let centre = [fit.theta_hat[0], fit.theta_hat[1]];
    let mut half = [4.0 * report.standard_errors[0], 4.0 * report.standard_errors[1]];
    let mut last = None;
    for _ in 0..12 {
        let grid = GridSpec::centered(centre, half, nodes, nodes)?;
        let region = likelihood_region(fit, m, d, alpha, Some(&grid))?;
        if !region.touches_border {
            return Ok((region, grid));
        }
        last = Some((region, grid));
        half = [half[0] * 1.5, half[1] * 1.5];
    }
    // Unbounded at this level; the metadata records that the contour is cut.
    Ok(last.expect("loop ran"))
}

fn region_cmd(config: &CliConfig) -> CliResult<String> {
    let m = model(config);
    let d = data(config)?;
    let fit = fit_model(config, &m, &d)?;
    fit.ensure_converged()?;
    let alpha = config.alpha;
    let report = build_report(&fit, alpha)?;
    let p = fit.n_params();
    let boundary = !config.extras.membership_only;
    if boundary && p != 2 {
        return Err(Error::InvalidInput("boundary grid requires p=2".into()).into());
    }
    let (region, grid) = match config.extras.region_kind {
        RegionKind::Wald => (wald_region(&fit, &report, alpha)?, None),
        RegionKind::Likelihood if boundary => {
            let (r, g) = traced_likelihood(&fit, &report, &m, &d, alpha, config.extras.grid)?;
            (r, Some(g))
        }
        RegionKind::Likelihood => (likelihood_region(&fit, &m, &d, alpha, None)?, None),
    };
    let mut meta = match to_value(&region.metadata())? {
        Value::Object(map) => map,
        _ => Map::new(),
    };
    meta.insert("model".into(), json!(m.id()));
    meta.insert("alpha".into(), json!(alpha));
    meta.insert("p".into(), json!(p));
    meta.insert("s_value".into(), json!(fit.s_value));
    if boundary {
        meta.insert("touches_border".into(), json!(region.touches_border));
        meta.insert("rectangle".into(), to_value(&grid)?);
    }
    if !config.extras.points.is_empty() {
        let tested: Vec<Value> = config
            .extras
            .points
            .iter()
            .map(|t| {
                let stat = region.statistic(t.as_slice()).ok();
                json!({
                    "theta": t.as_slice(),
                    "statistic": stat,
                    "inside": region.contains(t.as_slice()),
                })
            })
            .collect();
        meta.insert("points".into(), Value::Array(tested));
    }
    let meta = Value::Object(meta);
    Ok(match (boundary, config.format) {
        (true, OutputFormat::Csv) => csv_grid(&meta, &region.boundary_grid),
        (true, OutputFormat::Json) => {
            let mut v = meta;
            v["boundary"] = json!(region.boundary_grid);
            json_pretty(&v)
        }
        (false, _) => json_pretty(&meta),
    })
}

fn curvature_cmd(config: &CliConfig) -> CliResult<String> {
    let m = model(config);
    let d = data(config)?;
    let fit = fit_model(config, &m, &d)?;
    fit.ensure_converged()?;
    let c = rms_curvatures_with(&m, &d, &fit.theta_hat, config.alpha, config.extras.directions)?;
    let (n, p) = (fit.n_obs(), fit.n_params());
    let mut v = to_value(&c)?;
    v["model"] = json!(m.id());
    v["theta_hat"] = json!(fit.theta_hat.as_slice());
    // Curvatures below 1/sqrt(F) keep the linear approximation adequate at this level.
    v["critical_value"] = json!(1.0 / f_quantile(config.alpha, p as u32, (n - p) as u32).sqrt());
    Ok(json_pretty(&v))
}

fn smooth_cmd(config: &CliConfig) -> CliResult<String> {
    let d = data(config)?;
    if d.k() != 1 {
        return Err(Error::InvalidInput(format!("smooth needs one predictor column, got {}", d.k())).into());
    }
    let spec = KernelSpec::new(config.extras.kernel, config.extras.bandwidth)?;
    let queries = match &config.extras.queries {
        Some(q) => q.clone(),
        None => {
            let xs = d.x_column(0);
            let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let k = config.extras.query_points;
            (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
        }
    };
    let est = smooth(&queries, &d, &spec)?;
    Ok(match config.format {
        OutputFormat::Csv => csv_table(&["query_x", "estimate"], queries.iter().zip(&est).map(|(q, e)| vec![*q, *e])),
        OutputFormat::Json => json_pretty(&json!({
            "kernel": spec.kernel,
            "bandwidth": spec.bandwidth,
            "query_x": queries,
            "estimate": est,
        })),
    })
}

fn bayes_cmd(config: &CliConfig) -> CliResult<String> {
    let m = model(config);
    let d = data(config)?;
    let init = config.init.clone().expect("validated config has --init");
    let mut spec = ChainSpec::new(init, seed(config));
    spec.iterations = config.extras.iterations;
    spec.burn_in = config.extras.burn_in;
    spec.proposal_sd = config.extras.proposal_sd.clone();
    spec.sigma0 = config.extras.sigma0;
    let out = metropolis_fit(&m, &d, &spec)?;
    if let Some(path) = &config.extras.chain_path {
        let names = m.param_names();
        let mut header = vec!["iteration"];
        header.extend(names.iter().map(String::as_str));
        header.extend(["sigma", "log_post"]);
        let rows = out.chain.iter().map(|r| {
            let mut row = vec![r.iteration as f64];
            row.extend(&r.theta);
            row.extend([r.sigma, r.log_post]);
            row
        });
        write_file(path, &csv_table(&header, rows))?;
    }
    let sd = spec.proposal_sd.clone().unwrap_or_else(|| ChainSpec::default_proposal_sd(&spec.init));
    Ok(json_pretty(&json!({
        "model": m.id(),
        "parameters": m.param_names(),
        "seed": spec.seed,
        "iterations": spec.iterations,
        "burn_in": spec.burn_in,
        "proposal_sd": sd,
        "summary": to_value(&out.summary)?,
    })))
}

fn simulate_cmd(config: &CliConfig) -> CliResult<String> {
    let (n, s) = (config.extras.n, seed(config));
    let (spec, name) = match config.extras.generator {
        Generator::MmGamma => (GeneratorSpec::mm_gamma(n, s), "mm_gamma"),
        Generator::MmNormal => (GeneratorSpec::mm_normal(n, s), "mm_normal"),
    };
    let d = generate(&spec)?;
    let xs = d.x_column(0);
    Ok(match config.format {
        OutputFormat::Csv => csv_table(&["x", "y"], xs.iter().zip(d.y()).map(|(x, y)| vec![*x, *y])),
        OutputFormat::Json => json_pretty(&json!({
            "generator": name,
            "n": n,
            "seed": s,
            "theta_star": spec.theta_star.as_slice(),
            "x": xs,
            "y": d.y(),
        })),
    })
}

fn coverage_cmd(config: &CliConfig) -> CliResult<String> {
    let e = &config.extras;
    let c = coverage_experiment(e.region_kind, e.n, e.reps, config.alpha, seed(config))?;
    let mut v = to_value(&c)?;
    v["seed"] = json!(seed(config));
    v["reps"] = json!(e.reps);
    Ok(json_pretty(&v))
}
