//! Random-walk Metropolis sampling of `(theta, log sigma)` for nonlinear
//! regression with normal errors.
//!
//! The prior is flat on `theta` over the model domain and log-uniform on
//! `sigma`, so the target in `(theta, log sigma)` is
//! `-S(theta) / (2 sigma^2) - n log sigma`.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, ParamVector};
use crate::error::{Error, Result};
use crate::models::MeanFunction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub iterations: usize,
    pub burn_in: usize,
    /// Random-walk sd for each `theta_j` followed by `log sigma`; `None` uses
    /// `0.02 |init_j| + 1e-3` for `theta` and `0.021` for `log sigma`.
    pub proposal_sd: Option<Vec<f64>>,
    pub seed: u64,
    pub init: ParamVector,
    /// Starting `sigma`; `None` uses `sqrt(S(init) / n)`.
    pub sigma0: Option<f64>,
}

impl ChainSpec {
    pub fn new(init: ParamVector, seed: u64) -> Self {
        Self {
            iterations: 50_000,
            burn_in: 10_000,
            proposal_sd: None,
            seed,
            init,
            sigma0: None,
        }
    }

    pub fn default_proposal_sd(init: &ParamVector) -> Vec<f64> {
        init.as_slice()
            .iter()
            .map(|t| 0.02 * t.abs() + 1e-3)
            .chain(std::iter::once(0.021))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRow {
    pub iteration: usize,
    pub theta: Vec<f64>,
    pub sigma: f64,
    pub log_post: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Equal-tailed 2.5% and 97.5% quantiles.
    pub credible_intervals: Vec<(f64, f64)>,
    pub sigma_mean: f64,
    pub sigma_interval: (f64, f64),
    /// Fraction of accepted moves after burn-in.
    pub acceptance_rate: f64,
    pub ess: Vec<f64>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub summary: PosteriorSummary,
    /// Every iteration, burn-in included.
    pub chain: Vec<ChainRow>,
}

fn log_posterior<M: MeanFunction + ?Sized>(model: &M, data: &Dataset, theta: &[f64], log_sigma: f64) -> f64 {
    match data::residual_sum_squares(model, theta, data) {
        Ok(s) => {
            let sigma2 = (2.0 * log_sigma).exp();
            let v = -s / (2.0 * sigma2) - data.n() as f64 * log_sigma;
            if v.is_nan() { f64::NEG_INFINITY } else { v }
        }
        Err(_) => f64::NEG_INFINITY,
    }
}

pub fn metropolis_fit<M: MeanFunction + ?Sized>(model: &M, data: &Dataset, spec: &ChainSpec) -> Result<ChainOutput> {
    let p = model.n_params();
    if spec.init.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "init has length {}, model `{}` requires {p}",
            spec.init.len(),
            model.id()
        )));
    }
    if spec.burn_in >= spec.iterations {
        return Err(Error::InvalidInput("burn_in must be smaller than iterations".into()));
    }
    let sd = spec
        .proposal_sd
        .clone()
        .unwrap_or_else(|| ChainSpec::default_proposal_sd(&spec.init));
    if sd.len() != p + 1 || sd.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "proposal_sd needs {} positive entries",
            p + 1
        )));
    }
    let s0 = data::residual_sum_squares(model, spec.init.as_slice(), data)?;
    let sigma0 = match spec.sigma0 {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => return Err(Error::InvalidInput(format!("sigma0 must be positive, got {s}"))),
        None => (s0 / data.n() as f64).sqrt().max(1e-8),
    };

    let init: Vec<f64> = spec.init.as_slice().iter().copied().chain([sigma0.ln()]).collect();
    let target = |s: &[f64]| log_posterior(model, data, &s[..p], s[p]);
    let rw = random_walk_metropolis(target, &init, &sd, spec.iterations, spec.burn_in, spec.seed)?;
    let chain: Vec<ChainRow> = rw
        .states
        .iter()
        .zip(&rw.log_density)
        .enumerate()
        .map(|(it, (s, lp))| ChainRow {
            iteration: it,
            theta: s[..p].to_vec(),
            sigma: s[p].exp(),
            log_post: *lp,
        })
        .collect();
    let accepted_after_burn = rw.accepted_after_burn_in;

    let kept = &chain[spec.burn_in..];
    let m = kept.len();
    let acceptance_rate = accepted_after_burn as f64 / m as f64;
    if accepted_after_burn == 0 {
        return Err(Error::ZeroAcceptance);
    }
    let column = |j: usize| -> Vec<f64> { kept.iter().map(|r| r.theta[j]).collect() };
    let mut mean = Vec::with_capacity(p);
    let mut sdv = Vec::with_capacity(p);
    let mut intervals = Vec::with_capacity(p);
    let mut ess = Vec::with_capacity(p);
    for j in 0..p {
        let c = column(j);
        let (mu, var) = mean_var(&c);
        mean.push(mu);
        sdv.push(var.sqrt());
        intervals.push(equal_tailed(&c, 0.05));
        ess.push(effective_sample_size(&c));
    }
    let sig: Vec<f64> = kept.iter().map(|r| r.sigma).collect();
    Ok(ChainOutput {
        summary: PosteriorSummary {
            mean,
            sd: sdv,
            credible_intervals: intervals,
            sigma_mean: mean_var(&sig).0,
            sigma_interval: equal_tailed(&sig, 0.05),
            acceptance_rate,
            ess,
            samples: m,
        },
        chain,
    })
}

/// Raw output of [`random_walk_metropolis`].
#[derive(Debug, Clone, PartialEq)]
pub struct RandomWalkOutput {
    /// State after every iteration, burn-in included.
    pub states: Vec<Vec<f64>>,
    pub log_density: Vec<f64>,
    pub accepted_after_burn_in: usize,
}

/// Gaussian random-walk Metropolis on an unnormalized log density.
///
/// Proposals with non-finite log density are rejected. A proposal that
/// rounds back onto the current state is not counted as a move.
pub fn random_walk_metropolis<F: Fn(&[f64]) -> f64>(
    log_density: F,
    init: &[f64],
    proposal_sd: &[f64],
    iterations: usize,
    burn_in: usize,
    seed: u64,
) -> Result<RandomWalkOutput> {
    if proposal_sd.len() != init.len() {
        return Err(Error::DimensionMismatch("proposal_sd and init differ in length".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let unif = Uniform::new(0.0f64, 1.0).expect("valid uniform range");
    let mut state = init.to_vec();
    let mut lp = log_density(&state);
    if !lp.is_finite() {
        return Err(Error::InvalidInput("initial state has zero posterior density".into()));
    }
    let mut states = Vec::with_capacity(iterations);
    let mut densities = Vec::with_capacity(iterations);
    let mut accepted = 0usize;
    let mut proposal = vec![0.0; init.len()];
    for it in 0..iterations {
        for j in 0..init.len() {
            let z: f64 = StandardNormal.sample(&mut rng);
            proposal[j] = state[j] + proposal_sd[j] * z;
        }
        let u: f64 = unif.sample(&mut rng);
        if proposal != state {
            let lp_new = log_density(&proposal);
            if lp_new.is_finite() && u.ln() < lp_new - lp {
                state.copy_from_slice(&proposal);
                lp = lp_new;
                if it >= burn_in {
                    accepted += 1;
                }
            }
        }
        states.push(state.clone());
        densities.push(lp);
    }
    Ok(RandomWalkOutput {
        states,
        log_density: densities,
        accepted_after_burn_in: accepted,
    })
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = if x.len() > 1 {
        x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mu, var)
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `(alpha/2, 1 - alpha/2)` sample quantiles.
pub fn equal_tailed(x: &[f64], alpha: f64) -> (f64, f64) {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    (quantile(&s, alpha / 2.0), quantile(&s, 1.0 - alpha / 2.0))
}

/// Effective sample size from Geyer's initial positive sequence of
/// autocovariance pair sums. A constant chain has ESS 1.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let (mu, _) = mean_var(x);
    let d: Vec<f64> = x.iter().map(|v| v - mu).collect();
    let acov = |k: usize| d[..n - k].iter().zip(&d[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let g0 = acov(0);
    if g0 <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = acov(2 * m) + acov(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        m += 1;
    }
    let tau = (-1.0 + 2.0 * sum / g0).max(1.0 / n as f64);
    (n as f64 / tau).min(n as f64)
}
