use std::path::PathBuf;
use std::str::FromStr;

use clap::error::{ContextKind, ContextValue, ErrorKind};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nlfit_core::data::ParamVector;
use nlfit_core::glm::{Family, Link};
use nlfit_core::hetero::Kernel;
use nlfit_core::inference::RegionKind;
use nlfit_core::models::{MeanFunction, Model};
use nlfit_core::solvers::Method;

use crate::error::{CliError, CliResult};

const AFTER_HELP: &str = "\
Input CSV files have a header row. The last column is the response y and the
preceding columns are predictors. Set NLFIT_THREADS to allow more than one
worker thread (default 1); results do not depend on it.";

#[derive(Debug, Parser)]
#[command(name = "nlfit", version, about = "Nonlinear regression: fitting, confidence regions, curvature and simulation")]
#[command(after_help = AFTER_HELP, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Least-squares fit with Wald inference
    Fit {
        #[command(flatten)]
        model: ModelArgs,
        /// Fit with weights |mu|^-gamma refreshed to convergence
        #[arg(long)]
        gamma: Option<f64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Generalized linear model by IRLS; every non-response column is a predictor
    Glm {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        family: Option<String>,
        /// Defaults to the canonical link of the family
        #[arg(long)]
        link: Option<String>,
        #[arg(long)]
        no_intercept: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Wald or likelihood confidence region
    Region {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value_t = KindArg::Likelihood)]
        kind: KindArg,
        /// Skip the boundary; report the threshold and test --point values
        #[arg(long)]
        membership_only: bool,
        /// Parameter vector to test for membership (repeatable)
        #[arg(long = "point")]
        points: Vec<String>,
        /// Grid nodes per axis for likelihood contours
        #[arg(long, default_value_t = 201)]
        grid: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// RMS intrinsic and parameter-effects curvature at the estimate
    Curvature {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = nlfit_core::curvature::DEFAULT_DIRECTIONS)]
        directions: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Nadaraya-Watson kernel smoother
    Smooth {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        bandwidth: Option<f64>,
        #[arg(long, default_value = "gaussian")]
        kernel: String,
        /// Comma-separated query points; default is an even grid over the data range
        #[arg(long)]
        queries: Option<String>,
        #[arg(long, default_value_t = 101)]
        points: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Random-walk Metropolis posterior for (theta, sigma)
    Bayes {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        init: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 50_000)]
        iterations: usize,
        #[arg(long, default_value_t = 10_000)]
        burn_in: usize,
        /// Comma-separated sds for each theta_j and log sigma
        #[arg(long)]
        proposal_sd: Option<String>,
        #[arg(long)]
        sigma0: Option<f64>,
        /// Write the full chain as CSV
        #[arg(long)]
        chain: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Generate a synthetic Michaelis-Menten dataset
    Simulate {
        #[arg(long, value_enum, default_value_t = GeneratorArg::MmGamma)]
        generator: GeneratorArg,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Monte Carlo coverage of a joint confidence region
    Coverage {
        #[arg(long, value_enum, default_value_t = KindArg::Likelihood)]
        kind: KindArg,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 500)]
        reps: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Least squares versus posterior from a good and a bad start
    Table1 {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 50_000)]
        chain_iterations: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Wald and likelihood regions with their area difference
    Figure1 {
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[command(flatten)]
        out: OutArgs,
    },
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Model id, e.g. michaelis_menten
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated starting values
    #[arg(long)]
    init: Option<String>,
    #[arg(long, value_enum, default_value_t = SolverArg::Gn)]
    solver: SolverArg,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Debug, Args)]
struct OutArgs {
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    /// Write to a file instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverArg {
    Gn,
    Nr,
    Lm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Wald,
    Likelihood,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GeneratorArg {
    MmGamma,
    MmNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fit,
    Glm,
    Region,
    Curvature,
    Smooth,
    Bayes,
    Simulate,
    Coverage,
    Table1,
    Figure1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    MmGamma,
    MmNormal,
}

/// Command-specific settings. Fields not used by a command keep their defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct Extras {
    pub gamma: Option<f64>,
    pub family: Option<Family>,
    pub link: Option<Link>,
    pub intercept: bool,
    pub region_kind: RegionKind,
    pub membership_only: bool,
    pub points: Vec<ParamVector>,
    pub grid: usize,
    pub directions: usize,
    pub bandwidth: f64,
    pub kernel: Kernel,
    pub queries: Option<Vec<f64>>,
    pub query_points: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub proposal_sd: Option<Vec<f64>>,
    pub sigma0: Option<f64>,
    pub chain_path: Option<PathBuf>,
    pub generator: Generator,
    pub n: usize,
    pub reps: usize,
    pub chain_iterations: usize,
}

impl Default for Extras {
    fn default() -> Self {
        Self {
            gamma: None,
            family: None,
            link: None,
            intercept: true,
            region_kind: RegionKind::Likelihood,
            membership_only: false,
            points: Vec::new(),
            grid: 201,
            directions: nlfit_core::curvature::DEFAULT_DIRECTIONS,
            bandwidth: 1.0,
            kernel: Kernel::Gaussian,
            queries: None,
            query_points: 101,
            iterations: 50_000,
            burn_in: 10_000,
            proposal_sd: None,
            sigma0: None,
            chain_path: None,
            generator: Generator::MmGamma,
            n: 100,
            reps: 500,
            chain_iterations: 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub command: Command,
    pub input_path: Option<PathBuf>,
    pub model: Option<Model>,
    pub init: Option<ParamVector>,
    pub alpha: f64,
    pub format: OutputFormat,
    pub solver: Method,
    pub seed: Option<u64>,
    pub output_path: Option<PathBuf>,
    pub extras: Extras,
}

impl CliConfig {
    fn new(command: Command, format: OutputFormat) -> Self {
        Self {
            command,
            input_path: None,
            model: None,
            init: None,
            alpha: 0.05,
            format,
            solver: Method::GaussNewton,
            seed: None,
            output_path: None,
            extras: Extras::default(),
        }
    }
}

/// Parses `argv` (program name first) into a validated configuration.
pub fn parse_args<I, T>(argv: I) -> CliResult<CliConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(from_clap)?;
    build(cli.command)
}

fn from_clap(e: clap::Error) -> CliError {
    if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
        return CliError::Help(e.render().to_string());
    }
    let flag = match e.get(ContextKind::InvalidArg) {
        Some(ContextValue::String(s)) => s.split_whitespace().next().unwrap_or("").to_string(),
        Some(ContextValue::Strings(v)) => v.first().cloned().unwrap_or_default(),
        _ => match e.get(ContextKind::InvalidSubcommand) {
            Some(ContextValue::String(s)) => s.clone(),
            _ => "command".into(),
        },
    };
    let message = e.render().to_string();
    let first = message.lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
    CliError::Usage { flag, message: first }
}

fn formats(out: &OutArgs, allowed: &[OutputFormat], command: &str) -> CliResult<OutputFormat> {
    let f = out.format.unwrap_or(allowed[0]);
    if !allowed.contains(&f) {
        return Err(CliError::usage("--format", format!("`{command}` does not write {f:?} output").to_lowercase()));
    }
    Ok(f)
}

fn check_alpha(alpha: f64) -> CliResult<f64> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(alpha)
    } else {
        Err(CliError::usage("--alpha", format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

fn require<T>(v: Option<T>, flag: &str, command: &str) -> CliResult<T> {
    v.ok_or_else(|| CliError::usage(flag, format!("required by `{command}`")))
}

fn require_seed(seed: Option<u64>, command: &str) -> CliResult<u64> {
    seed.ok_or_else(|| CliError::usage("--seed", format!("required by `{command}`; no command draws ambient randomness")))
}

pub fn parse_reals(s: &str, flag: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::usage(flag, format!("`{t}` is not a finite number")))
        })
        .collect()
}

fn parse_model(id: &str) -> CliResult<Model> {
    Model::from_str(id).map_err(|_| CliError::usage("--model", format!("unknown model id `{id}`")))
}

fn params_for(model: &Model, s: &str, flag: &str) -> CliResult<ParamVector> {
    let v = parse_reals(s, flag)?;
    let p = model.n_params();
    if v.len() != p {
        let what = if flag == "--init" { "init" } else { "point" };
        return Err(CliError::usage(flag, format!("{what} length {}, model requires {p}", v.len())));
    }
    ParamVector::new(v).map_err(|e| CliError::usage(flag, e.to_string()))
}

fn positive(v: f64, flag: &str) -> CliResult<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::usage(flag, format!("must be a positive number, got {v}")))
    }
}

fn fill_model(cfg: &mut CliConfig, m: ModelArgs, command: &str) -> CliResult<()> {
    cfg.input_path = Some(require(m.data, "--data", command)?);
    let model = parse_model(&require(m.model, "--model", command)?)?;
    cfg.init = Some(params_for(&model, &require(m.init, "--init", command)?, "--init")?);
    cfg.model = Some(model);
    cfg.alpha = check_alpha(m.alpha)?;
    cfg.solver = match m.solver {
        SolverArg::Gn => Method::GaussNewton,
        SolverArg::Nr => Method::NewtonRaphson,
        SolverArg::Lm => Method::LevenbergMarquardt,
    };
    Ok(())
}

fn region_kind(k: KindArg) -> RegionKind {
    match k {
        KindArg::Wald => RegionKind::Wald,
        KindArg::Likelihood => RegionKind::Likelihood,
    }
}

fn build(cmd: Cmd) -> CliResult<CliConfig> {
    use OutputFormat::{Csv, Json};
    let cfg = match cmd {
        Cmd::Fit { model, gamma, out } => {
            let mut cfg = CliConfig::new(Command::Fit, formats(&out, &[Json, Csv], "fit")?);
            fill_model(&mut cfg, model, "fit")?;
            if let Some(g) = gamma {
                if !g.is_finite() {
                    return Err(CliError::usage("--gamma", "must be finite"));
                }
                if cfg.solver != Method::GaussNewton {
                    return Err(CliError::usage("--gamma", "weighted fits use --solver gn"));
                }
            }
            cfg.extras.gamma = gamma;
            cfg.output_path = out.output;
            cfg
        }
        Cmd::Glm { data, family, link, no_intercept, out } => {
            let mut cfg = CliConfig::new(Command::Glm, formats(&out, &[Json], "glm")?);
            cfg.input_path = Some(require(data, "--data", "glm")?);
            let family = Family::from_str(&require(family, "--family", "glm")?)
                .map_err(|e| CliError::usage("--family", e.to_string()))?;
            let link = match link {
                Some(l) => Link::from_str(&l).map_err(|e| CliError::usage("--link", e.to_string()))?,
                None => family.canonical_link(),
            };
            cfg.extras.family = Some(family);
            cfg.extras.link = Some(link);
            cfg.extras.intercept = !no_intercept;
            cfg.output_path = out.output;
            cfg
        }
        Cmd::Region { model, kind, membership_only, points, grid, out } => {
            let allowed: &[OutputFormat] = if membership_only { &[Json] } else { &[Csv, Json] };
            let name = if membership_only { "region --membership-only" } else { "region" };
            let mut cfg = CliConfig::new(Command::Region, formats(&out, allowed, name)?);
            if !points.is_empty() && cfg.format == Csv {
                return Err(CliError::usage("--point", "membership results need --format json"));
            }
            fill_model(&mut cfg, model, "region")?;
            let m = cfg.model.expect("set by fill_model");
            cfg.extras.points = points.iter().map(|s| params_for(&m, s, "--point")).collect::<CliResult<_>>()?;
            if grid < 3 {
                return Err(CliError::usage("--grid", format!("need at least 3 nodes per axis, got {grid}")));
            }
            cfg.extras.region_kind = region_kind(kind);
            cfg.extras.membership_only = membership_only;
            cfg.extras.grid = grid;
            cfg.output_path = out.output;
            cfg
        }
        Cmd::Curvature { model, directions, out } => {
            let mut cfg = CliConfig::new(Command::Curvature, formats(&out, &[Json], "curvature")?);
            fill_model(&mut cfg, model, "curvature")?;
            if directions == 0 {
                return Err(CliError::usage("--directions", "must be at least 1"));
            }
            cfg.extras.directions = directions;
            cfg.output_path = out.output;
            cfg
        }
        Cmd::Smooth { data, bandwidth, kernel, queries, points, out } => {
            let mut cfg = CliConfig::new(Command::Smooth, formats(&out, &[Csv, Json], "smooth")?);
            cfg.input_path = Some(require(data, "--data", "smooth")?);
            cfg.extras.bandwidth = positive(require(bandwidth, "--bandwidth", "smooth")?, "--bandwidth")?;
            cfg.extras.kernel = Kernel::from_str(&kernel).map_err(|e| CliError::usage("--kernel", e.to_string()))?;
            cfg.extras.queries = queries.map(|q| parse_reals(&q, "--queries")).transpose()?;
            if points < 2 {
                return Err(CliError::usage("--points", format!("need at least 2, got {points}")));
            }
            cfg.extras.query_points = points;
            cfg.output_path = out.output;
            cfg
        }
        Cmd::Bayes { data, model, init, seed, iterations, burn_in, proposal_sd, sigma0, chain, out } => {
            let mut cfg = CliConfig::new(Command::Bayes, formats(&out, &[Json], "bayes")?);
            cfg.input_path = Some(require(data, "--data", "bayes")?);
            let m = parse_model(&require(model, "--model", "bayes")?)?;
            cfg.init = Some(params_for(&m, &require(init, "--init", "bayes")?, "--init")?);
            cfg.model = Some(m);
            cfg.seed = Some(require_seed(seed, "bayes")?);
            if burn_in >= iterations {
                return Err(CliError::usage("--burn-in", format!("must be below --iterations ({iterations}), got {burn_in}")));
            }
            if let Some(s) = proposal_sd {
                let sd = parse_reals(&s, "--proposal-sd")?;
                if sd.len() != m.n_params() + 1 {
                    return Err(CliError::usage(
                        "--proposal-sd",
                        format!("proposal-sd length {}, model requires {} (theta and log sigma)", sd.len(), m.n_params() + 1),
                    ));
                }
                for v in &sd {
                    positive(*v, "--proposal-sd")?;
                }
                cfg.extras.proposal_sd = Some(sd);
            }
            cfg.extras.sigma0 = sigma0.map(|s| positive(s, "--sigma0")).transpose()?;
            cfg.extras.iterations = iterations;
            cfg.extras.burn_in = burn_in;
            cfg.extras.chain_path = chain;
            cfg.output_path = out.output;
            cfg
        }
        Cmd::Simulate { generator, n, seed, out } => {
            let mut cfg = CliConfig::new(Command::Simulate, formats(&out, &[Csv, Json], "simulate")?);
            cfg.seed = Some(require_seed(seed, "simulate")?);
            if n == 0 {
                return Err(CliError::usage("--n", "must be at least 1"));
            }
            cfg.extras.generator = match generator {
                GeneratorArg::MmGamma => Generator::MmGamma,
                GeneratorArg::MmNormal => Generator::MmNormal,
            };
            cfg.extras.n = n;
            cfg.output_path = out.output;
            cfg
        }
        Cmd::Coverage { kind, n, reps, alpha, seed, out } => {
            let mut cfg = CliConfig::new(Command::Coverage, formats(&out, &[Json], "coverage")?);
            cfg.seed = Some(require_seed(seed, "coverage")?);
            cfg.alpha = check_alpha(alpha)?;
            if reps < 100 {
                return Err(CliError::usage("--reps", format!("need at least 100 replications, got {reps}")));
            }
            cfg.extras.region_kind = region_kind(kind);
            cfg.extras.n = n;
            cfg.extras.reps = reps;
            cfg.output_path = out.output;
            cfg
        }
        Cmd::Table1 { seed, chain_iterations, out } => {
            let mut cfg = CliConfig::new(Command::Table1, formats(&out, &[Json], "table1")?);
            cfg.seed = Some(require_seed(seed, "table1")?);
            if chain_iterations < 5 {
                return Err(CliError::usage("--chain-iterations", format!("need at least 5, got {chain_iterations}")));
            }
            cfg.extras.chain_iterations = chain_iterations;
            cfg.output_path = out.output;
            cfg
        }
        Cmd::Figure1 { n, seed, alpha, out } => {
            let mut cfg = CliConfig::new(Command::Figure1, formats(&out, &[Json], "figure1")?);
            cfg.seed = Some(require_seed(seed, "figure1")?);
            cfg.alpha = check_alpha(alpha)?;
            cfg.extras.n = n;
            cfg.output_path = out.output;
            cfg
        }
    };
    Ok(cfg)
}
