//! `corrfield` command-line front end.
//!
//! Every command writes one JSON document (`--format json`, the default) or
//! CSV table to `--out` (`-` is standard output). JSON output is wrapped in
//! an envelope `{command, version, settings, result}` where `settings` lists
//! every effective input, defaults included. Errors go to standard error as
//! `{"error": kind, "message": ...}`.
//!
//! Exit codes: 0 success, 1 a validation check failed, 2 invalid input,
//! 3 numerical failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config_opt::{self, SweepResult};
use crate::error::Error;
use crate::field_model::{db_to_linear, CorrelationCoefficient, FieldParams, SensorLayout};
use crate::kalman_exponent::{exponent, periodic_exponent, ExponentResult};
use crate::mc_detector::{self, LayoutFamily, RateModel, ValidationConfig};
use crate::parallel::{with_thread_cap, Execution};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "corrfield", version, about = "Sensor activation for detecting a correlated Gauss-Markov field")]
pub struct Cli {
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Output file; `-` writes to standard output.
    #[arg(long, global = true, default_value = "-")]
    pub out: String,
    /// Upper bound on worker threads.
    #[arg(long, global = true, env = "CORRFIELD_THREADS")]
    pub threads: Option<usize>,
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form error exponent of one layout.
    Exponent {
        #[command(flatten)]
        field: FieldArgs,
        #[command(flatten)]
        layout: LayoutArgs,
    },
    /// Optimal correlation and spacing of the uniform layout (SNR < 1).
    Optimize {
        #[command(flatten)]
        field: FieldArgs,
    },
    /// Exponent over a parameter grid.
    Sweep(SweepArgs),
    /// Monte Carlo miss probabilities of the optimal detector.
    Simulate {
        #[command(flatten)]
        field: FieldArgs,
        #[command(flatten)]
        layout: LayoutArgs,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Compare simulated decay rates with the closed form.
    Validate {
        #[command(flatten)]
        field: FieldArgs,
        #[command(flatten)]
        layout: LayoutArgs,
        #[command(flatten)]
        mc: McArgs,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct FieldArgs {
    /// JSON experiment file; explicit flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Diffusion rate A [default: 1].
    #[arg(long = "A", value_name = "RATE")]
    pub diffusion_rate: Option<f64>,
    /// SNR in dB.
    #[arg(long, conflicts_with = "snr", allow_hyphen_values = true)]
    pub snr_db: Option<f64>,
    /// Linear SNR.
    #[arg(long)]
    pub snr: Option<f64>,
    /// Per-sensor noise variance [default: 1].
    #[arg(long)]
    pub noise_variance: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct LayoutArgs {
    /// Uniform layout spacing.
    #[arg(long)]
    pub spacing: Option<f64>,
    /// Uniform sensor count [default: 1].
    #[arg(long)]
    pub count: Option<usize>,
    /// Clustered layout: sensors per cluster.
    #[arg(long)]
    pub cluster_size: Option<usize>,
    /// Clustered layout: number of clusters [default: 1].
    #[arg(long)]
    pub cluster_count: Option<usize>,
    /// Clustered layout: cluster period.
    #[arg(long)]
    pub period: Option<f64>,
    /// Periodic layout: comma-separated gaps within one period.
    #[arg(long, value_delimiter = ',')]
    pub offsets: Option<Vec<f64>>,
    /// Periodic layout: number of periods [default: 1].
    #[arg(long)]
    pub period_count: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct McArgs {
    /// Detector sizes (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
    /// Sensor counts (comma-separated, increasing).
    #[arg(long, value_delimiter = ',')]
    pub n_values: Option<Vec<usize>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Allowed relative deviation of fitted from closed-form rates.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long, value_enum)]
    pub rate_model: Option<RateModelArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RateModelArg {
    SecondOrder,
    ThirdOrder,
    Linear,
}

impl From<RateModelArg> for RateModel {
    fn from(m: RateModelArg) -> Self {
        match m {
            RateModelArg::ThirdOrder => RateModel::ThirdOrder,
            RateModelArg::SecondOrder => RateModel::SecondOrder,
            RateModelArg::Linear => RateModel::Linear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    /// Correlation a of the uniform layout.
    A,
    /// SNR at fixed correlation.
    Snr,
    /// Cluster size M.
    Cluster,
    /// First offset for two sensors per period.
    Delta1,
    /// Positions (x2, x3) for three sensors per period.
    X2x3,
    /// Sensor count over a fixed field.
    Field,
    /// Optimal spacing against SNR.
    Optimal,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub axis: Axis,
    #[command(flatten)]
    pub field: FieldArgs,
    /// Sensors per period; must match the axis (2 for delta1, 3 for x2x3).
    #[arg(long)]
    pub m: Option<usize>,
    /// Period of the offset sweeps.
    #[arg(long)]
    pub period: Option<f64>,
    /// Grid points per axis [default: 201, or 61 for x2x3].
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Grid start (a, or SNR in dB).
    #[arg(long, allow_hyphen_values = true)]
    pub lo: Option<f64>,
    /// Grid end (a, or SNR in dB).
    #[arg(long, allow_hyphen_values = true)]
    pub hi: Option<f64>,
    /// Correlation held fixed on the snr axis [default: 0.5].
    #[arg(long)]
    pub a: Option<f64>,
    /// Sensor count in exp(-n K) [default: 100].
    #[arg(long)]
    pub n_sensors: Option<usize>,
    /// Field length for the cluster and field axes [default: 1].
    #[arg(long)]
    pub field_length: Option<f64>,
    /// Total sensors for the cluster axis [default: 100].
    #[arg(long)]
    pub n_total: Option<usize>,
    /// Cluster sizes [default: 1,2,4,5,10].
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Sensor counts for the field axis [default: 10..=100].
    #[arg(long, value_delimiter = ',')]
    pub n_values: Option<Vec<usize>>,
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub diffusion_rate: f64,
    pub stationary_variance: f64,
    pub noise_variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<SensorLayout>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<MonteCarloConfig>,
}

impl ExperimentConfig {
    pub fn field(&self) -> FieldParams {
        FieldParams {
            diffusion_rate: self.diffusion_rate,
            stationary_variance: self.stationary_variance,
            noise_variance: self.noise_variance,
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    #[serde(default)]
    pub alphas: Option<Vec<f64>>,
    #[serde(default)]
    pub n_values: Option<Vec<usize>>,
    #[serde(default)]
    pub trials: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub rate_model: Option<RateModel>,
}

#[derive(Debug)]
pub enum CliError {
    Lib(Error),
    Io(String),
    Config(String),
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Lib(e) if e.is_numeric() => EXIT_NUMERIC,
            _ => EXIT_INVALID,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Lib(e) => e.kind(),
            CliError::Io(_) => "io",
            CliError::Config(_) => "invalid_config",
            CliError::Usage(_) => "usage",
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Lib(e) => e.to_string(),
            CliError::Io(m) | CliError::Config(m) | CliError::Usage(m) => m.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        json!({ "error": self.kind(), "message": self.message() }).to_string()
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Rendered output of a successful command.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub text: String,
    /// False when a validation check failed.
    pub passed: bool,
}

fn load_config(path: &Option<PathBuf>) -> CliResult<Option<ExperimentConfig>> {
    path.as_deref().map(ExperimentConfig::from_path).transpose()
}

fn resolve_field(args: &FieldArgs, config: Option<&ExperimentConfig>) -> CliResult<FieldParams> {
    let base = config.map(ExperimentConfig::field);
    let noise = args
        .noise_variance
        .or(base.map(|b| b.noise_variance))
        .unwrap_or(1.0);
    let rate = args
        .diffusion_rate
        .or(base.map(|b| b.diffusion_rate))
        .unwrap_or(1.0);
    let snr = match (args.snr, args.snr_db) {
        (Some(s), _) => Some(s),
        (None, Some(db)) => Some(db_to_linear(db)),
        (None, None) => None,
    };
    let pi0 = match (snr, base) {
        (Some(s), _) => s * noise,
        (None, Some(b)) => b.stationary_variance,
        (None, None) => return Err(CliError::Usage("one of --snr-db, --snr or --config is required".into())),
    };
    Ok(FieldParams::new(rate, pi0, noise)?)
}

fn resolve_layout(args: &LayoutArgs, config: Option<&ExperimentConfig>) -> CliResult<SensorLayout> {
    let layout = if let Some(offsets) = &args.offsets {
        SensorLayout::Periodic {
            offsets: offsets.clone(),
            period_count: args.period_count.unwrap_or(1),
        }
    } else if let Some(m) = args.cluster_size {
        SensorLayout::Clustered {
            cluster_size: m,
            cluster_count: args.cluster_count.unwrap_or(1),
            period: args
                .period
                .ok_or_else(|| CliError::Usage("--cluster-size needs --period".into()))?,
        }
    } else if let Some(spacing) = args.spacing {
        SensorLayout::Uniform {
            spacing,
            count: args.count.unwrap_or(1),
        }
    } else if let Some(layout) = config.and_then(|c| c.layout.clone()) {
        layout
    } else {
        return Err(CliError::Usage(
            "a layout is required: --spacing, --cluster-size/--period, --offsets or a config layout".into(),
        ));
    };
    layout.validate()?;
    Ok(layout)
}

/// Family of growing layouts with the same geometry as `layout`.
pub fn family_of(layout: &SensorLayout) -> LayoutFamily {
    match layout {
        SensorLayout::Uniform { spacing, .. } => LayoutFamily::FixedSpacing { spacing: *spacing },
        SensorLayout::Clustered { cluster_size, period, .. } => LayoutFamily::Clustered {
            cluster_size: *cluster_size,
            period: *period,
        },
        SensorLayout::Periodic { offsets, .. } => LayoutFamily::Periodic { offsets: offsets.clone() },
    }
}

fn resolve_mc(args: &McArgs, config: Option<&ExperimentConfig>, default_alphas: &[f64]) -> CliResult<ValidationConfig> {
    let base = config.and_then(|c| c.monte_carlo.clone());
    let n_values = args
        .n_values
        .clone()
        .or_else(|| base.as_ref().and_then(|b| b.n_values.clone()))
        .ok_or_else(|| CliError::Usage("--n-values (or monte_carlo.n_values) is required".into()))?;
    let mut cfg = ValidationConfig::new(n_values);
    cfg.alphas = args
        .alpha
        .clone()
        .or_else(|| base.as_ref().and_then(|b| b.alphas.clone()))
        .unwrap_or_else(|| default_alphas.to_vec());
    cfg.trials = args.trials.or(base.as_ref().and_then(|b| b.trials)).unwrap_or(mc_detector::DEFAULT_TRIALS);
    cfg.seed = args.seed.or(base.as_ref().and_then(|b| b.seed)).unwrap_or(0);
    cfg.tolerance = args
        .tolerance
        .or(base.as_ref().and_then(|b| b.tolerance))
        .unwrap_or(mc_detector::DEFAULT_TOLERANCE);
    cfg.rate_model = args
        .rate_model
        .map(RateModel::from)
        .or(base.as_ref().and_then(|b| b.rate_model))
        .unwrap_or_default();
    Ok(cfg)
}

fn envelope(command: &str, settings: Value, result: impl Serialize) -> CliResult<String> {
    let doc = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "settings": settings,
        "result": result,
    });
    let mut s = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Lib(Error::Numeric(e.to_string())))?;
    s.push('\n');
    Ok(s)
}

fn csv_with_settings(settings: &Value, body: &str) -> String {
    format!("# settings: {settings}\n{body}")
}

#[derive(Debug, Clone, Serialize)]
struct ExponentOutput {
    exponent: ExponentResult,
    /// For clustered layouts: the same exponent from the periodic model with
    /// offsets `[0, ..., 0, period]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    periodic_cross_check: Option<PeriodicCrossCheck>,
}

#[derive(Debug, Clone, Serialize)]
struct PeriodicCrossCheck {
    exponent_per_sensor: f64,
    difference: f64,
}

fn cmd_exponent(cli: &Cli, field: &FieldArgs, layout: &LayoutArgs) -> CliResult<Outcome> {
    let config = load_config(&field.config)?;
    let params = resolve_field(field, config.as_ref())?;
    let layout = resolve_layout(layout, config.as_ref())?;
    let result = exponent(&params, &layout)?;
    let periodic_cross_check = match &layout {
        SensorLayout::Clustered { cluster_size, period, .. } => {
            let mut offsets = vec![0.0; *cluster_size];
            offsets[cluster_size - 1] = *period;
            let v = periodic_exponent(&params, &offsets)?.exponent_per_sensor;
            Some(PeriodicCrossCheck {
                exponent_per_sensor: v,
                difference: v - result.exponent_per_sensor,
            })
        }
        _ => None,
    };
    let settings = json!({ "field": params, "layout": layout });
    let text = match cli.format {
        Format::Json => envelope(
            "exponent",
            settings,
            ExponentOutput {
                exponent: result,
                periodic_cross_check,
            },
        )?,
        Format::Csv => {
            let mut body = String::from("exponent_per_sensor,exponent_per_block,sensors_per_block,periodic_exponent_per_sensor\n");
            body.push_str(&format!(
                "{},{},{},{}\n",
                result.exponent_per_sensor,
                result.exponent_per_block,
                result.sensors_per_block,
                periodic_cross_check.map_or(String::new(), |c| c.exponent_per_sensor.to_string())
            ));
            csv_with_settings(&settings, &body)
        }
    };
    Ok(Outcome { text, passed: true })
}

fn cmd_optimize(cli: &Cli, field: &FieldArgs) -> CliResult<Outcome> {
    let config = load_config(&field.config)?;
    let params = resolve_field(field, config.as_ref())?;
    let result = if params.diffusion_rate > 0.0 {
        config_opt::optimal_spacing(&params)?
    } else {
        config_opt::optimal_correlation(&params)?
    };
    let settings = json!({
        "field": params,
        "correlation_grid_step": config_opt::CORRELATION_GRID_STEP,
        "root_residual_tol": config_opt::ROOT_RESIDUAL_TOL,
    });
    let text = match cli.format {
        Format::Json => envelope("optimize", settings, &result)?,
        Format::Csv => {
            let body = format!(
                "a_star,delta_star,residual,exponent_at_optimum,grid_argmax\n{},{},{},{},{}\n",
                result.a_star,
                result.delta_star.map_or(String::new(), |d| d.to_string()),
                result.residual,
                result.exponent_at_optimum,
                result.grid_argmax
            );
            csv_with_settings(&settings, &body)
        }
    };
    Ok(Outcome { text, passed: true })
}

fn require_m(args: &SweepArgs, expected: usize) -> CliResult<()> {
    match args.m {
        Some(m) if m != expected => Err(CliError::Usage(format!(
            "axis {:?} needs --m {expected}, got {m}",
            args.axis
        ))),
        _ => Ok(()),
    }
}

fn require_period(args: &SweepArgs) -> CliResult<f64> {
    args.period
        .ok_or_else(|| CliError::Usage("--period is required for offset sweeps".into()))
}

fn cmd_sweep(cli: &Cli, args: &SweepArgs, exec: Execution) -> CliResult<Outcome> {
    let config = load_config(&args.field.config)?;
    let n_sensors = args.n_sensors.unwrap_or(config_opt::DEFAULT_SENSOR_COUNT);
    let grid_points = args.grid_points.unwrap_or(match args.axis {
        Axis::X2x3 => config_opt::DEFAULT_M3_GRID_POINTS,
        Axis::Optimal => 48,
        _ => config_opt::DEFAULT_GRID_POINTS,
    });
    let (result, settings): (SweepResult, Value) = match args.axis {
        Axis::A => {
            let params = resolve_field(&args.field, config.as_ref())?;
            let (lo, hi) = (args.lo.unwrap_or(0.0), args.hi.unwrap_or(1.0));
            let grid = config_opt::linspace(lo, hi, grid_points);
            let r = config_opt::correlation_sweep(&params, &grid, n_sensors, exec)?;
            (r, json!({"field": params, "lo": lo, "hi": hi, "grid_points": grid_points, "n_sensors": n_sensors}))
        }
        Axis::Snr => {
            let a = args.a.unwrap_or(0.5);
            let (lo, hi) = (args.lo.unwrap_or(-20.0), args.hi.unwrap_or(30.0));
            let grid: Vec<f64> = config_opt::linspace(lo, hi, grid_points)
                .into_iter()
                .map(db_to_linear)
                .collect();
            let r = config_opt::snr_sweep(CorrelationCoefficient::new(a)?, &grid, n_sensors, exec)?;
            (
                r,
                json!({"a": a, "lo_db": lo, "hi_db": hi, "grid_points": grid_points, "n_sensors": n_sensors}),
            )
        }
        Axis::Cluster => {
            let params = resolve_field(&args.field, config.as_ref())?;
            let field_length = args.field_length.unwrap_or(1.0);
            let n_total = args.n_total.unwrap_or(100);
            let sizes = args.sizes.clone().unwrap_or_else(|| vec![1, 2, 4, 5, 10]);
            let r = config_opt::cluster_size_sweep(&params, field_length, n_total, &sizes)?;
            (
                r,
                json!({"field": params, "field_length": field_length, "n_total": n_total, "sizes": sizes}),
            )
        }
        Axis::Delta1 => {
            require_m(args, 2)?;
            let params = resolve_field(&args.field, config.as_ref())?;
            let period = require_period(args)?;
            let r = config_opt::offset_sweep_m2(&params, period, grid_points, n_sensors, exec)?;
            (
                r,
                json!({"field": params, "m": 2, "period": period, "grid_points": grid_points, "n_sensors": n_sensors}),
            )
        }
        Axis::X2x3 => {
            require_m(args, 3)?;
            let params = resolve_field(&args.field, config.as_ref())?;
            let period = require_period(args)?;
            let r = config_opt::offset_sweep_m3(&params, period, grid_points, n_sensors, exec)?;
            (
                r,
                json!({"field": params, "m": 3, "period": period, "grid_points": grid_points, "n_sensors": n_sensors}),
            )
        }
        Axis::Field => {
            let params = resolve_field(&args.field, config.as_ref())?;
            let field_length = args.field_length.unwrap_or(1.0);
            let n_values = args.n_values.clone().unwrap_or_else(|| (10..=100).collect());
            let r = config_opt::field_sensor_sweep(&params, field_length, &n_values)?;
            (r, json!({"field": params, "field_length": field_length, "n_values": n_values}))
        }
        Axis::Optimal => {
            let rate = args
                .field
                .diffusion_rate
                .or(config.as_ref().map(|c| c.diffusion_rate))
                .unwrap_or(1.0);
            let (lo, hi) = (args.lo.unwrap_or(-12.0), args.hi.unwrap_or(-0.25));
            let grid: Vec<f64> = config_opt::linspace(lo, hi, grid_points)
                .into_iter()
                .map(db_to_linear)
                .collect();
            let r = config_opt::optimal_spacing_sweep(rate, &grid, exec)?;
            (r, json!({"diffusion_rate": rate, "lo_db": lo, "hi_db": hi, "grid_points": grid_points}))
        }
    };
    let text = match cli.format {
        Format::Json => envelope("sweep", settings, &result)?,
        Format::Csv => csv_with_settings(&settings, &result.to_csv()),
    };
    Ok(Outcome { text, passed: true })
}

fn cmd_simulate(cli: &Cli, field: &FieldArgs, layout: &LayoutArgs, mc: &McArgs, exec: Execution) -> CliResult<Outcome> {
    let config = load_config(&field.config)?;
    let params = resolve_field(field, config.as_ref())?;
    let layout = resolve_layout(layout, config.as_ref())?;
    let cfg = resolve_mc(mc, config.as_ref(), &[0.1])?;
    let family = family_of(&layout);
    let estimates = mc_detector::estimate_miss_probabilities(
        &params,
        &family,
        &cfg.alphas,
        &cfg.n_values,
        cfg.trials,
        cfg.seed,
        cfg.rate_model,
        exec,
    )?;
    let settings = json!({
        "field": params,
        "family": family,
        "monte_carlo": cfg,
        "min_misses_for_fit": mc_detector::MIN_MISSES_FOR_FIT,
        "max_miss_prob_for_fit": mc_detector::MAX_MISS_PROB_FOR_FIT,
    });
    let text = match cli.format {
        Format::Json => envelope("simulate", settings, &estimates)?,
        Format::Csv => {
            let mut body = String::new();
            for (i, e) in estimates.iter().enumerate() {
                let csv = e.to_csv();
                body.push_str(if i == 0 { &csv } else { csv.split_once('\n').map_or("", |(_, rest)| rest) });
            }
            csv_with_settings(&settings, &body)
        }
    };
    Ok(Outcome { text, passed: true })
}

fn cmd_validate(cli: &Cli, field: &FieldArgs, layout: &LayoutArgs, mc: &McArgs, exec: Execution) -> CliResult<Outcome> {
    let config = load_config(&field.config)?;
    let params = resolve_field(field, config.as_ref())?;
    let layout = resolve_layout(layout, config.as_ref())?;
    let cfg = resolve_mc(mc, config.as_ref(), &mc_detector::DEFAULT_ALPHAS)?;
    let family = family_of(&layout);
    let closed = family.closed_form(&params)?;
    let report = mc_detector::validate_exponent(&params, &family, &closed, &cfg, exec)?;
    let settings = json!({
        "field": params,
        "family": family,
        "monte_carlo": cfg,
        "min_misses_for_fit": mc_detector::MIN_MISSES_FOR_FIT,
        "max_miss_prob_for_fit": mc_detector::MAX_MISS_PROB_FOR_FIT,
        "polynomial_slope": mc_detector::POLYNOMIAL_SLOPE,
        "polynomial_slope_tol": mc_detector::POLYNOMIAL_SLOPE_TOL,
    });
    let text = match cli.format {
        Format::Json => envelope("validate", settings, &report)?,
        Format::Csv => {
            let mut body =
                String::from("alpha,regime,closed_form_rate,fitted_rate,std_error,relative_deviation,log_log_slope,pass\n");
            let fmt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
            for c in &report.checks {
                body.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    c.alpha,
                    match report.regime {
                        mc_detector::Regime::Exponential => "exponential",
                        mc_detector::Regime::Polynomial => "polynomial",
                    },
                    report.closed_form_rate,
                    fmt(c.fit.as_ref().map(|f| f.rate)),
                    fmt(c.fit.as_ref().map(|f| f.std_error)),
                    fmt(c.relative_deviation),
                    fmt(c.polynomial.as_ref().map(|p| p.slope)),
                    u8::from(c.pass)
                ));
            }
            csv_with_settings(&settings, &body)
        }
    };
    Ok(Outcome {
        text,
        passed: report.pass,
    })
}

/// Runs a parsed command and renders its output.
pub fn run(cli: &Cli) -> CliResult<Outcome> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    with_thread_cap(cli.threads, || match &cli.command {
        Command::Exponent { field, layout } => cmd_exponent(cli, field, layout),
        Command::Optimize { field } => cmd_optimize(cli, field),
        Command::Sweep(args) => cmd_sweep(cli, args, exec),
        Command::Simulate { field, layout, mc } => cmd_simulate(cli, field, layout, mc, exec),
        Command::Validate { field, layout, mc } => cmd_validate(cli, field, layout, mc, exec),
    })
}

fn write_output(out: &str, text: &str) -> CliResult<()> {
    if out == "-" {
        let mut stdout = std::io::stdout().lock();
        stdout
            .write_all(text.as_bytes())
            .and_then(|_| stdout.flush())
            .map_err(|e| CliError::Io(e.to_string()))
    } else {
        std::fs::write(out, text).map_err(|e| CliError::Io(format!("cannot write {out}: {e}")))
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let err = CliError::Usage(e.to_string().trim_end().to_string());
            eprintln!("{}", err.to_json());
            return EXIT_INVALID;
        }
    };
    let result = run(&cli).and_then(|outcome| write_output(&cli.out, &outcome.text).map(|_| outcome));
    match result {
        Ok(o) if o.passed => EXIT_OK,
        Ok(_) => EXIT_CHECK_FAILED,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("corrfield").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn snr_flags_are_exclusive() {
        let r = Cli::try_parse_from(["corrfield", "optimize", "--snr-db", "-3", "--snr", "0.5"]);
        assert!(r.is_err());
    }

    #[test]
    fn field_from_flags() {
        let cli = parse(&["optimize", "--snr-db", "-3", "--A", "2"]);
        let Command::Optimize { field } = &cli.command else { panic!() };
        let p = resolve_field(field, None).unwrap();
        assert_eq!(p.diffusion_rate, 2.0);
        assert!((p.snr() - 0.501187).abs() < 1e-6);
    }

    #[test]
    fn missing_snr_is_usage_error() {
        let cli = parse(&["optimize"]);
        let Command::Optimize { field } = &cli.command else { panic!() };
        let e = resolve_field(field, None).unwrap_err();
        assert_eq!(e.exit_code(), EXIT_INVALID);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let bad = r#"{"diffusion_rate":1,"stationary_variance":1,"noise_variance":1,"colour":"red"}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(bad).is_err());
    }

    #[test]
    fn numeric_errors_map_to_exit_3() {
        assert_eq!(CliError::Lib(Error::Numeric("x".into())).exit_code(), EXIT_NUMERIC);
        assert_eq!(CliError::Lib(Error::Domain("x".into())).exit_code(), EXIT_INVALID);
    }

    #[test]
    fn layout_flags_pick_kind() {
        let cli = parse(&["exponent", "--snr", "1", "--offsets", "0.1,0.2", "--period-count", "3"]);
        let Command::Exponent { layout, .. } = &cli.command else { panic!() };
        assert_eq!(
            resolve_layout(layout, None).unwrap(),
            SensorLayout::Periodic {
                offsets: vec![0.1, 0.2],
                period_count: 3
            }
        );
    }
}
