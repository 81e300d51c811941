//! Monte Carlo check of the closed-form exponents.
//!
//! The exact Neyman-Pearson statistic is the log-likelihood ratio of the
//! Gauss-Markov signal-plus-noise model against white noise. It is computed
//! from the innovations of the (time-varying) H1 Kalman filter, with a dense
//! Cholesky evaluation kept as an oracle for small `n`. Thresholds are
//! empirical H0 quantiles, so every test has exact finite-`n` size.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_model::{signal_covariance, FieldParams, Hypothesis, SensorLayout, SignalModel};
use crate::kalman_exponent::{clustering_exponent, periodic_exponent, scalar_exponent, ExponentResult};
use crate::parallel::Execution;
use crate::rng::{stream_rng, trial_domain};

pub const MIN_TRIALS: usize = 10_000;
pub const DEFAULT_TRIALS: usize = 100_000;
pub const MAX_DIRECT_SENSORS: usize = 2000;
/// Points with fewer misses than this are left out of rate fits.
pub const MIN_MISSES_FOR_FIT: usize = 50;
/// Points where a miss is not yet rare are left out of rate fits.
pub const MAX_MISS_PROB_FOR_FIT: f64 = 0.2;
pub const DEFAULT_TOLERANCE: f64 = 0.2;
pub const DEFAULT_ALPHAS: [f64; 2] = [0.05, 0.2];
/// Expected log-log slope of the miss probability when the exponent is zero.
pub const POLYNOMIAL_SLOPE: f64 = -0.5;
pub const POLYNOMIAL_SLOPE_TOL: f64 = 0.15;
const Z95: f64 = 1.959_963_984_540_054;

/// Precomputed time-varying Kalman filter for one layout under H1.
#[derive(Debug, Clone)]
pub struct InnovationsFilter {
    correlations: Vec<f64>,
    gains: Vec<f64>,
    inv_innovation_var: Vec<f64>,
    inv_noise: f64,
    /// `sum ln(R_e,i / sigma^2)`
    log_det_ratio: f64,
}

impl InnovationsFilter {
    pub fn new(params: &FieldParams, layout: &SensorLayout) -> Result<Self> {
        params.validate()?;
        layout.validate()?;
        let n = layout.total_sensors();
        let noise = params.noise_variance;
        let pi0 = params.stationary_variance;
        let gaps = layout.gaps();
        let correlations: Vec<f64> = gaps
            .iter()
            .map(|&g| (-params.diffusion_rate * g).exp())
            .collect();
        let mut gains = Vec::with_capacity(n);
        let mut inv_innovation_var = Vec::with_capacity(n);
        let mut log_det_ratio = 0.0;
        let mut p = pi0;
        for i in 0..n {
            let r_e = p + noise;
            gains.push(p / r_e);
            inv_innovation_var.push(1.0 / r_e);
            log_det_ratio += (p / noise).ln_1p();
            if i + 1 < n {
                let a = correlations[i];
                let q = pi0 * -(-2.0 * params.diffusion_rate * gaps[i]).exp_m1();
                p = a * a * p * noise / r_e + q;
            }
        }
        Ok(InnovationsFilter {
            correlations,
            gains,
            inv_innovation_var,
            inv_noise: 1.0 / noise,
            log_det_ratio,
        })
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    /// LLR of the samples `feed` pushes into the sink, in sensor order.
    /// `feed` must push exactly [`len`](Self::len) values.
    pub fn llr_streaming(&self, feed: impl FnOnce(&mut dyn FnMut(f64))) -> f64 {
        let n = self.len();
        let mut i = 0;
        let mut predicted = 0.0;
        let mut quad = 0.0;
        let mut sink = |y: f64| {
            let e = y - predicted;
            quad += e * e * self.inv_innovation_var[i] - y * y * self.inv_noise;
            let filtered = predicted + self.gains[i] * e;
            if i + 1 < n {
                predicted = self.correlations[i] * filtered;
            }
            i += 1;
        };
        feed(&mut sink);
        debug_assert_eq!(i, n);
        -0.5 * (self.log_det_ratio + quad)
    }

    pub fn llr(&self, observations: &[f64]) -> Result<f64> {
        if observations.len() != self.len() {
            return Err(Error::invalid(format!(
                "expected {} observations, got {}",
                self.len(),
                observations.len()
            )));
        }
        Ok(self.llr_streaming(|sink| observations.iter().for_each(|&y| sink(y))))
    }
}

/// `ln p(y | H1) - ln p(y | H0)` through the innovations of the H1 Kalman filter.
pub fn llr_innovations(params: &FieldParams, layout: &SensorLayout, observations: &[f64]) -> Result<f64> {
    InnovationsFilter::new(params, layout)?.llr(observations)
}

/// The same ratio from the dense H1 covariance (Cholesky); `n <= 2000`.
pub fn llr_direct(params: &FieldParams, layout: &SensorLayout, observations: &[f64]) -> Result<f64> {
    let n = layout.total_sensors();
    if n > MAX_DIRECT_SENSORS {
        return Err(Error::invalid(format!(
            "direct evaluation limited to {MAX_DIRECT_SENSORS} sensors, got {n}"
        )));
    }
    if observations.len() != n {
        return Err(Error::invalid(format!("expected {n} observations, got {}", observations.len())));
    }
    let noise = params.noise_variance;
    let sigma1 = signal_covariance(params, layout)? + DMatrix::identity(n, n) * noise;
    let chol = sigma1
        .cholesky()
        .ok_or_else(|| Error::Numeric("H1 covariance not positive definite".into()))?;
    let l = chol.l();
    let log_det: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let y = DVector::from_column_slice(observations);
    let z = l
        .solve_lower_triangular(&y)
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    let quad1 = z.norm_squared();
    let quad0 = y.norm_squared() / noise;
    Ok(-0.5 * (log_det - n as f64 * noise.ln()) - 0.5 * quad1 + 0.5 * quad0)
}

/// Sensor layouts indexed by the total sensor count `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayoutFamily {
    /// `n` sensors at fixed spacing.
    FixedSpacing { spacing: f64 },
    /// Clusters of `cluster_size`; `n` must be a multiple of it.
    Clustered { cluster_size: usize, period: f64 },
    /// Repeated offset pattern; `n` must be a multiple of its length.
    Periodic { offsets: Vec<f64> },
    /// All `n` sensors at one point.
    CoLocated,
}

impl LayoutFamily {
    pub fn layout(&self, n: usize) -> Result<SensorLayout> {
        if n == 0 {
            return Err(Error::invalid("sensor count must be >= 1"));
        }
        let layout = match self {
            LayoutFamily::FixedSpacing { spacing } => SensorLayout::Uniform {
                spacing: *spacing,
                count: n,
            },
            LayoutFamily::Clustered { cluster_size, period } => {
                if *cluster_size == 0 || n % cluster_size != 0 {
                    return Err(Error::invalid(format!("n = {n} is not a multiple of cluster_size {cluster_size}")));
                }
                SensorLayout::Clustered {
                    cluster_size: *cluster_size,
                    cluster_count: n / cluster_size,
                    period: *period,
                }
            }
            LayoutFamily::Periodic { offsets } => {
                if offsets.is_empty() || n % offsets.len() != 0 {
                    return Err(Error::invalid(format!(
                        "n = {n} is not a multiple of the pattern length {}",
                        offsets.len()
                    )));
                }
                SensorLayout::Periodic {
                    offsets: offsets.clone(),
                    period_count: n / offsets.len(),
                }
            }
            LayoutFamily::CoLocated => SensorLayout::Clustered {
                cluster_size: n,
                cluster_count: 1,
                period: 1.0,
            },
        };
        layout.validate()?;
        Ok(layout)
    }

    /// Closed-form exponent of the family.
    pub fn closed_form(&self, params: &FieldParams) -> Result<ExponentResult> {
        match self {
            LayoutFamily::FixedSpacing { spacing } => scalar_exponent(params, *spacing),
            LayoutFamily::Clustered { cluster_size, period } => clustering_exponent(
                params,
                &SensorLayout::Clustered {
                    cluster_size: *cluster_size,
                    cluster_count: 1,
                    period: *period,
                },
            ),
            LayoutFamily::Periodic { offsets } => periodic_exponent(params, offsets),
            LayoutFamily::CoLocated => scalar_exponent(params, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissEstimate {
    pub n: usize,
    pub threshold: f64,
    pub false_alarms: usize,
    pub misses: usize,
    pub miss_prob: f64,
    /// 95% binomial half-width; with no misses, the one-sided bound `3 / trials`.
    pub ci_half_width: f64,
    pub one_sided: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateModel {
    /// `-ln P_M - ln(n) / 2 = K n + b sqrt(n) + c` over every usable point.
    #[default]
    SecondOrder,
    /// Adds a `d / sqrt(n)` term to [`SecondOrder`](Self::SecondOrder).
    ThirdOrder,
    /// `-ln P_M = K n + c` over the upper half of the usable points.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub model: RateModel,
    pub rate: f64,
    pub std_error: f64,
    pub n_used: Vec<usize>,
    /// Remaining coefficients in model order.
    pub nuisance: Vec<f64>,
}

impl RateFit {
    pub fn ci95(&self) -> (f64, f64) {
        (self.rate - Z95 * self.std_error, self.rate + Z95 * self.std_error)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialFit {
    /// Slope of `ln P_M` against `ln n`.
    pub slope: f64,
    pub std_error: f64,
    pub intercept: f64,
    pub n_used: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEstimate {
    pub alpha: f64,
    pub trials: usize,
    pub seed: u64,
    pub points: Vec<MissEstimate>,
    pub fit: Option<RateFit>,
}

impl DetectionEstimate {
    pub fn n_values(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.n).collect()
    }

    pub fn miss_probs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.miss_prob).collect()
    }

    /// Raw per-`n` counts.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,n,trials,threshold,false_alarms,misses,miss_prob,ci_half_width,one_sided\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                self.alpha,
                p.n,
                self.trials,
                p.threshold,
                p.false_alarms,
                p.misses,
                p.miss_prob,
                p.ci_half_width,
                u8::from(p.one_sided)
            ));
        }
        out
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// LLRs of `trials` independent observation vectors of `layout` under `hypothesis`.
pub fn simulate_llrs(
    params: &FieldParams,
    layout: &SensorLayout,
    hypothesis: Hypothesis,
    trials: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<f64>> {
    let model = SignalModel::new(params, layout)?;
    let filter = InnovationsFilter::new(params, layout)?;
    let domain = trial_domain(model.len(), hypothesis.bit());
    Ok(exec.map_range(trials, |t| {
        let mut rng = stream_rng(seed, domain, t as u64);
        filter.llr_streaming(|sink| model.generate(&mut rng, hypothesis, sink))
    }))
}

fn miss_estimate(n: usize, h0_sorted: &[f64], h1: &[f64], alpha: f64) -> MissEstimate {
    let trials = h0_sorted.len();
    let k = (((1.0 - alpha) * trials as f64).ceil() as usize).clamp(1, trials) - 1;
    let threshold = h0_sorted[k];
    let false_alarms = trials - h0_sorted.partition_point(|&v| v < threshold);
    let misses = h1.iter().filter(|&&v| v < threshold).count();
    let t = h1.len() as f64;
    let p = misses as f64 / t;
    let (ci_half_width, one_sided) = if misses == 0 {
        (3.0 / t, true)
    } else {
        (Z95 * (p * (1.0 - p) / t).sqrt(), false)
    };
    MissEstimate {
        n,
        threshold,
        false_alarms,
        misses,
        miss_prob: p,
        ci_half_width,
        one_sided,
    }
}

/// Miss probabilities for several sizes from one shared set of simulations.
#[allow(clippy::too_many_arguments)]
pub fn estimate_miss_probabilities(
    params: &FieldParams,
    family: &LayoutFamily,
    alphas: &[f64],
    n_values: &[usize],
    trials: usize,
    seed: u64,
    model: RateModel,
    exec: Execution,
) -> Result<Vec<DetectionEstimate>> {
    params.validate()?;
    alphas.iter().try_for_each(|&a| check_alpha(a))?;
    if alphas.is_empty() {
        return Err(Error::invalid("at least one alpha is required"));
    }
    if trials < MIN_TRIALS {
        return Err(Error::invalid(format!("trials must be >= {MIN_TRIALS}, got {trials}")));
    }
    if n_values.is_empty() || n_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("n_values must be nonempty and strictly increasing"));
    }
    let mut per_alpha: Vec<Vec<MissEstimate>> = vec![Vec::with_capacity(n_values.len()); alphas.len()];
    for &n in n_values {
        let layout = family.layout(n)?;
        let mut h0 = simulate_llrs(params, &layout, Hypothesis::H0, trials, seed, exec)?;
        let h1 = simulate_llrs(params, &layout, Hypothesis::H1, trials, seed, exec)?;
        h0.sort_by(f64::total_cmp);
        for (slot, &alpha) in per_alpha.iter_mut().zip(alphas) {
            slot.push(miss_estimate(n, &h0, &h1, alpha));
        }
    }
    Ok(alphas
        .iter()
        .zip(per_alpha)
        .map(|(&alpha, points)| {
            let fit = fit_rate(&points, trials, model).ok();
            DetectionEstimate {
                alpha,
                trials,
                seed,
                points,
                fit,
            }
        })
        .collect())
}

/// Single-size convenience wrapper over [`estimate_miss_probabilities`].
pub fn estimate_miss_probability(
    params: &FieldParams,
    family: &LayoutFamily,
    alpha: f64,
    n_values: &[usize],
    trials: usize,
    seed: u64,
) -> Result<DetectionEstimate> {
    let mut v = estimate_miss_probabilities(
        params,
        family,
        &[alpha],
        n_values,
        trials,
        seed,
        RateModel::default(),
        Execution::default(),
    )?;
    Ok(v.remove(0))
}

/// Weighted least squares; returns coefficients, their standard errors
/// (scaled up by the reduced chi-square when it exceeds one).
fn weighted_least_squares(rows: &[Vec<f64>], y: &[f64], w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = rows[0].len();
    let x = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
    let wdiag = DMatrix::from_diagonal(&DVector::from_column_slice(w));
    let xtw = x.transpose() * &wdiag;
    let normal = &xtw * &x;
    let rhs = &xtw * DVector::from_column_slice(y);
    let chol = normal
        .cholesky()
        .ok_or_else(|| Error::Numeric("rate fit design matrix is singular".into()))?;
    let beta = chol.solve(&rhs);
    let cov = chol.inverse();
    let resid = DVector::from_column_slice(y) - &x * &beta;
    let chi2: f64 = resid.iter().zip(w).map(|(r, w)| r * r * w).sum();
    let dof = rows.len().saturating_sub(k).max(1) as f64;
    let scale = (chi2 / dof).max(1.0);
    let se = (0..k).map(|j| (cov[(j, j)] * scale).sqrt()).collect();
    Ok((beta.iter().copied().collect(), se))
}

fn usable(points: &[MissEstimate]) -> Vec<&MissEstimate> {
    points
        .iter()
        .filter(|p| p.misses >= MIN_MISSES_FOR_FIT && p.miss_prob <= MAX_MISS_PROB_FOR_FIT)
        .collect()
}

/// Delta-method weight of `ln p_hat`: `1 / Var = p T / (1 - p)`.
fn log_weight(p: &MissEstimate, trials: usize) -> f64 {
    p.miss_prob * trials as f64 / (1.0 - p.miss_prob)
}

/// Decay rate of the miss probability in `n`.
pub fn fit_rate(points: &[MissEstimate], trials: usize, model: RateModel) -> Result<RateFit> {
    let mut pts = usable(points);
    let needed = match model {
        RateModel::ThirdOrder => 5,
        RateModel::SecondOrder => 4,
        RateModel::Linear => {
            let half = pts.len() / 2;
            pts.drain(..half);
            3
        }
    };
    if pts.len() < needed {
        return Err(Error::invalid(format!(
            "rate fit needs {needed} points with >= {MIN_MISSES_FOR_FIT} misses, have {}",
            pts.len()
        )));
    }
    let mut rows = Vec::with_capacity(pts.len());
    let mut y = Vec::with_capacity(pts.len());
    let mut w = Vec::with_capacity(pts.len());
    for p in &pts {
        let n = p.n as f64;
        match model {
            RateModel::ThirdOrder => {
                rows.push(vec![n, n.sqrt(), 1.0, 1.0 / n.sqrt()]);
                y.push(-p.miss_prob.ln() - 0.5 * n.ln());
            }
            RateModel::SecondOrder => {
                rows.push(vec![n, n.sqrt(), 1.0]);
                y.push(-p.miss_prob.ln() - 0.5 * n.ln());
            }
            RateModel::Linear => {
                rows.push(vec![n, 1.0]);
                y.push(-p.miss_prob.ln());
            }
        }
        w.push(log_weight(p, trials));
    }
    let (beta, se) = weighted_least_squares(&rows, &y, &w)?;
    Ok(RateFit {
        model,
        rate: beta[0],
        std_error: se[0],
        n_used: pts.iter().map(|p| p.n).collect(),
        nuisance: beta[1..].to_vec(),
    })
}

/// Slope of `ln P_M` against `ln n`.
pub fn fit_polynomial(points: &[MissEstimate], trials: usize) -> Result<PolynomialFit> {
    let pts = usable(points);
    if pts.len() < 3 {
        return Err(Error::invalid(format!(
            "polynomial fit needs 3 points with >= {MIN_MISSES_FOR_FIT} misses, have {}",
            pts.len()
        )));
    }
    let rows: Vec<Vec<f64>> = pts.iter().map(|p| vec![(p.n as f64).ln(), 1.0]).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.miss_prob.ln()).collect();
    let w: Vec<f64> = pts.iter().map(|p| log_weight(p, trials)).collect();
    let (beta, se) = weighted_least_squares(&rows, &y, &w)?;
    Ok(PolynomialFit {
        slope: beta[0],
        std_error: se[0],
        intercept: beta[1],
        n_used: pts.iter().map(|p| p.n).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    pub alphas: Vec<f64>,
    pub n_values: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    /// Allowed relative deviation of the fitted rate from the closed form.
    pub tolerance: f64,
    pub rate_model: RateModel,
}

impl ValidationConfig {
    pub fn new(n_values: Vec<usize>) -> Self {
        ValidationConfig {
            alphas: DEFAULT_ALPHAS.to_vec(),
            n_values,
            trials: DEFAULT_TRIALS,
            seed: 0,
            tolerance: DEFAULT_TOLERANCE,
            rate_model: RateModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaCheck {
    pub alpha: f64,
    pub fit: Option<RateFit>,
    pub relative_deviation: Option<f64>,
    pub polynomial: Option<PolynomialFit>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Positive exponent: compare fitted and closed-form rates.
    Exponential,
    /// Zero exponent: check the `n^(-1/2)` decay instead.
    Polynomial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub regime: Regime,
    pub closed_form_rate: f64,
    pub tolerance: f64,
    pub checks: Vec<AlphaCheck>,
    /// Whether the fitted rates at the different sizes have overlapping 95% intervals.
    pub alpha_independent: bool,
    pub pass: bool,
    pub estimates: Vec<DetectionEstimate>,
}

/// Simulates `family` and compares the decay of the miss probability with
/// the closed-form exponent.
pub fn validate_exponent(
    params: &FieldParams,
    family: &LayoutFamily,
    closed_form: &ExponentResult,
    config: &ValidationConfig,
    exec: Execution,
) -> Result<ValidationReport> {
    let estimates = estimate_miss_probabilities(
        params,
        family,
        &config.alphas,
        &config.n_values,
        config.trials,
        config.seed,
        config.rate_model,
        exec,
    )?;
    let k = closed_form.exponent_per_sensor;
    let regime = if k > crate::kalman_exponent::NEGATIVE_CLAMP {
        Regime::Exponential
    } else {
        Regime::Polynomial
    };
    let checks: Vec<AlphaCheck> = estimates
        .iter()
        .map(|est| match regime {
            Regime::Exponential => {
                let relative_deviation = est.fit.as_ref().map(|f| (f.rate - k).abs() / k);
                AlphaCheck {
                    alpha: est.alpha,
                    fit: est.fit.clone(),
                    relative_deviation,
                    polynomial: None,
                    pass: relative_deviation.is_some_and(|d| d <= config.tolerance),
                }
            }
            Regime::Polynomial => {
                let poly = fit_polynomial(&est.points, est.trials).ok();
                let pass = poly
                    .as_ref()
                    .is_some_and(|p| (p.slope - POLYNOMIAL_SLOPE).abs() <= POLYNOMIAL_SLOPE_TOL);
                AlphaCheck {
                    alpha: est.alpha,
                    fit: None,
                    relative_deviation: None,
                    polynomial: poly,
                    pass,
                }
            }
        })
        .collect();
    let intervals: Vec<(f64, f64)> = checks
        .iter()
        .filter_map(|c| match regime {
            Regime::Exponential => c.fit.as_ref().map(RateFit::ci95),
            Regime::Polynomial => c
                .polynomial
                .as_ref()
                .map(|p| (p.slope - Z95 * p.std_error, p.slope + Z95 * p.std_error)),
        })
        .collect();
    let alpha_independent = intervals.len() == checks.len()
        && intervals.iter().all(|a| intervals.iter().all(|b| a.0 <= b.1 && b.0 <= a.1));
    let pass = alpha_independent && checks.iter().all(|c| c.pass);
    Ok(ValidationReport {
        regime,
        closed_form_rate: k,
        tolerance: config.tolerance,
        checks,
        alpha_independent,
        pass,
        estimates,
    })
}
