//! The observed field: a stationary Ornstein-Uhlenbeck process along a line,
//! sampled by activated sensors in white Gaussian noise.
//!
//! Under H1 sensor `i` at position `x_i` reports `y_i = s(x_i) + w_i`, under H0
//! only `w_i`. Consecutive samples obey the exact discretization
//! `s_{i+1} = a_i s_i + u_i` with `a_i = exp(-A (x_{i+1} - x_i))` and
//! `u_i ~ N(0, Pi0 (1 - a_i^2))`, so every sample has variance `Pi0`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Physical model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldParams {
    /// Decay rate `A` of the spatial correlation (1/length). Zero means a
    /// perfectly correlated field.
    pub diffusion_rate: f64,
    /// Stationary signal power `Pi0`.
    pub stationary_variance: f64,
    /// Per-sensor measurement noise power `sigma^2`.
    pub noise_variance: f64,
}

impl FieldParams {
    pub fn new(diffusion_rate: f64, stationary_variance: f64, noise_variance: f64) -> Result<Self> {
        let p = FieldParams {
            diffusion_rate,
            stationary_variance,
            noise_variance,
        };
        p.validate()?;
        Ok(p)
    }

    /// Unit noise power and `Pi0 = snr`.
    pub fn from_snr(diffusion_rate: f64, snr: f64) -> Result<Self> {
        Self::new(diffusion_rate, snr, 1.0)
    }

    pub fn from_snr_db(diffusion_rate: f64, snr_db: f64) -> Result<Self> {
        Self::from_snr(diffusion_rate, db_to_linear(snr_db))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.diffusion_rate >= 0.0) || self.diffusion_rate.is_infinite() {
            return Err(Error::invalid(format!(
                "diffusion_rate must be finite and >= 0, got {}",
                self.diffusion_rate
            )));
        }
        if !(self.stationary_variance > 0.0) || !self.stationary_variance.is_finite() {
            return Err(Error::invalid(format!(
                "stationary_variance must be finite and > 0, got {}",
                self.stationary_variance
            )));
        }
        if !(self.noise_variance > 0.0) || !self.noise_variance.is_finite() {
            return Err(Error::invalid(format!(
                "noise_variance must be finite and > 0, got {}",
                self.noise_variance
            )));
        }
        Ok(())
    }

    pub fn snr(&self) -> f64 {
        self.stationary_variance / self.noise_variance
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * self.snr().log10()
    }

    /// `A = 0`: every pair of samples is perfectly correlated.
    pub fn is_perfectly_correlated(&self) -> bool {
        self.diffusion_rate == 0.0
    }

    pub fn with_noise_variance(self, noise_variance: f64) -> Self {
        FieldParams {
            noise_variance,
            ..self
        }
    }

    pub fn with_diffusion_rate(self, diffusion_rate: f64) -> Self {
        FieldParams {
            diffusion_rate,
            ..self
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Positions of the activated sensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SensorLayout {
    /// `count` sensors spaced `spacing` apart.
    Uniform { spacing: f64, count: usize },
    /// `cluster_count` clusters of `cluster_size` co-located sensors, one
    /// cluster every `period`.
    Clustered {
        cluster_size: usize,
        cluster_count: usize,
        period: f64,
    },
    /// `offsets[m]` is the gap from sensor `m` to the next one; the pattern
    /// repeats `period_count` times with period `sum(offsets)`.
    Periodic {
        offsets: Vec<f64>,
        period_count: usize,
    },
}

impl SensorLayout {
    pub fn validate(&self) -> Result<()> {
        match self {
            SensorLayout::Uniform { spacing, count } => {
                if !(*spacing > 0.0) || !spacing.is_finite() {
                    return Err(Error::invalid(format!("uniform spacing must be > 0, got {spacing}")));
                }
                if *count == 0 {
                    return Err(Error::invalid("uniform count must be >= 1"));
                }
            }
            SensorLayout::Clustered {
                cluster_size,
                cluster_count,
                period,
            } => {
                if *cluster_size == 0 || *cluster_count == 0 {
                    return Err(Error::invalid("cluster_size and cluster_count must be >= 1"));
                }
                if !(*period > 0.0) || !period.is_finite() {
                    return Err(Error::invalid(format!("cluster period must be > 0, got {period}")));
                }
            }
            SensorLayout::Periodic {
                offsets,
                period_count,
            } => {
                validate_offsets(offsets)?;
                if *period_count == 0 {
                    return Err(Error::invalid("period_count must be >= 1"));
                }
            }
        }
        Ok(())
    }

    pub fn total_sensors(&self) -> usize {
        match self {
            SensorLayout::Uniform { count, .. } => *count,
            SensorLayout::Clustered {
                cluster_size,
                cluster_count,
                ..
            } => cluster_size * cluster_count,
            SensorLayout::Periodic {
                offsets,
                period_count,
            } => offsets.len() * period_count,
        }
    }

    /// Sensors per repeating block (1 for uniform layouts).
    pub fn sensors_per_block(&self) -> usize {
        match self {
            SensorLayout::Uniform { .. } => 1,
            SensorLayout::Clustered { cluster_size, .. } => *cluster_size,
            SensorLayout::Periodic { offsets, .. } => offsets.len(),
        }
    }

    /// Length of the repeating block.
    pub fn period(&self) -> f64 {
        match self {
            SensorLayout::Uniform { spacing, .. } => *spacing,
            SensorLayout::Clustered { period, .. } => *period,
            SensorLayout::Periodic { offsets, .. } => offsets.iter().sum(),
        }
    }

    /// Nondecreasing sensor coordinates, starting at 0.
    pub fn positions(&self) -> Vec<f64> {
        match self {
            SensorLayout::Uniform { spacing, count } => {
                (0..*count).map(|i| i as f64 * spacing).collect()
            }
            SensorLayout::Clustered {
                cluster_size,
                cluster_count,
                period,
            } => (0..*cluster_count)
                .flat_map(|k| std::iter::repeat_n(k as f64 * period, *cluster_size))
                .collect(),
            SensorLayout::Periodic {
                offsets,
                period_count,
            } => {
                let within = offset_positions(offsets);
                let period: f64 = offsets.iter().sum();
                (0..*period_count)
                    .flat_map(|k| within.iter().map(move |x| k as f64 * period + x))
                    .collect()
            }
        }
    }

    /// Distances between consecutive sensors (length `n - 1`).
    pub fn gaps(&self) -> Vec<f64> {
        match self {
            SensorLayout::Uniform { spacing, count } => vec![*spacing; count.saturating_sub(1)],
            SensorLayout::Clustered {
                cluster_size,
                cluster_count,
                period,
            } => {
                let n = cluster_size * cluster_count;
                (1..n)
                    .map(|i| if i % cluster_size == 0 { *period } else { 0.0 })
                    .collect()
            }
            SensorLayout::Periodic {
                offsets,
                period_count,
            } => {
                let n = offsets.len() * period_count;
                (0..n.saturating_sub(1)).map(|i| offsets[i % offsets.len()]).collect()
            }
        }
    }
}

pub(crate) fn validate_offsets(offsets: &[f64]) -> Result<()> {
    if offsets.is_empty() {
        return Err(Error::invalid("periodic layout needs at least one offset"));
    }
    if offsets.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
        return Err(Error::invalid(format!("offsets must be finite and >= 0, got {offsets:?}")));
    }
    if !(offsets.iter().sum::<f64>() > 0.0) {
        return Err(Error::invalid("offsets must sum to a positive period"));
    }
    Ok(())
}

/// Coordinates within one period: `x_1 = 0, x_{m+1} = x_m + offsets[m]`.
pub(crate) fn offset_positions(offsets: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(offsets.len());
    let mut acc = 0.0;
    for d in offsets {
        x.push(acc);
        acc += d;
    }
    x
}

/// Correlation `a = exp(-A * spacing)` between two samples, in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct CorrelationCoefficient(f64);

impl CorrelationCoefficient {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(CorrelationCoefficient(value))
        } else {
            Err(Error::invalid(format!("correlation must lie in [0, 1], got {value}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_perfect(self) -> bool {
        self.0 == 1.0
    }
}

impl TryFrom<f64> for CorrelationCoefficient {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CorrelationCoefficient> for f64 {
    fn from(c: CorrelationCoefficient) -> f64 {
        c.0
    }
}

pub fn correlation_from_spacing(params: &FieldParams, spacing: f64) -> Result<CorrelationCoefficient> {
    if !(spacing >= 0.0) {
        return Err(Error::invalid(format!("spacing must be >= 0, got {spacing}")));
    }
    if params.diffusion_rate == 0.0 {
        return Ok(CorrelationCoefficient(1.0));
    }
    Ok(CorrelationCoefficient((-params.diffusion_rate * spacing).exp()))
}

/// `Pi0 * exp(-A |x_i - x_j|)` over all pairs of activated sensors.
pub fn signal_covariance(params: &FieldParams, layout: &SensorLayout) -> Result<DMatrix<f64>> {
    params.validate()?;
    layout.validate()?;
    let x = layout.positions();
    Ok(covariance_at(params, &x))
}

pub(crate) fn covariance_at(params: &FieldParams, x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| {
        params.stationary_variance * (-params.diffusion_rate * (x[i] - x[j]).abs()).exp()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    /// Noise only.
    H0,
    /// Field plus noise.
    H1,
}

impl Hypothesis {
    pub(crate) fn bit(self) -> u64 {
        match self {
            Hypothesis::H0 => 0,
            Hypothesis::H1 => 1,
        }
    }
}

/// Sampling plan for one layout: per-step correlations and innovation
/// standard deviations of the exact recursion.
#[derive(Debug, Clone)]
pub struct SignalModel {
    correlations: Vec<f64>,
    innovation_sd: Vec<f64>,
    signal_sd: f64,
    noise_sd: f64,
}

impl SignalModel {
    pub fn new(params: &FieldParams, layout: &SensorLayout) -> Result<Self> {
        params.validate()?;
        layout.validate()?;
        let gaps = layout.gaps();
        let correlations: Vec<f64> = gaps
            .iter()
            .map(|&g| (-params.diffusion_rate * g).exp())
            .collect();
        // 1 - a^2 = -expm1(-2 A gap), exact for small gaps
        let innovation_sd = gaps
            .iter()
            .map(|&g| (params.stationary_variance * -(-2.0 * params.diffusion_rate * g).exp_m1()).sqrt())
            .collect();
        Ok(SignalModel {
            correlations,
            innovation_sd,
            signal_sd: params.stationary_variance.sqrt(),
            noise_sd: params.noise_variance.sqrt(),
        })
    }

    pub fn len(&self) -> usize {
        self.correlations.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Draws one observation vector and hands each sample to `sink` in order.
    ///
    /// Draw order per sensor: signal innovation (H1 only), then noise.
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R, hypothesis: Hypothesis, mut sink: impl FnMut(f64)) {
        match hypothesis {
            Hypothesis::H0 => {
                for _ in 0..self.len() {
                    let w: f64 = rng.sample(StandardNormal);
                    sink(self.noise_sd * w);
                }
            }
            Hypothesis::H1 => {
                let z: f64 = rng.sample(StandardNormal);
                let mut s = self.signal_sd * z;
                let w: f64 = rng.sample(StandardNormal);
                sink(s + self.noise_sd * w);
                for (a, sd) in self.correlations.iter().zip(&self.innovation_sd) {
                    let u: f64 = rng.sample(StandardNormal);
                    s = a * s + sd * u;
                    let w: f64 = rng.sample(StandardNormal);
                    sink(s + self.noise_sd * w);
                }
            }
        }
    }

    /// Signal path only (no noise), used to check the recursion.
    pub fn generate_signal<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        let z: f64 = rng.sample(StandardNormal);
        let mut s = self.signal_sd * z;
        out.push(s);
        for (a, sd) in self.correlations.iter().zip(&self.innovation_sd) {
            let u: f64 = rng.sample(StandardNormal);
            s = a * s + sd * u;
            out.push(s);
        }
        out
    }
}

/// One observation vector under `hypothesis`, deterministic in `seed`.
pub fn sample_observations(
    params: &FieldParams,
    layout: &SensorLayout,
    hypothesis: Hypothesis,
    seed: u64,
) -> Result<Vec<f64>> {
    let model = SignalModel::new(params, layout)?;
    let mut rng = rng::stream_rng(seed, rng::trial_domain(model.len(), hypothesis.bit()), 0);
    let mut y = Vec::with_capacity(model.len());
    model.generate(&mut rng, hypothesis, |v| y.push(v));
    Ok(y)
}
