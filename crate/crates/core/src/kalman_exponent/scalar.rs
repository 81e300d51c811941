//! Uniform and clustered layouts: one scalar state per sample.

use serde::{Deserialize, Serialize};

use super::riccati::{RiccatiMethod, MAX_DOUBLING_STEPS, MAX_FIXED_POINT_ITERATIONS};
use super::{clamp_exponent, ExponentResult, Innovations};
use crate::error::{Error, Result};
use crate::field_model::{correlation_from_spacing, CorrelationCoefficient, FieldParams, SensorLayout};

/// Residual bound for the scalar Riccati identity, relative to `Pi0`.
pub const SCALAR_RICCATI_TOL: f64 = 1e-12;

/// Steady-state innovations statistics of the H1 Kalman filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarInnovations {
    /// One-step prediction error variance under H1.
    pub p: f64,
    /// H1 innovations variance, `sigma^2 + p`.
    pub r_e: f64,
    /// Innovations variance of the same filter fed with H0 data.
    pub r_e_tilde: f64,
    /// Normalised H0 state-estimate variance, `r_e_tilde = sigma^2 (1 + p_tilde)`.
    pub p_tilde: f64,
    /// Prediction gain `a p / r_e`.
    pub gain: f64,
    pub correlation: f64,
    pub iterations: usize,
    pub residual: f64,
}

fn riccati_rhs(a: f64, q: f64, noise: f64, p: f64) -> f64 {
    // a^2 p - a^2 p^2/(sigma^2 + p) + q, in the cancellation-free form
    a * a * p * noise / (noise + p) + q
}

fn solve_doubling(a: f64, q: f64, noise: f64) -> Result<(f64, usize)> {
    let (mut ak, mut gk, mut hk) = (a, 1.0 / noise, q);
    let mut history = Vec::new();
    for step in 1..=MAX_DOUBLING_STEPS {
        let z = 1.0 / (1.0 + gk * hk);
        let a2z = ak * ak * z;
        let h_next = hk + a2z * hk;
        let g_next = gk + a2z * gk;
        let change = (h_next - hk).abs();
        history.push(change);
        ak = a2z;
        gk = g_next;
        hk = h_next;
        if change <= 2.0 * f64::EPSILON * hk.abs() {
            return Ok((hk, step));
        }
    }
    Err(Error::NonConvergence {
        what: "scalar Riccati doubling",
        iterations: MAX_DOUBLING_STEPS,
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

fn solve_fixed_point(a: f64, q: f64, noise: f64, start: f64, tol: f64) -> Result<(f64, usize)> {
    let mut p = start;
    let mut history = Vec::new();
    for it in 1..=MAX_FIXED_POINT_ITERATIONS {
        let next = riccati_rhs(a, q, noise, p);
        let change = (next - p).abs();
        p = next;
        if change < tol {
            return Ok((p, it));
        }
        if it % 1000 == 0 {
            history.push(change);
        }
    }
    Err(Error::NonConvergence {
        what: "scalar Riccati fixed-point iteration",
        iterations: MAX_FIXED_POINT_ITERATIONS,
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

/// Steady state of the scalar Kalman recursion for correlation `a`.
///
/// `p` solves `p = a^2 p + Pi0 (1 - a^2) - a^2 p^2 / (sigma^2 + p)`; the H0
/// statistics come from `p_tilde = (a - g)^2 p_tilde + g^2`, `g = a p / r_e`.
pub fn scalar_riccati_fixed_point(params: &FieldParams, a: CorrelationCoefficient) -> Result<ScalarInnovations> {
    scalar_riccati_with(params, a, RiccatiMethod::Doubling)
}

pub fn scalar_riccati_with(
    params: &FieldParams,
    a: CorrelationCoefficient,
    method: RiccatiMethod,
) -> Result<ScalarInnovations> {
    params.validate()?;
    let a = a.value();
    let noise = params.noise_variance;
    let pi0 = params.stationary_variance;
    let q = pi0 * (1.0 - a * a);
    let tol = SCALAR_RICCATI_TOL * pi0;
    let (p, iterations) = match method {
        RiccatiMethod::Doubling => solve_doubling(a, q, noise)?,
        RiccatiMethod::FixedPoint => solve_fixed_point(a, q, noise, q, tol * 1e-2)?,
        RiccatiMethod::TimeVarying => solve_fixed_point(a, q, noise, pi0, tol * 1e-2)?,
    };
    let residual = (riccati_rhs(a, q, noise, p) - p).abs();
    if !(residual < tol) {
        return Err(Error::NonConvergence {
            what: "scalar Riccati",
            iterations,
            residual,
            history: vec![residual],
        });
    }
    let r_e = noise + p;
    let gain = a * p / r_e;
    // closed loop a - g = a sigma^2 / r_e
    let closed = a * noise / r_e;
    let p_tilde = if gain == 0.0 { 0.0 } else { gain * gain / (1.0 - closed * closed) };
    Ok(ScalarInnovations {
        p,
        r_e,
        r_e_tilde: noise * (1.0 + p_tilde),
        p_tilde,
        gain,
        correlation: a,
        iterations,
        residual,
    })
}

/// Exponent per sample for correlation `a` between consecutive samples.
///
/// `K = 1/2 ln(r_e/sigma^2) + 1/2 r_e_tilde/r_e - 1/2`; `K = 0` when `a = 1`.
pub fn scalar_exponent_at(params: &FieldParams, a: CorrelationCoefficient) -> Result<ExponentResult> {
    params.validate()?;
    let noise = params.noise_variance;
    let innovations = if a.is_perfect() {
        ScalarInnovations {
            p: 0.0,
            r_e: noise,
            r_e_tilde: noise,
            p_tilde: 0.0,
            gain: 0.0,
            correlation: 1.0,
            iterations: 0,
            residual: 0.0,
        }
    } else {
        scalar_riccati_fixed_point(params, a)?
    };
    let k = scalar_k(&innovations, noise);
    let k = clamp_exponent(k)?;
    Ok(ExponentResult {
        exponent_per_sensor: k,
        exponent_per_block: k,
        sensors_per_block: 1,
        innovations: Innovations::Scalar(innovations),
        config_echo: None,
        params_echo: *params,
    })
}

pub(crate) fn scalar_k(inn: &ScalarInnovations, noise: f64) -> f64 {
    // r_e_tilde/r_e - 1 = (sigma^2 p_tilde - p) / r_e
    0.5 * ((inn.p / noise).ln_1p() + (noise * inn.p_tilde - inn.p) / inn.r_e)
}

/// Exponent of the uniform layout with the given spacing.
pub fn scalar_exponent(params: &FieldParams, spacing: f64) -> Result<ExponentResult> {
    let a = correlation_from_spacing(params, spacing)?;
    scalar_exponent_at(params, a)
}

/// Periodic clustering: `M` co-located sensors per cluster behave like one
/// sensor with noise `sigma^2 / M`, so the per-cluster exponent is the scalar
/// exponent at spacing `period` and `M` times the SNR.
pub fn clustering_exponent(params: &FieldParams, layout: &SensorLayout) -> Result<ExponentResult> {
    let SensorLayout::Clustered {
        cluster_size,
        period,
        ..
    } = layout
    else {
        return Err(Error::invalid("clustering_exponent needs a clustered layout"));
    };
    layout.validate()?;
    params.validate()?;
    let m = *cluster_size;
    let averaged = params.with_noise_variance(params.noise_variance / m as f64);
    let per_cluster = scalar_exponent(&averaged, *period)?;
    Ok(ExponentResult {
        exponent_per_sensor: per_cluster.exponent_per_block / m as f64,
        exponent_per_block: per_cluster.exponent_per_block,
        sensors_per_block: m,
        innovations: per_cluster.innovations,
        config_echo: Some(layout.clone()),
        params_echo: *params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn coef(a: f64) -> CorrelationCoefficient {
        CorrelationCoefficient::new(a).unwrap()
    }

    /// Positive root of `p^2 + p (sigma^2 (1 - a^2) - q) - q sigma^2 = 0`.
    fn quadratic_oracle(a: f64, pi0: f64, noise: f64) -> f64 {
        let q = pi0 * (1.0 - a * a);
        let b = noise * (1.0 - a * a) - q;
        (-b + (b * b + 4.0 * q * noise).sqrt()) / 2.0
    }

    #[test]
    fn no_dynamics() {
        let p = FieldParams::new(1.0, 2.0, 0.5).unwrap();
        let inn = scalar_riccati_fixed_point(&p, coef(0.0)).unwrap();
        assert_eq!(inn.p, 2.0);
        assert_eq!(inn.r_e, 2.5);
        assert_eq!(inn.gain, 0.0);
        assert_eq!(inn.r_e_tilde, 0.5);
    }

    #[test]
    fn perfectly_predictable() {
        let p = FieldParams::new(1.0, 2.0, 0.5).unwrap();
        let inn = scalar_riccati_fixed_point(&p, coef(1.0)).unwrap();
        assert_eq!(inn.p, 0.0);
        assert_eq!(inn.r_e, 0.5);
    }

    #[test]
    fn matches_quadratic_root() {
        let p = FieldParams::new(1.0, 1.0, 1.0).unwrap();
        let inn = scalar_riccati_fixed_point(&p, coef(0.5)).unwrap();
        let want = quadratic_oracle(0.5, 1.0, 1.0);
        // frozen: (-(0.75-0.75) + sqrt(0 + 3))/2
        assert_abs_diff_eq!(want, 3f64.sqrt() / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(inn.p, want, epsilon = 1e-10);
        assert!(inn.residual < 1e-12);
        for a in [0.05, 0.3, 0.77, 0.95, 0.999, 1.0 - 1e-6] {
            for (pi0, noise) in [(0.1, 1.0), (10.0, 1.0), (1.0, 3.0)] {
                let prm = FieldParams::new(1.0, pi0, noise).unwrap();
                let got = scalar_riccati_fixed_point(&prm, coef(a)).unwrap().p;
                assert_abs_diff_eq!(got, quadratic_oracle(a, pi0, noise), epsilon = 1e-10 * pi0.max(1.0));
            }
        }
    }

    #[test]
    fn methods_agree() {
        let p = FieldParams::new(1.0, 0.3, 1.0).unwrap();
        for a in [0.2, 0.9, 0.99] {
            let d = scalar_riccati_with(&p, coef(a), RiccatiMethod::Doubling).unwrap();
            let f = scalar_riccati_with(&p, coef(a), RiccatiMethod::FixedPoint).unwrap();
            let t = scalar_riccati_with(&p, coef(a), RiccatiMethod::TimeVarying).unwrap();
            assert_abs_diff_eq!(d.p, f.p, epsilon = 1e-10);
            assert_abs_diff_eq!(d.p, t.p, epsilon = 1e-10);
        }
    }

    #[test]
    fn h0_variance_by_series() {
        let p = FieldParams::new(1.0, 4.0, 1.0).unwrap();
        let inn = scalar_riccati_fixed_point(&p, coef(0.7)).unwrap();
        let c = 0.7 - inn.gain;
        let series: f64 = (0..2000).map(|k| c.powi(2 * k) * inn.gain * inn.gain).sum();
        assert_abs_diff_eq!(inn.p_tilde, series, epsilon = 1e-13);
        assert!(inn.r_e_tilde >= p.noise_variance && inn.r_e >= p.noise_variance);
    }

    #[test]
    fn iid_exponent_is_kl() {
        let p = FieldParams::new(1.0, 1.0, 1.0).unwrap();
        let k = scalar_exponent(&p, f64::INFINITY).unwrap().exponent_per_sensor;
        assert_abs_diff_eq!(k, 0.5 * 2f64.ln() - 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(k, 0.0966, epsilon = 1e-4);
    }

    #[test]
    fn zero_spacing_has_zero_exponent() {
        for snr in [0.01, 1.0, 100.0] {
            let p = FieldParams::from_snr(1.0, snr).unwrap();
            assert_eq!(scalar_exponent(&p, 0.0).unwrap().exponent_per_sensor, 0.0);
        }
    }

    #[test]
    fn cluster_of_one_is_uniform() {
        let p = FieldParams::new(2.0, 3.0, 1.0).unwrap();
        let c = clustering_exponent(
            &p,
            &SensorLayout::Clustered { cluster_size: 1, cluster_count: 10, period: 0.3 },
        )
        .unwrap();
        let u = scalar_exponent(&p, 0.3).unwrap();
        assert_eq!(c.exponent_per_sensor, u.exponent_per_sensor);
    }

    #[test]
    fn far_apart_clusters_are_half_the_doubled_snr_kl() {
        let p = FieldParams::new(1.0, 1.0, 1.0).unwrap();
        let c = clustering_exponent(
            &p,
            &SensorLayout::Clustered { cluster_size: 2, cluster_count: 10, period: 1e6 },
        )
        .unwrap();
        // KL of N(0, 1/2) vs N(0, 1 + 1/2)
        let kl = 0.5 * (3f64.ln() + 1.0 / 3.0 - 1.0);
        assert_abs_diff_eq!(c.exponent_per_sensor, 0.5 * kl, epsilon = 1e-14);
        assert_eq!(c.sensors_per_block, 2);
    }

    #[test]
    fn rejects_wrong_layout() {
        let p = FieldParams::new(1.0, 1.0, 1.0).unwrap();
        assert!(clustering_exponent(&p, &SensorLayout::Uniform { spacing: 1.0, count: 3 }).is_err());
    }
}
