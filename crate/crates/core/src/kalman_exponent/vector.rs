//! Arbitrary periodic layouts: one `M`-dimensional state per period.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::riccati::{self, RiccatiMethod};
use super::{clamp_exponent, ExponentResult, Innovations};
use crate::error::{Error, Result};
use crate::field_model::{covariance_at, offset_positions, validate_offsets, FieldParams, SensorLayout};
use crate::linalg::{max_abs, min_symmetric_eigenvalue, serde_matrix, spectral_radius};

pub const STATE_SPACE_TOL: f64 = 1e-10;
pub const VECTOR_RICCATI_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-10;

/// Block state-space model of one period:
/// `s_{k+1} = feedback s_k + input u_k`, `u_k ~ N(0, process_cov)`,
/// `s_1 ~ N(0, initial_cov)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    #[serde(with = "serde_matrix")]
    pub feedback: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub input: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub process_cov: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub initial_cov: DMatrix<f64>,
    pub dim: usize,
    pub offsets: Vec<f64>,
}

impl StateSpace {
    /// `input * process_cov * input'`.
    pub fn process_noise(&self) -> DMatrix<f64> {
        &self.input * &self.process_cov * self.input.transpose()
    }

    /// The only nonzero eigenvalue of the feedback matrix, `exp(-A * period)`.
    pub fn spectral_radius(&self) -> f64 {
        self.feedback[(self.dim - 1, self.dim - 1)].abs()
    }

    /// Max-entry residual of `C0 = F C0 F' + B Q B'`.
    pub fn stationarity_residual(&self) -> f64 {
        let rhs = &self.feedback * &self.initial_cov * self.feedback.transpose() + self.process_noise();
        max_abs(&(rhs - &self.initial_cov))
    }
}

/// Builds the block model for offsets `Delta_1..Delta_M` (gap after each
/// sensor of the period). Fails if the stationary covariance does not
/// satisfy its own Lyapunov identity, which would mean an indexing error.
pub fn build_periodic_state_space(params: &FieldParams, offsets: &[f64]) -> Result<StateSpace> {
    params.validate()?;
    validate_offsets(offsets)?;
    let m = offsets.len();
    let rate = params.diffusion_rate;
    let pi0 = params.stationary_variance;
    let x = offset_positions(offsets);
    let last_gap = offsets[m - 1];

    // last column: correlation between the previous period's last sensor and sensor i
    let mut feedback = DMatrix::zeros(m, m);
    for i in 0..m {
        feedback[(i, m - 1)] = (-rate * (last_gap + x[i])).exp();
    }
    let input = DMatrix::from_fn(m, m, |i, k| if k <= i { (-rate * (x[i] - x[k])).exp() } else { 0.0 });
    // Pi0 * diag(1 - e^{-2A D_M}, 1 - e^{-2A D_1}, ..., 1 - e^{-2A D_{M-1}})
    let mut process_cov = DMatrix::zeros(m, m);
    for i in 0..m {
        let gap = if i == 0 { last_gap } else { offsets[i - 1] };
        process_cov[(i, i)] = pi0 * -(-2.0 * rate * gap).exp_m1();
    }
    let initial_cov = covariance_at(params, &x);

    let ss = StateSpace {
        feedback,
        input,
        process_cov,
        initial_cov,
        dim: m,
        offsets: offsets.to_vec(),
    };
    let residual = ss.stationarity_residual();
    if !(residual <= STATE_SPACE_TOL * pi0.max(1.0)) {
        return Err(Error::InternalConsistency(format!(
            "stationary covariance violates C0 = A C0 A' + B Q B' (residual {residual:.3e})"
        )));
    }
    Ok(ss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: DMatrix<f64>,
    pub r_e: DMatrix<f64>,
    /// Prediction gain `K_p = A P R_e^{-1}`.
    pub gain: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub closed_loop_radius: f64,
}

pub fn vector_riccati_solve(ss: &StateSpace, noise_variance: f64) -> Result<RiccatiSolution> {
    vector_riccati_with(ss, noise_variance, RiccatiMethod::Doubling)
}

/// Stabilizing solution of `P = A P A' + B Q B' - A P R_e^{-1} P A'`,
/// `R_e = sigma^2 I + P`.
pub fn vector_riccati_with(ss: &StateSpace, noise_variance: f64, method: RiccatiMethod) -> Result<RiccatiSolution> {
    if !(noise_variance > 0.0) {
        return Err(Error::invalid("noise_variance must be > 0"));
    }
    if !(ss.spectral_radius() < 1.0) {
        return Err(Error::SingularRegime(format!(
            "feedback spectral radius {} >= 1 (perfectly correlated field); no stabilizing solution",
            ss.spectral_radius()
        )));
    }
    let w = ss.process_noise();
    let scale = max_abs(&w).max(f64::MIN_POSITIVE);
    let tol = VECTOR_RICCATI_TOL * scale;
    let f = &ss.feedback;
    let (p, iterations) = match method {
        RiccatiMethod::Doubling => riccati::doubling(f, &w, noise_variance)?,
        RiccatiMethod::FixedPoint => riccati::iterate_map(f, &w, noise_variance, w.clone(), tol * 1e-3)?,
        RiccatiMethod::TimeVarying => {
            riccati::iterate_map(f, &w, noise_variance, ss.initial_cov.clone(), tol * 1e-3)?
        }
    };
    let residual = riccati::riccati_residual(f, &w, &p, noise_variance)?;
    if !(residual < tol) {
        return Err(Error::NonConvergence {
            what: "vector Riccati",
            iterations,
            residual,
            history: vec![residual],
        });
    }
    check_psd(&p, "Riccati solution")?;
    let m = ss.dim;
    let r_e = DMatrix::identity(m, m) * noise_variance + &p;
    let gain = prediction_gain(f, &p, &r_e)?;
    let closed_loop_radius = spectral_radius(&(f - &gain));
    if !(closed_loop_radius < 1.0) {
        return Err(Error::Numeric(format!(
            "Riccati solution is not stabilizing (closed-loop radius {closed_loop_radius})"
        )));
    }
    Ok(RiccatiSolution {
        p,
        r_e,
        gain,
        iterations,
        residual,
        closed_loop_radius,
    })
}

fn prediction_gain(f: &DMatrix<f64>, p: &DMatrix<f64>, r_e: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = r_e
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("R_e not positive definite".into()))?;
    // K_p = F P R^{-1} = (R^{-1} P F')'
    Ok(chol.solve(&(p * f.transpose())).transpose())
}

fn check_psd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let min = min_symmetric_eigenvalue(m);
    if min < -PSD_TOL * max_abs(m).max(1.0) {
        return Err(Error::Numeric(format!("{what} not PSD (min eigenvalue {min:.3e})")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovSolution {
    /// Normalised H0 state-estimate covariance.
    pub p_tilde: DMatrix<f64>,
    /// `sigma^2 (I + p_tilde)`.
    pub r_e_tilde: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `P~ = (A - K_p) P~ (A - K_p)' + K_p K_p'` with `K_p = A P R_e^{-1}`.
pub fn vector_lyapunov_solve(
    ss: &StateSpace,
    p: &DMatrix<f64>,
    r_e: &DMatrix<f64>,
    noise_variance: f64,
) -> Result<LyapunovSolution> {
    let gain = prediction_gain(&ss.feedback, p, r_e)?;
    let closed = &ss.feedback - &gain;
    let forcing = &gain * gain.transpose();
    let (p_tilde, iterations) = riccati::smith(&closed, &forcing)?;
    let residual = max_abs(&(&closed * &p_tilde * closed.transpose() + &forcing - &p_tilde));
    let tol = VECTOR_RICCATI_TOL * max_abs(&forcing).max(f64::MIN_POSITIVE);
    if !(residual <= tol) {
        return Err(Error::NonConvergence {
            what: "Lyapunov",
            iterations,
            residual,
            history: vec![residual],
        });
    }
    check_psd(&p_tilde, "Lyapunov solution")?;
    let m = ss.dim;
    let r_e_tilde = (DMatrix::identity(m, m) + &p_tilde) * noise_variance;
    Ok(LyapunovSolution {
        p_tilde,
        r_e_tilde,
        iterations,
        residual,
    })
}

/// Steady-state innovations of the block filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorInnovations {
    #[serde(with = "serde_matrix")]
    pub p: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub p_tilde: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub r_e: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub r_e_tilde: DMatrix<f64>,
    pub riccati_iterations: usize,
    pub riccati_residual: f64,
    pub lyapunov_iterations: usize,
    pub lyapunov_residual: f64,
    pub closed_loop_radius: f64,
}

/// Exponent per period, `K_v = 1/2 ln det(R_e / sigma^2) + 1/2 tr(R_e^{-1} R~_e) - M/2`.
pub fn periodic_exponent(params: &FieldParams, offsets: &[f64]) -> Result<ExponentResult> {
    periodic_exponent_with(params, offsets, RiccatiMethod::Doubling)
}

pub fn periodic_exponent_with(params: &FieldParams, offsets: &[f64], method: RiccatiMethod) -> Result<ExponentResult> {
    let ss = build_periodic_state_space(params, offsets)?;
    let noise = params.noise_variance;
    let ric = vector_riccati_with(&ss, noise, method)?;
    let lya = vector_lyapunov_solve(&ss, &ric.p, &ric.r_e, noise)?;
    let m = ss.dim;

    let normalized = DMatrix::<f64>::identity(m, m) + &ric.p / noise;
    let chol = normalized
        .cholesky()
        .ok_or_else(|| Error::Numeric("I + P/sigma^2 not positive definite".into()))?;
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    // tr(R_e^{-1} R~_e) - M = tr(R_e^{-1} (sigma^2 P~ - P))
    let diff = &lya.p_tilde * noise - &ric.p;
    let trace = (chol.solve(&diff) / noise).trace();
    let k_block = clamp_exponent(0.5 * (log_det + trace))?;

    Ok(ExponentResult {
        exponent_per_sensor: k_block / m as f64,
        exponent_per_block: k_block,
        sensors_per_block: m,
        innovations: Innovations::Vector(Box::new(VectorInnovations {
            p: ric.p,
            p_tilde: lya.p_tilde,
            r_e: ric.r_e,
            r_e_tilde: lya.r_e_tilde,
            riccati_iterations: ric.iterations,
            riccati_residual: ric.residual,
            lyapunov_iterations: lya.iterations,
            lyapunov_residual: lya.residual,
            closed_loop_radius: ric.closed_loop_radius,
        })),
        config_echo: None,
        params_echo: *params,
    })
}

pub fn vector_exponent(params: &FieldParams, layout: &SensorLayout) -> Result<ExponentResult> {
    let SensorLayout::Periodic { offsets, .. } = layout else {
        return Err(Error::invalid("vector_exponent needs a periodic layout"));
    };
    layout.validate()?;
    let mut res = periodic_exponent(params, offsets)?;
    res.config_echo = Some(layout.clone());
    Ok(res)
}
