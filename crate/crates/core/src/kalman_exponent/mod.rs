//! Closed-form Neyman-Pearson error exponents.
//!
//! The miss probability of a fixed-size test decays like `exp(-n K)`; `K`
//! depends only on the layout and the SNR, not on the size. Each exponent is
//! built from the steady-state innovations of the H1 Kalman filter run on H1
//! data (`R_e`) and on H0 data (`R~_e`).

mod riccati;
mod scalar;
mod vector;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_model::{FieldParams, SensorLayout};

pub use riccati::{RiccatiMethod, MAX_DOUBLING_STEPS, MAX_FIXED_POINT_ITERATIONS};
pub use scalar::{
    clustering_exponent, scalar_exponent, scalar_exponent_at, scalar_riccati_fixed_point, scalar_riccati_with,
    ScalarInnovations, SCALAR_RICCATI_TOL,
};
pub use vector::{
    build_periodic_state_space, periodic_exponent, periodic_exponent_with, vector_exponent, vector_lyapunov_solve,
    vector_riccati_solve, vector_riccati_with, LyapunovSolution, RiccatiSolution, StateSpace, VectorInnovations,
    PSD_TOL, STATE_SPACE_TOL, VECTOR_RICCATI_TOL,
};

/// Roundoff band below zero that is clamped to an exponent of 0.
pub const NEGATIVE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Innovations {
    Scalar(ScalarInnovations),
    Vector(Box<VectorInnovations>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentResult {
    /// Decay rate per activated sensor.
    pub exponent_per_sensor: f64,
    /// Decay rate per block (per cluster / per period; equals the per-sensor
    /// value for uniform layouts).
    pub exponent_per_block: f64,
    pub sensors_per_block: usize,
    pub innovations: Innovations,
    /// Layout the exponent was computed for; `None` for raw spacing or
    /// correlation queries.
    pub config_echo: Option<SensorLayout>,
    pub params_echo: FieldParams,
}

pub(crate) fn clamp_exponent(k: f64) -> Result<f64> {
    if k >= 0.0 {
        Ok(k)
    } else if k > -NEGATIVE_CLAMP {
        Ok(0.0)
    } else {
        Err(Error::Numeric(format!("negative error exponent {k:.3e}")))
    }
}

/// Exponent for any layout, dispatching on its kind.
pub fn exponent(params: &FieldParams, layout: &SensorLayout) -> Result<ExponentResult> {
    layout.validate()?;
    match layout {
        SensorLayout::Uniform { spacing, .. } => {
            let mut res = scalar_exponent(params, *spacing)?;
            res.config_echo = Some(layout.clone());
            Ok(res)
        }
        SensorLayout::Clustered { .. } => clustering_exponent(params, layout),
        SensorLayout::Periodic { .. } => vector_exponent(params, layout),
    }
}
