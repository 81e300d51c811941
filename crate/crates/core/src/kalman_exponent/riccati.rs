//! Steady-state solvers for the prediction Riccati equation
//!
//! `P = F P F' + W - F P (sigma^2 I + P)^{-1} P F'`
//!
//! and the closed-loop Lyapunov equation `X = C X C' + S`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, symmetrize};

pub const MAX_FIXED_POINT_ITERATIONS: usize = 100_000;
pub const MAX_DOUBLING_STEPS: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiccatiMethod {
    /// Structure-preserving doubling; quadratic convergence.
    #[default]
    Doubling,
    /// Repeated application of the Riccati map from `P0 = W`.
    FixedPoint,
    /// The Kalman filter's time-varying recursion started at the stationary
    /// prior covariance, run until it stops changing.
    TimeVarying,
}

/// One step of the prediction Riccati map, written through the filtered
/// covariance `sigma^2 P (sigma^2 I + P)^{-1}` so it stays symmetric PSD.
pub(crate) fn riccati_map(f: &DMatrix<f64>, w: &DMatrix<f64>, p: &DMatrix<f64>, noise: f64) -> Result<DMatrix<f64>> {
    let m = p.nrows();
    let r_e = DMatrix::identity(m, m) * noise + p;
    let chol = r_e
        .cholesky()
        .ok_or_else(|| Error::Numeric("innovations covariance not positive definite".into()))?;
    // P - P R^{-1} P
    let filtered = p - p * chol.solve(p);
    let mut next = f * filtered * f.transpose() + w;
    symmetrize(&mut next);
    Ok(next)
}

pub(crate) fn riccati_residual(f: &DMatrix<f64>, w: &DMatrix<f64>, p: &DMatrix<f64>, noise: f64) -> Result<f64> {
    Ok(max_abs(&(riccati_map(f, w, p, noise)? - p)))
}

/// Doubling for the filtering DARE. Returns (P, steps).
pub(crate) fn doubling(f: &DMatrix<f64>, w: &DMatrix<f64>, noise: f64) -> Result<(DMatrix<f64>, usize)> {
    let m = f.nrows();
    let eye = DMatrix::<f64>::identity(m, m);
    let mut a = f.transpose();
    let mut g = &eye / noise;
    let mut h = w.clone();
    let mut history = Vec::new();
    for step in 1..=MAX_DOUBLING_STEPS {
        let lu = (&eye + &g * &h).lu();
        let za = lu
            .solve(&a)
            .ok_or_else(|| Error::Numeric("singular matrix in doubling step".into()))?;
        let zg = lu
            .solve(&g)
            .ok_or_else(|| Error::Numeric("singular matrix in doubling step".into()))?;
        let a_t = a.transpose();
        let h_next = &h + &a_t * &h * &za;
        let g_next = &g + &a * zg * &a_t;
        let a_next = &a * za;
        let change = max_abs(&(&h_next - &h));
        history.push(change);
        h = h_next;
        g = g_next;
        a = a_next;
        if change <= 4.0 * f64::EPSILON * max_abs(&h).max(f64::MIN_POSITIVE) {
            symmetrize(&mut h);
            return Ok((h, step));
        }
    }
    Err(Error::NonConvergence {
        what: "Riccati doubling",
        iterations: MAX_DOUBLING_STEPS,
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

/// Plain iteration of the Riccati map from `start` until the update falls
/// below `tol`. Returns (P, iterations).
pub(crate) fn iterate_map(
    f: &DMatrix<f64>,
    w: &DMatrix<f64>,
    noise: f64,
    start: DMatrix<f64>,
    tol: f64,
) -> Result<(DMatrix<f64>, usize)> {
    let mut p = start;
    let mut history = Vec::new();
    for it in 1..=MAX_FIXED_POINT_ITERATIONS {
        let next = riccati_map(f, w, &p, noise)?;
        let change = max_abs(&(&next - &p));
        p = next;
        if change < tol {
            return Ok((p, it));
        }
        if it % 1000 == 0 {
            history.push(change);
        }
    }
    Err(Error::NonConvergence {
        what: "Riccati fixed-point iteration",
        iterations: MAX_FIXED_POINT_ITERATIONS,
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

/// Smith doubling for `X = C X C' + S`. Returns (X, steps).
pub(crate) fn smith(c: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    let mut x = s.clone();
    let mut power = c.clone();
    let mut history = Vec::new();
    for step in 1..=MAX_DOUBLING_STEPS {
        let add = &power * &x * power.transpose();
        let change = max_abs(&add);
        x += add;
        power = &power * &power;
        history.push(change);
        if !change.is_finite() {
            break;
        }
        if change <= f64::EPSILON * max_abs(&x) || change == 0.0 {
            symmetrize(&mut x);
            return Ok((x, step));
        }
    }
    Err(Error::NonConvergence {
        what: "Lyapunov doubling",
        iterations: history.len(),
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smith_matches_scalar_closed_form() {
        let c = DMatrix::from_element(1, 1, 0.9);
        let s = DMatrix::from_element(1, 1, 0.19);
        let (x, _) = smith(&c, &s).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-13);
    }

    #[test]
    fn smith_diverges_on_unstable() {
        let c = DMatrix::from_element(1, 1, 1.5);
        let s = DMatrix::from_element(1, 1, 1.0);
        assert!(matches!(smith(&c, &s), Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn doubling_and_iteration_agree_on_scalar() {
        let f = DMatrix::from_element(1, 1, 0.8);
        let w = DMatrix::from_element(1, 1, 0.36);
        let (pd, _) = doubling(&f, &w, 0.5).unwrap();
        let (pi, _) = iterate_map(&f, &w, 0.5, w.clone(), 1e-15).unwrap();
        assert!((pd[(0, 0)] - pi[(0, 0)]).abs() < 1e-12);
        assert!(riccati_residual(&f, &w, &pd, 0.5).unwrap() < 1e-14);
    }
}
