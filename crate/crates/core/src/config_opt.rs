//! Choosing where to activate sensors: optimal correlation / spacing for the
//! uniform layout and grid sweeps over cluster sizes and intra-period
//! offsets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_model::{CorrelationCoefficient, FieldParams, SensorLayout};
use crate::kalman_exponent::{
    clustering_exponent, periodic_exponent, scalar_exponent, scalar_exponent_at, scalar_riccati_fixed_point,
};
use crate::parallel::Execution;

pub const DEFAULT_GRID_POINTS: usize = 201;
pub const DEFAULT_M3_GRID_POINTS: usize = 61;
/// Step of the correlation grid used to cross-check the optimal correlation.
pub const CORRELATION_GRID_STEP: f64 = 1e-3;
pub const ROOT_RESIDUAL_TOL: f64 = 1e-10;
/// Relative tolerance under which two sweep values count as tied; ties go to
/// the earlier (smaller) grid point.
pub const TIE_TOL: f64 = 1e-12;
pub const DEFAULT_SENSOR_COUNT: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalSpacingResult {
    pub a_star: f64,
    /// `-ln(a_star) / A`; absent when `A = 0`.
    pub delta_star: Option<f64>,
    /// Optimality condition `[1 + a^2 + SNR (1 - a^2)]^2 - 2 (r_e + a^4 / r_e)` at `a_star`.
    pub residual: f64,
    pub exponent_at_optimum: f64,
    /// Argmax of the exponent over the cross-check grid.
    pub grid_argmax: f64,
    pub bisection_steps: usize,
}

/// `b = 1 + a^2 + snr (1 - a^2)`, which satisfies `r_e^2 - b r_e + a^2 = 0`.
fn quadratic_b(a: f64, snr: f64) -> f64 {
    1.0 + a * a + snr * (1.0 - a * a)
}

/// Stationarity condition of the exponent in `a` (`r_e` normalised by `sigma^2`).
pub fn optimality_condition(a: f64, snr: f64, r_e: f64) -> f64 {
    let b = quadratic_b(a, snr);
    b * b - 2.0 * (r_e + a.powi(4) / r_e)
}

/// The same condition divided by `1 - a^2`, which removes the trivial root at
/// `a = 1`: `(1 + snr) b - 2 r_e`. Negative at `a = 0` whenever `snr < 1`,
/// equal to `2 snr` at `a = 1`.
pub fn reduced_optimality_condition(a: f64, snr: f64, r_e: f64) -> f64 {
    (1.0 + snr) * quadratic_b(a, snr) - 2.0 * r_e
}

fn normalized_r_e(params: &FieldParams, a: f64) -> Result<f64> {
    let inn = scalar_riccati_fixed_point(params, CorrelationCoefficient::new(a)?)?;
    Ok(inn.r_e / params.noise_variance)
}

/// Correlation maximizing the uniform-layout exponent when `SNR < 1`.
pub fn optimal_correlation(params: &FieldParams) -> Result<OptimalSpacingResult> {
    params.validate()?;
    let snr = params.snr();
    if !(snr < 1.0) {
        return Err(Error::Domain(format!(
            "an interior optimal correlation exists only for SNR < 1 (got {snr})"
        )));
    }
    let h = |a: f64| -> Result<f64> { Ok(reduced_optimality_condition(a, snr, normalized_r_e(params, a)?)) };

    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let (h_lo, h_hi) = (h(lo)?, h(hi)?);
    if !(h_lo < 0.0 && h_hi > 0.0) {
        let diagnostic = (0..=20)
            .map(|k| {
                let a = k as f64 / 20.0;
                let g = normalized_r_e(params, a).map_or(f64::NAN, |r| optimality_condition(a, snr, r));
                (a, g)
            })
            .collect();
        return Err(Error::RootNotFound {
            message: format!("no sign change on [0, 1] (h(0) = {h_lo}, h(1) = {h_hi})"),
            diagnostic,
        });
    }
    let mut steps = 0;
    while hi - lo > 2.0 * f64::EPSILON && steps < 200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        steps += 1;
    }
    let a_star = 0.5 * (lo + hi);
    let residual = optimality_condition(a_star, snr, normalized_r_e(params, a_star)?);
    if !(residual.abs() < ROOT_RESIDUAL_TOL) {
        return Err(Error::NonConvergence {
            what: "optimal-correlation bisection",
            iterations: steps,
            residual,
            history: vec![residual],
        });
    }

    let grid = correlation_grid();
    let values = Execution::Parallel.try_map_range(grid.len(), |i| {
        scalar_exponent_at(params, CorrelationCoefficient::new(grid[i])?).map(|r| r.exponent_per_sensor)
    })?;
    let grid_argmax = grid[argmax(&values)];
    if (grid_argmax - a_star).abs() > CORRELATION_GRID_STEP + 1e-12 {
        return Err(Error::CrossCheck(format!(
            "root a* = {a_star} of the optimality condition disagrees with the grid argmax {grid_argmax}"
        )));
    }
    let exponent_at_optimum = scalar_exponent_at(params, CorrelationCoefficient::new(a_star)?)?.exponent_per_sensor;
    let delta_star = (params.diffusion_rate > 0.0).then(|| -a_star.ln() / params.diffusion_rate);
    Ok(OptimalSpacingResult {
        a_star,
        delta_star,
        residual,
        exponent_at_optimum,
        grid_argmax,
        bisection_steps: steps,
    })
}

/// `{0.001, 0.002, ..., 0.999}`.
pub fn correlation_grid() -> Vec<f64> {
    (1..1000).map(|k| k as f64 * CORRELATION_GRID_STEP).collect()
}

/// Optimal spacing `-ln(a*) / A` of the uniform layout at `SNR < 1`.
pub fn optimal_spacing(params: &FieldParams) -> Result<OptimalSpacingResult> {
    params.validate()?;
    if !(params.diffusion_rate > 0.0) {
        return Err(Error::Domain(
            "optimal spacing needs diffusion_rate > 0; every spacing gives a = 1".into(),
        ));
    }
    optimal_correlation(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Uniform layout, exponent vs correlation `a`.
    Correlation,
    /// Uniform layout, exponent vs SNR at fixed `a`.
    Snr,
    /// Periodic clustering, exponent vs cluster size `M`.
    ClusterSize,
    /// `M = 2`, exponent vs the first offset.
    Offset,
    /// `M = 3`, exponent vs the positions `(x2, x3)` within a period.
    OffsetPair,
    /// Uniform layout covering a fixed field, exponent vs sensor count.
    FieldSensors,
    /// Optimal spacing vs SNR.
    OptimalSpacing,
}

/// Shape of the optimal configuration within a period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigClass {
    /// All sensors of a period co-located.
    Clustering,
    /// Equally spaced sensors.
    Uniform,
    /// Two co-located sensors and a third half a period away (`M = 3`).
    TwoPlusOne,
    Intermediate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub coords: Vec<f64>,
    pub exponent_per_sensor: f64,
    pub exponent_per_block: f64,
    /// `exp(-n K)` with `n` the sweep's sensor count.
    pub approx_miss_prob: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub coordinate_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_names: Vec<String>,
    pub n_sensors: usize,
    pub points: Vec<SweepPoint>,
    pub argmax: usize,
    pub argmax_coords: Vec<f64>,
    pub classification: Option<ConfigClass>,
}

impl SweepResult {
    fn assemble(
        axis: SweepAxis,
        coordinate_names: &[&str],
        extra_names: &[&str],
        n_sensors: usize,
        points: Vec<SweepPoint>,
        objective: impl Fn(&SweepPoint) -> f64,
    ) -> Self {
        let values: Vec<f64> = points.iter().map(objective).collect();
        let best = argmax(&values);
        SweepResult {
            axis,
            coordinate_names: coordinate_names.iter().map(|s| s.to_string()).collect(),
            extra_names: extra_names.iter().map(|s| s.to_string()).collect(),
            n_sensors,
            argmax_coords: points[best].coords.clone(),
            argmax: best,
            points,
            classification: None,
        }
    }

    pub fn best(&self) -> &SweepPoint {
        &self.points[self.argmax]
    }

    pub fn exponents_per_sensor(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.exponent_per_sensor).collect()
    }

    pub fn exponents_per_block(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.exponent_per_block).collect()
    }

    /// One header line plus one row per point; numbers use the shortest
    /// representation that round-trips.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let mut header: Vec<&str> = self.coordinate_names.iter().map(String::as_str).collect();
        header.extend(["K_per_sensor", "K_per_block", "approx_miss_prob"]);
        header.extend(self.extra_names.iter().map(String::as_str));
        header.push("is_argmax");
        out.push_str(&header.join(","));
        out.push('\n');
        for (i, p) in self.points.iter().enumerate() {
            let mut row: Vec<String> = p.coords.iter().map(|v| v.to_string()).collect();
            row.push(p.exponent_per_sensor.to_string());
            row.push(p.exponent_per_block.to_string());
            row.push(p.approx_miss_prob.to_string());
            row.extend(p.extra.iter().map(|v| v.to_string()));
            row.push(u8::from(i == self.argmax).to_string());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Index of the maximum; values within [`TIE_TOL`] of the running best do
/// not displace it.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        let b = values[best];
        if v > b + TIE_TOL * b.abs().max(1.0) {
            best = i;
        }
    }
    best
}

fn check_increasing(grid: &[f64], what: &str) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid(format!("{what} grid is empty")));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid(format!("{what} grid must be strictly increasing")));
    }
    Ok(())
}

fn point(coords: Vec<f64>, per_sensor: f64, per_block: f64, n: usize) -> SweepPoint {
    SweepPoint {
        coords,
        exponent_per_sensor: per_sensor,
        exponent_per_block: per_block,
        approx_miss_prob: (-(n as f64) * per_sensor).exp(),
        extra: Vec::new(),
    }
}

/// `count` equally spaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|k| if k + 1 == count { hi } else { lo + (hi - lo) * k as f64 / (count - 1) as f64 })
            .collect(),
    }
}

/// Uniform-layout exponent over a grid of correlations.
pub fn correlation_sweep(
    params: &FieldParams,
    correlations: &[f64],
    n_sensors: usize,
    exec: Execution,
) -> Result<SweepResult> {
    params.validate()?;
    check_increasing(correlations, "correlation")?;
    let points = exec.try_map_range(correlations.len(), |i| {
        let a = correlations[i];
        let r = scalar_exponent_at(params, CorrelationCoefficient::new(a)?)?;
        Ok::<_, Error>(point(vec![a], r.exponent_per_sensor, r.exponent_per_block, n_sensors))
    })?;
    Ok(SweepResult::assemble(
        SweepAxis::Correlation,
        &["a"],
        &[],
        n_sensors,
        points,
        |p| p.exponent_per_sensor,
    ))
}

/// Uniform-layout exponent over SNR values at fixed correlation (unit noise).
pub fn snr_sweep(
    correlation: CorrelationCoefficient,
    snrs: &[f64],
    n_sensors: usize,
    exec: Execution,
) -> Result<SweepResult> {
    check_increasing(snrs, "SNR")?;
    let points = exec.try_map_range(snrs.len(), |i| {
        let params = FieldParams::from_snr(1.0, snrs[i])?;
        let r = scalar_exponent_at(&params, correlation)?;
        Ok::<_, Error>(point(vec![snrs[i]], r.exponent_per_sensor, r.exponent_per_block, n_sensors))
    })?;
    Ok(SweepResult::assemble(SweepAxis::Snr, &["snr"], &[], n_sensors, points, |p| {
        p.exponent_per_sensor
    }))
}

/// `n_total` sensors over `field_length`, grouped into clusters of each size
/// in `sizes`; cluster period `field_length / (n_total / M)`.
pub fn cluster_size_sweep(params: &FieldParams, field_length: f64, n_total: usize, sizes: &[usize]) -> Result<SweepResult> {
    params.validate()?;
    if !(field_length > 0.0) {
        return Err(Error::invalid("field_length must be > 0"));
    }
    if sizes.is_empty() || sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("cluster sizes must be nonempty and strictly increasing"));
    }
    let mut points = Vec::with_capacity(sizes.len());
    for &m in sizes {
        if m == 0 || n_total % m != 0 {
            return Err(Error::invalid(format!("cluster size {m} does not divide n_total = {n_total}")));
        }
        let clusters = n_total / m;
        let period = field_length / clusters as f64;
        let layout = SensorLayout::Clustered {
            cluster_size: m,
            cluster_count: clusters,
            period,
        };
        let r = clustering_exponent(params, &layout)?;
        let mut p = point(vec![m as f64], r.exponent_per_sensor, r.exponent_per_block, n_total);
        p.extra.push(period);
        points.push(p);
    }
    Ok(SweepResult::assemble(
        SweepAxis::ClusterSize,
        &["M"],
        &["period"],
        n_total,
        points,
        |p| p.exponent_per_sensor,
    ))
}

/// Uniform layouts covering a field of fixed length with `n` sensors
/// (spacing `field_length / n`); the extra column is `n K(n)`.
pub fn field_sensor_sweep(params: &FieldParams, field_length: f64, n_values: &[usize]) -> Result<SweepResult> {
    params.validate()?;
    if !(field_length > 0.0) {
        return Err(Error::invalid("field_length must be > 0"));
    }
    if n_values.is_empty() || n_values[0] == 0 || n_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("sensor counts must be positive and strictly increasing"));
    }
    let mut points = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let r = scalar_exponent(params, field_length / n as f64)?;
        let mut p = point(vec![n as f64], r.exponent_per_sensor, r.exponent_per_block, n);
        p.extra.push(n as f64 * r.exponent_per_sensor);
        points.push(p);
    }
    let max_n = *n_values.last().unwrap_or(&1);
    Ok(SweepResult::assemble(
        SweepAxis::FieldSensors,
        &["n"],
        &["n_times_K"],
        max_n,
        points,
        |p| p.extra[0],
    ))
}

/// Optimal correlation and spacing over a grid of SNR values (all `< 1`).
pub fn optimal_spacing_sweep(diffusion_rate: f64, snrs: &[f64], exec: Execution) -> Result<SweepResult> {
    check_increasing(snrs, "SNR")?;
    let points = exec.try_map_range(snrs.len(), |i| {
        let params = FieldParams::from_snr(diffusion_rate, snrs[i])?;
        let opt = optimal_spacing(&params)?;
        let mut p = point(vec![snrs[i]], opt.exponent_at_optimum, opt.exponent_at_optimum, DEFAULT_SENSOR_COUNT);
        p.extra = vec![opt.a_star, opt.delta_star.unwrap_or(f64::NAN)];
        Ok::<_, Error>(p)
    })?;
    Ok(SweepResult::assemble(
        SweepAxis::OptimalSpacing,
        &["snr"],
        &["a_star", "delta_star"],
        DEFAULT_SENSOR_COUNT,
        points,
        |p| p.exponent_per_sensor,
    ))
}

fn classify_gaps(gaps: &[f64], period: f64, tol: f64) -> ConfigClass {
    let m = gaps.len();
    let near = |x: f64, y: f64| (x - y).abs() <= tol;
    let zeros = gaps.iter().filter(|&&g| near(g, 0.0)).count();
    if zeros == m - 1 {
        ConfigClass::Clustering
    } else if gaps.iter().all(|&g| near(g, period / m as f64)) {
        ConfigClass::Uniform
    } else if m == 3 && zeros == 1 && gaps.iter().filter(|&&g| near(g, period / 2.0)).count() == 2 {
        ConfigClass::TwoPlusOne
    } else {
        ConfigClass::Intermediate
    }
}

/// Shape of a periodic configuration given its offsets (gaps summing to the
/// period); `tol` is the slack allowed on each gap.
pub fn classify_offsets(offsets: &[f64], tol: f64) -> ConfigClass {
    let period: f64 = offsets.iter().sum();
    classify_gaps(offsets, period, tol)
}

/// Two sensors per period; the first offset runs over `[0, period]`.
pub fn offset_sweep_m2(
    params: &FieldParams,
    period: f64,
    grid_points: usize,
    n_sensors: usize,
    exec: Execution,
) -> Result<SweepResult> {
    params.validate()?;
    if !(period > 0.0) {
        return Err(Error::invalid("period must be > 0"));
    }
    if grid_points < 3 {
        return Err(Error::invalid("grid_points must be >= 3"));
    }
    let grid = linspace(0.0, period, grid_points);
    let points = exec.try_map_range(grid.len(), |i| {
        let d1 = grid[i];
        let r = periodic_exponent(params, &[d1, (period - d1).max(0.0)])?;
        Ok::<_, Error>(point(vec![d1], r.exponent_per_sensor, r.exponent_per_block, n_sensors))
    })?;
    let mut res = SweepResult::assemble(
        SweepAxis::Offset,
        &["delta1"],
        &[],
        n_sensors,
        points,
        |p| p.exponent_per_block,
    );
    let best = res.argmax_coords[0];
    let tol = 0.5 * period / (grid_points - 1) as f64;
    res.classification = Some(classify_gaps(&[best, period - best], period, tol));
    Ok(res)
}

/// Offsets of the period with sensors at `0, x2, x3`.
pub fn offsets_from_positions(x2: f64, x3: f64, period: f64) -> Vec<f64> {
    let (lo, hi) = if x2 <= x3 { (x2, x3) } else { (x3, x2) };
    vec![lo, hi - lo, (period - hi).max(0.0)]
}

/// Three sensors per period at `0, x2, x3` with `(x2, x3)` over `[0, period]^2`.
/// Points are ordered with `x2` outer, `x3` inner.
pub fn offset_sweep_m3(
    params: &FieldParams,
    period: f64,
    grid_points: usize,
    n_sensors: usize,
    exec: Execution,
) -> Result<SweepResult> {
    params.validate()?;
    if !(period > 0.0) {
        return Err(Error::invalid("period must be > 0"));
    }
    if grid_points < 3 {
        return Err(Error::invalid("grid_points must be >= 3"));
    }
    let grid = linspace(0.0, period, grid_points);
    let g = grid.len();
    let points = exec.try_map_range(g * g, |idx| {
        let (x2, x3) = (grid[idx / g], grid[idx % g]);
        let r = periodic_exponent(params, &offsets_from_positions(x2, x3, period))?;
        Ok::<_, Error>(point(vec![x2, x3], r.exponent_per_sensor, r.exponent_per_block, n_sensors))
    })?;
    let mut res = SweepResult::assemble(
        SweepAxis::OffsetPair,
        &["x2", "x3"],
        &[],
        n_sensors,
        points,
        |p| p.exponent_per_block,
    );
    let (x2, x3) = (res.argmax_coords[0], res.argmax_coords[1]);
    let tol = 0.5 * period / (grid_points - 1) as f64;
    res.classification = Some(classify_offsets(&offsets_from_positions(x2, x3, period), tol));
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn argmax_prefers_first_of_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[1.0, 1.0 + 1e-14, 0.5]), 0);
        assert_eq!(argmax(&[1.0, 1.0 + 1e-9]), 1);
    }

    #[test]
    fn linspace_hits_endpoints() {
        let g = linspace(0.0, 0.03, 61);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[60], 0.03);
        assert_abs_diff_eq!(g[20], 0.01, epsilon = 1e-17);
    }

    #[test]
    fn condition_forms_agree() {
        for (a, snr) in [(0.3, 0.5), (0.9, 0.1), (0.5, 2.0)] {
            let params = FieldParams::from_snr(1.0, snr).unwrap();
            let r = normalized_r_e(&params, a).unwrap();
            assert_abs_diff_eq!(
                optimality_condition(a, snr, r),
                (1.0 - a * a) * reduced_optimality_condition(a, snr, r),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn optimum_rejects_high_snr() {
        let p = FieldParams::from_snr(1.0, 1.0).unwrap();
        assert!(matches!(optimal_correlation(&p), Err(Error::Domain(_))));
        let still = FieldParams::from_snr(0.0, 0.5).unwrap();
        assert!(matches!(optimal_spacing(&still), Err(Error::Domain(_))));
    }

    #[test]
    fn optimum_is_interior_and_beats_neighbours() {
        let p = FieldParams::from_snr(1.0, 0.5).unwrap();
        let opt = optimal_correlation(&p).unwrap();
        assert!(opt.a_star > 0.0 && opt.a_star < 1.0);
        assert!(opt.residual.abs() < ROOT_RESIDUAL_TOL);
        for da in [-1e-3, 1e-3] {
            let k = scalar_exponent_at(&p, CorrelationCoefficient::new(opt.a_star + da).unwrap())
                .unwrap()
                .exponent_per_sensor;
            assert!(opt.exponent_at_optimum >= k);
        }
        assert_abs_diff_eq!(opt.delta_star.unwrap(), -opt.a_star.ln(), epsilon = 1e-15);
    }

    #[test]
    fn spacing_scales_inversely_with_rate() {
        let one = optimal_spacing(&FieldParams::from_snr(1.0, 0.3).unwrap()).unwrap();
        let two = optimal_spacing(&FieldParams::from_snr(2.0, 0.3).unwrap()).unwrap();
        assert_abs_diff_eq!(two.delta_star.unwrap(), one.delta_star.unwrap() / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn cluster_sweep_rejects_non_divisors() {
        let p = FieldParams::from_snr(1.0, 10.0).unwrap();
        assert!(matches!(
            cluster_size_sweep(&p, 1.0, 100, &[1, 3]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn classification() {
        let tol = 1e-6;
        assert_eq!(classify_offsets(&[0.0, 0.0, 0.03], tol), ConfigClass::Clustering);
        assert_eq!(classify_offsets(&[0.0, 0.03, 0.0], tol), ConfigClass::Clustering);
        assert_eq!(classify_offsets(&[0.01, 0.01, 0.01], tol), ConfigClass::Uniform);
        assert_eq!(classify_offsets(&[0.0, 0.015, 0.015], tol), ConfigClass::TwoPlusOne);
        assert_eq!(classify_offsets(&[0.015, 0.0, 0.015], tol), ConfigClass::TwoPlusOne);
        assert_eq!(classify_offsets(&[0.005, 0.01, 0.015], tol), ConfigClass::Intermediate);
        assert_eq!(classify_offsets(&[0.01, 0.01], tol), ConfigClass::Uniform);
        assert_eq!(classify_offsets(&[0.02, 0.0], tol), ConfigClass::Clustering);
    }

    #[test]
    fn offsets_from_unordered_positions() {
        assert_eq!(offsets_from_positions(0.02, 0.01, 0.03), vec![0.01, 0.01, 0.009999999999999998]);
        assert_eq!(offsets_from_positions(0.0, 0.03, 0.03), vec![0.0, 0.03, 0.0]);
    }

    #[test]
    fn m2_sweep_is_symmetric() {
        let p = FieldParams::from_snr_db(8.0, 10.0).unwrap();
        let s = offset_sweep_m2(&p, 0.02, 41, 100, Execution::Parallel).unwrap();
        let k = s.exponents_per_block();
        for i in 0..k.len() {
            assert_abs_diff_eq!(k[i], k[k.len() - 1 - i], epsilon = 1e-9);
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let p = FieldParams::from_snr(1.0, 10.0).unwrap();
        let s = correlation_sweep(&p, &[0.0, 0.5, 0.9], 10, Execution::Sequential).unwrap();
        let csv = s.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "a,K_per_sensor,K_per_block,approx_miss_prob,is_argmax");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].ends_with(",1"));
    }

    #[test]
    fn grids_must_increase() {
        let p = FieldParams::from_snr(1.0, 10.0).unwrap();
        assert!(correlation_sweep(&p, &[0.5, 0.5], 10, Execution::Sequential).is_err());
    }
}
