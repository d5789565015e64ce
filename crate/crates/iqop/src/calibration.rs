//! Coupler calibration from characterization measurements.
//!
//! A characterized device reports the normalized output powers (P₄, P₃) of a
//! directional coupler with waveguide separation `d_m` (µm) and mask coupling
//! length `l_c` (mm). The coupling phase follows from P₄ = cos²θ, but only up
//! to the fold ambiguity of arccos: [`unwrap_series`] resolves the fold
//! indices of a fixed-separation series by brute force, scoring each
//! candidate assignment with the least-squares line
//!
//! ```text
//!   θ = a_l · l_c + b_l        (a_l = κ, b_l = κ·Δl_c)
//! ```
//!
//! and keeping the admissible assignment (nondecreasing phases, positive
//! slope) with the smallest RMS residual. Across series the coupling
//! coefficient decays exponentially with separation,
//!
//! ```text
//!   κ(d_m) = κ₀ · e^(-γ·d_m)
//! ```
//!
//! fitted in log space by [`fit_kappa`]; [`design_coupler`] inverts the law
//! to find a geometry for a target phase.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Separation range (µm) covered by the characterization data.
pub const CALIBRATED_SEPARATION_UM: (f64, f64) = (3.0, 7.5);
/// Mask coupling-length range (mm) covered by the characterization data.
pub const CALIBRATED_LENGTH_MM: (f64, f64) = (0.5, 2.0);

/// Largest fold index tried per point during unwrapping. Four folds cover
/// phases up to 2π + π/2, enough for the calibrated geometry range.
pub const DEFAULT_MAX_FOLD: u32 = 4;

/// Slack allowed on P₄ + P₃ around 1 after scaling; absorbs the rounding of
/// printed percentages.
pub const POWER_SUM_TOL: f64 = 0.02;

/// One characterized coupler: geometry plus normalized output powers.
/// Construction rescales (P₄, P₃) to sum to exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplerMeasurement {
    /// Waveguide separation, µm.
    pub d_m: f64,
    /// Mask coupling length, mm.
    pub l_c: f64,
    /// Bar-port power fraction.
    pub p4: f64,
    /// Cross-port power fraction.
    pub p3: f64,
}

impl CouplerMeasurement {
    pub fn new(d_m: f64, l_c: f64, p4: f64, p3: f64) -> Result<Self> {
        if !(d_m.is_finite() && d_m > 0.0) || !(l_c.is_finite() && l_c > 0.0) {
            return Err(Error::invalid(format!(
                "geometry must be positive, got d_m = {d_m}, l_c = {l_c}"
            )));
        }
        if !(p4.is_finite() && p3.is_finite()) || p4 < 0.0 || p3 < 0.0 {
            return Err(Error::invalid(format!(
                "powers must be non-negative, got P4 = {p4}, P3 = {p3}"
            )));
        }
        let sum = p4 + p3;
        if (sum - 1.0).abs() > POWER_SUM_TOL {
            return Err(Error::invalid(format!(
                "P4 + P3 = {sum} is not 1 within {POWER_SUM_TOL}"
            )));
        }
        let p4 = p4 / sum;
        Ok(CouplerMeasurement {
            d_m,
            l_c,
            p4,
            p3: 1.0 - p4,
        })
    }
}

/// All measurements sharing one separation, ordered by increasing length.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSeries {
    pub d_m: f64,
    records: Vec<CouplerMeasurement>,
}

impl MeasurementSeries {
    pub fn new(d_m: f64, records: Vec<CouplerMeasurement>) -> Result<Self> {
        for r in &records {
            if r.d_m != d_m {
                return Err(Error::invalid(format!(
                    "record with d_m = {} placed in the {} µm series",
                    r.d_m, d_m
                )));
            }
        }
        for pair in records.windows(2) {
            if pair[1].l_c <= pair[0].l_c {
                return Err(Error::invalid(format!(
                    "coupling lengths must be strictly increasing within a series \
                     (d_m = {d_m}: {} then {})",
                    pair[0].l_c, pair[1].l_c
                )));
            }
        }
        Ok(MeasurementSeries { d_m, records })
    }

    pub fn records(&self) -> &[CouplerMeasurement] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// A full characterization table, grouped into fixed-separation series.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementTable {
    records: Vec<CouplerMeasurement>,
    /// Free-form notes (wavelength, substrate, mask width, ...).
    pub metadata: Vec<String>,
}

impl MeasurementTable {
    /// Sorts records by (d_m, l_c); duplicate geometry entries are rejected.
    pub fn new(mut records: Vec<CouplerMeasurement>, metadata: Vec<String>) -> Result<Self> {
        records.sort_by(|a, b| {
            a.d_m
                .total_cmp(&b.d_m)
                .then_with(|| a.l_c.total_cmp(&b.l_c))
        });
        let mut duplicates = Vec::new();
        for pair in records.windows(2) {
            if pair[0].d_m == pair[1].d_m && pair[0].l_c == pair[1].l_c {
                duplicates.push(format!(
                    "duplicate record for d_m = {}, l_c = {}",
                    pair[0].d_m, pair[0].l_c
                ));
            }
        }
        if !duplicates.is_empty() {
            return Err(Error::Validation(duplicates));
        }
        Ok(MeasurementTable { records, metadata })
    }

    pub fn records(&self) -> &[CouplerMeasurement] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The fixed-separation series, in increasing separation order.
    pub fn series(&self) -> Vec<MeasurementSeries> {
        let mut out: Vec<MeasurementSeries> = Vec::new();
        for record in &self.records {
            match out.last_mut() {
                Some(s) if s.d_m == record.d_m => s.records.push(record.clone()),
                _ => out.push(MeasurementSeries {
                    d_m: record.d_m,
                    records: vec![record.clone()],
                }),
            }
        }
        out
    }
}

/// Coupling phase in the first quadrant: θ = arccos√P₄ ∈ [0, π/2].
///
/// Accepts P₄ within [`POWER_SUM_TOL`] outside [0, 1] (clamped) to absorb
/// rounding in normalized data.
pub fn extract_phase(p4: f64) -> Result<f64> {
    if !p4.is_finite() || !(-POWER_SUM_TOL..=1.0 + POWER_SUM_TOL).contains(&p4) {
        return Err(Error::invalid(format!(
            "P4 = {p4} is outside [0, 1] beyond the {POWER_SUM_TOL} slack"
        )));
    }
    Ok(p4.clamp(0.0, 1.0).sqrt().acos())
}

/// The phase a first-quadrant value θ₀ unfolds to at fold index `q`:
/// even q → (q/2)·π + θ₀, odd q → ((q+1)/2)·π − θ₀. Fold 0 is θ₀ itself.
pub fn fold_phase(theta0: f64, q: u32) -> f64 {
    let k = q.div_ceil(2) as f64;
    if q.is_multiple_of(2) {
        k * std::f64::consts::PI + theta0
    } else {
        k * std::f64::consts::PI - theta0
    }
}

fn line_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = x.len() as f64;
    let xm = x.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|&v| (v - xm) * (v - xm)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(&u, &v)| (u - xm) * (v - ym)).sum();
    let a = sxy / sxx;
    let b = ym - a * xm;
    let mse: f64 = x
        .iter()
        .zip(y)
        .map(|(&u, &v)| {
            let r = v - (a * u + b);
            r * r
        })
        .sum::<f64>()
        / n;
    Some((a, b, mse.sqrt()))
}

/// Per-series calibration line θ = a_l·l_c + b_l with the fold indices that
/// produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesFit {
    /// Waveguide separation of the series, µm.
    pub d_m: f64,
    /// Slope, rad/mm; equals the coupling coefficient κ at this separation.
    pub a_l: f64,
    /// Intercept, rad; equals κ·Δl_c.
    pub b_l: f64,
    /// Effective extra coupling length from the bends, mm (b_l / a_l).
    pub delta_l_c: f64,
    /// Chosen fold index per point, in increasing-l_c order.
    pub fold_assignment: Vec<u32>,
    /// RMS residual of the line, rad.
    pub residual: f64,
}

struct Candidate {
    folds: Vec<u32>,
    fold_sum: u32,
    a: f64,
    b: f64,
    rms: f64,
}

#[allow(clippy::too_many_arguments)]
fn search_folds(
    lc: &[f64],
    theta0: &[f64],
    max_fold: u32,
    k: usize,
    q_min: u32,
    theta_prev: f64,
    folds: &mut Vec<u32>,
    thetas: &mut Vec<f64>,
    best: &mut Option<Candidate>,
) {
    if k == lc.len() {
        let Some((a, b, rms)) = line_fit(lc, thetas) else {
            return;
        };
        if a <= 0.0 {
            return;
        }
        let fold_sum: u32 = folds.iter().sum();
        let replace = match best {
            None => true,
            Some(cur) => {
                // On a uniform length grid every assignment has an exact
                // mirror (slope π/h − a, intercept −b) with identical RMS,
                // and π-shifted assignments tie as well. Arbitrate ties by
                // the least total winding, then require the bend offset to
                // be non-negative, then take the weaker coupling.
                let tie = (rms - cur.rms).abs() <= 1e-9 * (1.0 + cur.rms.max(rms));
                if tie {
                    if fold_sum != cur.fold_sum {
                        fold_sum < cur.fold_sum
                    } else {
                        let sign = |x: f64| x < -1e-9;
                        if sign(b) != sign(cur.b) {
                            !sign(b)
                        } else {
                            a < cur.a
                        }
                    }
                } else {
                    rms < cur.rms
                }
            }
        };
        if replace {
            *best = Some(Candidate {
                folds: folds.clone(),
                fold_sum,
                a,
                b,
                rms,
            });
        }
        return;
    }
    for q in q_min..=max_fold {
        let theta = fold_phase(theta0[k], q);
        if theta + 1e-12 < theta_prev {
            continue;
        }
        folds[k] = q;
        thetas[k] = theta;
        search_folds(lc, theta0, max_fold, k + 1, q, theta, folds, thetas, best);
    }
}

/// Resolves the fold ambiguity of one fixed-separation series and fits the
/// calibration line; see the module docs for the scoring rule.
pub fn unwrap_series(series: &MeasurementSeries) -> Result<SeriesFit> {
    unwrap_series_with_max_fold(series, DEFAULT_MAX_FOLD)
}

/// [`unwrap_series`] with an explicit fold-search bound.
pub fn unwrap_series_with_max_fold(series: &MeasurementSeries, max_fold: u32) -> Result<SeriesFit> {
    if series.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "series d_m = {} has {} point(s); need at least 2",
            series.d_m,
            series.len()
        )));
    }
    let lc: Vec<f64> = series.records().iter().map(|r| r.l_c).collect();
    let theta0 = series
        .records()
        .iter()
        .map(|r| extract_phase(r.p4))
        .collect::<Result<Vec<f64>>>()?;

    let mut folds = vec![0u32; lc.len()];
    let mut thetas = vec![0.0f64; lc.len()];
    let mut best: Option<Candidate> = None;
    search_folds(
        &lc,
        &theta0,
        max_fold,
        0,
        0,
        f64::NEG_INFINITY,
        &mut folds,
        &mut thetas,
        &mut best,
    );

    let Some(c) = best else {
        return Err(Error::FitFailure(format!(
            "series d_m = {}: no fold assignment up to {max_fold} yields an \
             increasing phase line with positive slope",
            series.d_m
        )));
    };
    Ok(SeriesFit {
        d_m: series.d_m,
        a_l: c.a,
        b_l: c.b,
        delta_l_c: c.b / c.a,
        fold_assignment: c.folds,
        residual: c.rms,
    })
}

/// The unfolded (l_c, θ) points behind a series fit.
pub fn unwrapped_phases(series: &MeasurementSeries, fit: &SeriesFit) -> Result<Vec<(f64, f64)>> {
    if fit.fold_assignment.len() != series.len() {
        return Err(Error::invalid(format!(
            "fold assignment covers {} points but the series has {}",
            fit.fold_assignment.len(),
            series.len()
        )));
    }
    series
        .records()
        .iter()
        .zip(&fit.fold_assignment)
        .map(|(r, &q)| Ok((r.l_c, fold_phase(extract_phase(r.p4)?, q))))
        .collect()
}

/// Log-linear least squares for y = amplitude · e^(−rate·x). Returns
/// (amplitude, rate, RMS of the log-space residuals — approximately the
/// relative RMS).
pub fn fit_exponential(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "mismatched input lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "exponential fit needs at least 2 points, got {}",
            x.len()
        )));
    }
    if y.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
        return Err(Error::invalid("exponential fit needs positive values"));
    }
    let logs: Vec<f64> = y.iter().map(|&v| v.ln()).collect();
    let Some((slope, intercept, rms)) = line_fit(x, &logs) else {
        return Err(Error::InsufficientData(
            "exponential fit needs at least two distinct abscissae".into(),
        ));
    };
    Ok((intercept.exp(), -slope, rms))
}

/// Exponential fit of the phase against separation at one fixed length:
/// θ(d_m) = a_e · e^(−b_e·d_m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthFit {
    /// Mask coupling length, mm.
    pub l_c: f64,
    pub a_e: f64,
    pub b_e: f64,
    /// RMS of the log-space residuals.
    pub residual: f64,
}

/// Fitted calibration: per-series lines plus the global coupling law
/// κ(d_m) = κ₀·e^(−γ·d_m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub series: Vec<SeriesFit>,
    /// rad/mm.
    pub kappa0: f64,
    /// 1/µm.
    pub gamma: f64,
    /// RMS of the log-space residuals of ln κ against d_m; approximately the
    /// relative RMS of the coupling-law fit.
    pub fit_residual: f64,
    /// Optional per-length exponential fits θ(d_m) at each fixed l_c.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub length_fits: Vec<LengthFit>,
}

impl CalibrationModel {
    /// A model holding only the coupling law, e.g. externally supplied parameters.
    pub fn from_law(kappa0: f64, gamma: f64) -> Result<Self> {
        let model = CalibrationModel {
            series: Vec::new(),
            kappa0,
            gamma,
            fit_residual: 0.0,
            length_fits: Vec::new(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa0.is_finite() && self.kappa0 > 0.0) {
            return Err(Error::invalid(format!(
                "kappa0 must be positive, got {}",
                self.kappa0
            )));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::invalid(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// Coupling coefficient κ₀·e^(−γ·d_m) in rad/mm at separation `d_m` µm.
    pub fn predict_kappa(&self, d_m: f64) -> f64 {
        self.kappa0 * (-self.gamma * d_m).exp()
    }

    /// Coupling phase of a coupler with the given geometry, rad.
    pub fn predict_theta(&self, d_m: f64, l_c: f64, delta_l_c: f64) -> f64 {
        self.predict_kappa(d_m) * (l_c + delta_l_c)
    }
}

/// Fits the exponential coupling law to the per-series slopes. Requires at
/// least two series at distinct separations with positive slopes.
pub fn fit_kappa(fits: &[SeriesFit]) -> Result<CalibrationModel> {
    if fits.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "coupling-law fit needs at least 2 series, got {}",
            fits.len()
        )));
    }
    if let Some(bad) = fits.iter().find(|f| !(f.a_l.is_finite() && f.a_l > 0.0)) {
        return Err(Error::invalid(format!(
            "series d_m = {} has non-positive slope {}",
            bad.d_m, bad.a_l
        )));
    }
    let x: Vec<f64> = fits.iter().map(|f| f.d_m).collect();
    let y: Vec<f64> = fits.iter().map(|f| f.a_l).collect();
    let (kappa0, gamma, residual) = match fit_exponential(&x, &y) {
        Err(Error::InsufficientData(_)) => {
            return Err(Error::InsufficientData(
                "coupling-law fit needs series at two distinct separations".into(),
            ))
        }
        other => other?,
    };
    if gamma <= 0.0 {
        return Err(Error::FitFailure(format!(
            "fitted coupling law does not decay with separation (gamma = {gamma})"
        )));
    }
    Ok(CalibrationModel {
        series: fits.to_vec(),
        kappa0,
        gamma,
        fit_residual: residual,
        length_fits: Vec::new(),
    })
}

/// Per-length exponential fits θ(d_m) = a_e·e^(−b_e·d_m) from unfolded
/// phases. `cells` maps each l_c to its (d_m, θ) points; lengths with fewer
/// than two points are skipped.
pub fn fit_length_series(cells: &[(f64, Vec<(f64, f64)>)]) -> Vec<LengthFit> {
    let mut out = Vec::new();
    for (l_c, points) in cells {
        if points.len() < 2 {
            continue;
        }
        let x: Vec<f64> = points.iter().map(|p| p.0).collect();
        let y: Vec<f64> = points.iter().map(|p| p.1).collect();
        if let Ok((a_e, b_e, residual)) = fit_exponential(&x, &y) {
            out.push(LengthFit {
                l_c: *l_c,
                a_e,
                b_e,
                residual,
            });
        }
    }
    out
}

/// Joint refit of all series under one shared bend contribution Δl_c:
/// θ_i = a_i·(l_c + Δ) with per-series slopes and a common Δ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedDeltaFit {
    pub delta_l_c: f64,
    /// (d_m, slope) per series.
    pub slopes: Vec<(f64, f64)>,
    /// RMS residual over all points, rad.
    pub residual: f64,
}

/// Fits [`SharedDeltaFit`] to unfolded series points `(d_m, [(l_c, θ)])` by
/// profiling the residual over Δ (coarse scan, then golden-section).
pub fn fit_shared_delta(series_points: &[(f64, Vec<(f64, f64)>)]) -> Result<SharedDeltaFit> {
    if series_points.is_empty() || series_points.iter().any(|(_, pts)| pts.len() < 2) {
        return Err(Error::InsufficientData(
            "shared-offset fit needs every series to have at least 2 points".into(),
        ));
    }
    let l_min = series_points
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|p| p.0))
        .fold(f64::INFINITY, f64::min);
    let total_points: usize = series_points.iter().map(|(_, pts)| pts.len()).sum();

    // Residual sum of squares with per-series slopes profiled out.
    let rss = |delta: f64| -> f64 {
        let mut total = 0.0;
        for (_, pts) in series_points {
            let syy: f64 = pts.iter().map(|p| p.1 * p.1).sum();
            let sxy: f64 = pts.iter().map(|p| p.1 * (p.0 + delta)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 + delta) * (p.0 + delta)).sum();
            total += syy - sxy * sxy / sxx;
        }
        total
    };

    let lo = -l_min + 1e-6;
    let hi = 10.0;
    let steps = 2000;
    let mut best_k = 0;
    let mut best_val = f64::INFINITY;
    for k in 0..=steps {
        let d = lo + (hi - lo) * k as f64 / steps as f64;
        let v = rss(d);
        if v < best_val {
            best_val = v;
            best_k = k;
        }
    }
    let width = (hi - lo) / steps as f64;
    let mut a = lo + (best_k as f64 - 1.0).max(0.0) * width;
    let mut b = (lo + (best_k + 1) as f64 * width).min(hi);
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut x1, mut x2) = (b - phi * (b - a), a + phi * (b - a));
    let (mut f1, mut f2) = (rss(x1), rss(x2));
    for _ in 0..200 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = rss(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = rss(x2);
        }
        if (b - a).abs() < 1e-13 {
            break;
        }
    }
    let delta = 0.5 * (a + b);

    let mut slopes = Vec::with_capacity(series_points.len());
    for (d_m, pts) in series_points {
        let sxy: f64 = pts.iter().map(|p| p.1 * (p.0 + delta)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 + delta) * (p.0 + delta)).sum();
        let slope = sxy / sxx;
        if slope <= 0.0 {
            return Err(Error::FitFailure(format!(
                "shared-offset fit gives non-positive slope for d_m = {d_m}"
            )));
        }
        slopes.push((*d_m, slope));
    }
    Ok(SharedDeltaFit {
        delta_l_c: delta,
        slopes,
        residual: (rss(delta).max(0.0) / total_points as f64).sqrt(),
    })
}

/// Which geometry coordinate is held fixed during inverse design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DesignConstraint {
    /// Fix the separation (µm) and solve for the length.
    FixedSeparation(f64),
    /// Fix the mask length (mm) and solve for the separation.
    FixedLength(f64),
}

/// An inverse-design result. `extrapolated` is set when either coordinate
/// falls outside the calibrated geometry box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplerDesign {
    /// Waveguide separation, µm.
    pub d_m: f64,
    /// Mask coupling length, mm.
    pub l_c: f64,
    /// Forward prediction κ(d_m)·(l_c + Δl_c) for the returned geometry.
    pub predicted_theta: f64,
    pub extrapolated: bool,
}

/// Solves the coupling law for a geometry realizing `target_theta`.
///
/// With a fixed separation: l_c = θ/κ(d_m) − Δl_c. With a fixed length:
/// d_m = ln(κ₀·(l_c + Δl_c)/θ)/γ. Geometry outside the calibrated box is
/// returned with the `extrapolated` flag set rather than rejected.
pub fn design_coupler(
    model: &CalibrationModel,
    target_theta: f64,
    constraint: DesignConstraint,
    delta_l_c: f64,
) -> Result<CouplerDesign> {
    model.validate()?;
    if !(target_theta.is_finite() && target_theta > 0.0) {
        return Err(Error::invalid(format!(
            "target phase must be positive, got {target_theta}"
        )));
    }
    if !delta_l_c.is_finite() {
        return Err(Error::invalid("length offset must be finite"));
    }
    let (d_m, l_c) = match constraint {
        DesignConstraint::FixedSeparation(d_m) => {
            if !(d_m.is_finite() && d_m > 0.0) {
                return Err(Error::invalid(format!(
                    "separation must be positive, got {d_m}"
                )));
            }
            let l_c = target_theta / model.predict_kappa(d_m) - delta_l_c;
            if !(l_c.is_finite() && l_c > 0.0) {
                return Err(Error::InfeasibleDesign(format!(
                    "required mask length {l_c:.6} mm is not positive at d_m = {d_m} µm"
                )));
            }
            (d_m, l_c)
        }
        DesignConstraint::FixedLength(l_c) => {
            if !(l_c.is_finite() && l_c > 0.0) {
                return Err(Error::invalid(format!(
                    "mask length must be positive, got {l_c}"
                )));
            }
            let total = l_c + delta_l_c;
            if total <= 0.0 {
                return Err(Error::InfeasibleDesign(format!(
                    "effective length {total:.6} mm is not positive"
                )));
            }
            let d_m = (model.kappa0 * total / target_theta).ln() / model.gamma;
            if !(d_m.is_finite() && d_m > 0.0) {
                return Err(Error::InfeasibleDesign(format!(
                    "target phase {target_theta} needs separation {d_m:.6} µm; \
                     not reachable at l_c = {l_c} mm"
                )));
            }
            (d_m, l_c)
        }
    };
    let extrapolated = d_m < CALIBRATED_SEPARATION_UM.0
        || d_m > CALIBRATED_SEPARATION_UM.1
        || l_c < CALIBRATED_LENGTH_MM.0
        || l_c > CALIBRATED_LENGTH_MM.1;
    Ok(CouplerDesign {
        d_m,
        l_c,
        predicted_theta: model.predict_theta(d_m, l_c, delta_l_c),
        extrapolated,
    })
}

/// How a characterized device behaves as a logic element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CouplerClass {
    /// 3 dB (1:1) splitter: |P₄ − 1/2| within the balance tolerance.
    Balanced,
    /// Full cross: P₃ at least 1 − cross tolerance.
    Cross,
}

impl std::fmt::Display for CouplerClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CouplerClass::Balanced => "balanced",
            CouplerClass::Cross => "cross",
        })
    }
}

/// A device from the table labeled by its approximate behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedCoupler {
    pub d_m: f64,
    pub l_c: f64,
    pub class: CouplerClass,
}

/// Flags devices that act as balanced splitters (|P₄ − 1/2| ≤ `balance_tol`)
/// or as full crosses (P₃ ≥ 1 − `cross_tol`); everything else is left out.
/// If both tolerances are wide enough to overlap, balanced wins.
pub fn classify_couplers(
    table: &MeasurementTable,
    balance_tol: f64,
    cross_tol: f64,
) -> Vec<ClassifiedCoupler> {
    table
        .records()
        .iter()
        .filter_map(|r| {
            let class = if (r.p4 - 0.5).abs() <= balance_tol {
                Some(CouplerClass::Balanced)
            } else if r.p3 >= 1.0 - cross_tol {
                Some(CouplerClass::Cross)
            } else {
                None
            };
            class.map(|class| ClassifiedCoupler {
                d_m: r.d_m,
                l_c: r.l_c,
                class,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_4, PI};

    const REFERENCE_KAPPA0: f64 = 3.065 * PI;
    const REFERENCE_GAMMA: f64 = 0.537;

    fn table1_raw() -> Vec<(f64, [f64; 4])> {
        vec![
            (3.0, [17.8, 93.6, 54.9, 2.5]),
            (4.5, [35.9, 5.9, 7.4, 40.9]),
            (6.0, [80.7, 63.8, 49.3, 26.8]),
            (7.5, [92.6, 88.4, 86.3, 79.8]),
        ]
    }

    fn series_from_percent(d_m: f64, p4s: [f64; 4]) -> MeasurementSeries {
        let lengths = [0.5, 1.0, 1.5, 2.0];
        let records = lengths
            .iter()
            .zip(&p4s)
            .map(|(&l, &p)| {
                CouplerMeasurement::new(d_m, l, p / 100.0, (100.0 - p) / 100.0).unwrap()
            })
            .collect();
        MeasurementSeries::new(d_m, records).unwrap()
    }

    fn synthetic_series(d_m: f64, a: f64, b: f64) -> MeasurementSeries {
        let records = [0.5, 1.0, 1.5, 2.0]
            .iter()
            .map(|&l| {
                let theta: f64 = a * l + b;
                let p4 = theta.cos().powi(2);
                CouplerMeasurement::new(d_m, l, p4, 1.0 - p4).unwrap()
            })
            .collect();
        MeasurementSeries::new(d_m, records).unwrap()
    }

    #[test]
    fn phase_extraction_basics() {
        assert_eq!(extract_phase(1.0).unwrap(), 0.0);
        assert!((extract_phase(0.5).unwrap() - FRAC_PI_4).abs() <= 1e-12);
        assert!((extract_phase(0.926).unwrap() - 0.2755013453162577).abs() <= 1e-12);
        assert_eq!(extract_phase(0.0).unwrap(), std::f64::consts::FRAC_PI_2);
        // Slightly out-of-range values are clamped, far ones rejected.
        assert_eq!(extract_phase(1.015).unwrap(), 0.0);
        assert!(extract_phase(1.03).is_err());
        assert!(extract_phase(-0.03).is_err());
        assert!(extract_phase(f64::NAN).is_err());
    }

    #[test]
    fn phase_extraction_inverts_the_fold() {
        for k in 0..=40 {
            let theta = k as f64 * (std::f64::consts::FRAC_PI_2 / 40.0);
            let p4 = theta.cos().powi(2);
            assert!((extract_phase(p4).unwrap() - theta).abs() <= 1e-12);
        }
    }

    #[test]
    fn fold_phase_walks_the_quadrants() {
        let t = 0.3;
        assert_eq!(fold_phase(t, 0), 0.3);
        assert!((fold_phase(t, 1) - (PI - 0.3)).abs() <= 1e-15);
        assert!((fold_phase(t, 2) - (PI + 0.3)).abs() <= 1e-15);
        assert!((fold_phase(t, 3) - (2.0 * PI - 0.3)).abs() <= 1e-15);
        assert!((fold_phase(t, 4) - (2.0 * PI + 0.3)).abs() <= 1e-15);
    }

    #[test]
    fn measurement_construction_normalizes_and_validates() {
        let m = CouplerMeasurement::new(6.0, 1.5, 0.493, 0.507).unwrap();
        assert_eq!(m.p4 + m.p3, 1.0);
        assert!((m.p4 - 0.493).abs() <= 1e-12);

        assert!(CouplerMeasurement::new(6.0, 1.5, 0.6, 0.6).is_err());
        assert!(CouplerMeasurement::new(6.0, 1.5, -0.1, 1.1).is_err());
        assert!(CouplerMeasurement::new(0.0, 1.5, 0.5, 0.5).is_err());
        assert!(CouplerMeasurement::new(6.0, -1.0, 0.5, 0.5).is_err());
    }

    #[test]
    fn table_sorts_groups_and_rejects_duplicates() {
        let r = |d, l| CouplerMeasurement::new(d, l, 0.5, 0.5).unwrap();
        let table = MeasurementTable::new(
            vec![r(6.0, 1.0), r(3.0, 2.0), r(3.0, 0.5), r(6.0, 0.5)],
            vec![],
        )
        .unwrap();
        let series = table.series();
        assert_eq!(series.len(), 2);
        assert_eq!(series[0].d_m, 3.0);
        assert_eq!(series[0].records()[0].l_c, 0.5);
        assert_eq!(series[1].records().len(), 2);

        let dup = MeasurementTable::new(vec![r(3.0, 0.5), r(3.0, 0.5)], vec![]);
        assert!(matches!(dup, Err(Error::Validation(_))));
    }

    #[test]
    fn unwrap_recovers_a_first_quadrant_line() {
        let fit = unwrap_series(&synthetic_series(7.5, 0.3, 0.1)).unwrap();
        assert!((fit.a_l - 0.3).abs() <= 1e-9, "a_l = {}", fit.a_l);
        assert!((fit.b_l - 0.1).abs() <= 1e-9);
        assert_eq!(fit.fold_assignment, vec![0, 0, 0, 0]);
        assert!(fit.residual <= 1e-9);
        assert!((fit.delta_l_c - 0.1 / 0.3).abs() <= 1e-9);
    }

    #[test]
    fn unwrap_recovers_a_line_across_folds() {
        let fit = unwrap_series(&synthetic_series(3.0, 2.0, 0.1)).unwrap();
        assert!((fit.a_l - 2.0).abs() <= 1e-9, "a_l = {}", fit.a_l);
        assert!((fit.b_l - 0.1).abs() <= 1e-9);
        assert!(fit
            .fold_assignment
            .windows(2)
            .all(|pair| pair[0] <= pair[1]));
        assert!(*fit.fold_assignment.last().unwrap() > 0);
    }

    #[test]
    fn unwrap_prefers_low_folds_among_ties() {
        // Any assignment shifted by 2 extra folds everywhere gives the same
        // slope and residual; the reported one must be the lowest.
        let fit = unwrap_series(&synthetic_series(7.5, 0.12, 0.2)).unwrap();
        assert_eq!(fit.fold_assignment, vec![0, 0, 0, 0]);
    }

    #[test]
    fn unwrap_handles_the_characterization_series() {
        let expected: [(f64, f64, f64, [u32; 4]); 4] = [
            (3.0, 1.9173156263069437, 0.031048771880598448, [1, 1, 2, 3]),
            (4.5, 0.9059793098283212, 0.025845342126599054, [0, 0, 1, 1]),
            (6.0, 0.3724501829800305, 0.018276329244194218, [0, 0, 0, 0]),
            (7.5, 0.12070746825160557, 0.011344387254162654, [0, 0, 0, 0]),
        ];
        for ((d_m, raw), (want_d, want_a, want_rms, want_folds)) in
            table1_raw().into_iter().zip(expected)
        {
            assert_eq!(d_m, want_d);
            let fit = unwrap_series(&series_from_percent(d_m, raw)).unwrap();
            assert!(
                (fit.a_l - want_a).abs() <= 1e-9,
                "d_m = {d_m}: a_l = {}",
                fit.a_l
            );
            assert!((fit.residual - want_rms).abs() <= 1e-9);
            assert_eq!(fit.fold_assignment, want_folds, "d_m = {d_m}");
            assert!(fit.a_l > 0.0);
        }
    }

    #[test]
    fn unwrap_needs_two_points_and_a_positive_slope() {
        let single = MeasurementSeries::new(
            5.0,
            vec![CouplerMeasurement::new(5.0, 1.0, 0.4, 0.6).unwrap()],
        )
        .unwrap();
        assert!(matches!(
            unwrap_series(&single),
            Err(Error::InsufficientData(_))
        ));

        // With folds forbidden, a falling phase has no admissible line.
        let falling = MeasurementSeries::new(
            5.0,
            vec![
                CouplerMeasurement::new(5.0, 0.5, 0.1, 0.9).unwrap(),
                CouplerMeasurement::new(5.0, 1.0, 0.4, 0.6).unwrap(),
                CouplerMeasurement::new(5.0, 1.5, 0.8, 0.2).unwrap(),
            ],
        )
        .unwrap();
        assert!(matches!(
            unwrap_series_with_max_fold(&falling, 0),
            Err(Error::FitFailure(_))
        ));
    }

    #[test]
    fn unwrapped_phases_reproduce_the_line() {
        let series = synthetic_series(6.0, 0.8, 0.3);
        let fit = unwrap_series(&series).unwrap();
        for (l, theta) in unwrapped_phases(&series, &fit).unwrap() {
            assert!((theta - (0.8 * l + 0.3)).abs() <= 1e-9);
        }
    }

    #[test]
    fn coupling_law_recovery_is_exact_without_noise() {
        let fits: Vec<SeriesFit> = [3.0, 4.5, 6.0, 7.5]
            .iter()
            .map(|&d| {
                let kappa = REFERENCE_KAPPA0 * (-REFERENCE_GAMMA * d).exp();
                unwrap_series(&synthetic_series(d, kappa, kappa * 0.25)).unwrap()
            })
            .collect();
        let model = fit_kappa(&fits).unwrap();
        assert!((model.kappa0 - REFERENCE_KAPPA0).abs() / REFERENCE_KAPPA0 <= 1e-9);
        assert!((model.gamma - REFERENCE_GAMMA).abs() / REFERENCE_GAMMA <= 1e-9);
        assert!(model.fit_residual <= 1e-9);
        assert_eq!(model.series.len(), 4);
    }

    #[test]
    fn coupling_law_tolerates_slope_noise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(20240817);
        let fits: Vec<SeriesFit> = [3.0, 4.5, 6.0, 7.5]
            .iter()
            .map(|&d| {
                let kappa = REFERENCE_KAPPA0 * (-REFERENCE_GAMMA * d).exp();
                let noisy = kappa * (1.0 + rng.gen_range(-0.02..0.02));
                SeriesFit {
                    d_m: d,
                    a_l: noisy,
                    b_l: 0.0,
                    delta_l_c: 0.0,
                    fold_assignment: vec![],
                    residual: 0.0,
                }
            })
            .collect();
        let model = fit_kappa(&fits).unwrap();
        assert!((model.kappa0 - REFERENCE_KAPPA0).abs() / REFERENCE_KAPPA0 <= 0.05);
        assert!((model.gamma - REFERENCE_GAMMA).abs() / REFERENCE_GAMMA <= 0.05);
    }

    #[test]
    fn coupling_law_fit_error_cases() {
        let fit = SeriesFit {
            d_m: 3.0,
            a_l: 1.0,
            b_l: 0.0,
            delta_l_c: 0.0,
            fold_assignment: vec![],
            residual: 0.0,
        };
        assert!(matches!(
            fit_kappa(std::slice::from_ref(&fit)),
            Err(Error::InsufficientData(_))
        ));

        let mut bad = fit.clone();
        bad.a_l = -0.5;
        bad.d_m = 6.0;
        assert!(matches!(
            fit_kappa(&[fit.clone(), bad]),
            Err(Error::InvalidArgument(_))
        ));

        let mut same = fit.clone();
        same.a_l = 2.0;
        assert!(matches!(
            fit_kappa(&[fit, same]),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn predicted_kappa_matches_the_law() {
        let model = CalibrationModel::from_law(REFERENCE_KAPPA0, REFERENCE_GAMMA).unwrap();
        assert!((model.predict_kappa(0.0) - REFERENCE_KAPPA0).abs() <= 1e-12);
        assert!((model.predict_kappa(6.0) - 0.3839578320621316).abs() <= 1e-12);
        assert!(model.predict_kappa(3.0) > model.predict_kappa(7.5));
        assert!(CalibrationModel::from_law(-1.0, 0.5).is_err());
        assert!(CalibrationModel::from_law(1.0, 0.0).is_err());
    }

    #[test]
    fn design_at_fixed_separation() {
        let model = CalibrationModel::from_law(REFERENCE_KAPPA0, REFERENCE_GAMMA).unwrap();
        let design = design_coupler(
            &model,
            FRAC_PI_4,
            DesignConstraint::FixedSeparation(6.0),
            0.0,
        )
        .unwrap();
        assert!((design.l_c - 2.045532341870177).abs() <= 1e-9);
        assert!(design.l_c >= 2.0 && design.l_c <= 2.1);
        assert!((design.predicted_theta - FRAC_PI_4).abs() <= 1e-9);
        // 2.05 mm is just past the 2.0 mm calibrated maximum.
        assert!(design.extrapolated);

        let inside = design_coupler(
            &model,
            FRAC_PI_4,
            DesignConstraint::FixedSeparation(5.0),
            0.0,
        )
        .unwrap();
        assert!((inside.l_c - 1.1956118580964685).abs() <= 1e-9);
        assert!(!inside.extrapolated);
        assert!((inside.predicted_theta - FRAC_PI_4).abs() <= 1e-9);
    }

    #[test]
    fn design_at_fixed_length() {
        let model = CalibrationModel::from_law(REFERENCE_KAPPA0, REFERENCE_GAMMA).unwrap();
        let design =
            design_coupler(&model, FRAC_PI_4, DesignConstraint::FixedLength(10.0), 0.0).unwrap();
        assert!((design.d_m - 8.955171365925718).abs() <= 1e-9);
        assert!(design.extrapolated);
        assert!((design.predicted_theta - FRAC_PI_4).abs() <= 1e-9);
    }

    #[test]
    fn design_roundtrip_with_offset() {
        let model = CalibrationModel::from_law(REFERENCE_KAPPA0, REFERENCE_GAMMA).unwrap();
        for (theta, d_m, delta) in [(0.4, 4.0, 0.25), (1.3, 3.5, 0.1), (FRAC_PI_4, 7.0, 0.3)] {
            let design =
                design_coupler(&model, theta, DesignConstraint::FixedSeparation(d_m), delta)
                    .unwrap();
            let forward = model.predict_theta(design.d_m, design.l_c, delta);
            assert!((forward - theta).abs() <= 1e-9);
        }
    }

    #[test]
    fn design_detects_infeasible_targets() {
        let model = CalibrationModel::from_law(REFERENCE_KAPPA0, REFERENCE_GAMMA).unwrap();
        // Offset longer than the required total length.
        assert!(matches!(
            design_coupler(&model, 0.001, DesignConstraint::FixedSeparation(3.0), 0.25),
            Err(Error::InfeasibleDesign(_))
        ));
        // Phase too large to reach at any positive separation.
        assert!(matches!(
            design_coupler(&model, FRAC_PI_4, DesignConstraint::FixedLength(0.05), 0.0),
            Err(Error::InfeasibleDesign(_))
        ));
        assert!(design_coupler(&model, -0.5, DesignConstraint::FixedSeparation(6.0), 0.0).is_err());
    }

    #[test]
    fn classification_flags_balanced_and_cross_devices() {
        let r = |d: f64, l: f64, p4: f64| CouplerMeasurement::new(d, l, p4, 1.0 - p4).unwrap();
        let table = MeasurementTable::new(
            vec![
                r(3.0, 0.5, 0.5),
                r(3.0, 1.0, 0.53),
                r(3.0, 1.5, 0.03),
                r(3.0, 2.0, 0.3),
            ],
            vec![],
        )
        .unwrap();
        let labels = classify_couplers(&table, 0.05, 0.08);
        assert_eq!(labels.len(), 3);
        assert_eq!(labels[0].class, CouplerClass::Balanced);
        assert_eq!(labels[1].class, CouplerClass::Balanced);
        assert_eq!(labels[2].class, CouplerClass::Cross);
        assert_eq!(labels[2].l_c, 1.5);

        let strict = classify_couplers(&table, 0.0, 0.08);
        assert_eq!(strict.len(), 2);
        assert_eq!(strict[0].l_c, 0.5);
    }

    #[test]
    fn shared_offset_fit_recovers_a_common_delta() {
        let delta = 0.25;
        let series_points: Vec<(f64, Vec<(f64, f64)>)> = [3.0, 4.5, 6.0, 7.5]
            .iter()
            .map(|&d| {
                let kappa = REFERENCE_KAPPA0 * (-REFERENCE_GAMMA * d).exp();
                let pts = [0.5, 1.0, 1.5, 2.0]
                    .iter()
                    .map(|&l| (l, kappa * (l + delta)))
                    .collect();
                (d, pts)
            })
            .collect();
        let fit = fit_shared_delta(&series_points).unwrap();
        assert!(
            (fit.delta_l_c - delta).abs() <= 1e-6,
            "delta = {}",
            fit.delta_l_c
        );
        for (d, slope) in &fit.slopes {
            let kappa = REFERENCE_KAPPA0 * (-REFERENCE_GAMMA * d).exp();
            assert!((slope - kappa).abs() / kappa <= 1e-6);
        }
        assert!(fit.residual <= 1e-6);

        assert!(fit_shared_delta(&[]).is_err());
    }

    #[test]
    fn per_length_exponential_fits() {
        let delta = 0.25;
        let cells: Vec<(f64, Vec<(f64, f64)>)> = [0.5, 1.0, 1.5, 2.0]
            .iter()
            .map(|&l| {
                let pts = [3.0, 4.5, 6.0, 7.5]
                    .iter()
                    .map(|&d| {
                        (
                            d,
                            REFERENCE_KAPPA0 * (-REFERENCE_GAMMA * d).exp() * (l + delta),
                        )
                    })
                    .collect();
                (l, pts)
            })
            .collect();
        let fits = fit_length_series(&cells);
        assert_eq!(fits.len(), 4);
        for fit in &fits {
            let want_amp = REFERENCE_KAPPA0 * (fit.l_c + delta);
            assert!((fit.a_e - want_amp).abs() / want_amp <= 1e-9);
            assert!((fit.b_e - REFERENCE_GAMMA).abs() <= 1e-9);
            assert!(fit.residual <= 1e-9);
        }

        let sparse = vec![(1.0, vec![(3.0, 0.5)])];
        assert!(fit_length_series(&sparse).is_empty());
    }

    #[test]
    fn model_json_round_trips() {
        let fits: Vec<SeriesFit> = [3.0, 5.0]
            .iter()
            .map(|&d| {
                let kappa = REFERENCE_KAPPA0 * (-REFERENCE_GAMMA * d).exp();
                unwrap_series(&synthetic_series(d, kappa, 0.1)).unwrap()
            })
            .collect();
        let model = fit_kappa(&fits).unwrap();
        let text = serde_json::to_string(&model).unwrap();
        let back: CalibrationModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, model);
    }
}
