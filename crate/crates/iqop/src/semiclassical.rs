//! Interference sweeps against a displaced grating.
//!
//! A two-path interferometer closed by a coupler of phase θ sees a relative
//! phase ε when one arm reflects off a grating displaced by `dx`; a grating
//! of period Λ gives ε = 4π·dx/Λ. The output powers follow
//!
//! ```text
//!   P₁ = ½(1 + sin 2θ · sin ε),    P₂ = 1 − P₁
//! ```
//!
//! so sweeping `dx` traces a fringe whose visibility is |sin 2θ|.
//! [`fit_sweep`] inverts a recorded fringe back to the coupler phase;
//! [`simulate_projection_test`] adds shot noise by sampling click counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::states::{sample_clicks, ClickCounts};
use crate::unitary::coupler;
use num_complex::Complex64;
use std::f64::consts::PI;

/// Grating geometry for converting displacements to phases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GratingConfig {
    /// Grating period Λ, µm.
    pub period_um: f64,
}

impl Default for GratingConfig {
    fn default() -> Self {
        GratingConfig { period_um: 60.0 }
    }
}

impl GratingConfig {
    pub fn new(period_um: f64) -> Result<Self> {
        if !(period_um.is_finite() && period_um > 0.0) {
            return Err(Error::invalid(format!(
                "grating period must be positive, got {period_um}"
            )));
        }
        Ok(GratingConfig { period_um })
    }

    /// Relative phase ε = 4π·dx/Λ picked up at displacement `dx` µm.
    /// One full fringe corresponds to half a grating period.
    pub fn phase(&self, dx_um: f64) -> f64 {
        (4.0 * PI) * (dx_um / self.period_um)
    }
}

/// Output powers (P₁, P₂) at coupler phase θ and relative phase ε.
/// P₂ is the exact complement of P₁.
pub fn sweep_probabilities(theta: f64, epsilon: f64) -> (f64, f64) {
    let p1 = 0.5 * (1.0 + (2.0 * theta).sin() * epsilon.sin());
    (p1, 1.0 - p1)
}

/// Same fringe computed by propagating the split state (1, e^{iε})/√2
/// through the coupler; P₁ is the power in the second output guide.
pub fn state_path_probabilities(theta: f64, epsilon: f64) -> (f64, f64) {
    let Ok(u) = coupler(theta) else {
        return (f64::NAN, f64::NAN);
    };
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let input = [Complex64::new(r, 0.0), Complex64::from_polar(r, epsilon)];
    let out1 = u.entry(1, 0) * input[0] + u.entry(1, 1) * input[1];
    let p1 = out1.norm_sqr();
    (p1, 1.0 - p1)
}

/// One point of a recorded or simulated fringe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    /// Grating displacement, µm.
    pub dx_um: f64,
    /// Relative phase, rad.
    pub epsilon_rad: f64,
    pub p1: f64,
    pub p2: f64,
}

/// The ideal fringe over a set of displacements.
pub fn sweep_over_displacements(
    theta: f64,
    config: &GratingConfig,
    displacements: &[f64],
) -> Result<Vec<SweepRecord>> {
    if !theta.is_finite() {
        return Err(Error::invalid("coupler phase must be finite"));
    }
    displacements
        .iter()
        .map(|&dx| {
            if !dx.is_finite() {
                return Err(Error::invalid(format!("displacement {dx} is not finite")));
            }
            let epsilon = config.phase(dx);
            let (p1, p2) = sweep_probabilities(theta, epsilon);
            Ok(SweepRecord {
                dx_um: dx,
                epsilon_rad: epsilon,
                p1,
                p2,
            })
        })
        .collect()
}

fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-point stream seed for a master seed and point index.
pub fn derive_stream_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(index))
}

/// Simulated fringe with shot noise: at each displacement, `trials` photons
/// are sampled between the two outputs. The returned record holds the
/// observed frequencies (P₂ the exact complement of P₁) next to the raw
/// counts. Each displacement draws from its own stream seeded by
/// [`derive_stream_seed`], so appending points does not shift earlier ones.
pub fn simulate_projection_test(
    theta: f64,
    config: &GratingConfig,
    displacements: &[f64],
    trials: u64,
    master_seed: u64,
) -> Result<Vec<(SweepRecord, ClickCounts)>> {
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let ideal = sweep_over_displacements(theta, config, displacements)?;
    ideal
        .into_iter()
        .enumerate()
        .map(|(i, record)| {
            let (s1, _) = state_path_probabilities(theta, record.epsilon_rad);
            assert!(
                (s1 - record.p1).abs() <= 1e-12,
                "state propagation and closed-form fringe disagree at eps = {}",
                record.epsilon_rad
            );
            let seed = derive_stream_seed(master_seed, i as u64);
            let clicks = sample_clicks(&[record.p1, record.p2], trials, seed)?;
            let p1 = clicks.counts[0] as f64 / trials as f64;
            Ok((
                SweepRecord {
                    p1,
                    p2: 1.0 - p1,
                    ..record
                },
                clicks,
            ))
        })
        .collect()
}

/// Rescales a measured pair (P₁, P₂) so unequal path losses drop out, using
/// the fringe maxima of each output as the loss reference, then renormalizes
/// the pair to sum to 1.
pub fn correct_losses(p1_meas: f64, p2_meas: f64, p1_max: f64, p2_max: f64) -> Result<(f64, f64)> {
    for v in [p1_meas, p2_meas, p1_max, p2_max] {
        if !v.is_finite() {
            return Err(Error::invalid("loss correction needs finite inputs"));
        }
    }
    if p1_meas < 0.0 || p2_meas < 0.0 {
        return Err(Error::invalid("measured powers must be non-negative"));
    }
    if p1_max <= 0.0 || p2_max <= 0.0 {
        return Err(Error::invalid("fringe maxima must be positive"));
    }
    let p1 = p1_meas * (p2_max / p1_max);
    let sum = p1 + p2_meas;
    if sum == 0.0 {
        return Err(Error::invalid(
            "both corrected powers are zero; nothing to normalize",
        ));
    }
    let p1 = p1 / sum;
    Ok((p1, 1.0 - p1))
}

/// Result of fitting a fringe back to the coupler phase.
///
/// The fringe determines |sin 2θ|, which two phases in [0, π/2] satisfy;
/// `theta_est` is the one at or below π/4 and `theta_alt` its complement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFit {
    /// Coupler phase estimate in [0, π/4], rad.
    pub theta_est: f64,
    /// The complementary solution π/2 − `theta_est`.
    pub theta_alt: f64,
    /// Fitted fringe visibility, clamped to [0, 1].
    pub visibility: f64,
    /// Phase offset of the fringe in (−π, π], rad; 0 for an ideal sweep.
    pub epsilon_offset: f64,
    /// Offset of the fringe center from the ideal ½; 0 for an ideal sweep.
    pub background: f64,
    /// RMS residual of the fitted fringe.
    pub residual: f64,
}

#[allow(clippy::needless_range_loop)]
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for col in (0..3).rev() {
        let mut s = b[col];
        for k in col + 1..3 {
            s -= a[col][k] * x[k];
        }
        x[col] = s / a[col][col];
    }
    Some(x)
}

/// Fits P₁(ε) = background + ½·(1 + v·sin(ε + offset)) to a recorded fringe
/// by linear least squares and reads the coupler phase from the visibility
/// v. Needs at least 4 points spanning at least half a fringe period (π rad)
/// in ε.
pub fn fit_sweep(records: &[SweepRecord]) -> Result<SweepFit> {
    if records.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "fringe fit needs at least 4 points, got {}",
            records.len()
        )));
    }
    for r in records {
        if !(r.epsilon_rad.is_finite() && r.p1.is_finite()) {
            return Err(Error::invalid(
                "fringe fit needs finite phases and probabilities",
            ));
        }
    }
    let eps_min = records
        .iter()
        .map(|r| r.epsilon_rad)
        .fold(f64::INFINITY, f64::min);
    let eps_max = records
        .iter()
        .map(|r| r.epsilon_rad)
        .fold(f64::NEG_INFINITY, f64::max);
    if eps_max - eps_min + 1e-9 < PI {
        return Err(Error::InsufficientData(format!(
            "fringe fit needs points spanning at least {PI:.3} rad of relative \
             phase, got {:.3}",
            eps_max - eps_min
        )));
    }

    // P1 = c0 + c1·sin ε + c2·cos ε, solved via the normal equations.
    let mut m = [[0.0f64; 3]; 3];
    let mut rhs = [0.0f64; 3];
    for r in records {
        let row = [1.0, r.epsilon_rad.sin(), r.epsilon_rad.cos()];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += row[i] * row[j];
            }
            rhs[i] += row[i] * r.p1;
        }
    }
    let Some([c0, c1, c2]) = solve3(m, rhs) else {
        return Err(Error::FitFailure(
            "sampled phases do not identify the fringe (degenerate design matrix)".into(),
        ));
    };

    let v = 2.0 * (c1 * c1 + c2 * c2).sqrt();
    let mut offset = c2.atan2(c1);
    if offset <= -PI {
        offset = PI;
    }
    let visibility = v.clamp(0.0, 1.0);
    let theta_est = 0.5 * visibility.asin();
    let mse: f64 = records
        .iter()
        .map(|r| {
            let model = c0 + c1 * r.epsilon_rad.sin() + c2 * r.epsilon_rad.cos();
            let d = r.p1 - model;
            d * d
        })
        .sum::<f64>()
        / records.len() as f64;
    Ok(SweepFit {
        theta_est,
        theta_alt: std::f64::consts::FRAC_PI_2 - theta_est,
        visibility,
        epsilon_offset: offset,
        background: c0 - 0.5,
        residual: mse.sqrt(),
    })
}
