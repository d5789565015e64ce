//! Single-photon states over N spatial guides, the X/Y mutually unbiased
//! bases, and seeded click sampling.
//!
//! A [`PhotonState`] holds the amplitude vector (c₁,…,c_N) of one photon
//! coherently delocalized over N guides. The X basis holds the diagonal and
//! antidiagonal superpositions D/A, the Y basis the circular ones L/R; any
//! cross-basis overlap probability is 1/2, which is what makes the pair
//! usable for BB84-style measurements.
//!
//! Weak laser light enters through [`WeakCoherentState`]: attenuated far
//! enough that the one-photon term dominates, with the vacuum removed by
//! post-selection, the conditional photon state is just the normalized field
//! amplitude vector ([`single_photon_approx`]).

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::unitary::ModeUnitary;
use crate::{ALGEBRAIC_TOL, SAMPLING_SUM_TOL};

/// Name of the pseudo-random generator used by every sampler in this crate;
/// recorded in output metadata so that seeded runs stay reproducible across
/// builds.
pub const RNG_ALGORITHM: &str = "chacha12";

/// Measurement basis: X (diagonal/antidiagonal) or Y (circular).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    X,
    Y,
}

impl std::fmt::Display for Basis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Basis::X => "X",
            Basis::Y => "Y",
        })
    }
}

/// Basis element label. D/A live in the X basis, L/R in the Y basis, so a
/// label determines its basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MubLabel {
    D,
    A,
    L,
    R,
}

impl MubLabel {
    pub fn basis(&self) -> Basis {
        match self {
            MubLabel::D | MubLabel::A => Basis::X,
            MubLabel::L | MubLabel::R => Basis::Y,
        }
    }
}

impl std::fmt::Display for MubLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MubLabel::D => "D",
            MubLabel::A => "A",
            MubLabel::L => "L",
            MubLabel::R => "R",
        })
    }
}

/// Normalized amplitude vector of a single photon over N guides.
///
/// Serializes as `{"dim": N, "re": [...], "im": [...]}`. The squared
/// amplitudes must sum to 1 within 1e-12.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PhotonStateRepr", into = "PhotonStateRepr")]
pub struct PhotonState {
    amplitudes: Vec<Complex64>,
}

#[derive(Serialize, Deserialize)]
struct PhotonStateRepr {
    dim: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl TryFrom<PhotonStateRepr> for PhotonState {
    type Error = Error;

    fn try_from(repr: PhotonStateRepr) -> Result<Self> {
        if repr.re.len() != repr.dim || repr.im.len() != repr.dim {
            return Err(Error::invalid(format!(
                "state arrays must both have length {}, got {} and {}",
                repr.dim,
                repr.re.len(),
                repr.im.len()
            )));
        }
        let amps = repr
            .re
            .iter()
            .zip(&repr.im)
            .map(|(&re, &im)| Complex64::new(re, im))
            .collect();
        PhotonState::new(amps)
    }
}

impl From<PhotonState> for PhotonStateRepr {
    fn from(state: PhotonState) -> Self {
        PhotonStateRepr {
            dim: state.dim(),
            re: state.amplitudes.iter().map(|z| z.re).collect(),
            im: state.amplitudes.iter().map(|z| z.im).collect(),
        }
    }
}

impl PhotonState {
    /// Wraps an amplitude vector, requiring Σ|c_j|² = 1 within 1e-12.
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::invalid("state must have at least one guide"));
        }
        if amplitudes
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::invalid("state amplitudes must be finite"));
        }
        let norm_sqr: f64 = amplitudes.iter().map(|z| z.norm_sqr()).sum();
        if (norm_sqr - 1.0).abs() > ALGEBRAIC_TOL {
            return Err(Error::invalid(format!(
                "state is not normalized: sum of squared amplitudes is {norm_sqr:.17}"
            )));
        }
        Ok(PhotonState { amplitudes })
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    /// Inner product ⟨self|other⟩.
    pub fn inner(&self, other: &PhotonState) -> Result<Complex64> {
        if self.dim() != other.dim() {
            return Err(Error::invalid(format!(
                "dimension mismatch in inner product: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// The same ray with every amplitude rotated by e^{iχ}.
    pub fn with_global_phase(&self, chi: f64) -> PhotonState {
        let rot = Complex64::from_polar(1.0, chi);
        PhotonState {
            amplitudes: self.amplitudes.iter().map(|z| z * rot).collect(),
        }
    }
}

/// Weak-coherent (attenuated laser) field over N guides: one complex field
/// amplitude per guide, no normalization constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakCoherentState {
    alphas: Vec<Complex64>,
}

impl WeakCoherentState {
    pub fn new(alphas: Vec<Complex64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::invalid("field must cover at least one guide"));
        }
        if alphas
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::invalid("field amplitudes must be finite"));
        }
        Ok(WeakCoherentState { alphas })
    }

    pub fn dim(&self) -> usize {
        self.alphas.len()
    }

    pub fn alphas(&self) -> &[Complex64] {
        &self.alphas
    }

    /// Mean photon number Σ|α_j|².
    pub fn mean_photon_number(&self) -> f64 {
        self.alphas.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Photon localized on guide `j` (1-based) of `n`.
pub fn basis_state(j: usize, n: usize) -> Result<PhotonState> {
    if j < 1 || j > n {
        return Err(Error::invalid(format!(
            "guide index {j} out of range 1..={n}"
        )));
    }
    let mut amps = vec![Complex64::new(0.0, 0.0); n];
    amps[j - 1] = Complex64::new(1.0, 0.0);
    PhotonState::new(amps)
}

/// Equal-weight superposition of guides `j` and `j'` with the relative phase
/// of the requested basis element:
///
/// * `D` → (|1_j⟩ + |1_j'⟩)/√2
/// * `A` → (|1_j⟩ − |1_j'⟩)/√2
/// * `L` → (|1_j⟩ + i|1_j'⟩)/√2
/// * `R` → (|1_j⟩ − i|1_j'⟩)/√2
pub fn mub_state(label: MubLabel, pair: (usize, usize), n: usize) -> Result<PhotonState> {
    let (j, jp) = pair;
    if j < 1 || j > n || jp < 1 || jp > n {
        return Err(Error::invalid(format!(
            "guide pair ({j}, {jp}) out of range 1..={n}"
        )));
    }
    if j == jp {
        return Err(Error::invalid("guide pair must use two distinct guides"));
    }
    let root = std::f64::consts::FRAC_1_SQRT_2;
    let second = match label {
        MubLabel::D => Complex64::new(root, 0.0),
        MubLabel::A => Complex64::new(-root, 0.0),
        MubLabel::L => Complex64::new(0.0, root),
        MubLabel::R => Complex64::new(0.0, -root),
    };
    let mut amps = vec![Complex64::new(0.0, 0.0); n];
    amps[j - 1] = Complex64::new(root, 0.0);
    amps[jp - 1] = second;
    PhotonState::new(amps)
}

/// Conditional single-photon state of a weak-coherent field: amplitudes
/// α_j/√(Σ|α_k|²), preserving all relative phases. The vacuum component is
/// removed by post-selection on a detection.
pub fn single_photon_approx(field: &WeakCoherentState) -> Result<PhotonState> {
    let total = field.mean_photon_number();
    if total <= 0.0 {
        return Err(Error::DegenerateInput(
            "cannot condition on a photon in an all-zero field".into(),
        ));
    }
    let norm = total.sqrt();
    PhotonState::new(field.alphas().iter().map(|z| z / norm).collect())
}

/// Detection probabilities p_j = |(U·c)_j|² at the circuit outputs.
pub fn detection_probabilities(state: &PhotonState, u: &ModeUnitary) -> Result<Vec<f64>> {
    if state.dim() != u.dim() {
        return Err(Error::invalid(format!(
            "state dimension {} does not match circuit dimension {}",
            state.dim(),
            u.dim()
        )));
    }
    let out = u.apply(state.amplitudes())?;
    Ok(out.iter().map(|z| z.norm_sqr()).collect())
}

/// Detector click totals from a seeded multinomial draw.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickCounts {
    /// Clicks per output guide, in guide order.
    pub counts: Vec<u64>,
    pub trials: u64,
    pub seed: u64,
}

/// Index of the bucket containing `u ∈ [0, total)` in the cumulative walk
/// over `probs`.
pub(crate) fn sample_index(probs: &[f64], total: f64, u: f64) -> usize {
    let mut acc = 0.0;
    let target = u * total;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if target < acc {
            return k;
        }
    }
    probs.len() - 1
}

fn check_probabilities(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::invalid("probability vector is empty"));
    }
    if probs.iter().any(|&p| !p.is_finite() || p < 0.0) {
        return Err(Error::invalid(
            "probability vector has a negative or non-finite entry",
        ));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > SAMPLING_SUM_TOL {
        return Err(Error::invalid(format!(
            "probability vector sums to {total:.12}, expected 1 within {SAMPLING_SUM_TOL:.0e}"
        )));
    }
    Ok(total)
}

/// Draws `trials` detection events from `probs` with a ChaCha12 generator
/// seeded by `seed`. The probabilities must be non-negative and sum to 1
/// within 1e-9.
pub fn sample_clicks(probs: &[f64], trials: u64, seed: u64) -> Result<ClickCounts> {
    let total = check_probabilities(probs)?;
    if trials == 0 {
        return Err(Error::invalid("trial count must be positive"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; probs.len()];
    for _ in 0..trials {
        let u: f64 = rng.gen();
        counts[sample_index(probs, total, u)] += 1;
    }
    Ok(ClickCounts {
        counts,
        trials,
        seed,
    })
}
