//! Complex transfer-matrix algebra for guided-wave circuits.
//!
//! The elementary devices are the directional coupler
//!
//! ```text
//!           | cos θ   i sin θ |
//!   X_θ  =  |                 |        θ = κ L
//!           | i sin θ  cos θ  |
//! ```
//!
//! and the phase shifter `Z_Φ = diag(e^{-iΦ/2}, e^{iΦ/2})`. Elements are
//! placed on a pair of guides with [`embed`] and whole circuits are described
//! by a [`CircuitLayout`]: an ordered list of placements in propagation
//! order, composed by [`CircuitLayout::compose`].
//!
//! Guide indices are 1-based everywhere in this API.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ALGEBRAIC_TOL;

/// Dense row-major complex matrix of a lossless N-guide circuit.
///
/// Construction enforces unitarity (`U†U = I` entrywise within 1e-12), so a
/// value of this type is always a valid transfer matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeUnitary {
    dim: usize,
    entries: Vec<Complex64>,
}

impl ModeUnitary {
    /// Builds a matrix from row-major entries, rejecting anything that is
    /// not unitary within 1e-12.
    pub fn new(dim: usize, entries: Vec<Complex64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("matrix dimension must be at least 1"));
        }
        if entries.len() != dim * dim {
            return Err(Error::invalid(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                entries.len()
            )));
        }
        if entries
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::invalid("matrix entries must be finite"));
        }
        let u = ModeUnitary { dim, entries };
        let dev = u.unitarity_deviation();
        if dev > ALGEBRAIC_TOL {
            return Err(Error::invalid(format!(
                "matrix is not unitary: max |U†U - I| = {dev:.3e}"
            )));
        }
        Ok(u)
    }

    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![Complex64::new(0.0, 0.0); dim * dim];
        for k in 0..dim {
            entries[k * dim + k] = Complex64::new(1.0, 0.0);
        }
        ModeUnitary { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Entry at zero-based (row, col).
    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.dim + col]
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> ModeUnitary {
        let n = self.dim;
        let mut entries = vec![Complex64::new(0.0, 0.0); n * n];
        for r in 0..n {
            for c in 0..n {
                entries[c * n + r] = self.entry(r, c).conj();
            }
        }
        ModeUnitary { dim: n, entries }
    }

    /// Matrix product `self · rhs`.
    pub fn matmul(&self, rhs: &ModeUnitary) -> Result<ModeUnitary> {
        if self.dim != rhs.dim {
            return Err(Error::invalid(format!(
                "dimension mismatch in matrix product: {} vs {}",
                self.dim, rhs.dim
            )));
        }
        let n = self.dim;
        let mut entries = vec![Complex64::new(0.0, 0.0); n * n];
        for r in 0..n {
            for c in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    acc += self.entry(r, k) * rhs.entry(k, c);
                }
                entries[r * n + c] = acc;
            }
        }
        Ok(ModeUnitary { dim: n, entries })
    }

    /// Matrix–vector product. Preserves the Euclidean norm within 1e-12.
    pub fn apply(&self, amplitudes: &[Complex64]) -> Result<Vec<Complex64>> {
        if amplitudes.len() != self.dim {
            return Err(Error::invalid(format!(
                "vector length {} does not match matrix dimension {}",
                amplitudes.len(),
                self.dim
            )));
        }
        let n = self.dim;
        let out = (0..n)
            .map(|r| {
                amplitudes
                    .iter()
                    .enumerate()
                    .map(|(c, a)| self.entry(r, c) * a)
                    .sum()
            })
            .collect();
        Ok(out)
    }

    /// Largest entrywise distance to another matrix of the same dimension.
    pub fn max_entry_distance(&self, other: &ModeUnitary) -> f64 {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Largest entrywise deviation of `U†U` from the identity.
    pub fn unitarity_deviation(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for r in 0..n {
            for c in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    acc += self.entry(k, r).conj() * self.entry(k, c);
                }
                let target = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((acc - Complex64::new(target, 0.0)).norm());
            }
        }
        worst
    }

    fn from_parts(dim: usize, entries: Vec<Complex64>) -> Self {
        debug_assert_eq!(entries.len(), dim * dim);
        ModeUnitary { dim, entries }
    }
}

/// Directional coupler `X_θ = [[cos θ, i sin θ], [i sin θ, cos θ]]`.
pub fn coupler(theta: f64) -> Result<ModeUnitary> {
    if !theta.is_finite() {
        return Err(Error::invalid(format!(
            "coupler phase must be finite, got {theta}"
        )));
    }
    let (s, c) = theta.sin_cos();
    Ok(ModeUnitary::from_parts(
        2,
        vec![
            Complex64::new(c, 0.0),
            Complex64::new(0.0, s),
            Complex64::new(0.0, s),
            Complex64::new(c, 0.0),
        ],
    ))
}

/// Phase shifter `Z_Φ = diag(e^{-iΦ/2}, e^{iΦ/2})`.
pub fn phase_shifter(phi: f64) -> Result<ModeUnitary> {
    if !phi.is_finite() {
        return Err(Error::invalid(format!(
            "phase shift must be finite, got {phi}"
        )));
    }
    Ok(ModeUnitary::from_parts(
        2,
        vec![
            Complex64::from_polar(1.0, -phi / 2.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::from_polar(1.0, phi / 2.0),
        ],
    ))
}

/// Lifts a two-guide element onto guides `(i, j)` of an `n`-guide circuit:
/// the identity everywhere except rows/columns i and j, which carry `u`.
///
/// Guide indices are 1-based and must satisfy `1 <= i < j <= n`.
pub fn embed(u: &ModeUnitary, modes: (usize, usize), n: usize) -> Result<ModeUnitary> {
    if u.dim() != 2 {
        return Err(Error::invalid(format!(
            "only two-guide elements can be embedded, got dimension {}",
            u.dim()
        )));
    }
    let (i, j) = modes;
    if i < 1 || j <= i || j > n {
        return Err(Error::invalid(format!(
            "guide pair ({i}, {j}) must satisfy 1 <= i < j <= {n}"
        )));
    }
    let mut out = ModeUnitary::identity(n);
    let (a, b) = (i - 1, j - 1);
    out.entries[a * n + a] = u.entry(0, 0);
    out.entries[a * n + b] = u.entry(0, 1);
    out.entries[b * n + a] = u.entry(1, 0);
    out.entries[b * n + b] = u.entry(1, 1);
    Ok(out)
}

/// One element of a circuit: which device, its phase parameter, and the
/// 1-based guide pair it sits on.
///
/// Serializes as `{"kind": "coupler", "theta": ..., "modes": [i, j]}` or
/// `{"kind": "phase_shifter", "phi": ..., "modes": [i, j]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ElementPlacement {
    Coupler { theta: f64, modes: [usize; 2] },
    PhaseShifter { phi: f64, modes: [usize; 2] },
}

impl ElementPlacement {
    pub fn coupler(theta: f64, i: usize, j: usize) -> Self {
        ElementPlacement::Coupler {
            theta,
            modes: [i, j],
        }
    }

    pub fn phase_shifter(phi: f64, i: usize, j: usize) -> Self {
        ElementPlacement::PhaseShifter { phi, modes: [i, j] }
    }

    pub fn modes(&self) -> (usize, usize) {
        match self {
            ElementPlacement::Coupler { modes, .. }
            | ElementPlacement::PhaseShifter { modes, .. } => (modes[0], modes[1]),
        }
    }

    pub fn parameter(&self) -> f64 {
        match self {
            ElementPlacement::Coupler { theta, .. } => *theta,
            ElementPlacement::PhaseShifter { phi, .. } => *phi,
        }
    }

    /// The element's own 2x2 matrix.
    pub fn matrix(&self) -> Result<ModeUnitary> {
        match self {
            ElementPlacement::Coupler { theta, .. } => coupler(*theta),
            ElementPlacement::PhaseShifter { phi, .. } => phase_shifter(*phi),
        }
    }

    fn check(&self, dim: usize, position: usize) -> Result<()> {
        let (i, j) = self.modes();
        if i < 1 || j <= i || j > dim {
            return Err(Error::invalid(format!(
                "element {position}: guide pair ({i}, {j}) must satisfy 1 <= i < j <= {dim}"
            )));
        }
        if !self.parameter().is_finite() {
            return Err(Error::invalid(format!(
                "element {position}: phase parameter must be finite"
            )));
        }
        Ok(())
    }
}

/// An N-guide circuit as an ordered element list. List order is physical
/// propagation order; composition therefore multiplies later elements on the
/// left.
///
/// Serializes as `{"dim": N, "elements": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitLayout {
    pub dim: usize,
    pub elements: Vec<ElementPlacement>,
}

impl CircuitLayout {
    pub fn new(dim: usize, elements: Vec<ElementPlacement>) -> Self {
        CircuitLayout { dim, elements }
    }

    /// Checks every element is well formed for this dimension.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("circuit dimension must be at least 1"));
        }
        for (k, element) in self.elements.iter().enumerate() {
            element.check(self.dim, k + 1)?;
        }
        Ok(())
    }

    /// Total transfer matrix. An empty layout composes to the identity.
    pub fn compose(&self) -> Result<ModeUnitary> {
        self.validate()?;
        let mut acc = ModeUnitary::identity(self.dim);
        for element in &self.elements {
            let lifted = embed(&element.matrix()?, element.modes(), self.dim)?;
            acc = lifted.matmul(&acc)?;
        }
        debug_assert!(acc.unitarity_deviation() <= ALGEBRAIC_TOL);
        Ok(acc)
    }
}

/// Tests whether `a = e^{iχ}·b` for some real χ, within `tol` on every entry.
///
/// Returns the phase χ in (-π, π], taken from the entry of `b` with the
/// largest magnitude, or `None` when the matrices differ (or have different
/// dimensions) beyond `tol`.
pub fn equal_up_to_global_phase(a: &ModeUnitary, b: &ModeUnitary, tol: f64) -> Option<f64> {
    if a.dim() != b.dim() {
        return None;
    }
    let (mut best, mut best_mag) = (0usize, -1.0f64);
    for (k, z) in b.entries().iter().enumerate() {
        if z.norm() > best_mag {
            best_mag = z.norm();
            best = k;
        }
    }
    if best_mag <= 0.0 {
        return None;
    }
    let mut chi = (a.entries()[best] * b.entries()[best].conj()).arg();
    if chi == -std::f64::consts::PI {
        chi = std::f64::consts::PI;
    }
    let rot = Complex64::from_polar(1.0, chi);
    let worst = a
        .entries()
        .iter()
        .zip(b.entries())
        .map(|(x, y)| (x - rot * y).norm())
        .fold(0.0, f64::max);
    (worst <= tol).then_some(chi)
}
