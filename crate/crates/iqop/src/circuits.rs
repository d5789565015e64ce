//! The canonical four-guide projector circuits and BB84-style measurement.
//!
//! A photon prepared on guides 1 and 3 first meets a splitter stage that
//! copies its two-guide state onto the pairs (1,2) and (3,4) with equal
//! weight; a measurement stage then projects pair (1,2) onto the X basis and
//! pair (3,4) onto the Y basis. A click on a single output therefore
//! announces both a basis and an element — the passive circuit makes the
//! basis choice at random, which is exactly what a BB84 receiver needs.
//!
//! [`splitter_matrix`] and [`projector_matrix`] are the canonical transfer
//! matrices of the two stages combined; [`splitter_circuit`] and
//! [`projector_circuit`] are element-by-element layouts that compose to them
//! (the projector up to a single global phase of -π/8, reported by
//! [`projector_phase`]).

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::states::{
    detection_probabilities, sample_index, Basis, ClickCounts, MubLabel, PhotonState,
};
use crate::unitary::{CircuitLayout, ElementPlacement, ModeUnitary};

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

const HALF: f64 = 0.5;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Transfer matrix of the four-guide splitter stage:
///
/// ```text
///        1  | 1   i   0   0 |
///   S = --- | 0   0   i  -1 |
///       √2  | -1  i   0   0 |
///        0  | 0   0   i   1 |
/// ```
///
/// acting on (c₁, 0, c₃, 0) it yields (c₁, ic₃, -c₁, ic₃)/√2.
pub fn splitter_matrix() -> ModeUnitary {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    ModeUnitary::new(
        4,
        vec![
            c(r, 0.0),
            c(0.0, r),
            c(0.0, 0.0),
            c(0.0, 0.0),
            c(0.0, 0.0),
            c(0.0, 0.0),
            c(0.0, r),
            c(-r, 0.0),
            c(-r, 0.0),
            c(0.0, r),
            c(0.0, 0.0),
            c(0.0, 0.0),
            c(0.0, 0.0),
            c(0.0, 0.0),
            c(0.0, r),
            c(r, 0.0),
        ],
    )
    .expect("splitter constant is unitary")
}

/// Transfer matrix of the full random-basis projector:
///
/// ```text
///        1  |  1   i  -1  -i |
///   P = --- |  i  -1   i  -1 |
///        2  | -1   i  -i  -1 |
///           | -i  -1  -1   i |
/// ```
///
/// Outputs 1 and 2 project onto the X basis (A and D), outputs 3 and 4 onto
/// the Y basis (R and L); see [`classify_outcome`].
pub fn projector_matrix() -> ModeUnitary {
    ModeUnitary::new(
        4,
        vec![
            c(HALF, 0.0),
            c(0.0, HALF),
            c(-HALF, 0.0),
            c(0.0, -HALF),
            c(0.0, HALF),
            c(-HALF, 0.0),
            c(0.0, HALF),
            c(-HALF, 0.0),
            c(-HALF, 0.0),
            c(0.0, HALF),
            c(0.0, -HALF),
            c(-HALF, 0.0),
            c(0.0, -HALF),
            c(-HALF, 0.0),
            c(-HALF, 0.0),
            c(0.0, HALF),
        ],
    )
    .expect("projector constant is unitary")
}

/// Element layout of the splitter stage: balanced couplers on (1,2) and
/// (3,4), then a full-cross coupler on (2,3). Composes to
/// [`splitter_matrix`] entrywise.
pub fn splitter_circuit() -> CircuitLayout {
    CircuitLayout::new(
        4,
        vec![
            ElementPlacement::coupler(FRAC_PI_4, 1, 2),
            ElementPlacement::coupler(FRAC_PI_4, 3, 4),
            ElementPlacement::coupler(FRAC_PI_2, 2, 3),
        ],
    )
}

/// Element layout of the full projector: the splitter stage, three phase
/// trims, and a final balanced coupler on each pair.
///
/// The trims set the relative phases so that pair (1,2) is read in the X
/// basis and pair (3,4) in the Y basis; composing the layout reproduces
/// [`projector_matrix`] up to the global phase [`projector_phase`], which is
/// physically irrelevant.
pub fn projector_circuit() -> CircuitLayout {
    CircuitLayout::new(
        4,
        vec![
            ElementPlacement::coupler(FRAC_PI_4, 1, 2),
            ElementPlacement::coupler(FRAC_PI_4, 3, 4),
            ElementPlacement::coupler(FRAC_PI_2, 2, 3),
            ElementPlacement::phase_shifter(FRAC_PI_4, 1, 4),
            ElementPlacement::phase_shifter(FRAC_PI_4, 2, 3),
            ElementPlacement::phase_shifter(FRAC_PI_2, 3, 4),
            ElementPlacement::coupler(FRAC_PI_4, 1, 2),
            ElementPlacement::coupler(FRAC_PI_4, 3, 4),
        ],
    )
}

/// Global phase χ with `compose(projector_circuit()) = e^{iχ} ·
/// projector_matrix()`: exactly -π/8.
pub fn projector_phase() -> f64 {
    -std::f64::consts::FRAC_PI_8
}

/// Two-guide projector onto one basis: Y is a single balanced coupler, X a
/// quarter-wave phase shift followed by a balanced coupler. Each basis state
/// exits on exactly one output: A and R on output 1, D and L on output 2.
pub fn two_mode_projector(basis: Basis) -> CircuitLayout {
    let mut elements = Vec::new();
    if basis == Basis::X {
        elements.push(ElementPlacement::phase_shifter(FRAC_PI_2, 1, 2));
    }
    elements.push(ElementPlacement::coupler(FRAC_PI_4, 1, 2));
    CircuitLayout::new(2, elements)
}

/// Which projection a click on `output` (1-based) announces. Derived from
/// the projector matrix itself: 1 → (X, A), 2 → (X, D), 3 → (Y, R),
/// 4 → (Y, L).
pub fn classify_outcome(output: usize) -> Result<(Basis, MubLabel)> {
    match output {
        1 => Ok((Basis::X, MubLabel::A)),
        2 => Ok((Basis::X, MubLabel::D)),
        3 => Ok((Basis::Y, MubLabel::R)),
        4 => Ok((Basis::Y, MubLabel::L)),
        _ => Err(Error::invalid(format!(
            "output index {output} out of range 1..=4"
        ))),
    }
}

/// One projective measurement result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QkdOutcome {
    /// Output guide that clicked, 1-based.
    pub output: usize,
    pub basis: Basis,
    pub label: MubLabel,
    /// Set when the input state had support outside guides 1 and 3; the
    /// circuit still measures it, but the protocol interpretation assumes
    /// injection on guides 1 and 3 only.
    pub off_protocol: bool,
}

/// A batch of projective measurements of the same state.
#[derive(Debug, Clone, PartialEq)]
pub struct QkdRun {
    pub outcomes: Vec<QkdOutcome>,
    pub clicks: ClickCounts,
}

impl QkdRun {
    /// Fraction of trials measured in each basis, (X, Y).
    pub fn basis_frequencies(&self) -> (f64, f64) {
        let x = self.clicks.counts[0] + self.clicks.counts[1];
        let total = self.clicks.trials as f64;
        (x as f64 / total, (self.clicks.trials - x) as f64 / total)
    }
}

/// Measures a four-guide state `trials` times through the random-basis
/// projector, drawing outcomes with a ChaCha12 generator seeded by `seed`.
pub fn qkd_run(state: &PhotonState, trials: u64, seed: u64) -> Result<QkdRun> {
    if state.dim() != 4 {
        return Err(Error::invalid(format!(
            "projective measurement needs a four-guide state, got dimension {}",
            state.dim()
        )));
    }
    if trials == 0 {
        return Err(Error::invalid("trial count must be positive"));
    }
    let off_protocol = state.amplitudes()[1].norm() > crate::ALGEBRAIC_TOL
        || state.amplitudes()[3].norm() > crate::ALGEBRAIC_TOL;
    let probs = detection_probabilities(state, &projector_matrix())?;
    let total: f64 = probs.iter().sum();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut outcomes = Vec::with_capacity(trials as usize);
    let mut counts = vec![0u64; 4];
    for _ in 0..trials {
        let u: f64 = rng.gen();
        let idx = sample_index(&probs, total, u);
        counts[idx] += 1;
        let (basis, label) = classify_outcome(idx + 1)?;
        outcomes.push(QkdOutcome {
            output: idx + 1,
            basis,
            label,
            off_protocol,
        });
    }
    Ok(QkdRun {
        outcomes,
        clicks: ClickCounts {
            counts,
            trials,
            seed,
        },
    })
}

/// Single projective measurement; see [`qkd_run`].
pub fn qkd_measure(state: &PhotonState, seed: u64) -> Result<QkdOutcome> {
    Ok(qkd_run(state, 1, seed)?.outcomes[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::{basis_state, mub_state};
    use crate::unitary::{coupler, equal_up_to_global_phase, phase_shifter};
    use std::f64::consts::FRAC_PI_8;

    const TOL: f64 = 1e-12;

    /// 2x2 sub-block of a 4x4 matrix on the given zero-based index pair.
    fn block(m: &ModeUnitary, rows: (usize, usize)) -> ModeUnitary {
        let (a, b) = rows;
        ModeUnitary::new(
            2,
            vec![m.entry(a, a), m.entry(a, b), m.entry(b, a), m.entry(b, b)],
        )
        .expect("block of a block-diagonal unitary is unitary")
    }

    #[test]
    fn reference_constants_are_unitary() {
        assert!(splitter_matrix().unitarity_deviation() <= TOL);
        assert!(projector_matrix().unitarity_deviation() <= TOL);
    }

    #[test]
    fn splitter_divides_a_two_guide_state() {
        let s = splitter_matrix();
        let c1 = c(0.6, 0.1);
        let c3 = c(-0.2, 0.76);
        let out = s.apply(&[c1, c(0.0, 0.0), c3, c(0.0, 0.0)]).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((out[0] - c1 * r).norm() <= TOL);
        assert!((out[1] - c3 * c(0.0, r)).norm() <= TOL);
        assert!((out[2] + c1 * r).norm() <= TOL);
        assert!((out[3] - c3 * c(0.0, r)).norm() <= TOL);
    }

    #[test]
    fn splitter_layout_composes_to_the_constant() {
        let composed = splitter_circuit().compose().unwrap();
        assert!(composed.max_entry_distance(&splitter_matrix()) <= TOL);
    }

    #[test]
    fn splitter_columns_match_the_constant() {
        let u = splitter_circuit().compose().unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let col1 = u
            .apply(&[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)])
            .unwrap();
        assert!((col1[0] - c(r, 0.0)).norm() <= TOL);
        assert!((col1[1]).norm() <= TOL);
        assert!((col1[2] - c(-r, 0.0)).norm() <= TOL);
        assert!((col1[3]).norm() <= TOL);
        let col3 = u
            .apply(&[c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)])
            .unwrap();
        assert!((col3[0]).norm() <= TOL);
        assert!((col3[1] - c(0.0, r)).norm() <= TOL);
        assert!((col3[2]).norm() <= TOL);
        assert!((col3[3] - c(0.0, r)).norm() <= TOL);
    }

    #[test]
    fn projector_layout_composes_to_the_constant_up_to_phase() {
        let composed = projector_circuit().compose().unwrap();
        let chi = equal_up_to_global_phase(&composed, &projector_matrix(), TOL)
            .expect("projector layout must match the constant up to a phase");
        assert!((chi - projector_phase()).abs() <= TOL, "chi = {chi}");
        assert!((projector_phase() + FRAC_PI_8).abs() == 0.0);
    }

    #[test]
    fn measurement_stage_is_block_diagonal() {
        let p = projector_matrix();
        let s = splitter_matrix();
        let stage = p.matmul(&s.adjoint()).unwrap();

        let mut off_block = 0.0f64;
        for r in 0..4 {
            for col in 0..4 {
                let in_first = r < 2 && col < 2;
                let in_second = r >= 2 && col >= 2;
                if !in_first && !in_second {
                    off_block = off_block.max(stage.entry(r, col).norm());
                }
            }
        }
        assert!(off_block <= 1e-15, "off-block mass {off_block}");

        let b1 = block(&stage, (0, 1));
        assert!(b1.max_entry_distance(&coupler(FRAC_PI_4).unwrap()) <= 1e-15);

        let b2 = block(&stage, (2, 3));
        let want = coupler(FRAC_PI_4)
            .unwrap()
            .matmul(&phase_shifter(FRAC_PI_2).unwrap())
            .unwrap();
        let chi = equal_up_to_global_phase(&b2, &want, TOL).expect("second block matches");
        assert!((chi - FRAC_PI_4).abs() <= TOL);
    }

    #[test]
    fn mub_states_route_to_their_outputs() {
        let p = projector_matrix();
        let cases = [
            (MubLabel::A, [0.5, 0.0, 0.25, 0.25]),
            (MubLabel::D, [0.0, 0.5, 0.25, 0.25]),
            (MubLabel::R, [0.25, 0.25, 0.5, 0.0]),
            (MubLabel::L, [0.25, 0.25, 0.0, 0.5]),
        ];
        for (label, want) in cases {
            let state = mub_state(label, (1, 3), 4).unwrap();
            let probs = detection_probabilities(&state, &p).unwrap();
            for (k, (&got, &expected)) in probs.iter().zip(&want).enumerate() {
                assert!(
                    (got - expected).abs() <= TOL,
                    "{label}: output {} got {got}, want {expected}",
                    k + 1
                );
            }
            // The output carrying probability 1/2 announces this very label.
            let peak = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            let (basis, peak_label) = classify_outcome(peak + 1).unwrap();
            assert_eq!(peak_label, label);
            assert_eq!(basis, label.basis());
        }
    }

    #[test]
    fn injected_pair_splits_evenly_between_bases() {
        let p = projector_matrix();
        for label in [MubLabel::D, MubLabel::A, MubLabel::L, MubLabel::R] {
            let state = mub_state(label, (1, 3), 4).unwrap();
            let probs = detection_probabilities(&state, &p).unwrap();
            assert!((probs[0] + probs[1] - 0.5).abs() <= TOL);
            assert!((probs[2] + probs[3] - 0.5).abs() <= TOL);
        }
    }

    #[test]
    fn two_mode_projectors_route_basis_states() {
        let py = two_mode_projector(Basis::Y).compose().unwrap();
        let px = two_mode_projector(Basis::X).compose().unwrap();

        let cases = [
            (&py, MubLabel::R, [1.0, 0.0]),
            (&py, MubLabel::L, [0.0, 1.0]),
            (&px, MubLabel::A, [1.0, 0.0]),
            (&px, MubLabel::D, [0.0, 1.0]),
        ];
        for (u, label, want) in cases {
            let state = mub_state(label, (1, 2), 2).unwrap();
            let probs = detection_probabilities(&state, u).unwrap();
            assert!((probs[0] - want[0]).abs() <= TOL, "{label}: {probs:?}");
            assert!((probs[1] - want[1]).abs() <= TOL, "{label}: {probs:?}");
        }

        // Cross-basis states split evenly: a Y projector tells X states
        // nothing, and vice versa.
        let d = mub_state(MubLabel::D, (1, 2), 2).unwrap();
        let probs = detection_probabilities(&d, &py).unwrap();
        assert!((probs[0] - 0.5).abs() <= TOL);
        let l = mub_state(MubLabel::L, (1, 2), 2).unwrap();
        let probs = detection_probabilities(&l, &px).unwrap();
        assert!((probs[0] - 0.5).abs() <= TOL);
    }

    #[test]
    fn outcome_classification_table() {
        assert_eq!(classify_outcome(1).unwrap(), (Basis::X, MubLabel::A));
        assert_eq!(classify_outcome(2).unwrap(), (Basis::X, MubLabel::D));
        assert_eq!(classify_outcome(3).unwrap(), (Basis::Y, MubLabel::R));
        assert_eq!(classify_outcome(4).unwrap(), (Basis::Y, MubLabel::L));
        assert!(classify_outcome(0).is_err());
        assert!(classify_outcome(5).is_err());
    }

    #[test]
    fn measurement_runs_are_reproducible() {
        let state = mub_state(MubLabel::A, (1, 3), 4).unwrap();
        let a = qkd_run(&state, 500, 11).unwrap();
        let b = qkd_run(&state, 500, 11).unwrap();
        assert_eq!(a.outcomes, b.outcomes);
        assert_eq!(a.clicks, b.clicks);
        let c = qkd_run(&state, 500, 12).unwrap();
        assert_ne!(a.outcomes, c.outcomes);
        assert_eq!(qkd_measure(&state, 11).unwrap(), a.outcomes[0]);
    }

    #[test]
    fn measurement_statistics_follow_the_routing() {
        let state = mub_state(MubLabel::A, (1, 3), 4).unwrap();
        let trials = 20_000u64;
        let run = qkd_run(&state, trials, 3).unwrap();
        let sigma3 = 3.0 * (0.25 / trials as f64).sqrt();
        let f1 = run.clicks.counts[0] as f64 / trials as f64;
        assert!((f1 - 0.5).abs() <= sigma3, "output-1 frequency {f1}");
        assert_eq!(run.clicks.counts[1], 0);
        let (fx, fy) = run.basis_frequencies();
        assert!((fx - 0.5).abs() <= sigma3, "X frequency {fx}");
        assert!((fx + fy - 1.0).abs() <= TOL);
        assert!(!run.outcomes[0].off_protocol);
    }

    #[test]
    fn off_protocol_inputs_are_flagged_not_rejected() {
        let state = basis_state(2, 4).unwrap();
        let outcome = qkd_measure(&state, 5).unwrap();
        assert!(outcome.off_protocol);
        let run = qkd_run(&state, 100, 5).unwrap();
        assert!(run.outcomes.iter().all(|o| o.off_protocol));
        assert_eq!(run.clicks.trials, 100);

        let on_pair = mub_state(MubLabel::L, (1, 3), 4).unwrap();
        assert!(!qkd_measure(&on_pair, 5).unwrap().off_protocol);
    }

    #[test]
    fn measurement_rejects_wrong_dimension() {
        let state = basis_state(1, 2).unwrap();
        assert!(qkd_run(&state, 10, 0).is_err());
        let ok = basis_state(1, 4).unwrap();
        assert!(qkd_run(&ok, 0, 0).is_err());
    }
}
