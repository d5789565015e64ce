//! Assembles a Mach-Zehnder interferometer from scratch: two balanced
//! couplers around a variable phase, the textbook way to turn a phase shift
//! into a population difference.

use iqop::states::{basis_state, detection_probabilities};
use iqop::unitary::{CircuitLayout, ElementPlacement};
use std::f64::consts::FRAC_PI_4;

fn main() -> iqop::Result<()> {
    println!("phase    P(out 1)  P(out 2)");
    for k in 0..=8 {
        let phi = k as f64 * std::f64::consts::PI / 4.0;
        let mzi = CircuitLayout::new(
            2,
            vec![
                ElementPlacement::coupler(FRAC_PI_4, 1, 2),
                ElementPlacement::phase_shifter(phi, 1, 2),
                ElementPlacement::coupler(FRAC_PI_4, 1, 2),
            ],
        );
        let u = mzi.compose()?;
        let probs = detection_probabilities(&basis_state(1, 2)?, &u)?;
        println!(
            "{:>4.2}pi   {:.4}    {:.4}",
            phi / std::f64::consts::PI,
            probs[0],
            probs[1]
        );
    }

    // Layouts serialize; this is the file format `simulate --circuit` reads.
    let mzi = CircuitLayout::new(
        2,
        vec![
            ElementPlacement::coupler(FRAC_PI_4, 1, 2),
            ElementPlacement::phase_shifter(FRAC_PI_4, 1, 2),
            ElementPlacement::coupler(FRAC_PI_4, 1, 2),
        ],
    );
    println!("\n{}", serde_json::to_string_pretty(&mzi)?);
    Ok(())
}
