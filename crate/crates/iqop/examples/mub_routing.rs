//! Routing table of the four MUB states through the projector: each state
//! lands with probability 1/2 on its own detector and spreads 1/4 + 1/4
//! over the other basis pair.

use iqop::circuits::{classify_outcome, projector_matrix};
use iqop::states::{detection_probabilities, mub_state, MubLabel};

fn main() -> iqop::Result<()> {
    let projector = projector_matrix();

    println!("input      P(out 1)  P(out 2)  P(out 3)  P(out 4)");
    for label in [MubLabel::D, MubLabel::A, MubLabel::L, MubLabel::R] {
        let state = mub_state(label, (1, 3), 4)?;
        let probs = detection_probabilities(&state, &projector)?;
        let cells: Vec<String> = probs.iter().map(|p| format!("{p:^9.4}")).collect();
        println!("{}:{}    {}", label.basis(), label, cells.join(" "));
    }

    println!("\ndetector interpretation:");
    for output in 1..=4 {
        let (basis, label) = classify_outcome(output)?;
        println!("  output {output} clicks: state was |1_{label}> (basis {basis})");
    }
    Ok(())
}
