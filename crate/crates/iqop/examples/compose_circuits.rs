//! Builds the splitter and projector from individual couplers and phase
//! shifters, then checks the products against the reference matrices.

use iqop::circuits::{projector_circuit, projector_matrix, splitter_circuit, splitter_matrix};
use iqop::unitary::equal_up_to_global_phase;

fn main() -> iqop::Result<()> {
    let splitter = splitter_circuit();
    let composed = splitter.compose()?;
    println!(
        "splitter: {} elements over {} guides",
        splitter.elements.len(),
        splitter.dim
    );
    println!(
        "  max deviation from reference: {:.3e}",
        composed.max_entry_distance(&splitter_matrix())
    );

    let projector = projector_circuit();
    let composed = projector.compose()?;
    println!(
        "projector: {} elements over {} guides",
        projector.elements.len(),
        projector.dim
    );
    let chi = equal_up_to_global_phase(&composed, &projector_matrix(), 1e-12)
        .expect("projector layout no longer matches the reference matrix");
    println!("  matches reference up to global phase {chi:+.6} rad");

    println!("\nprojector transfer matrix (unit cells of 1/2):");
    let m = projector_matrix();
    for r in 0..4 {
        let row: Vec<String> = (0..4)
            .map(|c| {
                let z = m.entry(r, c) * 2.0;
                format!("{:+.0}{:+.0}i", z.re, z.im)
            })
            .collect();
        println!("  [{}]", row.join("  "));
    }

    println!("\nas JSON: {}", serde_json::to_string(&projector)?);
    Ok(())
}
