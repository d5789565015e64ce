//! Repeated random-basis projective measurements of |1_A> on guides (1,3).
//! The projector itself makes the basis choice: half the photons exit on the
//! X-basis pair, half on the Y-basis pair.

use iqop::circuits::qkd_run;
use iqop::states::{mub_state, MubLabel};

fn main() -> iqop::Result<()> {
    let trials = 100_000;
    let seed = 1;
    let state = mub_state(MubLabel::A, (1, 3), 4)?;
    let run = qkd_run(&state, trials, seed)?;

    println!("{trials} projections of |1_A>, seed {seed}");
    for (i, &count) in run.clicks.counts.iter().enumerate() {
        let outcome = run
            .outcomes
            .iter()
            .find(|o| o.output == i + 1)
            .map(|o| format!("{}:{}", o.basis, o.label))
            .unwrap_or_else(|| "never hit".into());
        println!(
            "  output {}: {:>6} clicks  ({:.4})  {}",
            i + 1,
            count,
            count as f64 / trials as f64,
            outcome
        );
    }

    let (x, y) = run.basis_frequencies();
    println!("basis split: X {x:.4} / Y {y:.4}");

    let first: Vec<String> = run.outcomes[..10]
        .iter()
        .map(|o| format!("{}{}", o.basis, o.label))
        .collect();
    println!("first ten sifted symbols: {}", first.join(" "));
    Ok(())
}
