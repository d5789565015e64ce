//! Inverse design: pick geometries that realize 3 dB (theta = pi/4) and full
//! cross (theta = pi/2) couplers from a known coupling law.

use iqop::calibration::{design_coupler, CalibrationModel, DesignConstraint};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

fn main() -> iqop::Result<()> {
    let model = CalibrationModel::from_law(3.065 * PI, 0.537)?;

    println!("target    constraint       l_c (mm)   d_m (um)   note");
    for (name, theta) in [("pi/4", FRAC_PI_4), ("pi/2", FRAC_PI_2)] {
        for d_m in [4.5, 6.0, 7.5] {
            match design_coupler(&model, theta, DesignConstraint::FixedSeparation(d_m), 0.0) {
                Ok(d) => println!(
                    "{name:<9} d_m = {d_m:<4}      {:>8.4}   {:>8.4}   {}",
                    d.l_c,
                    d.d_m,
                    if d.extrapolated {
                        "extrapolated"
                    } else {
                        "in range"
                    }
                ),
                Err(e) => println!("{name:<9} d_m = {d_m:<4}      {e}"),
            }
        }
    }

    // Holding the length fixed instead and solving for the separation.
    let d = design_coupler(&model, FRAC_PI_4, DesignConstraint::FixedLength(1.5), 0.0)?;
    println!(
        "\npi/4 at l_c = 1.5 mm wants d_m = {:.4} um (predicted theta {:.6})",
        d.d_m, d.predicted_theta
    );

    // Bend contributions shift the mask length down.
    let with_bends = design_coupler(
        &model,
        FRAC_PI_4,
        DesignConstraint::FixedSeparation(6.0),
        0.25,
    )?;
    let without = design_coupler(
        &model,
        FRAC_PI_4,
        DesignConstraint::FixedSeparation(6.0),
        0.0,
    )?;
    println!(
        "bend offset 0.25 mm: mask length {:.4} -> {:.4} mm",
        without.l_c, with_bends.l_c
    );
    Ok(())
}
