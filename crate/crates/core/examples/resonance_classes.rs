//! ℚ-resonance classes of ω_j = √(j−1) and where the winding hypothesis
//! holds.
//!
//!     cargo run --example resonance_classes -- 12

use sideband_steer::decoupling::{ion_frequencies, resonance_partition, winding_hypothesis_holds};
use sideband_steer::frequency::ExactFrequency;

fn main() -> sideband_steer::Result<()> {
    let m: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(12);
    let part = resonance_partition(m)?;
    println!("ω_1..ω_{} fall into {} classes:", m - 1, part.count);
    for (k, c) in part.classes.iter().enumerate() {
        let members: Vec<String> = c.members.iter().map(|w| w.to_string()).collect();
        println!("  {:2}: ν = {:>4}  {{{}}}", k + 1, c.nu.to_string(), members.join(", "));
    }

    let usable: Vec<usize> = (2..=40)
        .filter(|&m| winding_hypothesis_holds(&ion_frequencies(m - 1), &ExactFrequency::sqrt_of(m as u64 - 1)))
        .collect();
    println!("\norders m ≤ 40 where ω_m is irrational against every lower class: {usable:?}");
    Ok(())
}
