//! The twelve ion couplings at a given truncation: which 2×2 blocks they
//! rotate and at which frequencies.
//!
//!     cargo run --example coupling_spectra -- 4

use std::collections::BTreeSet;

use sideband_steer::operators::{build_coupling, closed_form_permuted, permuted_matrix, CouplingId};

fn main() -> sideband_steer::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(4);
    println!("truncation Y_{} (n = {n})", 4 * n);
    for id in CouplingId::IONS {
        let op = build_coupling(id, n)?;
        let pairs = op.pairs.as_deref().unwrap_or_default();
        let freqs: BTreeSet<_> = pairs.iter().map(|p| p.frequency()).collect();
        let freqs: Vec<String> = freqs.iter().map(|w| w.to_string()).collect();
        let permuted = (permuted_matrix(id, n)? - closed_form_permuted(id, n)?).norm();
        println!(
            "{:>4}  {:8}  {:2} pairs  |λ| ∈ {{{}}}  skew {:.0e}  block form Δ {:.0e}",
            id.label(),
            if id.is_carrier() { "carrier" } else { "sideband" },
            pairs.len(),
            freqs.join(", "),
            op.skew_residual(),
            permuted
        );
    }

    let op = build_coupling(CouplingId::V1r, 2)?;
    println!("\nV1r on Y_8:");
    for p in op.pairs.as_deref().unwrap_or_default() {
        println!("  e{} ↔ e{}  coefficient {:+.4}", p.j, p.k, p.coefficient());
    }
    Ok(())
}
