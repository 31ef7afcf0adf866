//! Decoupling time search: find t̄ ≡ t̂ (mod 2π/ν̂) at which every other
//! class, and the first frequency outside the truncation, winds back to
//! the identity.

use std::f64::consts::PI;

use sideband_steer::operators::CouplingId;
use sideband_steer::winding::{bound_trace, find_decoupling_time, verify_sigma, DecouplingRequest};

fn report(req: &DecouplingRequest) -> sideband_steer::Result<()> {
    let r = find_decoupling_time(req)?;
    let measured = verify_sigma(req, &r, 4 * (req.m + 1))?;
    println!(
        "{} m={} class {} t̂={:+.3} ε={}: s = {}, t̄ = {:.6}, bound {:.4e}, measured ‖Σ−I‖ {:.4e}",
        req.id, req.m, req.ell, req.t_hat, req.eps, r.s, r.t_bar, r.bound, measured
    );
    Ok(())
}

fn main() -> sideband_steer::Result<()> {
    let toy = DecouplingRequest {
        id: CouplingId::V1r,
        m: 3,
        ell: 2,
        t_hat: PI,
        eps: 0.1,
        s_max: 10_000_000,
    };
    println!("record lows of the bound for the toy instance:");
    let mut best = f64::INFINITY;
    for (s, b) in bound_trace(&toy, 30)? {
        if b < best {
            best = b;
            println!("  s = {s:2}  bound {b:.5}");
        }
    }
    report(&toy)?;
    for (m, ell, t_hat, eps) in [(4, 2, 1.0, 0.05), (4, 3, -2.5, 0.01), (6, 2, 4.0, 0.1), (8, 1, 1.0, 0.01)] {
        report(&DecouplingRequest {
            id: CouplingId::W2b,
            m,
            ell,
            t_hat,
            eps,
            s_max: 10_000_000,
        })?;
    }
    Ok(())
}
