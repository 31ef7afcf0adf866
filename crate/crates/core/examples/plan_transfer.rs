//! Piecewise-constant transfer on the decoupled modal approximation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sideband_steer::operators::{Family, StateVector};
use sideband_steer::planner::{gradient_check, plan_transfer, PlannerConfig};

fn main() -> sideband_steer::Result<()> {
    let phi0 = StateVector::basis(1, 12)?;
    let phi_t = StateVector::basis(5, 12)?;
    let plan = plan_transfer(&phi0, &phi_t, &PlannerConfig::new(3, 1e-3, 7))?;
    println!(
        "e1 → e5: {} segments, error {:.2e}, total time {:.3}",
        plan.segments.len(),
        plan.achieved_error,
        plan.total_duration()
    );
    for (k, s) in plan.segments.iter().enumerate().take(8) {
        println!("  {k:2}  {:<10}  u = {:+.0}  τ = {:.4}", s.generator.coupling().label(), s.amplitude, s.duration);
    }
    println!("  adjoint vs finite differences: {:.1e}", gradient_check(&plan, &phi0, &phi_t)?);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for family in [Family::Full, Family::RedOnly] {
        let a = StateVector::random(12, &mut rng);
        let b = StateVector::random(12, &mut rng);
        let mut cfg = PlannerConfig::new(3, 1e-3, 1);
        cfg.family = family.clone();
        let plan = plan_transfer(&a, &b, &cfg)?;
        println!(
            "random pair, {}: {} segments ({} sideband), error {:.2e}",
            family.label(),
            plan.segments.len(),
            plan.sideband_count(),
            plan.achieved_error
        );
    }
    Ok(())
}
