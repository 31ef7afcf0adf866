//! Plan on the modal approximation, lift every sideband flow to the full
//! system and check the accumulated error against the per-segment budgets.

use sideband_steer::closure::certify_modal;
use sideband_steer::lift::{choose_prime, error_report, lift_plan};
use sideband_steer::operators::{Family, StateVector};
use sideband_steer::planner::{plan_transfer, PlannerConfig};

fn main() -> sideband_steer::Result<()> {
    let (eps, eps_plan) = (0.1, 0.01);
    let p = choose_prime(3)?;
    let cert = certify_modal(p, &Family::Full)?;
    println!("p = {p}, closure dimension {} / {}", cert.dimension, cert.target);

    let phi0 = StateVector::basis(1, 4 * p)?;
    let phi_t = StateVector::basis(2, 4 * p)?;
    let plan = plan_transfer(&phi0, &phi_t, &PlannerConfig::new(p, eps_plan, 3))?;
    let lifted = lift_plan(&plan, eps - eps_plan, 10_000_000)?;
    let (report, run) = error_report(&plan, &lifted, &phi0, &phi_t)?;

    println!("segment  coupling   s           predicted   running     deviation");
    for (k, seg) in lifted.segments.iter().enumerate() {
        println!(
            "{k:7}  {:<9}  {:<10}  {:.3e}   {:.3e}   {:.3e}",
            seg.coupling.label(),
            seg.s.map(|s| s.to_string()).unwrap_or_else(|| "-".into()),
            report.predicted[k],
            report.running_predicted[k],
            report.deviation[k]
        );
    }
    println!(
        "final error {:.3e} (modal {:.3e} + lifting ≤ {:.3e}), tail mass {:.1e}, duration {:.3e}",
        report.final_error,
        report.modal_error,
        report.total_predicted_error,
        run.tail_mass,
        lifted.total_duration()
    );
    report.check()
}
