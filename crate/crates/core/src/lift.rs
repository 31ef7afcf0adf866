//! Lifting a modal plan to the full system: carriers pass through, each
//! sideband segment becomes a long flow of the full coupling whose time is
//! chosen by the torus search. The lifted plan is then simulated exactly.

use std::fmt::Write as _;
use std::sync::atomic::AtomicBool;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoupling::{ion_frequencies, winding_hypothesis_holds};
use crate::error::{invalid, Error, Result};
use crate::frequency::{is_prime, ExactFrequency};
use crate::operators::{apply_coupling_flow, apply_exp_segment, CouplingId, StateVector};
use crate::planner::{simulate_plan_modal, Plan};
use crate::winding::{find_decoupling_time_with, DecouplingRequest, LiftedTime};

/// Smallest prime `p ≥ max(n, 3)`, re-checked against the winding hypothesis
/// at order `p + 1`.
pub fn choose_prime(n: usize) -> Result<usize> {
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    let mut p = n.max(3);
    while !is_prime(p as u64) {
        p += 1;
    }
    if !winding_hypothesis_holds(&ion_frequencies(p), &ExactFrequency::sqrt_of(p as u64)) {
        return Err(Error::Consistency(format!(
            "ω_{} = √{p} is resonant with a lower frequency",
            p + 1
        )));
    }
    Ok(p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftedSegment {
    pub coupling: CouplingId,
    pub amplitude: f64,
    pub duration: f64,
    pub origin: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_bar: Option<f64>,
    /// Exact form of `t̄`, used for simulation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lifted: Option<LiftedTime>,
    pub predicted_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftedPlan {
    pub p: usize,
    #[serde(rename = "M")]
    pub m_bound: f64,
    pub eps: f64,
    pub segments: Vec<LiftedSegment>,
    pub total_predicted_error: f64,
    pub dim_sim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl LiftedPlan {
    pub fn sideband_count(&self) -> usize {
        self.segments.iter().filter(|s| s.s.is_some()).count()
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }
}

const MAX_ROUNDS: usize = 8;

fn lift_sideband(
    plan: &Plan,
    k: usize,
    class: usize,
    eps: f64,
    s_max: u64,
    cancel: Option<&AtomicBool>,
) -> Result<LiftedSegment> {
    let seg = &plan.segments[k];
    let coupling = seg.generator.coupling();
    let angle = seg.angle();
    // exp(t̂S) with t̂ < 0 is the flow of −S for |t̂|; the sign moves into
    // the amplitude.
    let req = DecouplingRequest {
        id: coupling,
        m: plan.p + 1,
        ell: class,
        t_hat: angle.abs(),
        eps,
        s_max,
    };
    let res = find_decoupling_time_with(&req, cancel).map_err(|e| match e {
        Error::SearchExhausted {
            s_max,
            best_s,
            best_bound,
            eps,
            ..
        } => Error::SearchExhausted {
            s_max,
            best_s,
            best_bound,
            eps,
            segment: Some(k),
        },
        e => e,
    })?;
    Ok(LiftedSegment {
        coupling,
        amplitude: plan.m_bound.copysign(angle),
        duration: res.t_bar / plan.m_bound,
        origin: k,
        class: Some(class),
        s: Some(res.s),
        t_bar: Some(res.t_bar),
        lifted: Some(res.lifted),
        predicted_error: res.bound,
    })
}

pub fn lift_plan(plan: &Plan, eps: f64, s_max: u64) -> Result<LiftedPlan> {
    lift_plan_with(plan, eps, s_max, None)
}

/// Lifts every segment; sideband searches start from the budget
/// `eps / N_side` and run in parallel.
pub fn lift_plan_with(
    plan: &Plan,
    eps: f64,
    s_max: u64,
    cancel: Option<&AtomicBool>,
) -> Result<LiftedPlan> {
    if !plan.is_success() {
        return Err(invalid("only successful plans can be lifted"));
    }
    if !(eps > 0.0) {
        return Err(invalid("eps must be positive"));
    }
    let p = plan.p;
    let n_side = plan.sideband_count();
    let mut slots: Vec<Option<LiftedSegment>> = vec![None; plan.segments.len()];
    let mut pending = Vec::new();
    for (k, seg) in plan.segments.iter().enumerate() {
        match seg.generator.class() {
            None => {
                slots[k] = Some(LiftedSegment {
                    coupling: seg.generator.coupling(),
                    amplitude: seg.amplitude,
                    duration: seg.duration,
                    origin: k,
                    class: None,
                    s: None,
                    t_bar: None,
                    lifted: None,
                    predicted_error: 0.0,
                })
            }
            Some(class) => pending.push((k, class)),
        }
    }
    // Searches that exhaust s_max are retried with the slack left by the
    // ones that succeeded; every bound stays below its own budget, so the
    // total stays below eps.
    let mut budget = if n_side > 0 { eps / n_side as f64 } else { eps };
    let mut first_failure = None;
    for _ in 0..MAX_ROUNDS {
        if pending.is_empty() {
            break;
        }
        let outcomes: Vec<_> = pending
            .par_iter()
            .map(|&(k, class)| (k, class, lift_sideband(plan, k, class, budget, s_max, cancel)))
            .collect();
        let mut failed = Vec::new();
        for (k, class, r) in outcomes {
            match r {
                Ok(ls) => slots[k] = Some(ls),
                Err(e @ Error::SearchExhausted { .. }) => {
                    first_failure.get_or_insert(e);
                    failed.push((k, class));
                }
                Err(e) => return Err(e),
            }
        }
        pending = failed;
        if pending.is_empty() {
            break;
        }
        let spent: f64 = slots.iter().flatten().map(|s| s.predicted_error).sum();
        let next = (eps - spent) / pending.len() as f64;
        if !(next > budget * (1.0 + 1e-9)) {
            break;
        }
        budget = next;
    }
    if !pending.is_empty() {
        return Err(first_failure.expect("a search failed"));
    }
    let segments: Vec<LiftedSegment> = slots.into_iter().flatten().collect();
    let total_predicted_error = segments.iter().map(|s| s.predicted_error).sum();
    Ok(LiftedPlan {
        p,
        m_bound: plan.m_bound,
        eps,
        dim_sim: 4 * (p + n_side + 1),
        segments,
        total_predicted_error,
        config: None,
    })
}

#[derive(Clone, Debug)]
pub struct LiftedRun {
    /// `φ0` followed by the state after each lifted segment.
    pub trajectory: Vec<StateVector>,
    /// Largest mass found beyond `Y_{4(p + sidebands so far)}`.
    pub tail_mass: f64,
}

impl LiftedRun {
    pub fn final_state(&self) -> &StateVector {
        self.trajectory.last().expect("trajectory starts with φ0")
    }
}

/// Exact flow of one lifted segment at dimension `dim_sim`.
pub fn apply_lifted_segment(seg: &LiftedSegment, phi: &StateVector, dim_sim: usize) -> Result<StateVector> {
    match seg.lifted {
        None => apply_exp_segment(seg.coupling, seg.amplitude, seg.duration, phi, dim_sim),
        Some(lt) => {
            let sign = seg.amplitude.signum();
            apply_coupling_flow(seg.coupling, phi, dim_sim, |p| sign * lt.pair_angle(p))
        }
    }
}

pub fn simulate_lifted(lp: &LiftedPlan, phi0: &StateVector) -> Result<LiftedRun> {
    let phi0 = phi0
        .embed(4 * lp.p)
        .map_err(|_| invalid(format!("φ0 is not supported in Y_{}", 4 * lp.p)))?
        .embed(lp.dim_sim)?;
    let mut trajectory = vec![phi0];
    let mut guard = lp.p;
    let mut tail_mass: f64 = 0.0;
    for seg in &lp.segments {
        let next = apply_lifted_segment(seg, trajectory.last().expect("nonempty"), lp.dim_sim)?;
        if seg.s.is_some() {
            guard += 1;
        }
        tail_mass = tail_mass.max(next.mass_beyond(4 * guard));
        trajectory.push(next);
    }
    if tail_mass >= 1e-12 {
        return Err(Error::Consistency(format!(
            "lifted state carries mass {tail_mass:.3e} beyond its support bound"
        )));
    }
    Ok(LiftedRun {
        trajectory,
        tail_mass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub final_error: f64,
    pub modal_error: f64,
    /// `‖φ_lifted(T) − φ_modal(T)‖`.
    pub lifting_deviation: f64,
    pub predicted: Vec<f64>,
    pub running_predicted: Vec<f64>,
    /// Per-segment `‖φ_lifted,k − φ_modal,k‖`.
    pub deviation: Vec<f64>,
    pub total_predicted_error: f64,
    pub tail_mass: f64,
    /// `final_error ≤ modal_error + total_predicted_error + 1e-9`.
    pub verdict: bool,
    /// Every running deviation is within its running predicted sum.
    pub budget_sound: bool,
}

impl ErrorReport {
    /// Fails loudly when the iterated-approximation estimate is violated.
    pub fn check(&self) -> Result<()> {
        if self.verdict && self.budget_sound {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "final error {:.6e} vs modal {:.6e} + predicted {:.6e}",
                self.final_error, self.modal_error, self.total_predicted_error
            )))
        }
    }
}

pub fn error_report(
    plan: &Plan,
    lp: &LiftedPlan,
    phi0: &StateVector,
    phi_t: &StateVector,
) -> Result<(ErrorReport, LiftedRun)> {
    if lp.segments.len() != plan.segments.len() {
        return Err(invalid("lifted plan does not match the plan"));
    }
    let modal = simulate_plan_modal(plan, phi0)?;
    let run = simulate_lifted(lp, phi0)?;
    let predicted: Vec<f64> = lp.segments.iter().map(|s| s.predicted_error).collect();
    let running_predicted: Vec<f64> = predicted
        .iter()
        .scan(0.0, |acc, e| {
            *acc += e;
            Some(*acc)
        })
        .collect();
    let deviation: Vec<f64> = modal
        .iter()
        .zip(&run.trajectory)
        .skip(1)
        .map(|(a, b)| a.distance(b))
        .collect();
    let modal_error = modal.last().expect("nonempty").distance(phi_t);
    let final_error = run.final_state().distance(phi_t);
    let total = lp.total_predicted_error;
    let report = ErrorReport {
        final_error,
        modal_error,
        lifting_deviation: modal.last().expect("nonempty").distance(run.final_state()),
        budget_sound: deviation
            .iter()
            .zip(&running_predicted)
            .all(|(d, r)| *d <= r + 1e-9),
        verdict: final_error <= plan.achieved_error + total + 1e-9,
        predicted,
        running_predicted,
        deviation,
        total_predicted_error: total,
        tail_mass: run.tail_mass,
    };
    Ok((report, run))
}

/// `segment_index,time_accumulated,basis_index,re,im` rows for every
/// state of the run, then a summary row carrying the final error.
pub fn trajectory_csv(lp: &LiftedPlan, run: &LiftedRun, final_error: f64) -> String {
    let mut out = String::from("segment_index,time_accumulated,basis_index,re,im\n");
    let mut t = 0.0;
    for (k, state) in run.trajectory.iter().enumerate() {
        if k > 0 {
            t += lp.segments[k - 1].duration;
        }
        for (j, a) in state.amplitudes().iter().enumerate() {
            let _ = writeln!(out, "{k},{t:.17e},{},{:.17e},{:.17e}", j + 1, a.re, a.im);
        }
    }
    let _ = writeln!(out, "final_error,{final_error:.17e},,,");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::Part;
    use crate::planner::{GeneratorId, PlanSegment, PlanStatus};

    fn plan(segments: Vec<PlanSegment>) -> Plan {
        Plan {
            p: 3,
            m_bound: 1.0,
            seed: 0,
            target_error: 1.0,
            achieved_error: 0.0,
            segments,
            status: PlanStatus::Success,
            config: None,
        }
    }

    fn carrier(gamma: u8, part: Part, angle: f64) -> PlanSegment {
        PlanSegment {
            generator: GeneratorId::Carrier { gamma, part },
            amplitude: angle.signum(),
            duration: angle.abs(),
        }
    }

    #[test]
    fn primes() {
        assert_eq!(choose_prime(3).unwrap(), 3);
        assert_eq!(choose_prime(4).unwrap(), 5);
        assert_eq!(choose_prime(8).unwrap(), 11);
        assert_eq!(choose_prime(1).unwrap(), 3);
    }

    #[test]
    fn carrier_plans_pass_through() {
        let pl = plan(vec![carrier(1, Part::V, 0.7), carrier(2, Part::W, -1.3)]);
        let lp = lift_plan(&pl, 0.1, 10).unwrap();
        assert_eq!(lp.total_predicted_error, 0.0);
        assert_eq!(lp.dim_sim, 16);
        for (a, b) in lp.segments.iter().zip(&pl.segments) {
            assert_eq!((a.amplitude, a.duration), (b.amplitude, b.duration));
        }
        let phi0 = StateVector::basis(2, 12).unwrap();
        let modal = simulate_plan_modal(&pl, &phi0).unwrap();
        let run = simulate_lifted(&lp, &phi0).unwrap();
        assert!(modal.last().unwrap().distance(run.final_state()) < 1e-12);
        assert_eq!(run.tail_mass, 0.0);
    }

    #[test]
    fn one_sideband_segment() {
        let seg = PlanSegment {
            generator: GeneratorId::Sideband {
                gamma: 1,
                star: crate::operators::Star::Red,
                part: Part::V,
                class: 2,
            },
            amplitude: -1.0,
            duration: 0.8,
        };
        let pl = plan(vec![seg]);
        let lp = lift_plan(&pl, 0.1, 10_000_000).unwrap();
        let ls = &lp.segments[0];
        assert!(ls.predicted_error < 0.1);
        assert_eq!(ls.amplitude, -1.0);
        let lt = ls.lifted.unwrap();
        // t̄ ≡ |t̂| modulo 2π/ν̂ with ν̂ = 1
        let t_bar = ls.t_bar.unwrap();
        let k = ((t_bar - 0.8) / std::f64::consts::TAU).round();
        assert!((t_bar - 0.8 - k * std::f64::consts::TAU).abs() < 1e-9 * t_bar.max(1.0));
        assert_eq!(lt.s, k as u64);
        let phi0 = StateVector::basis(2, 12).unwrap();
        let phi_t = simulate_plan_modal(&pl, &phi0).unwrap().pop().unwrap();
        let (report, _) = error_report(&pl, &lp, &phi0, &phi_t).unwrap();
        assert!(report.lifting_deviation <= ls.predicted_error + 1e-9);
        report.check().unwrap();
    }

    #[test]
    fn rejects_failed_plans() {
        let mut pl = plan(vec![]);
        pl.status = PlanStatus::Failure;
        assert!(lift_plan(&pl, 0.1, 10).is_err());
    }
}
