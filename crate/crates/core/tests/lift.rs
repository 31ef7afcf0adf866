mod common;

use common::{apply, expm, haar_state, random_skew, random_unitary, spectral_norm};
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sideband_steer::lift::{error_report, lift_plan, simulate_lifted, LiftedPlan};
use sideband_steer::operators::{Part, Star, StateVector};
use sideband_steer::planner::{plan_transfer, simulate_plan_modal, GeneratorId, Plan, PlanSegment, PlanStatus, PlannerConfig};

fn plan(segments: Vec<PlanSegment>, achieved: f64) -> Plan {
    Plan {
        p: 3,
        m_bound: 1.0,
        seed: 0,
        target_error: 1.0,
        achieved_error: achieved,
        segments,
        status: PlanStatus::Success,
        config: None,
    }
}

fn segment(generator: GeneratorId, angle: f64) -> PlanSegment {
    PlanSegment {
        generator,
        amplitude: if angle < 0.0 { -1.0 } else { 1.0 },
        duration: angle.abs(),
    }
}

fn random_generator<R: Rng>(rng: &mut R, sideband: bool) -> GeneratorId {
    let gamma = rng.random_range(1..=2u8);
    let part = if rng.random() { Part::V } else { Part::W };
    if sideband {
        GeneratorId::Sideband {
            gamma,
            star: if rng.random() { Star::Red } else { Star::Blue },
            part,
            class: rng.random_range(2..=3),
        }
    } else {
        GeneratorId::Carrier { gamma, part }
    }
}

#[test]
fn iterated_error_lemma_synthetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut violations = 0;
    for _ in 0..1000 {
        let mut x = haar_state(16, &mut rng);
        let mut y = x.clone();
        let mut budget = 0.0;
        for _ in 0..20 {
            let u = random_unitary(16, &mut rng);
            let eps_k: f64 = rng.random_range(0.0..0.01);
            let a = random_skew(16, &mut rng);
            let a = &a * C64::new(eps_k * rng.random_range(0.0..1.0) / spectral_norm(&a), 0.0);
            let sigma = expm(&a);
            assert!(spectral_norm(&(&sigma - nalgebra::DMatrix::<C64>::identity(16, 16))) < eps_k.max(1e-300));
            x = apply(&u, &x);
            y = apply(&(sigma * &u), &y);
            budget += eps_k;
        }
        if x.distance(&y) > budget {
            violations += 1;
        }
    }
    assert_eq!(violations, 0);
}

#[test]
fn empty_plan_is_identity() {
    let lp = LiftedPlan {
        p: 3,
        m_bound: 1.0,
        eps: 0.1,
        segments: vec![],
        total_predicted_error: 0.0,
        dim_sim: 16,
        config: None,
    };
    let phi0 = haar_state(12, &mut ChaCha8Rng::seed_from_u64(3));
    let run = simulate_lifted(&lp, &phi0).unwrap();
    assert!(run.final_state().distance(&phi0.embed(16).unwrap()) == 0.0);
    assert_eq!(run.tail_mass, 0.0);
}

#[test]
fn mixed_plan_budget() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let segs: Vec<PlanSegment> = (0..12)
        .map(|k| segment(random_generator(&mut rng, k % 2 == 1), rng.random_range(-3.0..3.0)))
        .collect();
    let pl = plan(segs, 0.0);
    let lp = lift_plan(&pl, 0.2, 10_000_000).unwrap();
    assert!(lp.total_predicted_error < 0.2);
    assert_eq!(lp.sideband_count(), 6);
    assert_eq!(lp.dim_sim, 4 * (3 + 6 + 1));
    for (ls, s) in lp.segments.iter().zip(&pl.segments) {
        assert_eq!(ls.s.is_some(), !s.generator.is_carrier());
        if ls.lifted.is_some() {
            assert_eq!(ls.amplitude.signum(), s.angle().signum());
        }
    }
}

#[test]
fn end_to_end_transfer() {
    let phi0 = StateVector::basis(1, 12).unwrap();
    let phi_t = StateVector::basis(5, 12).unwrap();
    let pl = plan_transfer(&phi0, &phi_t, &PlannerConfig::new(3, 0.01, 7)).unwrap();
    let lp = lift_plan(&pl, 0.09, 10_000_000).unwrap();
    let (report, run) = error_report(&pl, &lp, &phi0, &phi_t).unwrap();
    report.check().unwrap();
    assert!(report.final_error < 0.1);
    assert!(run.tail_mass < 1e-12);
    assert!((run.final_state().norm() - 1.0).abs() < 1e-12);
    assert!(report.lifting_deviation <= report.total_predicted_error + 1e-9);
}

#[test]
fn lifting_error_shrinks_with_budget() {
    let phi0 = StateVector::basis(1, 12).unwrap();
    let phi_t = StateVector::basis(10, 12).unwrap();
    let pl = plan_transfer(&phi0, &phi_t, &PlannerConfig::new(3, 1e-3, 3)).unwrap();
    let mut last = f64::INFINITY;
    for eps in [0.4, 0.2, 0.1] {
        let lp = lift_plan(&pl, eps, 10_000_000).unwrap();
        let (report, _) = error_report(&pl, &lp, &phi0, &phi_t).unwrap();
        report.check().unwrap();
        assert!(report.lifting_deviation < eps);
        assert!(report.final_error <= last + 1e-12, "eps={eps}: {} > {last}", report.final_error);
        last = report.final_error;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn carrier_plans_lift_exactly(seed in any::<u64>(), len in 0usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let segs = (0..len)
            .map(|_| segment(random_generator(&mut rng, false), rng.random_range(-4.0..4.0)))
            .collect();
        let pl = plan(segs, 0.0);
        let phi0 = haar_state(12, &mut rng);
        let phi_t = simulate_plan_modal(&pl, &phi0).unwrap().pop().unwrap();
        let lp = lift_plan(&pl, 0.1, 10).unwrap();
        prop_assert_eq!(lp.total_predicted_error, 0.0);
        let (report, _) = error_report(&pl, &lp, &phi0, &phi_t).unwrap();
        prop_assert!(report.final_error < 1e-12);
        prop_assert!(report.lifting_deviation < 1e-12);
    }

    #[test]
    fn support_grows_one_block_per_sideband(seed in any::<u64>(), len in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let segs = (0..len)
            .map(|_| segment(random_generator(&mut rng, true), rng.random_range(-3.0..3.0)))
            .collect();
        let pl = plan(segs, 0.0);
        let phi0 = haar_state(12, &mut rng);
        let lp = lift_plan(&pl, 0.5, 10_000_000).unwrap();
        let run = simulate_lifted(&lp, &phi0).unwrap();
        for (k, state) in run.trajectory.iter().enumerate() {
            prop_assert!(state.mass_beyond(4 * (3 + k)) < 1e-14);
            prop_assert!((state.norm() - 1.0).abs() < 1e-12);
        }
        let modal = simulate_plan_modal(&pl, &phi0).unwrap();
        let dev = modal.last().unwrap().distance(run.final_state());
        prop_assert!(dev <= lp.total_predicted_error + 1e-9);
    }
}
