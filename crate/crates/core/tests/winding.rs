mod common;

use std::f64::consts::{PI, TAU};

use common::{expm, spectral_norm};
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use sideband_steer::decoupling::{class_projector, resonance_partition};
use sideband_steer::operators::{build_coupling, CouplingId};
use sideband_steer::winding::{bound_at, bound_trace, find_decoupling_time, verify_sigma, DecouplingRequest};

fn req(id: CouplingId, m: usize, ell: usize, t_hat: f64, eps: f64) -> DecouplingRequest {
    DecouplingRequest {
        id,
        m,
        ell,
        t_hat,
        eps,
        s_max: 10_000_000,
    }
}

#[test]
fn toy_instance_returns_twenty() {
    for id in [CouplingId::V1r, CouplingId::W2b] {
        let r = find_decoupling_time(&req(id, 3, 2, PI, 0.1)).unwrap();
        assert_eq!(r.s, 20);
        assert!(r.bound < 0.1);
    }
}

#[test]
fn first_admissible_time_is_returned() {
    let q = req(CouplingId::V1b, 4, 2, 1.0, 0.05);
    let r = find_decoupling_time(&q).unwrap();
    assert!(r.bound < 0.05);
    for (s, b) in bound_trace(&q, r.s - 1).unwrap().into_iter().filter(|&(s, _)| s < r.s) {
        assert!(b >= 0.05, "s={s} already admissible");
    }
    assert_eq!(bound_at(&q, r.s).unwrap().bound, r.bound);
}

#[test]
fn exhaustion_reports_best_so_far() {
    let mut q = req(CouplingId::V1r, 4, 2, 1.0, 1e-4);
    q.s_max = 1000;
    match find_decoupling_time(&q) {
        Err(sideband_steer::Error::SearchExhausted { best_bound, best_s, .. }) => {
            assert!(best_bound >= 1e-4);
            assert!(best_s <= 1000);
        }
        other => panic!("expected exhaustion, got {other:?}"),
    }
}

/// `‖(exp(t̄U)·exp(−t̂U_ℓ) − I)|_Y‖` from dense exponentials; only usable
/// while `t̄` is small.
fn dense_sigma_error(q: &DecouplingRequest, t_bar: f64, t_hat: f64) -> f64 {
    let dim = 4 * (q.m + 1);
    let u = build_coupling(q.id, q.m + 1).unwrap().entries;
    let class = resonance_partition(q.m).unwrap().class(q.ell).unwrap().clone();
    let u_ell = &u * class_projector(q.id, &class, q.m, dim).unwrap();
    let sigma = expm(&(&u * C64::new(t_bar, 0.0))) * expm(&(u_ell * C64::new(-t_hat, 0.0)));
    let y = 4 * (q.m - 1);
    let diff = sigma - DMatrix::<C64>::identity(dim, dim);
    spectral_norm(&diff.columns(0, y).into_owned())
}

#[test]
fn measured_sigma_matches_dense_oracle() {
    for (ell, t_hat) in [(2, 0.7), (3, -1.3), (1, 2.0)] {
        let q = req(CouplingId::W1r, 4, ell, t_hat, 0.4);
        let r = find_decoupling_time(&q).unwrap();
        assert!(r.t_bar.abs() < 5000.0);
        let measured = verify_sigma(&q, &r, 4 * (q.m + 1)).unwrap();
        let dense = dense_sigma_error(&q, r.t_bar, r.lifted.t_hat);
        assert!((measured - dense).abs() < 1e-8, "ℓ={ell}: {measured} vs {dense}");
        assert!(measured <= r.bound + 1e-10);
    }
}

#[test]
fn search_succeeds_at_moderate_order() {
    for (m, eps, classes) in [(4, 0.01, 3), (6, 0.1, 4), (8, 0.1, 1)] {
        for ell in 1..=classes {
            let q = req(CouplingId::V2r, m, ell, 2.5, eps);
            let r = find_decoupling_time(&q).unwrap();
            assert!(r.bound < eps);
            assert!(verify_sigma(&q, &r, 4 * (m + 1)).unwrap() <= r.bound + 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lifted_time_is_congruent(idx in 0usize..8, ell in 1usize..4, t_hat in -5.0f64..5.0) {
        let id = CouplingId::SIDEBANDS[idx];
        let q = req(id, 4, ell, t_hat, 0.1);
        let r = find_decoupling_time(&q).unwrap();
        let nu = r.lifted.nu_hat.value();
        let period = TAU / nu;
        let t_eff = r.lifted.t_hat;
        prop_assert!(t_eff == t_hat || (ell == 1 && t_eff == 0.0));
        let k = (r.t_bar - t_eff) / period;
        prop_assert!((k - r.s as f64).abs() < 1e-9 * (r.s as f64).max(1.0));
        prop_assert!(r.bound < 0.1);
        prop_assert!(verify_sigma(&q, &r, 20).unwrap() <= r.bound + 1e-10);
    }

    #[test]
    fn tighter_tolerance_never_finds_earlier_time(ell in 1usize..4, t_hat in -5.0f64..5.0) {
        let loose = find_decoupling_time(&req(CouplingId::V1r, 4, ell, t_hat, 0.1)).unwrap();
        let tight = find_decoupling_time(&req(CouplingId::V1r, 4, ell, t_hat, 0.05)).unwrap();
        prop_assert!(tight.s >= loose.s);
        prop_assert!(tight.bound <= 0.05);
    }

    #[test]
    fn bound_is_periodic_only_through_winding(s in 0u64..1_000_000) {
        let q = req(CouplingId::V1r, 3, 2, PI, 0.1);
        let r = bound_at(&q, s).unwrap();
        // classes {0},{1} with ω_m = √2: only the ω_m term is nonzero
        let phase = (TAU * s as f64 * 2f64.sqrt() + PI * 2f64.sqrt()).rem_euclid(TAU);
        prop_assert!((r.bound - 2.0 * (phase / 2.0).sin().abs()).abs() < 1e-6);
    }
}
