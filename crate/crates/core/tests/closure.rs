mod common;

use common::random_unitary;
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sideband_steer::closure::{certify_law_eberly, certify_modal, lie_closure, modal_closure, GeneratorFamily, DEFAULT_TOLERANCE};
use sideband_steer::operators::{CouplingId, Family, Star};
use sideband_steer::planner::generator_set;

fn closure_dim(gf: &GeneratorFamily) -> usize {
    lie_closure(gf, DEFAULT_TOLERANCE).unwrap().1.dimension
}

#[test]
fn ion_families_generate_su_12() {
    for family in [Family::Full, Family::RedOnly, Family::BlueOnly] {
        let c = certify_modal(3, &family).unwrap();
        assert_eq!(c.dimension, 143, "{}", family.label());
        assert!(c.certified && c.claim_applies && c.hypothesis_satisfied);
        assert_eq!(c.svd_rank, 143);
    }
}

#[test]
fn decoupled_generators_generate_su_12() {
    for family in [Family::Full, Family::RedOnly] {
        let gens = generator_set(&family, 3).unwrap();
        let members = gens.iter().map(|g| g.operator(3).unwrap().entries).collect();
        let labels = (0..gens.len()).map(|k| format!("g{k}")).collect();
        let gf = GeneratorFamily::new(members, labels).unwrap();
        assert_eq!(closure_dim(&gf), 143);
    }
}

#[test]
fn law_eberly_dimensions() {
    assert_eq!(certify_law_eberly(2, Star::Red).unwrap().dimension, 10);
    for n in 3..=5 {
        for star in [Star::Red, Star::Blue] {
            let c = certify_law_eberly(n, star).unwrap();
            assert_eq!(c.dimension, 4 * n * n - 1, "n={n}");
            assert!(c.certified);
        }
    }
    assert!(certify_law_eberly(1, Star::Red).is_err());
}

#[test]
fn carriers_alone_stay_block_local() {
    // the four carriers act identically on every 4-block: su(2) ⊕ su(2)
    let carriers = [CouplingId::V1, CouplingId::W1, CouplingId::V2, CouplingId::W2];
    for n in 1..=3 {
        assert_eq!(closure_dim(&GeneratorFamily::from_ids(&carriers, n).unwrap()), 6, "n={n}");
    }
}

#[test]
fn one_ion_is_not_enough() {
    let c = modal_closure(3, &"V1,W1,V1r,W1r".parse().unwrap()).unwrap();
    assert!(!c.certified);
    assert!(!c.hypothesis_satisfied);
}

#[test]
fn closure_is_closed() {
    let gf = GeneratorFamily::from_ids(&Family::RedOnly.members(), 2).unwrap();
    let (lie, report) = lie_closure(&gf, DEFAULT_TOLERANCE).unwrap();
    assert!(lie.closedness_defect() < 1e-8);
    for g in &gf.members {
        assert!(lie.contains(g));
    }
    assert_eq!(report.svd_rank, report.dimension);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn dimension_is_a_unitary_invariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gf = GeneratorFamily::from_ids(&Family::BlueOnly.members(), 2).unwrap();
        let base = closure_dim(&gf);
        let u = random_unitary(gf.dim, &mut rng);
        let conj: Vec<_> = gf.members.iter().map(|a| &u * a * u.adjoint()).collect();
        let scaled: Vec<_> = gf
            .members
            .iter()
            .map(|a| a * C64::new(rng.random_range(0.2..5.0) * if rng.random() { 1.0 } else { -1.0 }, 0.0))
            .collect();
        let conj = GeneratorFamily::new(conj, gf.labels.clone()).unwrap();
        let scaled = GeneratorFamily::new(scaled, gf.labels.clone()).unwrap();
        prop_assert_eq!(closure_dim(&conj), base);
        prop_assert_eq!(closure_dim(&scaled), base);
    }
}
