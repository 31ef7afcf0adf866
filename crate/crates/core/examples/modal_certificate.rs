//! Lie-rank certificates for the ion families and the Law–Eberly chain.

use std::time::Instant;

use sideband_steer::closure::{certify_law_eberly, modal_closure, Certificate};
use sideband_steer::operators::{Family, Star};

fn show(name: &str, c: &Certificate, secs: f64) {
    println!(
        "{name:<26} dim {:>3} / {:>3}  {}  ({secs:.2}s, rounds {:?})",
        c.dimension,
        c.target,
        if c.certified { "certified" } else { "not certified" },
        c.basis_rank_history.iter().map(|&(_, r)| r).collect::<Vec<_>>()
    );
}

fn main() -> sideband_steer::Result<()> {
    for n in [2, 3, 5] {
        for family in [Family::Full, Family::RedOnly, Family::BlueOnly] {
            let t = Instant::now();
            let c = modal_closure(n, &family)?;
            show(&format!("ions n={n} {}", family.label()), &c, t.elapsed().as_secs_f64());
        }
    }
    let t = Instant::now();
    let c = modal_closure(3, &"V1,W1,V1r,W1r,V2,W2".parse()?)?;
    show("ions n=3 no ion-2 sideband", &c, t.elapsed().as_secs_f64());
    for n in 2..=6 {
        let t = Instant::now();
        let c = certify_law_eberly(n, Star::Red)?;
        show(&format!("Law–Eberly n={n}"), &c, t.elapsed().as_secs_f64());
    }
    Ok(())
}
