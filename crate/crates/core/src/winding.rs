//! Diophantine selection of the lifted time `t̄ = t̂ + 2πs/ν̂_ℓ` and exact
//! verification of the correction operator `Σ`.

use std::f64::consts::{PI, TAU};
use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::decoupling::{resonance_partition, winding_hypothesis_holds, ResonancePartition};
use crate::error::{invalid, Error, Result};
use crate::frequency::{ExactFrequency, FrequencyRatio};
use crate::operators::{apply_coupling_flow, CouplingId, Pair, StateVector};

pub const DEFAULT_S_MAX: u64 = 10_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecouplingRequest {
    pub id: CouplingId,
    pub m: usize,
    /// 1-based class index.
    pub ell: usize,
    pub t_hat: f64,
    pub eps: f64,
    pub s_max: u64,
}

/// `t̂ + 2πs/ν̂` kept unevaluated so that phases stay exact for large `s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftedTime {
    pub t_hat: f64,
    pub s: u64,
    pub nu_hat: ExactFrequency,
}

fn wrap(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

impl LiftedTime {
    pub fn t_bar(&self) -> f64 {
        self.t_hat + TAU * self.s as f64 / self.nu_hat.value()
    }

    /// `w·t̄` reduced to `(−π, π]`.
    pub fn phase(&self, w: &ExactFrequency) -> f64 {
        let ratio = w
            .ratio(&self.nu_hat)
            .expect("ν̂ is nonzero by construction");
        self.phase_with(w.value(), &ratio)
    }

    fn phase_with(&self, w: f64, ratio: &FrequencyRatio) -> f64 {
        wrap(w * self.t_hat + TAU * ratio.frac_multiple(self.s))
    }

    /// Rotation angle of one block under `exp(t̄·U)`.
    pub fn pair_angle(&self, p: &Pair) -> f64 {
        p.sign * self.phase(&p.frequency())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecouplingResult {
    pub s: u64,
    pub t_bar: f64,
    pub bound: f64,
    /// `‖exp(t̄U_h) − I‖` for `h ≠ ℓ` in class order, then for `U_dec`.
    pub per_class_error: Vec<f64>,
    /// `t̄·ν̂_j` reduced to `(−π, π]`, for the nonzero `ν_j` (`j ≠ ℓ`) and `ω_m`.
    pub residuals: Vec<f64>,
    pub lifted: LiftedTime,
}

struct Term {
    value: f64,
    ratio: FrequencyRatio,
}

struct SearchSetup {
    partition: ResonancePartition,
    nu_hat: ExactFrequency,
    t_hat: f64,
    /// One group per class `h ≠ ℓ` (empty for the zero class), then `[ω_m]`.
    groups: Vec<Vec<Term>>,
    residual_terms: Vec<Term>,
}

fn setup(req: &DecouplingRequest) -> Result<SearchSetup> {
    if !req.id.is_ion() || req.id.is_carrier() {
        return Err(invalid(format!("{} is not an ion sideband", req.id)));
    }
    if !(req.eps > 0.0) || !req.t_hat.is_finite() {
        return Err(invalid("eps must be positive and t_hat finite"));
    }
    let partition = resonance_partition(req.m)?;
    let class = partition.class(req.ell)?.clone();
    let omega_m = ExactFrequency::sqrt_of(req.m as u64 - 1);
    let lower: Vec<ExactFrequency> = partition
        .classes
        .iter()
        .flat_map(|c| c.members.iter().copied())
        .collect();
    if !winding_hypothesis_holds(&lower, &omega_m) {
        return Err(invalid(format!(
            "order m = {} violates the winding hypothesis: ω_m = {omega_m} is resonant with a lower frequency",
            req.m
        )));
    }
    let nu_hat = class.nu_hat();
    // U_ℓ vanishes on the zero class, so exp(t̂U_ℓ) = I for every t̂.
    let t_hat = if class.is_zero() { 0.0 } else { req.t_hat };
    let term = |w: &ExactFrequency| -> Result<Term> {
        Ok(Term {
            value: w.value(),
            ratio: w.ratio(&nu_hat)?,
        })
    };
    let mut groups = Vec::new();
    let mut residual_terms = Vec::new();
    for (h, c) in partition.classes.iter().enumerate() {
        if h + 1 == req.ell {
            continue;
        }
        let g = c
            .members
            .iter()
            .filter(|w| !w.is_zero())
            .map(term)
            .collect::<Result<Vec<_>>>()?;
        groups.push(g);
        if !c.is_zero() {
            residual_terms.push(term(&c.nu)?);
        }
    }
    groups.push(vec![term(&omega_m)?]);
    residual_terms.push(term(&omega_m)?);
    Ok(SearchSetup {
        partition,
        nu_hat,
        t_hat,
        groups,
        residual_terms,
    })
}

impl SearchSetup {
    fn lifted(&self, s: u64) -> LiftedTime {
        LiftedTime {
            t_hat: self.t_hat,
            s,
            nu_hat: self.nu_hat,
        }
    }

    fn group_error(&self, lt: &LiftedTime, g: &[Term]) -> f64 {
        g.iter()
            .map(|t| 2.0 * (0.5 * lt.phase_with(t.value, &t.ratio)).sin().abs())
            .fold(0.0, f64::max)
    }

    /// The bound at `s`, abandoned (returning `None`) once it reaches `cutoff`.
    fn bound_below(&self, s: u64, cutoff: f64) -> Option<f64> {
        let lt = self.lifted(s);
        let mut total = 0.0;
        for g in &self.groups {
            total += self.group_error(&lt, g);
            if total >= cutoff {
                return None;
            }
        }
        Some(total)
    }

    fn result(&self, s: u64) -> DecouplingResult {
        let lt = self.lifted(s);
        let per_class_error: Vec<f64> = self.groups.iter().map(|g| self.group_error(&lt, g)).collect();
        DecouplingResult {
            s,
            t_bar: lt.t_bar(),
            bound: per_class_error.iter().sum(),
            per_class_error,
            residuals: self
                .residual_terms
                .iter()
                .map(|t| lt.phase_with(t.value, &t.ratio))
                .collect(),
            lifted: lt,
        }
    }
}

/// `Σ_{h≠ℓ} ‖exp(t̄U_h)−I‖ + ‖exp(t̄U_dec)−I‖` at a given `s`.
pub fn bound_at(req: &DecouplingRequest, s: u64) -> Result<DecouplingResult> {
    Ok(setup(req)?.result(s))
}

/// Bound for each `s` in `0..=last`, for plotting.
pub fn bound_trace(req: &DecouplingRequest, last: u64) -> Result<Vec<(u64, f64)>> {
    let st = setup(req)?;
    Ok((0..=last)
        .map(|s| (s, st.bound_below(s, f64::INFINITY).unwrap_or(f64::INFINITY)))
        .collect())
}

pub fn find_decoupling_time(req: &DecouplingRequest) -> Result<DecouplingResult> {
    find_decoupling_time_with(req, None)
}

/// Smallest `s ≤ s_max` whose bound is below `eps`; `cancel` is polled
/// periodically.
pub fn find_decoupling_time_with(
    req: &DecouplingRequest,
    cancel: Option<&AtomicBool>,
) -> Result<DecouplingResult> {
    let st = setup(req)?;
    let mut best = (0u64, f64::INFINITY);
    for s in 0..=req.s_max {
        if s & 0xffff == 0 && cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
            return Err(Error::Cancelled(s));
        }
        if let Some(b) = st.bound_below(s, best.1) {
            best = (s, b);
            if b < req.eps {
                let res = st.result(s);
                debug_assert!(res.bound < req.eps);
                return Ok(res);
            }
        }
    }
    Err(Error::SearchExhausted {
        s_max: req.s_max,
        best_s: best.0,
        best_bound: best.1,
        eps: req.eps,
        segment: None,
    })
}

/// Class of a block's frequency in the order-`m` partition (0-based), if any.
fn class_of_pair(partition: &ResonancePartition, p: &Pair) -> Option<usize> {
    partition.class_of(&p.frequency())
}

/// The measured `‖(Σ − I)|_Y‖` with `Y = Y_{4(m−1)}`, where
/// `Σ = exp(t̄U)·exp(−t̂U_ℓ)` is assembled column by column from exact flows.
/// Also checks `exp(t̄U) = exp(t̂U_ℓ)·Σ'` on `Y` with `Σ'` built from the
/// decomposition directly.
pub fn verify_sigma(req: &DecouplingRequest, res: &DecouplingResult, dim_sim: usize) -> Result<f64> {
    let st = setup(req)?;
    if dim_sim < 4 * (req.m + 1) {
        return Err(invalid(format!(
            "dim_sim = {dim_sim} is below 4(m+1) = {}",
            4 * (req.m + 1)
        )));
    }
    let lt = res.lifted;
    let ell = req.ell - 1;
    let partition = &st.partition;
    let t_hat = lt.t_hat;
    let dim_y = 4 * (req.m - 1);
    let mut sigma_minus_i = DMatrix::<C64>::zeros(dim_sim, dim_y);
    let mut worst_decomposition: f64 = 0.0;
    for j in 1..=dim_y {
        let phi = StateVector::basis(j, dim_sim)?;
        let full = apply_coupling_flow(req.id, &phi, dim_sim, |p| lt.pair_angle(p))?;
        let sigma = apply_coupling_flow(req.id, &full, dim_sim, |p| {
            if class_of_pair(partition, p) == Some(ell) {
                -t_hat * p.coefficient()
            } else {
                0.0
            }
        })?;
        let sigma_alt = apply_coupling_flow(req.id, &phi, dim_sim, |p| {
            if class_of_pair(partition, p) == Some(ell) {
                0.0
            } else {
                lt.pair_angle(p)
            }
        })?;
        let recomposed = apply_coupling_flow(req.id, &sigma_alt, dim_sim, |p| {
            if class_of_pair(partition, p) == Some(ell) {
                t_hat * p.coefficient()
            } else {
                0.0
            }
        })?;
        worst_decomposition = worst_decomposition
            .max(full.distance(&recomposed))
            .max(sigma.distance(&sigma_alt));
        for (r, a) in sigma.amplitudes().iter().enumerate() {
            sigma_minus_i[(r, j - 1)] = *a;
        }
        sigma_minus_i[(j - 1, j - 1)] -= C64::new(1.0, 0.0);
    }
    let measured = sigma_minus_i
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max);
    if worst_decomposition >= 1e-10 {
        return Err(Error::Consistency(format!(
            "exp(t̄U) differs from exp(t̂U_ℓ)Σ by {worst_decomposition:.3e} on Y"
        )));
    }
    if measured > res.bound + 1e-10 {
        return Err(Error::Consistency(format!(
            "measured ‖(Σ−I)|_Y‖ = {measured:.6e} exceeds the certified bound {:.6e}",
            res.bound
        )));
    }
    Ok(measured)
}
