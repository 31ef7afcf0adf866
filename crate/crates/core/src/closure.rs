//! Lie closures of generator families over the real space of traceless
//! skew-Hermitian matrices, and the controllability certificates built on them.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::operators::{build_coupling, CouplingId, Family, Star};

pub const DEFAULT_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct GeneratorFamily {
    pub dim: usize,
    pub members: Vec<DMatrix<C64>>,
    pub labels: Vec<String>,
    /// Trace removed from each member (zero for the coupling operators).
    pub removed_trace: Vec<C64>,
}

impl GeneratorFamily {
    pub fn new(members: Vec<DMatrix<C64>>, labels: Vec<String>) -> Result<Self> {
        let dim = members
            .first()
            .map(|m| m.nrows())
            .ok_or_else(|| invalid("empty generator family"))?;
        if labels.len() != members.len() {
            return Err(invalid("one label per generator is required"));
        }
        let mut removed_trace = Vec::with_capacity(members.len());
        let mut out = Vec::with_capacity(members.len());
        for (m, l) in members.into_iter().zip(&labels) {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(invalid(format!("generator {l} is not {dim}×{dim}")));
            }
            if (&m + m.adjoint()).norm() > 1e-12 {
                return Err(invalid(format!("generator {l} is not skew-Hermitian")));
            }
            let tr = m.trace();
            removed_trace.push(tr);
            out.push(if tr.norm() > 1e-12 {
                m - DMatrix::identity(dim, dim) * (tr / dim as f64)
            } else {
                m
            });
        }
        Ok(GeneratorFamily {
            dim,
            members: out,
            labels,
            removed_trace,
        })
    }

    pub fn from_ids(ids: &[CouplingId], n: usize) -> Result<Self> {
        let members = ids
            .iter()
            .map(|&id| build_coupling(id, n).map(|op| op.entries))
            .collect::<Result<Vec<_>>>()?;
        Self::new(members, ids.iter().map(|id| id.label().to_string()).collect())
    }

    pub fn target(&self) -> usize {
        self.dim * self.dim - 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosureReport {
    pub dimension: usize,
    pub target: usize,
    pub certified: bool,
    pub basis_rank_history: Vec<(usize, usize)>,
    pub tolerance: f64,
    /// Numerical rank of the accepted (normalized, unprojected) directions.
    pub svd_rank: usize,
}

/// An orthonormal real basis of a Lie closure.
#[derive(Clone, Debug)]
pub struct LieClosure {
    pub dim: usize,
    basis: Vec<DVector<f64>>,
    tol: f64,
}

fn to_real(m: &DMatrix<C64>) -> DVector<f64> {
    let mut v = DVector::zeros(2 * m.len());
    for (i, z) in m.iter().enumerate() {
        v[2 * i] = z.re;
        v[2 * i + 1] = z.im;
    }
    v
}

fn from_real(v: &DVector<f64>, dim: usize) -> DMatrix<C64> {
    DMatrix::from_iterator(dim, dim, (0..dim * dim).map(|i| C64::new(v[2 * i], v[2 * i + 1])))
}

fn bracket(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a * b - b * a
}

impl LieClosure {
    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn basis_matrices(&self) -> Vec<DMatrix<C64>> {
        self.basis.iter().map(|v| from_real(v, self.dim)).collect()
    }

    fn project_out(&self, v: &mut DVector<f64>) {
        // two passes of modified Gram–Schmidt
        for _ in 0..2 {
            for q in &self.basis {
                let c = q.dot(v);
                v.axpy(-c, q, 1.0);
            }
        }
    }

    /// Norm of the component of `x` outside the span, relative to `‖x‖_F`.
    pub fn residual(&self, x: &DMatrix<C64>) -> f64 {
        let mut v = to_real(x);
        let n = v.norm();
        if n == 0.0 {
            return 0.0;
        }
        self.project_out(&mut v);
        v.norm() / n
    }

    pub fn contains(&self, x: &DMatrix<C64>) -> bool {
        self.residual(x) < 10.0 * self.tol
    }

    /// Adds the direction of `x` if its component outside the span exceeds
    /// `tol·scale`, where `scale` is the size `x` would have without
    /// cancellation. Returns the new orthonormal element and the normalized
    /// input.
    fn try_add(&mut self, x: &DMatrix<C64>, scale: f64) -> Option<(DMatrix<C64>, DVector<f64>)> {
        let raw = to_real(x);
        let n = raw.norm();
        if n <= self.tol * scale || scale == 0.0 {
            return None;
        }
        let mut v = &raw / scale;
        self.project_out(&mut v);
        let r = v.norm();
        if r > self.tol {
            let q = v / r;
            let m = from_real(&q, self.dim);
            self.basis.push(q);
            Some((m, raw / n))
        } else {
            None
        }
    }

    /// Largest relative residual of `[b_i, b_j]` against the basis.
    pub fn closedness_defect(&self) -> f64 {
        let mats = self.basis_matrices();
        let mut worst: f64 = 0.0;
        for i in 0..mats.len() {
            for j in i + 1..mats.len() {
                worst = worst.max(self.residual(&bracket(&mats[i], &mats[j])));
            }
        }
        worst
    }
}

/// Breadth-first bracket closure: each round brackets the newly accepted
/// elements with the generators, then with each other. Every basis element
/// is bracketed with every generator, so the span ends ad-invariant.
pub fn lie_closure(family: &GeneratorFamily, tol: f64) -> Result<(LieClosure, ClosureReport)> {
    if !(tol > 0.0 && tol <= 1e-3) {
        return Err(invalid(format!("tolerance {tol} outside (0, 1e-3]")));
    }
    let target = family.target();
    let mut closure = LieClosure {
        dim: family.dim,
        basis: Vec::new(),
        tol,
    };
    let norms: Vec<f64> = family.members.iter().map(|g| g.norm()).collect();
    let mut accepted_raw = Vec::new();
    // orthonormal elements; brackets of these keep rounding relative to O(1)
    let mut frontier: Vec<DMatrix<C64>> = Vec::new();
    for (g, &ng) in family.members.iter().zip(&norms) {
        if let Some((q, raw)) = closure.try_add(g, ng) {
            accepted_raw.push(raw);
            frontier.push(q);
        }
    }
    let mut history = vec![(0, closure.rank())];
    let mut round = 0;
    while !frontier.is_empty() && closure.rank() < target {
        round += 1;
        let mut next = Vec::new();
        'gen: for a in &frontier {
            for (g, &ng) in family.members.iter().zip(&norms) {
                if let Some((q, raw)) = closure.try_add(&bracket(a, g), ng) {
                    accepted_raw.push(raw);
                    next.push(q);
                    if closure.rank() == target {
                        break 'gen;
                    }
                }
            }
        }
        if closure.rank() < target {
            'pairs: for i in 0..frontier.len() {
                for j in i + 1..frontier.len() {
                    if let Some((q, raw)) = closure.try_add(&bracket(&frontier[i], &frontier[j]), 1.0) {
                        accepted_raw.push(raw);
                        next.push(q);
                        if closure.rank() == target {
                            break 'pairs;
                        }
                    }
                }
            }
        }
        history.push((round, closure.rank()));
        frontier = next;
    }
    let svd_rank = if accepted_raw.is_empty() {
        0
    } else {
        let a = DMatrix::from_columns(&accepted_raw);
        let sv = a.singular_values();
        let smax = sv.iter().copied().fold(0.0, f64::max);
        sv.iter().filter(|&&s| s > smax * tol * 1e-3).count()
    };
    let dimension = closure.rank();
    let report = ClosureReport {
        dimension,
        target,
        certified: dimension == target && svd_rank == dimension,
        basis_rank_history: history,
        tolerance: tol,
        svd_rank,
    };
    Ok((closure, report))
}

/// Certificate artifact: the closure report plus what was certified.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub n: usize,
    pub family: Vec<String>,
    pub dimension: usize,
    pub target: usize,
    pub certified: bool,
    pub tolerance: f64,
    /// Whether the family meets the subfamily hypothesis of the ion
    /// controllability result (always true for Law–Eberly families).
    pub hypothesis_satisfied: bool,
    /// Whether the controllability result applies at this `n`.
    pub claim_applies: bool,
    pub svd_rank: usize,
    pub basis_rank_history: Vec<(usize, usize)>,
}

impl Certificate {
    fn from_report(
        n: usize,
        family: Vec<String>,
        r: ClosureReport,
        hypothesis_satisfied: bool,
        claim_applies: bool,
    ) -> Self {
        Certificate {
            n,
            family,
            dimension: r.dimension,
            target: r.target,
            certified: r.certified,
            tolerance: r.tolerance,
            hypothesis_satisfied,
            claim_applies,
            svd_rank: r.svd_rank,
            basis_rank_history: r.basis_rank_history,
        }
    }
}

/// Closure of an ion family on `Y_{4n}` without the `n ≥ 3` requirement.
pub fn modal_closure(n: usize, family: &Family) -> Result<Certificate> {
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    let ids = family.members();
    let gf = GeneratorFamily::from_ids(&ids, n)?;
    let (_, report) = lie_closure(&gf, DEFAULT_TOLERANCE)?;
    Ok(Certificate::from_report(
        n,
        gf.labels,
        report,
        family.satisfies_modal_hypothesis(),
        n >= 3,
    ))
}

/// Rank certificate of `Lie(𝓕) = 𝔰𝔲(4n)` for `n ≥ 3`.
pub fn certify_modal(n: usize, family: &Family) -> Result<Certificate> {
    if n < 3 {
        return Err(invalid(format!(
            "the modal controllability certificate needs n ≥ 3 (got {n})"
        )));
    }
    modal_closure(n, family)
}

/// `{V, W, V_⋆, W_⋆}` on dimension `2n`, `n ≥ 2`.
pub fn certify_law_eberly(n: usize, star: Star) -> Result<Certificate> {
    if n < 2 {
        return Err(invalid(format!(
            "the Law–Eberly certificate needs n ≥ 2 (got {n})"
        )));
    }
    let ids = match star {
        Star::Red => [CouplingId::V, CouplingId::W, CouplingId::Vr, CouplingId::Wr],
        Star::Blue => [CouplingId::V, CouplingId::W, CouplingId::Vb, CouplingId::Wb],
    };
    let gf = GeneratorFamily::from_ids(&ids, n)?;
    let (_, report) = lie_closure(&gf, DEFAULT_TOLERANCE)?;
    Ok(Certificate::from_report(n, gf.labels, report, true, true))
}
