//! Resonance classes of the sideband spectra, eigenspace projectors and the
//! decoupled decomposition `U = ΣU_j + U_dec + U_ρ`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::frequency::ExactFrequency;
use crate::operators::{
    build_coupling, coupling_pairs, CouplingId, OperatorLabel, Pair, PairKind, TruncatedOperator,
};

const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// `ω_j = √(j−1)` for `j = 1..=count`.
pub fn ion_frequencies(count: usize) -> Vec<ExactFrequency> {
    (0..count as u64).map(ExactFrequency::sqrt_of).collect()
}

/// Distinct eigenvalue moduli `{√0, √1, …, √n}` of a sideband operator
/// relevant to `Y_{4n}`, i.e. `ω_1..ω_{n+1}`.
pub fn frequencies(id: CouplingId, n: usize) -> Result<Vec<ExactFrequency>> {
    if !id.is_ion() || id.is_carrier() {
        return Err(invalid(format!(
            "{id} is not an ion sideband; carriers have the single frequency 1"
        )));
    }
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    Ok(ion_frequencies(n + 1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceClass {
    pub members: Vec<ExactFrequency>,
    pub nu: ExactFrequency,
}

impl ResonanceClass {
    pub fn is_zero(&self) -> bool {
        self.nu.is_zero()
    }

    pub fn contains(&self, w: &ExactFrequency) -> bool {
        self.members.contains(w)
    }

    /// `ν̂`: the representative, or 1 for the zero class.
    pub fn nu_hat(&self) -> ExactFrequency {
        if self.is_zero() {
            ExactFrequency::sqrt_of(1)
        } else {
            self.nu
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonancePartition {
    pub m: usize,
    pub classes: Vec<ResonanceClass>,
    pub count: usize,
}

impl ResonancePartition {
    /// Groups `ω_1..ω_{m−1}` into ℚ-resonance classes, in order of first
    /// appearance. `lower` must hold exactly `m − 1` distinct frequencies.
    pub fn from_frequencies(lower: &[ExactFrequency]) -> Result<Self> {
        let mut classes: Vec<Vec<ExactFrequency>> = Vec::new();
        for (i, w) in lower.iter().enumerate() {
            if lower[..i].contains(w) {
                return Err(invalid(format!("frequency {w} listed twice")));
            }
            let slot = classes.iter_mut().find(|c| {
                let r = &c[0];
                (r.is_zero() && w.is_zero()) || r.resonant_with(w)
            });
            match slot {
                Some(c) => c.push(*w),
                None => classes.push(vec![*w]),
            }
        }
        let classes: Vec<ResonanceClass> = classes
            .into_iter()
            .map(|members| {
                let nu = ExactFrequency::common_divisor(&members).unwrap_or_else(ExactFrequency::zero);
                ResonanceClass { members, nu }
            })
            .collect();
        Ok(ResonancePartition {
            m: lower.len() + 1,
            count: classes.len(),
            classes,
        })
    }

    /// 0-based index of the class containing `w`.
    pub fn class_of(&self, w: &ExactFrequency) -> Option<usize> {
        self.classes.iter().position(|c| c.contains(w))
    }

    /// 1-based class lookup.
    pub fn class(&self, ell: usize) -> Result<&ResonanceClass> {
        if ell == 0 || ell > self.count {
            return Err(invalid(format!("class index {ell} outside 1..={}", self.count)));
        }
        Ok(&self.classes[ell - 1])
    }
}

/// Partition of `ω_1..ω_{m−1}` for the ion spectra `ω_j = √(j−1)`.
pub fn resonance_partition(m: usize) -> Result<ResonancePartition> {
    if m < 2 {
        return Err(invalid(format!("order m = {m} must be at least 2")));
    }
    ResonancePartition::from_frequencies(&ion_frequencies(m - 1))
}

/// `ω_m ≠ 0` and `ω_h/ω_m ∉ ℚ \ {0}` for every `h < m`.
pub fn winding_hypothesis_holds(lower: &[ExactFrequency], omega_m: &ExactFrequency) -> bool {
    !omega_m.is_zero() && lower.iter().all(|w| !w.resonant_with(omega_m))
}

/// Eigenpairs `(λ, v)` of one two-level block, `λ = ±i·coefficient`.
pub fn pair_eigenvectors(p: &Pair) -> [(C64, [C64; 2]); 2] {
    let c = p.coefficient();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    match p.kind {
        PairKind::E => [
            (I * c, [ONE * h, ONE * h]),
            (-I * c, [ONE * h, -ONE * h]),
        ],
        PairKind::F => [(I * c, [ONE * h, I * h]), (-I * c, [ONE * h, -I * h])],
    }
}

fn add_pair_projector(p: &Pair, m: &mut DMatrix<C64>) {
    for (_, v) in pair_eigenvectors(p) {
        let idx = [p.j - 1, p.k - 1];
        for a in 0..2 {
            for b in 0..2 {
                m[(idx[a], idx[b])] += v[a] * v[b].conj();
            }
        }
    }
}

fn check_sideband(id: CouplingId) -> Result<()> {
    if !id.is_ion() || id.is_carrier() {
        return Err(invalid(format!("{id} is not an ion sideband")));
    }
    Ok(())
}

/// Orthogonal projector in `C^dim` onto `⊕_{w ∈ class} A_w` for the full
/// sideband operator. Needs `dim ≥ 4(m−1)` so that every eigenvector with a
/// frequency below `ω_m` fits.
pub fn class_projector(
    id: CouplingId,
    class: &ResonanceClass,
    m: usize,
    dim: usize,
) -> Result<DMatrix<C64>> {
    check_sideband(id)?;
    if m < 2 || dim < 4 * (m - 1) {
        return Err(invalid(format!("dimension {dim} below 4(m−1) for m = {m}")));
    }
    let pairs = coupling_pairs(id, dim)?;
    let mut proj = DMatrix::zeros(dim, dim);
    if class.is_zero() {
        let mut paired = vec![false; dim];
        for p in &pairs {
            for i in [p.j, p.k] {
                if i <= dim {
                    paired[i - 1] = true;
                }
            }
        }
        for (i, &used) in paired.iter().enumerate() {
            if !used {
                proj[(i, i)] = ONE;
            }
        }
    }
    for p in pairs.iter().filter(|p| class.contains(&p.frequency())) {
        add_pair_projector(p, &mut proj);
    }
    Ok(proj)
}

/// `Π[A_{ω_m}]` in `C^dim`, `dim ≥ 4m`.
pub fn dec_projector(id: CouplingId, m: usize, dim: usize) -> Result<DMatrix<C64>> {
    check_sideband(id)?;
    if m < 2 || dim < 4 * m {
        return Err(invalid(format!("dimension {dim} below 4m for m = {m}")));
    }
    let omega_m = ExactFrequency::sqrt_of(m as u64 - 1);
    let mut proj = DMatrix::zeros(dim, dim);
    for p in coupling_pairs(id, dim)?.iter().filter(|p| p.frequency() == omega_m) {
        add_pair_projector(p, &mut proj);
    }
    Ok(proj)
}

/// `I − ΣΠ_j − Π_dec`.
pub fn rest_projector(id: CouplingId, m: usize, dim: usize) -> Result<DMatrix<C64>> {
    let part = resonance_partition(m)?;
    let mut proj = DMatrix::identity(dim, dim) - dec_projector(id, m, dim)?;
    for c in &part.classes {
        proj -= class_projector(id, c, m, dim)?;
    }
    Ok(proj)
}

/// An eigenvector of a skew-Hermitian matrix with its exact eigenvalue modulus.
#[derive(Clone, Debug)]
pub struct LabeledEigenvector {
    pub frequency: ExactFrequency,
    pub vector: DVector<C64>,
}

#[derive(Clone, Debug)]
pub struct DecoupledDecomposition {
    pub partition: ResonancePartition,
    pub omega_m: ExactFrequency,
    pub u: DMatrix<C64>,
    pub parts: Vec<DMatrix<C64>>,
    pub u_dec: DMatrix<C64>,
    pub u_rho: DMatrix<C64>,
    pub class_projectors: Vec<DMatrix<C64>>,
    pub dec_projector: DMatrix<C64>,
    pub rest_projector: DMatrix<C64>,
}

impl DecoupledDecomposition {
    /// `‖U − ΣU_j − U_dec − U_ρ‖_F`.
    pub fn reconstruction_error(&self) -> f64 {
        let mut r = self.u.clone() - &self.u_dec - &self.u_rho;
        for p in &self.parts {
            r -= p;
        }
        r.norm()
    }

    fn all_parts(&self) -> Vec<&DMatrix<C64>> {
        let mut v: Vec<_> = self.parts.iter().collect();
        v.push(&self.u_dec);
        v.push(&self.u_rho);
        v
    }

    /// Largest `‖AB‖_F` over ordered pairs of distinct parts.
    pub fn max_cross_product(&self) -> f64 {
        let parts = self.all_parts();
        let mut worst: f64 = 0.0;
        for (a, x) in parts.iter().enumerate() {
            for (b, y) in parts.iter().enumerate() {
                if a != b {
                    worst = worst.max((*x * *y).norm());
                }
            }
        }
        worst
    }

    /// Largest `‖Π·U_part − U_part‖_F` over the image containments.
    pub fn containment_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (p, u) in self.class_projectors.iter().zip(&self.parts) {
            worst = worst.max((p * u - u).norm());
        }
        worst = worst.max((&self.dec_projector * &self.u_dec - &self.u_dec).norm());
        worst.max((&self.rest_projector * &self.u_rho - &self.u_rho).norm())
    }
}

/// Decomposition at order `m` of an arbitrary skew-Hermitian matrix, given a
/// complete orthonormal eigenbasis labeled by exact frequencies. The distinct
/// labels sorted increasingly play the role of `ω_1 < ω_2 < …`.
pub fn decompose_labeled(
    u: &DMatrix<C64>,
    eigen: &[LabeledEigenvector],
    m: usize,
) -> Result<DecoupledDecomposition> {
    let dim = u.nrows();
    if u.ncols() != dim || (u + u.adjoint()).norm() > 1e-12 {
        return Err(invalid("operator is not square skew-Hermitian"));
    }
    if eigen.len() != dim {
        return Err(invalid(format!("{} eigenvectors for dimension {dim}", eigen.len())));
    }
    for (a, e) in eigen.iter().enumerate() {
        if e.vector.len() != dim {
            return Err(invalid("eigenvector length mismatch"));
        }
        let uv = u * &e.vector;
        let lambda = e.vector.dotc(&uv);
        let resid = (&uv - &e.vector * lambda).norm();
        if resid > 1e-10 || (lambda.norm() - e.frequency.value()).abs() > 1e-10 {
            return Err(invalid(format!(
                "eigenvector {a} does not match its label {}",
                e.frequency
            )));
        }
        for f in &eigen[..a] {
            if f.vector.dotc(&e.vector).norm() > 1e-10 {
                return Err(invalid("eigenvectors are not orthogonal"));
            }
        }
        if (e.vector.norm() - 1.0).abs() > 1e-10 {
            return Err(invalid("eigenvectors are not normalized"));
        }
    }
    let mut omegas: Vec<ExactFrequency> = eigen.iter().map(|e| e.frequency).collect();
    omegas.sort();
    omegas.dedup();
    if m < 2 || omegas.len() < m {
        return Err(invalid(format!(
            "order m = {m} needs {m} distinct frequencies; {} available",
            omegas.len()
        )));
    }
    let partition = ResonancePartition::from_frequencies(&omegas[..m - 1])?;
    let omega_m = omegas[m - 1];

    let outer = |v: &DVector<C64>| v * v.adjoint();
    let mut class_projectors = vec![DMatrix::<C64>::zeros(dim, dim); partition.count];
    let mut dec = DMatrix::<C64>::zeros(dim, dim);
    for e in eigen {
        if let Some(c) = partition.class_of(&e.frequency) {
            class_projectors[c] += outer(&e.vector);
        } else if e.frequency == omega_m {
            dec += outer(&e.vector);
        }
    }
    let mut rest = DMatrix::<C64>::identity(dim, dim) - &dec;
    for p in &class_projectors {
        rest -= p;
    }
    Ok(DecoupledDecomposition {
        parts: class_projectors.iter().map(|p| u * p).collect(),
        u_dec: u * &dec,
        u_rho: u * &rest,
        u: u.clone(),
        partition,
        omega_m,
        class_projectors,
        dec_projector: dec,
        rest_projector: rest,
    })
}

/// Labeled eigenbasis of a block-structured operator from its pairs;
/// coordinates in no pair are kernel vectors.
pub fn pair_eigenbasis(op: &TruncatedOperator) -> Result<Vec<LabeledEigenvector>> {
    let pairs = op
        .pairs
        .as_ref()
        .ok_or_else(|| invalid(format!("{} has no pair structure", op.label)))?;
    let dim = op.dim;
    let mut used = vec![false; dim];
    let mut out = Vec::with_capacity(dim);
    for p in pairs {
        used[p.j - 1] = true;
        used[p.k - 1] = true;
        for (_, v) in pair_eigenvectors(p) {
            let mut x = DVector::zeros(dim);
            x[p.j - 1] = v[0];
            x[p.k - 1] = v[1];
            out.push(LabeledEigenvector {
                frequency: p.frequency(),
                vector: x,
            });
        }
    }
    for (i, _) in used.iter().enumerate().filter(|(_, u)| !**u) {
        let mut x = DVector::zeros(dim);
        x[i] = ONE;
        out.push(LabeledEigenvector {
            frequency: ExactFrequency::zero(),
            vector: x,
        });
    }
    Ok(out)
}

/// Decoupled decomposition of a truncated sideband operator, `U.dim ≥ 4m`.
pub fn decompose(op: &TruncatedOperator, m: usize) -> Result<DecoupledDecomposition> {
    if let OperatorLabel::Coupling(id) = op.label {
        if id.is_carrier() {
            return Err(invalid(format!("{id} is a carrier; it needs no decoupling")));
        }
    }
    if op.dim < 4 * m {
        return Err(invalid(format!(
            "order m = {m} exceeds the frequencies available in dimension {}",
            op.dim
        )));
    }
    decompose_labeled(&op.entries, &pair_eigenbasis(op)?, m)
}

/// `Z_{γ⋆,j}^{(4n)} = Z_{γ⋆}·Π[A_{R^{n+1}(ν_j)}]` on `Y_{4n}` (`j` 1-based).
pub fn build_decoupled_generator(id: CouplingId, j: usize, n: usize) -> Result<TruncatedOperator> {
    check_sideband(id)?;
    let partition = resonance_partition(n + 1)?;
    let class = partition.class(j)?.clone();
    let full = build_coupling(id, n)?;
    let pairs: Vec<Pair> = full
        .pairs
        .unwrap_or_default()
        .into_iter()
        .filter(|p| class.contains(&p.frequency()))
        .collect();
    // pairs of Z^{(4n)} all have frequency below ω_{n+1}
    debug_assert!(pairs.iter().all(|p| p.max_index() <= 4 * n));
    Ok(TruncatedOperator::from_pairs(
        OperatorLabel::Composite(format!("{id}[{j}]")),
        4 * n,
        pairs,
    ))
}

/// Every class projector times `Z^{(4n)}` agrees with the pair-filtered
/// generator; returns the largest Frobenius discrepancy.
pub fn decoupled_generator_consistency(id: CouplingId, n: usize) -> Result<f64> {
    let m = n + 1;
    let partition = resonance_partition(m)?;
    let z = build_coupling(id, n)?;
    let mut worst: f64 = 0.0;
    for (j, class) in partition.classes.iter().enumerate() {
        let proj = class_projector(id, class, m, 4 * n)?;
        let direct = build_decoupled_generator(id, j + 1, n)?;
        worst = worst.max((&z.entries * proj - direct.entries).norm());
    }
    if !worst.is_finite() {
        return Err(Error::Consistency("non-finite generator entries".into()));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernels(p: &ResonancePartition) -> Vec<Vec<String>> {
        p.classes
            .iter()
            .map(|c| c.members.iter().map(|w| w.to_string()).collect())
            .collect()
    }

    #[test]
    fn partition_m4() {
        let p = resonance_partition(4).unwrap();
        assert_eq!(p.count, 3);
        assert_eq!(kernels(&p), [vec!["0"], vec!["1"], vec!["√2"]]);
    }

    #[test]
    fn partition_m10() {
        let p = resonance_partition(10).unwrap();
        assert_eq!(p.count, 7);
        assert_eq!(
            kernels(&p),
            [
                vec!["0"],
                vec!["1", "2"],
                vec!["√2", "2√2"],
                vec!["√3"],
                vec!["√5"],
                vec!["√6"],
                vec!["√7"],
            ]
        );
        assert_eq!(p.classes[2].nu, ExactFrequency::sqrt_of(2));
        assert!(p.classes[0].nu.is_zero());
        assert!(resonance_partition(1).is_err());
    }

    #[test]
    fn partition_json() {
        let p = resonance_partition(3).unwrap();
        let j = serde_json::to_value(&p).unwrap();
        assert_eq!(j["count"], 2);
        assert_eq!(j["classes"][1]["nu"]["kernel"], 1);
        assert_eq!(j["classes"][0]["members"][0]["coeff"][0], 0);
    }

    #[test]
    fn frequencies_of_sidebands() {
        let f = frequencies(CouplingId::V1r, 3).unwrap();
        let s: Vec<_> = f.iter().map(|w| w.to_string()).collect();
        assert_eq!(s, ["0", "1", "√2", "√3"]);
        assert_eq!(frequencies(CouplingId::W2b, 3).unwrap(), f);
        assert!(frequencies(CouplingId::V1, 3).is_err());
    }

    #[test]
    fn zero_class_projector_is_kernel() {
        let p = resonance_partition(2).unwrap();
        let proj = class_projector(CouplingId::V1r, &p.classes[0], 2, 8).unwrap();
        let mut expected = DMatrix::<C64>::zeros(8, 8);
        expected[(0, 0)] = ONE;
        expected[(2, 2)] = ONE;
        assert_eq!(proj, expected);
    }

    #[test]
    fn projector_axioms_and_completeness() {
        for &id in &CouplingId::SIDEBANDS {
            for m in 2..=12 {
                let dim = 4 * m + 4;
                let part = resonance_partition(m).unwrap();
                let mut total = dec_projector(id, m, dim).unwrap() + rest_projector(id, m, dim).unwrap();
                for c in &part.classes {
                    let p = class_projector(id, c, m, dim).unwrap();
                    assert!((&p * &p - &p).norm() < 1e-12);
                    assert!((&p - p.adjoint()).norm() < 1e-12);
                    total += p;
                }
                assert!((total - DMatrix::identity(dim, dim)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn decomposition_lemma() {
        for &id in &CouplingId::SIDEBANDS {
            for m in 2..=12 {
                let op = build_coupling(id, m + 1).unwrap();
                let d = decompose(&op, m).unwrap();
                assert!(d.reconstruction_error() < 1e-12);
                assert!(d.max_cross_product() < 1e-12);
                assert!(d.containment_error() < 1e-12);
                assert_eq!(d.omega_m, ExactFrequency::sqrt_of(m as u64 - 1));
            }
        }
        let op = build_coupling(CouplingId::V1r, 3).unwrap();
        assert!(decompose(&op, 4).is_err());
    }

    #[test]
    fn telescoping_generators() {
        for &id in &CouplingId::SIDEBANDS {
            for n in 1..=8 {
                let part = resonance_partition(n + 1).unwrap();
                let mut sum = DMatrix::<C64>::zeros(4 * n, 4 * n);
                for j in 1..=part.count {
                    let g = build_decoupled_generator(id, j, n).unwrap();
                    assert!(g.skew_residual() < 1e-12);
                    sum += g.entries;
                }
                assert!((sum - build_coupling(id, n).unwrap().entries).norm() < 1e-12);
                assert!(decoupled_generator_consistency(id, n).unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn hypothesis_for_prime_orders() {
        for p in (3..=100u64).filter(|&p| crate::frequency::is_prime(p)) {
            let m = p as usize + 1;
            assert!(winding_hypothesis_holds(
                &ion_frequencies(m - 1),
                &ExactFrequency::sqrt_of(p)
            ));
        }
        assert!(!winding_hypothesis_holds(&ion_frequencies(4), &ExactFrequency::sqrt_of(4)));
    }
}
