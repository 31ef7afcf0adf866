//! Fock-coordinate basis, the coupling operators of the two-ion model and
//! their truncations, the Law–Eberly operators, and exact flows of
//! single-generator segments.
//!
//! Basis vectors are indexed `j = 4·phonon + offset` with offsets
//! `gg = 1, eg = 2, ge = 3, ee = 4`. Every coupling operator is a direct sum
//! of disjoint two-level blocks ([`Pair`]), so the flow of one constant
//! control is a product of commuting 2×2 rotations.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};
use crate::frequency::ExactFrequency;

/// Default bound on the modulus of every real control.
pub const DEFAULT_BOUND: f64 = 1.0;

const ZERO: C64 = C64::new(0.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Internal {
    Gg,
    Eg,
    Ge,
    Ee,
}

impl Internal {
    pub const ALL: [Internal; 4] = [Internal::Gg, Internal::Eg, Internal::Ge, Internal::Ee];

    pub fn offset(self) -> usize {
        match self {
            Internal::Gg => 1,
            Internal::Eg => 2,
            Internal::Ge => 3,
            Internal::Ee => 4,
        }
    }
}

/// 1-based index into the basis `{φ_j}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BasisIndex(usize);

impl BasisIndex {
    pub fn new(j: usize) -> Result<Self> {
        if j == 0 {
            return Err(invalid("basis indices are 1-based"));
        }
        Ok(BasisIndex(j))
    }

    pub fn from_parts(internal: Internal, phonon: usize) -> Self {
        BasisIndex(4 * phonon + internal.offset())
    }

    pub fn get(self) -> usize {
        self.0
    }

    pub fn internal(self) -> Internal {
        Internal::ALL[(self.0 - 1) % 4]
    }

    pub fn phonon(self) -> usize {
        (self.0 - 1) / 4
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Part {
    V,
    W,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Star {
    #[serde(rename = "r")]
    Red,
    #[serde(rename = "b")]
    Blue,
}

/// The twelve ion generators followed by the six Law–Eberly generators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CouplingId {
    V1,
    W1,
    V1r,
    W1r,
    V1b,
    W1b,
    V2,
    W2,
    V2r,
    W2r,
    V2b,
    W2b,
    V,
    W,
    Vr,
    Wr,
    Vb,
    Wb,
}

impl CouplingId {
    pub const IONS: [CouplingId; 12] = [
        CouplingId::V1,
        CouplingId::W1,
        CouplingId::V1r,
        CouplingId::W1r,
        CouplingId::V1b,
        CouplingId::W1b,
        CouplingId::V2,
        CouplingId::W2,
        CouplingId::V2r,
        CouplingId::W2r,
        CouplingId::V2b,
        CouplingId::W2b,
    ];

    pub const LAW_EBERLY: [CouplingId; 6] = [
        CouplingId::V,
        CouplingId::W,
        CouplingId::Vr,
        CouplingId::Wr,
        CouplingId::Vb,
        CouplingId::Wb,
    ];

    pub const SIDEBANDS: [CouplingId; 8] = [
        CouplingId::V1r,
        CouplingId::W1r,
        CouplingId::V1b,
        CouplingId::W1b,
        CouplingId::V2r,
        CouplingId::W2r,
        CouplingId::V2b,
        CouplingId::W2b,
    ];

    pub fn label(self) -> &'static str {
        use CouplingId::*;
        match self {
            V1 => "V1",
            W1 => "W1",
            V1r => "V1r",
            W1r => "W1r",
            V1b => "V1b",
            W1b => "W1b",
            V2 => "V2",
            W2 => "W2",
            V2r => "V2r",
            W2r => "W2r",
            V2b => "V2b",
            W2b => "W2b",
            V => "V",
            W => "W",
            Vr => "Vr",
            Wr => "Wr",
            Vb => "Vb",
            Wb => "Wb",
        }
    }

    pub fn is_carrier(self) -> bool {
        use CouplingId::*;
        matches!(self, V1 | W1 | V2 | W2 | V | W)
    }

    pub fn is_sideband(self) -> bool {
        !self.is_carrier()
    }

    pub fn is_ion(self) -> bool {
        !self.is_law_eberly()
    }

    pub fn is_law_eberly(self) -> bool {
        Self::LAW_EBERLY.contains(&self)
    }

    /// Which ion the laser addresses; `None` for Law–Eberly generators.
    pub fn gamma(self) -> Option<u8> {
        use CouplingId::*;
        match self {
            V1 | W1 | V1r | W1r | V1b | W1b => Some(1),
            V2 | W2 | V2r | W2r | V2b | W2b => Some(2),
            _ => None,
        }
    }

    pub fn star(self) -> Option<Star> {
        use CouplingId::*;
        match self {
            V1r | W1r | V2r | W2r | Vr | Wr => Some(Star::Red),
            V1b | W1b | V2b | W2b | Vb | Wb => Some(Star::Blue),
            _ => None,
        }
    }

    pub fn part(self) -> Part {
        use CouplingId::*;
        match self {
            V1 | V1r | V1b | V2 | V2r | V2b | V | Vr | Vb => Part::V,
            _ => Part::W,
        }
    }

    /// Ion generator with the given ion, sideband and quadrature.
    pub fn ion(gamma: u8, star: Option<Star>, part: Part) -> Result<CouplingId> {
        Self::IONS
            .iter()
            .copied()
            .find(|id| id.gamma() == Some(gamma) && id.star() == star && id.part() == part)
            .ok_or_else(|| invalid(format!("no ion generator for gamma = {gamma}")))
    }
}

impl fmt::Display for CouplingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CouplingId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::IONS
            .iter()
            .chain(Self::LAW_EBERLY.iter())
            .copied()
            .find(|id| id.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| invalid(format!("unknown coupling id {s:?}")))
    }
}

impl Serialize for CouplingId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for CouplingId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairKind {
    /// `φ_j → iφ_k`, `φ_k → iφ_j`.
    E,
    /// `φ_j → −φ_k`, `φ_k → φ_j`.
    F,
}

/// One two-level block `sign·√radicand·(E or F)_{j,k}` of a coupling operator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub j: usize,
    pub k: usize,
    pub sign: f64,
    pub radicand: u64,
    pub kind: PairKind,
}

impl Pair {
    pub fn coefficient(&self) -> f64 {
        self.sign * (self.radicand as f64).sqrt()
    }

    /// Modulus of the block's eigenvalues `±i·coefficient`.
    pub fn frequency(&self) -> ExactFrequency {
        ExactFrequency::sqrt_of(self.radicand)
    }

    pub fn max_index(&self) -> usize {
        self.j.max(self.k)
    }

    pub fn min_index(&self) -> usize {
        self.j.min(self.k)
    }

    /// Applies `exp(angle/coefficient · block)`, i.e. rotates by `angle`
    /// (already multiplied by the coefficient).
    pub fn rotate(&self, angle: f64, amps: &mut [C64]) {
        let (s, c) = angle.sin_cos();
        let (a, b) = (amps[self.j - 1], amps[self.k - 1]);
        match self.kind {
            PairKind::E => {
                amps[self.j - 1] = a * c + I * b * s;
                amps[self.k - 1] = I * a * s + b * c;
            }
            PairKind::F => {
                amps[self.j - 1] = a * c + b * s;
                amps[self.k - 1] = b * c - a * s;
            }
        }
    }

    /// Adds `block · x` to `out`.
    pub fn act(&self, x: &[C64], out: &mut [C64]) {
        let c = self.coefficient();
        let (a, b) = (x[self.j - 1], x[self.k - 1]);
        match self.kind {
            PairKind::E => {
                out[self.j - 1] += I * c * b;
                out[self.k - 1] += I * c * a;
            }
            PairKind::F => {
                out[self.j - 1] += c * b;
                out[self.k - 1] -= c * a;
            }
        }
    }

    fn add_to_dense(&self, m: &mut DMatrix<C64>) {
        let c = self.coefficient();
        let (j, k) = (self.j - 1, self.k - 1);
        match self.kind {
            PairKind::E => {
                m[(j, k)] += I * c;
                m[(k, j)] += I * c;
            }
            PairKind::F => {
                m[(j, k)] += C64::new(c, 0.0);
                m[(k, j)] -= C64::new(c, 0.0);
            }
        }
    }
}

struct IonTemplate {
    sign: f64,
    kind: PairKind,
    offsets: [(usize, usize); 2],
    sideband: bool,
}

fn ion_template(id: CouplingId) -> Option<IonTemplate> {
    use CouplingId::*;
    use PairKind::{E, F};
    let t = |sign, kind, offsets, sideband| {
        Some(IonTemplate {
            sign,
            kind,
            offsets,
            sideband,
        })
    };
    // W1r and W1b carry the sign of the block matrices (and of the
    // complex-control model), which is opposite to the F-sum listing.
    match id {
        V1 => t(-1.0, E, [(1, 2), (3, 4)], false),
        W1 => t(1.0, F, [(1, 2), (3, 4)], false),
        V1r => t(-1.0, E, [(2, 5), (4, 7)], true),
        W1r => t(-1.0, F, [(2, 5), (4, 7)], true),
        V1b => t(-1.0, E, [(1, 6), (3, 8)], true),
        W1b => t(1.0, F, [(1, 6), (3, 8)], true),
        V2 => t(-1.0, E, [(1, 3), (2, 4)], false),
        W2 => t(1.0, F, [(1, 3), (2, 4)], false),
        V2r => t(-1.0, E, [(1, 7), (2, 8)], true),
        W2r => t(1.0, F, [(1, 7), (2, 8)], true),
        V2b => t(-1.0, E, [(3, 5), (4, 6)], true),
        W2b => t(-1.0, F, [(3, 5), (4, 6)], true),
        _ => None,
    }
}

/// Pairs of the full (untruncated) ion operator whose smaller endpoint is
/// at most `max_index`; the larger endpoint may lie beyond it.
pub fn coupling_pairs(id: CouplingId, max_index: usize) -> Result<Vec<Pair>> {
    let t = ion_template(id).ok_or_else(|| invalid(format!("{id} is not an ion generator")))?;
    let mut pairs = Vec::new();
    let mut n = 0usize;
    while 4 * n + 1 <= max_index {
        for &(a, b) in &t.offsets {
            let (j, k) = (4 * n + a, 4 * n + b);
            if j <= max_index {
                pairs.push(Pair {
                    j,
                    k,
                    sign: t.sign,
                    radicand: if t.sideband { n as u64 + 1 } else { 1 },
                    kind: t.kind,
                });
            }
        }
        n += 1;
    }
    Ok(pairs)
}

fn law_eberly_pairs(id: CouplingId, n: usize) -> Vec<Pair> {
    use CouplingId::*;
    let kind = if id.part() == Part::V {
        PairKind::E
    } else {
        PairKind::F
    };
    let mut pairs = Vec::new();
    match id {
        V | W => {
            for k in 1..=n {
                pairs.push(Pair {
                    j: k,
                    k: n + k,
                    sign: -1.0,
                    radicand: 1,
                    kind,
                });
            }
        }
        Vb | Wb => {
            for k in 1..n {
                pairs.push(Pair {
                    j: k,
                    k: n + k + 1,
                    sign: -1.0,
                    radicand: k as u64,
                    kind,
                });
            }
        }
        Vr | Wr => {
            for k in 1..n {
                pairs.push(Pair {
                    j: k + 1,
                    k: n + k,
                    sign: -1.0,
                    radicand: k as u64,
                    kind,
                });
            }
        }
        _ => unreachable!("ion ids are handled by the template table"),
    }
    pairs
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum OperatorLabel {
    Coupling(CouplingId),
    Composite(String),
}

impl fmt::Display for OperatorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperatorLabel::Coupling(id) => write!(f, "{id}"),
            OperatorLabel::Composite(s) => f.write_str(s),
        }
    }
}

/// A skew-Hermitian matrix on a truncated state space.
///
/// `pairs` is present when the operator is a sum of disjoint two-level
/// blocks; the dense matrix is then exactly their expansion.
#[derive(Clone, Debug)]
pub struct TruncatedOperator {
    pub label: OperatorLabel,
    pub dim: usize,
    pub entries: DMatrix<C64>,
    pub pairs: Option<Vec<Pair>>,
}

impl TruncatedOperator {
    pub fn from_pairs(label: OperatorLabel, dim: usize, pairs: Vec<Pair>) -> Self {
        let entries = expand_pairs(&pairs, dim);
        TruncatedOperator {
            label,
            dim,
            entries,
            pairs: Some(pairs),
        }
    }

    pub fn skew_residual(&self) -> f64 {
        (&self.entries + self.entries.adjoint()).norm()
    }

    /// `exp(theta·Z)·φ` from the pair structure; `φ` must have length `dim`.
    pub fn flow(&self, theta: f64, state: &StateVector) -> Result<StateVector> {
        let pairs = self
            .pairs
            .as_ref()
            .ok_or_else(|| invalid(format!("{} has no two-level block structure", self.label)))?;
        if state.dim() != self.dim {
            return Err(invalid(format!(
                "state has dimension {}, operator {}",
                state.dim(),
                self.dim
            )));
        }
        let mut amps = state.amplitudes.clone();
        for p in pairs {
            p.rotate(theta * p.coefficient(), &mut amps);
        }
        Ok(StateVector::new(amps))
    }

    /// `Z·x`, from the pairs when available.
    pub fn act(&self, x: &[C64]) -> Vec<C64> {
        match &self.pairs {
            Some(pairs) => {
                let mut out = vec![ZERO; x.len()];
                for p in pairs {
                    p.act(x, &mut out);
                }
                out
            }
            None => {
                let v = DVector::from_column_slice(x);
                (&self.entries * v).as_slice().to_vec()
            }
        }
    }
}

pub fn expand_pairs(pairs: &[Pair], dim: usize) -> DMatrix<C64> {
    let mut m = DMatrix::zeros(dim, dim);
    for p in pairs {
        p.add_to_dense(&mut m);
    }
    m
}

/// Truncation of an ion generator to `Y_{4n}` (or a Law–Eberly generator to
/// dimension `2n`). A pair survives only when both endpoints are inside.
pub fn build_coupling(id: CouplingId, n: usize) -> Result<TruncatedOperator> {
    if n == 0 {
        return Err(invalid("truncation order n must be at least 1"));
    }
    let (dim, pairs) = if id.is_law_eberly() {
        (2 * n, law_eberly_pairs(id, n))
    } else {
        let dim = 4 * n;
        let pairs = coupling_pairs(id, dim)?
            .into_iter()
            .filter(|p| p.max_index() <= dim)
            .collect();
        (dim, pairs)
    };
    Ok(TruncatedOperator::from_pairs(
        OperatorLabel::Coupling(id),
        dim,
        pairs,
    ))
}

/// `n×n` upper shift with superdiagonal `√1, …, √(n−1)`.
pub fn build_d(n: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(n, n);
    for r in 0..n.saturating_sub(1) {
        d[(r, r + 1)] = ((r + 1) as f64).sqrt();
    }
    d
}

/// Position of each canonical coordinate after grouping by internal state:
/// `perm[j-1]` is the 0-based row of `φ_j` in the permuted layout.
pub fn permutation(n: usize) -> Vec<usize> {
    (1..=4 * n)
        .map(|j| {
            let b = BasisIndex(j);
            (b.internal().offset() - 1) * n + b.phonon()
        })
        .collect()
}

#[derive(Clone, Copy)]
enum Block {
    Id,
    D,
    Dt,
}

/// Closed-form `P·Z^{(4n)}·P⁻¹` block pattern.
pub fn closed_form_permuted(id: CouplingId, n: usize) -> Result<DMatrix<C64>> {
    use Block::*;
    use CouplingId::*;
    if !id.is_ion() {
        return Err(invalid(format!("{id} is not an ion generator")));
    }
    let (ion1, blocks): (bool, [(Block, f64); 2]) = match id {
        V1 => (true, [(Id, 1.0), (Id, 1.0)]),
        W1 => (true, [(Id, 1.0), (Id, -1.0)]),
        V1r => (true, [(Dt, 1.0), (D, 1.0)]),
        W1r => (true, [(Dt, 1.0), (D, -1.0)]),
        V1b => (true, [(D, 1.0), (Dt, 1.0)]),
        W1b => (true, [(D, 1.0), (Dt, -1.0)]),
        V2 => (false, [(Id, 1.0), (Id, 1.0)]),
        W2 => (false, [(Id, 1.0), (Id, -1.0)]),
        V2r => (false, [(D, 1.0), (Dt, 1.0)]),
        W2r => (false, [(D, 1.0), (Dt, -1.0)]),
        V2b => (false, [(Dt, 1.0), (D, 1.0)]),
        W2b => (false, [(Dt, 1.0), (D, -1.0)]),
        _ => unreachable!(),
    };
    let global = if id.part() == Part::V { -I } else { C64::new(1.0, 0.0) };
    let d = build_d(n);
    let dt = d.transpose();
    let ident = DMatrix::<f64>::identity(n, n);
    let pick = |b: Block| match b {
        Id => &ident,
        D => &d,
        Dt => &dt,
    };
    // (upper block, lower block) positions in the 4×4 block grid.
    let placements: [((usize, usize), (usize, usize)); 2] = if ion1 {
        [((0, 1), (1, 0)), ((2, 3), (3, 2))]
    } else {
        [((0, 2), (2, 0)), ((1, 3), (3, 1))]
    };
    let mut m = DMatrix::<C64>::zeros(4 * n, 4 * n);
    for (upper, lower) in placements {
        for ((br, bc), (block, sign)) in [(upper, blocks[0]), (lower, blocks[1])] {
            let src = pick(block);
            for r in 0..n {
                for c in 0..n {
                    m[(br * n + r, bc * n + c)] = global * (sign * src[(r, c)]);
                }
            }
        }
    }
    Ok(m)
}

/// `P·build_coupling(id, n)·P⁻¹`, checked entrywise against the closed form.
pub fn permuted_matrix(id: CouplingId, n: usize) -> Result<DMatrix<C64>> {
    if !id.is_ion() {
        return Err(invalid(format!("{id} is not an ion generator")));
    }
    let op = build_coupling(id, n)?;
    let perm = permutation(n);
    let dim = 4 * n;
    let mut out = DMatrix::<C64>::zeros(dim, dim);
    for a in 0..dim {
        for b in 0..dim {
            out[(perm[a], perm[b])] = op.entries[(a, b)];
        }
    }
    let closed = closed_form_permuted(id, n)?;
    let mismatch = (&out - &closed).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if mismatch > 1e-12 {
        return Err(Error::Consistency(format!(
            "permuted {id} differs from its block form by {mismatch:.3e}"
        )));
    }
    Ok(out)
}

/// The twelve real controls `(v1, w1, v1r, w1r, v1b, w1b, v2, …, w2b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlVector {
    values: [f64; 12],
}

impl ControlVector {
    pub fn new(values: [f64; 12], bound: f64) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite() || v.abs() > bound) {
            return Err(invalid(format!("control value {v} exceeds the bound {bound}")));
        }
        Ok(ControlVector { values })
    }

    pub fn zero() -> Self {
        ControlVector { values: [0.0; 12] }
    }

    /// A single active control.
    pub fn single(id: CouplingId, value: f64, bound: f64) -> Result<Self> {
        let idx = ion_position(id)?;
        let mut values = [0.0; 12];
        values[idx] = value;
        Self::new(values, bound)
    }

    pub fn get(&self, id: CouplingId) -> Result<f64> {
        Ok(self.values[ion_position(id)?])
    }

    pub fn values(&self) -> &[f64; 12] {
        &self.values
    }

    /// `(u1, u1r, u1b, u2, u2r, u2b)` with `u = v + i·w`.
    pub fn complex_controls(&self) -> [C64; 6] {
        let v = &self.values;
        std::array::from_fn(|i| C64::new(v[2 * i], v[2 * i + 1]))
    }
}

fn ion_position(id: CouplingId) -> Result<usize> {
    CouplingId::IONS
        .iter()
        .position(|&x| x == id)
        .ok_or_else(|| invalid(format!("{id} is not an ion generator")))
}

/// `Σ (control value)·Z` on `Y_{4n}`.
pub fn assemble_generator(c: &ControlVector, n: usize) -> Result<TruncatedOperator> {
    let dim = 4 * n;
    let mut entries = DMatrix::<C64>::zeros(dim, dim);
    for (&id, &v) in CouplingId::IONS.iter().zip(c.values.iter()) {
        if v != 0.0 {
            entries += build_coupling(id, n)?.entries * C64::new(v, 0.0);
        }
    }
    Ok(TruncatedOperator {
        label: OperatorLabel::Composite("generator".into()),
        dim,
        entries,
        pairs: None,
    })
}

/// Finite-support complex amplitudes over `{φ_j}`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<C64>,
}

impl StateVector {
    pub fn new(amplitudes: Vec<C64>) -> Self {
        StateVector { amplitudes }
    }

    /// `φ_j` (1-based) in dimension `dim`.
    pub fn basis(j: usize, dim: usize) -> Result<Self> {
        if j == 0 || j > dim {
            return Err(invalid(format!("basis index {j} outside 1..={dim}")));
        }
        let mut a = vec![ZERO; dim];
        a[j - 1] = C64::new(1.0, 0.0);
        Ok(StateVector::new(a))
    }

    /// Haar-random unit vector.
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let a = (0..dim)
            .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        StateVector::new(a).normalized()
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        StateVector::new(self.amplitudes.into_iter().map(|a| a / n).collect())
    }

    /// Zero-padded copy of length `dim`; fails if nonzero amplitude would be cut.
    pub fn embed(&self, dim: usize) -> Result<Self> {
        if dim < self.dim() && self.mass_beyond(dim) > 0.0 {
            return Err(invalid(format!(
                "state has support beyond dimension {dim}"
            )));
        }
        let mut a = self.amplitudes.clone();
        a.resize(dim, ZERO);
        Ok(StateVector::new(a))
    }

    /// `Σ_{i > dim} |c_i|²` (1-based `i`).
    pub fn mass_beyond(&self, dim: usize) -> f64 {
        self.amplitudes.iter().skip(dim).map(|a| a.norm_sqr()).sum()
    }

    /// Largest 1-based index carrying nonzero amplitude, 0 for the zero vector.
    pub fn support_end(&self) -> usize {
        self.amplitudes
            .iter()
            .rposition(|a| a.norm_sqr() > 0.0)
            .map_or(0, |i| i + 1)
    }

    /// L2 distance, padding the shorter vector with zeros.
    pub fn distance(&self, other: &StateVector) -> f64 {
        let n = self.dim().max(other.dim());
        (0..n)
            .map(|i| {
                let a = self.amplitudes.get(i).copied().unwrap_or(ZERO);
                let b = other.amplitudes.get(i).copied().unwrap_or(ZERO);
                (a - b).norm_sqr()
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_dvector(&self) -> DVector<C64> {
        DVector::from_column_slice(&self.amplitudes)
    }
}

impl Serialize for StateVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v: Vec<[f64; 2]> = self.amplitudes.iter().map(|a| [a.re, a.im]).collect();
        v.serialize(s)
    }
}

impl<'de> Deserialize<'de> for StateVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<[f64; 2]>::deserialize(d)?;
        Ok(StateVector::new(
            v.into_iter().map(|[re, im]| C64::new(re, im)).collect(),
        ))
    }
}

/// Flow of the full ion operator `id` on a state simulated in dimension
/// `dim_sim`, with the rotation angle of each pair supplied by `angle`.
pub fn apply_coupling_flow(
    id: CouplingId,
    phi: &StateVector,
    dim_sim: usize,
    angle: impl Fn(&Pair) -> f64,
) -> Result<StateVector> {
    if !id.is_ion() {
        return Err(invalid(format!("{id} is not an ion generator")));
    }
    let mut amps = phi.embed(dim_sim)?.amplitudes;
    for p in coupling_pairs(id, dim_sim)? {
        if p.max_index() > dim_sim {
            let inside = p.min_index();
            if amps[inside - 1].norm_sqr() > 0.0 {
                return Err(Error::TruncationOverflow {
                    index: inside,
                    partner: p.max_index(),
                    dim: dim_sim,
                });
            }
            continue;
        }
        p.rotate(angle(&p), &mut amps);
    }
    Ok(StateVector::new(amps))
}

/// `exp(duration·amplitude·Z_id)·φ` for the full ion operator.
pub fn apply_exp_segment(
    id: CouplingId,
    amplitude: f64,
    duration: f64,
    phi: &StateVector,
    dim_sim: usize,
) -> Result<StateVector> {
    if duration < 0.0 || !duration.is_finite() || !amplitude.is_finite() {
        return Err(invalid("segment duration must be finite and nonnegative"));
    }
    let theta = amplitude * duration;
    apply_coupling_flow(id, phi, dim_sim, |p| theta * p.coefficient())
}

/// Generator subsets used for certification and planning.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Family {
    Full,
    RedOnly,
    BlueOnly,
    Custom(Vec<CouplingId>),
}

impl Family {
    pub fn members(&self) -> Vec<CouplingId> {
        use CouplingId::*;
        match self {
            Family::Full => CouplingId::IONS.to_vec(),
            Family::RedOnly => vec![V1, W1, V1r, W1r, V2, W2, V2r, W2r],
            Family::BlueOnly => vec![V1, W1, V1b, W1b, V2, W2, V2b, W2b],
            Family::Custom(ids) => ids.clone(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Family::Full => "full".into(),
            Family::RedOnly => "red-only".into(),
            Family::BlueOnly => "blue-only".into(),
            Family::Custom(ids) => ids.iter().map(|i| i.label()).collect::<Vec<_>>().join(","),
        }
    }

    /// For each ion there is a sideband whose two quadratures, together with
    /// both carrier quadratures of that ion, belong to the family.
    pub fn satisfies_modal_hypothesis(&self) -> bool {
        let m = self.members();
        [1u8, 2].iter().all(|&g| {
            let has = |star, part| CouplingId::ion(g, star, part).is_ok_and(|id| m.contains(&id));
            has(None, Part::V)
                && has(None, Part::W)
                && [Star::Red, Star::Blue]
                    .iter()
                    .any(|&s| has(Some(s), Part::V) && has(Some(s), Part::W))
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "full" => Ok(Family::Full),
            "red-only" | "red" => Ok(Family::RedOnly),
            "blue-only" | "blue" => Ok(Family::BlueOnly),
            list => {
                let ids = list
                    .split(',')
                    .map(str::parse)
                    .collect::<Result<Vec<CouplingId>>>()?;
                if ids.is_empty() || ids.iter().any(|id| !id.is_ion()) {
                    return Err(invalid(format!("family {s:?} must list ion generators")));
                }
                Ok(Family::Custom(ids))
            }
        }
    }
}

impl Serialize for Family {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for Family {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn basis_index_round_trip() {
        for j in 1..200 {
            let b = BasisIndex::new(j).unwrap();
            assert_eq!(BasisIndex::from_parts(b.internal(), b.phonon()), b);
        }
        assert_eq!(BasisIndex::from_parts(Internal::Ee, 2).get(), 12);
        assert!(BasisIndex::new(0).is_err());
    }

    #[test]
    fn carrier_classification() {
        let carriers: Vec<_> = CouplingId::IONS
            .iter()
            .chain(CouplingId::LAW_EBERLY.iter())
            .filter(|id| id.is_carrier())
            .map(|id| id.label())
            .collect();
        assert_eq!(carriers, ["V1", "W1", "V2", "W2", "V", "W"]);
    }

    #[test]
    fn v1_at_order_one() {
        let op = build_coupling(CouplingId::V1, 1).unwrap();
        let mut expected = DMatrix::<C64>::zeros(4, 4);
        for (r, c) in [(0, 1), (1, 0), (2, 3), (3, 2)] {
            expected[(r, c)] = -I;
        }
        assert_eq!(op.entries, expected);
    }

    #[test]
    fn sideband_vanishes_at_order_one() {
        let op = build_coupling(CouplingId::V1r, 1).unwrap();
        assert!(op.entries.iter().all(|z| *z == ZERO));
        assert!(op.pairs.unwrap().is_empty());
    }

    #[test]
    fn unknown_id_rejected() {
        assert!("V3r".parse::<CouplingId>().is_err());
        assert!(coupling_pairs(CouplingId::Vr, 8).is_err());
    }

    #[test]
    fn d_matrix() {
        assert_eq!(build_d(1), DMatrix::<f64>::zeros(1, 1));
        let d3 = build_d(3);
        assert_eq!(d3[(0, 1)], 1.0);
        assert_eq!(d3[(1, 2)], 2f64.sqrt());
        assert!((build_d(5).norm() - 10f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn pairs_are_disjoint_and_expand_exactly() {
        for &id in CouplingId::IONS.iter().chain(CouplingId::LAW_EBERLY.iter()) {
            for n in 1..7 {
                let op = build_coupling(id, n).unwrap();
                let pairs = op.pairs.as_ref().unwrap();
                let mut seen = vec![false; op.dim + 1];
                for p in pairs {
                    for i in [p.j, p.k] {
                        assert!(!seen[i], "{id} n={n}: index {i} repeated");
                        seen[i] = true;
                    }
                }
                assert!(op.skew_residual() < 1e-12);
                assert_eq!(expand_pairs(pairs, op.dim), op.entries);
            }
        }
    }

    #[test]
    fn permuted_order_one_is_identity_permutation() {
        assert_eq!(permutation(1), vec![0, 1, 2, 3]);
        let op = build_coupling(CouplingId::V1, 1).unwrap();
        assert_eq!(permuted_matrix(CouplingId::V1, 1).unwrap(), op.entries);
    }

    #[test]
    fn permuted_blocks_match_closed_form() {
        for &id in &CouplingId::IONS {
            for n in 1..9 {
                permuted_matrix(id, n).unwrap();
            }
        }
        // lower-left block pair of W2b is −D
        let n = 4;
        let m = permuted_matrix(CouplingId::W2b, n).unwrap();
        let d = build_d(n);
        for r in 0..n {
            for c in 0..n {
                assert_eq!(m[(2 * n + r, c)].re, -d[(r, c)]);
                assert_eq!(m[(3 * n + r, n + c)].re, -d[(r, c)]);
            }
        }
    }

    #[test]
    fn assembled_generators() {
        let n = 3;
        let zero = assemble_generator(&ControlVector::zero(), n).unwrap();
        assert!(zero.entries.iter().all(|z| *z == ZERO));
        let v1 = ControlVector::single(CouplingId::V1, 1.0, 1.0).unwrap();
        assert_eq!(
            assemble_generator(&v1, n).unwrap().entries,
            build_coupling(CouplingId::V1, n).unwrap().entries
        );
        let mut vals = [0.0; 12];
        vals[0] = 1.0;
        vals[1] = 1.0;
        let c = ControlVector::new(vals, 1.0).unwrap();
        assert!(assemble_generator(&c, n).unwrap().skew_residual() < 1e-12);
        assert_eq!(c.complex_controls()[0], C64::new(1.0, 1.0));
        assert!(ControlVector::single(CouplingId::W2, 1.5, 1.0).is_err());
    }

    #[test]
    fn carrier_quarter_turn() {
        let phi = StateVector::basis(1, 8).unwrap();
        let out = apply_exp_segment(CouplingId::V1, 1.0, FRAC_PI_2, &phi, 8).unwrap();
        let expected = {
            let mut a = vec![ZERO; 8];
            a[1] = -I;
            StateVector::new(a)
        };
        assert!(out.distance(&expected) < 1e-15);
    }

    #[test]
    fn zero_duration_is_identity() {
        let mut rng = rand::rng();
        let phi = StateVector::random(12, &mut rng);
        let out = apply_exp_segment(CouplingId::W1b, 0.7, 0.0, &phi, 16).unwrap();
        assert!(out.distance(&phi) == 0.0);
    }

    #[test]
    fn overflow_detected() {
        let phi = StateVector::basis(4 * 2 + 2, 12).unwrap(); // eg at phonon 2
        let err = apply_exp_segment(CouplingId::V1r, 1.0, 0.3, &phi, 12).unwrap_err();
        assert!(matches!(err, Error::TruncationOverflow { index: 10, partner: 13, dim: 12 }));
        assert!(apply_exp_segment(CouplingId::V1r, 1.0, 0.3, &phi, 16).is_ok());
    }

    #[test]
    fn family_hypothesis() {
        assert!(Family::Full.satisfies_modal_hypothesis());
        assert!(Family::RedOnly.satisfies_modal_hypothesis());
        assert!(Family::BlueOnly.satisfies_modal_hypothesis());
        let mixed: Family = "V1,W1,V1r,W1r,V2,W2,V2b,W2b".parse().unwrap();
        assert!(mixed.satisfies_modal_hypothesis());
        let carriers: Family = "V1,W1,V2,W2".parse().unwrap();
        assert!(!carriers.satisfies_modal_hypothesis());
        assert_eq!("red-only".parse::<Family>().unwrap(), Family::RedOnly);
    }
}
