//! Piecewise-constant transfer plans on the decoupled modal approximation,
//! found by multi-start L-BFGS over the signed segment angles with exact
//! adjoint gradients.

use std::cell::{Cell, RefCell};
use std::fmt;

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoupling::{build_decoupled_generator, resonance_partition};
use crate::error::{invalid, Result};
use crate::frequency::is_prime;
use crate::operators::{build_coupling, CouplingId, Family, Part, Star, StateVector, TruncatedOperator};

/// One generator of the decoupled modal approximation at order `p`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "GeneratorJson", into = "GeneratorJson")]
pub enum GeneratorId {
    Carrier { gamma: u8, part: Part },
    /// `class` is the 1-based resonance class at order `p + 1`.
    Sideband { gamma: u8, star: Star, part: Part, class: usize },
}

#[derive(Serialize, Deserialize)]
struct GeneratorJson {
    kind: String,
    gamma: u8,
    star: Option<Star>,
    part: Part,
    class: Option<usize>,
}

impl From<GeneratorId> for GeneratorJson {
    fn from(g: GeneratorId) -> Self {
        match g {
            GeneratorId::Carrier { gamma, part } => GeneratorJson {
                kind: "carrier".into(),
                gamma,
                star: None,
                part,
                class: None,
            },
            GeneratorId::Sideband { gamma, star, part, class } => GeneratorJson {
                kind: "sideband".into(),
                gamma,
                star: Some(star),
                part,
                class: Some(class),
            },
        }
    }
}

impl TryFrom<GeneratorJson> for GeneratorId {
    type Error = String;

    fn try_from(j: GeneratorJson) -> std::result::Result<Self, String> {
        if !(1..=2).contains(&j.gamma) {
            return Err(format!("gamma must be 1 or 2, got {}", j.gamma));
        }
        match (j.kind.as_str(), j.star, j.class) {
            ("carrier", None, None) => Ok(GeneratorId::Carrier {
                gamma: j.gamma,
                part: j.part,
            }),
            ("sideband", Some(star), Some(class)) if class >= 1 => Ok(GeneratorId::Sideband {
                gamma: j.gamma,
                star,
                part: j.part,
                class,
            }),
            _ => Err(format!("malformed generator of kind {:?}", j.kind)),
        }
    }
}

impl GeneratorId {
    pub fn coupling(&self) -> CouplingId {
        let (gamma, star, part) = match *self {
            GeneratorId::Carrier { gamma, part } => (gamma, None, part),
            GeneratorId::Sideband { gamma, star, part, .. } => (gamma, Some(star), part),
        };
        CouplingId::ion(gamma, star, part).expect("gamma validated on construction")
    }

    pub fn is_carrier(&self) -> bool {
        matches!(self, GeneratorId::Carrier { .. })
    }

    pub fn class(&self) -> Option<usize> {
        match *self {
            GeneratorId::Sideband { class, .. } => Some(class),
            GeneratorId::Carrier { .. } => None,
        }
    }

    pub fn from_coupling(id: CouplingId, class: Option<usize>) -> Result<Self> {
        let gamma = id
            .gamma()
            .ok_or_else(|| invalid(format!("{id} is not an ion generator")))?;
        match (id.star(), class) {
            (None, None) => Ok(GeneratorId::Carrier { gamma, part: id.part() }),
            (Some(star), Some(class)) => Ok(GeneratorId::Sideband {
                gamma,
                star,
                part: id.part(),
                class,
            }),
            _ => Err(invalid(format!("{id}: a class is required exactly for sidebands"))),
        }
    }

    /// The operator `S` on `Y_{4p}`.
    pub fn operator(&self, p: usize) -> Result<TruncatedOperator> {
        match self.class() {
            None => build_coupling(self.coupling(), p),
            Some(j) => build_decoupled_generator(self.coupling(), j, p),
        }
    }

    /// Smallest `P > 0` with `exp(P·S) = I` on `Y_{4p}`.
    pub fn period(&self, p: usize) -> Result<f64> {
        match self.class() {
            None => Ok(std::f64::consts::TAU),
            Some(j) => {
                let part = resonance_partition(p + 1)?;
                let c = part.class(j)?;
                if c.is_zero() {
                    return Err(invalid("the zero class generates the zero operator"));
                }
                Ok(std::f64::consts::TAU / c.nu.value())
            }
        }
    }
}

impl fmt::Display for GeneratorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.class() {
            None => write!(f, "{}", self.coupling()),
            Some(j) => write!(f, "{}[{j}]", self.coupling()),
        }
    }
}

/// Nonzero generators of the order-`p` decoupled approximation whose
/// coupling belongs to `family`, in family order.
pub fn generator_set(family: &Family, p: usize) -> Result<Vec<GeneratorId>> {
    let part = resonance_partition(p + 1)?;
    let mut out = Vec::new();
    for id in family.members() {
        if id.is_carrier() {
            out.push(GeneratorId::from_coupling(id, None)?);
        } else {
            for (j, c) in part.classes.iter().enumerate() {
                if !c.is_zero() {
                    out.push(GeneratorId::from_coupling(id, Some(j + 1))?);
                }
            }
        }
    }
    Ok(out)
}

/// Cyclic schedule alternating carriers with sidebands, so each sideband
/// segment is followed by a carrier.
pub fn cyclic_schedule(generators: &[GeneratorId]) -> Vec<GeneratorId> {
    let carriers: Vec<_> = generators.iter().filter(|g| g.is_carrier()).copied().collect();
    let sidebands: Vec<_> = generators.iter().filter(|g| !g.is_carrier()).copied().collect();
    if carriers.is_empty() || sidebands.is_empty() {
        return generators.to_vec();
    }
    let len = carriers.len().max(sidebands.len());
    (0..len)
        .flat_map(|i| [carriers[i % carriers.len()], sidebands[i % sidebands.len()]])
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanSegment {
    pub generator: GeneratorId,
    pub amplitude: f64,
    pub duration: f64,
}

impl PlanSegment {
    pub fn angle(&self) -> f64 {
        self.amplitude * self.duration
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanStatus {
    Success,
    Failure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub p: usize,
    #[serde(rename = "M")]
    pub m_bound: f64,
    pub seed: u64,
    pub target_error: f64,
    pub achieved_error: f64,
    pub segments: Vec<PlanSegment>,
    pub status: PlanStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl Plan {
    pub fn is_success(&self) -> bool {
        self.status == PlanStatus::Success
    }

    pub fn angles(&self) -> Vec<f64> {
        self.segments.iter().map(PlanSegment::angle).collect()
    }

    pub fn sideband_count(&self) -> usize {
        self.segments.iter().filter(|s| !s.generator.is_carrier()).count()
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub p: usize,
    #[serde(rename = "M")]
    pub m_bound: f64,
    pub eps_plan: f64,
    pub seed: u64,
    /// Cap on L-BFGS iterations summed over restarts.
    pub budget: u64,
    pub family: Family,
}

impl PlannerConfig {
    pub fn new(p: usize, eps_plan: f64, seed: u64) -> Self {
        PlannerConfig {
            p,
            m_bound: crate::operators::DEFAULT_BOUND,
            eps_plan,
            seed,
            budget: DEFAULT_BUDGET,
            family: Family::Full,
        }
    }
}

pub const DEFAULT_BUDGET: u64 = 20_000;
const ITERS_PER_RESTART: u64 = 2_000;
const GROWTH: f64 = 1.5;
const EVALS_PER_ITER: u64 = 40;
const MAX_STEP: f64 = 1e3;

/// Forward states `φ_0..φ_K` of a sequence of flows.
fn forward(ops: &[TruncatedOperator], angles: &[f64], phi0: &StateVector) -> Result<Vec<StateVector>> {
    let mut states = Vec::with_capacity(ops.len() + 1);
    states.push(phi0.clone());
    for (op, &a) in ops.iter().zip(angles) {
        let next = op.flow(a, states.last().expect("nonempty"))?;
        states.push(next);
    }
    Ok(states)
}

/// `‖φ(T) − φ_T‖²` and its gradient in the segment angles.
pub fn objective_and_gradient(
    ops: &[TruncatedOperator],
    angles: &[f64],
    phi0: &StateVector,
    phi_t: &StateVector,
) -> Result<(f64, Vec<f64>)> {
    let states = forward(ops, angles, phi0)?;
    let last = states.last().expect("nonempty");
    let mut lambda: Vec<C64> = last
        .amplitudes()
        .iter()
        .zip(phi_t.amplitudes())
        .map(|(a, b)| a - b)
        .collect();
    let f = lambda.iter().map(|z| z.norm_sqr()).sum();
    let mut grad = vec![0.0; ops.len()];
    for k in (0..ops.len()).rev() {
        let s_phi = ops[k].act(states[k + 1].amplitudes());
        grad[k] = 2.0
            * lambda
                .iter()
                .zip(&s_phi)
                .map(|(l, s)| (l.conj() * s).re)
                .sum::<f64>();
        lambda = ops[k]
            .flow(-angles[k], &StateVector::new(lambda))?
            .amplitudes()
            .to_vec();
    }
    Ok((f, grad))
}

struct Transfer<'a> {
    ops: &'a [TruncatedOperator],
    phi0: &'a StateVector,
    phi_t: &'a StateVector,
    evals: Cell<u64>,
    max_evals: u64,
    best: &'a RefCell<(f64, Vec<f64>)>,
}

impl Transfer<'_> {
    fn evaluate(&self, x: &[f64]) -> std::result::Result<(f64, Vec<f64>), argmin::core::Error> {
        let n = self.evals.get() + 1;
        self.evals.set(n);
        if n > self.max_evals {
            return Err(argmin::core::Error::msg("evaluation cap reached"));
        }
        let (f, g) = objective_and_gradient(self.ops, x, self.phi0, self.phi_t)?;
        let mut best = self.best.borrow_mut();
        if f < best.0 {
            *best = (f, x.to_vec());
        }
        Ok((f, g))
    }
}

impl CostFunction for Transfer<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.evaluate(x)?.0)
    }
}

impl Gradient for Transfer<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, x: &Vec<f64>) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        Ok(self.evaluate(x)?.1)
    }
}

fn wrap_angle(a: f64, period: f64) -> f64 {
    let r = a.rem_euclid(period);
    if r > period / 2.0 {
        r - period
    } else {
        r
    }
}

fn check_state(phi: &StateVector, dim: usize, name: &str) -> Result<StateVector> {
    if (phi.norm() - 1.0).abs() > 1e-10 {
        return Err(invalid(format!("{name} is not normalized (norm {})", phi.norm())));
    }
    phi.embed(dim)
        .map_err(|_| invalid(format!("{name} is not supported in Y_{dim}")))
}

fn segments_from_angles(
    schedule: &[GeneratorId],
    angles: &[f64],
    periods: &[f64],
    m_bound: f64,
) -> Vec<PlanSegment> {
    schedule
        .iter()
        .zip(angles)
        .zip(periods)
        .filter_map(|((g, &a), &per)| {
            let a = wrap_angle(a, per);
            (a.abs() > 1e-12).then(|| PlanSegment {
                generator: *g,
                amplitude: m_bound.copysign(a),
                duration: a.abs() / m_bound,
            })
        })
        .collect()
}

/// Multi-start planning from `φ0` to `φT` in the decoupled approximation.
pub fn plan_transfer(phi0: &StateVector, phi_t: &StateVector, cfg: &PlannerConfig) -> Result<Plan> {
    let p = cfg.p;
    if p < 3 || !is_prime(p as u64) {
        return Err(invalid(format!("planning order p = {p} must be a prime ≥ 3")));
    }
    if !(cfg.m_bound > 0.0) || !(cfg.eps_plan > 0.0) {
        return Err(invalid("M and eps_plan must be positive"));
    }
    let dim = 4 * p;
    let phi0 = check_state(phi0, dim, "φ0")?;
    let phi_t = check_state(phi_t, dim, "φT")?;
    let mut best = Plan {
        p,
        m_bound: cfg.m_bound,
        seed: cfg.seed,
        target_error: cfg.eps_plan,
        achieved_error: phi0.distance(&phi_t),
        segments: Vec::new(),
        status: PlanStatus::Failure,
        config: None,
    };
    if best.achieved_error < cfg.eps_plan {
        best.status = PlanStatus::Success;
        return Ok(best);
    }
    let cycle = cyclic_schedule(&generator_set(&cfg.family, p)?);
    if cycle.is_empty() {
        return Err(invalid("the generator family is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut k = cycle.len().max(2 * dim);
    let mut spent = 0u64;
    while spent < cfg.budget {
        let schedule: Vec<GeneratorId> = cycle.iter().cycle().take(k).copied().collect();
        let ops = schedule
            .iter()
            .map(|g| g.operator(p))
            .collect::<Result<Vec<_>>>()?;
        let periods = schedule
            .iter()
            .map(|g| g.period(p))
            .collect::<Result<Vec<_>>>()?;
        let init: Vec<f64> = periods
            .iter()
            .map(|&per| rng.random_range(-0.5..0.5) * per)
            .collect();
        let iters = ITERS_PER_RESTART.min(cfg.budget - spent);
        let best_point = RefCell::new((f64::INFINITY, init.clone()));
        let problem = Transfer {
            ops: &ops,
            phi0: &phi0,
            phi_t: &phi_t,
            evals: Cell::new(0),
            max_evals: EVALS_PER_ITER * iters,
            best: &best_point,
        };
        let line_search = MoreThuenteLineSearch::new()
            .with_bounds(f64::EPSILON.sqrt(), MAX_STEP)
            .map_err(|e| invalid(e.to_string()))?;
        let solver = LBFGS::new(line_search, 10)
            .with_tolerance_grad(1e-14)
            .and_then(|s| s.with_tolerance_cost(0.0))
            .map_err(|e| invalid(e.to_string()))?;
        let target = 0.25 * cfg.eps_plan * cfg.eps_plan;
        let used = match Executor::new(problem, solver)
            .configure(|s| s.param(init.clone()).max_iters(iters).target_cost(target))
            .run()
        {
            Ok(res) => res.state().get_iter().max(1),
            // a stalled line search ends the restart; the best point seen is kept
            Err(_) => iters,
        };
        let angles = best_point.into_inner().1;
        spent += used;
        let segments = segments_from_angles(&schedule, &angles, &periods, cfg.m_bound);
        let mut candidate = Plan {
            segments,
            status: PlanStatus::Failure,
            ..best.clone()
        };
        candidate.achieved_error = modal_error(&candidate, &phi0, &phi_t)?;
        if candidate.achieved_error < best.achieved_error || best.segments.is_empty() {
            best = candidate;
        }
        if best.achieved_error < cfg.eps_plan {
            best.status = PlanStatus::Success;
            return Ok(best);
        }
        k = ((k as f64) * GROWTH).ceil() as usize;
    }
    Ok(best)
}

/// States after each segment inside `Y_{4p}`, starting with `φ0`.
pub fn simulate_plan_modal(plan: &Plan, phi0: &StateVector) -> Result<Vec<StateVector>> {
    let dim = 4 * plan.p;
    let phi0 = phi0.embed(dim)?;
    let ops = plan
        .segments
        .iter()
        .map(|s| s.generator.operator(plan.p))
        .collect::<Result<Vec<_>>>()?;
    forward(&ops, &plan.angles(), &phi0)
}

pub fn modal_error(plan: &Plan, phi0: &StateVector, phi_t: &StateVector) -> Result<f64> {
    let traj = simulate_plan_modal(plan, phi0)?;
    Ok(traj.last().expect("nonempty").distance(phi_t))
}

/// Adjoint gradient of the plan objective with respect to its angles.
pub fn plan_gradient(plan: &Plan, phi0: &StateVector, phi_t: &StateVector) -> Result<Vec<f64>> {
    let dim = 4 * plan.p;
    let ops = plan
        .segments
        .iter()
        .map(|s| s.generator.operator(plan.p))
        .collect::<Result<Vec<_>>>()?;
    Ok(objective_and_gradient(&ops, &plan.angles(), &phi0.embed(dim)?, &phi_t.embed(dim)?)?.1)
}

pub fn gradient_check(plan: &Plan, phi0: &StateVector, phi_t: &StateVector) -> Result<f64> {
    gradient_check_with_step(plan, phi0, phi_t, 1e-6)
}

/// Largest `|g_k − fd_k|` over components, relative to `max(‖g‖_∞, 1e-8)`,
/// with `fd` the central difference at `step`.
pub fn gradient_check_with_step(
    plan: &Plan,
    phi0: &StateVector,
    phi_t: &StateVector,
    step: f64,
) -> Result<f64> {
    let dim = 4 * plan.p;
    let (phi0, phi_t) = (phi0.embed(dim)?, phi_t.embed(dim)?);
    let ops = plan
        .segments
        .iter()
        .map(|s| s.generator.operator(plan.p))
        .collect::<Result<Vec<_>>>()?;
    let angles = plan.angles();
    let (_, g) = objective_and_gradient(&ops, &angles, &phi0, &phi_t)?;
    let mut worst: f64 = 0.0;
    for k in 0..angles.len() {
        let mut up = angles.clone();
        let mut down = angles.clone();
        up[k] += step;
        down[k] -= step;
        let fu = objective_and_gradient(&ops, &up, &phi0, &phi_t)?.0;
        let fd = objective_and_gradient(&ops, &down, &phi0, &phi_t)?.0;
        worst = worst.max((g[k] - (fu - fd) / (2.0 * step)).abs());
    }
    let scale = g.iter().fold(1e-8f64, |m, x| m.max(x.abs()));
    Ok(worst / scale)
}
