//! Command-line front end. Every artifact embeds the configuration that
//! produced it, minus the output location and worker count.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::closure::{certify_law_eberly, modal_closure, Certificate};
use crate::decoupling::resonance_partition;
use crate::error::{invalid, Error, Result};
use crate::lift::{choose_prime, error_report, lift_plan, simulate_lifted, trajectory_csv, ErrorReport, LiftedPlan};
use crate::operators::{CouplingId, Family, Star, StateVector};
use crate::planner::{gradient_check, plan_transfer, Plan, PlannerConfig, DEFAULT_BUDGET};
use crate::winding::{bound_trace, find_decoupling_time, verify_sigma, DecouplingRequest, DEFAULT_S_MAX};

pub const SEED_ENV: &str = "SIDEBAND_STEER_SEED";

/// Rows of the residual-vs-s CSV written by `decouple`.
const TRACE_ROWS: u64 = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n: usize,
    pub eps: f64,
    #[serde(rename = "M")]
    pub m_bound: f64,
    pub eps_plan: f64,
    pub s_max: u64,
    pub seed: u64,
    pub budget: u64,
    pub family: Family,
    pub phi0: String,
    #[serde(rename = "phiT")]
    pub phi_t: String,
    #[serde(skip)]
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n: 3,
            eps: 0.1,
            m_bound: 1.0,
            eps_plan: 0.01,
            s_max: DEFAULT_S_MAX,
            seed: 0,
            budget: DEFAULT_BUDGET,
            family: Family::Full,
            phi0: "e1".into(),
            phi_t: "e5".into(),
            output_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    pub fn eps_lift(&self) -> f64 {
        self.eps - self.eps_plan
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(invalid("n must be at least 1"));
        }
        if !(self.eps > 0.0) || !(self.eps_plan > 0.0) || !(self.m_bound > 0.0) {
            return Err(invalid("eps, eps_plan and M must be positive"));
        }
        if !(self.eps_plan < self.eps) {
            return Err(invalid("eps_plan must be smaller than eps"));
        }
        if self.s_max == 0 || self.budget == 0 {
            return Err(invalid("s_max and budget must be positive"));
        }
        Ok(())
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn planner(&self, p: usize) -> PlannerConfig {
        PlannerConfig {
            p,
            m_bound: self.m_bound,
            eps_plan: self.eps_plan,
            seed: self.seed,
            budget: self.budget,
            family: self.family.clone(),
        }
    }
}

/// Loads a config file: either a bare config or any artifact carrying a
/// `config` key.
pub fn load_config(path: &Path) -> Result<Value> {
    let v: Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    match v.get("config") {
        Some(c) if c.is_object() => Ok(c.clone()),
        _ if v.is_object() => Ok(v),
        _ => Err(invalid(format!("{} holds no config object", path.display()))),
    }
}

/// Parses `e1`, `e1+e5`, `0.6*e1+0.8i*e3`, `random` or `random:SEED` into a
/// normalized state of dimension `dim`.
pub fn parse_state(spec: &str, dim: usize, seed: u64) -> Result<StateVector> {
    let spec = spec.trim();
    if let Some(rest) = spec.strip_prefix("random") {
        let seed = match rest.strip_prefix(':') {
            Some(s) => s.parse().map_err(|_| invalid(format!("bad seed in {spec:?}")))?,
            None if rest.is_empty() => seed,
            None => return Err(invalid(format!("bad state spec {spec:?}"))),
        };
        return Ok(StateVector::random(dim, &mut ChaCha8Rng::seed_from_u64(seed)));
    }
    let mut amps = vec![C64::new(0.0, 0.0); dim];
    for term in spec.split('+') {
        let term = term.trim();
        let (coef, basis) = match term.split_once('*') {
            Some((c, b)) => (parse_coefficient(c.trim())?, b.trim()),
            None => match term.strip_prefix('-') {
                Some(b) => (C64::new(-1.0, 0.0), b),
                None => (C64::new(1.0, 0.0), term),
            },
        };
        let j: usize = basis
            .strip_prefix('e')
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| invalid(format!("bad basis term {term:?}")))?;
        if j == 0 || j > dim {
            return Err(invalid(format!("basis index {j} outside 1..={dim}")));
        }
        amps[j - 1] += coef;
    }
    let state = StateVector::new(amps);
    if state.norm() < 1e-300 {
        return Err(invalid(format!("state {spec:?} is zero")));
    }
    Ok(state.normalized())
}

fn parse_coefficient(s: &str) -> Result<C64> {
    let bad = || invalid(format!("bad coefficient {s:?}"));
    match s.strip_suffix('i') {
        Some("") => Ok(C64::new(0.0, 1.0)),
        Some("-") => Ok(C64::new(0.0, -1.0)),
        Some(im) => Ok(C64::new(0.0, im.parse().map_err(|_| bad())?)),
        None => Ok(C64::new(s.parse().map_err(|_| bad())?, 0.0)),
    }
}

#[derive(Parser, Debug)]
#[command(name = "sideband-steer", version, about = "Control toolkit for two trapped ions in a shared phonon mode")]
pub struct Cli {
    /// Cap on concurrent worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Lie-closure certificate of a coupling family at order n.
    Certify {
        #[arg(long)]
        n: usize,
        /// full, red-only, blue-only or a comma list of couplings.
        #[arg(long, default_value = "full")]
        family: Family,
        /// Certify the Law–Eberly family {V, W, V*, W*} instead.
        #[arg(long, value_parser = parse_star)]
        law_eberly: Option<Star>,
        #[arg(long, default_value = ".")]
        output_dir: PathBuf,
    },
    /// Resonance classes of ω_1..ω_{m−1}.
    Classes {
        #[arg(long)]
        m: usize,
        #[arg(long, default_value = ".")]
        output_dir: PathBuf,
    },
    /// Torus search for a decoupling time.
    Decouple {
        #[arg(long)]
        op: CouplingId,
        #[arg(long)]
        m: usize,
        /// 1-based resonance class.
        #[arg(long)]
        class: usize,
        #[arg(long, allow_hyphen_values = true)]
        t_hat: f64,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = DEFAULT_S_MAX)]
        s_max: u64,
        #[arg(long, default_value = ".")]
        output_dir: PathBuf,
    },
    /// Plan a modal state transfer.
    Plan(RunArgs),
    /// Lift a plan to the full system.
    Lift {
        #[arg(long)]
        plan: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Simulate a lifted plan and report its error.
    Simulate {
        #[arg(long)]
        lifted: PathBuf,
        /// Source plan, for the per-segment comparison with the modal run.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Certify, plan, lift and simulate in one go.
    RunE2e(RunArgs),
}

fn parse_star(s: &str) -> std::result::Result<Star, String> {
    match s {
        "red" | "r" => Ok(Star::Red),
        "blue" | "b" => Ok(Star::Blue),
        _ => Err(format!("expected red or blue, got {s:?}")),
    }
}

#[derive(Args, Debug, Default)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long = "M")]
    pub m_bound: Option<f64>,
    #[arg(long)]
    pub eps_plan: Option<f64>,
    #[arg(long)]
    pub s_max: Option<u64>,
    /// Falls back to the SIDEBAND_STEER_SEED environment variable.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub budget: Option<u64>,
    #[arg(long)]
    pub family: Option<Family>,
    #[arg(long)]
    pub phi0: Option<String>,
    #[arg(long = "phiT")]
    pub phi_t: Option<String>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

impl RunArgs {
    /// Defaults, then `base` (an artifact config), then `--config`, then flags.
    pub fn resolve(&self, base: Option<Value>) -> Result<RunConfig> {
        let mut merged = serde_json::to_value(RunConfig::default())?;
        let mut explicit_plan_eps = false;
        let mut explicit_seed = false;
        for layer in base.into_iter().chain(self.config.as_deref().map(load_config).transpose()?) {
            explicit_plan_eps |= layer.get("eps_plan").is_some();
            explicit_seed |= layer.get("seed").is_some();
            merge(&mut merged, layer);
        }
        let mut cfg: RunConfig = serde_json::from_value(merged)
            .map_err(|e| invalid(format!("bad config: {e}")))?;
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(v) = self.eps {
            cfg.eps = v;
        }
        if let Some(v) = self.m_bound {
            cfg.m_bound = v;
        }
        match self.eps_plan {
            Some(v) => cfg.eps_plan = v,
            None if self.eps.is_some() || !explicit_plan_eps => cfg.eps_plan = cfg.eps / 10.0,
            None => {}
        }
        if let Some(v) = self.s_max {
            cfg.s_max = v;
        }
        match (self.seed, std::env::var(SEED_ENV)) {
            (Some(v), _) => cfg.seed = v,
            (None, Ok(v)) if !explicit_seed => {
                cfg.seed = v
                    .trim()
                    .parse()
                    .map_err(|_| invalid(format!("{SEED_ENV} = {v:?} is not a seed")))?;
            }
            _ => {}
        }
        if let Some(v) = self.budget {
            cfg.budget = v;
        }
        if let Some(v) = &self.family {
            cfg.family = v.clone();
        }
        if let Some(v) = &self.phi0 {
            cfg.phi0 = v.clone();
        }
        if let Some(v) = &self.phi_t {
            cfg.phi_t = v.clone();
        }
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn merge(into: &mut Value, layer: Value) {
    if let (Value::Object(a), Value::Object(b)) = (into, layer) {
        for (k, v) in b {
            a.insert(k, v);
        }
    }
}

/// Outcome of a command, mapped onto the exit-code partition.
#[derive(Debug)]
pub enum Failure {
    Contract(String),
    Usage(String),
    Planner(String),
    Search(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Contract(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Planner(_) => 3,
            Failure::Search(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Contract(m) | Failure::Usage(m) | Failure::Planner(m) | Failure::Search(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidInput(_) | Error::Io(_) | Error::Json(_) => Failure::Usage(msg),
            Error::SearchExhausted { .. } | Error::Cancelled(_) => Failure::Search(msg),
            Error::TruncationOverflow { .. } | Error::Consistency(_) | Error::Contract(_) => {
                Failure::Contract(msg)
            }
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be positive");
            return 2;
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    match run(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

pub fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Certify {
            n,
            family,
            law_eberly,
            output_dir,
        } => cmd_certify(n, &family, law_eberly, &output_dir),
        Command::Classes { m, output_dir } => cmd_classes(m, &output_dir),
        Command::Decouple {
            op,
            m,
            class,
            t_hat,
            eps,
            s_max,
            output_dir,
        } => {
            let req = DecouplingRequest {
                id: op,
                m,
                ell: class,
                t_hat,
                eps,
                s_max,
            };
            cmd_decouple(&req, &output_dir)
        }
        Command::Plan(args) => {
            let cfg = args.resolve(None)?;
            cmd_plan(&cfg).map(drop)
        }
        Command::Lift { plan, run } => {
            let plan: Plan = read_json(&plan)?;
            let cfg = run.resolve(plan.config.clone())?;
            cmd_lift(&cfg, &plan).map(drop)
        }
        Command::Simulate { lifted, plan, run } => {
            let lp: LiftedPlan = read_json(&lifted)?;
            let plan: Option<Plan> = plan.as_deref().map(read_json).transpose()?;
            let cfg = run.resolve(lp.config.clone())?;
            cmd_simulate(&cfg, &lp, plan.as_ref()).map(drop)
        }
        Command::RunE2e(args) => {
            let cfg = args.resolve(None)?;
            cmd_run_e2e(&cfg)
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(dir, name, &text)
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, text)?;
    Ok(path)
}

pub fn cmd_certify(n: usize, family: &Family, law_eberly: Option<Star>, dir: &Path) -> Outcome {
    let cert = match law_eberly {
        Some(star) => certify_law_eberly(n, star)?,
        None if n < 2 => return Err(Failure::Usage(format!("certify needs n ≥ 2, got {n}"))),
        None => modal_closure(n, family)?,
    };
    let config = json!({
        "n": n,
        "family": family,
        "law_eberly": law_eberly,
    });
    write_json(dir, "certificate.json", &json!({ "config": config, "certificate": cert }))?;
    print_certificate(&cert);
    if cert.certified {
        Ok(())
    } else {
        Err(Failure::Contract(format!(
            "closure has dimension {} of {}",
            cert.dimension, cert.target
        )))
    }
}

fn print_certificate(c: &Certificate) {
    println!(
        "n = {}: Lie closure dimension {} / {} ({}), svd rank {}{}",
        c.n,
        c.dimension,
        c.target,
        if c.certified { "certified" } else { "not certified" },
        c.svd_rank,
        if c.claim_applies { "" } else { "; controllability claim does not apply at this n" }
    );
}

pub fn cmd_classes(m: usize, dir: &Path) -> Outcome {
    if m < 2 {
        return Err(Failure::Usage(format!("classes needs m ≥ 2, got {m}")));
    }
    let part = resonance_partition(m)?;
    let classes: Vec<Value> = part
        .classes
        .iter()
        .enumerate()
        .map(|(k, c)| {
            json!({
                "class": k + 1,
                "members": c.members.iter().map(|w| w.to_string()).collect::<Vec<_>>(),
                "nu": c.nu,
            })
        })
        .collect();
    write_json(
        dir,
        "classes.json",
        &json!({ "config": { "m": m }, "count": part.count, "classes": classes }),
    )?;
    println!("m = {m}: {} resonance classes", part.count);
    for (k, c) in part.classes.iter().enumerate() {
        let members: Vec<String> = c.members.iter().map(|w| w.to_string()).collect();
        println!("  {}: {{{}}}  ν = {}", k + 1, members.join(", "), c.nu);
    }
    Ok(())
}

pub fn cmd_decouple(req: &DecouplingRequest, dir: &Path) -> Outcome {
    let res = find_decoupling_time(req)?;
    let measured = verify_sigma(req, &res, 4 * (req.m + 1))?;
    let config = json!({
        "op": req.id,
        "m": req.m,
        "class": req.ell,
        "t_hat": req.t_hat,
        "eps": req.eps,
        "s_max": req.s_max,
    });
    write_json(
        dir,
        "decouple.json",
        &json!({ "config": config, "result": res, "measured_sigma_error": measured }),
    )?;
    let mut csv = String::from("s,bound,best_bound\n");
    let mut best = f64::INFINITY;
    for (s, b) in bound_trace(req, res.s.min(TRACE_ROWS))? {
        best = best.min(b);
        csv.push_str(&format!("{s},{b:.17e},{best:.17e}\n"));
    }
    write_text(dir, "decouple_residual.csv", &csv)?;
    println!(
        "s = {}, t̄ = {:.12}, certified bound {:.6e}, measured {:.6e}",
        res.s, res.t_bar, res.bound, measured
    );
    Ok(())
}

fn states(cfg: &RunConfig, p: usize) -> Result<(StateVector, StateVector)> {
    let dim = 4 * p;
    let phi0 = parse_state(&cfg.phi0, dim, cfg.seed)?;
    let phi_t = parse_state(&cfg.phi_t, dim, cfg.seed.wrapping_add(1))?;
    Ok((phi0, phi_t))
}

pub fn cmd_plan(cfg: &RunConfig) -> std::result::Result<Plan, Failure> {
    let p = choose_prime(cfg.n)?;
    let (phi0, phi_t) = states(cfg, p)?;
    let mut plan = plan_transfer(&phi0, &phi_t, &cfg.planner(p))?;
    plan.config = Some(cfg.to_value());
    write_json(&cfg.output_dir, "plan.json", &plan)?;
    println!(
        "plan: p = {p}, {} segments ({} sideband), achieved error {:.3e} (target {:.3e})",
        plan.segments.len(),
        plan.sideband_count(),
        plan.achieved_error,
        plan.target_error
    );
    if !plan.is_success() {
        return Err(Failure::Planner(format!(
            "planner stopped at error {:.3e} above {:.3e}",
            plan.achieved_error, plan.target_error
        )));
    }
    let g = gradient_check(&plan, &phi0, &phi_t)?;
    if g >= 1e-5 {
        return Err(Failure::Contract(format!("adjoint gradient disagrees with finite differences by {g:.3e}")));
    }
    Ok(plan)
}

pub fn cmd_lift(cfg: &RunConfig, plan: &Plan) -> std::result::Result<LiftedPlan, Failure> {
    let mut lp = lift_plan(plan, cfg.eps_lift(), cfg.s_max)?;
    lp.config = Some(cfg.to_value());
    write_json(&cfg.output_dir, "lifted_plan.json", &lp)?;
    println!(
        "lift: {} sideband searches, predicted error {:.3e} (budget {:.3e}), duration {:.6e}",
        lp.sideband_count(),
        lp.total_predicted_error,
        lp.eps,
        lp.total_duration()
    );
    Ok(lp)
}

pub fn cmd_simulate(
    cfg: &RunConfig,
    lp: &LiftedPlan,
    plan: Option<&Plan>,
) -> std::result::Result<Option<ErrorReport>, Failure> {
    let (phi0, phi_t) = states(cfg, lp.p)?;
    let (run, report) = match plan {
        Some(plan) => {
            let (report, run) = error_report(plan, lp, &phi0, &phi_t)?;
            let mut csv = String::from("segment_index,predicted_error,running_predicted,deviation\n");
            for k in 0..report.predicted.len() {
                csv.push_str(&format!(
                    "{},{:.17e},{:.17e},{:.17e}\n",
                    k + 1,
                    report.predicted[k],
                    report.running_predicted[k],
                    report.deviation[k]
                ));
            }
            write_text(&cfg.output_dir, "error_by_segment.csv", &csv)?;
            (run, Some(report))
        }
        None => (simulate_lifted(lp, &phi0)?, None),
    };
    let final_error = run.final_state().distance(&phi_t.embed(lp.dim_sim)?);
    write_text(&cfg.output_dir, "trajectory.csv", &trajectory_csv(lp, &run, final_error))?;
    println!("simulate: final error {final_error:.6e}, tail mass {:.3e}", run.tail_mass);
    if let Some(r) = &report {
        r.check()?;
    }
    Ok(report)
}

pub fn cmd_run_e2e(cfg: &RunConfig) -> Outcome {
    let p = choose_prime(cfg.n)?;
    let cert = modal_closure(p, &cfg.family)?;
    print_certificate(&cert);
    if !cert.certified {
        return Err(Failure::Contract(format!(
            "family does not generate su({}): dimension {}",
            4 * p,
            cert.dimension
        )));
    }
    let plan = cmd_plan(cfg)?;
    let lp = cmd_lift(cfg, &plan)?;
    let report = cmd_simulate(cfg, &lp, Some(&plan))?.expect("plan given");
    let success = report.final_error < cfg.eps;
    let summary = json!({
        "config": cfg.to_value(),
        "p": p,
        "final_error": report.final_error,
        "eps": cfg.eps,
        "verdict": report.verdict && success,
        "modal_error": report.modal_error,
        "total_predicted_error": report.total_predicted_error,
        "tail_mass": report.tail_mass,
        "total_duration": lp.total_duration(),
    });
    write_json(&cfg.output_dir, "summary.json", &summary)?;
    if success {
        Ok(())
    } else {
        Err(Failure::Contract(format!(
            "final error {:.6e} is not below eps {:.6e}",
            report.final_error, cfg.eps
        )))
    }
}
