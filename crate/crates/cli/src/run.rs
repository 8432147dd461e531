//! Dispatch of one CLI invocation and emission of its artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use branchlab::limits::{verify_theorem, McOptions, TheoremInput, VerifyOptions};
use branchlab::model::{Diagnostics, Immigration, Model};
use branchlab::semigroup::{
    immigration_log_laplace, laplace_at, linear_action, log2_checkpoints, solve_u, solve_v, stationary_log_laplace, survival_curve, Trajectory,
};
use branchlab::simulator::{mc_first_moment, mc_laplace, mc_laplace_until_survivors, mc_survival_curve, replicate_csv, LaplaceQuery, McEstimate};
use branchlab::spectral::{analyze, check_assumptions, AssumptionOptions};
use branchlab::{format_number, ErrorClass};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{Command, Equation, Estimator, ExperimentConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED_CHECK: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NOT_APPLICABLE: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: Command,
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: PathBuf,
    pub theorem: Option<u8>,
}

#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub class: &'static str,
    pub exit_status: i32,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
}

#[derive(Debug)]
pub struct Failure {
    pub record: ErrorRecord,
}

impl Failure {
    fn invalid(message: impl Into<String>, diagnostics: Option<Diagnostics>) -> Self {
        Self {
            record: ErrorRecord {
                class: "invalid",
                exit_status: EXIT_INVALID,
                message: message.into(),
                diagnostics,
            },
        }
    }
}

impl From<branchlab::Error> for Failure {
    fn from(e: branchlab::Error) -> Self {
        let (class, exit_status) = match e.class() {
            ErrorClass::Invalid => ("invalid", EXIT_INVALID),
            ErrorClass::NotApplicable => ("not_applicable", EXIT_NOT_APPLICABLE),
            ErrorClass::Numerical => ("numerical", EXIT_NUMERICAL),
        };
        Self {
            record: ErrorRecord {
                class,
                exit_status,
                message: e.to_string(),
                diagnostics: None,
            },
        }
    }
}

/// Files produced by a command plus the conjunction of its pass flags.
struct Outcome {
    files: BTreeMap<String, String>,
    pass: bool,
}

impl Outcome {
    fn new(pass: bool) -> Self {
        Self {
            files: BTreeMap::new(),
            pass,
        }
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
        s.push('\n');
        self.files.insert(name.into(), s);
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: String,
    config_sha256: String,
    id: Option<&'a str>,
    seed: Option<u64>,
    exit_status: i32,
    outputs: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Runs the invocation, writes its artifacts and returns the exit status.
pub fn execute(inv: &Invocation) -> i32 {
    let bytes = match fs::read(&inv.config) {
        Ok(b) => b,
        Err(e) => return report_failure(inv, Failure::invalid(format!("cannot read config {}: {e}", inv.config.display()), None), None, None),
    };
    let hash = sha256_hex(&bytes);
    let cfg: ExperimentConfig = match serde_json::from_slice(&bytes) {
        Ok(c) => c,
        Err(e) => return report_failure(inv, Failure::invalid(format!("config schema violation: {e}"), None), Some(&hash), None),
    };
    let seed = inv.seed.unwrap_or(cfg.seed);
    let result = match rayon::ThreadPoolBuilder::new().num_threads(inv.threads.unwrap_or(0)).build() {
        Ok(pool) => pool.install(|| dispatch(inv, &cfg, seed)),
        Err(e) => Err(Failure::invalid(format!("cannot start worker pool: {e}"), None)),
    };
    match result {
        Ok(outcome) => {
            let status = if outcome.pass { EXIT_OK } else { EXIT_FAILED_CHECK };
            match write_outputs(inv, &outcome.files, &hash, Some(&cfg), seed, status) {
                Ok(()) => status,
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_INVALID
                }
            }
        }
        Err(f) => report_failure(inv, f, Some(&hash), Some((&cfg, seed))),
    }
}

fn report_failure(inv: &Invocation, f: Failure, hash: Option<&str>, cfg: Option<(&ExperimentConfig, u64)>) -> i32 {
    let status = f.record.exit_status;
    eprintln!("error ({}): {}", f.record.class, f.record.message);
    let mut files = BTreeMap::new();
    let mut s = serde_json::to_string_pretty(&f.record).expect("error record serializes");
    s.push('\n');
    files.insert("error.json".to_string(), s);
    let (c, seed) = cfg.map_or((None, inv.seed.unwrap_or(0)), |(c, s)| (Some(c), s));
    if let Err(e) = write_outputs(inv, &files, hash.unwrap_or(""), c, seed, status) {
        eprintln!("error: {e}");
    }
    status
}

fn write_outputs(inv: &Invocation, files: &BTreeMap<String, String>, hash: &str, cfg: Option<&ExperimentConfig>, seed: u64, status: i32) -> Result<(), String> {
    fs::create_dir_all(&inv.out).map_err(|e| format!("cannot create {}: {e}", inv.out.display()))?;
    for (name, contents) in files {
        let path = inv.out.join(name);
        fs::write(&path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    }
    let manifest = Manifest {
        tool: "branchlab",
        version: env!("CARGO_PKG_VERSION"),
        command: inv.command.name(),
        config: inv.config.display().to_string(),
        config_sha256: hash.into(),
        id: cfg.map(|c| c.id.as_str()),
        seed: cfg.map(|_| seed),
        exit_status: status,
        outputs: files.keys().cloned().collect(),
    };
    let mut s = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    s.push('\n');
    let path = inv.out.join("manifest.json");
    fs::write(&path, s).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn validate(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let diag = cfg.model.validate();
    if !diag.is_admissible() {
        let msg = diag.clone().into_result().unwrap_err().to_string();
        return Err(Failure::invalid(msg, Some(diag)));
    }
    if let Some(imm) = &cfg.immigration {
        imm.matches(cfg.model.is_branching())?;
        let diag = imm.validate(cfg.model.n());
        if !diag.is_admissible() {
            let msg = diag.clone().into_result().unwrap_err().to_string();
            return Err(Failure::invalid(msg, Some(diag)));
        }
    }
    let n = cfg.model.n();
    for (name, v) in [("mu", &cfg.mu), ("f", &cfg.f)] {
        if let Some(v) = v {
            if v.len() != n || v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                return Err(Failure::invalid(format!("{name} must be a finite nonnegative vector of length {n}"), None));
            }
        }
    }
    Ok(())
}

fn dispatch(inv: &Invocation, cfg: &ExperimentConfig, seed: u64) -> Result<Outcome, Failure> {
    if let Some(kind) = cfg.experiment {
        if kind != inv.command {
            return Err(Failure::invalid(format!("config is for `{}`, not `{}`", kind.name(), inv.command.name()), None));
        }
    }
    validate(cfg)?;
    match inv.command {
        Command::Check => check(cfg, seed),
        Command::Solve => solve(cfg),
        Command::Simulate => simulate(cfg, seed),
        Command::Verify => verify(inv, cfg, seed),
    }
}

fn check(cfg: &ExperimentConfig, seed: u64) -> Result<Outcome, Failure> {
    let spectrum = analyze(&cfg.model)?;
    let opts = AssumptionOptions {
        times: cfg.check.times.clone(),
        h4_starts: cfg.check.h4_starts,
        h4_tol: cfg.check.h4_tol,
        seed,
    };
    let report = check_assumptions(&cfg.model, &spectrum, &opts)?;
    let mut out = Outcome::new(report.all_hold());
    out.json("assumptions.json", &report);
    out.json("spectrum.json", &spectrum.triple);
    Ok(out)
}

fn checkpoints(cfg: &ExperimentConfig) -> Vec<f64> {
    cfg.solve.checkpoints.clone().unwrap_or_else(|| log2_checkpoints(cfg.solve.horizon))
}

fn needs_immigration(cfg: &ExperimentConfig) -> Result<&Immigration, Failure> {
    cfg.immigration.as_ref().ok_or_else(|| Failure::invalid("this experiment needs an immigration law", None))
}

fn solve(cfg: &ExperimentConfig) -> Result<Outcome, Failure> {
    let model = &cfg.model;
    let spectrum = analyze(model)?;
    let gen = &spectrum.generator;
    let ode = cfg.ode.options();
    let grid = checkpoints(cfg);
    let mut out = Outcome::new(true);
    let tr = match cfg.solve.equation {
        Equation::Survival => {
            let t_min = cfg.solve.t_min.unwrap_or_else(|| grid.iter().copied().find(|t| *t > 0.0).unwrap_or(0.0));
            let curve = survival_curve(model, gen, &cfg.mu(), &grid, t_min, &ode)?;
            let mut scalars = BTreeMap::new();
            scalars.insert("survival".to_string(), curve.probability.clone());
            out.json("survival.json", &curve);
            Trajectory {
                channel: if model.is_branching() { "u" } else { "Vbar" }.into(),
                times: curve.times,
                values: curve.profile,
                vectors: BTreeMap::new(),
                scalars,
                step_stats: Default::default(),
            }
        }
        Equation::U => {
            let g0 = cfg.solve.g0.clone().unwrap_or_else(|| vec![0.0; model.n()]);
            solve_u(model, gen, &g0, &grid, &ode)?
        }
        Equation::V => solve_v(model, gen, &cfg.f(), &grid, &ode)?,
        Equation::Linear => {
            let f = cfg.f();
            let values = grid.iter().map(|t| linear_action(gen, &f, *t)).collect::<Result<Vec<_>, _>>()?;
            Trajectory {
                channel: "T".into(),
                times: grid.clone(),
                values,
                vectors: BTreeMap::new(),
                scalars: BTreeMap::new(),
                step_stats: Default::default(),
            }
        }
        Equation::Immigration => {
            let imm = needs_immigration(cfg)?;
            let mut tr = immigration_log_laplace(model, gen, imm, &cfg.f(), &grid, &ode)?;
            let mu = cfg.mu.clone().unwrap_or_else(|| vec![0.0; model.n()]);
            let laplace = (0..grid.len()).map(|k| laplace_at(&tr, &mu, k)).collect();
            tr.scalars.insert("laplace".into(), laplace);
            tr
        }
        Equation::Stationary => {
            let imm = needs_immigration(cfg)?;
            let st = stationary_log_laplace(model, &spectrum, imm, &cfg.f(), cfg.solve.tail_tol, &ode)?;
            out.json("stationary.json", &st);
            return Ok(out);
        }
    };
    out.files.insert("trajectory.csv".into(), tr.to_csv());
    out.json("step_stats.json", &tr.step_stats);
    Ok(out)
}

fn counts(mu: &[f64]) -> Result<Vec<u64>, Failure> {
    mu.iter()
        .map(|m| {
            if m.fract() == 0.0 && *m < 1e15 {
                Ok(*m as u64)
            } else {
                Err(Failure::invalid("particle configurations need integer counts", None))
            }
        })
        .collect()
}

#[derive(Serialize)]
struct EstimateRow {
    estimator: Estimator,
    t: f64,
    theta: Option<f64>,
    estimate: McEstimate,
}

fn estimates_csv(rows: &[EstimateRow]) -> String {
    let mut s = String::from("estimator,t,theta,mean,stderr,n,ci95_low,ci95_high\n");
    for r in rows {
        let name = match r.estimator {
            Estimator::Survival => "survival",
            Estimator::Laplace => "laplace",
            Estimator::FirstMoment => "first_moment",
        };
        let theta = r.theta.map(format_number).unwrap_or_default();
        let e = &r.estimate;
        let _ = writeln!(
            s,
            "{name},{},{theta},{},{},{},{},{}",
            format_number(r.t),
            format_number(e.mean),
            format_number(e.stderr),
            e.n,
            format_number(e.ci95[0]),
            format_number(e.ci95[1])
        );
    }
    s
}

fn simulate(cfg: &ExperimentConfig, seed: u64) -> Result<Outcome, Failure> {
    let sim = cfg.simulate.as_ref().ok_or_else(|| Failure::invalid("simulate needs a `simulate` section", None))?;
    let Model::Branching(bm) = &cfg.model else {
        return Err(branchlab::Error::NotApplicable("pathwise superprocess simulation is not provided".into()).into());
    };
    if sim.n < 2 && sim.min_survivors.is_none() {
        return Err(Failure::invalid("n >= 2 required", None));
    }
    let imm = match &cfg.immigration {
        Some(Immigration::Particle(l)) => Some(l),
        _ => None,
    };
    let default_mu = if imm.is_some() { vec![0.0; bm.n()] } else { cfg.mu() };
    let mu = counts(cfg.mu.as_deref().unwrap_or(&default_mu))?;
    let f = cfg.f();
    let mut rows = Vec::new();
    match sim.estimator {
        Estimator::Survival => {
            if imm.is_some() {
                return Err(Failure::invalid("survival estimates are defined without immigration", None));
            }
            let est = mc_survival_curve(bm, &mu, &sim.times, sim.n, seed)?;
            for (t, e) in sim.times.iter().zip(est) {
                rows.push(EstimateRow {
                    estimator: sim.estimator,
                    t: *t,
                    theta: None,
                    estimate: e,
                });
            }
        }
        Estimator::Laplace => {
            for &t in &sim.times {
                let q = LaplaceQuery {
                    f: f.clone(),
                    thetas: sim.thetas.clone(),
                    t,
                    divide_by_t: sim.divide_by_t,
                    conditional: sim.conditional,
                };
                let est = match sim.min_survivors {
                    Some(target) if sim.conditional && imm.is_none() => mc_laplace_until_survivors(bm, &mu, &q, target, sim.max_replicates, seed)?,
                    Some(_) => return Err(Failure::invalid("min_survivors needs the conditional mode without immigration", None)),
                    None => mc_laplace(bm, imm, &mu, &q, sim.n, seed)?,
                };
                for (theta, e) in sim.thetas.iter().zip(est) {
                    rows.push(EstimateRow {
                        estimator: sim.estimator,
                        t,
                        theta: Some(*theta),
                        estimate: e,
                    });
                }
            }
        }
        Estimator::FirstMoment => {
            for &t in &sim.times {
                rows.push(EstimateRow {
                    estimator: sim.estimator,
                    t,
                    theta: None,
                    estimate: mc_first_moment(bm, imm, &mu, &f, t, sim.n, seed)?,
                });
            }
        }
    }
    let mut out = Outcome::new(true);
    out.files.insert("estimates.csv".into(), estimates_csv(&rows));
    out.json("estimates.json", &rows);
    if sim.replicate_rows > 0 {
        let (csv, _) = replicate_csv(bm, imm, &mu, &sim.times, sim.n, seed, sim.replicate_rows)?;
        out.files.insert("replicates.csv".into(), csv);
    }
    Ok(out)
}

fn verify(inv: &Invocation, cfg: &ExperimentConfig, seed: u64) -> Result<Outcome, Failure> {
    let id = inv
        .theorem
        .or(cfg.verify.theorem)
        .ok_or_else(|| Failure::invalid("verify needs a theorem id (--theorem N or verify.theorem)", None))?;
    let spectrum = analyze(&cfg.model)?;
    let v = &cfg.verify;
    let mu = match (&cfg.mu, &cfg.immigration) {
        (Some(mu), _) => mu.clone(),
        (None, Some(_)) => vec![0.0; cfg.model.n()],
        (None, None) => cfg.mu(),
    };
    let f = cfg.f();
    let input = TheoremInput {
        model_id: &cfg.id,
        model: &cfg.model,
        spectrum: &spectrum,
        imm: cfg.immigration.as_ref(),
        mu: &mu,
        f: &f,
    };
    let opts = VerifyOptions {
        schedule: v.schedule.clone(),
        theta_grid: v.theta_grid.clone(),
        tolerance: v.tolerance,
        mc: v.mc.as_ref().map(|m| McOptions {
            t: m.t,
            replicates: m.replicates,
            seed: m.seed.unwrap_or(seed),
            max_replicates: m.max_replicates,
            sigmas: m.sigmas,
            allowance: m.allowance,
        }),
        ode: cfg.ode.options(),
        tail_tol: v.tail_tol,
    };
    let report = verify_theorem(id, &input, &opts)?;
    let mut out = Outcome::new(report.pass);
    out.files.insert(format!("theorem{id}.csv"), report.to_csv());
    out.json(&format!("theorem{id}.json"), &report);
    Ok(out)
}

/// Path of a bundled config shipped with the crate.
pub fn bundled_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}
