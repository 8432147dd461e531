//! Exact event-driven simulation of particle systems on a count vector and
//! Monte Carlo estimators built on it.
//!
//! Replicate `k` draws from the ChaCha8 stream `k` of the run seed, and
//! replicates are folded in fixed blocks in index order, so estimates do
//! not depend on the number of worker threads.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BranchingModel, ImmigrationLaw};

pub const DEFAULT_POPULATION_CAP: u64 = 10_000_000;
const BLOCK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub time: f64,
    pub counts: Vec<u64>,
}

impl ParticleState {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub states: Vec<ParticleState>,
    /// Time the population hit zero, when it did before the horizon and
    /// there is no immigration.
    pub extinction_time: Option<f64>,
    pub events: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
    pub ci95: [f64; 2],
}

impl McEstimate {
    fn new(mean: f64, stderr: f64, n: u64) -> Self {
        Self {
            mean,
            stderr,
            n,
            ci95: [mean - 1.96 * stderr, mean + 1.96 * stderr],
        }
    }

    /// `|mean - reference| / stderr`; infinite when a nonzero gap meets a
    /// zero standard error.
    pub fn z_score(&self, reference: f64) -> f64 {
        let gap = (self.mean - reference).abs();
        if gap == 0.0 {
            0.0
        } else {
            gap / self.stderr
        }
    }
}

struct TypeEvents {
    rate: f64,
    beta: f64,
    /// Cumulative motion weights with destination (`None` = killed).
    jumps: Vec<(f64, Option<usize>)>,
    atom_cum: Vec<f64>,
    atoms: Vec<Vec<usize>>,
}

/// Immutable event tables shared by all replicates.
pub struct Engine<'a> {
    types: Vec<TypeEvents>,
    imm: Option<&'a ImmigrationLaw>,
    alpha: f64,
    cap: u64,
}

impl<'a> Engine<'a> {
    pub fn new(model: &BranchingModel, imm: Option<&'a ImmigrationLaw>, cap: u64) -> Result<Self> {
        model.validate().into_result()?;
        let n = model.n();
        if let Some(law) = imm {
            law.validate(n).into_result()?;
        }
        let types = (0..n)
            .map(|x| {
                let q = -model.motion[x][x];
                let mut jumps = Vec::new();
                let mut acc = 0.0;
                for (y, &r) in model.motion[x].iter().enumerate() {
                    if y != x && r > 0.0 {
                        acc += r;
                        jumps.push((acc, Some(y)));
                    }
                }
                let kill = q - acc;
                if kill > 0.0 {
                    acc += kill;
                    jumps.push((acc, None));
                }
                let mut cum = 0.0;
                let mut atom_cum = Vec::new();
                let mut atoms = Vec::new();
                for a in &model.offspring[x] {
                    if a.prob > 0.0 {
                        cum += a.prob;
                        atom_cum.push(cum);
                        atoms.push(a.children.clone());
                    }
                }
                TypeEvents {
                    rate: model.beta[x] + acc,
                    beta: model.beta[x],
                    jumps,
                    atom_cum,
                    atoms,
                }
            })
            .collect();
        Ok(Self {
            types,
            imm,
            alpha: imm.map_or(0.0, |l| l.alpha),
            cap,
        })
    }

    pub fn n(&self) -> usize {
        self.types.len()
    }

    /// One path; `record` is called with the state at every checkpoint.
    fn run<R: Rng>(&self, rng: &mut R, init: &[u64], checkpoints: &[f64], mut record: impl FnMut(usize, &[u64])) -> Result<(Option<f64>, u64)> {
        let n = self.n();
        let mut counts = init.to_vec();
        let mut total: u64 = counts.iter().sum();
        let mut t = 0.0;
        let mut k = 0;
        let mut events = 0u64;
        while k < checkpoints.len() && checkpoints[k] <= 0.0 {
            record(k, &counts);
            k += 1;
        }
        loop {
            if k == checkpoints.len() {
                return Ok((None, events));
            }
            let mut rate = self.alpha;
            for x in 0..n {
                rate += counts[x] as f64 * self.types[x].rate;
            }
            if rate <= 0.0 {
                let extinct = if total == 0 && self.imm.is_none() { Some(t) } else { None };
                while k < checkpoints.len() {
                    record(k, &counts);
                    k += 1;
                }
                return Ok((extinct, events));
            }
            let dt: f64 = rng.sample::<f64, _>(Exp1) / rate;
            let next = t + dt;
            while k < checkpoints.len() && checkpoints[k] < next {
                record(k, &counts);
                k += 1;
            }
            if k == checkpoints.len() {
                return Ok((None, events));
            }
            t = next;
            events += 1;
            let mut u = rng.random::<f64>() * rate;
            if u < self.alpha {
                let law = self.imm.expect("alpha > 0 only with immigration");
                let added = law.sample_into(rng, &mut counts);
                total = total.saturating_add(added);
            } else {
                u -= self.alpha;
                let mut x = n - 1;
                for y in 0..n {
                    let w = counts[y] as f64 * self.types[y].rate;
                    if u < w {
                        x = y;
                        break;
                    }
                    u -= w;
                }
                if counts[x] == 0 {
                    // round-off pushed the draw past the last occupied type
                    x = (0..n).rev().find(|&y| counts[y] > 0 && self.types[y].rate > 0.0).expect("positive rate");
                    u = 0.0;
                }
                let ev = &self.types[x];
                let local = u / counts[x] as f64;
                counts[x] -= 1;
                total -= 1;
                if local < ev.beta {
                    let v = rng.random::<f64>() * ev.atom_cum.last().copied().unwrap_or(0.0);
                    let idx = ev.atom_cum.iter().position(|c| v < *c).unwrap_or(ev.atoms.len().saturating_sub(1));
                    if let Some(children) = ev.atoms.get(idx) {
                        for &c in children {
                            counts[c] += 1;
                        }
                        total += children.len() as u64;
                    }
                } else {
                    let v = local - ev.beta;
                    let dest = ev.jumps.iter().find(|(c, _)| v < *c).or(ev.jumps.last()).and_then(|j| j.1);
                    if let Some(y) = dest {
                        counts[y] += 1;
                        total += 1;
                    }
                }
            }
            if total > self.cap {
                return Err(Error::Explosion { time: t, cap: self.cap });
            }
            if total == 0 && self.imm.is_none() {
                while k < checkpoints.len() {
                    record(k, &counts);
                    k += 1;
                }
                return Ok((Some(t), events));
            }
        }
    }
}

/// RNG of replicate `k` under `seed`.
pub fn replicate_rng(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

fn check_checkpoints(checkpoints: &[f64]) -> Result<()> {
    if checkpoints.is_empty() {
        return Err(Error::InvalidInput("at least one checkpoint required".into()));
    }
    if checkpoints[0] < 0.0 || checkpoints.windows(2).any(|w| !(w[1] > w[0])) || checkpoints.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("checkpoints must be finite, nonnegative and strictly increasing".into()));
    }
    Ok(())
}

fn check_init(init: &[u64], n: usize) -> Result<()> {
    if init.len() != n {
        return Err(Error::InvalidInput(format!("initial counts have length {}, expected {n}", init.len())));
    }
    Ok(())
}

fn check_replicates(n: u64) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidInput("n >= 2 required".into()));
    }
    Ok(())
}

/// One sample path with the state carried forward to each checkpoint.
pub fn simulate_path(
    model: &BranchingModel,
    imm: Option<&ImmigrationLaw>,
    init: &[u64],
    checkpoints: &[f64],
    seed: u64,
    cap: u64,
) -> Result<Path> {
    check_checkpoints(checkpoints)?;
    let engine = Engine::new(model, imm, cap)?;
    check_init(init, engine.n())?;
    let mut rng = replicate_rng(seed, 0);
    let mut states = Vec::with_capacity(checkpoints.len());
    let (extinction_time, events) = engine.run(&mut rng, init, checkpoints, |k, c| {
        states.push(ParticleState {
            time: checkpoints[k],
            counts: c.to_vec(),
        })
    })?;
    Ok(Path {
        states,
        extinction_time,
        events,
    })
}

/// Welford mean/variance accumulator with Chan's merge.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, o: &Moments) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n as f64;
        self.m2 += o.m2 + d * d * self.n as f64 * o.n as f64 / n as f64;
        self.n = n;
    }

    fn estimate(&self) -> McEstimate {
        let var = if self.n > 1 { (self.m2 / (self.n - 1) as f64).max(0.0) } else { 0.0 };
        McEstimate::new(self.mean, (var / self.n as f64).sqrt(), self.n)
    }
}

/// Sums behind the ratio estimator `sum(Y S) / sum(S)`.
#[derive(Debug, Clone, Copy, Default)]
struct RatioSums {
    n: u64,
    s: f64,
    ys: f64,
    ys2: f64,
}

impl RatioSums {
    fn push(&mut self, y: f64, survived: bool) {
        self.n += 1;
        if survived {
            self.s += 1.0;
            self.ys += y;
            self.ys2 += y * y;
        }
    }

    fn merge(&mut self, o: &RatioSums) {
        self.n += o.n;
        self.s += o.s;
        self.ys += o.ys;
        self.ys2 += o.ys2;
    }

    fn estimate(&self) -> Result<McEstimate> {
        if self.s == 0.0 {
            return Err(Error::NoSurvivors);
        }
        let n = self.n as f64;
        let r = self.ys / self.s;
        // S is an indicator, so sum(YS * S) = sum(YS) and sum(S^2) = sum(S)
        let var = ((self.ys2 - 2.0 * r * self.ys + r * r * self.s) / (n - 1.0)).max(0.0);
        let sbar = self.s / n;
        Ok(McEstimate::new(r, var.sqrt() / (n.sqrt() * sbar), self.n))
    }
}

/// Runs replicates `offset..offset+n` in blocks and folds the per-block
/// accumulators in index order.
fn run_blocks<A, F>(n: u64, offset: u64, fresh: impl Fn() -> A + Sync, merge: impl Fn(&mut A, &A), work: F) -> Result<A>
where
    A: Send,
    F: Fn(u64, &mut A) -> Result<()> + Sync,
{
    let blocks = n.div_ceil(BLOCK as u64);
    let parts: Vec<Result<A>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = fresh();
            let lo = offset + b * BLOCK as u64;
            let hi = (lo + BLOCK as u64).min(offset + n);
            for k in lo..hi {
                work(k, &mut acc)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = fresh();
    for p in parts {
        merge(&mut total, &p?);
    }
    Ok(total)
}

/// Estimates of `P_mu(zeta > t)` at every checkpoint from one set of paths.
pub fn mc_survival_curve(model: &BranchingModel, mu: &[u64], checkpoints: &[f64], n: u64, seed: u64) -> Result<Vec<McEstimate>> {
    check_replicates(n)?;
    check_checkpoints(checkpoints)?;
    let engine = Engine::new(model, None, DEFAULT_POPULATION_CAP)?;
    check_init(mu, engine.n())?;
    let m = checkpoints.len();
    let acc = run_blocks(
        n,
        0,
        || vec![Moments::default(); m],
        |a, b| a.iter_mut().zip(b).for_each(|(x, y)| x.merge(y)),
        |k, acc| {
            let mut rng = replicate_rng(seed, k);
            engine.run(&mut rng, mu, checkpoints, |j, c| acc[j].push(if c.iter().any(|v| *v > 0) { 1.0 } else { 0.0 }))?;
            Ok(())
        },
    )?;
    Ok(acc.iter().map(|a| a.estimate()).collect())
}

pub fn mc_survival(model: &BranchingModel, mu: &[u64], t: f64, n: u64, seed: u64) -> Result<McEstimate> {
    Ok(mc_survival_curve(model, mu, &[t], n, seed)?[0])
}

/// What [`mc_laplace`] estimates: `E exp(-theta <f, X_t> / t)` for every
/// `theta`, or `E exp(-theta <f, X_t>)` when `divide_by_t` is off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceQuery {
    pub f: Vec<f64>,
    pub thetas: Vec<f64>,
    pub t: f64,
    pub divide_by_t: bool,
    /// Condition on `<1, X_t> > 0` by the ratio estimator.
    pub conditional: bool,
}

impl LaplaceQuery {
    fn check(&self, n: usize, imm: bool) -> Result<()> {
        crate::model::check_nonnegative_vector("f", &self.f, n)?;
        if self.thetas.iter().any(|th| !(*th >= 0.0 && th.is_finite())) {
            return Err(Error::InvalidInput("theta values must be finite and nonnegative".into()));
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(Error::InvalidInput(format!("time {} must be positive", self.t)));
        }
        if self.conditional && imm {
            return Err(Error::InvalidInput("conditional estimates are defined without immigration".into()));
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        if self.divide_by_t {
            1.0 / self.t
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone)]
enum LaplaceAcc {
    Plain(Vec<Moments>),
    Ratio(Vec<RatioSums>),
}

impl LaplaceAcc {
    fn fresh(m: usize, conditional: bool) -> Self {
        if conditional {
            LaplaceAcc::Ratio(vec![RatioSums::default(); m])
        } else {
            LaplaceAcc::Plain(vec![Moments::default(); m])
        }
    }

    fn merge(&mut self, o: &LaplaceAcc) {
        match (self, o) {
            (LaplaceAcc::Plain(a), LaplaceAcc::Plain(b)) => a.iter_mut().zip(b).for_each(|(x, y)| x.merge(y)),
            (LaplaceAcc::Ratio(a), LaplaceAcc::Ratio(b)) => a.iter_mut().zip(b).for_each(|(x, y)| x.merge(y)),
            _ => unreachable!("accumulator kinds are uniform"),
        }
    }

    fn survivors(&self) -> f64 {
        match self {
            LaplaceAcc::Ratio(r) => r.first().map_or(0.0, |r| r.s),
            LaplaceAcc::Plain(_) => 0.0,
        }
    }

    fn estimates(&self) -> Result<Vec<McEstimate>> {
        match self {
            LaplaceAcc::Plain(a) => Ok(a.iter().map(|m| m.estimate()).collect()),
            LaplaceAcc::Ratio(a) => a.iter().map(|r| r.estimate()).collect(),
        }
    }
}

fn laplace_replicate(engine: &Engine, q: &LaplaceQuery, mu: &[u64], seed: u64, k: u64, acc: &mut LaplaceAcc) -> Result<()> {
    let mut rng = replicate_rng(seed, k);
    let mut last = Vec::new();
    engine.run(&mut rng, mu, &[q.t], |_, c| last = c.to_vec())?;
    let pairing: f64 = last.iter().zip(&q.f).map(|(c, f)| *c as f64 * f).sum();
    let alive = last.iter().any(|c| *c > 0);
    let s = q.scale();
    match acc {
        LaplaceAcc::Plain(ms) => {
            for (m, th) in ms.iter_mut().zip(&q.thetas) {
                m.push((-th * pairing * s).exp());
            }
        }
        LaplaceAcc::Ratio(rs) => {
            for (r, th) in rs.iter_mut().zip(&q.thetas) {
                r.push((-th * pairing * s).exp(), alive);
            }
        }
    }
    Ok(())
}

/// Laplace-transform estimates, one per `theta` in the query.
pub fn mc_laplace(model: &BranchingModel, imm: Option<&ImmigrationLaw>, mu: &[u64], q: &LaplaceQuery, n: u64, seed: u64) -> Result<Vec<McEstimate>> {
    check_replicates(n)?;
    let engine = Engine::new(model, imm, DEFAULT_POPULATION_CAP)?;
    check_init(mu, engine.n())?;
    q.check(engine.n(), imm.is_some())?;
    let m = q.thetas.len();
    let acc = run_blocks(
        n,
        0,
        || LaplaceAcc::fresh(m, q.conditional),
        |a, b| a.merge(b),
        |k, acc| laplace_replicate(&engine, q, mu, seed, k, acc),
    )?;
    acc.estimates()
}

/// Conditional Laplace estimates from as many replicates as it takes to
/// observe `min_survivors` survivors (checked at block boundaries), capped
/// at `max_replicates`.
pub fn mc_laplace_until_survivors(
    model: &BranchingModel,
    mu: &[u64],
    q: &LaplaceQuery,
    min_survivors: u64,
    max_replicates: u64,
    seed: u64,
) -> Result<Vec<McEstimate>> {
    let engine = Engine::new(model, None, DEFAULT_POPULATION_CAP)?;
    check_init(mu, engine.n())?;
    let q = LaplaceQuery {
        conditional: true,
        ..q.clone()
    };
    q.check(engine.n(), false)?;
    let m = q.thetas.len();
    let round = (BLOCK * 64) as u64;
    let mut total = LaplaceAcc::fresh(m, true);
    let mut done = 0u64;
    while done < max_replicates && total.survivors() < min_survivors as f64 {
        let chunk = round.min(max_replicates - done);
        let blocks = chunk.div_ceil(BLOCK as u64);
        let parts: Vec<Result<LaplaceAcc>> = (0..blocks)
            .into_par_iter()
            .map(|b| {
                let mut acc = LaplaceAcc::fresh(m, true);
                let lo = done + b * BLOCK as u64;
                let hi = (lo + BLOCK as u64).min(done + chunk);
                for k in lo..hi {
                    laplace_replicate(&engine, &q, mu, seed, k, &mut acc)?;
                }
                Ok(acc)
            })
            .collect();
        for p in parts {
            if total.survivors() >= min_survivors as f64 {
                break;
            }
            total.merge(&p?);
            done += BLOCK as u64;
        }
        done = done.min(max_replicates);
    }
    total.estimates()
}

/// Estimate of `E <f, X_t>` (with immigration when given).
pub fn mc_first_moment(model: &BranchingModel, imm: Option<&ImmigrationLaw>, mu: &[u64], f: &[f64], t: f64, n: u64, seed: u64) -> Result<McEstimate> {
    check_replicates(n)?;
    let engine = Engine::new(model, imm, DEFAULT_POPULATION_CAP)?;
    check_init(mu, engine.n())?;
    crate::model::check_nonnegative_vector("f", f, engine.n())?;
    let acc = run_blocks(
        n,
        0,
        Moments::default,
        |a, b| a.merge(b),
        |k, acc| {
            let mut rng = replicate_rng(seed, k);
            let mut value = 0.0;
            engine.run(&mut rng, mu, &[t], |_, c| value = c.iter().zip(f).map(|(c, f)| *c as f64 * f).sum())?;
            acc.push(value);
            Ok(())
        },
    )?;
    Ok(acc.estimate())
}

/// Raw per-replicate counts as CSV `replicate,checkpoint,type,count`,
/// stopping once `row_cap` rows are written. Returns the CSV and whether
/// it was truncated.
pub fn replicate_csv(
    model: &BranchingModel,
    imm: Option<&ImmigrationLaw>,
    init: &[u64],
    checkpoints: &[f64],
    n: u64,
    seed: u64,
    row_cap: usize,
) -> Result<(String, bool)> {
    check_checkpoints(checkpoints)?;
    let engine = Engine::new(model, imm, DEFAULT_POPULATION_CAP)?;
    check_init(init, engine.n())?;
    let mut out = String::from("replicate,checkpoint,type,count\n");
    let mut rows = 0usize;
    for k in 0..n {
        let mut rng = replicate_rng(seed, k);
        let mut states: Vec<Vec<u64>> = Vec::new();
        engine.run(&mut rng, init, checkpoints, |_, c| states.push(c.to_vec()))?;
        for (j, c) in states.iter().enumerate() {
            for (x, v) in c.iter().enumerate() {
                if rows == row_cap {
                    return Ok((out, true));
                }
                let _ = writeln!(out, "{k},{j},{x},{v}");
                rows += 1;
            }
        }
    }
    Ok((out, false))
}
