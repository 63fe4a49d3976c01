//! Distinguishing experiments: the same decision procedure runs against the
//! real construction and against the simulated ideal object, coupled per
//! trial through shared seeds, and the gap between output rates is
//! estimated with confidence intervals.

use crate::attack::{build_system, predicted_output, AttackError};
use crate::feistel::{self, ConstructionParams, PublicRandomness};
use crate::gf2::Gf2Vec;
use crate::oracle::{OracleError, OracleTable, SubversionProgram, SubvertedOracle};
use crate::rng::{self, Stream};
use crate::sim::{IdealBackend, SimError, SimulatorState};
use crate::stats::wilson95;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::mpsc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    /// The simulated world refused to continue.
    #[error("ideal-world abort: {0}")]
    Abort(String),
    #[error("query budget exhausted at {0}")]
    QueryBudget(u64),
    #[error("malformed recording: {0}")]
    Format(String),
    #[error("distinguisher failure: {0}")]
    Distinguisher(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

impl From<SimError> for WorldError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Oracle(o) => WorldError::Oracle(o),
            other => WorldError::Abort(other.to_string()),
        }
    }
}

/// Query surface a distinguisher sees. Round inputs are in table
/// coordinates; the real implementation maps them through the public
/// encodings, the ideal one answers from the simulator.
pub trait WorldOracles {
    fn n(&self) -> usize;
    fn ell(&self) -> usize;
    fn randomness(&self) -> &PublicRandomness;
    fn queries_used(&self) -> u64;
    fn cf(&mut self, i: usize, x: &Gf2Vec) -> Result<Gf2Vec, WorldError>;
    fn cf_tilde(&mut self, i: usize, x: &Gf2Vec) -> Result<Gf2Vec, WorldError>;
    fn perm(&mut self, x0: &Gf2Vec, x1: &Gf2Vec) -> Result<(Gf2Vec, Gf2Vec), WorldError>;
    fn perm_inv(&mut self, a: &Gf2Vec, b: &Gf2Vec) -> Result<(Gf2Vec, Gf2Vec), WorldError>;
}

pub struct RealWorld {
    oracle: SubvertedOracle,
    rand: PublicRandomness,
    used: u64,
    limit: u64,
}

impl RealWorld {
    pub fn new(
        rand: PublicRandomness,
        program: SubversionProgram,
        budget: usize,
        table_seed: u64,
        limit: u64,
    ) -> Self {
        let table = OracleTable::new(rand.n(), rand.ell(), table_seed);
        RealWorld { oracle: SubvertedOracle::new(table, program, budget), rand, used: 0, limit }
    }

    fn charge(&mut self) -> Result<(), WorldError> {
        if self.used >= self.limit {
            return Err(WorldError::QueryBudget(self.limit));
        }
        self.used += 1;
        Ok(())
    }
}

impl WorldOracles for RealWorld {
    fn n(&self) -> usize {
        self.rand.n()
    }

    fn ell(&self) -> usize {
        self.rand.ell()
    }

    fn randomness(&self) -> &PublicRandomness {
        &self.rand
    }

    fn queries_used(&self) -> u64 {
        self.used
    }

    fn cf(&mut self, i: usize, x: &Gf2Vec) -> Result<Gf2Vec, WorldError> {
        self.charge()?;
        Ok(feistel::cf(&mut self.oracle, &self.rand, i, x)?)
    }

    fn cf_tilde(&mut self, i: usize, x: &Gf2Vec) -> Result<Gf2Vec, WorldError> {
        self.charge()?;
        Ok(feistel::cf_tilde(&mut self.oracle, &self.rand, i, x)?)
    }

    fn perm(&mut self, x0: &Gf2Vec, x1: &Gf2Vec) -> Result<(Gf2Vec, Gf2Vec), WorldError> {
        self.charge()?;
        Ok(feistel::evaluate(&mut self.oracle, &self.rand, x0, x1)?)
    }

    fn perm_inv(&mut self, a: &Gf2Vec, b: &Gf2Vec) -> Result<(Gf2Vec, Gf2Vec), WorldError> {
        self.charge()?;
        Ok(feistel::invert(&mut self.oracle, &self.rand, a, b)?)
    }
}

pub struct IdealWorld {
    sim: SimulatorState,
    used: u64,
    limit: u64,
}

impl IdealWorld {
    pub fn new(
        params: ConstructionParams,
        rand: PublicRandomness,
        program: SubversionProgram,
        budget: usize,
        seed: u64,
        backend: IdealBackend,
        limit: u64,
    ) -> Result<Self, WorldError> {
        let sim = SimulatorState::new(params, rand, program, budget, seed, backend)?;
        Ok(IdealWorld { sim, used: 0, limit })
    }

    pub fn simulator(&self) -> &SimulatorState {
        &self.sim
    }

    fn charge(&mut self) -> Result<(), WorldError> {
        if self.used >= self.limit {
            return Err(WorldError::QueryBudget(self.limit));
        }
        self.used += 1;
        Ok(())
    }
}

impl WorldOracles for IdealWorld {
    fn n(&self) -> usize {
        self.sim.params().n
    }

    fn ell(&self) -> usize {
        self.sim.params().ell
    }

    fn randomness(&self) -> &PublicRandomness {
        self.sim.randomness()
    }

    fn queries_used(&self) -> u64 {
        self.used
    }

    fn cf(&mut self, i: usize, x: &Gf2Vec) -> Result<Gf2Vec, WorldError> {
        self.charge()?;
        Ok(self.sim.cf_query(i, x)?)
    }

    fn cf_tilde(&mut self, i: usize, x: &Gf2Vec) -> Result<Gf2Vec, WorldError> {
        self.charge()?;
        Ok(self.sim.cf_tilde_query(i, x)?)
    }

    fn perm(&mut self, x0: &Gf2Vec, x1: &Gf2Vec) -> Result<(Gf2Vec, Gf2Vec), WorldError> {
        self.charge()?;
        Ok(self.sim.p_query(x0, x1)?)
    }

    fn perm_inv(&mut self, a: &Gf2Vec, b: &Gf2Vec) -> Result<(Gf2Vec, Gf2Vec), WorldError> {
        self.charge()?;
        Ok(self.sim.p_inverse_query(a, b)?)
    }
}

// ---- recordings ----

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecordedQuery {
    Cf { i: usize, x: String, y: String },
    CfTilde { i: usize, x: String, y: String },
    Perm { x0: String, x1: String, y0: String, y1: String },
    PermInv { a: String, b: String, y0: String, y1: String },
}

/// Pass-through world that logs every query with its answer.
pub struct RecordingWorld<'a> {
    inner: &'a mut dyn WorldOracles,
    pub log: Vec<RecordedQuery>,
}

impl<'a> RecordingWorld<'a> {
    pub fn new(inner: &'a mut dyn WorldOracles) -> Self {
        RecordingWorld { inner, log: Vec::new() }
    }

    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for q in &self.log {
            out.push_str(&serde_json::to_string(q).expect("recordings serialize"));
            out.push('\n');
        }
        out
    }
}

impl WorldOracles for RecordingWorld<'_> {
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn ell(&self) -> usize {
        self.inner.ell()
    }

    fn randomness(&self) -> &PublicRandomness {
        self.inner.randomness()
    }

    fn queries_used(&self) -> u64 {
        self.inner.queries_used()
    }

    fn cf(&mut self, i: usize, x: &Gf2Vec) -> Result<Gf2Vec, WorldError> {
        let y = self.inner.cf(i, x)?;
        self.log.push(RecordedQuery::Cf { i, x: x.to_hex(), y: y.to_hex() });
        Ok(y)
    }

    fn cf_tilde(&mut self, i: usize, x: &Gf2Vec) -> Result<Gf2Vec, WorldError> {
        let y = self.inner.cf_tilde(i, x)?;
        self.log.push(RecordedQuery::CfTilde { i, x: x.to_hex(), y: y.to_hex() });
        Ok(y)
    }

    fn perm(&mut self, x0: &Gf2Vec, x1: &Gf2Vec) -> Result<(Gf2Vec, Gf2Vec), WorldError> {
        let (y0, y1) = self.inner.perm(x0, x1)?;
        self.log.push(RecordedQuery::Perm {
            x0: x0.to_hex(),
            x1: x1.to_hex(),
            y0: y0.to_hex(),
            y1: y1.to_hex(),
        });
        Ok((y0, y1))
    }

    fn perm_inv(&mut self, a: &Gf2Vec, b: &Gf2Vec) -> Result<(Gf2Vec, Gf2Vec), WorldError> {
        let (y0, y1) = self.inner.perm_inv(a, b)?;
        self.log.push(RecordedQuery::PermInv {
            a: a.to_hex(),
            b: b.to_hex(),
            y0: y0.to_hex(),
            y1: y1.to_hex(),
        });
        Ok((y0, y1))
    }
}

// ---- distinguishers ----

/// A deterministic decision procedure over the query surface. All coin
/// flips must come from the provided stream so coupled runs replay them.
pub trait Distinguisher {
    fn name(&self) -> &'static str;
    fn run(&self, world: &mut dyn WorldOracles, rng: &mut Stream) -> Result<bool, WorldError>;
}

/// Walk every round of a random start pair through the subverted interface
/// and accept when the ideal object agrees with the walked endpoints.
pub struct ChainWalk;

impl Distinguisher for ChainWalk {
    fn name(&self) -> &'static str {
        "chain_walk"
    }

    fn run(&self, world: &mut dyn WorldOracles, rng: &mut Stream) -> Result<bool, WorldError> {
        let n = world.n();
        let ell = world.ell();
        let x0 = Gf2Vec::random(n, rng);
        let x1 = Gf2Vec::random(n, rng);
        let mut prev = x0.clone();
        let mut cur = x1.clone();
        for i in 1..=ell {
            let v = world.cf_tilde(i, &cur)?;
            let nxt = prev.xor(&v);
            prev = std::mem::replace(&mut cur, nxt);
        }
        let got = world.perm(&x0, &x1)?;
        Ok(got == (prev, cur))
    }
}

/// Issue exactly `queries` scattered plain round queries and output the
/// parity of all answer bits.
pub struct RandomProbe {
    pub queries: u64,
}

impl Distinguisher for RandomProbe {
    fn name(&self) -> &'static str {
        "random_probe"
    }

    fn run(&self, world: &mut dyn WorldOracles, rng: &mut Stream) -> Result<bool, WorldError> {
        let n = world.n();
        let ell = world.ell();
        let mut parity = 0usize;
        for _ in 0..self.queries {
            let i = rng.gen_range(1..=ell as u64) as usize;
            let x = Gf2Vec::random(n, rng);
            let v = world.cf(i, &x)?;
            parity ^= v.weight() & 1;
        }
        Ok(parity == 1)
    }
}

/// Solve the public encodings for a collapsing input pair and accept when
/// the ideal object returns the alternation image. One query total.
pub struct CollapseProbe {
    pub lambda: usize,
}

impl Distinguisher for CollapseProbe {
    fn name(&self) -> &'static str {
        "attack"
    }

    fn run(&self, world: &mut dyn WorldOracles, _rng: &mut Stream) -> Result<bool, WorldError> {
        let ell = world.ell();
        let inst = build_system(world.randomness(), self.lambda)
            .map_err(|e| WorldError::Distinguisher(e.to_string()))?;
        match inst.find_collapse_pair(world.randomness()) {
            Ok((x0, x1)) => {
                let want = predicted_output(ell, &x0, &x1);
                let got = world.perm(&x0, &x1)?;
                Ok(got == want)
            }
            Err(AttackError::NoSolution) => Ok(false),
            Err(e) => Err(WorldError::Distinguisher(e.to_string())),
        }
    }
}

/// Re-issue a recorded query sequence and accept iff every answer matches.
pub struct Replay {
    pub queries: Vec<RecordedQuery>,
}

impl Replay {
    pub fn from_json_lines(text: &str) -> Result<Self, WorldError> {
        let mut queries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let q: RecordedQuery = serde_json::from_str(line)
                .map_err(|e| WorldError::Format(format!("line {}: {e}", lineno + 1)))?;
            queries.push(q);
        }
        Ok(Replay { queries })
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_lines(&text).map_err(|e| HarnessError::Config(e.to_string()))
    }
}

impl Distinguisher for Replay {
    fn name(&self) -> &'static str {
        "replay"
    }

    fn run(&self, world: &mut dyn WorldOracles, _rng: &mut Stream) -> Result<bool, WorldError> {
        let n = world.n();
        let vec = |hex: &str| -> Result<Gf2Vec, WorldError> {
            Gf2Vec::from_hex(n, hex).map_err(|e| WorldError::Format(e.to_string()))
        };
        let mut all = true;
        for q in &self.queries {
            let ok = match q {
                RecordedQuery::Cf { i, x, y } => world.cf(*i, &vec(x)?)? == vec(y)?,
                RecordedQuery::CfTilde { i, x, y } => world.cf_tilde(*i, &vec(x)?)? == vec(y)?,
                RecordedQuery::Perm { x0, x1, y0, y1 } => {
                    world.perm(&vec(x0)?, &vec(x1)?)? == (vec(y0)?, vec(y1)?)
                }
                RecordedQuery::PermInv { a, b, y0, y1 } => {
                    world.perm_inv(&vec(a)?, &vec(b)?)? == (vec(y0)?, vec(y1)?)
                }
            };
            all &= ok;
        }
        Ok(all)
    }
}

// ---- experiments ----

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("trial {trial}: {message}")]
    Trial { trial: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone)]
pub struct ExperimentConfig {
    pub params: ConstructionParams,
    pub program: SubversionProgram,
    pub budget: usize,
    pub backend: IdealBackend,
    pub trials: u64,
    /// Distinguisher query allowance per world per trial.
    pub query_limit: u64,
    pub seed: u64,
    pub workers: usize,
    pub keep_trial_records: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub real_out: bool,
    pub ideal_out: bool,
    pub ideal_abort: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub distinguisher: String,
    pub trials: u64,
    pub real_ones: u64,
    pub ideal_ones: u64,
    pub real_rate: f64,
    pub ideal_rate: f64,
    pub advantage: f64,
    pub real_wilson: (f64, f64),
    pub ideal_wilson: (f64, f64),
    pub ideal_aborts: u64,
    pub records: Vec<TrialRecord>,
}

fn run_one_trial<D: Distinguisher + ?Sized>(
    cfg: &ExperimentConfig,
    d: &D,
    trial: u64,
) -> Result<TrialRecord, HarnessError> {
    let n = cfg.params.n;
    let ell = cfg.params.ell;
    let tseed = rng::derive64(cfg.seed, "trial", &[&trial.to_le_bytes()]);
    let enc_seed = rng::derive64(tseed, "enc", &[]);

    let rand = PublicRandomness::sample(n, ell, enc_seed);
    let mut real = RealWorld::new(
        rand,
        cfg.program.clone(),
        cfg.budget,
        rng::derive64(tseed, "real-f", &[]),
        cfg.query_limit,
    );
    let mut drng = rng::stream(tseed, "dist", &[]);
    let real_out = d
        .run(&mut real, &mut drng)
        .map_err(|e| HarnessError::Trial { trial, message: format!("real world: {e}") })?;

    let rand = PublicRandomness::sample(n, ell, enc_seed);
    let mut ideal = IdealWorld::new(
        cfg.params.clone(),
        rand,
        cfg.program.clone(),
        cfg.budget,
        tseed,
        cfg.backend,
        cfg.query_limit,
    )
    .map_err(|e| HarnessError::Trial { trial, message: e.to_string() })?;
    let mut drng = rng::stream(tseed, "dist", &[]);
    let (ideal_out, ideal_abort) = match d.run(&mut ideal, &mut drng) {
        Ok(b) => (b, None),
        Err(WorldError::Abort(msg)) => (false, Some(msg)),
        Err(e) => {
            return Err(HarnessError::Trial { trial, message: format!("ideal world: {e}") })
        }
    };
    Ok(TrialRecord { trial, real_out, ideal_out, ideal_abort })
}

/// Coupled trials of one distinguisher against both worlds, fanned out over
/// a fixed worker pool. Results are deterministic in the seed regardless of
/// worker count.
pub fn run_distinguishing_experiment<D: Distinguisher + Sync>(
    cfg: &ExperimentConfig,
    d: &D,
) -> Result<ExperimentReport, HarnessError> {
    if cfg.trials == 0 {
        return Err(HarnessError::Config("at least one trial".into()));
    }
    if cfg.query_limit == 0 {
        return Err(HarnessError::Config("query limit must be positive".into()));
    }
    let workers = cfg.workers.max(1).min(cfg.trials as usize);
    let mut records: Vec<TrialRecord> = Vec::with_capacity(cfg.trials as usize);
    let mut first_err: Option<HarnessError> = None;

    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<Result<TrialRecord, HarnessError>>();
        for w in 0..workers {
            let tx = tx.clone();
            scope.spawn(move || {
                let mut t = w as u64;
                while t < cfg.trials {
                    let rec = run_one_trial(cfg, d, t);
                    if tx.send(rec).is_err() {
                        return;
                    }
                    t += workers as u64;
                }
            });
        }
        drop(tx);
        for rec in rx {
            match rec {
                Ok(r) => records.push(r),
                Err(e) => {
                    if first_err.is_none() {
                        first_err = Some(e);
                    }
                }
            }
        }
    });
    if let Some(e) = first_err {
        return Err(e);
    }
    records.sort_by_key(|r| r.trial);

    let real_ones = records.iter().filter(|r| r.real_out).count() as u64;
    let ideal_ones = records.iter().filter(|r| r.ideal_out).count() as u64;
    let ideal_aborts = records.iter().filter(|r| r.ideal_abort.is_some()).count() as u64;
    let trials = cfg.trials;
    let real_rate = real_ones as f64 / trials as f64;
    let ideal_rate = ideal_ones as f64 / trials as f64;
    Ok(ExperimentReport {
        distinguisher: d.name().to_string(),
        trials,
        real_ones,
        ideal_ones,
        real_rate,
        ideal_rate,
        advantage: real_rate - ideal_rate,
        real_wilson: wilson95(real_ones, trials),
        ideal_wilson: wilson95(ideal_ones, trials),
        ideal_aborts,
        records: if cfg.keep_trial_records { records } else { Vec::new() },
    })
}

// ---- simulator footprint ----

#[derive(Clone, Debug, Serialize)]
pub struct EfficiencyRun {
    pub external: u64,
    pub final_len: usize,
    /// Largest observed table-size over allowance ratio.
    pub max_ratio: f64,
    pub violations: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EfficiencyReport {
    /// Per-query table allowance.
    pub slope: f64,
    pub total_violations: u64,
    pub runs: Vec<EfficiencyRun>,
}

/// Drive fresh simulators with full chain walks and compare the public
/// table footprint against the per-query allowance.
pub fn efficiency_probe(
    params: &ConstructionParams,
    program: &SubversionProgram,
    budget: usize,
    runs: u64,
    walks_per_run: usize,
    seed: u64,
) -> Result<EfficiencyReport, HarnessError> {
    let mut out_runs = Vec::with_capacity(runs as usize);
    let mut slope = 0.0;
    let mut total = 0u64;
    for rix in 0..runs {
        let rseed = rng::derive64(seed, "effrun", &[&rix.to_le_bytes()]);
        let rand = PublicRandomness::sample(params.n, params.ell, rng::derive64(rseed, "enc", &[]));
        let mut sim = SimulatorState::new(
            params.clone(),
            rand,
            program.clone(),
            budget,
            rseed,
            IdealBackend::Permutation,
        )
        .map_err(|e| HarnessError::Config(e.to_string()))?;
        let mut st = rng::stream(rseed, "eff-walk", &[]);
        for _ in 0..walks_per_run {
            let x0 = Gf2Vec::random(params.n, &mut st);
            let x1 = Gf2Vec::random(params.n, &mut st);
            let mut prev = x0.clone();
            let mut cur = x1.clone();
            for i in 1..=params.ell {
                let v = sim.cf_tilde_query(i, &cur).map_err(|e| HarnessError::Trial {
                    trial: rix,
                    message: e.to_string(),
                })?;
                let nxt = prev.xor(&v);
                prev = std::mem::replace(&mut cur, nxt);
            }
            sim.p_query(&x0, &x1)
                .map_err(|e| HarnessError::Trial { trial: rix, message: e.to_string() })?;
        }
        slope = sim.efficiency_slope();
        let max_ratio = sim
            .size_series
            .iter()
            .map(|(k, len)| *len as f64 / (slope * *k as f64))
            .fold(0.0, f64::max);
        total += sim.efficiency_violations;
        out_runs.push(EfficiencyRun {
            external: sim.external_queries,
            final_len: sim.table_len(),
            max_ratio,
            violations: sim.efficiency_violations,
        });
    }
    Ok(EfficiencyReport { slope, total_violations: total, runs: out_runs })
}
