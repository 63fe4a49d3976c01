//! Lazily sampled round-oracle families and subversion programs.
//!
//! An `OracleTable` models a family of independent uniform functions
//! F_1..F_ell from n bits to n bits. Values are keyed draws: the table's
//! seed plus the point determine the value, so two tables with the same seed
//! agree regardless of query order.
//!
//! A `SubversionProgram` is a deterministic procedure that, given oracle
//! access to the family, answers round queries in place of it. The wrapped
//! point itself always counts as evaluated, and its unsubverted value is
//! forced into existence before the program runs; the forced query does not
//! count against the program's per-invocation query budget.

use crate::gf2::Gf2Vec;
use crate::rng;
use crate::stats::wilson95;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("round index {i} out of range 1..={ell}")]
    Index { i: usize, ell: usize },
    #[error("subversion program exceeded its query budget of {budget}")]
    Budget { budget: usize },
    #[error("no recorded evaluation at round {i} for {x}")]
    NotEvaluated { i: usize, x: String },
    #[error("bad parameter: {0}")]
    Parameter(String),
}

/// Points queried while evaluating one subverted value.
pub type QuerySet = BTreeSet<(usize, Gf2Vec)>;

/// Family of ell independent lazily sampled n-bit functions.
pub struct OracleTable {
    n: usize,
    ell: usize,
    seed: u64,
    entries: BTreeMap<(usize, Gf2Vec), Gf2Vec>,
}

impl OracleTable {
    pub fn new(n: usize, ell: usize, seed: u64) -> Self {
        assert!(n >= 1 && ell >= 1);
        OracleTable { n, ell, seed, entries: BTreeMap::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn check_point(&self, i: usize, x: &Gf2Vec) -> Result<(), OracleError> {
        if i < 1 || i > self.ell {
            return Err(OracleError::Index { i, ell: self.ell });
        }
        if x.len() != self.n {
            return Err(OracleError::Parameter(format!(
                "input has {} bits, oracle takes {}",
                x.len(),
                self.n
            )));
        }
        Ok(())
    }

    /// F_i(x), sampling it on first touch.
    pub fn query(&mut self, i: usize, x: &Gf2Vec) -> Result<Gf2Vec, OracleError> {
        self.check_point(i, x)?;
        if let Some(v) = self.entries.get(&(i, x.clone())) {
            return Ok(v.clone());
        }
        let mut st = rng::stream(self.seed, "f", &[&(i as u64).to_le_bytes(), &x.to_bytes()]);
        let v = Gf2Vec::random(self.n, &mut st);
        self.entries.insert((i, x.clone()), v.clone());
        Ok(v)
    }

    /// Line-oriented dump, one `i,x_hex,y_hex` per memoized entry.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for ((i, x), y) in &self.entries {
            let _ = writeln!(out, "{},{},{}", i, x.to_hex(), y.to_hex());
        }
        out
    }
}

type CustomFn =
    dyn Fn(&mut ProgramCtx<'_>, usize, &Gf2Vec) -> Result<Gf2Vec, OracleError> + Send + Sync;

/// Deterministic rewiring of an oracle family.
#[derive(Clone)]
pub enum SubversionProgram {
    /// Pass-through: answers with the unsubverted value.
    Honest,
    /// Zero output whenever the first `lambda` input bits are zero;
    /// unsubverted value otherwise. Always makes exactly one base query.
    PrefixZero { lambda: usize },
    /// Fixed payload at one trigger input, honest elsewhere.
    Trigger { t: Gf2Vec, payload: Gf2Vec },
    /// Arbitrary deterministic procedure, for fixtures.
    Custom(Arc<CustomFn>),
}

impl SubversionProgram {
    pub fn honest() -> Self {
        SubversionProgram::Honest
    }

    pub fn prefix_zero(lambda: usize, n: usize) -> Result<Self, OracleError> {
        if lambda > n {
            return Err(OracleError::Parameter(format!(
                "prefix width {lambda} exceeds input width {n}"
            )));
        }
        Ok(SubversionProgram::PrefixZero { lambda })
    }

    pub fn trigger(t: Gf2Vec, payload: Gf2Vec, n: usize) -> Result<Self, OracleError> {
        if t.len() != n || payload.len() != n {
            return Err(OracleError::Parameter(format!(
                "trigger point and payload must be {n} bits"
            )));
        }
        Ok(SubversionProgram::Trigger { t, payload })
    }

    pub fn custom(
        f: impl Fn(&mut ProgramCtx<'_>, usize, &Gf2Vec) -> Result<Gf2Vec, OracleError>
            + Send
            + Sync
            + 'static,
    ) -> Self {
        SubversionProgram::Custom(Arc::new(f))
    }

    /// Parse a CLI-style spec: `honest`, `prefix_zero:LAMBDA`,
    /// `trigger:T_HEX:PAYLOAD_HEX`.
    pub fn parse(spec: &str, n: usize) -> Result<Self, OracleError> {
        let mut parts = spec.split(':');
        match parts.next().unwrap_or("") {
            "honest" => Ok(Self::honest()),
            "prefix_zero" => {
                let lambda = parts
                    .next()
                    .ok_or_else(|| OracleError::Parameter("prefix_zero needs a width".into()))?
                    .parse::<usize>()
                    .map_err(|e| OracleError::Parameter(format!("bad prefix width: {e}")))?;
                Self::prefix_zero(lambda, n)
            }
            "trigger" => {
                let t_hex = parts
                    .next()
                    .ok_or_else(|| OracleError::Parameter("trigger needs t and payload".into()))?;
                let p_hex = parts
                    .next()
                    .ok_or_else(|| OracleError::Parameter("trigger needs t and payload".into()))?;
                let t = Gf2Vec::from_hex(n, t_hex)
                    .map_err(|e| OracleError::Parameter(e.to_string()))?;
                let payload = Gf2Vec::from_hex(n, p_hex)
                    .map_err(|e| OracleError::Parameter(e.to_string()))?;
                Self::trigger(t, payload, n)
            }
            other => Err(OracleError::Parameter(format!("unknown subverter '{other}'"))),
        }
    }

    fn eval(
        &self,
        ctx: &mut ProgramCtx<'_>,
        i: usize,
        x: &Gf2Vec,
    ) -> Result<Gf2Vec, OracleError> {
        match self {
            SubversionProgram::Honest => ctx.query(i, x),
            SubversionProgram::PrefixZero { lambda } => {
                let base = ctx.query(i, x)?;
                if x.prefix_is_zero(*lambda) {
                    Ok(Gf2Vec::zero(x.len()))
                } else {
                    Ok(base)
                }
            }
            SubversionProgram::Trigger { t, payload } => {
                if x == t {
                    Ok(payload.clone())
                } else {
                    ctx.query(i, x)
                }
            }
            SubversionProgram::Custom(f) => f(ctx, i, x),
        }
    }
}

/// Budgeted, logged oracle access handed to a running program.
pub struct ProgramCtx<'a> {
    base: &'a mut dyn FnMut(usize, &Gf2Vec) -> Result<Gf2Vec, OracleError>,
    used: usize,
    budget: usize,
    log: &'a mut QuerySet,
}

impl ProgramCtx<'_> {
    pub fn query(&mut self, j: usize, y: &Gf2Vec) -> Result<Gf2Vec, OracleError> {
        if self.used == self.budget {
            return Err(OracleError::Budget { budget: self.budget });
        }
        self.used += 1;
        let v = (self.base)(j, y)?;
        self.log.insert((j, y.clone()));
        Ok(v)
    }
}

/// Run a program at (i, x) against an arbitrary base oracle, enforcing the
/// budget and the always-evaluated convention for the wrapped point. Returns
/// the subverted value and the query set (at most budget + 1 points).
pub fn run_program(
    program: &SubversionProgram,
    budget: usize,
    i: usize,
    x: &Gf2Vec,
    base: &mut dyn FnMut(usize, &Gf2Vec) -> Result<Gf2Vec, OracleError>,
) -> Result<(Gf2Vec, QuerySet), OracleError> {
    let mut log = QuerySet::new();
    base(i, x)?;
    log.insert((i, x.clone()));
    let out = {
        let mut ctx = ProgramCtx { base, used: 0, budget, log: &mut log };
        program.eval(&mut ctx, i, x)?
    };
    if out.len() != x.len() {
        return Err(OracleError::Parameter(format!(
            "program returned {} bits for a {}-bit oracle",
            out.len(),
            x.len()
        )));
    }
    Ok((out, log))
}

/// Oracle family paired with a subversion program; memoizes subverted values
/// and per-point query sets.
pub struct SubvertedOracle {
    table: OracleTable,
    program: SubversionProgram,
    budget: usize,
    subverted: BTreeMap<(usize, Gf2Vec), Gf2Vec>,
    query_log: BTreeMap<(usize, Gf2Vec), QuerySet>,
}

impl SubvertedOracle {
    pub fn new(table: OracleTable, program: SubversionProgram, budget: usize) -> Self {
        SubvertedOracle { table, program, budget, subverted: BTreeMap::new(), query_log: BTreeMap::new() }
    }

    pub fn n(&self) -> usize {
        self.table.n()
    }

    pub fn ell(&self) -> usize {
        self.table.ell()
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn program(&self) -> &SubversionProgram {
        &self.program
    }

    pub fn table(&self) -> &OracleTable {
        &self.table
    }

    /// Unsubverted F_i(x).
    pub fn query_f(&mut self, i: usize, x: &Gf2Vec) -> Result<Gf2Vec, OracleError> {
        self.table.query(i, x)
    }

    /// Subverted value at (i, x), running the program on first touch.
    pub fn query_f_tilde(&mut self, i: usize, x: &Gf2Vec) -> Result<Gf2Vec, OracleError> {
        self.table.check_point(i, x)?;
        if let Some(v) = self.subverted.get(&(i, x.clone())) {
            return Ok(v.clone());
        }
        let table = &mut self.table;
        let (out, log) = run_program(&self.program, self.budget, i, x, &mut |j, y| {
            table.query(j, y)
        })?;
        self.subverted.insert((i, x.clone()), out.clone());
        self.query_log.insert((i, x.clone()), log);
        Ok(out)
    }

    /// Query set recorded for a prior subverted evaluation.
    pub fn query_log_lookup(&self, i: usize, x: &Gf2Vec) -> Result<&QuerySet, OracleError> {
        self.query_log
            .get(&(i, x.clone()))
            .ok_or_else(|| OracleError::NotEvaluated { i, x: x.to_hex() })
    }

    pub fn dump_table(&self) -> String {
        self.table.dump()
    }

    /// One `i,x_hex,j,y_hex` line per recorded query-set member.
    pub fn dump_query_log(&self) -> String {
        let mut out = String::new();
        for ((i, x), set) in &self.query_log {
            for (j, y) in set {
                let _ = writeln!(out, "{},{},{},{}", i, x.to_hex(), j, y.to_hex());
            }
        }
        out
    }
}

/// Result of sampling the disagreement rate between F and its subversion.
#[derive(Debug, Clone)]
pub struct EpsilonEstimate {
    pub estimate: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    pub samples: u64,
    pub disagreements: u64,
    pub exhaustive: bool,
}

/// Estimate the fraction of points where the subverted value differs from
/// the unsubverted one. Sweeps the whole domain exactly when the sample
/// budget covers it; Monte Carlo with a Wilson interval otherwise.
pub fn estimate_epsilon(
    o: &mut SubvertedOracle,
    samples: u64,
    seed: u64,
) -> Result<EpsilonEstimate, OracleError> {
    let n = o.n();
    let ell = o.ell() as u64;
    let domain = (n < 63).then(|| ell.checked_mul(1u64 << n)).flatten();
    if let Some(total) = domain.filter(|&t| t <= samples) {
        let mut bad = 0u64;
        for i in 1..=o.ell() {
            for ix in 0u64..1 << n {
                let x = index_to_vec(n, ix);
                let f = o.query_f(i, &x)?;
                let ft = o.query_f_tilde(i, &x)?;
                if f != ft {
                    bad += 1;
                }
            }
        }
        let est = bad as f64 / total as f64;
        return Ok(EpsilonEstimate {
            estimate: est,
            wilson_low: est,
            wilson_high: est,
            samples: total,
            disagreements: bad,
            exhaustive: true,
        });
    }
    let mut bad = 0u64;
    let mut st = rng::stream(seed, "eps-mc", &[]);
    for _ in 0..samples {
        let i = 1 + (rand::Rng::gen_range(&mut st, 0..ell) as usize);
        let x = Gf2Vec::random(n, &mut st);
        let f = o.query_f(i, &x)?;
        let ft = o.query_f_tilde(i, &x)?;
        if f != ft {
            bad += 1;
        }
    }
    let (lo, hi) = wilson95(bad, samples);
    Ok(EpsilonEstimate {
        estimate: bad as f64 / samples as f64,
        wilson_low: lo,
        wilson_high: hi,
        samples,
        disagreements: bad,
        exhaustive: false,
    })
}

/// Enumerate the n-bit domain: index bit k maps to vector bit k.
pub fn index_to_vec(n: usize, idx: u64) -> Gf2Vec {
    let mut v = Gf2Vec::zero(n);
    for k in 0..n {
        if idx >> k & 1 == 1 {
            v.set(k, true);
        }
    }
    v
}
