//! Chain-completing simulator for the ideal world.
//!
//! The simulator answers round queries from lazily sampled per-round tables
//! while watching those tables for freshly completed detection windows: w
//! consecutive defined positions linked by the Feistel relation. A window
//! whose adjacent pairs are all new and whose members are all honestly
//! subverted gets completed into a full cycle through the ideal object, with
//! two adjacent positions adapted so the cycle closes exactly. The adapt
//! position sits at the low slot when the window misses the protected middle
//! band and at the high slot otherwise.
//!
//! All lazy draws are keyed by (seed, round, input), so two runs with the
//! same seed agree value-for-value regardless of query order.

use crate::feistel::{ConstructionParams, PublicRandomness};
use crate::gf2::Gf2Vec;
use crate::oracle::{run_program, OracleError, QuerySet, SubversionProgram};
use crate::rng;
use serde::Serialize;
use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use thiserror::Error;

/// Cap on rejection attempts when sampling a fresh permutation image.
pub const PERM_RETRY_CAP: usize = 64;

/// Per-external-query allowance on the public table footprint.
pub fn efficiency_allowance(params: &ConstructionParams, budget: usize) -> f64 {
    1.1 * params.ell as f64 * budget as f64 / params.w as f64 + 1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum AbortKind {
    Freshness,
    Honesty,
    CrossQuery,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("simulator abort: {0:?}")]
    Abort(AbortKind),
    #[error("permutation sampling exhausted {0} retries")]
    RetryExhausted(usize),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Which ideal object closes the cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IdealBackend {
    /// Lazy two-sided permutation: images are rejection-sampled fresh.
    Permutation,
    /// Two-sided random function: images are drawn directly and inserting
    /// the reverse direction may displace a stale entry.
    RandomFunction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dir {
    Down,
    Up,
}

type Pair = (Gf2Vec, Gf2Vec);

/// Two-directional pair table shared by both ideal backends.
#[derive(Default)]
pub struct PairTable {
    down: HashMap<Pair, Pair>,
    up: HashMap<Pair, Pair>,
    pub overwrite_count: u64,
}

impl PairTable {
    pub fn get(&self, dir: Dir, key: &Pair) -> Option<&Pair> {
        match dir {
            Dir::Down => self.down.get(key),
            Dir::Up => self.up.get(key),
        }
    }

    pub fn len_down(&self) -> usize {
        self.down.len()
    }

    /// Insert key -> img in the given direction and the reverse entry for
    /// img. When the reverse slot is taken the stale entry is displaced and
    /// counted; the displaced partner's own forward entry stays behind.
    fn insert_two_sided(&mut self, dir: Dir, key: Pair, img: Pair) {
        let (fwd, rev) = match dir {
            Dir::Down => (&mut self.down, &mut self.up),
            Dir::Up => (&mut self.up, &mut self.down),
        };
        fwd.insert(key.clone(), img.clone());
        if let Some(old) = rev.insert(img, key.clone()) {
            if old != key {
                self.overwrite_count += 1;
            }
        }
    }
}

/// Transcript events, one JSON object per line on export.
#[derive(Clone, Debug, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    ExternalQuery { kind: &'static str, i: usize, x: String },
    TableInsert { i: usize, x: String, y: String, order: u64 },
    Enqueue { s: usize, vals: Vec<String> },
    Discard { s: usize, x_s: String, reason: &'static str },
    PlanEmitted { s: usize, x_s: String, u: usize },
    Adapted { u: usize, x_u: String, x_u1: String },
    Abort { kind: AbortKind, during: &'static str },
}

/// A detection window: w consecutive defined positions starting at s.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chain {
    pub s: usize,
    pub vals: Vec<Gf2Vec>,
}

/// A window that passed its checks, ready for completion.
#[derive(Clone, Debug)]
pub struct Plan {
    pub s: usize,
    pub x_s: Gf2Vec,
    pub x_s1: Gf2Vec,
    pub u: usize,
}

/// A finished cycle: every position 0..=ell+1 after adaptation.
#[derive(Clone, Debug)]
pub struct FullChain {
    pub positions: Vec<Gf2Vec>,
    pub u: usize,
}

pub struct SimulatorState {
    params: ConstructionParams,
    rand: PublicRandomness,
    program: SubversionProgram,
    budget: usize,
    seed: u64,
    backend: IdealBackend,

    /// Per-round value tables, index 1..=ell.
    cf: Vec<HashMap<Gf2Vec, Gf2Vec>>,
    cf_total: usize,
    /// Memoized subverted values.
    subverted: HashMap<(usize, Gf2Vec), Gf2Vec>,
    /// Query set of each subverted evaluation, in table coordinates.
    q_sets: HashMap<(usize, Gf2Vec), QuerySet>,
    /// Reverse index: which evaluations listed this point.
    queried_by: HashMap<(usize, Gf2Vec), BTreeSet<(usize, Gf2Vec)>>,
    /// Definition order of table entries.
    order: HashMap<(usize, Gf2Vec), u64>,
    order_ctr: u64,

    queue: VecDeque<Chain>,
    completed: HashSet<(usize, Gf2Vec, Gf2Vec)>,
    honesty_checked: HashSet<(usize, Gf2Vec, Gf2Vec)>,

    pairs: PairTable,

    pub transcript: Vec<Event>,
    pub external_queries: u64,
    /// (external query count, total table entries) after each public query.
    pub size_series: Vec<(u64, usize)>,
    /// Table-growth bound violations observed (reported, not fatal).
    pub efficiency_violations: u64,
    full_chains: Vec<FullChain>,
}

impl SimulatorState {
    pub fn new(
        params: ConstructionParams,
        rand: PublicRandomness,
        program: SubversionProgram,
        budget: usize,
        seed: u64,
        backend: IdealBackend,
    ) -> Result<Self, SimError> {
        if rand.n() != params.n || rand.ell() != params.ell {
            return Err(SimError::Oracle(OracleError::Parameter(format!(
                "encodings are {}x{}, parameters want {}x{}",
                rand.n(),
                rand.ell(),
                params.n,
                params.ell
            ))));
        }
        let ell = params.ell;
        Ok(SimulatorState {
            params,
            rand,
            program,
            budget,
            seed,
            backend,
            cf: vec![HashMap::new(); ell + 1],
            cf_total: 0,
            subverted: HashMap::new(),
            q_sets: HashMap::new(),
            queried_by: HashMap::new(),
            order: HashMap::new(),
            order_ctr: 0,
            queue: VecDeque::new(),
            completed: HashSet::new(),
            honesty_checked: HashSet::new(),
            pairs: PairTable::default(),
            transcript: Vec::new(),
            external_queries: 0,
            size_series: Vec::new(),
            efficiency_violations: 0,
            full_chains: Vec::new(),
        })
    }

    pub fn params(&self) -> &ConstructionParams {
        &self.params
    }

    pub fn randomness(&self) -> &PublicRandomness {
        &self.rand
    }

    pub fn table_len(&self) -> usize {
        self.cf_total
    }

    pub fn table_get(&self, i: usize, x: &Gf2Vec) -> Option<&Gf2Vec> {
        self.cf.get(i).and_then(|t| t.get(x))
    }

    /// Per-round tables, index 0 unused.
    pub fn tables(&self) -> &[HashMap<Gf2Vec, Gf2Vec>] {
        &self.cf
    }

    pub fn table_order(&self, i: usize, x: &Gf2Vec) -> Option<u64> {
        self.order.get(&(i, x.clone())).copied()
    }

    pub fn full_chains(&self) -> &[FullChain] {
        &self.full_chains
    }

    /// True when (i, x) was programmed during adaptation rather than drawn.
    /// Adapted slots are legitimate inward insertions; diagnostics that hunt
    /// for inward growth should mask them.
    pub fn adapted_slot(&self, i: usize, x: &Gf2Vec) -> bool {
        self.full_chains.iter().any(|c| {
            (i == c.u && c.positions[c.u] == *x) || (i == c.u + 1 && c.positions[c.u + 1] == *x)
        })
    }

    pub fn pair_overwrites(&self) -> u64 {
        self.pairs.overwrite_count
    }

    pub fn subverted_value(&self, i: usize, x: &Gf2Vec) -> Option<&Gf2Vec> {
        self.subverted.get(&(i, x.clone()))
    }

    fn check_point(&self, i: usize, x: &Gf2Vec) -> Result<(), OracleError> {
        if i < 1 || i > self.params.ell {
            return Err(OracleError::Index { i, ell: self.params.ell });
        }
        if x.len() != self.params.n {
            return Err(OracleError::Parameter(format!(
                "input has {} bits, expected {}",
                x.len(),
                self.params.n
            )));
        }
        Ok(())
    }

    /// Growth allowance per external query.
    pub fn efficiency_slope(&self) -> f64 {
        efficiency_allowance(&self.params, self.budget)
    }

    fn after_external_query(&mut self) {
        self.size_series.push((self.external_queries, self.cf_total));
        let bound = self.efficiency_slope() * self.external_queries as f64;
        if self.cf_total as f64 > bound {
            self.efficiency_violations += 1;
        }
    }

    // ---- public, distinguisher-facing entry points ----

    /// Round query: define if fresh, then settle every pending window.
    pub fn cf_query(&mut self, i: usize, x: &Gf2Vec) -> Result<Gf2Vec, SimError> {
        self.check_point(i, x)?;
        self.external_queries += 1;
        self.transcript.push(Event::ExternalQuery { kind: "cf", i, x: x.to_hex() });
        self.cf_inner(i, x)?;
        self.drain_queue()?;
        let v = self.cf[i].get(x).cloned().expect("defined above");
        self.after_external_query();
        Ok(v)
    }

    /// Subverted round query, emulated the way a caller would: the program
    /// runs against the public round query, so its base queries count as
    /// external queries and settle windows as they go.
    pub fn cf_tilde_query(&mut self, i: usize, x: &Gf2Vec) -> Result<Gf2Vec, SimError> {
        self.check_point(i, x)?;
        if let Some(v) = self.subverted.get(&(i, x.clone())) {
            return Ok(v.clone());
        }
        let enc = self.rand.encode(i, x);
        let prog = self.program.clone();
        let budget = self.budget;
        let ell = self.params.ell;
        let n = self.params.n;
        let mut pending: Option<SimError> = None;
        let res = run_program(&prog, budget, i, &enc, &mut |j, y| {
            if j < 1 || j > ell {
                return Err(OracleError::Index { i: j, ell });
            }
            if y.len() != n {
                return Err(OracleError::Parameter("bad query width".into()));
            }
            let xj = self.rand.decode(j, y);
            match self.cf_query(j, &xj) {
                Ok(v) => Ok(v),
                Err(SimError::Oracle(e)) => Err(e),
                Err(other) => {
                    pending = Some(other);
                    Err(OracleError::Parameter("aborted".into()))
                }
            }
        });
        if let Some(e) = pending {
            return Err(e);
        }
        let (val, raw_qs) = res?;
        self.record_evaluation(i, x, &val, &raw_qs);
        Ok(val)
    }

    /// Forward ideal-object query.
    pub fn p_query(&mut self, x0: &Gf2Vec, x1: &Gf2Vec) -> Result<Pair, SimError> {
        self.external_queries += 1;
        self.transcript.push(Event::ExternalQuery {
            kind: "p",
            i: 0,
            x: format!("{},{}", x0.to_hex(), x1.to_hex()),
        });
        let out = self.pair_inner(Dir::Down, (x0.clone(), x1.clone()))?;
        self.after_external_query();
        Ok(out)
    }

    /// Backward ideal-object query.
    pub fn p_inverse_query(&mut self, xl: &Gf2Vec, xl1: &Gf2Vec) -> Result<Pair, SimError> {
        self.external_queries += 1;
        self.transcript.push(Event::ExternalQuery {
            kind: "p_inv",
            i: 0,
            x: format!("{},{}", xl.to_hex(), xl1.to_hex()),
        });
        let out = self.pair_inner(Dir::Up, (xl.clone(), xl1.clone()))?;
        self.after_external_query();
        Ok(out)
    }

    // ---- internal machinery ----

    /// Define (i, x) in the table without the detection pass.
    fn define(&mut self, i: usize, x: &Gf2Vec, v: Gf2Vec) {
        let prior = self.cf[i].insert(x.clone(), v.clone());
        assert!(prior.is_none(), "table overwrite at round {i}");
        self.cf_total += 1;
        self.order_ctr += 1;
        self.order.insert((i, x.clone()), self.order_ctr);
        self.transcript.push(Event::TableInsert {
            i,
            x: x.to_hex(),
            y: v.to_hex(),
            order: self.order_ctr,
        });
    }

    /// Lazy table read: sample on first touch and scan for new windows.
    pub fn cf_inner(&mut self, i: usize, x: &Gf2Vec) -> Result<Gf2Vec, OracleError> {
        if let Some(v) = self.cf[i].get(x) {
            return Ok(v.clone());
        }
        let mut st = rng::stream(
            self.seed,
            "sim-cf",
            &[&(i as u64).to_le_bytes(), &x.to_bytes()],
        );
        let v = Gf2Vec::random(self.params.n, &mut st);
        self.define(i, x, v.clone());
        self.enqueue_new_chains(i, x);
        Ok(v)
    }

    fn record_evaluation(&mut self, i: usize, x: &Gf2Vec, val: &Gf2Vec, raw_qs: &QuerySet) {
        let qs: QuerySet = raw_qs.iter().map(|(j, y)| (*j, self.rand.decode(*j, y))).collect();
        for pt in &qs {
            self.queried_by.entry(pt.clone()).or_default().insert((i, x.clone()));
        }
        self.q_sets.insert((i, x.clone()), qs);
        self.subverted.insert((i, x.clone()), val.clone());
    }

    /// Subverted evaluation through the internal lazy read (no external
    /// accounting, no window settling).
    pub fn cf_tilde_inner(&mut self, i: usize, x: &Gf2Vec) -> Result<Gf2Vec, SimError> {
        if let Some(v) = self.subverted.get(&(i, x.clone())) {
            return Ok(v.clone());
        }
        let enc = self.rand.encode(i, x);
        let prog = self.program.clone();
        let budget = self.budget;
        let ell = self.params.ell;
        let n = self.params.n;
        let (val, raw_qs) = run_program(&prog, budget, i, &enc, &mut |j, y| {
            if j < 1 || j > ell {
                return Err(OracleError::Index { i: j, ell });
            }
            if y.len() != n {
                return Err(OracleError::Parameter("bad query width".into()));
            }
            let xj = self.rand.decode(j, y);
            self.cf_inner(j, &xj)
        })?;
        self.record_evaluation(i, x, &val, &raw_qs);
        Ok(val)
    }

    /// Point (i, x) was listed by some evaluation other than its own.
    pub fn cross_queried(&self, i: usize, x: &Gf2Vec) -> bool {
        let key = (i, x.clone());
        self.queried_by.get(&key).map_or(false, |s| s.iter().any(|e| e != &key))
    }

    fn honest_at(&self, i: usize, x: &Gf2Vec) -> bool {
        match (self.subverted.get(&(i, x.clone())), self.cf[i].get(x)) {
            (Some(a), Some(b)) => a == b,
            _ => false,
        }
    }

    /// Scan for windows that became fully defined when (i, x) appeared,
    /// either as their last or their first member. Windows are pushed in a
    /// deterministic order: ending windows first, each group sorted by the
    /// window's member values.
    pub fn enqueue_new_chains(&mut self, i: usize, x: &Gf2Vec) {
        let w = self.params.w;
        let ell = self.params.ell;
        let mut batch: Vec<Chain> = Vec::new();

        if i >= w {
            let s = i - w + 1;
            let mut group: Vec<Chain> = Vec::new();
            let mut prevs: Vec<&Gf2Vec> = self.cf[i - 1].keys().collect();
            prevs.sort();
            for prev in prevs {
                if let Some(chain) = self.window_down(i, x, prev, s) {
                    group.push(chain);
                }
            }
            group.sort_by(|a, b| a.vals.cmp(&b.vals));
            batch.extend(group);
        }
        if i + w - 1 <= ell {
            let mut group: Vec<Chain> = Vec::new();
            let mut nexts: Vec<&Gf2Vec> = self.cf[i + 1].keys().collect();
            nexts.sort();
            for next in nexts {
                if let Some(chain) = self.window_up(i, x, next) {
                    group.push(chain);
                }
            }
            group.sort_by(|a, b| a.vals.cmp(&b.vals));
            batch.extend(group);
        }

        for chain in batch {
            self.transcript.push(Event::Enqueue {
                s: chain.s,
                vals: chain.vals.iter().map(Gf2Vec::to_hex).collect(),
            });
            self.queue.push_back(chain);
        }
    }

    /// Window of width w ending at (i, x) whose second-to-last member is
    /// prev: walk the relation downward, requiring every member defined.
    fn window_down(&self, i: usize, x: &Gf2Vec, prev: &Gf2Vec, s: usize) -> Option<Chain> {
        let mut vals = vec![x.clone(), prev.clone()]; // positions i, i-1, ...
        while vals.len() < self.params.w {
            let j = i + 1 - vals.len(); // position of vals.last()
            let vj = self.cf[j].get(vals.last().unwrap())?;
            let below = vals[vals.len() - 2].xor(vj);
            if !self.cf[j - 1].contains_key(&below) {
                return None;
            }
            vals.push(below);
        }
        debug_assert!(self.cf[s].contains_key(vals.last().unwrap()));
        vals.reverse();
        Some(Chain { s, vals })
    }

    /// Window of width w starting at (i, x) whose second member is next.
    fn window_up(&self, i: usize, x: &Gf2Vec, next: &Gf2Vec) -> Option<Chain> {
        let mut vals = vec![x.clone(), next.clone()];
        while vals.len() < self.params.w {
            let j = i + vals.len() - 1;
            let vj = self.cf[j].get(vals.last().unwrap())?;
            let above = vals[vals.len() - 2].xor(vj);
            if !self.cf[j + 1].contains_key(&above) {
                return None;
            }
            vals.push(above);
        }
        Some(Chain { s: i, vals })
    }

    fn drain_queue(&mut self) -> Result<(), SimError> {
        while let Some(chain) = self.queue.pop_front() {
            if let Some(plan) = self.check(&chain)? {
                self.complete(&plan)?;
            }
        }
        Ok(())
    }

    /// Proceed with a window only when none of its adjacent pairs was seen
    /// by an earlier completion or honesty check.
    pub fn check(&mut self, chain: &Chain) -> Result<Option<Plan>, SimError> {
        for idx in 0..chain.vals.len().saturating_sub(1) {
            let trip =
                (chain.s + idx, chain.vals[idx].clone(), chain.vals[idx + 1].clone());
            if self.completed.contains(&trip) || self.honesty_checked.contains(&trip) {
                self.transcript.push(Event::Discard {
                    s: chain.s,
                    x_s: chain.vals[0].to_hex(),
                    reason: "overlap",
                });
                return Ok(None);
            }
        }
        self.honesty_check(chain)
    }

    /// Mark the window's pairs as checked, then evaluate every member.
    /// A plan comes out only when all members are honest.
    pub fn honesty_check(&mut self, chain: &Chain) -> Result<Option<Plan>, SimError> {
        for idx in 0..chain.vals.len().saturating_sub(1) {
            self.honesty_checked.insert((
                chain.s + idx,
                chain.vals[idx].clone(),
                chain.vals[idx + 1].clone(),
            ));
        }
        let mut all_honest = true;
        for (idx, xv) in chain.vals.iter().enumerate() {
            self.cf_tilde_inner(chain.s + idx, xv)?;
            if !self.honest_at(chain.s + idx, xv) {
                all_honest = false;
            }
        }
        if !all_honest {
            self.transcript.push(Event::Discard {
                s: chain.s,
                x_s: chain.vals[0].to_hex(),
                reason: "dishonest",
            });
            return Ok(None);
        }
        let u = self.params.adapt_position(chain.s);
        self.transcript.push(Event::PlanEmitted {
            s: chain.s,
            x_s: chain.vals[0].to_hex(),
            u,
        });
        Ok(Some(Plan {
            s: chain.s,
            x_s: chain.vals[0].clone(),
            x_s1: chain.vals[1].clone(),
            u,
        }))
    }

    /// Walk positions upward from the window until u - 1, wrapping through
    /// the ideal object's inverse at the top edge.
    fn evaluate_forward(
        &mut self,
        pos: &mut [Option<Gf2Vec>],
        s: usize,
        u: usize,
    ) -> Result<(), SimError> {
        let ell = self.params.ell;
        self.completed.insert((
            s,
            pos[s].clone().expect("window member"),
            pos[s + 1].clone().expect("window member"),
        ));
        let mut cur = s;
        while cur != u - 1 {
            if cur == ell {
                let key = (
                    pos[ell].clone().expect("walked"),
                    pos[ell + 1].clone().expect("walked"),
                );
                let (a, b) = self.pair_inner(Dir::Up, key)?;
                pos[0] = Some(a);
                pos[1] = Some(b);
                cur = 0;
            } else {
                let xc = pos[cur].clone().expect("walked");
                let xc1 = pos[cur + 1].clone().expect("walked");
                let v = self.cf_tilde_inner(cur + 1, &xc1)?;
                let nxt = xc.xor(&v);
                self.completed.insert((cur + 1, xc1, nxt.clone()));
                pos[cur + 2] = Some(nxt);
                cur += 1;
            }
        }
        Ok(())
    }

    /// Walk positions downward from the window until u + 1, wrapping through
    /// the ideal object at the bottom edge.
    fn evaluate_backward(
        &mut self,
        pos: &mut [Option<Gf2Vec>],
        s: usize,
        u: usize,
    ) -> Result<(), SimError> {
        let ell = self.params.ell;
        let mut cur = s;
        while cur != u + 1 {
            if cur == 0 {
                let key = (
                    pos[0].clone().expect("walked"),
                    pos[1].clone().expect("walked"),
                );
                let (a, b) = self.pair_inner(Dir::Down, key)?;
                pos[ell] = Some(a);
                pos[ell + 1] = Some(b);
                cur = ell;
            } else {
                let xc = pos[cur].clone().expect("walked");
                let xc1 = pos[cur + 1].clone().expect("walked");
                let v = self.cf_tilde_inner(cur, &xc)?;
                let prv = xc1.xor(&v);
                self.completed.insert((cur - 1, prv.clone(), xc));
                pos[cur - 1] = Some(prv);
                cur -= 1;
            }
        }
        Ok(())
    }

    /// Close the cycle at positions u, u + 1. The two values are recomputed
    /// from the unsubverted table at u - 1 / u + 2, programmed so the
    /// relation holds, then re-evaluated for honesty and cross queries.
    pub fn adapt(
        &mut self,
        u: usize,
        xm2: &Gf2Vec,
        xm1: &Gf2Vec,
        xp2: &Gf2Vec,
        xp3: &Gf2Vec,
    ) -> Result<(Gf2Vec, Gf2Vec), SimError> {
        let vum1 = self.cf[u - 1].get(xm1).cloned().expect("round u-1 walked");
        let vup2 = self.cf[u + 2].get(xp2).cloned().expect("round u+2 walked");
        let x_u = xm2.xor(&vum1);
        let x_u1 = xp3.xor(&vup2);
        if self.cf[u].contains_key(&x_u) || self.cf[u + 1].contains_key(&x_u1) {
            self.transcript.push(Event::Abort { kind: AbortKind::Freshness, during: "adapt" });
            return Err(SimError::Abort(AbortKind::Freshness));
        }
        let want_u = xm1.xor(&x_u1);
        let want_u1 = x_u.xor(xp2);
        self.define(u, &x_u, want_u.clone());
        self.define(u + 1, &x_u1, want_u1.clone());
        self.transcript.push(Event::Adapted {
            u,
            x_u: x_u.to_hex(),
            x_u1: x_u1.to_hex(),
        });
        let got_u = self.cf_tilde_inner(u, &x_u)?;
        let got_u1 = self.cf_tilde_inner(u + 1, &x_u1)?;
        if got_u != want_u || got_u1 != want_u1 {
            self.transcript.push(Event::Abort { kind: AbortKind::Honesty, during: "adapt" });
            return Err(SimError::Abort(AbortKind::Honesty));
        }
        self.completed.insert((u, x_u.clone(), x_u1.clone()));
        if self.cross_queried(u, &x_u) || self.cross_queried(u + 1, &x_u1) {
            self.transcript.push(Event::Abort { kind: AbortKind::CrossQuery, during: "adapt" });
            return Err(SimError::Abort(AbortKind::CrossQuery));
        }
        Ok((x_u, x_u1))
    }

    /// Complete a planned window into a full adapted cycle.
    pub fn complete(&mut self, plan: &Plan) -> Result<(), SimError> {
        let ell = self.params.ell;
        let u = plan.u;
        let mut pos: Vec<Option<Gf2Vec>> = vec![None; ell + 2];
        pos[plan.s] = Some(plan.x_s.clone());
        pos[plan.s + 1] = Some(plan.x_s1.clone());
        self.evaluate_forward(&mut pos, plan.s, u)?;
        self.evaluate_backward(&mut pos, plan.s, u)?;
        let xm2 = pos[u - 2].clone().expect("walked");
        let xm1 = pos[u - 1].clone().expect("walked");
        let xp2 = pos[u + 2].clone().expect("walked");
        let xp3 = pos[u + 3].clone().expect("walked");
        let (x_u, x_u1) = self.adapt(u, &xm2, &xm1, &xp2, &xp3)?;
        pos[u] = Some(x_u);
        pos[u + 1] = Some(x_u1);
        self.full_chains.push(FullChain {
            positions: pos.into_iter().map(|p| p.expect("cycle covered")).collect(),
            u,
        });
        Ok(())
    }

    /// Ideal-object access shared by walks and public queries.
    fn pair_inner(&mut self, dir: Dir, key: Pair) -> Result<Pair, SimError> {
        if let Some(img) = self.pairs.get(dir, &key) {
            return Ok(img.clone());
        }
        let n = self.params.n;
        let dir_byte = [match dir {
            Dir::Down => 0u8,
            Dir::Up => 1u8,
        }];
        let mut attempt = 0usize;
        loop {
            let mut st = rng::stream(
                self.seed,
                "ideal-pair",
                &[
                    &dir_byte,
                    &key.0.to_bytes(),
                    &key.1.to_bytes(),
                    &(attempt as u64).to_le_bytes(),
                ],
            );
            let img = (Gf2Vec::random(n, &mut st), Gf2Vec::random(n, &mut st));
            match self.backend {
                IdealBackend::RandomFunction => {
                    self.pairs.insert_two_sided(dir, key, img.clone());
                    return Ok(img);
                }
                IdealBackend::Permutation => {
                    let rev = match dir {
                        Dir::Down => Dir::Up,
                        Dir::Up => Dir::Down,
                    };
                    if self.pairs.get(rev, &img).is_none() {
                        self.pairs.insert_two_sided(dir, key, img.clone());
                        return Ok(img);
                    }
                    attempt += 1;
                    if attempt >= PERM_RETRY_CAP {
                        return Err(SimError::RetryExhausted(PERM_RETRY_CAP));
                    }
                }
            }
        }
    }

    /// Re-walk every finished cycle through the memoized subverted values
    /// and compare with the ideal-object entry.
    pub fn audit_full_chains(&self) -> Result<(), String> {
        let ell = self.params.ell;
        for (c, chain) in self.full_chains.iter().enumerate() {
            let p = &chain.positions;
            for i in 1..=ell {
                let v = self
                    .subverted
                    .get(&(i, p[i].clone()))
                    .ok_or_else(|| format!("cycle {c}: round {i} never evaluated"))?;
                if p[i - 1].xor(v) != p[i + 1] {
                    return Err(format!("cycle {c}: relation broken at round {i}"));
                }
            }
            let img = self
                .pairs
                .get(Dir::Down, &(p[0].clone(), p[1].clone()))
                .ok_or_else(|| format!("cycle {c}: no ideal entry"))?;
            if img != &(p[ell].clone(), p[ell + 1].clone()) {
                return Err(format!("cycle {c}: ideal entry disagrees with walk"));
            }
        }
        Ok(())
    }

    pub fn transcript_json_lines(&self) -> String {
        let mut out = String::new();
        for ev in &self.transcript {
            out.push_str(&serde_json::to_string(ev).expect("serializable"));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feistel::ConstructionParams;
    use crate::oracle::index_to_vec;
    use crate::rng::stream_idx;

    fn tiny_params() -> ConstructionParams {
        ConstructionParams::custom(20, 24, 3, 12, 21, 9, 15).unwrap()
    }

    fn tiny_sim(seed: u64, program: SubversionProgram, budget: usize) -> SimulatorState {
        let params = tiny_params();
        let rand = PublicRandomness::sample(20, 24, seed ^ 0x5151);
        SimulatorState::new(params, rand, program, budget, seed, IdealBackend::Permutation)
            .unwrap()
    }

    /// Honest walk from (x0, x1): with the honest program the subverted
    /// round value equals the public one, so the walk uses cf_query.
    fn walk(sim: &mut SimulatorState, x0: &Gf2Vec, x1: &Gf2Vec) -> (Gf2Vec, Gf2Vec) {
        let ell = sim.params().ell;
        let mut prev = x0.clone();
        let mut cur = x1.clone();
        for i in 1..=ell {
            let v = sim.cf_query(i, &cur).unwrap();
            let nxt = prev.xor(&v);
            prev = std::mem::replace(&mut cur, nxt);
        }
        (prev, cur)
    }

    #[test]
    fn repeated_queries_define_once() {
        let mut sim = tiny_sim(1, SubversionProgram::honest(), 1);
        let x = Gf2Vec::from_indices(20, &[3]);
        let a = sim.cf_query(5, &x).unwrap();
        let b = sim.cf_query(5, &x).unwrap();
        assert_eq!(a, b);
        let inserts = sim
            .transcript
            .iter()
            .filter(|e| matches!(e, Event::TableInsert { .. }))
            .count();
        assert_eq!(inserts, 1);
        assert_eq!(sim.external_queries, 2);
    }

    #[test]
    fn isolated_queries_never_enqueue() {
        let mut sim = tiny_sim(2, SubversionProgram::honest(), 1);
        let mut rng = stream_idx(3, "iso", 0);
        for i in [1usize, 3, 5] {
            let x = Gf2Vec::random(20, &mut rng);
            sim.cf_query(i, &x).unwrap();
        }
        assert!(!sim.transcript.iter().any(|e| matches!(e, Event::Enqueue { .. })));
        assert!(sim.full_chains().is_empty());
    }

    #[test]
    fn honest_walk_completes_one_cycle_consistently() {
        let mut sim = tiny_sim(4, SubversionProgram::honest(), 1);
        let mut rng = stream_idx(5, "hw", 0);
        let x0 = Gf2Vec::random(20, &mut rng);
        let x1 = Gf2Vec::random(20, &mut rng);
        let (xl, xl1) = walk(&mut sim, &x0, &x1);
        assert_eq!(sim.full_chains().len(), 1, "one completion for one walked chain");
        // The later windows of the same chain must have been discarded.
        assert!(sim
            .transcript
            .iter()
            .any(|e| matches!(e, Event::Discard { reason: "overlap", .. })));
        // The ideal object already agrees with the walked endpoints.
        let (pl, pl1) = sim.p_query(&x0, &x1).unwrap();
        assert_eq!((pl, pl1), (xl.clone(), xl1.clone()));
        sim.audit_full_chains().unwrap();
        assert_eq!(sim.efficiency_violations, 0);
        // Inverse side agrees too.
        let back = sim.p_inverse_query(&xl, &xl1).unwrap();
        assert_eq!(back, (x0, x1));
    }

    #[test]
    fn adapt_slots_hold_programmed_relation() {
        let mut sim = tiny_sim(6, SubversionProgram::honest(), 1);
        let mut rng = stream_idx(7, "ad", 0);
        let x0 = Gf2Vec::random(20, &mut rng);
        let x1 = Gf2Vec::random(20, &mut rng);
        walk(&mut sim, &x0, &x1);
        let chain = &sim.full_chains()[0];
        let u = chain.u;
        assert_eq!(u, 12, "window [1,3] misses the band, low slot");
        let p = &chain.positions;
        let v_u = sim.table_get(u, &p[u]).unwrap();
        assert_eq!(p[u - 1].xor(v_u), p[u + 1]);
        let v_u1 = sim.table_get(u + 1, &p[u + 1]).unwrap();
        assert_eq!(p[u].xor(v_u1), p[u + 2]);
    }

    #[test]
    fn dishonesty_at_adapt_slot_aborts() {
        // Round values at the two adapt rounds are flipped; everything else
        // is honest, so the window check passes and adaptation trips.
        let prog = SubversionProgram::custom(|ctx, i, x| {
            let mut v = ctx.query(i, x)?;
            if i == 12 || i == 13 {
                v.set(0, !v.get(0));
            }
            Ok(v)
        });
        let mut sim = tiny_sim(8, prog, 1);
        let mut rng = stream_idx(9, "dh", 0);
        let x1 = Gf2Vec::random(20, &mut rng);
        let x2 = Gf2Vec::random(20, &mut rng);
        // Build a window at rounds 1..3 by walking the subverted relation.
        sim.cf_tilde_query(1, &x1).unwrap();
        let v2 = sim.cf_tilde_query(2, &x2).unwrap();
        let x3 = x1.xor(&v2);
        let res = sim.cf_query(3, &x3);
        match res {
            Err(SimError::Abort(AbortKind::Honesty)) => {}
            other => panic!("expected honesty abort, got {other:?}"),
        }
        assert!(sim
            .transcript
            .iter()
            .any(|e| matches!(e, Event::Abort { kind: AbortKind::Honesty, .. })));
    }

    #[test]
    fn preexisting_adapt_slot_aborts_freshness() {
        // First run observes where adaptation lands; a fresh run with the
        // same seed pre-defines that slot, so the keyed draws collide there.
        let mut probe = tiny_sim(10, SubversionProgram::honest(), 1);
        let mut rng = stream_idx(11, "fr", 0);
        let x0 = Gf2Vec::random(20, &mut rng);
        let x1 = Gf2Vec::random(20, &mut rng);
        walk(&mut probe, &x0, &x1);
        let u = probe.full_chains()[0].u;
        let x_u = probe.full_chains()[0].positions[u].clone();

        let mut sim = tiny_sim(10, SubversionProgram::honest(), 1);
        sim.cf_query(u, &x_u).unwrap();
        let mut err = None;
        let mut prev = x0.clone();
        let mut cur = x1.clone();
        for i in 1..=24 {
            match sim.cf_query(i, &cur) {
                Ok(v) => {
                    let nxt = prev.xor(&v);
                    prev = std::mem::replace(&mut cur, nxt);
                }
                Err(e) => {
                    err = Some(e);
                    break;
                }
            }
        }
        match err {
            Some(SimError::Abort(AbortKind::Freshness)) => {}
            other => panic!("expected freshness abort, got {other:?}"),
        }
    }

    #[test]
    fn foreign_query_on_adapt_slot_aborts_cross_query() {
        // Replicate first to learn the adapted point and its encoding.
        let mut probe = tiny_sim(12, SubversionProgram::honest(), 1);
        let mut rng = stream_idx(13, "cq", 0);
        let x0 = Gf2Vec::random(20, &mut rng);
        let x1 = Gf2Vec::random(20, &mut rng);
        walk(&mut probe, &x0, &x1);
        let u = probe.full_chains()[0].u;
        let x_u = probe.full_chains()[0].positions[u].clone();
        let enc_u = probe.randomness().encode(u, &x_u);

        // Same seed; the program additionally pokes the adapted slot
        // whenever round u + 1 is evaluated. That evaluation happens during
        // adaptation, after programming, so freshness cannot fire first.
        let target = enc_u.clone();
        let at = u + 1;
        let prog = SubversionProgram::custom(move |ctx, i, x| {
            if i == at {
                let _ = ctx.query(at - 1, &target)?;
            }
            ctx.query(i, x)
        });
        let mut sim = SimulatorState::new(
            tiny_params(),
            PublicRandomness::sample(20, 24, 12 ^ 0x5151),
            prog,
            2,
            12,
            IdealBackend::Permutation,
        )
        .unwrap();
        let mut outcome = None;
        let mut prev = x0.clone();
        let mut cur = x1.clone();
        for i in 1..=24 {
            match sim.cf_query(i, &cur) {
                Ok(v) => {
                    let nxt = prev.xor(&v);
                    prev = std::mem::replace(&mut cur, nxt);
                }
                Err(e) => {
                    outcome = Some(e);
                    break;
                }
            }
        }
        match outcome {
            Some(SimError::Abort(AbortKind::CrossQuery)) => {}
            other => panic!("expected cross-query abort, got {other:?}"),
        }
    }

    #[test]
    fn permutation_backend_is_injective_exhaustively() {
        let params = ConstructionParams::custom(3, 24, 3, 12, 21, 9, 15).unwrap();
        let rand = PublicRandomness::sample(3, 24, 21);
        let mut sim = SimulatorState::new(
            params,
            rand,
            SubversionProgram::honest(),
            1,
            20,
            IdealBackend::Permutation,
        )
        .unwrap();
        // Half-fill the 64-pair space so the rejection sampler always keeps
        // a comfortable acceptance margin under the retry cap.
        let mut seen = std::collections::HashSet::new();
        for a in 0u64..4 {
            for b in 0u64..8 {
                let img = sim.p_query(&index_to_vec(3, a), &index_to_vec(3, b)).unwrap();
                assert!(seen.insert(img.clone()), "collision at {a},{b}");
                let back = sim.p_inverse_query(&img.0, &img.1).unwrap();
                assert_eq!(back, (index_to_vec(3, a), index_to_vec(3, b)));
            }
        }
        assert_eq!(seen.len(), 32);
        assert_eq!(sim.pair_overwrites(), 0);
    }

    #[test]
    fn permutation_retries_exhaust_on_a_full_codomain() {
        let params = ConstructionParams::custom(1, 24, 3, 12, 21, 9, 15).unwrap();
        let rand = PublicRandomness::sample(1, 24, 30);
        let mut sim = SimulatorState::new(
            params,
            rand,
            SubversionProgram::honest(),
            1,
            31,
            IdealBackend::Permutation,
        )
        .unwrap();
        // Fill the whole 2-bit image space by hand, then ask for a fresh image.
        for a in 0u64..2 {
            for b in 0u64..2 {
                let img = (index_to_vec(1, a), index_to_vec(1, b));
                sim.pairs.up.insert(img.clone(), img);
            }
        }
        let r = sim.p_query(&index_to_vec(1, 0), &index_to_vec(1, 0));
        assert!(matches!(r, Err(SimError::RetryExhausted(n)) if n == PERM_RETRY_CAP));
    }

    #[test]
    fn random_function_backend_counts_displacements() {
        // Four draws over a four-image space collide in most runs; scan a
        // few seeds deterministically and insist a displacement shows up.
        let mut found = false;
        for seed in 0..50u64 {
            let params = ConstructionParams::custom(1, 24, 3, 12, 21, 9, 15).unwrap();
            let rand = PublicRandomness::sample(1, 24, 1000 + seed);
            let mut sim = SimulatorState::new(
                params,
                rand,
                SubversionProgram::honest(),
                1,
                seed,
                IdealBackend::RandomFunction,
            )
            .unwrap();
            for a in 0u64..2 {
                for b in 0u64..2 {
                    sim.p_query(&index_to_vec(1, a), &index_to_vec(1, b)).unwrap();
                }
            }
            if sim.pair_overwrites() > 0 {
                found = true;
                break;
            }
        }
        assert!(found, "no displacement across 50 seeds at n = 1");
    }

    #[test]
    fn transcripts_are_json_lines() {
        let mut sim = tiny_sim(40, SubversionProgram::honest(), 1);
        let mut rng = stream_idx(41, "tj", 0);
        let x0 = Gf2Vec::random(20, &mut rng);
        let x1 = Gf2Vec::random(20, &mut rng);
        walk(&mut sim, &x0, &x1);
        let text = sim.transcript_json_lines();
        assert!(!text.is_empty());
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v.get("event").is_some());
        }
        // Every event kind from the walk shows up.
        for needle in ["external_query", "table_insert", "enqueue", "plan_emitted", "adapted"] {
            assert!(text.contains(needle), "missing {needle}");
        }
    }

    #[test]
    fn coupled_seeds_reproduce_transcripts() {
        let run = |backend| {
            let mut sim = SimulatorState::new(
                tiny_params(),
                PublicRandomness::sample(20, 24, 50 ^ 0x5151),
                SubversionProgram::honest(),
                1,
                50,
                backend,
            )
            .unwrap();
            let mut rng = stream_idx(51, "cp", 0);
            let x0 = Gf2Vec::random(20, &mut rng);
            let x1 = Gf2Vec::random(20, &mut rng);
            walk(&mut sim, &x0, &x1);
            sim.transcript_json_lines()
        };
        // Same seed, same walk: the permutation and random-function backends
        // agree exactly while no rejection and no displacement occurs.
        assert_eq!(run(IdealBackend::Permutation), run(IdealBackend::RandomFunction));
    }
}
