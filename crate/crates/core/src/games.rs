//! A ladder of oracle-simulation variants used to localize where behavior
//! can diverge, plus transcript diagnostics.
//!
//! The first two variants are the chain-completing simulator with its two
//! ideal backends. The remaining three run a dual engine: a public side
//! answering round queries exactly like the simulator, and a shadow helper
//! side that completes a full chain whenever the ideal object is queried at
//! a fresh point. Later variants turn a fixed list of low-probability
//! overlap conditions from logged events into hard aborts, and the last one
//! replaces adapted values with plain lazy draws, programming the ideal
//! object at the end of each completed chain instead.

use crate::feistel::{ConstructionParams, PublicRandomness};
use crate::gf2::Gf2Vec;
use crate::oracle::{run_program, OracleError, QuerySet, SubversionProgram};
use crate::rng;
use crate::sim::{IdealBackend, SimError, SimulatorState};
use crate::stats::wilson95;
use rand::Rng;
use serde::Serialize;
use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum GameId {
    G1,
    G2,
    G3,
    G4,
    G5,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BadKind {
    /// Abort raised while completing or adapting a chain.
    BadComplete,
    /// Abort raised inside a lazy table read.
    BadEval,
}

#[derive(Debug, Error)]
pub enum GameError {
    #[error("abort ({kind:?}): {reason}")]
    Abort { kind: BadKind, reason: &'static str },
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum GEvent {
    ExternalQuery { kind: &'static str, i: usize, x: String },
    Insert { side: &'static str, i: usize, x: String, y: String, order: u64 },
    RfInsert { dir: &'static str, key: String, img: String, overwrite: bool },
    HelperComplete { s: usize },
    CopyBranch { s: usize },
    Enqueue { s: usize },
    Discard { s: usize, reason: &'static str },
    PlanEmitted { s: usize, u: usize },
    Adapted { side: &'static str, u: usize },
    Bad { kind: BadKind, reason: &'static str, fatal: bool },
}

type Point = (usize, Gf2Vec);
type Triple = (usize, Gf2Vec, Gf2Vec);
type Pair = (Gf2Vec, Gf2Vec);

#[derive(Clone, Debug, PartialEq, Eq)]
struct Window {
    s: usize,
    vals: Vec<Gf2Vec>,
}

/// Dual engine for the later ladder variants.
pub struct DualState {
    game: GameId,
    params: ConstructionParams,
    rand: PublicRandomness,
    program: SubversionProgram,
    budget: usize,
    seed: u64,

    // Helper side.
    m_cf: Vec<HashMap<Gf2Vec, Gf2Vec>>,
    m_subverted: HashMap<Point, Gf2Vec>,
    m_q_sets: HashMap<Point, QuerySet>,
    m_completed: HashSet<Triple>,
    middle_points: HashSet<Point>,
    adapted_points: HashSet<Point>,
    pub m_cf_overwrites: u64,

    // Public side.
    s_cf: Vec<HashMap<Gf2Vec, Gf2Vec>>,
    s_total: usize,
    s_subverted: HashMap<Point, Gf2Vec>,
    s_q_sets: HashMap<Point, QuerySet>,
    s_completed: HashSet<Triple>,
    honesty_checked: HashSet<Triple>,
    queue: VecDeque<Window>,
    order: HashMap<Point, u64>,
    order_ctr: u64,

    // Shared.
    queried_by: HashMap<Point, BTreeSet<Point>>,
    rf_down: HashMap<Pair, Pair>,
    rf_up: HashMap<Pair, Pair>,
    pub rf_overwrites: u64,

    pub bad_complete: u64,
    pub bad_eval: u64,
    pub subset_violations: u64,
    pub events: Vec<GEvent>,
    pub external_queries: u64,
    pub size_series: Vec<(u64, usize)>,
}

impl DualState {
    pub fn new(
        game: GameId,
        params: ConstructionParams,
        rand: PublicRandomness,
        program: SubversionProgram,
        budget: usize,
        seed: u64,
    ) -> Result<Self, GameError> {
        assert!(
            matches!(game, GameId::G3 | GameId::G4 | GameId::G5),
            "dual engine covers the last three variants"
        );
        if rand.n() != params.n || rand.ell() != params.ell {
            return Err(GameError::Oracle(OracleError::Parameter(
                "encoding dimensions disagree with parameters".into(),
            )));
        }
        let ell = params.ell;
        Ok(DualState {
            game,
            params,
            rand,
            program,
            budget,
            seed,
            m_cf: vec![HashMap::new(); ell + 1],
            m_subverted: HashMap::new(),
            m_q_sets: HashMap::new(),
            m_completed: HashSet::new(),
            middle_points: HashSet::new(),
            adapted_points: HashSet::new(),
            m_cf_overwrites: 0,
            s_cf: vec![HashMap::new(); ell + 1],
            s_total: 0,
            s_subverted: HashMap::new(),
            s_q_sets: HashMap::new(),
            s_completed: HashSet::new(),
            honesty_checked: HashSet::new(),
            queue: VecDeque::new(),
            order: HashMap::new(),
            order_ctr: 0,
            queried_by: HashMap::new(),
            rf_down: HashMap::new(),
            rf_up: HashMap::new(),
            rf_overwrites: 0,
            bad_complete: 0,
            bad_eval: 0,
            subset_violations: 0,
            events: Vec::new(),
            external_queries: 0,
            size_series: Vec::new(),
        })
    }

    pub fn params(&self) -> &ConstructionParams {
        &self.params
    }

    pub fn randomness(&self) -> &PublicRandomness {
        &self.rand
    }

    pub fn s_table_len(&self) -> usize {
        self.s_total
    }

    pub fn s_tables(&self) -> &[HashMap<Gf2Vec, Gf2Vec>] {
        &self.s_cf
    }

    pub fn s_table_order(&self, i: usize, x: &Gf2Vec) -> Option<u64> {
        self.order.get(&(i, x.clone())).copied()
    }

    pub fn middle_points(&self) -> &HashSet<Point> {
        &self.middle_points
    }

    pub fn adapted_points(&self) -> &HashSet<Point> {
        &self.adapted_points
    }

    pub fn helper_subverted(&self, i: usize, x: &Gf2Vec) -> Option<&Gf2Vec> {
        self.m_subverted.get(&(i, x.clone()))
    }

    fn in_band(&self, i: usize) -> bool {
        self.params.in_band(i)
    }

    fn bad(&mut self, kind: BadKind, reason: &'static str, fatal: bool) -> Option<GameError> {
        match kind {
            BadKind::BadComplete => self.bad_complete += 1,
            BadKind::BadEval => self.bad_eval += 1,
        }
        self.events.push(GEvent::Bad { kind, reason, fatal });
        if fatal {
            Some(GameError::Abort { kind, reason })
        } else {
            None
        }
    }

    /// Every listed overlap condition is fatal from the fourth variant on;
    /// the third only records it.
    fn red(&mut self, kind: BadKind, reason: &'static str) -> Result<(), GameError> {
        let fatal = self.game != GameId::G3;
        match self.bad(kind, reason, fatal) {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    fn draw(&mut self, i: usize, x: &Gf2Vec) -> Gf2Vec {
        let mut st = rng::stream(
            self.seed,
            "sim-cf",
            &[&(i as u64).to_le_bytes(), &x.to_bytes()],
        );
        Gf2Vec::random(self.params.n, &mut st)
    }

    fn rf_sample(&self, dir: u8, key: &Pair) -> Pair {
        let mut st = rng::stream(
            self.seed,
            "ideal-pair",
            &[&[dir], &key.0.to_bytes(), &key.1.to_bytes(), &0u64.to_le_bytes()],
        );
        (Gf2Vec::random(self.params.n, &mut st), Gf2Vec::random(self.params.n, &mut st))
    }

    /// Insert an ideal-object entry both ways, displacing a stale reverse
    /// entry if one exists.
    fn rf_insert(&mut self, down_key: Pair, img: Pair) {
        self.events.push(GEvent::RfInsert {
            dir: "down",
            key: format!("{},{}", down_key.0.to_hex(), down_key.1.to_hex()),
            img: format!("{},{}", img.0.to_hex(), img.1.to_hex()),
            overwrite: self.rf_up.get(&img).map_or(false, |k| k != &down_key)
                || self.rf_down.get(&down_key).map_or(false, |v| v != &img),
        });
        if let Some(old) = self.rf_down.insert(down_key.clone(), img.clone()) {
            if old != img {
                self.rf_overwrites += 1;
            }
        }
        if let Some(old) = self.rf_up.insert(img, down_key.clone()) {
            if old != down_key {
                self.rf_overwrites += 1;
            }
        }
    }

    /// Read the ideal object during a walk, sampling on a miss. Never
    /// triggers a helper completion.
    fn rf_read_or_sample(&mut self, down: bool, key: &Pair) -> Pair {
        let hit = if down { self.rf_down.get(key) } else { self.rf_up.get(key) };
        if let Some(img) = hit {
            return img.clone();
        }
        let img = self.rf_sample(if down { 0 } else { 1 }, key);
        if down {
            self.rf_insert(key.clone(), img.clone());
        } else {
            self.rf_insert(img.clone(), key.clone());
        }
        img
    }

    fn m_define(&mut self, i: usize, x: &Gf2Vec, v: Gf2Vec) {
        self.order_ctr += 1;
        self.events.push(GEvent::Insert {
            side: "helper",
            i,
            x: x.to_hex(),
            y: v.to_hex(),
            order: self.order_ctr,
        });
        if let Some(old) = self.m_cf[i].insert(x.clone(), v) {
            if old != *self.m_cf[i].get(x).unwrap() {
                self.m_cf_overwrites += 1;
            }
        }
    }

    fn s_define(&mut self, i: usize, x: &Gf2Vec, v: Gf2Vec) {
        let prior = self.s_cf[i].insert(x.clone(), v.clone());
        assert!(prior.is_none(), "public-side overwrite at round {i}");
        self.s_total += 1;
        self.order_ctr += 1;
        self.order.insert((i, x.clone()), self.order_ctr);
        self.events.push(GEvent::Insert {
            side: "public",
            i,
            x: x.to_hex(),
            y: v.to_hex(),
            order: self.order_ctr,
        });
        // From the fourth variant on the public table stays inside the
        // helper table with equal values.
        if self.game != GameId::G3 {
            match self.m_cf[i].get(x) {
                Some(mv) if *mv == v => {}
                _ => self.subset_violations += 1,
            }
        }
    }

    /// Helper-side lazy read. A defined middle point that the public side
    /// has not absorbed yet is an overlap condition, except when the read
    /// is the evaluation's own forced self-query.
    fn m_cf_inner(
        &mut self,
        i: usize,
        x: &Gf2Vec,
        evaluator: Option<&Point>,
    ) -> Result<Gf2Vec, GameError> {
        if let Some(v) = self.m_cf[i].get(x).cloned() {
            let self_read = evaluator.map_or(false, |e| e.0 == i && e.1 == *x);
            if !self_read
                && self.middle_points.contains(&(i, x.clone()))
                && !self.s_cf[i].contains_key(x)
            {
                self.red(BadKind::BadEval, "middle point read before public copy")?;
            }
            return Ok(v);
        }
        let v = self.draw(i, x);
        self.m_define(i, x, v.clone());
        Ok(v)
    }

    /// Public-side lazy read with the cross-table branches.
    fn s_cf_inner(&mut self, i: usize, x: &Gf2Vec) -> Result<Gf2Vec, GameError> {
        if let Some(v) = self.s_cf[i].get(x) {
            return Ok(v.clone());
        }
        let key = (i, x.clone());
        let m_hit = self.m_cf[i].get(x).cloned();
        let v = match m_hit {
            None => {
                let v = self.draw(i, x);
                self.m_define(i, x, v.clone());
                self.s_define(i, x, v.clone());
                v
            }
            Some(mv) => {
                if self.game == GameId::G3 {
                    if self.middle_points.contains(&key) {
                        // Logged here, fatal in the later variants.
                        self.red(BadKind::BadEval, "middle point pulled into public table")?;
                    }
                    if !self.adapted_points.contains(&key) {
                        self.s_define(i, x, mv.clone());
                        mv
                    } else {
                        // A point adapted by the helper gets an independent
                        // public value in this variant.
                        let v = self.draw(i, x);
                        self.s_define(i, x, v.clone());
                        v
                    }
                } else {
                    if self.middle_points.contains(&key) {
                        self.red(BadKind::BadEval, "middle point pulled into public table")?;
                    }
                    self.s_define(i, x, mv.clone());
                    mv
                }
            }
        };
        self.enqueue_new_windows(i, x);
        Ok(v)
    }

    fn record_eval(
        &mut self,
        helper: bool,
        i: usize,
        x: &Gf2Vec,
        val: &Gf2Vec,
        raw_qs: &QuerySet,
    ) {
        let qs: QuerySet = raw_qs.iter().map(|(j, y)| (*j, self.rand.decode(*j, y))).collect();
        for pt in &qs {
            self.queried_by.entry(pt.clone()).or_default().insert((i, x.clone()));
        }
        if helper {
            self.m_q_sets.insert((i, x.clone()), qs);
            self.m_subverted.insert((i, x.clone()), val.clone());
        } else {
            self.s_q_sets.insert((i, x.clone()), qs);
            self.s_subverted.insert((i, x.clone()), val.clone());
        }
    }

    fn m_ctf(&mut self, i: usize, x: &Gf2Vec) -> Result<Gf2Vec, GameError> {
        if let Some(v) = self.m_subverted.get(&(i, x.clone())) {
            return Ok(v.clone());
        }
        let enc = self.rand.encode(i, x);
        let prog = self.program.clone();
        let budget = self.budget;
        let ell = self.params.ell;
        let n = self.params.n;
        let root: Point = (i, x.clone());
        let mut pending: Option<GameError> = None;
        let res = run_program(&prog, budget, i, &enc, &mut |j, y| {
            if j < 1 || j > ell {
                return Err(OracleError::Index { i: j, ell });
            }
            if y.len() != n {
                return Err(OracleError::Parameter("bad query width".into()));
            }
            let xj = self.rand.decode(j, y);
            match self.m_cf_inner(j, &xj, Some(&root)) {
                Ok(v) => Ok(v),
                Err(GameError::Oracle(e)) => Err(e),
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
        self.record_eval(true, i, x, &val, &raw_qs);
        Ok(val)
    }

    fn s_ctf(&mut self, i: usize, x: &Gf2Vec) -> Result<Gf2Vec, GameError> {
        if let Some(v) = self.s_subverted.get(&(i, x.clone())) {
            return Ok(v.clone());
        }
        let enc = self.rand.encode(i, x);
        let prog = self.program.clone();
        let budget = self.budget;
        let ell = self.params.ell;
        let n = self.params.n;
        let mut pending: Option<GameError> = None;
        let res = run_program(&prog, budget, i, &enc, &mut |j, y| {
            if j < 1 || j > ell {
                return Err(OracleError::Index { i: j, ell });
            }
            if y.len() != n {
                return Err(OracleError::Parameter("bad query width".into()));
            }
            let xj = self.rand.decode(j, y);
            match self.s_cf_inner(j, &xj) {
                Ok(v) => Ok(v),
                Err(GameError::Oracle(e)) => Err(e),
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
        self.record_eval(false, i, x, &val, &raw_qs);
        Ok(val)
    }

    fn cross_queried(&self, i: usize, x: &Gf2Vec) -> bool {
        let key = (i, x.clone());
        self.queried_by.get(&key).map_or(false, |s| s.iter().any(|e| e != &key))
    }

    fn m_honest_at(&self, i: usize, x: &Gf2Vec) -> bool {
        match (self.m_subverted.get(&(i, x.clone())), self.m_cf[i].get(x)) {
            (Some(a), Some(b)) => a == b,
            _ => false,
        }
    }

    fn s_honest_at(&self, i: usize, x: &Gf2Vec) -> bool {
        match (self.s_subverted.get(&(i, x.clone())), self.s_cf[i].get(x)) {
            (Some(a), Some(b)) => a == b,
            _ => false,
        }
    }

    // ---- helper-side completion ----

    /// Band bookkeeping around one helper-side evaluation at round r.
    fn m_band_eval(&mut self, r: usize, x: &Gf2Vec) -> Result<Gf2Vec, GameError> {
        let banded = self.in_band(r);
        if banded {
            self.middle_points.insert((r, x.clone()));
            if self.game != GameId::G5 && self.m_cf[r].contains_key(x) {
                self.red(BadKind::BadComplete, "band value already defined")?;
            }
        }
        let v = self.m_ctf(r, x)?;
        if banded && !self.m_honest_at(r, x) {
            self.red(BadKind::BadComplete, "dishonest inside band")?;
        }
        Ok(v)
    }

    /// Complete a chain from an ideal-object trigger at s (0 or ell). Walks
    /// to both sides of the adapt slot, wrapping by reading the just
    /// inserted ideal entry, then adapts per slot.
    fn m_complete(&mut self, s: usize, a: &Gf2Vec, b: &Gf2Vec, u: usize) -> Result<(), GameError> {
        let ell = self.params.ell;
        self.events.push(GEvent::HelperComplete { s });
        let mut pos: Vec<Option<Gf2Vec>> = vec![None; ell + 2];
        pos[s] = Some(a.clone());
        pos[s + 1] = Some(b.clone());
        self.m_completed.insert((s, a.clone(), b.clone()));

        // Forward to u - 1.
        let mut cur = s;
        while cur != u - 1 {
            if cur == ell {
                let key = (pos[ell].clone().unwrap(), pos[ell + 1].clone().unwrap());
                let img = if let Some(img) = self.rf_up.get(&key) {
                    img.clone()
                } else {
                    unreachable!("trigger inserted the ideal entry")
                };
                pos[0] = Some(img.0);
                pos[1] = Some(img.1);
                cur = 0;
            } else {
                let xc = pos[cur].clone().unwrap();
                let xc1 = pos[cur + 1].clone().unwrap();
                let v = self.m_band_eval(cur + 1, &xc1)?;
                let nxt = xc.xor(&v);
                self.m_completed.insert((cur + 1, xc1, nxt.clone()));
                pos[cur + 2] = Some(nxt);
                cur += 1;
            }
        }
        // Backward to u + 1.
        let mut cur = s;
        while cur != u + 1 {
            if cur == 0 {
                let key = (pos[0].clone().unwrap(), pos[1].clone().unwrap());
                let img = self.rf_down.get(&key).cloned().expect("trigger inserted the ideal entry");
                pos[ell] = Some(img.0);
                pos[ell + 1] = Some(img.1);
                cur = ell;
            } else {
                let xc = pos[cur].clone().unwrap();
                let xc1 = pos[cur + 1].clone().unwrap();
                let v = self.m_band_eval(cur, &xc)?;
                let prv = xc1.xor(&v);
                self.m_completed.insert((cur - 1, prv.clone(), xc));
                pos[cur - 1] = Some(prv);
                cur -= 1;
            }
        }

        // Adapt the two slots. Values come from plain table reads next to
        // the slot; in the third variant a taken slot is skipped silently,
        // later variants require both fresh.
        let xm2 = pos[u - 2].clone().unwrap();
        let xm1 = pos[u - 1].clone().unwrap();
        let xp2 = pos[u + 2].clone().unwrap();
        let xp3 = pos[u + 3].clone().unwrap();
        let vum1 = self.m_cf[u - 1].get(&xm1).cloned().expect("round u-1 walked");
        let vup2 = self.m_cf[u + 2].get(&xp2).cloned().expect("round u+2 walked");
        let x_u = xm2.xor(&vum1);
        let x_u1 = xp3.xor(&vup2);
        if self.game != GameId::G3
            && (self.m_cf[u].contains_key(&x_u) || self.m_cf[u + 1].contains_key(&x_u1))
        {
            self.red(BadKind::BadComplete, "adapt slot already defined on helper side")?;
        }
        if !self.m_cf[u].contains_key(&x_u) {
            self.m_define(u, &x_u, xm1.xor(&x_u1));
            self.middle_points.insert((u, x_u.clone()));
            self.adapted_points.insert((u, x_u.clone()));
        } else {
            self.bad(BadKind::BadComplete, "adapt slot already defined on helper side", false);
        }
        if !self.m_cf[u + 1].contains_key(&x_u1) {
            self.m_define(u + 1, &x_u1, x_u.xor(&xp2));
            self.middle_points.insert((u + 1, x_u1.clone()));
            self.adapted_points.insert((u + 1, x_u1.clone()));
        } else {
            self.bad(BadKind::BadComplete, "adapt slot already defined on helper side", false);
        }
        self.events.push(GEvent::Adapted { side: "helper", u });
        self.m_ctf(u, &x_u)?;
        self.m_ctf(u + 1, &x_u1)?;
        let honest = self.m_honest_at(u, &x_u) && self.m_honest_at(u + 1, &x_u1);
        if honest {
            self.m_completed.insert((u, x_u.clone(), x_u1.clone()));
        } else if self.game != GameId::G3 {
            self.red(BadKind::BadComplete, "adapted slot dishonest on helper side")?;
        }
        pos[u] = Some(x_u);
        pos[u + 1] = Some(x_u1);

        // Band sweep: nothing else may have listed the band values.
        for i in self.params.mid_lo..=self.params.mid_hi {
            let y = pos[i].clone().unwrap();
            if self.cross_queried(i, &y) {
                self.red(BadKind::BadComplete, "band value cross queried")?;
            }
        }
        Ok(())
    }

    /// Last-variant helper completion: one full directional walk with lazy
    /// values everywhere, then the ideal object is programmed to match the
    /// walked endpoints.
    fn m_complete_one_way(
        &mut self,
        s: usize,
        a: &Gf2Vec,
        b: &Gf2Vec,
        u: usize,
    ) -> Result<(), GameError> {
        let ell = self.params.ell;
        self.events.push(GEvent::HelperComplete { s });
        let mut pos: Vec<Option<Gf2Vec>> = vec![None; ell + 2];
        pos[s] = Some(a.clone());
        pos[s + 1] = Some(b.clone());
        self.m_completed.insert((s, a.clone(), b.clone()));
        if s == 0 {
            for r in 1..=ell {
                let xr = pos[r].clone().unwrap();
                let v = self.m_band_eval(r, &xr)?;
                let nxt = pos[r - 1].clone().unwrap().xor(&v);
                self.m_completed.insert((r, xr, nxt.clone()));
                pos[r + 1] = Some(nxt);
            }
        } else {
            for r in (1..=ell).rev() {
                let xr = pos[r].clone().unwrap();
                let v = self.m_band_eval(r, &xr)?;
                let prv = pos[r + 1].clone().unwrap().xor(&v);
                self.m_completed.insert((r - 1, prv.clone(), xr));
                pos[r - 1] = Some(prv);
            }
        }
        for (r, x) in [(u, pos[u].clone().unwrap()), (u + 1, pos[u + 1].clone().unwrap())] {
            self.middle_points.insert((r, x.clone()));
            self.adapted_points.insert((r, x));
        }
        for i in self.params.mid_lo..=self.params.mid_hi {
            let y = pos[i].clone().unwrap();
            if self.cross_queried(i, &y) {
                self.red(BadKind::BadComplete, "band value cross queried")?;
            }
        }
        let bottom = (pos[0].clone().unwrap(), pos[1].clone().unwrap());
        let top = (pos[ell].clone().unwrap(), pos[ell + 1].clone().unwrap());
        self.rf_insert(bottom, top);
        Ok(())
    }

    // ---- public entry points ----

    fn after_external(&mut self) {
        self.size_series.push((self.external_queries, self.s_total));
    }

    pub fn rf_query(&mut self, x0: &Gf2Vec, x1: &Gf2Vec) -> Result<Pair, GameError> {
        self.external_queries += 1;
        self.events.push(GEvent::ExternalQuery {
            kind: "rf",
            i: 0,
            x: format!("{},{}", x0.to_hex(), x1.to_hex()),
        });
        let key = (x0.clone(), x1.clone());
        if !self.rf_down.contains_key(&key) {
            if self.game == GameId::G5 {
                self.m_complete_one_way(0, x0, x1, self.params.u_lo)?;
            } else {
                let img = self.rf_sample(0, &key);
                self.rf_insert(key.clone(), img);
                self.m_complete(0, x0, x1, self.params.u_lo)?;
            }
        }
        let out = self.rf_down.get(&key).cloned().expect("defined above");
        self.after_external();
        Ok(out)
    }

    pub fn rf_inverse_query(&mut self, xl: &Gf2Vec, xl1: &Gf2Vec) -> Result<Pair, GameError> {
        self.external_queries += 1;
        self.events.push(GEvent::ExternalQuery {
            kind: "rf_inv",
            i: 0,
            x: format!("{},{}", xl.to_hex(), xl1.to_hex()),
        });
        let key = (xl.clone(), xl1.clone());
        if !self.rf_up.contains_key(&key) {
            if self.game == GameId::G5 {
                self.m_complete_one_way(self.params.ell, xl, xl1, self.params.u_lo)?;
            } else {
                let img = self.rf_sample(1, &key);
                self.rf_insert(img, key.clone());
                self.m_complete(self.params.ell, xl, xl1, self.params.u_lo)?;
            }
        }
        let out = self.rf_up.get(&key).cloned().expect("defined above");
        self.after_external();
        Ok(out)
    }

    pub fn s_cf_query(&mut self, i: usize, x: &Gf2Vec) -> Result<Gf2Vec, GameError> {
        if i < 1 || i > self.params.ell {
            return Err(GameError::Oracle(OracleError::Index { i, ell: self.params.ell }));
        }
        if x.len() != self.params.n {
            return Err(GameError::Oracle(OracleError::Parameter("bad input width".into())));
        }
        self.external_queries += 1;
        self.events.push(GEvent::ExternalQuery { kind: "cf", i, x: x.to_hex() });
        self.s_cf_inner(i, x)?;
        self.drain_queue()?;
        let v = self.s_cf[i].get(x).cloned().expect("defined above");
        self.after_external();
        Ok(v)
    }

    /// Subverted round query emulated against the public entry point.
    pub fn s_cf_tilde_query(&mut self, i: usize, x: &Gf2Vec) -> Result<Gf2Vec, GameError> {
        if let Some(v) = self.s_subverted.get(&(i, x.clone())) {
            return Ok(v.clone());
        }
        let enc = self.rand.encode(i, x);
        let prog = self.program.clone();
        let budget = self.budget;
        let ell = self.params.ell;
        let n = self.params.n;
        let mut pending: Option<GameError> = None;
        let res = run_program(&prog, budget, i, &enc, &mut |j, y| {
            if j < 1 || j > ell {
                return Err(OracleError::Index { i: j, ell });
            }
            if y.len() != n {
                return Err(OracleError::Parameter("bad query width".into()));
            }
            let xj = self.rand.decode(j, y);
            match self.s_cf_query(j, &xj) {
                Ok(v) => Ok(v),
                Err(GameError::Oracle(e)) => Err(e),
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
        self.record_eval(false, i, x, &val, &raw_qs);
        Ok(val)
    }

    // ---- public-side windows ----

    fn enqueue_new_windows(&mut self, i: usize, x: &Gf2Vec) {
        let w = self.params.w;
        let ell = self.params.ell;
        let mut batch: Vec<Window> = Vec::new();
        if i >= w {
            let s = i - w + 1;
            let mut group: Vec<Window> = Vec::new();
            if w == 1 {
                group.push(Window { s, vals: vec![x.clone()] });
            } else {
                let mut prevs: Vec<&Gf2Vec> = self.s_cf[i - 1].keys().collect();
                prevs.sort();
                for prev in prevs {
                    if let Some(win) = self.window_down(i, x, prev, s) {
                        group.push(win);
                    }
                }
                group.sort_by(|a, b| a.vals.cmp(&b.vals));
            }
            batch.extend(group);
        }
        if w > 1 && i + w - 1 <= ell {
            let mut group: Vec<Window> = Vec::new();
            let mut nexts: Vec<&Gf2Vec> = self.s_cf[i + 1].keys().collect();
            nexts.sort();
            for next in nexts {
                if let Some(win) = self.window_up(i, x, next) {
                    group.push(win);
                }
            }
            group.sort_by(|a, b| a.vals.cmp(&b.vals));
            batch.extend(group);
        }
        for win in batch {
            self.events.push(GEvent::Enqueue { s: win.s });
            self.queue.push_back(win);
        }
    }

    fn window_down(&self, i: usize, x: &Gf2Vec, prev: &Gf2Vec, s: usize) -> Option<Window> {
        let mut vals = vec![x.clone(), prev.clone()];
        while vals.len() < self.params.w {
            let j = i + 1 - vals.len();
            let vj = self.s_cf[j].get(vals.last().unwrap())?;
            let below = vals[vals.len() - 2].xor(vj);
            if !self.s_cf[j - 1].contains_key(&below) {
                return None;
            }
            vals.push(below);
        }
        vals.reverse();
        Some(Window { s, vals })
    }

    fn window_up(&self, i: usize, x: &Gf2Vec, next: &Gf2Vec) -> Option<Window> {
        let mut vals = vec![x.clone(), next.clone()];
        while vals.len() < self.params.w {
            let j = i + vals.len() - 1;
            let vj = self.s_cf[j].get(vals.last().unwrap())?;
            let above = vals[vals.len() - 2].xor(vj);
            if !self.s_cf[j + 1].contains_key(&above) {
                return None;
            }
            vals.push(above);
        }
        Some(Window { s: i, vals })
    }

    fn drain_queue(&mut self) -> Result<(), GameError> {
        while let Some(win) = self.queue.pop_front() {
            if let Some(u) = self.s_check(&win)? {
                self.s_complete(&win, u)?;
            }
        }
        Ok(())
    }

    fn s_check(&mut self, win: &Window) -> Result<Option<usize>, GameError> {
        for idx in 0..win.vals.len().saturating_sub(1) {
            let trip = (win.s + idx, win.vals[idx].clone(), win.vals[idx + 1].clone());
            if self.s_completed.contains(&trip) || self.honesty_checked.contains(&trip) {
                self.events.push(GEvent::Discard { s: win.s, reason: "overlap" });
                return Ok(None);
            }
        }
        for idx in 0..win.vals.len().saturating_sub(1) {
            self.honesty_checked.insert((
                win.s + idx,
                win.vals[idx].clone(),
                win.vals[idx + 1].clone(),
            ));
        }
        let mut all_honest = true;
        for (idx, xv) in win.vals.iter().enumerate() {
            self.s_ctf(win.s + idx, xv)?;
            if !self.s_honest_at(win.s + idx, xv) {
                all_honest = false;
            }
        }
        if !all_honest {
            self.events.push(GEvent::Discard { s: win.s, reason: "dishonest" });
            return Ok(None);
        }
        let u = self.params.adapt_position(win.s);
        self.events.push(GEvent::PlanEmitted { s: win.s, u });
        Ok(Some(u))
    }

    fn s_complete(&mut self, win: &Window, u: usize) -> Result<(), GameError> {
        let first = (win.s, win.vals[0].clone(), win.vals[1].clone());
        let on_helper_chain = self.m_completed.contains(&first);
        if on_helper_chain {
            if self.game == GameId::G3 {
                self.events.push(GEvent::Bad {
                    kind: BadKind::BadComplete,
                    reason: "window already on a helper chain",
                    fatal: false,
                });
            } else if u == self.params.u_hi {
                self.red(BadKind::BadComplete, "helper chain window adapts high")?;
            } else {
                return self.s_copy_branch(win);
            }
        }
        match self.game {
            GameId::G5 => self.s_complete_one_way(win, u),
            _ => self.s_complete_adapting(win, u),
        }
    }

    /// Pull an already helper-completed chain into the public table wholesale.
    fn s_copy_branch(&mut self, win: &Window) -> Result<(), GameError> {
        let ell = self.params.ell;
        let u = self.params.u_lo;
        self.events.push(GEvent::CopyBranch { s: win.s });
        let mut pos: Vec<Option<Gf2Vec>> = vec![None; ell + 2];
        pos[win.s] = Some(win.vals[0].clone());
        pos[win.s + 1] = Some(win.vals[1].clone());
        for r in win.s + 1..=ell {
            let xr = pos[r].clone().unwrap();
            let v = match self.m_subverted.get(&(r, xr.clone())) {
                Some(v) => v.clone(),
                None => return self.red(BadKind::BadComplete, "helper chain not evaluated"),
            };
            pos[r + 1] = Some(pos[r - 1].clone().unwrap().xor(&v));
        }
        for r in (1..=win.s).rev() {
            let xr = pos[r].clone().unwrap();
            let v = match self.m_subverted.get(&(r, xr.clone())) {
                Some(v) => v.clone(),
                None => return self.red(BadKind::BadComplete, "helper chain not evaluated"),
            };
            pos[r - 1] = Some(pos[r + 1].clone().unwrap().xor(&v));
        }
        // The helper's adapt slots must be invisible to the public side and
        // clean before they are absorbed.
        for (r, x) in [(u, pos[u].clone().unwrap()), (u + 1, pos[u + 1].clone().unwrap())] {
            if self.s_cf[r].contains_key(&x) {
                self.red(BadKind::BadComplete, "helper adapt slot already public")?;
            }
            if self.cross_queried(r, &x) {
                self.red(BadKind::BadComplete, "helper adapt slot cross queried")?;
            }
            if !self.m_honest_at(r, &x) {
                self.red(BadKind::BadComplete, "helper adapt slot dishonest")?;
            }
        }
        let mut to_copy: QuerySet = QuerySet::new();
        for r in 1..=ell {
            let xr = pos[r].clone().unwrap();
            if let Some(qs) = self.m_q_sets.get(&(r, xr)) {
                to_copy.extend(qs.iter().cloned());
            }
        }
        for (j, y) in to_copy {
            if !self.s_cf[j].contains_key(&y) {
                let v = self.m_cf[j].get(&y).cloned().expect("listed points are defined");
                self.s_define(j, &y, v);
            }
        }
        Ok(())
    }

    /// Ordinary completion: walk both sides of the adapt slot, wrapping
    /// through the ideal table, then adapt the two slots.
    fn s_complete_adapting(&mut self, win: &Window, u: usize) -> Result<(), GameError> {
        let ell = self.params.ell;
        let s = win.s;
        let mut pos: Vec<Option<Gf2Vec>> = vec![None; ell + 2];
        pos[s] = Some(win.vals[0].clone());
        pos[s + 1] = Some(win.vals[1].clone());
        self.s_completed.insert((s, win.vals[0].clone(), win.vals[1].clone()));
        let mut cur = s;
        while cur != u - 1 {
            if cur == ell {
                let key = (pos[ell].clone().unwrap(), pos[ell + 1].clone().unwrap());
                let img = self.rf_read_or_sample(false, &key);
                pos[0] = Some(img.0);
                pos[1] = Some(img.1);
                cur = 0;
            } else {
                let xc = pos[cur].clone().unwrap();
                let xc1 = pos[cur + 1].clone().unwrap();
                let v = self.s_ctf(cur + 1, &xc1)?;
                let nxt = xc.xor(&v);
                self.s_completed.insert((cur + 1, xc1, nxt.clone()));
                pos[cur + 2] = Some(nxt);
                cur += 1;
            }
        }
        let mut cur = s;
        while cur != u + 1 {
            if cur == 0 {
                let key = (pos[0].clone().unwrap(), pos[1].clone().unwrap());
                let img = self.rf_read_or_sample(true, &key);
                pos[ell] = Some(img.0);
                pos[ell + 1] = Some(img.1);
                cur = ell;
            } else {
                let xc = pos[cur].clone().unwrap();
                let xc1 = pos[cur + 1].clone().unwrap();
                let v = self.s_ctf(cur, &xc)?;
                let prv = xc1.xor(&v);
                self.s_completed.insert((cur - 1, prv.clone(), xc));
                pos[cur - 1] = Some(prv);
                cur -= 1;
            }
        }

        let xm2 = pos[u - 2].clone().unwrap();
        let xm1 = pos[u - 1].clone().unwrap();
        let xp2 = pos[u + 2].clone().unwrap();
        let xp3 = pos[u + 3].clone().unwrap();
        let vum1 = self.s_cf[u - 1].get(&xm1).cloned().expect("round u-1 walked");
        let vup2 = self.s_cf[u + 2].get(&xp2).cloned().expect("round u+2 walked");
        let x_u = xm2.xor(&vum1);
        let x_u1 = xp3.xor(&vup2);
        if self.s_cf[u].contains_key(&x_u) || self.s_cf[u + 1].contains_key(&x_u1) {
            self.bad(BadKind::BadComplete, "adapt slot already public", true);
            return Err(GameError::Abort {
                kind: BadKind::BadComplete,
                reason: "adapt slot already public",
            });
        }
        // Programming would land on a helper entry: logged first, fatal later.
        if self.m_cf[u].contains_key(&x_u) || self.m_cf[u + 1].contains_key(&x_u1) {
            self.red(BadKind::BadComplete, "adapt slot already on helper side")?;
        }
        let want_u = xm1.xor(&x_u1);
        let want_u1 = x_u.xor(&xp2);
        self.m_define(u, &x_u, want_u.clone());
        self.m_define(u + 1, &x_u1, want_u1.clone());
        self.s_define(u, &x_u, want_u.clone());
        self.s_define(u + 1, &x_u1, want_u1.clone());
        self.events.push(GEvent::Adapted { side: "public", u });
        let got_u = self.s_ctf(u, &x_u)?;
        let got_u1 = self.s_ctf(u + 1, &x_u1)?;
        if got_u != want_u || got_u1 != want_u1 {
            self.bad(BadKind::BadComplete, "adapted slot dishonest", true);
            return Err(GameError::Abort {
                kind: BadKind::BadComplete,
                reason: "adapted slot dishonest",
            });
        }
        self.s_completed.insert((u, x_u.clone(), x_u1.clone()));
        if self.cross_queried(u, &x_u) || self.cross_queried(u + 1, &x_u1) {
            self.bad(BadKind::BadComplete, "adapt slot cross queried", true);
            return Err(GameError::Abort {
                kind: BadKind::BadComplete,
                reason: "adapt slot cross queried",
            });
        }
        Ok(())
    }

    /// Last-variant completion: two directional walks with plain lazy values
    /// and freshness/honesty checks at the adapt slots, then the ideal
    /// object is programmed to the walked endpoints.
    fn s_complete_one_way(&mut self, win: &Window, u: usize) -> Result<(), GameError> {
        let ell = self.params.ell;
        let s = win.s;
        let mut pos: Vec<Option<Gf2Vec>> = vec![None; ell + 2];
        pos[s] = Some(win.vals[0].clone());
        pos[s + 1] = Some(win.vals[1].clone());
        self.s_completed.insert((s, win.vals[0].clone(), win.vals[1].clone()));
        for r in s + 1..=ell {
            let xr = pos[r].clone().unwrap();
            if (r == u || r == u + 1)
                && (self.s_cf[r].contains_key(&xr) || self.m_cf[r].contains_key(&xr))
            {
                self.red(BadKind::BadComplete, "slot value already defined")?;
            }
            let v = self.s_ctf(r, &xr)?;
            if (r == u || r == u + 1) && !self.s_honest_at(r, &xr) {
                self.red(BadKind::BadComplete, "slot value dishonest")?;
            }
            let nxt = pos[r - 1].clone().unwrap().xor(&v);
            self.s_completed.insert((r, xr, nxt.clone()));
            pos[r + 1] = Some(nxt);
        }
        for r in (1..=s).rev() {
            let xr = pos[r].clone().unwrap();
            if (r == u || r == u + 1)
                && (self.s_cf[r].contains_key(&xr) || self.m_cf[r].contains_key(&xr))
            {
                self.red(BadKind::BadComplete, "slot value already defined")?;
            }
            let v = self.s_ctf(r, &xr)?;
            if (r == u || r == u + 1) && !self.s_honest_at(r, &xr) {
                self.red(BadKind::BadComplete, "slot value dishonest")?;
            }
            let prv = pos[r + 1].clone().unwrap().xor(&v);
            self.s_completed.insert((r - 1, prv.clone(), xr));
            pos[r - 1] = Some(prv);
        }
        if self.cross_queried(u, pos[u].as_ref().unwrap())
            || self.cross_queried(u + 1, pos[u + 1].as_ref().unwrap())
        {
            self.red(BadKind::BadComplete, "adapt slot cross queried")?;
        }
        let bottom = (pos[0].clone().unwrap(), pos[1].clone().unwrap());
        let top = (pos[ell].clone().unwrap(), pos[ell + 1].clone().unwrap());
        self.rf_insert(bottom, top);
        Ok(())
    }
}

// ---- scripted runs ----

#[derive(Clone, Debug)]
pub enum DriverOp {
    /// Walk all rounds through the subverted interface, then query the
    /// ideal object on the start pair and compare endpoints.
    Walk { x0: Gf2Vec, x1: Gf2Vec },
    Round { i: usize, x: Gf2Vec },
    Subverted { i: usize, x: Gf2Vec },
    Rf { x0: Gf2Vec, x1: Gf2Vec },
    RfInverse { a: Gf2Vec, b: Gf2Vec },
}

/// Reproducible mixed workload.
pub fn random_script(n: usize, ell: usize, ops: usize, seed: u64) -> Vec<DriverOp> {
    let mut st = rng::stream(seed, "script", &[]);
    let mut out = Vec::with_capacity(ops);
    for _ in 0..ops {
        let pick: u32 = st.gen_range(0..10);
        let op = match pick {
            0..=3 => DriverOp::Walk {
                x0: Gf2Vec::random(n, &mut st),
                x1: Gf2Vec::random(n, &mut st),
            },
            4..=6 => DriverOp::Round {
                i: st.gen_range(1..=ell as u64) as usize,
                x: Gf2Vec::random(n, &mut st),
            },
            7 => DriverOp::Subverted {
                i: st.gen_range(1..=ell as u64) as usize,
                x: Gf2Vec::random(n, &mut st),
            },
            8 => DriverOp::Rf {
                x0: Gf2Vec::random(n, &mut st),
                x1: Gf2Vec::random(n, &mut st),
            },
            _ => DriverOp::RfInverse {
                a: Gf2Vec::random(n, &mut st),
                b: Gf2Vec::random(n, &mut st),
            },
        };
        out.push(op);
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub enum GameStatus {
    Completed,
    Aborted { reason: String },
}

#[derive(Clone, Debug, Serialize)]
pub struct GameOutcome {
    pub game: GameId,
    pub status: GameStatus,
    pub ops_run: usize,
    pub bad_complete: u64,
    pub bad_eval: u64,
    pub rf_overwrites: u64,
    pub m_overwrites: u64,
    pub subset_violations: u64,
    pub external_queries: u64,
    pub table_len: usize,
    pub walk_mismatches: u64,
    pub size_series: Vec<(u64, usize)>,
}

/// Run one scripted experiment under the chosen variant. Encodings are
/// derived from the seed, so coupled comparisons share everything.
pub fn run_game(
    game: GameId,
    params: &ConstructionParams,
    program: SubversionProgram,
    budget: usize,
    seed: u64,
    script: &[DriverOp],
) -> GameOutcome {
    let rand = PublicRandomness::sample(params.n, params.ell, rng::derive64(seed, "enc", &[]));
    let mut out = GameOutcome {
        game,
        status: GameStatus::Completed,
        ops_run: 0,
        bad_complete: 0,
        bad_eval: 0,
        rf_overwrites: 0,
        m_overwrites: 0,
        subset_violations: 0,
        external_queries: 0,
        table_len: 0,
        walk_mismatches: 0,
        size_series: Vec::new(),
    };
    match game {
        GameId::G1 | GameId::G2 => {
            let backend = if game == GameId::G1 {
                IdealBackend::Permutation
            } else {
                IdealBackend::RandomFunction
            };
            let mut sim = SimulatorState::new(
                params.clone(),
                rand,
                program,
                budget,
                seed,
                backend,
            )
            .expect("dimensions agree");
            let mut failed: Option<String> = None;
            'ops: for op in script {
                let r: Result<(), SimError> = (|| {
                    match op {
                        DriverOp::Walk { x0, x1 } => {
                            let ell = params.ell;
                            let mut prev = x0.clone();
                            let mut cur = x1.clone();
                            for i in 1..=ell {
                                let v = sim.cf_tilde_query(i, &cur)?;
                                let nxt = prev.xor(&v);
                                prev = std::mem::replace(&mut cur, nxt);
                            }
                            let img = sim.p_query(x0, x1)?;
                            if img != (prev, cur) {
                                out.walk_mismatches += 1;
                            }
                        }
                        DriverOp::Round { i, x } => {
                            sim.cf_query(*i, x)?;
                        }
                        DriverOp::Subverted { i, x } => {
                            sim.cf_tilde_query(*i, x)?;
                        }
                        DriverOp::Rf { x0, x1 } => {
                            sim.p_query(x0, x1)?;
                        }
                        DriverOp::RfInverse { a, b } => {
                            sim.p_inverse_query(a, b)?;
                        }
                    }
                    Ok(())
                })();
                out.ops_run += 1;
                if let Err(e) = r {
                    failed = Some(e.to_string());
                    break 'ops;
                }
            }
            if let Some(reason) = failed {
                out.bad_complete = 1;
                out.status = GameStatus::Aborted { reason };
            }
            out.rf_overwrites = sim.pair_overwrites();
            out.external_queries = sim.external_queries;
            out.table_len = sim.table_len();
            out.size_series = sim.size_series.clone();
        }
        _ => {
            let mut dual = DualState::new(game, params.clone(), rand, program, budget, seed)
                .expect("dimensions agree");
            let mut failed: Option<String> = None;
            'dops: for op in script {
                let r: Result<(), GameError> = (|| {
                    match op {
                        DriverOp::Walk { x0, x1 } => {
                            let ell = params.ell;
                            let mut prev = x0.clone();
                            let mut cur = x1.clone();
                            for i in 1..=ell {
                                let v = dual.s_cf_tilde_query(i, &cur)?;
                                let nxt = prev.xor(&v);
                                prev = std::mem::replace(&mut cur, nxt);
                            }
                            let img = dual.rf_query(x0, x1)?;
                            if img != (prev, cur) {
                                out.walk_mismatches += 1;
                            }
                        }
                        DriverOp::Round { i, x } => {
                            dual.s_cf_query(*i, x)?;
                        }
                        DriverOp::Subverted { i, x } => {
                            dual.s_cf_tilde_query(*i, x)?;
                        }
                        DriverOp::Rf { x0, x1 } => {
                            dual.rf_query(x0, x1)?;
                        }
                        DriverOp::RfInverse { a, b } => {
                            dual.rf_inverse_query(a, b)?;
                        }
                    }
                    Ok(())
                })();
                out.ops_run += 1;
                if let Err(e) = r {
                    failed = Some(e.to_string());
                    break 'dops;
                }
            }
            if let Some(reason) = failed {
                out.status = GameStatus::Aborted { reason };
            }
            out.bad_complete = dual.bad_complete;
            out.bad_eval = dual.bad_eval;
            out.rf_overwrites = dual.rf_overwrites;
            out.m_overwrites = dual.m_cf_overwrites;
            out.subset_violations = dual.subset_violations;
            out.external_queries = dual.external_queries;
            out.table_len = dual.s_table_len();
            out.size_series = dual.size_series.clone();
        }
    }
    out
}

// ---- transcript diagnostics ----

#[derive(Clone, Debug, Serialize)]
pub struct MonotoneViolation {
    pub i: usize,
    pub x_prev: String,
    pub x_mid: String,
    pub x_next: String,
}

/// Scan per-round tables for relation-consistent triples whose middle entry
/// was defined after both neighbors. Index 0 of `tables` is unused.
pub fn monotone_scan(
    tables: &[HashMap<Gf2Vec, Gf2Vec>],
    order: &dyn Fn(usize, &Gf2Vec) -> Option<u64>,
) -> Vec<MonotoneViolation> {
    let ell = tables.len().saturating_sub(1);
    let mut out = Vec::new();
    for i in 2..ell {
        for (x_mid, v_mid) in &tables[i] {
            for x_prev in tables[i - 1].keys() {
                let x_next = x_prev.xor(v_mid);
                if !tables[i + 1].contains_key(&x_next) {
                    continue;
                }
                let (om, oa, ob) = (
                    order(i, x_mid),
                    order(i - 1, x_prev),
                    order(i + 1, &x_next),
                );
                if let (Some(om), Some(oa), Some(ob)) = (om, oa, ob) {
                    if om > oa && om > ob {
                        out.push(MonotoneViolation {
                            i,
                            x_prev: x_prev.to_hex(),
                            x_mid: x_mid.to_hex(),
                            x_next: x_next.to_hex(),
                        });
                    }
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RegionScanConfig {
    /// Honest run length that separates two dishonest clusters.
    pub honest_window: usize,
    /// Spans longer than this are flagged.
    pub length_bound: usize,
}

impl RegionScanConfig {
    pub fn defaults(n: usize) -> Self {
        RegionScanConfig { honest_window: 14, length_bound: n / 6 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BadRegion {
    /// First dishonest index of the cluster.
    pub start: usize,
    /// Last dishonest index of the cluster.
    pub end: usize,
    pub span: usize,
    pub flagged: bool,
}

/// Group dishonest positions of a chain honesty bitmap into clusters
/// separated by at least `honest_window` honest positions.
pub fn bad_region_scan(honest: &[bool], cfg: RegionScanConfig) -> Vec<BadRegion> {
    let dishonest: Vec<usize> = honest
        .iter()
        .enumerate()
        .filter_map(|(i, h)| if *h { None } else { Some(i) })
        .collect();
    let mut out = Vec::new();
    let mut idx = 0;
    while idx < dishonest.len() {
        let start = dishonest[idx];
        let mut end = start;
        while idx + 1 < dishonest.len() && dishonest[idx + 1] - end - 1 < cfg.honest_window {
            idx += 1;
            end = dishonest[idx];
        }
        let span = end - start + 1;
        out.push(BadRegion { start, end, span, flagged: span > cfg.length_bound });
        idx += 1;
    }
    out
}

// ---- ideal-object displacement rate ----

#[derive(Clone, Debug, Serialize)]
pub struct OverwriteScan {
    pub n: usize,
    pub queries: usize,
    pub trials: u64,
    pub hits: u64,
    pub rate: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    /// Simple union bound: queries^2 / 2^(2n).
    pub bound: f64,
}

/// Probability that a batch of fresh two-sided draws displaces an entry.
pub fn rf_overwrite_probability(n: usize, queries: usize, trials: u64, seed: u64) -> OverwriteScan {
    let mut hits = 0u64;
    for t in 0..trials {
        let mut st = rng::stream(seed, "ow-trial", &[&t.to_le_bytes()]);
        let mut down: HashMap<Pair, Pair> = HashMap::new();
        let mut up: HashMap<Pair, Pair> = HashMap::new();
        let mut displaced = false;
        let mut issued = 0usize;
        while issued < queries {
            let key = (Gf2Vec::random(n, &mut st), Gf2Vec::random(n, &mut st));
            if down.contains_key(&key) {
                continue;
            }
            let img = (Gf2Vec::random(n, &mut st), Gf2Vec::random(n, &mut st));
            down.insert(key.clone(), img.clone());
            if let Some(old) = up.insert(img, key.clone()) {
                if old != key {
                    displaced = true;
                }
            }
            issued += 1;
        }
        if displaced {
            hits += 1;
        }
    }
    let rate = hits as f64 / trials as f64;
    let (lo, hi) = wilson95(hits, trials);
    let bound = (queries as f64) * (queries as f64) / 2f64.powi(2 * n as i32);
    OverwriteScan {
        n,
        queries,
        trials,
        hits,
        rate,
        wilson_low: lo,
        wilson_high: hi,
        bound,
    }
}
