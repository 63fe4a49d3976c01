//! Linear-algebraic distinguishing attack against short networks.
//!
//! Under a prefix-zero subversion of width lambda, an input pair whose every
//! encoded round input starts with lambda zero bits forces every round value
//! to zero, so the network just alternates its two halves. Odd rounds all see
//! x_1 and even rounds all see x_0, which turns "every prefix is zero" into
//! one small GF(2) system per side. One construction query then separates the
//! real network from an ideal permutation almost surely.

use crate::feistel::{self, PublicRandomness};
use crate::gf2::{Gf2Mat, Gf2Vec};
use crate::oracle::{OracleTable, SubversionProgram, SubvertedOracle};
use crate::rng;
use crate::stats::wilson95;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("bad attack parameter: {0}")]
    Parameter(String),
    #[error("no collapse pair: a side system is unsolvable")]
    NoSolution,
}

/// Prefix width used by the attack: floor(n / ell) + 1.
pub fn lambda_for(n: usize, ell: usize) -> usize {
    n / ell + 1
}

/// The two stacked prefix systems, one per input side.
pub struct AttackInstance {
    pub n: usize,
    pub ell: usize,
    pub lambda: usize,
    /// Constraints on x_1 (the odd-round input): matrix and rhs.
    pub odd: (Gf2Mat, Gf2Vec),
    /// Constraints on x_0 (the even-round input).
    pub even: (Gf2Mat, Gf2Vec),
}

/// Stack the first lambda encoding rows of every round on one side.
/// Round i constrains its side by: (first lambda rows of a_i) x = first
/// lambda bits of b_i, i.e. the encoded input starts with lambda zeros.
pub fn build_system(r: &PublicRandomness, lambda: usize) -> Result<AttackInstance, AttackError> {
    let n = r.n();
    let ell = r.ell();
    if lambda < 1 || lambda > n {
        return Err(AttackError::Parameter(format!("prefix width {lambda} outside 1..={n}")));
    }
    let side = |odd: bool| -> (Gf2Mat, Gf2Vec) {
        let rounds: Vec<usize> = (1..=ell).filter(|i| (i % 2 == 1) == odd).collect();
        let mut rows = Vec::with_capacity(lambda * rounds.len());
        let mut rhs = Gf2Vec::zero(lambda * rounds.len());
        for (g, &i) in rounds.iter().enumerate() {
            for k in 0..lambda {
                rows.push(r.a(i).matrix().row(k).clone());
                if r.b(i).get(k) {
                    rhs.set(g * lambda + k, true);
                }
            }
        }
        (Gf2Mat::from_rows(rows).expect("uniform width"), rhs)
    };
    Ok(AttackInstance { n, ell, lambda, odd: side(true), even: side(false) })
}

impl AttackInstance {
    /// Solve both sides and re-verify the collapse against the encodings:
    /// every round's encoded input must start with lambda zero bits.
    pub fn find_collapse_pair(
        &self,
        r: &PublicRandomness,
    ) -> Result<(Gf2Vec, Gf2Vec), AttackError> {
        let solve = |(m, b): &(Gf2Mat, Gf2Vec)| -> Result<Gf2Vec, AttackError> {
            m.solve(b)
                .map_err(|e| AttackError::Parameter(e.to_string()))?
                .ok_or(AttackError::NoSolution)
        };
        let x1 = solve(&self.odd)?;
        let x0 = solve(&self.even)?;
        for i in 1..=self.ell {
            let input = if i % 2 == 1 { &x1 } else { &x0 };
            if !r.encode(i, input).prefix_is_zero(self.lambda) {
                return Err(AttackError::Parameter(format!(
                    "collapse verification failed at round {i}"
                )));
            }
        }
        Ok((x0, x1))
    }
}

/// With all round values zero the pair alternates: even round counts return
/// it unchanged, odd ones swapped.
pub fn predicted_output(ell: usize, x0: &Gf2Vec, x1: &Gf2Vec) -> (Gf2Vec, Gf2Vec) {
    if ell % 2 == 0 {
        (x0.clone(), x1.clone())
    } else {
        (x1.clone(), x0.clone())
    }
}

#[derive(Clone, Debug)]
pub struct AttackConfig {
    pub n: usize,
    pub ell: usize,
    /// Advertised dishonesty budget of the model; recorded, not enforced.
    pub eps: f64,
    pub trials: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AttackTrial {
    pub n: usize,
    pub ell: usize,
    pub lambda: usize,
    pub eps: f64,
    pub trial: u64,
    pub solvable: bool,
    pub real_hit: bool,
    pub ideal_hit: bool,
    /// Static prefix check plus exact real-output match.
    pub collapse_verified: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct AttackReport {
    pub n: usize,
    pub ell: usize,
    pub lambda: usize,
    pub eps: f64,
    /// Fraction of inputs the prefix-zero program rewrites: 2^-lambda.
    pub dishonest_fraction: f64,
    pub trials: u64,
    pub solvable: u64,
    pub real_hits: u64,
    pub ideal_hits: u64,
    pub advantage_estimate: f64,
    /// Construction queries the distinguisher spends per trial.
    pub construction_queries_per_trial: u64,
    pub trials_log: Vec<AttackTrial>,
}

/// Run the attack over fresh encodings per trial. The distinguisher solves
/// the systems offline (it knows the encodings), spends exactly one
/// construction query, and guesses "real" on an alternation match.
pub fn run_attack(cfg: &AttackConfig) -> Result<AttackReport, AttackError> {
    if cfg.n < 1 || cfg.ell < 1 {
        return Err(AttackError::Parameter("need n >= 1 and ell >= 1".into()));
    }
    let lambda = lambda_for(cfg.n, cfg.ell);
    if lambda > cfg.n {
        return Err(AttackError::Parameter(format!(
            "derived prefix width {lambda} exceeds n = {}",
            cfg.n
        )));
    }
    let program = SubversionProgram::prefix_zero(lambda, cfg.n)
        .map_err(|e| AttackError::Parameter(e.to_string()))?;
    let mut log = Vec::with_capacity(cfg.trials as usize);
    let (mut solvable, mut real_hits, mut ideal_hits) = (0u64, 0u64, 0u64);
    for trial in 0..cfg.trials {
        let r = PublicRandomness::sample(
            cfg.n,
            cfg.ell,
            rng::derive64(cfg.seed, "attack-enc", &[&trial.to_le_bytes()]),
        );
        let inst = build_system(&r, lambda)?;
        let mut rec = AttackTrial {
            n: cfg.n,
            ell: cfg.ell,
            lambda,
            eps: cfg.eps,
            trial,
            solvable: false,
            real_hit: false,
            ideal_hit: false,
            collapse_verified: false,
        };
        match inst.find_collapse_pair(&r) {
            Err(AttackError::NoSolution) => {}
            Err(e) => return Err(e),
            Ok((x0, x1)) => {
                rec.solvable = true;
                solvable += 1;
                let predict = predicted_output(cfg.ell, &x0, &x1);

                let table = OracleTable::new(
                    cfg.n,
                    cfg.ell,
                    rng::derive64(cfg.seed, "attack-f", &[&trial.to_le_bytes()]),
                );
                let mut o = SubvertedOracle::new(table, program.clone(), 1);
                let mut construction_queries = 0u64;
                let real_out = feistel::evaluate(&mut o, &r, &x0, &x1)
                    .map_err(|e| AttackError::Parameter(e.to_string()))?;
                construction_queries += 1;
                assert_eq!(construction_queries, 1);
                rec.real_hit = real_out == predict;
                // Alternating chain: even positions hold x0, odd ones x1.
                let prefixes_hold = (1..=cfg.ell).all(|i| {
                    let val = if i % 2 == 1 { &x1 } else { &x0 };
                    r.encode(i, val).prefix_is_zero(lambda)
                });
                rec.collapse_verified = prefixes_hold && rec.real_hit;

                let mut st =
                    rng::stream(cfg.seed, "attack-ideal", &[&trial.to_le_bytes(), &x0.to_bytes(), &x1.to_bytes()]);
                let ideal_out = (Gf2Vec::random(cfg.n, &mut st), Gf2Vec::random(cfg.n, &mut st));
                rec.ideal_hit = ideal_out == predict;

                real_hits += rec.real_hit as u64;
                ideal_hits += rec.ideal_hit as u64;
            }
        }
        log.push(rec);
    }
    Ok(AttackReport {
        n: cfg.n,
        ell: cfg.ell,
        lambda,
        eps: cfg.eps,
        dishonest_fraction: (0.5f64).powi(lambda as i32),
        trials: cfg.trials,
        solvable,
        real_hits,
        ideal_hits,
        advantage_estimate: (real_hits as f64 - ideal_hits as f64) / cfg.trials as f64,
        construction_queries_per_trial: 1,
        trials_log: log,
    })
}

/// How ell is derived from n when scanning solvability rates.
#[derive(Clone, Copy, Debug)]
pub enum EllRule {
    Fixed(usize),
    /// ell = floor(2n / log2(1/eps)), the attack's reach boundary.
    Boundary { eps: f64 },
}

impl EllRule {
    pub fn ell(&self, n: usize) -> Result<usize, AttackError> {
        match self {
            EllRule::Fixed(ell) => Ok(*ell),
            EllRule::Boundary { eps } => {
                if !(*eps > 0.0 && *eps < 1.0) {
                    return Err(AttackError::Parameter(format!("eps {eps} outside (0, 1)")));
                }
                Ok(((2.0 * n as f64) / (1.0 / eps).log2()).floor() as usize)
            }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanRow {
    pub n: usize,
    pub ell: usize,
    pub lambda: usize,
    pub trials: u64,
    pub unsolvable: u64,
    pub unsolvable_rate: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
}

/// Empirical rate of unsolvable side systems across fresh encodings.
pub fn full_rank_probability_scan(
    ns: &[usize],
    rule: EllRule,
    trials: u64,
    seed: u64,
) -> Result<Vec<ScanRow>, AttackError> {
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let ell = rule.ell(n)?;
        if ell < 1 {
            return Err(AttackError::Parameter(format!("derived ell {ell} < 1 at n {n}")));
        }
        let lambda = lambda_for(n, ell);
        if lambda > n {
            return Err(AttackError::Parameter(format!(
                "derived prefix width {lambda} exceeds n = {n}"
            )));
        }
        let mut unsolvable = 0u64;
        for trial in 0..trials {
            let r = PublicRandomness::sample(
                n,
                ell,
                rng::derive64(seed, "scan-enc", &[&(n as u64).to_le_bytes(), &trial.to_le_bytes()]),
            );
            let inst = build_system(&r, lambda)?;
            match inst.find_collapse_pair(&r) {
                Ok(_) => {}
                Err(AttackError::NoSolution) => unsolvable += 1,
                Err(e) => return Err(e),
            }
        }
        let (lo, hi) = wilson95(unsolvable, trials);
        rows.push(ScanRow {
            n,
            ell,
            lambda,
            trials,
            unsolvable,
            unsolvable_rate: unsolvable as f64 / trials.max(1) as f64,
            wilson_low: lo,
            wilson_high: hi,
        });
    }
    Ok(rows)
}
