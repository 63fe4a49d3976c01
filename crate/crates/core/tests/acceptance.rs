//! End-to-end acceptance checks. Each test prints one pass/FAIL line; run
//! with --nocapture to see the lines for passing tests too.

use std::collections::{HashMap, HashSet};
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::time::Instant;

use subfeistel::attack::{self, AttackConfig, EllRule};
use subfeistel::feistel::{self, ConstructionParams, PublicRandomness};
use subfeistel::games::{
    bad_region_scan, monotone_scan, random_script, rf_overwrite_probability, run_game, BadRegion,
    GameId, GameStatus, RegionScanConfig,
};
use subfeistel::gf2::Gf2Vec;
use subfeistel::harness::{
    efficiency_probe, run_distinguishing_experiment, ChainWalk, ExperimentConfig, RandomProbe,
};
use subfeistel::oracle::{index_to_vec, OracleTable, SubversionProgram, SubvertedOracle};
use subfeistel::sim::{IdealBackend, SimulatorState};
use subfeistel::{rng, stats};

fn check(name: &str, body: impl FnOnce()) {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(()) => println!("acceptance pass: {name}"),
        Err(e) => {
            println!("acceptance FAIL: {name}");
            resume_unwind(e);
        }
    }
}

fn tiny() -> ConstructionParams {
    ConstructionParams::custom(20, 24, 3, 12, 21, 9, 15).expect("tiny profile")
}

/// Walk one full chain through the simulator's subverted interface, close
/// it with one ideal query, and insist the endpoints agree.
fn drive_full_walk(sim: &mut SimulatorState, x0: &Gf2Vec, x1: &Gf2Vec) {
    let ell = sim.params().ell;
    let mut prev = x0.clone();
    let mut cur = x1.clone();
    for i in 1..=ell {
        let v = sim.cf_tilde_query(i, &cur).expect("round query");
        let next = prev.xor(&v);
        prev = cur;
        cur = next;
    }
    let img = sim.p_query(x0, x1).expect("ideal query");
    assert_eq!(img, (prev, cur), "walk endpoints disagree with ideal object");
}

#[test]
fn attack_beats_the_boundary_profile() {
    check(
        "boundary attack: every solvable encoding collapses, advantage at least 0.9",
        || {
            let t0 = Instant::now();
            let eps = 0.0625;
            let ell = EllRule::Boundary { eps }.ell(32).expect("boundary rounds");
            assert_eq!(ell, 16);
            let cfg = AttackConfig {
                n: 32,
                ell,
                eps,
                trials: 100,
                seed: 7,
            };
            let rep = attack::run_attack(&cfg).expect("attack run");
            assert_eq!(rep.lambda, 3);
            for t in &rep.trials_log {
                if t.solvable {
                    assert!(t.real_hit, "trial {}: solvable but no collapse", t.trial);
                }
            }
            assert!(
                rep.advantage_estimate >= 0.9,
                "advantage {}",
                rep.advantage_estimate
            );
            let unsolvable_rate = (rep.trials - rep.solvable) as f64 / rep.trials as f64;
            assert!(unsolvable_rate <= 0.10, "unsolvable rate {unsolvable_rate}");
            assert!(t0.elapsed().as_secs_f64() <= 10.0, "too slow");
        },
    );
}

#[test]
fn collapse_pairs_zero_every_encoded_round_input() {
    check(
        "collapse pairs: all encoded round inputs have the zero prefix, output matches the parity prediction bit for bit",
        || {
            let (n, ell, lambda, seed) = (32usize, 16usize, 3usize, 7u64);
            let program = SubversionProgram::prefix_zero(lambda, n).expect("program");
            let mut verified = 0u64;
            for trial in 0..100u64 {
                let r = PublicRandomness::sample(
                    n,
                    ell,
                    rng::derive64(seed, "attack-enc", &[&trial.to_le_bytes()]),
                );
                let inst = attack::build_system(&r, lambda).expect("system");
                let (x0, x1) = match inst.find_collapse_pair(&r) {
                    Ok(pair) => pair,
                    Err(_) => continue,
                };
                for i in 1..=ell {
                    let val = if i % 2 == 1 { &x1 } else { &x0 };
                    let enc = r.encode(i, val);
                    assert!(
                        enc.prefix_is_zero(lambda),
                        "trial {trial}: round {i} encoded input lacks the zero prefix"
                    );
                }
                let table = OracleTable::new(
                    n,
                    ell,
                    rng::derive64(seed, "attack-f", &[&trial.to_le_bytes()]),
                );
                let mut o = SubvertedOracle::new(table, program.clone(), 1);
                let out = feistel::evaluate(&mut o, &r, &x0, &x1).expect("evaluate");
                assert_eq!(
                    out,
                    attack::predicted_output(ell, &x0, &x1),
                    "trial {trial}: output differs from the parity prediction"
                );
                verified += 1;
            }
            assert!(verified >= 90, "only {verified} trials verified");
        },
    );
}

#[test]
fn honest_construction_permutes_the_full_domain() {
    check(
        "honest construction: bijective over all 2^10 inputs at n=5, inverse recovers every point",
        || {
            let t0 = Instant::now();
            let params = ConstructionParams::profile_8n(5).expect("profile");
            assert_eq!(params.ell, 40);
            let r = PublicRandomness::sample(5, 40, 99);
            let table = OracleTable::new(5, 40, 17);
            let mut o = SubvertedOracle::new(table, SubversionProgram::honest(), 1);
            let mut seen = HashSet::new();
            for a in 0..32u64 {
                for b in 0..32u64 {
                    let x0 = index_to_vec(5, a);
                    let x1 = index_to_vec(5, b);
                    let y = feistel::evaluate(&mut o, &r, &x0, &x1).expect("evaluate");
                    assert!(seen.insert(y.clone()), "output repeated at ({a}, {b})");
                    let back = feistel::invert(&mut o, &r, &y.0, &y.1).expect("invert");
                    assert_eq!(back, (x0, x1), "inverse missed at ({a}, {b})");
                }
            }
            assert_eq!(seen.len(), 1 << 10);
            assert!(t0.elapsed().as_secs_f64() <= 30.0, "too slow");
        },
    );
}

#[test]
fn simulator_completes_chains_without_aborts() {
    check(
        "simulator: 50 honest full walks, zero aborts, every finished cycle re-walks to the ideal entry",
        || {
            let params = tiny();
            for trial in 0..50u64 {
                let tseed = rng::derive64(4242, "trial", &[&trial.to_le_bytes()]);
                let rand = PublicRandomness::sample(
                    params.n,
                    params.ell,
                    rng::derive64(tseed, "enc", &[]),
                );
                let mut sim = SimulatorState::new(
                    params.clone(),
                    rand,
                    SubversionProgram::honest(),
                    1,
                    tseed,
                    IdealBackend::Permutation,
                )
                .expect("simulator");
                let mut st = rng::stream(tseed, "walk", &[]);
                let x0 = Gf2Vec::random(params.n, &mut st);
                let x1 = Gf2Vec::random(params.n, &mut st);
                drive_full_walk(&mut sim, &x0, &x1);
                assert!(!sim.full_chains().is_empty(), "trial {trial}: no finished cycle");
                sim.audit_full_chains()
                    .unwrap_or_else(|e| panic!("trial {trial}: {e}"));
            }
        },
    );
}

#[test]
fn pair_displacements_stay_under_the_union_bound() {
    check(
        "two-sided random function: displacement rate under q'^2 / 2^(2n) plus three sigma",
        || {
            let scan = rf_overwrite_probability(8, 100, 2000, 505);
            let bound = 100.0 * 100.0 / ((1u64 << 16) as f64);
            assert!((scan.bound - bound).abs() < 1e-12);
            let sigma = stats::binomial_sigma(bound, 2000);
            assert!(
                scan.rate <= bound + 3.0 * sigma,
                "rate {} above {} + 3 * {}",
                scan.rate,
                bound,
                sigma
            );
        },
    );
}

#[test]
fn public_table_growth_respects_the_allowance() {
    check(
        "table footprint: under the allowance for 200 queries in 20 runs, and under the literal 89k line at n=30",
        || {
            let params = tiny();
            let program = SubversionProgram::honest();
            // Repeated subverted queries answer from the memo without an
            // external charge, so an honest walk costs about seven queries.
            let rep = efficiency_probe(&params, &program, 1, 20, 32, 606).expect("probe");
            assert_eq!(rep.total_violations, 0, "allowance exceeded");
            for run in &rep.runs {
                assert!(run.external >= 200, "run saw only {} queries", run.external);
            }

            let wide = ConstructionParams::profile_8n(30).expect("profile");
            for r in 0..5u64 {
                let seed = rng::derive64(707, "wide-run", &[&r.to_le_bytes()]);
                let mut st = rng::stream(seed, "walk-inputs", &[]);
                let script: Vec<subfeistel::games::DriverOp> = (0..3)
                    .map(|_| subfeistel::games::DriverOp::Walk {
                        x0: Gf2Vec::random(wide.n, &mut st),
                        x1: Gf2Vec::random(wide.n, &mut st),
                    })
                    .collect();
                let o = run_game(GameId::G1, &wide, program.clone(), 1, seed, &script);
                assert!(matches!(o.status, GameStatus::Completed), "run {r} aborted");
                assert!(!o.size_series.is_empty());
                for &(k, len) in &o.size_series {
                    if k == 0 {
                        continue;
                    }
                    assert!(
                        len as u64 <= (88 + 1) * k,
                        "run {r}: {len} entries after {k} queries breaks the 89k line"
                    );
                }
            }
        },
    );
}

#[test]
fn one_way_rewrite_keeps_bad_indicators_coupled() {
    check(
        "game coupling: two-directional and one-way variants agree on bad indicators trial by trial, subset invariant never breaks",
        || {
            let params = tiny();
            for t in 0..100u64 {
                let script_seed = rng::derive64(909, "script", &[&t.to_le_bytes()]);
                let trial_seed = rng::derive64(909, "game-trial", &[&t.to_le_bytes()]);
                let script = random_script(params.n, params.ell, 8, script_seed);
                let program = SubversionProgram::honest();
                let o4 = run_game(GameId::G4, &params, program.clone(), 1, trial_seed, &script);
                let o5 = run_game(GameId::G5, &params, program, 1, trial_seed, &script);
                let b4 = o4.bad_complete + o4.bad_eval > 0;
                let b5 = o5.bad_complete + o5.bad_eval > 0;
                assert_eq!(b4, b5, "trial {t}: indicators diverge");
                assert_eq!(o5.subset_violations, 0, "trial {t}: subset invariant broke");
            }
            // The invariant must also survive a subverted program on every
            // run that finishes without an abort.
            for t in 0..100u64 {
                let script_seed = rng::derive64(910, "script", &[&t.to_le_bytes()]);
                let trial_seed = rng::derive64(910, "game-trial", &[&t.to_le_bytes()]);
                let script = random_script(params.n, params.ell, 8, script_seed);
                let program = SubversionProgram::prefix_zero(4, params.n).expect("program");
                let o5 = run_game(GameId::G5, &params, program, 1, trial_seed, &script);
                if matches!(o5.status, GameStatus::Completed) {
                    assert_eq!(o5.subset_violations, 0, "trial {t}: subset invariant broke");
                }
            }
        },
    );
}

#[test]
fn desk_scale_distinguishers_sit_at_coin_flipping() {
    check(
        "distinguishing: chain walk and random probe stay within 0.08 of zero advantage over 400 trials",
        || {
            let t0 = Instant::now();
            let exp = ExperimentConfig {
                params: tiny(),
                program: SubversionProgram::honest(),
                budget: 1,
                backend: IdealBackend::Permutation,
                trials: 400,
                query_limit: 1 << 20,
                seed: 808,
                workers: 4,
                keep_trial_records: false,
            };
            let walk = run_distinguishing_experiment(&exp, &ChainWalk).expect("chain walk");
            assert_eq!(walk.ideal_aborts, 0, "simulator aborted on honest walks");
            assert!(
                walk.advantage.abs() <= 0.08,
                "chain walk advantage {}",
                walk.advantage
            );
            let probe = run_distinguishing_experiment(&exp, &RandomProbe { queries: 64 })
                .expect("random probe");
            assert!(
                probe.advantage.abs() <= 0.08,
                "random probe advantage {}",
                probe.advantage
            );
            assert!(t0.elapsed().as_secs_f64() <= 300.0, "too slow");
        },
    );
}

#[test]
fn diagnostics_flag_only_planted_defects() {
    check(
        "diagnostics: quiet on 100 honest runs, exact on planted fixtures",
        || {
            let params = tiny();
            for trial in 0..100u64 {
                let tseed = rng::derive64(1111, "diag", &[&trial.to_le_bytes()]);
                let rand = PublicRandomness::sample(
                    params.n,
                    params.ell,
                    rng::derive64(tseed, "enc", &[]),
                );
                let mut sim = SimulatorState::new(
                    params.clone(),
                    rand,
                    SubversionProgram::honest(),
                    1,
                    tseed,
                    IdealBackend::Permutation,
                )
                .expect("simulator");
                let mut st = rng::stream(tseed, "walk", &[]);
                let x0 = Gf2Vec::random(params.n, &mut st);
                let x1 = Gf2Vec::random(params.n, &mut st);
                drive_full_walk(&mut sim, &x0, &x1);

                // Adaptation programs two interior slots on purpose; the
                // scan hunts for inward growth that did not come from it.
                let order = |i: usize, x: &Gf2Vec| {
                    if sim.adapted_slot(i, x) {
                        None
                    } else {
                        sim.table_order(i, x)
                    }
                };
                let viols = monotone_scan(sim.tables(), &order);
                assert!(viols.is_empty(), "trial {trial}: {viols:?}");

                for chain in sim.full_chains() {
                    let honest: Vec<bool> = (1..=params.ell)
                        .map(|i| {
                            sim.subverted_value(i, &chain.positions[i])
                                == sim.table_get(i, &chain.positions[i])
                        })
                        .collect();
                    let regions = bad_region_scan(&honest, RegionScanConfig::defaults(params.n));
                    assert!(regions.is_empty(), "trial {trial}: {regions:?}");
                }
            }

            // Planted inward insertion: one consistent triple whose middle
            // entry arrived last must be the only report.
            let n = 8;
            let mut tables: Vec<HashMap<Gf2Vec, Gf2Vec>> = vec![HashMap::new(); 5];
            let xp = Gf2Vec::from_indices(n, &[0]);
            let vm = Gf2Vec::from_indices(n, &[1]);
            let xm = Gf2Vec::from_indices(n, &[2]);
            let xn = xp.xor(&vm);
            tables[1].insert(xp.clone(), Gf2Vec::zero(n));
            tables[2].insert(xm.clone(), vm.clone());
            tables[3].insert(xn.clone(), Gf2Vec::zero(n));
            let mut late_mid = HashMap::new();
            late_mid.insert((1usize, xp.clone()), 0u64);
            late_mid.insert((3, xn.clone()), 1);
            late_mid.insert((2, xm.clone()), 2);
            let viols = monotone_scan(&tables, &|i, x| late_mid.get(&(i, x.clone())).copied());
            assert_eq!(viols.len(), 1);
            assert_eq!(viols[0].i, 2);
            assert_eq!(viols[0].x_mid, xm.to_hex());

            let mut early_mid = HashMap::new();
            early_mid.insert((1usize, xp.clone()), 1u64);
            early_mid.insert((3, xn.clone()), 2);
            early_mid.insert((2, xm.clone()), 0);
            let viols = monotone_scan(&tables, &|i, x| early_mid.get(&(i, x.clone())).copied());
            assert!(viols.is_empty());

            // Planted dishonest clusters: one long flagged run, one isolated
            // point, separated by a clean stretch.
            let mut honest = vec![true; 40];
            for i in 5..=9 {
                honest[i] = false;
            }
            honest[30] = false;
            let regions = bad_region_scan(&honest, RegionScanConfig::defaults(20));
            assert_eq!(
                regions,
                vec![
                    BadRegion { start: 5, end: 9, span: 5, flagged: true },
                    BadRegion { start: 30, end: 30, span: 1, flagged: false },
                ]
            );
        },
    );
}
