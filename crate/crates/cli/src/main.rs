//! Experiment driver. Five subcommands cover the collapse attack, the
//! real-vs-ideal distinguishing harness, simulator consistency runs, the
//! bookkeeping game ladder, and coarse timings.
//!
//! Exit codes: 0 on success, 2 on configuration problems (including flag
//! parse errors), 3 when a run finishes but an internal consistency check
//! fails.

mod report;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use subfeistel::attack::{self, AttackConfig};
use subfeistel::feistel::{self, ConstructionParams, PublicRandomness};
use subfeistel::games::{self, DriverOp, GameId, GameStatus};
use subfeistel::gf2::Gf2Vec;
use subfeistel::harness::{
    run_distinguishing_experiment, ChainWalk, CollapseProbe, ExperimentConfig, ExperimentReport,
    HarnessError, RandomProbe, Replay,
};
use subfeistel::oracle::{OracleTable, SubversionProgram, SubvertedOracle};
use subfeistel::rng;
use subfeistel::sim;

use report::{emit, fmt_bool, fmt_f64, to_csv, to_json, Document, SCHEMA_VERSION};
use settings::{
    build_params, build_program, config_err, parse_backend, pick, pick_out, pick_string,
    resolve_seed, CliError, ConfigFile, OutputFormat,
};

#[derive(Parser)]
#[command(name = "subfeistel", version, about = "Subverted-Feistel experiment driver")]
struct Cli {
    /// key=value settings file; explicit flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Branch width in bits.
    #[arg(long)]
    n: Option<usize>,
    /// Round layout: 8n, eps, or custom:ell,w,u_lo,u_hi,mid_lo,mid_hi.
    #[arg(long = "ell-profile", value_name = "PROFILE")]
    ell_profile: Option<String>,
    /// Advertised dishonesty rate.
    #[arg(long)]
    eps: Option<f64>,
    /// Round-function program: honest, prefix_zero:<width>, or
    /// trigger:<hex>:<hex>.
    #[arg(long, value_name = "SPEC")]
    subverter: Option<String>,
    #[arg(long)]
    trials: Option<u64>,
    /// Base seed; the CROOKED_SEED environment variable overrides it.
    #[arg(long)]
    seed: Option<u64>,
    /// Query allowance of the program per subverted evaluation.
    #[arg(long)]
    budget: Option<usize>,
    /// Write the report here instead of stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// json or csv.
    #[arg(long)]
    format: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the public encodings for a collapsing input pair, spend one
    /// construction query, and report the distinguishing advantage.
    Attack {
        #[command(flatten)]
        common: Common,
        /// Fix the round count instead of deriving it from eps.
        #[arg(long)]
        ell: Option<usize>,
    },
    /// Run a chosen distinguisher against the real and ideal worlds.
    Distinguish {
        #[command(flatten)]
        common: Common,
        /// chain_walk, random_probe, attack, or replay:<path>.
        #[arg(long)]
        distinguisher: Option<String>,
        /// Ideal-world closing object: perm or rf.
        #[arg(long)]
        backend: Option<String>,
        /// Query count for random_probe.
        #[arg(long)]
        queries: Option<u64>,
        /// Per-world query allowance for one trial.
        #[arg(long = "query-limit")]
        query_limit: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Drive fresh simulator sessions with full chain walks; report
    /// endpoint consistency and table footprint.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Chain walks per session.
        #[arg(long)]
        walks: Option<usize>,
    },
    /// Run the bookkeeping game ladder on coupled scripts and report
    /// bad-event rates per variant.
    Games {
        #[command(flatten)]
        common: Common,
        /// g1, g2, g3, g4, g5, or all.
        #[arg(long)]
        game: Option<String>,
        /// Script length per trial.
        #[arg(long)]
        ops: Option<usize>,
    },
    /// Coarse wall-clock timings of the main operations.
    Bench {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Config(_)) => {
            eprintln!("subfeistel: {e}");
            ExitCode::from(2)
        }
        Err(e @ CliError::Assertion(_)) => {
            eprintln!("subfeistel: {e}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::empty(),
    };
    match cli.cmd {
        Cmd::Attack { common, ell } => cmd_attack(common, ell, &cfg),
        Cmd::Distinguish {
            common,
            distinguisher,
            backend,
            queries,
            query_limit,
            workers,
        } => cmd_distinguish(common, distinguisher, backend, queries, query_limit, workers, &cfg),
        Cmd::Simulate { common, walks } => cmd_simulate(common, walks, &cfg),
        Cmd::Games { common, game, ops } => cmd_games(common, game, ops, &cfg),
        Cmd::Bench { common } => cmd_bench(common, &cfg),
    }
}

fn doc<C: Serialize, R: Serialize>(command: &'static str, config: C, rep: R) -> Document<C, R> {
    Document {
        schema: SCHEMA_VERSION,
        command,
        config,
        report: rep,
    }
}

// ---- attack ----

#[derive(Serialize)]
struct AttackEcho {
    n: usize,
    ell: usize,
    eps: f64,
    trials: u64,
    seed: u64,
}

fn cmd_attack(common: Common, ell_flag: Option<usize>, cfg: &ConfigFile) -> Result<(), CliError> {
    let n = pick(common.n, cfg, "n", 32)?;
    let eps = pick(common.eps, cfg, "eps", 0.0625)?;
    let trials = pick(common.trials, cfg, "trials", 100)?;
    let seed = resolve_seed(common.seed, cfg, 0)?;
    let format = OutputFormat::parse(&pick_string(common.format, cfg, "format", "json"))?;
    let out = pick_out(common.out, cfg);

    let ell = match ell_flag {
        Some(l) => l,
        None => attack::EllRule::Boundary { eps }
            .ell(n)
            .map_err(|e| CliError::Config(e.to_string()))?,
    };
    let config = AttackConfig {
        n,
        ell,
        eps,
        trials,
        seed,
    };
    let rep = attack::run_attack(&config).map_err(|e| CliError::Config(e.to_string()))?;

    let broken: Vec<u64> = rep
        .trials_log
        .iter()
        .filter(|t| t.solvable && !t.collapse_verified)
        .map(|t| t.trial)
        .collect();

    let text = match format {
        OutputFormat::Json => to_json(&doc(
            "attack",
            AttackEcho {
                n,
                ell,
                eps,
                trials,
                seed,
            },
            &rep,
        ))?,
        OutputFormat::Csv => {
            let rows: Vec<Vec<String>> = rep
                .trials_log
                .iter()
                .map(|t| {
                    vec![
                        t.trial.to_string(),
                        fmt_bool(t.solvable),
                        fmt_bool(t.real_hit),
                        fmt_bool(t.ideal_hit),
                        fmt_bool(t.collapse_verified),
                    ]
                })
                .collect();
            to_csv(
                &["trial", "solvable", "real_hit", "ideal_hit", "collapse_verified"],
                &rows,
            )
        }
    };
    emit(out.as_deref(), &text)?;
    if !broken.is_empty() {
        return Err(CliError::Assertion(format!(
            "{} solvable trial(s) failed the exact collapse check (first: {})",
            broken.len(),
            broken[0]
        )));
    }
    Ok(())
}

// ---- distinguish ----

#[derive(Serialize)]
struct DistinguishEcho {
    params: ConstructionParams,
    subverter: String,
    budget: usize,
    backend: String,
    distinguisher: String,
    queries: u64,
    query_limit: u64,
    workers: usize,
    trials: u64,
    seed: u64,
}

#[allow(clippy::too_many_arguments)]
fn cmd_distinguish(
    common: Common,
    dist_flag: Option<String>,
    backend_flag: Option<String>,
    queries_flag: Option<u64>,
    limit_flag: Option<u64>,
    workers_flag: Option<usize>,
    cfg: &ConfigFile,
) -> Result<(), CliError> {
    let n = pick(common.n, cfg, "n", 20)?;
    let eps = pick(common.eps, cfg, "eps", 0.0625)?;
    let profile = pick_string(common.ell_profile, cfg, "ell-profile", "8n");
    let params = build_params(n, &profile, eps)?;
    let subverter = pick_string(common.subverter, cfg, "subverter", "honest");
    let program = build_program(&subverter, n)?;
    let budget = pick(common.budget, cfg, "budget", 1)?;
    let trials = pick(common.trials, cfg, "trials", 100)?;
    let seed = resolve_seed(common.seed, cfg, 0)?;
    let backend_name = pick_string(backend_flag, cfg, "backend", "perm");
    let backend = parse_backend(&backend_name)?;
    let queries = pick(queries_flag, cfg, "queries", 64)?;
    let query_limit = pick(limit_flag, cfg, "query-limit", 1 << 20)?;
    let workers = pick(workers_flag, cfg, "workers", 4)?;
    let dname = pick_string(dist_flag, cfg, "distinguisher", "chain_walk");
    let format = OutputFormat::parse(&pick_string(common.format, cfg, "format", "json"))?;
    let out = pick_out(common.out, cfg);

    let exp = ExperimentConfig {
        params: params.clone(),
        program,
        budget,
        backend,
        trials,
        query_limit,
        seed,
        workers,
        keep_trial_records: true,
    };
    let run_err = |e: HarnessError| match e {
        HarnessError::Trial { .. } => CliError::Assertion(e.to_string()),
        other => CliError::Config(other.to_string()),
    };
    let rep: ExperimentReport = match dname.as_str() {
        "chain_walk" => run_distinguishing_experiment(&exp, &ChainWalk).map_err(run_err)?,
        "random_probe" => {
            run_distinguishing_experiment(&exp, &RandomProbe { queries }).map_err(run_err)?
        }
        "attack" => {
            let lambda = attack::lambda_for(params.n, params.ell);
            run_distinguishing_experiment(&exp, &CollapseProbe { lambda }).map_err(run_err)?
        }
        other => match other.strip_prefix("replay:") {
            Some(path) => {
                let d = Replay::from_path(Path::new(path))
                    .map_err(|e| CliError::Config(e.to_string()))?;
                run_distinguishing_experiment(&exp, &d).map_err(run_err)?
            }
            None => return config_err(format!("unknown distinguisher '{other}'")),
        },
    };

    let text = match format {
        OutputFormat::Json => to_json(&doc(
            "distinguish",
            DistinguishEcho {
                params,
                subverter,
                budget,
                backend: backend_name,
                distinguisher: dname,
                queries,
                query_limit,
                workers,
                trials,
                seed,
            },
            &rep,
        ))?,
        OutputFormat::Csv => {
            let rows: Vec<Vec<String>> = rep
                .records
                .iter()
                .map(|r| {
                    vec![
                        r.trial.to_string(),
                        fmt_bool(r.real_out),
                        fmt_bool(r.ideal_out),
                        r.ideal_abort.clone().unwrap_or_default(),
                    ]
                })
                .collect();
            to_csv(&["trial", "real_out", "ideal_out", "ideal_abort"], &rows)
        }
    };
    emit(out.as_deref(), &text)
}

// ---- simulate ----

#[derive(Serialize)]
struct SimulateEcho {
    params: ConstructionParams,
    subverter: String,
    budget: usize,
    trials: u64,
    walks: usize,
    seed: u64,
}

#[derive(Serialize)]
struct SimRunRow {
    run: u64,
    status: String,
    external_queries: u64,
    table_len: usize,
    walk_mismatches: u64,
    max_ratio: f64,
    violations: u64,
}

#[derive(Serialize)]
struct SimulateReport {
    slope: f64,
    aborted_runs: u64,
    total_walk_mismatches: u64,
    total_violations: u64,
    runs: Vec<SimRunRow>,
}

fn cmd_simulate(common: Common, walks_flag: Option<usize>, cfg: &ConfigFile) -> Result<(), CliError> {
    let n = pick(common.n, cfg, "n", 20)?;
    let eps = pick(common.eps, cfg, "eps", 0.0625)?;
    let profile = pick_string(common.ell_profile, cfg, "ell-profile", "8n");
    let params = build_params(n, &profile, eps)?;
    let subverter = pick_string(common.subverter, cfg, "subverter", "honest");
    let program = build_program(&subverter, n)?;
    let budget = pick(common.budget, cfg, "budget", 1)?;
    let trials = pick(common.trials, cfg, "trials", 10)?;
    let walks = pick(walks_flag, cfg, "walks", 4)?;
    let seed = resolve_seed(common.seed, cfg, 0)?;
    let format = OutputFormat::parse(&pick_string(common.format, cfg, "format", "json"))?;
    let out = pick_out(common.out, cfg);

    let slope = sim::efficiency_allowance(&params, budget);
    let mut runs = Vec::with_capacity(trials as usize);
    let mut aborted = 0u64;
    let mut mism = 0u64;
    let mut viols = 0u64;
    for r in 0..trials {
        let run_seed = rng::derive64(seed, "sim-run", &[&r.to_le_bytes()]);
        let mut st = rng::stream(run_seed, "walk-inputs", &[]);
        let script: Vec<DriverOp> = (0..walks)
            .map(|_| DriverOp::Walk {
                x0: Gf2Vec::random(params.n, &mut st),
                x1: Gf2Vec::random(params.n, &mut st),
            })
            .collect();
        let outcome = games::run_game(GameId::G1, &params, program.clone(), budget, run_seed, &script);
        let status = match &outcome.status {
            GameStatus::Completed => "ok".to_string(),
            GameStatus::Aborted { reason } => {
                aborted += 1;
                reason.clone()
            }
        };
        let mut max_ratio = 0.0f64;
        let mut violations = 0u64;
        for &(k, len) in &outcome.size_series {
            if k == 0 {
                continue;
            }
            let allow = slope * k as f64;
            let ratio = len as f64 / allow;
            if ratio > max_ratio {
                max_ratio = ratio;
            }
            if len as f64 > allow {
                violations += 1;
            }
        }
        mism += outcome.walk_mismatches;
        viols += violations;
        runs.push(SimRunRow {
            run: r,
            status,
            external_queries: outcome.external_queries,
            table_len: outcome.table_len,
            walk_mismatches: outcome.walk_mismatches,
            max_ratio,
            violations,
        });
    }
    let rep = SimulateReport {
        slope,
        aborted_runs: aborted,
        total_walk_mismatches: mism,
        total_violations: viols,
        runs,
    };

    let text = match format {
        OutputFormat::Json => to_json(&doc(
            "simulate",
            SimulateEcho {
                params,
                subverter,
                budget,
                trials,
                walks,
                seed,
            },
            &rep,
        ))?,
        OutputFormat::Csv => {
            let rows: Vec<Vec<String>> = rep
                .runs
                .iter()
                .map(|r| {
                    vec![
                        r.run.to_string(),
                        r.status.clone(),
                        r.external_queries.to_string(),
                        r.table_len.to_string(),
                        r.walk_mismatches.to_string(),
                        fmt_f64(r.max_ratio),
                        r.violations.to_string(),
                    ]
                })
                .collect();
            to_csv(
                &[
                    "run",
                    "status",
                    "external_queries",
                    "table_len",
                    "walk_mismatches",
                    "max_ratio",
                    "violations",
                ],
                &rows,
            )
        }
    };
    emit(out.as_deref(), &text)?;
    if rep.total_walk_mismatches > 0 {
        return Err(CliError::Assertion(format!(
            "{} chain walk(s) disagreed with the closing object",
            rep.total_walk_mismatches
        )));
    }
    Ok(())
}

// ---- games ----

#[derive(Serialize)]
struct GamesEcho {
    params: ConstructionParams,
    subverter: String,
    budget: usize,
    games: Vec<String>,
    trials: u64,
    ops: usize,
    seed: u64,
}

#[derive(Serialize)]
struct GameSummary {
    game: String,
    trials: u64,
    completed: u64,
    aborted: u64,
    abort_rate: f64,
    trials_with_bad: u64,
    bad_rate: f64,
    bad_complete: u64,
    bad_eval: u64,
    subset_violations: u64,
    rf_overwrites: u64,
    walk_mismatches: u64,
}

#[derive(Serialize)]
struct GamesReport {
    rows: Vec<GameSummary>,
}

fn game_name(g: GameId) -> &'static str {
    match g {
        GameId::G1 => "g1",
        GameId::G2 => "g2",
        GameId::G3 => "g3",
        GameId::G4 => "g4",
        GameId::G5 => "g5",
    }
}

fn parse_games(spec: &str) -> Result<Vec<GameId>, CliError> {
    match spec {
        "all" => Ok(vec![GameId::G1, GameId::G2, GameId::G3, GameId::G4, GameId::G5]),
        "g1" => Ok(vec![GameId::G1]),
        "g2" => Ok(vec![GameId::G2]),
        "g3" => Ok(vec![GameId::G3]),
        "g4" => Ok(vec![GameId::G4]),
        "g5" => Ok(vec![GameId::G5]),
        other => config_err(format!("game must be g1..g5 or all, got '{other}'")),
    }
}

fn cmd_games(
    common: Common,
    game_flag: Option<String>,
    ops_flag: Option<usize>,
    cfg: &ConfigFile,
) -> Result<(), CliError> {
    let n = pick(common.n, cfg, "n", 20)?;
    let eps = pick(common.eps, cfg, "eps", 0.0625)?;
    let profile = pick_string(common.ell_profile, cfg, "ell-profile", "custom:24,3,12,21,9,15");
    let params = build_params(n, &profile, eps)?;
    let subverter = pick_string(common.subverter, cfg, "subverter", "honest");
    let program = build_program(&subverter, n)?;
    let budget = pick(common.budget, cfg, "budget", 1)?;
    let trials = pick(common.trials, cfg, "trials", 50)?;
    let ops = pick(ops_flag, cfg, "ops", 12)?;
    let seed = resolve_seed(common.seed, cfg, 0)?;
    let games_list = parse_games(&pick_string(game_flag, cfg, "game", "all"))?;
    let format = OutputFormat::parse(&pick_string(common.format, cfg, "format", "json"))?;
    let out = pick_out(common.out, cfg);

    let mut rows = Vec::with_capacity(games_list.len());
    for &g in &games_list {
        let mut completed = 0u64;
        let mut aborted = 0u64;
        let mut with_bad = 0u64;
        let mut bad_complete = 0u64;
        let mut bad_eval = 0u64;
        let mut subset = 0u64;
        let mut rf_ow = 0u64;
        let mut mism = 0u64;
        for t in 0..trials {
            // Same script and seed for every variant: coupled comparisons.
            let script_seed = rng::derive64(seed, "script", &[&t.to_le_bytes()]);
            let trial_seed = rng::derive64(seed, "game-trial", &[&t.to_le_bytes()]);
            let script = games::random_script(params.n, params.ell, ops, script_seed);
            let o = games::run_game(g, &params, program.clone(), budget, trial_seed, &script);
            match o.status {
                GameStatus::Completed => completed += 1,
                GameStatus::Aborted { .. } => aborted += 1,
            }
            if o.bad_complete + o.bad_eval > 0 {
                with_bad += 1;
            }
            bad_complete += o.bad_complete;
            bad_eval += o.bad_eval;
            subset += o.subset_violations;
            rf_ow += o.rf_overwrites;
            mism += o.walk_mismatches;
        }
        rows.push(GameSummary {
            game: game_name(g).to_string(),
            trials,
            completed,
            aborted,
            abort_rate: aborted as f64 / trials.max(1) as f64,
            trials_with_bad: with_bad,
            bad_rate: with_bad as f64 / trials.max(1) as f64,
            bad_complete,
            bad_eval,
            subset_violations: subset,
            rf_overwrites: rf_ow,
            walk_mismatches: mism,
        });
    }
    let rep = GamesReport { rows };

    let text = match format {
        OutputFormat::Json => to_json(&doc(
            "games",
            GamesEcho {
                params,
                subverter,
                budget,
                games: games_list.iter().map(|&g| game_name(g).to_string()).collect(),
                trials,
                ops,
                seed,
            },
            &rep,
        ))?,
        OutputFormat::Csv => {
            let rows: Vec<Vec<String>> = rep
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.game.clone(),
                        r.trials.to_string(),
                        r.completed.to_string(),
                        r.aborted.to_string(),
                        fmt_f64(r.abort_rate),
                        r.trials_with_bad.to_string(),
                        fmt_f64(r.bad_rate),
                        r.bad_complete.to_string(),
                        r.bad_eval.to_string(),
                        r.subset_violations.to_string(),
                        r.rf_overwrites.to_string(),
                        r.walk_mismatches.to_string(),
                    ]
                })
                .collect();
            to_csv(
                &[
                    "game",
                    "trials",
                    "completed",
                    "aborted",
                    "abort_rate",
                    "trials_with_bad",
                    "bad_rate",
                    "bad_complete",
                    "bad_eval",
                    "subset_violations",
                    "rf_overwrites",
                    "walk_mismatches",
                ],
                &rows,
            )
        }
    };
    emit(out.as_deref(), &text)
}

// ---- bench ----

#[derive(Serialize)]
struct BenchEcho {
    params: ConstructionParams,
    iters: u64,
    seed: u64,
}

#[derive(Serialize)]
struct BenchRow {
    op: String,
    iters: u64,
    total_ms: f64,
    per_op_us: f64,
}

#[derive(Serialize)]
struct BenchReport {
    rows: Vec<BenchRow>,
}

fn timed(op: &str, iters: u64, mut f: impl FnMut()) -> BenchRow {
    let t0 = Instant::now();
    for _ in 0..iters {
        f();
    }
    let total_ms = t0.elapsed().as_secs_f64() * 1e3;
    BenchRow {
        op: op.to_string(),
        iters,
        total_ms,
        per_op_us: total_ms * 1e3 / iters.max(1) as f64,
    }
}

fn cmd_bench(common: Common, cfg: &ConfigFile) -> Result<(), CliError> {
    let n = pick(common.n, cfg, "n", 20)?;
    let eps = pick(common.eps, cfg, "eps", 0.0625)?;
    let profile = pick_string(common.ell_profile, cfg, "ell-profile", "8n");
    let params = build_params(n, &profile, eps)?;
    let iters = pick(common.trials, cfg, "trials", 10)?;
    let seed = resolve_seed(common.seed, cfg, 0)?;
    let format = OutputFormat::parse(&pick_string(common.format, cfg, "format", "json"))?;
    let out = pick_out(common.out, cfg);

    let mut rows = Vec::new();

    let mut ctr = 0u64;
    rows.push(timed("sample_encodings", iters, || {
        let s = rng::derive64(seed, "bench-enc", &[&ctr.to_le_bytes()]);
        ctr += 1;
        let r = PublicRandomness::sample(params.n, params.ell, s);
        std::hint::black_box(r.ell());
    }));

    let rand = PublicRandomness::sample(params.n, params.ell, rng::derive64(seed, "bench-r", &[]));
    let table = OracleTable::new(params.n, params.ell, rng::derive64(seed, "bench-f", &[]));
    let mut oracle = SubvertedOracle::new(table, SubversionProgram::honest(), 1);
    let mut st = rng::stream(seed, "bench-pairs", &[]);
    rows.push(timed("construction_evaluate", iters, || {
        let x0 = Gf2Vec::random(params.n, &mut st);
        let x1 = Gf2Vec::random(params.n, &mut st);
        let y = feistel::evaluate(&mut oracle, &rand, &x0, &x1).expect("evaluate");
        std::hint::black_box(y.0.len());
    }));

    let lambda = attack::lambda_for(params.n, params.ell);
    let mut ctr2 = 0u64;
    rows.push(timed("attack_solve", iters, || {
        let s = rng::derive64(seed, "bench-atk", &[&ctr2.to_le_bytes()]);
        ctr2 += 1;
        let r = PublicRandomness::sample(params.n, params.ell, s);
        if let Ok(inst) = attack::build_system(&r, lambda) {
            let _ = std::hint::black_box(inst.find_collapse_pair(&r));
        }
    }));

    let mut ctr3 = 0u64;
    rows.push(timed("simulator_walk", iters, || {
        let s = rng::derive64(seed, "bench-sim", &[&ctr3.to_le_bytes()]);
        ctr3 += 1;
        let mut wst = rng::stream(s, "walk-inputs", &[]);
        let script = vec![DriverOp::Walk {
            x0: Gf2Vec::random(params.n, &mut wst),
            x1: Gf2Vec::random(params.n, &mut wst),
        }];
        let o = games::run_game(GameId::G1, &params, SubversionProgram::honest(), 1, s, &script);
        std::hint::black_box(o.table_len);
    }));

    let rep = BenchReport { rows };
    let text = match format {
        OutputFormat::Json => to_json(&doc(
            "bench",
            BenchEcho {
                params,
                iters,
                seed,
            },
            &rep,
        ))?,
        OutputFormat::Csv => {
            let rows: Vec<Vec<String>> = rep
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.op.clone(),
                        r.iters.to_string(),
                        fmt_f64(r.total_ms),
                        fmt_f64(r.per_op_us),
                    ]
                })
                .collect();
            to_csv(&["op", "iters", "total_ms", "per_op_us"], &rows)
        }
    };
    emit(out.as_deref(), &text)
}
