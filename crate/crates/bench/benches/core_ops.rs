use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use subfeistel::feistel::{self, ConstructionParams, PublicRandomness};
use subfeistel::games::{run_game, DriverOp, GameId};
use subfeistel::gf2::{sample_invertible, Gf2Mat, Gf2Vec};
use subfeistel::oracle::{OracleTable, SubversionProgram, SubvertedOracle};
use subfeistel::{attack, rng};

fn bench_gf2(c: &mut Criterion) {
    let mut st = rng::stream(7, "bench-gf2", &[]);
    let m = Gf2Mat::random(64, 64, &mut st);
    let v = Gf2Vec::random(64, &mut st);
    c.bench_function("mat_vec_mul_64", |b| {
        b.iter(|| m.mul_vec(std::hint::black_box(&v)).expect("dims"))
    });

    let mut ctr = 0u64;
    c.bench_function("sample_invertible_32", |b| {
        b.iter(|| {
            let mut s = rng::stream(ctr, "bench-inv", &[]);
            ctr += 1;
            std::hint::black_box(sample_invertible(32, &mut s))
        })
    });
}

fn bench_construction(c: &mut Criterion) {
    let params = ConstructionParams::profile_8n(20).expect("profile");
    let rand = PublicRandomness::sample(params.n, params.ell, 5);
    let table = OracleTable::new(params.n, params.ell, 6);
    let mut oracle = SubvertedOracle::new(table, SubversionProgram::honest(), 1);
    let mut st = rng::stream(8, "bench-eval", &[]);
    c.bench_function("evaluate_8n_n20", |b| {
        b.iter_batched(
            || {
                (
                    Gf2Vec::random(params.n, &mut st),
                    Gf2Vec::random(params.n, &mut st),
                )
            },
            |(x0, x1)| feistel::evaluate(&mut oracle, &rand, &x0, &x1).expect("evaluate"),
            BatchSize::SmallInput,
        )
    });
}

fn bench_attack(c: &mut Criterion) {
    let mut ctr = 0u64;
    c.bench_function("attack_solve_n32_ell16", |b| {
        b.iter_batched(
            || {
                let r = PublicRandomness::sample(32, 16, ctr);
                ctr += 1;
                r
            },
            |r| {
                let inst = attack::build_system(&r, 3).expect("system");
                std::hint::black_box(inst.find_collapse_pair(&r).ok())
            },
            BatchSize::SmallInput,
        )
    });
}

fn bench_simulator(c: &mut Criterion) {
    let params = ConstructionParams::custom(20, 24, 3, 12, 21, 9, 15).expect("params");
    let mut ctr = 0u64;
    c.bench_function("simulator_chain_walk_tiny", |b| {
        b.iter_batched(
            || {
                let seed = ctr;
                ctr += 1;
                let mut st = rng::stream(seed, "bench-walk", &[]);
                let script = vec![DriverOp::Walk {
                    x0: Gf2Vec::random(params.n, &mut st),
                    x1: Gf2Vec::random(params.n, &mut st),
                }];
                (seed, script)
            },
            |(seed, script)| {
                run_game(
                    GameId::G1,
                    &params,
                    SubversionProgram::honest(),
                    1,
                    seed,
                    &script,
                )
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(
    benches,
    bench_gf2,
    bench_construction,
    bench_attack,
    bench_simulator
);
criterion_main!(benches);
