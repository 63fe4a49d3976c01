//! Building blocks for studying Feistel networks whose round oracles may be
//! adversarially rewired: GF(2) linear algebra, lazily sampled oracle tables
//! with pluggable subversion programs, the keyed Feistel construction itself,
//! a linear-algebraic distinguishing attack against short networks, a
//! chain-completing simulator for the ideal world, the bookkeeping game
//! variants used to compare simulator behaviours, and an experiment harness
//! that runs distinguishers against coupled real/ideal worlds.

pub mod attack;
pub mod feistel;
pub mod games;
pub mod gf2;
pub mod harness;
pub mod oracle;
pub mod rng;
pub mod sim;
pub mod stats;

pub use attack::{run_attack, AttackConfig, AttackInstance, AttackReport};
pub use feistel::{ConstructionParams, ProfileTag, PublicRandomness};
pub use games::{run_game, DualState, GameId, GameOutcome};
pub use gf2::{Gf2Mat, Gf2Vec, InvertibleGf2Mat};
pub use harness::{
    run_distinguishing_experiment, ChainWalk, CollapseProbe, Distinguisher, ExperimentConfig,
    ExperimentReport, IdealWorld, RandomProbe, RealWorld, Replay, WorldOracles,
};
pub use oracle::{OracleTable, SubversionProgram, SubvertedOracle};
pub use sim::{IdealBackend, SimulatorState};
