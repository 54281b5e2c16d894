//! Benchmark toolkit for quantum-annealing controls on Markowitz portfolio
//! problems: instance generation, QUBO/Ising formulation, brute-force
//! oracles, Chimera embeddings, anneal schedules, simulated samplers and the
//! experiment harness.

pub mod benchmark;
pub mod cli;
pub mod error;
pub mod formulation;
pub mod instance_gen;
pub mod io;
pub mod oracle;
pub mod rng;
pub mod samplers;
pub mod schedules;
pub mod topology;

pub use error::{Error, Result};
