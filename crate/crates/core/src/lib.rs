//! Simulation of honest and selfish proof-of-work miners, with an
//! empirical game layer on top.
//!
//! The pieces stack bottom-up:
//!
//! * [`chain`] — the shared block tree and reward accounting;
//! * [`strategy`] — per-miner decision automata (honest and selfish);
//! * [`sim`] — the discrete-event loop, replication and result caching;
//! * [`game`] — strategy profiles, payoff tables and approximate equilibria;
//! * [`sweep`] — power-allocation grids, thresholds and reward curves;
//! * [`cli`] — configuration, resumable sweeps and CSV output.

pub mod chain;
pub mod cli;
pub mod game;
pub mod sim;
pub mod strategy;
pub mod sweep;
