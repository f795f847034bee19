//! Privacy-preserving dynamic average consensus via sinusoidal reference
//! masking, and its application to state-of-charge balancing in a networked
//! battery energy storage system.
//!
//! Each agent of a connected undirected network tracks the time-varying
//! average of all agents' reference signals using only neighbor
//! communication. Before running the estimator, every agent hides its
//! reference behind a composite mask built from pairwise sinusoids exchanged
//! once at initialization. The pairwise construction makes the masks sum to
//! zero across the network, so the average (the quantity everyone agrees on)
//! is untouched while the individual references and their derivatives become
//! unrecoverable for an external eavesdropper that observes every
//! transmitted estimator state.
//!
//! Crate layout:
//!
//! - [`graph`] — network topology, Laplacian, spectral quantities.
//! - [`signals`] — closed-form reference signals with exact derivatives.
//! - [`masking`] — pairwise sinusoidal masks and the per-agent composite.
//! - [`dac`] — the consensus estimator, fixed-step RK4 integration, and
//!   steady-state error bound calculators.
//! - [`bess`] — battery fleet model: SoC dynamics, distributed estimators,
//!   proportional power allocation, closed-loop simulation.
//! - [`adversary`] — the eavesdropper's view and reconstruction attack.
//! - [`experiments`] — drivers that combine the above: privacy sweeps and
//!   shifted-secret (indistinguishability) executions.
//! - [`trajectory`] — uniformly sampled named time series, the output
//!   container of every simulation, with CSV export.
//! - [`config`] — TOML scenario schema consumed by the CLI.
//!
//! All simulations are deterministic: fixed-step integration, closed-form
//! inputs evaluated at stage times, and seeded mask generation.

pub mod adversary;
pub mod bess;
pub mod config;
pub mod dac;
pub mod experiments;
pub mod graph;
pub mod masking;
pub mod signals;
pub mod trajectory;
