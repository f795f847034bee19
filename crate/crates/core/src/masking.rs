//! Pairwise sinusoidal masking signals.
//!
//! During initialization every agent `i` picks, for each neighbor `j`, a
//! random constant frequency `omega_ij` and sends it over the (trusted)
//! setup channel; all agents share one amplitude `A_m`. The pairwise signal
//! is `s_ij(t) = A_m sin(omega_ij t)` and agent `i`'s composite mask is
//!
//! ```text
//! m_i(t) = sum_{j in N_i} ( s_ji(t) - s_ij(t) )
//! ```
//!
//! Every pairwise signal enters the network twice with opposite signs, so
//! `sum_i m_i(t) = 0` and `sum_i dm_i/dt = 0` identically: masking never
//! moves the network average, only the individual signals. Because
//! `sin(0) = 0`, every mask also vanishes at `t = 0`, which means the
//! initial reference values are exposed; only the trajectory for `t > 0` is
//! protected.
//!
//! A `MaskBook` holds the full set of per-directed-edge frequencies plus the
//! common amplitude. Generation is seeded and deterministic: frequencies are
//! drawn from a ChaCha8 stream in lexicographic directed-edge order, so a
//! `(seed, topology, range)` triple reproduces the same book on every
//! platform. `A_m = 0` disables masking and is used as the undefended
//! control case.

use crate::graph::Topology;
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("invalid frequency range [{lo}, {hi}]: need 0 < lo < hi")]
    InvalidFrequencyRange { lo: f64, hi: f64 },
    #[error("mask amplitude {0} must be non-negative")]
    NegativeAmplitude(f64),
    #[error("no directed edge {i} -> {j} in the mask book")]
    UnknownEdge { i: usize, j: usize },
    #[error("frequency for directed edge {i} -> {j} is {omega}, must be positive")]
    NonPositiveFrequency { i: usize, j: usize, omega: f64 },
    #[error("directed edge {i} -> {j} does not exist in the topology")]
    EdgeNotInTopology { i: usize, j: usize },
    #[error("directed edge {i} -> {j} listed more than once")]
    DuplicateEntry { i: usize, j: usize },
    #[error("missing frequency for directed edge {i} -> {j}")]
    MissingEntry { i: usize, j: usize },
}

/// Per-agent view of one incident edge: the frequency this agent assigned
/// to the neighbor (outgoing) and the one it received (incoming).
#[derive(Debug, Clone, Copy)]
struct EdgeTones {
    outgoing: f64,
    incoming: f64,
}

/// Frequencies `omega_ij` for both directions of every network edge plus the
/// common amplitude `A_m`. Immutable once built.
#[derive(Debug, Clone)]
pub struct MaskBook {
    n: usize,
    amplitude: f64,
    /// Directed frequencies keyed by 0-based `(from, to)`.
    freqs: BTreeMap<(usize, usize), f64>,
    /// Incident tones per agent for the integration hot path.
    per_agent: Vec<Vec<EdgeTones>>,
}

impl MaskBook {
    /// Draws one frequency per directed edge, uniformly from
    /// `[freq_range.0, freq_range.1)`, using a ChaCha8 stream seeded by
    /// `seed`. Identical inputs reproduce an identical book.
    pub fn generate(
        topo: &Topology,
        amplitude: f64,
        freq_range: (f64, f64),
        seed: u64,
    ) -> Result<Self, MaskError> {
        let (lo, hi) = freq_range;
        if !(lo > 0.0 && hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(MaskError::InvalidFrequencyRange { lo, hi });
        }
        if !(amplitude >= 0.0) {
            return Err(MaskError::NegativeAmplitude(amplitude));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Uniform::new(lo, hi).expect("validated range");
        let mut freqs = BTreeMap::new();
        for (i, j) in topo.directed_edges() {
            freqs.insert((i - 1, j - 1), dist.sample(&mut rng));
        }
        Ok(Self::from_parts(topo.agent_count(), amplitude, freqs))
    }

    /// Builds a book from explicit 1-based `(i, j, omega_ij)` entries, e.g.
    /// a published frequency matrix. The entries must cover both directions
    /// of every topology edge, exactly once each.
    pub fn from_frequencies(
        topo: &Topology,
        amplitude: f64,
        entries: &[(usize, usize, f64)],
    ) -> Result<Self, MaskError> {
        if !(amplitude >= 0.0) {
            return Err(MaskError::NegativeAmplitude(amplitude));
        }
        let mut freqs = BTreeMap::new();
        for &(i, j, omega) in entries {
            if topo.weight(i, j).is_none() {
                return Err(MaskError::EdgeNotInTopology { i, j });
            }
            if !(omega > 0.0) || !omega.is_finite() {
                return Err(MaskError::NonPositiveFrequency { i, j, omega });
            }
            if freqs.insert((i - 1, j - 1), omega).is_some() {
                return Err(MaskError::DuplicateEntry { i, j });
            }
        }
        for (i, j) in topo.directed_edges() {
            if !freqs.contains_key(&(i - 1, j - 1)) {
                return Err(MaskError::MissingEntry { i, j });
            }
        }
        Ok(Self::from_parts(topo.agent_count(), amplitude, freqs))
    }

    /// Same frequencies, different amplitude. Used by amplitude sweeps so
    /// that only `A_m` varies between runs.
    pub fn with_amplitude(&self, amplitude: f64) -> Result<Self, MaskError> {
        if !(amplitude >= 0.0) {
            return Err(MaskError::NegativeAmplitude(amplitude));
        }
        Ok(Self::from_parts(self.n, amplitude, self.freqs.clone()))
    }

    fn from_parts(n: usize, amplitude: f64, freqs: BTreeMap<(usize, usize), f64>) -> Self {
        let mut per_agent = vec![Vec::new(); n];
        for (&(from, to), &outgoing) in &freqs {
            let incoming = freqs[&(to, from)];
            per_agent[from].push(EdgeTones { outgoing, incoming });
        }
        Self {
            n,
            amplitude,
            freqs,
            per_agent,
        }
    }

    pub fn agent_count(&self) -> usize {
        self.n
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// Frequency of the directed edge `i -> j` (1-based), if present.
    pub fn frequency(&self, i: usize, j: usize) -> Option<f64> {
        if i < 1 || j < 1 {
            return None;
        }
        self.freqs.get(&(i - 1, j - 1)).copied()
    }

    /// All directed frequencies as 1-based `(i, j, omega)`, sorted.
    pub fn frequencies(&self) -> Vec<(usize, usize, f64)> {
        self.freqs
            .iter()
            .map(|(&(i, j), &w)| (i + 1, j + 1, w))
            .collect()
    }

    pub fn max_frequency(&self) -> f64 {
        self.freqs.values().copied().fold(0.0, f64::max)
    }

    /// Pairwise signal `s_ij(t) = A_m sin(omega_ij t)` for 1-based agents.
    pub fn pairwise_signal(&self, i: usize, j: usize, t: f64) -> Result<f64, MaskError> {
        let omega = self
            .frequency(i, j)
            .ok_or(MaskError::UnknownEdge { i, j })?;
        Ok(self.amplitude * (omega * t).sin())
    }

    /// Composite mask `m_i(t)` of a 1-based agent.
    ///
    /// Panics when the agent index is out of range.
    pub fn mask_value(&self, agent: usize, t: f64) -> f64 {
        assert!(
            agent >= 1 && agent <= self.n,
            "agent {agent} out of range 1..={}",
            self.n
        );
        let mut m = 0.0;
        for tones in &self.per_agent[agent - 1] {
            m += self.amplitude * ((tones.incoming * t).sin() - (tones.outgoing * t).sin());
        }
        m
    }

    /// Exact derivative `dm_i/dt` of a 1-based agent's mask.
    ///
    /// Panics when the agent index is out of range.
    pub fn mask_derivative(&self, agent: usize, t: f64) -> f64 {
        assert!(
            agent >= 1 && agent <= self.n,
            "agent {agent} out of range 1..={}",
            self.n
        );
        let mut m = 0.0;
        for tones in &self.per_agent[agent - 1] {
            m += self.amplitude
                * (tones.incoming * (tones.incoming * t).cos()
                    - tones.outgoing * (tones.outgoing * t).cos());
        }
        m
    }

    /// Stacked `[m_1(t), ..., m_n(t)]`. Sums to zero up to rounding.
    pub fn mask_vector(&self, t: f64) -> Vec<f64> {
        (1..=self.n).map(|i| self.mask_value(i, t)).collect()
    }

    /// Stacked mask derivatives; also zero-sum for every t.
    pub fn mask_derivative_vector(&self, t: f64) -> Vec<f64> {
        (1..=self.n).map(|i| self.mask_derivative(i, t)).collect()
    }

    /// Adds `dm_i/dt` onto `out` in place (integration hot path).
    pub(crate) fn add_mask_derivative(&self, t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n);
        for (i, acc) in out.iter_mut().enumerate() {
            for tones in &self.per_agent[i] {
                *acc += self.amplitude
                    * (tones.incoming * (tones.incoming * t).cos()
                        - tones.outgoing * (tones.outgoing * t).cos());
            }
        }
    }

    /// Adds `m_i(t)` onto `out` in place.
    pub(crate) fn add_mask_value(&self, t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n);
        for (i, acc) in out.iter_mut().enumerate() {
            for tones in &self.per_agent[i] {
                *acc += self.amplitude
                    * ((tones.incoming * t).sin() - (tones.outgoing * t).sin());
            }
        }
    }
}
