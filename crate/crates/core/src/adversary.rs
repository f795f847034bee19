//! External eavesdropper model.
//!
//! The adversary taps every communication link, so it sees all transmitted
//! estimator states, and it knows the network weights and the consensus
//! gain (public protocol parameters). It does *not* see the mask
//! frequencies or amplitudes, which were exchanged once over the trusted
//! setup channel, nor any agent's reference signal. [`EavesdropperView`] is
//! the only doorway into this module: attack code cannot name mask or
//! reference types at all, which keeps the information boundary structural
//! rather than by convention.
//!
//! The attack is the minimal exact-inversion observer obtained by
//! rearranging the estimator update: from consecutive samples of
//! `zhat` it reconstructs the driving input
//!
//! ```text
//! u_i(t_k) ~= (zhat_i(t_{k+1}) - zhat_i(t_k)) / dt
//!             + beta * sum_j a_ij (zhat_i(t_k) - zhat_j(t_k))
//! ```
//!
//! (forward differences: the attacker is causal) and then recovers the
//! reference by trapezoidal integration from `zhat_i(0)`, which equals the
//! true `z_i(0)` because masks vanish at t = 0. On an undefended run this
//! recovers the references and their derivatives up to O(dt) — the baseline
//! genuinely leaks. On a masked run the same attack converges to
//! `z_i + m_i` instead, and the mask is not identifiable from the
//! observations, so the reconstruction error is the mask itself.

use crate::graph::Topology;
use crate::trajectory::Trajectory;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("trajectory has no series named {0}")]
    MissingSeries(String),
    #[error("need at least {required} samples, got {actual}")]
    TooFewSamples { required: usize, actual: usize },
    #[error("series lengths are inconsistent")]
    LengthMismatch,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("decimation factor must be at least 1")]
    InvalidDecimation,
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("no samples at or after the transient cutoff {0} s")]
    EmptyWindow(f64),
}

/// Everything the eavesdropper holds: the topology, the consensus gain, and
/// uniformly sampled estimator states for every agent.
#[derive(Debug, Clone)]
pub struct EavesdropperView {
    topo: Topology,
    beta: f64,
    t0: f64,
    dt: f64,
    /// `samples[i][k]` is agent `i+1`'s transmitted state at `t0 + k dt`.
    samples: Vec<Vec<f64>>,
}

impl EavesdropperView {
    pub fn new(
        topo: Topology,
        beta: f64,
        t0: f64,
        dt: f64,
        samples: Vec<Vec<f64>>,
    ) -> Result<Self, AttackError> {
        if !(beta > 0.0) {
            return Err(AttackError::NonPositive {
                name: "beta",
                value: beta,
            });
        }
        if !(dt > 0.0) {
            return Err(AttackError::NonPositive {
                name: "dt",
                value: dt,
            });
        }
        if samples.len() != topo.agent_count() {
            return Err(AttackError::DimensionMismatch {
                expected: topo.agent_count(),
                actual: samples.len(),
            });
        }
        let len = samples.first().map_or(0, Vec::len);
        if samples.iter().any(|s| s.len() != len) {
            return Err(AttackError::LengthMismatch);
        }
        if len < 2 {
            return Err(AttackError::TooFewSamples {
                required: 2,
                actual: len,
            });
        }
        Ok(Self {
            topo,
            beta,
            t0,
            dt,
            samples,
        })
    }

    /// Intercepts the series `<prefix>_1 ... <prefix>_n` of a recorded run.
    /// `decimation > 1` models an attacker sampling more coarsely than the
    /// network runs.
    pub fn from_trajectory(
        traj: &Trajectory,
        prefix: &str,
        topo: Topology,
        beta: f64,
        decimation: usize,
    ) -> Result<Self, AttackError> {
        if decimation == 0 {
            return Err(AttackError::InvalidDecimation);
        }
        let n = topo.agent_count();
        let mut samples = Vec::with_capacity(n);
        for i in 1..=n {
            let name = format!("{prefix}_{i}");
            let series = traj
                .series(&name)
                .ok_or_else(|| AttackError::MissingSeries(name))?;
            samples.push(series.iter().copied().step_by(decimation).collect());
        }
        Self::new(
            topo,
            beta,
            traj.t0(),
            traj.sample_dt() * decimation as f64,
            samples,
        )
    }

    pub fn agent_count(&self) -> usize {
        self.samples.len()
    }

    pub fn sample_count(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }
}

/// Reconstruction output: per-agent estimates of the masked input
/// derivative (length `T - 1`) and of the reference itself (length `T`).
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub zdot_rec: Vec<Vec<f64>>,
    pub z_rec: Vec<Vec<f64>>,
}

/// Inverts the estimator update for the driving input derivative.
///
/// Against an unmasked run this recovers `dz_i/dt + O(dt)`; against a
/// masked run it recovers `dz_i/dt + dm_i/dt + O(dt)`.
pub fn reconstruct_input_derivative(view: &EavesdropperView) -> Result<Vec<Vec<f64>>, AttackError> {
    let n = view.agent_count();
    let len = view.sample_count();
    let mut out = vec![Vec::with_capacity(len - 1); n];
    let mut state = vec![0.0; n];
    let mut lap = vec![0.0; n];
    for k in 0..len - 1 {
        for i in 0..n {
            state[i] = view.samples[i][k];
        }
        view.topo.apply_laplacian(&state, &mut lap);
        for i in 0..n {
            let diff = (view.samples[i][k + 1] - view.samples[i][k]) / view.dt;
            out[i].push(diff + view.beta * lap[i]);
        }
    }
    Ok(out)
}

/// Integrates the reconstructed derivative from `zhat_i(0)` (trapezoidal;
/// the final interval falls back to a rectangle because the forward
/// difference provides no derivative estimate at the last sample).
pub fn reconstruct_reference(view: &EavesdropperView) -> Result<Vec<Vec<f64>>, AttackError> {
    let zdot = reconstruct_input_derivative(view)?;
    Ok(integrate_reconstruction(view, &zdot))
}

/// Runs both reconstructions on one view.
pub fn mount_attack(view: &EavesdropperView) -> Result<AttackResult, AttackError> {
    let zdot_rec = reconstruct_input_derivative(view)?;
    let z_rec = integrate_reconstruction(view, &zdot_rec);
    Ok(AttackResult { zdot_rec, z_rec })
}

fn integrate_reconstruction(view: &EavesdropperView, zdot: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let len = view.sample_count();
    let dt = view.dt;
    zdot.iter()
        .enumerate()
        .map(|(i, d)| {
            let mut z = Vec::with_capacity(len);
            z.push(view.samples[i][0]);
            for k in 0..len - 1 {
                let next = d[(k + 1).min(d.len() - 1)];
                let value = z[k] + 0.5 * dt * (d[k] + next);
                z.push(value);
            }
            z
        })
        .collect()
}

/// Root-mean-square difference between a true series and its
/// reconstruction, over the samples at `t >= transient_cutoff`.
pub fn privacy_rmse(
    truth: &[f64],
    reconstructed: &[f64],
    t0: f64,
    dt: f64,
    transient_cutoff: f64,
) -> Result<f64, AttackError> {
    if truth.len() != reconstructed.len() {
        return Err(AttackError::LengthMismatch);
    }
    if !(dt > 0.0) {
        return Err(AttackError::NonPositive {
            name: "dt",
            value: dt,
        });
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for (k, (a, b)) in truth.iter().zip(reconstructed).enumerate() {
        if t0 + k as f64 * dt >= transient_cutoff {
            let d = a - b;
            acc += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(AttackError::EmptyWindow(transient_cutoff));
    }
    Ok((acc / count as f64).sqrt())
}
