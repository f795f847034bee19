//! Dynamic average consensus estimator.
//!
//! Each agent integrates
//!
//! ```text
//! d zhat_i / dt = u_i(t) - beta * sum_j a_ij (zhat_i - zhat_j)
//! ```
//!
//! where `u_i` is the derivative of the agent's (optionally masked)
//! reference. With `u = dz/dt` this is the conventional estimator
//! initialized at `zhat_i(0) = z_i(0)`; with `u = dz/dt + dm/dt` and
//! `zhat_i(0) = z_i(0) + m_i(0)` it is the privacy-preserving variant. Both
//! share the Laplacian, so masking changes neither the exponential
//! convergence rate (`beta * lambda_2`) nor the structure of the
//! steady-state bound: the worst-case tracking error is
//! `gamma / (beta * lambda_2)` where `gamma` is the supremum norm of the
//! disagreement-projected input derivative.
//!
//! Integration is classical fixed-step RK4 with the closed-form inputs
//! evaluated exactly at stage times. Because `1^T L = 0`, the sum
//! `1^T zhat - 1^T z_m` is a linear invariant of the flow and RK4 preserves
//! it to rounding; tests lean on that conservation property.

use crate::graph::Topology;
use crate::masking::MaskBook;
use crate::signals::ReferenceBank;
use crate::trajectory::Trajectory;
use thiserror::Error;

/// Real-axis stability margin of classical RK4; the step guard rejects
/// `dt >= margin / (beta * lambda_max)`.
pub const RK4_STABILITY_MARGIN: f64 = 2.5;

/// Steady state is declared at `t >= STEADY_STATE_FACTOR / (beta * lambda_2)`.
pub const STEADY_STATE_FACTOR: f64 = 10.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} must be non-negative, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("unstable step size {dt}: need dt < {limit} for this gain and topology")]
    UnstableStep { dt: f64, limit: f64 },
    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("horizon {horizon} shorter than one step {dt}")]
    HorizonTooShort { horizon: f64, dt: f64 },
    #[error("measurement window {window} exceeds the trajectory span {span}")]
    WindowExceedsTrajectory { window: f64, span: f64 },
    #[error("disagreement is below the numerical floor; no rate to measure")]
    DisagreementBelowFloor,
    #[error("need at least {required} samples, got {actual}")]
    TooFewSamples { required: usize, actual: usize },
}

/// Estimator tuning. The single knob is the consensus gain `beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DacParams {
    beta: f64,
}

impl DacParams {
    pub fn new(beta: f64) -> Result<Self, SimError> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(SimError::NonPositive {
                name: "beta",
                value: beta,
            });
        }
        Ok(Self { beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Stacked estimator state at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct DacState {
    pub zhat: Vec<f64>,
    pub t: f64,
}

/// Right-hand side of the estimator: `u - beta * L * zhat`.
pub fn dac_rhs(
    topo: &Topology,
    params: DacParams,
    zdot_input: &[f64],
    zhat: &[f64],
) -> Result<Vec<f64>, SimError> {
    let n = topo.agent_count();
    check_dim(n, zdot_input.len())?;
    check_dim(n, zhat.len())?;
    let mut lap = vec![0.0; n];
    topo.apply_laplacian(zhat, &mut lap);
    Ok(zdot_input
        .iter()
        .zip(&lap)
        .map(|(&u, &l)| u - params.beta * l)
        .collect())
}

/// Initial estimator state: `zhat_i(0) = z_i(0) + m_i(0)` with a mask book,
/// `z_i(0)` without. Masks vanish at t = 0, so both agree numerically; the
/// mask term is still added for fidelity to the update law.
pub fn init_state(
    references: &ReferenceBank,
    book: Option<&MaskBook>,
    topo: &Topology,
) -> Result<DacState, SimError> {
    let n = topo.agent_count();
    check_dim(n, references.len())?;
    if let Some(b) = book {
        check_dim(n, b.agent_count())?;
    }
    let mut zhat = references.values(0.0);
    if let Some(b) = book {
        b.add_mask_value(0.0, &mut zhat);
    }
    Ok(DacState { zhat, t: 0.0 })
}

/// Integrates the estimator over `[0, horizon]` and records the series
/// `zhat_i`, `true_average` (of the unmasked references), and
/// `err_i = zhat_i - true_average`.
///
/// `decimate` keeps every k-th integration step in the output (1 keeps all).
pub fn integrate_dac(
    topo: &Topology,
    params: DacParams,
    references: &ReferenceBank,
    book: Option<&MaskBook>,
    dt: f64,
    horizon: f64,
    decimate: usize,
) -> Result<Trajectory, SimError> {
    let init = init_state(references, book, topo)?;
    let refs = references.clone();
    let mask = book.cloned();
    integrate_consensus(
        topo,
        params.beta,
        init.zhat,
        move |t, out| {
            refs.write_derivatives(t, out);
            if let Some(b) = &mask {
                b.add_mask_derivative(t, out);
            }
        },
        {
            let refs = references.clone();
            move |t| refs.network_average(t)
        },
        dt,
        horizon,
        decimate,
    )
}

/// Steady-state tracking error bound `gamma / (beta * lambda_2)`.
pub fn error_bound(gamma: f64, params: DacParams, lambda2: f64) -> Result<f64, SimError> {
    if gamma < 0.0 || !gamma.is_finite() {
        return Err(SimError::Negative {
            name: "gamma",
            value: gamma,
        });
    }
    if !(lambda2 > 0.0) || !lambda2.is_finite() {
        return Err(SimError::NonPositive {
            name: "lambda2",
            value: lambda2,
        });
    }
    Ok(gamma / (params.beta * lambda2))
}

/// Sampled supremum of the disagreement-projected input derivative:
/// `max over tau in [0, horizon] of || (I - 1 1^T / n)(dz/dt + dm/dt) ||_2`
/// on the grid `tau = k * dt`.
///
/// The underlying supremum runs over all time; the sampled maximum
/// converges to it as the grid refines provided the horizon covers at least
/// one period of every frequency present.
pub fn estimate_gamma(
    references: &ReferenceBank,
    book: Option<&MaskBook>,
    topo: &Topology,
    horizon: f64,
    dt: f64,
) -> Result<f64, SimError> {
    let n = topo.agent_count();
    check_dim(n, references.len())?;
    if let Some(b) = book {
        check_dim(n, b.agent_count())?;
    }
    if !(dt > 0.0) {
        return Err(SimError::NonPositive {
            name: "dt",
            value: dt,
        });
    }
    if horizon < 0.0 {
        return Err(SimError::Negative {
            name: "horizon",
            value: horizon,
        });
    }
    let steps = (horizon / dt).round() as usize;
    let mut buf = vec![0.0; n];
    let mut best = 0.0f64;
    for k in 0..=steps {
        let t = k as f64 * dt;
        references.write_derivatives(t, &mut buf);
        if let Some(b) = book {
            b.add_mask_derivative(t, &mut buf);
        }
        let mean = buf.iter().sum::<f64>() / n as f64;
        let norm2: f64 = buf.iter().map(|&u| (u - mean) * (u - mean)).sum();
        best = best.max(norm2.sqrt());
    }
    Ok(best)
}

/// Exponential decay rate of the disagreement, fitted over an initial
/// window.
///
/// Expects a trajectory whose `zhat_i` series start from a consensus offset
/// with (near-)zero inputs; returns the least-squares slope of
/// `log || (I - 1 1^T / n) zhat(t) ||` over `[t0, t0 + window]`, negated so
/// a decay comes out positive.
pub fn measure_decay_rate(traj: &Trajectory, window: f64) -> Result<f64, SimError> {
    if !(window > 0.0) {
        return Err(SimError::NonPositive {
            name: "window",
            value: window,
        });
    }
    let series = traj.series_with_prefix("zhat");
    let n = series.len();
    if n < 2 {
        return Err(SimError::TooFewSamples {
            required: 2,
            actual: n,
        });
    }
    let dt = traj.sample_dt();
    let span = (traj.len().saturating_sub(1)) as f64 * dt;
    if window > span + 1e-12 {
        return Err(SimError::WindowExceedsTrajectory { window, span });
    }
    let kmax = (window / dt).floor() as usize;
    if kmax < 2 {
        return Err(SimError::TooFewSamples {
            required: 3,
            actual: kmax + 1,
        });
    }
    let mut ts = Vec::with_capacity(kmax + 1);
    let mut logs = Vec::with_capacity(kmax + 1);
    for k in 0..=kmax {
        let mean: f64 = series.iter().map(|s| s[k]).sum::<f64>() / n as f64;
        let norm2: f64 = series.iter().map(|s| (s[k] - mean) * (s[k] - mean)).sum();
        let d = norm2.sqrt();
        if !d.is_finite() || d < 1e-300 {
            return Err(SimError::DisagreementBelowFloor);
        }
        ts.push(k as f64 * dt);
        logs.push(d.ln());
    }
    let m = ts.len() as f64;
    let t_mean = ts.iter().sum::<f64>() / m;
    let l_mean = logs.iter().sum::<f64>() / m;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, l) in ts.iter().zip(&logs) {
        num += (t - t_mean) * (l - l_mean);
        den += (t - t_mean) * (t - t_mean);
    }
    Ok(-(num / den))
}

/// Shared fixed-step RK4 driver for the linear consensus dynamics
/// `y' = u(t) - beta * L y`, with arbitrary input assembly. Records
/// `zhat_i`, `true_average`, `err_i`.
pub(crate) fn integrate_consensus(
    topo: &Topology,
    beta: f64,
    init: Vec<f64>,
    input_derivative: impl Fn(f64, &mut [f64]),
    true_average: impl Fn(f64) -> f64,
    dt: f64,
    horizon: f64,
    decimate: usize,
) -> Result<Trajectory, SimError> {
    let n = topo.agent_count();
    check_dim(n, init.len())?;
    if !(beta > 0.0) {
        return Err(SimError::NonPositive {
            name: "beta",
            value: beta,
        });
    }
    let steps = grid_steps(dt, horizon)?;
    check_step_size(dt, beta * topo.max_laplacian_eigenvalue())?;
    let decimate = decimate.max(1);

    let mut names = Vec::with_capacity(2 * n + 1);
    for i in 1..=n {
        names.push(format!("zhat_{i}"));
    }
    names.push("true_average".to_string());
    for i in 1..=n {
        names.push(format!("err_{i}"));
    }
    let mut traj = Trajectory::new(0.0, dt * decimate as f64, names);

    let mut y = init;
    let mut row = vec![0.0; 2 * n + 1];
    let mut stage = vec![0.0; n];
    let mut input = vec![0.0; n];
    let mut lap = vec![0.0; n];
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];

    let rhs = |t: f64, state: &[f64], out: &mut Vec<f64>, input: &mut Vec<f64>, lap: &mut Vec<f64>| {
        input_derivative(t, input);
        topo.apply_laplacian(state, lap);
        for i in 0..n {
            out[i] = input[i] - beta * lap[i];
        }
    };

    for k in 0..=steps {
        let t = k as f64 * dt;
        if k % decimate == 0 {
            let avg = true_average(t);
            for i in 0..n {
                row[i] = y[i];
                row[n + 1 + i] = y[i] - avg;
            }
            row[n] = avg;
            traj.push_sample(&row);
        }
        if k == steps {
            break;
        }
        rhs(t, &y, &mut k1, &mut input, &mut lap);
        for i in 0..n {
            stage[i] = y[i] + 0.5 * dt * k1[i];
        }
        rhs(t + 0.5 * dt, &stage, &mut k2, &mut input, &mut lap);
        for i in 0..n {
            stage[i] = y[i] + 0.5 * dt * k2[i];
        }
        rhs(t + 0.5 * dt, &stage, &mut k3, &mut input, &mut lap);
        for i in 0..n {
            stage[i] = y[i] + dt * k3[i];
        }
        rhs(t + dt, &stage, &mut k4, &mut input, &mut lap);
        let sixth = dt / 6.0;
        let mut finite = true;
        for i in 0..n {
            y[i] += sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            finite &= y[i].is_finite();
        }
        if !finite {
            return Err(SimError::NonFiniteState { t: t + dt });
        }
    }
    Ok(traj)
}

pub(crate) fn grid_steps(dt: f64, horizon: f64) -> Result<usize, SimError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SimError::NonPositive {
            name: "dt",
            value: dt,
        });
    }
    if horizon < dt {
        return Err(SimError::HorizonTooShort { horizon, dt });
    }
    Ok((horizon / dt).round() as usize)
}

/// Rejects steps outside the RK4 real-axis stability region for the fastest
/// Laplacian mode. A zero rate (edgeless graph) imposes no limit.
pub(crate) fn check_step_size(dt: f64, rate: f64) -> Result<(), SimError> {
    if rate > 0.0 {
        let limit = RK4_STABILITY_MARGIN / rate;
        if dt >= limit {
            return Err(SimError::UnstableStep { dt, limit });
        }
    }
    Ok(())
}

fn check_dim(expected: usize, actual: usize) -> Result<(), SimError> {
    if expected != actual {
        return Err(SimError::DimensionMismatch { expected, actual });
    }
    Ok(())
}
