//! Experiment drivers that wire simulations to the eavesdropper harness.
//!
//! The functions here own the secrets (mask books, reference banks) because
//! they *stage* the experiments; the attack itself only ever receives an
//! [`EavesdropperView`]. Two experiment families:
//!
//! - **Privacy sweeps** — run the closed battery loop at several mask
//!   amplitudes with identical frequencies and seeds, attack each run, and
//!   report the per-amplitude reconstruction RMSE on the per-unit power.
//! - **Shifted-secret executions** — rerun a masked consensus scenario with
//!   the references shifted by a zero-sum perturbation `delta` and the mask
//!   shifted by `-delta`. The estimator inputs are algebraically unchanged,
//!   so the observable trajectories coincide to rounding while the hidden
//!   references differ by `delta`: the observations cannot identify the
//!   references.

use crate::adversary::{mount_attack, privacy_rmse, AttackError, EavesdropperView};
use crate::bess::{simulate_fleet, BatteryUnit, FleetConfig, FleetError};
use crate::dac::{integrate_consensus, integrate_dac, DacParams, SimError};
use crate::graph::Topology;
use crate::masking::{MaskBook, MaskError};
use crate::signals::{ReferenceBank, ReferenceSpec};
use crate::trajectory::Trajectory;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Fleet(#[from] FleetError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("perturbation must sum to zero across agents at every instant")]
    PerturbationNotZeroSum,
    #[error("perturbation must vanish at t = 0 to be realizable by sinusoidal masks")]
    PerturbationNonzeroAtStart,
    #[error("amplitude list must be non-empty, non-negative, and sorted ascending")]
    BadAmplitudes,
    #[error("worker thread panicked")]
    WorkerPanic,
}

/// Default transient cutoff for attack metrics: `max(1 s, 10 / (beta lambda_2))`.
pub fn default_transient_cutoff(beta: f64, lambda2: f64) -> f64 {
    (crate::dac::STEADY_STATE_FACTOR / (beta * lambda2)).max(1.0)
}

/// A masked consensus scenario: everything needed to integrate and attack.
#[derive(Debug, Clone)]
pub struct DacScenario {
    pub topology: Topology,
    pub params: DacParams,
    pub references: ReferenceBank,
    pub book: MaskBook,
    pub dt: f64,
    pub horizon: f64,
}

/// A closed-loop battery scenario plus attacker settings.
#[derive(Debug, Clone)]
pub struct FleetScenario {
    pub topology: Topology,
    pub fleet: FleetConfig,
    pub book: MaskBook,
    pub power_reference: ReferenceSpec,
    pub dac: DacParams,
    pub dt: f64,
    pub horizon: f64,
    /// Attack metric cutoff; defaults to [`default_transient_cutoff`].
    pub transient_cutoff: Option<f64>,
    /// Attacker sampling stride over the simulation grid (1 = every step).
    pub attacker_decimation: usize,
}

impl FleetScenario {
    fn cutoff(&self) -> f64 {
        self.transient_cutoff.unwrap_or_else(|| {
            default_transient_cutoff(self.dac.beta(), self.topology.fiedler_value())
        })
    }
}

/// Attack applied to one recorded run, with the matching ground truth.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub t0: f64,
    pub dt: f64,
    pub cutoff: f64,
    /// Truth for the masked quantity (`z_i` or `x_i`), one series per agent.
    pub ztrue: Vec<Vec<f64>>,
    /// Attacker's reconstruction of the same quantity.
    pub z_rec: Vec<Vec<f64>>,
    /// Truth for the input derivative (`dz_i/dt`, or `+-p_i` for fleets),
    /// aligned with the forward-difference estimates (one sample shorter).
    pub zdot_true: Vec<Vec<f64>>,
    /// Attacker's input-derivative reconstruction.
    pub zdot_rec: Vec<Vec<f64>>,
    /// Post-cutoff RMSE between `zdot_rec` and `zdot_true` per agent: the
    /// privacy metric.
    pub derivative_rmse: Vec<f64>,
}

/// Integrates a consensus scenario and attacks the recorded estimator
/// states. Truth series come from the reference bank.
pub fn attack_dac_scenario(
    scenario: &DacScenario,
    cutoff: Option<f64>,
    attacker_decimation: usize,
) -> Result<AttackOutcome, ExperimentError> {
    let traj = integrate_dac(
        &scenario.topology,
        scenario.params,
        &scenario.references,
        Some(&scenario.book),
        scenario.dt,
        scenario.horizon,
        1,
    )?;
    let cutoff = cutoff.unwrap_or_else(|| {
        default_transient_cutoff(scenario.params.beta(), scenario.topology.fiedler_value())
    });
    let view = EavesdropperView::from_trajectory(
        &traj,
        "zhat",
        scenario.topology.clone(),
        scenario.params.beta(),
        attacker_decimation,
    )?;
    let n = scenario.topology.agent_count();
    let count = view.sample_count();
    let mut ztrue = vec![Vec::with_capacity(count); n];
    let mut zdot_true = vec![Vec::with_capacity(count - 1); n];
    for k in 0..count {
        let t = view.time(k);
        for (i, series) in ztrue.iter_mut().enumerate() {
            series.push(scenario.references.spec(i + 1).value(t));
        }
        if k + 1 < count {
            for (i, series) in zdot_true.iter_mut().enumerate() {
                series.push(scenario.references.spec(i + 1).derivative(t));
            }
        }
    }
    score_attack(&view, ztrue, zdot_true, cutoff)
}

/// Runs the closed battery loop and attacks the unit-state estimator
/// traffic. Truth is the unit state `x_i` and the delivered power expressed
/// as the estimator input `dx_i/dt`.
pub fn attack_fleet_scenario(
    scenario: &FleetScenario,
) -> Result<(Trajectory, AttackOutcome), ExperimentError> {
    let traj = simulate_fleet(
        &scenario.topology,
        &scenario.fleet,
        &scenario.book,
        &scenario.power_reference,
        scenario.dac,
        scenario.dt,
        scenario.horizon,
        1,
    )?;
    let outcome = attack_fleet_trajectory(scenario, &traj)?;
    Ok((traj, outcome))
}

/// Attack an already-recorded fleet run.
pub fn attack_fleet_trajectory(
    scenario: &FleetScenario,
    traj: &Trajectory,
) -> Result<AttackOutcome, ExperimentError> {
    let decimation = scenario.attacker_decimation.max(1);
    let view = EavesdropperView::from_trajectory(
        traj,
        "xhat",
        scenario.topology.clone(),
        scenario.dac.beta(),
        decimation,
    )?;
    let n = scenario.topology.agent_count();
    let sign = match scenario.fleet.mode() {
        crate::bess::Mode::Discharging => -1.0,
        crate::bess::Mode::Charging => 1.0,
    };
    let count = view.sample_count();
    let mut ztrue = vec![Vec::with_capacity(count); n];
    let mut zdot_true = vec![Vec::with_capacity(count - 1); n];
    for i in 0..n {
        let soc = traj
            .series(&format!("soc_{}", i + 1))
            .ok_or_else(|| AttackError::MissingSeries(format!("soc_{}", i + 1)))?;
        let p = traj
            .series(&format!("p_{}", i + 1))
            .ok_or_else(|| AttackError::MissingSeries(format!("p_{}", i + 1)))?;
        let cv = scenario.fleet.units()[i].energy_capacity();
        let state_of = |s: f64| match scenario.fleet.mode() {
            crate::bess::Mode::Discharging => cv * s,
            crate::bess::Mode::Charging => cv * (1.0 - s),
        };
        for k in 0..count {
            ztrue[i].push(state_of(soc[k * decimation]));
            if k + 1 < count {
                zdot_true[i].push(sign * p[k * decimation]);
            }
        }
    }
    score_attack(&view, ztrue, zdot_true, scenario.cutoff())
}

fn score_attack(
    view: &EavesdropperView,
    ztrue: Vec<Vec<f64>>,
    zdot_true: Vec<Vec<f64>>,
    cutoff: f64,
) -> Result<AttackOutcome, ExperimentError> {
    let result = mount_attack(view)?;
    let mut derivative_rmse = Vec::with_capacity(ztrue.len());
    for (truth, rec) in zdot_true.iter().zip(&result.zdot_rec) {
        derivative_rmse.push(privacy_rmse(truth, rec, view.t0(), view.dt(), cutoff)?);
    }
    Ok(AttackOutcome {
        t0: view.t0(),
        dt: view.dt(),
        cutoff,
        ztrue,
        z_rec: result.z_rec,
        zdot_true,
        zdot_rec: result.zdot_rec,
        derivative_rmse,
    })
}

/// One amplitude of a privacy sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub amplitude: f64,
    pub rmse_mean: f64,
    pub rmse_max: f64,
    pub per_agent: Vec<f64>,
}

/// Runs the full simulate-then-attack pipeline once per mask amplitude,
/// holding frequencies (and everything else) fixed. Runs fan out across
/// worker threads; results come back in amplitude order.
pub fn privacy_sweep(
    scenario: &FleetScenario,
    amplitudes: &[f64],
) -> Result<Vec<SweepPoint>, ExperimentError> {
    if amplitudes.is_empty()
        || amplitudes.iter().any(|&a| !(a >= 0.0))
        || amplitudes.windows(2).any(|w| w[0] > w[1])
    {
        return Err(ExperimentError::BadAmplitudes);
    }
    let outcomes: Vec<Result<SweepPoint, ExperimentError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = amplitudes
            .iter()
            .map(|&amplitude| {
                scope.spawn(move || {
                    let mut run = scenario.clone();
                    run.book = scenario.book.with_amplitude(amplitude)?;
                    let (_, outcome) = attack_fleet_scenario(&run)?;
                    let mean = outcome.derivative_rmse.iter().sum::<f64>()
                        / outcome.derivative_rmse.len() as f64;
                    let max = outcome
                        .derivative_rmse
                        .iter()
                        .copied()
                        .fold(0.0, f64::max);
                    Ok(SweepPoint {
                        amplitude,
                        rmse_mean: mean,
                        rmse_max: max,
                        per_agent: outcome.derivative_rmse,
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or(Err(ExperimentError::WorkerPanic)))
            .collect()
    });
    outcomes.into_iter().collect()
}

/// Outcome of a shifted-secret execution.
#[derive(Debug)]
pub struct ShiftedRunReport {
    /// Max over time and agents of the estimator difference between the
    /// baseline and shifted runs.
    pub max_deviation: f64,
    /// Max absolute estimator value of the baseline run, for scaling.
    pub trajectory_scale: f64,
    pub baseline: Trajectory,
    pub shifted: Trajectory,
}

/// Executes a scenario twice: once with `(z, m)` and once with
/// `(z + delta, m - delta)`, on identical integrator grids.
///
/// `delta` must sum to zero across agents at every instant (so the average
/// is untouched) and vanish at `t = 0` (so the alternative mask is
/// realizable by the sinusoidal construction, which is pinned to zero at
/// the origin). Returns the maximal trajectory deviation; Theorem-level
/// indistinguishability means this is pure rounding noise.
pub fn indistinguishability_check(
    scenario: &DacScenario,
    delta: &ReferenceBank,
) -> Result<ShiftedRunReport, ExperimentError> {
    let n = scenario.topology.agent_count();
    if delta.len() != n {
        return Err(ExperimentError::Sim(SimError::DimensionMismatch {
            expected: n,
            actual: delta.len(),
        }));
    }
    if !delta.is_zero_sum() {
        return Err(ExperimentError::PerturbationNotZeroSum);
    }
    if !delta.is_zero_at_origin() {
        return Err(ExperimentError::PerturbationNonzeroAtStart);
    }

    let baseline = integrate_dac(
        &scenario.topology,
        scenario.params,
        &scenario.references,
        Some(&scenario.book),
        scenario.dt,
        scenario.horizon,
        1,
    )?;

    // Shifted run: references z + delta, mask m - delta. Inputs are
    // assembled exactly as an implementation holding those secrets would:
    // (dz + ddelta) + (dm - ddelta).
    let refs = scenario.references.clone();
    let book = scenario.book.clone();
    let shift = delta.clone();
    let mut init = refs.values(0.0);
    {
        let d0 = shift.values(0.0);
        let m0 = scenario.book.mask_vector(0.0);
        for i in 0..n {
            init[i] = (init[i] + d0[i]) + (m0[i] - d0[i]);
        }
    }
    let avg_refs = scenario.references.clone();
    let avg_shift = delta.clone();
    let shifted = integrate_consensus(
        &scenario.topology,
        scenario.params.beta(),
        init,
        move |t, out| {
            refs.write_derivatives(t, out);
            let ddot = shift.derivatives(t);
            for (o, d) in out.iter_mut().zip(&ddot) {
                *o += d;
            }
            let mut mask = vec![0.0; out.len()];
            book.add_mask_derivative(t, &mut mask);
            for (o, (m, d)) in out.iter_mut().zip(mask.iter().zip(&ddot)) {
                *o += m - d;
            }
        },
        move |t| {
            let z = avg_refs.values(t);
            let d = avg_shift.values(t);
            z.iter().zip(&d).map(|(a, b)| a + b).sum::<f64>() / n as f64
        },
        scenario.dt,
        scenario.horizon,
        1,
    )?;

    let mut max_deviation = 0.0f64;
    let mut scale = 0.0f64;
    let base_series = baseline.series_with_prefix("zhat");
    let shift_series = shifted.series_with_prefix("zhat");
    for (a, b) in base_series.iter().zip(&shift_series) {
        for (&x, &y) in a.iter().zip(b.iter()) {
            max_deviation = max_deviation.max((x - y).abs());
            scale = scale.max(x.abs());
        }
    }
    Ok(ShiftedRunReport {
        max_deviation,
        trajectory_scale: scale,
        baseline,
        shifted,
    })
}

/// Convenience constructor for the published six-unit ring scenario
/// frequencies.
pub fn paper_frequency_matrix() -> Vec<(usize, usize, f64)> {
    vec![
        (1, 2, 1.11),
        (1, 6, 3.37),
        (2, 1, 6.12),
        (2, 3, 2.46),
        (3, 2, 4.03),
        (3, 4, 3.80),
        (4, 3, 8.15),
        (4, 5, 2.49),
        (5, 4, 5.75),
        (5, 6, 6.89),
        (6, 1, 5.22),
        (6, 5, 6.42),
    ]
}

/// Published six-unit battery fleet, with capacities optionally rescaled so
/// balancing completes on desk-sized horizons.
pub fn paper_fleet(capacity_scale: f64, kappa: f64) -> Result<FleetConfig, FleetError> {
    let caps = [180.0, 190.0, 200.0, 210.0, 220.0, 230.0];
    let socs = [0.96, 0.89, 0.75, 0.80, 0.73, 0.88];
    let units: Vec<BatteryUnit> = caps
        .iter()
        .zip(socs)
        .map(|(&c, s)| BatteryUnit::from_ah(c * capacity_scale, 50.0, s))
        .collect::<Result<_, _>>()?;
    let access = vec![true, false, false, false, false, false];
    FleetConfig::with_default_floor(units, crate::bess::Mode::Discharging, access, kappa)
}
