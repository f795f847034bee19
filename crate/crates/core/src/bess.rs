//! Networked battery energy storage: SoC balancing with privacy-preserving
//! distributed estimation.
//!
//! Each unit follows the Coulomb-counting model `dS_i/dt = -p_i / (C_i V_i)`
//! at constant terminal voltage. The controllable quantity per unit is its
//! *unit state*: the dischargeable energy `C V S` while discharging, or the
//! remaining storable energy `C V (1 - S)` while charging. The local power
//! law
//!
//! ```text
//! p_i = x_i / max(a1/2, xhat_i) * phat_i
//! ```
//!
//! shares the demanded total power in proportion to the unit states, which
//! equalizes SoC while the total tracks the desired profile. The two global
//! quantities it needs are estimated distributedly:
//!
//! - `xhat_i` — average unit state, via the masked consensus estimator (so
//!   an eavesdropper cannot recover per-unit states or power),
//! - `phat_i` — average desired power, via a pinned consensus tracker driven
//!   by the units that can see the demand signal.
//!
//! The closed loop integrates all `3n` states with one RK4 grid; the power
//! allocation is re-evaluated from the current stage values inside every
//! stage, and the mask derivative enters the unit-state estimator in closed
//! form. SI units throughout: seconds, joules, watts, volts, coulombs.
//! Capacities are configured in amp-hours and converted on construction.

use crate::dac::{check_step_size, grid_steps, DacParams};
use crate::graph::{symmetric_eigenvalues, Topology};
use crate::masking::MaskBook;
use crate::signals::ReferenceSpec;
use crate::trajectory::Trajectory;
use thiserror::Error;

/// Default unit-state floor `a1`, as a fraction of the smallest `C V`.
pub const DEFAULT_STATE_FLOOR_FRACTION: f64 = 0.05;

const SECONDS_PER_HOUR: f64 = 3600.0;

#[derive(Debug, Error)]
pub enum FleetError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("state of charge {0} outside [0, 1]")]
    SocOutOfBounds(f64),
    #[error("fleet has no units")]
    EmptyFleet,
    #[error("no unit has access to the desired power signal")]
    NoPowerAccess,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("unstable step size {dt} for the {system} dynamics: need dt < {limit}")]
    UnstableStep {
        system: &'static str,
        dt: f64,
        limit: f64,
    },
    #[error("state of charge of unit {unit} left [0, 1] at t = {t} (value {value}); the model has no saturation, pick a feasible scenario")]
    SocOutOfRange { unit: usize, t: f64, value: f64 },
    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },
    #[error(transparent)]
    Sim(#[from] crate::dac::SimError),
}

/// Operating mode, fixed for the duration of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Discharging,
    Charging,
}

impl Mode {
    /// Sign of `dx_i/dt` relative to the delivered power `p_i`:
    /// discharging drains the unit state, charging fills it.
    pub(crate) fn energy_rate_sign(self) -> f64 {
        match self {
            Mode::Discharging => -1.0,
            Mode::Charging => 1.0,
        }
    }
}

/// One battery unit: capacity, terminal voltage, state of charge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryUnit {
    /// Capacity in coulombs.
    capacity: f64,
    /// Constant terminal voltage, volts.
    voltage: f64,
    /// State of charge in [0, 1].
    soc: f64,
}

impl BatteryUnit {
    /// Builds a unit from a capacity in amp-hours.
    pub fn from_ah(capacity_ah: f64, voltage: f64, soc: f64) -> Result<Self, FleetError> {
        if !(capacity_ah > 0.0) || !capacity_ah.is_finite() {
            return Err(FleetError::NonPositive {
                name: "capacity_ah",
                value: capacity_ah,
            });
        }
        if !(voltage > 0.0) || !voltage.is_finite() {
            return Err(FleetError::NonPositive {
                name: "voltage",
                value: voltage,
            });
        }
        if !(0.0..=1.0).contains(&soc) {
            return Err(FleetError::SocOutOfBounds(soc));
        }
        Ok(Self {
            capacity: capacity_ah * SECONDS_PER_HOUR,
            voltage,
            soc,
        })
    }

    pub fn capacity_coulombs(&self) -> f64 {
        self.capacity
    }

    pub fn voltage(&self) -> f64 {
        self.voltage
    }

    pub fn soc(&self) -> f64 {
        self.soc
    }

    /// Total energy `C V` in joules.
    pub fn energy_capacity(&self) -> f64 {
        self.capacity * self.voltage
    }

    /// Unit state in joules: dischargeable energy `C V S` or storable
    /// energy `C V (1 - S)` depending on mode.
    pub fn unit_state(&self, mode: Mode) -> f64 {
        unit_state_value(self.energy_capacity(), self.soc, mode)
    }

    /// `dS/dt` under delivered power `p` watts (positive = discharging).
    pub fn soc_rhs(&self, power: f64) -> f64 {
        -power / self.energy_capacity()
    }
}

fn unit_state_value(energy_capacity: f64, soc: f64, mode: Mode) -> f64 {
    match mode {
        Mode::Discharging => energy_capacity * soc,
        Mode::Charging => energy_capacity * (1.0 - soc),
    }
}

/// Fleet-wide configuration: units, mode, demand access flags, the power
/// estimator gain, and the unit-state floor used by the allocation guard.
#[derive(Debug, Clone)]
pub struct FleetConfig {
    units: Vec<BatteryUnit>,
    mode: Mode,
    access: Vec<bool>,
    kappa: f64,
    state_floor: f64,
}

impl FleetConfig {
    pub fn new(
        units: Vec<BatteryUnit>,
        mode: Mode,
        access: Vec<bool>,
        kappa: f64,
        state_floor: f64,
    ) -> Result<Self, FleetError> {
        if units.is_empty() {
            return Err(FleetError::EmptyFleet);
        }
        if access.len() != units.len() {
            return Err(FleetError::DimensionMismatch {
                expected: units.len(),
                actual: access.len(),
            });
        }
        if !access.iter().any(|&b| b) {
            return Err(FleetError::NoPowerAccess);
        }
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(FleetError::NonPositive {
                name: "kappa",
                value: kappa,
            });
        }
        if !(state_floor > 0.0) || !state_floor.is_finite() {
            return Err(FleetError::NonPositive {
                name: "state_floor",
                value: state_floor,
            });
        }
        Ok(Self {
            units,
            mode,
            access,
            kappa,
            state_floor,
        })
    }

    /// Floor defaults to `DEFAULT_STATE_FLOOR_FRACTION * min_i (C_i V_i)`,
    /// safely below any unit state reachable in the scenarios of interest.
    pub fn with_default_floor(
        units: Vec<BatteryUnit>,
        mode: Mode,
        access: Vec<bool>,
        kappa: f64,
    ) -> Result<Self, FleetError> {
        let min_cv = units
            .iter()
            .map(BatteryUnit::energy_capacity)
            .fold(f64::INFINITY, f64::min);
        Self::new(
            units,
            mode,
            access,
            kappa,
            DEFAULT_STATE_FLOOR_FRACTION * min_cv,
        )
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn units(&self) -> &[BatteryUnit] {
        &self.units
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn access(&self) -> &[bool] {
        &self.access
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn state_floor(&self) -> f64 {
        self.state_floor
    }
}

/// Coupled simulation state: SoC plus both estimator stacks.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetState {
    pub soc: Vec<f64>,
    pub xhat: Vec<f64>,
    pub phat: Vec<f64>,
    pub t: f64,
}

/// Pinned consensus tracker for the average desired power:
/// `dphat_i/dt = -kappa ( sum_j a_ij (phat_i - phat_j) + b_i (phat_i - p_avg) )`.
///
/// Only units with access (`b_i = 1`) consume `average_power`.
pub fn power_estimator_rhs(
    topo: &Topology,
    cfg: &FleetConfig,
    phat: &[f64],
    average_power: f64,
) -> Result<Vec<f64>, FleetError> {
    let n = topo.agent_count();
    if cfg.len() != n {
        return Err(FleetError::DimensionMismatch {
            expected: n,
            actual: cfg.len(),
        });
    }
    if phat.len() != n {
        return Err(FleetError::DimensionMismatch {
            expected: n,
            actual: phat.len(),
        });
    }
    let mut lap = vec![0.0; n];
    topo.apply_laplacian(phat, &mut lap);
    Ok((0..n)
        .map(|i| {
            let pin = if cfg.access[i] {
                phat[i] - average_power
            } else {
                0.0
            };
            -cfg.kappa * (lap[i] + pin)
        })
        .collect())
}

/// Local power allocation `x / max(a1/2, xhat) * phat`. The floor guard
/// keeps transients with tiny or negative state estimates from blowing up
/// the division; at steady state it is inactive.
pub fn allocate_power(unit_state: f64, xhat: f64, phat: f64, state_floor: f64) -> f64 {
    unit_state / xhat.max(0.5 * state_floor) * phat
}

/// `max_i S_i - min_i S_i`.
pub fn soc_spread(soc: &[f64]) -> f64 {
    let max = soc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = soc.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

/// Total delivered power.
pub fn total_power(power: &[f64]) -> f64 {
    power.iter().sum()
}

/// Integrates the closed loop (SoC, unit-state estimator, power estimator)
/// over `[0, horizon]`.
///
/// Records `soc_i`, `p_i`, `total_power`, `p_star`, `xhat_i`, `phat_i`, and
/// `soc_spread`. The run aborts with a diagnostic if any SoC leaves
/// `[0, 1]`: the model has no saturation, so such a scenario is infeasible
/// rather than clampable.
pub fn simulate_fleet(
    topo: &Topology,
    cfg: &FleetConfig,
    book: &MaskBook,
    power_reference: &ReferenceSpec,
    dac: DacParams,
    dt: f64,
    horizon: f64,
    decimate: usize,
) -> Result<Trajectory, FleetError> {
    let n = topo.agent_count();
    if cfg.len() != n {
        return Err(FleetError::DimensionMismatch {
            expected: n,
            actual: cfg.len(),
        });
    }
    if book.agent_count() != n {
        return Err(FleetError::DimensionMismatch {
            expected: n,
            actual: book.agent_count(),
        });
    }
    let steps = grid_steps(dt, horizon)?;
    let decimate = decimate.max(1);

    // Stability guards for both linear subsystems.
    let lam_max = topo.max_laplacian_eigenvalue();
    check_step_size(dt, dac.beta() * lam_max).map_err(|_| FleetError::UnstableStep {
        system: "unit-state estimator",
        dt,
        limit: crate::dac::RK4_STABILITY_MARGIN / (dac.beta() * lam_max),
    })?;
    let mut pinned = topo.laplacian();
    for i in 0..n {
        if cfg.access[i] {
            pinned[[i, i]] += 1.0;
        }
    }
    let mu_max = symmetric_eigenvalues(&pinned)
        .last()
        .copied()
        .unwrap_or(0.0);
    check_step_size(dt, cfg.kappa * mu_max).map_err(|_| FleetError::UnstableStep {
        system: "power estimator",
        dt,
        limit: crate::dac::RK4_STABILITY_MARGIN / (cfg.kappa * mu_max),
    })?;

    let cv: Vec<f64> = cfg.units.iter().map(BatteryUnit::energy_capacity).collect();
    let mode = cfg.mode;
    let sign = mode.energy_rate_sign();
    let floor = cfg.state_floor;
    let beta = dac.beta();
    let kappa = cfg.kappa;

    // State layout: [soc | xhat | phat].
    let mut y = vec![0.0; 3 * n];
    for i in 0..n {
        y[i] = cfg.units[i].soc();
        y[n + i] = unit_state_value(cv[i], y[i], mode);
        y[2 * n + i] = 0.0;
    }
    {
        let (xh, _) = y[n..].split_at_mut(n);
        book.add_mask_value(0.0, xh);
    }

    let mut names = Vec::with_capacity(4 * n + 3);
    for i in 1..=n {
        names.push(format!("soc_{i}"));
    }
    for i in 1..=n {
        names.push(format!("p_{i}"));
    }
    names.push("total_power".into());
    names.push("p_star".into());
    for i in 1..=n {
        names.push(format!("xhat_{i}"));
    }
    for i in 1..=n {
        names.push(format!("phat_{i}"));
    }
    names.push("soc_spread".into());
    let mut traj = Trajectory::new(0.0, dt * decimate as f64, names);

    let mut row = vec![0.0; 4 * n + 3];
    let mut stage = vec![0.0; 3 * n];
    let mut k1 = vec![0.0; 3 * n];
    let mut k2 = vec![0.0; 3 * n];
    let mut k3 = vec![0.0; 3 * n];
    let mut k4 = vec![0.0; 3 * n];
    let mut power = vec![0.0; n];
    let mut lap = vec![0.0; n];

    // One stage evaluation: allocation from the current stage values, then
    // all three derivative blocks.
    let rhs = |t: f64,
               state: &[f64],
               out: &mut Vec<f64>,
               power: &mut Vec<f64>,
               lap: &mut Vec<f64>| {
        let (soc, rest) = state.split_at(n);
        let (xhat, phat) = rest.split_at(n);
        for i in 0..n {
            let x = unit_state_value(cv[i], soc[i], mode);
            power[i] = allocate_power(x, xhat[i], phat[i], floor);
        }
        // SoC block.
        for i in 0..n {
            out[i] = -power[i] / cv[i];
        }
        // Unit-state estimator block: masked input derivative +- p.
        topo.apply_laplacian(xhat, lap);
        for i in 0..n {
            out[n + i] = sign * power[i] - beta * lap[i];
        }
        {
            let (_, tail) = out.split_at_mut(n);
            let (xh_out, _) = tail.split_at_mut(n);
            book.add_mask_derivative(t, xh_out);
        }
        // Power estimator block.
        let p_avg = power_reference.value(t) / n as f64;
        topo.apply_laplacian(phat, lap);
        for i in 0..n {
            let pin = if cfg.access[i] { phat[i] - p_avg } else { 0.0 };
            out[2 * n + i] = -kappa * (lap[i] + pin);
        }
    };

    for k in 0..=steps {
        let t = k as f64 * dt;
        // SoC feasibility check at every step.
        for i in 0..n {
            let s = y[i];
            if !(0.0..=1.0).contains(&s) {
                return Err(FleetError::SocOutOfRange {
                    unit: i + 1,
                    t,
                    value: s,
                });
            }
        }
        if k % decimate == 0 {
            for i in 0..n {
                let x = unit_state_value(cv[i], y[i], mode);
                power[i] = allocate_power(x, y[n + i], y[2 * n + i], floor);
            }
            for i in 0..n {
                row[i] = y[i];
                row[n + i] = power[i];
                row[2 * n + 2 + i] = y[n + i];
                row[3 * n + 2 + i] = y[2 * n + i];
            }
            row[2 * n] = total_power(&power);
            row[2 * n + 1] = power_reference.value(t);
            row[4 * n + 2] = soc_spread(&y[0..n]);
            traj.push_sample(&row);
        }
        if k == steps {
            break;
        }
        rhs(t, &y, &mut k1, &mut power, &mut lap);
        for i in 0..3 * n {
            stage[i] = y[i] + 0.5 * dt * k1[i];
        }
        rhs(t + 0.5 * dt, &stage, &mut k2, &mut power, &mut lap);
        for i in 0..3 * n {
            stage[i] = y[i] + 0.5 * dt * k2[i];
        }
        rhs(t + 0.5 * dt, &stage, &mut k3, &mut power, &mut lap);
        for i in 0..3 * n {
            stage[i] = y[i] + dt * k3[i];
        }
        rhs(t + dt, &stage, &mut k4, &mut power, &mut lap);
        let sixth = dt / 6.0;
        let mut finite = true;
        for i in 0..3 * n {
            y[i] += sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            finite &= y[i].is_finite();
        }
        if !finite {
            return Err(FleetError::NonFiniteState { t: t + dt });
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ring6() -> Topology {
        Topology::ring(6).unwrap()
    }

    fn paper_frequencies() -> Vec<(usize, usize, f64)> {
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

    /// Six-unit ring scenario; `capacity_scale` shrinks the capacities to
    /// make balancing observable on short horizons.
    fn fleet(capacity_scale: f64, kappa: f64) -> FleetConfig {
        let caps = [180.0, 190.0, 200.0, 210.0, 220.0, 230.0];
        let socs = [0.96, 0.89, 0.75, 0.80, 0.73, 0.88];
        let units: Vec<BatteryUnit> = caps
            .iter()
            .zip(socs)
            .map(|(&c, s)| BatteryUnit::from_ah(c * capacity_scale, 50.0, s).unwrap())
            .collect();
        let access = vec![true, false, false, false, false, false];
        FleetConfig::with_default_floor(units, Mode::Discharging, access, kappa).unwrap()
    }

    fn power_spec() -> ReferenceSpec {
        ReferenceSpec::offset_sinusoid(4200.0, 4200.0, 1.0)
    }

    #[test]
    fn unit_state_examples() {
        let empty = BatteryUnit::from_ah(180.0, 50.0, 0.0).unwrap();
        assert_eq!(empty.unit_state(Mode::Discharging), 0.0);
        let full = BatteryUnit::from_ah(180.0, 50.0, 1.0).unwrap();
        assert_eq!(full.unit_state(Mode::Charging), 0.0);
        // 0.96 * 180 Ah * 3600 s/h * 50 V = 31,104,000 J.
        let unit1 = BatteryUnit::from_ah(180.0, 50.0, 0.96).unwrap();
        assert!((unit1.unit_state(Mode::Discharging) - 31_104_000.0).abs() < 1.0);
    }

    #[test]
    fn soc_rhs_examples() {
        let u = BatteryUnit::from_ah(1.0, 1.0, 0.5).unwrap();
        assert_eq!(u.soc_rhs(0.0), 0.0);
        assert!(u.soc_rhs(5.0) < 0.0);
        // 1 Ah at 1 V stores 3600 J; 3600 W drains it in one second.
        assert_eq!(u.soc_rhs(3600.0), -1.0);
    }

    #[test]
    fn unit_validation() {
        assert!(matches!(
            BatteryUnit::from_ah(0.0, 50.0, 0.5),
            Err(FleetError::NonPositive { .. })
        ));
        assert!(matches!(
            BatteryUnit::from_ah(10.0, 50.0, 1.2),
            Err(FleetError::SocOutOfBounds(_))
        ));
    }

    #[test]
    fn config_validation() {
        let units = vec![BatteryUnit::from_ah(10.0, 50.0, 0.5).unwrap(); 3];
        assert!(matches!(
            FleetConfig::with_default_floor(units.clone(), Mode::Discharging, vec![false; 3], 300.0),
            Err(FleetError::NoPowerAccess)
        ));
        assert!(matches!(
            FleetConfig::with_default_floor(units.clone(), Mode::Discharging, vec![true; 2], 300.0),
            Err(FleetError::DimensionMismatch { .. })
        ));
        let ok = FleetConfig::with_default_floor(units, Mode::Discharging, vec![true; 3], 300.0)
            .unwrap();
        // 0.05 of min C V = 0.05 * 10 * 3600 * 50.
        assert!((ok.state_floor() - 90_000.0).abs() < 1e-9);
    }

    #[test]
    fn power_estimator_fixed_point_and_scalar_case() {
        let topo = ring6();
        let cfg = fleet(1.0, 300.0);
        let p_avg = 700.0;
        let out = power_estimator_rhs(&topo, &cfg, &[p_avg; 6], p_avg).unwrap();
        for v in out {
            assert!(v.abs() < 1e-12);
        }

        // Single unit with access: a pure exponential tracker.
        let topo1 = Topology::new(1, &[]).unwrap();
        let cfg1 = FleetConfig::with_default_floor(
            vec![BatteryUnit::from_ah(10.0, 50.0, 0.5).unwrap()],
            Mode::Discharging,
            vec![true],
            250.0,
        )
        .unwrap();
        let out = power_estimator_rhs(&topo1, &cfg1, &[3.0], 10.0).unwrap();
        assert!((out[0] - (-250.0 * (3.0 - 10.0))).abs() < 1e-12);
    }

    #[test]
    fn allocation_examples() {
        // Homogeneous fleet with exact estimates splits the demand evenly.
        let x = 1000.0;
        let p_share = 700.0;
        assert_eq!(allocate_power(x, x, p_share, 100.0), p_share);
        // Guard clamps the denominator from below.
        let a1 = 100.0;
        let clamped = allocate_power(x, a1 / 4.0, p_share, a1);
        assert_eq!(clamped, x / (a1 / 2.0) * p_share);
    }

    #[test]
    fn allocation_matches_error_decomposition() {
        // With xhat = x_a + e_x and phat = p_a + e_p (guard inactive), the
        // law equals k (1 + Delta) x with k = p_a / x_a and
        // Delta = (1 + e_p/p_a) / (1 + e_x/x_a) - 1.
        let mut rng = ChaCha8Rng::seed_from_u64(0x7e0);
        for _ in 0..200 {
            let x_a: f64 = rng.random_range(1e3..1e6);
            let p_a: f64 = rng.random_range(10.0..1e4);
            let x: f64 = rng.random_range(0.5..2.0) * x_a;
            let e_x: f64 = rng.random_range(-0.2..0.2) * x_a;
            let e_p: f64 = rng.random_range(-0.2..0.2) * p_a;
            let floor = 1e-6 * x_a;
            let direct = allocate_power(x, x_a + e_x, p_a + e_p, floor);
            let k = p_a / x_a;
            let delta = (1.0 + e_p / p_a) / (1.0 + e_x / x_a) - 1.0;
            let decomposed = k * (1.0 + delta) * x;
            assert!(
                (direct - decomposed).abs() <= 1e-9 * direct.abs().max(1.0),
                "{direct} vs {decomposed}"
            );
        }
    }

    #[test]
    fn spread_and_total_power_helpers() {
        assert_eq!(soc_spread(&[0.5, 0.5, 0.5]), 0.0);
        let socs = [0.96, 0.89, 0.75, 0.80, 0.73, 0.88];
        assert!((soc_spread(&socs) - 0.23).abs() < 1e-12);
        assert_eq!(total_power(&[1.0, 2.0, 3.5]), 6.5);
    }

    #[test]
    fn homogeneous_fleet_stays_balanced() {
        // Equal units, uniform demand access, no masking: perfect symmetry
        // keeps every SoC identical for all time.
        let topo = ring6();
        let units = vec![BatteryUnit::from_ah(2.0, 50.0, 0.8).unwrap(); 6];
        let cfg =
            FleetConfig::with_default_floor(units, Mode::Discharging, vec![true; 6], 300.0)
                .unwrap();
        let book = MaskBook::from_frequencies(&topo, 0.0, &paper_frequencies()).unwrap();
        let traj = simulate_fleet(
            &topo,
            &cfg,
            &book,
            &power_spec(),
            DacParams::new(400.0).unwrap(),
            1e-3,
            5.0,
            10,
        )
        .unwrap();
        let socs = traj.series_with_prefix("soc");
        for k in 0..traj.len() {
            for i in 1..6 {
                assert!(
                    (socs[i][k] - socs[0][k]).abs() <= 1e-12,
                    "k={k} i={i}: {} vs {}",
                    socs[i][k],
                    socs[0][k]
                );
            }
        }
        let spread = traj.series("soc_spread").unwrap();
        assert!(spread.iter().all(|&s| s.abs() <= 1e-12));
    }

    #[test]
    fn scaled_run_balances_soc() {
        // Desk-size capacities: balancing completes within the horizon.
        let topo = ring6();
        let cfg = fleet(0.01, 300.0);
        let book = MaskBook::from_frequencies(&topo, 500.0, &paper_frequencies()).unwrap();
        let traj = simulate_fleet(
            &topo,
            &cfg,
            &book,
            &power_spec(),
            DacParams::new(400.0).unwrap(),
            1e-3,
            600.0,
            100,
        )
        .unwrap();
        let spread = traj.series("soc_spread").unwrap();
        assert!((spread[0] - 0.23).abs() < 1e-12);
        assert!(
            *spread.last().unwrap() < 0.01,
            "final spread {}",
            spread.last().unwrap()
        );
    }

    #[test]
    fn permuting_unit_labels_permutes_outputs() {
        // Rotate all labels by two and compare a short closed-loop run.
        let topo = ring6();
        let caps = [180.0, 190.0, 200.0, 210.0, 220.0, 230.0];
        let socs = [0.96, 0.89, 0.75, 0.80, 0.73, 0.88];
        let perm = |i: usize| (i + 2) % 6; // new index of old unit i (0-based)

        let base_units: Vec<BatteryUnit> = caps
            .iter()
            .zip(socs)
            .map(|(&c, s)| BatteryUnit::from_ah(0.01 * c, 50.0, s).unwrap())
            .collect();
        let mut perm_units = base_units.clone();
        let mut perm_access = vec![false; 6];
        for i in 0..6 {
            perm_units[perm(i)] = base_units[i];
            perm_access[perm(i)] = i == 0;
        }
        let base_cfg = FleetConfig::with_default_floor(
            base_units,
            Mode::Discharging,
            vec![true, false, false, false, false, false],
            300.0,
        )
        .unwrap();
        let perm_cfg =
            FleetConfig::with_default_floor(perm_units, Mode::Discharging, perm_access, 300.0)
                .unwrap();

        let base_freqs = paper_frequencies();
        let perm_freqs: Vec<(usize, usize, f64)> = base_freqs
            .iter()
            .map(|&(i, j, w)| (perm(i - 1) + 1, perm(j - 1) + 1, w))
            .collect();
        let base_book = MaskBook::from_frequencies(&topo, 500.0, &base_freqs).unwrap();
        let perm_book = MaskBook::from_frequencies(&topo, 500.0, &perm_freqs).unwrap();

        let dac = DacParams::new(400.0).unwrap();
        let a = simulate_fleet(&topo, &base_cfg, &base_book, &power_spec(), dac, 1e-3, 2.0, 50)
            .unwrap();
        let b = simulate_fleet(&topo, &perm_cfg, &perm_book, &power_spec(), dac, 1e-3, 2.0, 50)
            .unwrap();

        for prefix in ["soc", "p", "xhat", "phat"] {
            let sa = a.series_with_prefix(prefix);
            let sb = b.series_with_prefix(prefix);
            for i in 0..6 {
                let pa = sa[i];
                let pb = sb[perm(i)];
                for k in 0..pa.len() {
                    let scale = pa[k].abs().max(1.0);
                    assert!(
                        (pa[k] - pb[k]).abs() <= 1e-9 * scale,
                        "{prefix} unit {i} sample {k}: {} vs {}",
                        pa[k],
                        pb[k]
                    );
                }
            }
        }
    }

    #[test]
    fn doubling_kappa_does_not_worsen_power_tracking() {
        let topo = ring6();
        let book = MaskBook::from_frequencies(&topo, 500.0, &paper_frequencies()).unwrap();
        let dac = DacParams::new(400.0).unwrap();
        let mut errs = Vec::new();
        for kappa in [300.0, 600.0] {
            let cfg = fleet(0.01, kappa);
            let traj =
                simulate_fleet(&topo, &cfg, &book, &power_spec(), dac, 5e-4, 8.0, 1).unwrap();
            let phats = traj.series_with_prefix("phat");
            let mut acc = 0.0;
            let mut count = 0usize;
            for k in 0..traj.len() {
                let t = traj.time(k);
                if t < 6.0 {
                    continue;
                }
                let target = power_spec().value(t) / 6.0;
                let worst = phats
                    .iter()
                    .map(|s| (s[k] - target).abs())
                    .fold(0.0, f64::max);
                acc += worst;
                count += 1;
            }
            errs.push(acc / count as f64);
        }
        assert!(errs[1] <= errs[0], "kappa=600 err {} vs kappa=300 err {}", errs[1], errs[0]);
    }

    #[test]
    fn doubling_beta_does_not_worsen_state_estimation() {
        let topo = ring6();
        let book = MaskBook::from_frequencies(&topo, 500.0, &paper_frequencies()).unwrap();
        let mut errs = Vec::new();
        for beta in [400.0, 800.0] {
            let cfg = fleet(0.01, 300.0);
            let dac = DacParams::new(beta).unwrap();
            let traj =
                simulate_fleet(&topo, &cfg, &book, &power_spec(), dac, 5e-4, 8.0, 1).unwrap();
            let xhats = traj.series_with_prefix("xhat");
            let socs = traj.series_with_prefix("soc");
            let cv: Vec<f64> = cfg.units().iter().map(BatteryUnit::energy_capacity).collect();
            let mut acc = 0.0;
            let mut count = 0usize;
            for k in 0..traj.len() {
                if traj.time(k) < 6.0 {
                    continue;
                }
                let x_a: f64 =
                    (0..6).map(|i| cv[i] * socs[i][k]).sum::<f64>() / 6.0;
                let worst = xhats
                    .iter()
                    .map(|s| (s[k] - x_a).abs())
                    .fold(0.0, f64::max);
                acc += worst;
                count += 1;
            }
            errs.push(acc / count as f64);
        }
        assert!(errs[1] <= errs[0], "beta=800 err {} vs beta=400 err {}", errs[1], errs[0]);
    }

    #[test]
    fn aborts_when_soc_leaves_range() {
        // A single tiny unit asked for far more power than it stores.
        let topo = Topology::new(1, &[]).unwrap();
        let cfg = FleetConfig::with_default_floor(
            vec![BatteryUnit::from_ah(0.01, 50.0, 0.3).unwrap()],
            Mode::Discharging,
            vec![true],
            100.0,
        )
        .unwrap();
        let entries: [(usize, usize, f64); 0] = [];
        let book = MaskBook::from_frequencies(&topo, 0.0, &entries).unwrap();
        let demand = ReferenceSpec::constant(10_000.0);
        let err = simulate_fleet(
            &topo,
            &cfg,
            &book,
            &demand,
            DacParams::new(400.0).unwrap(),
            1e-3,
            600.0,
            1,
        )
        .unwrap_err();
        match err {
            FleetError::SocOutOfRange { unit: 1, t, value } => {
                assert!(t > 0.0);
                assert!(value < 0.0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_unstable_steps_for_both_subsystems() {
        let topo = ring6();
        let book = MaskBook::from_frequencies(&topo, 500.0, &paper_frequencies()).unwrap();
        // beta guard: 400 * 4 = 1600 -> dt must be < 1.5625e-3.
        let err = simulate_fleet(
            &topo,
            &fleet(1.0, 300.0),
            &book,
            &power_spec(),
            DacParams::new(400.0).unwrap(),
            2e-3,
            1.0,
            1,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            FleetError::UnstableStep {
                system: "unit-state estimator",
                ..
            }
        ));
        // kappa guard: low beta, large kappa.
        let err = simulate_fleet(
            &topo,
            &fleet(1.0, 2000.0),
            &book,
            &power_spec(),
            DacParams::new(10.0).unwrap(),
            1e-3,
            1.0,
            1,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            FleetError::UnstableStep {
                system: "power estimator",
                ..
            }
        ));
    }
}
