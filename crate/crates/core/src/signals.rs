//! Closed-form time-varying signals: an affine part plus a finite sum of
//! sinusoids. This class covers every reference appearing in the scenarios
//! while keeping derivatives exact, which matters because the consensus
//! update is driven by the reference *derivative* evaluated at integrator
//! stage times.

/// One sinusoidal term `amplitude * sin(omega * t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinusoid {
    pub amplitude: f64,
    /// Angular frequency in rad/s.
    pub omega: f64,
    /// Phase in radians.
    pub phase: f64,
}

impl Sinusoid {
    pub fn new(amplitude: f64, omega: f64, phase: f64) -> Self {
        Self {
            amplitude,
            omega,
            phase,
        }
    }
}

/// Signal `offset + slope * t + sum_k A_k sin(omega_k t + phi_k)`.
///
/// The derivative is bounded on any horizon by
/// `|slope| + sum_k |A_k| omega_k`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReferenceSpec {
    pub offset: f64,
    pub slope: f64,
    pub terms: Vec<Sinusoid>,
}

impl ReferenceSpec {
    pub fn new(offset: f64, slope: f64, terms: Vec<Sinusoid>) -> Self {
        Self {
            offset,
            slope,
            terms,
        }
    }

    pub fn constant(offset: f64) -> Self {
        Self {
            offset,
            slope: 0.0,
            terms: Vec::new(),
        }
    }

    /// Offset plus a single zero-phase sinusoid.
    pub fn offset_sinusoid(offset: f64, amplitude: f64, omega: f64) -> Self {
        Self {
            offset,
            slope: 0.0,
            terms: vec![Sinusoid::new(amplitude, omega, 0.0)],
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        let mut v = self.offset + self.slope * t;
        for term in &self.terms {
            v += term.amplitude * (term.omega * t + term.phase).sin();
        }
        v
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let mut v = self.slope;
        for term in &self.terms {
            v += term.amplitude * term.omega * (term.omega * t + term.phase).cos();
        }
        v
    }

    /// Upper bound on `|derivative|` over all t.
    pub fn derivative_bound(&self) -> f64 {
        self.slope.abs()
            + self
                .terms
                .iter()
                .map(|term| (term.amplitude * term.omega).abs())
                .sum::<f64>()
    }
}

/// One reference signal per agent; agent `k` sits at index `k - 1`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReferenceBank {
    specs: Vec<ReferenceSpec>,
}

impl ReferenceBank {
    pub fn new(specs: Vec<ReferenceSpec>) -> Self {
        Self { specs }
    }

    /// All-constant bank, one value per agent.
    pub fn constants(values: &[f64]) -> Self {
        Self {
            specs: values.iter().map(|&c| ReferenceSpec::constant(c)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Spec of a 1-based agent.
    pub fn spec(&self, agent: usize) -> &ReferenceSpec {
        assert!(
            agent >= 1 && agent <= self.specs.len(),
            "agent {agent} out of range 1..={}",
            self.specs.len()
        );
        &self.specs[agent - 1]
    }

    pub fn specs(&self) -> &[ReferenceSpec] {
        &self.specs
    }

    pub fn values(&self, t: f64) -> Vec<f64> {
        self.specs.iter().map(|s| s.value(t)).collect()
    }

    pub fn derivatives(&self, t: f64) -> Vec<f64> {
        self.specs.iter().map(|s| s.derivative(t)).collect()
    }

    pub(crate) fn write_derivatives(&self, t: f64, out: &mut [f64]) {
        for (o, s) in out.iter_mut().zip(&self.specs) {
            *o = s.derivative(t);
        }
    }

    /// Arithmetic mean of the signal values across agents.
    pub fn network_average(&self, t: f64) -> f64 {
        let n = self.specs.len();
        assert!(n > 0, "empty reference bank has no average");
        self.specs.iter().map(|s| s.value(t)).sum::<f64>() / n as f64
    }

    /// True when the bank sums to the zero signal for every t: offsets,
    /// slopes, and the amplitudes of each distinct `(omega, phase)` sinusoid
    /// all cancel across agents. Used to validate shift perturbations that
    /// must not move the network average.
    pub fn is_zero_sum(&self) -> bool {
        use std::collections::BTreeMap;
        let mut offset = 0.0;
        let mut slope = 0.0;
        let mut scale = 1.0f64;
        let mut tones: BTreeMap<(u64, u64), f64> = BTreeMap::new();
        for spec in &self.specs {
            offset += spec.offset;
            slope += spec.slope;
            scale = scale.max(spec.offset.abs()).max(spec.slope.abs());
            for term in &spec.terms {
                scale = scale.max(term.amplitude.abs());
                *tones
                    .entry((term.omega.to_bits(), term.phase.to_bits()))
                    .or_insert(0.0) += term.amplitude;
            }
        }
        let tol = 1e-9 * scale;
        offset.abs() <= tol
            && slope.abs() <= tol
            && tones.values().all(|a| a.abs() <= tol)
    }

    /// True when every agent's signal vanishes at `t = 0`.
    pub fn is_zero_at_origin(&self) -> bool {
        self.specs.iter().all(|spec| {
            let scale = 1.0f64
                .max(spec.offset.abs())
                .max(spec.terms.iter().map(|t| t.amplitude.abs()).sum());
            spec.value(0.0).abs() <= 1e-9 * scale
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn desired_power_spec() -> ReferenceSpec {
        // 4200 sin(t) + 4200 W
        ReferenceSpec::offset_sinusoid(4200.0, 4200.0, 1.0)
    }

    #[test]
    fn evaluates_power_reference_at_quarter_period() {
        let spec = desired_power_spec();
        let t = std::f64::consts::FRAC_PI_2;
        assert!((spec.value(t) - 8400.0).abs() < 1e-9);
    }

    #[test]
    fn constant_spec_is_flat() {
        let spec = ReferenceSpec::constant(3.25);
        for t in [0.0, 0.1, 7.0, 123.0] {
            assert_eq!(spec.value(t), 3.25);
            assert_eq!(spec.derivative(t), 0.0);
        }
    }

    #[test]
    fn sine_vanishes_at_origin() {
        let spec = ReferenceSpec::offset_sinusoid(0.0, 1.0, 2.0);
        assert_eq!(spec.value(0.0), 0.0);
    }

    #[test]
    fn power_reference_derivative_at_origin() {
        // Hand differentiation: d/dt [4200 sin t + 4200] at 0 is 4200,
        // cross-checked by central difference below.
        let spec = desired_power_spec();
        assert!((spec.derivative(0.0) - 4200.0).abs() < 1e-9);
        let h = 1e-6;
        let fd = (spec.value(h) - spec.value(-h)) / (2.0 * h);
        assert!((fd - spec.derivative(0.0)).abs() < 1e-4 * 4200.0);
    }

    #[test]
    fn derivative_matches_central_difference_on_random_specs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5157);
        for _ in 0..100 {
            let n_terms = rng.random_range(0..=4usize);
            let terms: Vec<Sinusoid> = (0..n_terms)
                .map(|_| {
                    Sinusoid::new(
                        rng.random_range(-5.0..5.0),
                        rng.random_range(0.1..10.0),
                        rng.random_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect();
            let spec = ReferenceSpec::new(
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                terms,
            );
            let scale = spec.derivative_bound().max(1.0);
            for _ in 0..100 {
                let t: f64 = rng.random_range(0.0..20.0);
                let h = 1e-6;
                let fd = (spec.value(t + h) - spec.value(t - h)) / (2.0 * h);
                let exact = spec.derivative(t);
                assert!(
                    (fd - exact).abs() <= 1e-4 * scale,
                    "fd {fd} vs exact {exact} at t={t}"
                );
            }
        }
    }

    #[test]
    fn derivative_bound_holds_on_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xb0b);
        for _ in 0..20 {
            let terms: Vec<Sinusoid> = (0..3)
                .map(|_| {
                    Sinusoid::new(
                        rng.random_range(-5.0..5.0),
                        rng.random_range(0.1..10.0),
                        rng.random_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect();
            let spec = ReferenceSpec::new(0.5, rng.random_range(-2.0..2.0), terms);
            let bound = spec.derivative_bound();
            for k in 0..500 {
                let t = k as f64 * 0.04;
                assert!(spec.derivative(t).abs() <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn network_average_of_identical_specs() {
        let bank = ReferenceBank::new(vec![ReferenceSpec::constant(2.5); 4]);
        assert_eq!(bank.network_average(11.0), 2.5);
    }

    #[test]
    fn network_average_of_opposite_offsets_is_zero() {
        let bank = ReferenceBank::constants(&[7.0, -7.0]);
        assert_eq!(bank.network_average(3.0), 0.0);
        assert!(bank.is_zero_sum());
    }

    #[test]
    fn network_average_matches_direct_summation() {
        // Six distinct sinusoids; oracle is a literal sum over agents.
        let specs: Vec<ReferenceSpec> = (0..6)
            .map(|k| {
                ReferenceSpec::new(
                    k as f64,
                    0.1 * k as f64,
                    vec![Sinusoid::new(1.0 + k as f64, 0.5 + 0.3 * k as f64, 0.2 * k as f64)],
                )
            })
            .collect();
        let bank = ReferenceBank::new(specs.clone());
        for t in [0.0, 0.37, 2.0, 15.5] {
            let direct: f64 = specs.iter().map(|s| s.value(t)).sum::<f64>() / 6.0;
            assert!((bank.network_average(t) - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn zero_sum_detects_cancelling_tones() {
        let bank = ReferenceBank::new(vec![
            ReferenceSpec::new(0.0, 0.0, vec![Sinusoid::new(100.0, 2.0, 0.0)]),
            ReferenceSpec::new(0.0, 0.0, vec![Sinusoid::new(-100.0, 2.0, 0.0)]),
            ReferenceSpec::constant(0.0),
        ]);
        assert!(bank.is_zero_sum());
        assert!(bank.is_zero_at_origin());

        let skewed = ReferenceBank::new(vec![
            ReferenceSpec::new(0.0, 0.0, vec![Sinusoid::new(100.0, 2.0, 0.0)]),
            ReferenceSpec::new(0.0, 0.0, vec![Sinusoid::new(-100.0, 2.1, 0.0)]),
        ]);
        assert!(!skewed.is_zero_sum());
    }
}
