//! Dynamics as seen by the samplers: one stochastic step, its log-density,
//! the symmetry actions on slices and the stationary weight of a slice.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dynamics::{
    gaussian_centroid_step, langevin_step, qsd_euler_step, sse_euler_step, ClassicalState,
    GaussianMoments, SimParams, Slice, SseOps,
};
use crate::error::{invalid, Result};
use crate::fock::{DisplacementForm, MomentumKicker, QuantumState};
use crate::pathprob::{
    classical_step_log_prob, qsd_step_log_prob, sse_step_log_prob, stationary_weight_quantum,
    StationaryState,
};
use crate::rng::StreamRng;

/// A stochastic one-step map with a scalar progress variable.
pub trait Stepper {
    type State: Slice;

    fn dt(&self) -> f64;

    fn step(&self, s: &Self::State, rng: &mut StreamRng) -> Result<Self::State>;

    /// Reaction coordinate: `x`, `<X>` or the centroid position.
    fn order_parameter(&self, s: &Self::State) -> f64;
}

/// Everything the path samplers need beyond stepping.
pub trait PathDynamics: Stepper {
    /// Forward step log-density with the common prefactor dropped.
    fn step_log_prob(&self, s0: &Self::State, s1: &Self::State) -> Result<f64>;

    /// Backward density: the forward density between time-reversed slices.
    fn backward_step_log_prob(&self, s1: &Self::State, s0: &Self::State) -> Result<f64> {
        self.step_log_prob(&self.time_reverse(s1), &self.time_reverse(s0))
    }

    fn time_reverse(&self, s: &Self::State) -> Self::State;

    fn parity(&self, s: &Self::State) -> Self::State;

    /// Momentum perturbation used by shooting moves.
    fn kick(&self, s: &Self::State, dp: f64) -> Result<Self::State>;

    /// Log stationary weight of a slice, up to a constant.
    fn stationary_log_weight(&self, s: &Self::State) -> Result<f64>;
}

/// Langevin dynamics in the quartic well.
#[derive(Clone, Debug)]
pub struct ClassicalLangevin {
    pub params: SimParams,
}

impl ClassicalLangevin {
    pub fn new(params: SimParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn energy(&self, s: &ClassicalState) -> f64 {
        0.5 * s.p * s.p / self.params.mass + self.params.well().value(s.x)
    }
}

impl Stepper for ClassicalLangevin {
    type State = ClassicalState;

    fn dt(&self) -> f64 {
        self.params.dt
    }

    fn step(&self, s: &ClassicalState, rng: &mut StreamRng) -> Result<ClassicalState> {
        let xi: f64 = rng.sample(StandardNormal);
        Ok(langevin_step(s, &self.params, xi))
    }

    fn order_parameter(&self, s: &ClassicalState) -> f64 {
        s.x
    }
}

impl PathDynamics for ClassicalLangevin {
    fn step_log_prob(&self, s0: &ClassicalState, s1: &ClassicalState) -> Result<f64> {
        classical_step_log_prob(s0, s1, &self.params)
    }

    fn time_reverse(&self, s: &ClassicalState) -> ClassicalState {
        s.time_reverse()
    }

    fn parity(&self, s: &ClassicalState) -> ClassicalState {
        s.parity()
    }

    fn kick(&self, s: &ClassicalState, dp: f64) -> Result<ClassicalState> {
        Ok(ClassicalState { x: s.x, p: s.p + dp })
    }

    fn stationary_log_weight(&self, s: &ClassicalState) -> Result<f64> {
        Ok(-self.energy(s) / self.params.kt())
    }
}

/// Real (homodyne-like) or complex (state-diffusion) Wiener increments.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    Real,
    Complex,
}

/// Renormalized stochastic Euler dynamics of the wavefunction.
#[derive(Clone, Debug)]
pub struct SseDynamics {
    pub ops: Arc<SseOps>,
    pub dt: f64,
    pub noise: NoiseKind,
    kicker: Arc<MomentumKicker>,
    stationary: Option<Arc<StationaryState>>,
}

impl SseDynamics {
    pub fn new(ops: SseOps, dt: f64) -> Self {
        let kicker = MomentumKicker::new(&ops.cfg, DisplacementForm::Unitary)
            .expect("operator bundle carries a validated basis");
        Self { ops: Arc::new(ops), dt, noise: NoiseKind::Real, kicker: Arc::new(kicker), stationary: None }
    }

    pub fn with_noise(mut self, noise: NoiseKind) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_displacement(mut self, form: DisplacementForm) -> Result<Self> {
        self.kicker = Arc::new(MomentumKicker::new(&self.ops.cfg, form)?);
        Ok(self)
    }

    pub fn with_stationary(mut self, st: Arc<StationaryState>) -> Result<Self> {
        if st.rho.nrows() != self.ops.dim() {
            return Err(invalid("stationary state dimension does not match the basis"));
        }
        self.stationary = Some(st);
        Ok(self)
    }

    pub fn stationary(&self) -> Option<&Arc<StationaryState>> {
        self.stationary.as_ref()
    }

    pub fn displacement_form(&self) -> DisplacementForm {
        self.kicker.form()
    }
}

impl Stepper for SseDynamics {
    type State = QuantumState;

    fn dt(&self) -> f64 {
        self.dt
    }

    fn step(&self, s: &QuantumState, rng: &mut StreamRng) -> Result<QuantumState> {
        match self.noise {
            NoiseKind::Real => {
                let xi: f64 = rng.sample(StandardNormal);
                sse_euler_step(s, &self.ops, self.dt, xi)
            }
            NoiseKind::Complex => {
                let xr: f64 = rng.sample(StandardNormal);
                let xi: f64 = rng.sample(StandardNormal);
                qsd_euler_step(s, &self.ops, self.dt, xr, xi)
            }
        }
    }

    fn order_parameter(&self, s: &QuantumState) -> f64 {
        self.ops.position(s)
    }
}

impl PathDynamics for SseDynamics {
    fn step_log_prob(&self, s0: &QuantumState, s1: &QuantumState) -> Result<f64> {
        match self.noise {
            NoiseKind::Real => sse_step_log_prob(s0, s1, &self.ops, self.dt),
            NoiseKind::Complex => qsd_step_log_prob(s0, s1, &self.ops, self.dt),
        }
    }

    fn time_reverse(&self, s: &QuantumState) -> QuantumState {
        s.time_reverse()
    }

    fn parity(&self, s: &QuantumState) -> QuantumState {
        s.parity()
    }

    fn kick(&self, s: &QuantumState, dp: f64) -> Result<QuantumState> {
        if dp == 0.0 {
            return Ok(s.clone());
        }
        QuantumState::normalized(self.kicker.apply(s, dp)?.into_vector())
    }

    fn stationary_log_weight(&self, s: &QuantumState) -> Result<f64> {
        let st = self
            .stationary
            .as_ref()
            .ok_or_else(|| invalid("quantum stationary weights need a stationary state"))?;
        Ok(stationary_weight_quantum(s, st)?.ln())
    }
}

/// Centroid dynamics of a Gaussian packet with frozen variances.
#[derive(Clone, Debug)]
pub struct GaussianCentroid {
    pub params: SimParams,
    pub var_x: f64,
    pub var_p: f64,
}

impl GaussianCentroid {
    pub fn new(params: SimParams, var_x: f64, var_p: f64) -> Self {
        Self { params, var_x, var_p }
    }
}

impl Stepper for GaussianCentroid {
    type State = GaussianMoments;

    fn dt(&self) -> f64 {
        self.params.dt
    }

    fn step(&self, s: &GaussianMoments, rng: &mut StreamRng) -> Result<GaussianMoments> {
        let xi: f64 = rng.sample(StandardNormal);
        let g = GaussianMoments { var_x: self.var_x, var_p: self.var_p, ..*s };
        gaussian_centroid_step(&g, &self.params, xi)
    }

    fn order_parameter(&self, s: &GaussianMoments) -> f64 {
        s.mean_x
    }
}
