//! Time integrators: Euler-Maruyama Langevin dynamics, the renormalized
//! stochastic Euler scheme for the SSE (real and complex noise), coherent
//! Schrodinger evolution and the Gaussian centroid model.

use nalgebra::DVector;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fock::{
    build_hamiltonians, build_lindblad_operator, build_position_momentum, build_potential,
    BandedOperator, BasisConfig, Operator, QuantumState,
};
use crate::rng::SeedInfo;
use crate::system::Stepper;

/// `V(x) = c4 x^4 - c2 x^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuarticWell {
    pub c4: f64,
    pub c2: f64,
}

impl QuarticWell {
    pub fn new(c4: f64, c2: f64) -> Self {
        Self { c4, c2 }
    }

    pub fn value(&self, x: f64) -> f64 {
        let x2 = x * x;
        self.c4 * x2 * x2 - self.c2 * x2
    }

    pub fn force_gradient(&self, x: f64) -> f64 {
        4.0 * self.c4 * x * x * x - 2.0 * self.c2 * x
    }

    /// Position of the right minimum; the left one is its negative.
    pub fn minimum(&self) -> f64 {
        (self.c2 / (2.0 * self.c4)).sqrt()
    }

    pub fn barrier_height(&self) -> f64 {
        self.c2 * self.c2 / (4.0 * self.c4)
    }

    /// `V''` at the minima.
    pub fn well_curvature(&self) -> f64 {
        4.0 * self.c2
    }
}

impl Default for QuarticWell {
    fn default() -> Self {
        Self { c4: 0.01, c2: 0.35 }
    }
}

/// A phase-space point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalState {
    pub x: f64,
    pub p: f64,
}

impl ClassicalState {
    pub fn new(x: f64, p: f64) -> Self {
        Self { x, p }
    }

    pub fn time_reverse(&self) -> Self {
        Self { x: self.x, p: -self.p }
    }

    pub fn parity(&self) -> Self {
        Self { x: -self.x, p: -self.p }
    }
}

/// Bath, well and integration parameters shared by all dynamics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub gamma: f64,
    pub temperature: f64,
    pub dt: f64,
    pub c4: f64,
    pub c2: f64,
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(default = "one")]
    pub kb: f64,
    #[serde(default = "one")]
    pub hbar: f64,
}

fn one() -> f64 {
    1.0
}

impl SimParams {
    pub fn new(gamma: f64, temperature: f64, dt: f64) -> Self {
        Self { gamma, temperature, dt, c4: 0.01, c2: 0.35, mass: 1.0, kb: 1.0, hbar: 1.0 }
    }

    /// Parameters at barrier-normalized temperature `kB T / V_B`.
    pub fn at_barrier_temperature(gamma: f64, t_b: f64, dt: f64) -> Self {
        let mut p = Self::new(gamma, 0.0, dt);
        p.temperature = t_b * p.well().barrier_height() / p.kb;
        p
    }

    pub fn well(&self) -> QuarticWell {
        QuarticWell::new(self.c4, self.c2)
    }

    pub fn kt(&self) -> f64 {
        self.kb * self.temperature
    }

    pub fn barrier_temperature(&self) -> f64 {
        self.kt() / self.well().barrier_height()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(invalid(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(invalid(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.c4 > 0.0 && self.c2 > 0.0) {
            return Err(invalid("well coefficients must be positive"));
        }
        if !(self.mass > 0.0 && self.kb > 0.0 && self.hbar > 0.0) {
            return Err(invalid("physical constants must be positive"));
        }
        Ok(())
    }

    /// Momentum noise amplitude `2 sqrt(gamma m kB T)`.
    pub fn noise_amplitude(&self) -> f64 {
        2.0 * (self.gamma * self.mass * self.kt()).sqrt()
    }
}

/// Position/momentum means and variances of a Gaussian wavepacket.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMoments {
    pub mean_x: f64,
    pub mean_p: f64,
    pub var_x: f64,
    pub var_p: f64,
}

impl GaussianMoments {
    /// Soft check of the uncertainty bound `var_x var_p >= hbar^2/4`.
    pub fn satisfies_uncertainty(&self, hbar: f64) -> bool {
        self.var_x * self.var_p >= hbar * hbar / 4.0 - 1e-9
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryKind {
    Classical,
    Quantum,
    Gaussian,
}

/// State types that can form a trajectory.
pub trait Slice: Clone {
    const KIND: TrajectoryKind;
}

impl Slice for ClassicalState {
    const KIND: TrajectoryKind = TrajectoryKind::Classical;
}

impl Slice for QuantumState {
    const KIND: TrajectoryKind = TrajectoryKind::Quantum;
}

impl Slice for GaussianMoments {
    const KIND: TrajectoryKind = TrajectoryKind::Gaussian;
}

/// Uniformly time-stepped sequence of states.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<S> {
    pub dt: f64,
    pub slices: Vec<S>,
    pub seed_info: Option<SeedInfo>,
}

impl<S: Slice> Trajectory<S> {
    pub fn new(dt: f64, slices: Vec<S>) -> Result<Self> {
        if slices.len() < 2 {
            return Err(invalid("a trajectory needs at least two slices"));
        }
        if !(dt > 0.0) {
            return Err(invalid("trajectory timestep must be positive"));
        }
        Ok(Self { dt, slices, seed_info: None })
    }

    pub fn kind(&self) -> TrajectoryKind {
        S::KIND
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// Number of steps.
    pub fn n_steps(&self) -> usize {
        self.slices.len().saturating_sub(1)
    }

    pub fn duration(&self) -> f64 {
        self.n_steps() as f64 * self.dt
    }

    pub fn first(&self) -> &S {
        &self.slices[0]
    }

    pub fn last(&self) -> &S {
        &self.slices[self.slices.len() - 1]
    }
}

/// Langevin Euler-Maruyama step; both components advance from the pre-step state.
pub fn langevin_step(s: &ClassicalState, params: &SimParams, xi: f64) -> ClassicalState {
    let dt = params.dt;
    let well = params.well();
    let x = s.x + s.p / params.mass * dt;
    let p = s.p - (well.force_gradient(s.x) + 2.0 * params.gamma * s.p) * dt
        + params.noise_amplitude() * xi * dt.sqrt();
    ClassicalState { x, p }
}

/// Operator bundle for the SSE: `H_gamma`, `L` and banded forms of the
/// deterministic generator `(-i H_gamma - L^dagger L / 2) / hbar`, `L`, `X`.
#[derive(Clone, Debug)]
pub struct SseOps {
    pub cfg: BasisConfig,
    pub h_gamma: Operator,
    pub l: Operator,
    pub x: Operator,
    pub p: Operator,
    generator: BandedOperator,
    l_band: BandedOperator,
    x_band: BandedOperator,
    /// Largest tolerated deviation of the raw Euler norm from 1.
    pub norm_guard: f64,
}

impl SseOps {
    /// Double-well operators for bath coupling `gamma` at temperature `t`.
    pub fn double_well(cfg: &BasisConfig, c4: f64, c2: f64, gamma: f64, temperature: f64) -> Result<Self> {
        let v = build_potential(cfg, c4, c2)?;
        let (_, h_gamma) = build_hamiltonians(cfg, &v, gamma)?;
        let l = build_lindblad_operator(cfg, gamma, temperature)?;
        Self::from_operators(cfg, h_gamma, l)
    }

    pub fn from_params(cfg: &BasisConfig, params: &SimParams) -> Result<Self> {
        Self::double_well(cfg, params.c4, params.c2, params.gamma, params.temperature)
    }

    /// Arbitrary Hamiltonian and jump operator (test systems, toy models).
    pub fn from_operators(cfg: &BasisConfig, h_gamma: Operator, l: Operator) -> Result<Self> {
        cfg.validate()?;
        if h_gamma.dim() != cfg.dim || l.dim() != cfg.dim {
            return Err(invalid("operator dimensions do not match the basis"));
        }
        let ldl = l.adjoint().mul(&l);
        let gen = h_gamma
            .scale(C64::new(0.0, -1.0 / cfg.hbar))
            .sub(&ldl.scale(C64::new(0.5 / cfg.hbar, 0.0)));
        let (x, p) = build_position_momentum(cfg)?;
        Ok(Self {
            cfg: cfg.clone(),
            generator: BandedOperator::from_operator(&gen),
            l_band: BandedOperator::from_operator(&l),
            x_band: BandedOperator::from_operator(&x),
            h_gamma,
            l,
            x,
            p,
            norm_guard: 0.1,
        })
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    pub fn hbar(&self) -> f64 {
        self.cfg.hbar
    }

    /// `<X>` in the state.
    pub fn position(&self, psi: &QuantumState) -> f64 {
        let mut tmp = vec![C64::new(0.0, 0.0); self.dim()];
        self.x_band.apply_into(psi.amplitudes().as_slice(), &mut tmp);
        psi.amplitudes().iter().zip(&tmp).map(|(a, b)| (a.conj() * b).re).sum()
    }

    /// `<P>` in the state.
    pub fn momentum(&self, psi: &QuantumState) -> f64 {
        self.p.expectation(psi).re
    }
}

/// Drift and diffusion vectors evaluated at one state.
#[derive(Clone, Debug)]
pub struct DriftDiffusion {
    pub drift: DVector<C64>,
    pub diffusion: DVector<C64>,
    /// `<L>` in the state.
    pub l_mean: C64,
}

impl DriftDiffusion {
    /// `sigma^dagger sigma`.
    pub fn diffusion_norm_sqr(&self) -> f64 {
        self.diffusion.norm_squared()
    }
}

/// Evaluates `u(psi)` and `sigma(psi)` together, sharing `L psi`.
pub fn drift_diffusion(psi: &QuantumState, ops: &SseOps) -> DriftDiffusion {
    let n = ops.dim();
    let amps = psi.amplitudes().as_slice();
    let mut g = DVector::zeros(n);
    let mut lpsi = DVector::zeros(n);
    ops.generator.apply_into(amps, g.as_mut_slice());
    ops.l_band.apply_into(amps, lpsi.as_mut_slice());
    let mut l_mean = C64::new(0.0, 0.0);
    for (a, b) in amps.iter().zip(lpsi.iter()) {
        l_mean += a.conj() * b;
    }
    let hbar = ops.hbar();
    let lm_conj = l_mean.conj();
    let half_abs = 0.5 * l_mean.norm_sqr();
    let inv_sqrt_hbar = 1.0 / hbar.sqrt();
    let mut drift = g;
    let mut diffusion = DVector::zeros(n);
    for k in 0..n {
        drift[k] += (lm_conj * lpsi[k] - amps[k] * half_abs) / hbar;
        diffusion[k] = (lpsi[k] - l_mean * amps[k]) * inv_sqrt_hbar;
    }
    DriftDiffusion { drift, diffusion, l_mean }
}

/// `u(psi) = (1/hbar)(-i H_gamma - L^dagger L/2 + <L^dagger> L - <L^dagger><L>/2) psi`.
pub fn sse_drift(psi: &QuantumState, ops: &SseOps) -> DVector<C64> {
    drift_diffusion(psi, ops).drift
}

/// `sigma(psi) = (L - <L>) psi / sqrt(hbar)`.
pub fn sse_diffusion(psi: &QuantumState, ops: &SseOps) -> DVector<C64> {
    drift_diffusion(psi, ops).diffusion
}

/// Unnormalized Euler update `psi + u dt + sigma xi sqrt(dt)`.
pub fn sse_euler_raw(psi: &QuantumState, ops: &SseOps, dt: f64, xi: f64) -> DVector<C64> {
    let dd = drift_diffusion(psi, ops);
    let sdt = xi * dt.sqrt();
    psi.amplitudes() + dd.drift * C64::new(dt, 0.0) + dd.diffusion * C64::new(sdt, 0.0)
}

fn renormalize_guarded(raw: DVector<C64>, guard: f64) -> Result<QuantumState> {
    let norm = raw.norm();
    let deviation = (norm - 1.0).abs();
    if !(deviation <= guard) {
        return Err(Error::NormGuard { deviation, limit: guard });
    }
    Ok(QuantumState::from_vector(raw / C64::new(norm, 0.0)))
}

/// One renormalized stochastic Euler step with a real Wiener increment.
pub fn sse_euler_step(psi: &QuantumState, ops: &SseOps, dt: f64, xi: f64) -> Result<QuantumState> {
    renormalize_guarded(sse_euler_raw(psi, ops, dt, xi), ops.norm_guard)
}

/// Unnormalized quantum-state-diffusion update with complex increment
/// `(xi_r + i xi_i) sqrt(dt / 2)`.
pub fn qsd_euler_raw(psi: &QuantumState, ops: &SseOps, dt: f64, xi_r: f64, xi_i: f64) -> DVector<C64> {
    let dd = drift_diffusion(psi, ops);
    let dw = C64::new(xi_r, xi_i) * (dt / 2.0).sqrt();
    psi.amplitudes() + dd.drift * C64::new(dt, 0.0) + dd.diffusion * dw
}

pub fn qsd_euler_step(psi: &QuantumState, ops: &SseOps, dt: f64, xi_r: f64, xi_i: f64) -> Result<QuantumState> {
    renormalize_guarded(qsd_euler_raw(psi, ops, dt, xi_r, xi_i), ops.norm_guard)
}

/// Deterministic evolution under `h` using the exact step propagator
/// `exp(-i h dt / hbar)`; slices are stored every `dt`.
pub fn coherent_propagate(
    psi0: &QuantumState,
    h: &Operator,
    hbar: f64,
    t: f64,
    dt: f64,
) -> Result<Trajectory<QuantumState>> {
    if !(t > 0.0 && dt > 0.0) {
        return Err(invalid("coherent propagation needs t > 0 and dt > 0"));
    }
    let n_steps = (t / dt).round().max(1.0) as usize;
    let stepper = CoherentPropagator::new(h, hbar, dt);
    let mut slices = Vec::with_capacity(n_steps + 1);
    slices.push(psi0.clone());
    for _ in 0..n_steps {
        let next = stepper.step(slices.last().expect("nonempty"));
        slices.push(next);
    }
    Trajectory::new(dt, slices)
}

/// Exact propagator for a fixed Hamiltonian, via its eigenbasis.
#[derive(Clone, Debug)]
pub struct CoherentPropagator {
    unitary: Operator,
}

impl CoherentPropagator {
    pub fn new(h: &Operator, hbar: f64, dt: f64) -> Self {
        let spectrum = h.hermitian_spectrum();
        let u = spectrum.function(|e| C64::from_polar(1.0, -e * dt / hbar));
        Self { unitary: Operator::from_matrix(u) }
    }

    pub fn step(&self, psi: &QuantumState) -> QuantumState {
        QuantumState::from_vector(self.unitary.apply(psi))
    }
}

/// Noise amplitudes `(position, momentum)` of the Gaussian centroid model for
/// fixed variances. Errors when the momentum radicand is negative.
pub fn gaussian_noise_amplitudes(g: &GaussianMoments, params: &SimParams) -> Result<(f64, f64)> {
    let hbar = params.hbar;
    let mkt = params.mass * params.kt();
    let uncertainty = 4.0 * g.var_p * g.var_x / (hbar * hbar);
    let radicand = 4.0 * params.gamma * mkt * (1.0 - uncertainty);
    let radicand = if radicand < 0.0 && radicand > -1e-12 * (4.0 * params.gamma * mkt).max(1.0) {
        0.0
    } else {
        radicand
    };
    if radicand < 0.0 {
        return Err(Error::MomentDomain(format!(
            "momentum noise radicand {radicand:.3e} < 0 (4 var_x var_p / hbar^2 = {uncertainty:.6})"
        )));
    }
    let pos = -((hbar * hbar * params.gamma / (4.0 * mkt)).sqrt()
        - 4.0 * g.var_x * (mkt * params.gamma).sqrt() / hbar);
    Ok((pos, radicand.sqrt()))
}

/// Advances the centroid; the variances are held at their input values.
pub fn gaussian_centroid_step(g: &GaussianMoments, params: &SimParams, xi: f64) -> Result<GaussianMoments> {
    let (pos_amp, mom_amp) = gaussian_noise_amplitudes(g, params)?;
    let dt = params.dt;
    let dw = xi * dt.sqrt();
    let well = params.well();
    Ok(GaussianMoments {
        mean_x: g.mean_x + g.mean_p / params.mass * dt + pos_amp * dw,
        mean_p: g.mean_p - (well.force_gradient(g.mean_x) + 2.0 * params.gamma * g.mean_p) * dt
            + mom_amp * dw,
        var_x: g.var_x,
        var_p: g.var_p,
    })
}

/// Runs `n_steps` of `dynamics` from `initial`, recording the stream identity.
pub fn propagate<D: Stepper>(
    initial: &D::State,
    dynamics: &D,
    n_steps: usize,
    seed: SeedInfo,
) -> Result<Trajectory<D::State>> {
    if n_steps == 0 {
        return Err(invalid("propagate needs at least one step"));
    }
    let mut rng = seed.rng();
    let mut slices = Vec::with_capacity(n_steps + 1);
    slices.push(initial.clone());
    for _ in 0..n_steps {
        let next = dynamics.step(slices.last().expect("nonempty"), &mut rng)?;
        slices.push(next);
    }
    let mut traj = Trajectory::new(dynamics.dt(), slices)?;
    traj.seed_info = Some(seed);
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::BasisConfig;
    use crate::rng::{Purpose, SeedInfo};
    use crate::system::{ClassicalLangevin, GaussianCentroid, SseDynamics, Stepper};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn ops(dim: usize, gamma: f64, tb: f64) -> SseOps {
        let params = SimParams::at_barrier_temperature(gamma, tb, 1e-3);
        SseOps::from_params(&BasisConfig::for_well(dim, 0.35), &params).unwrap()
    }

    #[test]
    fn langevin_examples() {
        let params = SimParams::at_barrier_temperature(0.25, 0.1, 1e-3);
        let s = langevin_step(&ClassicalState::new(17.5f64.sqrt(), 0.0), &params, 0.0);
        assert!(s.p.abs() < 1e-4);
        let mut free = params.clone();
        free.gamma = 0.0;
        let s = langevin_step(&ClassicalState::new(0.0, 1.0), &free, 0.0);
        assert_eq!(s.p, 1.0);
        assert!((s.x - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn noiseless_langevin_energy_error_is_first_order() {
        // Explicit Euler on a conservative system: energy drift per unit time is O(dt).
        let drift = |dt: f64| {
            let mut params = SimParams::new(0.0, 1.0, dt);
            params.gamma = 0.0;
            let well = params.well();
            let mut s = ClassicalState::new(-4.0, 0.5);
            let e0 = 0.5 * s.p * s.p + well.value(s.x);
            let n = (1.0 / dt) as usize;
            for _ in 0..n {
                s = langevin_step(&s, &params, 0.0);
            }
            (0.5 * s.p * s.p + well.value(s.x) - e0).abs()
        };
        let (a, b) = (drift(1e-3), drift(5e-4));
        assert!(a < 5e-3, "{a}");
        assert!((a / b - 2.0).abs() < 0.3, "ratio {}", a / b);
    }

    #[test]
    fn drift_balances_diffusion() {
        let o = ops(40, 0.25, 0.2);
        let psi = QuantumState::coherent(&o.cfg, -3.0, 0.7);
        let dd = drift_diffusion(&psi, &o);
        let lhs = psi.amplitudes().dotc(&dd.drift).re;
        assert!((lhs + 0.5 * dd.diffusion_norm_sqr()).abs() < 1e-10);
        assert!(psi.amplitudes().dotc(&dd.diffusion).norm() < 1e-12);
        // |sigma|^2 = (<L^dag L> - |<L>|^2) / hbar
        let ldl = o.l.adjoint().mul(&o.l).expectation(&psi).re;
        let lm = o.l.expectation(&psi);
        assert!((dd.diffusion_norm_sqr() - (ldl - lm.norm_sqr())).abs() < 1e-10);
    }

    #[test]
    fn closed_system_drift_and_eigenstate_diffusion() {
        let cfg = BasisConfig::for_well(20, 0.35);
        let v = crate::fock::build_potential(&cfg, 0.01, 0.35).unwrap();
        let (h, _) = crate::fock::build_hamiltonians(&cfg, &v, 0.0).unwrap();
        let o = SseOps::from_operators(&cfg, h.clone(), Operator::zeros(20)).unwrap();
        let psi = QuantumState::coherent(&cfg, 1.0, 0.2);
        let u = sse_drift(&psi, &o);
        let expect = h.apply(&psi) * C64::new(0.0, -1.0);
        assert!((u - expect).norm() < 1e-12);

        let toy = BasisConfig { dim: 2, ..BasisConfig::default() };
        let (a, _) = crate::fock::ladder_sized(2);
        let o = SseOps::from_operators(&toy, Operator::zeros(2), a).unwrap();
        let ground = QuantumState::fock(2, 0);
        assert!(sse_diffusion(&ground, &o).norm() < 1e-15);
    }

    #[test]
    fn drift_is_phase_covariant() {
        let o = ops(30, 0.25, 0.3);
        let psi = QuantumState::coherent(&o.cfg, 2.0, -0.3);
        let phase = C64::from_polar(1.0, 0.83);
        let rotated = QuantumState::from_vector(psi.amplitudes() * phase);
        let diff = sse_drift(&rotated, &o) - sse_drift(&psi, &o) * phase;
        assert!(diff.norm() < 1e-12);
        let a = sse_euler_step(&psi, &o, 1e-3, 0.4).unwrap();
        let b = sse_euler_step(&rotated, &o, 1e-3, 0.4).unwrap();
        assert!((b.amplitudes() - a.amplitudes() * phase).norm() < 1e-10);
    }

    #[test]
    fn euler_step_renormalizes_and_norm_defect_is_first_order() {
        let o = ops(40, 0.25, 0.2);
        let mut psi = QuantumState::coherent(&o.cfg, -4.18, 0.0);
        let mut rng = SeedInfo::new(1, Purpose::Test, 0).rng();
        let mut total = 0.0;
        let n = 10_000;
        let dt = 1e-3;
        for _ in 0..n {
            let xi: f64 = rng.sample(StandardNormal);
            let raw = sse_euler_raw(&psi, &o, dt, xi);
            total += (raw.norm() - 1.0).abs();
            psi = sse_euler_step(&psi, &o, dt, xi).unwrap();
            assert!((psi.norm() - 1.0).abs() < 1e-13);
        }
        let mean_dev = total / n as f64;
        assert!(mean_dev < 5.0 * dt, "{mean_dev}");
    }

    #[test]
    fn norm_guard_trips_for_large_steps() {
        let o = ops(40, 0.25, 0.2);
        let psi = QuantumState::coherent(&o.cfg, -4.18, 0.0);
        assert!(matches!(sse_euler_step(&psi, &o, 1.0, 3.0), Err(Error::NormGuard { .. })));
    }

    #[test]
    fn coherent_evolution_conserves_energy_and_phases_eigenstates() {
        let cfg = BasisConfig::for_well(40, 0.35);
        let v = crate::fock::build_potential(&cfg, 0.01, 0.35).unwrap();
        let (h, _) = crate::fock::build_hamiltonians(&cfg, &v, 0.0).unwrap();
        let psi = QuantumState::coherent(&cfg, -4.18, 0.3);
        let traj = coherent_propagate(&psi, &h, 1.0, 50.0, 0.5).unwrap();
        let e0 = h.expectation(&psi).re;
        assert!((h.expectation(traj.last()).re - e0).abs() < 1e-8);
        let eig = h.hermitian_spectrum().eigenvector(2);
        let tr = coherent_propagate(&eig, &h, 1.0, 10.0, 0.1).unwrap();
        assert!((tr.last().inner(&eig).norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn gaussian_centroid_reductions() {
        let params = SimParams::at_barrier_temperature(0.25, 0.2, 1e-3);
        let min_unc = GaussianMoments { mean_x: -1.0, mean_p: 0.3, var_x: 0.4, var_p: 0.25 / 0.4 };
        let (_, mom) = gaussian_noise_amplitudes(&min_unc, &params).unwrap();
        assert_eq!(mom, 0.0);
        // Position amplitude vanishes at var_x = hbar^2 / (8 m kB T).
        let root = 1.0 / (8.0 * params.kt());
        let g = GaussianMoments { var_x: root, var_p: 0.1, ..min_unc };
        let (pos, _) = gaussian_noise_amplitudes(&g, &params).unwrap();
        assert!(pos.abs() < 1e-12);
        // xi = 0 is one deterministic Langevin drift step on the centroid.
        let next = gaussian_centroid_step(&min_unc, &params, 0.0).unwrap();
        let classical = langevin_step(&ClassicalState::new(-1.0, 0.3), &params, 0.0);
        assert_eq!((next.mean_x, next.mean_p), (classical.x, classical.p));
        let bad = GaussianMoments { var_x: 1.0, var_p: 1.0, ..min_unc };
        assert!(matches!(gaussian_centroid_step(&bad, &params, 0.1), Err(Error::MomentDomain(_))));
    }

    #[test]
    fn order_parameters() {
        let o = ops(40, 0.25, 0.2);
        let sse = SseDynamics::new(o.clone(), 1e-3);
        let g = QuantumState::fock(40, 0);
        assert!(sse.order_parameter(&g).abs() < 1e-14);
        let psi = QuantumState::coherent(&o.cfg, -2.5, 0.4);
        assert!((sse.order_parameter(&psi.parity()) + sse.order_parameter(&psi)).abs() < 1e-10);
        let cl = ClassicalLangevin::new(SimParams::at_barrier_temperature(0.25, 0.1, 1e-3)).unwrap();
        assert_eq!(cl.order_parameter(&ClassicalState::new(-4.18, 2.0)), -4.18);
        let gc = GaussianCentroid::new(SimParams::at_barrier_temperature(0.25, 0.1, 1e-3), 0.4, 0.625);
        let m = GaussianMoments { mean_x: 1.5, mean_p: 0.0, var_x: 0.4, var_p: 0.625 };
        assert_eq!(gc.order_parameter(&m), 1.5);
    }

    #[test]
    fn propagate_is_deterministic_and_single_step_consistent() {
        let cl = ClassicalLangevin::new(SimParams::at_barrier_temperature(0.25, 0.3, 1e-3)).unwrap();
        let s0 = ClassicalState::new(-4.0, 0.1);
        let seed = SeedInfo::new(11, Purpose::Simulate, 2);
        let a = propagate(&s0, &cl, 500, seed).unwrap();
        let b = propagate(&s0, &cl, 500, seed).unwrap();
        assert_eq!(a, b);
        let one = propagate(&s0, &cl, 1, seed).unwrap();
        let mut rng = seed.rng();
        let xi: f64 = rng.sample(StandardNormal);
        assert_eq!(one.slices[1], langevin_step(&s0, &cl.params, xi));
        assert_eq!(one.len(), 2);
    }

    #[test]
    fn unstable_equilibrium_falls_into_a_well() {
        // From rest at the barrier top every trajectory commits to a well.
        let params = SimParams::at_barrier_temperature(1.0, 0.1, 1e-2);
        let cl = ClassicalLangevin::new(params).unwrap();
        for seed in 0..100 {
            let tr = propagate(&ClassicalState::new(0.0, 0.0), &cl, 20_000, SeedInfo::new(seed, Purpose::Test, 0)).unwrap();
            let first = tr.slices.iter().position(|s| s.x <= -3.0 || s.x >= 3.0);
            let k = first.unwrap_or_else(|| panic!("seed {seed} never left the barrier region"));
            let side = tr.slices[k].x.signum();
            assert!(tr.slices[k..].iter().all(|s| s.x * side > 0.0), "seed {seed} recrossed");
        }
    }

}
