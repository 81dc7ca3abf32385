//! Step and path log-densities, the Lindblad generator and its stationary
//! state, Gibbs states, fidelity and stationary weights.
//!
//! All densities are natural logs with the Gaussian normalization dropped,
//! so the noiseless successor of a state has log-density 0.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};
use num_complex::Complex64 as C64;

use crate::dynamics::{drift_diffusion, ClassicalState, SimParams, SseOps};
use crate::error::{invalid, Error, Result};
use crate::fock::{Operator, QuantumState};
use crate::system::PathDynamics;

/// Below this `|sigma|^2` the step density is undefined.
pub const DEGENERATE_DIFFUSION: f64 = 1e-14;

/// Log-density of one Langevin Euler step.
pub fn classical_step_log_prob(s0: &ClassicalState, s1: &ClassicalState, params: &SimParams) -> Result<f64> {
    if !(params.gamma > 0.0) {
        return Err(invalid("the classical step density needs gamma > 0"));
    }
    let dt = params.dt;
    let r = s1.p - s0.p + dt * (params.well().force_gradient(s0.x) + 2.0 * params.gamma * s0.p);
    Ok(-r * r / (8.0 * params.mass * params.gamma * params.kt() * dt))
}

/// Backward Langevin density: the forward density from `(x1, -p1)` to `(x0, -p0)`.
pub fn classical_backward_step_log_prob(
    s1: &ClassicalState,
    s0: &ClassicalState,
    params: &SimParams,
) -> Result<f64> {
    classical_step_log_prob(&s1.time_reverse(), &s0.time_reverse(), params)
}

/// Noise coordinate recovered from a renormalized step `psi0 -> psi1`.
///
/// The raw Euler update is `n psi1` for an unknown positive scale `n`. We
/// find `n` and the noise `s` by least squares on
/// `n psi1 - psi0 - u dt = sigma s` (real `s` for real noise, complex for
/// complex noise) and return `sigma^dagger (n psi1 - psi0 - u dt) / |sigma|^2`
/// together with `|sigma|^2`. For a step generated with increment `dW` this
/// returns `dW` to rounding.
pub fn projected_increment(
    psi0: &QuantumState,
    psi1: &QuantumState,
    ops: &SseOps,
    dt: f64,
    complex_noise: bool,
) -> Result<(C64, f64)> {
    let dd = drift_diffusion(psi0, ops);
    let s2 = dd.diffusion_norm_sqr();
    if !(s2 >= DEGENERATE_DIFFUSION) {
        return Err(Error::DegenerateDiffusion(s2));
    }
    let a: DVector<C64> = psi0.amplitudes() + &dd.drift * C64::new(dt, 0.0);
    let p = psi1.amplitudes();
    let sig = &dd.diffusion;
    let re = |x: &DVector<C64>, y: &DVector<C64>| x.dotc(y).re;
    let n = if complex_noise {
        let isig = sig * C64::new(0.0, 1.0);
        let cols = [p, sig, &isig];
        let g = Matrix3::from_fn(|i, j| re(cols[i], cols[j]));
        let b = Vector3::from_fn(|i, _| re(cols[i], &a));
        let c = g.lu().solve(&b).ok_or_else(|| Error::Sampling("singular restoration system".into()))?;
        c[0]
    } else {
        let cols = [p, sig];
        let g = Matrix2::from_fn(|i, j| re(cols[i], cols[j]));
        let b = Vector2::from_fn(|i, _| re(cols[i], &a));
        let c = g.lu().solve(&b).ok_or_else(|| Error::Sampling("singular restoration system".into()))?;
        c[0]
    };
    let r = p * C64::new(n, 0.0) - a;
    Ok((sig.dotc(&r) / s2, s2))
}

/// Log-density of one real-noise SSE step:
/// `-|sigma^dagger r|^2 / (2 dt |sigma|^4)` with `r` the norm-restored residual.
pub fn sse_step_log_prob(psi0: &QuantumState, psi1: &QuantumState, ops: &SseOps, dt: f64) -> Result<f64> {
    let (w, _) = projected_increment(psi0, psi1, ops, dt, false)?;
    Ok(-w.norm_sqr() / (2.0 * dt))
}

/// Log-density of one complex-noise (state diffusion) step. The increment
/// `sigma (xi_r + i xi_i) sqrt(dt/2)` has variance `dt/2` per component, so
/// the exponent is `-|sigma^dagger r|^2 / (dt |sigma|^4)`.
pub fn qsd_step_log_prob(psi0: &QuantumState, psi1: &QuantumState, ops: &SseOps, dt: f64) -> Result<f64> {
    let (w, _) = projected_increment(psi0, psi1, ops, dt, true)?;
    Ok(-w.norm_sqr() / dt)
}

/// Backward SSE density: the forward density between conjugated slices.
pub fn sse_backward_step_log_prob(
    psi1: &QuantumState,
    psi0: &QuantumState,
    ops: &SseOps,
    dt: f64,
) -> Result<f64> {
    sse_step_log_prob(&psi1.time_reverse(), &psi0.time_reverse(), ops, dt)
}

/// Sum of forward step log-densities along consecutive slices.
pub fn path_log_prob<D: PathDynamics>(slices: &[D::State], dynamics: &D) -> Result<f64> {
    if slices.len() < 2 {
        return Err(invalid("a path needs at least two slices"));
    }
    slices.windows(2).map(|w| dynamics.step_log_prob(&w[0], &w[1])).sum()
}

/// Sum of backward step log-densities along consecutive slices.
pub fn path_backward_log_prob<D: PathDynamics>(slices: &[D::State], dynamics: &D) -> Result<f64> {
    if slices.len() < 2 {
        return Err(invalid("a path needs at least two slices"));
    }
    slices.windows(2).map(|w| dynamics.backward_step_log_prob(&w[1], &w[0])).sum()
}

/// Small-step phase `Im<psi0|u(psi0)> dt` accumulated by an Euler step.
pub fn step_amplitude_phase(psi0: &QuantumState, ops: &SseOps, dt: f64) -> f64 {
    psi0.amplitudes().dotc(&drift_diffusion(psi0, ops).drift).im * dt
}

/// Exact phase `arg <psi0|psi1>` of the raw Euler update with noise `xi`.
pub fn step_overlap_phase(psi0: &QuantumState, ops: &SseOps, dt: f64, xi: f64) -> f64 {
    let raw = crate::dynamics::sse_euler_raw(psi0, ops, dt, xi);
    psi0.amplitudes().dotc(&raw).arg()
}

fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a.kronecker(b)
}

/// Vectorized Lindblad generator under column stacking, `vec(A rho B) =
/// (B^T (x) A) vec(rho)`:
/// `-(i/hbar)(I (x) H - H^T (x) I) + (1/hbar)(conj(L) (x) L - I (x) L^dag L / 2 - (L^dag L)^T (x) I / 2)`.
pub fn lindblad_superoperator(h: &Operator, l: &Operator, hbar: f64) -> DMatrix<C64> {
    let n = h.dim();
    let id = DMatrix::<C64>::identity(n, n);
    let hm = h.matrix();
    let lm = l.matrix();
    let ldl = lm.adjoint() * lm;
    let mut s = (kron(&id, hm) - kron(&hm.transpose(), &id)) * C64::new(0.0, -1.0 / hbar);
    s += kron(&lm.conjugate(), lm) * C64::new(1.0 / hbar, 0.0);
    s -= (kron(&id, &ldl) + kron(&ldl.transpose(), &id)) * C64::new(0.5 / hbar, 0.0);
    s
}

pub fn lindblad_superoperator_for(ops: &SseOps) -> DMatrix<C64> {
    lindblad_superoperator(&ops.h_gamma, &ops.l, ops.hbar())
}

/// Direct evaluation of the Lindblad right-hand side.
pub fn lindblad_rhs(rho: &DMatrix<C64>, h: &Operator, l: &Operator, hbar: f64) -> DMatrix<C64> {
    let hm = h.matrix();
    let lm = l.matrix();
    let ld = lm.adjoint();
    let ldl = &ld * lm;
    let comm = hm * rho - rho * hm;
    let diss = lm * rho * &ld - (&ldl * rho + rho * &ldl) * C64::new(0.5, 0.0);
    (comm * C64::new(0.0, -1.0) + diss) / C64::new(hbar, 0.0)
}

/// Fixed-step classical Runge-Kutta integration of the Lindblad equation.
pub fn lindblad_rk4_propagate(
    rho0: &DMatrix<C64>,
    h: &Operator,
    l: &Operator,
    hbar: f64,
    dt: f64,
    n_steps: usize,
) -> DMatrix<C64> {
    let f = |r: &DMatrix<C64>| lindblad_rhs(r, h, l, hbar);
    let half = C64::new(dt / 2.0, 0.0);
    let full = C64::new(dt, 0.0);
    let sixth = C64::new(dt / 6.0, 0.0);
    let mut rho = rho0.clone();
    for _ in 0..n_steps {
        let k1 = f(&rho);
        let k2 = f(&(&rho + &k1 * half));
        let k3 = f(&(&rho + &k2 * half));
        let k4 = f(&(&rho + &k3 * full));
        rho += (k1 + (k2 + k3) * C64::new(2.0, 0.0) + k4) * sixth;
    }
    rho
}

/// Density matrix with the generator residual of its construction.
#[derive(Clone, Debug)]
pub struct StationaryState {
    pub rho: DMatrix<C64>,
    /// `|S vec(rho)|`, zero for states not obtained from a generator.
    pub residual: f64,
}

impl StationaryState {
    /// Hermitizes and normalizes the trace.
    pub fn from_matrix(rho: DMatrix<C64>) -> Result<Self> {
        let h = (&rho + rho.adjoint()) * C64::new(0.5, 0.0);
        let tr = h.trace();
        if !(tr.re.abs() > 0.0) {
            return Err(Error::Stationary("density matrix has zero trace".into()));
        }
        Ok(Self { rho: h / C64::new(tr.re, 0.0), residual: 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn trace(&self) -> C64 {
        self.rho.trace()
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.rho - self.rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        Operator::from_matrix(self.rho.clone()).hermitian_spectrum().values
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn purity(&self) -> f64 {
        (&self.rho * &self.rho).trace().re
    }

    pub fn expectation(&self, op: &Operator) -> C64 {
        (&self.rho * op.matrix()).trace()
    }
}

/// Null vector of a Lindblad superoperator as a density matrix.
///
/// Uses shifted inverse iteration with one LU factorization: the generator
/// has an exact zero eigenvalue whose eigenvector is the stationary state,
/// and a shift of `1e-13 |S|` keeps the factorization regular.
pub fn stationary_state(superop: &DMatrix<C64>) -> Result<StationaryState> {
    let n2 = superop.nrows();
    let dim = (n2 as f64).sqrt().round() as usize;
    if dim * dim != n2 || superop.ncols() != n2 {
        return Err(invalid("superoperator must be square with side dim^2"));
    }
    let snorm = superop.norm();
    let shift = C64::new(1e-13 * snorm, 0.0);
    let mut shifted = superop.clone();
    for k in 0..n2 {
        shifted[(k, k)] -= shift;
    }
    let lu = shifted.lu();
    let mut v = DVector::<C64>::zeros(n2);
    for k in 0..dim {
        v[k * dim + k] = C64::new(1.0 / dim as f64, 0.0);
    }
    for _ in 0..4 {
        let w = lu
            .solve(&v)
            .ok_or_else(|| Error::Stationary("singular factorization".into()))?;
        let nw = w.norm();
        if !nw.is_finite() || nw == 0.0 {
            return Err(Error::Stationary("inverse iteration diverged".into()));
        }
        v = w / C64::new(nw, 0.0);
    }
    let rho = DMatrix::from_column_slice(dim, dim, v.as_slice());
    let mut st = StationaryState::from_matrix(rho)?;
    let vec = DVector::from_column_slice(st.rho.as_slice());
    st.residual = (superop * vec).norm();
    if st.residual > 1e-8 * snorm {
        return Err(Error::Stationary(format!(
            "generator residual {:.3e} exceeds 1e-8 |S| = {:.3e}",
            st.residual,
            1e-8 * snorm
        )));
    }
    let min_eig = st.min_eigenvalue();
    if min_eig < -1e-6 {
        return Err(Error::Stationary(format!(
            "minimum eigenvalue {min_eig:.3e} < -1e-6; enlarge the basis"
        )));
    }
    Ok(st)
}

/// Stationary state of the SSE operator bundle.
pub fn stationary_state_for(ops: &SseOps) -> Result<StationaryState> {
    stationary_state(&lindblad_superoperator_for(ops))
}

/// `exp(-H / kB T) / Z` via the spectrum of `H`.
pub fn gibbs_state(h: &Operator, kt: f64) -> Result<StationaryState> {
    if !(kt > 0.0) {
        return Err(invalid("temperature must be positive"));
    }
    let spectrum = h.hermitian_spectrum();
    let e0 = spectrum.values[0];
    let z: f64 = spectrum.values.iter().map(|e| (-(e - e0) / kt).exp()).sum();
    let rho = spectrum.function(|e| C64::new((-(e - e0) / kt).exp() / z, 0.0));
    Ok(StationaryState { rho, residual: 0.0 })
}

fn psd_sqrt(m: &DMatrix<C64>) -> DMatrix<C64> {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    Operator::from_matrix(h)
        .hermitian_spectrum()
        .function(|e| C64::new(e.max(0.0).sqrt(), 0.0))
}

/// Uhlmann fidelity `(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2`, clipped to `[0, 1 + 1e-9]`.
pub fn fidelity(rho: &StationaryState, sigma: &StationaryState) -> f64 {
    let sr = psd_sqrt(&rho.rho);
    let m = &sr * &sigma.rho * &sr;
    let m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    let root: f64 = Operator::from_matrix(m)
        .hermitian_spectrum()
        .values
        .iter()
        .map(|e| e.max(0.0).sqrt())
        .sum();
    (root * root).clamp(0.0, 1.0 + 1e-9)
}

/// `<psi|rho_st|psi>`, the weight of a pure state under a stationary density matrix.
pub fn stationary_weight_quantum(psi: &QuantumState, st: &StationaryState) -> Result<f64> {
    let w = psi.amplitudes().dotc(&(&st.rho * psi.amplitudes())).re;
    if !(w > 1e-300) {
        return Err(Error::NonpositiveWeight(w));
    }
    Ok(w)
}

/// Log Gibbs phase-space weight `-H(x, p) / kB T`, normalization dropped.
pub fn stationary_log_weight_classical(s: &ClassicalState, params: &SimParams) -> f64 {
    let h = 0.5 * s.p * s.p / params.mass + params.well().value(s.x);
    -h / params.kt()
}
