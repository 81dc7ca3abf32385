//! Truncated Fock-basis representation of the single-particle operators and states.
//!
//! Operators are dense complex matrices on the first `dim` harmonic-oscillator
//! levels of a reference oscillator with frequency `osc_freq`. Polynomials in
//! the ladder operators are formed in a basis enlarged by `pad` levels and
//! truncated afterwards, so the retained block matches the infinite-basis
//! matrix elements exactly.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const I: C64 = C64::new(0.0, 1.0);

/// Physical constants and truncation of the Fock basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisConfig {
    pub dim: usize,
    pub mass: f64,
    pub hbar: f64,
    pub kb: f64,
    /// Frequency of the reference oscillator defining the ladder.
    pub osc_freq: f64,
    /// Extra levels used when forming operator powers.
    pub pad: usize,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            dim: 60,
            mass: 1.0,
            hbar: 1.0,
            kb: 1.0,
            osc_freq: 1.4f64.sqrt(),
            pad: 8,
        }
    }
}

impl BasisConfig {
    /// Basis whose reference frequency matches the curvature at the minima of
    /// `c4 x^4 - c2 x^2`, i.e. `omega = sqrt(4 c2 / m)` (independent of `c4`).
    pub fn for_well(dim: usize, c2: f64) -> Self {
        let mut cfg = Self { dim, ..Self::default() };
        cfg.osc_freq = (4.0 * c2 / cfg.mass).sqrt();
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(invalid(format!("basis dim must be >= 2, got {}", self.dim)));
        }
        for (name, v) in [
            ("mass", self.mass),
            ("hbar", self.hbar),
            ("kb", self.kb),
            ("osc_freq", self.osc_freq),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Oscillator length `sqrt(hbar / (m omega))`.
    pub fn length_scale(&self) -> f64 {
        (self.hbar / (self.mass * self.osc_freq)).sqrt()
    }

    fn with_dim(&self, dim: usize) -> Self {
        Self { dim, ..self.clone() }
    }
}

/// How a momentum kick is applied to a quantum state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisplacementForm {
    /// `exp(i dp X / hbar)`: unitary, shifts `<P>` by `dp`.
    #[default]
    Unitary,
    /// `exp(dp X)` followed by renormalization of the displaced state.
    RealExponential,
}

/// Dense complex square matrix on the truncated basis.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator(DMatrix<C64>);

impl Operator {
    pub fn from_matrix(m: DMatrix<C64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "operators are square");
        Self(m)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn scale(&self, s: C64) -> Self {
        Self(&self.0 * s)
    }

    pub fn add(&self, other: &Operator) -> Self {
        Self(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &Operator) -> Self {
        Self(&self.0 - &other.0)
    }

    pub fn mul(&self, other: &Operator) -> Self {
        Self(&self.0 * &other.0)
    }

    pub fn commutator(&self, other: &Operator) -> Self {
        Self(&self.0 * &other.0 - &other.0 * &self.0)
    }

    /// Largest entrywise modulus.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `max |A - A^dagger|` entrywise.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim();
        let mut err = 0.0f64;
        for j in 0..n {
            for i in 0..=j {
                err = err.max((self.0[(i, j)] - self.0[(j, i)].conj()).norm());
            }
        }
        err
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn apply(&self, psi: &QuantumState) -> DVector<C64> {
        &self.0 * psi.amplitudes()
    }

    pub fn expectation(&self, psi: &QuantumState) -> C64 {
        psi.amplitudes().dotc(&self.apply(psi))
    }

    /// Eigen-decomposition of a Hermitian operator with ascending eigenvalues.
    pub fn hermitian_spectrum(&self) -> Spectrum {
        Spectrum::of(&self.0)
    }

    fn hermitized(m: DMatrix<C64>) -> Self {
        let h = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        Self(h)
    }
}

/// Ascending eigenvalues and matching orthonormal eigenvectors (columns).
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: DMatrix<C64>,
}

impl Spectrum {
    pub fn of(m: &DMatrix<C64>) -> Self {
        let eig = SymmetricEigen::new(m.clone());
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = DMatrix::from_fn(m.nrows(), order.len(), |i, j| {
            eig.eigenvectors[(i, order[j])]
        });
        Self { values, vectors }
    }

    /// Builds `f(A)` from the decomposition.
    pub fn function<F: Fn(f64) -> C64>(&self, f: F) -> DMatrix<C64> {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (j, &lam) in self.values.iter().enumerate() {
            let fj = f(lam);
            for i in 0..n {
                scaled[(i, j)] *= fj;
            }
        }
        scaled * self.vectors.adjoint()
    }

    pub fn eigenvector(&self, k: usize) -> QuantumState {
        QuantumState::from_vector(self.vectors.column(k).into_owned())
    }
}

/// Complex amplitude vector in the Fock basis.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantumState(DVector<C64>);

impl QuantumState {
    /// Wraps amplitudes without normalizing.
    pub fn from_vector(v: DVector<C64>) -> Self {
        Self(v)
    }

    /// Wraps amplitudes and rescales to unit norm.
    pub fn normalized(v: DVector<C64>) -> Result<Self> {
        let n = v.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(invalid(format!("cannot normalize a vector with norm {n}")));
        }
        Ok(Self(v / C64::new(n, 0.0)))
    }

    pub fn fock(dim: usize, n: usize) -> Self {
        let mut v = DVector::zeros(dim);
        v[n] = C64::new(1.0, 0.0);
        Self(v)
    }

    /// Oscillator coherent state centred at `(x0, p0)`, truncated and renormalized.
    pub fn coherent(cfg: &BasisConfig, x0: f64, p0: f64) -> Self {
        let alpha = C64::new(
            x0 * (cfg.mass * cfg.osc_freq / cfg.hbar).sqrt(),
            p0 / (cfg.mass * cfg.hbar * cfg.osc_freq).sqrt(),
        ) / 2f64.sqrt();
        let mut v = DVector::zeros(cfg.dim);
        let mut c = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
        v[0] = c;
        for n in 1..cfg.dim {
            c = c * alpha / (n as f64).sqrt();
            v[n] = c;
        }
        Self::normalized(v).expect("coherent amplitudes are nonzero")
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.0
    }

    pub fn amplitudes_mut(&mut self) -> &mut DVector<C64> {
        &mut self.0
    }

    pub fn into_vector(self) -> DVector<C64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &QuantumState) -> C64 {
        self.0.dotc(&other.0)
    }

    /// Multiplies amplitude `n` by `(-1)^n`.
    pub fn parity(&self) -> Self {
        parity_apply(self)
    }

    /// Entrywise complex conjugate.
    pub fn time_reverse(&self) -> Self {
        time_reverse_state(self)
    }
}

/// Banded view of an operator for fast matrix-vector products.
///
/// Operators built from finitely many ladder products have a fixed bandwidth
/// in the Fock basis, and entries outside it are exact zeros.
#[derive(Clone, Debug)]
pub struct BandedOperator {
    dim: usize,
    lower: usize,
    upper: usize,
    /// Row-major band storage, `lower + upper + 1` entries per row.
    band: Vec<C64>,
}

impl BandedOperator {
    pub fn from_operator(op: &Operator) -> Self {
        let m = op.matrix();
        let n = op.dim();
        let (mut lower, mut upper) = (0usize, 0usize);
        for j in 0..n {
            for i in 0..n {
                if m[(i, j)] != C64::new(0.0, 0.0) {
                    if i > j {
                        lower = lower.max(i - j);
                    } else {
                        upper = upper.max(j - i);
                    }
                }
            }
        }
        let width = lower + upper + 1;
        let mut band = vec![C64::new(0.0, 0.0); n * width];
        for i in 0..n {
            for k in 0..width {
                let j = i as isize + k as isize - lower as isize;
                if j >= 0 && (j as usize) < n {
                    band[i * width + k] = m[(i, j as usize)];
                }
            }
        }
        Self { dim: n, lower, upper, band }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> (usize, usize) {
        (self.lower, self.upper)
    }

    /// `out = A x`.
    pub fn apply_into(&self, x: &[C64], out: &mut [C64]) {
        let width = self.lower + self.upper + 1;
        for (i, o) in out.iter_mut().enumerate().take(self.dim) {
            let row = &self.band[i * width..(i + 1) * width];
            let j0 = i as isize - self.lower as isize;
            let k_start = if j0 < 0 { (-j0) as usize } else { 0 };
            let k_end = width.min((self.dim as isize - j0) as usize);
            let mut acc = C64::new(0.0, 0.0);
            for k in k_start..k_end {
                acc += row[k] * x[(j0 + k as isize) as usize];
            }
            *o = acc;
        }
    }

    pub fn apply(&self, x: &DVector<C64>) -> DVector<C64> {
        let mut out = DVector::zeros(self.dim);
        self.apply_into(x.as_slice(), out.as_mut_slice());
        out
    }
}

/// Lowering and raising operators `(a, a^dagger)` on `dim` levels.
pub fn ladder_sized(dim: usize) -> (Operator, Operator) {
    let mut a = DMatrix::zeros(dim, dim);
    for n in 1..dim {
        a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    let adag = a.adjoint();
    (Operator(a), Operator(adag))
}

pub fn build_ladder(cfg: &BasisConfig) -> Result<(Operator, Operator)> {
    cfg.validate()?;
    Ok(ladder_sized(cfg.dim))
}

fn position_momentum_sized(cfg: &BasisConfig, dim: usize) -> (DMatrix<C64>, DMatrix<C64>) {
    let (a, adag) = ladder_sized(dim);
    let xs = (cfg.hbar / (2.0 * cfg.mass * cfg.osc_freq)).sqrt();
    let ps = (cfg.mass * cfg.hbar * cfg.osc_freq / 2.0).sqrt();
    let x = (a.matrix() + adag.matrix()) * C64::new(xs, 0.0);
    let p = (adag.matrix() - a.matrix()) * (I * ps);
    (x, p)
}

/// Position and momentum operators on the truncated basis.
pub fn build_position_momentum(cfg: &BasisConfig) -> Result<(Operator, Operator)> {
    cfg.validate()?;
    let (x, p) = position_momentum_sized(cfg, cfg.dim);
    Ok((Operator::hermitized(x), Operator::hermitized(p)))
}

fn truncate(m: &DMatrix<C64>, dim: usize) -> DMatrix<C64> {
    m.view((0, 0), (dim, dim)).into_owned()
}

/// Padded-basis position and momentum, for forming operator products.
struct Padded {
    dim: usize,
    x: DMatrix<C64>,
    p: DMatrix<C64>,
}

impl Padded {
    fn new(cfg: &BasisConfig) -> Self {
        let (x, p) = position_momentum_sized(cfg, cfg.dim + cfg.pad);
        Self { dim: cfg.dim, x, p }
    }

    fn finish(&self, m: DMatrix<C64>) -> Operator {
        Operator::hermitized(truncate(&m, self.dim))
    }
}

/// Quartic double-well potential `c4 X^4 - c2 X^2`.
pub fn build_potential(cfg: &BasisConfig, c4: f64, c2: f64) -> Result<Operator> {
    cfg.validate()?;
    if !(c4 > 0.0 && c2 > 0.0) {
        return Err(invalid(format!("potential needs c4 > 0 and c2 > 0, got {c4}, {c2}")));
    }
    Ok(build_polynomial_potential(cfg, &[0.0, 0.0, -c2, 0.0, c4]))
}

/// Potential `sum_k coeffs[k] X^k` built in the padded basis.
pub fn build_polynomial_potential(cfg: &BasisConfig, coeffs: &[f64]) -> Operator {
    let padded = Padded::new(cfg);
    let n = padded.x.nrows();
    let mut acc = DMatrix::<C64>::zeros(n, n);
    let mut power = DMatrix::<C64>::identity(n, n);
    for (k, &c) in coeffs.iter().enumerate() {
        if k > 0 {
            power = &power * &padded.x;
        }
        if c != 0.0 {
            acc += &power * C64::new(c, 0.0);
        }
    }
    padded.finish(acc)
}

/// `(H, H_gamma)` with `H = P^2/2m + V` and
/// `H_gamma = H + (gamma/2)(XP + PX)`.
pub fn build_hamiltonians(cfg: &BasisConfig, v: &Operator, gamma: f64) -> Result<(Operator, Operator)> {
    cfg.validate()?;
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(invalid(format!("gamma must be >= 0, got {gamma}")));
    }
    if v.dim() != cfg.dim {
        return Err(invalid("potential dimension does not match the basis"));
    }
    let padded = Padded::new(cfg);
    let kinetic = padded.finish(&padded.p * &padded.p * C64::new(0.5 / cfg.mass, 0.0));
    let h = kinetic.add(v);
    let sym = padded.finish(&padded.x * &padded.p + &padded.p * &padded.x);
    let h_gamma = if gamma == 0.0 {
        h.clone()
    } else {
        Operator::hermitized(h.0.clone() + sym.0 * C64::new(0.5 * gamma, 0.0))
    };
    Ok((h, h_gamma))
}

/// The symmetrized product `XP + PX` on the truncated basis.
pub fn build_dilation(cfg: &BasisConfig) -> Result<Operator> {
    cfg.validate()?;
    let padded = Padded::new(cfg);
    Ok(padded.finish(&padded.x * &padded.p + &padded.p * &padded.x))
}

/// Coefficients `(cx, cp)` of `L = cx X + i cp P`.
pub fn lindblad_coefficients(cfg: &BasisConfig, gamma: f64, temperature: f64) -> (f64, f64) {
    let mkt = cfg.mass * cfg.kb * temperature;
    let cx = (4.0 * gamma * mkt / cfg.hbar).sqrt();
    let cp = (gamma * cfg.hbar / (4.0 * mkt)).sqrt();
    (cx, cp)
}

/// Bath jump operator `sqrt(4 gamma m kB T / hbar) X + i sqrt(gamma hbar / (4 m kB T)) P`.
pub fn build_lindblad_operator(cfg: &BasisConfig, gamma: f64, temperature: f64) -> Result<Operator> {
    cfg.validate()?;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid(format!(
            "lindblad operator needs gamma > 0 (use coherent propagation for gamma = 0), got {gamma}"
        )));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(invalid(format!("temperature must be > 0, got {temperature}")));
    }
    let (x, p) = build_position_momentum(cfg)?;
    let (cx, cp) = lindblad_coefficients(cfg, gamma, temperature);
    Ok(Operator(x.0 * C64::new(cx, 0.0) + p.0 * (I * cp)))
}

/// Cached spectral decomposition of the truncated position operator, used
/// to build and apply momentum kicks.
#[derive(Clone, Debug)]
pub struct MomentumKicker {
    hbar: f64,
    form: DisplacementForm,
    spectrum: Spectrum,
}

impl MomentumKicker {
    pub fn new(cfg: &BasisConfig, form: DisplacementForm) -> Result<Self> {
        let (x, _) = build_position_momentum(cfg)?;
        Ok(Self { hbar: cfg.hbar, form, spectrum: x.hermitian_spectrum() })
    }

    pub fn form(&self) -> DisplacementForm {
        self.form
    }

    fn phase(&self, dp: f64, x: f64) -> C64 {
        match self.form {
            DisplacementForm::Unitary => C64::from_polar(1.0, dp * x / self.hbar),
            DisplacementForm::RealExponential => C64::new((dp * x).exp(), 0.0),
        }
    }

    pub fn operator(&self, dp: f64) -> Operator {
        Operator(self.spectrum.function(|x| self.phase(dp, x)))
    }

    /// Applies the kick to a state; the real-exponential form is renormalized.
    pub fn apply(&self, psi: &QuantumState, dp: f64) -> Result<QuantumState> {
        let v = &self.spectrum.vectors;
        let mut coeffs = v.adjoint() * psi.amplitudes();
        for (c, &x) in coeffs.iter_mut().zip(self.spectrum.values.iter()) {
            *c *= self.phase(dp, x);
        }
        let out = v * coeffs;
        match self.form {
            DisplacementForm::Unitary => Ok(QuantumState(out)),
            DisplacementForm::RealExponential => QuantumState::normalized(out),
        }
    }
}

/// Momentum displacement operator for a kick of size `dp`.
pub fn momentum_displacement(cfg: &BasisConfig, dp: f64, form: DisplacementForm) -> Result<Operator> {
    if !dp.is_finite() {
        return Err(invalid("momentum kick must be finite"));
    }
    Ok(MomentumKicker::new(cfg, form)?.operator(dp))
}

pub fn parity_apply(state: &QuantumState) -> QuantumState {
    let mut v = state.0.clone();
    for (n, z) in v.iter_mut().enumerate() {
        if n % 2 == 1 {
            *z = -*z;
        }
    }
    QuantumState(v)
}

pub fn time_reverse_state(state: &QuantumState) -> QuantumState {
    QuantumState(state.0.map(|z| z.conj()))
}

/// Ground-state observables at two basis sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub dims: (usize, usize),
    pub ground_energy: (f64, f64),
    pub ground_x2: (f64, f64),
}

impl ConvergenceReport {
    pub fn energy_drift(&self) -> f64 {
        (self.ground_energy.0 - self.ground_energy.1).abs()
    }

    pub fn x2_drift(&self) -> f64 {
        (self.ground_x2.0 - self.ground_x2.1).abs()
    }
}

/// Compares ground-state energy and `<X^2>` of the double well at `dim`
/// and `dim + extra`.
pub fn convergence_drift(cfg: &BasisConfig, c4: f64, c2: f64, extra: usize) -> Result<ConvergenceReport> {
    let probe = |dim: usize| -> Result<(f64, f64)> {
        let c = cfg.with_dim(dim);
        let v = build_potential(&c, c4, c2)?;
        let (h, _) = build_hamiltonians(&c, &v, 0.0)?;
        let spectrum = h.hermitian_spectrum();
        let g = spectrum.eigenvector(0);
        let (x, _) = build_position_momentum(&c)?;
        let x2 = x.mul(&x).expectation(&g).re;
        Ok((spectrum.values[0], x2))
    };
    let (e_a, x_a) = probe(cfg.dim)?;
    let (e_b, x_b) = probe(cfg.dim + extra)?;
    Ok(ConvergenceReport {
        dims: (cfg.dim, cfg.dim + extra),
        ground_energy: (e_a, e_b),
        ground_x2: (x_a, x_b),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(dim: usize) -> BasisConfig {
        BasisConfig::for_well(dim, 0.35)
    }

    #[test]
    fn ladder_entries() {
        let (a, adag) = build_ladder(&cfg(2)).unwrap();
        assert_eq!(a.matrix()[(0, 1)], C64::new(1.0, 0.0));
        assert_eq!(a.matrix().iter().filter(|z| z.norm() > 0.0).count(), 1);
        let (a4, _) = build_ladder(&cfg(4)).unwrap();
        assert!((a4.matrix()[(2, 3)].re - 3f64.sqrt()).abs() < 1e-15);
        let num = adag.mul(&a);
        let (a7, ad7) = build_ladder(&cfg(7)).unwrap();
        let n7 = ad7.mul(&a7);
        for k in 0..7 {
            assert!((n7.matrix()[(k, k)].re - k as f64).abs() < 1e-12);
        }
        assert_eq!(num.dim(), 2);
        assert_eq!(a7.adjoint(), ad7);
    }

    #[test]
    fn ground_state_moments() {
        let c = cfg(30);
        let (x, p) = build_position_momentum(&c).unwrap();
        let g = QuantumState::fock(30, 0);
        assert!(x.expectation(&g).norm() < 1e-15);
        assert!(p.expectation(&g).norm() < 1e-15);
        let x2 = x.mul(&x).expectation(&g).re;
        assert!((x2 - 1.0 / (2.0 * c.osc_freq)).abs() < 1e-12);
        assert!(x.hermiticity_error() < 1e-12 && p.hermiticity_error() < 1e-12);
    }

    #[test]
    fn canonical_commutator_on_protected_block() {
        for dim in [20, 40, 60] {
            let c = cfg(dim);
            let (x, p) = build_position_momentum(&c).unwrap();
            let comm = x.commutator(&p);
            let mut worst = 0.0f64;
            for j in 0..dim - 2 {
                for k in 0..dim - 2 {
                    let target = if j == k { C64::new(0.0, c.hbar) } else { C64::new(0.0, 0.0) };
                    worst = worst.max((comm.matrix()[(j, k)] - target).norm());
                }
            }
            assert!(worst < 1e-8, "dim {dim}: {worst}");
        }
    }

    #[test]
    fn potential_matches_spectral_oracle() {
        let c = cfg(60);
        let v = build_potential(&c, 0.01, 0.35).unwrap();
        assert!(v.hermiticity_error() < 1e-12);
        // Apply v(x) on the eigenvalues of a much larger X and project back:
        // on low levels this must reproduce the padded polynomial.
        let big = BasisConfig { dim: 200, ..c.clone() };
        let (xb, _) = build_position_momentum(&big).unwrap();
        let spectrum = xb.hermitian_spectrum();
        let vb = spectrum.function(|x| C64::new(0.01 * x.powi(4) - 0.35 * x * x, 0.0));
        let mut worst = 0.0f64;
        for i in 0..40 {
            for j in 0..40 {
                worst = worst.max((vb[(i, j)] - v.matrix()[(i, j)]).norm());
            }
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn hamiltonians_are_hermitian_and_reduce_at_zero_coupling() {
        let c = cfg(40);
        let v = build_potential(&c, 0.01, 0.35).unwrap();
        let (h, hg) = build_hamiltonians(&c, &v, 0.0).unwrap();
        assert_eq!(h, hg);
        let (h, hg) = build_hamiltonians(&c, &v, 0.25).unwrap();
        assert!(h.hermiticity_error() < 1e-12);
        assert!(hg.hermiticity_error() < 1e-12);
        let d = build_dilation(&c).unwrap();
        assert!(d.trace().norm() < 1e-12);
    }

    #[test]
    fn ground_energy_converges() {
        let r = convergence_drift(&cfg(60), 0.01, 0.35, 20).unwrap();
        assert!(r.energy_drift() < 1e-6, "{r:?}");
    }

    #[test]
    fn lindblad_operator_shape() {
        let c = cfg(30);
        assert!(build_lindblad_operator(&c, 0.0, 0.3).is_err());
        let l = build_lindblad_operator(&c, 0.25, 0.3).unwrap();
        assert!(l.sub(&l.adjoint()).max_abs() > 0.0);
        let (cx, cp) = lindblad_coefficients(&c, 0.25, 0.3);
        assert!((cx / cp - 4.0 * 0.3).abs() < 1e-12);
        // [L, L^dagger] = -2i cx cp [X, P] on the protected block.
        let (x, p) = build_position_momentum(&c).unwrap();
        let lhs = l.commutator(&l.adjoint());
        let rhs = x.commutator(&p).scale(C64::new(0.0, -2.0 * cx * cp));
        for i in 0..28 {
            for j in 0..28 {
                assert!((lhs.matrix()[(i, j)] - rhs.matrix()[(i, j)]).norm() < 1e-10);
            }
        }
        // On that block [X, P] = i hbar, so [L, L^dagger] = 2 cx cp hbar = 2 gamma hbar.
        assert!((lhs.matrix()[(3, 3)].re - 0.5).abs() < 1e-10);
    }

    #[test]
    fn unitary_kick_shifts_momentum_only() {
        let c = cfg(60);
        let (x, p) = build_position_momentum(&c).unwrap();
        let kicker = MomentumKicker::new(&c, DisplacementForm::Unitary).unwrap();
        let id = kicker.operator(0.0);
        assert!(id.sub(&Operator::identity(60)).max_abs() < 1e-12);
        let g = QuantumState::fock(60, 0);
        let kicked = kicker.apply(&g, 0.7).unwrap();
        assert!((p.expectation(&kicked).re - 0.7).abs() < 1e-8);
        let psi = QuantumState::coherent(&c, -1.0, 0.4);
        for dp in [-1.0, -0.3, 0.5, 1.0] {
            let k = kicker.apply(&psi, dp).unwrap();
            assert!((x.expectation(&k).re - x.expectation(&psi).re).abs() < 1e-8);
            assert!((k.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn real_exponential_kick_is_renormalized() {
        let c = cfg(40);
        let kicker = MomentumKicker::new(&c, DisplacementForm::RealExponential).unwrap();
        let g = QuantumState::fock(40, 0);
        let k = kicker.apply(&g, 0.3).unwrap();
        assert!((k.norm() - 1.0).abs() < 1e-12);
        let (x, _) = build_position_momentum(&c).unwrap();
        // exp(dp X) on a Gaussian moves the centre in position, not momentum.
        assert!(x.expectation(&k).re > 0.05);
    }

    #[test]
    fn parity_and_time_reversal_are_involutions() {
        let c = cfg(40);
        let (x, p) = build_position_momentum(&c).unwrap();
        let one = QuantumState::fock(40, 1);
        assert_eq!(parity_apply(&one).amplitudes()[1], C64::new(-1.0, 0.0));
        let psi = QuantumState::coherent(&c, -2.0, 0.8);
        assert_eq!(parity_apply(&parity_apply(&psi)), psi);
        assert_eq!(time_reverse_state(&time_reverse_state(&psi)), psi);
        let xs = x.expectation(&psi).re;
        let ps = p.expectation(&psi).re;
        assert!((x.expectation(&psi.parity()).re + xs).abs() < 1e-10);
        let tr = psi.time_reverse();
        assert!((x.expectation(&tr).re - xs).abs() < 1e-10);
        assert!((p.expectation(&tr).re + ps).abs() < 1e-10);
        let real = QuantumState::fock(40, 3);
        assert_eq!(time_reverse_state(&real), real);
    }

    #[test]
    fn double_well_ground_state_is_even() {
        let c = cfg(60);
        let v = build_potential(&c, 0.01, 0.35).unwrap();
        let (h, _) = build_hamiltonians(&c, &v, 0.0).unwrap();
        let g = h.hermitian_spectrum().eigenvector(0);
        assert!(g.inner(&g.parity()).norm() > 1.0 - 1e-6);
    }

    #[test]
    fn banded_matches_dense() {
        let c = cfg(30);
        let v = build_potential(&c, 0.01, 0.35).unwrap();
        let (_, hg) = build_hamiltonians(&c, &v, 0.25).unwrap();
        let b = BandedOperator::from_operator(&hg);
        assert_eq!(b.bandwidth(), (4, 4));
        let psi = QuantumState::coherent(&c, 1.0, -0.5);
        let diff = b.apply(psi.amplitudes()) - hg.apply(&psi);
        assert!(diff.norm() < 1e-12);
    }
}
