//! Post-processing: Wigner functions on a phase-space grid, brute-force
//! first-passage rates with a cutoff, Arrhenius fits, transition-path
//! durations, phase-space histograms and coherent population transfer.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::dynamics::CoherentPropagator;
use crate::fock::{BasisConfig, Operator, QuantumState};
use crate::rng::{Purpose, SeedInfo};
use crate::system::Stepper;
use crate::tis::RateEstimate;
use crate::tps::StateRegions;
use crate::C64;

/// Rectangular grid with nodes at both ends of each range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub nx: usize,
    pub np: usize,
}

impl PhaseGrid {
    pub fn new(x_min: f64, x_max: f64, p_min: f64, p_max: f64, nx: usize, np: usize) -> Result<Self> {
        let g = Self { x_min, x_max, p_min, p_max, nx, np };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min < self.x_max && self.p_min < self.p_max) {
            return Err(invalid("phase grid ranges must satisfy min < max"));
        }
        if self.nx < 2 || self.np < 2 {
            return Err(invalid("phase grid needs at least two nodes per axis"));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn dp(&self) -> f64 {
        (self.p_max - self.p_min) / (self.np - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    pub fn p(&self, j: usize) -> f64 {
        self.p_min + j as f64 * self.dp()
    }

    /// Nearest node, or `None` outside the grid by more than half a cell.
    pub fn locate(&self, x: f64, p: f64) -> Option<(usize, usize)> {
        let i = ((x - self.x_min) / self.dx()).round();
        let j = ((p - self.p_min) / self.dp()).round();
        if i < 0.0 || j < 0.0 || i >= self.nx as f64 || j >= self.np as f64 {
            return None;
        }
        Some((i as usize, j as usize))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WignerField {
    pub grid: PhaseGrid,
    /// `values[(i, j)] = W(x_i, p_j)`.
    pub values: DMatrix<f64>,
}

impl WignerField {
    /// Cell-sum quadrature of the field.
    pub fn integral(&self) -> f64 {
        self.values.sum() * self.grid.dx() * self.grid.dp()
    }

    /// `int W dp` at each x node.
    pub fn position_marginal(&self) -> Vec<f64> {
        (0..self.grid.nx).map(|i| self.values.row(i).sum() * self.grid.dp()).collect()
    }

    pub fn min_value(&self) -> f64 {
        self.values.min()
    }
}

/// Hermite functions `phi_n(x)` of the basis oscillator for `n < dim`,
/// by the normalized three-term recurrence.
pub fn hermite_functions(cfg: &BasisConfig, x: f64, out: &mut [f64]) {
    let l = cfg.length_scale();
    let xi = x / l;
    if out.is_empty() {
        return;
    }
    out[0] = (-0.5 * xi * xi).exp() / (std::f64::consts::PI.sqrt() * l).sqrt();
    if out.len() > 1 {
        out[1] = std::f64::consts::SQRT_2 * xi * out[0];
    }
    for n in 1..out.len().saturating_sub(1) {
        let nf = n as f64;
        out[n + 1] = (2.0 / (nf + 1.0)).sqrt() * xi * out[n] - (nf / (nf + 1.0)).sqrt() * out[n - 1];
    }
}

/// Position-representation wavefunction at `x`.
pub fn position_wavefunction(psi: &QuantumState, cfg: &BasisConfig, x: f64, scratch: &mut Vec<f64>) -> C64 {
    let amps = psi.amplitudes();
    scratch.resize(amps.len(), 0.0);
    hermite_functions(cfg, x, scratch);
    amps.iter().zip(scratch.iter()).map(|(c, h)| c * h).sum()
}

/// Momentum-representation wavefunction at `p`: the `n`-th Fock state is
/// `(-i)^n` times the Hermite function in `p` with length `hbar / l`.
pub fn momentum_wavefunction(psi: &QuantumState, cfg: &BasisConfig, p: f64, scratch: &mut Vec<f64>) -> C64 {
    let mut dual = cfg.clone();
    dual.osc_freq = 1.0 / (cfg.mass * cfg.mass * cfg.osc_freq);
    let amps = psi.amplitudes();
    scratch.resize(amps.len(), 0.0);
    hermite_functions(&dual, p, scratch);
    let phases = [C64::new(1.0, 0.0), C64::new(0.0, -1.0), C64::new(-1.0, 0.0), C64::new(0.0, 1.0)];
    amps.iter()
        .zip(scratch.iter())
        .enumerate()
        .map(|(n, (c, h))| c * phases[n % 4] * *h)
        .sum()
}

/// Probability outside `[lo, hi]` of a density sampled by `f` on `[-r, r]`.
fn mass_outside(f: impl Fn(f64) -> f64, lo: f64, hi: f64, r: f64) -> f64 {
    let n = 4000;
    let h = 2.0 * r / n as f64;
    (0..=n)
        .map(|k| -r + k as f64 * h)
        .filter(|&x| x < lo || x > hi)
        .map(|x| f(x) * h)
        .sum()
}

/// `W(x,p) = (1/(pi hbar)) int psi*(x+y) psi(x-y) exp(2 i p y / hbar) dy`
/// by trapezoid quadrature in `y` of the Hermite-synthesized wavefunction.
pub fn wigner_transform(psi: &QuantumState, cfg: &BasisConfig, grid: &PhaseGrid) -> Result<WignerField> {
    grid.validate()?;
    cfg.validate()?;
    if (psi.norm() - 1.0).abs() > 1e-8 {
        return Err(invalid("Wigner transform needs a normalized state"));
    }
    let dim = psi.amplitudes().len();
    let l = cfg.length_scale();
    let reach = l * ((2.0 * dim as f64 + 1.0).sqrt() + 6.0);
    let mut scratch = Vec::new();
    let out_x = mass_outside(
        |x| position_wavefunction(psi, cfg, x, &mut Vec::new()).norm_sqr(),
        grid.x_min,
        grid.x_max,
        reach,
    );
    let lp = cfg.hbar / l;
    let reach_p = lp * ((2.0 * dim as f64 + 1.0).sqrt() + 6.0);
    let out_p = mass_outside(
        |p| momentum_wavefunction(psi, cfg, p, &mut Vec::new()).norm_sqr(),
        grid.p_min,
        grid.p_max,
        reach_p,
    );
    if out_x + out_p > 0.01 {
        return Err(Error::GridCoverage(100.0 * (out_x + out_p)));
    }
    // Resolve the shortest wavelength of the basis and the largest grid momentum.
    let k_max = (2.0 * dim as f64 + 1.0).sqrt() / l + 2.0 * grid.p_min.abs().max(grid.p_max.abs()) / cfg.hbar;
    let h = (0.25 / k_max).min(l / 8.0);
    let m = (reach / h).ceil() as usize;
    let ys: Vec<f64> = (0..=m).map(|k| k as f64 * h).collect();
    let mut plus = vec![C64::new(0.0, 0.0); m + 1];
    let mut minus = vec![C64::new(0.0, 0.0); m + 1];
    let mut values = DMatrix::zeros(grid.nx, grid.np);
    let norm = 1.0 / (std::f64::consts::PI * cfg.hbar);
    for i in 0..grid.nx {
        let x = grid.x(i);
        for (k, &y) in ys.iter().enumerate() {
            plus[k] = position_wavefunction(psi, cfg, x + y, &mut scratch);
            minus[k] = position_wavefunction(psi, cfg, x - y, &mut scratch);
        }
        let prod: Vec<C64> = plus.iter().zip(&minus).map(|(a, b)| a.conj() * b).collect();
        for j in 0..grid.np {
            let p = grid.p(j);
            // The integrand at -y is the conjugate of that at y.
            let mut acc = 0.5 * prod[0].re;
            for (k, &y) in ys.iter().enumerate().skip(1) {
                let w = if k == m { 0.5 } else { 1.0 };
                let phase = C64::from_polar(1.0, 2.0 * p * y / cfg.hbar);
                acc += w * (prod[k] * phase).re;
            }
            values[(i, j)] = norm * 2.0 * h * acc;
        }
    }
    Ok(WignerField { grid: *grid, values })
}

/// Outcome of a batch of first-passage runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfptResult {
    /// `None` when more than half of the runs were censored.
    pub rate: Option<f64>,
    pub stderr: Option<f64>,
    /// `1 / cutoff`, the smallest rate this setup can resolve.
    pub min_detectable: f64,
    pub censored_fraction: f64,
    pub n_trajectories: usize,
    /// Observed first-passage times, sorted.
    pub times: Vec<f64>,
}

impl MfptResult {
    /// Estimator from a multiset of passage times and a censored count.
    pub fn from_times(mut times: Vec<f64>, n_censored: usize, cutoff: f64) -> Self {
        times.sort_by(f64::total_cmp);
        let n = times.len() + n_censored;
        let censored_fraction = n_censored as f64 / n.max(1) as f64;
        let (rate, stderr) = if times.len() >= 2 && censored_fraction <= 0.5 {
            let m = crate::stats::mean(&times);
            let sd = crate::stats::variance(&times).sqrt();
            let k = 1.0 / m;
            (Some(k), Some(k * sd / m / (times.len() as f64).sqrt()))
        } else {
            (None, None)
        };
        Self { rate, stderr, min_detectable: 1.0 / cutoff, censored_fraction, n_trajectories: n, times }
    }

    pub fn to_rate_estimate(&self, regions: &StateRegions) -> Option<RateEstimate> {
        Some(RateEstimate {
            flux0: self.rate?,
            flux_stderr: self.stderr?,
            crossing_probs: vec![],
            crossing_stderrs: vec![],
            rate: self.rate?,
            stderr: self.stderr?,
            method: "imfpt".into(),
            regions: *regions,
            interfaces: vec![],
            config: None,
        })
    }
}

/// Runs `n_trajectories` independent trajectories from `start` until the
/// order parameter first reaches B or `cutoff` elapses. Trajectory `k` uses
/// its own stream, so the result does not depend on execution order.
pub fn mfpt_rate<D: Stepper>(
    d: &D,
    regions: &StateRegions,
    start: &D::State,
    cutoff: f64,
    n_trajectories: usize,
    master_seed: u64,
) -> Result<MfptResult> {
    if n_trajectories < 10 {
        return Err(invalid("first-passage estimates need at least 10 trajectories"));
    }
    let results: Result<Vec<Option<f64>>> = (0..n_trajectories)
        .map(|k| first_passage_time(d, regions, start, cutoff, SeedInfo::new(master_seed, Purpose::Mfpt, k as u64)))
        .collect();
    Ok(collect_passages(results?, cutoff))
}

pub fn collect_passages(results: Vec<Option<f64>>, cutoff: f64) -> MfptResult {
    let n_censored = results.iter().filter(|r| r.is_none()).count();
    MfptResult::from_times(results.into_iter().flatten().collect(), n_censored, cutoff)
}

/// First time the order parameter reaches B, or `None` past the cutoff.
pub fn first_passage_time<D: Stepper>(
    d: &D,
    regions: &StateRegions,
    start: &D::State,
    cutoff: f64,
    seed: SeedInfo,
) -> Result<Option<f64>> {
    let mut rng = seed.rng();
    let dt = d.dt();
    let max_steps = (cutoff / dt).floor() as u64;
    let mut s = start.clone();
    if regions.in_b(d.order_parameter(&s)) {
        return Ok(Some(0.0));
    }
    for k in 1..=max_steps {
        s = d.step(&s, &mut rng)?;
        if regions.in_b(d.order_parameter(&s)) {
            return Ok(Some(k as f64 * dt));
        }
    }
    Ok(None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrheniusFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    /// `ln k - (intercept + slope / T)` per point.
    pub residuals: Vec<f64>,
}

fn arrhenius_check(points: &[(f64, f64)]) -> Result<()> {
    if points.len() < 3 {
        return Err(invalid("an Arrhenius fit needs at least three points"));
    }
    if points.iter().any(|&(t, k)| !(t > 0.0) || !(k > 0.0)) {
        return Err(invalid("Arrhenius points need T > 0 and k > 0"));
    }
    Ok(())
}

/// Least-squares line through `(1/T, ln k)`.
pub fn arrhenius_fit(points: &[(f64, f64)]) -> Result<ArrheniusFit> {
    arrhenius_check(points)?;
    let xs: Vec<f64> = points.iter().map(|p| 1.0 / p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= f64::EPSILON * mx * mx * n {
        return Err(invalid("singular Arrhenius design: all temperatures are equal"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - intercept - slope * x).collect();
    let s2 = residuals.iter().map(|r| r * r).sum::<f64>() / (n - 2.0).max(1.0);
    Ok(ArrheniusFit { slope, intercept, slope_stderr: (s2 / sxx).sqrt(), residuals })
}

/// Fit with the slope fixed at `-barrier`; only the intercept is free.
pub fn arrhenius_constrained(points: &[(f64, f64)], barrier: f64) -> Result<ArrheniusFit> {
    arrhenius_check(points)?;
    let slope = -barrier;
    let n = points.len() as f64;
    let intercept = points.iter().map(|&(t, k)| k.ln() - slope / t).sum::<f64>() / n;
    let residuals = points.iter().map(|&(t, k)| k.ln() - intercept - slope / t).collect();
    Ok(ArrheniusFit { slope, intercept, slope_stderr: 0.0, residuals })
}

/// Index ranges `(last exit from A, first entry into B)` of every transition
/// in an order-parameter series.
pub fn transition_segments(order: &[f64], regions: &StateRegions) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut last_a: Option<usize> = None;
    for (i, &q) in order.iter().enumerate() {
        if regions.in_a(q) {
            last_a = Some(i);
        } else if regions.in_b(q) {
            if let Some(a) = last_a.take() {
                out.push((a, i));
            }
        }
    }
    out
}

/// Normalized histogram with explicit edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityTable {
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
    pub count: usize,
}

impl DensityTable {
    pub fn integral(&self) -> f64 {
        self.density.iter().zip(self.edges.windows(2)).map(|(d, w)| d * (w[1] - w[0])).sum()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

/// Density of transition-path durations on `bins` equal bins from 0 to the maximum.
pub fn path_length_histogram(durations: &[f64], bins: usize) -> Result<DensityTable> {
    if durations.is_empty() || bins == 0 {
        return Err(Error::InsufficientStatistics("no transition paths to histogram".into()));
    }
    if durations.iter().any(|&d| !(d > 0.0)) {
        return Err(invalid("transition-path durations must be positive"));
    }
    let hi = durations.iter().copied().fold(0.0, f64::max) * (1.0 + 1e-12);
    let w = hi / bins as f64;
    let counts = crate::stats::histogram(durations, 0.0, hi, bins);
    let n = durations.len() as f64;
    Ok(DensityTable {
        edges: (0..=bins).map(|k| k as f64 * w).collect(),
        density: counts.iter().map(|&c| c as f64 / (n * w)).collect(),
        count: durations.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseMode {
    /// Bin `(x, p)` or `(<X>, <P>)` per slice.
    Centers,
    /// Accumulate Wigner fields over slices.
    WignerSum,
}

/// Nearest-node histogram of phase-space points, normalized to unit mass;
/// points off the grid are dropped.
pub fn phase_space_histogram(points: &[(f64, f64)], grid: &PhaseGrid) -> Result<DMatrix<f64>> {
    grid.validate()?;
    let mut h = DMatrix::zeros(grid.nx, grid.np);
    for &(x, p) in points {
        if let Some((i, j)) = grid.locate(x, p) {
            h[(i, j)] += 1.0;
        }
    }
    normalize_mass(h)
}

/// Sum of Wigner fields of `states` with uniform weights, normalized to unit mass.
pub fn wigner_sum(states: &[QuantumState], cfg: &BasisConfig, grid: &PhaseGrid) -> Result<DMatrix<f64>> {
    let mut acc = DMatrix::zeros(grid.nx, grid.np);
    for s in states {
        acc += wigner_transform(s, cfg, grid)?.values;
    }
    normalize_mass(acc)
}

fn normalize_mass(h: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let total = h.sum();
    if total == 0.0 {
        return Err(Error::InsufficientStatistics("no mass on the phase grid".into()));
    }
    Ok(h / total)
}

/// Difference of mass at `p > 0` and `p < 0` over the total and its
/// standard error in units of a binomial count.
pub fn momentum_asymmetry(points: &[(f64, f64)]) -> (f64, f64) {
    let pos = points.iter().filter(|q| q.1 > 0.0).count() as f64;
    let neg = points.iter().filter(|q| q.1 < 0.0).count() as f64;
    let n = pos + neg;
    if n == 0.0 {
        return (0.0, 0.0);
    }
    ((pos - neg) / n, 1.0 / n.sqrt())
}

/// Left-well population `<psi(t)|theta(-X)|psi(t)>` under coherent evolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferCurve {
    pub times: Vec<f64>,
    pub left: Vec<f64>,
    /// Time of the lowest left population (when below 1/2 and interior), refined by a parabola.
    pub full_transfer_time: Option<f64>,
}

impl TransferCurve {
    pub fn rate(&self) -> Option<f64> {
        self.full_transfer_time.map(|t| 1.0 / t)
    }
}

/// Propagates `psi0` with `exp(-i H dt / hbar)` up to `t_max` and records the
/// population on the negative-position side. The side projector is built from
/// the spectrum of the truncated position operator.
pub fn population_transfer(
    h: &Operator,
    x: &Operator,
    psi0: &QuantumState,
    hbar: f64,
    dt: f64,
    t_max: f64,
) -> Result<TransferCurve> {
    if !(dt > 0.0 && t_max > dt) {
        return Err(invalid("population transfer needs 0 < dt < t_max"));
    }
    let left_proj = Operator::from_matrix(x.hermitian_spectrum().function(|e| C64::new(if e < 0.0 { 1.0 } else { 0.0 }, 0.0)));
    let prop = CoherentPropagator::new(h, hbar, dt);
    let n = (t_max / dt).ceil() as usize;
    let mut psi = psi0.clone();
    let mut times = Vec::with_capacity(n + 1);
    let mut left = Vec::with_capacity(n + 1);
    for k in 0..=n {
        times.push(k as f64 * dt);
        left.push(left_proj.expectation(&psi).re);
        psi = prop.step(&psi);
    }
    let k_min = (0..=n).min_by(|&a, &b| left[a].total_cmp(&left[b])).expect("nonempty");
    let full_transfer_time = (left[k_min] < 0.5 && k_min > 0 && k_min < n).then(|| {
        let (a, b, c) = (left[k_min - 1], left[k_min], left[k_min + 1]);
        let denom = a - 2.0 * b + c;
        let shift = if denom > 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
        times[k_min] + shift * dt
    });
    Ok(TransferCurve { times, left, full_transfer_time })
}
