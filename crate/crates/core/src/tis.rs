//! Transition interface sampling: effective-crossing flux through the first
//! interface, variable-length path ensembles per interface, greedy interface
//! placement and the assembled rate.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{Purpose, SeedInfo, StreamRng};
use crate::stats::integrated_autocorr_time;
use crate::system::PathDynamics;
use crate::tps::{shoot_log_ratio_split, PathSample, StateRegions};

/// Strictly increasing interfaces from `a_max` to `b_min`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterfaceSet {
    lambdas: Vec<f64>,
}

impl InterfaceSet {
    pub fn new(lambdas: Vec<f64>, regions: &StateRegions) -> Result<Self> {
        if lambdas.len() < 2 {
            return Err(invalid("an interface set needs at least two interfaces"));
        }
        if lambdas.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("interfaces must be strictly increasing"));
        }
        if lambdas[0] != regions.a_max || *lambdas.last().expect("nonempty") != regions.b_min {
            return Err(invalid("the first interface must be a_max and the last b_min"));
        }
        Ok(Self { lambdas })
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxConfig {
    pub n_steps: u64,
    /// `a_core = a_max - core_offset`.
    pub core_offset: f64,
    pub n_blocks: usize,
    pub min_crossings: u64,
}

impl Default for FluxConfig {
    fn default() -> Self {
        Self { n_steps: 10_000_000, core_offset: 0.5, n_blocks: 10, min_crossings: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluxResult {
    pub flux: f64,
    pub stderr: f64,
    pub crossings: u64,
    pub time_in_a: f64,
    pub arrivals_in_b: u64,
}

/// Counts effective outward crossings of `lambda0 = a_max` per unit time
/// spent in the overall state A. A crossing is counted only after the
/// trajectory has visited the core `q <= a_core` since the previous count.
/// On arrival in B the state is mapped by parity back into A, which is an
/// exact restart for the symmetric well.
pub fn first_interface_flux<D: PathDynamics>(
    d: &D,
    regions: &StateRegions,
    start: D::State,
    cfg: &FluxConfig,
    seed: SeedInfo,
) -> Result<FluxResult> {
    regions.validate()?;
    if cfg.n_blocks < 10 {
        return Err(invalid("block averaging needs at least 10 blocks"));
    }
    if cfg.n_steps < cfg.n_blocks as u64 {
        return Err(invalid("fewer steps than blocks"));
    }
    let lambda0 = regions.a_max;
    let a_core = lambda0 - cfg.core_offset;
    let dt = d.dt();
    let mut rng = seed.rng();
    let mut state = start;
    let mut q = d.order_parameter(&state);
    let mut armed = q <= a_core;
    let block_len = cfg.n_steps / cfg.n_blocks as u64;
    let mut block_rates = Vec::with_capacity(cfg.n_blocks);
    let (mut crossings, mut time_a, mut arrivals) = (0u64, 0.0f64, 0u64);
    let (mut b_cross, mut b_time) = (0u64, 0.0f64);
    for k in 0..block_len * cfg.n_blocks as u64 {
        let next = d.step(&state, &mut rng)?;
        let qn = d.order_parameter(&next);
        time_a += dt;
        b_time += dt;
        if armed && q <= lambda0 && qn > lambda0 {
            crossings += 1;
            b_cross += 1;
            armed = false;
        }
        if qn <= a_core {
            armed = true;
        }
        if regions.in_b(qn) {
            arrivals += 1;
            state = d.parity(&next);
            q = d.order_parameter(&state);
        } else {
            state = next;
            q = qn;
        }
        if (k + 1) % block_len == 0 {
            block_rates.push(b_cross as f64 / b_time);
            b_cross = 0;
            b_time = 0.0;
        }
    }
    if crossings < cfg.min_crossings {
        return Err(Error::InsufficientStatistics(format!(
            "{crossings} effective crossings of lambda0 = {lambda0}, need {}; lengthen the run",
            cfg.min_crossings
        )));
    }
    let nb = block_rates.len() as f64;
    let m = block_rates.iter().sum::<f64>() / nb;
    let var = block_rates.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / (nb - 1.0);
    Ok(FluxResult { flux: crossings as f64 / time_a, stderr: (var / nb).sqrt(), crossings, time_in_a: time_a, arrivals_in_b: arrivals })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TisConfig {
    /// Paths start in and terminate on the core of A, `q <= a_max - core_offset`;
    /// this matches the re-arming boundary of the flux count.
    pub core_offset: f64,
    pub moves_per_interface: usize,
    pub pilot_moves: usize,
    pub dp_width: f64,
    /// Paths longer than this (time units) are rejected and counted.
    pub max_path_time: f64,
    pub target_probability: f64,
    pub min_spacing: f64,
    pub max_interfaces: usize,
    /// Cap on brute-force time spent finding the first seed path.
    pub max_seed_time: f64,
}

impl Default for TisConfig {
    fn default() -> Self {
        Self {
            core_offset: 0.5,
            moves_per_interface: 2000,
            pilot_moves: 500,
            dp_width: 0.5,
            max_path_time: 200.0,
            target_probability: 0.4,
            min_spacing: 0.05,
            max_interfaces: 60,
            max_seed_time: 1e6,
        }
    }
}

/// Boundaries of the interface ensembles: the core of A and B.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathBounds {
    pub a_core: f64,
    pub b_min: f64,
}

impl PathBounds {
    pub fn new(regions: &StateRegions, core_offset: f64) -> Result<Self> {
        regions.validate()?;
        if !(core_offset >= 0.0 && core_offset.is_finite()) {
            return Err(invalid(format!("core offset must be >= 0, got {core_offset}")));
        }
        Ok(Self { a_core: regions.a_max - core_offset, b_min: regions.b_min })
    }

    pub fn in_a(&self, q: f64) -> bool {
        q <= self.a_core
    }

    pub fn in_b(&self, q: f64) -> bool {
        q >= self.b_min
    }
}

/// Result of sampling one interface ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingEntry {
    pub lambda_i: f64,
    pub lambda_next: f64,
    pub trials: u64,
    pub successes: u64,
    pub estimate: f64,
    /// Binomial error inflated by the integrated autocorrelation time.
    pub stderr: f64,
    pub accepted: u64,
    pub cap_hits: u64,
    /// Maximum order parameter of the current path after every move.
    pub max_progress: Vec<f64>,
    /// Path lengths (slices) after every move.
    pub path_lengths: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CrossingStats {
    pub entries: Vec<CrossingEntry>,
}

impl CrossingStats {
    pub fn probabilities(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.estimate).collect()
    }

    /// Cumulative crossing probability `P(lambda | lambda0)` on each ensemble's
    /// own range, in the layout `(lambda, log10 P)`.
    pub fn cumulative_curve(&self, points_per_ensemble: usize) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut base = 0.0f64;
        for e in &self.entries {
            let n = e.max_progress.len().max(1) as f64;
            for k in 0..points_per_ensemble {
                let lam = e.lambda_i + (e.lambda_next - e.lambda_i) * k as f64 / points_per_ensemble as f64;
                let frac = e.max_progress.iter().filter(|&&m| m >= lam).count() as f64 / n;
                out.push((lam, base + frac.log10()));
            }
            base += e.estimate.log10();
        }
        if let Some(e) = self.entries.last() {
            out.push((e.lambda_next, base));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub flux0: f64,
    pub flux_stderr: f64,
    pub crossing_probs: Vec<f64>,
    pub crossing_stderrs: Vec<f64>,
    pub rate: f64,
    pub stderr: f64,
    pub method: String,
    pub regions: StateRegions,
    pub interfaces: Vec<f64>,
    /// Serialized run configuration, filled in by the caller.
    pub config: Option<String>,
}

/// `k = flux * prod P_i`; relative variances add (factors treated as independent).
pub fn tis_rate(flux: &FluxResult, stats: &CrossingStats, regions: &StateRegions) -> RateEstimate {
    let probs = stats.probabilities();
    let rate = probs.iter().fold(flux.flux, |acc, p| acc * p);
    let mut rel2 = (flux.stderr / flux.flux).powi(2);
    for e in &stats.entries {
        rel2 += if e.estimate > 0.0 { (e.stderr / e.estimate).powi(2) } else { f64::INFINITY };
    }
    let mut interfaces: Vec<f64> = stats.entries.iter().map(|e| e.lambda_i).collect();
    if let Some(e) = stats.entries.last() {
        interfaces.push(e.lambda_next);
    }
    RateEstimate {
        flux0: flux.flux,
        flux_stderr: flux.stderr,
        crossing_probs: probs,
        crossing_stderrs: stats.entries.iter().map(|e| e.stderr).collect(),
        rate,
        stderr: rate * rel2.sqrt(),
        method: "tis".into(),
        regions: *regions,
        interfaces,
        config: None,
    }
}

/// Integrates until the order parameter enters the core of A or B; `None` if
/// the cap is exceeded. The returned segment includes `start`.
fn integrate_to_boundary<D: PathDynamics>(
    d: &D,
    start: D::State,
    regions: &PathBounds,
    max_steps: usize,
    rng: &mut StreamRng,
) -> Result<Option<Vec<D::State>>> {
    let mut seg = vec![start];
    loop {
        let q = d.order_parameter(seg.last().expect("nonempty"));
        if regions.in_a(q) || regions.in_b(q) {
            return Ok(Some(seg));
        }
        if seg.len() > max_steps {
            return Ok(None);
        }
        let next = d.step(seg.last().expect("nonempty"), rng)?;
        seg.push(next);
    }
}

/// Checks the structure of a path in the interface ensemble of `lambda_i`:
/// starts in the core of A, leaves it immediately, ends at the first entry
/// into the core of A or B, and reaches `lambda_i`.
pub fn is_valid_tis_path(order: &[f64], bounds: &PathBounds, lambda_i: f64) -> bool {
    let n = order.len();
    if n < 3 || !bounds.in_a(order[0]) {
        return false;
    }
    let interior_ok = order[1..n - 1].iter().all(|&q| !bounds.in_a(q) && !bounds.in_b(q));
    let last = order[n - 1];
    let crosses = order.iter().any(|&q| q >= lambda_i);
    interior_ok && (bounds.in_a(last) || bounds.in_b(last)) && crosses
}

/// One variable-length two-way shooting move. Returns whether it was
/// accepted and whether it hit the length cap.
pub fn tis_shoot_move<D: PathDynamics>(
    d: &D,
    current: &mut PathSample<D::State>,
    regions: &PathBounds,
    lambda_i: f64,
    dp: f64,
    max_steps: usize,
    rng: &mut StreamRng,
) -> Result<(bool, bool)> {
    let len = current.len();
    let s_old = rng.random_range(1..len - 1);
    let attempt: Result<Option<PathSample<D::State>>> = (|| {
        let kicked = d.kick(&current.slices[s_old], dp)?;
        let q = d.order_parameter(&kicked);
        if regions.in_a(q) || regions.in_b(q) {
            return Ok(None);
        }
        let Some(back) = integrate_to_boundary(d, d.time_reverse(&kicked), regions, max_steps, rng)? else {
            return Err(Error::Sampling("cap".into()));
        };
        if !regions.in_a(d.order_parameter(back.last().expect("nonempty"))) {
            return Ok(None);
        }
        if back.len() > max_steps {
            return Err(Error::Sampling("cap".into()));
        }
        let Some(fwd) = integrate_to_boundary(d, kicked, regions, max_steps - back.len() + 1, rng)? else {
            return Err(Error::Sampling("cap".into()));
        };
        let s_new = back.len() - 1;
        let mut slices: Vec<D::State> = back[1..].iter().rev().map(|b| d.time_reverse(b)).collect();
        slices.extend(fwd);
        let mut new = PathSample::new(slices, d);
        if !is_valid_tis_path(&new.order, regions, lambda_i) {
            return Ok(None);
        }
        let n_int_old = (len - 2) as f64;
        let n_int_new = (new.len() - 2) as f64;
        let lr = (n_int_old / n_int_new).ln() + shoot_log_ratio_split(d, current, s_old, &mut new, s_new)?;
        if lr >= 0.0 || rng.random::<f64>() < lr.exp() {
            Ok(Some(new))
        } else {
            Ok(None)
        }
    })();
    match attempt {
        Ok(Some(new)) => {
            *current = new;
            Ok((true, false))
        }
        Ok(None) => Ok((false, false)),
        Err(Error::Sampling(m)) if m == "cap" => Ok((false, true)),
        Err(Error::DegenerateDiffusion(_)) | Err(Error::NormGuard { .. }) | Err(Error::NonpositiveWeight(_)) => {
            Ok((false, false))
        }
        Err(e) => Err(e),
    }
}

/// Samples the ensemble of paths crossing `lambda_i` and estimates
/// `P(lambda_next | lambda_i)` as the fraction of sampled paths reaching
/// `lambda_next`. Also returns the most recent path reaching `lambda_next`.
pub fn tis_ensemble_sample<D: PathDynamics>(
    d: &D,
    regions: &StateRegions,
    lambda_i: f64,
    lambda_next: f64,
    seed_path: Vec<D::State>,
    n_moves: usize,
    cfg: &TisConfig,
    seed: SeedInfo,
) -> Result<(CrossingEntry, Option<Vec<D::State>>)> {
    let bounds = PathBounds::new(regions, cfg.core_offset)?;
    let regions = &bounds;
    let mut current = PathSample::new(seed_path, d);
    if !is_valid_tis_path(&current.order, regions, lambda_i) {
        return Err(invalid(format!("seed path is not a valid member of the ensemble at {lambda_i}")));
    }
    let max_steps = (cfg.max_path_time / d.dt()).ceil() as usize;
    let kick = Normal::new(0.0, cfg.dp_width).map_err(|e| invalid(e.to_string()))?;
    let mut rng = seed.rng();
    let (mut accepted, mut cap_hits) = (0u64, 0u64);
    let mut max_progress = Vec::with_capacity(n_moves);
    let mut path_lengths = Vec::with_capacity(n_moves);
    let mut indicator = Vec::with_capacity(n_moves);
    let mut last_success: Option<Vec<D::State>> = None;
    for _ in 0..n_moves {
        let dp = kick.sample(&mut rng);
        let (acc, cap) = tis_shoot_move(d, &mut current, regions, lambda_i, dp, max_steps, &mut rng)?;
        accepted += acc as u64;
        cap_hits += cap as u64;
        let m = current.order.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max_progress.push(m);
        path_lengths.push(current.len());
        let hit = m >= lambda_next;
        indicator.push(if hit { 1.0 } else { 0.0 });
        if hit && (acc || last_success.is_none()) {
            last_success = Some(current.slices.clone());
        }
    }
    let trials = n_moves as u64;
    let successes = indicator.iter().filter(|&&v| v > 0.0).count() as u64;
    let p = if trials > 0 { successes as f64 / trials as f64 } else { f64::NAN };
    let tau = integrated_autocorr_time(&indicator);
    let stderr = (p * (1.0 - p) * tau / trials.max(1) as f64).sqrt();
    Ok((
        CrossingEntry {
            lambda_i,
            lambda_next,
            trials,
            successes,
            estimate: p,
            stderr,
            accepted,
            cap_hits,
            max_progress,
            path_lengths,
        },
        last_success,
    ))
}

/// Brute-force seed for the first ensemble: run from `start` until the
/// trajectory leaves the core of A, then until it returns there or reaches
/// B; repeat until such an excursion crosses `a_max`.
pub fn first_seed_path<D: PathDynamics>(
    d: &D,
    regions: &StateRegions,
    start: D::State,
    cfg: &TisConfig,
    rng: &mut StreamRng,
) -> Result<Vec<D::State>> {
    let lambda0 = regions.a_max;
    let bounds = PathBounds::new(regions, cfg.core_offset)?;
    let regions = &bounds;
    let max_steps = (cfg.max_path_time / d.dt()).ceil() as usize;
    let budget = (cfg.max_seed_time / d.dt()).ceil() as u64;
    let mut prev = start;
    if !regions.in_a(d.order_parameter(&prev)) {
        return Err(invalid("the seed trajectory must start in A"));
    }
    let mut used = 0u64;
    while used < budget {
        let next = d.step(&prev, rng)?;
        used += 1;
        if regions.in_a(d.order_parameter(&next)) {
            prev = next;
            continue;
        }
        let Some(seg) = integrate_to_boundary(d, next, regions, max_steps, rng)? else {
            return Err(Error::Sampling("seed path exceeded the length cap".into()));
        };
        used += seg.len() as u64;
        let mut path = vec![prev];
        path.extend(seg);
        let crossed = path.iter().any(|s| d.order_parameter(s) >= lambda0);
        if path.len() >= 3 && crossed && regions.in_a(d.order_parameter(path.last().expect("nonempty"))) {
            return Ok(path);
        }
        // Reached B, a short excursion or no crossing: continue from the (mirrored) end.
        let end = path.pop().expect("nonempty");
        prev = if regions.in_b(d.order_parameter(&end)) { d.parity(&end) } else { end };
    }
    Err(Error::Sampling("no excursion from A within the seed budget".into()))
}

/// Interfaces chosen greedily at the `target_probability` upper quantile of
/// pilot maximum-progress values, plus the pilot statistics.
#[derive(Clone, Debug)]
pub struct Placement<S> {
    pub interfaces: InterfaceSet,
    pub pilots: CrossingStats,
    /// Seed path for each ensemble.
    pub seeds: Vec<Vec<S>>,
}

/// Value `q` such that a fraction `frac` of `xs` is `>= q`.
pub fn upper_quantile(xs: &[f64], frac: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let k = ((frac * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[k - 1]
}

const PILOT_RETRIES: u64 = 2;

pub fn place_interfaces<D: PathDynamics>(
    d: &D,
    regions: &StateRegions,
    start: D::State,
    cfg: &TisConfig,
    master_seed: u64,
) -> Result<Placement<D::State>> {
    regions.validate()?;
    let mut rng = SeedInfo::new(master_seed, Purpose::Interface, 0).rng();
    let mut seed_path = first_seed_path(d, regions, start, cfg, &mut rng)?;
    let mut lambdas = vec![regions.a_max];
    let mut pilots = CrossingStats::default();
    let mut seeds = Vec::new();
    loop {
        let lam = *lambdas.last().expect("nonempty");
        if lambdas.len() > cfg.max_interfaces {
            return Err(Error::Sampling(format!("more than {} interfaces needed", cfg.max_interfaces)));
        }
        // A pilot that stalls on its seed path is rerun on a fresh stream with twice the moves.
        let mut pilot_moves = cfg.pilot_moves;
        let mut attempt = 0u64;
        let (entry, q, pilot_seed) = loop {
            let pilot_seed = SeedInfo::new(master_seed, Purpose::Pilot, lambdas.len() as u64 | (attempt << 16));
            let (entry, _) =
                tis_ensemble_sample(d, regions, lam, regions.b_min, seed_path.clone(), pilot_moves, cfg, pilot_seed)?;
            let q = upper_quantile(&entry.max_progress, cfg.target_probability);
            if q >= regions.b_min || q > lam + cfg.min_spacing || attempt == PILOT_RETRIES {
                break (entry, q, pilot_seed);
            }
            attempt += 1;
            pilot_moves *= 2;
        };
        let next = if q >= regions.b_min {
            regions.b_min
        } else if q <= lam + cfg.min_spacing {
            return Err(Error::Sampling(format!(
                "pilot at {lam:.4} cannot advance: quantile {q:.4} is within the minimum spacing {}",
                cfg.min_spacing
            )));
        } else {
            q
        };
        let mut scored = entry;
        scored.lambda_next = next;
        scored.successes = scored.max_progress.iter().filter(|&&m| m >= next).count() as u64;
        scored.estimate = scored.successes as f64 / scored.trials as f64;
        let ind: Vec<f64> = scored.max_progress.iter().map(|&m| if m >= next { 1.0 } else { 0.0 }).collect();
        let tau = integrated_autocorr_time(&ind);
        scored.stderr = (scored.estimate * (1.0 - scored.estimate) * tau / scored.trials as f64).sqrt();
        seeds.push(seed_path.clone());
        pilots.entries.push(scored);
        lambdas.push(next);
        if next >= regions.b_min {
            break;
        }
        // Seed the next ensemble with a pilot path that reached `next`.
        let (_, found) =
            tis_ensemble_sample(d, regions, lam, next, seed_path.clone(), pilot_moves, cfg, pilot_seed)?;
        seed_path = found.ok_or_else(|| Error::Sampling(format!("no pilot path reached {next:.4}")))?;
    }
    Ok(Placement { interfaces: InterfaceSet::new(lambdas, regions)?, pilots, seeds })
}

/// Production sampling of every interface ensemble with seeds bootstrapped
/// from the previous ensemble's successful paths.
pub fn tis_crossing_stats<D: PathDynamics>(
    d: &D,
    regions: &StateRegions,
    interfaces: &InterfaceSet,
    first_seed: Vec<D::State>,
    cfg: &TisConfig,
    master_seed: u64,
) -> Result<CrossingStats> {
    let lams = interfaces.lambdas();
    let mut stats = CrossingStats::default();
    let mut seed_path = first_seed;
    for i in 0..lams.len() - 1 {
        let seed = SeedInfo::new(master_seed, Purpose::Tps, i as u64);
        let (entry, found) =
            tis_ensemble_sample(d, regions, lams[i], lams[i + 1], seed_path.clone(), cfg.moves_per_interface, cfg, seed)?;
        stats.entries.push(entry);
        if i + 2 < lams.len() {
            seed_path = found.ok_or_else(|| {
                Error::Sampling(format!("no path in the ensemble at {:.4} reached {:.4}", lams[i], lams[i + 1]))
            })?;
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ClassicalState, SimParams};
    use crate::system::ClassicalLangevin;

    fn hot() -> ClassicalLangevin {
        ClassicalLangevin::new(SimParams::at_barrier_temperature(0.25, 0.5, 1e-2)).unwrap()
    }

    #[test]
    fn interface_set_validation() {
        let r = StateRegions::default();
        assert!(InterfaceSet::new(vec![-2.5, -1.0, 2.5], &r).is_ok());
        assert!(InterfaceSet::new(vec![-2.5, -1.0, -1.0, 2.5], &r).is_err());
        assert!(InterfaceSet::new(vec![-2.0, 2.5], &r).is_err());
    }

    #[test]
    fn rate_identity_and_unit_probabilities() {
        let flux = FluxResult { flux: 0.01, stderr: 0.001, crossings: 100, time_in_a: 1e4, arrivals_in_b: 1 };
        let entry = |p: f64| CrossingEntry {
            lambda_i: 0.0,
            lambda_next: 1.0,
            trials: 10,
            successes: 0,
            estimate: p,
            stderr: 0.0,
            accepted: 0,
            cap_hits: 0,
            max_progress: vec![],
            path_lengths: vec![],
        };
        let r = StateRegions::default();
        let ones = CrossingStats { entries: vec![entry(1.0), entry(1.0)] };
        assert_eq!(tis_rate(&flux, &ones, &r).rate, 0.01);
        let mixed = CrossingStats { entries: vec![entry(0.4), entry(0.25)] };
        let est = tis_rate(&flux, &mixed, &r);
        assert_eq!(est.rate, est.flux0 * est.crossing_probs[0] * est.crossing_probs[1]);
        assert!((est.stderr / est.rate - 0.1).abs() < 1e-12);
    }

    #[test]
    fn path_validity_uses_the_core_of_a() {
        let b = PathBounds { a_core: -3.0, b_min: 2.5 };
        assert!(is_valid_tis_path(&[-3.1, -2.7, -2.4, -2.8, -3.05], &b, -2.5));
        // Dipping below a_max without reaching the core keeps the path alive.
        assert!(is_valid_tis_path(&[-3.1, -2.4, -2.6, -2.0, 2.6], &b, -1.0));
        assert!(!is_valid_tis_path(&[-3.1, -2.7, -2.8, -3.05], &b, -2.5));
        assert!(!is_valid_tis_path(&[-3.1, -3.2, -2.4, -3.05], &b, -2.5));
        assert!(!is_valid_tis_path(&[-2.9, -2.4, -3.05], &b, -2.5));
    }

    #[test]
    fn quantile_convention() {
        let xs: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(upper_quantile(&xs, 0.4), 7.0);
        assert_eq!(xs.iter().filter(|&&x| x >= 7.0).count(), 4);
    }

    #[test]
    fn degenerate_next_interface_gives_one() {
        let d = hot();
        let r = StateRegions::default();
        let cfg = TisConfig::default();
        let mut rng = SeedInfo::new(1, Purpose::Test, 0).rng();
        let seed = first_seed_path(&d, &r, ClassicalState::new(-4.18, 0.0), &cfg, &mut rng).unwrap();
        let order: Vec<f64> = seed.iter().map(|s| s.x).collect();
        let b = PathBounds::new(&r, cfg.core_offset).unwrap();
        assert!(is_valid_tis_path(&order, &b, r.a_max));
        assert!(order[0] <= b.a_core && *order.last().unwrap() <= b.a_core);
        let (e, _) = tis_ensemble_sample(&d, &r, r.a_max, r.a_max, seed, 200, &cfg, SeedInfo::new(1, Purpose::Tps, 0)).unwrap();
        assert_eq!(e.estimate, 1.0);
        assert!(e.accepted > 20);
    }

    #[test]
    fn flux_grows_with_temperature() {
        let r = StateRegions::default();
        let cfg = FluxConfig { n_steps: 400_000, min_crossings: 10, ..FluxConfig::default() };
        let start = ClassicalState::new(-4.18, 0.0);
        let flux = |tb: f64| {
            let d = ClassicalLangevin::new(SimParams::at_barrier_temperature(0.25, tb, 1e-2)).unwrap();
            first_interface_flux(&d, &r, start, &cfg, SeedInfo::new(3, Purpose::Flux, 0)).unwrap().flux
        };
        assert!(flux(0.5) > flux(0.2));
    }
}
