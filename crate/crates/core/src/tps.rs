//! Transition path sampling: state regions, two-way shooting, mirror moves
//! built from involutions (time reversal, parity and their product), chains
//! of paths, visiting-ensemble correlation functions and the umbrella
//! scale factor.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{SeedInfo, StreamRng};
use crate::system::PathDynamics;

/// `A = {q <= a_max}`, `B = {q >= b_min}` on the order parameter `q`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateRegions {
    pub a_max: f64,
    pub b_min: f64,
}

impl Default for StateRegions {
    fn default() -> Self {
        Self { a_max: -2.5, b_min: 2.5 }
    }
}

impl StateRegions {
    pub fn new(a_max: f64, b_min: f64) -> Result<Self> {
        let r = Self { a_max, b_min };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a_max < self.b_min) {
            return Err(invalid(format!("region A ({}) must lie below B ({})", self.a_max, self.b_min)));
        }
        Ok(())
    }

    pub fn in_a(&self, q: f64) -> bool {
        q <= self.a_max
    }

    pub fn in_b(&self, q: f64) -> bool {
        q >= self.b_min
    }

    /// Regions with A and B exchanged under `q -> -q`.
    pub fn mirrored(&self) -> Self {
        Self { a_max: -self.b_min, b_min: -self.a_max }
    }
}

/// Endpoint indicators and the per-slice B visit mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathFlags {
    pub h_a: bool,
    pub h_b: bool,
    pub visits_b: Vec<bool>,
}

impl PathFlags {
    pub fn reactive(&self) -> bool {
        self.h_a && self.h_b
    }

    pub fn visits(&self) -> bool {
        self.h_a && self.visits_b.iter().any(|&v| v)
    }

    pub fn visit_count(&self) -> usize {
        self.visits_b.iter().filter(|&&v| v).count()
    }
}

pub fn indicators(order: &[f64], regions: &StateRegions) -> PathFlags {
    PathFlags {
        h_a: order.first().is_some_and(|&q| regions.in_a(q)),
        h_b: order.last().is_some_and(|&q| regions.in_b(q)),
        visits_b: order.iter().map(|&q| regions.in_b(q)).collect(),
    }
}

/// Path constraint defining a fixed-length ensemble.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleKind {
    /// Start in A, end in B.
    #[default]
    Reactive,
    /// Start in A, visit B at some slice.
    Visiting,
}

impl EnsembleKind {
    pub fn admits(&self, order: &[f64], regions: &StateRegions) -> bool {
        let (first, last) = match (order.first(), order.last()) {
            (Some(f), Some(l)) => (*f, *l),
            _ => return false,
        };
        if !regions.in_a(first) {
            return false;
        }
        match self {
            EnsembleKind::Reactive => regions.in_b(last),
            EnsembleKind::Visiting => order.iter().any(|&q| regions.in_b(q)),
        }
    }
}

/// A path with its order parameters and lazily evaluated step log-densities.
#[derive(Clone, Debug)]
pub struct PathSample<S> {
    pub slices: Vec<S>,
    pub order: Vec<f64>,
    /// `(log P(i -> i+1), log Pbar(i+1 -> i))` per step.
    terms: Vec<Option<(f64, f64)>>,
    weight0: Option<f64>,
}

impl<S: Clone> PathSample<S> {
    pub fn new<D: PathDynamics<State = S>>(slices: Vec<S>, d: &D) -> Self {
        let order = slices.iter().map(|s| d.order_parameter(s)).collect();
        let n = slices.len().saturating_sub(1);
        Self { slices, order, terms: vec![None; n], weight0: None }
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn n_steps(&self) -> usize {
        self.slices.len().saturating_sub(1)
    }

    fn term<D: PathDynamics<State = S>>(&mut self, d: &D, i: usize) -> Result<(f64, f64)> {
        if let Some(t) = self.terms[i] {
            return Ok(t);
        }
        let f = d.step_log_prob(&self.slices[i], &self.slices[i + 1])?;
        let b = d.backward_step_log_prob(&self.slices[i + 1], &self.slices[i])?;
        self.terms[i] = Some((f, b));
        Ok((f, b))
    }

    /// `sum log P(i -> i+1)` over `range`.
    pub fn forward_sum<D: PathDynamics<State = S>>(&mut self, d: &D, range: std::ops::Range<usize>) -> Result<f64> {
        let mut acc = 0.0;
        for i in range {
            acc += self.term(d, i)?.0;
        }
        Ok(acc)
    }

    /// `sum log Pbar(i+1 -> i)` over `range`.
    pub fn backward_sum<D: PathDynamics<State = S>>(&mut self, d: &D, range: std::ops::Range<usize>) -> Result<f64> {
        let mut acc = 0.0;
        for i in range {
            acc += self.term(d, i)?.1;
        }
        Ok(acc)
    }

    pub fn stationary_log_weight<D: PathDynamics<State = S>>(&mut self, d: &D) -> Result<f64> {
        if let Some(w) = self.weight0 {
            return Ok(w);
        }
        let w = d.stationary_log_weight(&self.slices[0])?;
        self.weight0 = Some(w);
        Ok(w)
    }

    /// Stationary weight of the first slice plus all forward step densities.
    pub fn log_prob<D: PathDynamics<State = S>>(&mut self, d: &D) -> Result<f64> {
        let n = self.n_steps();
        Ok(self.stationary_log_weight(d)? + self.forward_sum(d, 0..n)?)
    }

    pub fn flags(&self, regions: &StateRegions) -> PathFlags {
        indicators(&self.order, regions)
    }
}

/// Involutions acting on whole trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    Identity,
    TimeReversal,
    Parity,
    ParityTimeReversal,
}

impl Transform {
    pub fn reverses_time(&self) -> bool {
        matches!(self, Transform::TimeReversal | Transform::ParityTimeReversal)
    }

    pub fn default_set() -> Vec<Transform> {
        vec![Transform::TimeReversal, Transform::Parity, Transform::ParityTimeReversal]
    }

    pub fn label(&self) -> &'static str {
        match self {
            Transform::Identity => "I",
            Transform::TimeReversal => "T",
            Transform::Parity => "P",
            Transform::ParityTimeReversal => "PT",
        }
    }
}

/// Applies a trajectory involution: time reversal reverses the order and
/// reverses every slice; parity acts slice-wise.
pub fn apply_transform<D: PathDynamics>(d: &D, slices: &[D::State], t: Transform) -> Vec<D::State> {
    match t {
        Transform::Identity => slices.to_vec(),
        Transform::Parity => slices.iter().map(|s| d.parity(s)).collect(),
        Transform::TimeReversal => slices.iter().rev().map(|s| d.time_reverse(s)).collect(),
        Transform::ParityTimeReversal => slices.iter().rev().map(|s| d.parity(&d.time_reverse(s))).collect(),
    }
}

/// Two-way shooting with fixed length: perturb slice `s` by `dp`, integrate
/// forward to the end and integrate the time-reversed perturbed slice for
/// `s` steps, then reverse that segment back into forward time.
pub fn two_way_shoot<D: PathDynamics>(
    d: &D,
    old: &[D::State],
    s: usize,
    dp: f64,
    rng: &mut StreamRng,
) -> Result<Vec<D::State>> {
    let n = old.len().checked_sub(1).ok_or_else(|| invalid("empty path"))?;
    if !(s > 0 && s < n) {
        return Err(invalid(format!("shooting index {s} must satisfy 0 < s < {n}")));
    }
    let kicked = d.kick(&old[s], dp)?;
    let mut forward = Vec::with_capacity(n - s + 1);
    forward.push(kicked.clone());
    for _ in s..n {
        let next = d.step(forward.last().expect("nonempty"), rng)?;
        forward.push(next);
    }
    let mut backward = Vec::with_capacity(s + 1);
    backward.push(d.time_reverse(&kicked));
    for _ in 0..s {
        let next = d.step(backward.last().expect("nonempty"), rng)?;
        backward.push(next);
    }
    let mut path: Vec<D::State> = backward[1..].iter().rev().map(|b| d.time_reverse(b)).collect();
    path.extend(forward);
    Ok(path)
}

/// Log Metropolis ratio of a two-way shooting move at index `s`:
/// stationary-weight ratio plus `sum_{i<s} [log P - log Pbar]` of the new
/// path minus the same sum over the old path. The forward segments cancel.
pub fn shoot_acceptance_log_ratio<D: PathDynamics>(
    d: &D,
    old: &mut PathSample<D::State>,
    new: &mut PathSample<D::State>,
    s: usize,
) -> Result<f64> {
    shoot_log_ratio_split(d, old, s, new, s)
}

/// Same as [`shoot_acceptance_log_ratio`] with separate shooting indices on
/// the old and new path (variable-length paths).
pub fn shoot_log_ratio_split<D: PathDynamics>(
    d: &D,
    old: &mut PathSample<D::State>,
    s_old: usize,
    new: &mut PathSample<D::State>,
    s_new: usize,
) -> Result<f64> {
    let w = new.stationary_log_weight(d)? - old.stationary_log_weight(d)?;
    let n = new.forward_sum(d, 0..s_new)? - new.backward_sum(d, 0..s_new)?;
    let o = old.forward_sum(d, 0..s_old)? - old.backward_sum(d, 0..s_old)?;
    Ok(w + n - o)
}

/// Outcome of a mirror proposal.
#[derive(Clone, Debug)]
pub struct MirrorProposal<S> {
    /// The untransformed shot.
    pub shot: PathSample<S>,
    pub chosen: PathSample<S>,
    pub transform: Transform,
    /// Number of admissible candidates among the shot and its images.
    pub n_s: usize,
}

fn admissible_candidates<D: PathDynamics>(
    d: &D,
    base: &[D::State],
    base_order: &[f64],
    transforms: &[Transform],
    admits: &dyn Fn(&[f64]) -> bool,
) -> Vec<Transform> {
    let mut out = Vec::new();
    if admits(base_order) {
        out.push(Transform::Identity);
    }
    for &t in transforms {
        if t == Transform::Identity {
            continue;
        }
        let order: Vec<f64> = apply_transform(d, base, t).iter().map(|s| d.order_parameter(s)).collect();
        if admits(&order) {
            out.push(t);
        }
    }
    out
}

/// Shoots from `old`, then chooses uniformly among the admissible members of
/// `{shot} U {S shot : S in transforms}`. Returns `None` for `n_s = 0`.
pub fn mirror_propose<D: PathDynamics>(
    d: &D,
    old: &PathSample<D::State>,
    s: usize,
    dp: f64,
    transforms: &[Transform],
    admits: &dyn Fn(&[f64]) -> bool,
    rng: &mut StreamRng,
) -> Result<Option<MirrorProposal<D::State>>> {
    let shot = PathSample::new(two_way_shoot(d, &old.slices, s, dp, rng)?, d);
    let cands = admissible_candidates(d, &shot.slices, &shot.order, transforms, admits);
    if cands.is_empty() {
        return Ok(None);
    }
    let transform = cands[rng.random_range(0..cands.len())];
    let chosen = PathSample::new(apply_transform(d, &shot.slices, transform), d);
    Ok(Some(MirrorProposal { shot, chosen, transform, n_s: cands.len() }))
}

/// `n_bar`: admissible candidates of the reverse move, generated from
/// `W = S old` and its images.
pub fn mirror_reverse_count<D: PathDynamics>(
    d: &D,
    old: &PathSample<D::State>,
    transform: Transform,
    transforms: &[Transform],
    admits: &dyn Fn(&[f64]) -> bool,
) -> usize {
    let w = apply_transform(d, &old.slices, transform);
    let order: Vec<f64> = w.iter().map(|s| d.order_parameter(s)).collect();
    admissible_candidates(d, &w, &order, transforms, admits).len()
}

/// General log acceptance ratio of a mirror move:
/// `log(n_s / n_bar) + log pi[C] - log pi[O] + log g(W) - log g(N)`, where
/// `pi` is the stationary-weighted path density, `N` the shot, `C = S N`,
/// `W = S O` the shot the reverse move must produce, and `g` the shooting
/// generation density (backward densities before the shooting index,
/// forward densities after it).
pub fn mirror_acceptance_log_ratio<D: PathDynamics>(
    d: &D,
    old: &mut PathSample<D::State>,
    prop: &mut MirrorProposal<D::State>,
    s: usize,
    n_bar: usize,
) -> Result<f64> {
    if n_bar == 0 {
        return Err(Error::Sampling("reverse mirror move has no admissible candidate".into()));
    }
    let n = old.n_steps();
    if prop.transform == Transform::Identity {
        return Ok((prop.n_s as f64 / n_bar as f64).ln() + shoot_acceptance_log_ratio(d, old, &mut prop.chosen, s)?);
    }
    let s_rev = if prop.transform.reverses_time() { n - s } else { s };
    let mut w = PathSample::new(apply_transform(d, &old.slices, prop.transform), d);
    let log_c = prop.chosen.log_prob(d)?;
    let log_o = old.log_prob(d)?;
    let gen_w = w.backward_sum(d, 0..s_rev)? + w.forward_sum(d, s_rev..n)?;
    let gen_n = prop.shot.backward_sum(d, 0..s)? + prop.shot.forward_sum(d, s..n)?;
    Ok((prop.n_s as f64 / n_bar as f64).ln() + log_c - log_o + gen_w - gen_n)
}

/// Reduced form of the mirror ratio when time reversal is the chosen map:
/// `log(n_s/n_bar) + log rho(T N_end) - log rho(O_0)
///  + sum_{j>=s} [log Pbar(N_{j+1} -> N_j) - log P(N_j -> N_{j+1})]
///  + sum_{j<s} [log Pbar(O_{j+1} -> O_j) - log P(O_j -> O_{j+1})]`.
pub fn mirror_time_reversal_log_ratio<D: PathDynamics>(
    d: &D,
    old: &mut PathSample<D::State>,
    shot: &mut PathSample<D::State>,
    s: usize,
    n_s: usize,
    n_bar: usize,
) -> Result<f64> {
    if n_bar == 0 {
        return Err(Error::Sampling("reverse mirror move has no admissible candidate".into()));
    }
    let n = old.n_steps();
    let end = d.time_reverse(shot.slices.last().expect("nonempty"));
    let w = d.stationary_log_weight(&end)? - old.stationary_log_weight(d)?;
    let tail = shot.backward_sum(d, s..n)? - shot.forward_sum(d, s..n)?;
    let head = old.backward_sum(d, 0..s)? - old.forward_sum(d, 0..s)?;
    Ok((n_s as f64 / n_bar as f64).ln() + w + tail + head)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveKind {
    Shoot,
    Mirror,
}

/// One entry of the move log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoveRecord {
    pub kind: MoveKind,
    pub index: usize,
    pub dp: f64,
    pub accepted: bool,
    pub log_ratio: f64,
    pub transform: Transform,
    pub n_s: usize,
    pub n_bar: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TpsConfig {
    pub n_moves: usize,
    /// Standard deviation of the momentum kick.
    pub dp_width: f64,
    /// Probability that a move is a mirror move.
    pub mirror_fraction: f64,
    pub transforms: Vec<Transform>,
    pub ensemble: EnsembleKind,
    pub regions: StateRegions,
    /// Abort if the acceptance rate over the last `floor_window` moves drops below this.
    pub acceptance_floor: f64,
    pub floor_window: usize,
    /// Keep every k-th path of the chain (0 keeps none).
    pub store_every: usize,
}

impl Default for TpsConfig {
    fn default() -> Self {
        Self {
            n_moves: 1000,
            dp_width: 0.5,
            mirror_fraction: 0.0,
            transforms: Transform::default_set(),
            ensemble: EnsembleKind::Reactive,
            regions: StateRegions::default(),
            acceptance_floor: 0.01,
            floor_window: 500,
            store_every: 0,
        }
    }
}

/// A Markov chain of paths.
#[derive(Clone, Debug)]
pub struct TpsChain<S> {
    pub current: PathSample<S>,
    pub stored: Vec<Vec<S>>,
    pub moves: Vec<MoveRecord>,
    pub seed: SeedInfo,
}

impl<S> TpsChain<S> {
    pub fn acceptance_rate(&self, kind: Option<MoveKind>) -> f64 {
        let sel: Vec<&MoveRecord> = self.moves.iter().filter(|m| kind.is_none_or(|k| m.kind == k)).collect();
        if sel.is_empty() {
            return f64::NAN;
        }
        sel.iter().filter(|m| m.accepted).count() as f64 / sel.len() as f64
    }
}

fn metropolis(log_ratio: f64, rng: &mut StreamRng) -> bool {
    log_ratio >= 0.0 || rng.random::<f64>() < log_ratio.exp()
}

/// Performs one shooting or mirror move on `current`; returns the record.
pub fn tps_move<D: PathDynamics>(
    d: &D,
    cfg: &TpsConfig,
    current: &mut PathSample<D::State>,
    rng: &mut StreamRng,
) -> Result<MoveRecord> {
    let n = current.n_steps();
    let s = rng.random_range(1..n);
    let dp = cfg.dp_width * rng.sample::<f64, _>(StandardNormal);
    let regions = cfg.regions;
    let ensemble = cfg.ensemble;
    let admits = move |o: &[f64]| ensemble.admits(o, &regions);
    let mirror = cfg.mirror_fraction > 0.0 && rng.random::<f64>() < cfg.mirror_fraction;
    let mut rec = MoveRecord {
        kind: if mirror { MoveKind::Mirror } else { MoveKind::Shoot },
        index: s,
        dp,
        accepted: false,
        log_ratio: f64::NEG_INFINITY,
        transform: Transform::Identity,
        n_s: 0,
        n_bar: 0,
    };
    let outcome: Result<Option<PathSample<D::State>>> = (|| {
        if mirror {
            let Some(mut prop) = mirror_propose(d, current, s, dp, &cfg.transforms, &admits, rng)? else {
                return Ok(None);
            };
            rec.transform = prop.transform;
            rec.n_s = prop.n_s;
            rec.n_bar = mirror_reverse_count(d, current, prop.transform, &cfg.transforms, &admits);
            rec.log_ratio = mirror_acceptance_log_ratio(d, current, &mut prop, s, rec.n_bar)?;
            Ok(metropolis(rec.log_ratio, rng).then_some(prop.chosen))
        } else {
            let mut new = PathSample::new(two_way_shoot(d, &current.slices, s, dp, rng)?, d);
            if !admits(&new.order) {
                return Ok(None);
            }
            rec.log_ratio = shoot_acceptance_log_ratio(d, current, &mut new, s)?;
            Ok(metropolis(rec.log_ratio, rng).then_some(new))
        }
    })();
    match outcome {
        Ok(Some(new)) => {
            *current = new;
            rec.accepted = true;
        }
        Ok(None) => {}
        // Degenerate densities, norm-guard trips and nonpositive weights reject the move.
        Err(Error::DegenerateDiffusion(_)) | Err(Error::NormGuard { .. }) | Err(Error::NonpositiveWeight(_)) => {}
        Err(Error::Sampling(_)) => {}
        Err(e) => return Err(e),
    }
    Ok(rec)
}

/// Runs a chain of `cfg.n_moves` moves; `observe` sees the current path after each move.
pub fn tps_run<D: PathDynamics>(
    d: &D,
    cfg: &TpsConfig,
    initial: Vec<D::State>,
    seed: SeedInfo,
    observe: impl FnMut(&PathSample<D::State>),
) -> Result<TpsChain<D::State>> {
    let mut rng = seed.rng();
    tps_run_with(d, cfg, initial, seed, &mut rng, observe)
}

/// [`tps_run`] drawing from an existing stream, used to resume checkpointed chains.
pub fn tps_run_with<D: PathDynamics>(
    d: &D,
    cfg: &TpsConfig,
    initial: Vec<D::State>,
    seed: SeedInfo,
    rng: &mut StreamRng,
    mut observe: impl FnMut(&PathSample<D::State>),
) -> Result<TpsChain<D::State>> {
    cfg.regions.validate()?;
    if initial.len() < 3 {
        return Err(invalid("shooting needs paths with at least three slices"));
    }
    let mut current = PathSample::new(initial, d);
    if !cfg.ensemble.admits(&current.order, &cfg.regions) {
        return Err(invalid("initial path violates the ensemble constraint"));
    }
    let mut chain = TpsChain { current: current.clone(), stored: Vec::new(), moves: Vec::new(), seed };
    let mut window = std::collections::VecDeque::with_capacity(cfg.floor_window);
    let mut window_accepted = 0usize;
    for k in 0..cfg.n_moves {
        let rec = tps_move(d, cfg, &mut current, rng)?;
        if cfg.floor_window > 0 {
            window.push_back(rec.accepted);
            window_accepted += rec.accepted as usize;
            if window.len() > cfg.floor_window {
                window_accepted -= window.pop_front().expect("nonempty") as usize;
            }
            if window.len() == cfg.floor_window {
                let rate = window_accepted as f64 / cfg.floor_window as f64;
                if rate < cfg.acceptance_floor {
                    return Err(Error::Sampling(format!(
                        "acceptance rate {rate:.4} over the last {} moves is below the floor {} (after {} moves, dp width {})",
                        cfg.floor_window,
                        cfg.acceptance_floor,
                        k + 1,
                        cfg.dp_width
                    )));
                }
            }
        }
        chain.moves.push(rec);
        observe(&current);
        if cfg.store_every > 0 && (k + 1) % cfg.store_every == 0 {
            chain.stored.push(current.slices.clone());
        }
    }
    chain.current = current;
    Ok(chain)
}

/// Generates an initial path of `n_steps` by repeated brute-force runs from
/// `start` until one satisfies the ensemble constraint.
pub fn brute_force_initial_path<D: PathDynamics>(
    d: &D,
    start: &D::State,
    n_steps: usize,
    cfg: &TpsConfig,
    max_attempts: usize,
    rng: &mut StreamRng,
) -> Result<Vec<D::State>> {
    for _ in 0..max_attempts {
        let mut path = Vec::with_capacity(n_steps + 1);
        path.push(start.clone());
        for _ in 0..n_steps {
            let next = d.step(path.last().expect("nonempty"), rng)?;
            path.push(next);
        }
        let order: Vec<f64> = path.iter().map(|s| d.order_parameter(s)).collect();
        if cfg.ensemble.admits(&order, &cfg.regions) {
            return Ok(path);
        }
    }
    Err(Error::Sampling(format!("no admissible path in {max_attempts} brute-force attempts")))
}

/// Cuts a reactive path of `n_steps` out of one long trajectory from `start`.
/// The window ending at the first entry into B is returned when it starts in
/// A; otherwise the state is mirrored back into A and the search continues.
/// Needs a parity-symmetric system.
pub fn harvest_reactive_path<D: PathDynamics>(
    d: &D,
    start: &D::State,
    regions: &StateRegions,
    n_steps: usize,
    max_steps: u64,
    rng: &mut StreamRng,
) -> Result<Vec<D::State>> {
    regions.validate()?;
    if n_steps < 2 {
        return Err(invalid("paths need at least two steps"));
    }
    let mut window: std::collections::VecDeque<D::State> = std::collections::VecDeque::with_capacity(n_steps + 2);
    let mut s = start.clone();
    window.push_back(s.clone());
    for _ in 0..max_steps {
        s = d.step(&s, rng)?;
        window.push_back(s.clone());
        if window.len() > n_steps + 1 {
            window.pop_front();
        }
        if regions.in_b(d.order_parameter(&s)) {
            if window.len() == n_steps + 1 && regions.in_a(d.order_parameter(&window[0])) {
                return Ok(window.into_iter().collect());
            }
            s = d.parity(&s);
            window.clear();
            window.push_back(s.clone());
        }
    }
    Err(Error::Sampling(format!("no reactive window of {n_steps} steps in {max_steps} steps")))
}

/// `<h_B(x_t)>` over a visiting-ensemble chain at slice indices `t_grid`.
#[derive(Clone, Debug, Default)]
pub struct VisitingProfile {
    pub t_grid: Vec<usize>,
    pub hits: Vec<u64>,
    pub samples: u64,
}

impl VisitingProfile {
    pub fn new(t_grid: Vec<usize>) -> Self {
        let n = t_grid.len();
        Self { t_grid, hits: vec![0; n], samples: 0 }
    }

    pub fn observe(&mut self, order: &[f64], regions: &StateRegions) {
        self.samples += 1;
        for (h, &t) in self.hits.iter_mut().zip(&self.t_grid) {
            if order.get(t).is_some_and(|&q| regions.in_b(q)) {
                *h += 1;
            }
        }
    }

    pub fn mean(&self, k: usize) -> f64 {
        self.hits[k] as f64 / self.samples.max(1) as f64
    }
}

/// `C(t) = <h_B(x_t)>*_AB / <h_B(x_t')>*_AB * C(t')` on the profile grid.
pub fn correlation_function(profile: &VisitingProfile, t_prime: usize, c_t_prime: f64) -> Result<Vec<(usize, f64)>> {
    let k = profile
        .t_grid
        .iter()
        .position(|&t| t == t_prime)
        .ok_or_else(|| invalid("t' must lie on the time grid"))?;
    let denom = profile.mean(k);
    if denom == 0.0 {
        return Err(Error::InsufficientStatistics(format!(
            "no visiting path is in B at slice {t_prime}; choose a later t'"
        )));
    }
    Ok(profile
        .t_grid
        .iter()
        .enumerate()
        .map(|(j, &t)| (t, profile.mean(j) / denom * c_t_prime))
        .collect())
}

/// Least-squares slope of `C(t)` on `[t_lo, t_hi]` (time units).
pub fn correlation_slope(points: &[(f64, f64)], t_lo: f64, t_hi: f64) -> Result<f64> {
    let sel: Vec<(f64, f64)> = points.iter().copied().filter(|(t, _)| *t >= t_lo && *t <= t_hi).collect();
    if sel.len() < 2 {
        return Err(Error::InsufficientStatistics("fewer than two points in the linear window".into()));
    }
    let n = sel.len() as f64;
    let mt = sel.iter().map(|p| p.0).sum::<f64>() / n;
    let mc = sel.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = sel.iter().map(|(t, c)| (t - mt) * (c - mc)).sum();
    let sxx: f64 = sel.iter().map(|(t, _)| (t - mt) * (t - mt)).sum();
    Ok(sxy / sxx)
}

/// Windows of the endpoint order parameter for umbrella sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UmbrellaConfig {
    pub n_windows: usize,
    /// Fraction of a window shared with its neighbour.
    pub overlap: f64,
    pub bin_width: f64,
    pub moves_per_window: usize,
    pub dp_width: f64,
    /// Histogram range of the endpoint order parameter.
    pub q_min: f64,
    pub q_max: f64,
}

impl Default for UmbrellaConfig {
    fn default() -> Self {
        Self {
            n_windows: 8,
            overlap: 0.5,
            bin_width: 0.1,
            moves_per_window: 2000,
            dp_width: 0.5,
            q_min: -8.0,
            q_max: 8.0,
        }
    }
}

/// Result of the windowed endpoint sampling.
#[derive(Clone, Debug)]
pub struct UmbrellaResult {
    /// `P(q(x_t') in B | x_0 in A)`.
    pub scale: f64,
    /// Bin centres and the matched, normalized endpoint density.
    pub bins: Vec<f64>,
    pub density: Vec<f64>,
    /// Log-histogram mismatch at each seam relative to its standard error.
    pub seam_z: Vec<f64>,
    pub windows: Vec<(f64, f64)>,
}

/// Window bounds: `n` windows of equal width over `[a_max, b_min]` with the
/// given fractional overlap; the first extends to `q_min`, the last to `q_max`.
pub fn umbrella_windows(regions: &StateRegions, cfg: &UmbrellaConfig) -> Result<Vec<(f64, f64)>> {
    if cfg.n_windows == 0 {
        return Err(invalid("at least one umbrella window is needed"));
    }
    if cfg.n_windows == 1 {
        return Ok(vec![(cfg.q_min, cfg.q_max)]);
    }
    if !(0.0..1.0).contains(&cfg.overlap) {
        return Err(invalid("window overlap must lie in [0, 1)"));
    }
    let span = regions.b_min - regions.a_max;
    let n = cfg.n_windows as f64;
    let width = span / (n - (n - 1.0) * cfg.overlap);
    let stride = width * (1.0 - cfg.overlap);
    if width * cfg.overlap < 2.0 * cfg.bin_width - 1e-12 {
        return Err(invalid(format!(
            "adjacent windows overlap by {:.3}, less than two bins of width {}",
            width * cfg.overlap,
            cfg.bin_width
        )));
    }
    let mut out = Vec::with_capacity(cfg.n_windows);
    for k in 0..cfg.n_windows {
        let lo = if k == 0 { cfg.q_min } else { regions.a_max + k as f64 * stride };
        let hi = if k + 1 == cfg.n_windows { cfg.q_max } else { regions.a_max + k as f64 * stride + width };
        out.push((lo, hi));
    }
    Ok(out)
}

/// Endpoint distribution of paths of length `n_steps` started in A,
/// assembled from window-constrained shooting chains by matching log
/// histograms on the overlaps.
pub fn umbrella_scale_factor<D: PathDynamics>(
    d: &D,
    regions: &StateRegions,
    cfg: &UmbrellaConfig,
    initial: Vec<D::State>,
    seed: SeedInfo,
) -> Result<UmbrellaResult> {
    let windows = umbrella_windows(regions, cfg)?;
    let nb = ((cfg.q_max - cfg.q_min) / cfg.bin_width).round() as usize;
    let bin_of = |q: f64| -> usize {
        (((q - cfg.q_min) / cfg.bin_width).floor().max(0.0) as usize).min(nb - 1)
    };
    let mut rng = seed.rng();
    let kick = Normal::new(0.0, cfg.dp_width).map_err(|e| invalid(e.to_string()))?;
    let mut hists: Vec<Vec<f64>> = Vec::with_capacity(windows.len());
    let mut path = PathSample::new(initial, d);
    if !regions.in_a(path.order[0]) {
        return Err(invalid("umbrella seed path must start in A"));
    }
    for (w, &(lo, hi)) in windows.iter().enumerate() {
        let inside = |o: &[f64]| {
            let q = *o.last().expect("nonempty");
            regions.in_a(o[0]) && q >= lo && q <= hi
        };
        if !inside(&path.order) {
            return Err(Error::Sampling(format!(
                "no seed path for window {w} [{lo:.3}, {hi:.3}]; windows do not overlap in sampled endpoints"
            )));
        }
        let mut hist = vec![0.0; nb];
        let mut next_seed: Option<PathSample<D::State>> = None;
        let next_window = windows.get(w + 1).copied();
        let n = path.n_steps();
        for _ in 0..cfg.moves_per_window {
            let s = rng.random_range(1..n);
            let dp = kick.sample(&mut rng);
            let attempt: Result<()> = (|| {
                let mut new = PathSample::new(two_way_shoot(d, &path.slices, s, dp, &mut rng)?, d);
                if inside(&new.order) {
                    let lr = shoot_acceptance_log_ratio(d, &mut path, &mut new, s)?;
                    if metropolis(lr, &mut rng) {
                        path = new;
                    }
                }
                Ok(())
            })();
            match attempt {
                Ok(()) | Err(Error::DegenerateDiffusion(_)) | Err(Error::NormGuard { .. }) | Err(Error::NonpositiveWeight(_)) => {}
                Err(e) => return Err(e),
            }
            let q = *path.order.last().expect("nonempty");
            hist[bin_of(q)] += 1.0;
            if let Some((nlo, nhi)) = next_window {
                let better = next_seed.as_ref().is_none_or(|p: &PathSample<D::State>| {
                    *p.order.last().expect("nonempty") < (nlo + nhi) / 2.0 && q > *p.order.last().expect("nonempty")
                });
                if q >= nlo && q <= nhi && better {
                    next_seed = Some(path.clone());
                }
            }
        }
        hists.push(hist);
        if next_window.is_some() {
            path = next_seed.ok_or_else(|| {
                Error::Sampling(format!("window {w} never reached the overlap with window {}", w + 1))
            })?;
        }
    }
    // Match log histograms on overlapping bins with count-weighted least squares.
    let mut log_density = vec![f64::NEG_INFINITY; nb];
    let mut shift = 0.0;
    let mut seam_z = Vec::new();
    for (w, hist) in hists.iter().enumerate() {
        if w > 0 {
            let (mut num, mut den) = (0.0, 0.0);
            for b in 0..nb {
                if hist[b] > 0.0 && hists[w - 1][b] > 0.0 && log_density[b].is_finite() {
                    let wt = 1.0 / (1.0 / hist[b] + 1.0 / hists[w - 1][b]);
                    num += wt * (log_density[b] - hist[b].ln());
                    den += wt;
                }
            }
            if den == 0.0 {
                return Err(Error::Sampling(format!("windows {} and {w} share no populated bins", w - 1)));
            }
            shift = num / den;
            let mut z = 0.0f64;
            for b in 0..nb {
                if hist[b] > 0.0 && hists[w - 1][b] > 0.0 && log_density[b].is_finite() {
                    let mism = (hist[b].ln() + shift - log_density[b]).abs();
                    let se_b = (1.0 / hist[b] + 1.0 / hists[w - 1][b]).sqrt();
                    z = z.max(mism / se_b);
                }
            }
            seam_z.push(z);
        }
        for b in 0..nb {
            if hist[b] > 0.0 {
                let v = hist[b].ln() + shift;
                log_density[b] = if log_density[b].is_finite() { 0.5 * (log_density[b] + v) } else { v };
            }
        }
    }
    let m = log_density.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let dens: Vec<f64> = log_density.iter().map(|&l| if l.is_finite() { (l - m).exp() } else { 0.0 }).collect();
    let total: f64 = dens.iter().sum();
    let density: Vec<f64> = dens.iter().map(|v| v / total).collect();
    let bins: Vec<f64> = (0..nb).map(|b| cfg.q_min + (b as f64 + 0.5) * cfg.bin_width).collect();
    let scale = bins
        .iter()
        .zip(&density)
        .filter(|(q, _)| regions.in_b(**q - 0.5 * cfg.bin_width))
        .map(|(_, p)| p)
        .sum();
    Ok(UmbrellaResult { scale, bins, density, seam_z, windows })
}
