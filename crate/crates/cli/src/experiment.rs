//! Workflows behind each subcommand and the run directory they write.
//!
//! Every run directory holds `config.toml` (the exact configuration used),
//! the primary outputs, and `manifest.toml` listing each file with its
//! SHA-256. Primary outputs depend only on the configuration and seed.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use qtps::analysis::{
    arrhenius_constrained, arrhenius_fit, collect_passages, first_passage_time, momentum_asymmetry,
    path_length_histogram, phase_space_histogram, population_transfer, transition_segments, wigner_sum,
    wigner_transform, ArrheniusFit, MfptResult, PhaseGrid, TransferCurve,
};
use qtps::dynamics::{propagate, ClassicalState, GaussianMoments, SseOps};
use qtps::fock::{build_hamiltonians, build_potential, QuantumState};
use qtps::pathprob::{fidelity, gibbs_state, stationary_state_for, StationaryState};
use qtps::rng::{Purpose, SeedInfo};
use qtps::system::{ClassicalLangevin, GaussianCentroid, PathDynamics, SseDynamics, Stepper};
use qtps::tis::{
    first_interface_flux, place_interfaces, tis_crossing_stats, tis_rate, CrossingStats, FluxResult, InterfaceSet,
    RateEstimate,
};
use qtps::tps::{
    brute_force_initial_path, correlation_function, harvest_reactive_path, indicators, tps_run_with,
    umbrella_scale_factor, EnsembleKind, MoveKind, PathSample, TpsChain, VisitingProfile,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method, SystemKind};
use crate::error::{CliError, CliResult};
use crate::io::{
    flatten_classical, flatten_states, fmt, read_checkpoint, sha256_file, sha256_str, unflatten_classical,
    unflatten_states, write_binary, write_checkpoint, write_csv, CheckpointHeader, RngState,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subcommand {
    Simulate,
    Tps,
    Tis,
    Mfpt,
    Stationary,
    Wigner,
    Analyze,
    Compare,
}

impl Subcommand {
    pub fn name(&self) -> &'static str {
        match self {
            Subcommand::Simulate => "simulate",
            Subcommand::Tps => "tps",
            Subcommand::Tis => "tis",
            Subcommand::Mfpt => "mfpt",
            Subcommand::Stationary => "stationary",
            Subcommand::Wigner => "wigner",
            Subcommand::Analyze => "analyze",
            Subcommand::Compare => "compare",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub seed: u64,
    pub config_hash: String,
    pub code_version: String,
    pub wall_clock_seconds: f64,
    pub files: Vec<FileEntry>,
}

/// An output directory being filled by one run.
pub struct RunDir {
    dir: PathBuf,
    files: Vec<String>,
}

impl RunDir {
    pub fn create(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn record(&mut self, name: &str) {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
        write_csv(self.path(name), header, rows)?;
        self.record(name);
        Ok(())
    }

    pub fn binary(&mut self, name: &str, header: &toml::Table, payload: &[f64]) -> CliResult<()> {
        write_binary(self.path(name), header, payload)?;
        self.record(name);
        Ok(())
    }

    pub fn toml<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let text = toml::to_string(value).map_err(|e| CliError::Io(e.to_string()))?;
        std::fs::write(self.path(name), text)?;
        self.record(name);
        Ok(())
    }

    /// Registers a file written by other means.
    pub fn adopt(&mut self, name: &str) {
        self.record(name);
    }

    /// Writes the config snapshot and the manifest.
    pub fn finish(mut self, sub: Subcommand, cfg: &ExperimentConfig, started: Instant) -> CliResult<RunManifest> {
        let text = cfg.to_toml();
        std::fs::write(self.path("config.toml"), &text)?;
        self.record("config.toml");
        let mut files = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let p = self.path(name);
            files.push(FileEntry { path: name.clone(), sha256: sha256_file(&p)?, bytes: std::fs::metadata(&p)?.len() });
        }
        let manifest = RunManifest {
            subcommand: sub.name().into(),
            seed: cfg.seed,
            config_hash: sha256_str(&text),
            code_version: env!("CARGO_PKG_VERSION").into(),
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            files,
        };
        let m = toml::to_string(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
        std::fs::write(self.path("manifest.toml"), m)?;
        Ok(manifest)
    }
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    sha256_str(&cfg.to_toml())
}

/// Hash identifying a TPS chain; the move budget is excluded so a finished
/// chain can be extended by raising `tps.moves`.
pub fn chain_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.tps.moves = 0;
    c.tps.checkpoint_every = 0;
    config_hash(&c)
}

// ---- systems ----

pub fn classical_system(cfg: &ExperimentConfig) -> CliResult<ClassicalLangevin> {
    Ok(ClassicalLangevin::new(cfg.sim_params())?)
}

pub fn quantum_ops(cfg: &ExperimentConfig) -> CliResult<SseOps> {
    Ok(SseOps::from_params(&cfg.basis_config(), &cfg.sim_params())?)
}

pub fn stationary(cfg: &ExperimentConfig) -> CliResult<StationaryState> {
    Ok(stationary_state_for(&quantum_ops(cfg)?)?)
}

/// SSE or QSD dynamics; the stationary state is attached when `with_stationary`.
pub fn quantum_system(cfg: &ExperimentConfig, with_stationary: bool) -> CliResult<SseDynamics> {
    let ops = quantum_ops(cfg)?;
    let st = if with_stationary { Some(stationary_state_for(&ops)?) } else { None };
    let mut d = SseDynamics::new(ops, cfg.bath.dt).with_noise(cfg.noise()).with_displacement(cfg.basis.displacement)?;
    if let Some(st) = st {
        d = d.with_stationary(Arc::new(st))?;
    }
    Ok(d)
}

/// Frozen variances default to the minimum-uncertainty packet of the basis oscillator.
pub fn gaussian_system(cfg: &ExperimentConfig) -> GaussianCentroid {
    let b = cfg.basis_config();
    let var_x = cfg.gaussian.var_x.unwrap_or(b.hbar / (2.0 * b.mass * b.osc_freq));
    let var_p = cfg.gaussian.var_p.unwrap_or(b.hbar * b.mass * b.osc_freq / 2.0);
    GaussianCentroid::new(cfg.sim_params(), var_x, var_p)
}

fn start_x(cfg: &ExperimentConfig) -> f64 {
    cfg.simulate.x0.unwrap_or(-cfg.well().minimum())
}

pub fn classical_start(cfg: &ExperimentConfig) -> ClassicalState {
    ClassicalState::new(start_x(cfg), cfg.simulate.p0)
}

/// Coherent state of the basis oscillator at the start point.
pub fn quantum_start(cfg: &ExperimentConfig) -> QuantumState {
    QuantumState::coherent(&cfg.basis_config(), start_x(cfg), cfg.simulate.p0)
}

pub fn gaussian_start(cfg: &ExperimentConfig, g: &GaussianCentroid) -> GaussianMoments {
    GaussianMoments { mean_x: start_x(cfg), mean_p: cfg.simulate.p0, var_x: g.var_x, var_p: g.var_p }
}

fn unsupported(sub: &str, kind: SystemKind) -> CliError {
    CliError::Unsupported(format!("`{sub}` is not available for system = {kind:?}"))
}

// ---- TIS ----

/// Everything a TIS run produces.
#[derive(Clone, Debug)]
pub struct TisOutcome {
    pub flux: FluxResult,
    pub interfaces: Vec<f64>,
    pub pilots: Option<CrossingStats>,
    pub stats: CrossingStats,
    pub rate: RateEstimate,
}

fn tis_generic<D>(cfg: &ExperimentConfig, d: &D, start: D::State) -> CliResult<TisOutcome>
where
    D: PathDynamics + Sync,
    D::State: Send + Sync,
{
    let regions = cfg.regions;
    let tcfg = cfg.tis_config();
    let fcfg = cfg.flux_config();
    let seed = cfg.seed;
    let (flux, placed) = rayon::join(
        || first_interface_flux(d, &regions, start.clone(), &fcfg, SeedInfo::new(seed, Purpose::Flux, 0)),
        || -> qtps::Result<(InterfaceSet, Option<CrossingStats>, Vec<D::State>)> {
            if cfg.tis.interfaces.is_empty() {
                let p = place_interfaces(d, &regions, start.clone(), &tcfg, seed)?;
                let first = p.seeds.into_iter().next().expect("at least one interface");
                Ok((p.interfaces, Some(p.pilots), first))
            } else {
                let set = InterfaceSet::new(cfg.tis.interfaces.clone(), &regions)?;
                let mut rng = SeedInfo::new(seed, Purpose::Interface, 0).rng();
                let first = qtps::tis::first_seed_path(d, &regions, start.clone(), &tcfg, &mut rng)?;
                Ok((set, None, first))
            }
        },
    );
    let flux = flux?;
    let (interfaces, pilots, first) = placed?;
    let stats = tis_crossing_stats(d, &regions, &interfaces, first, &tcfg, seed)?;
    let mut rate = tis_rate(&flux, &stats, &regions);
    rate.config = Some(config_hash(cfg));
    Ok(TisOutcome { flux, interfaces: interfaces.lambdas().to_vec(), pilots, stats, rate })
}

/// TIS rate for the configured system.
pub fn tis_estimate(cfg: &ExperimentConfig) -> CliResult<TisOutcome> {
    cfg.validate()?;
    match cfg.system {
        SystemKind::Classical => tis_generic(cfg, &classical_system(cfg)?, classical_start(cfg)),
        SystemKind::Sse | SystemKind::Qsd => tis_generic(cfg, &quantum_system(cfg, true)?, quantum_start(cfg)),
        SystemKind::Gaussian => Err(unsupported("tis", cfg.system)),
    }
}

fn write_tis(run: &mut RunDir, out: &TisOutcome) -> CliResult<()> {
    let r = &out.rate;
    let mut rows = vec![vec!["flux".into(), String::new(), fmt(r.interfaces[0]), String::new(), fmt(r.flux0), fmt(r.flux_stderr)]];
    for (i, e) in out.stats.entries.iter().enumerate() {
        rows.push(vec![
            "crossing_probability".into(),
            i.to_string(),
            fmt(e.lambda_i),
            fmt(e.lambda_next),
            fmt(e.estimate),
            fmt(e.stderr),
        ]);
    }
    rows.push(vec!["rate".into(), String::new(), String::new(), String::new(), fmt(r.rate), fmt(r.stderr)]);
    run.csv("rate.csv", &["quantity", "index", "lambda_i", "lambda_next", "value", "stderr"], &rows)?;
    let curve: Vec<Vec<String>> =
        out.stats.cumulative_curve(20).iter().map(|(l, lp)| vec![fmt(*l), fmt(*lp)]).collect();
    run.csv("crossing_curve.csv", &["lambda", "log10_probability"], &curve)?;
    let detail: Vec<Vec<String>> = out
        .stats
        .entries
        .iter()
        .map(|e| {
            vec![
                fmt(e.lambda_i),
                fmt(e.lambda_next),
                e.trials.to_string(),
                e.successes.to_string(),
                e.accepted.to_string(),
                e.cap_hits.to_string(),
            ]
        })
        .collect();
    run.csv("ensembles.csv", &["lambda_i", "lambda_next", "trials", "successes", "accepted", "cap_hits"], &detail)?;
    run.toml("rate.toml", r)
}

// ---- MFPT ----

fn mfpt_generic<D>(cfg: &ExperimentConfig, d: &D, start: &D::State) -> CliResult<MfptResult>
where
    D: Stepper + Sync,
    D::State: Sync,
{
    let n = cfg.mfpt.trajectories;
    if n < 10 {
        return Err(CliError::Config { line: None, message: "mfpt.trajectories must be at least 10".into() });
    }
    let results: qtps::Result<Vec<Option<f64>>> = (0..n)
        .into_par_iter()
        .map(|k| first_passage_time(d, &cfg.regions, start, cfg.mfpt.cutoff, SeedInfo::new(cfg.seed, Purpose::Mfpt, k as u64)))
        .collect();
    Ok(collect_passages(results?, cfg.mfpt.cutoff))
}

/// Inverse mean first-passage rate for the configured system.
pub fn mfpt_estimate(cfg: &ExperimentConfig) -> CliResult<MfptResult> {
    cfg.validate()?;
    match cfg.system {
        SystemKind::Classical => mfpt_generic(cfg, &classical_system(cfg)?, &classical_start(cfg)),
        SystemKind::Sse | SystemKind::Qsd => mfpt_generic(cfg, &quantum_system(cfg, false)?, &quantum_start(cfg)),
        SystemKind::Gaussian => {
            let g = gaussian_system(cfg);
            let s = gaussian_start(cfg, &g);
            mfpt_generic(cfg, &g, &s)
        }
    }
}

fn write_mfpt(run: &mut RunDir, m: &MfptResult) -> CliResult<()> {
    let rows: Vec<Vec<String>> = m.times.iter().map(|t| vec![fmt(*t)]).collect();
    run.csv("passage_times.csv", &["time"], &rows)?;
    run.toml("mfpt.toml", m)
}

// ---- TPS ----

/// Reactive initial path of `n_steps`: brute force first, then a long
/// trajectory cut at a transition.
fn initial_path<D: PathDynamics>(cfg: &ExperimentConfig, d: &D, start: &D::State, n_steps: usize) -> CliResult<Vec<D::State>> {
    let tcfg = cfg.tps_config();
    let mut rng = SeedInfo::new(cfg.seed, Purpose::Seeding, 0).rng();
    match brute_force_initial_path(d, start, n_steps, &tcfg, cfg.tps.init_attempts, &mut rng) {
        Ok(p) => Ok(p),
        Err(qtps::Error::Sampling(_)) => {
            let max_steps = (cfg.tis.max_seed_time / d.dt()).ceil() as u64;
            Ok(harvest_reactive_path(d, start, &cfg.regions, n_steps, max_steps, &mut rng)?)
        }
        Err(e) => Err(e.into()),
    }
}

fn path_steps(cfg: &ExperimentConfig) -> CliResult<usize> {
    let n = (cfg.tps.path_time / cfg.bath.dt).round() as usize;
    if n < 2 {
        return Err(CliError::Config { line: None, message: "tps.path_time must span at least two steps".into() });
    }
    Ok(n)
}

/// Per-path observables recorded after every TPS move.
#[derive(Clone, Debug, Default)]
pub struct PathObservables {
    /// Duration of the last A-to-B segment (time units), if any.
    pub transition_time: Vec<Option<f64>>,
    pub mean_order: Vec<f64>,
    pub end_order: Vec<f64>,
}

impl PathObservables {
    fn observe<S>(&mut self, p: &PathSample<S>, regions: &qtps::tps::StateRegions, dt: f64) {
        let seg = transition_segments(&p.order, regions);
        self.transition_time.push(seg.last().map(|&(a, b)| (b - a) as f64 * dt));
        self.mean_order.push(p.order.iter().sum::<f64>() / p.order.len() as f64);
        self.end_order.push(*p.order.last().expect("nonempty"));
    }

    /// CSV rows for observations `first..`, numbered from `offset`.
    fn rows(&self, first: usize, offset: usize) -> Vec<Vec<String>> {
        (first..self.mean_order.len())
            .map(|i| {
                vec![
                    (offset + i - first).to_string(),
                    self.transition_time[i].map(fmt).unwrap_or_default(),
                    fmt(self.mean_order[i]),
                    fmt(self.end_order[i]),
                ]
            })
            .collect()
    }
}

/// A finished (or resumed and finished) TPS chain.
pub struct TpsOutcome<S> {
    pub chain: TpsChain<S>,
    pub observables: PathObservables,
    pub profile: Option<VisitingProfile>,
    pub moves_done: usize,
}

trait Payload: Sized {
    fn flatten(slices: &[Self]) -> Vec<f64>;
    fn unflatten(payload: &[f64], dim: usize) -> CliResult<Vec<Self>>;
    fn dim(slices: &[Self]) -> usize;
}

impl Payload for ClassicalState {
    fn flatten(slices: &[Self]) -> Vec<f64> {
        flatten_classical(slices)
    }
    fn unflatten(payload: &[f64], _: usize) -> CliResult<Vec<Self>> {
        unflatten_classical(payload)
    }
    fn dim(_: &[Self]) -> usize {
        0
    }
}

impl Payload for QuantumState {
    fn flatten(slices: &[Self]) -> Vec<f64> {
        flatten_states(slices)
    }
    fn unflatten(payload: &[f64], dim: usize) -> CliResult<Vec<Self>> {
        unflatten_states(payload, dim)
    }
    fn dim(slices: &[Self]) -> usize {
        slices.first().map_or(0, |s| s.dim())
    }
}

fn move_rows(chain_moves: &[qtps::tps::MoveRecord], offset: usize) -> Vec<Vec<String>> {
    chain_moves
        .iter()
        .enumerate()
        .map(|(i, m)| {
            vec![
                (offset + i).to_string(),
                match m.kind {
                    MoveKind::Shoot => "shoot".into(),
                    MoveKind::Mirror => "mirror".into(),
                },
                m.index.to_string(),
                fmt(m.dp),
                (m.accepted as u8).to_string(),
                fmt(m.log_ratio),
                m.transform.label().into(),
                m.n_s.to_string(),
                m.n_bar.to_string(),
            ]
        })
        .collect()
}

const MOVE_HEADER: [&str; 9] = ["move", "kind", "index", "dp", "accepted", "log_ratio", "transform", "n_s", "n_bar"];

const OBSERVABLE_HEADER: [&str; 4] = ["move", "transition_time", "mean_order", "end_order"];

fn append_rows(path: &Path, header: &[&str], rows: &[Vec<String>], fresh: bool) -> CliResult<()> {
    let file = OpenOptions::new().create(true).write(true).append(!fresh).truncate(fresh).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        w.write_record(header)?;
    }
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the configured chain in checkpointed chunks. With a run directory,
/// an existing checkpoint for the same configuration is resumed; the
/// result is identical to an uninterrupted run.
fn tps_generic<D>(cfg: &ExperimentConfig, d: &D, start: &D::State, run: Option<&mut RunDir>) -> CliResult<TpsOutcome<D::State>>
where
    D: PathDynamics,
    D::State: Payload,
{
    let n_steps = path_steps(cfg)?;
    let tcfg = cfg.tps_config();
    let hash = chain_hash(cfg);
    let seed = SeedInfo::new(cfg.seed, Purpose::Tps, 0);
    let total = cfg.tps.moves;
    let chunk = if cfg.tps.checkpoint_every == 0 { total.max(1) } else { cfg.tps.checkpoint_every };
    let ckpt = run.as_ref().map(|r| r.path("checkpoint.bin"));
    let moves_path = run.as_ref().map(|r| r.path("moves.csv"));
    let obs_path = run.as_ref().map(|r| r.path("observables.csv"));

    let (mut slices, mut rng, mut done, mut accepted) = match ckpt.as_ref().filter(|p| p.exists()) {
        Some(p) => {
            let (h, payload) = read_checkpoint(p)?;
            if h.config_hash != hash {
                return Err(CliError::Io("checkpoint belongs to a different configuration".into()));
            }
            (D::State::unflatten(&payload, h.dim as usize)?, h.rng.restore()?, h.moves_done as usize, h.accepted as usize)
        }
        None => (initial_path(cfg, d, start, n_steps)?, seed.rng(), 0, 0),
    };
    let profile_grid: Option<Vec<usize>> = (cfg.tps.profile_every > 0 && cfg.tps.ensemble == EnsembleKind::Visiting)
        .then(|| (0..=n_steps).step_by(cfg.tps.profile_every).collect());
    let mut profile = profile_grid.map(VisitingProfile::new);
    let mut obs = PathObservables::default();
    let mut all_moves = Vec::new();
    let mut chain: Option<TpsChain<D::State>> = None;
    while done < total || chain.is_none() {
        let n = chunk.min(total - done);
        let ccfg = qtps::tps::TpsConfig { n_moves: n, ..tcfg.clone() };
        let c = tps_run_with(d, &ccfg, slices.clone(), seed, &mut rng, |p| {
            obs.observe(p, &cfg.regions, d.dt());
            if let Some(prof) = profile.as_mut() {
                prof.observe(&p.order, &cfg.regions);
            }
        })?;
        accepted += c.moves.iter().filter(|m| m.accepted).count();
        if let Some(mp) = &moves_path {
            append_rows(mp, &MOVE_HEADER, &move_rows(&c.moves, done), done == 0)?;
        }
        if let Some(op) = &obs_path {
            let first = obs.mean_order.len() - c.moves.len();
            append_rows(op, &OBSERVABLE_HEADER, &obs.rows(first, done), done == 0)?;
        }
        done += n;
        slices = c.current.slices.clone();
        all_moves.extend(c.moves.iter().cloned());
        if let Some(p) = &ckpt {
            let header = CheckpointHeader {
                kind: "tps".into(),
                config_hash: hash.clone(),
                moves_done: done as u64,
                accepted: accepted as u64,
                slices: slices.len() as u64,
                dim: D::State::dim(&slices) as u64,
                rng: RngState::capture(&rng),
            };
            write_checkpoint(p, &header, &D::State::flatten(&slices))?;
        }
        chain = Some(c);
        if n == 0 {
            break;
        }
    }
    let mut chain = chain.expect("at least one chunk");
    chain.moves = all_moves;
    if let Some(run) = run {
        run.adopt("moves.csv");
        run.adopt("observables.csv");
        let mut h = toml::Table::new();
        h.insert("kind".into(), "path".into());
        h.insert("slices".into(), (slices.len() as i64).into());
        h.insert("dim".into(), (D::State::dim(&slices) as i64).into());
        h.insert("dt".into(), d.dt().into());
        run.binary("final_path.bin", &h, &D::State::flatten(&slices))?;
        let order: Vec<f64> = chain.current.order.clone();
        let flags = indicators(&order, &cfg.regions);
        let tally = match &moves_path {
            Some(p) => MoveTally::from_csv(p)?,
            None => MoveTally::default(),
        };
        let summary = TpsSummary {
            moves: done,
            accepted,
            acceptance: tally.rate(None),
            shoot_acceptance: tally.rate(Some(MoveKind::Shoot)),
            mirror_acceptance: tally.rate(Some(MoveKind::Mirror)),
            final_reactive: flags.reactive(),
            path_slices: slices.len(),
        };
        run.toml("tps.toml", &summary)?;
        run.adopt("checkpoint.bin");
    }
    Ok(TpsOutcome { chain, observables: obs, profile, moves_done: done })
}

/// Attempted and accepted counts per move kind, read back from `moves.csv`
/// so that resumed chains report the whole history.
#[derive(Default)]
struct MoveTally {
    shoot: (usize, usize),
    mirror: (usize, usize),
}

impl MoveTally {
    fn from_csv(path: &Path) -> CliResult<Self> {
        let mut t = Self::default();
        let mut r = csv::Reader::from_path(path)?;
        for rec in r.records() {
            let rec = rec?;
            let slot = if &rec[1] == "mirror" { &mut t.mirror } else { &mut t.shoot };
            slot.0 += 1;
            slot.1 += (&rec[4] == "1") as usize;
        }
        Ok(t)
    }

    fn rate(&self, kind: Option<MoveKind>) -> f64 {
        let (n, a) = match kind {
            Some(MoveKind::Shoot) => self.shoot,
            Some(MoveKind::Mirror) => self.mirror,
            None => (self.shoot.0 + self.mirror.0, self.shoot.1 + self.mirror.1),
        };
        if n == 0 {
            f64::NAN
        } else {
            a as f64 / n as f64
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TpsSummary {
    pub moves: usize,
    pub accepted: usize,
    pub acceptance: f64,
    pub shoot_acceptance: f64,
    pub mirror_acceptance: f64,
    pub final_reactive: bool,
    pub path_slices: usize,
}

/// TPS chain for the classical system (no files).
pub fn tps_classical(cfg: &ExperimentConfig) -> CliResult<TpsOutcome<ClassicalState>> {
    tps_generic(cfg, &classical_system(cfg)?, &classical_start(cfg), None)
}

fn correlation<D: PathDynamics>(
    cfg: &ExperimentConfig,
    d: &D,
    start: &D::State,
    profile: &VisitingProfile,
    run: &mut RunDir,
) -> CliResult<()> {
    let n_steps = path_steps(cfg)?;
    let t_prime = if cfg.tps.t_prime > 0.0 {
        let k = (cfg.tps.t_prime / d.dt()).round() as usize;
        *profile.t_grid.iter().min_by_key(|&&t| t.abs_diff(k)).expect("nonempty grid")
    } else {
        *profile.t_grid.last().expect("nonempty grid")
    };
    let mut rng = SeedInfo::new(cfg.seed, Purpose::Seeding, 1).rng();
    let mut seed_path = Vec::with_capacity(t_prime + 1);
    seed_path.push(start.clone());
    for _ in 0..t_prime {
        seed_path.push(d.step(seed_path.last().expect("nonempty"), &mut rng)?);
    }
    let _ = n_steps;
    let um = umbrella_scale_factor(d, &cfg.regions, &cfg.umbrella, seed_path, SeedInfo::new(cfg.seed, Purpose::Umbrella, 0))?;
    let c = correlation_function(profile, t_prime, um.scale)?;
    let rows: Vec<Vec<String>> = c.iter().map(|(t, v)| vec![fmt(*t as f64 * d.dt()), fmt(*v)]).collect();
    run.csv("correlation.csv", &["t", "c"], &rows)?;
    let dens: Vec<Vec<String>> = um.bins.iter().zip(&um.density).map(|(b, p)| vec![fmt(*b), fmt(*p)]).collect();
    run.csv("umbrella_density.csv", &["q", "density"], &dens)?;
    run.toml("umbrella.toml", &UmbrellaSummary { t_prime: t_prime as f64 * d.dt(), scale: um.scale, seam_z: um.seam_z })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct UmbrellaSummary {
    t_prime: f64,
    scale: f64,
    seam_z: Vec<f64>,
}

fn tps_with_files<D>(cfg: &ExperimentConfig, d: &D, start: &D::State, run: &mut RunDir) -> CliResult<()>
where
    D: PathDynamics,
    D::State: Payload,
{
    let out = tps_generic(cfg, d, start, Some(run))?;
    if let Some(profile) = &out.profile {
        let rows: Vec<Vec<String>> =
            profile.t_grid.iter().enumerate().map(|(k, &t)| vec![fmt(t as f64 * d.dt()), fmt(profile.mean(k))]).collect();
        run.csv("visiting_profile.csv", &["t", "h_b"], &rows)?;
        correlation(cfg, d, start, profile, run)?;
    }
    Ok(())
}

// ---- analyze ----

fn grid(cfg: &ExperimentConfig) -> CliResult<PhaseGrid> {
    let w = &cfg.wigner;
    Ok(PhaseGrid::new(w.x_min, w.x_max, w.p_min, w.p_max, w.nx, w.np)?)
}

/// Transition-path durations and the phase-space distribution at the barrier top.
fn analyze_generic<D>(
    cfg: &ExperimentConfig,
    d: &D,
    start: &D::State,
    run: &mut RunDir,
    at_barrier: impl Fn(&[D::State]) -> CliResult<Vec<f64>>,
) -> CliResult<()>
where
    D: PathDynamics,
    D::State: Payload,
{
    let mut acfg = cfg.clone();
    acfg.tps.ensemble = EnsembleKind::Reactive;
    acfg.tps.checkpoint_every = 0;
    acfg.tps.profile_every = 0;
    let n_steps = path_steps(&acfg)?;
    let mut tcfg = acfg.tps_config();
    tcfg.store_every = (acfg.tps.moves / 200).max(1);
    let initial = initial_path(&acfg, d, start, n_steps)?;
    let mut rng = SeedInfo::new(acfg.seed, Purpose::Tps, 0).rng();
    let chain = tps_run_with(d, &tcfg, initial, SeedInfo::new(acfg.seed, Purpose::Tps, 0), &mut rng, |_| {})?;
    let mut durations = Vec::new();
    let mut field = nalgebra::DMatrix::<f64>::zeros(0, 0);
    let mut points = Vec::new();
    for slices in &chain.stored {
        let order: Vec<f64> = slices.iter().map(|s| d.order_parameter(s)).collect();
        let segs = transition_segments(&order, &acfg.regions);
        let Some(&(a, b)) = segs.last() else { continue };
        durations.push((b - a) as f64 * d.dt());
        let k = (a..=b).find(|&i| order[i] >= 0.0).unwrap_or(b);
        let v = at_barrier(&slices[k..=k])?;
        if v.len() == 2 {
            points.push((v[0], v[1]));
        } else {
            let g = grid(&acfg)?;
            let m = nalgebra::DMatrix::from_column_slice(g.nx, g.np, &v);
            field = if field.is_empty() { m } else { field + m };
        }
    }
    let bins = (durations.len() as f64).sqrt().ceil().max(1.0) as usize;
    let hist = path_length_histogram(&durations, bins)?;
    let rows: Vec<Vec<String>> = hist
        .edges
        .windows(2)
        .zip(&hist.density)
        .map(|(e, p)| vec![fmt(e[0]), fmt(e[1]), fmt(*p)])
        .collect();
    run.csv("path_lengths.csv", &["lo", "hi", "density"], &rows)?;
    let g = grid(&acfg)?;
    let (h, asym) = if points.is_empty() {
        (field, None)
    } else {
        (phase_space_histogram(&points, &g)?, Some(momentum_asymmetry(&points)))
    };
    let mut rows = Vec::with_capacity(g.nx * g.np);
    for i in 0..g.nx {
        for j in 0..g.np {
            rows.push(vec![fmt(g.x(i)), fmt(g.p(j)), fmt(h.get((i, j)).copied().unwrap_or(0.0))]);
        }
    }
    run.csv("barrier_phase_space.csv", &["x", "p", "value"], &rows)?;
    run.toml(
        "analyze.toml",
        &AnalyzeSummary {
            paths: durations.len(),
            mean_transition_time: qtps::stats::mean(&durations),
            momentum_asymmetry: asym.map(|a| a.0),
            momentum_asymmetry_stderr: asym.map(|a| a.1),
            acceptance: chain.acceptance_rate(None),
        },
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct AnalyzeSummary {
    paths: usize,
    mean_transition_time: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    momentum_asymmetry: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    momentum_asymmetry_stderr: Option<f64>,
    acceptance: f64,
}

// ---- stationary and coherent workflows ----

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StationarySummary {
    pub dim: usize,
    pub temperature: f64,
    pub gamma: f64,
    pub residual: f64,
    pub trace_re: f64,
    pub trace_im: f64,
    pub hermiticity_error: f64,
    pub min_eigenvalue: f64,
    pub purity: f64,
    pub gibbs_fidelity: f64,
}

/// Stationary state of the master equation and its comparison with the Gibbs state.
pub fn stationary_summary(cfg: &ExperimentConfig) -> CliResult<(StationaryState, StationarySummary)> {
    let b = cfg.basis_config();
    let st = stationary(cfg)?;
    let v = build_potential(&b, cfg.potential.c4, cfg.potential.c2)?;
    let (h0, _) = build_hamiltonians(&b, &v, cfg.bath.gamma)?;
    let gibbs = gibbs_state(&h0, cfg.kt())?;
    let tr = st.trace();
    let s = StationarySummary {
        dim: b.dim,
        temperature: cfg.kt(),
        gamma: cfg.bath.gamma,
        residual: st.residual,
        trace_re: tr.re,
        trace_im: tr.im,
        hermiticity_error: st.hermiticity_error(),
        min_eigenvalue: st.min_eigenvalue(),
        purity: st.purity(),
        gibbs_fidelity: fidelity(&st, &gibbs),
    };
    Ok((st, s))
}

/// Coherent (frictionless) evolution of the start state.
pub fn coherent_transfer(cfg: &ExperimentConfig) -> CliResult<TransferCurve> {
    let b = cfg.basis_config();
    let v = build_potential(&b, cfg.potential.c4, cfg.potential.c2)?;
    let (h0, _) = build_hamiltonians(&b, &v, 0.0)?;
    let (x, _) = qtps::fock::build_position_momentum(&b)?;
    Ok(population_transfer(&h0, &x, &quantum_start(cfg), b.hbar, cfg.wigner.dt, cfg.wigner.time)?)
}

fn wigner_workflow(cfg: &ExperimentConfig, run: &mut RunDir) -> CliResult<()> {
    let b = cfg.basis_config();
    let g = grid(cfg)?;
    let curve = coherent_transfer(cfg)?;
    let rows: Vec<Vec<String>> = curve.times.iter().zip(&curve.left).map(|(t, p)| vec![fmt(*t), fmt(*p)]).collect();
    run.csv("transfer.csv", &["t", "left_population"], &rows)?;
    let v = build_potential(&b, cfg.potential.c4, cfg.potential.c2)?;
    let (h0, _) = build_hamiltonians(&b, &v, 0.0)?;
    let prop = qtps::dynamics::CoherentPropagator::new(&h0, b.hbar, cfg.wigner.dt);
    let n_total = (cfg.wigner.time / cfg.wigner.dt).ceil() as usize;
    let snaps = cfg.wigner.snapshots.max(1);
    let targets: Vec<usize> =
        (0..snaps).map(|k| if snaps == 1 { n_total } else { k * n_total / (snaps - 1) }).collect();
    let mut psi = quantum_start(cfg);
    let mut long = Vec::new();
    let mut step = 0usize;
    for (k, &target) in targets.iter().enumerate() {
        while step < target {
            psi = prop.step(&psi);
            step += 1;
        }
        let t = step as f64 * cfg.wigner.dt;
        let w = wigner_transform(&psi, &b, &g)?;
        let mut h = toml::Table::new();
        h.insert("kind".into(), "wigner".into());
        h.insert("t".into(), t.into());
        h.insert("nx".into(), (g.nx as i64).into());
        h.insert("np".into(), (g.np as i64).into());
        h.insert("x_min".into(), g.x_min.into());
        h.insert("x_max".into(), g.x_max.into());
        h.insert("p_min".into(), g.p_min.into());
        h.insert("p_max".into(), g.p_max.into());
        h.insert("layout".into(), "column-major, x fastest".into());
        run.binary(&format!("wigner_{k}.bin"), &h, w.values.as_slice())?;
        for i in 0..g.nx {
            for j in 0..g.np {
                long.push(vec![k.to_string(), fmt(t), fmt(g.x(i)), fmt(g.p(j)), fmt(w.values[(i, j)])]);
            }
        }
    }
    run.csv("wigner.csv", &["snapshot", "t", "x", "p", "w"], &long)?;
    run.toml(
        "transfer.toml",
        &TransferSummary { full_transfer_time: curve.full_transfer_time, rate: curve.rate(), dim: b.dim },
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TransferSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    full_transfer_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rate: Option<f64>,
    dim: usize,
}

// ---- simulate ----

fn simulate_generic<D: Stepper>(
    cfg: &ExperimentConfig,
    d: &D,
    start: &D::State,
    run: &mut RunDir,
    coords: impl Fn(&D::State) -> (f64, f64),
) -> CliResult<Vec<D::State>> {
    let n = cfg.simulate.steps as usize;
    let every = cfg.simulate.record_every.max(1) as usize;
    let traj = propagate(start, d, n, SeedInfo::new(cfg.seed, Purpose::Simulate, 0))?;
    let kept: Vec<D::State> = traj.slices.iter().step_by(every).cloned().collect();
    let rows: Vec<Vec<String>> = kept
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let (x, p) = coords(s);
            vec![fmt((k * every) as f64 * d.dt()), fmt(x), fmt(p)]
        })
        .collect();
    run.csv("trajectory.csv", &["t", "x", "p"], &rows)?;
    Ok(kept)
}

// ---- compare ----

/// One row of the temperature sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub t_b: f64,
    pub temperature: f64,
    pub method: Method,
    /// `None` when the estimator only yields a bound.
    pub rate: Option<f64>,
    pub stderr: Option<f64>,
    pub bound: Option<f64>,
}

impl CompareRow {
    pub fn ln_k(&self) -> Option<(f64, f64)> {
        Some((self.rate?.ln(), self.stderr? / self.rate?))
    }
}

/// Independent master seed per temperature index.
pub fn sweep_seed(master: u64, index: usize) -> u64 {
    (master ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)) & (i64::MAX as u64)
}

pub fn compare_rows(cfg: &ExperimentConfig) -> CliResult<Vec<CompareRow>> {
    let jobs: Vec<(usize, f64, Method)> = cfg
        .compare
        .t_b
        .iter()
        .enumerate()
        .flat_map(|(i, &t)| cfg.compare.methods.iter().map(move |&m| (i, t, m)))
        .collect();
    jobs.par_iter()
        .map(|&(i, t_b, method)| {
            let mut c = cfg.at_barrier_temperature(t_b);
            c.seed = sweep_seed(cfg.seed, i);
            match method {
                Method::Tis => {
                    let o = tis_estimate(&c)?;
                    Ok(CompareRow {
                        t_b,
                        temperature: c.kt(),
                        method,
                        rate: Some(o.rate.rate),
                        stderr: Some(o.rate.stderr),
                        bound: None,
                    })
                }
                Method::Mfpt => {
                    let m = mfpt_estimate(&c)?;
                    Ok(CompareRow {
                        t_b,
                        temperature: c.kt(),
                        method,
                        rate: m.rate,
                        stderr: m.stderr,
                        bound: m.rate.is_none().then_some(m.min_detectable),
                    })
                }
            }
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArrheniusSummary {
    pub method: Method,
    pub free: ArrheniusFit,
    pub constrained: ArrheniusFit,
    pub barrier: f64,
}

/// Free and barrier-constrained fits of `ln k` against `1/T` for each method.
pub fn arrhenius_summaries(rows: &[CompareRow], barrier: f64) -> Vec<ArrheniusSummary> {
    let mut out = Vec::new();
    for method in [Method::Tis, Method::Mfpt] {
        let pts: Vec<(f64, f64)> =
            rows.iter().filter(|r| r.method == method).filter_map(|r| Some((r.temperature, r.rate?))).collect();
        if pts.len() < 2 {
            continue;
        }
        if let (Ok(free), Ok(constrained)) = (arrhenius_fit(&pts), arrhenius_constrained(&pts, barrier)) {
            out.push(ArrheniusSummary { method, free, constrained, barrier });
        }
    }
    out
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Tis => "tis",
        Method::Mfpt => "imfpt",
    }
}

fn write_compare(run: &mut RunDir, cfg: &ExperimentConfig, rows: &[CompareRow]) -> CliResult<()> {
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let (lnk, lnse) = r.ln_k().map_or((String::new(), String::new()), |(a, b)| (fmt(a), fmt(b)));
            vec![
                fmt(r.t_b),
                fmt(r.temperature),
                fmt(1.0 / r.temperature),
                lnk,
                lnse,
                r.rate.map(fmt).unwrap_or_default(),
                r.stderr.map(fmt).unwrap_or_default(),
                r.bound.map(fmt).unwrap_or_default(),
                method_name(r.method).into(),
            ]
        })
        .collect();
    run.csv(
        "compare.csv",
        &["t_b", "temperature", "inv_temperature", "ln_k", "ln_k_stderr", "rate", "stderr", "rate_bound", "method"],
        &table,
    )?;
    let fits = arrhenius_summaries(rows, cfg.well().barrier_height());
    #[derive(Serialize)]
    struct Fits<'a> {
        fit: &'a [ArrheniusSummary],
    }
    run.toml("arrhenius.toml", &Fits { fit: &fits })
}

// ---- dispatch ----

fn pool(cfg: &ExperimentConfig) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.unwrap_or(1).max(1))
        .build()
        .map_err(|e| CliError::Io(e.to_string()))
}

/// Runs one subcommand into `out` and returns its manifest.
pub fn run(sub: Subcommand, cfg: &ExperimentConfig, out: &Path) -> CliResult<RunManifest> {
    cfg.validate()?;
    let started = Instant::now();
    let mut dir = RunDir::create(out)?;
    pool(cfg)?.install(|| execute(sub, cfg, &mut dir))?;
    dir.finish(sub, cfg, started)
}

fn execute(sub: Subcommand, cfg: &ExperimentConfig, run: &mut RunDir) -> CliResult<()> {
    let kind = cfg.system;
    match sub {
        Subcommand::Simulate => match kind {
            SystemKind::Classical => {
                simulate_generic(cfg, &classical_system(cfg)?, &classical_start(cfg), run, |s| (s.x, s.p)).map(|_| ())
            }
            SystemKind::Sse | SystemKind::Qsd => {
                let d = quantum_system(cfg, false)?;
                let kept = simulate_generic(cfg, &d, &quantum_start(cfg), run, |s| (d.ops.position(s), d.ops.momentum(s)))?;
                let mut h = toml::Table::new();
                h.insert("kind".into(), "states".into());
                h.insert("dim".into(), (cfg.basis.dim as i64).into());
                h.insert("count".into(), (kept.len() as i64).into());
                h.insert("record_every".into(), (cfg.simulate.record_every as i64).into());
                run.binary("states.bin", &h, &flatten_states(&kept))
            }
            SystemKind::Gaussian => {
                let g = gaussian_system(cfg);
                simulate_generic(cfg, &g, &gaussian_start(cfg, &g), run, |s| (s.mean_x, s.mean_p)).map(|_| ())
            }
        },
        Subcommand::Tis => {
            let o = tis_estimate(cfg)?;
            write_tis(run, &o)
        }
        Subcommand::Mfpt => {
            let m = mfpt_estimate(cfg)?;
            write_mfpt(run, &m)
        }
        Subcommand::Tps => match kind {
            SystemKind::Classical => tps_with_files(cfg, &classical_system(cfg)?, &classical_start(cfg), run),
            SystemKind::Sse | SystemKind::Qsd => tps_with_files(cfg, &quantum_system(cfg, true)?, &quantum_start(cfg), run),
            SystemKind::Gaussian => Err(unsupported("tps", kind)),
        },
        Subcommand::Analyze => match kind {
            SystemKind::Classical => {
                analyze_generic(cfg, &classical_system(cfg)?, &classical_start(cfg), run, |s| Ok(vec![s[0].x, s[0].p]))
            }
            SystemKind::Sse | SystemKind::Qsd => {
                let b = cfg.basis_config();
                let g = grid(cfg)?;
                analyze_generic(cfg, &quantum_system(cfg, true)?, &quantum_start(cfg), run, |s| {
                    Ok(wigner_sum(s, &b, &g)?.as_slice().to_vec())
                })
            }
            SystemKind::Gaussian => Err(unsupported("analyze", kind)),
        },
        Subcommand::Stationary => {
            if !kind.is_quantum() {
                return Err(unsupported("stationary", kind));
            }
            let (st, s) = stationary_summary(cfg)?;
            let mut h = toml::Table::new();
            h.insert("kind".into(), "density-matrix".into());
            h.insert("dim".into(), (s.dim as i64).into());
            h.insert("temperature".into(), s.temperature.into());
            h.insert("gamma".into(), s.gamma.into());
            h.insert("residual".into(), s.residual.into());
            h.insert("layout".into(), "column-major, re/im interleaved".into());
            let payload: Vec<f64> = st.rho.iter().flat_map(|c| [c.re, c.im]).collect();
            run.binary("stationary.bin", &h, &payload)?;
            let rows: Vec<Vec<String>> =
                st.eigenvalues().iter().enumerate().map(|(i, e)| vec![i.to_string(), fmt(*e)]).collect();
            run.csv("stationary_eigenvalues.csv", &["index", "eigenvalue"], &rows)?;
            run.toml("stationary.toml", &s)
        }
        Subcommand::Wigner => {
            if !kind.is_quantum() {
                return Err(unsupported("wigner", kind));
            }
            wigner_workflow(cfg, run)
        }
        Subcommand::Compare => {
            let rows = compare_rows(cfg)?;
            write_compare(run, cfg, &rows)
        }
    }
}
