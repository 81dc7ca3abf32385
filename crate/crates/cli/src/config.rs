//! Experiment configuration files (TOML).
//!
//! Every section is optional and every key has a default, so an empty file
//! is a valid configuration. Unknown keys are rejected. The bath temperature
//! is given either as `temperature` (k_B T) or as `t_b` (k_B T / V_B), never
//! both; with neither, `t_b = 0.1`.

use std::path::{Path, PathBuf};

use qtps::dynamics::{QuarticWell, SimParams};
use qtps::fock::{BasisConfig, DisplacementForm};
use qtps::system::NoiseKind;
use qtps::tis::{FluxConfig, TisConfig};
use qtps::tps::{EnsembleKind, StateRegions, TpsConfig, Transform, UmbrellaConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    #[default]
    Classical,
    /// Real-noise stochastic Schrodinger equation.
    Sse,
    /// Complex-noise quantum state diffusion.
    Qsd,
    Gaussian,
}

impl SystemKind {
    pub fn is_quantum(&self) -> bool {
        matches!(self, SystemKind::Sse | SystemKind::Qsd)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialSection {
    pub c4: f64,
    pub c2: f64,
    pub mass: f64,
}

impl Default for PotentialSection {
    fn default() -> Self {
        Self { c4: 0.01, c2: 0.35, mass: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BathSection {
    pub gamma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_b: Option<f64>,
    pub dt: f64,
}

impl Default for BathSection {
    fn default() -> Self {
        Self { gamma: 0.25, temperature: None, t_b: None, dt: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisSection {
    pub dim: usize,
    /// Reference oscillator frequency; defaults to the well curvature `sqrt(4 c2 / m)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    pub pad: usize,
    pub displacement: DisplacementForm,
}

impl Default for BasisSection {
    fn default() -> Self {
        Self { dim: 60, omega: None, pad: 8, displacement: DisplacementForm::Unitary }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianSection {
    /// Frozen variances; default to the minimum-uncertainty packet of the basis oscillator.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub var_x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub var_p: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub steps: u64,
    pub record_every: u64,
    /// Start position; defaults to the left minimum.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    pub p0: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { steps: 100_000, record_every: 100, x0: None, p0: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TpsSection {
    pub moves: usize,
    /// Path duration in time units.
    pub path_time: f64,
    pub dp_width: f64,
    pub mirror_fraction: f64,
    pub transforms: Vec<Transform>,
    pub ensemble: EnsembleKind,
    pub acceptance_floor: f64,
    pub floor_window: usize,
    /// Brute-force attempts when looking for an initial path.
    pub init_attempts: usize,
    /// Slice stride of the visiting-ensemble profile (0 disables it).
    pub profile_every: usize,
    /// `t'` for the correlation function (time units); 0 uses the path end.
    pub t_prime: f64,
    /// Moves between checkpoints (0 checkpoints only at the end).
    pub checkpoint_every: usize,
}

impl Default for TpsSection {
    fn default() -> Self {
        let d = TpsConfig::default();
        Self {
            moves: d.n_moves,
            path_time: 10.0,
            dp_width: d.dp_width,
            mirror_fraction: d.mirror_fraction,
            transforms: d.transforms,
            ensemble: d.ensemble,
            acceptance_floor: d.acceptance_floor,
            floor_window: d.floor_window,
            init_attempts: 100_000,
            profile_every: 0,
            t_prime: 0.0,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TisSection {
    pub flux_steps: u64,
    pub core_offset: f64,
    pub flux_blocks: usize,
    pub min_crossings: u64,
    pub moves_per_interface: usize,
    pub pilot_moves: usize,
    pub dp_width: f64,
    pub max_path_time: f64,
    pub target_probability: f64,
    pub min_spacing: f64,
    pub max_interfaces: usize,
    pub max_seed_time: f64,
    /// Explicit interfaces; when empty they are placed from pilot runs.
    pub interfaces: Vec<f64>,
}

impl Default for TisSection {
    fn default() -> Self {
        let f = FluxConfig::default();
        let t = TisConfig::default();
        Self {
            flux_steps: f.n_steps,
            core_offset: f.core_offset,
            flux_blocks: f.n_blocks,
            min_crossings: f.min_crossings,
            moves_per_interface: t.moves_per_interface,
            pilot_moves: t.pilot_moves,
            dp_width: t.dp_width,
            max_path_time: t.max_path_time,
            target_probability: t.target_probability,
            min_spacing: t.min_spacing,
            max_interfaces: t.max_interfaces,
            max_seed_time: t.max_seed_time,
            interfaces: vec![],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfptSection {
    pub cutoff: f64,
    pub trajectories: usize,
}

impl Default for MfptSection {
    fn default() -> Self {
        Self { cutoff: 2000.0, trajectories: 200 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WignerSection {
    pub x_min: f64,
    pub x_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub nx: usize,
    pub np: usize,
    /// Coherent propagation time and number of snapshots.
    pub time: f64,
    pub snapshots: usize,
    /// Step of the coherent propagator.
    pub dt: f64,
}

impl Default for WignerSection {
    fn default() -> Self {
        Self {
            x_min: -8.0,
            x_max: 8.0,
            p_min: -4.0,
            p_max: 4.0,
            nx: 81,
            np: 61,
            time: 2.76e5,
            snapshots: 3,
            dt: 100.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Tis,
    Mfpt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    /// Barrier-normalized temperatures of the sweep.
    pub t_b: Vec<f64>,
    pub methods: Vec<Method>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self { t_b: vec![0.1, 0.2, 0.3, 0.4, 0.5], methods: vec![Method::Tis] }
    }
}

/// A complete experiment description.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemKind,
    pub seed: u64,
    /// Output location and thread count do not change results and are not
    /// written to the config snapshot.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
    pub potential: PotentialSection,
    pub bath: BathSection,
    pub basis: BasisSection,
    pub gaussian: GaussianSection,
    pub regions: StateRegions,
    pub simulate: SimulateSection,
    pub tps: TpsSection,
    pub umbrella: UmbrellaConfig,
    pub tis: TisSection,
    pub mfpt: MfptSection,
    pub wigner: WignerSection,
    pub compare: CompareSection,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Line of `key = ...` inside `[section]` (top level when `section` is empty).
pub fn key_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

impl ExperimentConfig {
    /// Parses and validates a configuration, applying `overrides`
    /// (`dotted.key=value`, value in TOML syntax or a bare string) on top.
    pub fn parse(text: &str, overrides: &[String]) -> CliResult<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config {
            line: e.span().map(|s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = if overrides.is_empty() {
            toml::from_str(text).map_err(|e| CliError::Config {
                line: e.span().map(|s| line_of(text, s.start)),
                message: e.message().to_string(),
            })?
        } else {
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config {
                line: None,
                message: format!("after overrides: {}", e.message()),
            })?
        };
        cfg.validate_with(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        self.validate_with("")
    }

    fn validate_with(&self, text: &str) -> CliResult<()> {
        let err = |section: &str, key: &str, message: String| CliError::Config { line: key_line(text, section, key), message };
        let p = &self.potential;
        for (k, v) in [("c4", p.c4), ("c2", p.c2), ("mass", p.mass)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(err("potential", k, format!("potential.{k} must be > 0, got {v}")));
            }
        }
        let b = &self.bath;
        if b.temperature.is_some() && b.t_b.is_some() {
            let line = key_line(text, "bath", "t_b").max(key_line(text, "bath", "temperature"));
            return Err(CliError::Config { line, message: "set either bath.temperature or bath.t_b, not both".into() });
        }
        if let Some(t) = b.temperature.or(b.t_b) {
            if !(t.is_finite() && t > 0.0) {
                let key = if b.t_b.is_some() { "t_b" } else { "temperature" };
                return Err(err("bath", key, format!("bath.{key} must be > 0, got {t}")));
            }
        }
        if !(b.gamma >= 0.0 && b.gamma.is_finite()) {
            return Err(err("bath", "gamma", format!("bath.gamma must be >= 0, got {}", b.gamma)));
        }
        if !(b.dt > 0.0 && b.dt.is_finite()) {
            return Err(err("bath", "dt", format!("bath.dt must be > 0, got {}", b.dt)));
        }
        if self.basis.dim < 2 {
            return Err(err("basis", "dim", "basis.dim must be >= 2".into()));
        }
        if let Some(w) = self.basis.omega {
            if !(w > 0.0) {
                return Err(err("basis", "omega", format!("basis.omega must be > 0, got {w}")));
            }
        }
        if !(self.regions.a_max < self.regions.b_min) {
            return Err(err("regions", "b_min", "regions.a_max must lie below regions.b_min".into()));
        }
        let t = &self.tis;
        if !t.interfaces.is_empty() {
            StateRegions::validate(&self.regions).map_err(CliError::from)?;
            qtps::tis::InterfaceSet::new(t.interfaces.clone(), &self.regions)
                .map_err(|e| err("tis", "interfaces", e.to_string()))?;
        }
        if !(t.target_probability > 0.0 && t.target_probability < 1.0) {
            return Err(err("tis", "target_probability", "tis.target_probability must lie in (0, 1)".into()));
        }
        if self.tps.path_time < 3.0 * b.dt {
            return Err(err("tps", "path_time", "tps.path_time must cover at least three steps".into()));
        }
        if !(0.0..=1.0).contains(&self.tps.mirror_fraction) {
            return Err(err("tps", "mirror_fraction", "tps.mirror_fraction must lie in [0, 1]".into()));
        }
        if self.mfpt.trajectories < 10 {
            return Err(err("mfpt", "trajectories", "mfpt.trajectories must be >= 10".into()));
        }
        if self.compare.t_b.iter().any(|&t| !(t > 0.0)) {
            return Err(err("compare", "t_b", "compare.t_b entries must be > 0".into()));
        }
        if let (Some(vx), Some(vp)) = (self.gaussian.var_x, self.gaussian.var_p) {
            if !(vx > 0.0 && vp > 0.0) {
                return Err(err("gaussian", "var_x", "Gaussian variances must be > 0".into()));
            }
        }
        Ok(())
    }

    pub fn well(&self) -> QuarticWell {
        QuarticWell::new(self.potential.c4, self.potential.c2)
    }

    /// `k_B T`, from `temperature` or `t_b * V_B` (default `t_b = 0.1`).
    pub fn kt(&self) -> f64 {
        match (self.bath.temperature, self.bath.t_b) {
            (Some(t), _) => t,
            (None, Some(tb)) => tb * self.well().barrier_height(),
            (None, None) => 0.1 * self.well().barrier_height(),
        }
    }

    pub fn barrier_temperature(&self) -> f64 {
        self.kt() / self.well().barrier_height()
    }

    pub fn sim_params(&self) -> SimParams {
        SimParams {
            gamma: self.bath.gamma,
            temperature: self.kt(),
            dt: self.bath.dt,
            c4: self.potential.c4,
            c2: self.potential.c2,
            mass: self.potential.mass,
            ..SimParams::new(self.bath.gamma, self.kt(), self.bath.dt)
        }
    }

    pub fn basis_config(&self) -> BasisConfig {
        let mut cfg = BasisConfig::for_well(self.basis.dim, self.potential.c2);
        cfg.mass = self.potential.mass;
        cfg.osc_freq = self.basis.omega.unwrap_or((4.0 * self.potential.c2 / self.potential.mass).sqrt());
        cfg.pad = self.basis.pad;
        cfg
    }

    pub fn noise(&self) -> NoiseKind {
        if self.system == SystemKind::Qsd {
            NoiseKind::Complex
        } else {
            NoiseKind::Real
        }
    }

    /// Same experiment at another barrier-normalized temperature.
    pub fn at_barrier_temperature(&self, t_b: f64) -> Self {
        let mut c = self.clone();
        c.bath.temperature = None;
        c.bath.t_b = Some(t_b);
        c
    }

    pub fn tps_config(&self) -> TpsConfig {
        TpsConfig {
            n_moves: self.tps.moves,
            dp_width: self.tps.dp_width,
            mirror_fraction: self.tps.mirror_fraction,
            transforms: self.tps.transforms.clone(),
            ensemble: self.tps.ensemble,
            regions: self.regions,
            acceptance_floor: self.tps.acceptance_floor,
            floor_window: self.tps.floor_window,
            store_every: 0,
        }
    }

    pub fn flux_config(&self) -> FluxConfig {
        FluxConfig {
            n_steps: self.tis.flux_steps,
            core_offset: self.tis.core_offset,
            n_blocks: self.tis.flux_blocks,
            min_crossings: self.tis.min_crossings,
        }
    }

    pub fn tis_config(&self) -> TisConfig {
        TisConfig {
            core_offset: self.tis.core_offset,
            moves_per_interface: self.tis.moves_per_interface,
            pilot_moves: self.tis.pilot_moves,
            dp_width: self.tis.dp_width,
            max_path_time: self.tis.max_path_time,
            target_probability: self.tis.target_probability,
            min_spacing: self.tis.min_spacing,
            max_interfaces: self.tis.max_interfaces,
            max_seed_time: self.tis.max_seed_time,
        }
    }
}

fn apply_override(table: &mut toml::Table, item: &str) -> CliResult<()> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config { line: None, message: format!("override `{item}` is not key=value") })?;
    let value: toml::Value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let keys: Vec<&str> = path.trim().split('.').collect();
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        cur = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Config { line: None, message: format!("override path `{path}` crosses a non-table") })?;
    }
    let last = keys[keys.len() - 1].to_string();
    // Setting one temperature key replaces the other.
    if keys.len() == 2 && keys[0] == "bath" && (last == "t_b" || last == "temperature") {
        cur.remove(if last == "t_b" { "temperature" } else { "t_b" });
    }
    cur.insert(last, value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn barrier_temperature_conversion() {
        let c = ExperimentConfig::parse("[bath]\nt_b = 0.1\n", &[]).unwrap();
        assert!((c.kt() - 0.30625).abs() < 1e-15);
        assert!((c.well().barrier_height() - 3.0625).abs() < 1e-15);
    }

    #[test]
    fn both_temperatures_is_an_error_with_line() {
        let e = ExperimentConfig::parse("seed = 3\n[bath]\ntemperature = 0.3\nt_b = 0.1\n", &[]).unwrap_err();
        match e {
            CliError::Config { line, .. } => assert_eq!(line, Some(4)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_reports_line() {
        let e = ExperimentConfig::parse("[bath]\ngamma = 0.2\ngama = 0.3\n", &[]).unwrap_err();
        match e {
            CliError::Config { line, message } => {
                assert_eq!(line, Some(3));
                assert!(message.contains("gama"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_file_is_defaults_and_round_trips() {
        let c = ExperimentConfig::parse("", &[]).unwrap();
        assert_eq!(c, ExperimentConfig::default());
        let again = ExperimentConfig::parse(&c.to_toml(), &[]).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn overrides_take_precedence() {
        let c = ExperimentConfig::parse(
            "system = \"sse\"\n[bath]\ntemperature = 0.5\n",
            &["bath.t_b=0.3".into(), "basis.dim=40".into(), "system=classical".into()],
        )
        .unwrap();
        assert_eq!(c.bath.temperature, None);
        assert_eq!(c.bath.t_b, Some(0.3));
        assert_eq!(c.basis.dim, 40);
        assert_eq!(c.system, SystemKind::Classical);
    }
}
