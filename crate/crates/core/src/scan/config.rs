//! Scan configuration: one JSON document, strictly validated.

use std::f64::consts::FRAC_1_SQRT_2;
use std::path::{Path, PathBuf};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::decomposition::DecompositionConfig;
use crate::error::ConfigIssue;
use crate::fiber::{FiberSpec, IndexModel, WINDOW_NM};
use crate::fields::{self, GridSpec, LpLabel, ModalState, Polarization, BASIS_LEN};
use crate::fit;
use crate::propagation::{KerrConfig, PulseShape, PulseSpec, SplitStepConfig};
use crate::tomography::MleConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum FiberPreset {
    #[default]
    #[serde(rename = "780hp")]
    Hp780,
}

/// A preset with optional overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FiberConfig {
    #[serde(default)]
    pub preset: FiberPreset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub core_radius_um: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numerical_aperture: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<IndexModel>,
}

impl FiberConfig {
    pub fn build(&self) -> Result<FiberSpec> {
        let mut f = match self.preset {
            FiberPreset::Hp780 => FiberSpec::preset_780hp(),
        };
        if let Some(index) = self.index {
            f.index = index;
        }
        if let Some(na) = self.numerical_aperture {
            match &mut f.index {
                IndexModel::MatchedNa { numerical_aperture, .. } => *numerical_aperture = na,
                _ => return Err(Error::config("fiber.numerical_aperture", "only applies to a matched_na index model")),
            }
        }
        if let Some(a) = self.core_radius_um {
            f.core_radius_um = a;
        }
        if let Some(l) = self.length_m {
            f.length_m = l;
        }
        f.validate()?;
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LpTerm {
    pub lp: LpLabel,
    pub pol: Polarization,
    /// Complex weight `[re, im]`.
    #[serde(default = "unit_weight")]
    pub weight: [f64; 2],
}

fn unit_weight() -> [f64; 2] {
    [1.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalInput {
    /// Weighted sum of uniformly polarized LP modes.
    Combination(Vec<LpTerm>),
    /// Explicit `[re, im]` coefficients over the six vector modes.
    Coefficients([[f64; 2]; BASIS_LEN]),
}

impl Default for SignalInput {
    /// `(LP01 V + LP11x V)/√2`.
    fn default() -> Self {
        SignalInput::Combination(vec![
            LpTerm { lp: LpLabel::Lp01, pol: Polarization::V, weight: [FRAC_1_SQRT_2, 0.0] },
            LpTerm { lp: LpLabel::Lp11x, pol: Polarization::V, weight: [FRAC_1_SQRT_2, 0.0] },
        ])
    }
}

impl SignalInput {
    pub fn state(&self) -> Result<ModalState> {
        match self {
            SignalInput::Combination(terms) => {
                if terms.is_empty() {
                    return Err(Error::config("signal.combination", "needs at least one term"));
                }
                let parts: Vec<_> = terms
                    .iter()
                    .map(|t| (C64::new(t.weight[0], t.weight[1]), fields::lp_combination(t.lp, t.pol)))
                    .collect();
                fields::combine(&parts).map_err(|_| Error::config("signal.combination", "weights cancel to zero"))
            }
            SignalInput::Coefficients(c) => ModalState::new(c.map(|[re, im]| C64::new(re, im)))
                .map_err(|_| Error::config("signal.coefficients", "coefficients must have nonzero finite norm")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnergyGrid {
    List(Vec<f64>),
    Range { start_nj: f64, stop_nj: f64, points: usize },
}

impl Default for EnergyGrid {
    fn default() -> Self {
        let mut v: Vec<f64> = (0..=8).map(|k| 0.5 * k as f64).collect();
        v.push(4.38);
        EnergyGrid::List(v)
    }
}

impl EnergyGrid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            EnergyGrid::List(v) => v.clone(),
            EnergyGrid::Range { start_nj, stop_nj, points } => linspace(*start_nj, *stop_nj, *points),
        }
    }
}

fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![start],
        n => (0..n).map(|i| start + (stop - start) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpConfig {
    #[serde(default = "default_pump_nm")]
    pub wavelength_nm: f64,
    #[serde(default = "default_pump_fs")]
    pub duration_fwhm_fs: f64,
    #[serde(default = "default_shape")]
    pub shape: PulseShape,
    #[serde(default = "default_pump_pol")]
    pub polarization: Polarization,
    /// Pulse energies before the fiber (nJ).
    #[serde(default)]
    pub energies_nj: EnergyGrid,
    /// Fraction of the pulse energy launched into the guided pump mode.
    #[serde(default = "default_launch")]
    pub launch_efficiency: f64,
    #[serde(default = "default_rep_rate")]
    pub repetition_rate_mhz: f64,
}

fn default_pump_nm() -> f64 {
    790.0
}
fn default_pump_fs() -> f64 {
    150.0
}
fn default_shape() -> PulseShape {
    PulseShape::Gaussian
}
fn default_pump_pol() -> Polarization {
    Polarization::V
}
fn default_launch() -> f64 {
    0.25
}
fn default_rep_rate() -> f64 {
    80.0
}

impl Default for PumpConfig {
    fn default() -> Self {
        PumpConfig {
            wavelength_nm: default_pump_nm(),
            duration_fwhm_fs: default_pump_fs(),
            shape: default_shape(),
            polarization: default_pump_pol(),
            energies_nj: EnergyGrid::default(),
            launch_efficiency: default_launch(),
            repetition_rate_mhz: default_rep_rate(),
        }
    }
}

impl PumpConfig {
    /// Launched pulse for a nominal energy.
    pub fn pulse(&self, energy_nj: f64) -> PulseSpec {
        PulseSpec {
            center_wavelength_nm: self.wavelength_nm,
            energy_nj: energy_nj * self.launch_efficiency,
            duration_fwhm_fs: self.duration_fwhm_fs,
            shape: self.shape,
            repetition_rate_mhz: self.repetition_rate_mhz,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayGrid {
    pub start_ps: f64,
    pub stop_ps: f64,
    pub points: usize,
}

impl Default for DelayGrid {
    /// 54 delays across a 2.7 ps window centred on zero.
    fn default() -> Self {
        DelayGrid { start_ps: -1.35, stop_ps: 1.35, points: 54 }
    }
}

impl DelayGrid {
    pub fn values(&self) -> Vec<f64> {
        linspace(self.start_ps, self.stop_ps, self.points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Closed-form walk-off B-integral.
    #[default]
    BIntegral,
    /// Split-step envelope propagation.
    SplitStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Analyses {
    #[serde(default = "yes")]
    pub unwrap_trace: bool,
    #[serde(default)]
    pub decomposition_map: bool,
    #[serde(default)]
    pub tomography: bool,
}

fn yes() -> bool {
    true
}

impl Default for Analyses {
    fn default() -> Self {
        Analyses { unwrap_trace: true, decomposition_map: false, tomography: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSettings {
    /// Super-Gaussian order; `None` selects the best of 1..=4.
    #[serde(default)]
    pub order: Option<u32>,
    /// Delay the intensity-difference trace is normalized to.
    #[serde(default)]
    pub reference_delay_ps: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings { order: None, reference_delay_ps: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomographySettings {
    #[serde(default = "default_shots")]
    pub shots: u64,
    /// Flat background probability per shot.
    #[serde(default)]
    pub background: f64,
    #[serde(default)]
    pub mle: MleConfig,
}

fn default_shots() -> u64 {
    100_000
}

impl Default for TomographySettings {
    fn default() -> Self {
        TomographySettings { shots: default_shots(), background: 0.0, mle: MleConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default = "default_run_id")]
    pub run_id: String,
    #[serde(default)]
    pub fiber: FiberConfig,
    #[serde(default = "default_signal_nm")]
    pub signal_wavelength_nm: f64,
    #[serde(default)]
    pub signal: SignalInput,
    #[serde(default)]
    pub pump: PumpConfig,
    #[serde(default)]
    pub delays: DelayGrid,
    #[serde(default)]
    pub kerr: KerrConfig,
    #[serde(default)]
    pub engine: Engine,
    #[serde(default)]
    pub split_step: SplitStepConfig,
    /// Transverse grid; defaults to ±4 core radii at 256 samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub analyses: Analyses,
    #[serde(default)]
    pub fit: FitSettings,
    /// Per-point seed and parallelism are derived by the scan.
    #[serde(default)]
    pub decomposition: DecompositionConfig,
    #[serde(default)]
    pub tomography: TomographySettings,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

fn default_run_id() -> String {
    "run".into()
}
fn default_signal_nm() -> f64 {
    647.0
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_jobs() -> usize {
    1
}

impl Default for ScanConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl ScanConfig {
    /// Parse JSON text; `origin` is only used in error messages.
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ScanConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if inner.is_data() {
                Error::Config(vec![ConfigIssue {
                    key: if path.is_empty() || path == "." { "<root>".into() } else { path },
                    message: inner.to_string(),
                }])
            } else {
                Error::Parse { path: origin.to_path_buf(), message: inner.to_string() }
            }
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    /// Canonical pretty JSON with every default filled in.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn energies(&self) -> Vec<f64> {
        self.pump.energies_nj.values()
    }

    pub fn fiber_spec(&self) -> Result<FiberSpec> {
        self.fiber.build()
    }

    pub fn grid_spec(&self, fiber: &FiberSpec) -> GridSpec {
        self.grid.unwrap_or_else(|| GridSpec::for_core(fiber.core_radius_um))
    }

    /// Every problem at once, keyed by the offending field.
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        let mut push = |key: &str, msg: String| issues.push(ConfigIssue { key: key.into(), message: msg });
        let describe = |e: Error| match e {
            Error::Config(is) => is.into_iter().map(|i| i.message).collect::<Vec<_>>().join("; "),
            other => other.to_string(),
        };
        if self.run_id.is_empty()
            || !self.run_id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '.' | '+'))
        {
            push("run_id", "must be non-empty and use only letters, digits, '-', '.', '+'".into());
        }
        let fiber = match self.fiber.build() {
            Ok(f) => Some(f),
            Err(e) => {
                push("fiber", describe(e));
                None
            }
        };
        let in_window = |x: f64| x >= WINDOW_NM.0 && x <= WINDOW_NM.1;
        if !in_window(self.signal_wavelength_nm) {
            push("signal_wavelength_nm", format!("must lie in {}–{} nm", WINDOW_NM.0, WINDOW_NM.1));
        }
        if let Err(e) = self.signal.state() {
            push("signal", describe(e));
        }
        let p = &self.pump;
        if !in_window(p.wavelength_nm) {
            push("pump.wavelength_nm", format!("must lie in {}–{} nm", WINDOW_NM.0, WINDOW_NM.1));
        }
        if !(p.duration_fwhm_fs > 0.0 && p.duration_fwhm_fs.is_finite()) {
            push("pump.duration_fwhm_fs", "must be > 0".into());
        }
        if !(p.launch_efficiency > 0.0 && p.launch_efficiency <= 1.0) {
            push("pump.launch_efficiency", "must lie in (0, 1]".into());
        }
        if !(p.repetition_rate_mhz > 0.0) {
            push("pump.repetition_rate_mhz", "must be > 0".into());
        }
        let energies = self.energies();
        if let EnergyGrid::Range { start_nj, stop_nj, points } = p.energies_nj {
            if points == 0 {
                push("pump.energies_nj.points", "must be ≥ 1".into());
            }
            if points > 1 && !(stop_nj > start_nj) {
                push("pump.energies_nj", "stop_nj must exceed start_nj".into());
            }
        }
        if energies.is_empty() {
            push("pump.energies_nj", "needs at least one energy".into());
        }
        if energies.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            push("pump.energies_nj", "energies must be finite and ≥ 0".into());
        }
        let d = &self.delays;
        if d.points == 0 {
            push("delays.points", "must be ≥ 1".into());
        }
        if !(d.start_ps.is_finite() && d.stop_ps.is_finite()) {
            push("delays", "start_ps and stop_ps must be finite".into());
        } else if d.points > 1 && !(d.stop_ps > d.start_ps) {
            push("delays", "grid must be increasing (stop_ps > start_ps)".into());
        }
        if let Err(e) = self.kerr.validate() {
            push("kerr", describe(e));
        }
        if self.engine == Engine::SplitStep && self.split_step.steps < 200 {
            push("split_step.steps", "must be ≥ 200".into());
        }
        if let Some(f) = &fiber {
            if let Err(e) = self.grid_spec(f).validate(f.core_radius_um) {
                push("grid", describe(e));
            }
        }
        if let Err(e) = self.decomposition.validate() {
            push("decomposition", describe(e));
        }
        if self.tomography.shots == 0 {
            push("tomography.shots", "must be ≥ 1".into());
        }
        if !(self.tomography.background >= 0.0) {
            push("tomography.background", "must be ≥ 0".into());
        }
        let m = &self.tomography.mle;
        if !(m.damping > 0.0 && m.damping <= 1.0) || m.max_iter == 0 || !(m.tol >= 0.0) {
            push("tomography.mle", "needs damping in (0, 1], max_iter ≥ 1, tol ≥ 0".into());
        }
        if let Some(n) = self.fit.order {
            if !(1..=fit::MAX_ORDER).contains(&n) {
                push("fit.order", format!("must lie in 1..={}", fit::MAX_ORDER));
            }
        }
        if !self.fit.reference_delay_ps.is_finite() {
            push("fit.reference_delay_ps", "must be finite".into());
        }
        if self.jobs == 0 {
            push("jobs", "must be ≥ 1".into());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }
}
