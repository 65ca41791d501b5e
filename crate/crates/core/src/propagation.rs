//! Signal propagation through the fiber: linear intramodal beating, the
//! closed-form cross-phase-modulation phase imparted by a walking-off pump
//! pulse, and a split-step envelope solver used to cross-check it.
//!
//! Unit audit of the XPM phase: the overlap `f_{p,m}` is in 1/m² and already
//! carries the transverse normalization, so the pump enters through its power
//! `P(t) = I_p(t)·A_eff,p` (W). The phase is then
//! `φ_m(T) = (8π n₂ / λ_s) · f_{p,m} · ∫₀ᴸ P(T − d_w z) dz`, dimensionless with
//! n₂ in m²/W.
//!
//! Delay convention: `Δτ > 0` means the pump arrives earlier than the signal,
//! measured at the middle of the fiber, so `Δτ = 0` is the centre of the
//! walk-off window. The offset in the B-integral is `T = d_w·L/2 − Δτ`.

use std::f64::consts::{LN_2, PI};

use num_complex::Complex64 as C64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::exec::{self, Parallelism};
use crate::fiber::{self, FiberSpec, GuidedMode, ModeId, WalkOff};
use crate::fields::{ModalState, Polarization, BASIS, BASIS_LEN};
use crate::{quad, Error, Result};

/// Fused-silica nonlinear index (m²/W).
pub const DEFAULT_N2: f64 = 2.6e-20;

/// `2 arccosh(√2)`: FWHM of sech² in units of its width parameter.
const SECH2_FWHM_FACTOR: f64 = 1.762_747_174_039_086;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseShape {
    Gaussian,
    Sech2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSpec {
    pub center_wavelength_nm: f64,
    pub energy_nj: f64,
    pub duration_fwhm_fs: f64,
    pub shape: PulseShape,
    /// Metadata only.
    #[serde(default = "default_rep_rate")]
    pub repetition_rate_mhz: f64,
}

fn default_rep_rate() -> f64 {
    80.0
}

impl PulseSpec {
    pub fn pump_790() -> Self {
        PulseSpec {
            center_wavelength_nm: 790.0,
            energy_nj: 4.3,
            duration_fwhm_fs: 150.0,
            shape: PulseShape::Gaussian,
            repetition_rate_mhz: default_rep_rate(),
        }
    }

    pub fn with_energy(&self, energy_nj: f64) -> Self {
        PulseSpec { energy_nj, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.energy_nj >= 0.0) || !self.energy_nj.is_finite() {
            return Err(Error::Domain(format!("pulse energy must be ≥ 0, got {}", self.energy_nj)));
        }
        if !(self.duration_fwhm_fs > 0.0) || !self.duration_fwhm_fs.is_finite() {
            return Err(Error::Domain(format!("pulse duration must be > 0, got {}", self.duration_fwhm_fs)));
        }
        Ok(())
    }

    pub fn energy_j(&self) -> f64 {
        self.energy_nj * 1e-9
    }

    pub fn fwhm_s(&self) -> f64 {
        self.duration_fwhm_fs * 1e-15
    }

    /// Peak power (W) such that `∫ P dt` equals the pulse energy.
    pub fn peak_power(&self) -> f64 {
        let tau = self.fwhm_s();
        match self.shape {
            PulseShape::Gaussian => self.energy_j() / (tau * (PI / (4.0 * LN_2)).sqrt()),
            PulseShape::Sech2 => self.energy_j() / (2.0 * tau / SECH2_FWHM_FACTOR),
        }
    }

    /// Instantaneous power `P(t)` in W, `t` in s.
    pub fn power(&self, t: f64) -> f64 {
        let tau = self.fwhm_s();
        let p0 = self.peak_power();
        match self.shape {
            PulseShape::Gaussian => p0 * (-4.0 * LN_2 * (t / tau).powi(2)).exp(),
            PulseShape::Sech2 => {
                let x = (t * SECH2_FWHM_FACTOR / tau).abs();
                // sech² x = 4 e^{−2x} / (1 + e^{−2x})²
                let e = (-2.0 * x).exp();
                p0 * 4.0 * e / (1.0 + e).powi(2)
            }
        }
    }
}

/// Kerr-medium parameters and the static input coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KerrConfig {
    #[serde(default = "default_n2")]
    pub n2: f64,
    #[serde(default = "one")]
    pub co_pol_factor: f64,
    #[serde(default = "one_third")]
    pub cross_pol_factor: f64,
    /// Unitary applied to the coefficient vector at the fiber input
    /// (rows/columns in basis order). `None` means identity.
    #[serde(default)]
    pub coupling_matrix: Option<[[C64; BASIS_LEN]; BASIS_LEN]>,
}

fn default_n2() -> f64 {
    DEFAULT_N2
}
fn one() -> f64 {
    1.0
}
fn one_third() -> f64 {
    1.0 / 3.0
}

impl Default for KerrConfig {
    fn default() -> Self {
        KerrConfig { n2: DEFAULT_N2, co_pol_factor: 1.0, cross_pol_factor: 1.0 / 3.0, coupling_matrix: None }
    }
}

impl KerrConfig {
    pub fn validate(&self) -> Result<()> {
        // n2 = 0 is accepted as the linear limit.
        if !(self.n2 >= 0.0) || !self.n2.is_finite() {
            return Err(Error::Domain(format!("n2 must be ≥ 0, got {}", self.n2)));
        }
        for (name, v) in [("co_pol_factor", self.co_pol_factor), ("cross_pol_factor", self.cross_pol_factor)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be finite and ≥ 0, got {v}")));
            }
        }
        if let Some(u) = &self.coupling_matrix {
            let dev = unitarity_defect(u);
            if !(dev <= 1e-10) {
                return Err(Error::Domain(format!("coupling matrix is not unitary (max |U†U − I| = {dev:e})")));
            }
        }
        Ok(())
    }
}

/// `max |(U†U − I)_{ij}|`.
pub fn unitarity_defect(u: &[[C64; BASIS_LEN]; BASIS_LEN]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..BASIS_LEN {
        for j in 0..BASIS_LEN {
            let s: C64 = (0..BASIS_LEN).map(|k| u[k][i].conj() * u[k][j]).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((s - want).norm());
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PropagationResult {
    pub output_state: ModalState,
    /// Kerr phase acquired by each basis mode (rad).
    pub per_mode_phase: [f64; BASIS_LEN],
    /// Always 1: losses are not modelled.
    pub per_mode_transmission: [f64; BASIS_LEN],
}

/// Pump intensity `P(t) / A_eff` in W/m², `t` in s.
pub fn pump_intensity(pulse: &PulseSpec, pump_mode: &GuidedMode, t: f64) -> Result<f64> {
    pulse.validate()?;
    Ok(pulse.power(t) / pump_mode.effective_area()?)
}

/// `∫₀ᴸ P(T − d_w z) dz` in W·m.
pub fn pump_path_integral(pulse: &PulseSpec, d_w: f64, length_m: f64, offset: f64) -> Result<f64> {
    pulse.validate()?;
    if pulse.energy_nj == 0.0 {
        return Ok(0.0);
    }
    if d_w == 0.0 {
        return Ok(length_m * pulse.power(offset));
    }
    match pulse.shape {
        PulseShape::Gaussian => {
            let tau = pulse.fwhm_s();
            let sa = (4.0 * LN_2).sqrt() / tau;
            let a = sa * offset;
            let b = sa * (offset - d_w * length_m);
            if (a - b).abs() < 1e-4 {
                return quad::integrate(|z| pulse.power(offset - d_w * z), 0.0, length_m, 1e-12);
            }
            let diff = if a.min(b) > 0.0 {
                libm::erfc(b) - libm::erfc(a)
            } else if a.max(b) < 0.0 {
                libm::erfc(-a) - libm::erfc(-b)
            } else {
                libm::erf(a) - libm::erf(b)
            };
            Ok(pulse.peak_power() * PI.sqrt() / (2.0 * sa) * diff / d_w)
        }
        PulseShape::Sech2 => quad::integrate(|z| pulse.power(offset - d_w * z), 0.0, length_m, 1e-8),
    }
}

/// Kerr phase prefactor `8π n₂ / λ_s` (rad·m/W when multiplied by `f·∫P dz`).
fn kerr_prefactor(n2: f64, signal_nm: f64) -> f64 {
    8.0 * PI * n2 / (signal_nm * 1e-9)
}

/// XPM phase imparted on `signal_mode` by the pump, before any polarization
/// factor. `offset` is the B-integral time argument `T` in s.
pub fn b_integral_phase(
    pump: &PulseSpec,
    pump_mode: &GuidedMode,
    signal_mode: &GuidedMode,
    fiber: &FiberSpec,
    d_w: f64,
    offset: f64,
    kerr: &KerrConfig,
) -> Result<f64> {
    kerr.validate()?;
    let f = fiber::overlap_integral(pump_mode, signal_mode)?;
    let path = pump_path_integral(pump, d_w, fiber.length_m, offset)?;
    Ok(kerr_prefactor(kerr.n2, signal_mode.wavelength_nm) * f * path)
}

/// B-integral time argument for a pump lead `delay` (s).
pub fn delay_to_offset(delay: f64, d_w: f64, length_m: f64) -> f64 {
    0.5 * d_w * length_m - delay
}

fn basis_modes(modes: &[GuidedMode]) -> Result<[GuidedMode; BASIS_LEN]> {
    let mut out = [modes.first().copied().ok_or_else(|| Error::Domain("no guided modes".into()))?; BASIS_LEN];
    for (o, id) in out.iter_mut().zip(BASIS) {
        *o = *fiber::find_mode(modes, id)?;
    }
    Ok(out)
}

/// Input coupling followed by `c_m → c_m exp(i β_m z)`. Phases are taken
/// relative to HE11 so large common phases do not cost precision; the common
/// factor is removed by the gauge anyway.
pub fn linear_propagate(
    state: &ModalState,
    modes: &[GuidedMode],
    distance_m: f64,
    kerr: &KerrConfig,
) -> Result<ModalState> {
    if !(distance_m >= 0.0) || !distance_m.is_finite() {
        return Err(Error::Domain(format!("distance must be ≥ 0, got {distance_m}")));
    }
    let basis = basis_modes(modes)?;
    let coupled = couple(state.coeffs(), kerr);
    let beta_ref = basis[0].beta;
    let mut out = [C64::new(0.0, 0.0); BASIS_LEN];
    for k in 0..BASIS_LEN {
        out[k] = coupled[k] * C64::from_polar(1.0, (basis[k].beta - beta_ref) * distance_m);
    }
    ModalState::new(out)
}

fn couple(c: &[C64; BASIS_LEN], kerr: &KerrConfig) -> [C64; BASIS_LEN] {
    match &kerr.coupling_matrix {
        None => *c,
        Some(u) => std::array::from_fn(|i| (0..BASIS_LEN).map(|j| u[i][j] * c[j]).sum()),
    }
}

/// Everything about the fiber and pump geometry that the XPM phase needs,
/// computed once and reused across delays and energies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct XpmModel {
    pub fiber: FiberSpec,
    pub pump_nm: f64,
    pub signal_nm: f64,
    pub pump_mode: GuidedMode,
    pub signal_modes: [GuidedMode; BASIS_LEN],
    /// `f_{p,m}` in 1/m².
    pub overlaps: [f64; BASIS_LEN],
    /// Fraction of each mode's power co-polarized with the pump.
    pub co_fractions: [f64; BASIS_LEN],
    pub pump_polarization: Polarization,
    pub walk_off: WalkOff,
}

impl XpmModel {
    pub fn new(fiber: &FiberSpec, pump_nm: f64, signal_nm: f64, pump_polarization: Polarization) -> Result<Self> {
        fiber.validate()?;
        let pump_modes = fiber::solve_vector_modes(fiber, pump_nm)?;
        let pump_mode = *fiber::find_mode(&pump_modes, ModeId::HE11X)
            .map_err(|_| Error::config("pump.center_wavelength_nm", "pump fundamental mode is not guided"))?;
        let signal = fiber::solve_vector_modes(fiber, signal_nm)?;
        let signal_modes = basis_modes(&signal)?;
        let mut overlaps = [0.0; BASIS_LEN];
        for (o, m) in overlaps.iter_mut().zip(&signal_modes) {
            *o = fiber::overlap_integral(&pump_mode, m)?;
        }
        let jones = pump_polarization.jones();
        let co_fractions = signal_modes.map(|m| co_polarized_fraction(&m, jones));
        Ok(XpmModel {
            fiber: *fiber,
            pump_nm,
            signal_nm,
            pump_mode,
            signal_modes,
            overlaps,
            co_fractions,
            pump_polarization,
            walk_off: fiber::walk_off_parameter(fiber, pump_nm, signal_nm)?,
        })
    }

    pub fn d_w(&self) -> f64 {
        self.walk_off.seconds_per_meter
    }

    /// Polarization weight `q_m` of each mode.
    pub fn polarization_factors(&self, kerr: &KerrConfig) -> [f64; BASIS_LEN] {
        self.co_fractions.map(|c| c * kerr.co_pol_factor + (1.0 - c) * kerr.cross_pol_factor)
    }

    /// Phase rate constants `q_m (8π n₂/λ_s) f_{p,m}` in rad/(W·m).
    pub fn rate_constants(&self, kerr: &KerrConfig) -> [f64; BASIS_LEN] {
        let q = self.polarization_factors(kerr);
        let pre = kerr_prefactor(kerr.n2, self.signal_nm);
        std::array::from_fn(|k| q[k] * pre * self.overlaps[k])
    }

    /// Per-mode XPM phases at pump lead `delay` (s).
    pub fn phases(&self, pump: &PulseSpec, delay: f64, kerr: &KerrConfig) -> Result<[f64; BASIS_LEN]> {
        kerr.validate()?;
        let offset = delay_to_offset(delay, self.d_w(), self.fiber.length_m);
        let path = pump_path_integral(pump, self.d_w(), self.fiber.length_m, offset)?;
        Ok(self.rate_constants(kerr).map(|r| r * path))
    }
}

/// Intensity-weighted fraction of the mode's transverse field along the pump
/// Jones vector, from 360 azimuthal samples of the polarization pattern
/// (exact for the trigonometric patterns used here).
fn co_polarized_fraction(mode: &GuidedMode, jones: [C64; 2]) -> f64 {
    let n = 360;
    let (mut co, mut total) = (0.0, 0.0);
    for i in 0..n {
        let phi = 2.0 * PI * i as f64 / n as f64;
        let (px, py) = mode.pattern(phi);
        co += (jones[0].conj() * px + jones[1].conj() * py).norm_sqr();
        total += px * px + py * py;
    }
    co / total
}

/// Linear propagation over the fiber plus the closed-form XPM phase at pump
/// lead `delay` (s).
pub fn xpm_apply(
    model: &XpmModel,
    state: &ModalState,
    pump: &PulseSpec,
    delay: f64,
    kerr: &KerrConfig,
) -> Result<PropagationResult> {
    let linear = linear_propagate(state, &model.signal_modes, model.fiber.length_m, kerr)?;
    let phases = model.phases(pump, delay, kerr)?;
    let mut c = *linear.coeffs();
    for (ck, ph) in c.iter_mut().zip(phases) {
        *ck *= C64::from_polar(1.0, ph);
    }
    Ok(PropagationResult {
        output_state: ModalState::new(c)?,
        per_mode_phase: phases,
        per_mode_transmission: [1.0; BASIS_LEN],
    })
}

/// One `xpm_apply` per delay, in input order.
pub fn delay_trace(
    model: &XpmModel,
    state: &ModalState,
    pump: &PulseSpec,
    delays: &[f64],
    kerr: &KerrConfig,
    par: Parallelism,
) -> Result<Vec<PropagationResult>> {
    exec::map_indexed(delays, par, |_, d| xpm_apply(model, state, pump, *d, kerr)).into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitStepConfig {
    pub steps: usize,
    pub window_ps: f64,
    pub samples: usize,
    pub gvd: bool,
    /// Gaussian signal envelope FWHM; the signal's input temporal mode.
    pub signal_duration_fs: f64,
}

impl Default for SplitStepConfig {
    fn default() -> Self {
        SplitStepConfig { steps: 400, window_ps: 16.0, samples: 4096, gvd: true, signal_duration_fs: 150.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitStepOutcome {
    /// Output coefficients are the linear result times each mode's overlap
    /// with its own no-pump envelope; `per_mode_phase` is the Kerr phase at
    /// the signal centre.
    pub result: PropagationResult,
    /// `|⟨A_ref|A_m⟩|² / ‖A_ref‖⁴`: loss of temporal-mode purity.
    pub temporal_overlap: [f64; BASIS_LEN],
}

/// Coupled-envelope split-step solver in the signal frame. The pump is
/// undepleted and advected rigidly at the walk-off rate; each mode's
/// envelope sees dispersion (optional, fundamental-mode β₂ for all modes)
/// and an XPM phase rate `r_m P_p(T − T₀ + d_w z)`. Strang splitting with the
/// Kerr sub-step integrated over z by Simpson's rule.
pub fn split_step_propagate(
    model: &XpmModel,
    state: &ModalState,
    pump: &PulseSpec,
    delay: f64,
    kerr: &KerrConfig,
    config: &SplitStepConfig,
) -> Result<SplitStepOutcome> {
    pump.validate()?;
    kerr.validate()?;
    if config.steps < 200 {
        return Err(Error::Domain(format!("split-step needs ≥ 200 steps, got {}", config.steps)));
    }
    if config.samples < 16 || !(config.signal_duration_fs > 0.0) {
        return Err(Error::Domain("split-step needs ≥ 16 samples and a positive signal duration".into()));
    }
    let length = model.fiber.length_m;
    let d_w = model.d_w();
    let window = config.window_ps * 1e-12;
    let needed = 8.0 * pump.fwhm_s().max(d_w.abs() * length);
    if !(window >= needed) {
        return Err(Error::Window(format!(
            "window {:.3} ps is below 8× max(pump duration, walk-off) = {:.3} ps",
            config.window_ps,
            needed * 1e12
        )));
    }

    let n = config.samples;
    let dt = window / n as f64;
    let times: Vec<f64> = (0..n).map(|i| (i as f64 - (n / 2) as f64) * dt).collect();
    let centre = n / 2;
    let tau_s = config.signal_duration_fs * 1e-15;
    let input: Vec<C64> = times.iter().map(|t| C64::new((-2.0 * LN_2 * (t / tau_s).powi(2)).exp(), 0.0)).collect();
    check_window(&input)?;

    let gvd = if config.gvd {
        let beta2 = fiber::fundamental_gvd(&model.fiber, model.signal_nm)?;
        Some(Dispersion::new(n, dt, beta2, 0.5 * length / config.steps as f64))
    } else {
        None
    };

    let offset0 = delay_to_offset(delay, d_w, length);
    let h = length / config.steps as f64;
    let rates = model.rate_constants(kerr);

    let mut reference = input.clone();
    let mut fields: Vec<Vec<C64>> = vec![input.clone(); BASIS_LEN];
    let mut centre_phase = [0.0; BASIS_LEN];
    let mut step_phase = vec![0.0; n];
    for s in 0..config.steps {
        let z0 = s as f64 * h;
        if let Some(d) = &gvd {
            d.apply(&mut reference);
            fields.iter_mut().for_each(|f| d.apply(f));
        }
        // ∫ P(T − T₀ + d_w z) dz over the step, Simpson's rule.
        for (acc, t) in step_phase.iter_mut().zip(&times) {
            let p = |z: f64| pump.power(t - offset0 + d_w * z);
            *acc = h / 6.0 * (p(z0) + 4.0 * p(z0 + 0.5 * h) + p(z0 + h));
        }
        for (k, f) in fields.iter_mut().enumerate() {
            if rates[k] == 0.0 {
                continue;
            }
            for (a, ph) in f.iter_mut().zip(&step_phase) {
                *a *= C64::from_polar(1.0, rates[k] * ph);
            }
            centre_phase[k] += rates[k] * step_phase[centre];
        }
        if let Some(d) = &gvd {
            d.apply(&mut reference);
            fields.iter_mut().for_each(|f| d.apply(f));
        }
    }
    check_window(&reference)?;

    let norm: f64 = reference.iter().map(|a| a.norm_sqr()).sum();
    let linear = linear_propagate(state, &model.signal_modes, length, kerr)?;
    let mut coeffs = *linear.coeffs();
    let mut temporal_overlap = [0.0; BASIS_LEN];
    for k in 0..BASIS_LEN {
        let ov: C64 = reference.iter().zip(&fields[k]).map(|(r, a)| r.conj() * a).sum::<C64>() / norm;
        coeffs[k] *= ov;
        temporal_overlap[k] = ov.norm_sqr();
    }
    let output_state = ModalState::new(coeffs).map_err(|_| Error::Numeric("split-step output has zero norm".into()))?;
    Ok(SplitStepOutcome {
        result: PropagationResult {
            output_state,
            per_mode_phase: centre_phase,
            per_mode_transmission: [1.0; BASIS_LEN],
        },
        temporal_overlap,
    })
}

fn check_window(envelope: &[C64]) -> Result<()> {
    let peak = envelope.iter().map(|a| a.norm()).fold(0.0, f64::max);
    let edge = envelope[0].norm().max(envelope[envelope.len() - 1].norm());
    if !(edge <= 1e-6 * peak) {
        return Err(Error::Window(format!(
            "signal envelope reaches {:.2e} of its peak at the window edge",
            edge / peak
        )));
    }
    Ok(())
}

/// Half-step dispersion operator `exp(i β₂ ω² h / 2)` in the frequency domain.
struct Dispersion {
    forward: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inverse: std::sync::Arc<dyn rustfft::Fft<f64>>,
    phase: Vec<C64>,
}

impl Dispersion {
    fn new(n: usize, dt: f64, beta2: f64, half_step: f64) -> Self {
        let mut planner = FftPlanner::new();
        let phase = (0..n)
            .map(|k| {
                let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
                let omega = 2.0 * PI * kk / (n as f64 * dt);
                C64::from_polar(1.0 / n as f64, 0.5 * beta2 * omega * omega * half_step)
            })
            .collect();
        Dispersion { forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n), phase }
    }

    fn apply(&self, a: &mut [C64]) {
        self.forward.process(a);
        for (x, p) in a.iter_mut().zip(&self.phase) {
            *x *= p;
        }
        self.inverse.process(a);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_power_normalization() {
        for shape in [PulseShape::Gaussian, PulseShape::Sech2] {
            let p = PulseSpec { shape, ..PulseSpec::pump_790() };
            let e = quad::integrate(|t| p.power(t), -5e-12, 5e-12, 1e-12).unwrap();
            assert!((e / p.energy_j() - 1.0).abs() < 1e-9, "{shape:?}");
            let half = p.power(0.5 * p.fwhm_s()) / p.peak_power();
            assert!((half - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn coupling_validation() {
        let mut k = KerrConfig::default();
        k.validate().unwrap();
        let mut u = [[C64::new(0.0, 0.0); 6]; 6];
        for (i, row) in u.iter_mut().enumerate() {
            row[(i + 1) % 6] = C64::new(0.0, 1.0);
        }
        k.coupling_matrix = Some(u);
        k.validate().unwrap();
        u[0][1] = C64::new(1.1, 0.0);
        k.coupling_matrix = Some(u);
        assert!(k.validate().is_err());
    }
}
