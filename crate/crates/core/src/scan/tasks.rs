//! Single-shot tasks behind the non-scan subcommands. Each one writes its
//! artifacts, a config copy and a manifest into `cfg.output_dir`.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::{derive_seed, write_config_copy, write_manifest, ManifestEntry, ScanConfig};
use crate::decomposition::{self, Decomposer, DecompositionConfig, DecompositionRecord};
use crate::exec::Parallelism;
use crate::fiber::{self, GuidedMode, WalkOff};
use crate::fields::{self, GridSpec, ModalState, StokesMap};
use crate::fit::{self, FitResult};
use crate::io;
use crate::propagation::XpmModel;
use crate::render::{Colormap, Heatmap};
use crate::tomography::{self, DensityJson, LOGICAL_BASIS};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct ModeRow {
    pub id: String,
    pub n_eff: f64,
    pub beta_per_m: f64,
    pub group_index: Option<f64>,
    /// Overlap with the pump fundamental mode, 1/µm².
    pub pump_overlap_per_um2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BeatRow {
    pub a: String,
    pub b: String,
    /// `None` for an exactly degenerate pair.
    pub beat_length_m: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeReport {
    pub pump_nm: f64,
    pub signal_nm: f64,
    pub lp_groups_pump: usize,
    pub lp_groups_signal: usize,
    pub signal_modes: Vec<ModeRow>,
    pub beat_lengths: Vec<BeatRow>,
    pub walk_off: WalkOff,
    /// `d_w·L` in ps.
    pub walk_off_delay_ps: f64,
}

impl std::fmt::Display for ModeReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "guided LP groups: {} at {} nm, {} at {} nm",
            self.lp_groups_pump, self.pump_nm, self.lp_groups_signal, self.signal_nm
        )?;
        writeln!(f, "{:<8} {:>16} {:>12} {:>14}", "mode", "n_eff", "n_g", "f_p [1/um^2]")?;
        for m in &self.signal_modes {
            let ng = m.group_index.map_or("-".to_string(), |g| format!("{g:.8}"));
            writeln!(f, "{:<8} {:>16.12} {:>12} {:>14.6e}", m.id, m.n_eff, ng, m.pump_overlap_per_um2)?;
        }
        writeln!(f, "beat lengths:")?;
        for b in &self.beat_lengths {
            match b.beat_length_m {
                Some(l) => writeln!(f, "  {:<6} {:<6} {:.6} m", b.a, b.b, l)?,
                None => writeln!(f, "  {:<6} {:<6} degenerate", b.a, b.b)?,
            }
        }
        write!(
            f,
            "walk-off: {:.6e} s/m ({:.4} ps over the fiber)",
            self.walk_off.seconds_per_meter, self.walk_off_delay_ps
        )
    }
}

fn model(cfg: &ScanConfig) -> Result<XpmModel> {
    let fiber = cfg.fiber_spec()?;
    XpmModel::new(&fiber, cfg.pump.wavelength_nm, cfg.signal_wavelength_nm, cfg.pump.polarization)
}

pub fn mode_report(cfg: &ScanConfig) -> Result<ModeReport> {
    let m = model(cfg)?;
    let modes: &[GuidedMode] = &m.signal_modes;
    let signal_modes = modes
        .iter()
        .zip(&m.overlaps)
        .map(|(g, o)| ModeRow {
            id: g.id.to_string(),
            n_eff: g.n_eff,
            beta_per_m: g.beta,
            group_index: g.group_index,
            pump_overlap_per_um2: o * 1e-12,
        })
        .collect();
    let mut beat_lengths = Vec::new();
    for i in 0..modes.len() {
        for j in i + 1..modes.len() {
            let l = match fiber::beat_length(&modes[i], &modes[j]) {
                Ok(l) => Some(l),
                Err(Error::Degenerate(_)) => None,
                Err(e) => return Err(e),
            };
            beat_lengths.push(BeatRow { a: modes[i].id.to_string(), b: modes[j].id.to_string(), beat_length_m: l });
        }
    }
    Ok(ModeReport {
        pump_nm: m.pump_nm,
        signal_nm: m.signal_nm,
        lp_groups_pump: fiber::count_guided_lp_groups(&m.fiber, m.pump_nm)?,
        lp_groups_signal: fiber::count_guided_lp_groups(&m.fiber, m.signal_nm)?,
        signal_modes,
        beat_lengths,
        walk_off: m.walk_off,
        walk_off_delay_ps: m.walk_off.seconds_per_meter * m.fiber.length_m * 1e12,
    })
}

fn finish(cfg: &ScanConfig, mut written: Vec<PathBuf>, notes: Vec<String>) -> Result<(Vec<ManifestEntry>, PathBuf)> {
    written.push(write_config_copy(&cfg.output_dir, cfg)?);
    let path = io::artifact_path(&cfg.output_dir, &cfg.run_id, "manifest", "json");
    let files = write_manifest(&path, cfg, &[], &[], notes, &written)?;
    Ok((files, path))
}

/// Mode table plus `<run>_modes.json`.
pub fn run_modes(cfg: &ScanConfig) -> Result<(ModeReport, Vec<ManifestEntry>)> {
    cfg.validate()?;
    let report = mode_report(cfg)?;
    io::ensure_dir(&cfg.output_dir)?;
    let path = io::artifact_path(&cfg.output_dir, &cfg.run_id, "modes", "json");
    io::write_json(&path, &report)?;
    let (files, _) = finish(cfg, vec![path], vec![])?;
    Ok((report, files))
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceFit {
    pub source: String,
    pub points: usize,
    pub fit: FitResult,
}

/// Fit a `delay_ps,value` CSV; `order` overrides the config.
pub fn run_fit(cfg: &ScanConfig, trace: &Path, order: Option<u32>) -> Result<(TraceFit, Vec<ManifestEntry>)> {
    cfg.validate()?;
    let (t, y) = fit::read_trace_csv(trace)?;
    let fit = fit::fit_super_gaussian(&t, &y, order.or(cfg.fit.order))?;
    let out = TraceFit { source: trace.display().to_string(), points: t.len(), fit };
    io::ensure_dir(&cfg.output_dir)?;
    let path = io::artifact_path(&cfg.output_dir, &cfg.run_id, "fit", "json");
    io::write_json(&path, &out)?;
    let (files, _) = finish(cfg, vec![path], vec![])?;
    Ok((out, files))
}

#[derive(Debug, Clone, Serialize)]
pub struct TomographyRun {
    /// Present when the counts were simulated from the configured signal.
    pub fidelity: Option<f64>,
    pub purity: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_log_likelihood: f64,
    pub density: DensityJson,
}

fn density_png(path: &Path, values: &[f64], part: &str) -> Result<()> {
    Heatmap {
        rows: 6,
        cols: 6,
        values,
        colormap: Colormap::Diverging,
        range: Some((-1.0, 1.0)),
        cell_px: 32,
        title: format!("{part} part of the reconstructed density matrix"),
        x_label: format!("column ({})", LOGICAL_BASIS.join(" ")),
        y_label: format!("row ({})", LOGICAL_BASIS.join(" ")),
        x_range: (0.0, 5.0),
        y_range: (0.0, 5.0),
    }
    .write_png(path)
}

/// Reconstruct from `counts`, or simulate counts for the configured signal
/// state first.
pub fn run_tomography(cfg: &ScanConfig, counts: Option<&Path>) -> Result<(TomographyRun, Vec<ManifestEntry>)> {
    cfg.validate()?;
    let projectors = tomography::build_projector_set();
    let t = &cfg.tomography;
    io::ensure_dir(&cfg.output_dir)?;
    let mut written = Vec::new();
    let (records, truth) = match counts {
        Some(p) => (tomography::read_counts_csv(p)?, None),
        None => {
            let rho = tomography::modal_state_to_density(&cfg.signal.state()?)?;
            let c = tomography::simulate_counts_with_background(&rho, &projectors, t.shots, t.background, cfg.seed)?;
            let path = io::artifact_path(&cfg.output_dir, &cfg.run_id, "counts", "csv");
            tomography::write_counts_csv(&path, &c)?;
            written.push(path);
            (c, Some(rho))
        }
    };
    let mle = tomography::mle_reconstruct(&records, &projectors, &t.mle)?;
    if !mle.converged {
        log::info!("MLE used the full iteration budget ({})", mle.iterations);
    }
    let m = mle.rho.matrix();
    let re: Vec<f64> = m.transpose().iter().map(|z| z.re).collect();
    let im: Vec<f64> = m.transpose().iter().map(|z| z.im).collect();
    let run = TomographyRun {
        fidelity: truth.as_ref().map(|r| tomography::fidelity(&mle.rho, r)),
        purity: tomography::purity(&mle.rho),
        iterations: mle.iterations,
        converged: mle.converged,
        final_log_likelihood: mle.log_likelihood.last().copied().unwrap_or(f64::NAN),
        density: DensityJson::from(&mle.rho),
    };
    let json = io::artifact_path(&cfg.output_dir, &cfg.run_id, "tomography", "json");
    io::write_json(&json, &run)?;
    written.push(json);
    for (part, values) in [("real", &re), ("imag", &im)] {
        let p = io::artifact_path(&cfg.output_dir, &cfg.run_id, &format!("density_{part}"), "png");
        density_png(&p, values, part)?;
        written.push(p);
    }
    let (files, _) = finish(cfg, written, vec![])?;
    Ok((run, files))
}

#[derive(Debug, Clone, Serialize)]
pub struct DecompositionRun {
    pub record: DecompositionRecord,
    pub relative_loss: f64,
    pub iterations: usize,
    pub restart_index: usize,
    /// `|⟨recovered|true⟩|²` when the target was synthesized from the config.
    pub state_overlap: Option<f64>,
    /// Correlation against the noise-free synthesized map.
    pub clean_cross_correlation: Option<f64>,
    pub grid: GridSpec,
    pub noise_fraction: f64,
}

fn stokes_pngs(cfg: &ScanConfig, map: &StokesMap, written: &mut Vec<PathBuf>) -> Result<()> {
    let n = map.grid.samples_per_axis;
    let hw = map.grid.half_width_um;
    for k in 0..4 {
        // flip rows so +y is at the top
        let v = map.component(k);
        let flipped: Vec<f64> = (0..n).rev().flat_map(|r| v[r * n..(r + 1) * n].iter().copied()).collect();
        let p = io::artifact_path(&cfg.output_dir, &cfg.run_id, &format!("stokes_s{k}"), "png");
        Heatmap {
            rows: n,
            cols: n,
            values: &flipped,
            colormap: if k == 0 { Colormap::Sequential } else { Colormap::Diverging },
            range: None,
            cell_px: 1,
            title: format!("target Stokes S{k}"),
            x_label: "x (um)".into(),
            y_label: "y (um)".into(),
            x_range: (-hw, hw),
            y_range: (hw, -hw),
        }
        .write_png(&p)?;
        written.push(p);
    }
    Ok(())
}

/// Decompose a Stokes map read from `stokes`, or one synthesized from the
/// configured signal state with Gaussian noise of `noise`·max S0 added to
/// every component.
pub fn run_decomposition(
    cfg: &ScanConfig,
    stokes: Option<&Path>,
    noise: f64,
) -> Result<(DecompositionRun, Vec<ManifestEntry>)> {
    cfg.validate()?;
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::config("noise", "must be finite and ≥ 0"));
    }
    let m = model(cfg)?;
    io::ensure_dir(&cfg.output_dir)?;
    let mut written = Vec::new();
    let (target, truth, clean) = match stokes {
        Some(p) => (fields::read_stokes_csv(p)?, None, None),
        None => {
            let grid = cfg.grid_spec(&m.fiber);
            let basis = fields::synthesize_basis(&m.signal_modes, grid)?;
            let state = cfg.signal.state()?;
            let clean = fields::stokes_map(&fields::superpose(&state, &basis)?);
            let mut map = clean.clone();
            if noise > 0.0 {
                let peak = map.s0.iter().cloned().fold(0.0, f64::max);
                let dist = Normal::new(0.0, noise * peak).map_err(|e| Error::Numeric(e.to_string()))?;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX));
                for k in 0..4 {
                    for v in map.component_mut(k) {
                        *v += dist.sample(&mut rng);
                    }
                }
            }
            let p = io::artifact_path(&cfg.output_dir, &cfg.run_id, "stokes", "csv");
            fields::write_stokes_csv(&p, &map)?;
            written.push(p);
            (map, Some(state), Some(clean))
        }
    };
    let basis = fields::synthesize_basis(&m.signal_modes, target.grid)?;
    let dcfg = DecompositionConfig {
        seed: cfg.seed ^ cfg.decomposition.seed,
        parallelism: Parallelism::from_jobs(cfg.jobs),
        ..cfg.decomposition.clone()
    };
    let res = Decomposer::new(&basis, dcfg.weights)?.decompose(&target, &dcfg)?;
    if !res.converged {
        log::warn!("decomposition stopped at the iteration cap ({})", res.iterations_used);
    }
    let run = DecompositionRun {
        record: res.record(),
        relative_loss: res.relative_loss,
        iterations: res.iterations_used,
        restart_index: res.restart_index,
        state_overlap: truth.map(|s: ModalState| res.state.overlap(&s)),
        clean_cross_correlation: match &clean {
            Some(c) => {
                Some(decomposition::cross_correlation(&fields::stokes_map(&fields::superpose(&res.state, &basis)?), c)?)
            }
            None => None,
        },
        grid: target.grid,
        noise_fraction: if stokes.is_some() { 0.0 } else { noise },
    };
    let json = io::artifact_path(&cfg.output_dir, &cfg.run_id, "decomposition", "json");
    io::write_json(&json, &run)?;
    written.push(json);
    stokes_pngs(cfg, &target, &mut written)?;
    let (files, _) = finish(cfg, written, vec![])?;
    Ok((run, files))
}
