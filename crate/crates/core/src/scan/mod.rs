//! Configuration-driven delay/energy scans and their on-disk artifact bundle.
//!
//! Every (energy, delay) grid point is independent: it is propagated,
//! turned into a Stokes map and run through the requested analyses on the
//! worker pool. All writing happens afterwards in grid order, so the bundle
//! does not depend on the number of workers.

mod config;
mod tasks;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::*;
pub use tasks::*;

use crate::decomposition::{Decomposer, DecompositionConfig, DecompositionRecord};
use crate::exec::{self, Parallelism};
use crate::fiber::{self, FiberSpec, GuidedMode, ModeId};
use crate::fields::{self, GridSpec, ModalState, VectorField, AZIMUTH_BINS, BASIS, BASIS_LEN};
use crate::fit::{self, FitResult};
use crate::io;
use crate::propagation::{self, PropagationResult, XpmModel};
use crate::render::{self, Colormap, Heatmap};
use crate::tomography::{self, DensityJson};
use crate::{Error, Result};

/// Delays closer than this (ps) are the same grid point.
const DELAY_MATCH_PS: f64 = 1e-9;

/// SplitMix64 of `seed` and `index`: independent per-item streams.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `(u(Δτ) − baseline) / (u(reference) − baseline)` per delay. A vanishing
/// denominator (no modulation) gives a flat zero trace.
pub fn intensity_difference_trace(
    delays_ps: &[f64],
    values: &[f64],
    baseline: f64,
    reference_delay_ps: f64,
) -> Result<Vec<f64>> {
    if delays_ps.len() != values.len() {
        return Err(Error::Shape(format!("{} delays vs {} values", delays_ps.len(), values.len())));
    }
    let r = delays_ps
        .iter()
        .position(|d| (d - reference_delay_ps).abs() < DELAY_MATCH_PS)
        .ok_or_else(|| Error::Domain(format!("reference delay {reference_delay_ps} ps is not on the delay grid")))?;
    let den = values[r] - baseline;
    let scale = values.iter().fold(baseline.abs(), |m, v| m.max(v.abs()));
    if den.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Ok(vec![0.0; values.len()]);
    }
    Ok(values.iter().map(|v| (v - baseline) / den).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TomographyPoint {
    pub fidelity: f64,
    pub purity: f64,
    pub iterations: usize,
    pub converged: bool,
    pub density: DensityJson,
}

/// Everything computed at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointResult {
    pub energy_index: usize,
    pub delay_index: usize,
    pub energy_nj: f64,
    pub delay_ps: f64,
    pub output_state: ModalState,
    pub per_mode_phase: [f64; BASIS_LEN],
    #[serde(skip)]
    pub unwrap: Option<Vec<f64>>,
    pub decomposition: Option<DecompositionRecord>,
    /// `|⟨recovered|true⟩|²`.
    pub decomposition_overlap: Option<f64>,
    pub tomography: Option<TomographyPoint>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyFit {
    pub energy_nj: f64,
    pub launched_energy_nj: f64,
    pub fit: Option<FitResult>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub energies_nj: Vec<f64>,
    pub delays_ps: Vec<f64>,
    pub notes: Vec<String>,
    pub files: Vec<ManifestEntry>,
}

/// What a scan produced, in memory and on disk.
#[derive(Debug, Clone)]
pub struct ScanOutcome {
    pub run_id: String,
    pub output_dir: PathBuf,
    pub energies_nj: Vec<f64>,
    pub delays_ps: Vec<f64>,
    /// Energy-major grid points.
    pub points: Vec<PointResult>,
    /// Per energy, the normalized intensity-difference trace at azimuth 0°.
    pub traces: Vec<Vec<f64>>,
    pub fits: Vec<EnergyFit>,
    pub files: Vec<ManifestEntry>,
    pub manifest_path: PathBuf,
    /// Grid points or renders that could not be produced.
    pub warnings: Vec<String>,
}

impl ScanOutcome {
    pub fn point(&self, energy_index: usize, delay_index: usize) -> &PointResult {
        &self.points[energy_index * self.delays_ps.len() + delay_index]
    }
}

/// Precomputed fiber/field context shared by every grid point.
struct Context {
    model: XpmModel,
    modes: Vec<GuidedMode>,
    grid: GridSpec,
    fields: Option<Vec<VectorField>>,
    decomposer: Option<Decomposer>,
    input: ModalState,
}

impl Context {
    fn new(cfg: &ScanConfig) -> Result<Self> {
        let fiber = cfg.fiber_spec()?;
        let model = XpmModel::new(&fiber, cfg.pump.wavelength_nm, cfg.signal_wavelength_nm, cfg.pump.polarization)?;
        let modes = fiber::solve_vector_modes(&fiber, cfg.signal_wavelength_nm)?;
        let grid = cfg.grid_spec(&fiber);
        let need_fields = cfg.analyses.unwrap_trace || cfg.analyses.decomposition_map;
        let fields = if need_fields { Some(fields::synthesize_basis(&model.signal_modes, grid)?) } else { None };
        let decomposer = match (&fields, cfg.analyses.decomposition_map) {
            (Some(f), true) => Some(Decomposer::new(f, cfg.decomposition.weights)?),
            _ => None,
        };
        Ok(Context { model, modes, grid, fields, decomposer, input: cfg.signal.state()? })
    }

    fn propagate(&self, cfg: &ScanConfig, energy_nj: f64, delay_ps: f64) -> Result<PropagationResult> {
        let pulse = cfg.pump.pulse(energy_nj);
        let delay = delay_ps * 1e-12;
        match cfg.engine {
            Engine::BIntegral => propagation::xpm_apply(&self.model, &self.input, &pulse, delay, &cfg.kerr),
            Engine::SplitStep => {
                propagation::split_step_propagate(&self.model, &self.input, &pulse, delay, &cfg.kerr, &cfg.split_step)
                    .map(|o| o.result)
            }
        }
    }

    fn unwrap(&self, state: &ModalState) -> Result<Vec<f64>> {
        let f = self.fields.as_ref().expect("fields exist when unwrapping");
        let s = fields::stokes_map(&fields::superpose(state, f)?);
        // the fiber axis is the natural centre of every guided pattern
        fields::azimuthal_unwrap(&s.s0, &self.grid, (0.0, 0.0))
    }
}

struct WorkItem {
    energy_index: usize,
    delay_index: usize,
    energy_nj: f64,
    delay_ps: f64,
}

fn run_point(ctx: &Context, cfg: &ScanConfig, item: &WorkItem, index: usize) -> Result<PointResult> {
    let prop = ctx.propagate(cfg, item.energy_nj, item.delay_ps)?;
    let out = prop.output_state;
    let unwrap = if cfg.analyses.unwrap_trace { Some(ctx.unwrap(&out)?) } else { None };
    let (decomposition, decomposition_overlap) = match &ctx.decomposer {
        Some(dec) => {
            let target = fields::stokes_map(&fields::superpose(&out, dec.basis_fields())?);
            let dcfg = DecompositionConfig {
                seed: derive_seed(cfg.seed ^ cfg.decomposition.seed, index as u64),
                parallelism: Parallelism::Sequential,
                ..cfg.decomposition.clone()
            };
            let res = dec.decompose(&target, &dcfg)?;
            (Some(res.record()), Some(res.state.overlap(&out)))
        }
        None => (None, None),
    };
    let tomography = if cfg.analyses.tomography {
        let projectors = tomography::build_projector_set();
        let rho = tomography::modal_state_to_density(&out)?;
        let t = &cfg.tomography;
        let counts = tomography::simulate_counts_with_background(
            &rho,
            &projectors,
            t.shots,
            t.background,
            derive_seed(cfg.seed, (1u64 << 40) + index as u64),
        )?;
        let mle = tomography::mle_reconstruct(&counts, &projectors, &t.mle)?;
        Some(TomographyPoint {
            fidelity: tomography::fidelity(&mle.rho, &rho),
            purity: tomography::purity(&mle.rho),
            iterations: mle.iterations,
            converged: mle.converged,
            density: DensityJson::from(&mle.rho),
        })
    } else {
        None
    };
    Ok(PointResult {
        energy_index: item.energy_index,
        delay_index: item.delay_index,
        energy_nj: item.energy_nj,
        delay_ps: item.delay_ps,
        output_state: out,
        per_mode_phase: prop.per_mode_phase,
        unwrap,
        decomposition,
        decomposition_overlap,
        tomography,
        error: None,
    })
}

fn mode_slug(id: ModeId) -> String {
    id.to_string().to_lowercase()
}

/// Run the configured scan and write its bundle into `cfg.output_dir`.
pub fn run_scan(cfg: &ScanConfig) -> Result<ScanOutcome> {
    cfg.validate()?;
    let out_dir = cfg.output_dir.clone();
    io::ensure_dir(&out_dir)?;
    let ctx = Context::new(cfg)?;
    let energies = cfg.energies();
    let delays = cfg.delays.values();
    let par = Parallelism::from_jobs(cfg.jobs);
    log::info!(
        "scan {}: {} energies × {} delays on {} worker(s)",
        cfg.run_id,
        energies.len(),
        delays.len(),
        par.jobs()
    );

    let mut items = Vec::with_capacity(energies.len() * delays.len());
    for (ei, e) in energies.iter().enumerate() {
        for (di, d) in delays.iter().enumerate() {
            items.push(WorkItem { energy_index: ei, delay_index: di, energy_nj: *e, delay_ps: *d });
        }
    }
    let results = exec::map_indexed(&items, par, |i, item| run_point(&ctx, cfg, item, i));
    let mut warnings = Vec::new();
    let mut points = Vec::with_capacity(items.len());
    let mut first_error = None;
    for (item, r) in items.iter().zip(results) {
        match r {
            Ok(p) => points.push(p),
            Err(e) => {
                warnings.push(format!("energy {} nJ, delay {} ps: {e}", item.energy_nj, item.delay_ps));
                points.push(PointResult {
                    energy_index: item.energy_index,
                    delay_index: item.delay_index,
                    energy_nj: item.energy_nj,
                    delay_ps: item.delay_ps,
                    output_state: ctx.input,
                    per_mode_phase: [f64::NAN; BASIS_LEN],
                    unwrap: None,
                    decomposition: None,
                    decomposition_overlap: None,
                    tomography: None,
                    error: Some(e.to_string()),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_error {
        if warnings.len() == items.len() {
            return Err(e);
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    let mut traces = Vec::new();
    let mut fits = Vec::new();
    if cfg.analyses.unwrap_trace {
        let baseline_state =
            propagation::linear_propagate(&ctx.input, &ctx.modes, ctx.model.fiber.length_m, &cfg.kerr)?;
        let baseline = ctx.unwrap(&baseline_state)?[0];
        let reference = cfg.fit.reference_delay_ps;
        let on_grid = delays.iter().position(|d| (d - reference).abs() < DELAY_MATCH_PS);
        for (ei, e) in energies.iter().enumerate() {
            let row: Vec<f64> = (0..delays.len())
                .map(|di| points[ei * delays.len() + di].unwrap.as_ref().map_or(f64::NAN, |u| u[0]))
                .collect();
            let ref_value = match on_grid {
                Some(di) => row[di],
                None => ctx.unwrap(&ctx.propagate(cfg, *e, reference)?.output_state)?[0],
            };
            let mut ds = delays.clone();
            let mut vs = row.clone();
            ds.push(reference);
            vs.push(ref_value);
            let mut trace = intensity_difference_trace(&ds, &vs, baseline, reference)?;
            trace.pop();
            let launched = e * cfg.pump.launch_efficiency;
            let fit = if trace.iter().any(|v| !v.is_finite()) {
                EnergyFit {
                    energy_nj: *e,
                    launched_energy_nj: launched,
                    fit: None,
                    note: Some("trace has missing points".into()),
                }
            } else {
                match fit::fit_super_gaussian(&delays, &trace, cfg.fit.order) {
                    Ok(f) => EnergyFit { energy_nj: *e, launched_energy_nj: launched, fit: Some(f), note: None },
                    Err(err) => EnergyFit {
                        energy_nj: *e,
                        launched_energy_nj: launched,
                        fit: None,
                        note: Some(err.to_string()),
                    },
                }
            };
            traces.push(trace);
            fits.push(fit);
        }
    }

    let mut outcome = ScanOutcome {
        run_id: cfg.run_id.clone(),
        output_dir: out_dir.clone(),
        energies_nj: energies,
        delays_ps: delays,
        points,
        traces,
        fits,
        files: Vec::new(),
        manifest_path: io::artifact_path(&out_dir, &cfg.run_id, "manifest", "json"),
        warnings,
    };
    write_bundle(cfg, &ctx, &mut outcome)?;
    Ok(outcome)
}

#[derive(Serialize)]
struct ModeSummary {
    id: String,
    n_eff: f64,
    beta_per_m: f64,
    pump_overlap_per_m2: f64,
    pump_co_fraction: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    fiber: &'a FiberSpec,
    signal_wavelength_nm: f64,
    pump_wavelength_nm: f64,
    walk_off_s_per_m: f64,
    walk_off_window_ps: f64,
    beat_length_he21b_tm01_m: Option<f64>,
    input_state: &'a ModalState,
    launch_efficiency: f64,
    modes: Vec<ModeSummary>,
    warnings: &'a [String],
}

fn write_bundle(cfg: &ScanConfig, ctx: &Context, out: &mut ScanOutcome) -> Result<()> {
    let dir = out.output_dir.clone();
    let run = cfg.run_id.as_str();
    let mut written: Vec<PathBuf> = Vec::new();
    let nd = out.delays_ps.len();
    let ne = out.energies_nj.len();

    written.push(write_config_copy(&dir, cfg)?);

    let m = &ctx.model;
    let find = |id| m.signal_modes.iter().find(|x| x.id == id).copied();
    let beat = match (find(ModeId::HE21B), find(ModeId::TM01)) {
        (Some(a), Some(b)) => fiber::beat_length(&a, &b).ok(),
        _ => None,
    };
    let summary = Summary {
        fiber: &m.fiber,
        signal_wavelength_nm: m.signal_nm,
        pump_wavelength_nm: m.pump_nm,
        walk_off_s_per_m: m.d_w(),
        walk_off_window_ps: (m.d_w() * m.fiber.length_m).abs() * 1e12,
        beat_length_he21b_tm01_m: beat,
        input_state: &ctx.input,
        launch_efficiency: cfg.pump.launch_efficiency,
        modes: (0..BASIS_LEN)
            .map(|k| ModeSummary {
                id: m.signal_modes[k].id.to_string(),
                n_eff: m.signal_modes[k].n_eff,
                beta_per_m: m.signal_modes[k].beta,
                pump_overlap_per_m2: m.overlaps[k],
                pump_co_fraction: m.co_fractions[k],
            })
            .collect(),
        warnings: &out.warnings,
    };
    let summary_path = io::artifact_path(&dir, run, "summary", "json");
    io::write_json(&summary_path, &summary)?;
    written.push(summary_path);

    let points_path = io::artifact_path(&dir, run, "points", "json");
    io::write_json(&points_path, &out.points)?;
    written.push(points_path);

    let mut render_warnings = Vec::new();
    if cfg.analyses.unwrap_trace {
        for ei in 0..ne {
            let tag = format!("e{ei:02}");
            let mut cells = Vec::with_capacity(nd * AZIMUTH_BINS);
            let mut rows = Vec::with_capacity(nd * AZIMUTH_BINS);
            for di in 0..nd {
                let p = &out.points[ei * nd + di];
                match &p.unwrap {
                    Some(u) => {
                        cells.extend_from_slice(u);
                        for (az, v) in u.iter().enumerate() {
                            rows.push(vec![io::fmt_sig(p.delay_ps), az.to_string(), io::fmt_sig(*v)]);
                        }
                    }
                    None => {
                        cells.extend(std::iter::repeat_n(f64::NAN, AZIMUTH_BINS));
                        render_warnings.push(format!("unwrap missing at energy index {ei}, delay index {di}"));
                    }
                }
            }
            let csv = io::artifact_path(&dir, run, &format!("unwrap_{tag}"), "csv");
            io::write_csv(&csv, &["delay_ps", "azimuth_deg", "normalized_intensity"], rows)?;
            written.push(csv);
            let png = io::artifact_path(&dir, run, &format!("unwrap_{tag}"), "png");
            Heatmap {
                rows: nd,
                cols: AZIMUTH_BINS,
                values: &cells,
                colormap: Colormap::Sequential,
                range: Some((0.0, 1.0)),
                cell_px: 2,
                title: format!("azimuthal unwrap, pump {} nJ", out.energies_nj[ei]),
                x_label: "azimuth (deg)".into(),
                y_label: "delay (ps)".into(),
                x_range: (0.0, (AZIMUTH_BINS - 1) as f64),
                y_range: (out.delays_ps[0], out.delays_ps[nd - 1]),
            }
            .write_png(&png)?;
            written.push(png);
            let trace_csv = io::artifact_path(&dir, run, &format!("trace_{tag}"), "csv");
            io::write_csv(
                &trace_csv,
                &["delay_ps", "intensity_difference"],
                out.delays_ps.iter().zip(&out.traces[ei]).map(|(d, v)| vec![io::fmt_sig(*d), io::fmt_sig(*v)]),
            )?;
            written.push(trace_csv);
        }
        let fit_path = io::artifact_path(&dir, run, "fit", "json");
        io::write_json(&fit_path, &out.fits)?;
        written.push(fit_path);
    }

    if cfg.analyses.decomposition_map {
        let records: Vec<_> = out
            .points
            .iter()
            .map(|p| {
                serde_json::json!({
                    "energy_nj": p.energy_nj,
                    "delay_ps": p.delay_ps,
                    "result": p.decomposition,
                    "overlap_with_propagated": p.decomposition_overlap,
                })
            })
            .collect();
        let path = io::artifact_path(&dir, run, "decomposition", "json");
        io::write_json(&path, &records)?;
        written.push(path);
        for (k, id) in BASIS.iter().enumerate() {
            let pops: Vec<f64> = out
                .points
                .iter()
                .map(|p| p.decomposition.as_ref().map_or(f64::NAN, |r| r.amplitudes[k].powi(2)))
                .collect();
            let phases: Vec<f64> = out
                .points
                .iter()
                .map(|p| p.decomposition.as_ref().map_or(f64::NAN, |r| render::wrap_phase(r.phases[k])))
                .collect();
            if pops.iter().any(|v| v.is_nan()) {
                render_warnings.push(format!("decomposition missing for {id} at some grid points"));
            }
            for (quantity, values, cmap, range) in [
                ("population", &pops, Colormap::Sequential, Some((0.0, 1.0))),
                ("phase", &phases, Colormap::Cyclic, None),
            ] {
                let png = io::artifact_path(&dir, run, &format!("{quantity}_{}", mode_slug(*id)), "png");
                Heatmap {
                    rows: ne,
                    cols: nd,
                    values,
                    colormap: cmap,
                    range,
                    cell_px: 8,
                    title: format!("{id} {quantity}"),
                    x_label: "delay (ps)".into(),
                    y_label: "pump energy (nJ)".into(),
                    x_range: (out.delays_ps[0], out.delays_ps[nd - 1]),
                    y_range: (out.energies_nj[0], out.energies_nj[ne - 1]),
                }
                .write_png(&png)?;
                written.push(png);
            }
        }
    }

    if cfg.analyses.tomography {
        let records: Vec<_> = out
            .points
            .iter()
            .map(|p| {
                serde_json::json!({
                    "energy_nj": p.energy_nj,
                    "delay_ps": p.delay_ps,
                    "result": p.tomography,
                })
            })
            .collect();
        let path = io::artifact_path(&dir, run, "tomography", "json");
        io::write_json(&path, &records)?;
        written.push(path);
        let fid: Vec<f64> = out.points.iter().map(|p| p.tomography.as_ref().map_or(f64::NAN, |t| t.fidelity)).collect();
        let png = io::artifact_path(&dir, run, "tomography_fidelity", "png");
        Heatmap {
            rows: ne,
            cols: nd,
            values: &fid,
            colormap: Colormap::Sequential,
            range: None,
            cell_px: 8,
            title: "reconstruction fidelity".into(),
            x_label: "delay (ps)".into(),
            y_label: "pump energy (nJ)".into(),
            x_range: (out.delays_ps[0], out.delays_ps[nd - 1]),
            y_range: (out.energies_nj[0], out.energies_nj[ne - 1]),
        }
        .write_png(&png)?;
        written.push(png);
    }

    for w in &render_warnings {
        log::warn!("partial render: {w}");
    }
    out.warnings.extend(render_warnings);

    let notes = vec![
        "default energy grid {0, 0.5, ..., 4.0, 4.38} nJ is an assumption".into(),
        format!("launched energy = nominal × {}", cfg.pump.launch_efficiency),
    ];
    out.files = write_manifest(&out.manifest_path, cfg, &out.energies_nj, &out.delays_ps, notes, &written)?;
    Ok(())
}

/// Hash `written` and store the manifest at `path`; returns the entries.
pub fn write_manifest(
    path: &Path,
    cfg: &ScanConfig,
    energies_nj: &[f64],
    delays_ps: &[f64],
    notes: Vec<String>,
    written: &[PathBuf],
) -> Result<Vec<ManifestEntry>> {
    let mut files = Vec::with_capacity(written.len());
    for p in written {
        files.push(manifest_entry(p)?);
    }
    files.sort_by(|a, b| a.name.cmp(&b.name));
    let manifest = Manifest {
        run_id: cfg.run_id.clone(),
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: hex::encode(<sha2::Sha256 as sha2::Digest>::digest(cfg.canonical_json().as_bytes())),
        energies_nj: energies_nj.to_vec(),
        delays_ps: delays_ps.to_vec(),
        notes,
        files: files.clone(),
    };
    io::write_json(path, &manifest)?;
    Ok(files)
}

/// Write the canonical config next to the other artifacts.
pub fn write_config_copy(dir: &Path, cfg: &ScanConfig) -> Result<PathBuf> {
    let path = io::artifact_path(dir, &cfg.run_id, "config", "json");
    std::fs::write(&path, cfg.canonical_json() + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn manifest_entry(path: &Path) -> Result<ManifestEntry> {
    let meta = std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
    Ok(ManifestEntry {
        name: path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string(),
        sha256: io::sha256_file(path)?,
        bytes: meta.len(),
    })
}

/// Re-hash every file listed in a manifest. Returns the names that are
/// missing or differ.
pub fn verify_manifest(manifest_path: &Path) -> Result<Vec<String>> {
    let manifest: Manifest = io::read_json(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut bad = Vec::new();
    for f in &manifest.files {
        let p = dir.join(&f.name);
        match io::sha256_file(&p) {
            Ok(h) if h == f.sha256 => {}
            _ => bad.push(f.name.clone()),
        }
    }
    Ok(bad)
}
