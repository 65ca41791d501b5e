//! Transverse vector fields on a square grid, modal superpositions over the
//! six guided vector modes of a two-mode-group fiber, Stokes maps and the
//! azimuthal unwrap of an intensity image.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::exec;
use crate::fiber::{GuidedMode, ModeId};
use crate::io;
use crate::{Error, Result};

/// Number of vector modes in the signal basis.
pub const BASIS_LEN: usize = 6;

/// Fixed signal basis order used everywhere.
pub const BASIS: [ModeId; BASIS_LEN] =
    [ModeId::HE11X, ModeId::HE11Y, ModeId::TE01, ModeId::TM01, ModeId::HE21A, ModeId::HE21B];

/// Number of azimuth bins in an unwrap profile (1° each, centred on integer
/// degrees).
pub const AZIMUTH_BINS: usize = 360;

const GAUGE_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub half_width_um: f64,
    pub samples_per_axis: usize,
}

impl GridSpec {
    /// Default grid for a fiber: 4× core radius half-width, 256 samples.
    pub fn for_core(core_radius_um: f64) -> Self {
        GridSpec { half_width_um: 4.0 * core_radius_um, samples_per_axis: 256 }
    }

    pub fn validate(&self, core_radius_um: f64) -> Result<()> {
        if self.samples_per_axis < 64 {
            return Err(Error::Resolution(format!("samples_per_axis must be ≥ 64, got {}", self.samples_per_axis)));
        }
        if self.half_width_um < 2.0 * core_radius_um {
            return Err(Error::Domain(format!(
                "grid half-width {} µm does not cover twice the core radius {} µm",
                self.half_width_um, core_radius_um
            )));
        }
        if 2.0 * core_radius_um < 8.0 * self.spacing() {
            return Err(Error::Resolution(format!(
                "core diameter spans fewer than 8 samples (spacing {} µm)",
                self.spacing()
            )));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width_um / self.samples_per_axis as f64
    }

    pub fn area_element(&self) -> f64 {
        self.spacing().powi(2)
    }

    /// Pixel-centre coordinate of sample `i` along either axis.
    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width_um + (i as f64 + 0.5) * self.spacing()
    }

    pub fn len(&self) -> usize {
        self.samples_per_axis * self.samples_per_axis
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn same_as(&self, other: &GridSpec) -> bool {
        self.samples_per_axis == other.samples_per_axis && self.half_width_um == other.half_width_um
    }
}

/// Complex `(E_x, E_y)` samples, row-major with row index along `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: GridSpec,
    pub ex: Vec<C64>,
    pub ey: Vec<C64>,
}

impl VectorField {
    pub fn zeros(grid: GridSpec) -> Self {
        VectorField { grid, ex: vec![C64::new(0.0, 0.0); grid.len()], ey: vec![C64::new(0.0, 0.0); grid.len()] }
    }

    /// `∬ (|E_x|² + |E_y|²) dA` on the grid.
    pub fn power(&self) -> f64 {
        let s: f64 = self.ex.iter().zip(&self.ey).map(|(x, y)| x.norm_sqr() + y.norm_sqr()).sum();
        s * self.grid.area_element()
    }

    /// `⟨self|other⟩ = ∬ (E_x* E'_x + E_y* E'_y) dA`.
    pub fn inner(&self, other: &VectorField) -> Result<C64> {
        check_grid(&self.grid, &other.grid)?;
        let s: C64 = self
            .ex
            .iter()
            .zip(&self.ey)
            .zip(other.ex.iter().zip(&other.ey))
            .map(|((x, y), (x2, y2))| x.conj() * x2 + y.conj() * y2)
            .sum();
        Ok(s * self.grid.area_element())
    }

    pub fn is_finite(&self) -> bool {
        self.ex.iter().chain(&self.ey).all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Sample `source(x, y)` at every pixel centre.
    pub fn sample(grid: GridSpec, source: impl Fn(f64, f64) -> (C64, C64) + Sync) -> Self {
        let n = grid.samples_per_axis;
        let mut pairs = vec![(C64::new(0.0, 0.0), C64::new(0.0, 0.0)); grid.len()];
        exec::fill_rows(&mut pairs, n, |iy, row| {
            let y = grid.coord(iy);
            for (ix, cell) in row.iter_mut().enumerate() {
                *cell = source(grid.coord(ix), y);
            }
        });
        let (ex, ey) = pairs.into_iter().unzip();
        VectorField { grid, ex, ey }
    }
}

fn check_grid(a: &GridSpec, b: &GridSpec) -> Result<()> {
    if a.same_as(b) {
        Ok(())
    } else {
        Err(Error::Shape(format!("grid mismatch: {a:?} vs {b:?}")))
    }
}

/// Sample a guided mode on `grid`, normalized to unit power on the grid.
pub fn synthesize_mode_field(mode: &GuidedMode, grid: GridSpec) -> Result<VectorField> {
    grid.validate(mode.core_radius_um)?;
    let mut field = VectorField::sample(grid, |x, y| {
        let (ex, ey) = mode.field(x, y);
        (C64::new(ex, 0.0), C64::new(ey, 0.0))
    });
    let p = field.power();
    if !(p > 0.0) || !field.is_finite() {
        return Err(Error::Numeric(format!("mode {} has no power on the grid", mode.id)));
    }
    let scale = 1.0 / p.sqrt();
    for c in field.ex.iter_mut().chain(field.ey.iter_mut()) {
        *c *= scale;
    }
    Ok(field)
}

/// Synthesize the six basis fields. `modes` must contain every basis mode.
pub fn synthesize_basis(modes: &[GuidedMode], grid: GridSpec) -> Result<Vec<VectorField>> {
    BASIS
        .iter()
        .map(|id| {
            let m = crate::fiber::find_mode(modes, *id)?;
            synthesize_mode_field(m, grid)
        })
        .collect()
}

/// Normalized, gauge-fixed coefficient vector over [`BASIS`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalState {
    coeffs: [C64; BASIS_LEN],
}

impl ModalState {
    /// Normalize and gauge-fix arbitrary coefficients.
    pub fn new(coeffs: [C64; BASIS_LEN]) -> Result<Self> {
        let norm = coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Domain("modal state must have nonzero finite norm".into()));
        }
        let mut c = coeffs;
        for x in c.iter_mut() {
            *x /= norm;
        }
        Ok(ModalState { coeffs: c }.gauged())
    }

    pub fn basis_mode(index: usize) -> Self {
        let mut c = [C64::new(0.0, 0.0); BASIS_LEN];
        c[index] = C64::new(1.0, 0.0);
        ModalState { coeffs: c }
    }

    pub fn coeffs(&self) -> &[C64; BASIS_LEN] {
        &self.coeffs
    }

    pub fn amplitudes(&self) -> [f64; BASIS_LEN] {
        self.coeffs.map(|c| c.norm())
    }

    pub fn phases(&self) -> [f64; BASIS_LEN] {
        self.coeffs.map(|c| c.arg())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// First coefficient above threshold made real and non-negative.
    pub fn gauged(self) -> Self {
        let mut c = self.coeffs;
        if let Some(k) = c.iter().position(|x| x.norm() > GAUGE_THRESHOLD) {
            let rot = c[k].conj() / c[k].norm();
            for x in c.iter_mut() {
                *x *= rot;
            }
            c[k] = C64::new(c[k].norm(), 0.0);
        }
        ModalState { coeffs: c }
    }

    /// `|⟨self|other⟩|²`.
    pub fn overlap(&self, other: &ModalState) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a.conj() * b).sum::<C64>().norm_sqr()
    }

    /// Coefficients in the logical LP ⊗ polarization basis
    /// `(LP01,H), (LP01,V), (LP11x,H), (LP11x,V), (LP11y,H), (LP11y,V)`.
    pub fn lp_coefficients(&self) -> [C64; BASIS_LEN] {
        let m = vector_to_lp_matrix();
        let mut out = [C64::new(0.0, 0.0); BASIS_LEN];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..BASIS_LEN).map(|j| self.coeffs[j] * m[i][j]).sum();
        }
        out
    }

    pub fn from_lp_coefficients(lp: [C64; BASIS_LEN]) -> Result<Self> {
        let m = vector_to_lp_matrix();
        let mut c = [C64::new(0.0, 0.0); BASIS_LEN];
        for (j, cj) in c.iter_mut().enumerate() {
            *cj = (0..BASIS_LEN).map(|i| lp[i] * m[i][j]).sum();
        }
        ModalState::new(c)
    }
}

/// Real orthogonal map from vector-mode coefficients to logical LP ⊗
/// polarization coefficients (rows: logical, columns: [`BASIS`]).
///
/// With TE01 ∝ (−sin φ, cos φ), TM01 ∝ (cos φ, sin φ), HE21a ∝ (sin φ, cos φ)
/// and HE21b ∝ (cos φ, −sin φ):
/// LP11xV = (TE01 + HE21a)/√2, LP11xH = (TM01 + HE21b)/√2,
/// LP11yH = (HE21a − TE01)/√2, LP11yV = (TM01 − HE21b)/√2.
pub fn vector_to_lp_matrix() -> [[f64; BASIS_LEN]; BASIS_LEN] {
    let h = FRAC_1_SQRT_2;
    [
        [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, h, 0.0, h],
        [0.0, 0.0, h, 0.0, h, 0.0],
        [0.0, 0.0, -h, 0.0, h, 0.0],
        [0.0, 0.0, 0.0, h, 0.0, -h],
    ]
}

/// Spatial LP mode in the logical basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpLabel {
    #[serde(rename = "LP01")]
    Lp01,
    #[serde(rename = "LP11x")]
    Lp11x,
    #[serde(rename = "LP11y")]
    Lp11y,
}

impl LpLabel {
    pub fn index(&self) -> usize {
        match self {
            LpLabel::Lp01 => 0,
            LpLabel::Lp11x => 1,
            LpLabel::Lp11y => 2,
        }
    }
}

/// Uniform polarization. `H ↔ x̂`, `V ↔ ŷ`; `R` has `S3 > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarization {
    H,
    V,
    D,
    A,
    R,
    L,
}

impl Polarization {
    pub const ALL: [Polarization; 6] =
        [Polarization::H, Polarization::V, Polarization::D, Polarization::A, Polarization::R, Polarization::L];

    /// Jones vector `(x, y)`.
    pub fn jones(&self) -> [C64; 2] {
        let h = FRAC_1_SQRT_2;
        let r = |x: f64| C64::new(x, 0.0);
        match self {
            Polarization::H => [r(1.0), r(0.0)],
            Polarization::V => [r(0.0), r(1.0)],
            Polarization::D => [r(h), r(h)],
            Polarization::A => [r(h), r(-h)],
            Polarization::R => [r(h), C64::new(0.0, h)],
            Polarization::L => [r(h), C64::new(0.0, -h)],
        }
    }
}

/// Vector-mode state realizing a single LP mode with uniform polarization.
pub fn lp_combination(label: LpLabel, pol: Polarization) -> ModalState {
    let mut lp = [C64::new(0.0, 0.0); BASIS_LEN];
    let j = pol.jones();
    lp[2 * label.index()] = j[0];
    lp[2 * label.index() + 1] = j[1];
    ModalState::from_lp_coefficients(lp).expect("unit-norm logical state")
}

/// Normalized sum of several states with the given complex weights, e.g.
/// `(LP01V + LP11xV)/√2`.
pub fn combine(parts: &[(C64, ModalState)]) -> Result<ModalState> {
    let mut c = [C64::new(0.0, 0.0); BASIS_LEN];
    for (w, s) in parts {
        for (ci, si) in c.iter_mut().zip(s.coeffs()) {
            *ci += w * si;
        }
    }
    ModalState::new(c)
}

/// Pointwise `Ψ = Σ c_m ψ_m`.
pub fn superpose(state: &ModalState, mode_fields: &[VectorField]) -> Result<VectorField> {
    if mode_fields.len() != BASIS_LEN {
        return Err(Error::Shape(format!("expected {BASIS_LEN} basis fields, got {}", mode_fields.len())));
    }
    superpose_coeffs(state.coeffs(), mode_fields)
}

pub(crate) fn superpose_coeffs(coeffs: &[C64], mode_fields: &[VectorField]) -> Result<VectorField> {
    let grid = mode_fields[0].grid;
    for f in mode_fields {
        check_grid(&grid, &f.grid)?;
    }
    let mut out = VectorField::zeros(grid);
    for (c, f) in coeffs.iter().zip(mode_fields) {
        if *c == C64::new(0.0, 0.0) {
            continue;
        }
        for (o, v) in out.ex.iter_mut().zip(&f.ex) {
            *o += c * v;
        }
        for (o, v) in out.ey.iter_mut().zip(&f.ey) {
            *o += c * v;
        }
    }
    Ok(out)
}

/// Spatially resolved Stokes parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StokesMap {
    pub grid: GridSpec,
    pub s0: Vec<f64>,
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
    pub s3: Vec<f64>,
}

impl StokesMap {
    pub fn component(&self, k: usize) -> &[f64] {
        match k {
            0 => &self.s0,
            1 => &self.s1,
            2 => &self.s2,
            3 => &self.s3,
            _ => panic!("Stokes index {k} out of range"),
        }
    }

    pub fn component_mut(&mut self, k: usize) -> &mut Vec<f64> {
        match k {
            0 => &mut self.s0,
            1 => &mut self.s1,
            2 => &mut self.s2,
            3 => &mut self.s3,
            _ => panic!("Stokes index {k} out of range"),
        }
    }

    pub fn total_power(&self) -> f64 {
        self.s0.iter().sum::<f64>() * self.grid.area_element()
    }

    /// Reconstruct `(|E_x|, |E_y| e^{iδ})` per pixel, up to a global phase.
    pub fn to_field(&self) -> VectorField {
        let mut f = VectorField::zeros(self.grid);
        for i in 0..self.grid.len() {
            let ax = (0.5 * (self.s0[i] + self.s1[i])).max(0.0).sqrt();
            let ay = (0.5 * (self.s0[i] - self.s1[i])).max(0.0).sqrt();
            let delta = self.s3[i].atan2(self.s2[i]);
            f.ex[i] = C64::new(ax, 0.0);
            f.ey[i] = C64::from_polar(ay, delta);
        }
        f
    }
}

/// `S0 = |Ex|²+|Ey|²`, `S1 = |Ex|²−|Ey|²`, `S2 = 2 Re(Ex* Ey)`,
/// `S3 = 2 Im(Ex* Ey)`.
pub fn stokes_map(field: &VectorField) -> StokesMap {
    let n = field.grid.len();
    let (mut s0, mut s1, mut s2, mut s3) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        let (x, y) = (field.ex[i], field.ey[i]);
        let (ix, iy) = (x.norm_sqr(), y.norm_sqr());
        let cross = x.conj() * y;
        s0[i] = ix + iy;
        s1[i] = ix - iy;
        s2[i] = 2.0 * cross.re;
        s3[i] = 2.0 * cross.im;
    }
    StokesMap { grid: field.grid, s0, s1, s2, s3 }
}

pub const STOKES_CSV_HEADER: [&str; 6] = ["x_um", "y_um", "s0", "s1", "s2", "s3"];

/// One row per pixel, x fastest.
pub fn write_stokes_csv(path: &std::path::Path, map: &StokesMap) -> Result<()> {
    let n = map.grid.samples_per_axis;
    let rows = (0..map.grid.len()).map(|i| {
        let (x, y) = (map.grid.coord(i % n), map.grid.coord(i / n));
        vec![
            io::fmt_sig(x),
            io::fmt_sig(y),
            io::fmt_sig(map.s0[i]),
            io::fmt_sig(map.s1[i]),
            io::fmt_sig(map.s2[i]),
            io::fmt_sig(map.s3[i]),
        ]
    });
    io::write_csv(path, &STOKES_CSV_HEADER, rows)
}

/// Inverse of [`write_stokes_csv`]. The grid is recovered from the
/// coordinates, which must form a square, uniformly spaced, x-fastest raster.
pub fn read_stokes_csv(path: &std::path::Path) -> Result<StokesMap> {
    let bad = |message: String| Error::Parse { path: path.to_path_buf(), message };
    let (header, rows) = io::read_csv(path)?;
    if header.iter().map(String::as_str).ne(STOKES_CSV_HEADER) {
        return Err(bad(format!("expected header {}", STOKES_CSV_HEADER.join(","))));
    }
    let n = (rows.len() as f64).sqrt().round() as usize;
    if n < 2 || n * n != rows.len() {
        return Err(bad(format!("{} rows do not form a square grid", rows.len())));
    }
    let mut vals = vec![[0.0; 6]; rows.len()];
    for (row, v) in rows.iter().zip(&mut vals) {
        if row.len() != 6 {
            return Err(bad("expected 6 columns".into()));
        }
        for (c, s) in row.iter().enumerate() {
            v[c] = io::parse_f64(path, s)?;
        }
    }
    let (x0, x1) = (vals[0][0], vals[n - 1][0]);
    let spacing = (x1 - x0) / (n - 1) as f64;
    if !(spacing > 0.0) {
        return Err(bad("x coordinates must increase".into()));
    }
    let grid = GridSpec { half_width_um: 0.5 * spacing * n as f64, samples_per_axis: n };
    let tol = 1e-6 * spacing;
    for (i, v) in vals.iter().enumerate() {
        if (v[0] - grid.coord(i % n)).abs() > tol || (v[1] - grid.coord(i / n)).abs() > tol {
            return Err(bad(format!("row {} is off the centred uniform grid", i + 2)));
        }
    }
    let col = |c: usize| vals.iter().map(|v| v[c]).collect::<Vec<_>>();
    Ok(StokesMap { grid, s0: col(2), s1: col(3), s2: col(4), s3: col(5) })
}

/// Intensity-weighted centroid `(x, y)` in µm.
pub fn centroid(intensity: &[f64], grid: &GridSpec) -> Result<(f64, f64)> {
    let n = grid.samples_per_axis;
    if intensity.len() != grid.len() {
        return Err(Error::Shape("intensity array does not match grid".into()));
    }
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for iy in 0..n {
        for ix in 0..n {
            let v = intensity[iy * n + ix];
            sw += v;
            sx += v * grid.coord(ix);
            sy += v * grid.coord(iy);
        }
    }
    if !(sw > 0.0) {
        return Err(Error::Numeric("centroid of a zero image".into()));
    }
    Ok((sx / sw, sy / sw))
}

/// Per-bin power (unnormalized) around `center`. Each pixel is treated as a
/// uniformly bright square and its power is split between bins by the exact
/// area of the square inside each 1° wedge, so the bins sum to the total grid
/// power.
pub fn azimuthal_power(intensity: &[f64], grid: &GridSpec, center: (f64, f64)) -> Result<Vec<f64>> {
    if intensity.len() != grid.len() {
        return Err(Error::Shape("intensity array does not match grid".into()));
    }
    let hw = grid.half_width_um;
    if !(center.0.abs() < hw && center.1.abs() < hw) {
        return Err(Error::Domain(format!("unwrap centre {center:?} outside the grid")));
    }
    let n = grid.samples_per_axis;
    let d = grid.spacing();
    let bin = 2.0 * PI / AZIMUTH_BINS as f64;
    let mut bins = vec![0.0; AZIMUTH_BINS];
    for iy in 0..n {
        for ix in 0..n {
            let p = intensity[iy * n + ix] * d * d;
            if p == 0.0 {
                continue;
            }
            let xc = grid.coord(ix) - center.0;
            let yc = grid.coord(iy) - center.1;
            let square = [
                (xc - 0.5 * d, yc - 0.5 * d),
                (xc + 0.5 * d, yc - 0.5 * d),
                (xc + 0.5 * d, yc + 0.5 * d),
                (xc - 0.5 * d, yc + 0.5 * d),
            ];
            let contains_apex = xc.abs() <= 0.5 * d && yc.abs() <= 0.5 * d;
            let (first, last) = if contains_apex {
                (0, AZIMUTH_BINS as i64 - 1)
            } else {
                let theta_c = yc.atan2(xc);
                let (mut lo, mut hi) = (0.0f64, 0.0f64);
                for (x, y) in square {
                    let rel = wrap_angle(y.atan2(x) - theta_c);
                    lo = lo.min(rel);
                    hi = hi.max(rel);
                }
                // bin k covers [k − ½, k + ½) degrees
                let k0 = ((theta_c + lo) / bin + 0.5).floor() as i64;
                let k1 = ((theta_c + hi) / bin + 0.5).floor() as i64;
                (k0, k1)
            };
            let mut pieces = Vec::with_capacity((last - first + 1) as usize);
            for k in first..=last {
                let a0 = (k as f64 - 0.5) * bin;
                let poly = clip_half_plane(&square, (-a0.sin(), a0.cos()));
                let a1 = a0 + bin;
                let poly = clip_half_plane(&poly, (a1.sin(), -a1.cos()));
                pieces.push((k, polygon_area(&poly)));
            }
            let total: f64 = pieces.iter().map(|(_, a)| a).sum();
            if total > 0.0 {
                for (k, a) in pieces {
                    bins[k.rem_euclid(AZIMUTH_BINS as i64) as usize] += p * a / total;
                }
            }
        }
    }
    Ok(bins)
}

fn wrap_angle(a: f64) -> f64 {
    if a > PI {
        a - 2.0 * PI
    } else if a < -PI {
        a + 2.0 * PI
    } else {
        a
    }
}

/// Keep the part of a convex polygon with `normal · p ≥ 0`.
fn clip_half_plane(poly: &[(f64, f64)], normal: (f64, f64)) -> Vec<(f64, f64)> {
    let side = |p: (f64, f64)| normal.0 * p.0 + normal.1 * p.1;
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let (sa, sb) = (side(a), side(b));
        if sa >= 0.0 {
            out.push(a);
        }
        if (sa >= 0.0) != (sb >= 0.0) {
            let t = sa / (sa - sb);
            out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
        }
    }
    out
}

fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    0.5 * twice.abs()
}

/// Azimuthal unwrap normalized to unit maximum: intensity summed along the
/// radial direction in 360 one-degree bins.
pub fn azimuthal_unwrap(intensity: &[f64], grid: &GridSpec, center: (f64, f64)) -> Result<Vec<f64>> {
    let bins = azimuthal_power(intensity, grid, center)?;
    let max = bins.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::Numeric("azimuthal unwrap of a zero image".into()));
    }
    Ok(bins.into_iter().map(|b| b / max).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lp_matrix_is_orthogonal() {
        let m = vector_to_lp_matrix();
        for i in 0..6 {
            for j in 0..6 {
                let d: f64 = (0..6).map(|k| m[i][k] * m[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gauge_makes_first_component_real() {
        let s = ModalState::new([
            C64::new(0.0, 0.0),
            C64::new(0.0, 2.0),
            C64::new(1.0, 1.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
        ])
        .unwrap();
        assert!(s.coeffs()[1].im.abs() < 1e-15 && s.coeffs()[1].re > 0.0);
        assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
        assert_eq!(s.gauged(), s);
    }

    #[test]
    fn grid_checks() {
        let g = GridSpec { half_width_um: 8.0, samples_per_axis: 32 };
        assert!(matches!(g.validate(2.0), Err(Error::Resolution(_))));
        let g = GridSpec { half_width_um: 3.0, samples_per_axis: 128 };
        assert!(matches!(g.validate(2.0), Err(Error::Domain(_))));
        let g = GridSpec { half_width_um: 400.0, samples_per_axis: 64 };
        assert!(matches!(g.validate(2.0), Err(Error::Resolution(_))));
    }
}
