//! Step-index fiber: scalar (LP) and exact vector (HE/EH/TE/TM) eigenmodes,
//! beat lengths, group-velocity walk-off and intensity overlap integrals.
//!
//! Lengths at the API boundary: core radius in µm, wavelengths in nm, fiber
//! length in m. Propagation constants are rad/m, overlap integrals 1/m².
//!
//! The characteristic equations are written in pole-free form (multiplied
//! through by the Bessel factors that vanish inside the guided range) so a
//! uniform sign-change scan over `u ∈ (0, V)` brackets every root and nothing
//! else.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::material::{Sellmeier, SPEED_OF_LIGHT};
use crate::quad;
use crate::special::{bessel_j, bessel_j_prime, bessel_j_zero, bessel_k_ratio, bessel_k_scaled, bisect};
use crate::{Error, Result};

/// Supported wavelength window (nm).
pub const WINDOW_NM: (f64, f64) = (400.0, 1100.0);

const SCAN_POINTS: usize = 2000;
const GROUP_INDEX_STEP_NM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IndexModel {
    /// Wavelength-independent core and cladding indices.
    Fixed { n_core: f64, n_clad: f64 },
    /// Independent Sellmeier models for core and cladding.
    Sellmeier { core: Sellmeier, cladding: Sellmeier },
    /// Sellmeier cladding with the core raised to a constant numerical
    /// aperture, `n_core² = n_clad² + NA²`.
    MatchedNa { cladding: Sellmeier, numerical_aperture: f64 },
}

impl IndexModel {
    pub fn is_dispersive(&self) -> bool {
        !matches!(self, IndexModel::Fixed { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberSpec {
    pub core_radius_um: f64,
    pub index: IndexModel,
    pub length_m: f64,
}

impl FiberSpec {
    /// 780HP-like preset: 2.3 µm core radius, NA 0.12 on a fused-silica
    /// cladding (LP11 cutoff ≈ 721 nm), 5 cm long.
    pub fn preset_780hp() -> Self {
        FiberSpec {
            core_radius_um: 2.3,
            index: IndexModel::MatchedNa { cladding: Sellmeier::FUSED_SILICA, numerical_aperture: 0.12 },
            length_m: 0.05,
        }
    }

    /// Constant-NA fused-silica fiber with the given radius.
    pub fn silica_with_na(core_radius_um: f64, numerical_aperture: f64, length_m: f64) -> Self {
        FiberSpec {
            core_radius_um,
            index: IndexModel::MatchedNa { cladding: Sellmeier::FUSED_SILICA, numerical_aperture },
            length_m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.core_radius_um > 0.0) {
            return Err(Error::Domain(format!("core radius must be positive, got {}", self.core_radius_um)));
        }
        if !(self.length_m > 0.0) {
            return Err(Error::Domain(format!("fiber length must be positive, got {}", self.length_m)));
        }
        Ok(())
    }

    /// Core and cladding indices at `wavelength_nm`.
    pub fn indices(&self, wavelength_nm: f64) -> Result<(f64, f64)> {
        check_window(wavelength_nm)?;
        let l_um = wavelength_nm * 1e-3;
        let (n_core, n_clad) = match self.index {
            IndexModel::Fixed { n_core, n_clad } => (n_core, n_clad),
            IndexModel::Sellmeier { core, cladding } => (core.index(l_um), cladding.index(l_um)),
            IndexModel::MatchedNa { cladding, numerical_aperture } => {
                let n_clad = cladding.index(l_um);
                ((n_clad * n_clad + numerical_aperture * numerical_aperture).sqrt(), n_clad)
            }
        };
        if !(n_core > n_clad && n_clad > 1.0) {
            return Err(Error::Domain(format!(
                "index model requires n_core > n_clad > 1, got {n_core} / {n_clad} at {wavelength_nm} nm"
            )));
        }
        Ok((n_core, n_clad))
    }

    /// Normalized frequency `V = (2π a / λ) √(n_core² − n_clad²)`.
    pub fn v_number(&self, wavelength_nm: f64) -> Result<f64> {
        let (n1, n2) = self.indices(wavelength_nm)?;
        Ok(2.0 * PI * self.core_radius_um / (wavelength_nm * 1e-3) * (n1 * n1 - n2 * n2).sqrt())
    }
}

fn check_window(wavelength_nm: f64) -> Result<()> {
    if !(wavelength_nm >= WINDOW_NM.0 && wavelength_nm <= WINDOW_NM.1) {
        return Err(Error::Domain(format!(
            "wavelength {wavelength_nm} nm outside supported window {}–{} nm",
            WINDOW_NM.0, WINDOW_NM.1
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    HE,
    TE,
    TM,
    EH,
}

/// Degenerate-partner tag. HE11 uses `X`/`Y`, other hybrid modes `A`/`B`,
/// TE/TM carry `Single`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    X,
    Y,
    A,
    B,
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeId {
    pub family: Family,
    pub azimuthal_order: u32,
    pub radial_order: u32,
    pub variant: Variant,
}

impl ModeId {
    pub const HE11X: ModeId = ModeId::new(Family::HE, 1, 1, Variant::X);
    pub const HE11Y: ModeId = ModeId::new(Family::HE, 1, 1, Variant::Y);
    pub const TE01: ModeId = ModeId::new(Family::TE, 0, 1, Variant::Single);
    pub const TM01: ModeId = ModeId::new(Family::TM, 0, 1, Variant::Single);
    pub const HE21A: ModeId = ModeId::new(Family::HE, 2, 1, Variant::A);
    pub const HE21B: ModeId = ModeId::new(Family::HE, 2, 1, Variant::B);

    pub const fn new(family: Family, azimuthal_order: u32, radial_order: u32, variant: Variant) -> Self {
        ModeId { family, azimuthal_order, radial_order, variant }
    }

    /// Check the family/order/variant combination.
    pub fn validate(&self) -> Result<()> {
        let ok = match self.family {
            Family::TE | Family::TM => self.azimuthal_order == 0 && self.variant == Variant::Single,
            Family::HE if self.azimuthal_order == 1 => matches!(self.variant, Variant::X | Variant::Y),
            Family::HE | Family::EH => self.azimuthal_order >= 1 && matches!(self.variant, Variant::A | Variant::B),
        } && self.radial_order >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid mode id {self}")))
        }
    }

    /// Azimuthal order `l` of the LP group this mode belongs to.
    pub fn lp_order(&self) -> u32 {
        match self.family {
            Family::HE => self.azimuthal_order - 1,
            Family::EH => self.azimuthal_order + 1,
            Family::TE | Family::TM => 1,
        }
    }

    pub fn lp_label(&self) -> (u32, u32) {
        (self.lp_order(), self.radial_order)
    }
}

impl std::fmt::Display for ModeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let fam = match self.family {
            Family::HE => "HE",
            Family::EH => "EH",
            Family::TE => "TE",
            Family::TM => "TM",
        };
        let tag = match self.variant {
            Variant::X => "x",
            Variant::Y => "y",
            Variant::A => "a",
            Variant::B => "b",
            Variant::Single => "",
        };
        write!(f, "{fam}{}{}{tag}", self.azimuthal_order, self.radial_order)
    }
}

/// One scalar LP solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LpMode {
    pub l: u32,
    pub m: u32,
    pub u: f64,
    pub w: f64,
    pub n_eff: f64,
    pub residual: f64,
}

impl LpMode {
    pub fn label(&self) -> String {
        format!("LP{}{}", self.l, self.m)
    }
}

/// A solved vector eigenmode together with what is needed to evaluate its
/// transverse field anywhere in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GuidedMode {
    pub id: ModeId,
    pub wavelength_nm: f64,
    pub n_eff: f64,
    /// Propagation constant (rad/m).
    pub beta: f64,
    pub u: f64,
    pub w: f64,
    pub v: f64,
    /// `n_g = n_eff − λ dn_eff/dλ`; `None` if a neighbouring wavelength
    /// falls outside the window or past cutoff.
    pub group_index: Option<f64>,
    pub core_radius_um: f64,
    pub residual: f64,
}

impl GuidedMode {
    /// Radial profile, `J_l(ur/a)/J_l(u)` in the core and `K_l(wr/a)/K_l(w)`
    /// outside, continuous at `r = a`.
    pub fn radial(&self, r_um: f64) -> f64 {
        let l = self.id.lp_order() as i32;
        let rho = r_um / self.core_radius_um;
        if rho < 1.0 {
            bessel_j(l, self.u * rho) / bessel_j(l, self.u)
        } else {
            let ratio = bessel_k_scaled(l, self.w * rho) / bessel_k_scaled(l, self.w);
            ratio * (-self.w * (rho - 1.0)).exp()
        }
    }

    /// Polarization/azimuthal pattern `(p_x, p_y)` at azimuth `phi`.
    pub fn pattern(&self, phi: f64) -> (f64, f64) {
        let l = self.id.lp_order() as f64;
        let (s, c) = (l * phi).sin_cos();
        match (self.id.family, self.id.variant) {
            (Family::HE, Variant::X) => (1.0, 0.0),
            (Family::HE, Variant::Y) => (0.0, 1.0),
            (Family::HE, Variant::A) => (s, c),
            (Family::HE, _) => (c, -s),
            (Family::TM, _) | (Family::EH, Variant::A) => (c, s),
            (Family::TE, _) | (Family::EH, _) => (-s, c),
        }
    }

    /// Transverse electric field `(E_x, E_y)` at `(x, y)` in µm, unnormalized
    /// (unit radial profile at the core boundary).
    pub fn field(&self, x_um: f64, y_um: f64) -> (f64, f64) {
        let r = x_um.hypot(y_um);
        let f = self.radial(r);
        let (px, py) = self.pattern(y_um.atan2(x_um));
        (f * px, f * py)
    }

    /// Effective area `A_eff = 1 / f_jj` (m²).
    pub fn effective_area(&self) -> Result<f64> {
        Ok(1.0 / overlap_integral(self, self)?)
    }
}

/// Scalar LP characteristic function in pole-free form,
/// `u J_{l−1}(u) + J_l(u) · w K_{l−1}(w)/K_l(w)`.
fn lp_characteristic(l: i32, u: f64, v: f64) -> f64 {
    let w = (v * v - u * u).max(0.0).sqrt();
    let kterm = if w > 0.0 { w * bessel_k_ratio(l, w) } else { 0.0 };
    u * bessel_j(l - 1, u) + bessel_j(l, u) * kterm
}

/// TM0m characteristic function, `u J0(u) + (n1²/n2²) J1(u) · w K0(w)/K1(w)`.
fn tm_characteristic(u: f64, v: f64, n1: f64, n2: f64) -> f64 {
    let w = (v * v - u * u).max(0.0).sqrt();
    let kterm = if w > 0.0 { w * bessel_k_ratio(1, w) } else { 0.0 };
    u * bessel_j(0, u) + (n1 * n1) / (n2 * n2) * bessel_j(1, u) * kterm
}

/// Hybrid-mode characteristic function of order `nu ≥ 1`, multiplied by
/// `u² w²`. `eh` selects the EH branch of the quadratic in `J'/(uJ)`.
fn hybrid_characteristic(nu: i32, u: f64, v: f64, n1: f64, n2: f64, eh: bool) -> f64 {
    let w = (v * v - u * u).max(0.0).sqrt();
    let nuf = nu as f64;
    let r = (n2 * n2) / (n1 * n1);
    // w² · K'_ν(w)/(w K_ν(w)) = −(w K_{ν−1}/K_ν + ν)
    let w2_eta2 = -(w * bessel_k_ratio(nu, w) + nuf);
    let u2 = u * u;
    let w2 = w * w;
    // w⁴ R = ν² (w²/u² + 1)(w²/u² + r)
    let w4_r = nuf * nuf * (w2 / u2 + 1.0) * (w2 / u2 + r);
    let root = (w2_eta2 * w2_eta2 * (1.0 - r) * (1.0 - r) / 4.0 + w4_r).sqrt();
    let w2_h = -w2_eta2 * (1.0 + r) / 2.0 + if eh { root } else { -root };
    u * w2 * bessel_j_prime(nu, u) - u2 * bessel_j(nu, u) * w2_h
}

/// Bracket every sign change of `f` on a uniform grid over `(0, v)` and refine
/// by bisection. `f_at_v` is the analytic limit at `u = v` when available.
fn scan_roots(f: &impl Fn(f64) -> f64, v: f64, f_at_v: Option<f64>) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = (1..SCAN_POINTS)
        .map(|i| {
            let u = v * i as f64 / SCAN_POINTS as f64;
            (u, f(u))
        })
        .collect();
    match f_at_v {
        Some(fv) => pts.push((v, fv)),
        None => {
            let u = v * (1.0 - 1e-10);
            pts.push((u, f(u)));
        }
    }
    let mut roots = Vec::new();
    for pair in pts.windows(2) {
        let ((u0, f0), (u1, f1)) = (pair[0], pair[1]);
        if f0 == 0.0 {
            roots.push((u0, 0.0));
        } else if f0 * f1 < 0.0 {
            // Roots closer to V than double precision resolves are clamped.
            let u = bisect(f, u0, u1).min(v * (1.0 - f64::EPSILON));
            roots.push((u, f(u).abs()));
        }
    }
    roots
}

/// Cutoff values of V for LP_{l,m}, m = 1, 2, … that lie below `v_max`.
fn lp_cutoffs(l: u32, v_max: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut m = 1;
    loop {
        let vc = if l == 0 {
            if m == 1 {
                0.0
            } else {
                bessel_j_zero(1, m - 1)
            }
        } else {
            bessel_j_zero(l as i32 - 1, m)
        };
        if vc >= v_max {
            return out;
        }
        out.push(vc);
        m += 1;
    }
}

struct Context {
    n1: f64,
    n2: f64,
    v: f64,
    k0: f64,
    a_um: f64,
}

impl Context {
    fn new(fiber: &FiberSpec, wavelength_nm: f64) -> Result<Self> {
        fiber.validate()?;
        let (n1, n2) = fiber.indices(wavelength_nm)?;
        let v = fiber.v_number(wavelength_nm)?;
        Ok(Context { n1, n2, v, k0: 2.0 * PI / (wavelength_nm * 1e-9), a_um: fiber.core_radius_um })
    }

    fn n_eff(&self, u: f64) -> f64 {
        let kt = u / (self.a_um * 1e-6);
        (self.n1 * self.n1 - (kt / self.k0).powi(2)).sqrt()
    }
}

/// Roots guided under the strict-inequality cutoff rule. Roots closer to a
/// cutoff than the scan can resolve are dropped.
fn strict_roots(roots: Vec<(f64, f64)>, cutoffs: &[f64], v: f64, what: &str) -> Result<Vec<(f64, f64)>> {
    let expected = cutoffs.iter().filter(|&&c| v > c).count();
    if roots.len() > expected {
        return Ok(roots.into_iter().take(expected).collect());
    }
    if roots.len() < expected {
        let missing = cutoffs[roots.len()];
        if v - missing > 1e-8 {
            return Err(Error::Solver(format!(
                "{what}: expected {expected} roots at V = {v}, bracketed {} (cutoff {missing})",
                roots.len()
            )));
        }
    }
    Ok(roots)
}

/// All guided LP_{l,m} modes for one azimuthal order `l`.
fn solve_lp_order(ctx: &Context, l: u32) -> Result<Vec<LpMode>> {
    let cutoffs = lp_cutoffs(l, ctx.v + 1.0);
    let li = l as i32;
    let f = |u: f64| lp_characteristic(li, u, ctx.v);
    let at_v = ctx.v * bessel_j(li - 1, ctx.v);
    let roots = strict_roots(scan_roots(&f, ctx.v, Some(at_v)), &cutoffs, ctx.v, "LP")?;
    Ok(roots
        .into_iter()
        .enumerate()
        .map(|(i, (u, residual))| LpMode {
            l,
            m: i as u32 + 1,
            u,
            w: (ctx.v * ctx.v - u * u).sqrt(),
            n_eff: ctx.n_eff(u),
            residual,
        })
        .collect())
}

/// Every guided LP mode, ordered by `(l, m)`.
pub fn solve_lp_modes(fiber: &FiberSpec, wavelength_nm: f64) -> Result<Vec<LpMode>> {
    let ctx = Context::new(fiber, wavelength_nm)?;
    let mut out = Vec::new();
    for l in 0.. {
        if l > 0 && lp_cutoffs(l, ctx.v).is_empty() {
            break;
        }
        out.extend(solve_lp_order(&ctx, l)?);
    }
    Ok(out)
}

/// Number of guided LP mode groups (each `(l, m)` counts once), from the
/// cutoff rule: LP_{l,m} is guided iff V exceeds its cutoff strictly.
pub fn count_guided_lp_groups(fiber: &FiberSpec, wavelength_nm: f64) -> Result<usize> {
    fiber.validate()?;
    let v = fiber.v_number(wavelength_nm)?;
    let mut count = 0;
    for l in 0.. {
        let n = lp_cutoffs(l, v).len();
        if n == 0 && l > 0 {
            break;
        }
        count += n;
    }
    Ok(count)
}

/// Roots `(u, residual)` of one vector family at one azimuthal order.
fn solve_family(ctx: &Context, family: Family, nu: u32) -> Result<Vec<(f64, f64)>> {
    let v = ctx.v;
    match family {
        Family::TE => {
            let f = |u: f64| lp_characteristic(1, u, v);
            let cut = lp_cutoffs(1, v + 1.0);
            strict_roots(scan_roots(&f, v, Some(v * bessel_j(0, v))), &cut, v, "TE")
        }
        Family::TM => {
            let f = |u: f64| tm_characteristic(u, v, ctx.n1, ctx.n2);
            let cut = lp_cutoffs(1, v + 1.0);
            strict_roots(scan_roots(&f, v, Some(v * bessel_j(0, v))), &cut, v, "TM")
        }
        Family::HE | Family::EH => {
            let eh = family == Family::EH;
            let f = |u: f64| hybrid_characteristic(nu as i32, u, v, ctx.n1, ctx.n2, eh);
            let roots = scan_roots(&f, v, None);
            if family == Family::HE && nu == 1 && roots.is_empty() {
                return Err(Error::Solver(format!("failed to bracket the fundamental HE11 root at V = {v}")));
            }
            Ok(roots)
        }
    }
}

fn variants(family: Family, nu: u32) -> &'static [Variant] {
    match (family, nu) {
        (Family::TE | Family::TM, _) => &[Variant::Single],
        (Family::HE, 1) => &[Variant::X, Variant::Y],
        _ => &[Variant::A, Variant::B],
    }
}

/// All (family, azimuthal order) pairs that can be guided at this V.
fn candidate_families(v: f64) -> Vec<(Family, u32)> {
    let mut out = vec![(Family::HE, 1)];
    // LP group l needs V above the first zero of J_{l−1}.
    let mut l = 1u32;
    while !lp_cutoffs(l, v + 0.5).is_empty() {
        if l == 1 {
            out.push((Family::TE, 0));
            out.push((Family::TM, 0));
        } else {
            out.push((Family::EH, l - 1));
        }
        out.push((Family::HE, l + 1));
        l += 1;
    }
    out
}

fn family_modes(ctx: &Context, family: Family, nu: u32, wavelength_nm: f64) -> Result<Vec<GuidedMode>> {
    let mut out = Vec::new();
    for (i, (u, residual)) in solve_family(ctx, family, nu)?.into_iter().enumerate() {
        let n_eff = ctx.n_eff(u);
        for &variant in variants(family, nu) {
            out.push(GuidedMode {
                id: ModeId::new(family, nu, i as u32 + 1, variant),
                wavelength_nm,
                n_eff,
                beta: ctx.k0 * n_eff,
                u,
                w: (ctx.v * ctx.v - u * u).sqrt(),
                v: ctx.v,
                group_index: None,
                core_radius_um: ctx.a_um,
                residual,
            });
        }
    }
    Ok(out)
}

fn mode_order_key(m: &GuidedMode) -> (u32, u32, u8, Variant) {
    let family_rank = match m.id.family {
        Family::TE => 0,
        Family::TM => 1,
        Family::EH => 2,
        Family::HE => 3,
    };
    (m.id.lp_order(), m.id.radial_order, family_rank, m.id.variant)
}

/// Every guided vector eigenmode, ordered by LP group then family. For the
/// two-group case this is `HE11x, HE11y, TE01, TM01, HE21a, HE21b`.
pub fn solve_vector_modes(fiber: &FiberSpec, wavelength_nm: f64) -> Result<Vec<GuidedMode>> {
    let ctx = Context::new(fiber, wavelength_nm)?;
    let mut modes = Vec::new();
    for (family, nu) in candidate_families(ctx.v) {
        modes.extend(family_modes(&ctx, family, nu, wavelength_nm)?);
    }
    // Group index from neighbouring wavelengths.
    let neighbours: Vec<Option<Vec<GuidedMode>>> = [-GROUP_INDEX_STEP_NM, GROUP_INDEX_STEP_NM]
        .iter()
        .map(|d| {
            let lam = wavelength_nm + d;
            let c = Context::new(fiber, lam).ok()?;
            let mut v = Vec::new();
            for (family, nu) in candidate_families(ctx.v) {
                v.extend(family_modes(&c, family, nu, lam).ok()?);
            }
            Some(v)
        })
        .collect();
    if let (Some(lo), Some(hi)) = (&neighbours[0], &neighbours[1]) {
        for m in modes.iter_mut() {
            let find = |set: &Vec<GuidedMode>| set.iter().find(|x| x.id == m.id).map(|x| x.n_eff);
            if let (Some(a), Some(b)) = (find(lo), find(hi)) {
                let slope = (b - a) / (2.0 * GROUP_INDEX_STEP_NM);
                m.group_index = Some(m.n_eff - wavelength_nm * slope);
            }
        }
    }
    modes.sort_by_key(mode_order_key);
    Ok(modes)
}

/// Look up a mode by id in a solved set.
pub fn find_mode(modes: &[GuidedMode], id: ModeId) -> Result<&GuidedMode> {
    modes.iter().find(|m| m.id == id).ok_or_else(|| Error::Domain(format!("mode {id} is not guided")))
}

/// Beat length `λ / |n_eff,a − n_eff,b|` in metres.
pub fn beat_length(a: &GuidedMode, b: &GuidedMode) -> Result<f64> {
    if (a.wavelength_nm - b.wavelength_nm).abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "beat length needs modes at one wavelength ({} vs {} nm)",
            a.wavelength_nm, b.wavelength_nm
        )));
    }
    let dn = (a.n_eff - b.n_eff).abs();
    if dn == 0.0 {
        return Err(Error::Degenerate(dn));
    }
    Ok(a.wavelength_nm * 1e-9 / dn)
}

/// Group-delay mismatch between pump and signal per unit length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WalkOff {
    /// `d_w = (n_g(λ_s) − n_g(λ_p)) / c` in s/m; positive means the signal
    /// lags the pump.
    pub seconds_per_meter: f64,
    /// False when the index model has no material dispersion and `d_w` was
    /// set to zero.
    pub dispersive: bool,
}

/// Fundamental-mode group index at `wavelength_nm`.
pub fn fundamental_group_index(fiber: &FiberSpec, wavelength_nm: f64) -> Result<f64> {
    let neff = |lam: f64| -> Result<f64> {
        let ctx = Context::new(fiber, lam)?;
        let roots = solve_family(&ctx, Family::HE, 1)?;
        Ok(ctx.n_eff(roots[0].0))
    };
    let h = GROUP_INDEX_STEP_NM;
    let n = neff(wavelength_nm)?;
    let slope = (neff(wavelength_nm + h)? - neff(wavelength_nm - h)?) / (2.0 * h);
    Ok(n - wavelength_nm * slope)
}

pub fn walk_off_parameter(fiber: &FiberSpec, pump_nm: f64, signal_nm: f64) -> Result<WalkOff> {
    check_window(pump_nm)?;
    check_window(signal_nm)?;
    if !fiber.index.is_dispersive() {
        log::warn!("fixed-index fiber model has no material dispersion; walk-off set to 0");
        return Ok(WalkOff { seconds_per_meter: 0.0, dispersive: false });
    }
    if pump_nm == signal_nm {
        return Ok(WalkOff { seconds_per_meter: 0.0, dispersive: true });
    }
    let ng_s = fundamental_group_index(fiber, signal_nm)?;
    let ng_p = fundamental_group_index(fiber, pump_nm)?;
    Ok(WalkOff { seconds_per_meter: (ng_s - ng_p) / SPEED_OF_LIGHT, dispersive: true })
}

/// Group-velocity dispersion `β₂ = (λ³ / 2π c²) d²n_eff/dλ²` of the
/// fundamental mode (s²/m).
pub fn fundamental_gvd(fiber: &FiberSpec, wavelength_nm: f64) -> Result<f64> {
    let neff = |lam: f64| -> Result<f64> {
        let ctx = Context::new(fiber, lam)?;
        let roots = solve_family(&ctx, Family::HE, 1)?;
        Ok(ctx.n_eff(roots[0].0))
    };
    let h = 1.0;
    let d2 = (neff(wavelength_nm + h)? - 2.0 * neff(wavelength_nm)? + neff(wavelength_nm - h)?) / (h * h);
    let lam = wavelength_nm * 1e-9;
    let d2_si = d2 * 1e18;
    Ok(lam.powi(3) / (2.0 * PI * SPEED_OF_LIGHT * SPEED_OF_LIGHT) * d2_si)
}

/// Normalized intensity overlap
/// `f_jk = ∬ I_j I_k dA / (∬ I_j dA · ∬ I_k dA)` in 1/m².
///
/// All supported patterns have `|E|²` independent of azimuth, so the
/// integrals reduce to radial ones.
pub fn overlap_integral(j: &GuidedMode, k: &GuidedMode) -> Result<f64> {
    const TOL: f64 = 1e-10;
    let radial_integral = |g: &dyn Fn(f64) -> f64| -> Result<f64> {
        let mut breaks = [j.core_radius_um, k.core_radius_um];
        breaks.sort_by(f64::total_cmp);
        let inner = quad::integrate(g, 0.0, breaks[0], TOL)?;
        let mid = quad::integrate(g, breaks[0], breaks[1], TOL)?;
        let outer = quad::integrate_to_infinity(g, breaks[1], TOL)?;
        Ok(inner + mid + outer)
    };
    let pj = radial_integral(&|r| j.radial(r).powi(2) * r)?;
    let pk = radial_integral(&|r| k.radial(r).powi(2) * r)?;
    let cross = radial_integral(&|r| (j.radial(r) * k.radial(r)).powi(2) * r)?;
    let f_um = cross / (2.0 * PI * pj * pk);
    if !f_um.is_finite() || f_um <= 0.0 {
        return Err(Error::Numeric(format!("non-normalizable profile in overlap {} / {}", j.id, k.id)));
    }
    Ok(f_um * 1e12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fiber_013() -> FiberSpec {
        FiberSpec::silica_with_na(2.2, 0.13, 0.05)
    }

    #[test]
    fn v_numbers_match_closed_form() {
        let f = fiber_013();
        let v790 = 2.0 * PI * 2.2 / 0.79 * 0.13;
        assert_relative_eq!(f.v_number(790.0).unwrap(), v790, max_relative = 1e-12);
    }

    #[test]
    fn out_of_window_is_a_domain_error() {
        assert!(matches!(fiber_013().v_number(1550.0), Err(Error::Domain(_))));
        assert!(matches!(count_guided_lp_groups(&fiber_013(), 350.0), Err(Error::Domain(_))));
    }

    #[test]
    fn lp_roots_are_converged() {
        let f = fiber_013();
        for m in solve_lp_modes(&f, 647.0).unwrap() {
            assert!(m.residual < 1e-10, "{m:?}");
            let v = f.v_number(647.0).unwrap();
            assert_relative_eq!(m.u * m.u + m.w * m.w, v * v, max_relative = 1e-12);
        }
    }

    #[test]
    fn te01_coincides_with_lp11_scalar_root() {
        let f = FiberSpec::preset_780hp();
        let lp = solve_lp_modes(&f, 647.0).unwrap();
        let vm = solve_vector_modes(&f, 647.0).unwrap();
        let te = find_mode(&vm, ModeId::TE01).unwrap();
        assert_relative_eq!(te.u, lp[1].u, max_relative = 1e-13);
    }

    #[test]
    fn mode_id_rules() {
        assert!(ModeId::new(Family::TE, 1, 1, Variant::Single).validate().is_err());
        assert!(ModeId::HE21A.validate().is_ok());
        assert_eq!(ModeId::HE21B.lp_label(), (1, 1));
        assert_eq!(ModeId::HE11X.to_string(), "HE11x");
    }

    #[test]
    fn field_is_continuous_at_core_boundary() {
        let modes = solve_vector_modes(&FiberSpec::preset_780hp(), 647.0).unwrap();
        for m in &modes {
            let a = m.core_radius_um;
            let inside = m.radial(a * (1.0 - 1e-15));
            let outside = m.radial(a);
            assert!((inside - outside).abs() <= 1e-9 * outside.abs(), "{}", m.id);
        }
    }

    #[test]
    fn gvd_is_normal_in_the_visible() {
        let b2 = fundamental_gvd(&FiberSpec::preset_780hp(), 647.0).unwrap();
        // fs²/mm scale for silica around 650 nm is a few tens
        let fs2_per_mm = b2 * 1e30 / 1e3;
        assert!(fs2_per_mm > 20.0 && fs2_per_mm < 80.0, "{fs2_per_mm}");
    }
}
