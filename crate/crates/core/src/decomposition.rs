//! Modal decomposition of a spatially resolved Stokes map by gradient
//! descent.
//!
//! Every Stokes component at a pixel is a Hermitian form in the modal
//! coefficients, `S_k(p) = c† M_k(p) c = Tr(X M_k(p))` with `X = c c†`.
//! Writing `X` in 36 real coordinates `x` turns the pixel-summed loss into a
//! quadratic form `xᵀ G x − 2 bᵀ x + C`. `G` depends only on the basis and
//! the weights, so it is accumulated once; each target only needs `b` and
//! `C`, and a loss/gradient evaluation costs O(36²) instead of O(pixels).

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::{self, Parallelism};
use crate::fields::{self, ModalState, StokesMap, VectorField, BASIS_LEN};
use crate::{Error, Result};

/// Real coordinates of a 6×6 Hermitian matrix.
pub const GRAM_DIM: usize = BASIS_LEN * BASIS_LEN;
/// 6 amplitudes + 5 relative phases.
pub const PARAM_DIM: usize = 2 * BASIS_LEN - 1;

type Gram = SMatrix<f64, GRAM_DIM, GRAM_DIM>;
type Coords = SVector<f64, GRAM_DIM>;

const NULL_COMPONENT: f64 = 1e-4;
const MAX_HALVINGS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecompositionConfig {
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// First step length; later steps use the Barzilai–Borwein estimate.
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    /// Step lengths are scaled by `1 / (1 + decay·k)` at iteration `k`.
    #[serde(default)]
    pub learning_rate_decay: f64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// Stop when the relative loss changes by less than this.
    #[serde(default = "default_tol")]
    pub convergence_tol: f64,
    #[serde(default)]
    pub seed: u64,
    /// Loss weights for S0..S3.
    #[serde(default = "default_weights")]
    pub weights: [f64; 4],
    #[serde(default)]
    pub parallelism: Parallelism,
}

fn default_max_iterations() -> usize {
    2000
}
fn default_learning_rate() -> f64 {
    0.05
}
fn default_restarts() -> usize {
    8
}
fn default_tol() -> f64 {
    1e-13
}
fn default_weights() -> [f64; 4] {
    [1.0; 4]
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        DecompositionConfig {
            max_iterations: default_max_iterations(),
            learning_rate: default_learning_rate(),
            learning_rate_decay: 0.0,
            restarts: default_restarts(),
            convergence_tol: default_tol(),
            seed: 0,
            weights: default_weights(),
            parallelism: Parallelism::Sequential,
        }
    }
}

impl DecompositionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Domain(m.to_string()));
        if self.max_iterations < 1 {
            return bad("max_iterations must be ≥ 1");
        }
        if self.restarts < 1 {
            return bad("restarts must be ≥ 1");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be > 0");
        }
        if !(self.learning_rate_decay >= 0.0) {
            return bad("learning_rate_decay must be ≥ 0");
        }
        if !(self.convergence_tol >= 0.0) {
            return bad("convergence_tol must be ≥ 0");
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) || self.weights.iter().all(|w| *w == 0.0) {
            return bad("weights must be ≥ 0 and not all zero");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecompositionResult {
    pub state: ModalState,
    /// `Σ_p Σ_k w_k (S_k − S_k^target)²`.
    pub final_loss: f64,
    /// `final_loss / Σ_p Σ_k w_k (S_k^target)²`.
    pub relative_loss: f64,
    pub cross_correlation: f64,
    pub iterations_used: usize,
    pub restart_index: usize,
    pub converged: bool,
    pub seed: u64,
}

/// Flat JSON export record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRecord {
    pub amplitudes: [f64; BASIS_LEN],
    pub phases: [f64; BASIS_LEN],
    pub loss: f64,
    pub cross_correlation: f64,
    pub converged: bool,
    pub seed: u64,
}

impl DecompositionResult {
    pub fn record(&self) -> DecompositionRecord {
        DecompositionRecord {
            amplitudes: self.state.amplitudes(),
            phases: self.state.phases(),
            loss: self.final_loss,
            cross_correlation: self.cross_correlation,
            converged: self.converged,
            seed: self.seed,
        }
    }
}

/// Coordinate index of `X_mm` (diagonal), `Re X_mn`, `Im X_mn` (m < n).
fn pair_index(m: usize, n: usize) -> usize {
    // diagonals first, then upper-triangle pairs in row order
    let mut idx = BASIS_LEN;
    for a in 0..BASIS_LEN {
        for b in a + 1..BASIS_LEN {
            if (a, b) == (m, n) {
                return idx;
            }
            idx += 2;
        }
    }
    unreachable!("pair ({m},{n}) out of range")
}

/// Per-pixel features `Tr(B_a M_k(p))` for all 36 coordinates and 4 Stokes
/// components, from the basis fields at one pixel.
fn pixel_features(ex: &[C64; BASIS_LEN], ey: &[C64; BASIS_LEN], out: &mut [[f64; GRAM_DIM]; 4]) {
    for m in 0..BASIS_LEN {
        for n in m..BASIS_LEN {
            // M_k[n][m] = ψ_n† σ_k ψ_m
            let xx = ex[n].conj() * ex[m];
            let yy = ey[n].conj() * ey[m];
            let xy = ex[n].conj() * ey[m];
            let yx = ey[n].conj() * ex[m];
            let mk = [xx + yy, xx - yy, xy + yx, C64::new(0.0, -1.0) * (xy - yx)];
            if m == n {
                for k in 0..4 {
                    out[k][m] = mk[k].re;
                }
            } else {
                let i = pair_index(m, n);
                for k in 0..4 {
                    out[k][i] = 2.0 * mk[k].re;
                    out[k][i + 1] = -2.0 * mk[k].im;
                }
            }
        }
    }
}

fn coords_of(c: &[C64; BASIS_LEN]) -> Coords {
    let mut x = Coords::zeros();
    for m in 0..BASIS_LEN {
        x[m] = c[m].norm_sqr();
        for n in m + 1..BASIS_LEN {
            let v = c[m] * c[n].conj();
            let i = pair_index(m, n);
            x[i] = v.re;
            x[i + 1] = v.im;
        }
    }
    x
}

/// Hermitian `H` with `dL = Tr(H dX)` for coordinate gradient `g`.
fn hermitian_of_gradient(g: &Coords) -> [[C64; BASIS_LEN]; BASIS_LEN] {
    let mut h = [[C64::new(0.0, 0.0); BASIS_LEN]; BASIS_LEN];
    for m in 0..BASIS_LEN {
        h[m][m] = C64::new(g[m], 0.0);
        for n in m + 1..BASIS_LEN {
            let i = pair_index(m, n);
            h[n][m] = C64::new(0.5 * g[i], -0.5 * g[i + 1]);
            h[m][n] = h[n][m].conj();
        }
    }
    h
}

/// Map 11 parameters to normalized coefficients.
pub fn params_to_coeffs(p: &[f64; PARAM_DIM]) -> Result<[C64; BASIS_LEN]> {
    let norm = p[..BASIS_LEN].iter().map(|r| r * r).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::Numeric("all amplitudes vanished".into()));
    }
    Ok(std::array::from_fn(|m| {
        let phase = if m == 0 { 0.0 } else { p[BASIS_LEN + m - 1] };
        C64::from_polar(p[m] / norm, phase)
    }))
}

/// Parameters reproducing `state` up to global phase.
pub fn coeffs_to_params(state: &ModalState) -> [f64; PARAM_DIM] {
    let c = state.coeffs();
    let ref_phase = c[0].arg();
    let mut p = [0.0; PARAM_DIM];
    for m in 0..BASIS_LEN {
        p[m] = c[m].norm();
        if m > 0 {
            p[BASIS_LEN + m - 1] = c[m].arg() - ref_phase;
        }
    }
    p
}

/// Basis-dependent part of the loss.
#[derive(Debug, Clone)]
pub struct Decomposer {
    fields: Vec<VectorField>,
    weights: [f64; 4],
    gram: Gram,
}

/// Target-dependent part: loss `xᵀGx − 2bᵀx + C`.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    decomposer: &'a Decomposer,
    b: Coords,
    c: f64,
}

impl Decomposer {
    pub fn new(basis_fields: &[VectorField], weights: [f64; 4]) -> Result<Self> {
        if basis_fields.len() != BASIS_LEN {
            return Err(Error::Shape(format!("expected {BASIS_LEN} basis fields, got {}", basis_fields.len())));
        }
        let grid = basis_fields[0].grid;
        if basis_fields.iter().any(|f| f.grid != grid) {
            return Err(Error::Shape("basis fields are on different grids".into()));
        }
        let mut gram = Gram::zeros();
        let mut feats = [[0.0; GRAM_DIM]; 4];
        let mut ex = [C64::new(0.0, 0.0); BASIS_LEN];
        let mut ey = ex;
        for p in 0..grid.len() {
            for m in 0..BASIS_LEN {
                ex[m] = basis_fields[m].ex[p];
                ey[m] = basis_fields[m].ey[p];
            }
            pixel_features(&ex, &ey, &mut feats);
            for (k, f) in feats.iter().enumerate() {
                if weights[k] == 0.0 {
                    continue;
                }
                // upper triangle only; mirrored below
                for a in 0..GRAM_DIM {
                    let wa = weights[k] * f[a];
                    if wa == 0.0 {
                        continue;
                    }
                    for b in a..GRAM_DIM {
                        gram[(a, b)] += wa * f[b];
                    }
                }
            }
        }
        for a in 0..GRAM_DIM {
            for b in 0..a {
                gram[(a, b)] = gram[(b, a)];
            }
        }
        Ok(Decomposer { fields: basis_fields.to_vec(), weights, gram })
    }

    pub fn basis_fields(&self) -> &[VectorField] {
        &self.fields
    }

    pub fn objective(&self, target: &StokesMap) -> Result<Objective<'_>> {
        let grid = self.fields[0].grid;
        if target.grid != grid {
            return Err(Error::Shape("target and basis are on different grids".into()));
        }
        if target.s0.iter().all(|v| *v == 0.0) {
            return Err(Error::DegenerateData("target S0 is identically zero".into()));
        }
        let mut b = Coords::zeros();
        let mut c = 0.0;
        let mut feats = [[0.0; GRAM_DIM]; 4];
        let mut ex = [C64::new(0.0, 0.0); BASIS_LEN];
        let mut ey = ex;
        for p in 0..grid.len() {
            let t = [target.s0[p], target.s1[p], target.s2[p], target.s3[p]];
            if t.iter().all(|v| *v == 0.0) {
                continue;
            }
            for m in 0..BASIS_LEN {
                ex[m] = self.fields[m].ex[p];
                ey[m] = self.fields[m].ey[p];
            }
            pixel_features(&ex, &ey, &mut feats);
            for k in 0..4 {
                let wt = self.weights[k] * t[k];
                if wt == 0.0 {
                    continue;
                }
                c += wt * t[k];
                for a in 0..GRAM_DIM {
                    b[a] += wt * feats[k][a];
                }
            }
        }
        Ok(Objective { decomposer: self, b, c })
    }

    /// Minimize the loss against `target` from `restarts` starting points.
    /// Restart 0 starts from the leading eigenvector of the unconstrained
    /// least-squares `X`; the rest are random draws from the seed stream.
    pub fn decompose(&self, target: &StokesMap, config: &DecompositionConfig) -> Result<DecompositionResult> {
        config.validate()?;
        if config.weights != self.weights {
            return Err(Error::Domain("config weights differ from the decomposer's weights".into()));
        }
        let obj = self.objective(target)?;
        let starts: Vec<usize> = (0..config.restarts).collect();
        let runs = exec::map_indexed(&starts, config.parallelism, |_, r| {
            let init = if *r == 0 { obj.spectral_start() } else { random_start(config.seed, *r) };
            obj.descend(init, config)
        });
        let mut best: Option<(usize, Descent)> = None;
        for (r, run) in runs.into_iter().enumerate() {
            let run = run?;
            // strict improvement keeps the lowest index on ties
            if best.as_ref().is_none_or(|(_, b)| run.loss < b.loss) {
                best = Some((r, run));
            }
        }
        let (restart_index, run) = best.expect("restarts ≥ 1");
        let state = ModalState::new(params_to_coeffs(&run.params)?)?;
        let recon = fields::stokes_map(&fields::superpose(&state, &self.fields)?);
        let loss = (run.loss * obj.c).max(0.0);
        Ok(DecompositionResult {
            state,
            final_loss: loss,
            relative_loss: run.loss.max(0.0),
            cross_correlation: cross_correlation(&recon, target)?,
            iterations_used: run.iterations,
            restart_index,
            converged: run.converged,
            seed: config.seed,
        })
    }
}

fn random_start(seed: u64, restart: usize) -> [f64; PARAM_DIM] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    let mut p = [0.0; PARAM_DIM];
    for (i, v) in p.iter_mut().enumerate() {
        *v = if i < BASIS_LEN { rng.gen_range(0.05..1.0) } else { rng.gen_range(-PI..PI) };
    }
    p
}

struct Descent {
    params: [f64; PARAM_DIM],
    loss: f64,
    iterations: usize,
    converged: bool,
}

impl Objective<'_> {
    /// Target energy `Σ w_k (S_k^target)²`.
    pub fn scale(&self) -> f64 {
        self.c
    }

    /// Unnormalized loss at coefficients `c`.
    pub fn loss_at(&self, c: &[C64; BASIS_LEN]) -> f64 {
        let x = coords_of(c);
        (x.dot(&(self.decomposer.gram * x)) - 2.0 * self.b.dot(&x) + self.c).max(0.0)
    }

    /// Unnormalized loss and its gradient with respect to the 11 parameters.
    pub fn loss_and_gradient(&self, p: &[f64; PARAM_DIM]) -> Result<(f64, [f64; PARAM_DIM])> {
        let c = params_to_coeffs(p)?;
        let x = coords_of(&c);
        let gx = self.decomposer.gram * x;
        let loss = x.dot(&gx) - 2.0 * self.b.dot(&x) + self.c;
        let g = 2.0 * (gx - self.b);
        let h = hermitian_of_gradient(&g);
        // v = 2 H c, with dL = Re Σ conj(v_m) dc_m
        let v: [C64; BASIS_LEN] = std::array::from_fn(|m| 2.0 * (0..BASIS_LEN).map(|n| h[m][n] * c[n]).sum::<C64>());
        let norm = p[..BASIS_LEN].iter().map(|r| r * r).sum::<f64>().sqrt();
        let radial: f64 = (0..BASIS_LEN).map(|m| (v[m].conj() * c[m]).re).sum();
        let mut grad = [0.0; PARAM_DIM];
        for j in 0..BASIS_LEN {
            let phase = if j == 0 { 0.0 } else { p[BASIS_LEN + j - 1] };
            let unit = C64::from_polar(1.0, phase);
            grad[j] = (v[j].conj() * unit).re / norm - p[j] / (norm * norm) * radial;
        }
        for m in 1..BASIS_LEN {
            grad[BASIS_LEN + m - 1] = -(v[m].conj() * c[m]).im;
        }
        Ok((loss, grad))
    }

    fn relative(&self, p: &[f64; PARAM_DIM]) -> Result<(f64, [f64; PARAM_DIM])> {
        let (l, g) = self.loss_and_gradient(p)?;
        Ok((l / self.c, g.map(|v| v / self.c)))
    }

    fn spectral_start(&self) -> [f64; PARAM_DIM] {
        let g = DMatrix::from_column_slice(GRAM_DIM, GRAM_DIM, self.decomposer.gram.as_slice());
        let b = DVector::from_column_slice(self.b.as_slice());
        let x = g.svd(true, true).solve(&b, 1e-12).unwrap_or_else(|_| DVector::zeros(GRAM_DIM));
        let mut h = nalgebra::Matrix6::<C64>::zeros();
        for m in 0..BASIS_LEN {
            h[(m, m)] = C64::new(x[m], 0.0);
            for n in m + 1..BASIS_LEN {
                let i = pair_index(m, n);
                h[(m, n)] = C64::new(x[i], x[i + 1]);
                h[(n, m)] = h[(m, n)].conj();
            }
        }
        let eig = h.symmetric_eigen();
        let top = (0..BASIS_LEN).max_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b])).unwrap_or(0);
        let v = eig.eigenvectors.column(top);
        let coeffs: [C64; BASIS_LEN] = std::array::from_fn(|m| v[m]);
        match ModalState::new(coeffs) {
            Ok(s) => {
                let mut p = coeffs_to_params(&s);
                // keep every amplitude off zero so its phase stays live
                for r in p[..BASIS_LEN].iter_mut() {
                    *r = r.max(1e-3);
                }
                p
            }
            Err(_) => random_start(0, 0),
        }
    }

    fn descend(&self, mut p: [f64; PARAM_DIM], cfg: &DecompositionConfig) -> Result<Descent> {
        let (mut loss, mut grad) = self.relative(&p)?;
        let mut prev: Option<([f64; PARAM_DIM], [f64; PARAM_DIM])> = None;
        let mut converged = false;
        let mut iterations = 0;
        for k in 0..cfg.max_iterations {
            iterations = k + 1;
            let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
            if gnorm2 == 0.0 {
                converged = true;
                break;
            }
            let mut step = match prev {
                Some((p_old, g_old)) => {
                    let s: Vec<f64> = (0..PARAM_DIM).map(|i| p[i] - p_old[i]).collect();
                    let y: Vec<f64> = (0..PARAM_DIM).map(|i| grad[i] - g_old[i]).collect();
                    let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
                    let ss: f64 = s.iter().map(|a| a * a).sum();
                    if sy > 0.0 {
                        ss / sy
                    } else {
                        cfg.learning_rate
                    }
                }
                None => cfg.learning_rate,
            };
            step /= 1.0 + cfg.learning_rate_decay * k as f64;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let mut trial = p;
                for i in 0..PARAM_DIM {
                    trial[i] -= step * grad[i];
                }
                normalize_amplitudes(&mut trial);
                if let Ok((l, g)) = self.relative(&trial) {
                    if l <= loss {
                        accepted = Some((trial, l, g));
                        break;
                    }
                }
                step *= 0.5;
            }
            let Some((trial, l, g)) = accepted else {
                // no decrease at float resolution: stationary point
                converged = gnorm2.sqrt() < cfg.convergence_tol.sqrt().max(1e-12);
                break;
            };
            let change = loss - l;
            prev = Some((p, grad));
            p = trial;
            loss = l;
            grad = g;
            if change < cfg.convergence_tol {
                converged = true;
                break;
            }
        }
        Ok(Descent { params: p, loss, iterations, converged })
    }
}

fn normalize_amplitudes(p: &mut [f64; PARAM_DIM]) {
    let n = p[..BASIS_LEN].iter().map(|r| r * r).sum::<f64>().sqrt();
    if n > 0.0 {
        for r in p[..BASIS_LEN].iter_mut() {
            *r /= n;
        }
    }
}

/// Convenience wrapper building the basis-dependent part on every call.
pub fn decompose(
    target: &StokesMap,
    basis_fields: &[VectorField],
    config: &DecompositionConfig,
) -> Result<DecompositionResult> {
    Decomposer::new(basis_fields, config.weights)?.decompose(target, config)
}

/// Mean over S0..S3 of the normalized correlation `Σ S·S′ / √(Σ S² Σ S′²)`,
/// clamped to [0, 1]. A component carrying less than 1e−4 of its map's S0
/// energy is null and the ratio is undefined; two null components score 1,
/// and a null against a non-null one scores one minus the energy fraction
/// the non-null map puts into that component, so small leakage costs little.
pub fn cross_correlation(recon: &StokesMap, target: &StokesMap) -> Result<f64> {
    if recon.grid != target.grid {
        return Err(Error::Shape("Stokes maps are on different grids".into()));
    }
    let energy = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let (e0r, e0t) = (energy(&recon.s0), energy(&target.s0));
    if !(e0r > 0.0 && e0t > 0.0) {
        return Err(Error::DegenerateData("cross-correlation of a zero-power map".into()));
    }
    let mut total = 0.0;
    for k in 0..4 {
        let (a, b) = (recon.component(k), target.component(k));
        let (ea, eb) = (energy(a), energy(b));
        let null_a = ea <= NULL_COMPONENT * e0r;
        let null_b = eb <= NULL_COMPONENT * e0t;
        total += match (null_a, null_b) {
            (true, true) => 1.0,
            (true, false) => (1.0 - eb / e0t).max(0.0),
            (false, true) => (1.0 - ea / e0r).max(0.0),
            _ => a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (ea * eb).sqrt(),
        };
    }
    Ok((total / 4.0).clamp(0.0, 1.0))
}
