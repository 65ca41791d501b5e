//! Qudit tomography over the logical basis `(LP01, LP11x, LP11y) ⊗ (H, V)`:
//! 72 rank-1 projectors, Poisson count simulation and diluted RρR
//! maximum-likelihood reconstruction.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, Matrix6, Vector6};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::fields::{ModalState, Polarization, BASIS_LEN};
use crate::io;
use crate::{Error, Result};

pub const DIM: usize = BASIS_LEN;
pub const SPATIAL_DIM: usize = 3;
pub const MUB_COUNT: usize = 4;
pub const PROJECTOR_COUNT: usize = MUB_COUNT * SPATIAL_DIM * 6;

/// Logical basis labels, index `2·spatial + polarization`.
pub const LOGICAL_BASIS: [&str; DIM] = ["LP01,H", "LP01,V", "LP11x,H", "LP11x,V", "LP11y,H", "LP11y,V"];

const HERMITIAN_TOL: f64 = 1e-12;
const EIGEN_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-10;
/// Eigenvalues below this fraction of the largest are rounding noise.
const ROOT_FLOOR: f64 = 1e-14;

/// Four mutually unbiased bases of C³: the computational basis, then
/// `|e_j^(b)⟩ = Σ_k ω^(b k² + j k) |k⟩ / √3` for `b = 0, 1, 2`.
pub fn build_mub3() -> [[[C64; SPATIAL_DIM]; SPATIAL_DIM]; MUB_COUNT] {
    let mut out = [[[C64::new(0.0, 0.0); SPATIAL_DIM]; SPATIAL_DIM]; MUB_COUNT];
    for j in 0..SPATIAL_DIM {
        out[0][j][j] = C64::new(1.0, 0.0);
    }
    let s = 1.0 / 3f64.sqrt();
    for b in 0..3 {
        for j in 0..SPATIAL_DIM {
            for k in 0..SPATIAL_DIM {
                let e = (b * k * k + j * k) % 3;
                out[b + 1][j][k] = C64::from_polar(s, 2.0 * PI * e as f64 / 3.0);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProjectorLabel {
    pub mub_index: usize,
    pub state_index: usize,
    pub pol_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projector {
    pub spatial: [C64; SPATIAL_DIM],
    pub polarization: [C64; 2],
    pub label: ProjectorLabel,
}

impl Projector {
    /// Product vector in the logical basis.
    pub fn vector(&self) -> Vector6<C64> {
        Vector6::from_fn(|i, _| self.spatial[i / 2] * self.polarization[i % 2])
    }

    pub fn matrix(&self) -> Matrix6<C64> {
        let v = self.vector();
        v * v.adjoint()
    }
}

/// The 72 products of the 12 spatial MUB states with H, V, D, A, R, L, in
/// `(mub, state, polarization)` order.
pub fn build_projector_set() -> Vec<Projector> {
    let mub = build_mub3();
    let mut out = Vec::with_capacity(PROJECTOR_COUNT);
    for (b, basis) in mub.iter().enumerate() {
        for (s, spatial) in basis.iter().enumerate() {
            for (p, pol) in Polarization::ALL.iter().enumerate() {
                out.push(Projector {
                    spatial: *spatial,
                    polarization: pol.jones(),
                    label: ProjectorLabel { mub_index: b, state_index: s, pol_index: p },
                });
            }
        }
    }
    out
}

/// Numerical rank of the real design matrix mapping Hermitian 6×6 matrices
/// (36 real coordinates) to projector expectations.
pub fn measurement_rank(projectors: &[Projector]) -> usize {
    if projectors.is_empty() {
        return 0;
    }
    let mut design = DMatrix::<f64>::zeros(projectors.len(), DIM * DIM);
    for (r, p) in projectors.iter().enumerate() {
        let m = p.matrix();
        let mut col = 0;
        for i in 0..DIM {
            design[(r, col)] = m[(i, i)].re;
            col += 1;
            for j in i + 1..DIM {
                design[(r, col)] = 2.0 * m[(i, j)].re;
                design[(r, col + 1)] = 2.0 * m[(i, j)].im;
                col += 2;
            }
        }
    }
    let sv = design.singular_values();
    let max = sv.max();
    sv.iter().filter(|s| **s > 1e-10 * max).count()
}

/// A valid 6×6 density matrix: Hermitian, positive semidefinite, unit trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix {
    m: Matrix6<C64>,
}

impl DensityMatrix {
    pub fn new(m: Matrix6<C64>) -> Result<Self> {
        let herm = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm > HERMITIAN_TOL {
            return Err(Error::Domain(format!("matrix is not Hermitian (defect {herm:e})")));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::Domain(format!("trace {tr} ≠ 1")));
        }
        let min = m.symmetric_eigen().eigenvalues.min();
        if min < -EIGEN_TOL {
            return Err(Error::Domain(format!("negative eigenvalue {min:e}")));
        }
        Ok(DensityMatrix { m })
    }

    /// `|v⟩⟨v|` for a normalized copy of `v`.
    pub fn pure(v: &Vector6<C64>) -> Result<Self> {
        let n = v.norm();
        if !(n > 0.0) {
            return Err(Error::Domain("pure state vector is zero".into()));
        }
        let u = v / C64::new(n, 0.0);
        Ok(DensityMatrix { m: hermitize(&(u * u.adjoint())) })
    }

    pub fn maximally_mixed() -> Self {
        DensityMatrix { m: Matrix6::identity() / C64::new(DIM as f64, 0.0) }
    }

    /// `w·a + (1 − w)·b`.
    pub fn mix(a: &DensityMatrix, b: &DensityMatrix, w: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::Domain("mixing weight must lie in [0, 1]".into()));
        }
        DensityMatrix::new(a.m * C64::new(w, 0.0) + b.m * C64::new(1.0 - w, 0.0))
    }

    pub fn matrix(&self) -> &Matrix6<C64> {
        &self.m
    }

    /// `⟨v|ρ|v⟩` for a projector vector.
    pub fn expectation(&self, p: &Projector) -> f64 {
        let v = p.vector();
        (v.adjoint() * self.m * v)[(0, 0)].re.max(0.0)
    }

    /// Conjugate by a unitary: `U ρ U†`.
    pub fn transformed(&self, u: &Matrix6<C64>) -> Result<Self> {
        DensityMatrix::new(hermitize(&(u * self.m * u.adjoint())))
    }
}

fn hermitize(m: &Matrix6<C64>) -> Matrix6<C64> {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Eigenvalues clipped at 0, trace renormalized to 1.
fn project_physical(m: &Matrix6<C64>) -> Result<Matrix6<C64>> {
    let eig = hermitize(m).symmetric_eigen();
    let vals = eig.eigenvalues.map(|l| l.max(0.0));
    let total = vals.sum();
    if !(total > 0.0) {
        return Err(Error::Numeric("density matrix collapsed to zero".into()));
    }
    let d = Matrix6::from_diagonal(&vals.map(|l| C64::new(l / total, 0.0)));
    Ok(hermitize(&(eig.eigenvectors * d * eig.eigenvectors.adjoint())))
}

/// Logical-basis density matrix `|v⟩⟨v|` of a pure vector-mode state.
pub fn modal_state_to_density(state: &ModalState) -> Result<DensityMatrix> {
    let lp = state.lp_coefficients();
    DensityMatrix::pure(&Vector6::from_fn(|i, _| lp[i]))
}

pub fn purity(rho: &DensityMatrix) -> f64 {
    (rho.m * rho.m).trace().re
}

/// Uhlmann fidelity `(Tr √(√ρ σ √ρ))²`, clamped to [0, 1].
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> f64 {
    let e = rho.m.symmetric_eigen();
    let floor = ROOT_FLOOR * e.eigenvalues.max();
    let sq = Matrix6::from_diagonal(&e.eigenvalues.map(|l| C64::new(if l > floor { l.sqrt() } else { 0.0 }, 0.0)));
    let root = e.eigenvectors * sq * e.eigenvectors.adjoint();
    let inner = hermitize(&(root * sigma.m * root));
    let vals = inner.symmetric_eigenvalues();
    let floor = ROOT_FLOOR * vals.max();
    let s: f64 = vals.iter().filter(|l| **l > floor).map(|l| l.sqrt()).sum();
    (s * s).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRecord {
    pub label: ProjectorLabel,
    pub counts: u64,
    pub shots: u64,
}

/// Expected counts `shots · (Tr(ρΠ) + background)` for each projector.
pub fn expected_counts(rho: &DensityMatrix, projectors: &[Projector], shots: u64, background: f64) -> Vec<f64> {
    projectors.iter().map(|p| shots as f64 * (rho.expectation(p) + background)).collect()
}

/// Poisson counts, drawn in projector order from a ChaCha stream.
pub fn simulate_counts(
    rho: &DensityMatrix,
    projectors: &[Projector],
    shots: u64,
    seed: u64,
) -> Result<Vec<CountRecord>> {
    simulate_counts_with_background(rho, projectors, shots, 0.0, seed)
}

/// As [`simulate_counts`] with a flat background probability per shot.
pub fn simulate_counts_with_background(
    rho: &DensityMatrix,
    projectors: &[Projector],
    shots: u64,
    background: f64,
    seed: u64,
) -> Result<Vec<CountRecord>> {
    if !(background >= 0.0) {
        return Err(Error::Domain("background must be ≥ 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(projectors.len());
    for (p, mean) in projectors.iter().zip(expected_counts(rho, projectors, shots, background)) {
        let counts = if mean > 0.0 {
            Poisson::new(mean).map_err(|e| Error::Numeric(e.to_string()))?.sample(&mut rng) as u64
        } else {
            0
        };
        out.push(CountRecord { label: p.label, counts, shots });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MleConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Update operator `I + d·(R − I)`; `d = 1` is the raw RρR step. A trial
    /// that lowers the likelihood is retried with `d` halved.
    #[serde(default = "default_damping")]
    pub damping: f64,
}

fn default_tol() -> f64 {
    // near pure states the iteration is sublinear; a looser tolerance stops
    // it with infidelity of a few 1e-4
    1e-13
}
fn default_max_iter() -> usize {
    10_000
}
fn default_damping() -> f64 {
    0.5
}

impl Default for MleConfig {
    fn default() -> Self {
        MleConfig { tol: default_tol(), max_iter: default_max_iter(), damping: default_damping() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleResult {
    pub rho: DensityMatrix,
    pub iterations: usize,
    pub converged: bool,
    /// `Σ f_i ln Tr(ρΠ_i)` after every accepted iteration, starting at `I/6`.
    pub log_likelihood: Vec<f64>,
}

/// Diluted RρR iteration from `I/6` on shot-normalized frequencies.
pub fn mle_reconstruct(counts: &[CountRecord], projectors: &[Projector], config: &MleConfig) -> Result<MleResult> {
    if !(config.damping > 0.0 && config.damping <= 1.0) {
        return Err(Error::Domain("damping must lie in (0, 1]".into()));
    }
    if config.max_iter == 0 || !(config.tol >= 0.0) {
        return Err(Error::Domain("max_iter must be ≥ 1 and tol ≥ 0".into()));
    }
    let by_label: HashMap<ProjectorLabel, &Projector> = projectors.iter().map(|p| (p.label, p)).collect();
    let mut used = Vec::with_capacity(counts.len());
    let mut freq = Vec::with_capacity(counts.len());
    for c in counts {
        let p = by_label.get(&c.label).ok_or_else(|| Error::Shape(format!("no projector with label {:?}", c.label)))?;
        if c.shots == 0 {
            return Err(Error::Domain("shots must be ≥ 1".into()));
        }
        used.push(**p);
        freq.push(c.counts as f64 / c.shots as f64);
    }
    let rank = measurement_rank(&used);
    if rank < DIM * DIM {
        return Err(Error::RankDeficient { rank, needed: DIM * DIM });
    }
    let total: f64 = freq.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateData("all counts are zero".into()));
    }
    for f in freq.iter_mut() {
        *f /= total;
    }
    let vecs: Vec<Vector6<C64>> = used.iter().map(|p| p.vector()).collect();
    let probs = |m: &Matrix6<C64>| -> Vec<f64> { vecs.iter().map(|v| (v.adjoint() * m * v)[(0, 0)].re).collect() };
    let loglik = |p: &[f64]| -> f64 {
        freq.iter()
            .zip(p)
            .filter(|(f, _)| **f > 0.0)
            .map(|(f, q)| if *q > 0.0 { f * q.ln() } else { f64::NEG_INFINITY })
            .sum()
    };

    let mut rho = Matrix6::<C64>::identity() / C64::new(DIM as f64, 0.0);
    let mut p = probs(&rho);
    let mut ll = loglik(&p);
    let mut history = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let id = Matrix6::<C64>::identity();
    while iterations < config.max_iter {
        iterations += 1;
        let mut r = Matrix6::<C64>::zeros();
        for ((v, f), q) in vecs.iter().zip(&freq).zip(&p) {
            if *f > 0.0 && *q > 0.0 {
                r += v * v.adjoint() * C64::new(f / q, 0.0);
            }
        }
        let mut d = config.damping;
        let mut accepted = None;
        for _ in 0..60 {
            let a = id + (r - id) * C64::new(d, 0.0);
            let mut next = hermitize(&(a * rho * a.adjoint()));
            let tr = next.trace().re;
            next /= C64::new(tr, 0.0);
            let pn = probs(&next);
            let lln = loglik(&pn);
            if lln >= ll {
                accepted = Some((next, pn, lln));
                break;
            }
            d *= 0.5;
        }
        let Some((next, pn, lln)) = accepted else {
            converged = true;
            break;
        };
        let change = (lln - ll) / ll.abs().max(f64::MIN_POSITIVE);
        rho = next;
        p = pn;
        ll = lln;
        history.push(ll);
        if change < config.tol {
            converged = true;
            break;
        }
    }
    Ok(MleResult { rho: DensityMatrix::new(project_physical(&rho)?)?, iterations, converged, log_likelihood: history })
}

const COUNT_HEADER: [&str; 5] = ["mub_index", "state_index", "pol_index", "counts", "shots"];

pub fn write_counts_csv(path: &Path, counts: &[CountRecord]) -> Result<()> {
    io::write_csv(
        path,
        &COUNT_HEADER,
        counts.iter().map(|c| {
            vec![
                c.label.mub_index.to_string(),
                c.label.state_index.to_string(),
                c.label.pol_index.to_string(),
                c.counts.to_string(),
                c.shots.to_string(),
            ]
        }),
    )
}

pub fn read_counts_csv(path: &Path) -> Result<Vec<CountRecord>> {
    let (header, rows) = io::read_csv(path)?;
    if header != COUNT_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!("expected columns {}", COUNT_HEADER.join(",")),
        });
    }
    rows.iter()
        .map(|r| {
            let u = |i: usize| io::parse_u64(path, &r[i]);
            Ok(CountRecord {
                label: ProjectorLabel {
                    mub_index: u(0)? as usize,
                    state_index: u(1)? as usize,
                    pol_index: u(2)? as usize,
                },
                counts: u(3)?,
                shots: u(4)?,
            })
        })
        .collect()
}

/// JSON form: row-major `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityJson {
    pub basis: Vec<String>,
    pub matrix: Vec<Vec<[f64; 2]>>,
}

impl From<&DensityMatrix> for DensityJson {
    fn from(rho: &DensityMatrix) -> Self {
        DensityJson {
            basis: LOGICAL_BASIS.iter().map(|s| s.to_string()).collect(),
            matrix: (0..DIM).map(|i| (0..DIM).map(|j| [rho.m[(i, j)].re, rho.m[(i, j)].im]).collect()).collect(),
        }
    }
}

impl TryFrom<&DensityJson> for DensityMatrix {
    type Error = Error;

    fn try_from(j: &DensityJson) -> Result<Self> {
        if j.matrix.len() != DIM || j.matrix.iter().any(|r| r.len() != DIM) {
            return Err(Error::Shape("density matrix must be 6×6".into()));
        }
        DensityMatrix::new(Matrix6::from_fn(|i, k| C64::new(j.matrix[i][k][0], j.matrix[i][k][1])))
    }
}
