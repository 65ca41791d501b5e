//! Least-squares fit of `A·exp(−((t − t0)/(2σ))^(2N))` to a sampled trace.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::io;
use crate::{Error, Result};

pub const MIN_POINTS: usize = 8;
pub const MAX_ORDER: u32 = 4;
const GRAD_TOL: f64 = 1e-10;
const GOLDEN_ITERS: usize = 80;
const GN_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub amplitude: f64,
    pub center_ps: f64,
    pub sigma_ps: f64,
    pub order: u32,
    pub fwhm_ps: f64,
    /// Root-mean-square residual divided by |amplitude|.
    pub residual_rms: f64,
    pub converged: bool,
}

/// `4σ·(ln 2)^(1/(2N))`.
pub fn fwhm_from_sigma(sigma: f64, order: u32) -> f64 {
    4.0 * sigma * std::f64::consts::LN_2.powf(1.0 / (2.0 * order as f64))
}

pub fn sigma_from_fwhm(fwhm: f64, order: u32) -> f64 {
    fwhm / (4.0 * std::f64::consts::LN_2.powf(1.0 / (2.0 * order as f64)))
}

pub fn super_gaussian(t: f64, amplitude: f64, center: f64, sigma: f64, order: u32) -> f64 {
    amplitude * (-((t - center) / (2.0 * sigma)).powi(2 * order as i32)).exp()
}

/// Fit with a fixed order, or with `None` the best order in 1..=4.
pub fn fit_super_gaussian(t: &[f64], y: &[f64], order: Option<u32>) -> Result<FitResult> {
    if t.len() != y.len() {
        return Err(Error::Shape(format!("{} abscissae vs {} values", t.len(), y.len())));
    }
    if t.len() < MIN_POINTS {
        return Err(Error::Domain(format!("need ≥ {MIN_POINTS} points, got {}", t.len())));
    }
    if let Some(n) = order {
        if !(1..=MAX_ORDER).contains(&n) {
            return Err(Error::Domain(format!("order must lie in 1..={MAX_ORDER}")));
        }
    }
    if t.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Domain("trace contains non-finite values".into()));
    }
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let scale = lo.abs().max(hi.abs());
    if !(hi - lo > 1e-12 * scale.max(f64::MIN_POSITIVE)) || scale == 0.0 {
        return Err(Error::DegenerateData("trace is flat; no extremum to fit".into()));
    }
    match order {
        Some(n) => fit_order(t, y, n).map(|(f, _)| f),
        None => {
            let mut best: Option<(FitResult, f64)> = None;
            for n in 1..=MAX_ORDER {
                let (f, ss) = fit_order(t, y, n)?;
                // a higher order must earn its place
                if best.as_ref().is_none_or(|(_, b)| ss < b * (1.0 - 1e-9) - 1e-300) {
                    best = Some((f, ss));
                }
            }
            Ok(best.expect("at least one order").0)
        }
    }
}

fn fit_order(t: &[f64], y: &[f64], order: u32) -> Result<(FitResult, f64)> {
    // start: extremum by magnitude, centre as |y|-weighted centroid above half
    let peak = (0..y.len()).max_by(|a, b| y[*a].abs().total_cmp(&y[*b].abs())).unwrap();
    let half = 0.5 * y[peak].abs();
    let (mut sw, mut swt) = (0.0, 0.0);
    for (ti, yi) in t.iter().zip(y) {
        if yi.abs() >= half && yi.signum() == y[peak].signum() {
            sw += yi.abs();
            swt += yi.abs() * ti;
        }
    }
    let center = swt / sw;
    let span = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - t.iter().cloned().fold(f64::INFINITY, f64::min);
    let dt_min = span / (t.len() as f64 - 1.0);

    // golden section over ln σ with the amplitude eliminated
    let cost = |ls: f64| -> f64 {
        let s = ls.exp();
        let g: Vec<f64> = t.iter().map(|ti| super_gaussian(*ti, 1.0, center, s, order)).collect();
        let gg: f64 = g.iter().map(|v| v * v).sum();
        if gg == 0.0 {
            return y.iter().map(|v| v * v).sum();
        }
        let a = g.iter().zip(y).map(|(g, y)| g * y).sum::<f64>() / gg;
        g.iter().zip(y).map(|(g, y)| (y - a * g).powi(2)).sum()
    };
    let (mut a, mut b) = ((0.1 * dt_min).ln(), span.ln());
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (cost(c), cost(d));
    for _ in 0..GOLDEN_ITERS {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = cost(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = cost(d);
        }
    }
    let ls = 0.5 * (a + b);
    let s0 = ls.exp();
    let g: Vec<f64> = t.iter().map(|ti| super_gaussian(*ti, 1.0, center, s0, order)).collect();
    let amp = g.iter().zip(y).map(|(g, y)| g * y).sum::<f64>() / g.iter().map(|v| v * v).sum::<f64>();

    // damped Gauss–Newton on (A, t0, ln σ)
    let mut p = Vector3::new(amp, center, ls);
    let eval = |p: &Vector3<f64>| -> (f64, Vector3<f64>, Matrix3<f64>) {
        let (amp, t0, s) = (p[0], p[1], p[2].exp());
        let mut ss = 0.0;
        let mut jtr = Vector3::zeros();
        let mut jtj = Matrix3::zeros();
        let n2 = 2 * order as i32;
        for (ti, yi) in t.iter().zip(y) {
            let u = (ti - t0) / (2.0 * s);
            let un = u.powi(n2);
            let e = (-un).exp();
            let r = amp * e - yi;
            // d(u^2N)/du = 2N u^(2N−1)
            let dun = n2 as f64 * u.powi(n2 - 1);
            let j = Vector3::new(
                e,
                amp * e * dun / (2.0 * s), // ∂/∂t0: −e·dun·(−1/2s)
                amp * e * dun * u,         // ∂/∂lnσ: −e·dun·(−u)
            );
            ss += r * r;
            jtr += j * r;
            jtj += j * j.transpose();
        }
        (ss, jtr, jtj)
    };
    let (mut ss, mut grad, mut jtj) = eval(&p);
    let mut lambda = 1e-6;
    let mut converged = false;
    for _ in 0..GN_ITERS {
        if grad.norm() < GRAD_TOL {
            converged = true;
            break;
        }
        let mut stepped = false;
        for _ in 0..30 {
            let mut m = jtj;
            for i in 0..3 {
                m[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(delta) = m.lu().solve(&(-grad)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = p + delta;
            let (ss_t, g_t, j_t) = eval(&trial);
            if ss_t.is_finite() && ss_t <= ss {
                p = trial;
                ss = ss_t;
                grad = g_t;
                jtj = j_t;
                lambda = (lambda * 0.3).max(1e-12);
                stepped = true;
                break;
            }
            lambda *= 10.0;
        }
        if !stepped {
            // no descent left at float resolution
            break;
        }
    }
    converged |= grad.norm() < GRAD_TOL;
    let sigma = p[2].exp();
    if !(sigma > 0.0 && sigma.is_finite()) || p[0] == 0.0 {
        return Err(Error::Numeric("fit diverged".into()));
    }
    let rms = (ss / t.len() as f64).sqrt() / p[0].abs();
    Ok((
        FitResult {
            amplitude: p[0],
            center_ps: p[1],
            sigma_ps: sigma,
            order,
            fwhm_ps: fwhm_from_sigma(sigma, order),
            residual_rms: rms,
            converged,
        },
        ss,
    ))
}

/// Two-column trace `delay_ps,value` (header required; extra columns ignored).
pub fn read_trace_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let (header, rows) = io::read_csv(path)?;
    if header.len() < 2 {
        return Err(Error::Parse { path: path.to_path_buf(), message: "expected at least two columns".into() });
    }
    let mut t = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    for r in &rows {
        if r.len() < 2 {
            return Err(Error::Parse { path: path.to_path_buf(), message: "short row".into() });
        }
        t.push(io::parse_f64(path, &r[0])?);
        y.push(io::parse_f64(path, &r[1])?);
    }
    Ok((t, y))
}
