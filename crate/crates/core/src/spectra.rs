//! Correlation matrices, their eigensystems, and Marchenko-Pastur fitting.
//!
//! The Marchenko-Pastur law is parameterized by the aspect ratio `q = N/T`
//! and the scale `sigma`, with support edges `sigma^2 (1 -/+ sqrt q)^2`.
//! Both parameters are fitted freely to absorb finite-sample effects.

use std::f64::consts::PI;

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::optim::{nelder_mead, SimplexOptions};
use crate::panel::StandardizedPanel;
use crate::stats;

/// Symmetric matrix with unit diagonal, `(1/T) X^T X` for a standardized `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    entries: DMatrix<f64>,
    n_obs: usize,
}

impl CorrelationMatrix {
    pub fn new(entries: DMatrix<f64>, n_obs: usize) -> Result<Self> {
        let n = entries.nrows();
        if n == 0 || entries.ncols() != n {
            return Err(invalid("correlation matrix must be square and non-empty"));
        }
        for i in 0..n {
            if (entries[(i, i)] - 1.0).abs() > 1e-10 {
                return Err(Error::ContractViolation(format!(
                    "diagonal entry {i} is {}",
                    entries[(i, i)]
                )));
            }
            for j in 0..i {
                if (entries[(i, j)] - entries[(j, i)]).abs() > 1e-12 {
                    return Err(Error::ContractViolation(format!(
                        "matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { entries, n_obs })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }
}

/// `(1/T) X^T X`, the sample correlation of a standardized panel.
pub fn correlation(x: &StandardizedPanel) -> Result<CorrelationMatrix> {
    let t = x.n_obs();
    if t < 2 {
        return Err(Error::InsufficientData(format!("{t} observations")));
    }
    let m = gram(x.matrix());
    for i in 0..m.nrows() {
        if (m[(i, i)] - 1.0).abs() > crate::panel::VAR_TOL {
            return Err(Error::ContractViolation(format!(
                "column {} is not standardized (second moment {})",
                x.column_ids()[i],
                m[(i, i)]
            )));
        }
    }
    Ok(CorrelationMatrix {
        entries: m,
        n_obs: t,
    })
}

/// `(1/rows) M^T M`, exactly symmetric.
pub(crate) fn gram(m: &DMatrix<f64>) -> DMatrix<f64> {
    let t = m.nrows() as f64;
    let mut g = m.tr_mul(m);
    g /= t;
    let n = g.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = g[(j, i)];
            g[(i, j)] = v;
        }
    }
    g
}

/// Eigenvalues in descending order with matching orthonormal eigenvectors
/// (as columns). Each eigenvector's first non-negligible entry is positive.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl EigenSystem {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn vector(&self, p: usize) -> &[f64] {
        stats::col(&self.vectors, p)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// The first `k` eigenvectors as an N x k matrix.
    pub fn leading_vectors(&self, k: usize) -> DMatrix<f64> {
        self.vectors.columns(0, k).into_owned()
    }

    /// Only used by tests and diagnostics; the sign convention is imposed by
    /// [`eigendecompose`].
    pub fn from_parts(values: Vec<f64>, vectors: DMatrix<f64>) -> Result<Self> {
        if vectors.nrows() != values.len() || vectors.ncols() != values.len() {
            return Err(invalid("eigenvector matrix does not match eigenvalue count"));
        }
        if values.windows(2).any(|w| w[0] < w[1]) {
            return Err(invalid("eigenvalues must be sorted descending"));
        }
        Ok(Self { values, vectors })
    }
}

const SIGN_EPS: f64 = 1e-12;

pub fn eigendecompose(c: &CorrelationMatrix) -> Result<EigenSystem> {
    symmetric_eigen(c.entries())
}

pub(crate) fn symmetric_eigen(m: &DMatrix<f64>) -> Result<EigenSystem> {
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 10_000 * n.max(1))
        .ok_or_else(|| Error::Decomposition(format!("{n} x {n} symmetric solver did not converge")))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(src);
        let flip = v
            .iter()
            .find(|x| x.abs() > SIGN_EPS)
            .map_or(false, |x| *x < 0.0);
        let sign = if flip { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[(i, dst)] = sign * v[i];
        }
    }

    let trace: f64 = (0..n).map(|i| m[(i, i)]).sum();
    let sum: f64 = values.iter().sum();
    if (trace - sum).abs() > 1e-8 * trace.abs().max(1.0) {
        return Err(Error::Decomposition(format!(
            "trace {trace} not preserved by eigenvalues (sum {sum})"
        )));
    }
    Ok(EigenSystem { values, vectors })
}

/// Support edges `(lambda_minus, lambda_plus)`.
pub fn mp_edges(q: f64, sigma: f64) -> (f64, f64) {
    let s2 = sigma * sigma;
    let r = q.sqrt();
    (s2 * (1.0 - r).powi(2), s2 * (1.0 + r).powi(2))
}

/// Marchenko-Pastur density; zero outside the open support. For `q > 1`
/// this is the continuous part only (mass `1/q`; the rest sits at zero).
pub fn mp_density(lambda: f64, q: f64, sigma: f64) -> f64 {
    let (lm, lp) = mp_edges(q, sigma);
    if !(lambda > lm && lambda < lp) || lambda <= 0.0 {
        return 0.0;
    }
    ((lp - lambda) * (lambda - lm)).sqrt() / (2.0 * PI * q * sigma * sigma * lambda)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MpFitConfig {
    pub q_min: f64,
    pub q_max: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub max_rounds: usize,
    pub min_eigenvalues: usize,
}

impl Default for MpFitConfig {
    fn default() -> Self {
        Self {
            q_min: 0.01,
            q_max: 2.0,
            sigma_min: 0.1,
            sigma_max: 3.0,
            max_rounds: 20,
            min_eigenvalues: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpFit {
    pub q: f64,
    pub sigma: f64,
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    /// Sum of squared differences between histogram and fitted density.
    pub fit_error: f64,
    pub m_max: usize,
    pub rounds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_left: f64,
    pub bin_right: f64,
    pub density: f64,
    pub mp_density: f64,
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Density histogram with Freedman-Diaconis bin width. Returns
/// `(left edges, width, densities)`.
pub(crate) fn fd_histogram(values: &[f64]) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    if !(iqr > 0.0) || !(hi > lo) {
        return Err(Error::MpFit("degenerate spectrum (zero spread)".into()));
    }
    let fd = 2.0 * iqr / (n as f64).cbrt();
    let bins = (((hi - lo) / fd).ceil() as usize).clamp(5, 10_000);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in &sorted {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let lefts = (0..bins).map(|b| lo + b as f64 * width).collect();
    let dens = counts
        .iter()
        .map(|&c| c as f64 / (n as f64 * width))
        .collect();
    Ok((lefts, width, dens))
}

/// Fits `(q, sigma)` to the bulk of the spectrum.
///
/// Each round histograms the current bulk, minimizes the squared distance
/// between histogram and density over the configured box with a simplex
/// search, and redefines the bulk as the eigenvalues not above the fitted
/// upper edge. Rounds stop once the outlier count repeats; if the counts
/// fall into a cycle instead, the cycle member with the smallest fit error
/// is returned.
pub fn fit_mp(eigs: &EigenSystem, cfg: &MpFitConfig) -> Result<MpFit> {
    let all = eigs.values();
    if all.len() < cfg.min_eigenvalues {
        return Err(invalid(format!(
            "{} eigenvalues; at least {} required for a meaningful histogram",
            all.len(),
            cfg.min_eigenvalues
        )));
    }
    let mut sorted = all.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    if !(q3 > q1) {
        return Err(Error::MpFit("degenerate spectrum (all eigenvalues equal)".into()));
    }
    let fence = q3 + 3.0 * (q3 - q1);
    let mut bulk: Vec<f64> = all.iter().copied().filter(|v| *v <= fence).collect();

    let in_box = |q: f64, s: f64| q >= cfg.q_min && q <= cfg.q_max && s >= cfg.sigma_min && s <= cfg.sigma_max;
    let clamp = |q: f64, s: f64| {
        (
            q.clamp(cfg.q_min, cfg.q_max),
            s.clamp(cfg.sigma_min, cfg.sigma_max),
        )
    };

    // method of moments on the initial bulk: mean = sigma^2, var = q sigma^4
    let m = stats::mean(&bulk);
    let v = stats::variance(&bulk);
    let (mut q, mut sigma) = clamp(v / (m * m), m.max(1e-12).sqrt());
    let mut history: Vec<MpFit> = Vec::new();
    let mut fit_error = f64::NAN;

    for round in 1..=cfg.max_rounds {
        if bulk.len() < 3 {
            return Err(Error::MpFit(format!("bulk shrank to {} eigenvalues", bulk.len())));
        }
        let (lefts, width, dens) = fd_histogram(&bulk)?;
        let centers: Vec<f64> = lefts.iter().map(|l| l + 0.5 * width).collect();
        let objective = |x: &[f64]| {
            if !in_box(x[0], x[1]) {
                return f64::INFINITY;
            }
            centers
                .iter()
                .zip(&dens)
                .map(|(c, h)| {
                    let d = h - mp_density(*c, x[0], x[1]);
                    d * d
                })
                .sum::<f64>()
        };
        let mut res = nelder_mead(objective, &[q, sigma], SimplexOptions::default());
        // one restart from the best point guards against a collapsed simplex
        let restart = nelder_mead(objective, &res.x, SimplexOptions::default());
        if restart.f <= res.f {
            res = restart;
        }
        if !res.f.is_finite() {
            return Err(Error::MpFit(format!(
                "objective not finite in round {round} (q = {q}, sigma = {sigma})"
            )));
        }
        if !res.converged {
            return Err(Error::MpFit(format!(
                "simplex search did not converge in round {round}: q = {}, sigma = {}, error = {}",
                res.x[0], res.x[1], res.f
            )));
        }
        q = res.x[0];
        sigma = res.x[1];
        fit_error = res.f;
        let (lm, lp) = mp_edges(q, sigma);
        let m_max = all.iter().filter(|v| **v > lp).count();
        let fit = MpFit {
            q,
            sigma,
            lambda_minus: lm,
            lambda_plus: lp,
            fit_error,
            m_max,
            rounds: round,
        };
        if history.last().map(|f: &MpFit| f.m_max) == Some(m_max) {
            return Ok(fit);
        }
        // a count seen before means the rounds cycle; keep the best fit of the cycle
        if let Some(start) = history.iter().position(|f| f.m_max == m_max) {
            let best = history[start..]
                .iter()
                .chain(std::iter::once(&fit))
                .min_by(|a, b| a.fit_error.total_cmp(&b.fit_error))
                .copied()
                .expect("non-empty cycle");
            warn!(
                "outlier count cycles through {:?}; keeping m_max = {}",
                history[start..].iter().map(|f| f.m_max).collect::<Vec<_>>(),
                best.m_max
            );
            return Ok(MpFit { rounds: round, ..best });
        }
        history.push(fit);
        bulk = all.iter().copied().filter(|v| *v <= lp).collect();
    }
    Err(Error::MpFit(format!(
        "outlier count did not stabilize within {} rounds (q = {q}, sigma = {sigma}, error = {fit_error})",
        cfg.max_rounds
    )))
}

/// Number of eigenvalues strictly above the fitted upper edge.
pub fn count_outliers(eigs: &EigenSystem, fit: &MpFit) -> usize {
    eigs.values().iter().filter(|v| **v > fit.lambda_plus).count()
}

/// Histogram of the bulk eigenvalues next to the fitted density, for plotting.
pub fn bulk_histogram(eigs: &EigenSystem, fit: &MpFit) -> Result<Vec<HistogramBin>> {
    let bulk: Vec<f64> = eigs
        .values()
        .iter()
        .copied()
        .filter(|v| *v <= fit.lambda_plus)
        .collect();
    let (lefts, width, dens) = fd_histogram(&bulk)?;
    Ok(lefts
        .into_iter()
        .zip(dens)
        .map(|(l, d)| HistogramBin {
            bin_left: l,
            bin_right: l + width,
            density: d,
            mp_density: mp_density(l + 0.5 * width, fit.q, fit.sigma),
        })
        .collect())
}

/// Fraction of entries of `v` that are positive; used to check the market mode.
pub fn positive_fraction(v: &[f64]) -> f64 {
    v.iter().filter(|x| **x > 0.0).count() as f64 / v.len() as f64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpSummary {
    pub q: f64,
    pub sigma: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub m_max: usize,
}

/// JSON spectrum report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<f64>,
    pub mp: MpSummary,
}

impl SpectrumReport {
    pub fn new(eigs: &EigenSystem, fit: &MpFit) -> Self {
        Self {
            eigenvalues: eigs.values().to_vec(),
            mp: MpSummary {
                q: fit.q,
                sigma: fit.sigma,
                lambda_plus: fit.lambda_plus,
                lambda_minus: fit.lambda_minus,
                m_max: fit.m_max,
            },
        }
    }
}
