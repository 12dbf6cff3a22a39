//! Principal-component factor series and lasso loadings.
//!
//! The lasso objective is `(1/T) |y - X b|^2 + upsilon |b|_1`, minimized by
//! cyclic coordinate descent on the Gram form `G = X^T X / T`, `c = X^T y / T`.
//! The coordinate update is `b_j = S(c_j - (G b)_j + G_jj b_j, upsilon/2) / G_jj`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::panel::StandardizedPanel;
use crate::spectra::EigenSystem;
use crate::stats;

/// Factor series `I_p = C w_p` for `p = 1..m`, one column each.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSeries {
    pub values: DMatrix<f64>,
    pub source: String,
}

impl ComponentSeries {
    pub fn n_obs(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.values.ncols()
    }

    pub fn factor(&self, p: usize) -> &[f64] {
        stats::col(&self.values, p)
    }
}

pub fn component_series(
    residuals: &StandardizedPanel,
    eigs: &EigenSystem,
    m_max: usize,
) -> Result<ComponentSeries> {
    let n = residuals.n_assets();
    if eigs.dim() != n {
        return Err(invalid(format!(
            "eigensystem of dimension {} for {n} assets",
            eigs.dim()
        )));
    }
    if m_max < 1 || m_max > n {
        return Err(invalid(format!("m_max = {m_max} outside 1..={n}")));
    }
    let w = eigs.leading_vectors(m_max);
    Ok(ComponentSeries {
        values: residuals.matrix() * w,
        source: format!("top {m_max} eigenvectors of a {n} x {n} correlation matrix"),
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LassoConfig {
    pub folds: usize,
    pub grid_len: usize,
    /// Smallest grid value as a fraction of the largest.
    pub grid_ratio: f64,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            grid_len: 100,
            grid_ratio: 1e-4,
            tol: 1e-7,
            max_sweeps: 10_000,
        }
    }
}

/// Coordinate descent on the Gram form, starting from `b`. Returns the
/// number of sweeps used.
pub(crate) fn lasso_gram(
    gram: &DMatrix<f64>,
    c: &[f64],
    upsilon: f64,
    b: &mut [f64],
    tol: f64,
    max_sweeps: usize,
    mut on_sweep: impl FnMut(&[f64]),
) -> Result<usize> {
    let m = c.len();
    let half = 0.5 * upsilon;
    // gb = G b, kept in sync with b
    let mut gb = vec![0.0; m];
    for j in 0..m {
        if b[j] != 0.0 {
            for (g, v) in gb.iter_mut().zip(stats::col(gram, j)) {
                *g += v * b[j];
            }
        }
    }
    let mut max_change = f64::INFINITY;
    for sweep in 1..=max_sweeps {
        max_change = 0.0f64;
        for j in 0..m {
            let gjj = gram[(j, j)];
            if gjj <= 0.0 {
                continue;
            }
            let rho = c[j] - gb[j] + gjj * b[j];
            let new = soft_threshold(rho, half) / gjj;
            let delta = new - b[j];
            if delta != 0.0 {
                for (g, v) in gb.iter_mut().zip(stats::col(gram, j)) {
                    *g += v * delta;
                }
                b[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        on_sweep(b);
        if max_change < tol {
            return Ok(sweep);
        }
    }
    Err(Error::Convergence {
        sweeps: max_sweeps,
        max_change,
        last: b.to_vec(),
    })
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn check_target(target: &[f64], factors: &ComponentSeries) -> Result<()> {
    if target.len() != factors.n_obs() {
        return Err(invalid(format!(
            "target has length {} but factors have {} rows",
            target.len(),
            factors.n_obs()
        )));
    }
    Ok(())
}

fn gram_and_cross(x: &DMatrix<f64>, y: &[f64]) -> (DMatrix<f64>, Vec<f64>) {
    let t = x.nrows() as f64;
    let g = crate::spectra::gram(x);
    let c = (0..x.ncols()).map(|j| stats::dot(stats::col(x, j), y) / t).collect();
    (g, c)
}

/// Lasso coefficients at a fixed penalty.
pub fn lasso_fit(target: &[f64], factors: &ComponentSeries, upsilon: f64) -> Result<Vec<f64>> {
    lasso_fit_with(target, factors, upsilon, &LassoConfig::default())
}

pub fn lasso_fit_with(
    target: &[f64],
    factors: &ComponentSeries,
    upsilon: f64,
    cfg: &LassoConfig,
) -> Result<Vec<f64>> {
    check_target(target, factors)?;
    if !(upsilon >= 0.0) {
        return Err(invalid(format!("penalty {upsilon} must be non-negative")));
    }
    let (g, c) = gram_and_cross(&factors.values, target);
    let mut b = vec![0.0; c.len()];
    lasso_gram(&g, &c, upsilon, &mut b, cfg.tol, cfg.max_sweeps, |_| {})?;
    Ok(b)
}

/// Objective value `(1/T)|y - Xb|^2 + upsilon |b|_1`.
pub fn lasso_objective(target: &[f64], factors: &ComponentSeries, upsilon: f64, b: &[f64]) -> f64 {
    let t = target.len() as f64;
    let mut sse = 0.0;
    for (i, y) in target.iter().enumerate() {
        let fit: f64 = (0..b.len()).map(|p| factors.values[(i, p)] * b[p]).sum();
        sse += (y - fit) * (y - fit);
    }
    sse / t + upsilon * b.iter().map(|v| v.abs()).sum::<f64>()
}

/// Objective values after every sweep of a cold-started fit.
pub fn lasso_objective_trace(
    target: &[f64],
    factors: &ComponentSeries,
    upsilon: f64,
) -> Result<Vec<f64>> {
    check_target(target, factors)?;
    let (g, c) = gram_and_cross(&factors.values, target);
    let mut b = vec![0.0; c.len()];
    let mut trace = vec![lasso_objective(target, factors, upsilon, &b)];
    let cfg = LassoConfig::default();
    lasso_gram(&g, &c, upsilon, &mut b, cfg.tol, cfg.max_sweeps, |b| {
        trace.push(lasso_objective(target, factors, upsilon, b))
    })?;
    Ok(trace)
}

/// Smallest penalty at which every coefficient is zero: `2 max_j |c_j|`.
pub fn upsilon_max(target: &[f64], factors: &ComponentSeries) -> Result<f64> {
    check_target(target, factors)?;
    let (_, c) = gram_and_cross(&factors.values, target);
    Ok(2.0 * c.iter().fold(0.0f64, |a, v| a.max(v.abs())))
}

/// Log-spaced grid from `top` down to `ratio * top`, `len` points.
pub fn penalty_grid(top: f64, len: usize, ratio: f64) -> Vec<f64> {
    if len <= 1 || top <= 0.0 {
        return vec![top.max(0.0)];
    }
    let (a, b) = (top.ln(), (top * ratio).ln());
    (0..len)
        .map(|k| {
            if k == 0 {
                top
            } else {
                (a + (b - a) * k as f64 / (len - 1) as f64).exp()
            }
        })
        .collect()
}

/// Contiguous fold boundaries; the first `rows % folds` folds get one extra row.
pub fn fold_ranges(rows: usize, folds: usize) -> Vec<std::ops::Range<usize>> {
    let base = rows / folds;
    let extra = rows % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for g in 0..folds {
        let len = base + usize::from(g < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}

/// Fold layout plus the factor Gram blocks shared by every target.
pub struct CvPlan<'a> {
    factors: &'a ComponentSeries,
    ranges: Vec<std::ops::Range<usize>>,
    /// Unscaled `X_g^T X_g` for each fold.
    fold_gram: Vec<DMatrix<f64>>,
    /// Unscaled `X^T X`.
    full_gram: DMatrix<f64>,
}

impl<'a> CvPlan<'a> {
    pub fn new(factors: &'a ComponentSeries, folds: usize) -> Result<Self> {
        let t = factors.n_obs();
        if folds < 2 {
            return Err(invalid(format!("{folds} folds; need at least 2")));
        }
        if t < 10 * folds {
            return Err(invalid(format!(
                "{t} observations is too few for {folds}-fold penalty selection (need {})",
                10 * folds
            )));
        }
        let ranges = fold_ranges(t, folds);
        let fold_gram: Vec<DMatrix<f64>> = ranges
            .iter()
            .map(|r| {
                let blk = factors.values.rows(r.start, r.len());
                blk.tr_mul(&blk)
            })
            .collect();
        let full_gram = fold_gram.iter().fold(
            DMatrix::zeros(factors.n_factors(), factors.n_factors()),
            |acc, g| acc + g,
        );
        Ok(Self {
            factors,
            ranges,
            fold_gram,
            full_gram,
        })
    }

    pub fn ranges(&self) -> &[std::ops::Range<usize>] {
        &self.ranges
    }

    /// Mean out-of-fold squared error for each penalty in `grid` (which must
    /// be in decreasing order for warm starts to help).
    pub fn cv_errors(&self, target: &[f64], grid: &[f64], cfg: &LassoConfig) -> Result<Vec<f64>> {
        check_target(target, self.factors)?;
        let m = self.factors.n_factors();
        let t = target.len();
        let x = &self.factors.values;
        // per-fold X_g^T y_g and y_g^T y_g
        let mut fold_xy = Vec::with_capacity(self.ranges.len());
        let mut fold_yy = Vec::with_capacity(self.ranges.len());
        for r in &self.ranges {
            let y = &target[r.clone()];
            let xy: Vec<f64> = (0..m)
                .map(|p| stats::dot(&stats::col(x, p)[r.clone()], y))
                .collect();
            fold_xy.push(xy);
            fold_yy.push(stats::dot(y, y));
        }
        let full_xy: Vec<f64> = (0..m)
            .map(|p| fold_xy.iter().map(|v| v[p]).sum())
            .collect();

        let mut sse = vec![0.0; grid.len()];
        for (g, r) in self.ranges.iter().enumerate() {
            let n_train = (t - r.len()) as f64;
            let gram = (&self.full_gram - &self.fold_gram[g]) / n_train;
            let c: Vec<f64> = full_xy
                .iter()
                .zip(&fold_xy[g])
                .map(|(a, b)| (a - b) / n_train)
                .collect();
            let mut b = vec![0.0; m];
            for (k, &u) in grid.iter().enumerate() {
                lasso_gram(&gram, &c, u, &mut b, cfg.tol, cfg.max_sweeps, |_| {})?;
                // |y - Xb|^2 = y'y - 2 b'X'y + b'X'Xb on the held-out block
                let bxy = stats::dot(&b, &fold_xy[g]);
                let fg = &self.fold_gram[g];
                let mut bgb = 0.0;
                for i in 0..m {
                    if b[i] == 0.0 {
                        continue;
                    }
                    bgb += b[i] * stats::dot(stats::col(fg, i), &b);
                }
                sse[k] += (fold_yy[g] - 2.0 * bxy + bgb).max(0.0);
            }
        }
        Ok(sse.into_iter().map(|s| s / t as f64).collect())
    }
}

/// Penalty with the smallest cross-validated error on `grid`; ties go to the
/// largest penalty.
pub fn select_penalty_on_grid(
    target: &[f64],
    plan: &CvPlan<'_>,
    grid: &[f64],
    cfg: &LassoConfig,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(invalid("empty penalty grid"));
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
    let sorted: Vec<f64> = order.iter().map(|&i| grid[i]).collect();
    let errs = plan.cv_errors(target, &sorted, cfg)?;
    let mut best = 0;
    for k in 1..errs.len() {
        if errs[k] < errs[best] {
            best = k;
        }
    }
    Ok(sorted[best])
}

/// Cross-validated penalty over the default log grid.
pub fn select_penalty(target: &[f64], factors: &ComponentSeries, folds: usize) -> Result<f64> {
    let cfg = LassoConfig {
        folds,
        ..LassoConfig::default()
    };
    let plan = CvPlan::new(factors, folds)?;
    let grid = penalty_grid(upsilon_max(target, factors)?, cfg.grid_len, cfg.grid_ratio);
    select_penalty_on_grid(target, &plan, &grid, &cfg)
}

/// Per-asset lasso loadings on the factor series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadingMatrix {
    pub tickers: Vec<String>,
    /// N x m coefficients.
    pub betas: DMatrix<f64>,
    pub penalty: Vec<f64>,
    /// In-sample mean squared error at the selected penalty.
    pub mse: Vec<f64>,
}

impl LoadingMatrix {
    pub fn n_assets(&self) -> usize {
        self.betas.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.betas.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.betas.row(i).iter().copied().collect()
    }

    pub fn zeros(tickers: Vec<String>, m: usize) -> Self {
        let n = tickers.len();
        Self {
            tickers,
            betas: DMatrix::zeros(n, m),
            penalty: vec![0.0; n],
            mse: vec![0.0; n],
        }
    }
}

pub fn fit_all_loadings(
    residuals: &StandardizedPanel,
    factors: &ComponentSeries,
    cfg: &LassoConfig,
) -> Result<LoadingMatrix> {
    if residuals.n_obs() != factors.n_obs() {
        return Err(invalid(format!(
            "residual panel has {} rows, factors {}",
            residuals.n_obs(),
            factors.n_obs()
        )));
    }
    let plan = CvPlan::new(factors, cfg.folds)?;
    let full_g = crate::spectra::gram(&factors.values);
    let t = factors.n_obs() as f64;
    let m = factors.n_factors();

    let fits: Vec<Result<(Vec<f64>, f64, f64)>> = (0..residuals.n_assets())
        .into_par_iter()
        .map(|i| {
            let y = residuals.column(i);
            let c: Vec<f64> = (0..m)
                .map(|p| stats::dot(factors.factor(p), y) / t)
                .collect();
            let top = 2.0 * c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let grid = penalty_grid(top, cfg.grid_len, cfg.grid_ratio);
            let u = select_penalty_on_grid(y, &plan, &grid, cfg)?;
            let mut b = vec![0.0; m];
            lasso_gram(&full_g, &c, u, &mut b, cfg.tol, cfg.max_sweeps, |_| {})?;
            let yy = stats::dot(y, y) / t;
            let bgb: f64 = (0..m).map(|p| b[p] * stats::dot(stats::col(&full_g, p), &b)).sum();
            let mse = (yy - 2.0 * stats::dot(&b, &c) + bgb).max(0.0);
            Ok((b, u, mse))
        })
        .collect();

    let n = residuals.n_assets();
    let mut out = LoadingMatrix::zeros(residuals.column_ids().to_vec(), m);
    for (i, r) in fits.into_iter().enumerate() {
        let (b, u, mse) = r.map_err(|e| e.for_asset(residuals.column_ids()[i].clone()))?;
        for p in 0..m {
            out.betas[(i, p)] = b[p];
        }
        out.penalty[i] = u;
        out.mse[i] = mse;
    }
    debug_assert_eq!(out.n_assets(), n);
    Ok(out)
}
