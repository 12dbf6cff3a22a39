//! Baseline stopping rules: cumulative percentage of variation and
//! contiguous-block PRESS cross-validation, plus a timed comparison harness.

use std::ops::Range;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::factors::{fit_all_loadings, fold_ranges, ComponentSeries, LassoConfig};
use crate::panel::{PanelKind, StandardizedPanel};
use crate::pipeline::{detrended_spectrum, select_components, SelectionConfig};
use crate::spectra::{self, fit_mp, EigenSystem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumVarCurve {
    /// `lambda_curve[m - 1]` is the percentage explained by the top `m` components.
    pub lambda_curve: Vec<f64>,
}

/// `Lambda(m) = 100 sum_{p<=m} lambda_p / N`. Rounding-level negative
/// eigenvalues count as zero and the trace stands in for `N`, so the curve
/// is non-decreasing and ends at exactly 100.
pub fn cumulative_variance(eigs: &EigenSystem) -> CumVarCurve {
    let vals: Vec<f64> = eigs.values().iter().map(|v| v.max(0.0)).collect();
    partial_percent(&vals, vals.iter().sum())
}

/// Share of the variance carried by the top `m_max` components that the
/// top `m` explain, for `m = 1..=m_max`.
pub fn cumulative_variance_within(eigs: &EigenSystem, m_max: usize) -> Result<CumVarCurve> {
    if m_max < 1 || m_max > eigs.dim() {
        return Err(invalid(format!("m_max = {m_max} outside 1..={}", eigs.dim())));
    }
    let vals: Vec<f64> = eigs.values()[..m_max].iter().map(|v| v.max(0.0)).collect();
    Ok(partial_percent(&vals, vals.iter().sum()))
}

fn partial_percent(vals: &[f64], total: f64) -> CumVarCurve {
    let mut acc = 0.0;
    let mut curve: Vec<f64> = vals
        .iter()
        .map(|v| {
            acc += v;
            100.0 * acc / total
        })
        .collect();
    if let Some(last) = curve.last_mut() {
        *last = 100.0;
    }
    CumVarCurve { lambda_curve: curve }
}

/// Smallest `m` with `Lambda(m) > alpha`.
pub fn select_by_cumvar(curve: &CumVarCurve, alpha: f64) -> Result<usize> {
    if !(alpha > 0.0 && alpha < 100.0) {
        return Err(invalid(format!("threshold {alpha} outside (0, 100)")));
    }
    Ok(curve
        .lambda_curve
        .iter()
        .position(|v| *v > alpha)
        .map_or(curve.lambda_curve.len(), |i| i + 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PressRegression {
    /// Ordinary least squares on the first `m` factors.
    #[default]
    Ols,
    /// Cross-validated lasso on all `m_max` factors, truncated at `m`.
    Lasso,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressCurve {
    /// `press[m]` for `m = 0..=m_max`.
    pub press: Vec<f64>,
    pub fold_layout: Vec<Range<usize>>,
    pub argmin: usize,
}

/// Squared prediction error on `test` of the `m`-factor model fitted on
/// `train`, for every `m = 0..=m_max`.
pub fn press_on_split(train: &DMatrix<f64>, test: &DMatrix<f64>, m_max: usize) -> Result<Vec<f64>> {
    let w = top_eigenvectors(train, m_max)?;
    let f_train = train * &w;
    let f_test = test * &w;
    let ftf = f_train.tr_mul(&f_train);
    let ftx = f_train.tr_mul(train);
    let mut out = Vec::with_capacity(m_max + 1);
    out.push(test.iter().map(|v| v * v).sum());
    for m in 1..=m_max {
        let chol = ftf
            .view((0, 0), (m, m))
            .into_owned()
            .cholesky()
            .ok_or_else(|| Error::Singular(format!("factor Gram of order {m} in a training fold")))?;
        let b = chol.solve(&ftx.rows(0, m).into_owned());
        let pred = f_test.columns(0, m) * b;
        out.push((test - pred).iter().map(|v| v * v).sum());
    }
    Ok(out)
}

fn top_eigenvectors(train: &DMatrix<f64>, m_max: usize) -> Result<DMatrix<f64>> {
    let g = spectra::gram(train);
    let eig = spectra::symmetric_eigen(&g)?;
    Ok(eig.leading_vectors(m_max))
}

fn split(x: &DMatrix<f64>, r: &Range<usize>) -> (DMatrix<f64>, DMatrix<f64>) {
    let test = x.rows(r.start, r.len()).into_owned();
    let train = x.clone().remove_rows(r.start, r.len());
    (train, test)
}

pub fn press_crossval(
    x: &StandardizedPanel,
    m_max: usize,
    folds: usize,
    regression: PressRegression,
) -> Result<PressCurve> {
    let t = x.n_obs();
    if folds < 2 || t < 2 * folds {
        return Err(invalid(format!("{t} rows for {folds} folds")));
    }
    if m_max < 1 || m_max > x.n_assets() {
        return Err(invalid(format!("m_max = {m_max} outside 1..={}", x.n_assets())));
    }
    let layout = fold_ranges(t, folds);
    if let Some(r) = layout.iter().find(|r| r.len() < m_max) {
        return Err(invalid(format!(
            "fold {:?} has {} rows, fewer than m_max = {m_max}",
            r,
            r.len()
        )));
    }
    let mut press = vec![0.0; m_max + 1];
    for r in &layout {
        let (train, test) = split(x.matrix(), r);
        let fold = match regression {
            PressRegression::Ols => press_on_split(&train, &test, m_max)?,
            PressRegression::Lasso => press_lasso_split(x, &train, &test, m_max)?,
        };
        for (acc, v) in press.iter_mut().zip(fold) {
            *acc += v;
        }
    }
    let argmin = (0..=m_max)
        .min_by(|&a, &b| press[a].total_cmp(&press[b]))
        .expect("non-empty curve");
    Ok(PressCurve {
        press,
        fold_layout: layout,
        argmin,
    })
}

fn press_lasso_split(
    x: &StandardizedPanel,
    train: &DMatrix<f64>,
    test: &DMatrix<f64>,
    m_max: usize,
) -> Result<Vec<f64>> {
    let w = top_eigenvectors(train, m_max)?;
    let factors = ComponentSeries {
        values: train * &w,
        source: "training fold".into(),
    };
    // lasso works on standardized targets; predictions are mapped back below
    let panel = StandardizedPanel::from_raw(
        train,
        PanelKind::Residuals,
        x.column_ids().to_vec(),
        (0..train.nrows()).map(|i| i.to_string()).collect(),
    )?;
    let cfg = LassoConfig {
        folds: LassoConfig::default().folds.min(train.nrows() / 10).max(2),
        ..LassoConfig::default()
    };
    let loadings = fit_all_loadings(&panel, &factors, &cfg)?;
    let f_test = test * &w;
    let mut out = Vec::with_capacity(m_max + 1);
    out.push(test.iter().map(|v| v * v).sum());
    for m in 1..=m_max {
        let mut sse = 0.0;
        for i in 0..test.ncols() {
            let col = crate::stats::col(train, i);
            let mean = crate::stats::mean(col);
            let sd = crate::stats::variance(col).sqrt();
            for tt in 0..test.nrows() {
                let z: f64 = (0..m).map(|p| loadings.betas[(i, p)] * f_test[(tt, p)]).sum();
                let pred = mean + sd * z;
                sse += (test[(tt, i)] - pred).powi(2);
            }
        }
        out.push(sse);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodSet {
    pub memory: bool,
    pub cumvar: bool,
    pub press: bool,
}

impl Default for MethodSet {
    fn default() -> Self {
        Self {
            memory: true,
            cumvar: true,
            press: true,
        }
    }
}

impl MethodSet {
    /// Parses a comma-separated list of `memory`, `cumvar`, `press`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut s = Self {
            memory: false,
            cumvar: false,
            press: false,
        };
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "memory" => s.memory = true,
                "cumvar" => s.cumvar = true,
                "press" => s.press = true,
                other => return Err(invalid(format!("unknown method `{other}`"))),
            }
        }
        if !(s.memory || s.cumvar || s.press) {
            return Err(invalid("no method selected"));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct CompareConfig {
    pub methods: MethodSet,
    pub selection: SelectionConfig,
    pub folds: usize,
    pub press_regression: PressRegression,
}

impl CompareConfig {
    pub fn new(selection: SelectionConfig) -> Self {
        Self {
            methods: MethodSet::default(),
            selection,
            folds: 10,
            press_regression: PressRegression::Ols,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryOutcome {
    pub m_star: usize,
    pub m_max: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumvarOutcome {
    pub m70: usize,
    pub m90: usize,
    /// Same thresholds applied to the share of the top-`m_max` variance.
    pub m70_within_mmax: Option<usize>,
    pub m90_within_mmax: Option<usize>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressOutcome {
    pub argmin: usize,
    pub m_max: usize,
    pub seconds: f64,
    pub curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Outcome<T> {
    Done(T),
    Failed { error: String },
}

impl<T> Outcome<T> {
    pub fn done(&self) -> Option<&T> {
        match self {
            Outcome::Done(v) => Some(v),
            Outcome::Failed { .. } => None,
        }
    }
}

fn outcome<T>(r: Result<T>) -> Outcome<T> {
    match r {
        Ok(v) => Outcome::Done(v),
        Err(e) => Outcome::Failed { error: e.to_string() },
    }
}

/// JSON comparison report; absent keys mean the method was not requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub memory: Option<Outcome<MemoryOutcome>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cumvar: Option<Outcome<CumvarOutcome>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub press: Option<Outcome<PressOutcome>>,
}

/// Runs each requested method on the same panel, one after the other, each
/// from the standardized panel so that every timing includes the shared
/// detrending and spectrum work.
pub fn timed_compare(x: &StandardizedPanel, cfg: &CompareConfig) -> ComparisonReport {
    let memory = cfg.methods.memory.then(|| {
        let start = Instant::now();
        outcome(select_components(x, &cfg.selection).map(|r| MemoryOutcome {
            m_star: r.m_star(),
            m_max: r.m_max,
            seconds: start.elapsed().as_secs_f64(),
        }))
    });
    let cumvar = cfg.methods.cumvar.then(|| {
        let start = Instant::now();
        outcome((|| {
            let s = detrended_spectrum(x)?;
            let curve = cumulative_variance(&s.g_eigs);
            let m70 = select_by_cumvar(&curve, 70.0)?;
            let m90 = select_by_cumvar(&curve, 90.0)?;
            let seconds = start.elapsed().as_secs_f64();
            // diagnostic only; not part of the timed rule
            let within = fit_mp(&s.g_eigs, &cfg.selection.mp)
                .ok()
                .map(|f| cfg.selection.m_max_override.unwrap_or(f.m_max))
                .filter(|m| *m >= 1)
                .and_then(|m| cumulative_variance_within(&s.g_eigs, m).ok());
            Ok(CumvarOutcome {
                m70,
                m90,
                m70_within_mmax: within.as_ref().and_then(|c| select_by_cumvar(c, 70.0).ok()),
                m90_within_mmax: within.as_ref().and_then(|c| select_by_cumvar(c, 90.0).ok()),
                seconds,
            })
        })())
    });
    let press = cfg.methods.press.then(|| {
        let start = Instant::now();
        outcome((|| {
            let s = detrended_spectrum(x)?;
            let fit = fit_mp(&s.g_eigs, &cfg.selection.mp).map_err(|e| e.at_stage("mp-fit"))?;
            let m_max = cfg.selection.m_max_override.unwrap_or(fit.m_max);
            let curve = press_crossval(&s.market.detrended.residuals, m_max, cfg.folds, cfg.press_regression)
                .map_err(|e| e.at_stage("press"))?;
            Ok(PressOutcome {
                argmin: curve.argmin,
                m_max,
                seconds: start.elapsed().as_secs_f64(),
                curve: curve.press,
            })
        })())
    });
    ComparisonReport {
        memory,
        cumvar,
        press,
    }
}
