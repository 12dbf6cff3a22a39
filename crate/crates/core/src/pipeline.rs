//! The full selection procedure: detrend, spectrum and MP fit, factor
//! loadings, residual memory curve, breakpoint.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::detrend::{remove_market, MarketRemoval};
use crate::error::{invalid, Result};
use crate::factors::{component_series, fit_all_loadings, ComponentSeries, LassoConfig, LoadingMatrix};
use crate::memory::{fit_theta, memory_curve, MemoryConfig, MemoryCurve, ThetaFit};
use crate::panel::StandardizedPanel;
use crate::spectra::{correlation, eigendecompose, fit_mp, CorrelationMatrix, EigenSystem, MpFit, MpFitConfig};

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub mp: MpFitConfig,
    pub lasso: LassoConfig,
    pub memory: MemoryConfig,
    /// Use this many components instead of the fitted outlier count.
    pub m_max_override: Option<usize>,
}

/// Detrended spectrum shared by every selection method.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub market: MarketRemoval,
    pub g: CorrelationMatrix,
    pub g_eigs: EigenSystem,
}

pub fn detrended_spectrum(x: &StandardizedPanel) -> Result<Spectrum> {
    let market = remove_market(x).map_err(|e| e.at_stage("detrend"))?;
    let g = correlation(&market.detrended.residuals).map_err(|e| e.at_stage("spectrum"))?;
    let g_eigs = eigendecompose(&g).map_err(|e| e.at_stage("spectrum"))?;
    Ok(Spectrum { market, g, g_eigs })
}

#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub spectrum: Spectrum,
    pub mp: MpFit,
    /// Component pool actually used (the fitted count unless overridden).
    pub m_max: usize,
    pub factors: ComponentSeries,
    pub loadings: LoadingMatrix,
    pub curve: MemoryCurve,
    pub theta: ThetaFit,
    /// Wall-clock seconds per stage, in execution order.
    pub timings: Vec<(String, f64)>,
}

impl SelectionResult {
    pub fn m_star(&self) -> usize {
        self.theta.m_star
    }

    pub fn report(&self) -> SelectionReport {
        SelectionReport::from_theta(&self.theta)
    }
}

/// Everything up to and including the memory curve. Only the breakpoint fit
/// is left, so the curve can be inspected even when that fit is refused.
#[derive(Debug, Clone)]
pub struct MemoryStages {
    pub spectrum: Spectrum,
    pub mp: MpFit,
    pub m_max: usize,
    pub factors: ComponentSeries,
    pub loadings: LoadingMatrix,
    pub curve: MemoryCurve,
    pub timings: Vec<(String, f64)>,
}

impl MemoryStages {
    pub fn finish(mut self) -> Result<SelectionResult> {
        let clock = Instant::now();
        let theta = fit_theta(&self.curve.zeta).map_err(|e| e.at_stage("theta"))?;
        self.timings.push(("theta".to_string(), clock.elapsed().as_secs_f64()));
        Ok(SelectionResult {
            spectrum: self.spectrum,
            mp: self.mp,
            m_max: self.m_max,
            factors: self.factors,
            loadings: self.loadings,
            curve: self.curve,
            theta,
            timings: self.timings,
        })
    }
}

pub fn memory_stages(x: &StandardizedPanel, cfg: &SelectionConfig) -> Result<MemoryStages> {
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut Vec<(String, f64)>| {
        timings.push((name.to_string(), clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };

    let spectrum = detrended_spectrum(x)?;
    lap("detrend+spectrum", &mut timings);
    let mp = fit_mp(&spectrum.g_eigs, &cfg.mp).map_err(|e| e.at_stage("mp-fit"))?;
    lap("mp-fit", &mut timings);
    let m_max = cfg.m_max_override.unwrap_or(mp.m_max);
    if m_max < 1 {
        return Err(invalid("no eigenvalues above the fitted bulk edge").at_stage("factors"));
    }
    let residuals = &spectrum.market.detrended.residuals;
    let factors = component_series(residuals, &spectrum.g_eigs, m_max).map_err(|e| e.at_stage("factors"))?;
    let loadings = fit_all_loadings(residuals, &factors, &cfg.lasso).map_err(|e| e.at_stage("loadings"))?;
    lap("loadings", &mut timings);
    let curve = memory_curve(residuals, &loadings, &factors, m_max, &cfg.memory)
        .map_err(|e| e.at_stage("memory"))?;
    lap("memory", &mut timings);
    Ok(MemoryStages {
        spectrum,
        mp,
        m_max,
        factors,
        loadings,
        curve,
        timings,
    })
}

pub fn select_components(x: &StandardizedPanel, cfg: &SelectionConfig) -> Result<SelectionResult> {
    memory_stages(x, cfg)?.finish()
}

/// JSON selection report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub m_star: usize,
    pub theta_hat: usize,
    pub gamma: f64,
    pub m_max: usize,
    /// Adjusted R^2 keyed by candidate breakpoint.
    pub r2_adj: BTreeMap<String, f64>,
}

impl SelectionReport {
    pub fn from_theta(t: &ThetaFit) -> Self {
        Self {
            m_star: t.m_star,
            theta_hat: t.theta_hat,
            gamma: t.gamma,
            m_max: t.m_max,
            r2_adj: t
                .r2_adj_by_candidate
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
        }
    }
}
