//! Choosing how many principal components to keep in a long-memory panel.
//!
//! The selection removes the market mode, fits the Marchenko-Pastur law to
//! the detrended spectrum to get a pool of `m_max` informative components,
//! regresses every residual series on those components with a lasso, and
//! tracks how much autocorrelation memory is left after removing the first
//! `m` of them. The number kept is one less than the point where the
//! remaining memory starts to decay as a clean power law in `m`.

pub mod baselines;
pub mod detrend;
pub mod error;
pub mod factors;
pub mod io;
pub mod memory;
pub mod optim;
pub mod panel;
pub mod pipeline;
pub mod portfolio;
pub mod reference;
pub mod spectra;
pub mod stats;
pub mod synth;

pub use baselines::{
    cumulative_variance, cumulative_variance_within, press_crossval, select_by_cumvar, timed_compare,
    CompareConfig, ComparisonReport, CumVarCurve, MethodSet, PressCurve, PressRegression,
};
pub use detrend::{detrend_market, market_mode, remove_market, Detrended, MarketModel, MarketRemoval};
pub use error::{Error, Result};
pub use factors::{
    component_series, fit_all_loadings, lasso_fit, select_penalty, ComponentSeries, LassoConfig, LoadingMatrix,
};
pub use memory::{
    acf, adjusted_r2, bartlett_cut, fit_theta, integrated_proxy, memory_curve, powerlaw_exponent, residues,
    theil_sen, AcfCurve, BartlettCut, MemoryConfig, MemoryCurve, MemoryProxy, ThetaFit,
};
pub use panel::{clean_prices, log_returns, log_volatility, CleanOutcome, PanelKind, PricePanel, StandardizedPanel};
pub use pipeline::{memory_stages, select_components, MemoryStages, SelectionConfig, SelectionReport, SelectionResult};
pub use portfolio::{eigen_portfolio_variance, markowitz_weights, sector_projection, SectorProjection};
pub use spectra::{
    correlation, count_outliers, eigendecompose, fit_mp, mp_density, mp_edges, CorrelationMatrix, EigenSystem,
    MpFit, MpFitConfig, SpectrumReport,
};
pub use synth::{ar1, cluster_sizes, fgn, simulate_market, Layout, MarketSpec, MemoryKind, SyntheticPanel};
