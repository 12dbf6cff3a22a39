use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::info;
use mempca_core::baselines::{timed_compare, CompareConfig, ComparisonReport};
use mempca_core::panel::raw_log_returns;
use mempca_core::pipeline::{detrended_spectrum, MemoryStages};
use mempca_core::portfolio::{column_means, eigen_portfolio_variance};
use mempca_core::spectra::{bulk_histogram, SpectrumReport};
use mempca_core::synth::MarketSpecFile;
use mempca_core::{
    clean_prices, correlation, cumulative_variance, eigendecompose, fit_mp, io, log_returns, log_volatility,
    markowitz_weights, memory_stages, sector_projection, simulate_market, MarketSpec, PanelKind, PricePanel,
    StandardizedPanel,
};
use serde::Serialize;

use crate::config::ConfigError;
use crate::run::Run;

fn require_input<'a>(run: &'a Run, what: &str) -> Result<&'a Path> {
    match run.config().input.as_deref() {
        Some(p) => Ok(p),
        None => bail!(ConfigError(format!("{what} needs an input file (--input or `input` in the config)"))),
    }
}

fn read_prices(path: &Path) -> Result<PricePanel> {
    io::read_prices_file(path).with_context(|| format!("reading prices from {}", path.display()))
}

fn is_price_file(path: &Path) -> Result<bool> {
    let mut head = String::new();
    std::fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .take(256)
        .read_to_string(&mut head)
        .ok();
    let first = head.lines().next().unwrap_or("");
    let cols: Vec<&str> = first.split(',').map(str::trim).collect();
    Ok(cols == ["date", "ticker", "close"])
}

fn panel_kind(run: &Run) -> Result<PanelKind> {
    let name = run.config().kind.clone().unwrap_or_else(|| "log-volatility".into());
    serde_json::from_value(serde_json::Value::String(name.clone()))
        .map_err(|_| ConfigError(format!("unknown panel kind `{name}` (returns, log-volatility, residuals)")).into())
}

fn market_spec(run: &Run, phi: Option<f64>, seed: Option<u64>) -> Result<MarketSpec> {
    let file = match &run.config().spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading spec {}", p.display()))?;
            MarketSpecFile::parse(&text)?
        }
        None => MarketSpecFile::default(),
    };
    let file = MarketSpecFile {
        phi: phi.or(file.phi),
        ..file
    };
    Ok(file.into_spec(seed.or(run.config().seed))?)
}

/// Log-volatility panel from the configured source: a wide panel CSV, a
/// long price CSV (cleaned and transformed on the fly) or a synthetic spec.
fn load_panel(run: &mut Run) -> Result<StandardizedPanel> {
    if let Some(path) = run.config().input.clone() {
        if is_price_file(&path)? {
            let p = run.config().clean_fraction()?;
            let raw = read_prices(&path)?;
            let cleaned = run.time("clean", || clean_prices(&raw, p))?;
            note_cleaning(run, &cleaned);
            let panel = run.time("transform", || log_returns(&cleaned.panel).and_then(|r| log_volatility(&r)))?;
            return Ok(panel);
        }
        let kind = panel_kind(run)?;
        let panel = io::read_panel_file(&path, kind).with_context(|| format!("reading panel {}", path.display()))?;
        return Ok(panel);
    }
    let spec = market_spec(run, None, None)?;
    let sim = run.time("simulate", || simulate_market(&spec))?;
    run.summary("synthetic_spec", &spec);
    let tickers = sim.panel.column_ids().to_vec();
    run.csv("ground_truth.csv", |w| io::write_ground_truth(w, &tickers, &sim.membership))?;
    Ok(sim.panel)
}

fn note_cleaning(run: &mut Run, out: &mempca_core::CleanOutcome) {
    for (t, len) in &out.removed {
        run.warn(format!("removed {t}: {len} observed prices"));
    }
    run.summary("tickers_kept", out.panel.n_tickers());
    run.summary("dates", out.panel.n_dates());
    run.summary("common_start", out.common_start.to_string());
    run.summary("removed", &out.removed);
    run.summary("filled", &out.filled);
    run.summary("total_fills", out.total_fills());
}

pub fn clean(run: &mut Run) -> Result<()> {
    let path = require_input(run, "clean")?.to_path_buf();
    let p = run.config().clean_fraction()?;
    let raw = read_prices(&path)?;
    run.summary("tickers_in", raw.n_tickers());
    let out = run.time("clean", || clean_prices(&raw, p))?;
    note_cleaning(run, &out);
    run.csv("prices_clean.csv", |w| io::write_prices(w, &out.panel))?;
    info!(
        "kept {} of {} tickers, {} forward fills",
        out.panel.n_tickers(),
        raw.n_tickers(),
        out.total_fills()
    );
    Ok(())
}

pub fn transform(run: &mut Run) -> Result<()> {
    let path = require_input(run, "transform")?.to_path_buf();
    let prices = read_prices(&path)?;
    let returns = run.time("returns", || log_returns(&prices))?;
    let lv = run.time("log-volatility", || log_volatility(&returns))?;
    run.csv("returns.csv", |w| io::write_panel(w, &returns))?;
    run.csv("log_volatility.csv", |w| io::write_panel(w, &lv))?;
    run.summary("rows", lv.n_obs());
    run.summary("assets", lv.n_assets());
    Ok(())
}

fn write_spectrum(run: &mut Run, spectrum: &mempca_core::pipeline::Spectrum, fit: &mempca_core::MpFit) -> Result<()> {
    let market = &spectrum.market;
    if market.market_positive_fraction < 1.0 {
        run.warn(format!(
            "market eigenvector has {:.1}% non-positive weights",
            100.0 * (1.0 - market.market_positive_fraction)
        ));
    }
    for t in &market.detrended.dropped {
        run.warn(format!("dropped {t}: residual is an exact multiple of the market mode"));
    }
    let report = SpectrumReport::new(&spectrum.g_eigs, fit);
    run.json("spectrum.json", &report)?;
    let values = spectrum.g_eigs.values().to_vec();
    run.table("eigenvalues", &values, |w| io::write_eigenvalues(w, &values))?;
    let raw_values = market.market_eigs.values().to_vec();
    run.table("market_eigenvalues", &raw_values, |w| io::write_eigenvalues(w, &raw_values))?;
    let bins = bulk_histogram(&spectrum.g_eigs, fit)?;
    run.table("histogram", &bins, |w| io::write_histogram(w, &bins))?;
    let cv = cumulative_variance(&spectrum.g_eigs);
    run.table("cumvar", &cv, |w| io::write_cumvar(w, &cv))?;
    run.summary("mp", &report.mp);
    run.summary("mp_rounds", fit.rounds);
    Ok(())
}

pub fn spectrum(run: &mut Run) -> Result<()> {
    let cfg = run.config().selection()?;
    let panel = load_panel(run)?;
    let spectrum = run.time("detrend+spectrum", || detrended_spectrum(&panel))?;
    let fit = run.time("mp-fit", || fit_mp(&spectrum.g_eigs, &cfg.mp))?;
    write_spectrum(run, &spectrum, &fit)
}

fn write_memory_artifacts(run: &mut Run, panel: &StandardizedPanel, s: &MemoryStages) -> Result<()> {
    write_spectrum(run, &s.spectrum, &s.mp)?;
    for (stage, secs) in &s.timings {
        run.record_time(stage, *secs);
    }
    let res = &s.spectrum.market.detrended.residuals;
    let model = &s.spectrum.market.detrended.model;
    let tickers = res.column_ids().to_vec();
    run.table("market_model", model, |w| io::write_market_model(w, &tickers, model))?;
    let labels = panel.row_labels().to_vec();
    run.csv("factors.csv", |w| io::write_factors(w, &labels, &s.factors))?;
    run.table("loadings", &s.loadings, |w| io::write_loadings(w, &s.loadings))?;
    let curve = &s.curve;
    run.table("memory_curve", &curve.zeta, |w| io::write_memory_curve(w, curve))?;
    run.csv("log_memory_curve.csv", |w| io::write_log_memory_curve(w, curve))?;
    run.csv("eta.csv", |w| io::write_eta_matrix(w, curve))?;
    if !curve.excluded.is_empty() {
        run.warn(format!(
            "{} assets left out of the median (eta at m = 0 not positive): {}",
            curve.excluded.len(),
            curve.excluded.join(", ")
        ));
    }
    if curve.truncated_cuts > 0 {
        run.warn(format!("{} Bartlett cuts never entered the band", curve.truncated_cuts));
    }
    if curve.non_monotone_assets > 0 {
        run.summary("non_monotone_assets", curve.non_monotone_assets);
    }
    run.summary("m_max", s.m_max);
    run.summary("zeta", &curve.zeta);
    Ok(())
}

pub fn select(run: &mut Run) -> Result<()> {
    let cfg = run.config().selection()?;
    let panel = load_panel(run)?;
    let stages = memory_stages(&panel, &cfg)?;
    write_memory_artifacts(run, &panel, &stages)?;
    let result = stages.finish()?;
    let report = result.report();
    if let Some((_, secs)) = result.timings.last() {
        run.record_time("theta", *secs);
    }
    run.json("selection.json", &report)?;
    run.summary("m_star", report.m_star);
    run.summary("theta_hat", report.theta_hat);
    println!("m* = {} (theta = {}, m_max = {})", report.m_star, report.theta_hat, report.m_max);
    Ok(())
}

pub fn simulate(run: &mut Run) -> Result<()> {
    let spec = market_spec(run, None, None)?;
    let sim = run.time("simulate", || simulate_market(&spec))?;
    let tickers = sim.panel.column_ids().to_vec();
    run.csv("panel.csv", |w| io::write_panel(w, &sim.panel))?;
    run.csv("ground_truth.csv", |w| io::write_ground_truth(w, &tickers, &sim.membership))?;
    run.json("spec.json", &spec)?;
    run.summary("cluster_sizes", &sim.sizes);
    run.summary("rows", sim.panel.n_obs());
    run.summary("assets", sim.panel.n_assets());
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    phi: f64,
    seed: u64,
    memory_m_star: Option<usize>,
    memory_seconds: Option<f64>,
    cumvar_m70: Option<usize>,
    cumvar_m90: Option<usize>,
    cumvar_seconds: Option<f64>,
    press_argmin: Option<usize>,
    press_m_max: Option<usize>,
    press_seconds: Option<f64>,
    memory_error: Option<String>,
}

impl SweepRow {
    fn new(phi: f64, seed: u64, r: &ComparisonReport) -> Self {
        let mem = r.memory.as_ref();
        let cv = r.cumvar.as_ref().and_then(|o| o.done());
        let pr = r.press.as_ref().and_then(|o| o.done());
        Self {
            phi,
            seed,
            memory_m_star: mem.and_then(|o| o.done()).map(|m| m.m_star),
            memory_seconds: mem.and_then(|o| o.done()).map(|m| m.seconds),
            cumvar_m70: cv.map(|c| c.m70),
            cumvar_m90: cv.map(|c| c.m90),
            cumvar_seconds: cv.map(|c| c.seconds),
            press_argmin: pr.map(|p| p.argmin),
            press_m_max: pr.map(|p| p.m_max),
            press_seconds: pr.map(|p| p.seconds),
            memory_error: match mem {
                Some(mempca_core::baselines::Outcome::Failed { error }) => Some(error.clone()),
                _ => None,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct SweepMean {
    phi: f64,
    seeds: usize,
    memory_runs: usize,
    memory_mean: Option<f64>,
    cumvar_m70_mean: Option<f64>,
    cumvar_m90_mean: Option<f64>,
    press_mean: Option<f64>,
}

fn mean_of(v: impl Iterator<Item = Option<usize>>) -> (usize, Option<f64>) {
    let xs: Vec<f64> = v.flatten().map(|x| x as f64).collect();
    let n = xs.len();
    (n, (n > 0).then(|| xs.iter().sum::<f64>() / n as f64))
}

fn write_rows<T: Serialize>(w: &mut impl std::io::Write, rows: &[T]) -> mempca_core::Result<()> {
    let mut c = csv::Writer::from_writer(w);
    for r in rows {
        c.serialize(r)?;
    }
    c.flush()?;
    Ok(())
}

pub fn compare(run: &mut Run) -> Result<()> {
    let Some(seed) = run.config().seed else {
        bail!(ConfigError("compare needs an explicit --seed".into()));
    };
    let mut cc = CompareConfig::new(run.config().selection()?);
    cc.methods = run.config().methods()?;
    cc.folds = run.config().folds()?;
    cc.press_regression = run.config().press_regression.unwrap_or_default();
    let seeds = run.config().seeds.unwrap_or(1);
    let phis = run.config().phis.clone();

    if run.config().input.is_some() {
        if seeds > 1 || phis.is_some() {
            bail!(ConfigError("seed and phi sweeps need a synthetic source, not --input".into()));
        }
        let panel = load_panel(run)?;
        return compare_single(run, &panel, &cc);
    }
    if seeds == 0 {
        bail!(ConfigError("seeds must be at least 1".into()));
    }
    if seeds == 1 && phis.is_none() {
        let panel = load_panel(run)?;
        return compare_single(run, &panel, &cc);
    }

    let phis = match phis {
        Some(p) if !p.is_empty() => p,
        Some(_) => bail!(ConfigError("phis is empty".into())),
        None => vec![market_spec(run, None, Some(seed))?.phi],
    };
    let mut rows = Vec::new();
    for &phi in &phis {
        for s in seed..seed + seeds {
            let spec = market_spec(run, Some(phi), Some(s))?;
            let sim = simulate_market(&spec)?;
            let report = timed_compare(&sim.panel, &cc);
            let row = SweepRow::new(phi, s, &report);
            info!(
                "phi {phi} seed {s}: memory {:?}, cumvar {:?}/{:?}, press {:?}",
                row.memory_m_star, row.cumvar_m70, row.cumvar_m90, row.press_argmin
            );
            if let Some(e) = &row.memory_error {
                run.warn(format!("phi {phi} seed {s}: memory-based selection failed: {e}"));
            }
            rows.push(row);
        }
    }
    let means: Vec<SweepMean> = phis
        .iter()
        .map(|&phi| {
            let at: Vec<&SweepRow> = rows.iter().filter(|r| r.phi == phi).collect();
            let (memory_runs, memory_mean) = mean_of(at.iter().map(|r| r.memory_m_star));
            SweepMean {
                phi,
                seeds: at.len(),
                memory_runs,
                memory_mean,
                cumvar_m70_mean: mean_of(at.iter().map(|r| r.cumvar_m70)).1,
                cumvar_m90_mean: mean_of(at.iter().map(|r| r.cumvar_m90)).1,
                press_mean: mean_of(at.iter().map(|r| r.press_argmin)).1,
            }
        })
        .collect();
    run.table("sweep", &rows, |w| write_rows(w, &rows))?;
    run.table("sweep_mean", &means, |w| write_rows(w, &means))?;
    let trend: Option<Vec<f64>> = means.iter().map(|m| m.memory_mean).collect();
    run.summary("memory_mean_by_phi", &trend);
    if let Some(t) = trend {
        run.summary("memory_non_increasing", t.windows(2).all(|w| w[1] <= w[0]));
    }
    let totals: BTreeMap<&str, f64> = [
        ("memory", rows.iter().filter_map(|r| r.memory_seconds).sum()),
        ("cumvar", rows.iter().filter_map(|r| r.cumvar_seconds).sum()),
        ("press", rows.iter().filter_map(|r| r.press_seconds).sum()),
    ]
    .into_iter()
    .collect();
    run.summary("seconds_total", totals);
    Ok(())
}

fn compare_single(run: &mut Run, panel: &StandardizedPanel, cc: &CompareConfig) -> Result<()> {
    let report = timed_compare(panel, cc);
    run.json("comparison.json", &report)?;
    if let Some(p) = report.press.as_ref().and_then(|o| o.done()) {
        let curve = p.curve.clone();
        run.table("press", &curve, |w| {
            io::write_press(
                w,
                &mempca_core::PressCurve {
                    argmin: p.argmin,
                    press: curve.clone(),
                    fold_layout: Vec::new(),
                },
            )
        })?;
        run.record_time("press", p.seconds);
    }
    if cc.methods.cumvar {
        if let Ok(s) = detrended_spectrum(panel) {
            let cv = cumulative_variance(&s.g_eigs);
            run.table("cumvar", &cv, |w| io::write_cumvar(w, &cv))?;
        }
    }
    if let Some(m) = report.memory.as_ref() {
        match m.done() {
            Some(m) => run.record_time("memory", m.seconds),
            None => run.warn(format!("memory-based selection failed: {}", error_of(m))),
        }
    }
    if let Some(c) = report.cumvar.as_ref().and_then(|o| o.done()) {
        run.record_time("cumvar", c.seconds);
    }
    run.summary("report", &report);
    Ok(())
}

fn error_of<T>(o: &mempca_core::baselines::Outcome<T>) -> String {
    match o {
        mempca_core::baselines::Outcome::Failed { error } => error.clone(),
        mempca_core::baselines::Outcome::Done(_) => String::new(),
    }
}

pub fn portfolio(run: &mut Run) -> Result<()> {
    let path = require_input(run, "portfolio")?.to_path_buf();
    let prices = read_prices(&path)?;
    if prices.has_gaps() {
        bail!(ConfigError("portfolio needs cleaned prices; run `clean` first".into()));
    }
    let delta = run.config().delta.unwrap_or(1.0);
    let x = run.time("returns", || log_returns(&prices))?;
    let e = correlation(&x)?;
    let eigs = run.time("spectrum", || eigendecompose(&e))?;
    let count = run.config().components.unwrap_or(5).min(eigs.dim());
    let tickers = x.column_ids().to_vec();

    let mut variances = Vec::with_capacity(count);
    for p in 0..count {
        variances.push(eigen_portfolio_variance(&x, eigs.vector(p), eigs.values()[p])?);
    }
    run.csv("eigen_portfolios.csv", |w| io::write_eigenvectors(w, &tickers, &eigs, count))?;
    run.summary("eigen_portfolio_variance", &variances);

    let r = match run.config().expected_returns.clone() {
        Some(p) => {
            let pairs = io::read_pairs(std::fs::File::open(&p)?, ["ticker", "expected_return"])?;
            let map: BTreeMap<String, String> = pairs.into_iter().collect();
            tickers
                .iter()
                .map(|t| {
                    let v = map
                        .get(t)
                        .ok_or_else(|| ConfigError(format!("no expected return for {t}")))?;
                    v.parse::<f64>()
                        .map_err(|_| ConfigError(format!("bad expected return `{v}` for {t}")).into())
                })
                .collect::<Result<Vec<f64>>>()?
        }
        None => column_means(&raw_log_returns(&prices)?),
    };
    let w = run.time("markowitz", || markowitz_weights(&e, &r, delta))?;
    run.table("weights", &w, |out| io::write_weights(out, &tickers, &w))?;
    run.summary("delta", delta);

    if let Some(gpath) = run.config().groups.clone() {
        let pairs = io::read_pairs(std::fs::File::open(&gpath)?, ["ticker", "group"])?;
        let map: BTreeMap<String, String> = pairs.into_iter().collect();
        let groups = tickers
            .iter()
            .map(|t| {
                map.get(t)
                    .cloned()
                    .ok_or_else(|| ConfigError(format!("no group for {t}")))
            })
            .collect::<std::result::Result<Vec<String>, _>>()?;
        for p in 0..count {
            match sector_projection(eigs.vector(p), &groups) {
                Ok(proj) => run.table(&format!("projection_{}", p + 1), &proj, |w| io::write_projection(w, &proj))?,
                Err(err) => run.warn(format!("component {}: {err}", p + 1)),
            }
        }
    }
    Ok(())
}
