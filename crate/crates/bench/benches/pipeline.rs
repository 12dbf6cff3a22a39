use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mempca_core::pipeline::detrended_spectrum;
use mempca_core::{
    acf, component_series, correlation, eigendecompose, fgn, fit_all_loadings, fit_mp, memory_curve, memory_stages,
    press_crossval, simulate_market, LassoConfig, MarketSpec, MemoryConfig, MpFitConfig, PressRegression,
    SelectionConfig,
};

fn building_blocks(c: &mut Criterion) {
    let mut g = c.benchmark_group("blocks");
    for t in [2000, 8000] {
        g.bench_with_input(BenchmarkId::new("fgn", t), &t, |b, &t| b.iter(|| fgn(0.8, t, 1).unwrap()));
    }
    let x = fgn(0.8, 2000, 2).unwrap();
    g.bench_function("acf_2000", |b| b.iter(|| acf(&x, None).unwrap()));

    let sim = simulate_market(&MarketSpec::homogeneous(300, 2000, 10, 1.0, 3)).unwrap();
    g.bench_function("correlation_300x2000", |b| b.iter(|| correlation(&sim.panel).unwrap()));
    let corr = correlation(&sim.panel).unwrap();
    g.bench_function("eigen_300", |b| b.iter(|| eigendecompose(&corr).unwrap()));

    let spectrum = detrended_spectrum(&sim.panel).unwrap();
    g.bench_function("fit_mp", |b| b.iter(|| fit_mp(&spectrum.g_eigs, &MpFitConfig::default()).unwrap()));

    let residuals = &spectrum.market.detrended.residuals;
    let m_max = fit_mp(&spectrum.g_eigs, &MpFitConfig::default()).unwrap().m_max;
    let factors = component_series(residuals, &spectrum.g_eigs, m_max).unwrap();
    g.sample_size(10);
    g.bench_function("lasso_all_assets", |b| {
        b.iter(|| fit_all_loadings(residuals, &factors, &LassoConfig::default()).unwrap())
    });
    let loadings = fit_all_loadings(residuals, &factors, &LassoConfig::default()).unwrap();
    g.bench_function("memory_curve", |b| {
        b.iter(|| memory_curve(residuals, &loadings, &factors, m_max, &MemoryConfig::default()).unwrap())
    });
    g.finish();
}

/// Desk-scale panel: everything up to the memory curve against 10-fold PRESS.
fn desk(c: &mut Criterion) {
    let sim = simulate_market(&MarketSpec::homogeneous(300, 2000, 10, 1.0, 5)).unwrap();
    let cfg = SelectionConfig::default();
    let mut g = c.benchmark_group("desk");
    g.sample_size(10).measurement_time(Duration::from_secs(60));
    g.bench_function("memory_stages", |b| b.iter(|| memory_stages(&sim.panel, &cfg).unwrap()));
    g.bench_function("press_10_fold", |b| {
        b.iter(|| {
            let s = detrended_spectrum(&sim.panel).unwrap();
            let m_max = fit_mp(&s.g_eigs, &cfg.mp).unwrap().m_max;
            press_crossval(&s.market.detrended.residuals, m_max, 10, PressRegression::Ols).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, building_blocks, desk);
criterion_main!(benches);
