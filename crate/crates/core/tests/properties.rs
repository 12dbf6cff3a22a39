use approx::assert_relative_eq;
use mempca_core::portfolio::markowitz_residual;
use mempca_core::{
    correlation, fit_theta, io, markowitz_weights, memory_stages, sector_projection, simulate_market, theil_sen,
    MarketSpec, PanelKind, SelectionConfig, StandardizedPanel,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_panel(t: usize, n: usize, seed: u64) -> StandardizedPanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = DMatrix::from_fn(t, n, |_, _| rng.random::<f64>() - 0.5);
    StandardizedPanel::from_raw(
        &raw,
        PanelKind::Returns,
        (0..n).map(|j| format!("A{j}")).collect(),
        (0..t).map(|i| i.to_string()).collect(),
    )
    .unwrap()
}

proptest! {
    #[test]
    fn theil_sen_shift_and_scale(
        ys in prop::collection::vec(-5.0f64..5.0, 3..12),
        shift in -10.0f64..10.0,
        scale in 0.1f64..10.0,
    ) {
        let pts: Vec<(f64, f64)> = ys.iter().enumerate().map(|(i, y)| (i as f64, *y)).collect();
        let base = theil_sen(&pts).unwrap();
        let moved: Vec<(f64, f64)> = pts.iter().map(|(x, y)| (*x, scale * y + shift)).collect();
        let s = theil_sen(&moved).unwrap();
        prop_assert!((s - scale * base).abs() < 1e-9 * (1.0 + s.abs()));
    }

    #[test]
    fn projection_sums_to_one(v in prop::collection::vec(0.01f64..1.0, 2..20)) {
        let groups: Vec<String> = (0..v.len()).map(|i| format!("g{}", i % 3)).collect();
        let p = sector_projection(&v, &groups).unwrap();
        prop_assert!((p.rho.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn markowitz_solves_its_defining_relation(seed in 0u64..1000, delta in 0.1f64..5.0) {
        let x = random_panel(60, 6, seed);
        let e = correlation(&x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        let r: Vec<f64> = (0..6).map(|_| rng.random::<f64>() + 0.1).collect();
        let w = markowitz_weights(&e, &r, delta).unwrap();
        prop_assert!(markowitz_residual(&e, &r, &w, delta).unwrap() < 1e-8);
    }
}

#[test]
fn clean_broken_power_law_is_recovered() {
    // Flat head up to m = 6, then zeta ~ m^-1.5.
    let zeta: Vec<f64> = (0..=20usize)
        .map(|m| {
            let m = m.max(1) as f64;
            if m <= 6.0 {
                1.0
            } else {
                (m / 6.0).powf(-1.5)
            }
        })
        .collect();
    let fit = fit_theta(&zeta).unwrap();
    assert_eq!(fit.theta_hat, 6);
    assert_eq!(fit.m_star, 5);
    assert_relative_eq!(fit.gamma, 1.5, epsilon = 1e-9);
}

#[test]
fn panel_round_trips_through_csv() {
    let x = random_panel(30, 4, 11);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("panel.csv");
    io::write_panel(std::fs::File::create(&path).unwrap(), &x).unwrap();
    let back = io::read_panel_file(&path, PanelKind::Returns).unwrap();
    assert_eq!(back.column_ids(), x.column_ids());
    assert_eq!(back.row_labels(), x.row_labels());
    for (a, b) in back.matrix().iter().zip(x.matrix().iter()) {
        assert_relative_eq!(*a, *b, epsilon = 1e-12);
    }
}

#[test]
fn memory_stages_shape_on_small_market() {
    let spec = MarketSpec::homogeneous(80, 800, 4, 0.5, 21);
    let sim = simulate_market(&spec).unwrap();
    let stages = memory_stages(&sim.panel, &SelectionConfig::default()).unwrap();
    assert_eq!(stages.curve.zeta.len(), stages.m_max + 1);
    assert_eq!(stages.factors.n_factors(), stages.m_max);
    assert_eq!(stages.loadings.n_assets(), 80 - stages.spectrum.market.detrended.dropped.len());
    assert!(stages.curve.zeta[0] > 0.0);
    // Removing the components should not add memory on the whole.
    assert!(stages.curve.zeta[stages.m_max] < stages.curve.zeta[0]);
}
