//! Market-mode removal: one-factor regression of every column on the
//! top-eigenvector portfolio.

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::panel::{PanelKind, StandardizedPanel};
use crate::spectra::{self, EigenSystem};
use crate::stats;

/// Residual variance below this fraction of the column's own variance counts
/// as an exact linear dependence on the market mode.
pub const DEGENERATE_RESIDUAL_RATIO: f64 = 1e-20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketModel {
    pub i0: Vec<f64>,
    pub beta0: Vec<f64>,
    pub alpha0: Vec<f64>,
}

/// `I0 = X w1`.
pub fn market_mode(x: &StandardizedPanel, w1: &[f64]) -> Result<Vec<f64>> {
    if w1.len() != x.n_assets() {
        return Err(invalid(format!(
            "weight vector has length {} for {} assets",
            w1.len(),
            x.n_assets()
        )));
    }
    let t = x.n_obs();
    let mut i0 = vec![0.0; t];
    for (j, w) in w1.iter().enumerate() {
        for (acc, v) in i0.iter_mut().zip(x.column(j)) {
            *acc += w * v;
        }
    }
    Ok(i0)
}

/// Result of [`detrend_market`].
#[derive(Debug, Clone)]
pub struct Detrended {
    pub model: MarketModel,
    /// Standardized residual columns; degenerate ones are left out.
    pub residuals: StandardizedPanel,
    /// Tickers whose residual vanished (asset proportional to the market mode).
    pub dropped: Vec<String>,
}

/// Per-column OLS with intercept `x = alpha + beta i0 + c`; returns
/// `(beta, alpha, raw residual)`.
fn regress(x: &[f64], i0: &[f64], mi0: f64, vi0: f64) -> (f64, f64, Vec<f64>) {
    let beta = stats::covariance(x, i0) / vi0;
    let alpha = stats::mean(x) - beta * mi0;
    let resid = x
        .iter()
        .zip(i0)
        .map(|(v, m)| v - alpha - beta * m)
        .collect();
    (beta, alpha, resid)
}

fn check_regressor(x: &StandardizedPanel, i0: &[f64]) -> Result<(f64, f64)> {
    if i0.len() != x.n_obs() {
        return Err(invalid(format!(
            "market series has length {} for {} observations",
            i0.len(),
            x.n_obs()
        )));
    }
    let vi0 = stats::variance(i0);
    let scale = i0.iter().map(|v| v * v).sum::<f64>() / i0.len() as f64;
    if !(vi0 > 0.0) || vi0 <= 1e-26 * scale {
        return Err(Error::DegenerateRegressor("market series has zero variance".into()));
    }
    Ok((stats::mean(i0), vi0))
}

/// Raw (unstandardized) residuals `x - alpha - beta i0`, one column per asset.
pub fn raw_residuals(x: &StandardizedPanel, i0: &[f64]) -> Result<DMatrix<f64>> {
    let (mi0, vi0) = check_regressor(x, i0)?;
    let t = x.n_obs();
    let mut out = DMatrix::zeros(t, x.n_assets());
    for j in 0..x.n_assets() {
        let (_, _, r) = regress(x.column(j), i0, mi0, vi0);
        stats::col_mut(&mut out, j).copy_from_slice(&r);
    }
    Ok(out)
}

pub fn detrend_market(x: &StandardizedPanel, i0: &[f64]) -> Result<Detrended> {
    let (mi0, vi0) = check_regressor(x, i0)?;
    let fits: Vec<(f64, f64, Option<Vec<f64>>)> = (0..x.n_assets())
        .into_par_iter()
        .map(|j| {
            let col = x.column(j);
            let (b, a, r) = regress(col, i0, mi0, vi0);
            let keep = stats::variance(&r) > DEGENERATE_RESIDUAL_RATIO * stats::variance(col);
            (b, a, if keep { stats::standardize(&r) } else { None })
        })
        .collect();

    let mut dropped = Vec::new();
    let mut kept_ids = Vec::new();
    let mut data = Vec::new();
    let mut beta0 = Vec::with_capacity(fits.len());
    let mut alpha0 = Vec::with_capacity(fits.len());
    for ((b, a, r), id) in fits.into_iter().zip(x.column_ids()) {
        beta0.push(b);
        alpha0.push(a);
        match r {
            Some(c) => {
                kept_ids.push(id.clone());
                data.extend(c);
            }
            None => {
                warn!("dropping {id}: residual after market regression is degenerate");
                dropped.push(id.clone());
            }
        }
    }
    if kept_ids.is_empty() {
        return Err(Error::DegenerateColumns { tickers: dropped });
    }
    let matrix = DMatrix::from_vec(x.n_obs(), kept_ids.len(), data);
    let residuals = StandardizedPanel::new(
        matrix,
        PanelKind::Residuals,
        kept_ids,
        x.row_labels().to_vec(),
    )?;
    Ok(Detrended {
        model: MarketModel {
            i0: i0.to_vec(),
            beta0,
            alpha0,
        },
        residuals,
        dropped,
    })
}

/// Full market-removal step: eigendecompose the correlation matrix of `x`,
/// build `I0` from the top eigenvector, and regress it out.
#[derive(Debug, Clone)]
pub struct MarketRemoval {
    pub detrended: Detrended,
    /// Eigensystem of the correlation matrix before detrending.
    pub market_eigs: EigenSystem,
    /// Share of strictly positive entries in the top eigenvector.
    pub market_positive_fraction: f64,
}

pub fn remove_market(x: &StandardizedPanel) -> Result<MarketRemoval> {
    let e = spectra::correlation(x)?;
    let eigs = spectra::eigendecompose(&e)?;
    let w1 = eigs.vector(0).to_vec();
    let frac = spectra::positive_fraction(&w1);
    if frac < 1.0 {
        warn!(
            "market eigenvector has {:.1}% non-positive weights",
            100.0 * (1.0 - frac)
        );
    }
    let i0 = market_mode(x, &w1)?;
    let detrended = detrend_market(x, &i0)?;
    Ok(MarketRemoval {
        detrended,
        market_eigs: eigs,
        market_positive_fraction: frac,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn panel(cols: Vec<Vec<f64>>) -> StandardizedPanel {
        let t = cols[0].len();
        let n = cols.len();
        StandardizedPanel::from_raw(
            &DMatrix::from_vec(t, n, cols.concat()),
            PanelKind::LogVolatility,
            (0..n).map(|i| format!("A{i}")).collect(),
            (0..t).map(|i| i.to_string()).collect(),
        )
        .unwrap()
    }

    fn noise(t: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..t).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn one_hot_weights_pick_a_column() {
        let x = panel(vec![noise(20, 1), noise(20, 2), noise(20, 3)]);
        let i0 = market_mode(&x, &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(i0, x.column(1));
    }

    #[test]
    fn equal_weights_on_identical_columns() {
        let c = noise(30, 4);
        let x = panel(vec![c.clone(), c.clone(), c.clone(), c]);
        let w = vec![0.5; 4];
        let i0 = market_mode(&x, &w).unwrap();
        for (a, b) in i0.iter().zip(x.column(0)) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_argument_error() {
        let x = panel(vec![noise(20, 1), noise(20, 2)]);
        assert!(matches!(market_mode(&x, &[1.0]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn exact_linear_column_is_dropped() {
        let i0 = noise(50, 7);
        let lin: Vec<f64> = i0.iter().map(|v| 2.0 * v + 3.0).collect();
        let x = panel(vec![lin, noise(50, 8), noise(50, 9)]);
        // regress on the standardized copy so the relation stays exact
        let i0s = x.column(0).to_vec();
        let d = detrend_market(&x, &i0s).unwrap();
        assert_eq!(d.dropped, vec!["A0".to_string()]);
        assert!((d.model.beta0[0] - 1.0).abs() < 1e-12);
        assert_eq!(d.residuals.n_assets(), 2);

        let raw = DMatrix::from_vec(50, 1, i0.iter().map(|v| 2.0 * v + 3.0).collect());
        let xs = StandardizedPanel::new(
            raw.clone(),
            PanelKind::Residuals,
            vec!["L".into()],
            vec![String::new(); 50],
        );
        assert!(xs.is_err());
        let (b, a, r) = regress(stats::col(&raw, 0), &i0, stats::mean(&i0), stats::variance(&i0));
        assert!((b - 2.0).abs() < 1e-12 && (a - 3.0).abs() < 1e-12);
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn orthogonal_column_is_unchanged() {
        let t = 40;
        let a: Vec<f64> = (0..t).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let b: Vec<f64> = (0..t).map(|i| if (i / 2) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let x = panel(vec![a.clone(), b.clone()]);
        let d = detrend_market(&x, x.column(0)).unwrap();
        assert!(d.model.beta0[1].abs() < 1e-14);
        for (r, v) in d.residuals.column(0).iter().zip(x.column(1)) {
            assert!((r - v).abs() < 1e-12);
        }
    }

    #[test]
    fn slopes_match_closed_form_and_residuals_are_orthogonal() {
        let cols: Vec<Vec<f64>> = (0..5).map(|s| noise(200, 100 + s)).collect();
        let x = panel(cols);
        let i0 = noise(200, 99);
        let d = detrend_market(&x, &i0).unwrap();
        let raw = raw_residuals(&x, &i0).unwrap();
        for j in 0..5 {
            let expect = stats::covariance(x.column(j), &i0) / stats::variance(&i0);
            assert!((d.model.beta0[j] - expect).abs() < 1e-10);
            assert!(stats::covariance(stats::col(&raw, j), &i0).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_variance_market_is_rejected() {
        let x = panel(vec![noise(20, 1), noise(20, 2)]);
        assert!(matches!(
            detrend_market(&x, &[1.0; 20]),
            Err(Error::DegenerateRegressor(_))
        ));
    }
}
