//! Eigen-portfolios, Markowitz weights and sector projections of eigenvectors.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::panel::StandardizedPanel;
use crate::spectra::{self, CorrelationMatrix};
use crate::stats;

pub const EIGEN_PORTFOLIO_TOL: f64 = 1e-8;

/// `(1/T) |X w|^2`, checked against the eigenvalue it should equal.
pub fn eigen_portfolio_variance(x: &StandardizedPanel, w: &[f64], lambda: f64) -> Result<f64> {
    let cov = eigen_portfolio_covariance(x, &[w.to_vec()])?;
    let v = cov[(0, 0)];
    if (v - lambda).abs() > EIGEN_PORTFOLIO_TOL * lambda.abs().max(1.0) {
        return Err(Error::Consistency(format!(
            "portfolio variance {v} differs from eigenvalue {lambda}"
        )));
    }
    Ok(v)
}

/// `(1/T) (X w_a)^T (X w_b)` for every pair of the given weight vectors.
pub fn eigen_portfolio_covariance(x: &StandardizedPanel, ws: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = x.n_assets();
    if let Some(w) = ws.iter().find(|w| w.len() != n) {
        return Err(invalid(format!("weight vector of length {} for {n} assets", w.len())));
    }
    let w = DMatrix::from_fn(n, ws.len(), |i, j| ws[j][i]);
    let r = x.matrix() * w;
    Ok(spectra::gram(&r))
}

/// `w = delta E^-1 R / (R^T E^-1 R)`, solved through a Cholesky factor.
pub fn markowitz_weights(e: &CorrelationMatrix, r: &[f64], delta: f64) -> Result<Vec<f64>> {
    let n = e.dim();
    if r.len() != n {
        return Err(invalid(format!("{} expected returns for {n} assets", r.len())));
    }
    if r.iter().all(|v| *v == 0.0) {
        return Err(invalid("expected-return vector is zero"));
    }
    let min_eig = e.entries().clone().symmetric_eigenvalues().min();
    if !(min_eig > 1e-10) {
        return Err(Error::Singular(format!(
            "smallest eigenvalue {min_eig:e}; clean the spectrum before inverting"
        )));
    }
    let chol = e
        .entries()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("Cholesky factorization failed".into()))?;
    let rv = DVector::from_column_slice(r);
    let y = chol.solve(&rv);
    let denom = rv.dot(&y);
    if denom == 0.0 {
        return Err(Error::Singular("R^T E^-1 R vanishes".into()));
    }
    Ok(y.iter().map(|v| delta * v / denom).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorProjection {
    /// Group labels in sorted order.
    pub groups: Vec<String>,
    /// Normalized projection, summing to 1.
    pub rho: Vec<f64>,
    /// Unnormalized group means `P v`.
    pub raw: Vec<f64>,
}

/// Group means of `v` normalized to sum to one. Normalization is refused
/// when the group means sum to exactly zero.
pub fn sector_projection(v: &[f64], groups: &[String]) -> Result<SectorProjection> {
    if v.len() != groups.len() {
        return Err(invalid(format!("{} labels for {} entries", groups.len(), v.len())));
    }
    if v.is_empty() {
        return Err(invalid("empty vector"));
    }
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (x, g) in v.iter().zip(groups) {
        let e = acc.entry(g.as_str()).or_insert((0.0, 0));
        e.0 += x;
        e.1 += 1;
    }
    let labels: Vec<String> = acc.keys().map(|s| s.to_string()).collect();
    let raw: Vec<f64> = acc.values().map(|(s, n)| s / *n as f64).collect();
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        return Err(Error::UndefinedNormalization(format!(
            "group means sum to zero (raw = {raw:?})"
        )));
    }
    Ok(SectorProjection {
        groups: labels,
        rho: raw.iter().map(|x| x / total).collect(),
        raw,
    })
}

/// Residual of the defining relation `E (w / delta) (R^T E^-1 R) = R`.
pub fn markowitz_residual(e: &CorrelationMatrix, r: &[f64], w: &[f64], delta: f64) -> Result<f64> {
    let chol = e
        .entries()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("Cholesky factorization failed".into()))?;
    let rv = DVector::from_column_slice(r);
    let denom = rv.dot(&chol.solve(&rv));
    let wv = DVector::from_column_slice(w) * (denom / delta);
    Ok((e.entries() * wv - rv).amax())
}

/// Mean of each column; handy for building expected-return vectors.
pub fn column_means(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.ncols()).map(|j| stats::mean(stats::col(m, j))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::PanelKind;
    use crate::spectra::{correlation, eigendecompose};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_panel(t: usize, n: usize, seed: u64) -> StandardizedPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = DMatrix::from_fn(t, n, |_, _| StandardNormal.sample(&mut rng));
        StandardizedPanel::from_raw(
            &raw,
            PanelKind::Returns,
            (0..n).map(|i| i.to_string()).collect(),
            (0..t).map(|i| i.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn eigen_portfolios_have_eigenvalue_variance() {
        let x = random_panel(100, 8, 1);
        let e = eigendecompose(&correlation(&x).unwrap()).unwrap();
        for p in 0..8 {
            let v = eigen_portfolio_variance(&x, e.vector(p), e.values()[p]).unwrap();
            assert!((v - e.values()[p]).abs() < 1e-8);
        }
        let ws: Vec<Vec<f64>> = (0..4).map(|p| e.vector(p).to_vec()).collect();
        let cov = eigen_portfolio_covariance(&x, &ws).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let expect = if a == b { e.values()[a] } else { 0.0 };
                assert!((cov[(a, b)] - expect).abs() < 1e-8);
            }
        }
        assert!(matches!(
            eigen_portfolio_variance(&x, e.vector(0), e.values()[0] + 0.1),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn identity_markowitz() {
        let e = CorrelationMatrix::new(DMatrix::identity(4, 4), 10).unwrap();
        let w = markowitz_weights(&e, &[1.0; 4], 1.0).unwrap();
        assert!(w.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn markowitz_scaling_and_linearity() {
        let x = random_panel(60, 5, 2);
        let e = correlation(&x).unwrap();
        let r = [0.1, -0.2, 0.05, 0.3, 0.0];
        let w = markowitz_weights(&e, &r, 1.0).unwrap();
        let scaled: Vec<f64> = r.iter().map(|v| 3.0 * v).collect();
        let w2 = markowitz_weights(&e, &scaled, 1.0).unwrap();
        let w3 = markowitz_weights(&e, &r, 2.5).unwrap();
        // the return constraint R'w = delta makes w scale as 1/c when R scales by c
        for i in 0..5 {
            assert!((w[i] - 3.0 * w2[i]).abs() < 1e-12);
            assert!((w3[i] - 2.5 * w[i]).abs() < 1e-12);
        }
        assert!(markowitz_residual(&e, &r, &w3, 2.5).unwrap() < 1e-8);
    }

    #[test]
    fn singular_correlation_is_refused() {
        let e = CorrelationMatrix::new(DMatrix::from_element(3, 3, 1.0), 10).unwrap();
        assert!(matches!(markowitz_weights(&e, &[1.0, 0.0, 0.0], 1.0), Err(Error::Singular(_))));
    }

    #[test]
    fn projection_examples() {
        let g: Vec<String> = ["a", "a", "b", "b"].iter().map(|s| s.to_string()).collect();
        let p = sector_projection(&[0.5, 0.5, 0.0, 0.0], &g).unwrap();
        assert_eq!(p.rho, vec![1.0, 0.0]);
        let p = sector_projection(&[0.4, 0.2, 0.1, 0.1], &g).unwrap();
        assert!((p.raw[0] - 0.3).abs() < 1e-15 && (p.raw[1] - 0.1).abs() < 1e-15);
        assert!((p.rho[0] - 0.75).abs() < 1e-12 && (p.rho[1] - 0.25).abs() < 1e-12);
        assert!(matches!(
            sector_projection(&[1.0, 1.0, -1.0, -1.0], &g),
            Err(Error::UndefinedNormalization(_))
        ));
    }

    #[test]
    fn projection_ignores_order_within_groups() {
        let g: Vec<String> = ["x", "y", "x", "y", "x"].iter().map(|s| s.to_string()).collect();
        let v = [0.1, 0.4, 0.3, -0.2, 0.5];
        let a = sector_projection(&v, &g).unwrap();
        let g2: Vec<String> = ["x", "x", "x", "y", "y"].iter().map(|s| s.to_string()).collect();
        let v2 = [0.5, 0.1, 0.3, -0.2, 0.4];
        let b = sector_projection(&v2, &g2).unwrap();
        for (p, q) in a.rho.iter().zip(&b.rho) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
