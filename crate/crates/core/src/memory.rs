//! Autocorrelation memory of residual series and the breakpoint fit that
//! turns the memory curve into a component count.

use log::{debug, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::factors::{ComponentSeries, LoadingMatrix};
use crate::panel::StandardizedPanel;
use crate::stats;

/// Sample autocorrelation at lags `1..=l_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfCurve {
    /// `kappa[L - 1]` is the autocorrelation at lag `L`.
    pub kappa: Vec<f64>,
    pub series_length: usize,
    pub l_max: usize,
}

impl AcfCurve {
    pub fn at(&self, lag: usize) -> f64 {
        self.kappa[lag - 1]
    }
}

/// Centered copy of `x` and its population variance.
fn centered(x: &[f64]) -> Result<(Vec<f64>, f64)> {
    if x.len() < 8 {
        return Err(invalid(format!("series of length {}; need at least 8", x.len())));
    }
    let m = stats::mean(x);
    let c: Vec<f64> = x.iter().map(|v| v - m).collect();
    let var = stats::dot(&c, &c) / x.len() as f64;
    let scale = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    if !(var > 0.0) || var <= 1e-26 * scale {
        return Err(Error::DegenerateSeries("zero variance".into()));
    }
    Ok((c, var))
}

#[inline]
fn kappa_at(c: &[f64], var: f64, lag: usize) -> f64 {
    let t = c.len();
    let s = stats::dot(&c[lag..], &c[..t - lag]);
    s / (t - lag) as f64 / var
}

/// `kappa(L) = (1/(T-L)) sum_t (x(t+L) - xbar)(x(t) - xbar) / var`, with the
/// population variance. `l_max` defaults to `T - 1`.
pub fn acf(x: &[f64], l_max: Option<usize>) -> Result<AcfCurve> {
    let (c, var) = centered(x)?;
    let t = x.len();
    let l_max = l_max.unwrap_or(t - 1);
    if l_max < 1 || l_max >= t {
        return Err(invalid(format!("l_max = {l_max} outside 1..{t}")));
    }
    Ok(AcfCurve {
        kappa: (1..=l_max).map(|l| kappa_at(&c, var, l)).collect(),
        series_length: t,
        l_max,
    })
}

/// Half-width of the 5% white-noise band.
pub fn bartlett_band(t: usize) -> f64 {
    1.96 / (t as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BartlettCut {
    pub l_cut: usize,
    /// True when no lag entered the band and `l_cut` is `l_max`.
    pub truncated: bool,
}

/// First lag whose autocorrelation lies inside the band.
pub fn bartlett_cut(curve: &AcfCurve) -> BartlettCut {
    let band = bartlett_band(curve.series_length);
    match curve.kappa.iter().position(|k| k.abs() < band) {
        Some(i) => BartlettCut {
            l_cut: i + 1,
            truncated: false,
        },
        None => BartlettCut {
            l_cut: curve.l_max,
            truncated: true,
        },
    }
}

/// `eta = sum_{L=1}^{L_cut} kappa(L)`.
pub fn integrated_proxy(curve: &AcfCurve, l_cut: usize) -> Result<f64> {
    if l_cut < 1 || l_cut > curve.l_max {
        return Err(invalid(format!("L_cut = {l_cut} outside 1..={}", curve.l_max)));
    }
    Ok(curve.kappa[..l_cut].iter().sum())
}

/// Median of all pairwise slopes between points with distinct `x`. With an
/// even number of slopes the lower of the two middle values is taken, so the
/// estimate is always one of the observed slopes.
pub fn theil_sen(points: &[(f64, f64)]) -> Result<f64> {
    let mut slopes = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let (xi, yi) = points[i];
            let (xj, yj) = points[j];
            if xj != xi {
                slopes.push((yj - yi) / (xj - xi));
            }
        }
    }
    if slopes.is_empty() {
        return Err(invalid("need at least two points with distinct x"));
    }
    slopes.sort_by(|a, b| a.total_cmp(b));
    Ok(slopes[(slopes.len() - 1) / 2])
}

/// Decay exponent of `kappa(L) ~ L^-beta` over lags `1..=l_cut`, from a
/// Theil-Sen fit in log-log space. Non-positive autocorrelations are skipped.
pub fn powerlaw_exponent(curve: &AcfCurve, l_cut: usize) -> Result<f64> {
    if l_cut > curve.l_max {
        return Err(invalid(format!("L_cut = {l_cut} beyond l_max = {}", curve.l_max)));
    }
    let pts: Vec<(f64, f64)> = (1..=l_cut)
        .filter(|&l| curve.at(l) > 0.0)
        .map(|l| ((l as f64).ln(), curve.at(l).ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} positive lags up to L_cut = {l_cut}; need 3",
            pts.len()
        )));
    }
    Ok(-theil_sen(&pts)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryProxy {
    pub l_cut: usize,
    pub truncated: bool,
    pub eta: f64,
    pub beta_vol: Option<f64>,
}

/// Cut, integrated proxy and decay exponent of one series.
pub fn memory_proxy(x: &[f64], l_max: Option<usize>) -> Result<MemoryProxy> {
    let curve = acf(x, l_max)?;
    let cut = bartlett_cut(&curve);
    let eta = integrated_proxy(&curve, cut.l_cut)?;
    let beta_vol = if cut.l_cut >= 3 {
        powerlaw_exponent(&curve, cut.l_cut).ok()
    } else {
        None
    };
    Ok(MemoryProxy {
        l_cut: cut.l_cut,
        truncated: cut.truncated,
        eta,
        beta_vol,
    })
}

/// Same cut and proxy as [`memory_proxy`] but stops computing lags once the
/// band is entered. Returns `(eta, cut)`.
pub fn eta_lazy(x: &[f64], l_max: Option<usize>) -> Result<(f64, BartlettCut)> {
    let (c, var) = centered(x)?;
    let t = x.len();
    let l_max = l_max.unwrap_or(t - 1).min(t - 1);
    if l_max < 1 {
        return Err(invalid("l_max must be at least 1"));
    }
    let band = bartlett_band(t);
    let mut eta = 0.0;
    for l in 1..=l_max {
        let k = kappa_at(&c, var, l);
        eta += k;
        if k.abs() < band {
            return Ok((eta, BartlettCut { l_cut: l, truncated: false }));
        }
    }
    Ok((eta, BartlettCut { l_cut: l_max, truncated: true }))
}

fn check_dims(
    residual_panel: &StandardizedPanel,
    loadings: &LoadingMatrix,
    factors: &ComponentSeries,
) -> Result<()> {
    if loadings.n_assets() != residual_panel.n_assets() {
        return Err(invalid(format!(
            "{} loading rows for {} assets",
            loadings.n_assets(),
            residual_panel.n_assets()
        )));
    }
    if loadings.n_factors() != factors.n_factors() || factors.n_obs() != residual_panel.n_obs() {
        return Err(invalid("loadings, factors and residual panel disagree in shape"));
    }
    Ok(())
}

/// `d_i(t) = c_i(t) - sum_{p<=m} beta_ip I_p(t)`, not re-standardized.
pub fn residues(
    residual_panel: &StandardizedPanel,
    loadings: &LoadingMatrix,
    factors: &ComponentSeries,
    m: usize,
) -> Result<DMatrix<f64>> {
    check_dims(residual_panel, loadings, factors)?;
    if m < 1 || m > factors.n_factors() {
        return Err(invalid(format!("m = {m} outside 1..={}", factors.n_factors())));
    }
    let mut d = residual_panel.matrix().clone();
    for i in 0..d.ncols() {
        let col = stats::col_mut(&mut d, i);
        for p in 0..m {
            let b = loadings.betas[(i, p)];
            if b != 0.0 {
                for (v, f) in col.iter_mut().zip(factors.factor(p)) {
                    *v -= b * f;
                }
            }
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct MemoryConfig {
    /// Largest lag examined for the Bartlett cut; `None` means `T - 1`.
    pub l_max: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryCurve {
    /// `zeta[m]` for `m = 0..=m_max`.
    pub zeta: Vec<f64>,
    /// N x (m_max + 1) integrated proxies.
    pub eta: DMatrix<f64>,
    pub tickers: Vec<String>,
    /// Assets left out of the median because `eta_i^(0)` was not positive.
    pub excluded: Vec<String>,
    /// Number of (asset, m) pairs whose Bartlett cut never entered the band.
    pub truncated_cuts: usize,
    /// Number of assets whose proxy rose somewhere along `m`.
    pub non_monotone_assets: usize,
}

impl MemoryCurve {
    pub fn m_max(&self) -> usize {
        self.zeta.len() - 1
    }
}

pub fn memory_curve(
    residual_panel: &StandardizedPanel,
    loadings: &LoadingMatrix,
    factors: &ComponentSeries,
    m_max: usize,
    cfg: &MemoryConfig,
) -> Result<MemoryCurve> {
    check_dims(residual_panel, loadings, factors)?;
    if m_max > factors.n_factors() {
        return Err(invalid(format!(
            "m_max = {m_max} exceeds the {} available factors",
            factors.n_factors()
        )));
    }
    let n = residual_panel.n_assets();
    if n < 3 {
        return Err(invalid(format!("{n} assets; need at least 3 for a median")));
    }

    let per_asset: Vec<Result<(Vec<f64>, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut d = residual_panel.column(i).to_vec();
            let mut etas = Vec::with_capacity(m_max + 1);
            let mut truncated = 0;
            for m in 0..=m_max {
                if m > 0 {
                    let b = loadings.betas[(i, m - 1)];
                    if b != 0.0 {
                        for (v, f) in d.iter_mut().zip(factors.factor(m - 1)) {
                            *v -= b * f;
                        }
                    }
                }
                let (eta, cut) = eta_lazy(&d, cfg.l_max)?;
                truncated += usize::from(cut.truncated);
                etas.push(eta);
            }
            Ok((etas, truncated))
        })
        .collect();

    let tickers = residual_panel.column_ids().to_vec();
    let mut eta = DMatrix::zeros(n, m_max + 1);
    let mut truncated_cuts = 0;
    for (i, r) in per_asset.into_iter().enumerate() {
        let (etas, tr) = r.map_err(|e| e.for_asset(tickers[i].clone()))?;
        truncated_cuts += tr;
        for (m, v) in etas.into_iter().enumerate() {
            eta[(i, m)] = v;
        }
    }
    if truncated_cuts > 0 {
        warn!("{truncated_cuts} Bartlett cuts reached l_max without entering the band");
    }

    let included: Vec<usize> = (0..n).filter(|&i| eta[(i, 0)] > 0.0).collect();
    let excluded: Vec<String> = (0..n)
        .filter(|&i| !(eta[(i, 0)] > 0.0))
        .map(|i| tickers[i].clone())
        .collect();
    for t in &excluded {
        warn!("{t} excluded from the memory median: non-positive proxy before removal");
    }
    if 2 * excluded.len() > n {
        return Err(Error::DataQuality(format!(
            "{} of {n} assets have no positive residual memory",
            excluded.len()
        )));
    }

    let mut non_monotone = 0;
    for &i in &included {
        if (1..=m_max).any(|m| eta[(i, m)] > eta[(i, m - 1)]) {
            non_monotone += 1;
        }
    }
    if non_monotone > 0 {
        debug!("{non_monotone} assets have a proxy that increases somewhere along m");
    }

    let mut zeta = Vec::with_capacity(m_max + 1);
    zeta.push(1.0);
    let mut ratios = vec![0.0; included.len()];
    for m in 1..=m_max {
        for (r, &i) in ratios.iter_mut().zip(&included) {
            *r = eta[(i, m)] / eta[(i, 0)];
        }
        zeta.push(stats::median_in_place(&mut ratios).expect("at least one asset included"));
    }
    Ok(MemoryCurve {
        zeta,
        eta,
        tickers,
        excluded,
        truncated_cuts,
        non_monotone_assets: non_monotone,
    })
}

/// `1 - (1 - r2)(n - 1)/(n - 2)`.
pub fn adjusted_r2(r2: f64, n: usize) -> Result<f64> {
    if n < 3 {
        return Err(invalid(format!("n = {n}; need at least 3 points")));
    }
    if r2 > 1.0 {
        return Err(invalid(format!("R^2 = {r2} exceeds 1")));
    }
    Ok(1.0 - (1.0 - r2) * (n - 1) as f64 / (n - 2) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaFit {
    pub theta_hat: usize,
    /// Decay exponent of the tail fit at `theta_hat`.
    pub gamma: f64,
    /// `(theta candidate, adjusted R^2)` for every candidate.
    pub r2_adj_by_candidate: Vec<(usize, f64)>,
    pub m_star: usize,
    pub m_max: usize,
}

/// Candidates within this distance of the best adjusted R^2 count as tied.
pub const THETA_TIE_TOL: f64 = 1e-12;

/// Fits `ln zeta(m)` against `ln m` on `m = theta..=m_max` for every
/// `theta = 2..=m_max-2` and picks the best adjusted R^2 (smallest theta on
/// ties). `zeta[m]` is indexed from `m = 0`.
pub fn fit_theta(zeta: &[f64]) -> Result<ThetaFit> {
    if zeta.len() < 5 {
        return Err(invalid(format!(
            "m_max = {}; the breakpoint fit needs m_max >= 4",
            zeta.len().saturating_sub(1)
        )));
    }
    let m_max = zeta.len() - 1;
    if let Some(m) = (1..=m_max).find(|&m| !(zeta[m] > 0.0)) {
        return Err(Error::LogDomain { m, value: zeta[m] });
    }
    let lx: Vec<f64> = (0..=m_max).map(|m| (m.max(1) as f64).ln()).collect();
    let ly: Vec<f64> = zeta.iter().map(|z| z.ln()).collect();

    let mut table = Vec::with_capacity(m_max - 3);
    let mut slopes = Vec::with_capacity(m_max - 3);
    for theta in 2..=m_max - 2 {
        let (_, slope, r2) = stats::ols_line(&lx[theta..], &ly[theta..]);
        table.push((theta, adjusted_r2(r2, m_max - theta + 1)?));
        slopes.push(slope);
    }
    let best = table.iter().map(|(_, r)| *r).fold(f64::NEG_INFINITY, f64::max);
    let k = table
        .iter()
        .position(|(_, r)| *r >= best - THETA_TIE_TOL)
        .expect("non-empty candidate table");
    let theta_hat = table[k].0;
    Ok(ThetaFit {
        theta_hat,
        gamma: -slopes[k],
        r2_adj_by_candidate: table,
        m_star: theta_hat - 1,
        m_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(t: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..t).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    pub(crate) fn brute_acf(x: &[f64], lag: usize) -> f64 {
        let t = x.len();
        let mut m = 0.0;
        for v in x {
            m += v;
        }
        m /= t as f64;
        let mut var = 0.0;
        for v in x {
            var += (v - m) * (v - m);
        }
        var /= t as f64;
        let mut s = 0.0;
        for i in 0..t - lag {
            s += (x[i + lag] - m) * (x[i] - m);
        }
        s / (t - lag) as f64 / var
    }

    #[test]
    fn acf_matches_double_loop() {
        let x = noise(300, 1);
        let c = acf(&x, None).unwrap();
        for l in 1..300 {
            assert!((c.at(l) - brute_acf(&x, l)).abs() < 1e-12);
        }
    }

    #[test]
    fn alternating_series() {
        let x: Vec<f64> = (0..1000).map(|t| if t % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let c = acf(&x, Some(4)).unwrap();
        assert!((c.at(1) + 1.0).abs() < 1e-2);
    }

    #[test]
    fn acf_rejects_constant_and_short() {
        assert!(matches!(acf(&[1.0; 20], None), Err(Error::DegenerateSeries(_))));
        assert!(acf(&[1.0, 2.0, 3.0], None).is_err());
    }

    #[test]
    fn cut_and_proxy_examples() {
        let c = AcfCurve {
            kappa: vec![0.9; 10],
            series_length: 100,
            l_max: 10,
        };
        assert_eq!(bartlett_cut(&c), BartlettCut { l_cut: 10, truncated: true });

        let ones = AcfCurve {
            kappa: vec![1.0; 5],
            series_length: 100,
            l_max: 5,
        };
        assert_eq!(integrated_proxy(&ones, 5).unwrap(), 5.0);

        let harm = AcfCurve {
            kappa: (1..=10).map(|l| 1.0 / l as f64).collect(),
            series_length: 100,
            l_max: 10,
        };
        assert!((integrated_proxy(&harm, 4).unwrap() - 2.083_333_333_333_333).abs() < 1e-12);
        assert_eq!(integrated_proxy(&harm, 1).unwrap(), 1.0);
        // band at T = 100 is 0.196: lags 1..5 are above it
        assert_eq!(bartlett_cut(&harm).l_cut, 6);
    }

    #[test]
    fn lazy_proxy_agrees_with_full_curve() {
        for seed in 0..10 {
            let mut x = noise(500, seed);
            for t in 1..500 {
                x[t] += 0.6 * x[t - 1];
            }
            let p = memory_proxy(&x, None).unwrap();
            let (eta, cut) = eta_lazy(&x, None).unwrap();
            assert_eq!(eta, p.eta);
            assert_eq!(cut.l_cut, p.l_cut);
        }
    }

    #[test]
    fn theil_sen_examples() {
        let line: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 2.0 * i as f64 - 1.0)).collect();
        assert_eq!(theil_sen(&line).unwrap(), 2.0);
        let pts = [(1.0, 1.0), (2.0, 2.0), (3.0, 3.0), (4.0, 100.0)];
        assert_eq!(theil_sen(&pts).unwrap(), 1.0);
        assert_eq!(theil_sen(&[(0.0, 1.0), (2.0, 2.0)]).unwrap(), 0.5);
        assert!(theil_sen(&[(1.0, 1.0), (1.0, 2.0)]).is_err());
    }

    #[test]
    fn exact_power_law_exponent() {
        let c = AcfCurve {
            kappa: (1..=20).map(|l| (l as f64).powf(-0.3)).collect(),
            series_length: 1000,
            l_max: 20,
        };
        assert!((powerlaw_exponent(&c, 20).unwrap() - 0.3).abs() < 1e-10);
        let mut bad = c.clone();
        bad.kappa[6] *= 5.0;
        assert!((powerlaw_exponent(&bad, 20).unwrap() - 0.3).abs() < 1e-10);
        assert!(powerlaw_exponent(&c, 2).is_err());
    }

    #[test]
    fn adjusted_r2_examples() {
        assert_eq!(adjusted_r2(1.0, 7).unwrap(), 1.0);
        assert!((adjusted_r2(0.5, 3).unwrap()).abs() < 1e-15);
        assert!((adjusted_r2(0.9, 11).unwrap() - (1.0 - 0.1 * 10.0 / 9.0)).abs() < 1e-12);
        assert!(adjusted_r2(0.5, 2).is_err());
    }

    fn constructed_zeta(theta: usize, gamma: f64, m_max: usize) -> Vec<f64> {
        let anchor = (theta as f64).powf(-gamma);
        (0..=m_max)
            .map(|m| match m {
                0 => 1.0,
                m if m >= theta => (m as f64).powf(-gamma),
                m => anchor * (0.5 * (theta - m) as f64).exp(),
            })
            .collect()
    }

    #[test]
    fn breakpoint_is_recovered() {
        let fit = fit_theta(&constructed_zeta(7, 0.5, 20)).unwrap();
        assert_eq!(fit.theta_hat, 7);
        assert_eq!(fit.m_star, 6);
        assert!((fit.gamma - 0.5).abs() < 1e-10);
    }

    #[test]
    fn pure_power_law_picks_smallest_candidate() {
        let z: Vec<f64> = (0..=15).map(|m| if m == 0 { 1.0 } else { (m as f64).powf(-0.4) }).collect();
        let fit = fit_theta(&z).unwrap();
        assert_eq!(fit.theta_hat, 2);
        assert!(fit.r2_adj_by_candidate.iter().all(|(_, r)| (*r - 1.0).abs() < 1e-10));
    }

    #[test]
    fn theta_fit_errors() {
        assert!(matches!(fit_theta(&[1.0, 0.9, 0.8, 0.7]), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            fit_theta(&[1.0, 0.9, 0.0, 0.7, 0.6, 0.5]),
            Err(Error::LogDomain { m: 2, .. })
        ));
    }

    #[test]
    fn theta_is_invariant_under_scaling() {
        let z = constructed_zeta(9, 1.0, 30);
        let base = fit_theta(&z).unwrap();
        for s in [0.9, 0.5, 0.1] {
            let scaled: Vec<f64> = z.iter().enumerate().map(|(m, v)| if m == 0 { *v } else { v * s }).collect();
            assert_eq!(fit_theta(&scaled).unwrap().theta_hat, base.theta_hat);
        }
    }
}
