//! Synthetic long-memory markets with known cluster structure.
//!
//! Randomness comes from `ChaCha8Rng::seed_from_u64(seed)` with one stream
//! per component: stream 0 drives the market factor, streams `1..=K` the
//! cluster factors, stream `K+1` the idiosyncratic noise and stream `K+2`
//! the power-law cluster sizes.

use std::sync::Arc;

use log::warn;
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::panel::{PanelKind, StandardizedPanel};
use crate::stats;

/// Negative circulant eigenvalues above this are treated as round-off.
pub const CIRCULANT_NEG_TOL: f64 = 1e-10;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Autocovariance of unit-variance fractional Gaussian noise at lag `k`.
pub fn fgn_acf(h: f64, k: usize) -> f64 {
    let k = k as f64;
    let e = 2.0 * h;
    0.5 * ((k - 1.0).abs().powf(e) - 2.0 * k.powf(e) + (k + 1.0).powf(e))
}

/// Fractional Gaussian noise of length `t` with Hurst exponent `h`.
pub fn fgn(h: f64, t: usize, seed: u64) -> Result<Vec<f64>> {
    fgn_from(h, t, &mut stream(seed, 0))
}

/// Circulant embedding of size `2t`: eigenvalues of the embedded covariance
/// come from one FFT, and a second FFT of scaled complex Gaussians yields a
/// sample whose real part has the target covariance.
pub fn fgn_from<R: Rng>(h: f64, t: usize, rng: &mut R) -> Result<Vec<f64>> {
    if !(0.5..1.0).contains(&h) {
        return Err(invalid(format!("Hurst exponent {h} outside [0.5, 1)")));
    }
    if t < 2 {
        return Err(invalid(format!("length {t}; need at least 2")));
    }
    let size = 2 * t;
    let mut row: Vec<Complex<f64>> = (0..size)
        .map(|j| {
            let lag = if j <= t { j } else { size - j };
            Complex::new(fgn_acf(h, lag), 0.0)
        })
        .collect();
    let mut planner = FftPlanner::new();
    let fft: Arc<dyn rustfft::Fft<f64>> = planner.plan_fft_forward(size);
    fft.process(&mut row);

    let mut clipped = 0usize;
    let mut scale = Vec::with_capacity(size);
    for c in &row {
        let lam = c.re;
        if lam < -CIRCULANT_NEG_TOL {
            return Err(Error::Decomposition(format!(
                "circulant embedding has eigenvalue {lam:e} (H = {h}, T = {t})"
            )));
        }
        if lam < 0.0 {
            clipped += 1;
        }
        scale.push((lam.max(0.0) / size as f64).sqrt());
    }
    if clipped > 0 {
        warn!("clipped {clipped} slightly negative circulant eigenvalues to zero");
    }

    let mut w: Vec<Complex<f64>> = scale
        .iter()
        .map(|s| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex::new(s * re, s * im)
        })
        .collect();
    fft.process(&mut w);
    Ok(w[..t].iter().map(|c| c.re).collect())
}

/// Stationary AR(1) with unit marginal variance.
pub fn ar1(psi: f64, t: usize, seed: u64) -> Result<Vec<f64>> {
    ar1_from(psi, t, &mut stream(seed, 0))
}

pub fn ar1_from<R: Rng>(psi: f64, t: usize, rng: &mut R) -> Result<Vec<f64>> {
    if !(psi > 0.0 && psi < 1.0) {
        return Err(invalid(format!("AR coefficient {psi} outside (0, 1)")));
    }
    if t < 2 {
        return Err(invalid(format!("length {t}; need at least 2")));
    }
    let sd = (1.0 - psi * psi).sqrt();
    let mut x = Vec::with_capacity(t);
    let first: f64 = StandardNormal.sample(rng);
    x.push(first);
    for i in 1..t {
        let e: f64 = StandardNormal.sample(rng);
        x.push(psi * x[i - 1] + sd * e);
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    Homogeneous,
    Powerlaw { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemoryKind {
    Fgn { h0: f64, h_k: Vec<f64> },
    Ar1 { psi0: f64, psi_k: Vec<f64> },
}

/// Cluster sizes summing to `n`.
pub fn cluster_sizes(n: usize, k: usize, layout: Layout) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(invalid(format!("{k} clusters for {n} assets")));
    }
    if k == 1 {
        return Ok(vec![n]);
    }
    match layout {
        Layout::Homogeneous => {
            if n % k != 0 {
                return Err(invalid(format!("{n} assets do not split into {k} equal clusters")));
            }
            Ok(vec![n / k; k])
        }
        Layout::Powerlaw { seed } => powerlaw_sizes(n, k, &mut stream(seed, k as u64 + 2)),
    }
}

/// Draws from `P(s) ~ s^-2` on `[2, n/2]` by inverse CDF, rescales to sum to
/// `n` with largest-remainder rounding and lifts any cluster below 2.
fn powerlaw_sizes<R: Rng>(n: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if 2 * k > n {
        return Err(invalid(format!(
            "{k} clusters of at least 2 assets do not fit in {n}"
        )));
    }
    let a = 2.0;
    let b = (n as f64 / 2.0).max(a);
    let raw: Vec<f64> = (0..k)
        .map(|_| {
            let u: f64 = rng.random();
            1.0 / (1.0 / a - u * (1.0 / a - 1.0 / b))
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let target: Vec<f64> = raw.iter().map(|s| s * n as f64 / total).collect();
    let mut sizes: Vec<usize> = target.iter().map(|x| x.floor() as usize).collect();
    let mut short = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| {
        let ri = target[i] - target[i].floor();
        let rj = target[j] - target[j].floor();
        rj.total_cmp(&ri).then(i.cmp(&j))
    });
    for &i in order.iter().cycle() {
        if short == 0 {
            break;
        }
        sizes[i] += 1;
        short -= 1;
    }
    while let Some(small) = sizes.iter().position(|s| *s < 2) {
        let big = (0..k).max_by_key(|&i| (sizes[i], std::cmp::Reverse(i))).unwrap();
        sizes[big] -= 1;
        sizes[small] += 1;
    }
    Ok(sizes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSpec {
    pub n: usize,
    pub t: usize,
    pub k: usize,
    pub layout: Layout,
    pub beta0: f64,
    pub beta_k: Vec<f64>,
    pub memory_kind: MemoryKind,
    pub phi: f64,
    pub seed: u64,
}

impl MarketSpec {
    /// Equal clusters with the default loadings and FGN exponents.
    pub fn homogeneous(n: usize, t: usize, k: usize, phi: f64, seed: u64) -> Self {
        Self {
            n,
            t,
            k,
            layout: Layout::Homogeneous,
            beta0: 1.3,
            beta_k: stats::linspace(0.14, 1.0, k),
            memory_kind: MemoryKind::Fgn {
                h0: 0.9,
                h_k: stats::linspace(0.7, 0.9, k),
            },
            phi,
            seed,
        }
    }

    /// Power-law cluster sizes; the layout draws from the same seed.
    pub fn heterogeneous(n: usize, t: usize, k: usize, phi: f64, seed: u64) -> Self {
        Self {
            layout: Layout::Powerlaw { seed },
            ..Self::homogeneous(n, t, k, phi, seed)
        }
    }

    /// Default AR(1) persistence in place of FGN.
    pub fn with_ar1(mut self) -> Self {
        self.memory_kind = MemoryKind::Ar1 {
            psi0: 0.95,
            psi_k: stats::linspace(0.65, 0.95, self.k),
        };
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 || self.k > self.n {
            return Err(invalid(format!("{} clusters for {} assets", self.k, self.n)));
        }
        if self.t < 2 {
            return Err(invalid(format!("length {} too short", self.t)));
        }
        if !(self.beta0 > 0.0) {
            return Err(invalid(format!("market loading {} must be positive", self.beta0)));
        }
        if self.beta_k.len() != self.k {
            return Err(invalid(format!("{} cluster loadings for {} clusters", self.beta_k.len(), self.k)));
        }
        if !(self.phi >= 0.0) {
            return Err(invalid(format!("noise variance {} must be non-negative", self.phi)));
        }
        match &self.memory_kind {
            MemoryKind::Fgn { h0, h_k } => {
                if h_k.len() != self.k {
                    return Err(invalid(format!("{} Hurst exponents for {} clusters", h_k.len(), self.k)));
                }
                if let Some(h) = std::iter::once(h0).chain(h_k).find(|h| !(0.5..1.0).contains(*h)) {
                    return Err(invalid(format!("Hurst exponent {h} outside [0.5, 1)")));
                }
            }
            MemoryKind::Ar1 { psi0, psi_k } => {
                if psi_k.len() != self.k {
                    return Err(invalid(format!("{} AR coefficients for {} clusters", psi_k.len(), self.k)));
                }
                if let Some(p) = std::iter::once(psi0).chain(psi_k).find(|p| !(**p > 0.0 && **p < 1.0)) {
                    return Err(invalid(format!("AR coefficient {p} outside (0, 1)")));
                }
            }
        }
        Ok(())
    }
}

/// Flat key-value form of [`MarketSpec`] with defaults for omitted keys.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSpecFile {
    pub n: Option<usize>,
    pub t: Option<usize>,
    pub k: Option<usize>,
    /// `homogeneous` or `powerlaw`.
    pub layout: Option<String>,
    pub layout_seed: Option<u64>,
    pub beta0: Option<f64>,
    pub beta_k: Option<Vec<f64>>,
    /// `fgn` or `ar1`.
    pub memory_kind: Option<String>,
    pub h0: Option<f64>,
    pub h_k: Option<Vec<f64>>,
    pub psi0: Option<f64>,
    pub psi_k: Option<Vec<f64>>,
    pub phi: Option<f64>,
    pub seed: Option<u64>,
}

impl MarketSpecFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Fills in defaults: N = 300, T = 2000, K = 10, homogeneous, FGN, phi = 1.
    pub fn into_spec(self, seed_override: Option<u64>) -> Result<MarketSpec> {
        let n = self.n.unwrap_or(300);
        let t = self.t.unwrap_or(2000);
        let k = self.k.unwrap_or(10);
        let seed = seed_override.or(self.seed).unwrap_or(0);
        let layout = match self.layout.as_deref().unwrap_or("homogeneous") {
            "homogeneous" => Layout::Homogeneous,
            "powerlaw" => Layout::Powerlaw {
                seed: self.layout_seed.unwrap_or(seed),
            },
            other => return Err(invalid(format!("unknown layout `{other}`"))),
        };
        let memory_kind = match self.memory_kind.as_deref().unwrap_or("fgn") {
            "fgn" => MemoryKind::Fgn {
                h0: self.h0.unwrap_or(0.9),
                h_k: self.h_k.unwrap_or_else(|| stats::linspace(0.7, 0.9, k)),
            },
            "ar1" => MemoryKind::Ar1 {
                psi0: self.psi0.unwrap_or(0.95),
                psi_k: self.psi_k.unwrap_or_else(|| stats::linspace(0.65, 0.95, k)),
            },
            other => return Err(invalid(format!("unknown memory kind `{other}`"))),
        };
        let spec = MarketSpec {
            n,
            t,
            k,
            layout,
            beta0: self.beta0.unwrap_or(1.3),
            beta_k: self.beta_k.unwrap_or_else(|| stats::linspace(0.14, 1.0, k)),
            memory_kind,
            phi: self.phi.unwrap_or(1.0),
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPanel {
    pub panel: StandardizedPanel,
    /// Cluster index of every asset.
    pub membership: Vec<usize>,
    pub sizes: Vec<usize>,
    pub market_factor: Vec<f64>,
    /// T x K cluster factor series.
    pub cluster_factors: DMatrix<f64>,
}

pub fn synthetic_ticker(i: usize) -> String {
    format!("S{i:04}")
}

/// `omega_i(t) = beta0 I0(t) + beta_k(i) I_k(i)(t) + eps_i(t)`, standardized.
pub fn simulate_market(spec: &MarketSpec) -> Result<SyntheticPanel> {
    spec.validate()?;
    let (n, t, k) = (spec.n, spec.t, spec.k);
    let sizes = cluster_sizes(n, k, spec.layout)?;
    let membership: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(c, s)| std::iter::repeat_n(c, *s))
        .collect();

    let gen = |param: f64, id: u64| -> Result<Vec<f64>> {
        let mut rng = stream(spec.seed, id);
        match spec.memory_kind {
            MemoryKind::Fgn { .. } => fgn_from(param, t, &mut rng),
            MemoryKind::Ar1 { .. } => ar1_from(param, t, &mut rng),
        }
    };
    let (p0, pk) = match &spec.memory_kind {
        MemoryKind::Fgn { h0, h_k } => (*h0, h_k.clone()),
        MemoryKind::Ar1 { psi0, psi_k } => (*psi0, psi_k.clone()),
    };
    let market = gen(p0, 0)?;
    let mut clusters = DMatrix::zeros(t, k);
    for c in 0..k {
        let s = gen(pk[c], c as u64 + 1)?;
        stats::col_mut(&mut clusters, c).copy_from_slice(&s);
    }

    let mut noise_rng = stream(spec.seed, k as u64 + 1);
    let sd = spec.phi.sqrt();
    let mut raw = DMatrix::zeros(t, n);
    for i in 0..n {
        let c = membership[i];
        let bk = spec.beta_k[c];
        let fc = stats::col(&clusters, c).to_vec();
        let col = stats::col_mut(&mut raw, i);
        for (tt, v) in col.iter_mut().enumerate() {
            let e: f64 = StandardNormal.sample(&mut noise_rng);
            *v = spec.beta0 * market[tt] + bk * fc[tt] + sd * e;
        }
    }
    let panel = StandardizedPanel::from_raw(
        &raw,
        PanelKind::LogVolatility,
        (0..n).map(synthetic_ticker).collect(),
        (0..t).map(|i| i.to_string()).collect(),
    )?;
    Ok(SyntheticPanel {
        panel,
        membership,
        sizes,
        market_factor: market,
        cluster_factors: clusters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::acf;

    fn mean_acf(h: f64, lags: usize, seeds: u64) -> Vec<f64> {
        let mut acc = vec![0.0; lags];
        for s in 0..seeds {
            let x = fgn(h, 4000, s).unwrap();
            let c = acf(&x, Some(lags)).unwrap();
            for l in 0..lags {
                acc[l] += c.kappa[l] / seeds as f64;
            }
        }
        acc
    }

    #[test]
    fn acf_formula_values() {
        assert!((fgn_acf(0.9, 1) - 0.741_101_126_592_248).abs() < 1e-12);
        assert_eq!(fgn_acf(0.5, 3), 0.0);
        assert_eq!(fgn_acf(0.7, 0), 1.0);
    }

    #[test]
    fn white_noise_at_half() {
        let k = mean_acf(0.5, 3, 20);
        assert!(k.iter().all(|v| v.abs() < 0.02), "{k:?}");
    }

    #[test]
    fn fgn_matches_population_acf() {
        for h in [0.7, 0.8] {
            let k = mean_acf(h, 5, 20);
            for l in 1..=5 {
                assert!((k[l - 1] - fgn_acf(h, l)).abs() < 0.05, "H={h} L={l}: {}", k[l - 1]);
            }
        }
    }

    /// Lag products with the known zero mean have expectation equal to the
    /// autocovariance, so their seed average must sit within three standard
    /// errors of the formula.
    #[test]
    fn fgn_covariance_within_monte_carlo_error() {
        let (t, seeds, lags) = (2048, 40u64, 10);
        for h in [0.6, 0.75, 0.9] {
            let mut samples = vec![Vec::new(); lags + 1];
            for s in 0..seeds {
                let x = fgn(h, t, 1000 + s).unwrap();
                for (l, out) in samples.iter_mut().enumerate() {
                    let p = (0..t - l).map(|i| x[i] * x[i + l]).sum::<f64>() / (t - l) as f64;
                    out.push(p);
                }
            }
            for (l, v) in samples.iter().enumerate() {
                let se = stats::variance(v).sqrt() / (seeds as f64).sqrt();
                let err = (stats::mean(v) - fgn_acf(h, l)).abs();
                assert!(err < 3.0 * se + 1e-3, "H={h} L={l}: err {err} se {se}");
            }
        }
    }

    #[test]
    fn fgn_is_deterministic_and_validates() {
        assert_eq!(fgn(0.8, 100, 3).unwrap(), fgn(0.8, 100, 3).unwrap());
        assert_ne!(fgn(0.8, 100, 3).unwrap(), fgn(0.8, 100, 4).unwrap());
        assert!(fgn(1.0, 100, 0).is_err());
        assert!(fgn(0.4, 100, 0).is_err());
    }

    #[test]
    fn ar1_moments() {
        let (mut k2, mut var) = (0.0, 0.0);
        for s in 0..20 {
            let x = ar1(0.8, 4000, s).unwrap();
            k2 += acf(&x, Some(2)).unwrap().kappa[1] / 20.0;
            var += stats::variance(&x) / 20.0;
        }
        assert!((k2 - 0.64).abs() < 0.05, "{k2}");
        assert!((var - 1.0).abs() < 0.05, "{var}");
        let x = ar1(1e-6, 4000, 1).unwrap();
        assert!(acf(&x, Some(1)).unwrap().kappa[0].abs() < 0.05);
        assert!(ar1(1.0, 10, 0).is_err());
        assert!(ar1(0.0, 10, 0).is_err());
    }

    #[test]
    fn cluster_size_layouts() {
        assert_eq!(cluster_sizes(1200, 30, Layout::Homogeneous).unwrap(), vec![40; 30]);
        assert!(cluster_sizes(100, 30, Layout::Homogeneous).is_err());
        assert_eq!(cluster_sizes(77, 1, Layout::Powerlaw { seed: 3 }).unwrap(), vec![77]);
        for seed in 0..50 {
            let s = cluster_sizes(1200, 30, Layout::Powerlaw { seed }).unwrap();
            assert_eq!(s.iter().sum::<usize>(), 1200);
            assert!(s.iter().all(|v| *v >= 2));
        }
    }

    #[test]
    fn noise_free_market_is_rank_one() {
        let mut spec = MarketSpec::homogeneous(20, 200, 4, 0.0, 1);
        spec.beta_k = vec![0.0; 4];
        let sp = simulate_market(&spec).unwrap();
        let c = crate::spectra::correlation(&sp.panel).unwrap();
        let e = crate::spectra::eigendecompose(&c).unwrap();
        assert!((e.values()[0] - 20.0).abs() < 1e-8);
    }

    #[test]
    fn spec_file_defaults_and_errors() {
        let s = MarketSpecFile::parse("n = 40\nk = 4\nt = 100\nlayout = \"powerlaw\"\n")
            .unwrap()
            .into_spec(Some(9))
            .unwrap();
        assert_eq!(s.layout, Layout::Powerlaw { seed: 9 });
        assert_eq!(s.beta_k.len(), 4);
        assert!(MarketSpecFile::parse("bogus = 1").is_err());
        assert!(MarketSpecFile::parse("h0 = 1.2").unwrap().into_spec(None).is_err());
    }
}
