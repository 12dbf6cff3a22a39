//! Flat key-value run configuration. Values come from command-line flags,
//! then the `--config` file, then built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mempca_core::baselines::{MethodSet, PressRegression};
use mempca_core::{LassoConfig, MemoryConfig, MpFitConfig, SelectionConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Every key a config file may set. Unknown keys are rejected.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    /// Synthetic market spec file, used when no `input` is given.
    pub spec: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub format: Option<Format>,

    /// Cleaning fraction.
    pub p: Option<f64>,
    /// Panel kind written by `transform` and expected by panel readers.
    pub kind: Option<String>,

    pub q_min: Option<f64>,
    pub q_max: Option<f64>,
    pub sigma_min: Option<f64>,
    pub sigma_max: Option<f64>,
    pub mp_rounds: Option<usize>,

    pub lasso_folds: Option<usize>,
    pub grid_len: Option<usize>,
    pub grid_ratio: Option<f64>,
    pub lasso_tol: Option<f64>,

    pub l_max: Option<usize>,
    pub m_max: Option<usize>,

    pub folds: Option<usize>,
    pub methods: Option<String>,
    pub press_regression: Option<PressRegression>,
    pub phis: Option<Vec<f64>>,
    pub seeds: Option<u64>,

    pub delta: Option<f64>,
    pub groups: Option<PathBuf>,
    pub expected_returns: Option<PathBuf>,
    pub components: Option<usize>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),* $(,)?) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f; } )*
    };
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())).into())
    }

    /// Values set in `top` win.
    pub fn overlay(mut self, top: RunConfig) -> Self {
        let s = &mut self;
        overlay!(s, top; input, spec, out_dir, seed, threads, format, p, kind, q_min, q_max, sigma_min,
            sigma_max, mp_rounds, lasso_folds, grid_len, grid_ratio, lasso_tol, l_max, m_max, folds,
            methods, press_regression, phis, seeds, delta, groups, expected_returns, components);
        self
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("mempca-out"))
    }

    pub fn format(&self) -> Format {
        self.format.unwrap_or_default()
    }

    pub fn clean_fraction(&self) -> Result<f64> {
        let p = self.p.unwrap_or(0.9);
        if !(p > 0.0 && p <= 1.0) {
            bail!(ConfigError(format!("p = {p} outside (0, 1]")));
        }
        Ok(p)
    }

    pub fn folds(&self) -> Result<usize> {
        let f = self.folds.unwrap_or(10);
        if f < 2 {
            bail!(ConfigError(format!("folds = {f}; need at least 2")));
        }
        Ok(f)
    }

    pub fn methods(&self) -> Result<MethodSet> {
        match &self.methods {
            Some(s) => MethodSet::parse(s).map_err(|e| ConfigError(e.to_string()).into()),
            None => Ok(MethodSet::default()),
        }
    }

    pub fn selection(&self) -> Result<SelectionConfig> {
        let d = MpFitConfig::default();
        let mp = MpFitConfig {
            q_min: self.q_min.unwrap_or(d.q_min),
            q_max: self.q_max.unwrap_or(d.q_max),
            sigma_min: self.sigma_min.unwrap_or(d.sigma_min),
            sigma_max: self.sigma_max.unwrap_or(d.sigma_max),
            max_rounds: self.mp_rounds.unwrap_or(d.max_rounds),
            min_eigenvalues: d.min_eigenvalues,
        };
        if !(mp.q_min > 0.0 && mp.q_min < mp.q_max && mp.sigma_min > 0.0 && mp.sigma_min < mp.sigma_max) {
            bail!(ConfigError(format!(
                "MP search box q in [{}, {}], sigma in [{}, {}] is empty or not positive",
                mp.q_min, mp.q_max, mp.sigma_min, mp.sigma_max
            )));
        }
        if mp.max_rounds == 0 {
            bail!(ConfigError("mp_rounds must be at least 1".into()));
        }
        let l = LassoConfig::default();
        let lasso = LassoConfig {
            folds: self.lasso_folds.unwrap_or(l.folds),
            grid_len: self.grid_len.unwrap_or(l.grid_len),
            grid_ratio: self.grid_ratio.unwrap_or(l.grid_ratio),
            tol: self.lasso_tol.unwrap_or(l.tol),
            max_sweeps: l.max_sweeps,
        };
        if lasso.folds < 2 || lasso.grid_len < 2 || !(lasso.grid_ratio > 0.0 && lasso.grid_ratio < 1.0) || !(lasso.tol > 0.0) {
            bail!(ConfigError(format!(
                "lasso settings out of range: folds {}, grid_len {}, grid_ratio {}, tol {}",
                lasso.folds, lasso.grid_len, lasso.grid_ratio, lasso.tol
            )));
        }
        if self.l_max == Some(0) {
            bail!(ConfigError("l_max must be at least 1".into()));
        }
        Ok(SelectionConfig {
            mp,
            lasso,
            memory: MemoryConfig { l_max: self.l_max },
            m_max_override: self.m_max,
        })
    }

    /// Checks that every referenced file exists.
    pub fn check_files(&self) -> Result<()> {
        for (key, p) in [
            ("input", &self.input),
            ("spec", &self.spec),
            ("groups", &self.groups),
            ("expected_returns", &self.expected_returns),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    bail!(ConfigError(format!("{key}: no such file {}", p.display())));
                }
            }
        }
        if self.threads == Some(0) {
            bail!(ConfigError("threads must be at least 1".into()));
        }
        Ok(())
    }
}

/// Bad configuration or command line; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file: RunConfig = toml::from_str("p = 0.8\nfolds = 5\nmethods = \"press\"").unwrap();
        let flags = RunConfig {
            folds: Some(4),
            ..Default::default()
        };
        let c = file.overlay(flags);
        assert_eq!(c.folds().unwrap(), 4);
        assert_eq!(c.clean_fraction().unwrap(), 0.8);
        assert_eq!(c.selection().unwrap().lasso.folds, 10);
        assert!(c.methods().unwrap().press && !c.methods().unwrap().memory);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
    }

    #[test]
    fn ranges_are_checked() {
        let c = RunConfig {
            p: Some(1.5),
            ..Default::default()
        };
        assert!(c.clean_fraction().is_err());
        let c = RunConfig {
            q_min: Some(3.0),
            ..Default::default()
        };
        assert!(c.selection().is_err());
    }
}
