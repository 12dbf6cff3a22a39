//! Price panels, cleaning and the log-return / log-volatility transforms.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::stats;

/// Closing prices per (date, ticker); `None` marks a day the ticker did not trade.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    /// One series per ticker, aligned with `dates`.
    values: Vec<Vec<Option<f64>>>,
}

impl PricePanel {
    pub fn new(
        dates: Vec<NaiveDate>,
        tickers: Vec<String>,
        values: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("dates must be strictly increasing"));
        }
        if tickers.len() != values.len() {
            return Err(invalid("one price series per ticker required"));
        }
        let unique: BTreeSet<&String> = tickers.iter().collect();
        if unique.len() != tickers.len() {
            return Err(invalid("duplicate ticker"));
        }
        for (t, series) in tickers.iter().zip(&values) {
            if series.len() != dates.len() {
                return Err(invalid(format!("series for {t} is not aligned with dates")));
            }
            if series.iter().all(Option::is_none) {
                return Err(invalid(format!("{t} has no observed price")));
            }
            if let Some(bad) = series.iter().flatten().find(|p| !(**p > 0.0) || !p.is_finite()) {
                return Err(invalid(format!("{t} has non-positive price {bad}")));
            }
        }
        Ok(Self {
            dates,
            tickers,
            values,
        })
    }

    /// Builds a panel from long-format observations. The date axis is the
    /// union of all observation dates; tickers keep first-seen order.
    pub fn from_observations<I>(obs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (NaiveDate, String, f64)>,
    {
        let mut order: Vec<String> = Vec::new();
        let mut by_ticker: BTreeMap<String, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
        for (date, ticker, close) in obs {
            let entry = by_ticker.entry(ticker.clone()).or_insert_with(|| {
                order.push(ticker.clone());
                BTreeMap::new()
            });
            if entry.insert(date, close).is_some() {
                return Err(invalid(format!("duplicate observation for {ticker} on {date}")));
            }
        }
        if order.is_empty() {
            return Err(Error::EmptyPanel("no observations".into()));
        }
        let dates: Vec<NaiveDate> = by_ticker
            .values()
            .flat_map(|m| m.keys().copied())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let values = order
            .iter()
            .map(|t| {
                let m = &by_ticker[t];
                dates.iter().map(|d| m.get(d).copied()).collect()
            })
            .collect();
        Self::new(dates, order, values)
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn series(&self, j: usize) -> &[Option<f64>] {
        &self.values[j]
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_tickers(&self) -> usize {
        self.tickers.len()
    }

    /// Number of observed prices of ticker `j`.
    pub fn observed_len(&self, j: usize) -> usize {
        self.values[j].iter().filter(|v| v.is_some()).count()
    }

    pub fn has_gaps(&self) -> bool {
        self.values.iter().any(|s| s.iter().any(Option::is_none))
    }

    fn first_observed(&self, j: usize) -> usize {
        self.values[j]
            .iter()
            .position(Option::is_some)
            .expect("validated: every ticker has an observation")
    }
}

/// Outcome of [`clean_prices`]: the aligned panel plus what was changed.
#[derive(Debug, Clone)]
pub struct CleanOutcome {
    pub panel: PricePanel,
    /// Removed tickers with their observed series length.
    pub removed: Vec<(String, usize)>,
    /// Number of forward-filled dates per retained ticker (same order as the panel).
    pub filled: Vec<(String, usize)>,
    pub common_start: NaiveDate,
}

impl CleanOutcome {
    pub fn total_fills(&self) -> usize {
        self.filled.iter().map(|(_, n)| n).sum()
    }
}

/// Aligns a raw price panel:
/// 1. drops tickers whose series is shorter than `p` times the longest one;
/// 2. finds the common earliest date of the survivors;
/// 3. builds the date axis from every date on or after it where a survivor traded;
/// 4. fills gaps by carrying the last available price forward.
pub fn clean_prices(raw: &PricePanel, p: f64) -> Result<CleanOutcome> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(invalid(format!("cleaning fraction p = {p} outside (0, 1]")));
    }
    if raw.n_tickers() == 0 || raw.n_dates() == 0 {
        return Err(Error::EmptyPanel("raw panel has no data".into()));
    }
    let lengths: Vec<usize> = (0..raw.n_tickers()).map(|j| raw.observed_len(j)).collect();
    let longest = *lengths.iter().max().unwrap_or(&0);
    let threshold = p * longest as f64;

    let mut keep = Vec::new();
    let mut removed = Vec::new();
    for (j, &len) in lengths.iter().enumerate() {
        if (len as f64) < threshold {
            removed.push((raw.tickers[j].clone(), len));
        } else {
            keep.push(j);
        }
    }
    if keep.is_empty() {
        return Err(Error::EmptyPanel("every ticker was removed".into()));
    }

    let start_idx = keep
        .iter()
        .map(|&j| raw.first_observed(j))
        .max()
        .expect("non-empty");
    let axis: Vec<usize> = (start_idx..raw.n_dates())
        .filter(|&d| keep.iter().any(|&j| raw.values[j][d].is_some()))
        .collect();

    let mut values = Vec::with_capacity(keep.len());
    let mut filled = Vec::with_capacity(keep.len());
    for &j in &keep {
        let src = &raw.values[j];
        let mut last = src[..=start_idx].iter().rev().flatten().next().copied();
        let mut cursor = start_idx;
        let mut fills = 0;
        let mut out = Vec::with_capacity(axis.len());
        for &d in &axis {
            while cursor <= d {
                if let Some(v) = src[cursor] {
                    last = Some(v);
                }
                cursor += 1;
            }
            if src[d].is_none() {
                fills += 1;
            }
            out.push(Some(last.expect("ticker observed on or before common start")));
        }
        values.push(out);
        filled.push((raw.tickers[j].clone(), fills));
    }

    let panel = PricePanel {
        dates: axis.iter().map(|&d| raw.dates[d]).collect(),
        tickers: keep.iter().map(|&j| raw.tickers[j].clone()).collect(),
        values,
    };
    Ok(CleanOutcome {
        common_start: raw.dates[start_idx],
        panel,
        removed,
        filled,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PanelKind {
    Returns,
    LogVolatility,
    Residuals,
}

/// A T x N panel whose columns have mean 0 and population variance 1.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedPanel {
    matrix: DMatrix<f64>,
    kind: PanelKind,
    column_ids: Vec<String>,
    row_labels: Vec<String>,
}

pub const MEAN_TOL: f64 = 1e-10;
pub const VAR_TOL: f64 = 1e-8;

impl StandardizedPanel {
    /// Wraps an already standardized matrix, checking the column invariants.
    pub fn new(
        matrix: DMatrix<f64>,
        kind: PanelKind,
        column_ids: Vec<String>,
        row_labels: Vec<String>,
    ) -> Result<Self> {
        check_shape(&matrix, &column_ids, &row_labels)?;
        for j in 0..matrix.ncols() {
            let c = stats::col(&matrix, j);
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::ContractViolation(format!(
                    "column {} has non-finite entries",
                    column_ids[j]
                )));
            }
            let m = stats::mean(c);
            let v = stats::variance(c);
            if m.abs() >= MEAN_TOL || (v - 1.0).abs() >= VAR_TOL {
                return Err(Error::ContractViolation(format!(
                    "column {} is not standardized (mean {m:e}, var {v})",
                    column_ids[j]
                )));
            }
        }
        Ok(Self {
            matrix,
            kind,
            column_ids,
            row_labels,
        })
    }

    /// Standardizes every column of `raw`. Zero-variance columns are reported
    /// together in one error.
    pub fn from_raw(
        raw: &DMatrix<f64>,
        kind: PanelKind,
        column_ids: Vec<String>,
        row_labels: Vec<String>,
    ) -> Result<Self> {
        check_shape(raw, &column_ids, &row_labels)?;
        let cols: Vec<Option<Vec<f64>>> = (0..raw.ncols())
            .into_par_iter()
            .map(|j| stats::standardize(stats::col(raw, j)))
            .collect();
        let bad: Vec<String> = cols
            .iter()
            .zip(&column_ids)
            .filter(|(c, _)| c.is_none())
            .map(|(_, id)| id.clone())
            .collect();
        if !bad.is_empty() {
            return Err(Error::DegenerateColumns { tickers: bad });
        }
        let t = raw.nrows();
        let data: Vec<f64> = cols.into_iter().flatten().flatten().collect();
        let matrix = DMatrix::from_vec(t, raw.ncols(), data);
        Ok(Self {
            matrix,
            kind,
            column_ids,
            row_labels,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn kind(&self) -> PanelKind {
        self.kind
    }

    pub fn column_ids(&self) -> &[String] {
        &self.column_ids
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn n_obs(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        stats::col(&self.matrix, j)
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// Relabels the panel kind without touching the data.
    pub fn with_kind(mut self, kind: PanelKind) -> Self {
        self.kind = kind;
        self
    }

    /// Keeps the given columns in the given order.
    pub fn select_columns(&self, idx: &[usize]) -> Self {
        let t = self.n_obs();
        let mut data = Vec::with_capacity(t * idx.len());
        for &j in idx {
            data.extend_from_slice(self.column(j));
        }
        Self {
            matrix: DMatrix::from_vec(t, idx.len(), data),
            kind: self.kind,
            column_ids: idx.iter().map(|&j| self.column_ids[j].clone()).collect(),
            row_labels: self.row_labels.clone(),
        }
    }
}

fn check_shape(m: &DMatrix<f64>, ids: &[String], rows: &[String]) -> Result<()> {
    if m.ncols() == 0 || m.nrows() == 0 {
        return Err(Error::EmptyPanel("panel matrix has no entries".into()));
    }
    if ids.len() != m.ncols() {
        return Err(invalid(format!(
            "{} column ids for {} columns",
            ids.len(),
            m.ncols()
        )));
    }
    if rows.len() != m.nrows() {
        return Err(invalid(format!(
            "{} row labels for {} rows",
            rows.len(),
            m.nrows()
        )));
    }
    Ok(())
}

/// Unstandardized log-differences `ln p(t+1) - ln p(t)`, shape (T-1) x N.
pub fn raw_log_returns(prices: &PricePanel) -> Result<DMatrix<f64>> {
    if prices.has_gaps() {
        return Err(invalid("prices contain gaps; run clean_prices first"));
    }
    let t = prices.n_dates();
    if t < 3 {
        return Err(Error::InsufficientData(format!("{t} dates, need at least 3")));
    }
    let n = prices.n_tickers();
    let mut out = DMatrix::zeros(t - 1, n);
    for j in 0..n {
        let s = &prices.values[j];
        let c = stats::col_mut(&mut out, j);
        for i in 0..t - 1 {
            let (a, b) = (s[i].unwrap(), s[i + 1].unwrap());
            c[i] = b.ln() - a.ln();
        }
    }
    Ok(out)
}

/// Standardized log-returns; row `t` is labelled with the later of the two dates.
pub fn log_returns(prices: &PricePanel) -> Result<StandardizedPanel> {
    let raw = raw_log_returns(prices)?;
    let rows = prices.dates[1..].iter().map(|d| d.to_string()).collect();
    StandardizedPanel::from_raw(&raw, PanelKind::Returns, prices.tickers.clone(), rows)
}

/// `ln|r|` with exact zeros replaced by the smallest nonzero magnitude in the
/// column. `None` if the column is entirely zero.
pub fn log_abs_regularized(r: &[f64]) -> Option<Vec<f64>> {
    let floor = r
        .iter()
        .map(|v| v.abs())
        .filter(|v| *v > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !floor.is_finite() {
        return None;
    }
    Some(
        r.iter()
            .map(|v| if *v == 0.0 { floor.ln() } else { v.abs().ln() })
            .collect(),
    )
}

/// Standardized log-volatility `ln|r|` of a standardized returns panel.
pub fn log_volatility(returns: &StandardizedPanel) -> Result<StandardizedPanel> {
    if returns.kind != PanelKind::Returns {
        return Err(invalid(format!(
            "log_volatility expects a returns panel, got {:?}",
            returns.kind
        )));
    }
    let t = returns.n_obs();
    let n = returns.n_assets();
    let logs: Vec<Option<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|j| log_abs_regularized(returns.column(j)))
        .collect();
    let zero_cols: Vec<String> = logs
        .iter()
        .zip(&returns.column_ids)
        .filter(|(c, _)| c.is_none())
        .map(|(_, id)| id.clone())
        .collect();
    if !zero_cols.is_empty() {
        return Err(Error::DegenerateColumns { tickers: zero_cols });
    }
    let raw = DMatrix::from_vec(t, n, logs.into_iter().flatten().flatten().collect());
    StandardizedPanel::from_raw(
        &raw,
        PanelKind::LogVolatility,
        returns.column_ids.clone(),
        returns.row_labels.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn day(i: i64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2000, 1, 3).unwrap() + chrono::Duration::days(i)
    }

    fn full(t: usize, tickers: &[&str]) -> PricePanel {
        let dates = (0..t as i64).map(day).collect();
        let values = tickers
            .iter()
            .enumerate()
            .map(|(k, _)| {
                (0..t)
                    .map(|i| Some(100.0 + k as f64 + (i as f64 * 0.7).sin()))
                    .collect()
            })
            .collect();
        PricePanel::new(dates, tickers.iter().map(|s| s.to_string()).collect(), values).unwrap()
    }

    #[test]
    fn gapless_panel_is_unchanged() {
        let p = full(20, &["A", "B"]);
        for frac in [0.1, 0.5, 1.0] {
            let out = clean_prices(&p, frac).unwrap();
            assert_eq!(out.panel, p);
            assert_eq!(out.total_fills(), 0);
            assert!(out.removed.is_empty());
        }
    }

    #[test]
    fn short_series_removed_and_others_aligned() {
        // lengths 100 / 95 / 80 on a 100-day axis; B starts late, C starts later
        let dates: Vec<NaiveDate> = (0..100).map(day).collect();
        let a: Vec<Option<f64>> = (0..100).map(|i| Some(10.0 + i as f64)).collect();
        let b: Vec<Option<f64>> = (0..100)
            .map(|i| if i < 5 { None } else { Some(20.0 + i as f64) })
            .collect();
        let c: Vec<Option<f64>> = (0..100)
            .map(|i| if i < 20 { None } else { Some(30.0) })
            .collect();
        let raw = PricePanel::new(
            dates,
            vec!["A".into(), "B".into(), "C".into()],
            vec![a, b, c],
        )
        .unwrap();
        let out = clean_prices(&raw, 0.9).unwrap();
        assert_eq!(out.removed, vec![("C".to_string(), 80)]);
        assert_eq!(out.panel.tickers(), &["A".to_string(), "B".to_string()]);
        assert_eq!(out.common_start, day(5));
        assert_eq!(out.panel.n_dates(), 95);
        assert!(!out.panel.has_gaps());
    }

    #[test]
    fn gaps_are_forward_filled() {
        let dates: Vec<NaiveDate> = (0..6).map(day).collect();
        let a = vec![Some(1.0), Some(2.0), None, None, Some(5.0), Some(6.0)];
        let b = vec![Some(1.0), Some(1.5), Some(1.6), Some(1.7), Some(1.8), Some(1.9)];
        let raw = PricePanel::new(dates, vec!["A".into(), "B".into()], vec![a, b]).unwrap();
        let out = clean_prices(&raw, 0.5).unwrap();
        let filled: Vec<f64> = out.panel.series(0).iter().map(|v| v.unwrap()).collect();
        assert_eq!(filled, vec![1.0, 2.0, 2.0, 2.0, 5.0, 6.0]);
        assert_eq!(out.filled[0], ("A".to_string(), 2));
        let r = raw_log_returns(&out.panel).unwrap();
        assert_eq!(r[(1, 0)], 0.0);
        assert_eq!(r[(2, 0)], 0.0);
    }

    #[test]
    fn start_date_gap_uses_earlier_price() {
        // B's first trade precedes A's, but B skips A's first day.
        let dates: Vec<NaiveDate> = (0..5).map(day).collect();
        let a = vec![None, None, Some(3.0), Some(4.0), Some(5.0)];
        let b = vec![Some(7.0), Some(8.0), None, Some(9.0), Some(10.0)];
        let raw = PricePanel::new(dates, vec!["A".into(), "B".into()], vec![a, b]).unwrap();
        let out = clean_prices(&raw, 0.5).unwrap();
        assert_eq!(out.common_start, day(2));
        assert_eq!(out.panel.series(1)[0], Some(8.0));
    }

    #[test]
    fn bad_fraction_and_empty_result() {
        let p = full(5, &["A"]);
        assert!(matches!(clean_prices(&p, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(clean_prices(&p, 1.5), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn constant_prices_are_degenerate() {
        let dates: Vec<NaiveDate> = (0..3).map(day).collect();
        let raw = PricePanel::new(
            dates,
            vec!["FLAT".into(), "OK".into()],
            vec![vec![Some(100.0); 3], vec![Some(100.0), Some(101.0), Some(99.0)]],
        )
        .unwrap();
        match log_returns(&raw) {
            Err(Error::DegenerateColumns { tickers }) => assert_eq!(tickers, vec!["FLAT"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn raw_return_is_log_difference() {
        let dates: Vec<NaiveDate> = (0..3).map(day).collect();
        let raw = PricePanel::new(
            dates,
            vec!["A".into()],
            vec![vec![Some(100.0), Some(110.0), Some(105.0)]],
        )
        .unwrap();
        let r = raw_log_returns(&raw).unwrap();
        assert!((r[(0, 0)] - 0.0953101798043249).abs() < 1e-12);
    }

    #[test]
    fn log_abs_of_e_and_e_squared() {
        let e = std::f64::consts::E;
        let l = log_abs_regularized(&[e, e * e]).unwrap();
        assert!((l[0] - 1.0).abs() < 1e-15 && (l[1] - 2.0).abs() < 1e-15);
        // standardized pair: mean 1.5, population sd 0.5
        let z = stats::standardize(&l).unwrap();
        assert!((z[0] + 1.0).abs() < 1e-12 && (z[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zeros_take_smallest_nonzero_magnitude() {
        let r = [0.0, -0.5, 2.0, 0.0, 0.25];
        let l = log_abs_regularized(&r).unwrap();
        let expected = [0.25f64.ln(), 0.5f64.ln(), 2.0f64.ln(), 0.25f64.ln(), 0.25f64.ln()];
        for (a, b) in l.iter().zip(expected) {
            assert_eq!(*a, b);
        }
        assert!(log_abs_regularized(&[0.0, 0.0]).is_none());
    }

    #[test]
    fn unit_magnitude_returns_are_degenerate() {
        let m = DMatrix::from_vec(4, 1, vec![1.0, -1.0, 1.0, -1.0]);
        let ret = StandardizedPanel::new(m, PanelKind::Returns, vec!["X".into()], vec!["".into(); 4])
            .unwrap();
        assert!(matches!(
            log_volatility(&ret),
            Err(Error::DegenerateColumns { .. })
        ));
    }

    #[test]
    fn log_volatility_requires_returns() {
        let m = DMatrix::from_vec(4, 1, vec![1.0, -1.0, 1.0, -1.0]);
        let p = StandardizedPanel::new(m, PanelKind::Residuals, vec!["X".into()], vec!["".into(); 4])
            .unwrap();
        assert!(matches!(log_volatility(&p), Err(Error::InvalidArgument(_))));
    }

    fn arb_raw_panel() -> impl Strategy<Value = (usize, Vec<Vec<Option<f64>>>)> {
        (5usize..30, 1usize..5).prop_flat_map(|(t, n)| {
            let series = proptest::collection::vec(
                proptest::option::weighted(0.85, 1.0f64..500.0),
                t,
            );
            (Just(t), proptest::collection::vec(series, n))
        })
    }

    proptest! {
        #[test]
        fn cleaning_is_idempotent((t, mut vals) in arb_raw_panel(), p in 0.05f64..=1.0) {
            for s in vals.iter_mut() {
                if s.iter().all(Option::is_none) {
                    s[0] = Some(10.0);
                }
            }
            let tickers = (0..vals.len()).map(|i| format!("T{i}")).collect();
            let raw = PricePanel::new((0..t as i64).map(day).collect(), tickers, vals).unwrap();
            let once = clean_prices(&raw, p).unwrap();
            prop_assert!(!once.panel.has_gaps());
            let twice = clean_prices(&once.panel, p).unwrap();
            prop_assert_eq!(&twice.panel, &once.panel);
        }

        #[test]
        fn standardized_outputs_hold_invariants(
            cols in proptest::collection::vec(proptest::collection::vec(0.5f64..200.0, 12), 1..6)
        ) {
            let n = cols.len();
            let values = cols.iter().map(|c| c.iter().map(|v| Some(*v)).collect()).collect();
            let tickers = (0..n).map(|i| format!("T{i}")).collect();
            let prices = PricePanel::new((0..12).map(day).collect(), tickers, values).unwrap();
            let ret = log_returns(&prices).unwrap();
            prop_assert_eq!(ret.n_obs(), 11);
            prop_assert_eq!(ret.n_assets(), n);
            let vol = log_volatility(&ret).unwrap();
            for p in [&ret, &vol] {
                for j in 0..n {
                    let c = p.column(j);
                    prop_assert!(stats::mean(c).abs() < MEAN_TOL);
                    prop_assert!((stats::variance(c) - 1.0).abs() < VAR_TOL);
                }
            }
        }
    }
}
