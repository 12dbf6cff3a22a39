//! CSV and JSON readers and writers for the library's artifacts.

use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::baselines::{CumVarCurve, PressCurve};
use crate::detrend::MarketModel;
use crate::error::{invalid, Error, Result};
use crate::factors::{ComponentSeries, LoadingMatrix};
use crate::memory::MemoryCurve;
use crate::panel::{PanelKind, PricePanel, StandardizedPanel};
use crate::portfolio::SectorProjection;
use crate::spectra::{EigenSystem, HistogramBin};

fn parse_date(s: &str, line: usize) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|e| Error::Parse(format!("line {line}: bad date `{s}`: {e}")))
}

fn parse_f64(s: &str, what: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("line {line}: bad {what} `{s}`: {e}")))
}

/// Reads long-format prices with header `date,ticker,close`.
pub fn read_prices<R: Read>(reader: R) -> Result<PricePanel> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers != ["date", "ticker", "close"] {
        return Err(Error::Parse(format!(
            "expected header `date,ticker,close`, found `{}`",
            headers.join(",")
        )));
    }
    let mut obs = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != 3 {
            return Err(Error::Parse(format!("line {line}: expected 3 fields")));
        }
        let close = parse_f64(&rec[2], "price", line)?;
        if !(close > 0.0) || !close.is_finite() {
            return Err(Error::Parse(format!("line {line}: price {close} must be positive")));
        }
        obs.push((parse_date(&rec[0], line)?, rec[1].trim().to_string(), close));
    }
    if obs.is_empty() {
        return Err(Error::EmptyPanel("no price rows".into()));
    }
    PricePanel::from_observations(obs)
}

pub fn read_prices_file(path: &Path) -> Result<PricePanel> {
    read_prices(std::fs::File::open(path)?)
}

/// Writes a price panel in the long format, skipping missing observations.
pub fn write_prices<W: Write>(writer: W, p: &PricePanel) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "ticker", "close"])?;
    for (d, date) in p.dates().iter().enumerate() {
        for (j, t) in p.tickers().iter().enumerate() {
            if let Some(v) = p.series(j)[d] {
                w.write_record([date.to_string(), t.clone(), v.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Wide panel: a `date` column followed by one column per ticker.
pub fn write_panel<W: Write>(writer: W, x: &StandardizedPanel) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string()];
    header.extend(x.column_ids().iter().cloned());
    w.write_record(&header)?;
    let m = x.matrix();
    for (t, label) in x.row_labels().iter().enumerate() {
        let mut row = Vec::with_capacity(m.ncols() + 1);
        row.push(label.clone());
        row.extend((0..m.ncols()).map(|j| m[(t, j)].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a wide panel and checks the standardization invariants.
pub fn read_panel<R: Read>(reader: R, kind: PanelKind) -> Result<StandardizedPanel> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers.first().map(String::as_str) != Some("date") || headers.len() < 2 {
        return Err(Error::Parse("panel header must be `date,<ticker>,...`".into()));
    }
    let ids = headers[1..].to_vec();
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(Error::Parse(format!("line {}: expected {} fields", i + 2, headers.len())));
        }
        labels.push(rec[0].to_string());
        rows.push(
            rec.iter()
                .skip(1)
                .map(|s| parse_f64(s, "value", i + 2))
                .collect::<Result<_>>()?,
        );
    }
    if rows.is_empty() {
        return Err(Error::EmptyPanel("panel has no rows".into()));
    }
    let m = DMatrix::from_fn(rows.len(), ids.len(), |t, j| rows[t][j]);
    StandardizedPanel::new(m, kind, ids, labels)
}

pub fn read_panel_file(path: &Path, kind: PanelKind) -> Result<StandardizedPanel> {
    read_panel(std::fs::File::open(path)?, kind)
}

pub fn write_market_model<W: Write>(writer: W, tickers: &[String], m: &MarketModel) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["ticker", "beta0", "alpha0"])?;
    for (i, t) in tickers.iter().enumerate() {
        w.write_record([t.clone(), m.beta0[i].to_string(), m.alpha0[i].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_loadings<W: Write>(writer: W, l: &LoadingMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["ticker".to_string(), "upsilon".to_string()];
    header.extend((1..=l.n_factors()).map(|p| format!("beta_{p}")));
    w.write_record(&header)?;
    for (i, t) in l.tickers.iter().enumerate() {
        let mut row = vec![t.clone(), l.penalty[i].to_string()];
        row.extend((0..l.n_factors()).map(|p| l.betas[(i, p)].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_factors<W: Write>(writer: W, labels: &[String], f: &ComponentSeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string()];
    header.extend((1..=f.n_factors()).map(|p| format!("I_{p}")));
    w.write_record(&header)?;
    for (t, label) in labels.iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend((0..f.n_factors()).map(|p| f.values[(t, p)].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_memory_curve<W: Write>(writer: W, c: &MemoryCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["m", "zeta"])?;
    for (m, z) in c.zeta.iter().enumerate() {
        w.write_record([m.to_string(), z.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Log-log points of the memory curve for `m >= 1`.
pub fn write_log_memory_curve<W: Write>(writer: W, c: &MemoryCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["m", "ln_m", "ln_zeta"])?;
    for (m, z) in c.zeta.iter().enumerate().skip(1) {
        w.write_record([m.to_string(), (m as f64).ln().to_string(), z.ln().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-asset integrated proxies, one column per `m`.
pub fn write_eta_matrix<W: Write>(writer: W, c: &MemoryCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["ticker".to_string()];
    header.extend((0..c.eta.ncols()).map(|m| format!("eta_{m}")));
    w.write_record(&header)?;
    for (i, t) in c.tickers.iter().enumerate() {
        let mut row = vec![t.clone()];
        row.extend((0..c.eta.ncols()).map(|m| c.eta[(i, m)].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_histogram<W: Write>(writer: W, bins: &[HistogramBin]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for b in bins {
        w.serialize(b)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_eigenvalues<W: Write>(writer: W, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["rank", "eigenvalue"])?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([(i + 1).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cumvar<W: Write>(writer: W, c: &CumVarCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["m", "lambda"])?;
    for (i, v) in c.lambda_curve.iter().enumerate() {
        w.write_record([(i + 1).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_press<W: Write>(writer: W, c: &PressCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["m", "press"])?;
    for (m, v) in c.press.iter().enumerate() {
        w.write_record([m.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ground_truth<W: Write>(writer: W, tickers: &[String], membership: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["ticker", "cluster"])?;
    for (t, c) in tickers.iter().zip(membership) {
        w.write_record([t.clone(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Two-column `key,value` CSV with the given header, e.g. `ticker,group`.
pub fn read_pairs<R: Read>(reader: R, header: [&str; 2]) -> Result<Vec<(String, String)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let h: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if h != header {
        return Err(Error::Parse(format!(
            "expected header `{}`, found `{}`",
            header.join(","),
            h.join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(invalid("expected two fields per row"));
        }
        out.push((rec[0].trim().to_string(), rec[1].trim().to_string()));
    }
    Ok(out)
}

/// Leading eigenvectors as columns `w_1..w_count`, one row per ticker.
pub fn write_eigenvectors<W: Write>(writer: W, tickers: &[String], eigs: &EigenSystem, count: usize) -> Result<()> {
    if count > eigs.dim() || tickers.len() != eigs.dim() {
        return Err(invalid(format!(
            "{count} eigenvectors of dimension {} for {} tickers",
            eigs.dim(),
            tickers.len()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["ticker".to_string()];
    header.extend((1..=count).map(|p| format!("w_{p}")));
    w.write_record(&header)?;
    for (i, t) in tickers.iter().enumerate() {
        let mut row = vec![t.clone()];
        row.extend((0..count).map(|p| eigs.vector(p)[i].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_weights<W: Write>(writer: W, tickers: &[String], weights: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["ticker", "weight"])?;
    for (t, v) in tickers.iter().zip(weights) {
        w.write_record([t.clone(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_projection<W: Write>(writer: W, p: &SectorProjection) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["group", "rho", "raw"])?;
    for ((g, r), raw) in p.groups.iter().zip(&p.rho).zip(&p.raw) {
        w.write_record([g.clone(), r.to_string(), raw.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write, T: Serialize>(writer: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(writer, value)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prices_round_trip() {
        let text = "date,ticker,close\n2020-01-02,A,10\n2020-01-03,A,11\n2020-01-03,B,5\n";
        let p = read_prices(text.as_bytes()).unwrap();
        assert_eq!(p.n_dates(), 2);
        assert_eq!(p.series(1), &[None, Some(5.0)]);
        let mut out = Vec::new();
        write_prices(&mut out, &p).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn bad_price_rows() {
        assert!(read_prices("date,ticker,price\n".as_bytes()).is_err());
        assert!(read_prices("date,ticker,close\n2020-13-01,A,1\n".as_bytes()).is_err());
        assert!(read_prices("date,ticker,close\n2020-01-01,A,-1\n".as_bytes()).is_err());
        assert!(read_prices("date,ticker,close\n".as_bytes()).is_err());
    }

    #[test]
    fn panel_round_trip() {
        let m = DMatrix::from_vec(4, 2, vec![1.0, -1.0, 1.0, -1.0, 2.0, 0.0, -2.0, 0.0]);
        let x = StandardizedPanel::from_raw(
            &m,
            PanelKind::Returns,
            vec!["A".into(), "B".into()],
            (1..=4).map(|d| format!("2020-01-0{d}")).collect(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_panel(&mut buf, &x).unwrap();
        let y = read_panel(buf.as_slice(), PanelKind::Returns).unwrap();
        assert_eq!(x, y);
    }
}
