use std::path::Path;

use super::{Ingested, Point, RawTrajectory};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct PortoOptions {
    /// Seconds between consecutive polyline points.
    pub sample_interval: f64,
}

impl Default for PortoOptions {
    fn default() -> Self {
        PortoOptions { sample_interval: 15.0 }
    }
}

/// Reads the Porto taxi CSV (header row, `POLYLINE` column holding a JSON
/// array of `[lon, lat]`). Timestamps start at the row's `TIMESTAMP` (or 0
/// when absent) and advance by the sampling interval.
pub fn ingest_porto_csv(path: &Path, opts: PortoOptions) -> Result<Ingested> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_to_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_to_error(path, e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let poly_col = col("POLYLINE").ok_or_else(|| Error::Format(format!("{}: no POLYLINE column", path.display())))?;
    let id_col = col("TRIP_ID");
    let ts_col = col("TIMESTAMP");

    let mut out = Ingested::default();
    for (row_no, record) in reader.records().enumerate() {
        let parsed = record
            .map_err(|e| e.to_string())
            .and_then(|rec| parse_row(&rec, row_no, poly_col, id_col, ts_col, opts.sample_interval));
        match parsed {
            Ok(t) => out.trajectories.push(t),
            Err(reason) => {
                log::warn!("{}: skipping row {}: {reason}", path.display(), row_no + 1);
                out.skipped += 1;
            }
        }
    }
    if out.trajectories.is_empty() {
        return Err(Error::Format(format!(
            "{}: no parseable trajectories ({} rows skipped)",
            path.display(),
            out.skipped
        )));
    }
    if out.skipped > 0 {
        log::warn!("{}: {} malformed rows skipped", path.display(), out.skipped);
    }
    Ok(out)
}

fn parse_row(
    rec: &csv::StringRecord,
    row_no: usize,
    poly_col: usize,
    id_col: Option<usize>,
    ts_col: Option<usize>,
    dt: f64,
) -> std::result::Result<RawTrajectory, String> {
    let poly = rec.get(poly_col).ok_or("missing polyline field")?;
    let coords: Vec<[f64; 2]> = serde_json::from_str(poly).map_err(|e| format!("bad polyline: {e}"))?;
    if coords.is_empty() {
        return Err("empty polyline".into());
    }
    let t0 = match ts_col.and_then(|c| rec.get(c)) {
        Some(s) if !s.trim().is_empty() => s.trim().parse::<f64>().map_err(|e| format!("bad timestamp: {e}"))?,
        _ => 0.0,
    };
    let id = id_col
        .and_then(|c| rec.get(c))
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| format!("row{}", row_no + 1));
    let points = coords
        .iter()
        .enumerate()
        .map(|(i, c)| Point::new(c[0], c[1], t0 + dt * i as f64))
        .collect();
    let t = RawTrajectory::new(id, points);
    t.validate().map_err(|e| e.to_string())?;
    Ok(t)
}

fn csv_to_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}
