use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{RunToFailureSeries, SyntheticBearing, VibrationRecord};
use crate::error::{io_err, GmfeError, Result};

/// 25.6 kHz for 0.1 s.
pub const FEMTO_SAMPLES: usize = 2560;
/// 25.6 kHz for 1.28 s.
pub const XJTU_SAMPLES: usize = 32768;

const SIDECAR: &str = "spec.json";

/// Files in `dir` whose name matches `prefix<digits>.csv`, sorted by number.
fn numbered_files(dir: &Path, prefix: &str) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(stem) = name.strip_prefix(prefix).and_then(|s| s.strip_suffix(".csv")) else {
            continue;
        };
        if let Ok(k) = stem.parse::<usize>() {
            out.push((k, path));
        }
    }
    if out.is_empty() {
        return Err(GmfeError::Ingest {
            path: dir.to_path_buf(),
            detail: "no records found".into(),
        });
    }
    out.sort();
    let (first, last) = (out[0].0, out[out.len() - 1].0);
    if out.len() != last - first + 1 {
        let present: std::collections::BTreeSet<usize> = out.iter().map(|(k, _)| *k).collect();
        let missing: Vec<usize> = (first..=last).filter(|k| !present.contains(k)).collect();
        let detail = if missing.is_empty() {
            "duplicate record numbers".to_string()
        } else {
            format!("non-contiguous record numbers, missing {missing:?}")
        };
        return Err(GmfeError::Ingest {
            path: dir.to_path_buf(),
            detail,
        });
    }
    Ok(out)
}

fn sniff_delimiter(path: &Path) -> Result<u8> {
    let mut first = String::new();
    BufReader::new(fs::File::open(path).map_err(io_err(path))?)
        .read_line(&mut first)
        .map_err(io_err(path))?;
    Ok(if first.contains(';') && !first.contains(',') {
        b';'
    } else {
        b','
    })
}

/// Read two numeric columns (`h_col`, `v_col`) from a CSV with exactly
/// `columns` fields per row and exactly `rows` data rows.
fn read_channels(
    path: &Path,
    has_header: bool,
    columns: usize,
    (h_col, v_col): (usize, usize),
    rows: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .delimiter(sniff_delimiter(path)?)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| GmfeError::Ingest {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    let mut h = Vec::with_capacity(rows);
    let mut v = Vec::with_capacity(rows);
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| GmfeError::Ingest {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        if rec.len() != columns {
            return Err(GmfeError::Schema {
                path: path.to_path_buf(),
                detail: format!("row {} has {} columns, expected {columns}", row + 1, rec.len()),
            });
        }
        let cell = |c: usize| -> Result<f64> {
            let s = &rec[c];
            s.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| GmfeError::Parse {
                    path: path.to_path_buf(),
                    row: row + 1,
                    column: c + 1,
                    detail: format!("not a finite number: {s:?}"),
                })
        };
        h.push(cell(h_col)?);
        v.push(cell(v_col)?);
    }
    if h.len() != rows {
        return Err(GmfeError::Ingest {
            path: path.to_path_buf(),
            detail: format!("{} rows, expected {rows}", h.len()),
        });
    }
    Ok((h, v))
}

/// `Bearing<c>_<k>` directory names carry the operating condition.
fn condition_from_dir(dir: &Path) -> u32 {
    dir.file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_prefix("Bearing"))
        .and_then(|n| n.split('_').next())
        .and_then(|c| c.parse().ok())
        .unwrap_or(0)
}

fn bearing_id(dir: &Path) -> String {
    dir.file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("bearing")
        .to_string()
}

fn load_numbered(
    dir: &Path,
    prefix: &str,
    read: impl Fn(&Path) -> Result<(Vec<f64>, Vec<f64>)> + Sync,
) -> Result<RunToFailureSeries> {
    let files = numbered_files(dir, prefix)?;
    let records = files
        .par_iter()
        .enumerate()
        .map(|(i, (_, path))| {
            let (h, v) = read(path)?;
            VibrationRecord::new(i, h, v).map_err(|e| GmfeError::Ingest {
                path: path.clone(),
                detail: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    RunToFailureSeries::new(bearing_id(dir), condition_from_dir(dir), records)
}

/// One bearing directory of `acc_NNNNN.csv` files (hour, minute, second,
/// microsecond, horizontal, vertical; no header).
pub fn load_femto(dir: &Path) -> Result<RunToFailureSeries> {
    load_numbered(dir, "acc_", |p| read_channels(p, false, 6, (4, 5), FEMTO_SAMPLES))
}

/// One bearing directory of `N.csv` files (header row, then horizontal and
/// vertical columns).
pub fn load_xjtu(dir: &Path) -> Result<RunToFailureSeries> {
    load_numbered(dir, "", |p| read_channels(p, true, 2, (0, 1), XJTU_SAMPLES))
}

/// Write `record_NNNNN.csv` files plus a `spec.json` sidecar.
pub fn save_series_dir(series: &RunToFailureSeries, bearing: &SyntheticBearing, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    series.records.par_iter().try_for_each(|r| {
        let path = dir.join(format!("record_{:05}.csv", r.index));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(w, "horizontal,vertical")?;
            for (h, v) in r.horizontal.iter().zip(&r.vertical) {
                writeln!(w, "{h},{v}")?;
            }
            w.flush()
        };
        write().map_err(io_err(&path))
    })?;
    let sidecar = dir.join(SIDECAR);
    fs::write(&sidecar, serde_json::to_string_pretty(bearing)?).map_err(io_err(&sidecar))
}

/// Inverse of [`save_series_dir`].
pub fn load_series_dir(dir: &Path) -> Result<(RunToFailureSeries, SyntheticBearing)> {
    let sidecar = dir.join(SIDECAR);
    let text = fs::read_to_string(&sidecar).map_err(io_err(&sidecar))?;
    let bearing: SyntheticBearing = serde_json::from_str(&text)?;
    let n = bearing.spec.n_samples;
    let mut series = load_numbered(dir, "record_", |p| read_channels(p, true, 2, (0, 1), n))?;
    series.bearing_id = bearing.bearing_id.clone();
    series.condition_id = bearing.condition_id;
    Ok((series, bearing))
}
