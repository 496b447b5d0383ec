//! File formats: event-log CSVs, matrix CSVs, JSON documents, atomic writes.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use regionshop::gravity::{TransportMode, TripRecord};
use regionshop::grid::GeoPoint;
use regionshop::patterns::{BrowsingRecord, CheckinRecord};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::CliError;

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let io_err = |e: std::io::Error| CliError::Input(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable document");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

struct Table {
    path: PathBuf,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn read(path: &Path, expected: &[&str]) -> Result<Table, CliError> {
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let headers = rdr
            .headers()
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
            .clone();
        for (k, want) in expected.iter().enumerate() {
            if headers.get(k) != Some(*want) {
                return Err(CliError::Input(format!(
                    "{}:1: expected header `{}`, found `{}`",
                    path.display(),
                    expected.join(","),
                    headers.iter().collect::<Vec<_>>().join(",")
                )));
            }
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() < expected.len() {
                return Err(CliError::Input(format!(
                    "{}:{line}: expected {} fields, found {}",
                    path.display(),
                    expected.len(),
                    rec.len()
                )));
            }
            rows.push((line, rec));
        }
        Ok(Table {
            path: path.to_path_buf(),
            rows,
        })
    }

    fn field<T: std::str::FromStr>(
        &self,
        line: u64,
        rec: &csv::StringRecord,
        k: usize,
        name: &str,
    ) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = rec.get(k).unwrap_or("");
        raw.parse()
            .map_err(|e| CliError::Input(format!("{}:{line}: bad {name} `{raw}`: {e}", self.path.display())))
    }

    fn point(&self, line: u64, rec: &csv::StringRecord, k: usize) -> Result<GeoPoint, CliError> {
        let lat: f64 = self.field(line, rec, k, "latitude")?;
        let lon: f64 = self.field(line, rec, k + 1, "longitude")?;
        if !lat.is_finite() || !lon.is_finite() {
            return Err(CliError::Input(format!(
                "{}:{line}: non-finite coordinate",
                self.path.display()
            )));
        }
        Ok(GeoPoint { lat, lon })
    }
}

pub const BROWSING_HEADER: [&str; 2] = ["location_id", "product_category_id"];
pub const TOWER_HEADER: [&str; 3] = ["location_id", "lat", "lon"];
pub const CHECKIN_HEADER: [&str; 5] = ["user_id", "poi_category_id", "lat", "lon", "timestamp"];
pub const TRIP_HEADER: [&str; 5] = ["mode", "origin_lat", "origin_lon", "dest_lat", "dest_lon"];

pub fn read_browsing(path: &Path) -> Result<Vec<BrowsingRecord>, CliError> {
    let t = Table::read(path, &BROWSING_HEADER)?;
    t.rows
        .iter()
        .map(|(line, rec)| {
            Ok(BrowsingRecord {
                location_id: rec[0].to_string(),
                product_category_id: t.field(*line, rec, 1, "product_category_id")?,
            })
        })
        .collect()
}

pub fn read_towers(path: &Path) -> Result<HashMap<String, GeoPoint>, CliError> {
    let t = Table::read(path, &TOWER_HEADER)?;
    let mut out = HashMap::new();
    for (line, rec) in &t.rows {
        let id = rec[0].to_string();
        let p = t.point(*line, rec, 1)?;
        if out.insert(id.clone(), p).is_some() {
            return Err(CliError::Input(format!(
                "{}:{line}: duplicate location_id `{id}`",
                path.display()
            )));
        }
    }
    Ok(out)
}

pub fn read_checkins(path: &Path) -> Result<Vec<CheckinRecord>, CliError> {
    let t = Table::read(path, &CHECKIN_HEADER)?;
    t.rows
        .iter()
        .map(|(line, rec)| {
            Ok(CheckinRecord {
                user_id: rec[0].to_string(),
                poi_category_id: t.field(*line, rec, 1, "poi_category_id")?,
                point: t.point(*line, rec, 2)?,
                timestamp: t.field(*line, rec, 4, "timestamp")?,
            })
        })
        .collect()
}

pub fn read_trips(path: &Path) -> Result<Vec<TripRecord>, CliError> {
    let t = Table::read(path, &TRIP_HEADER)?;
    t.rows
        .iter()
        .map(|(line, rec)| {
            Ok(TripRecord {
                mode: t.field::<TransportMode>(*line, rec, 0, "mode")?,
                origin: t.point(*line, rec, 1)?,
                destination: t.point(*line, rec, 3)?,
            })
        })
        .collect()
}

fn csv_bytes<F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>>(fill: F) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    fill(&mut w).expect("in-memory csv");
    w.into_inner().expect("in-memory csv")
}

pub fn write_browsing(path: &Path, records: &[BrowsingRecord]) -> Result<(), CliError> {
    write_atomic(
        path,
        &csv_bytes(|w| {
            w.write_record(BROWSING_HEADER)?;
            for r in records {
                w.write_record([r.location_id.clone(), r.product_category_id.to_string()])?;
            }
            Ok(())
        }),
    )
}

pub fn write_towers(path: &Path, towers: &[(String, GeoPoint)]) -> Result<(), CliError> {
    write_atomic(
        path,
        &csv_bytes(|w| {
            w.write_record(TOWER_HEADER)?;
            for (id, p) in towers {
                w.write_record([id.clone(), p.lat.to_string(), p.lon.to_string()])?;
            }
            Ok(())
        }),
    )
}

pub fn write_checkins(path: &Path, checkins: &[CheckinRecord]) -> Result<(), CliError> {
    write_atomic(
        path,
        &csv_bytes(|w| {
            w.write_record(CHECKIN_HEADER)?;
            for c in checkins {
                w.write_record([
                    c.user_id.clone(),
                    c.poi_category_id.to_string(),
                    c.point.lat.to_string(),
                    c.point.lon.to_string(),
                    c.timestamp.to_string(),
                ])?;
            }
            Ok(())
        }),
    )
}

pub fn write_trips(path: &Path, trips: &[TripRecord]) -> Result<(), CliError> {
    write_atomic(
        path,
        &csv_bytes(|w| {
            w.write_record(TRIP_HEADER)?;
            for t in trips {
                w.write_record([
                    t.mode.to_string(),
                    t.origin.lat.to_string(),
                    t.origin.lon.to_string(),
                    t.destination.lat.to_string(),
                    t.destination.lon.to_string(),
                ])?;
            }
            Ok(())
        }),
    )
}

/// Matrix CSV: header `<key>,0,1,...`, one line per row led by its key.
/// Values use the shortest representation that parses back exactly.
pub fn write_matrix(
    path: &Path,
    key: &str,
    row_keys: Option<&[String]>,
    m: &Array2<f64>,
) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str(key);
    for j in 0..m.ncols() {
        let _ = write!(out, ",{j}");
    }
    out.push('\n');
    for (i, row) in m.rows().into_iter().enumerate() {
        match row_keys {
            Some(keys) => out.push_str(&keys[i]),
            None => {
                let _ = write!(out, "{i}");
            }
        }
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Reads a matrix CSV, returning row keys and values.
pub fn read_matrix(path: &Path) -> Result<(Vec<String>, Array2<f64>), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    let cols = match lines.next() {
        Some((_, h)) => h.split(',').count().saturating_sub(1),
        None => return Err(CliError::Input(format!("{}: empty matrix file", path.display()))),
    };
    let mut keys = Vec::new();
    let mut data = Vec::new();
    for (k, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        keys.push(parts.next().unwrap_or("").to_string());
        let before = data.len();
        for p in parts {
            let v: f64 = p.trim().parse().map_err(|e| {
                CliError::Input(format!("{}:{}: bad value `{p}`: {e}", path.display(), k + 1))
            })?;
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(CliError::Input(format!(
                "{}:{}: expected {cols} values, found {}",
                path.display(),
                k + 1,
                data.len() - before
            )));
        }
    }
    let m = Array2::from_shape_vec((keys.len(), cols), data).expect("row lengths checked");
    Ok((keys, m))
}
