//! Per-region value maps as CSV, with an optional plain graymap.

use std::fmt::Write as _;
use std::path::Path;

use regionshop::grid::RegionGrid;

use crate::error::CliError;
use crate::io::write_atomic;

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub name: String,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn new(name: impl Into<String>, values: Vec<f64>, grid: &RegionGrid) -> Result<Self, CliError> {
        let name = name.into();
        if values.len() != grid.len() {
            return Err(CliError::Input(format!(
                "heatmap `{name}` has {} values for {} regions",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CliError::Numerical(format!(
                "heatmap `{name}`: non-finite value at region {i}"
            )));
        }
        Ok(Heatmap { name, values })
    }

    /// `row,col,center_lat,center_lon,value`; planar grids put km offsets
    /// (north, east) in the center columns.
    pub fn to_csv(&self, grid: &RegionGrid) -> String {
        let mut out = String::from("row,col,center_lat,center_lon,value\n");
        for (i, v) in self.values.iter().enumerate() {
            let (row, col) = grid.row_col(i);
            let c = grid.center(i);
            let _ = writeln!(out, "{row},{col},{},{},{v}", c.lat, c.lon);
        }
        out
    }

    /// Plain (P2) graymap, north up, values min-max scaled to 0..=255.
    pub fn to_pgm(&self, grid: &RegionGrid) -> String {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let mut out = format!("P2\n# {}\n{} {}\n255\n", self.name, grid.n_cols(), grid.n_rows());
        for row in (0..grid.n_rows()).rev() {
            let line: Vec<String> = (0..grid.n_cols())
                .map(|col| {
                    let v = self.values[grid.index(row, col)];
                    let level = if span > 0.0 {
                        ((v - lo) / span * 255.0).round()
                    } else {
                        0.0
                    };
                    (level as u8).to_string()
                })
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, dir: &Path, grid: &RegionGrid, pgm: bool) -> Result<(), CliError> {
        write_atomic(
            &dir.join(format!("{}.csv", self.name)),
            self.to_csv(grid).as_bytes(),
        )?;
        if pgm {
            write_atomic(
                &dir.join(format!("{}.pgm", self.name)),
                self.to_pgm(grid).as_bytes(),
            )?;
        }
        Ok(())
    }
}
