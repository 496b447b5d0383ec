//! The region lattice.
//!
//! A city is partitioned into `n_rows × n_cols` square cells of side
//! `cell_size_km`. Regions are indexed row-major from the south-west corner:
//! `index = row * n_cols + col`. Cells are half-open, `[south, north) ×
//! [west, east)`, so every interior point belongs to exactly one region and
//! points on the outer north/east edge belong to none.
//!
//! Two coordinate modes are supported. In geographic mode points are
//! latitude/longitude degrees and kilometres are converted with the
//! equirectangular approximation at `reference_lat`. In planar mode the
//! origin is `(0, 0)` and a [`GeoPoint`] is read as `(north_km, east_km)`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kilometres per degree of latitude.
pub const KM_PER_DEG: f64 = 111.32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let p = GeoPoint { lat, lon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lat.is_finite() || !self.lon.is_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite coordinate ({}, {})",
                self.lat, self.lon
            )));
        }
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::InvalidInput(format!(
                "coordinate ({}, {}) out of range",
                self.lat, self.lon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridMode {
    Geographic,
    Planar,
}

/// Serializable grid description, as found in run configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub mode: GridMode,
    #[serde(default)]
    pub origin_lat: f64,
    #[serde(default)]
    pub origin_lon: f64,
    pub cell_size_km: f64,
    pub n_rows: usize,
    pub n_cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_lat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionGrid {
    mode: GridMode,
    origin: GeoPoint,
    cell_size_km: f64,
    n_rows: usize,
    n_cols: usize,
    reference_lat: f64,
    // cell extent in coordinate units
    cell_dy: f64,
    cell_dx: f64,
}

impl RegionGrid {
    pub fn planar(cell_size_km: f64, n_rows: usize, n_cols: usize) -> Result<Self> {
        Self::build(
            GridMode::Planar,
            GeoPoint { lat: 0.0, lon: 0.0 },
            cell_size_km,
            n_rows,
            n_cols,
            0.0,
        )
    }

    pub fn geographic(
        origin: GeoPoint,
        cell_size_km: f64,
        n_rows: usize,
        n_cols: usize,
        reference_lat: f64,
    ) -> Result<Self> {
        Self::build(
            GridMode::Geographic,
            origin,
            cell_size_km,
            n_rows,
            n_cols,
            reference_lat,
        )
    }

    pub fn from_spec(spec: &GridSpec) -> Result<Self> {
        match spec.mode {
            GridMode::Planar => Self::planar(spec.cell_size_km, spec.n_rows, spec.n_cols),
            GridMode::Geographic => Self::geographic(
                GeoPoint::new(spec.origin_lat, spec.origin_lon)?,
                spec.cell_size_km,
                spec.n_rows,
                spec.n_cols,
                spec.reference_lat.unwrap_or(spec.origin_lat),
            ),
        }
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            mode: self.mode,
            origin_lat: self.origin.lat,
            origin_lon: self.origin.lon,
            cell_size_km: self.cell_size_km,
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            reference_lat: match self.mode {
                GridMode::Geographic => Some(self.reference_lat),
                GridMode::Planar => None,
            },
        }
    }

    fn build(
        mode: GridMode,
        origin: GeoPoint,
        cell_size_km: f64,
        n_rows: usize,
        n_cols: usize,
        reference_lat: f64,
    ) -> Result<Self> {
        origin.validate()?;
        if !(cell_size_km.is_finite() && cell_size_km > 0.0) {
            return Err(Error::InvalidInput(format!(
                "cell_size_km must be positive, got {cell_size_km}"
            )));
        }
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::InvalidInput(format!(
                "grid must have at least one cell, got {n_rows}x{n_cols}"
            )));
        }
        let (cell_dy, cell_dx) = match mode {
            GridMode::Planar => (cell_size_km, cell_size_km),
            GridMode::Geographic => {
                if !reference_lat.is_finite() || reference_lat.abs() >= 89.0 {
                    return Err(Error::InvalidInput(format!(
                        "reference_lat {reference_lat} unusable for km conversion"
                    )));
                }
                let dlat = cell_size_km / KM_PER_DEG;
                let dlon = cell_size_km / (KM_PER_DEG * reference_lat.to_radians().cos());
                (dlat, dlon)
            }
        };
        let grid = RegionGrid {
            mode,
            origin,
            cell_size_km,
            n_rows,
            n_cols,
            reference_lat,
            cell_dy,
            cell_dx,
        };
        let (north, east) = grid.north_east();
        if mode == GridMode::Geographic && (north > 90.0 || east > 180.0) {
            return Err(Error::InvalidInput(
                "grid extends past the poles or antimeridian".into(),
            ));
        }
        Ok(grid)
    }

    pub fn mode(&self) -> GridMode {
        self.mode
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    pub fn cell_size_km(&self) -> f64 {
        self.cell_size_km
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Region count `r`.
    pub fn len(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.n_cols + col
    }

    pub fn row_col(&self, index: usize) -> (usize, usize) {
        (index / self.n_cols, index % self.n_cols)
    }

    fn north_east(&self) -> (f64, f64) {
        (
            self.origin.lat + self.n_rows as f64 * self.cell_dy,
            self.origin.lon + self.n_cols as f64 * self.cell_dx,
        )
    }

    /// Region containing `p`, or `None` outside the bounding box.
    pub fn region_of(&self, p: GeoPoint) -> Option<usize> {
        if !p.lat.is_finite() || !p.lon.is_finite() {
            return None;
        }
        let fy = (p.lat - self.origin.lat) / self.cell_dy;
        let fx = (p.lon - self.origin.lon) / self.cell_dx;
        if fy < 0.0 || fx < 0.0 {
            return None;
        }
        let (row, col) = (fy.floor(), fx.floor());
        if row >= self.n_rows as f64 || col >= self.n_cols as f64 {
            return None;
        }
        Some(self.index(row as usize, col as usize))
    }

    /// `(south, north, west, east)` of a cell in coordinate units.
    pub fn cell_extent(&self, index: usize) -> (f64, f64, f64, f64) {
        let (row, col) = self.row_col(index);
        let south = self.origin.lat + row as f64 * self.cell_dy;
        let west = self.origin.lon + col as f64 * self.cell_dx;
        (south, south + self.cell_dy, west, west + self.cell_dx)
    }

    pub fn center(&self, index: usize) -> GeoPoint {
        let (s, n, w, e) = self.cell_extent(index);
        GeoPoint {
            lat: 0.5 * (s + n),
            lon: 0.5 * (w + e),
        }
    }

    /// Point at fractional offsets `(fy, fx) ∈ [0,1)²` inside a cell.
    pub fn point_in_cell(&self, index: usize, fy: f64, fx: f64) -> GeoPoint {
        let (s, _, w, _) = self.cell_extent(index);
        GeoPoint {
            lat: s + fy * self.cell_dy,
            lon: w + fx * self.cell_dx,
        }
    }

    /// Cell center as `(east_km, north_km)` from the origin.
    pub fn center_km(&self, index: usize) -> (f64, f64) {
        let c = self.center(index);
        match self.mode {
            GridMode::Planar => (c.lon, c.lat),
            GridMode::Geographic => {
                let dy = KM_PER_DEG * (c.lat - self.origin.lat);
                let dx = KM_PER_DEG * self.reference_lat.to_radians().cos() * (c.lon - self.origin.lon);
                (dx, dy)
            }
        }
    }

    pub fn center_distance(&self) -> DistanceMatrix {
        let r = self.len();
        let centers: Vec<(f64, f64)> = (0..r).map(|i| self.center_km(i)).collect();
        let mut d = Array2::<f64>::zeros((r, r));
        for i in 0..r {
            for j in (i + 1)..r {
                let dx = centers[i].0 - centers[j].0;
                let dy = centers[i].1 - centers[j].1;
                let v = dx.hypot(dy);
                d[[i, j]] = v;
                d[[j, i]] = v;
            }
        }
        DistanceMatrix(d)
    }

    /// The up-to-eight cells sharing an edge or a corner with `index`, ascending.
    pub fn neighbors(&self, index: usize) -> Result<Vec<usize>> {
        if index >= self.len() {
            return Err(Error::RegionOutOfRange {
                index,
                count: self.len(),
            });
        }
        let (row, col) = self.row_col(index);
        let mut out = Vec::with_capacity(8);
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (nr, nc) = (row as i64 + dr, col as i64 + dc);
                if nr >= 0 && nc >= 0 && (nr as usize) < self.n_rows && (nc as usize) < self.n_cols {
                    out.push(self.index(nr as usize, nc as usize));
                }
            }
        }
        Ok(out)
    }
}

/// Symmetric center-to-center distances in km, zero on the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(pub Array2<f64>);

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[[i, j]]
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }
}
