//! Gravity-model interactions between regions.
//!
//! Observed trips are binned into origin/destination flow tables, the law
//! `q_ij = c · O_i^a · D_j^b · exp(−g · dis_ij)` is fitted by least squares in
//! log space, and the fitted law is evaluated into one interaction matrix per
//! transport mode. The regularizer consumes the column-normalized,
//! mode-averaged inflow weights produced by [`combined_weights`].

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DistanceMatrix, GeoPoint, RegionGrid};
use crate::ols;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportMode {
    Bus,
    Taxi,
}

impl TransportMode {
    pub const ALL: [TransportMode; 2] = [TransportMode::Taxi, TransportMode::Bus];

    pub fn as_str(&self) -> &'static str {
        match self {
            TransportMode::Bus => "bus",
            TransportMode::Taxi => "taxi",
        }
    }
}

impl fmt::Display for TransportMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransportMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bus" => Ok(TransportMode::Bus),
            "taxi" => Ok(TransportMode::Taxi),
            other => Err(Error::InvalidInput(format!("unknown transport mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub mode: TransportMode,
    pub origin: GeoPoint,
    pub destination: GeoPoint,
}

/// Trip counts between regions with their margins.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTable {
    q: Array2<f64>,
    origin: Array1<f64>,
    dest: Array1<f64>,
}

impl FlowTable {
    /// Builds a table from a square matrix of counts; margins are derived.
    pub fn from_counts(q: Array2<f64>) -> Result<Self> {
        if q.nrows() != q.ncols() {
            return Err(Error::dims("flow matrix", "square", format!("{:?}", q.dim())));
        }
        if q.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(
                "flow counts must be finite and non-negative".into(),
            ));
        }
        let origin = q.sum_axis(ndarray::Axis(1));
        let dest = q.sum_axis(ndarray::Axis(0));
        Ok(FlowTable { q, origin, dest })
    }

    pub fn q(&self) -> &Array2<f64> {
        &self.q
    }

    /// Departures `O_i`.
    pub fn origin(&self) -> &Array1<f64> {
        &self.origin
    }

    /// Arrivals `D_j`.
    pub fn dest(&self) -> &Array1<f64> {
        &self.dest
    }

    pub fn n_regions(&self) -> usize {
        self.q.nrows()
    }

    pub fn total(&self) -> f64 {
        self.origin.sum()
    }
}

/// Counts trips of `mode` whose both endpoints fall inside the grid.
pub fn build_flows(trips: &[TripRecord], grid: &RegionGrid, mode: TransportMode) -> FlowTable {
    let r = grid.len();
    let mut q = Array2::<f64>::zeros((r, r));
    for t in trips.iter().filter(|t| t.mode == mode) {
        if let (Some(i), Some(j)) = (grid.region_of(t.origin), grid.region_of(t.destination)) {
            q[[i, j]] += 1.0;
        }
    }
    FlowTable::from_counts(q).expect("counts are square and non-negative")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GravityParams {
    pub a: f64,
    pub b: f64,
    /// Distance decay per km.
    pub g: f64,
    pub ln_c: f64,
    pub mode: TransportMode,
    #[serde(default)]
    pub n_pairs_used: usize,
}

impl GravityParams {
    pub fn c(&self) -> f64 {
        self.ln_c.exp()
    }
}

const REGRESSORS: [&str; 4] = ["intercept", "ln_o", "ln_d", "dis"];
const MIN_PAIRS: usize = 4;

/// Log-linear least squares over all pairs with positive flow, using the
/// table's own margins as masses.
pub fn fit_gravity(flows: &FlowTable, dis: &DistanceMatrix, mode: TransportMode) -> Result<GravityParams> {
    fit_gravity_with_masses(flows.q(), flows.origin(), flows.dest(), dis, mode)
}

/// As [`fit_gravity`] with explicitly supplied masses.
pub fn fit_gravity_with_masses(
    q: &Array2<f64>,
    origin: &Array1<f64>,
    dest: &Array1<f64>,
    dis: &DistanceMatrix,
    mode: TransportMode,
) -> Result<GravityParams> {
    let r = q.nrows();
    if q.ncols() != r || origin.len() != r || dest.len() != r || dis.len() != r {
        return Err(Error::dims(
            "flow, mass and distance sizes",
            r,
            format!(
                "{}x{}, {}, {}, {}",
                q.nrows(),
                q.ncols(),
                origin.len(),
                dest.len(),
                dis.len()
            ),
        ));
    }
    let mut rows: Vec<[f64; 4]> = Vec::new();
    let mut y: Vec<f64> = Vec::new();
    for i in 0..r {
        for j in 0..r {
            let v = q[[i, j]];
            if v > 0.0 && origin[i] > 0.0 && dest[j] > 0.0 {
                rows.push([1.0, origin[i].ln(), dest[j].ln(), dis.get(i, j)]);
                y.push(v.ln());
            }
        }
    }
    if rows.len() < MIN_PAIRS {
        return Err(Error::TooFewPairs {
            needed: MIN_PAIRS,
            found: rows.len(),
        });
    }
    let x = Array2::from_shape_fn((rows.len(), 4), |(k, c)| rows[k][c]);
    let beta = ols::least_squares(&x, &Array1::from(y), &REGRESSORS)?;
    Ok(GravityParams {
        a: beta[1],
        b: beta[2],
        g: -beta[3],
        ln_c: beta[0],
        mode,
        n_pairs_used: rows.len(),
    })
}

/// Non-negative `r × r` interaction estimates for one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix(pub Array2<f64>);

impl InteractionMatrix {
    pub fn n_regions(&self) -> usize {
        self.0.nrows()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        InteractionMatrix(self.0.mapv(|v| v * factor))
    }
}

pub fn interaction_matrix(
    params: &GravityParams,
    flows: &FlowTable,
    dis: &DistanceMatrix,
) -> Result<InteractionMatrix> {
    interaction_from_masses(params, flows.origin(), flows.dest(), dis)
}

/// `Q_ij = c · O_i^a · D_j^b · exp(−g · dis_ij)`, with `0^a = 0` for `a > 0`.
pub fn interaction_from_masses(
    params: &GravityParams,
    origin: &Array1<f64>,
    dest: &Array1<f64>,
    dis: &DistanceMatrix,
) -> Result<InteractionMatrix> {
    let r = dis.len();
    if origin.len() != r || dest.len() != r {
        return Err(Error::dims(
            "mass vectors",
            r,
            format!("{}, {}", origin.len(), dest.len()),
        ));
    }
    for (name, v) in [
        ("a", params.a),
        ("b", params.b),
        ("g", params.g),
        ("ln_c", params.ln_c),
    ] {
        if !v.is_finite() {
            return Err(Error::Domain(format!("gravity parameter {name} is not finite")));
        }
    }
    if origin
        .iter()
        .chain(dest.iter())
        .any(|m| !m.is_finite() || *m < 0.0)
    {
        return Err(Error::Domain("masses must be finite and non-negative".into()));
    }
    let has_zero_o = origin.iter().any(|&o| o == 0.0);
    let has_zero_d = dest.iter().any(|&d| d == 0.0);
    if (has_zero_o && params.a <= 0.0) || (has_zero_d && params.b <= 0.0) {
        return Err(Error::Domain(format!(
            "zero mass with non-positive exponent (a = {}, b = {})",
            params.a, params.b
        )));
    }
    let c = params.ln_c.exp();
    let o_pow = origin.mapv(|o| if o == 0.0 { 0.0 } else { o.powf(params.a) });
    let d_pow = dest.mapv(|d| if d == 0.0 { 0.0 } else { d.powf(params.b) });
    let q = Array2::from_shape_fn((r, r), |(i, j)| {
        c * o_pow[i] * d_pow[j] * (-params.g * dis.get(i, j)).exp()
    });
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("interaction overflowed".into()));
    }
    Ok(InteractionMatrix(q))
}

/// Inflow weights: column `i` distributes region `i`'s attention over the
/// regions `j` it is pulled toward; `W[(j, i)]` is the weight of `j`. Every
/// column sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedWeightMatrix(pub Array2<f64>);

impl CombinedWeightMatrix {
    pub fn n_regions(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn max_column_sum_error(&self) -> f64 {
        self.0
            .columns()
            .into_iter()
            .map(|c| (c.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Resolution of the column weights, relative to the column maximum.
const WEIGHT_QUANTUM_BITS: i32 = 20;

/// Normalizes an inflow column to sum one. Entries are first snapped to a
/// `2^-20` grid relative to the column maximum and then normalized with exact
/// integer sums, so the result is unchanged when the whole column is
/// multiplied by a positive constant. Returns `None` for an all-zero column.
pub fn normalize_inflow(column: ArrayView1<f64>) -> Option<Array1<f64>> {
    let max = column.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 || !max.is_finite() {
        return None;
    }
    let unit = (2.0f64).powi(WEIGHT_QUANTUM_BITS);
    let ticks = column.mapv(|v| ((v.max(0.0) / max) * unit).round());
    let total: f64 = ticks.sum();
    Some(ticks.mapv(|t| t / total))
}

/// Averages the per-mode normalized inflow columns. A mode with no inflow to
/// a region is skipped; when neither has any, the column falls back to a
/// uniform distribution over the region's lattice neighbours.
pub fn combined_weights(
    q_taxi: &InteractionMatrix,
    q_bus: &InteractionMatrix,
    grid: &RegionGrid,
) -> Result<CombinedWeightMatrix> {
    let r = grid.len();
    if q_taxi.0.dim() != (r, r) || q_bus.0.dim() != (r, r) {
        return Err(Error::dims(
            "interaction matrices",
            format!("{r}x{r}"),
            format!("{:?} and {:?}", q_taxi.0.dim(), q_bus.0.dim()),
        ));
    }
    let mut w = Array2::<f64>::zeros((r, r));
    for i in 0..r {
        let taxi = normalize_inflow(q_taxi.0.column(i));
        let bus = normalize_inflow(q_bus.0.column(i));
        let col = match (taxi, bus) {
            (Some(t), Some(b)) => (t + b) * 0.5,
            (Some(t), None) => t,
            (None, Some(b)) => b,
            (None, None) => uniform_neighbors(grid, i)?,
        };
        w.column_mut(i).assign(&col);
    }
    Ok(CombinedWeightMatrix(w))
}

fn uniform_neighbors(grid: &RegionGrid, i: usize) -> Result<Array1<f64>> {
    let mut col = Array1::zeros(grid.len());
    let nb = grid.neighbors(i)?;
    if nb.is_empty() {
        col[i] = 1.0;
    } else {
        let share = 1.0 / nb.len() as f64;
        for j in nb {
            col[j] = share;
        }
    }
    Ok(col)
}

/// `W[(j, i)] = 1/|neighbors(i)|` for each lattice neighbour `j` of `i`.
pub fn neighbor_weights(grid: &RegionGrid) -> Result<CombinedWeightMatrix> {
    let r = grid.len();
    if r < 2 {
        return Err(Error::InvalidInput(
            "neighbor weights need at least two regions".into(),
        ));
    }
    let mut w = Array2::<f64>::zeros((r, r));
    for i in 0..r {
        w.column_mut(i).assign(&uniform_neighbors(grid, i)?);
    }
    Ok(CombinedWeightMatrix(w))
}
