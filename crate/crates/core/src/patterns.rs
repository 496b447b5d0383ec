//! Count matrices from event logs and their aggregation into region-level
//! pattern matrices.

use std::collections::HashMap;
use std::hash::Hash;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GeoPoint, RegionGrid};
use crate::nmf::CoefficientMatrix;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrowsingRecord {
    pub location_id: String,
    pub product_category_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckinRecord {
    pub user_id: String,
    pub poi_category_id: usize,
    pub point: GeoPoint,
    pub timestamp: i64,
}

/// Entity × category counts. Rows appear in first-appearance order of the
/// entity; entities without any count are never present.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    pub row_keys: Vec<String>,
    pub values: Array2<f64>,
}

impl CountMatrix {
    pub fn n_categories(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }
}

pub fn build_count_matrix<K, I>(records: I, n_categories: usize) -> Result<CountMatrix>
where
    K: AsRef<str> + Eq + Hash,
    I: IntoIterator<Item = (K, usize)>,
{
    let mut order: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<Vec<u64>> = Vec::new();
    for (key, cat) in records {
        if cat >= n_categories {
            return Err(Error::CategoryOutOfRange {
                id: cat,
                count: n_categories,
            });
        }
        let k = key.as_ref();
        let row = match index.get(k) {
            Some(&r) => r,
            None => {
                index.insert(k.to_string(), order.len());
                order.push(k.to_string());
                rows.push(vec![0; n_categories]);
                order.len() - 1
            }
        };
        rows[row][cat] += 1;
    }
    let values = Array2::from_shape_fn((order.len(), n_categories), |(i, j)| rows[i][j] as f64);
    Ok(CountMatrix {
        row_keys: order,
        values,
    })
}

/// `R_s` with its row-observation mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShoppingPatternMatrix {
    pub values: Array2<f64>,
    pub mask: Array2<f64>,
}

impl ShoppingPatternMatrix {
    pub fn new(values: Array2<f64>, mask: Array2<f64>) -> Result<Self> {
        if values.dim() != mask.dim() {
            return Err(Error::dims(
                "shopping mask",
                format!("{:?}", values.dim()),
                format!("{:?}", mask.dim()),
            ));
        }
        if mask.iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::InvalidInput("mask entries must be 0 or 1".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(
                "shopping values must be finite and non-negative".into(),
            ));
        }
        let mut values = values;
        values.zip_mut_with(&mask, |v, &m| {
            if m == 0.0 {
                *v = 0.0
            }
        });
        Ok(ShoppingPatternMatrix { values, mask })
    }

    /// Fully observed matrix.
    pub fn dense(values: Array2<f64>) -> Result<Self> {
        let mask = Array2::ones(values.dim());
        Self::new(values, mask)
    }

    pub fn n_regions(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_patterns(&self) -> usize {
        self.values.ncols()
    }

    /// Rows with at least one observed non-zero entry.
    pub fn non_empty_rows(&self) -> Vec<usize> {
        (0..self.n_regions())
            .filter(|&i| {
                self.values
                    .row(i)
                    .iter()
                    .zip(self.mask.row(i).iter())
                    .any(|(&v, &m)| m != 0.0 && v != 0.0)
            })
            .collect()
    }

    pub fn is_row_constant(&self) -> bool {
        self.mask
            .rows()
            .into_iter()
            .all(|row| row.iter().all(|&m| m == row[0]))
    }
}

/// `R_m`, dense; regions nobody visited hold zero rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityPatternMatrix(pub Array2<f64>);

impl MobilityPatternMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(
                "mobility values must be finite and non-negative".into(),
            ));
        }
        Ok(MobilityPatternMatrix(values))
    }

    pub fn n_regions(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_patterns(&self) -> usize {
        self.0.ncols()
    }
}

/// Sums tower coefficient rows into their regions. `row_keys[t]` names the
/// tower behind coefficient row `t`; towers outside the grid are dropped.
pub fn aggregate_shopping(
    coefficients: &CoefficientMatrix,
    row_keys: &[String],
    tower_positions: &HashMap<String, GeoPoint>,
    grid: &RegionGrid,
) -> Result<ShoppingPatternMatrix> {
    if row_keys.len() != coefficients.n_entities() {
        return Err(Error::dims(
            "tower keys vs coefficient rows",
            coefficients.n_entities(),
            row_keys.len(),
        ));
    }
    let n = coefficients.n_patterns();
    let mut values = Array2::<f64>::zeros((grid.len(), n));
    let mut mask = Array2::<f64>::zeros((grid.len(), n));
    for (t, key) in row_keys.iter().enumerate() {
        let pos = tower_positions
            .get(key)
            .ok_or_else(|| Error::MissingPosition(key.clone()))?;
        if let Some(region) = grid.region_of(*pos) {
            let mut row = values.row_mut(region);
            row += &coefficients.0.row(t);
            mask.row_mut(region).fill(1.0);
        }
    }
    Ok(ShoppingPatternMatrix { values, mask })
}

/// Per-user shares of in-grid check-ins across regions (sparse rows).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityShareMatrix {
    pub user_ids: Vec<String>,
    pub n_regions: usize,
    /// `rows[k]` lists `(region, share)` ascending by region; shares sum to 1.
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl ActivityShareMatrix {
    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut w = Array2::zeros((self.n_users(), self.n_regions));
        for (k, row) in self.rows.iter().enumerate() {
            for &(i, s) in row {
                w[[k, i]] = s;
            }
        }
        w
    }
}

/// Users are ordered by first in-grid check-in. Users without in-grid
/// check-ins are absent.
pub fn activity_shares(checkins: &[CheckinRecord], grid: &RegionGrid) -> ActivityShareMatrix {
    let mut order: Vec<String> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut counts: Vec<HashMap<usize, u64>> = Vec::new();
    for c in checkins {
        let Some(region) = grid.region_of(c.point) else {
            continue;
        };
        let k = *index.entry(c.user_id.as_str()).or_insert_with(|| {
            order.push(c.user_id.clone());
            counts.push(HashMap::new());
            order.len() - 1
        });
        *counts[k].entry(region).or_insert(0) += 1;
    }
    let rows = counts
        .into_iter()
        .map(|m| {
            let total: u64 = m.values().sum();
            let mut row: Vec<(usize, f64)> =
                m.into_iter().map(|(i, c)| (i, c as f64 / total as f64)).collect();
            row.sort_by_key(|&(i, _)| i);
            row
        })
        .collect();
    ActivityShareMatrix {
        user_ids: order,
        n_regions: grid.len(),
        rows,
    }
}

/// `R_m[i, j] = Σ_k w[k, i] · u[k, j]`. Row `k` of `user_coefficients` must
/// belong to user `k` of `shares`.
pub fn aggregate_mobility(
    shares: &ActivityShareMatrix,
    user_coefficients: &CoefficientMatrix,
) -> Result<MobilityPatternMatrix> {
    if shares.n_users() != user_coefficients.n_entities() {
        return Err(Error::dims(
            "users in shares vs coefficient rows",
            shares.n_users(),
            user_coefficients.n_entities(),
        ));
    }
    let m = user_coefficients.n_patterns();
    let mut out = Array2::<f64>::zeros((shares.n_regions, m));
    for (k, row) in shares.rows.iter().enumerate() {
        let u = user_coefficients.0.row(k);
        for &(i, w) in row {
            out.row_mut(i).scaled_add(w, &u);
        }
    }
    Ok(MobilityPatternMatrix(out))
}

/// Selects rows of `coefficients` (keyed by `keys`) in the order of `wanted`.
pub fn align_rows(
    coefficients: &CoefficientMatrix,
    keys: &[String],
    wanted: &[String],
) -> Result<CoefficientMatrix> {
    let index: HashMap<&str, usize> = keys.iter().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
    let mut out = Array2::zeros((wanted.len(), coefficients.n_patterns()));
    for (dst, key) in wanted.iter().enumerate() {
        let src = *index
            .get(key.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("no coefficient row for `{key}`")))?;
        out.row_mut(dst).assign(&coefficients.0.row(src));
    }
    Ok(CoefficientMatrix(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use ndarray::array;
    use rand::Rng;

    fn grid2x2() -> RegionGrid {
        RegionGrid::planar(1.0, 2, 2).unwrap()
    }

    fn at(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint { lat, lon }
    }

    #[test]
    fn count_matrix_examples() {
        let cm = build_count_matrix(vec![("L1", 2), ("L1", 2), ("L2", 0)], 3).unwrap();
        assert_eq!(cm.row_keys, vec!["L1", "L2"]);
        assert_eq!(cm.values, array![[0.0, 0.0, 2.0], [1.0, 0.0, 0.0]]);

        let empty = build_count_matrix(Vec::<(&str, usize)>::new(), 3).unwrap();
        assert_eq!(empty.n_rows(), 0);

        let rep = build_count_matrix(std::iter::repeat_n(("U1", 0), 5), 1).unwrap();
        assert_eq!(rep.values, array![[5.0]]);

        assert!(matches!(
            build_count_matrix(vec![("L1", 3)], 3),
            Err(Error::CategoryOutOfRange { id: 3, count: 3 })
        ));
    }

    #[test]
    fn shopping_aggregation() {
        let g = RegionGrid::planar(1.0, 2, 3).unwrap();
        let c = CoefficientMatrix(array![[1.0, 0.0], [0.5, 2.0], [4.0, 4.0]]);
        let keys: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let mut pos = HashMap::new();
        // region 3 = row 1, col 0
        pos.insert("a".to_string(), at(1.2, 0.3));
        pos.insert("b".to_string(), at(1.8, 0.9));
        pos.insert("c".to_string(), at(7.0, 7.0));
        let rs = aggregate_shopping(&c, &keys, &pos, &g).unwrap();
        assert_eq!(rs.values.row(3).to_vec(), vec![1.5, 2.0]);
        assert_eq!(rs.mask.row(3).to_vec(), vec![1.0, 1.0]);
        for i in [0, 1, 2, 4, 5] {
            assert!(rs.values.row(i).iter().all(|&v| v == 0.0));
            assert!(rs.mask.row(i).iter().all(|&v| v == 0.0));
        }
        assert!(rs.is_row_constant());

        pos.remove("b");
        assert!(matches!(
            aggregate_shopping(&c, &keys, &pos, &g),
            Err(Error::MissingPosition(id)) if id == "b"
        ));
    }

    #[test]
    fn single_tower_copied() {
        let g = grid2x2();
        let c = CoefficientMatrix(array![[0.25, 0.75]]);
        let mut pos = HashMap::new();
        pos.insert("t".to_string(), at(0.5, 1.5));
        let rs = aggregate_shopping(&c, &["t".to_string()], &pos, &g).unwrap();
        assert_eq!(rs.values.row(1).to_vec(), vec![0.25, 0.75]);
    }

    fn checkin(user: &str, lat: f64, lon: f64) -> CheckinRecord {
        CheckinRecord {
            user_id: user.into(),
            poi_category_id: 0,
            point: at(lat, lon),
            timestamp: 0,
        }
    }

    #[test]
    fn share_examples() {
        let g = grid2x2();
        let recs = vec![
            checkin("u", 0.5, 0.5),
            checkin("u", 0.5, 0.5),
            checkin("u", 0.5, 0.5),
            checkin("u", 0.5, 1.5),
            checkin("v", 1.5, 1.5),
            checkin("w", 1.5, 0.5),
            checkin("w", 1.5, 0.5),
            checkin("w", 9.0, 9.0),
            checkin("w", -1.0, 0.5),
            checkin("x", 9.0, 9.0),
        ];
        let w = activity_shares(&recs, &g);
        assert_eq!(w.user_ids, vec!["u", "v", "w"]);
        assert_eq!(w.rows[0], vec![(0, 0.75), (1, 0.25)]);
        assert_eq!(w.rows[1], vec![(3, 1.0)]);
        assert_eq!(w.rows[2], vec![(2, 1.0)]);
    }

    #[test]
    fn mobility_examples() {
        let one = ActivityShareMatrix {
            user_ids: vec!["a".into()],
            n_regions: 4,
            rows: vec![vec![(2, 1.0)]],
        };
        let rm = aggregate_mobility(&one, &CoefficientMatrix(array![[0.2, 0.8]])).unwrap();
        assert_eq!(rm.0, array![[0.0, 0.0], [0.0, 0.0], [0.2, 0.8], [0.0, 0.0]]);

        let two = ActivityShareMatrix {
            user_ids: vec!["a".into(), "b".into()],
            n_regions: 2,
            rows: vec![vec![(0, 0.5), (1, 0.5)], vec![(1, 1.0)]],
        };
        let rm = aggregate_mobility(&two, &CoefficientMatrix(array![[1.0, 0.0], [0.0, 2.0]])).unwrap();
        assert_eq!(rm.0, array![[0.5, 0.0], [0.5, 2.0]]);

        let none = ActivityShareMatrix {
            user_ids: vec![],
            n_regions: 3,
            rows: vec![],
        };
        let rm = aggregate_mobility(&none, &CoefficientMatrix(Array2::zeros((0, 2)))).unwrap();
        assert!(rm.0.iter().all(|&v| v == 0.0));
        assert_eq!(rm.0.dim(), (3, 2));

        assert!(aggregate_mobility(&two, &CoefficientMatrix(array![[1.0, 0.0]])).is_err());
    }

    #[test]
    fn mobility_matches_triple_loop() {
        let mut rng = seed::rng(17);
        for _ in 0..50 {
            let users = rng.random_range(0..50);
            let regions = rng.random_range(1..20);
            let patterns = rng.random_range(1..10);
            let rows: Vec<Vec<(usize, f64)>> = (0..users)
                .map(|_| {
                    let picks: Vec<usize> = (0..regions).filter(|_| rng.random::<f64>() < 0.3).collect();
                    let picks = if picks.is_empty() { vec![0] } else { picks };
                    let raw: Vec<f64> = picks.iter().map(|_| rng.random::<f64>() + 0.01).collect();
                    let tot: f64 = raw.iter().sum();
                    picks.into_iter().zip(raw).map(|(i, v)| (i, v / tot)).collect()
                })
                .collect();
            let w = ActivityShareMatrix {
                user_ids: (0..users).map(|k| k.to_string()).collect(),
                n_regions: regions,
                rows,
            };
            let u = CoefficientMatrix(Array2::from_shape_fn((users, patterns), |_| rng.random::<f64>()));
            let got = aggregate_mobility(&w, &u).unwrap();
            let dense = w.to_dense();
            for i in 0..regions {
                for j in 0..patterns {
                    let mut s = 0.0;
                    for k in 0..users {
                        s += dense[[k, i]] * u.0[[k, j]];
                    }
                    assert!((got.0[[i, j]] - s).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn mask_zeroes_values() {
        let s = ShoppingPatternMatrix::new(array![[1.0, 2.0], [3.0, 4.0]], array![[1.0, 1.0], [0.0, 0.0]])
            .unwrap();
        assert_eq!(s.values.row(1).to_vec(), vec![0.0, 0.0]);
        assert_eq!(s.non_empty_rows(), vec![0]);
        assert!(ShoppingPatternMatrix::new(array![[1.0]], array![[0.5]]).is_err());
    }

    #[test]
    fn align_rows_reorders() {
        let c = CoefficientMatrix(array![[1.0], [2.0], [3.0]]);
        let keys: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let got = align_rows(&c, &keys, &["c".into(), "a".into()]).unwrap();
        assert_eq!(got.0, array![[3.0], [1.0]]);
        assert!(align_rows(&c, &keys, &["z".into()]).is_err());
    }
}
