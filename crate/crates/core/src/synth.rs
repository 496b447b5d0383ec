//! Synthetic cities with planted lifestyles, pattern matrices and
//! gravity-law trips.

use ndarray::{Array1, Array2};
use rand::distr::weighted::WeightedIndex;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gravity::{self, CombinedWeightMatrix, GravityParams, TransportMode, TripRecord};
use crate::grid::{GeoPoint, GridMode, GridSpec, RegionGrid};
use crate::patterns::{BrowsingRecord, CheckinRecord, MobilityPatternMatrix, ShoppingPatternMatrix};
use crate::seed;

/// Planted distance-decay law for one transport mode. The constant `c` is
/// implied by `n_trips` and reported in the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GravityTruth {
    pub mode: TransportMode,
    pub a: f64,
    pub b: f64,
    pub g: f64,
    pub n_trips: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub grid: GridSpec,
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub empty_row_fraction: f64,
    pub noise_sigma: f64,
    pub spatial_smoothing: f64,
    pub gravity: Vec<GravityTruth>,
    /// Region masses are `Gamma(2, 1) · mass_scale`.
    pub mass_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            grid: GridSpec {
                mode: GridMode::Geographic,
                origin_lat: 39.8,
                origin_lon: 116.2,
                cell_size_km: 1.0,
                n_rows: 20,
                n_cols: 20,
                reference_lat: None,
            },
            n: 30,
            m: 40,
            l: 10,
            empty_row_fraction: 0.629,
            noise_sigma: 0.05,
            spatial_smoothing: 0.5,
            gravity: vec![
                GravityTruth {
                    mode: TransportMode::Taxi,
                    a: 1.0,
                    b: 1.0,
                    g: 0.3,
                    n_trips: 100_000,
                },
                GravityTruth {
                    mode: TransportMode::Bus,
                    a: 0.8,
                    b: 1.2,
                    g: 0.5,
                    n_trips: 100_000,
                },
            ],
            mass_scale: 100.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.n == 0 || self.m == 0 || self.l == 0 {
            return bad(format!(
                "pattern and lifestyle counts must be ≥ 1 (n={}, m={}, l={})",
                self.n, self.m, self.l
            ));
        }
        if !(0.0..1.0).contains(&self.empty_row_fraction) {
            return bad(format!(
                "empty_row_fraction must be in [0, 1), got {}",
                self.empty_row_fraction
            ));
        }
        if !(0.0..1.0).contains(&self.spatial_smoothing) {
            return bad(format!(
                "spatial_smoothing must be in [0, 1), got {}",
                self.spatial_smoothing
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be ≥ 0, got {}", self.noise_sigma));
        }
        if !(self.mass_scale > 0.0 && self.mass_scale.is_finite()) {
            return bad(format!("mass_scale must be positive, got {}", self.mass_scale));
        }
        for t in &self.gravity {
            if ![t.a, t.b, t.g].iter().all(|v| v.is_finite()) {
                return bad(format!("gravity truth for {} is not finite", t.mode));
            }
        }
        for (k, t) in self.gravity.iter().enumerate() {
            if self.gravity[..k].iter().any(|u| u.mode == t.mode) {
                return bad(format!("gravity truth for {} given twice", t.mode));
            }
        }
        RegionGrid::from_spec(&self.grid).map(|_| ())
    }
}

/// Planted gravity law and the masses trips were drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeTruth {
    pub params: GravityParams,
    pub origin_mass: Array1<f64>,
    pub dest_mass: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub r_l: Array2<f64>,
    pub v1: Array2<f64>,
    pub v2: Array2<f64>,
    pub gravity: Vec<ModeTruth>,
}

impl SynthTruth {
    pub fn mode(&self, mode: TransportMode) -> Option<&ModeTruth> {
        self.gravity.iter().find(|t| t.params.mode == mode)
    }

    /// Combined inflow weights under the planted laws; a missing mode
    /// contributes nothing.
    pub fn interaction_weights(&self, grid: &RegionGrid) -> Result<CombinedWeightMatrix> {
        let dis = grid.center_distance();
        let r = grid.len();
        let q = |mode| -> Result<gravity::InteractionMatrix> {
            match self.mode(mode) {
                Some(t) => gravity::interaction_from_masses(&t.params, &t.origin_mass, &t.dest_mass, &dis),
                None => Ok(gravity::InteractionMatrix(Array2::zeros((r, r)))),
            }
        };
        gravity::combined_weights(&q(TransportMode::Taxi)?, &q(TransportMode::Bus)?, grid)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCity {
    pub grid: RegionGrid,
    pub shop: ShoppingPatternMatrix,
    pub mob: MobilityPatternMatrix,
    /// All modes, in the order of the config's gravity list.
    pub trips: Vec<TripRecord>,
    pub truth: SynthTruth,
}

fn gamma_matrix<R: Rng>(rng: &mut R, shape: (usize, usize), k: f64) -> Array2<f64> {
    let dist = Gamma::new(k, 1.0).expect("valid gamma shape");
    Array2::from_shape_fn(shape, |_| dist.sample(rng))
}

fn uniform_matrix<R: Rng>(rng: &mut R, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.random::<f64>())
}

/// Row `i` of the result is the mean of `x` over the lattice neighbours of `i`.
pub fn neighbor_mean(x: &Array2<f64>, grid: &RegionGrid) -> Result<Array2<f64>> {
    let mut out = Array2::zeros(x.dim());
    for i in 0..grid.len() {
        let nb = grid.neighbors(i)?;
        if nb.is_empty() {
            out.row_mut(i).assign(&x.row(i));
            continue;
        }
        for &j in &nb {
            out.row_mut(i).scaled_add(1.0, &x.row(j));
        }
        out.row_mut(i).mapv_inplace(|v| v / nb.len() as f64);
    }
    Ok(out)
}

fn noisy_product<R: Rng>(rng: &mut R, a: &Array2<f64>, b: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let mut x = a.dot(&b.t());
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).expect("valid sigma");
        x.mapv_inplace(|v| (v + noise.sample(rng)).max(0.0));
    }
    x
}

/// Number of rows emptied for a fraction.
pub fn empty_row_count(fraction: f64, r: usize) -> usize {
    (((fraction * r as f64) - 1e-9).ceil().max(0.0) as usize).min(r)
}

pub fn generate(cfg: &SynthConfig) -> Result<SyntheticCity> {
    cfg.validate()?;
    let grid = RegionGrid::from_spec(&cfg.grid)?;
    let r = grid.len();

    let mut rng = seed::rng(seed::named_seed(cfg.seed, "lifestyle"));
    let raw = gamma_matrix(&mut rng, (r, cfg.l), 2.0);
    let s = cfg.spatial_smoothing;
    let r_l = &raw * (1.0 - s) + &neighbor_mean(&raw, &grid)? * s;

    let mut rng = seed::rng(seed::named_seed(cfg.seed, "views"));
    let v1 = uniform_matrix(&mut rng, (cfg.n, cfg.l));
    let v2 = uniform_matrix(&mut rng, (cfg.m, cfg.l));

    let mut rng = seed::rng(seed::named_seed(cfg.seed, "noise"));
    let shop_values = noisy_product(&mut rng, &r_l, &v1, cfg.noise_sigma);
    let mob_values = noisy_product(&mut rng, &r_l, &v2, cfg.noise_sigma);

    let mut rng = seed::rng(seed::named_seed(cfg.seed, "empty-rows"));
    let mut mask = Array2::<f64>::ones((r, cfg.n));
    for i in index::sample(&mut rng, r, empty_row_count(cfg.empty_row_fraction, r)) {
        mask.row_mut(i).fill(0.0);
    }
    let shop = ShoppingPatternMatrix::new(shop_values, mask)?;
    let mob = MobilityPatternMatrix::new(mob_values)?;

    let dis = grid.center_distance();
    let mut trips = Vec::new();
    let mut modes = Vec::new();
    for t in &cfg.gravity {
        let mut rng = seed::rng(seed::named_seed(cfg.seed, &format!("trips-{}", t.mode)));
        let mass = Gamma::new(2.0, 1.0).expect("valid gamma shape");
        let origin_mass = Array1::from_shape_fn(r, |_| mass.sample(&mut rng) * cfg.mass_scale);
        let dest_mass = Array1::from_shape_fn(r, |_| mass.sample(&mut rng) * cfg.mass_scale);
        let unit = GravityParams {
            a: t.a,
            b: t.b,
            g: t.g,
            ln_c: 0.0,
            mode: t.mode,
            n_pairs_used: 0,
        };
        let q = gravity::interaction_from_masses(&unit, &origin_mass, &dest_mass, &dis)?;
        let total: f64 = q.0.sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Domain(format!(
                "{} pair weights do not sum to a positive value",
                t.mode
            )));
        }
        if t.n_trips > 0 {
            let pairs = WeightedIndex::new(q.0.iter().copied())
                .map_err(|e| Error::Domain(format!("{} pair weights: {e}", t.mode)))?;
            for _ in 0..t.n_trips {
                let k = pairs.sample(&mut rng);
                let (i, j) = (k / r, k % r);
                let origin = grid.point_in_cell(i, rng.random(), rng.random());
                let destination = grid.point_in_cell(j, rng.random(), rng.random());
                trips.push(TripRecord {
                    mode: t.mode,
                    origin,
                    destination,
                });
            }
        }
        modes.push(ModeTruth {
            params: GravityParams {
                // expected count of pair (i, j) is c · O_i^a · D_j^b · exp(−g·d)
                ln_c: (t.n_trips as f64 / total).ln(),
                ..unit
            },
            origin_mass,
            dest_mass,
        });
    }

    Ok(SyntheticCity {
        grid,
        shop,
        mob,
        trips,
        truth: SynthTruth {
            r_l,
            v1,
            v2,
            gravity: modes,
        },
    })
}

/// Settings for turning a city into raw event logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecordConfig {
    /// Product category vocabulary size.
    pub c_s: usize,
    /// POI category vocabulary size.
    pub c_m: usize,
    pub towers_per_region: usize,
    pub users_per_region: usize,
    /// Expected browsing events per unit of shopping intensity.
    pub browse_volume: f64,
    /// Expected check-ins per unit of mobility intensity.
    pub checkin_volume: f64,
    /// Gamma shape of the planted category distributions; small is peaky.
    pub category_concentration: f64,
}

impl Default for RecordConfig {
    fn default() -> Self {
        RecordConfig {
            c_s: 250,
            c_m: 200,
            towers_per_region: 2,
            users_per_region: 3,
            browse_volume: 1.0,
            checkin_volume: 1.0,
            category_concentration: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthRecords {
    pub browsing: Vec<BrowsingRecord>,
    pub towers: Vec<(String, GeoPoint)>,
    pub checkins: Vec<CheckinRecord>,
    /// Planted `n × c_s` shopping patterns.
    pub p_s: Array2<f64>,
    /// Planted `m × c_m` mobility patterns.
    pub p_m: Array2<f64>,
}

fn stochastic_rows<R: Rng>(rng: &mut R, rows: usize, cols: usize, shape: f64) -> Array2<f64> {
    let mut p = gamma_matrix(rng, (rows, cols), shape);
    for mut row in p.rows_mut() {
        let s = row.sum();
        if s > 0.0 {
            row.mapv_inplace(|v| v / s);
        } else {
            row.fill(1.0 / cols as f64);
        }
    }
    p
}

fn poisson<R: Rng>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
}

/// Browsing and check-in logs whose counts are Poisson around the city's
/// planted pattern intensities. Regions without shopping observations get
/// no towers.
pub fn emit_records(city: &SyntheticCity, cfg: &RecordConfig, seed: u64) -> Result<SynthRecords> {
    if cfg.c_s == 0 || cfg.c_m == 0 || cfg.towers_per_region == 0 || cfg.users_per_region == 0 {
        return Err(Error::InvalidInput(
            "record vocabulary and entity counts must be ≥ 1".into(),
        ));
    }
    if !(cfg.browse_volume > 0.0 && cfg.checkin_volume > 0.0 && cfg.category_concentration > 0.0) {
        return Err(Error::InvalidInput(
            "record volumes and concentration must be positive".into(),
        ));
    }
    let grid = &city.grid;
    let (n, m) = (city.shop.n_patterns(), city.mob.n_patterns());

    let mut rng = seed::rng(seed::named_seed(seed, "patterns"));
    let p_s = stochastic_rows(&mut rng, n, cfg.c_s, cfg.category_concentration);
    let p_m = stochastic_rows(&mut rng, m, cfg.c_m, cfg.category_concentration);

    let mut rng = seed::rng(seed::named_seed(seed, "browsing"));
    let mut browsing = Vec::new();
    let mut towers = Vec::new();
    let intensity_s = city.shop.values.dot(&p_s);
    for i in 0..grid.len() {
        if city.shop.mask.row(i).iter().all(|&v| v == 0.0) {
            continue;
        }
        let shares = stochastic_rows(&mut rng, 1, cfg.towers_per_region, 1.0);
        for t in 0..cfg.towers_per_region {
            let id = format!("T{i:04}_{t}");
            towers.push((id.clone(), grid.point_in_cell(i, rng.random(), rng.random())));
            for c in 0..cfg.c_s {
                let mean = cfg.browse_volume * shares[[0, t]] * intensity_s[[i, c]];
                for _ in 0..poisson(&mut rng, mean) {
                    browsing.push(BrowsingRecord {
                        location_id: id.clone(),
                        product_category_id: c,
                    });
                }
            }
        }
    }

    let mut rng = seed::rng(seed::named_seed(seed, "checkins"));
    let mut checkins = Vec::new();
    let per_user = 1.0 / cfg.users_per_region as f64;
    let intensity_m = city.mob.0.dot(&p_m);
    let mut clock: i64 = 1_600_000_000;
    for i in 0..grid.len() {
        for u in 0..cfg.users_per_region {
            let user = format!("U{i:04}_{u}");
            for c in 0..cfg.c_m {
                let mean = cfg.checkin_volume * per_user * intensity_m[[i, c]];
                for _ in 0..poisson(&mut rng, mean) {
                    clock += rng.random_range(1..600);
                    checkins.push(CheckinRecord {
                        user_id: user.clone(),
                        poi_category_id: c,
                        point: grid.point_in_cell(i, rng.random(), rng.random()),
                        timestamp: clock,
                    });
                }
            }
        }
    }

    Ok(SynthRecords {
        browsing,
        towers,
        checkins,
        p_s,
        p_m,
    })
}

/// Mean Euclidean distance between each lifestyle row and its `W`-weighted
/// mean `Σ_j W(j, i) · R_l[j]`.
pub fn mean_weighted_gap(r_l: &Array2<f64>, w: &CombinedWeightMatrix) -> f64 {
    let mixed = w.0.t().dot(r_l);
    let r = r_l.nrows();
    (0..r)
        .map(|i| {
            (&r_l.row(i) - &mixed.row(i))
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / r as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gravity::{build_flows, fit_gravity_with_masses};

    fn small(seed: u64) -> SynthConfig {
        let mut cfg = SynthConfig {
            seed,
            ..SynthConfig::default()
        };
        cfg.grid.n_rows = 6;
        cfg.grid.n_cols = 5;
        cfg.n = 4;
        cfg.m = 5;
        cfg.l = 3;
        for t in &mut cfg.gravity {
            t.n_trips = 2000;
        }
        cfg
    }

    #[test]
    fn noiseless_reconstruction() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            empty_row_fraction: 0.0,
            ..small(4)
        };
        let city = generate(&cfg).unwrap();
        let t = &city.truth;
        assert_eq!(city.shop.values, t.r_l.dot(&t.v1.t()));
        assert_eq!(city.mob.0, t.r_l.dot(&t.v2.t()));
        assert!(city.shop.mask.iter().all(|&m| m == 1.0));
    }

    #[test]
    fn empty_rows_match_fraction() {
        assert_eq!(empty_row_count(0.629, 870), 548);
        assert_eq!(empty_row_count(0.0, 10), 0);
        assert_eq!(empty_row_count(0.5, 10), 5);

        let mut cfg = small(1);
        cfg.grid.n_rows = 29;
        cfg.grid.n_cols = 30;
        for t in &mut cfg.gravity {
            t.n_trips = 0;
        }
        let city = generate(&cfg).unwrap();
        let empty: Vec<usize> = (0..870)
            .filter(|&i| city.shop.mask.row(i).iter().all(|&m| m == 0.0))
            .collect();
        assert_eq!(empty.len(), 548);
        for &i in &empty {
            assert!(city.shop.values.row(i).iter().all(|&v| v == 0.0));
        }
        assert!(city.shop.values.iter().all(|&v| v >= 0.0));
        assert!(city.mob.0.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small(9)).unwrap();
        let b = generate(&small(9)).unwrap();
        assert_eq!(a.shop, b.shop);
        assert_eq!(a.mob, b.mob);
        assert_eq!(a.trips, b.trips);
        assert_eq!(a.truth, b.truth);
        let c = generate(&small(10)).unwrap();
        assert_ne!(a.truth.r_l, c.truth.r_l);
    }

    #[test]
    fn trips_land_in_grid_and_truth_constant_matches_volume() {
        let city = generate(&small(2)).unwrap();
        assert_eq!(city.trips.len(), 4000);
        assert!(
            city.trips
                .iter()
                .all(|t| city.grid.region_of(t.origin).is_some()
                    && city.grid.region_of(t.destination).is_some())
        );
        let dis = city.grid.center_distance();
        for t in &city.truth.gravity {
            let q = gravity::interaction_from_masses(&t.params, &t.origin_mass, &t.dest_mass, &dis).unwrap();
            assert!((q.0.sum() - 2000.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gravity_round_trip_from_sampled_trips() {
        let mut cfg = small(21);
        cfg.grid.n_rows = 5;
        cfg.grid.n_cols = 5;
        cfg.gravity.truncate(1);
        cfg.gravity[0] = GravityTruth {
            mode: TransportMode::Taxi,
            a: 1.0,
            b: 1.0,
            g: 0.3,
            n_trips: 100_000,
        };
        let city = generate(&cfg).unwrap();
        let flows = build_flows(&city.trips, &city.grid, TransportMode::Taxi);
        let t = city.truth.mode(TransportMode::Taxi).unwrap();
        let fit = fit_gravity_with_masses(
            flows.q(),
            &t.origin_mass,
            &t.dest_mass,
            &city.grid.center_distance(),
            TransportMode::Taxi,
        )
        .unwrap();
        for (got, want) in [(fit.a, 1.0), (fit.b, 1.0), (fit.g, 0.3)] {
            assert!((got - want).abs() / want < 0.10, "fit {fit:?}");
        }
    }

    #[test]
    fn smoothing_pulls_lifestyles_toward_inflow_mean() {
        for seed in 0..5 {
            let mut cfg = small(seed);
            cfg.empty_row_fraction = 0.0;
            let smooth = generate(&cfg).unwrap();
            cfg.spatial_smoothing = 0.0;
            let raw = generate(&cfg).unwrap();
            let w_s = smooth.truth.interaction_weights(&smooth.grid).unwrap();
            let w_r = raw.truth.interaction_weights(&raw.grid).unwrap();
            assert!(mean_weighted_gap(&smooth.truth.r_l, &w_s) < mean_weighted_gap(&raw.truth.r_l, &w_r));
        }
    }

    #[test]
    fn records_follow_mask() {
        let city = generate(&small(3)).unwrap();
        let cfg = RecordConfig {
            c_s: 20,
            c_m: 15,
            ..RecordConfig::default()
        };
        let rec = emit_records(&city, &cfg, 3).unwrap();
        let observed = city.shop.non_empty_rows().len();
        assert_eq!(rec.towers.len(), observed * cfg.towers_per_region);
        for t in &rec.towers {
            let i = city.grid.region_of(t.1).unwrap();
            assert!(city.shop.mask[[i, 0]] == 1.0);
        }
        assert!(rec.browsing.iter().all(|b| b.product_category_id < 20));
        assert!(rec.checkins.iter().all(|c| c.poi_category_id < 15));
        assert!(!rec.checkins.is_empty() && !rec.browsing.is_empty());
        for row in rec.p_s.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        let again = emit_records(&city, &cfg, 3).unwrap();
        assert_eq!(rec.browsing, again.browsing);
        assert_eq!(rec.checkins, again.checkins);
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = small(0);
        cfg.empty_row_fraction = 1.0;
        assert!(generate(&cfg).is_err());
        let mut cfg = small(0);
        cfg.spatial_smoothing = -0.1;
        assert!(generate(&cfg).is_err());
        let mut cfg = small(0);
        cfg.l = 0;
        assert!(generate(&cfg).is_err());
        let mut cfg = small(0);
        cfg.noise_sigma = -1.0;
        assert!(generate(&cfg).is_err());
    }
}
