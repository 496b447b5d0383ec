//! Non-negative matrix factorization with Lee–Seung multiplicative updates.
//!
//! Factorizes a non-negative `rows × cols` matrix `X` as `C · P`, where
//! `P` (`k × cols`) holds one pattern per row and `C` (`rows × k`) holds the
//! per-entity weights on those patterns. On return the rows of `P` sum to one
//! and the scale lives in `C`.

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Added to update denominators.
pub const NMF_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmfOptions {
    pub max_iters: usize,
    /// Relative loss change below which iteration stops.
    pub tol: f64,
    pub seed: u64,
}

impl Default for NmfOptions {
    fn default() -> Self {
        NmfOptions {
            max_iters: 500,
            tol: 1e-6,
            seed: 0,
        }
    }
}

/// Row-stochastic `patterns × categories` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternBasis(pub Array2<f64>);

/// Non-negative `entities × patterns` weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientMatrix(pub Array2<f64>);

impl PatternBasis {
    pub fn n_patterns(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_categories(&self) -> usize {
        self.0.ncols()
    }
}

impl CoefficientMatrix {
    pub fn n_entities(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_patterns(&self) -> usize {
        self.0.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct NmfResult {
    pub basis: PatternBasis,
    pub coefficients: CoefficientMatrix,
    /// Squared Frobenius loss after initialization and after every update.
    pub loss_trace: Vec<f64>,
}

impl NmfResult {
    pub fn reconstruction(&self) -> Array2<f64> {
        self.coefficients.0.dot(&self.basis.0)
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().unwrap_or(&0.0)
    }
}

fn frobenius_loss(x: &Array2<f64>, c: &Array2<f64>, p: &Array2<f64>) -> f64 {
    let approx = c.dot(p);
    x.iter().zip(approx.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn nmf(x: &Array2<f64>, k: usize, opts: &NmfOptions) -> Result<NmfResult> {
    let (rows, cols) = x.dim();
    if k == 0 || k > rows.min(cols) {
        return Err(Error::InvalidInput(format!(
            "pattern count {k} must be in 1..={} for a {rows}x{cols} matrix",
            rows.min(cols)
        )));
    }
    if let Some(v) = x.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidInput(format!(
            "NMF input must be finite and non-negative, found {v}"
        )));
    }

    let mean = x.sum() / (rows * cols) as f64;
    if mean == 0.0 {
        return Ok(NmfResult {
            basis: PatternBasis(Array2::from_elem((k, cols), 1.0 / cols as f64)),
            coefficients: CoefficientMatrix(Array2::zeros((rows, k))),
            loss_trace: vec![0.0],
        });
    }

    let mut rng = seed::rng(opts.seed);
    let scale = (mean / k as f64).sqrt();
    let mut c = Array2::from_shape_fn((rows, k), |_| (1.0 - rng.random::<f64>()) * scale);
    let mut p = Array2::from_shape_fn((k, cols), |_| (1.0 - rng.random::<f64>()) * scale);

    let mut trace = Vec::with_capacity(opts.max_iters.min(10_000) + 1);
    let mut loss = frobenius_loss(x, &c, &p);
    trace.push(loss);

    for _ in 0..opts.max_iters {
        // P ← P ∘ (CᵀX) / (CᵀC·P)
        let ctx = c.t().dot(x);
        let ctcp = c.t().dot(&c).dot(&p);
        p.zip_mut_with(&ctx, |pv, &num| *pv *= num);
        p.zip_mut_with(&ctcp, |pv, &den| *pv /= den + NMF_EPS);

        // C ← C ∘ (XPᵀ) / (C·PPᵀ)
        let xpt = x.dot(&p.t());
        let cppt = c.dot(&p.dot(&p.t()));
        c.zip_mut_with(&xpt, |cv, &num| *cv *= num);
        c.zip_mut_with(&cppt, |cv, &den| *cv /= den + NMF_EPS);

        let next = frobenius_loss(x, &c, &p);
        trace.push(next);
        let rel = (loss - next) / loss.max(f64::MIN_POSITIVE);
        loss = next;
        if loss == 0.0 || rel < opts.tol {
            break;
        }
    }

    normalize_rows(&mut c, &mut p);
    Ok(NmfResult {
        basis: PatternBasis(p),
        coefficients: CoefficientMatrix(c),
        loss_trace: trace,
    })
}

/// Scales each row of `p` to sum to one, moving the scale into the matching
/// column of `c`. All-zero rows become uniform with a zero coefficient column.
pub fn normalize_rows(c: &mut Array2<f64>, p: &mut Array2<f64>) {
    let cols = p.ncols();
    for (kk, mut row) in p.axis_iter_mut(Axis(0)).enumerate() {
        let s: f64 = row.sum();
        if s > 0.0 {
            row.mapv_inplace(|v| v / s);
            c.column_mut(kk).mapv_inplace(|v| v * s);
        } else {
            row.fill(1.0 / cols as f64);
            c.column_mut(kk).fill(0.0);
        }
    }
}

/// The `k` heaviest categories of one pattern, descending by weight with ties
/// broken by ascending category id.
pub fn top_categories(basis: &PatternBasis, pattern: usize, k: usize) -> Result<Vec<(usize, f64)>> {
    if pattern >= basis.n_patterns() {
        return Err(Error::InvalidInput(format!(
            "pattern {pattern} out of range for {} patterns",
            basis.n_patterns()
        )));
    }
    let mut entries: Vec<(usize, f64)> = basis.0.row(pattern).iter().copied().enumerate().collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    entries.truncate(k);
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn rel_err(x: &Array2<f64>, res: &NmfResult) -> f64 {
        let diff = x - &res.reconstruction();
        let num = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        let den = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        num / den
    }

    /// Non-increasing up to rounding, measured against the data energy.
    fn monotone(trace: &[f64], x: &Array2<f64>) -> bool {
        let slack = 1e-12 * x.iter().map(|v| v * v).sum::<f64>();
        trace.windows(2).all(|w| w[1] <= w[0] + slack)
    }

    fn assert_monotone(trace: &[f64], x: &Array2<f64>) {
        assert!(monotone(trace, x), "loss increased: {trace:?}");
    }

    #[test]
    fn rank_one_recovered() {
        let u = array![1.0, 2.0, 0.5, 3.0, 1.5];
        let v = array![0.3, 1.0, 2.0, 0.7];
        let x = Array2::from_shape_fn((5, 4), |(i, j)| u[i] * v[j]);
        let opts = NmfOptions {
            max_iters: 5000,
            tol: 0.0,
            seed: 3,
        };
        let res = nmf(&x, 1, &opts).unwrap();
        assert!(rel_err(&x, &res) <= 1e-6, "err {}", rel_err(&x, &res));
        assert_monotone(&res.loss_trace, &x);
    }

    #[test]
    fn zero_matrix_short_circuits() {
        let x = Array2::<f64>::zeros((4, 3));
        let res = nmf(&x, 2, &NmfOptions::default()).unwrap();
        assert!(res.coefficients.0.iter().all(|&v| v == 0.0));
        assert_eq!(res.final_loss(), 0.0);
        for row in res.basis.0.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_rank_two_recovered() {
        let x = array![[3.0, 0.0], [0.0, 5.0]];
        let opts = NmfOptions {
            max_iters: 20_000,
            tol: 0.0,
            seed: 11,
        };
        let res = nmf(&x, 2, &opts).unwrap();
        assert!(rel_err(&x, &res) <= 1e-6, "err {}", rel_err(&x, &res));
        assert_monotone(&res.loss_trace, &x);
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = array![[1.0, -1.0], [0.0, 1.0]];
        assert!(nmf(&x, 1, &NmfOptions::default()).is_err());
        let x = array![[1.0, 1.0], [0.0, 1.0]];
        assert!(nmf(&x, 0, &NmfOptions::default()).is_err());
        assert!(nmf(&x, 3, &NmfOptions::default()).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let x = Array2::from_shape_fn((6, 5), |(i, j)| ((i * 7 + j * 3) % 5) as f64);
        let opts = NmfOptions {
            seed: 9,
            ..NmfOptions::default()
        };
        let a = nmf(&x, 3, &opts).unwrap();
        let b = nmf(&x, 3, &opts).unwrap();
        assert_eq!(a.basis, b.basis);
        assert_eq!(a.coefficients, b.coefficients);
    }

    #[test]
    fn top_category_examples() {
        let p = PatternBasis(array![[0.1, 0.7, 0.2], [0.5, 0.5, 0.0]]);
        assert_eq!(top_categories(&p, 0, 2).unwrap(), vec![(1, 0.7), (2, 0.2)]);
        let q = PatternBasis(array![[0.5, 0.5]]);
        assert_eq!(top_categories(&q, 0, 1).unwrap(), vec![(0, 0.5)]);
        assert_eq!(
            top_categories(&p, 0, 10).unwrap(),
            vec![(1, 0.7), (2, 0.2), (0, 0.1)]
        );
        assert!(top_categories(&p, 2, 1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn loss_monotone_and_basis_stochastic(
            rows in 2usize..12, cols in 2usize..10, k in 1usize..4, seed in any::<u64>()
        ) {
            let k = k.min(rows.min(cols));
            let mut rng = seed::rng(seed);
            let x = Array2::from_shape_fn((rows, cols), |_| {
                if rng.random::<f64>() < 0.3 { 0.0 } else { (rng.random::<f64>() * 10.0).floor() }
            });
            let opts = NmfOptions { max_iters: 200, tol: 0.0, seed };
            let res = nmf(&x, k, &opts).unwrap();
            prop_assert!(monotone(&res.loss_trace, &x));
            for row in res.basis.0.rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-9);
                prop_assert!(row.iter().all(|&v| v >= 0.0));
            }
            prop_assert!(res.coefficients.0.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn normalization_preserves_product(seed in any::<u64>()) {
            let mut rng = seed::rng(seed);
            let mut c = Array2::from_shape_fn((5, 3), |_| rng.random::<f64>());
            let mut p = Array2::from_shape_fn((3, 4), |_| rng.random::<f64>() * 3.0);
            p.row_mut(1).fill(0.0);
            let before = c.dot(&p);
            normalize_rows(&mut c, &mut p);
            let after = c.dot(&p);
            for (a, b) in before.iter().zip(after.iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}
