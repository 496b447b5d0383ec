//! Small dense least squares via Householder QR.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Relative pivot threshold for rank detection.
pub const RANK_TOL: f64 = 1e-10;

/// Solves `min ‖X·β − y‖₂`. Columns are checked for rank in order; the first
/// column whose Householder pivot falls below `RANK_TOL` times its own norm is
/// reported by name.
pub fn least_squares(x: &Array2<f64>, y: &Array1<f64>, names: &[&'static str]) -> Result<Array1<f64>> {
    let (n, p) = x.dim();
    debug_assert_eq!(names.len(), p);
    if y.len() != n {
        return Err(Error::dims("response length", n, y.len()));
    }
    if n < p {
        return Err(Error::InvalidInput(format!(
            "{n} observations cannot determine {p} coefficients"
        )));
    }
    let mut a = x.clone();
    let mut b = y.clone();
    let mut diag = vec![0.0; p];

    for k in 0..p {
        let col_norm = x.column(k).iter().map(|v| v * v).sum::<f64>().sqrt();
        let sub_norm = (k..n).map(|i| a[[i, k]] * a[[i, k]]).sum::<f64>().sqrt();
        if col_norm == 0.0 || sub_norm <= RANK_TOL * col_norm {
            return Err(Error::NotIdentifiable { column: names[k] });
        }
        let alpha = if a[[k, k]] > 0.0 { -sub_norm } else { sub_norm };
        // v = a[k.., k] - alpha e_1
        let mut v: Vec<f64> = (k..n).map(|i| a[[i, k]]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|t| t * t).sum();
        if vnorm2 > 0.0 {
            for j in k..p {
                let dot: f64 = (k..n).map(|i| v[i - k] * a[[i, j]]).sum();
                let f = 2.0 * dot / vnorm2;
                for i in k..n {
                    a[[i, j]] -= f * v[i - k];
                }
            }
            let dot: f64 = (k..n).map(|i| v[i - k] * b[i]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..n {
                b[i] -= f * v[i - k];
            }
        }
        diag[k] = a[[k, k]];
    }

    let mut beta = Array1::<f64>::zeros(p);
    for k in (0..p).rev() {
        let mut s = b[k];
        for j in (k + 1)..p {
            s -= a[[k, j]] * beta[j];
        }
        beta[k] = s / diag[k];
    }
    Ok(beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn exact_fit() {
        let x = array![[1.0, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, 3.0]];
        let y = array![1.0, 3.0, 5.0, 7.0];
        let b = least_squares(&x, &y, &["c", "s"]).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-12);
        assert!((b[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn overdetermined_matches_normal_equations() {
        let x = array![[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]];
        let y = array![0.0, 2.0, 1.0];
        // normal equations: [[3,3],[3,5]] b = [3,4] -> b = [0.5, 0.5]
        let b = least_squares(&x, &y, &["c", "s"]).unwrap();
        assert!((b[0] - 0.5).abs() < 1e-12);
        assert!((b[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn names_collinear_column() {
        let x = array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]];
        let y = array![1.0, 2.0, 3.0];
        assert_eq!(
            least_squares(&x, &y, &["intercept", "dis"]),
            Err(Error::NotIdentifiable { column: "dis" })
        );
    }
}
