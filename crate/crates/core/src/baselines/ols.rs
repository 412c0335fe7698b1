//! Least squares by Householder QR, with a small ridge fallback when the
//! design is rank deficient.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const RIDGE_PENALTY: f64 = 1e-6;
const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct OlsFit {
    pub coef: Vec<f64>,
    /// The design was rank deficient and the ridge fallback was used.
    pub ridge: bool,
}

fn solve_qr(x: DMatrix<f64>, y: DVector<f64>) -> Option<DVector<f64>> {
    let qr = x.qr();
    let r = qr.r();
    let diag_max = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if diag_max == 0.0 || r.diagonal().iter().any(|v| v.abs() <= RANK_TOL * diag_max) {
        return None;
    }
    let qty = qr.q().transpose() * y;
    r.solve_upper_triangular(&qty)
}

/// Coefficients minimising `|y - X b|^2`; `rows` are the rows of `X`.
pub fn ols(rows: &[Vec<f64>], y: &[f64]) -> Result<OlsFit> {
    let n = rows.len();
    if n == 0 || n != y.len() {
        return Err(Error::Contract(format!(
            "design has {n} rows but target has {} values",
            y.len()
        )));
    }
    let p = rows[0].len();
    if p == 0 || rows.iter().any(|r| r.len() != p) {
        return Err(Error::Contract("design rows must share a nonzero width".into()));
    }
    if rows.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in regression data".into()));
    }
    let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let yv = DVector::from_column_slice(y);
    if n >= p {
        if let Some(b) = solve_qr(x.clone(), yv.clone()) {
            return Ok(OlsFit {
                coef: b.iter().copied().collect(),
                ridge: false,
            });
        }
    }
    // Ridge as least squares on the design stacked over sqrt(lambda) I.
    let lam = RIDGE_PENALTY.sqrt();
    let xa = DMatrix::from_fn(n + p, p, |i, j| {
        if i < n {
            x[(i, j)]
        } else if i - n == j {
            lam
        } else {
            0.0
        }
    });
    let ya = DVector::from_fn(n + p, |i, _| if i < n { yv[i] } else { 0.0 });
    let qr = xa.qr();
    let b = qr
        .r()
        .solve_upper_triangular(&(qr.q().transpose() * ya))
        .ok_or_else(|| Error::Data("regression could not be solved".into()))?;
    Ok(OlsFit {
        coef: b.iter().copied().collect(),
        ridge: true,
    })
}

pub fn predict_row(coef: &[f64], row: &[f64]) -> f64 {
    coef.iter().zip(row).map(|(c, x)| c * x).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_line() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![1.0, i as f64]).collect();
        let y: Vec<f64> = (0..5).map(|i| 2.0 + 3.0 * i as f64).collect();
        let fit = ols(&rows, &y).unwrap();
        assert!(!fit.ridge);
        assert!((fit.coef[0] - 2.0).abs() < 1e-12);
        assert!((fit.coef[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_design_falls_back_to_ridge() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![1.0, i as f64, 2.0 * i as f64]).collect();
        let y: Vec<f64> = (0..6).map(|i| 1.0 + i as f64).collect();
        let fit = ols(&rows, &y).unwrap();
        assert!(fit.ridge);
        for (r, t) in rows.iter().zip(&y) {
            assert!((predict_row(&fit.coef, r) - t).abs() < 1e-4);
        }
    }

    #[test]
    fn shape_errors() {
        assert!(ols(&[], &[]).is_err());
        assert!(ols(&[vec![1.0]], &[1.0, 2.0]).is_err());
        assert!(ols(&[vec![1.0], vec![1.0, 2.0]], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn residuals_are_orthogonal_to_regressors(
            data in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 8..60)
        ) {
            let rows: Vec<Vec<f64>> = data.iter().map(|&(a, b, _)| vec![1.0, a, b]).collect();
            let y: Vec<f64> = data.iter().map(|&(_, _, c)| c).collect();
            let fit = ols(&rows, &y).unwrap();
            prop_assume!(!fit.ridge);
            for j in 0..3 {
                let dot: f64 = rows.iter().zip(&y).map(|(r, t)| (t - predict_row(&fit.coef, r)) * r[j]).sum();
                prop_assert!(dot.abs() < 1e-8, "column {} dot {}", j, dot);
            }
        }
    }
}
