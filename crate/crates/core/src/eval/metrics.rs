//! Point-forecast accuracy and dependence measures.

use crate::error::{Error, Result};

pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    if actual.len() != predicted.len() || actual.is_empty() {
        return Err(Error::Contract(format!(
            "rmse needs equal nonzero lengths, got {} and {}",
            actual.len(),
            predicted.len()
        )));
    }
    let sse: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p) * (a - p))
        .sum();
    Ok((sse / actual.len() as f64).sqrt())
}

/// Model RMSE over the reference RMSE; `None` when the reference is zero.
pub fn relative_rmse(model_rmse: f64, reference_rmse: f64) -> Option<f64> {
    (reference_rmse > 0.0).then(|| model_rmse / reference_rmse)
}

/// Pearson correlation. `None` for fewer than two points or a constant series.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Distance correlation from doubly-centred absolute-distance matrices.
///
/// Runs in O(n^2) time and O(n) memory: the centred entries are rebuilt on
/// the fly from row means instead of materialising either matrix.
/// Returns 0 when either distance variance vanishes.
pub fn distance_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return Err(Error::Contract(format!(
            "distance correlation needs two equal series of length >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let row_means = |v: &[f64]| -> (Vec<f64>, f64) {
        let rows: Vec<f64> = v
            .iter()
            .map(|&a| v.iter().map(|&b| (a - b).abs()).sum::<f64>() / n as f64)
            .collect();
        let grand = rows.iter().sum::<f64>() / n as f64;
        (rows, grand)
    };
    let (rx, gx) = row_means(x);
    let (ry, gy) = row_means(y);

    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let a = (x[i] - x[j]).abs() - rx[i] - rx[j] + gx;
            let b = (y[i] - y[j]).abs() - ry[i] - ry[j] + gy;
            cov += a * b;
            vx += a * a;
            vy += b * b;
        }
    }
    let nn = (n * n) as f64;
    let (cov, vx, vy) = (cov / nn, vx / nn, vy / nn);
    if vx <= 0.0 || vy <= 0.0 {
        return Ok(0.0);
    }
    let dcov = cov.max(0.0).sqrt();
    Ok((dcov / (vx.sqrt() * vy.sqrt()).sqrt()).clamp(0.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct DmResult {
    pub statistic: f64,
    pub p_value: f64,
}

const DM_VARIANCE_FLOOR: f64 = 1e-12;

/// Diebold-Mariano test of equal squared-error accuracy.
///
/// Loss differential is `e_a^2 - e_b^2`; negative statistics favour `a`.
/// The long-run variance sums autocovariances at lags `0..=horizon`.
pub fn diebold_mariano(errors_a: &[f64], errors_b: &[f64], horizon: usize) -> Result<DmResult> {
    let n = errors_a.len();
    if n != errors_b.len() || n < 10 {
        return Err(Error::Contract(format!(
            "Diebold-Mariano needs two equal series of length >= 10, got {} and {}",
            errors_a.len(),
            errors_b.len()
        )));
    }
    let d: Vec<f64> = errors_a
        .iter()
        .zip(errors_b)
        .map(|(a, b)| a * a - b * b)
        .collect();
    if d.iter().all(|&v| v == 0.0) {
        return Ok(DmResult {
            statistic: 0.0,
            p_value: 1.0,
        });
    }
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let autocov = |lag: usize| -> f64 {
        (lag..n)
            .map(|t| (d[t] - mean) * (d[t - lag] - mean))
            .sum::<f64>()
            / nf
    };
    let mut lrv = autocov(0);
    for lag in 1..=horizon.min(n - 1) {
        lrv += 2.0 * autocov(lag);
    }
    let lrv = lrv.max(DM_VARIANCE_FLOOR);
    let statistic = mean / (lrv / nf).sqrt();
    Ok(DmResult {
        statistic,
        p_value: two_sided_normal_p(statistic),
    })
}

pub(crate) fn two_sided_normal_p(z: f64) -> f64 {
    libm::erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}
