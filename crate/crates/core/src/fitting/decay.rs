use nalgebra::{DMatrix, DVector};

use super::simplex::{minimize, SimplexOptions};
use super::{check_series, gauss_newton_stderr, linear_lsq, FitError, FitResult};

const MIN_POINTS: usize = 6;

/// y∞ + (y₀ − y∞)·exp(−t/T1) with params = [y0, y_inf, t1].
pub fn exp_decay(t: f64, p: &[f64]) -> f64 {
    p[1] + (p[0] - p[1]) * (-t / p[2]).exp()
}

fn linear_part(t: &[f64], y: &DVector<f64>, t1: f64) -> Option<([f64; 2], f64)> {
    let n = t.len();
    let mut design = DMatrix::zeros(n, 2);
    for (i, &ti) in t.iter().enumerate() {
        let e = (-ti / t1).exp();
        design[(i, 0)] = e;
        design[(i, 1)] = 1.0 - e;
    }
    linear_lsq(&design, y).map(|(b, sse)| ([b[0], b[1]], sse))
}

/// Log-linear regression of (y − offset) against t, with the offset at the
/// extreme that the curve approaches.
fn initial_t1(t: &[f64], y: &[f64]) -> f64 {
    let (first, last) = (y[0], y[y.len() - 1]);
    let falling = first >= last;
    let offset = if falling {
        y.iter().cloned().fold(f64::INFINITY, f64::min)
    } else {
        y.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    };
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .map(|(&ti, &yi)| (ti, (yi - offset).abs()))
        .filter(|(_, d)| *d > 0.0)
        .map(|(ti, d)| (ti, d.ln()))
        .collect();
    let span = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - t.iter().cloned().fold(f64::INFINITY, f64::min);
    let fallback = span / 3.0;
    if pts.len() < 2 {
        return fallback;
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / m, sy / m);
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    if slope < 0.0 && slope.is_finite() {
        -1.0 / slope
    } else {
        fallback
    }
}

/// Single-exponential fit with free offset.
pub fn fit_exp_decay(t: &[f64], y: &[f64]) -> Result<FitResult, FitError> {
    check_series(t, y, MIN_POINTS)?;
    let max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let floor = 1e-12 * max.abs().max(min.abs()).max(f64::MIN_POSITIVE);
    if !(max - min > floor) {
        return Err(FitError::NoDynamicRange(max - min));
    }
    let yv = DVector::from_column_slice(y);
    let t1_0 = initial_t1(t, y);
    let run = minimize(
        |p| linear_part(t, &yv, p[0].exp()).map_or(f64::INFINITY, |(_, sse)| sse),
        &[t1_0.ln()],
        &[0.5],
        &SimplexOptions::default(),
    );
    let t1 = run.x[0].exp();
    let ([y0, y_inf], sse) = linear_part(t, &yv, t1).ok_or(FitError::NonFinite)?;
    let values = vec![y0, y_inf, t1];
    let stderr = gauss_newton_stderr(exp_decay, t, &values, sse);
    Ok(FitResult {
        model: "exp-decay",
        names: vec!["y0", "y_inf", "t1"],
        values,
        stderr,
        sse,
        converged: run.converged && sse.is_finite() && t1 > 0.0,
        iterations: run.iterations,
        unreliable: false,
    })
}
