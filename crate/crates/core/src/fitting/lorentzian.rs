use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::simplex::{minimize, SimplexOptions, SimplexResult};
use super::{check_series, gauss_newton_stderr, linear_lsq, FitError, FitResult};

/// Fits whose dip separation is below this many (mean) full widths at half
/// maximum are flagged unreliable.
pub const RELIABLE_SEPARATION: f64 = 1.0;

const MIN_POINTS: usize = 12;

/// Simplex iterations spent on each start before only the best is refined.
const SCREEN_ITERATIONS: usize = 60;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DoubleLorentzianOptions {
    pub shared_width: bool,
    pub simplex: SimplexOptions,
}

/// b − a₁·w₁²/(w₁² + (x − c₁)²) − a₂·w₂²/(w₂² + (x − c₂)²) with
/// params = [b, a1, c1, w1, a2, c2, w2].
pub fn double_lorentzian(x: f64, p: &[f64]) -> f64 {
    p[0] - p[1] * unit(x, p[2], p[3]) - p[4] * unit(x, p[5], p[6])
}

fn unit(x: f64, c: f64, w: f64) -> f64 {
    let w2 = w * w;
    w2 / (w2 + (x - c) * (x - c))
}

pub fn fit_double_lorentzian(x: &[f64], y: &[f64]) -> Result<FitResult, FitError> {
    fit_double_lorentzian_with(x, y, &DoubleLorentzianOptions::default())
}

/// Best (b, a1, a2) with a1, a2 ≥ 0 for fixed centers and widths.
fn amplitudes(x: &[f64], y: &DVector<f64>, c: [f64; 2], w: [f64; 2]) -> Option<([f64; 3], f64)> {
    let n = x.len();
    let cols: [Vec<f64>; 3] = [
        vec![1.0; n],
        x.iter().map(|&xi| -unit(xi, c[0], w[0])).collect(),
        x.iter().map(|&xi| -unit(xi, c[1], w[1])).collect(),
    ];
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    let gram = Matrix3::from_fn(|i, j| dot(&cols[i], &cols[j]));
    let rhs = Vector3::from_fn(|i, _| dot(&cols[i], y.as_slice()));
    let mut best: Option<([f64; 3], f64)> = None;
    // Enumerate which amplitudes are clamped to zero; the problem is convex,
    // so the cheapest feasible candidate is the constrained optimum.
    for active in [[true, true], [true, false], [false, true], [false, false]] {
        let free: Vec<usize> = std::iter::once(0).chain((1..3).filter(|&k| active[k - 1])).collect();
        let beta = solve_normal(&gram, &rhs, &free).or_else(|| {
            let design = DMatrix::from_fn(n, free.len(), |i, j| cols[free[j]][i]);
            linear_lsq(&design, y).map(|(b, _)| b.as_slice().to_vec())
        })?;
        let mut amps = [0.0; 3];
        for (j, &k) in free.iter().enumerate() {
            amps[k] = beta[j];
        }
        if amps[1] < 0.0 || amps[2] < 0.0 {
            continue;
        }
        let sse = (0..n)
            .map(|i| {
                let r = y[i] - amps[0] - amps[1] * cols[1][i] - amps[2] * cols[2][i];
                r * r
            })
            .sum::<f64>();
        if best.as_ref().is_none_or(|b| sse < b.1) {
            best = Some((amps, sse));
        }
    }
    best
}

/// Cholesky solve of the normal equations restricted to `free`; `None` when
/// the columns are too close to collinear for that to be accurate.
fn solve_normal(gram: &Matrix3<f64>, rhs: &Vector3<f64>, free: &[usize]) -> Option<Vec<f64>> {
    let k = free.len();
    let g = DMatrix::from_fn(k, k, |i, j| gram[(free[i], free[j])]);
    let r = DVector::from_fn(k, |i, _| rhs[free[i]]);
    let chol = g.cholesky()?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(*d), hi.max(*d)));
    if !(lo > 1e-5 * hi) {
        return None;
    }
    Some(chol.solve(&r).as_slice().to_vec())
}

fn smooth3(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            y[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Half width at half depth around index `i`, from linear interpolation of
/// the crossings on either side.
fn half_depth_width(x: &[f64], s: &[f64], i: usize, baseline: f64) -> Option<f64> {
    let level = baseline - 0.5 * (baseline - s[i]);
    let cross = |a: usize, b: usize| x[a] + (level - s[a]) * (x[b] - x[a]) / (s[b] - s[a]);
    let mut sides = Vec::new();
    if let Some(k) = (0..i).rev().find(|&k| s[k] >= level) {
        sides.push(x[i] - cross(k, k + 1));
    }
    if let Some(k) = (i + 1..s.len()).find(|&k| s[k] >= level) {
        sides.push(cross(k, k - 1) - x[i]);
    }
    let w: Vec<f64> = sides.into_iter().filter(|w| *w > 0.0).collect();
    (!w.is_empty()).then(|| w.iter().sum::<f64>() / w.len() as f64)
}

/// Candidate (centers, widths) starts: the deepest minimum paired with the
/// next few, plus starts for a second dip hidden in its tail or absent.
fn initial_guesses(x: &[f64], y: &[f64]) -> Vec<([f64; 2], [f64; 2])> {
    let s = smooth3(y);
    let baseline = median(y);
    let n = s.len();
    let span = x[n - 1] - x[0];
    let mut minima: Vec<usize> = (1..n - 1)
        .filter(|&i| s[i] < s[i - 1] && s[i] <= s[i + 1])
        .collect();
    if minima.is_empty() {
        minima.push((0..n).min_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap_or(0));
    }
    // deepest first, leftmost among equals
    minima.sort_by(|&a, &b| s[a].total_cmp(&s[b]).then(a.cmp(&b)));

    let first = minima[0];
    let w1 = half_depth_width(x, &s, first, baseline).unwrap_or(span / 20.0);
    let c1 = x[first];
    let mut starts: Vec<([f64; 2], [f64; 2])> = minima[1..]
        .iter()
        .copied()
        .filter(|&j| (x[j] - c1).abs() > w1)
        .take(3)
        .map(|j| ([c1, x[j]], [w1, half_depth_width(x, &s, j, baseline).unwrap_or(w1)]))
        .collect();
    // hidden-dip starts, always tried
    let far = if c1 - x[0] > x[n - 1] - c1 { x[0] } else { x[n - 1] };
    starts.push(([c1, far], [w1, w1]));
    for k in [0.5, 1.5, 3.0] {
        starts.push(([c1 - 0.5 * k * w1, c1 + 0.5 * k * w1], [0.7 * w1, 0.7 * w1]));
        starts.push(([c1, c1 - k * w1], [w1, w1]));
        starts.push(([c1, c1 + k * w1], [w1, w1]));
    }
    starts
}

/// Double-Lorentzian dip fit with non-negative amplitudes and c₁ < c₂.
pub fn fit_double_lorentzian_with(
    x: &[f64],
    y: &[f64],
    opts: &DoubleLorentzianOptions,
) -> Result<FitResult, FitError> {
    check_series(x, y, MIN_POINTS)?;
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let range = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - ys.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(range > 0.0) {
        return Err(FitError::NoDynamicRange(range));
    }
    let yv = DVector::from_column_slice(&ys);

    let shared = opts.shared_width;
    let unpack = |p: &[f64]| -> ([f64; 2], [f64; 2]) {
        if shared {
            let w = p[1].exp();
            ([p[0], p[2]], [w, w])
        } else {
            ([p[0], p[2]], [p[1].exp(), p[3].exp()])
        }
    };
    let objective = |p: &[f64]| {
        let (c, w) = unpack(p);
        amplitudes(&xs, &yv, c, w).map_or(f64::INFINITY, |(_, sse)| sse)
    };
    let guesses = initial_guesses(&xs, &ys);
    let screen = SimplexOptions {
        max_iterations: SCREEN_ITERATIONS.min(opts.simplex.max_iterations),
        ..opts.simplex
    };
    let mut best: Option<(SimplexResult, Vec<f64>)> = None;
    for (gc, gw) in &guesses {
        let (x0, steps) = if shared {
            let w = 0.5 * (gw[0] + gw[1]);
            (vec![gc[0], w.ln(), gc[1]], vec![0.5 * w, 0.3, 0.5 * w])
        } else {
            (
                vec![gc[0], gw[0].ln(), gc[1], gw[1].ln()],
                vec![0.5 * gw[0], 0.3, 0.5 * gw[1], 0.3],
            )
        };
        let opts = if guesses.len() == 1 { &opts.simplex } else { &screen };
        let run = minimize(objective, &x0, &steps, opts);
        if best.as_ref().is_none_or(|b| run.value < b.0.value) {
            best = Some((run, steps));
        }
    }
    let (mut run, steps) = best.expect("at least one start");
    if !run.converged {
        let polish = minimize(objective, &run.x, &steps, &opts.simplex);
        if polish.value <= run.value {
            run = polish;
        }
    }

    let (mut c, mut w) = unpack(&run.x);
    let (mut amps, sse) = amplitudes(&xs, &yv, c, w).ok_or(FitError::NonFinite)?;
    if c[0] > c[1] {
        c.swap(0, 1);
        w.swap(0, 1);
        amps.swap(1, 2);
    }
    let values = vec![amps[0], amps[1], c[0], w[0], amps[2], c[1], w[1]];

    let stderr = if shared {
        let model = |xi: f64, p: &[f64]| double_lorentzian(xi, &[p[0], p[1], p[2], p[3], p[4], p[5], p[3]]);
        let reduced = [values[0], values[1], values[2], values[3], values[4], values[5]];
        let e = gauss_newton_stderr(model, &xs, &reduced, sse);
        vec![e[0], e[1], e[2], e[3], e[4], e[5], e[3]]
    } else {
        gauss_newton_stderr(double_lorentzian, &xs, &values, sse)
    };

    let separation = (c[1] - c[0]) / (w[0] + w[1]);
    Ok(FitResult {
        model: "double-lorentzian",
        names: vec!["b", "a1", "c1", "w1", "a2", "c2", "w2"],
        values,
        stderr,
        sse,
        converged: run.converged && sse.is_finite(),
        iterations: run.iterations,
        unreliable: separation < RELIABLE_SEPARATION,
    })
}
