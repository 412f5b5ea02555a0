use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SweepError {
    #[error("series `{label}` has {found} points but the abscissa has {expected}")]
    LengthMismatch {
        label: String,
        expected: usize,
        found: usize,
    },
    #[error("abscissa is not strictly monotone at index {0}")]
    NotMonotone(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub values: Vec<f64>,
}

/// One abscissa with one or more ordinate series plus free-form metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub x_label: String,
    pub x: Vec<f64>,
    pub series: Vec<Series>,
    pub meta: BTreeMap<String, String>,
}

impl SweepResult {
    pub fn new(
        x_label: impl Into<String>,
        x: Vec<f64>,
        y_label: impl Into<String>,
        y: Vec<f64>,
    ) -> Result<Self, SweepError> {
        Self::with_series(
            x_label,
            x,
            vec![Series {
                label: y_label.into(),
                values: y,
            }],
        )
    }

    pub fn with_series(
        x_label: impl Into<String>,
        x: Vec<f64>,
        series: Vec<Series>,
    ) -> Result<Self, SweepError> {
        let out = Self {
            x_label: x_label.into(),
            x,
            series,
            meta: BTreeMap::new(),
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        for s in &self.series {
            if s.values.len() != self.x.len() {
                return Err(SweepError::LengthMismatch {
                    label: s.label.clone(),
                    expected: self.x.len(),
                    found: s.values.len(),
                });
            }
        }
        check_strictly_monotone(&self.x)
    }

    /// First ordinate series.
    pub fn y(&self) -> &[f64] {
        self.series.first().map(|s| s.values.as_slice()).unwrap_or(&[])
    }

    pub fn y_label(&self) -> &str {
        self.series.first().map(|s| s.label.as_str()).unwrap_or("")
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.meta.insert(key.into(), value.to_string());
        self
    }
}

/// Ok if `x` is strictly increasing or strictly decreasing.
pub fn check_strictly_monotone(x: &[f64]) -> Result<(), SweepError> {
    if x.len() < 2 {
        return Ok(());
    }
    let increasing = x[1] > x[0];
    for (i, w) in x.windows(2).enumerate() {
        let ok = if increasing { w[1] > w[0] } else { w[1] < w[0] };
        if !ok {
            return Err(SweepError::NotMonotone(i + 1));
        }
    }
    Ok(())
}

/// Inclusive uniform grid from `start` to `stop`.
pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n)
            .map(|i| start + (stop - start) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Grid with spacing `step` covering [start, stop]; the last point is `stop`
/// when it falls within half a step of the grid.
pub fn arange_inclusive(start: f64, stop: f64, step: f64) -> Vec<f64> {
    if step <= 0.0 || stop < start {
        return vec![start];
    }
    let n = ((stop - start) / step + 0.5).floor() as usize + 1;
    (0..n).map(|i| start + step * i as f64).collect()
}

/// Logarithmically spaced grid, inclusive of both ends.
pub fn logspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    linspace(start.ln(), stop.ln(), n)
        .into_iter()
        .map(f64::exp)
        .collect()
}
