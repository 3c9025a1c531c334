//! Shared domain types: windows, labels, hyperparameters, normalization.

use ndarray::Array2;

use crate::error::{Error, Result};

/// One sliding window of multivariate readings, the unit of detection.
///
/// `values` is laid out `[m_feat, len]`: one row per feature dimension.
#[derive(Debug, Clone)]
pub struct TimeSeriesWindow {
    pub values: Array2<f64>,
    pub start_index: usize,
    pub service_id: String,
}

impl TimeSeriesWindow {
    pub fn new(values: Array2<f64>, start_index: usize, service_id: &str) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidInput(format!(
                "window must be non-empty, got {} features x {} samples",
                values.nrows(),
                values.ncols()
            )));
        }
        check_finite(&values)?;
        Ok(Self {
            values,
            start_index,
            service_id: service_id.to_string(),
        })
    }

    pub fn m_feat(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }
}

/// Per-timestamp binary anomaly flags (0 = normal, 1 = anomaly).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSeries(Vec<u8>);

impl LabelSeries {
    pub fn new(labels: Vec<u8>) -> Result<Self> {
        if let Some(idx) = labels.iter().position(|&l| l > 1) {
            return Err(Error::InvalidInput(format!(
                "label at index {idx} is {}, expected 0 or 1",
                labels[idx]
            )));
        }
        Ok(Self(labels))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    /// Index ranges `[start, end)` of each contiguous anomaly segment.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = None;
        for (i, &l) in self.0.iter().enumerate() {
            match (l, start) {
                (1, None) => start = Some(i),
                (0, Some(s)) => {
                    out.push((s, i));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push((s, self.0.len()));
        }
        out
    }
}

/// Detector hyperparameters. `gamma_t`/`gamma_f` are the peak-branch powers;
/// the valley branches use their negations.
#[derive(Debug, Clone)]
pub struct HyperParams {
    pub gamma_t: i32,
    pub gamma_f: i32,
    pub sigma_t: f64,
    pub sigma_f: f64,
    pub kernel_len: usize,
    pub window_size: usize,
    pub k_bases: usize,
    pub learning_rate: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            gamma_t: 7,
            gamma_f: 7,
            sigma_t: 5.0,
            sigma_f: 5.0,
            kernel_len: 5,
            window_size: 40,
            k_bases: 20,
            learning_rate: 0.001,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("gamma_t", self.gamma_t), ("gamma_f", self.gamma_f)] {
            if g % 2 == 0 || g.abs() < 3 {
                return Err(Error::InvalidInput(format!(
                    "{name} must be odd with |gamma| >= 3, got {g}"
                )));
            }
        }
        for (name, s) in [("sigma_t", self.sigma_t), ("sigma_f", self.sigma_f)] {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "{name} must be a positive finite real, got {s}"
                )));
            }
        }
        if self.kernel_len == 0 {
            return Err(Error::InvalidInput("kernel_len must be >= 1".into()));
        }
        if self.window_size == 0 {
            return Err(Error::InvalidInput("window_size must be >= 1".into()));
        }
        let n_bins = self.window_size / 2 + 1;
        if self.k_bases == 0 || self.k_bases > n_bins {
            return Err(Error::InvalidInput(format!(
                "k_bases must be in [1, {n_bins}] for window_size {}, got {}",
                self.window_size, self.k_bases
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidInput(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    /// Time-domain convolution stride (anomaly amplification).
    pub fn stride_t(&self) -> usize {
        1
    }

    /// Frequency-domain convolution stride (pooling).
    pub fn stride_f(&self) -> usize {
        self.kernel_len
    }
}

/// Per-feature min/max captured on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if min.len() != max.len() {
            return Err(Error::ShapeMismatch(format!(
                "min has {} entries, max has {}",
                min.len(),
                max.len()
            )));
        }
        for (i, (lo, hi)) in min.iter().zip(&max).enumerate() {
            if lo > hi {
                return Err(Error::InvalidInput(format!(
                    "feature {i}: min {lo} > max {hi}"
                )));
            }
        }
        Ok(Self { min, max })
    }
}

fn check_finite(values: &Array2<f64>) -> Result<()> {
    for ((feature, index), &v) in values.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { feature, index });
        }
    }
    Ok(())
}

/// Min-max scale each feature row to `[0, 1]` using `stats` when given
/// (training-set statistics), otherwise statistics of `raw` itself.
///
/// Constant features map to 0.5. Values outside the training range are not
/// clipped, so test data may leave `[0, 1]`.
pub fn minmax_normalize(
    raw: &Array2<f64>,
    stats: Option<&NormStats>,
) -> Result<(Array2<f64>, NormStats)> {
    check_finite(raw)?;
    let m = raw.nrows();
    let stats = match stats {
        Some(s) => {
            if s.min.len() != m {
                return Err(Error::ShapeMismatch(format!(
                    "stats cover {} features, data has {m}",
                    s.min.len()
                )));
            }
            s.clone()
        }
        None => {
            let mut min = vec![f64::INFINITY; m];
            let mut max = vec![f64::NEG_INFINITY; m];
            for (i, row) in raw.rows().into_iter().enumerate() {
                for &v in row {
                    min[i] = min[i].min(v);
                    max[i] = max[i].max(v);
                }
            }
            NormStats::new(min, max)?
        }
    };
    let mut out = raw.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let (lo, hi) = (stats.min[i], stats.max[i]);
        let span = hi - lo;
        if span == 0.0 {
            row.fill(0.5);
        } else {
            row.mapv_inplace(|v| (v - lo) / span);
        }
    }
    Ok((out, stats))
}

/// Cut `series` into windows of width `w` at offsets `0, hop, 2*hop, ...`.
/// A final partial window is dropped.
pub fn sliding_windows(
    series: &Array2<f64>,
    w: usize,
    hop: usize,
    service_id: &str,
) -> Result<Vec<TimeSeriesWindow>> {
    if w == 0 {
        return Err(Error::InvalidInput("window size must be >= 1".into()));
    }
    if hop == 0 {
        return Err(Error::InvalidInput("hop must be >= 1".into()));
    }
    let t = series.ncols();
    if t < w {
        return Err(Error::InvalidInput(format!(
            "series length {t} is shorter than window size {w}"
        )));
    }
    let count = (t - w) / hop + 1;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * hop;
        let values = series.slice(ndarray::s![.., start..start + w]).to_owned();
        out.push(TimeSeriesWindow::new(values, start, service_id)?);
    }
    Ok(out)
}
