//! End-to-end detection pipeline: amplify, project onto the service basis,
//! reconstruct through both autoencoder branches, transform back, and score
//! each timestamp by the worse branch's pointwise reconstruction error.

use ndarray::Array2;

use crate::autoenc::ModelState;
use crate::bench::ServiceDataset;
use crate::dualconv::amplify_time;
use crate::error::{Error, Result};
use crate::patex::{ca_dft, ca_idft, characterize, select_basis, BasisSet, Spectrum};
use crate::series::{minmax_normalize, sliding_windows, HyperParams, LabelSeries, NormStats, TimeSeriesWindow};

/// Scores with a threshold and the implied binary predictions.
#[derive(Debug, Clone)]
pub struct AnomalyScoreSeries {
    pub scores: Vec<f64>,
    pub threshold: f64,
    pub predictions: Vec<u8>,
}

impl AnomalyScoreSeries {
    pub fn new(scores: Vec<f64>, threshold: f64) -> Result<Self> {
        if let Some(&bad) = scores.iter().find(|s| !s.is_finite() || **s < 0.0) {
            return Err(Error::Numerical(format!(
                "scores must be finite and >= 0, got {bad}"
            )));
        }
        let predictions = scores.iter().map(|&s| (s > threshold) as u8).collect();
        Ok(Self {
            scores,
            threshold,
            predictions,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdMode {
    /// Scan all distinct score values and keep the F1-maximizing threshold
    /// (ties break toward the lower threshold). Requires labels.
    BestF1,
    /// The q-quantile of the scores.
    Quantile(f64),
}

/// Pipeline switches; the `--no-*` CLI flags map onto these.
#[derive(Debug, Clone)]
pub struct PipelineOptions {
    /// Select a per-service basis subset; when false the full spectrum is
    /// used (pattern-extraction ablation).
    pub use_patex: bool,
    /// Amplify in the time domain before the transform (time-domain
    /// dualistic-convolution ablation when false).
    pub amplify: bool,
    /// Replace the frequency-domain dualistic convolution with a plain
    /// strided convolution (frequency-domain ablation).
    pub linear_freq_conv: bool,
    /// Hop between training windows; defaults to the window size.
    pub train_hop: Option<usize>,
    pub epochs: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            use_patex: true,
            amplify: true,
            linear_freq_conv: false,
            train_hop: None,
            epochs: 200,
        }
    }
}

/// Per-service artifacts produced by fitting: normalization statistics and
/// the selected basis.
#[derive(Debug, Clone)]
pub struct ServiceFit {
    pub service_id: String,
    pub stats: NormStats,
    pub basis: BasisSet,
}

/// A fitted group: one shared model over every service's representations.
#[derive(Debug)]
pub struct GroupFit {
    pub services: Vec<ServiceFit>,
    pub model: ModelState,
    pub loss_curve: Vec<f64>,
}

/// Score one window: reconstruct both branches back to the time domain
/// (reusing the input phases) and take the element-wise max of the
/// per-branch pointwise squared errors against the (amplified) input.
pub fn score_window(
    model: &ModelState,
    basis: &BasisSet,
    hp: &HyperParams,
    window: &TimeSeriesWindow,
    amplify: bool,
) -> Result<Vec<f64>> {
    let input = if amplify {
        amplify_time(&window.values, hp)?
    } else {
        window.values.clone()
    };
    let input_win = TimeSeriesWindow::new(input, window.start_index, &window.service_id)?;
    let spectrum = ca_dft(&input_win, basis)?;
    let rep = characterize(&spectrum, basis)?;
    let out = model.forward(&rep)?;
    let recon_p = ca_idft(&Spectrum::from_amp_phase(&out.recon_peak, &rep.phases)?, basis)?;
    let recon_v = ca_idft(&Spectrum::from_amp_phase(&out.recon_valley, &rep.phases)?, basis)?;
    let (m, w) = input_win.values.dim();
    let mut scores = Vec::with_capacity(w);
    for t in 0..w {
        let mut err_p = 0.0;
        let mut err_v = 0.0;
        for f in 0..m {
            let x = input_win.values[[f, t]];
            let dp = recon_p[[f, t]] - x;
            let dv = recon_v[[f, t]] - x;
            err_p += dp * dp;
            err_v += dv * dv;
        }
        scores.push((err_p / m as f64).max(err_v / m as f64));
    }
    Ok(scores)
}

/// Per-timestamp mean of all window scores covering that timestamp.
pub fn aggregate(window_scores: &[Vec<f64>], offsets: &[usize], t_len: usize) -> Result<Vec<f64>> {
    if window_scores.len() != offsets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} score vectors vs {} offsets",
            window_scores.len(),
            offsets.len()
        )));
    }
    let mut sums = vec![0.0; t_len];
    let mut counts = vec![0usize; t_len];
    for (scores, &off) in window_scores.iter().zip(offsets) {
        if off + scores.len() > t_len {
            return Err(Error::ShapeMismatch(format!(
                "window at offset {off} with {} scores exceeds series length {t_len}",
                scores.len()
            )));
        }
        for (i, &s) in scores.iter().enumerate() {
            sums[off + i] += s;
            counts[off + i] += 1;
        }
    }
    if let Some(t) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidInput(format!(
            "timestamp {t} not covered by any window"
        )));
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| s / c as f64)
        .collect())
}

/// Pick a detection threshold on frozen scores.
pub fn choose_threshold(
    scores: &[f64],
    labels: Option<&LabelSeries>,
    mode: ThresholdMode,
) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("no scores to threshold".into()));
    }
    match mode {
        ThresholdMode::Quantile(q) => {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::InvalidInput(format!(
                    "quantile must lie in [0, 1], got {q}"
                )));
            }
            let mut sorted = scores.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let pos = q * (sorted.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            Ok(sorted[lo] * (1.0 - frac) + sorted[hi] * frac)
        }
        ThresholdMode::BestF1 => {
            let labels = labels.ok_or_else(|| {
                Error::InvalidInput("best_f1 thresholding requires labels".into())
            })?;
            if labels.len() != scores.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} labels vs {} scores",
                    labels.len(),
                    scores.len()
                )));
            }
            let flags = labels.as_slice();
            let total_pos = flags.iter().filter(|&&l| l == 1).count();
            // Sort indices by score descending; sweep the distinct values
            // from high to low so each group flips to positive once.
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
            let mut best = (f64::NEG_INFINITY, f64::INFINITY);
            let mut tp = 0usize;
            let mut fp = 0usize;
            let mut i = 0;
            while i < order.len() {
                let threshold = scores[order[i]];
                // Nothing scores strictly above the current maximum.
                let f1 = f1_from_counts(tp, fp, total_pos - tp);
                if f1 >= best.0 {
                    best = (f1, threshold);
                }
                // All points equal to `threshold` become positive once the
                // threshold drops below it.
                while i < order.len() && scores[order[i]] == threshold {
                    if flags[order[i]] == 1 {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                    i += 1;
                }
            }
            Ok(best.1)
        }
    }
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Point-adjust protocol: any hit inside a true anomaly segment marks the
/// whole segment as detected.
pub fn point_adjust(predictions: &[u8], labels: &LabelSeries) -> Result<Vec<u8>> {
    if predictions.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut adjusted = predictions.to_vec();
    for (start, end) in labels.segments() {
        if predictions[start..end].iter().any(|&p| p == 1) {
            for p in &mut adjusted[start..end] {
                *p = 1;
            }
        }
    }
    Ok(adjusted)
}

/// Per-service preprocessing: training-split normalization statistics and
/// basis selection over disjoint windows (the preprocessing stage artifacts).
pub fn preprocess_services(
    datasets: &[ServiceDataset],
    hp: &HyperParams,
    opts: &PipelineOptions,
) -> Result<Vec<ServiceFit>> {
    if datasets.is_empty() {
        return Err(Error::InvalidInput("group must contain >= 1 service".into()));
    }
    hp.validate()?;
    let w = hp.window_size;
    let mut services = Vec::with_capacity(datasets.len());
    for ds in datasets {
        let (train_norm, stats) = minmax_normalize(&ds.train, None)?;
        let basis = if opts.use_patex {
            let basis_windows = sliding_windows(&train_norm, w, w, &ds.service_id)?;
            select_basis(&basis_windows, hp.k_bases)?
        } else {
            BasisSet::full(&ds.service_id, w, train_norm.nrows())?
        };
        services.push(ServiceFit {
            service_id: ds.service_id.clone(),
            stats,
            basis,
        });
    }
    Ok(services)
}

/// Fit one group: per-service normalization and basis selection, then one
/// shared model trained on the union of all services' representations.
pub fn fit_service_group(
    datasets: &[ServiceDataset],
    hp: &HyperParams,
    opts: &PipelineOptions,
    seed: u64,
) -> Result<GroupFit> {
    let services = preprocess_services(datasets, hp, opts)?;
    let w = hp.window_size;
    let train_hop = opts.train_hop.unwrap_or(w);
    let mut reps = Vec::new();
    for (ds, fit) in datasets.iter().zip(&services) {
        let (train_norm, _) = minmax_normalize(&ds.train, Some(&fit.stats))?;
        for win in sliding_windows(&train_norm, w, train_hop, &ds.service_id)? {
            let input = if opts.amplify {
                amplify_time(&win.values, hp)?
            } else {
                win.values
            };
            let input_win = TimeSeriesWindow::new(input, win.start_index, &ds.service_id)?;
            let spectrum = ca_dft(&input_win, &fit.basis)?;
            reps.push(characterize(&spectrum, &fit.basis)?);
        }
    }
    let effective_k = if opts.use_patex {
        hp.k_bases
    } else {
        w / 2 + 1
    };
    let model_hp = HyperParams {
        k_bases: effective_k,
        ..hp.clone()
    };
    let mut model = ModelState::init(&model_hp, seed, opts.linear_freq_conv)?;
    let loss_curve = model.train(&reps, opts.epochs)?;
    Ok(GroupFit {
        services,
        model,
        loss_curve,
    })
}

/// Score a test matrix under one service's fit: normalize with the training
/// statistics, score every hop-1 window, and aggregate per timestamp.
pub fn score_service(
    model: &ModelState,
    fit: &ServiceFit,
    hp: &HyperParams,
    opts: &PipelineOptions,
    test: &Array2<f64>,
) -> Result<Vec<f64>> {
    let (test_norm, _) = minmax_normalize(test, Some(&fit.stats))?;
    let windows = sliding_windows(&test_norm, hp.window_size, 1, &fit.service_id)?;
    let mut window_scores = Vec::with_capacity(windows.len());
    let mut offsets = Vec::with_capacity(windows.len());
    for win in &windows {
        offsets.push(win.start_index);
        window_scores.push(score_window(model, &fit.basis, hp, win, opts.amplify)?);
    }
    aggregate(&window_scores, &offsets, test.ncols())
}
