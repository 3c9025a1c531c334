//! Experiment orchestration: preprocess -> train -> detect -> eval per
//! group of ten services, with report files under the configured output
//! directory. Groups run concurrently; `MACE_THREADS` caps the pool.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::autoenc::{load_model, save_model};
use crate::bench::config::{DataMode, RunConfig, SynthAnomalyKind};
use crate::bench::dataset::{group_services, load_dataset, ServiceDataset};
use crate::bench::metrics::prf1;
use crate::bench::synth::{synth_generate, AnomalyEvent, AnomalyKind, SynthSpec};
use crate::detector::{
    choose_threshold, fit_service_group, point_adjust, preprocess_services, score_service,
    AnomalyScoreSeries, PipelineOptions, ServiceFit,
};
use crate::error::{Error, Result};
use crate::patex::{load_basis_csv, save_basis_csv};
use crate::series::{LabelSeries, NormStats};

/// CLI-level switches layered over the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub point_adjust: bool,
    pub no_patex: bool,
    pub no_dualconv_t: bool,
    pub no_dualconv_f: bool,
}

impl RunOptions {
    pub fn pipeline(&self, cfg: &RunConfig) -> PipelineOptions {
        PipelineOptions {
            use_patex: !self.no_patex,
            amplify: !self.no_dualconv_t,
            linear_freq_conv: self.no_dualconv_f,
            train_hop: Some(cfg.train_hop),
            epochs: cfg.epochs,
        }
    }

    pub fn effective_seed(&self, cfg: &RunConfig) -> u64 {
        self.seed.unwrap_or(cfg.seed)
    }
}

#[derive(Debug, Clone)]
pub struct ServiceMetrics {
    pub service_id: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug)]
pub struct GroupResult {
    pub index: usize,
    pub outcome: std::result::Result<Vec<ServiceMetrics>, (String, Error)>,
}

#[derive(Debug)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub groups: Vec<GroupResult>,
}

impl RunReport {
    /// Macro average over every successfully evaluated service.
    pub fn macro_metrics(&self) -> Option<(f64, f64, f64)> {
        let all: Vec<&ServiceMetrics> = self
            .groups
            .iter()
            .filter_map(|g| g.outcome.as_ref().ok())
            .flatten()
            .collect();
        macro_average(&all)
    }

    pub fn first_error(&self) -> Option<&(String, Error)> {
        self.groups.iter().find_map(|g| g.outcome.as_ref().err())
    }
}

fn macro_average(rows: &[&ServiceMetrics]) -> Option<(f64, f64, f64)> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    Some((
        rows.iter().map(|m| m.precision).sum::<f64>() / n,
        rows.iter().map(|m| m.recall).sum::<f64>() / n,
        rows.iter().map(|m| m.f1).sum::<f64>() / n,
    ))
}

fn group_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64).wrapping_mul(0x9e3779b97f4a7c15)
}

/// Deterministic synthetic fleet from the `synth_*` config keys. Service i
/// carries the dominant frequency 2 + i; contextual swaps borrow the next
/// service's pattern so the swapped span is normal elsewhere in the fleet.
pub fn build_synth_fleet(cfg: &RunConfig, seed: u64) -> Result<Vec<ServiceDataset>> {
    let n = cfg.synth_services;
    if n == 0 {
        return Err(Error::Config("synth_services must be >= 1".into()));
    }
    let max_freq = cfg.hp.window_size / 2;
    let components = |i: usize| -> Vec<(usize, f64)> {
        let base = 2 + (i % (max_freq.saturating_sub(2).max(1)));
        vec![(base, 1.0)]
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut anomalies = Vec::new();
        let count = cfg.synth_anomaly_count;
        let dur = cfg.synth_anomaly_duration;
        for j in 0..count {
            // Evenly spaced events with a deterministic per-service offset.
            let slot = cfg.synth_t_test / (count + 1);
            let position = (slot * (j + 1) + i * 7) % cfg.synth_t_test.saturating_sub(dur + 1).max(1);
            let kind = match cfg.synth_anomaly {
                SynthAnomalyKind::PointSpike => AnomalyKind::PointSpike {
                    magnitude: cfg.synth_anomaly_magnitude,
                },
                SynthAnomalyKind::LevelShift => AnomalyKind::LevelShift {
                    magnitude: cfg.synth_anomaly_magnitude,
                },
                SynthAnomalyKind::ContextualSwap => AnomalyKind::ContextualSwap {
                    pattern: components((i + 1) % n),
                },
                SynthAnomalyKind::Mixed => match j % 3 {
                    0 => AnomalyKind::PointSpike {
                        magnitude: cfg.synth_anomaly_magnitude,
                    },
                    1 => AnomalyKind::LevelShift {
                        magnitude: cfg.synth_anomaly_magnitude,
                    },
                    _ => AnomalyKind::ContextualSwap {
                        pattern: components((i + 1) % n),
                    },
                },
            };
            anomalies.push(AnomalyEvent {
                kind,
                position,
                duration: dur,
            });
        }
        let spec = SynthSpec {
            service_id: format!("svc_{i:02}"),
            seed: group_seed(seed, 1000 + i),
            m_feat: cfg.synth_m_feat,
            window: cfg.hp.window_size,
            t_train: cfg.synth_t_train,
            t_test: cfg.synth_t_test,
            components: components(i),
            noise_sd: cfg.synth_noise_sd,
            anomalies,
        };
        out.push(synth_generate(&spec)?);
    }
    Ok(out)
}

/// Materialize the configured data source.
pub fn prepare_data(cfg: &RunConfig, opts: &RunOptions) -> Result<Vec<ServiceDataset>> {
    match cfg.data_mode {
        DataMode::Synth => build_synth_fleet(cfg, opts.effective_seed(cfg)),
        DataMode::Smd => load_dataset(cfg.data_root.as_ref().expect("validated")),
    }
}

fn group_dir(cfg: &RunConfig, index: usize) -> PathBuf {
    cfg.out_dir.join(format!("group_{index}"))
}

fn save_norm_stats(fits: &[ServiceFit], path: &Path) -> Result<()> {
    let mut text = String::new();
    for fit in fits {
        for (f, (lo, hi)) in fit.stats.min.iter().zip(&fit.stats.max).enumerate() {
            writeln!(text, "{},{},{},{}", fit.service_id, f, lo, hi).expect("string write");
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_norm_stats(path: &Path) -> Result<Vec<(String, NormStats)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut order: Vec<String> = Vec::new();
    let mut acc: std::collections::HashMap<String, (Vec<f64>, Vec<f64>)> = Default::default();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::Data(format!(
                "{}: line {}: expected 4 fields",
                path.display(),
                lineno + 1
            )));
        }
        let id = parts[0].to_string();
        let lo: f64 = parts[2].parse().map_err(|_| {
            Error::Data(format!("{}: line {}: bad min", path.display(), lineno + 1))
        })?;
        let hi: f64 = parts[3].parse().map_err(|_| {
            Error::Data(format!("{}: line {}: bad max", path.display(), lineno + 1))
        })?;
        if !acc.contains_key(&id) {
            order.push(id.clone());
        }
        let slot = acc.entry(id).or_default();
        slot.0.push(lo);
        slot.1.push(hi);
    }
    order
        .into_iter()
        .map(|id| {
            let (min, max) = acc.remove(&id).unwrap();
            Ok((id.clone(), NormStats::new(min, max)?))
        })
        .collect()
}

fn save_scores(
    path: &Path,
    series: &AnomalyScoreSeries,
    predictions: &[u8],
    labels: &LabelSeries,
) -> Result<()> {
    let mut text = String::new();
    for (t, ((score, &pred), &label)) in series
        .scores
        .iter()
        .zip(predictions)
        .zip(labels.as_slice())
        .enumerate()
    {
        writeln!(text, "{t},{score},{pred},{label}").expect("string write");
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_scores(path: &Path) -> Result<(Vec<f64>, Vec<u8>, Vec<u8>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut scores = Vec::new();
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::Data(format!(
                "{}: line {}: expected timestamp,score,prediction,label",
                path.display(),
                lineno + 1
            )));
        }
        let fail = |what: &str| {
            Error::Data(format!(
                "{}: line {}: bad {what}",
                path.display(),
                lineno + 1
            ))
        };
        scores.push(parts[1].parse().map_err(|_| fail("score"))?);
        preds.push(parts[2].parse().map_err(|_| fail("prediction"))?);
        labels.push(parts[3].parse().map_err(|_| fail("label"))?);
    }
    Ok((scores, preds, labels))
}

fn write_metrics_csv(path: &Path, rows: &[ServiceMetrics]) -> Result<()> {
    let mut text = String::from("service_id,precision,recall,f1\n");
    for m in rows {
        writeln!(
            text,
            "{},{:.6},{:.6},{:.6}",
            m.service_id, m.precision, m.recall, m.f1
        )
        .expect("string write");
    }
    if let Some((p, r, f1)) = macro_average(&rows.iter().collect::<Vec<_>>()) {
        writeln!(text, "macro,{p:.6},{r:.6},{f1:.6}").expect("string write");
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn tag<T>(stage: &str, r: Result<T>) -> std::result::Result<T, (String, Error)> {
    r.map_err(|e| (stage.to_string(), e))
}

/// Train, detect, and evaluate one group, writing its artifacts.
fn run_group(
    index: usize,
    services: &[ServiceDataset],
    cfg: &RunConfig,
    opts: &RunOptions,
) -> std::result::Result<Vec<ServiceMetrics>, (String, Error)> {
    let dir = group_dir(cfg, index);
    tag(
        "setup",
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e)),
    )?;
    let popts = opts.pipeline(cfg);
    let seed = group_seed(opts.effective_seed(cfg), index);

    let fit = tag("train", fit_service_group(services, &cfg.hp, &popts, seed))?;
    tag(
        "train",
        save_basis_csv(
            &fit.services.iter().map(|s| s.basis.clone()).collect::<Vec<_>>(),
            &dir.join("basis.csv"),
        ),
    )?;
    tag("train", save_norm_stats(&fit.services, &dir.join("norm_stats.csv")))?;
    tag("train", save_model(&fit.model, &dir.join("model.bin")))?;
    let mut curve = String::from("epoch,loss\n");
    for (e, l) in fit.loss_curve.iter().enumerate() {
        writeln!(curve, "{e},{l}").expect("string write");
    }
    let curve_path = dir.join("loss_curve.csv");
    tag(
        "train",
        std::fs::write(&curve_path, curve).map_err(|e| Error::io(&curve_path, e)),
    )?;

    let mut rows = Vec::with_capacity(services.len());
    for (ds, sfit) in services.iter().zip(&fit.services) {
        let scores = tag(
            "detect",
            score_service(&fit.model, sfit, &cfg.hp, &popts, &ds.test),
        )?;
        let mode = cfg.threshold.resolve(true);
        let thr = tag("detect", choose_threshold(&scores, Some(&ds.labels), mode))?;
        let series = tag("detect", AnomalyScoreSeries::new(scores, thr))?;
        let predictions = if opts.point_adjust {
            tag("eval", point_adjust(&series.predictions, &ds.labels))?
        } else {
            series.predictions.clone()
        };
        tag(
            "detect",
            save_scores(
                &dir.join(format!("scores_{}.csv", ds.service_id)),
                &series,
                &predictions,
                &ds.labels,
            ),
        )?;
        let (precision, recall, f1) = tag("eval", prf1(&predictions, &ds.labels))?;
        rows.push(ServiceMetrics {
            service_id: ds.service_id.clone(),
            precision,
            recall,
            f1,
        });
    }
    tag("eval", write_metrics_csv(&dir.join("metrics.csv"), &rows))?;
    Ok(rows)
}

fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let threads = std::env::var("MACE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Full experiment: every group through train/detect/eval, plus the
/// combined metrics CSV and a run manifest. Failed groups are recorded and
/// do not stop the others.
pub fn run_experiment(cfg: &RunConfig, opts: &RunOptions) -> Result<RunReport> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let started = Instant::now();
    let data = prepare_data(cfg, opts)?;
    let groups: Vec<(usize, &[ServiceDataset])> =
        group_services(&data).into_iter().enumerate().collect();

    let results: Vec<GroupResult> = with_pool(|| {
        groups
            .par_iter()
            .map(|(index, services)| GroupResult {
                index: *index,
                outcome: run_group(*index, services, cfg, opts),
            })
            .collect()
    })?;

    let all_rows: Vec<ServiceMetrics> = results
        .iter()
        .filter_map(|g| g.outcome.as_ref().ok())
        .flatten()
        .cloned()
        .collect();
    if !all_rows.is_empty() {
        write_metrics_csv(&cfg.out_dir.join("metrics.csv"), &all_rows)?;
    }

    let mut manifest = String::new();
    writeln!(manifest, "seed = {}", opts.effective_seed(cfg)).expect("string write");
    writeln!(manifest, "groups = {}", results.len()).expect("string write");
    writeln!(
        manifest,
        "options = point_adjust:{} no_patex:{} no_dualconv_t:{} no_dualconv_f:{}",
        opts.point_adjust, opts.no_patex, opts.no_dualconv_t, opts.no_dualconv_f
    )
    .expect("string write");
    for g in &results {
        match &g.outcome {
            Ok(rows) => {
                writeln!(manifest, "group_{} = ok ({} services)", g.index, rows.len())
                    .expect("string write")
            }
            Err((stage, err)) => {
                writeln!(manifest, "group_{} = failed at {stage}: {err}", g.index)
                    .expect("string write")
            }
        }
    }
    writeln!(manifest, "elapsed_seconds = {:.3}", started.elapsed().as_secs_f64())
        .expect("string write");
    let manifest_path = cfg.out_dir.join("run_manifest.txt");
    std::fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;

    Ok(RunReport {
        out_dir: cfg.out_dir.clone(),
        groups: results,
    })
}

/// Basis selection and normalization statistics only.
pub fn stage_preprocess(cfg: &RunConfig, opts: &RunOptions) -> Result<()> {
    cfg.validate()?;
    let data = prepare_data(cfg, opts)?;
    let popts = opts.pipeline(cfg);
    for (index, services) in group_services(&data).into_iter().enumerate() {
        let dir = group_dir(cfg, index);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let fits = preprocess_services(services, &cfg.hp, &popts)?;
        let bases: Vec<_> = fits.iter().map(|f| f.basis.clone()).collect();
        save_basis_csv(&bases, &dir.join("basis.csv"))?;
        save_norm_stats(&fits, &dir.join("norm_stats.csv"))?;
    }
    Ok(())
}

/// Fit and persist models (includes preprocessing artifacts).
pub fn stage_train(cfg: &RunConfig, opts: &RunOptions) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let data = prepare_data(cfg, opts)?;
    let popts = opts.pipeline(cfg);
    for (index, services) in group_services(&data).into_iter().enumerate() {
        let dir = group_dir(cfg, index);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let seed = group_seed(opts.effective_seed(cfg), index);
        let fit = fit_service_group(services, &cfg.hp, &popts, seed)?;
        let bases: Vec<_> = fit.services.iter().map(|s| s.basis.clone()).collect();
        save_basis_csv(&bases, &dir.join("basis.csv"))?;
        save_norm_stats(&fit.services, &dir.join("norm_stats.csv"))?;
        save_model(&fit.model, &dir.join("model.bin"))?;
        let mut curve = String::from("epoch,loss\n");
        for (e, l) in fit.loss_curve.iter().enumerate() {
            writeln!(curve, "{e},{l}").expect("string write");
        }
        let curve_path = dir.join("loss_curve.csv");
        std::fs::write(&curve_path, curve).map_err(|e| Error::io(&curve_path, e))?;
    }
    Ok(())
}

/// Score test data against persisted artifacts and write score CSVs.
pub fn stage_detect(cfg: &RunConfig, opts: &RunOptions) -> Result<()> {
    cfg.validate()?;
    let data = prepare_data(cfg, opts)?;
    let popts = opts.pipeline(cfg);
    for (index, services) in group_services(&data).into_iter().enumerate() {
        let dir = group_dir(cfg, index);
        let model = load_model(&dir.join("model.bin"))?;
        let bases = load_basis_csv(&dir.join("basis.csv"), cfg.hp.window_size)?;
        let stats = load_norm_stats(&dir.join("norm_stats.csv"))?;
        for ds in services {
            let basis = bases
                .iter()
                .find(|b| b.service_id == ds.service_id)
                .ok_or_else(|| {
                    Error::Data(format!("no persisted basis for {}", ds.service_id))
                })?;
            let st = stats
                .iter()
                .find(|(id, _)| *id == ds.service_id)
                .ok_or_else(|| {
                    Error::Data(format!("no persisted stats for {}", ds.service_id))
                })?;
            let fit = ServiceFit {
                service_id: ds.service_id.clone(),
                stats: st.1.clone(),
                basis: basis.clone(),
            };
            let scores = score_service(&model, &fit, &cfg.hp, &popts, &ds.test)?;
            let mode = cfg.threshold.resolve(true);
            let thr = choose_threshold(&scores, Some(&ds.labels), mode)?;
            let series = AnomalyScoreSeries::new(scores, thr)?;
            let predictions = if opts.point_adjust {
                point_adjust(&series.predictions, &ds.labels)?
            } else {
                series.predictions.clone()
            };
            save_scores(
                &dir.join(format!("scores_{}.csv", ds.service_id)),
                &series,
                &predictions,
                &ds.labels,
            )?;
        }
    }
    Ok(())
}

/// Recompute metrics from persisted score CSVs.
pub fn stage_eval(cfg: &RunConfig, opts: &RunOptions) -> Result<()> {
    cfg.validate()?;
    let data = prepare_data(cfg, opts)?;
    let mut all_rows = Vec::new();
    for (index, services) in group_services(&data).into_iter().enumerate() {
        let dir = group_dir(cfg, index);
        let mut rows = Vec::new();
        for ds in services {
            let path = dir.join(format!("scores_{}.csv", ds.service_id));
            let (_, preds, labels) = load_scores(&path)?;
            let labels = LabelSeries::new(labels)?;
            let preds = if opts.point_adjust {
                point_adjust(&preds, &labels)?
            } else {
                preds
            };
            let (precision, recall, f1) = prf1(&preds, &labels)?;
            rows.push(ServiceMetrics {
                service_id: ds.service_id.clone(),
                precision,
                recall,
                f1,
            });
        }
        write_metrics_csv(&dir.join("metrics.csv"), &rows)?;
        all_rows.extend(rows);
    }
    if !all_rows.is_empty() {
        write_metrics_csv(&cfg.out_dir.join("metrics.csv"), &all_rows)?;
    }
    Ok(())
}
