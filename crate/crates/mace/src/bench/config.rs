//! Flat `key = value` run configuration. `#` starts a comment; unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use crate::detector::ThresholdMode;
use crate::error::{Error, Result};
use crate::series::HyperParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataMode {
    /// In-memory synthetic fleet from the `synth_*` keys.
    Synth,
    /// smd-style directory at `data_root`.
    Smd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthAnomalyKind {
    PointSpike,
    LevelShift,
    ContextualSwap,
    /// Rotate through the three kinds event by event.
    Mixed,
}

/// Threshold selection; `Auto` resolves to best-F1 when labels exist and
/// the 0.99 quantile otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdConfig {
    Auto,
    BestF1,
    Quantile(f64),
}

impl ThresholdConfig {
    pub fn resolve(&self, have_labels: bool) -> ThresholdMode {
        match self {
            ThresholdConfig::Auto => {
                if have_labels {
                    ThresholdMode::BestF1
                } else {
                    ThresholdMode::Quantile(0.99)
                }
            }
            ThresholdConfig::BestF1 => ThresholdMode::BestF1,
            ThresholdConfig::Quantile(q) => ThresholdMode::Quantile(*q),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data_mode: DataMode,
    pub data_root: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,

    pub synth_services: usize,
    pub synth_m_feat: usize,
    pub synth_t_train: usize,
    pub synth_t_test: usize,
    pub synth_noise_sd: f64,
    pub synth_anomaly: SynthAnomalyKind,
    pub synth_anomaly_count: usize,
    pub synth_anomaly_duration: usize,
    pub synth_anomaly_magnitude: f64,

    pub hp: HyperParams,
    pub epochs: usize,
    pub train_hop: usize,
    pub threshold: ThresholdConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_mode: DataMode::Synth,
            data_root: None,
            out_dir: PathBuf::from("runs/out"),
            seed: 0,
            synth_services: 10,
            synth_m_feat: 2,
            synth_t_train: 1200,
            synth_t_test: 1200,
            synth_noise_sd: 0.03,
            synth_anomaly: SynthAnomalyKind::ContextualSwap,
            synth_anomaly_count: 3,
            synth_anomaly_duration: 100,
            synth_anomaly_magnitude: 3.0,
            hp: HyperParams::default(),
            epochs: 200,
            train_hop: 40,
            threshold: ThresholdConfig::Auto,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        let bad = |lineno: usize, msg: String| {
            Error::Config(format!("{}: line {}: {msg}", path.display(), lineno + 1))
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(lineno, format!("expected `key = value`, got {line:?}")))?;
            let key = key.trim();
            let value = value.trim();
            let parse_usize = || -> Result<usize> {
                value
                    .parse()
                    .map_err(|_| bad(lineno, format!("{key}: bad integer {value:?}")))
            };
            let parse_f64 = || -> Result<f64> {
                value
                    .parse()
                    .map_err(|_| bad(lineno, format!("{key}: bad real {value:?}")))
            };
            let parse_i32 = || -> Result<i32> {
                value
                    .parse()
                    .map_err(|_| bad(lineno, format!("{key}: bad integer {value:?}")))
            };
            match key {
                "data_mode" => {
                    cfg.data_mode = match value {
                        "synth" => DataMode::Synth,
                        "smd" => DataMode::Smd,
                        other => return Err(bad(lineno, format!("unknown data_mode {other:?}"))),
                    }
                }
                "data_root" => cfg.data_root = Some(PathBuf::from(value)),
                "out_dir" => cfg.out_dir = PathBuf::from(value),
                "seed" => {
                    cfg.seed = value
                        .parse()
                        .map_err(|_| bad(lineno, format!("seed: bad integer {value:?}")))?
                }
                "synth_services" => cfg.synth_services = parse_usize()?,
                "synth_m_feat" => cfg.synth_m_feat = parse_usize()?,
                "synth_t_train" => cfg.synth_t_train = parse_usize()?,
                "synth_t_test" => cfg.synth_t_test = parse_usize()?,
                "synth_noise_sd" => cfg.synth_noise_sd = parse_f64()?,
                "synth_anomaly" => {
                    cfg.synth_anomaly = match value {
                        "point_spike" => SynthAnomalyKind::PointSpike,
                        "level_shift" => SynthAnomalyKind::LevelShift,
                        "contextual_swap" => SynthAnomalyKind::ContextualSwap,
                        "mixed" => SynthAnomalyKind::Mixed,
                        other => {
                            return Err(bad(lineno, format!("unknown synth_anomaly {other:?}")))
                        }
                    }
                }
                "synth_anomaly_count" => cfg.synth_anomaly_count = parse_usize()?,
                "synth_anomaly_duration" => cfg.synth_anomaly_duration = parse_usize()?,
                "synth_anomaly_magnitude" => cfg.synth_anomaly_magnitude = parse_f64()?,
                "window_size" => cfg.hp.window_size = parse_usize()?,
                "kernel_len" => cfg.hp.kernel_len = parse_usize()?,
                "k_bases" => cfg.hp.k_bases = parse_usize()?,
                "gamma_t" => cfg.hp.gamma_t = parse_i32()?,
                "gamma_f" => cfg.hp.gamma_f = parse_i32()?,
                "sigma_t" => cfg.hp.sigma_t = parse_f64()?,
                "sigma_f" => cfg.hp.sigma_f = parse_f64()?,
                "learning_rate" => cfg.hp.learning_rate = parse_f64()?,
                "epochs" => cfg.epochs = parse_usize()?,
                "train_hop" => cfg.train_hop = parse_usize()?,
                "threshold" => {
                    cfg.threshold = if value == "auto" {
                        ThresholdConfig::Auto
                    } else if value == "best_f1" {
                        ThresholdConfig::BestF1
                    } else if let Some(q) = value.strip_prefix("quantile:") {
                        let q: f64 = q
                            .parse()
                            .map_err(|_| bad(lineno, format!("bad quantile {q:?}")))?;
                        ThresholdConfig::Quantile(q)
                    } else {
                        return Err(bad(lineno, format!("unknown threshold {value:?}")));
                    }
                }
                other => return Err(bad(lineno, format!("unknown key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if self.data_mode == DataMode::Smd && self.data_root.is_none() {
            return Err(Error::Config(
                "data_mode = smd requires data_root".into(),
            ));
        }
        if self.train_hop == 0 {
            return Err(Error::Config("train_hop must be >= 1".into()));
        }
        if let ThresholdConfig::Quantile(q) = self.threshold {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::Config(format!(
                    "quantile must lie in [0, 1], got {q}"
                )));
            }
        }
        Ok(())
    }
}

/// FNV-1a over the raw config bytes, recorded in the run manifest.
pub fn config_hash(path: &Path) -> Result<u64> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    Ok(hash)
}
