//! Run configuration. Settings are layered: built-in defaults, then the
//! JSON file given by `--config`, then command-line flags.

use std::path::{Path, PathBuf};

use cmi_cusum_core::chart::Norm;
use cmi_cusum_core::experiments::NaiveConfig;
use cmi_cusum_core::models::ModelKind;
use cmi_cusum_core::monitor::{Conditioning, MonitorConfig, PredictionScale, ThetaMode};
use cmi_cusum_core::simgen::{scenario_catalog, ScenarioConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{AppError, AppResult};

pub const DEFAULT_REPLICATES: usize = 200;
pub const DEFAULT_SEED: u64 = 2024;

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    /// A catalog name or an inline scenario object.
    #[serde(default)]
    pub scenario: Option<Value>,
    /// Any subset of the monitor settings.
    #[serde(default)]
    pub monitor: Option<Map<String, Value>>,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub n_replicates: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    /// Also run the naive misclassification chart.
    pub naive: Option<NaiveConfig>,
    pub emit_confounder: Option<bool>,
}

impl RunConfigFile {
    pub fn parse(text: &str, path: &Path) -> AppResult<Self> {
        serde_json::from_str(text).map_err(|e| AppError::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::parse(&text, path)
    }

    fn monitor_number<T: serde::de::DeserializeOwned>(&self, key: &str) -> AppResult<Option<T>> {
        match self.monitor.as_ref().and_then(|m| m.get(key)) {
            None => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| AppError::Config(format!("monitor.{key}: {e}"))),
        }
    }
}

/// Known-parameter mode as selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaModeFlag {
    Known,
    Plugin,
}

/// Monitor settings given as flags; `None` leaves the layer below intact.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MonitorOverrides {
    pub alpha: Option<f64>,
    pub m: Option<usize>,
    pub k: Option<f64>,
    pub b: Option<usize>,
    pub batch_size: Option<usize>,
    pub norm: Option<Norm>,
    pub theta_mode: Option<ThetaModeFlag>,
    pub conditioning: Option<Conditioning>,
    pub kind: Option<ModelKind>,
    pub scale: Option<PredictionScale>,
}

/// `θ₀` of a calibrated prediction on the logit scale: slope 1 on
/// `logit f̂`, zero elsewhere.
pub fn calibrated_theta(c: Conditioning) -> Vec<f64> {
    let mut t = vec![0.0; c.dim()];
    t[0] = 1.0;
    t
}

/// Resolves the values of `m` and `K` used to build catalog scenarios.
pub fn horizon_params(file: Option<&RunConfigFile>, ov: &MonitorOverrides, m: usize, k: f64) -> AppResult<(usize, f64)> {
    let fm = file.map(|f| f.monitor_number::<usize>("m")).transpose()?.flatten();
    let fk = file.map(|f| f.monitor_number::<f64>("K")).transpose()?.flatten();
    Ok((ov.m.or(fm).unwrap_or(m), ov.k.or(fk).unwrap_or(k)))
}

/// The scenario named on the command line, else the one in the file.
pub fn resolve_scenario(file: Option<&RunConfigFile>, name: Option<&str>, m: usize, k: f64) -> AppResult<ScenarioConfig> {
    let cfg = match (name, file.and_then(|f| f.scenario.as_ref())) {
        (Some(n), _) => scenario_catalog(n, m, k)?,
        (None, Some(Value::String(n))) => scenario_catalog(n, m, k)?,
        (None, Some(v @ Value::Object(_))) => {
            serde_json::from_value(v.clone()).map_err(|e| AppError::Config(format!("scenario: {e}")))?
        }
        (None, Some(_)) => return Err(AppError::Config("scenario must be a catalog name or an object".into())),
        (None, None) => return Err(AppError::Config("no scenario given; use --scenario or --config".into())),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Layers the file's monitor section and the flags over `base`, whose `m`
/// and `K` are kept.
pub fn resolve_monitor(base: MonitorConfig, file: Option<&RunConfigFile>, ov: &MonitorOverrides) -> AppResult<MonitorConfig> {
    let (m, k) = (base.m, base.k);
    let mut cfg = match file.and_then(|f| f.monitor.as_ref()) {
        None => base,
        Some(layer) => {
            let Value::Object(mut merged) = serde_json::to_value(&base).map_err(|e| AppError::Runtime(e.to_string()))?
            else {
                unreachable!("monitor settings serialize to an object")
            };
            for (key, v) in layer {
                merged.insert(key.clone(), v.clone());
            }
            serde_json::from_value(Value::Object(merged)).map_err(|e| AppError::Config(format!("monitor: {e}")))?
        }
    };
    cfg.m = m;
    cfg.k = k;
    if let Some(a) = ov.alpha {
        cfg.alpha_total = a;
    }
    if let Some(b) = ov.b {
        cfg.b = b;
    }
    if let Some(bs) = ov.batch_size {
        cfg.batch_size = bs;
    }
    if let Some(n) = ov.norm {
        cfg.norm = n;
    }
    if let Some(c) = ov.conditioning {
        cfg.conditioning = c;
    }
    if let Some(kind) = ov.kind {
        cfg.kind = kind;
    }
    if let Some(s) = ov.scale {
        cfg.prediction_scale = Some(s);
    }
    match ov.theta_mode {
        Some(ThetaModeFlag::Plugin) => cfg.theta_mode = ThetaMode::Plugin,
        Some(ThetaModeFlag::Known) => {
            let keep = matches!(&cfg.theta_mode, ThetaMode::Known(t) if t.len() == cfg.conditioning.dim());
            if !keep {
                if cfg.scale() != PredictionScale::Logit {
                    return Err(AppError::Config(
                        "--theta-mode known without monitor.theta_mode in the config needs the logit prediction scale".into(),
                    ));
                }
                cfg.theta_mode = ThetaMode::Known(calibrated_theta(cfg.conditioning));
            }
        }
        None => {}
    }
    cfg.validate().map_err(|e| AppError::Config(e.to_string()))?;
    Ok(cfg)
}
