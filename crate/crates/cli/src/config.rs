//! Versioned `key = value` configuration shared by every subcommand.
//!
//! ```text
//! gpconfig 1
//! # comment
//! pipeline.debounce_frames = 3
//! indicator.weight.2 = 0.5
//! ```
//!
//! Values are layered: defaults, then the config file, then `--set`
//! overrides, then dedicated flags.

use gp_core::cascade::TrainConfig;
use gp_core::pipeline::PipelineConfig;
use gp_core::telemetry::{IndicatorParams, SupervisorConfig};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

pub const HEADER: &str = "gpconfig 1";
pub const ENV_VAR: &str = "GP_CONFIG";

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    pub indicator: IndicatorParams,
    pub supervisor: SupervisorConfig,
    pub session: u32,
    pub bin_width_s: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            pipeline: PipelineConfig::default(),
            train: TrainConfig::default(),
            indicator: IndicatorParams::default(),
            supervisor: SupervisorConfig::default(),
            session: 1,
            bin_width_s: 10.0,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("{source_name}:{line}: {msg}")]
    Line { source_name: String, line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

fn num<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: Display,
{
    v.parse().map_err(|e| format!("bad value `{v}`: {e}"))
}

fn boolean(v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("bad value `{v}`: expected true or false")),
    }
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn millis(v: &str) -> Result<Duration, String> {
    Ok(Duration::from_millis(num(v)?))
}

impl Config {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let p = &mut self.pipeline;
        match key {
            "models.background" => p.background = path(v),
            "models.hand_cascade" => p.hand_cascade = path(v),
            "models.face_cascade" => p.face_cascade = path(v),
            "models.gallery" => p.gallery = path(v),
            "codebook.eps_train" => p.codebook.eps_train = num(v)?,
            "codebook.eps_detect" => p.codebook.eps_detect = num(v)?,
            "codebook.alpha" => p.codebook.alpha = num(v)?,
            "codebook.beta" => p.codebook.beta = num(v)?,
            "detect.scale0" => p.detect.scale0 = num(v)?,
            "detect.scale_step" => p.detect.scale_step = num(v)?,
            "detect.min_neighbors" => p.detect.min_neighbors = num(v)?,
            "detect.group_eps" => p.detect.group_eps = num(v)?,
            "detect.max_scale" => p.detect.max_scale = if v == "none" { None } else { Some(num(v)?) },
            "skin.s_min" => p.gates.s_min = num(v)?,
            "skin.v_min" => p.gates.v_min = num(v)?,
            "skin.v_max" => p.gates.v_max = num(v)?,
            "skin.threshold" => p.skin_threshold = num(v)?,
            "camshift.max_iter" => p.camshift.mean_shift.max_iter = num(v)?,
            "camshift.eps" => p.camshift.mean_shift.eps = num(v)?,
            "camshift.lost_threshold" => p.camshift.lost_threshold = num(v)?,
            "camshift.min_size" => p.camshift.min_size = num(v)?,
            "cpdh.n_rho" => p.n_rho = num(v)?,
            "cpdh.n_theta" => p.n_theta = num(v)?,
            "cpdh.tau" => p.classify.tau = num(v)?,
            "cpdh.mirror" => p.classify.mirror = boolean(v)?,
            "pipeline.face_interval" => p.face_interval = num(v)?,
            "pipeline.morph_k" => p.morph_k = num(v)?,
            "pipeline.roi_scale" => p.roi_scale = num(v)?,
            "pipeline.debounce_frames" => p.debounce_frames = num(v)?,
            "pipeline.cooldown_frames" => p.cooldown_frames = num(v)?,
            "pipeline.fps_assumed" => p.fps_assumed = num(v)?,
            "pipeline.learner" => p.learner = num(v)?,
            "train.stages" => self.train.stages = num(v)?,
            "train.per_stage_fpr" => self.train.per_stage_fpr = num(v)?,
            "train.min_detection" => self.train.min_detection = num(v)?,
            "train.max_stumps" => self.train.max_stumps = num(v)?,
            "train.pool_fraction" => self.train.pool_fraction = num(v)?,
            "train.seed" => self.train.seed = num(v)?,
            "train.label" => self.train.label = v.to_string(),
            "indicator.window_s" => self.indicator.window_s = num(v)?,
            "indicator.c_ref" => self.indicator.c_ref = num(v)?,
            "indicator.default_weight" => self.indicator.default_weight = num(v)?,
            "telemetry.session" => self.session = num(v)?,
            "telemetry.bin_width_s" => self.bin_width_s = num(v)?,
            "telemetry.heartbeat_interval_ms" => self.supervisor.heartbeat_interval = millis(v)?,
            "telemetry.missed_heartbeats" => self.supervisor.missed_heartbeats = num(v)?,
            _ => match key.strip_prefix("indicator.weight.") {
                Some(class) => {
                    let class: u8 = class.parse().map_err(|_| format!("unknown key `{key}`"))?;
                    self.indicator.weights.insert(class, num(v)?);
                }
                None => return Err(format!("unknown key `{key}`")),
            },
        }
        Ok(())
    }

    /// Every setting as `(key, value)`, in a fixed order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let p = &self.pipeline;
        let mut out: Vec<(&str, String)> = vec![
            ("models.background", show_path(&p.background)),
            ("models.hand_cascade", show_path(&p.hand_cascade)),
            ("models.face_cascade", show_path(&p.face_cascade)),
            ("models.gallery", show_path(&p.gallery)),
            ("codebook.eps_train", p.codebook.eps_train.to_string()),
            ("codebook.eps_detect", p.codebook.eps_detect.to_string()),
            ("codebook.alpha", p.codebook.alpha.to_string()),
            ("codebook.beta", p.codebook.beta.to_string()),
            ("detect.scale0", p.detect.scale0.to_string()),
            ("detect.scale_step", p.detect.scale_step.to_string()),
            ("detect.min_neighbors", p.detect.min_neighbors.to_string()),
            ("detect.group_eps", p.detect.group_eps.to_string()),
            ("detect.max_scale", p.detect.max_scale.map_or("none".to_string(), |m| m.to_string())),
            ("skin.s_min", p.gates.s_min.to_string()),
            ("skin.v_min", p.gates.v_min.to_string()),
            ("skin.v_max", p.gates.v_max.to_string()),
            ("skin.threshold", p.skin_threshold.to_string()),
            ("camshift.max_iter", p.camshift.mean_shift.max_iter.to_string()),
            ("camshift.eps", p.camshift.mean_shift.eps.to_string()),
            ("camshift.lost_threshold", p.camshift.lost_threshold.to_string()),
            ("camshift.min_size", p.camshift.min_size.to_string()),
            ("cpdh.n_rho", p.n_rho.to_string()),
            ("cpdh.n_theta", p.n_theta.to_string()),
            ("cpdh.tau", p.classify.tau.to_string()),
            ("cpdh.mirror", p.classify.mirror.to_string()),
            ("pipeline.face_interval", p.face_interval.to_string()),
            ("pipeline.morph_k", p.morph_k.to_string()),
            ("pipeline.roi_scale", p.roi_scale.to_string()),
            ("pipeline.debounce_frames", p.debounce_frames.to_string()),
            ("pipeline.cooldown_frames", p.cooldown_frames.to_string()),
            ("pipeline.fps_assumed", p.fps_assumed.to_string()),
            ("pipeline.learner", p.learner.to_string()),
            ("train.stages", self.train.stages.to_string()),
            ("train.per_stage_fpr", self.train.per_stage_fpr.to_string()),
            ("train.min_detection", self.train.min_detection.to_string()),
            ("train.max_stumps", self.train.max_stumps.to_string()),
            ("train.pool_fraction", self.train.pool_fraction.to_string()),
            ("train.seed", self.train.seed.to_string()),
            ("train.label", self.train.label.clone()),
            ("indicator.window_s", self.indicator.window_s.to_string()),
            ("indicator.c_ref", self.indicator.c_ref.to_string()),
            ("indicator.default_weight", self.indicator.default_weight.to_string()),
        ];
        let weights: Vec<(String, String)> =
            self.indicator.weights.iter().map(|(c, w)| (format!("indicator.weight.{c}"), w.to_string())).collect();
        out.extend([
            ("telemetry.session", self.session.to_string()),
            ("telemetry.bin_width_s", self.bin_width_s.to_string()),
            ("telemetry.heartbeat_interval_ms", self.supervisor.heartbeat_interval.as_millis().to_string()),
            ("telemetry.missed_heartbeats", self.supervisor.missed_heartbeats.to_string()),
        ]);
        let mut out: Vec<(String, String)> = out.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let at = out.iter().position(|(k, _)| k == "telemetry.session").expect("present");
        out.splice(at..at, weights);
        out
    }

    /// Config file text that parses back to `self`.
    pub fn dump(&self) -> String {
        let mut s = format!("{HEADER}\n");
        for (k, v) in self.entries() {
            s.push_str(&k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    /// Applies a config file on top of `self`. `source_name` labels errors.
    pub fn apply_text(&mut self, text: &str, source_name: &str) -> Result<(), ConfigError> {
        let mut seen_header = false;
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let err = |msg: String| ConfigError::Line { source_name: source_name.to_string(), line: i + 1, msg };
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !seen_header {
                if line.split_whitespace().collect::<Vec<_>>() != ["gpconfig", "1"] {
                    return Err(err(format!("expected `{HEADER}` header")));
                }
                seen_header = true;
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(err(format!("duplicate key `{k}`")));
            }
            self.set(k, v).map_err(err)?;
        }
        if !seen_header {
            return Err(ConfigError::Line { source_name: source_name.to_string(), line: 0, msg: format!("missing `{HEADER}` header") });
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = Config::default();
        c.apply_text(text, "<config>")?;
        Ok(c)
    }

    /// Applies `key=value` overrides from the command line.
    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<(), ConfigError> {
        for (i, s) in sets.iter().enumerate() {
            let err = |msg: String| ConfigError::Line { source_name: "--set".into(), line: i + 1, msg };
            let (k, v) = s.split_once('=').ok_or_else(|| err(format!("expected key=value, got `{s}`")))?;
            self.set(k.trim(), v.trim()).map_err(err)?;
        }
        Ok(())
    }

    /// Defaults, then `file` (or the file named by `GP_CONFIG`), then `sets`.
    pub fn load(file: Option<&Path>, sets: &[String]) -> Result<Self, ConfigError> {
        let mut c = Config::default();
        let env = std::env::var_os(ENV_VAR).filter(|v| !v.is_empty()).map(PathBuf::from);
        if let Some(path) = file.map(Path::to_path_buf).or(env) {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| ConfigError::Invalid(format!("cannot read config {}: {e}", path.display())))?;
            c.apply_text(&text, &path.display().to_string())?;
        }
        c.apply_overrides(sets)?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.pipeline.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.indicator.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.bin_width_s.is_finite() && self.bin_width_s > 0.0) {
            return Err(ConfigError::Invalid("telemetry.bin_width_s must be > 0".into()));
        }
        if self.supervisor.heartbeat_interval.is_zero() || self.supervisor.missed_heartbeats == 0 {
            return Err(ConfigError::Invalid("heartbeat interval and missed count must be positive".into()));
        }
        Ok(())
    }
}
