//! Staged boosted classifier over Haar-like rectangle features.
//!
//! A [`CascadeModel`] is an ordered list of [`Stage`]s, each a sum of
//! decision-stump votes compared against a stage threshold. A window is a
//! detection only when it passes every stage. Feature responses are
//! normalized by the window's pixel standard deviation, which makes the
//! decision invariant to affine brightness changes of the window.

pub(crate) mod detect;
mod format;
mod train;

pub use detect::{detect, group_rectangles, DetectParams};
pub use format::{parse_cascade, serialize_cascade};
pub use train::{feature_pool, train_cascade_mined, train_toy_cascade, TrainConfig, MIN_SAMPLES};

use crate::imaging::{ImagingError, IntegralImage, Rect};
use thiserror::Error;

/// Smallest accepted base window side.
pub const MIN_BASE: u32 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CascadeError {
    #[error("line {line}: unknown directive `{word}`")]
    UnknownDirective { line: usize, word: String },
    #[error("line {line}: rect {x} {y} {w} {h} lies outside the {base_w}x{base_h} base window")]
    RectOutOfWindow { line: usize, x: u32, y: u32, w: u32, h: u32, base_w: u32, base_h: u32 },
    #[error("line {line}: feature is not zero-mean (sum of weight x area = {sum})")]
    NonZeroMean { line: usize, sum: f64 },
    #[error("line {line}: stage has no stumps")]
    EmptyStage { line: usize },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("window {win:?} has a different aspect ratio than the {base_w}x{base_h} base window")]
    Aspect { win: Rect, base_w: u32, base_h: u32 },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("training: {0}")]
    Training(String),
    #[error("training starved: stage {stage} reached {stumps} stumps with false-positive rate {fpr:.4} (target {target})")]
    Starvation { stage: usize, stumps: usize, fpr: f64, target: f64 },
}

/// Weighted rectangles relative to the base window.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarFeature {
    pub rects: Vec<(Rect, f64)>,
}

impl HaarFeature {
    /// Σ weight·area; zero for a well-formed feature.
    pub fn weighted_area(&self) -> f64 {
        self.rects.iter().map(|(r, w)| w * r.area() as f64).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stump {
    pub feature: HaarFeature,
    pub threshold: f64,
    /// Vote when the feature value is below the threshold.
    pub left_val: f64,
    /// Vote otherwise.
    pub right_val: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub stumps: Vec<Stump>,
    pub stage_threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    pub base_w: u32,
    pub base_h: u32,
    pub stages: Vec<Stage>,
    pub label: String,
}

/// Outcome of evaluating one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowResult {
    pub pass: bool,
    /// Index of the first rejecting stage, or the stage count on a pass.
    pub last_stage: usize,
}

impl CascadeModel {
    /// Checks every structural invariant of the model.
    pub fn validate(&self) -> Result<(), CascadeError> {
        if self.base_w < MIN_BASE || self.base_h < MIN_BASE {
            return Err(CascadeError::Invalid(format!(
                "base window {}x{} is smaller than {MIN_BASE}x{MIN_BASE}",
                self.base_w, self.base_h
            )));
        }
        if self.stages.is_empty() {
            return Err(CascadeError::Invalid("no stages".into()));
        }
        if self.label.chars().any(char::is_whitespace) {
            return Err(CascadeError::Invalid("label must be a single token".into()));
        }
        for (si, stage) in self.stages.iter().enumerate() {
            if stage.stumps.is_empty() {
                return Err(CascadeError::Invalid(format!("stage {si} has no stumps")));
            }
            if !stage.stage_threshold.is_finite() {
                return Err(CascadeError::Invalid(format!("stage {si} threshold is not finite")));
            }
            for stump in &stage.stumps {
                let n = stump.feature.rects.len();
                if !(2..=3).contains(&n) {
                    return Err(CascadeError::Invalid(format!("stage {si}: stump has {n} rects")));
                }
                if ![stump.threshold, stump.left_val, stump.right_val].iter().all(|v| v.is_finite()) {
                    return Err(CascadeError::Invalid(format!("stage {si}: non-finite stump value")));
                }
                for (r, w) in &stump.feature.rects {
                    if !r.fits_in(self.base_w, self.base_h) || !w.is_finite() {
                        return Err(CascadeError::Invalid(format!("stage {si}: rect {r:?} invalid")));
                    }
                }
                let sum = stump.feature.weighted_area();
                if sum.abs() > 1e-6 {
                    return Err(CascadeError::Invalid(format!("stage {si}: feature not zero-mean ({sum})")));
                }
            }
        }
        Ok(())
    }

    /// Evaluates the cascade on one window of an integral image.
    pub fn eval_window(&self, ii: &IntegralImage, win: Rect) -> Result<WindowResult, CascadeError> {
        win.check_inside(ii.width(), ii.height())?;
        let scaled = ScaledCascade::new(self, win.w(), win.h())?;
        Ok(scaled.eval(ii, win.x(), win.y()))
    }
}

struct ScaledRect {
    dx: u32,
    dy: u32,
    w: u32,
    h: u32,
    weight: f64,
}

struct ScaledStump {
    rects: Vec<ScaledRect>,
    threshold: f64,
    left_val: f64,
    right_val: f64,
}

/// A cascade with every rectangle mapped onto a fixed window size, so a
/// sliding window only pays for the corner lookups.
pub(crate) struct ScaledCascade {
    w: u32,
    h: u32,
    stages: Vec<(Vec<ScaledStump>, f64)>,
}

impl ScaledCascade {
    pub(crate) fn new(model: &CascadeModel, w: u32, h: u32) -> Result<Self, CascadeError> {
        let expected_h = (w as f64 * model.base_h as f64 / model.base_w as f64).round();
        if (h as f64 - expected_h).abs() > 1.0 {
            let win = Rect::new(0, 0, w.max(1), h.max(1))?;
            return Err(CascadeError::Aspect { win, base_w: model.base_w, base_h: model.base_h });
        }
        let sx = w as f64 / model.base_w as f64;
        let sy = h as f64 / model.base_h as f64;
        let map = |r: &Rect, weight: f64| {
            let dx = ((r.x() as f64 * sx).round() as u32).min(w - 1);
            let dy = ((r.y() as f64 * sy).round() as u32).min(h - 1);
            let rw = ((r.w() as f64 * sx).round() as u32).clamp(1, w - dx);
            let rh = ((r.h() as f64 * sy).round() as u32).clamp(1, h - dy);
            ScaledRect { dx, dy, w: rw, h: rh, weight }
        };
        let stages = model
            .stages
            .iter()
            .map(|st| {
                let stumps = st
                    .stumps
                    .iter()
                    .map(|s| ScaledStump {
                        rects: s.feature.rects.iter().map(|(r, wt)| map(r, *wt)).collect(),
                        threshold: s.threshold,
                        left_val: s.left_val,
                        right_val: s.right_val,
                    })
                    .collect();
                (stumps, st.stage_threshold)
            })
            .collect();
        Ok(ScaledCascade { w, h, stages })
    }

    /// Window at `(x, y)` must lie inside the integral image.
    pub(crate) fn eval(&self, ii: &IntegralImage, x: u32, y: u32) -> WindowResult {
        let win = Rect::new(x, y, self.w, self.h).expect("non-empty window");
        let norm = window_norm(ii, &win);
        for (i, (stumps, stage_threshold)) in self.stages.iter().enumerate() {
            let mut votes = 0.0;
            for s in stumps {
                let mut acc = 0.0;
                for r in &s.rects {
                    let rr = Rect::new(x + r.dx, y + r.dy, r.w, r.h).expect("scaled rect non-empty");
                    acc += r.weight * ii.rect_sum_unchecked(&rr) as f64;
                }
                votes += if acc / norm < s.threshold { s.left_val } else { s.right_val };
            }
            if votes < *stage_threshold {
                return WindowResult { pass: false, last_stage: i };
            }
        }
        WindowResult { pass: true, last_stage: self.stages.len() }
    }
}

/// `area · σ` of the window, with σ floored at 1.
pub(crate) fn window_norm(ii: &IntegralImage, win: &Rect) -> f64 {
    let area = win.area() as f64;
    let sum = ii.rect_sum_unchecked(win) as f64;
    let sq = ii.rect_sq_sum_unchecked(win) as f64;
    let mean = sum / area;
    let var = (sq / area - mean * mean).max(0.0);
    area * var.sqrt().max(1.0)
}

/// Response of a single feature on a window the size of the base window.
pub(crate) fn feature_value(feature: &HaarFeature, ii: &IntegralImage, win: &Rect, norm: f64) -> f64 {
    let mut acc = 0.0;
    for (r, w) in &feature.rects {
        let rr = Rect::new(win.x() + r.x(), win.y() + r.y(), r.w(), r.h()).expect("non-empty");
        acc += w * ii.rect_sum_unchecked(&rr) as f64;
    }
    acc / norm
}

/// Rounds to 9 significant digits, the precision of the text format.
pub(crate) fn quantize(v: f64) -> f64 {
    format!("{v:.8e}").parse().expect("formatted float parses")
}
