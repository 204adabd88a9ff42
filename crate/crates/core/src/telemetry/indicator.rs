//! Windowed participation indicator and its binned time series.

use super::protocol::{WireEvent, CONFIDENCE_SCALE};
use super::TelemetryError;
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorParams {
    /// Window length W in seconds.
    pub window_s: f64,
    /// Weighted confidence mass that saturates the indicator.
    pub c_ref: f64,
    /// Weight of classes missing from `weights`.
    pub default_weight: f64,
    pub weights: BTreeMap<u8, f64>,
}

impl Default for IndicatorParams {
    fn default() -> Self {
        IndicatorParams { window_s: 60.0, c_ref: 5.0, default_weight: 1.0, weights: BTreeMap::new() }
    }
}

impl IndicatorParams {
    pub fn validate(&self) -> Result<(), TelemetryError> {
        if !(self.window_s.is_finite() && self.window_s > 0.0) {
            return Err(TelemetryError::Params(format!("window must be > 0 s (got {})", self.window_s)));
        }
        if !(self.c_ref.is_finite() && self.c_ref >= 1.0) {
            return Err(TelemetryError::Params(format!("c_ref must be >= 1 (got {})", self.c_ref)));
        }
        let bad = |w: f64| !(w > 0.0 && w <= 1.0);
        if bad(self.default_weight) {
            return Err(TelemetryError::Params(format!("default weight {} not in (0, 1]", self.default_weight)));
        }
        if let Some((c, w)) = self.weights.iter().find(|(_, &w)| bad(w)) {
            return Err(TelemetryError::Params(format!("weight {w} for class {c} not in (0, 1]")));
        }
        Ok(())
    }

    pub fn weight(&self, class: u8) -> f64 {
        self.weights.get(&class).copied().unwrap_or(self.default_weight)
    }
}

/// Indicator at a possibly fractional time. Confidence is summed per class
/// in fixed point first, so the result is independent of event order and
/// never decreases when an event is added.
fn indicator_at(events: &[WireEvent], t_ms: f64, p: &IndicatorParams) -> f64 {
    let lo = t_ms - p.window_s * 1000.0;
    let mut per_class: BTreeMap<u8, u64> = BTreeMap::new();
    for e in events {
        let ts = e.timestamp_ms as f64;
        if ts > lo && ts <= t_ms {
            *per_class.entry(e.class).or_default() += e.confidence as u64;
        }
    }
    let mass = per_class
        .iter()
        .fold(0.0, |acc, (&c, &q)| acc + p.weight(c) * (q as f64 / CONFIDENCE_SCALE as f64));
    (mass / p.c_ref).min(1.0)
}

/// `I(t) = min(1, Σ w(class)·confidence / C_ref)` over events with
/// timestamps in `(t − W·1000, t]`.
///
/// ```
/// use gp_core::telemetry::{indicator, IndicatorParams, WireEvent};
///
/// let ev = |ts, confidence| WireEvent { learner: 1, timestamp_ms: ts, frame: ts as u32, class: 1, confidence };
/// let events = [ev(1_000, 10_000), ev(2_000, 5_000), ev(3_000, 5_000)];
/// assert_eq!(indicator(&events, 3_000, &IndicatorParams::default()), 0.4);
/// assert_eq!(indicator(&events, 62_000, &IndicatorParams::default()), 0.1);
/// ```
pub fn indicator(events: &[WireEvent], t_ms: u64, p: &IndicatorParams) -> f64 {
    indicator_at(events, t_ms as f64, p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticipationSeries {
    pub learner: u32,
    pub bin_width_s: f64,
    /// Bin `k` holds the indicator at the end of the bin, `(k+1)·bin_width`.
    pub values: Vec<f64>,
}

impl ParticipationSeries {
    pub fn bin_start_s(&self, k: usize) -> f64 {
        k as f64 * self.bin_width_s
    }

    /// Mean over all bins; 0 for an empty series.
    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().fold(0.0, |a, v| a + v) / self.values.len() as f64
        }
    }
}

/// Number of bins needed to cover `[0, span]`; at least one.
pub fn bin_count(span_ms: u64, bin_width_s: f64) -> usize {
    ((span_ms as f64 / (bin_width_s * 1000.0)).ceil() as usize).max(1)
}

pub fn series(
    learner: u32,
    events: &[WireEvent],
    span_ms: u64,
    bin_width_s: f64,
    p: &IndicatorParams,
) -> Result<ParticipationSeries, TelemetryError> {
    if !(bin_width_s.is_finite() && bin_width_s > 0.0) {
        return Err(TelemetryError::Params(format!("bin width must be > 0 s (got {bin_width_s})")));
    }
    p.validate()?;
    let values = (0..bin_count(span_ms, bin_width_s))
        .map(|k| indicator_at(events, (k + 1) as f64 * bin_width_s * 1000.0, p))
        .collect();
    Ok(ParticipationSeries { learner, bin_width_s, values })
}
