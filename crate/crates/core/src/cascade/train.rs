//! Small discrete-AdaBoost cascade trainer.
//!
//! Good enough to produce working cascades for synthetic patterns in tests
//! and demos. [`train_cascade_mined`] takes a negative source so callers can
//! bootstrap hard negatives between stages.

use super::{feature_value, quantize, window_norm, CascadeError, CascadeModel, HaarFeature, ScaledCascade, Stage, Stump};
use crate::imaging::{GrayImage, IntegralImage, Raster, Rect};
use rand::{seq::index, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub const MIN_SAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stages: usize,
    /// Target false-positive rate of each stage on the negatives it sees.
    pub per_stage_fpr: f64,
    /// Fraction of the stage's positives that must pass it.
    pub min_detection: f64,
    /// Stump budget per stage.
    pub max_stumps: usize,
    /// Share of the feature pool drawn (with `seed`) for each stage.
    pub pool_fraction: f64,
    pub seed: u64,
    pub label: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stages: 4,
            per_stage_fpr: 0.3,
            min_detection: 0.99,
            max_stumps: 50,
            pool_fraction: 1.0,
            seed: 0,
            label: String::new(),
        }
    }
}

fn rect(x: u32, y: u32, w: u32, h: u32) -> Rect {
    Rect::new(x, y, w, h).expect("pool rects are non-empty")
}

/// Horizontal and vertical two-rectangle features and horizontal
/// three-rectangle features, on a 2-pixel grid of positions and sizes.
pub fn feature_pool(base_w: u32, base_h: u32) -> Vec<HaarFeature> {
    let mut pool = Vec::new();
    let f = |rects: Vec<(Rect, f64)>| HaarFeature { rects };
    // two side by side
    for hw in (2..=base_w / 2).step_by(2) {
        for h in (2..=base_h).step_by(2) {
            for y in (0..=base_h - h).step_by(2) {
                for x in (0..=base_w - 2 * hw).step_by(2) {
                    pool.push(f(vec![(rect(x, y, hw, h), 1.0), (rect(x + hw, y, hw, h), -1.0)]));
                }
            }
        }
    }
    // two stacked
    for hh in (2..=base_h / 2).step_by(2) {
        for w in (2..=base_w).step_by(2) {
            for y in (0..=base_h - 2 * hh).step_by(2) {
                for x in (0..=base_w - w).step_by(2) {
                    pool.push(f(vec![(rect(x, y, w, hh), 1.0), (rect(x, y + hh, w, hh), -1.0)]));
                }
            }
        }
    }
    // three side by side, center weighted -2
    for tw in (2..=base_w / 3).step_by(2) {
        for h in (2..=base_h).step_by(2) {
            for y in (0..=base_h - h).step_by(2) {
                for x in (0..=base_w - 3 * tw).step_by(2) {
                    pool.push(f(vec![
                        (rect(x, y, tw, h), 1.0),
                        (rect(x + tw, y, tw, h), -2.0),
                        (rect(x + 2 * tw, y, tw, h), 1.0),
                    ]));
                }
            }
        }
    }
    pool
}

struct Sample {
    ii: IntegralImage,
    norm: f64,
    positive: bool,
}

struct Best {
    feature: usize,
    error: f64,
    threshold: f64,
    /// +1: values at or above the threshold vote positive.
    polarity: f64,
}

/// Lowest weighted-error stump for one feature. `order` sorts `values`.
fn best_split(values: &[f64], order: &[u32], weights: &[f64], labels: &[bool], t_pos: f64, t_neg: f64) -> (f64, f64, f64) {
    let (mut s_pos, mut s_neg) = (0.0, 0.0);
    let first = values[order[0] as usize];
    let mut best = (f64::INFINITY, first - 1.0, 1.0);
    for k in 0..=order.len() {
        // samples order[..k] fall below the candidate threshold
        let distinct = k == 0 || k == order.len() || values[order[k - 1] as usize] < values[order[k] as usize];
        if distinct {
            let above_pos = s_pos + (t_neg - s_neg);
            let above_neg = s_neg + (t_pos - s_pos);
            let thr = if k == 0 {
                first - 1.0
            } else if k == order.len() {
                values[order[k - 1] as usize] + 1.0
            } else {
                0.5 * (values[order[k - 1] as usize] + values[order[k] as usize])
            };
            if above_pos < best.0 {
                best = (above_pos, thr, 1.0);
            }
            if above_neg < best.0 {
                best = (above_neg, thr, -1.0);
            }
        }
        if k < order.len() {
            let i = order[k] as usize;
            if labels[i] {
                s_pos += weights[i];
            } else {
                s_neg += weights[i];
            }
        }
    }
    best
}

/// Largest 9-significant-digit value not above `v`.
fn quantize_down(v: f64) -> f64 {
    let mut q = quantize(v);
    while q > v {
        q = quantize(q - q.abs().max(1e-300) * 5e-9);
    }
    q
}

fn train_stage(
    samples: &[&Sample],
    pool: &[HaarFeature],
    cfg: &TrainConfig,
    stage_index: usize,
) -> Result<Stage, CascadeError> {
    let n = samples.len();
    let labels: Vec<bool> = samples.iter().map(|s| s.positive).collect();
    let n_pos = labels.iter().filter(|&&p| p).count();
    let n_neg = n - n_pos;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (stage_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let take = ((pool.len() as f64 * cfg.pool_fraction).ceil() as usize).clamp(1, pool.len());
    let mut chosen: Vec<usize> = index::sample(&mut rng, pool.len(), take).into_vec();
    chosen.sort_unstable();

    // sample-major evaluation keeps one integral image in cache at a time
    let by_sample: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|s| {
            let win = rect(0, 0, s.ii.width(), s.ii.height());
            chosen.iter().map(|&fi| feature_value(&pool[fi], &s.ii, &win, s.norm)).collect()
        })
        .collect();
    let values: Vec<Vec<f64>> =
        (0..chosen.len()).into_par_iter().map(|k| by_sample.iter().map(|v| v[k]).collect()).collect();
    drop(by_sample);
    let orders: Vec<Vec<u32>> = values
        .par_iter()
        .map(|v| {
            let mut keyed: Vec<(f64, u32)> = v.iter().copied().zip(0..n as u32).collect();
            keyed.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            keyed.into_iter().map(|(_, i)| i).collect()
        })
        .collect();
    let mut weights: Vec<f64> =
        labels.iter().map(|&p| if p { 0.5 / n_pos as f64 } else { 0.5 / n_neg as f64 }).collect();
    let mut scores = vec![0.0f64; n];
    let mut stumps = Vec::new();
    let mut fpr = 1.0;

    while stumps.len() < cfg.max_stumps {
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let t_pos: f64 = weights.iter().zip(&labels).filter(|(_, &p)| p).map(|(w, _)| w).sum();
        let t_neg = 1.0 - t_pos;

        let best = (0..chosen.len())
            .into_par_iter()
            .map(|k| {
                let (error, threshold, polarity) = best_split(&values[k], &orders[k], &weights, &labels, t_pos, t_neg);
                Best { feature: k, error, threshold, polarity }
            })
            .reduce_with(|a, b| if b.error < a.error || (b.error == a.error && b.feature < a.feature) { b } else { a })
            .expect("non-empty pool");

        if best.error >= 0.5 - 1e-12 {
            // no stump beats chance, so more rounds cannot help
            return Err(CascadeError::Starvation { stage: stage_index, stumps: stumps.len(), fpr, target: cfg.per_stage_fpr });
        }
        let e = best.error.max(1e-10);
        let alpha = quantize(0.5 * ((1.0 - e) / e).ln());
        let threshold = quantize(best.threshold);
        let left_val = quantize(-best.polarity * alpha);
        let right_val = quantize(best.polarity * alpha);
        let vals = &values[best.feature];
        for i in 0..n {
            let vote = if vals[i] < threshold { left_val } else { right_val };
            scores[i] += vote;
            let y = if labels[i] { 1.0 } else { -1.0 };
            weights[i] *= (-y * vote).exp();
        }
        stumps.push(Stump { feature: pool[chosen[best.feature]].clone(), threshold, left_val, right_val });

        let mut pos_scores: Vec<f64> = (0..n).filter(|&i| labels[i]).map(|i| scores[i]).collect();
        pos_scores.sort_by(f64::total_cmp);
        let misses = (((1.0 - cfg.min_detection) * n_pos as f64) + 1e-9).floor() as usize;
        let stage_threshold = quantize_down(pos_scores[misses.min(n_pos - 1)]);
        let false_pos = (0..n).filter(|&i| !labels[i] && scores[i] >= stage_threshold).count();
        fpr = false_pos as f64 / n_neg as f64;
        if fpr <= cfg.per_stage_fpr {
            return Ok(Stage { stumps, stage_threshold });
        }
    }
    Err(CascadeError::Starvation { stage: stage_index, stumps: stumps.len(), fpr, target: cfg.per_stage_fpr })
}

fn stage_passes(stage: &Stage, s: &Sample) -> bool {
    let win = rect(0, 0, s.ii.width(), s.ii.height());
    let mut votes = 0.0;
    for st in &stage.stumps {
        votes += if feature_value(&st.feature, &s.ii, &win, s.norm) < st.threshold { st.left_val } else { st.right_val };
    }
    votes >= stage.stage_threshold
}

fn check_config(cfg: &TrainConfig) -> Result<(), CascadeError> {
    if cfg.stages == 0 || !(0.0..1.0).contains(&cfg.per_stage_fpr) || !(0.0..=1.0).contains(&cfg.min_detection) {
        return Err(CascadeError::Training("invalid training configuration".into()));
    }
    Ok(())
}

fn check_sizes<'a>(patches: impl IntoIterator<Item = &'a GrayImage>, w: u32, h: u32) -> Result<(), CascadeError> {
    match patches.into_iter().find(|p| p.width() != w || p.height() != h) {
        Some(bad) => Err(CascadeError::Training(format!(
            "patch is {}x{}, expected {w}x{h}",
            bad.width(),
            bad.height()
        ))),
        None => Ok(()),
    }
}

/// Trains a cascade with negatives supplied per stage by `mine`, which gets
/// the cascade trained so far (possibly with no stages yet) and should
/// return negatives that it still accepts. Training stops when `mine`
/// returns nothing, when the stage budget is spent, or when too few
/// positives survive.
pub fn train_cascade_mined<F>(positives: &[GrayImage], cfg: &TrainConfig, mut mine: F) -> Result<CascadeModel, CascadeError>
where
    F: FnMut(&CascadeModel) -> Result<Vec<GrayImage>, CascadeError>,
{
    if positives.len() < MIN_SAMPLES {
        return Err(CascadeError::Training(format!(
            "need at least {MIN_SAMPLES} positives (got {})",
            positives.len()
        )));
    }
    check_config(cfg)?;
    let (base_w, base_h) = (positives[0].width(), positives[0].height());
    check_sizes(positives, base_w, base_h)?;
    let pool = feature_pool(base_w, base_h);
    if pool.is_empty() {
        return Err(CascadeError::Training("base window too small for the feature pool".into()));
    }
    let make = |img: &GrayImage, positive: bool| {
        let ii = IntegralImage::new(img);
        let norm = window_norm(&ii, &rect(0, 0, base_w, base_h));
        Sample { ii, norm, positive }
    };
    let pos: Vec<Sample> = positives.par_iter().map(|p| make(p, true)).collect();
    let mut active_pos: Vec<&Sample> = pos.iter().collect();
    let mut model = CascadeModel { base_w, base_h, stages: Vec::new(), label: cfg.label.clone() };
    for stage_index in 0..cfg.stages {
        let negatives = mine(&model)?;
        if negatives.is_empty() {
            break;
        }
        check_sizes(&negatives, base_w, base_h)?;
        let neg: Vec<Sample> = negatives.par_iter().map(|p| make(p, false)).collect();
        let samples: Vec<&Sample> = active_pos.iter().copied().chain(&neg).collect();
        let stage = train_stage(&samples, &pool, cfg, stage_index)?;
        active_pos.retain(|s| stage_passes(&stage, s));
        model.stages.push(stage);
        if active_pos.len() < MIN_SAMPLES.min(pos.len()) {
            break;
        }
    }
    if model.stages.is_empty() {
        return Err(CascadeError::Training("no negatives to train on".into()));
    }
    model.validate()?;
    Ok(model)
}

/// Trains a cascade on base-window-sized patches. Each stage sees the
/// negatives that survived the previous stages; training stops early once
/// none survive.
pub fn train_toy_cascade(
    positives: &[GrayImage],
    negatives: &[GrayImage],
    cfg: &TrainConfig,
) -> Result<CascadeModel, CascadeError> {
    if positives.len() < MIN_SAMPLES || negatives.len() < MIN_SAMPLES {
        return Err(CascadeError::Training(format!(
            "need at least {MIN_SAMPLES} positives and negatives (got {} and {})",
            positives.len(),
            negatives.len()
        )));
    }
    check_config(cfg)?;
    if let Some(p) = positives.first() {
        check_sizes(negatives, p.width(), p.height())?;
    }
    let integrals: Vec<IntegralImage> = negatives.par_iter().map(IntegralImage::new).collect();
    let mut alive: Vec<usize> = (0..negatives.len()).collect();
    train_cascade_mined(positives, cfg, |model| {
        if !model.stages.is_empty() {
            let scaled = ScaledCascade::new(model, model.base_w, model.base_h)?;
            alive.retain(|&i| scaled.eval(&integrals[i], 0, 0).pass);
        }
        Ok(alive.iter().map(|&i| negatives[i].clone()).collect())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::{detect, serialize_cascade, DetectParams};
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    const BASE: u32 = 16;

    fn bright_center(rng: &mut ChaCha8Rng) -> GrayImage {
        let noise = Normal::new(0.0, 4.0).unwrap();
        let (lo, hi): (f64, f64) = (rng.random_range(20.0..70.0), rng.random_range(150.0..230.0));
        GrayImage::from_fn(BASE, BASE, |x, y| {
            let inside = (4..12).contains(&x) && (4..12).contains(&y);
            let v = if inside { hi } else { lo } + noise.sample(rng);
            v.clamp(0.0, 255.0) as u8
        })
        .unwrap()
    }

    fn flat(rng: &mut ChaCha8Rng) -> GrayImage {
        let noise = Normal::new(0.0, 4.0).unwrap();
        let level: f64 = rng.random_range(20.0..230.0);
        GrayImage::from_fn(BASE, BASE, |_, _| (level + noise.sample(rng)).clamp(0.0, 255.0) as u8).unwrap()
    }

    fn dataset(seed: u64) -> (Vec<GrayImage>, Vec<GrayImage>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos = (0..40).map(|_| bright_center(&mut rng)).collect();
        let neg = (0..80).map(|_| flat(&mut rng)).collect();
        (pos, neg)
    }

    #[test]
    fn pool_is_zero_mean_and_inside() {
        let pool = feature_pool(24, 24);
        assert_eq!(pool.len(), 2808 * 2 + 1716);
        for f in &pool {
            assert_eq!(f.weighted_area(), 0.0);
            assert!(f.rects.iter().all(|(r, _)| r.fits_in(24, 24)));
        }
    }

    #[test]
    fn separable_set_single_stage_full_detection() {
        let (pos, neg) = dataset(1);
        let cfg = TrainConfig { stages: 3, per_stage_fpr: 0.05, label: "blob".into(), ..Default::default() };
        let m = train_toy_cascade(&pos, &neg, &cfg).unwrap();
        // every negative rejected by the first stage, so training stops there
        assert_eq!(m.stages.len(), 1);
        for p in &pos {
            let ii = IntegralImage::new(p);
            assert!(m.eval_window(&ii, rect(0, 0, BASE, BASE)).unwrap().pass);
        }
        let blank = GrayImage::filled(60, 60, 128).unwrap();
        assert!(detect(&m, &blank, &DetectParams::default()).is_empty());
    }

    #[test]
    fn identical_classes_starve() {
        let (pos, _) = dataset(2);
        let err = train_toy_cascade(&pos, &pos, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, CascadeError::Starvation { stage: 0, .. }), "{err}");
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let (pos, neg) = dataset(3);
        let cfg = TrainConfig { pool_fraction: 0.3, seed: 99, ..Default::default() };
        let a = serialize_cascade(&train_toy_cascade(&pos, &neg, &cfg).unwrap());
        let b = serialize_cascade(&train_toy_cascade(&pos, &neg, &cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (pos, neg) = dataset(4);
        assert!(matches!(train_toy_cascade(&pos[..5], &neg, &TrainConfig::default()), Err(CascadeError::Training(_))));
        let mut mixed = neg.clone();
        mixed.push(GrayImage::filled(20, 20, 0).unwrap());
        assert!(matches!(train_toy_cascade(&pos, &mixed, &TrainConfig::default()), Err(CascadeError::Training(_))));
    }

    #[test]
    fn quantize_down_never_rounds_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let v: f64 = rng.random_range(-50.0..50.0);
            let q = quantize_down(v);
            assert!(q <= v && v - q < v.abs().max(1e-3) * 1e-7);
        }
    }

    #[test]
    fn mined_source_sees_the_partial_cascade() {
        let (pos, neg) = dataset(5);
        let mut seen = Vec::new();
        let cfg = TrainConfig { stages: 3, per_stage_fpr: 0.05, ..Default::default() };
        let m = train_cascade_mined(&pos, &cfg, |partial| {
            seen.push(partial.stages.len());
            Ok(if partial.stages.is_empty() { neg.clone() } else { Vec::new() })
        })
        .unwrap();
        assert_eq!(m.stages.len(), 1);
        assert_eq!(seen, [0, 1]);
    }

    #[test]
    fn mined_source_must_supply_something() {
        let (pos, _) = dataset(6);
        let err = train_cascade_mined(&pos, &TrainConfig::default(), |_| Ok(Vec::new())).unwrap_err();
        assert!(matches!(err, CascadeError::Training(_)));
    }
}
