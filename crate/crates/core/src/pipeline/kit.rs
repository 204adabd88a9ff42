//! Models matched to the synthetic scenes: toy hand and face cascades and a
//! pose gallery.

use super::synth::{pose_mask, render_patch, Object, PatchContent, Pose, Scene, SceneScript};
use crate::cascade::detect::raw_hits;
use crate::cascade::{train_cascade_mined, CascadeError, CascadeModel, DetectParams, TrainConfig, MIN_SAMPLES};
use crate::cpdh::{descriptor_from_mask, CpdhError, Gallery, GestureClass};
use crate::imaging::{to_gray, Frame, GrayImage, IntegralImage, Rect};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Side of the cascade base window.
pub const KIT_BASE: u32 = 24;
/// Object radius in base-window patches.
pub const PATCH_RADIUS: f64 = 10.0;
/// Hand radii the gallery templates are drawn at.
pub const TEMPLATE_RADII: [f64; 3] = [16.0, 20.0, 24.0];

#[derive(Debug, thiserror::Error)]
pub enum KitError {
    #[error("cascade training: {0}")]
    Cascade(#[from] CascadeError),
    #[error("gallery: {0}")]
    Gallery(#[from] CpdhError),
    #[error("patch rendering: {0}")]
    Render(#[from] super::synth::SceneError),
    #[error("imaging: {0}")]
    Imaging(#[from] crate::imaging::ImagingError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KitParams {
    pub seed: u64,
    pub positives: usize,
    pub negatives: usize,
    pub train: TrainConfig,
}

impl Default for KitParams {
    fn default() -> Self {
        KitParams {
            seed: 1,
            positives: 200,
            negatives: 600,
            train: TrainConfig { stages: 12, per_stage_fpr: 0.25, pool_fraction: 0.25, ..TrainConfig::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kit {
    pub hand: CascadeModel,
    pub face: CascadeModel,
    pub gallery: Gallery,
}

fn gray_patch(content: PatchContent, dx: f64, dy: f64, scale: f64, rng: &mut ChaCha8Rng) -> Result<GrayImage, KitError> {
    let c = (KIT_BASE as f64 - 1.0) / 2.0;
    let sigma = rng.random_range(0.0..3.0);
    let f = render_patch(KIT_BASE, content, c + dx, c + dy, PATCH_RADIUS * scale, sigma, rng)?;
    Ok(to_gray(&f))
}

fn jitter(rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(0.88..1.13))
}

/// Offset of at least `min` pixels in a random direction.
fn far(rng: &mut ChaCha8Rng, min: f64) -> (f64, f64) {
    let a = rng.random_range(0.0..std::f64::consts::TAU);
    let d = rng.random_range(min..min + 6.0);
    (d * a.cos(), d * a.sin())
}

/// Negatives: plain texture, the other object class, and off-center
/// copies of the target so detections stay localized.
fn negatives(
    n: usize,
    target: PatchContent,
    other: &[PatchContent],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<GrayImage>, KitError> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let patch = match i % 4 {
            0 | 1 => gray_patch(PatchContent::Background, 0.0, 0.0, 1.0, rng)?,
            2 => {
                let c = other[rng.random_range(0..other.len())];
                let (dx, dy, s) = jitter(rng);
                gray_patch(c, dx * 4.0, dy * 4.0, s * rng.random_range(0.8..1.2), rng)?
            }
            _ => {
                let (dx, dy) = far(rng, 7.0);
                gray_patch(target, dx, dy, rng.random_range(0.8..1.2), rng)?
            }
        };
        out.push(patch);
    }
    Ok(out)
}

/// Side length of the detection window that frames an object of radius `r`.
fn window_side(r: f64) -> f64 {
    r * KIT_BASE as f64 / PATCH_RADIUS
}

/// Source of hard negatives: fixed patches plus windows mined from random
/// scenes that the partial cascade still accepts.
struct Miner {
    target: Object,
    fixed: Vec<IntegralPatch>,
    want: usize,
    rng: ChaCha8Rng,
}

struct IntegralPatch {
    img: GrayImage,
    ii: IntegralImage,
}

const MINE_W: u32 = 192;
const MINE_H: u32 = 144;
const MINE_FRAMES: usize = 120;
/// Frames scanned before a source that yields almost nothing is abandoned.
const MINE_PROBE: usize = 40;

impl Miner {
    fn new(target: Object, fixed: Vec<GrayImage>, want: usize, seed: u64) -> Self {
        let fixed = fixed.into_iter().map(|img| IntegralPatch { ii: IntegralImage::new(&img), img }).collect();
        Miner { target, fixed, want, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Random scene with the other object class and, sometimes, the target.
    fn scene(&mut self) -> Result<(Frame, Option<Rect>), KitError> {
        let rng = &mut self.rng;
        let place = |rng: &mut ChaCha8Rng, r: f64| {
            (rng.random_range(r * 0.5..MINE_W as f64 - r * 0.5), rng.random_range(r * 0.5..MINE_H as f64 - r * 0.5), r)
        };
        let face = rng.random_bool(0.7).then(|| {
            let r = rng.random_range(14.0..30.0);
            place(rng, r)
        });
        let hand = rng.random_bool(0.7).then(|| {
            let r = rng.random_range(12.0..28.0);
            place(rng, r)
        });
        let pose = Pose::GESTURES[rng.random_range(0..Pose::GESTURES.len())];
        let script = SceneScript {
            frames: 1,
            width: MINE_W,
            height: MINE_H,
            seed: rng.random(),
            noise_sigma: rng.random_range(0.0..3.0),
            texture_amp: rng.random_range(0.0..40.0),
            face,
            hand,
            poses: if hand.is_some() { vec![(0, pose)] } else { Vec::new() },
            moves: Vec::new(),
        };
        let target = match self.target {
            Object::Hand => hand,
            Object::Face => face,
        };
        let target = target.and_then(|(cx, cy, r)| {
            let half = window_side(r) / 2.0;
            Rect::clip(
                (cx - half).round() as i64,
                (cy - half).round() as i64,
                (cx + half).round() as i64,
                (cy + half).round() as i64,
                MINE_W,
                MINE_H,
            )
        });
        let (frame, _) = Scene::new(script).render(0)?;
        Ok((frame, target))
    }

    fn mine(&mut self, model: &CascadeModel) -> Result<Vec<GrayImage>, KitError> {
        let full = Rect::new(0, 0, KIT_BASE, KIT_BASE).expect("non-empty");
        let mut out = Vec::with_capacity(self.want);
        let mut fixed = Vec::new();
        for p in &self.fixed {
            if model.stages.is_empty() || model.eval_window(&p.ii, full)?.pass {
                fixed.push(p.img.clone());
            }
        }
        fixed.shuffle(&mut self.rng);
        out.extend(fixed.into_iter().take(self.want / 2));

        let per_frame = (self.want / 40).max(1);
        let params = DetectParams { max_scale: Some(3.5), ..DetectParams::default() };
        let from_fixed = out.len();
        for scanned in 0..MINE_FRAMES {
            if out.len() >= self.want || (scanned == MINE_PROBE && out.len() - from_fixed < MIN_SAMPLES) {
                break;
            }
            let (frame, target) = self.scene()?;
            let gray = to_gray(&frame);
            let ii = IntegralImage::new(&gray);
            let mut hits: Vec<Rect> = raw_hits(model, &ii, &params)
                .into_iter()
                .filter(|w| target.is_none_or(|t| w.iou(&t) < 0.2))
                .collect();
            hits.shuffle(&mut self.rng);
            for w in hits.into_iter().take(per_frame.min(self.want - out.len())) {
                out.push(gray.crop(w).expect("hit inside frame").resize(KIT_BASE, KIT_BASE).expect("valid size"));
            }
        }
        // a source this dry means the cascade already rejects the negatives
        if out.len() < MIN_SAMPLES {
            out.clear();
        }
        Ok(out)
    }
}

fn train(
    positives: Vec<GrayImage>,
    mut miner: Miner,
    cfg: &TrainConfig,
    label: &str,
) -> Result<CascadeModel, KitError> {
    let cfg = TrainConfig { label: label.to_string(), ..cfg.clone() };
    let mut failure = None;
    let model = train_cascade_mined(&positives, &cfg, |m| {
        miner.mine(m).map_err(|e| {
            let msg = e.to_string();
            failure = Some(e);
            CascadeError::Training(msg)
        })
    });
    match (model, failure) {
        (_, Some(e)) => Err(e),
        (m, None) => Ok(m?),
    }
}

/// Hand cascade over all gesture poses.
pub fn train_hand_cascade(p: &KitParams) -> Result<CascadeModel, KitError> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0x4841_4e44);
    let mut pos = Vec::with_capacity(p.positives);
    for i in 0..p.positives {
        let pose = Pose::GESTURES[i % Pose::GESTURES.len()];
        let (dx, dy, s) = jitter(&mut rng);
        pos.push(gray_patch(PatchContent::Hand(pose), dx, dy, s, &mut rng)?);
    }
    let others = [PatchContent::Face];
    let mut neg = Vec::with_capacity(p.negatives);
    // off-center hands cycle through the poses too
    for (k, pose) in Pose::GESTURES.iter().enumerate() {
        let share = p.negatives / 3 + usize::from(k < p.negatives % 3);
        neg.extend(negatives(share, PatchContent::Hand(*pose), &others, &mut rng)?);
    }
    let miner = Miner::new(Object::Hand, neg, p.negatives, rng.random());
    train(pos, miner, &TrainConfig { seed: p.seed, ..p.train.clone() }, "hand")
}

/// Face cascade; closed fists are the hardest negatives.
pub fn train_face_cascade(p: &KitParams) -> Result<CascadeModel, KitError> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0x4641_4345);
    let mut pos = Vec::with_capacity(p.positives);
    for _ in 0..p.positives {
        let (dx, dy, s) = jitter(&mut rng);
        pos.push(gray_patch(PatchContent::Face, dx, dy, s, &mut rng)?);
    }
    let others = Pose::GESTURES.map(PatchContent::Hand);
    let neg = negatives(p.negatives, PatchContent::Face, &others, &mut rng)?;
    let miner = Miner::new(Object::Face, neg, p.negatives, rng.random());
    train(pos, miner, &TrainConfig { seed: p.seed.wrapping_add(1), ..p.train.clone() }, "face")
}

/// One class per gesture pose, templates drawn at [`TEMPLATE_RADII`].
pub fn pose_gallery(n_rho: usize, n_theta: usize) -> Result<Gallery, KitError> {
    let mut classes = Vec::new();
    for pose in Pose::GESTURES {
        let templates = TEMPLATE_RADII
            .iter()
            .map(|&r| Ok(descriptor_from_mask(&pose_mask(pose, r).expect("small canvas"), n_rho, n_theta)?))
            .collect::<Result<Vec<_>, KitError>>()?;
        classes.push(GestureClass { id: pose.class_id().expect("gesture"), name: pose.name().to_string(), templates });
    }
    Ok(Gallery::new(n_rho, n_theta, classes)?)
}

/// Trains both cascades and builds the gallery.
pub fn build_kit(p: &KitParams, n_rho: usize, n_theta: usize) -> Result<Kit, KitError> {
    let (hand, face) = (train_hand_cascade(p), train_face_cascade(p));
    Ok(Kit { hand: hand?, face: face?, gallery: pose_gallery(n_rho, n_theta)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpdh::{classify, ClassifyParams};

    #[test]
    fn gallery_separates_poses() {
        let g = pose_gallery(5, 12).unwrap();
        assert_eq!(g.classes().len(), 3);
        // each pose drawn at an in-between size is recognized
        for pose in Pose::GESTURES {
            let q = descriptor_from_mask(&pose_mask(pose, 18.0).unwrap(), 5, 12).unwrap();
            let c = classify(&q, &g, &ClassifyParams::default()).unwrap();
            assert_eq!(c.class, pose.class_id(), "{pose}: {c:?}");
        }
    }
}
