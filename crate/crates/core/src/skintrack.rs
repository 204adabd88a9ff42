//! Skin-hue model, backprojection, CamShift tracking and mask fusion.

use crate::imaging::{self, rgb_to_hsv, Frame, GrayImage, ImagingError, Mask, Raster, Rect};

pub const HUE_BINS: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum SkinError {
    #[error("degenerate skin sample: no pixel in {0:?} passes the saturation/value gates")]
    DegenerateSample(Rect),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

/// Saturation and value limits a pixel must meet to count as a hue sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkinGates {
    pub s_min: u8,
    pub v_min: u8,
    pub v_max: u8,
}

impl Default for SkinGates {
    fn default() -> Self {
        SkinGates { s_min: 40, v_min: 40, v_max: 250 }
    }
}

impl SkinGates {
    pub fn pass(&self, s: u8, v: u8) -> bool {
        s >= self.s_min && (self.v_min..=self.v_max).contains(&v)
    }
}

/// Max-normalized hue histogram over `[0, 180)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HueHistogram {
    bins: [f64; HUE_BINS],
}

impl HueHistogram {
    /// Bin holding hue `h` (half-degrees, `0..180`).
    pub fn bin_of(h: u8) -> usize {
        (h as usize * HUE_BINS / 180).min(HUE_BINS - 1)
    }

    /// Builds from raw counts, scaling the largest bin to 1.
    pub fn from_counts(counts: &[u64; HUE_BINS]) -> Self {
        let max = counts.iter().copied().max().unwrap_or(0);
        let mut bins = [0.0; HUE_BINS];
        if max > 0 {
            for (b, &c) in bins.iter_mut().zip(counts) {
                *b = c as f64 / max as f64;
            }
        }
        HueHistogram { bins }
    }

    pub fn bins(&self) -> &[f64; HUE_BINS] {
        &self.bins
    }

    pub fn is_empty(&self) -> bool {
        self.bins.iter().all(|&b| b == 0.0)
    }
}

/// The central half (in each axis) of `r`.
fn central_half(r: Rect) -> Rect {
    let (dx, dy) = (r.w() / 4, r.h() / 4);
    Rect::new(r.x() + dx, r.y() + dy, (r.w() / 2).max(1), (r.h() / 2).max(1)).expect("non-empty")
}

/// Hue statistics of the central 50%×50% of `face`.
pub fn sample_skin_model(frame: &Frame, face: Rect, gates: &SkinGates) -> Result<HueHistogram, SkinError> {
    if !face.fits_in(frame.width(), frame.height()) {
        return Err(ImagingError::RectOutOfBounds { rect: face, width: frame.width(), height: frame.height() }.into());
    }
    let sub = central_half(face);
    let mut counts = [0u64; HUE_BINS];
    for y in sub.y()..sub.bottom() {
        for x in sub.x()..sub.right() {
            let [r, g, b] = frame.pixel(x, y);
            let hsv = rgb_to_hsv(r, g, b);
            if gates.pass(hsv.s, hsv.v) {
                counts[HueHistogram::bin_of(hsv.h)] += 1;
            }
        }
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(SkinError::DegenerateSample(sub));
    }
    Ok(HueHistogram::from_counts(&counts))
}

/// Per-pixel skin likelihood in `0..=255`; gated-out pixels are 0.
pub fn backproject(frame: &Frame, hist: &HueHistogram, gates: &SkinGates) -> GrayImage {
    let lut: Vec<u8> = hist.bins.iter().map(|&b| (255.0 * b).round() as u8).collect();
    let values = frame
        .pixels()
        .chunks_exact(3)
        .map(|p| {
            let hsv = rgb_to_hsv(p[0], p[1], p[2]);
            if gates.pass(hsv.s, hsv.v) {
                lut[HueHistogram::bin_of(hsv.h)]
            } else {
                0
            }
        })
        .collect();
    GrayImage::new(frame.width(), frame.height(), values).expect("same dimensions as frame")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanShiftParams {
    pub max_iter: u32,
    /// Convergence threshold on the center displacement, in pixels.
    pub eps: f64,
}

impl Default for MeanShiftParams {
    fn default() -> Self {
        MeanShiftParams { max_iter: 20, eps: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanShift {
    pub window: Rect,
    pub iterations: u32,
    /// Mass under the final window; zero means the search never moved.
    pub m00: u64,
}

/// Moves a fixed-size window to the weighted centroid of `prob` under it
/// until the move is shorter than `eps` or `max_iter` moves were made.
pub fn mean_shift(prob: &GrayImage, win: Rect, p: &MeanShiftParams) -> Result<MeanShift, ImagingError> {
    win.check_inside(prob.width(), prob.height())?;
    let mut window = win;
    let mut iterations = 0;
    while iterations < p.max_iter {
        let m = imaging::moments(prob, window)?;
        let Some((cx, cy)) = m.centroid() else {
            return Ok(MeanShift { window, iterations, m00: 0 });
        };
        iterations += 1;
        let (ox, oy) = window.center();
        window = Rect::centered_clamped(cx, cy, window.w(), window.h(), prob.width(), prob.height());
        if (cx - ox).hypot(cy - oy) < p.eps {
            break;
        }
    }
    let m00 = imaging::moments(prob, window)?.m00;
    Ok(MeanShift { window, iterations, m00 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CamShiftParams {
    pub mean_shift: MeanShiftParams,
    /// Confidence below which the track counts as lost.
    pub lost_threshold: f64,
    /// Smallest window side.
    pub min_size: u32,
}

impl Default for CamShiftParams {
    fn default() -> Self {
        CamShiftParams { mean_shift: MeanShiftParams::default(), lost_threshold: 0.05, min_size: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackState {
    pub window: Rect,
    /// Major-axis angle in `(-π/2, π/2]`, image coordinates.
    pub orientation: f64,
    /// Window mass over `255 · area`, in `[0, 1]`.
    pub confidence: f64,
    pub lost: bool,
}

impl TrackState {
    pub fn new(window: Rect) -> Self {
        TrackState { window, orientation: 0.0, confidence: 0.0, lost: false }
    }
}

fn confidence(m00: u64, r: Rect) -> f64 {
    (m00 as f64 / (255.0 * r.area() as f64)).clamp(0.0, 1.0)
}

/// One CamShift update: mean shift, then resize the window from the mass it
/// found and read the orientation off the second moments.
pub fn camshift_step(prob: &GrayImage, state: &TrackState, p: &CamShiftParams) -> Result<TrackState, ImagingError> {
    let (fw, fh) = (prob.width(), prob.height());
    let ms = mean_shift(prob, state.window, &p.mean_shift)?;
    let m = imaging::moments(prob, ms.window)?;
    let (Some((cx, cy)), Some((mu20, mu11, mu02))) = (m.centroid(), m.central()) else {
        return Ok(TrackState { window: state.window, orientation: state.orientation, confidence: 0.0, lost: true });
    };
    let s = 2.0 * (m.m00 as f64 / 255.0).sqrt();
    let w = ((1.1 * s).floor() as u32).max(p.min_size);
    let h = ((1.4 * s).floor() as u32).max(p.min_size);
    let window = Rect::centered_clamped(cx, cy, w, h, fw, fh);
    let orientation = 0.5 * (2.0 * mu11).atan2(mu20 - mu02);
    let conf = confidence(imaging::moments(prob, window)?.m00, window);
    Ok(TrackState { window, orientation, confidence: conf, lost: conf < p.lost_threshold })
}

/// Thresholded likelihood, closed with a `close_k` square.
pub fn skin_mask(prob: &GrayImage, t: u8, close_k: u32) -> Result<Mask, ImagingError> {
    imaging::close(&imaging::threshold(prob, t), close_k)
}

/// Pixels set in both masks, minus everything inside `face`.
pub fn fuse_masks(motion: &Mask, skin: &Mask, face: Option<Rect>) -> Result<Mask, ImagingError> {
    if !motion.same_size(skin) {
        return Err(ImagingError::DimensionMismatch(motion.width(), motion.height(), skin.width(), skin.height()));
    }
    let w = motion.width();
    let on = motion.data().iter().zip(skin.data()).enumerate().map(|(i, (&a, &b))| {
        let (x, y) = (i as u32 % w, i as u32 / w);
        a != 0 && b != 0 && !face.is_some_and(|f| f.contains(x, y))
    });
    Ok(Mask::from_bools(w, motion.height(), on))
}
