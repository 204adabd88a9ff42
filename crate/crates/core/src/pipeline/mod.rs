//! Per-frame recognition: motion mask, hand detection, skin tracking, mask
//! fusion, shape classification and debounced event emission.

pub mod kit;
pub mod synth;

use crate::cascade::{detect, CascadeModel, DetectParams};
use crate::codebook::{CodebookError, CodebookModel, CodebookParams};
use crate::cpdh::{classify, descriptor_from_mask, Classification, ClassifyParams, Gallery};
use crate::imaging::{pnm, to_gray, Frame, GrayImage, Mask, Rect};
use crate::skintrack::{
    backproject, camshift_step, fuse_masks, sample_skin_model, skin_mask, CamShiftParams, HueHistogram, SkinGates,
    TrackState,
};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("frame {index}: {msg}")]
    Frame { index: u32, msg: String },
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("event sink: {0}")]
    Sink(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub codebook: CodebookParams,
    pub background: Option<PathBuf>,
    pub hand_cascade: Option<PathBuf>,
    pub face_cascade: Option<PathBuf>,
    pub gallery: Option<PathBuf>,
    pub detect: DetectParams,
    /// Face detection runs on frames whose index is a multiple of this.
    pub face_interval: u32,
    pub gates: SkinGates,
    pub skin_threshold: u8,
    pub camshift: CamShiftParams,
    pub morph_k: u32,
    pub n_rho: usize,
    pub n_theta: usize,
    pub classify: ClassifyParams,
    /// Classification only looks at fused pixels inside the track window
    /// grown by this factor.
    pub roi_scale: f64,
    pub debounce_frames: u32,
    pub cooldown_frames: u32,
    pub fps_assumed: f64,
    pub learner: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            codebook: CodebookParams::default(),
            background: None,
            hand_cascade: None,
            face_cascade: None,
            gallery: None,
            detect: DetectParams::default(),
            face_interval: 10,
            gates: SkinGates::default(),
            skin_threshold: 60,
            camshift: CamShiftParams::default(),
            morph_k: 3,
            n_rho: crate::cpdh::DEFAULT_RINGS,
            n_theta: crate::cpdh::DEFAULT_SECTORS,
            classify: ClassifyParams::default(),
            roi_scale: 1.5,
            debounce_frames: 3,
            cooldown_frames: 15,
            fps_assumed: 15.0,
            learner: 1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        self.codebook.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.debounce_frames < 1 {
            return bad("debounce_frames must be at least 1");
        }
        if self.cooldown_frames < self.debounce_frames {
            return bad("cooldown_frames must be at least debounce_frames");
        }
        if !(self.fps_assumed.is_finite() && self.fps_assumed > 0.0) {
            return bad("fps_assumed must be positive");
        }
        if self.morph_k.is_multiple_of(2) {
            return bad("morph_k must be odd");
        }
        if !(self.roi_scale.is_finite() && self.roi_scale >= 1.0) {
            return bad("roi_scale must be at least 1");
        }
        if !(self.classify.tau.is_finite() && self.classify.tau >= 0.0) {
            return bad("tau must be non-negative");
        }
        if self.n_rho == 0 || self.n_theta == 0 {
            return bad("n_rho and n_theta must be positive");
        }
        if self.face_interval == 0 {
            return bad("face_interval must be positive");
        }
        let d = &self.detect;
        if !(d.scale0 > 0.0 && d.scale_step > 1.0 && d.group_eps >= 0.0) || !d.scale_step.is_finite() {
            return bad("detection needs scale0 > 0, scale_step > 1 and group_eps >= 0");
        }
        let c = &self.camshift;
        if !(0.0..=1.0).contains(&c.lost_threshold) || c.min_size == 0 || c.mean_shift.max_iter == 0 {
            return bad("camshift needs lost_threshold in [0, 1], min_size >= 1 and max_iter >= 1");
        }
        if self.gates.v_min > self.gates.v_max {
            return bad("v_min must not exceed v_max");
        }
        Ok(())
    }
}

/// Everything the pipeline reads but never changes.
#[derive(Debug, Clone)]
pub struct Models {
    pub background: CodebookModel,
    pub hand: CascadeModel,
    pub face: Option<CascadeModel>,
    pub gallery: Gallery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Detecting,
    Tracking,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineState {
    pub mode: Mode,
    pub track: Option<TrackState>,
    pub skin: Option<HueHistogram>,
    pub face: Option<Rect>,
    /// Class seen on consecutive frames and how many (capped at the debounce).
    pub pending: Option<(u8, u32)>,
    pub cooldown: u32,
    /// Index of the next frame.
    pub frame: u32,
}

impl Default for PipelineState {
    fn default() -> Self {
        PipelineState { mode: Mode::Detecting, track: None, skin: None, face: None, pending: None, cooldown: 0, frame: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureEvent {
    pub learner: u32,
    pub frame: u32,
    pub timestamp_ms: u64,
    pub class: u8,
    pub name: String,
    pub confidence: f64,
}

/// Intermediate products of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StageDebug {
    pub motion: Mask,
    pub prob: Option<GrayImage>,
    pub skin: Option<Mask>,
    pub fused: Option<Mask>,
    pub hand_detection: Option<Rect>,
    pub classification: Option<Classification>,
    /// A stage failure that was absorbed.
    pub note: Option<String>,
}

pub fn timestamp_ms(frame: u32, fps: f64) -> u64 {
    (frame as f64 * 1000.0 / fps).round() as u64
}

fn center_of(r: &Rect) -> (u32, u32) {
    let (cx, cy) = r.center();
    (cx.round() as u32, cy.round() as u32)
}

/// Advances the debounce counters by one observation and reports the class
/// to emit, if any.
fn debounce(st: &mut PipelineState, observed: Option<(u8, f64)>, cfg: &PipelineConfig) -> Option<(u8, f64)> {
    st.cooldown = st.cooldown.saturating_sub(1);
    let (class, conf) = match observed {
        Some(o) => o,
        None => {
            st.pending = None;
            return None;
        }
    };
    let count = match st.pending {
        Some((c, n)) if c == class => (n + 1).min(cfg.debounce_frames),
        _ => 1,
    };
    st.pending = Some((class, count));
    if count == cfg.debounce_frames && st.cooldown == 0 {
        st.cooldown = cfg.cooldown_frames;
        return Some((class, conf));
    }
    None
}

/// One step of the recognition state machine.
///
/// Stage failures (no skin sample, no usable contour) are absorbed into
/// [`StageDebug::note`]; only a frame the background model cannot be applied
/// to is an error.
pub fn process_frame(
    state: &PipelineState,
    frame: &Frame,
    models: &Models,
    cfg: &PipelineConfig,
) -> Result<(PipelineState, Option<GestureEvent>, StageDebug), PipelineError> {
    let mut st = state.clone();
    let index = st.frame;
    st.frame = st.frame.wrapping_add(1);

    let motion = models.background.subtract(frame)?;
    let gray = to_gray(frame);
    if let Some(face_model) = &models.face {
        if index.is_multiple_of(cfg.face_interval) {
            st.face = detect(face_model, &gray, &cfg.detect).into_iter().next();
        }
    }
    let mut dbg = StageDebug {
        motion,
        prob: None,
        skin: None,
        fused: None,
        hand_detection: None,
        classification: None,
        note: None,
    };

    if st.mode == Mode::Detecting {
        let face = st.face;
        let hit = detect(&models.hand, &gray, &cfg.detect).into_iter().find(|r| {
            let (cx, cy) = center_of(r);
            !face.is_some_and(|f| f.contains(cx, cy))
        });
        if let Some(hand) = hit {
            dbg.hand_detection = Some(hand);
            match sample_skin_model(frame, face.unwrap_or(hand), &cfg.gates) {
                Ok(h) => {
                    st.skin = Some(h);
                    st.track = Some(TrackState::new(hand));
                    st.mode = Mode::Tracking;
                }
                Err(e) => dbg.note = Some(e.to_string()),
            }
        }
    }

    let mut observed = None;
    if let (Mode::Tracking, Some(hist), Some(track)) = (st.mode, st.skin.as_ref(), st.track) {
        let mut prob = backproject(frame, hist, &cfg.gates);
        // the face shares the hand's hue; keep it from pulling the window
        if let Some(f) = st.face {
            for y in f.y()..f.bottom() {
                for x in f.x()..f.right() {
                    prob.set(x, y, 0);
                }
            }
        }
        let next = camshift_step(&prob, &track, &cfg.camshift).expect("track window stays inside the frame");
        if next.lost {
            st.mode = Mode::Detecting;
            st.track = None;
            st.skin = None;
        } else {
            st.track = Some(next);
            let skin = skin_mask(&prob, cfg.skin_threshold, cfg.morph_k).expect("validated kernel");
            let fused = fuse_masks(&dbg.motion, &skin, st.face).expect("masks share the frame size");
            let (cx, cy) = next.window.center();
            let roi = Rect::centered_clamped(
                cx,
                cy,
                (next.window.w() as f64 * cfg.roi_scale).round() as u32,
                (next.window.h() as f64 * cfg.roi_scale).round() as u32,
                frame.width(),
                frame.height(),
            );
            let restricted = Mask::from_fn(frame.width(), frame.height(), |x, y| roi.contains(x, y) && fused.is_set(x, y))
                .expect("frame-sized");
            match descriptor_from_mask(&restricted, cfg.n_rho, cfg.n_theta) {
                Ok(d) => match classify(&d, &models.gallery, &cfg.classify) {
                    Ok(c) => {
                        observed = c.class.map(|id| (id, c.confidence));
                        dbg.classification = Some(c);
                    }
                    Err(e) => dbg.note = Some(e.to_string()),
                },
                Err(e) => dbg.note = Some(e.to_string()),
            }
            dbg.skin = Some(skin);
            dbg.fused = Some(fused);
        }
        dbg.prob = Some(prob);
    }

    let event = debounce(&mut st, observed, cfg).map(|(class, confidence)| GestureEvent {
        learner: cfg.learner,
        frame: index,
        timestamp_ms: timestamp_ms(index, cfg.fps_assumed),
        class,
        name: models.gallery.class(class).map_or_else(|| format!("CLASS_{class}"), |c| c.name.clone()),
        confidence,
    });
    Ok((st, event, dbg))
}

/// Owns the models and the evolving state of one session.
#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: PipelineConfig,
    models: Models,
    state: PipelineState,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, models: Models) -> Result<Self, PipelineError> {
        cfg.validate()?;
        if models.gallery.n_rho() != cfg.n_rho || models.gallery.n_theta() != cfg.n_theta {
            return Err(PipelineError::Config(format!(
                "gallery layout {}x{} does not match n_rho/n_theta {}x{}",
                models.gallery.n_rho(),
                models.gallery.n_theta(),
                cfg.n_rho,
                cfg.n_theta
            )));
        }
        Ok(Pipeline { cfg, models, state: PipelineState::default() })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn state(&self) -> &PipelineState {
        &self.state
    }

    pub fn process(&mut self, frame: &Frame) -> Result<(Option<GestureEvent>, StageDebug), PipelineError> {
        let (st, ev, dbg) = process_frame(&self.state, frame, &self.models, &self.cfg)?;
        self.state = st;
        Ok((ev, dbg))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SessionSummary {
    pub frames: u32,
    pub events: u32,
    pub mean_latency_ms: f64,
}

impl SessionSummary {
    /// Throughput implied by the mean latency.
    pub fn frames_per_second(&self) -> f64 {
        if self.mean_latency_ms > 0.0 {
            1000.0 / self.mean_latency_ms
        } else {
            0.0
        }
    }
}

/// Feeds frames through the pipeline in order, handing every event to
/// `sink`. `on_frame` sees each frame's debug output (for stage dumps).
pub fn run_session<E: std::fmt::Display>(
    pipeline: &mut Pipeline,
    frames: impl IntoIterator<Item = Result<Frame, E>>,
    mut sink: impl FnMut(&GestureEvent) -> Result<(), String>,
    mut on_frame: impl FnMut(u32, &StageDebug) -> Result<(), String>,
) -> Result<SessionSummary, PipelineError> {
    let mut summary = SessionSummary::default();
    let mut total = 0.0;
    for (i, frame) in frames.into_iter().enumerate() {
        let index = i as u32;
        let frame = frame.map_err(|e| PipelineError::Frame { index, msg: e.to_string() })?;
        let start = Instant::now();
        let (ev, dbg) = pipeline.process(&frame).map_err(|e| PipelineError::Frame { index, msg: e.to_string() })?;
        total += start.elapsed().as_secs_f64() * 1000.0;
        summary.frames += 1;
        on_frame(index, &dbg).map_err(|msg| PipelineError::Frame { index, msg })?;
        if let Some(ev) = ev {
            summary.events += 1;
            sink(&ev).map_err(PipelineError::Sink)?;
        }
    }
    if summary.frames > 0 {
        // clock granularity can round a very fast frame to zero
        summary.mean_latency_ms = (total / summary.frames as f64).max(1e-6);
    }
    Ok(summary)
}

/// Name of the `index`-th (0-based) frame file.
pub fn frame_file_name(index: u32) -> String {
    format!("frame_{:06}.ppm", index + 1)
}

/// `frame_<digits>.ppm` files of `dir`, in numeric order.
pub fn list_frames(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, PipelineError> {
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(digits) = name.strip_prefix("frame_").and_then(|n| n.strip_suffix(".ppm")) else { continue };
        if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
            if let Ok(n) = digits.parse::<u64>() {
                found.push((n, path));
            }
        }
    }
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// Lazily decoded frames of a directory.
pub fn read_frames(dir: impl AsRef<Path>) -> Result<impl Iterator<Item = Result<Frame, String>>, PipelineError> {
    let paths = list_frames(dir)?;
    Ok(paths.into_iter().map(|p| pnm::read_ppm(&p).map_err(|e| format!("{}: {e}", p.display()))))
}

/// Writes a frame's intermediate images as PGMs named `<stage>_<n>.pgm`.
pub fn dump_stages(dir: impl AsRef<Path>, index: u32, dbg: &StageDebug) -> Result<(), pnm::PnmError> {
    let dir = dir.as_ref();
    let name = |stage: &str| dir.join(format!("{stage}_{:06}.pgm", index + 1));
    pnm::write_pgm(name("motion"), &dbg.motion)?;
    if let Some(p) = &dbg.prob {
        pnm::write_pgm(name("prob"), p)?;
    }
    if let Some(m) = &dbg.skin {
        pnm::write_pgm(name("skin"), m)?;
    }
    if let Some(m) = &dbg.fused {
        pnm::write_pgm(name("fused"), m)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(d: u32, c: u32) -> PipelineConfig {
        PipelineConfig { debounce_frames: d, cooldown_frames: c, ..PipelineConfig::default() }
    }

    /// Frames at which events fire for a sequence of observations.
    fn run_debounce(obs: &[Option<u8>], cfg: &PipelineConfig) -> Vec<(usize, u8)> {
        let mut st = PipelineState::default();
        obs.iter()
            .enumerate()
            .filter_map(|(i, o)| debounce(&mut st, o.map(|c| (c, 1.0)), cfg).map(|(c, _)| (i, c)))
            .collect()
    }

    #[test]
    fn held_pose_event_count() {
        for (n, d, c) in [(100, 3, 15), (3, 3, 15), (2, 3, 15), (40, 1, 1), (64, 5, 7)] {
            let ev = run_debounce(&vec![Some(1); n], &cfg(d, c));
            let want = if n < d as usize { 0 } else { 1 + (n - d as usize) / c as usize };
            assert_eq!(ev.len(), want, "n={n} d={d} c={c}");
            if let Some(&(first, _)) = ev.first() {
                assert_eq!(first, d as usize - 1);
            }
        }
    }

    #[test]
    fn gaps_and_switches_reset_the_count() {
        let o = [Some(1), Some(1), None, Some(1), Some(2), Some(2), Some(2)];
        assert_eq!(run_debounce(&o, &cfg(3, 3)), vec![(6, 2)]);
    }

    #[test]
    fn cooldown_delays_a_new_class() {
        let mut o = vec![Some(1); 3];
        o.extend(vec![Some(2); 10]);
        // class 2 is ready at frame 5 but cooldown only ends at frame 2 + 6
        assert_eq!(run_debounce(&o, &cfg(3, 6)), vec![(2, 1), (8, 2)]);
    }

    #[test]
    fn config_validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        assert!(cfg(0, 5).validate().is_err());
        assert!(cfg(5, 4).validate().is_err());
        let c = PipelineConfig { morph_k: 4, ..PipelineConfig::default() };
        assert!(c.validate().is_err());
        let c = PipelineConfig { fps_assumed: 0.0, ..PipelineConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn frame_listing_is_numeric() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["frame_000010.ppm", "frame_000002.ppm", "frame_x.ppm", "notes.txt", "frame_000001.ppm"] {
            std::fs::write(dir.path().join(name), b"").unwrap();
        }
        let names: Vec<_> =
            list_frames(dir.path()).unwrap().iter().map(|p| p.file_name().unwrap().to_str().unwrap().to_string()).collect();
        assert_eq!(names, ["frame_000001.ppm", "frame_000002.ppm", "frame_000010.ppm"]);
        assert_eq!(frame_file_name(0), "frame_000001.ppm");
    }

    #[test]
    fn timestamps_follow_fps() {
        assert_eq!(timestamp_ms(0, 15.0), 0);
        assert_eq!(timestamp_ms(15, 15.0), 1000);
        assert_eq!(timestamp_ms(1, 15.0), 67);
    }
}
