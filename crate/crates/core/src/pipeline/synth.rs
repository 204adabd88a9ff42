//! Deterministic synthetic scenes with ground truth.
//!
//! A scene is a static textured background plus an optional face disk and a
//! hand whose pose and position follow a script. Everything is drawn with
//! pixel-center sampling, so the ground-truth masks are exact.

use crate::imaging::{Frame, ImagingError, Mask, Rect, MAX_DIM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::fmt;
use std::str::FromStr;

/// Mean skin color of faces and hands (hue falls in the first hue bin).
pub const SKIN: [u8; 3] = [210, 150, 130];
const EYE: [u8; 3] = [30, 30, 30];
const TEXTURE_CELL: u32 = 16;
const TEXTURE_MEAN: f64 = 80.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SceneError {
    #[error("scene line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("frame {index} out of range (scene has {count} frames)")]
    FrameRange { index: u32, count: u32 },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pose {
    None,
    OpenPalm,
    Fist,
    Point,
}

impl Pose {
    pub const GESTURES: [Pose; 3] = [Pose::OpenPalm, Pose::Fist, Pose::Point];

    pub fn name(self) -> &'static str {
        match self {
            Pose::None => "NONE",
            Pose::OpenPalm => "OPEN_PALM",
            Pose::Fist => "FIST",
            Pose::Point => "POINT",
        }
    }

    /// Class id used by the synthetic gallery; `None` for no hand.
    pub fn class_id(self) -> Option<u8> {
        match self {
            Pose::None => None,
            Pose::OpenPalm => Some(1),
            Pose::Fist => Some(2),
            Pose::Point => Some(3),
        }
    }

    pub fn from_class_id(id: u8) -> Option<Pose> {
        Pose::GESTURES.into_iter().find(|p| p.class_id() == Some(id))
    }

    /// Outline in units of the hand radius, y pointing down; `None` for a disk.
    fn outline(self) -> Option<Vec<(f64, f64)>> {
        match self {
            Pose::None | Pose::Fist => None,
            Pose::OpenPalm => Some(
                (0..10)
                    .map(|k| {
                        let a = -std::f64::consts::FRAC_PI_2 + k as f64 * std::f64::consts::PI / 5.0;
                        let r = if k % 2 == 0 { 1.0 } else { 0.45 };
                        (r * a.cos(), r * a.sin())
                    })
                    .collect(),
            ),
            Pose::Point => Some(vec![
                (-0.15, -1.0),
                (0.15, -1.0),
                (0.15, -0.35),
                (0.5, -0.3),
                (0.65, -0.1),
                (0.65, 0.4),
                (0.45, 0.6),
                (-0.45, 0.6),
                (-0.65, 0.4),
                (-0.65, -0.1),
                (-0.5, -0.3),
                (-0.15, -0.35),
            ]),
        }
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pose {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        [Pose::None, Pose::OpenPalm, Pose::Fist, Pose::Point]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown pose `{s}`"))
    }
}

/// Fraction of the hand radius used for the fist disk.
const FIST_SCALE: f64 = 0.7;

/// Even-odd test of the point against a closed polygon.
pub fn point_in_polygon(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// A hand pose placed in the image.
#[derive(Debug, Clone)]
pub struct HandShape {
    pose: Pose,
    cx: f64,
    cy: f64,
    r: f64,
    poly: Option<Vec<(f64, f64)>>,
}

impl HandShape {
    pub fn new(pose: Pose, cx: f64, cy: f64, r: f64) -> Self {
        let poly = pose.outline().map(|o| o.into_iter().map(|(x, y)| (cx + r * x, cy + r * y)).collect());
        HandShape { pose, cx, cy, r, poly }
    }

    /// Whether the pixel centered at `(x, y)` is covered.
    pub fn covers(&self, x: f64, y: f64) -> bool {
        match (&self.poly, self.pose) {
            (_, Pose::None) => false,
            (Some(p), _) => point_in_polygon(p, x, y),
            (None, _) => (x - self.cx).powi(2) + (y - self.cy).powi(2) <= (FIST_SCALE * self.r).powi(2),
        }
    }

    /// Polygon vertices in image coordinates (`None` for the fist disk).
    pub fn polygon(&self) -> Option<&[(f64, f64)]> {
        self.poly.as_deref()
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        (self.cx - self.r - 1.0, self.cy - self.r - 1.0, self.cx + self.r + 1.0, self.cy + self.r + 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct FaceShape {
    cx: f64,
    cy: f64,
    r: f64,
}

impl FaceShape {
    fn covers(&self, x: f64, y: f64) -> bool {
        (x - self.cx).powi(2) + (y - self.cy).powi(2) <= self.r * self.r
    }

    fn is_eye(&self, x: f64, y: f64) -> bool {
        let er = 0.18 * self.r;
        [-0.38, 0.38].iter().any(|&ex| (x - self.cx - ex * self.r).powi(2) + (y - self.cy + 0.2 * self.r).powi(2) <= er * er)
    }

    fn rect(&self, width: u32, height: u32) -> Option<Rect> {
        let x0 = (self.cx - self.r).ceil() as i64;
        let y0 = (self.cy - self.r).ceil() as i64;
        let x1 = (self.cx + self.r).floor() as i64 + 1;
        let y1 = (self.cy + self.r).floor() as i64 + 1;
        Rect::clip(x0, y0, x1, y1, width, height)
    }
}

/// Static value-noise texture: low-saturation grays, smooth across
/// `TEXTURE_CELL`-pixel cells.
fn texture(width: u32, height: u32, amp: f64, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e47_0000);
    let gw = width / TEXTURE_CELL + 2;
    let gh = height / TEXTURE_CELL + 2;
    let grid: Vec<[f64; 4]> = (0..gw * gh)
        .map(|_| {
            let level = TEXTURE_MEAN + rng.random_range(-1.0..=1.0) * amp;
            [level, rng.random_range(-2.0..=2.0), rng.random_range(-2.0..=2.0), rng.random_range(-2.0..=2.0)]
        })
        .collect();
    let mut out = Vec::with_capacity((width * height) as usize);
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = (x as f64 / TEXTURE_CELL as f64, y as f64 / TEXTURE_CELL as f64);
            let (gx, gy) = (fx as u32, fy as u32);
            let (tx, ty) = (fx - gx as f64, fy - gy as f64);
            let at = |i: u32, j: u32| grid[(j * gw + i) as usize];
            let mut v = [0.0; 4];
            for (k, v) in v.iter_mut().enumerate() {
                let top = at(gx, gy)[k] * (1.0 - tx) + at(gx + 1, gy)[k] * tx;
                let bottom = at(gx, gy + 1)[k] * (1.0 - tx) + at(gx + 1, gy + 1)[k] * tx;
                *v = top * (1.0 - ty) + bottom * ty;
            }
            out.push([v[0] + v[1], v[0] + v[2], v[0] + v[3]]);
        }
    }
    out
}

/// Renders objects over a background, adding per-pixel Gaussian noise.
/// Returns the frame and the covered hand pixels.
fn paint(
    width: u32,
    height: u32,
    bg: &[[f64; 3]],
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
    face: Option<FaceShape>,
    hand: Option<&HandShape>,
) -> (Frame, Mask, Mask) {
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).expect("finite sigma");
    let mut px = Vec::with_capacity((width * height * 3) as usize);
    let mut hand_bits = Vec::with_capacity((width * height) as usize);
    let mut face_bits = Vec::with_capacity((width * height) as usize);
    let hb = hand.map(|h| h.bounds());
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = (x as f64, y as f64);
            let in_hand = match (hand, hb) {
                (Some(h), Some((x0, y0, x1, y1))) => fx >= x0 && fx <= x1 && fy >= y0 && fy <= y1 && h.covers(fx, fy),
                _ => false,
            };
            let in_face = !in_hand && face.is_some_and(|f| f.covers(fx, fy));
            let base = if in_hand {
                SKIN.map(f64::from)
            } else if in_face {
                let f = face.expect("checked");
                if f.is_eye(fx, fy) { EYE } else { SKIN }.map(f64::from)
            } else {
                bg[(y * width + x) as usize]
            };
            for c in base {
                let v = if noise_sigma > 0.0 { c + noise.sample(rng) } else { c };
                px.push(v.round().clamp(0.0, 255.0) as u8);
            }
            hand_bits.push(in_hand);
            face_bits.push(in_face);
        }
    }
    let frame = Frame::new(width, height, px).expect("validated dimensions");
    let hand_mask = Mask::from_fn(width, height, |x, y| hand_bits[(y * width + x) as usize]).expect("validated");
    let face_mask = Mask::from_fn(width, height, |x, y| face_bits[(y * width + x) as usize]).expect("validated");
    (frame, hand_mask, face_mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Object {
    Hand,
    Face,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Move {
    pub object: Object,
    pub from: u32,
    pub to: u32,
    pub dx: f64,
    pub dy: f64,
}

impl Move {
    /// Displacement accumulated by frame `f`, linear over `from..=to`.
    fn offset_at(&self, f: u32) -> (f64, f64) {
        let t = if f <= self.from {
            0.0
        } else if f >= self.to {
            1.0
        } else {
            (f - self.from) as f64 / (self.to - self.from) as f64
        };
        (t * self.dx, t * self.dy)
    }
}

/// Parsed scene script.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneScript {
    pub frames: u32,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    pub noise_sigma: f64,
    pub texture_amp: f64,
    pub face: Option<(f64, f64, f64)>,
    pub hand: Option<(f64, f64, f64)>,
    /// `(first frame, pose)` sorted by frame; the hand is absent before the first.
    pub poses: Vec<(u32, Pose)>,
    pub moves: Vec<Move>,
}

pub const SCRIPT_HEADER: &str = "gpscene 1";

impl SceneScript {
    /// Parses the line-oriented script format:
    ///
    /// ```text
    /// gpscene 1
    /// frames <count> <width> <height>
    /// seed <n>
    /// bg <noise_sigma> [texture_amp]
    /// face <cx> <cy> <r>
    /// hand <cx> <cy> <r>
    /// pose <frame> <NONE|OPEN_PALM|FIST|POINT>
    /// move <hand|face> <from> <to> <dx> <dy>
    /// ```
    ///
    /// `#` starts a comment. `frames` is required; the rest is optional.
    pub fn parse(text: &str) -> Result<Self, SceneError> {
        let mut s = SceneScript {
            frames: 0,
            width: 0,
            height: 0,
            seed: 0,
            noise_sigma: 2.0,
            texture_amp: 30.0,
            face: None,
            hand: None,
            poses: Vec::new(),
            moves: Vec::new(),
        };
        let mut saw_header = false;
        let mut saw_frames = false;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: String| SceneError::Syntax { line, msg };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let tok: Vec<&str> = content.split_whitespace().collect();
            if !saw_header {
                if tok != ["gpscene", "1"] {
                    return Err(err(format!("expected `{SCRIPT_HEADER}` header")));
                }
                saw_header = true;
                continue;
            }
            fn num<T: FromStr>(s: &str, line: usize) -> Result<T, SceneError> {
                s.parse().map_err(|_| SceneError::Syntax { line, msg: format!("bad number `{s}`") })
            }
            let finite = |v: f64| if v.is_finite() { Ok(v) } else { Err(err(format!("non-finite value {v}"))) };
            match (tok[0], tok.len()) {
                ("frames", 4) => {
                    s.frames = num(tok[1], line)?;
                    s.width = num(tok[2], line)?;
                    s.height = num(tok[3], line)?;
                    if !(1..=MAX_DIM).contains(&s.width) || !(1..=MAX_DIM).contains(&s.height) {
                        return Err(err(format!("frame size {}x{} out of range", s.width, s.height)));
                    }
                    saw_frames = true;
                }
                ("seed", 2) => s.seed = num(tok[1], line)?,
                ("bg", 2 | 3) => {
                    s.noise_sigma = finite(num(tok[1], line)?)?;
                    if tok.len() == 3 {
                        s.texture_amp = finite(num(tok[2], line)?)?;
                    }
                    if s.noise_sigma < 0.0 || !(0.0..=TEXTURE_MEAN).contains(&s.texture_amp) {
                        return Err(err("noise sigma must be >= 0 and texture amplitude in [0, 80]".into()));
                    }
                }
                ("face" | "hand", 4) => {
                    let c = (finite(num(tok[1], line)?)?, finite(num(tok[2], line)?)?, finite(num(tok[3], line)?)?);
                    if c.2 <= 0.0 {
                        return Err(err("radius must be positive".into()));
                    }
                    if tok[0] == "face" { s.face = Some(c) } else { s.hand = Some(c) }
                }
                ("pose", 3) => {
                    let f: u32 = num(tok[1], line)?;
                    let p: Pose = tok[2].parse().map_err(err)?;
                    s.poses.push((f, p));
                }
                ("move", 6) => {
                    let object = match tok[1] {
                        "hand" => Object::Hand,
                        "face" => Object::Face,
                        other => return Err(err(format!("unknown object `{other}`"))),
                    };
                    let (from, to): (u32, u32) = (num(tok[2], line)?, num(tok[3], line)?);
                    if to < from {
                        return Err(err(format!("move ends ({to}) before it starts ({from})")));
                    }
                    let (dx, dy) = (finite(num(tok[4], line)?)?, finite(num(tok[5], line)?)?);
                    s.moves.push(Move { object, from, to, dx, dy });
                }
                (d @ ("frames" | "seed" | "bg" | "face" | "hand" | "pose" | "move"), n) => {
                    return Err(err(format!("wrong number of arguments for `{d}` ({})", n - 1)));
                }
                (other, _) => return Err(err(format!("unknown directive `{other}`"))),
            }
        }
        if !saw_header {
            return Err(SceneError::Syntax { line: 0, msg: format!("missing `{SCRIPT_HEADER}` header") });
        }
        if !saw_frames {
            return Err(SceneError::Syntax { line: 0, msg: "missing `frames` directive".into() });
        }
        if s.hand.is_none() && (s.poses.iter().any(|p| p.1 != Pose::None) || s.moves.iter().any(|m| m.object == Object::Hand)) {
            return Err(SceneError::Syntax { line: 0, msg: "poses or hand moves without a `hand` directive".into() });
        }
        if s.face.is_none() && s.moves.iter().any(|m| m.object == Object::Face) {
            return Err(SceneError::Syntax { line: 0, msg: "face move without a `face` directive".into() });
        }
        s.poses.sort_by_key(|p| p.0);
        Ok(s)
    }

    /// Scripted pose at frame `f`.
    pub fn pose_at(&self, f: u32) -> Pose {
        self.poses.iter().take_while(|p| p.0 <= f).last().map_or(Pose::None, |p| p.1)
    }

    fn position(&self, object: Object, f: u32) -> Option<(f64, f64, f64)> {
        let (mut x, mut y, r) = match object {
            Object::Hand => self.hand?,
            Object::Face => self.face?,
        };
        for m in self.moves.iter().filter(|m| m.object == object) {
            let (dx, dy) = m.offset_at(f);
            x += dx;
            y += dy;
        }
        Some((x, y, r))
    }
}

/// Per-frame ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub pose: Pose,
    /// Hand pixels.
    pub hand: Mask,
    /// Every pixel not drawn from the background (hand and face).
    pub foreground: Mask,
    /// Bounding box of the face disk, when a face is scripted and visible.
    pub face: Option<Rect>,
}

/// Renderer for a parsed script.
#[derive(Debug, Clone)]
pub struct Scene {
    script: SceneScript,
    background: Vec<[f64; 3]>,
}

impl Scene {
    pub fn new(script: SceneScript) -> Self {
        let background = texture(script.width, script.height, script.texture_amp, script.seed);
        Scene { script, background }
    }

    pub fn parse(text: &str) -> Result<Self, SceneError> {
        Ok(Scene::new(SceneScript::parse(text)?))
    }

    pub fn script(&self) -> &SceneScript {
        &self.script
    }

    pub fn len(&self) -> u32 {
        self.script.frames
    }

    pub fn is_empty(&self) -> bool {
        self.script.frames == 0
    }

    /// Frame `index` and its ground truth; the same index always yields the
    /// same bytes.
    pub fn render(&self, index: u32) -> Result<(Frame, GroundTruth), SceneError> {
        let s = &self.script;
        if index >= s.frames {
            return Err(SceneError::FrameRange { index, count: s.frames });
        }
        let pose = s.pose_at(index);
        let hand = match (pose, s.position(Object::Hand, index)) {
            (Pose::None, _) | (_, None) => None,
            (p, Some((x, y, r))) => Some(HandShape::new(p, x, y, r)),
        };
        let face = s.position(Object::Face, index).map(|(cx, cy, r)| FaceShape { cx, cy, r });
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index as u64);
        let (frame, hand_mask, face_mask) =
            paint(s.width, s.height, &self.background, s.noise_sigma, &mut rng, face, hand.as_ref());
        let foreground = Mask::from_fn(s.width, s.height, |x, y| hand_mask.is_set(x, y) || face_mask.is_set(x, y))?;
        let face_rect = face.and_then(|f| f.rect(s.width, s.height));
        Ok((frame, GroundTruth { pose, hand: hand_mask, foreground, face: face_rect }))
    }

    pub fn frames(&self) -> impl Iterator<Item = Result<(Frame, GroundTruth), SceneError>> + '_ {
        (0..self.script.frames).map(|i| self.render(i))
    }
}

/// What a training patch contains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PatchContent {
    Background,
    Hand(Pose),
    Face,
}

/// A `size`×`size` patch: fresh random texture and noise, with the object
/// (if any) of radius `r` centered at `(cx, cy)` in patch coordinates.
pub fn render_patch(
    size: u32,
    content: PatchContent,
    cx: f64,
    cy: f64,
    r: f64,
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Frame, SceneError> {
    let amp = rng.random_range(0.0..40.0);
    let bg = texture(size, size, amp, rng.random());
    let (hand, face) = match content {
        PatchContent::Background => (None, None),
        PatchContent::Hand(p) => (Some(HandShape::new(p, cx, cy, r)), None),
        PatchContent::Face => (None, Some(FaceShape { cx, cy, r })),
    };
    Ok(paint(size, size, &bg, noise_sigma, rng, face, hand.as_ref()).0)
}

/// Binary mask of one pose, centered in a square canvas.
pub fn pose_mask(pose: Pose, r: f64) -> Result<Mask, ImagingError> {
    let size = (2.0 * r).ceil() as u32 + 9;
    let c = (size as f64 - 1.0) / 2.0;
    let h = HandShape::new(pose, c, c, r);
    Mask::from_fn(size, size, |x, y| h.covers(x as f64, y as f64))
}
