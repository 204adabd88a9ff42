//! Contour point distribution histograms: polar ring × sector counts of
//! boundary points around their centroid, matched with a rotation-searching
//! χ² distance.

use crate::imaging::{trace_boundary, Mask};
use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::Path;

pub const MIN_POINTS: usize = 8;
pub const DEFAULT_RINGS: usize = 5;
pub const DEFAULT_SECTORS: usize = 12;

#[derive(Debug, thiserror::Error)]
pub enum CpdhError {
    #[error("no contour points")]
    Empty,
    #[error("need at least {MIN_POINTS} contour points, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate contour: all points coincide with the centroid")]
    Degenerate,
    #[error("mask has no traceable component")]
    NoContour,
    #[error("descriptor shapes differ: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("invalid bin layout {0}x{1}")]
    BadLayout(usize, usize),
    #[error("gallery has no classes")]
    EmptyGallery,
    #[error("gallery line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("invalid gallery: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// First point and the mean offset of all points from it.
fn anchored_mean(points: &[(f64, f64)]) -> Result<((f64, f64), (f64, f64)), CpdhError> {
    let &(x0, y0) = points.first().ok_or(CpdhError::Empty)?;
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + (x - x0), sy + (y - y0)));
    Ok(((x0, y0), (sx / n, sy / n)))
}

/// Arithmetic mean of the points.
pub fn centroid_of(points: &[(f64, f64)]) -> Result<(f64, f64), CpdhError> {
    let ((x0, y0), (mx, my)) = anchored_mean(points)?;
    Ok((x0 + mx, y0 + my))
}

/// Largest distance from `c` to any point.
pub fn circumscribed_radius(points: &[(f64, f64)], c: (f64, f64)) -> Result<f64, CpdhError> {
    if points.is_empty() {
        return Err(CpdhError::Empty);
    }
    Ok(points.iter().map(|&(x, y)| (x - c.0).hypot(y - c.1)).fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpdhDescriptor {
    n_rho: usize,
    n_theta: usize,
    bins: Vec<f64>,
    centroid: (f64, f64),
    radius: f64,
}

impl CpdhDescriptor {
    /// Wraps precomputed bins (ring-major). Centroid and radius are unknown
    /// for such descriptors and reported as the origin and 1.
    pub fn from_bins(n_rho: usize, n_theta: usize, bins: Vec<f64>) -> Result<Self, CpdhError> {
        if n_rho == 0 || n_theta == 0 {
            return Err(CpdhError::BadLayout(n_rho, n_theta));
        }
        if bins.len() != n_rho * n_theta {
            return Err(CpdhError::Invalid(format!("{} bins for a {n_rho}x{n_theta} layout", bins.len())));
        }
        if bins.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(CpdhError::Invalid("bins must be finite and non-negative".into()));
        }
        let sum: f64 = bins.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CpdhError::Invalid(format!("bins sum to {sum}, expected 1")));
        }
        Ok(CpdhDescriptor { n_rho, n_theta, bins, centroid: (0.0, 0.0), radius: 1.0 })
    }

    pub fn n_rho(&self) -> usize {
        self.n_rho
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    /// Ring-major bin masses: `bins()[ring * n_theta + sector]`.
    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn bin(&self, ring: usize, sector: usize) -> f64 {
        self.bins[ring * self.n_theta + sector]
    }

    pub fn centroid(&self) -> (f64, f64) {
        self.centroid
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

/// Bins every point by normalized distance (equal-width rings, the
/// circumscribed circle itself in the outer ring) and by angle.
pub fn build_cpdh(points: &[(f64, f64)], n_rho: usize, n_theta: usize) -> Result<CpdhDescriptor, CpdhError> {
    if n_rho == 0 || n_theta == 0 {
        return Err(CpdhError::BadLayout(n_rho, n_theta));
    }
    if points.len() < MIN_POINTS {
        return Err(CpdhError::TooFewPoints(points.len()));
    }
    // offsets are taken via the first point so that integer translations of
    // integer shapes, and power-of-two scalings, give bit-identical bins
    let ((x0, y0), (mx, my)) = anchored_mean(points)?;
    let offsets: Vec<(f64, f64)> = points.iter().map(|&(x, y)| ((x - x0) - mx, (y - y0) - my)).collect();
    let radius = offsets.iter().map(|&(dx, dy)| dx.hypot(dy)).fold(0.0, f64::max);
    if radius <= 0.0 {
        return Err(CpdhError::Degenerate);
    }
    let mut counts = vec![0usize; n_rho * n_theta];
    for &(dx, dy) in &offsets {
        let rho = dx.hypot(dy) / radius;
        let mut theta = dy.atan2(dx);
        if theta < 0.0 {
            theta += TAU;
        }
        let ring = ((rho * n_rho as f64).floor() as usize).min(n_rho - 1);
        let sector = ((theta * n_theta as f64 / TAU).floor() as usize).min(n_theta - 1);
        counts[ring * n_theta + sector] += 1;
    }
    let n = points.len() as f64;
    let bins = counts.into_iter().map(|k| k as f64 / n).collect();
    Ok(CpdhDescriptor { n_rho, n_theta, bins, centroid: (x0 + mx, y0 + my), radius })
}

/// Boundary points of the largest component of `mask`.
pub fn contour_points(mask: &Mask) -> Result<Vec<(f64, f64)>, CpdhError> {
    let contours = trace_boundary(mask);
    let best = contours
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.area.cmp(&b.area).then(j.cmp(i)))
        .map(|(_, c)| c)
        .ok_or(CpdhError::NoContour)?;
    Ok(best.points.iter().map(|&(x, y)| (x as f64, y as f64)).collect())
}

/// Descriptor of the largest shape in a binary mask.
pub fn descriptor_from_mask(mask: &Mask, n_rho: usize, n_theta: usize) -> Result<CpdhDescriptor, CpdhError> {
    build_cpdh(&contour_points(mask)?, n_rho, n_theta)
}

fn chi2_shifted(a: &CpdhDescriptor, b: &[f64], n_theta: usize, shift: usize, reversed: bool) -> f64 {
    let mut d = 0.0;
    for (i, &u) in a.bins.iter().enumerate() {
        let (ring, s) = (i / n_theta, i % n_theta);
        let s = (s + shift) % n_theta;
        let s = if reversed { n_theta - 1 - s } else { s };
        let v = b[ring * n_theta + s];
        let sum = u + v;
        if sum > 0.0 {
            d += (u - v) * (u - v) / sum;
        }
    }
    0.5 * d
}

fn check_shapes(a: &CpdhDescriptor, b: &CpdhDescriptor) -> Result<(), CpdhError> {
    if a.n_rho != b.n_rho || a.n_theta != b.n_theta {
        return Err(CpdhError::ShapeMismatch(a.n_rho, a.n_theta, b.n_rho, b.n_theta));
    }
    Ok(())
}

fn best_shift(a: &CpdhDescriptor, b: &CpdhDescriptor, reversed: bool) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for k in 0..a.n_theta {
        let d = chi2_shifted(a, &b.bins, a.n_theta, k, reversed);
        if d < best.0 {
            best = (d, k);
        }
    }
    best
}

/// Smallest χ² distance between `a` and `b` over all cyclic sector shifts
/// of `b`, with the first shift attaining it. A shift of `k` compares sector
/// `s` of `a` with sector `s + k` of `b`, so `b` drawn rotated by `k`
/// sectors matches at shift `k`.
pub fn cpdh_distance(a: &CpdhDescriptor, b: &CpdhDescriptor) -> Result<(f64, usize), CpdhError> {
    check_shapes(a, b)?;
    Ok(best_shift(a, b, false))
}

/// Like [`cpdh_distance`] but also tries `b` mirrored (sector order
/// reversed) and keeps the closer of the two.
pub fn cpdh_distance_mirrored(a: &CpdhDescriptor, b: &CpdhDescriptor) -> Result<(f64, usize, bool), CpdhError> {
    check_shapes(a, b)?;
    let (d, k) = best_shift(a, b, false);
    let (dm, km) = best_shift(a, b, true);
    Ok(if dm < d { (dm, km, true) } else { (d, k, false) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GestureClass {
    pub id: u8,
    pub name: String,
    pub templates: Vec<CpdhDescriptor>,
}

/// Labelled templates sharing one bin layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gallery {
    n_rho: usize,
    n_theta: usize,
    classes: Vec<GestureClass>,
}

impl Gallery {
    /// Checks layout agreement, unique ids and non-empty classes, and sorts
    /// classes by id.
    pub fn new(n_rho: usize, n_theta: usize, mut classes: Vec<GestureClass>) -> Result<Self, CpdhError> {
        if n_rho == 0 || n_theta == 0 {
            return Err(CpdhError::BadLayout(n_rho, n_theta));
        }
        classes.sort_by_key(|c| c.id);
        for pair in classes.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(CpdhError::Invalid(format!("duplicate class id {}", pair[0].id)));
            }
        }
        for c in &classes {
            if c.name.is_empty() || c.name.chars().any(char::is_whitespace) {
                return Err(CpdhError::Invalid(format!("class {} needs a non-empty name without spaces", c.id)));
            }
            if c.templates.is_empty() {
                return Err(CpdhError::Invalid(format!("class {} ({}) has no templates", c.id, c.name)));
            }
            if let Some(t) = c.templates.iter().find(|t| t.n_rho != n_rho || t.n_theta != n_theta) {
                return Err(CpdhError::ShapeMismatch(n_rho, n_theta, t.n_rho, t.n_theta));
            }
        }
        Ok(Gallery { n_rho, n_theta, classes })
    }

    pub fn n_rho(&self) -> usize {
        self.n_rho
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    /// Classes in ascending id order.
    pub fn classes(&self) -> &[GestureClass] {
        &self.classes
    }

    pub fn class(&self, id: u8) -> Option<&GestureClass> {
        self.classes.iter().find(|c| c.id == id)
    }

    pub fn class_by_name(&self, name: &str) -> Option<&GestureClass> {
        self.classes.iter().find(|c| c.name == name)
    }

    /// Text form: a `gallery <n_rho> <n_theta>` header, then each `class <id>
    /// <name>` followed by its `template <bins…>` lines. Bins are written in
    /// shortest round-trip form, so parsing gives back identical values.
    pub fn to_text(&self) -> String {
        let mut s = format!("gallery {} {}\n", self.n_rho, self.n_theta);
        for c in &self.classes {
            writeln!(s, "class {} {}", c.id, c.name).unwrap();
            for t in &c.templates {
                s.push_str("template");
                for b in &t.bins {
                    write!(s, " {b}").unwrap();
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, CpdhError> {
        let mut layout: Option<(usize, usize)> = None;
        let mut classes: Vec<GestureClass> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: String| CpdhError::Format { line, msg };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut tok = content.split_whitespace();
            let directive = tok.next().expect("non-empty line");
            let rest: Vec<&str> = tok.collect();
            let num = |s: &str| s.parse::<usize>().map_err(|_| err(format!("expected an integer, got `{s}`")));
            match (directive, layout) {
                ("gallery", None) => {
                    let [r, t] = rest[..] else { return Err(err("expected `gallery <n_rho> <n_theta>`".into())) };
                    let (r, t) = (num(r)?, num(t)?);
                    if r == 0 || t == 0 {
                        return Err(err(format!("invalid layout {r}x{t}")));
                    }
                    layout = Some((r, t));
                }
                (_, None) => return Err(err(format!("expected `gallery` header, got `{directive}`"))),
                ("gallery", Some(_)) => return Err(err("repeated `gallery` header".into())),
                ("class", Some(_)) => {
                    let [id, name] = rest[..] else { return Err(err("expected `class <id> <name>`".into())) };
                    let id = id.parse::<u8>().map_err(|_| err(format!("class id `{id}` is not in 0..=255")))?;
                    classes.push(GestureClass { id, name: name.to_string(), templates: Vec::new() });
                }
                ("template", Some((r, t))) => {
                    let class = classes.last_mut().ok_or_else(|| err("template before any class".into()))?;
                    let bins = rest
                        .iter()
                        .map(|s| s.parse::<f64>().map_err(|_| err(format!("bad bin value `{s}`"))))
                        .collect::<Result<Vec<_>, _>>()?;
                    let d = CpdhDescriptor::from_bins(r, t, bins).map_err(|e| err(e.to_string()))?;
                    class.templates.push(d);
                }
                (other, _) => return Err(err(format!("unknown directive `{other}`"))),
            }
        }
        let (r, t) = layout.ok_or(CpdhError::Format { line: 0, msg: "missing `gallery` header".into() })?;
        Gallery::new(r, t, classes)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, CpdhError> {
        Gallery::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), CpdhError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyParams {
    /// Largest accepted distance; farther queries are unknown.
    pub tau: f64,
    /// Also match sector-reversed templates (left versus right hand).
    pub mirror: bool,
}

impl Default for ClassifyParams {
    fn default() -> Self {
        ClassifyParams { tau: 0.25, mirror: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    /// `None` when the nearest template is farther than `tau`.
    pub class: Option<u8>,
    pub confidence: f64,
    /// Distance to the nearest template.
    pub distance: f64,
}

/// Nearest-template classification; ties go to the lowest class id.
pub fn classify(q: &CpdhDescriptor, gallery: &Gallery, p: &ClassifyParams) -> Result<Classification, CpdhError> {
    if gallery.classes.is_empty() {
        return Err(CpdhError::EmptyGallery);
    }
    let mut best: Option<(f64, u8)> = None;
    for c in &gallery.classes {
        for t in &c.templates {
            let d = if p.mirror { cpdh_distance_mirrored(q, t)?.0 } else { cpdh_distance(q, t)?.0 };
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, c.id));
            }
        }
    }
    let (d, id) = best.expect("classes have templates");
    if d <= p.tau {
        let confidence = if p.tau > 0.0 { (1.0 - d / p.tau).clamp(0.0, 1.0) } else { 1.0 };
        Ok(Classification { class: Some(id), confidence, distance: d })
    } else {
        Ok(Classification { class: None, confidence: 0.0, distance: d })
    }
}
