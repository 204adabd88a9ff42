use super::{CascadeModel, ScaledCascade};
use crate::imaging::{GrayImage, IntegralImage, Raster, Rect};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectParams {
    pub scale0: f64,
    pub scale_step: f64,
    pub min_neighbors: usize,
    /// Grouping tolerance, see [`group_rectangles`].
    pub group_eps: f64,
    /// Largest scale tried; `None` means until the window no longer fits.
    pub max_scale: Option<f64>,
}

impl Default for DetectParams {
    fn default() -> Self {
        DetectParams { scale0: 1.0, scale_step: 1.25, min_neighbors: 3, group_eps: 0.2, max_scale: None }
    }
}

/// Every raw window that passes the cascade, in scale-then-raster order.
pub(crate) fn raw_hits(model: &CascadeModel, ii: &IntegralImage, p: &DetectParams) -> Vec<Rect> {
    let (iw, ih) = (ii.width(), ii.height());
    let mut scales = Vec::new();
    let mut s = p.scale0;
    while p.scale_step > 1.0 && s > 0.0 && p.max_scale.is_none_or(|m| s <= m + 1e-9) {
        let w = (model.base_w as f64 * s).round() as u32;
        let h = (model.base_h as f64 * s).round() as u32;
        if w == 0 || h == 0 || w > iw || h > ih {
            break;
        }
        scales.push((s, w, h));
        s *= p.scale_step;
    }
    scales
        .par_iter()
        .map(|&(s, w, h)| {
            let Ok(scaled) = ScaledCascade::new(model, w, h) else { return Vec::new() };
            let step = (s.round() as u32).max(1);
            let mut hits = Vec::new();
            for y in (0..=ih - h).step_by(step as usize) {
                for x in (0..=iw - w).step_by(step as usize) {
                    if scaled.eval(ii, x, y).pass {
                        hits.push(Rect::new(x, y, w, h).expect("non-empty"));
                    }
                }
            }
            hits
        })
        .collect::<Vec<_>>()
        .concat()
}

/// Multi-scale sliding-window detection followed by grouping. Results are
/// ordered by descending cluster size, then by top-left corner.
pub fn detect(model: &CascadeModel, gray: &GrayImage, p: &DetectParams) -> Vec<Rect> {
    if gray.width() < model.base_w || gray.height() < model.base_h {
        return Vec::new();
    }
    let ii = IntegralImage::new(gray);
    let mut hits = raw_hits(model, &ii, p);
    hits.sort();
    group_rectangles(&hits, p.min_neighbors, p.group_eps)
}

fn similar(a: &Rect, b: &Rect, eps: f64) -> bool {
    let min_w = a.w().min(b.w()) as f64;
    let tol = eps * min_w;
    let close = (a.x() as f64 - b.x() as f64).abs() <= tol && (a.y() as f64 - b.y() as f64).abs() <= tol;
    let ratio = |p: u32, q: u32| p.max(q) as f64 <= (1.0 + eps) * p.min(q) as f64;
    close && ratio(a.w(), b.w()) && ratio(a.h(), b.h())
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Clusters similar rectangles (transitive closure of pairwise similarity),
/// drops clusters with fewer than `min_neighbors + 1` members, and replaces
/// each remaining cluster with its mean rectangle.
///
/// Two rectangles are similar when their corners differ by at most
/// `eps · min(width)` in each axis and their widths and heights are within a
/// factor of `1 + eps`.
pub fn group_rectangles(rects: &[Rect], min_neighbors: usize, eps: f64) -> Vec<Rect> {
    let n = rects.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if similar(&rects[i], &rects[j], eps) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut clusters: std::collections::BTreeMap<usize, Vec<&Rect>> = Default::default();
    for i in 0..n {
        let root = find(&mut parent, i);
        clusters.entry(root).or_default().push(&rects[i]);
    }
    let mut out: Vec<(usize, Rect)> = clusters
        .into_values()
        .filter(|c| c.len() > min_neighbors)
        .map(|c| {
            let k = c.len() as f64;
            let mean = |f: fn(&Rect) -> u32| (c.iter().map(|r| f(r) as f64).sum::<f64>() / k).round() as u32;
            // mean edges rather than mean sizes keep the result inside the hull
            let (x, y) = (mean(Rect::x), mean(Rect::y));
            let r = Rect::new(x, y, mean(Rect::right) - x, mean(Rect::bottom) - y).expect("non-empty mean");
            (c.len(), r)
        })
        .collect();
    out.sort_by(|(ca, ra), (cb, rb)| cb.cmp(ca).then((ra.y(), ra.x()).cmp(&(rb.y(), rb.x()))));
    out.into_iter().map(|(_, r)| r).collect()
}
