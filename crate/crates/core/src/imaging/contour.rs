//! Outer-boundary extraction by Moore-neighbor tracing over 8-connected
//! components.

use super::{Mask, Raster};

/// Components smaller than this many pixels are not traced.
pub const MIN_COMPONENT_AREA: usize = 4;

/// Outer boundary of one connected component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contour {
    /// Closed, ordered cycle of boundary pixels (the start is not repeated).
    pub points: Vec<(u32, u32)>,
    /// Pixel count of the traced component.
    pub area: usize,
}

// Clockwise on screen (y grows downwards), starting west.
const DIRS: [(i32, i32); 8] = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)];

fn dir_index(dx: i32, dy: i32) -> usize {
    DIRS.iter().position(|&d| d == (dx, dy)).expect("neighbors are adjacent")
}

/// Returns the outer contour of every 8-connected component with at least
/// [`MIN_COMPONENT_AREA`] pixels, in raster order of their top-left pixel.
pub fn trace_boundary(m: &Mask) -> Vec<Contour> {
    let (w, h) = (m.width() as i32, m.height() as i32);
    let data = m.data();
    let mut labels = vec![0u32; data.len()];
    let mut out = Vec::new();
    let mut next_label = 0u32;
    let mut stack = Vec::new();

    for start in 0..data.len() {
        if data[start] == 0 || labels[start] != 0 {
            continue;
        }
        next_label += 1;
        let label = next_label;
        labels[start] = label;
        stack.push(start);
        let mut area = 0usize;
        while let Some(i) = stack.pop() {
            area += 1;
            let (x, y) = ((i as i32) % w, (i as i32) / w);
            for (dx, dy) in DIRS {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let j = (ny * w + nx) as usize;
                if data[j] != 0 && labels[j] == 0 {
                    labels[j] = label;
                    stack.push(j);
                }
            }
        }
        if area < MIN_COMPONENT_AREA {
            continue;
        }
        let sx = start as i32 % w;
        let sy = start as i32 / w;
        let points = trace_one(&labels, w, h, label, (sx, sy), area);
        out.push(Contour { points, area });
    }
    out
}

fn trace_one(labels: &[u32], w: i32, h: i32, label: u32, start: (i32, i32), area: usize) -> Vec<(u32, u32)> {
    let inside = |x: i32, y: i32| x >= 0 && y >= 0 && x < w && y < h && labels[(y * w + x) as usize] == label;
    let mut points = Vec::new();
    let mut cur = start;
    // The start is the first pixel in raster order, so its west neighbor is
    // background.
    let mut back = 0usize;
    let mut first_step: Option<(i32, i32)> = None;
    // every boundary pixel is entered at most once per neighbor direction
    let limit = 8 * area + 8;
    for _ in 0..limit {
        let mut found = None;
        for i in 1..=8 {
            let d = (back + i) % 8;
            let (nx, ny) = (cur.0 + DIRS[d].0, cur.1 + DIRS[d].1);
            if inside(nx, ny) {
                found = Some((d, (nx, ny)));
                break;
            }
        }
        let Some((d, next)) = found else {
            points.push((cur.0 as u32, cur.1 as u32));
            break;
        };
        if cur == start {
            match first_step {
                Some(f) if f == next => break,
                None => first_step = Some(next),
                _ => {}
            }
        }
        points.push((cur.0 as u32, cur.1 as u32));
        let prev = DIRS[(d + 7) % 8];
        let checked = (cur.0 + prev.0, cur.1 + prev.1);
        back = dir_index(checked.0 - next.0, checked.1 - next.1);
        cur = next;
    }
    points
}
