//! Binary morphology with a square structuring element. Pixels outside the
//! image count as background for both operators.

use super::{ImagingError, Mask, Raster};

fn check_kernel(k: u32) -> Result<(), ImagingError> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(ImagingError::BadKernel(k));
    }
    Ok(())
}

// Separable pass: `any` selects dilation (OR) versus erosion (AND).
fn pass(src: &[bool], w: usize, h: usize, r: usize, horizontal: bool, any: bool) -> Vec<bool> {
    let mut out = vec![false; src.len()];
    let (outer, inner) = if horizontal { (h, w) } else { (w, h) };
    let idx = |o: usize, i: usize| if horizontal { o * w + i } else { i * w + o };
    for o in 0..outer {
        // running count of set pixels inside the window
        let mut count = 0usize;
        for i in 0..r.min(inner) {
            count += src[idx(o, i)] as usize;
        }
        for i in 0..inner {
            if i + r < inner {
                count += src[idx(o, i + r)] as usize;
            }
            if i > r {
                count -= src[idx(o, i - r - 1)] as usize;
            }
            out[idx(o, i)] = if any { count > 0 } else { count == 2 * r + 1 };
        }
    }
    out
}

fn apply(m: &Mask, k: u32, any: bool) -> Result<Mask, ImagingError> {
    check_kernel(k)?;
    if k == 1 {
        return Ok(m.clone());
    }
    let (w, h) = (m.width() as usize, m.height() as usize);
    let r = (k / 2) as usize;
    let src: Vec<bool> = m.data().iter().map(|&v| v != 0).collect();
    let rows = pass(&src, w, h, r, true, any);
    let both = pass(&rows, w, h, r, false, any);
    Ok(Mask::from_bools(m.width(), m.height(), both.into_iter()))
}

pub fn erode(m: &Mask, k: u32) -> Result<Mask, ImagingError> {
    apply(m, k, false)
}

pub fn dilate(m: &Mask, k: u32) -> Result<Mask, ImagingError> {
    apply(m, k, true)
}

/// Morphological closing: dilation followed by erosion.
pub fn close(m: &Mask, k: u32) -> Result<Mask, ImagingError> {
    erode(&dilate(m, k)?, k)
}
