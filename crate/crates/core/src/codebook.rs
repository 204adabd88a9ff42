//! Per-pixel codebook background model.
//!
//! Each pixel keeps a short list of codewords. A codeword remembers a mean
//! color, the brightness range it has been seen at, and how long it went
//! unmatched during training (its maximum negative run length, MNRL). After
//! training, codewords that were absent for more than half of the sequence are
//! dropped as transient foreground; at detection time a pixel is background
//! when any surviving codeword explains its color and brightness.

use crate::imaging::{Frame, Mask};
use rayon::prelude::*;
use std::io::{self, Read, Write};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"CBKM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CodebookError {
    #[error("training needs at least one frame")]
    NoFrames,
    #[error("frame {index} is {got:?}, model is {expected:?}")]
    DimensionMismatch { index: usize, expected: (u32, u32), got: (u32, u32) },
    #[error("invalid parameters: {0}")]
    BadParams(&'static str),
    #[error("model file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodebookParams {
    /// Color-distortion bound while training.
    pub eps_train: f64,
    /// Color-distortion bound while detecting.
    pub eps_detect: f64,
    /// Lower brightness ratio, in (0, 1].
    pub alpha: f64,
    /// Upper brightness ratio, ≥ 1.
    pub beta: f64,
}

impl Default for CodebookParams {
    fn default() -> Self {
        CodebookParams { eps_train: 10.0, eps_detect: 10.0, alpha: 0.55, beta: 1.25 }
    }
}

impl CodebookParams {
    pub fn validate(&self) -> Result<(), CodebookError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(CodebookError::BadParams("alpha must be in (0, 1]"));
        }
        if !(self.beta >= 1.0) {
            return Err(CodebookError::BadParams("beta must be >= 1"));
        }
        if !(self.eps_train > 0.0 && self.eps_detect > 0.0) {
            return Err(CodebookError::BadParams("eps_train and eps_detect must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codeword {
    pub mean_color: [f64; 3],
    pub i_min: f64,
    pub i_max: f64,
    pub freq: u32,
    pub mnrl: u32,
    pub first_seen: u32,
    pub last_seen: u32,
}

impl Codeword {
    fn new(x: [f64; 3], t: u32) -> Self {
        let i = brightness(x);
        Codeword { mean_color: x, i_min: i, i_max: i, freq: 1, mnrl: t, first_seen: t, last_seen: t }
    }

    fn matches(&self, x: [f64; 3], i: f64, eps: f64, p: &CodebookParams) -> bool {
        color_distortion(x, self.mean_color) <= eps && brightness_ok(i, self, p)
    }

    fn absorb(&mut self, x: [f64; 3], i: f64, t: u32) {
        let f = self.freq as f64;
        for (m, &c) in self.mean_color.iter_mut().zip(&x) {
            *m = (f * *m + c) / (f + 1.0);
        }
        self.i_min = self.i_min.min(i);
        self.i_max = self.i_max.max(i);
        self.freq += 1;
        self.mnrl = self.mnrl.max(t - self.last_seen - 1);
        self.last_seen = t;
    }
}

pub fn brightness(x: [f64; 3]) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

/// Distance of `x` from the line through the origin along `v`.
pub fn color_distortion(x: [f64; 3], v: [f64; 3]) -> f64 {
    let xx = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
    let vv = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    if vv == 0.0 {
        return xx.sqrt();
    }
    let xv = x[0] * v[0] + x[1] * v[1] + x[2] * v[2];
    (xx - xv * xv / vv).max(0.0).sqrt()
}

/// `alpha·i_max ≤ i ≤ min(beta·i_max, i_min/alpha)`, closed at both ends.
pub fn brightness_ok(i: f64, cw: &Codeword, p: &CodebookParams) -> bool {
    let lo = p.alpha * cw.i_max;
    let hi = (p.beta * cw.i_max).min(cw.i_min / p.alpha);
    lo <= i && i <= hi
}

fn rgb(px: &[u8]) -> [f64; 3] {
    [px[0] as f64, px[1] as f64, px[2] as f64]
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodebookModel {
    width: u32,
    height: u32,
    frames_trained: u32,
    params: CodebookParams,
    books: Vec<Vec<Codeword>>,
}

impl CodebookModel {
    /// Builds the per-pixel codebooks from a training sequence. Codewords are
    /// not pruned; see [`CodebookModel::prune`].
    pub fn train(frames: &[Frame], params: CodebookParams) -> Result<Self, CodebookError> {
        params.validate()?;
        let first = frames.first().ok_or(CodebookError::NoFrames)?;
        let (w, h) = (first.width(), first.height());
        for (index, f) in frames.iter().enumerate() {
            if !f.same_size(first) {
                return Err(CodebookError::DimensionMismatch {
                    index,
                    expected: (w, h),
                    got: (f.width(), f.height()),
                });
            }
        }
        let n = frames.len() as u32;
        let books = (0..w as usize * h as usize)
            .into_par_iter()
            .map(|pix| {
                let mut book: Vec<Codeword> = Vec::new();
                for (t, f) in frames.iter().enumerate() {
                    let t = t as u32;
                    let x = rgb(&f.pixels()[pix * 3..pix * 3 + 3]);
                    let i = brightness(x);
                    match book.iter_mut().find(|cw| cw.matches(x, i, params.eps_train, &params)) {
                        Some(cw) => cw.absorb(x, i, t),
                        None => book.push(Codeword::new(x, t)),
                    }
                }
                for cw in &mut book {
                    // wrap-around: unmatched tail plus unmatched head
                    cw.mnrl = cw.mnrl.max(n - cw.last_seen + cw.first_seen - 1);
                }
                book
            })
            .collect();
        Ok(CodebookModel { width: w, height: h, frames_trained: n, params, books })
    }

    /// Drops codewords whose MNRL exceeds half the training length. A pixel
    /// that would lose every codeword keeps its most frequent one.
    pub fn prune(mut self) -> Self {
        let bound = self.frames_trained as f64 / 2.0;
        for book in &mut self.books {
            if book.iter().all(|cw| cw.mnrl as f64 > bound) {
                // first of the most frequent, so ties keep insertion order
                let best = book.iter().enumerate().fold(0, |b, (i, cw)| if cw.freq > book[b].freq { i } else { b });
                let keep = book.swap_remove(best);
                *book = vec![keep];
            } else {
                book.retain(|cw| cw.mnrl as f64 <= bound);
            }
        }
        self
    }

    /// Foreground mask: 255 where no codeword explains the pixel.
    pub fn subtract(&self, frame: &Frame) -> Result<Mask, CodebookError> {
        if frame.width() != self.width || frame.height() != self.height {
            return Err(CodebookError::DimensionMismatch {
                index: 0,
                expected: (self.width, self.height),
                got: (frame.width(), frame.height()),
            });
        }
        let p = &self.params;
        let fg = frame.pixels().chunks_exact(3).zip(&self.books).map(|(px, book)| {
            let x = rgb(px);
            let i = brightness(x);
            !book.iter().any(|cw| cw.matches(x, i, p.eps_detect, p))
        });
        Ok(Mask::from_bools(self.width, self.height, fg))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn frames_trained(&self) -> u32 {
        self.frames_trained
    }

    pub fn params(&self) -> &CodebookParams {
        &self.params
    }

    /// Detection parameters can be retuned without retraining.
    pub fn set_params(&mut self, params: CodebookParams) -> Result<(), CodebookError> {
        params.validate()?;
        self.params = params;
        Ok(())
    }

    pub fn codewords(&self, x: u32, y: u32) -> &[Codeword] {
        &self.books[(y * self.width + x) as usize]
    }

    pub fn total_codewords(&self) -> usize {
        self.books.iter().map(Vec::len).sum()
    }

    /// Little-endian binary form. Header: magic, version, width, height,
    /// training length, then eps_train, eps_detect, alpha, beta as f64. Each
    /// pixel: u16 codeword count, then per codeword the mean color, i_min,
    /// i_max and the squared norm of the mean as six f64, followed by freq,
    /// mnrl, first_seen and last_seen as u32.
    pub fn write_to(&self, mut w: impl Write) -> Result<(), CodebookError> {
        let mut buf = Vec::with_capacity(40 + self.total_codewords() * 64 + self.books.len() * 2);
        buf.extend_from_slice(MAGIC);
        for v in [FORMAT_VERSION, self.width, self.height, self.frames_trained] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let p = &self.params;
        for v in [p.eps_train, p.eps_detect, p.alpha, p.beta] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for book in &self.books {
            buf.extend_from_slice(&(book.len() as u16).to_le_bytes());
            for cw in book {
                let [r, g, b] = cw.mean_color;
                let norm_sq = r * r + g * g + b * b;
                for v in [r, g, b, cw.i_min, cw.i_max, norm_sq] {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                for v in [cw.freq, cw.mnrl, cw.first_seen, cw.last_seen] {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, CodebookError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(CodebookError::Format("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(CodebookError::Format(format!("unsupported version {version}")));
        }
        let (width, height, frames_trained) = (cur.u32()?, cur.u32()?, cur.u32()?);
        if width == 0 || height == 0 || width > crate::imaging::MAX_DIM || height > crate::imaging::MAX_DIM {
            return Err(CodebookError::Format(format!("bad dimensions {width}x{height}")));
        }
        let params = CodebookParams {
            eps_train: cur.f64()?,
            eps_detect: cur.f64()?,
            alpha: cur.f64()?,
            beta: cur.f64()?,
        };
        params.validate().map_err(|e| CodebookError::Format(e.to_string()))?;
        let mut books = Vec::with_capacity(width as usize * height as usize);
        for _ in 0..width as usize * height as usize {
            let n = cur.u16()?;
            let mut book = Vec::with_capacity(n as usize);
            for _ in 0..n {
                let mean_color = [cur.f64()?, cur.f64()?, cur.f64()?];
                let (i_min, i_max, _norm_sq) = (cur.f64()?, cur.f64()?, cur.f64()?);
                book.push(Codeword {
                    mean_color,
                    i_min,
                    i_max,
                    freq: cur.u32()?,
                    mnrl: cur.u32()?,
                    first_seen: cur.u32()?,
                    last_seen: cur.u32()?,
                });
            }
            books.push(book);
        }
        if cur.pos != bytes.len() {
            return Err(CodebookError::Format(format!("{} trailing bytes", bytes.len() - cur.pos)));
        }
        Ok(CodebookModel { width, height, frames_trained, params, books })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodebookError> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| CodebookError::Format(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16, CodebookError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, CodebookError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, CodebookError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(w: u32, h: u32, seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px = (0..w * h * 3).map(|_| rng.random_range(30..200)).collect();
        Frame::new(w, h, px).unwrap()
    }

    fn with_square(bg: &Frame, x0: u32, y0: u32, side: u32, rgb: [u8; 3]) -> Frame {
        let mut f = bg.clone();
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                f.set_pixel(x, y, rgb);
            }
        }
        f
    }

    #[test]
    fn distortion_examples() {
        assert!(color_distortion([2.0, 4.0, 6.0], [1.0, 2.0, 3.0]).abs() < 1e-9);
        assert!((color_distortion([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]) - 1.0).abs() < 1e-12);
        assert_eq!(color_distortion([3.0, 4.0, 0.0], [0.0, 0.0, 0.0]), 5.0);
    }

    #[test]
    fn distortion_matches_projection_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let x: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..255.0));
            let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(1.0..255.0));
            // explicit perpendicular component
            let vn = brightness(v);
            let u = v.map(|c| c / vn);
            let proj = x[0] * u[0] + x[1] * u[1] + x[2] * u[2];
            let perp = [x[0] - proj * u[0], x[1] - proj * u[1], x[2] - proj * u[2]];
            assert!((color_distortion(x, v) - brightness(perp)).abs() < 1e-9);
        }
    }

    #[test]
    fn brightness_interval_is_closed() {
        let p = CodebookParams::default();
        let cw = Codeword { mean_color: [100.0; 3], i_min: 150.0, i_max: 180.0, freq: 1, mnrl: 0, first_seen: 0, last_seen: 0 };
        assert!(brightness_ok(180.0, &cw, &p));
        assert!(!brightness_ok(0.0, &cw, &p));
        assert!(brightness_ok(p.alpha * 180.0, &cw, &p));
        assert!(!brightness_ok(p.alpha * 180.0 - 1e-9, &cw, &p));
        // upper bound is the tighter of beta·i_max and i_min/alpha
        let hi = (p.beta * 180.0f64).min(150.0 / p.alpha);
        assert!(brightness_ok(hi, &cw, &p));
        assert!(!brightness_ok(hi + 1e-9, &cw, &p));
    }

    #[test]
    fn identical_frames_one_codeword() {
        let bg = textured(16, 12, 1);
        let m = CodebookModel::train(&vec![bg.clone(); 10], CodebookParams::default()).unwrap();
        for y in 0..12 {
            for x in 0..16 {
                let cws = m.codewords(x, y);
                assert_eq!(cws.len(), 1);
                assert_eq!((cws[0].freq, cws[0].mnrl), (10, 0));
            }
        }
        assert_eq!(m.clone().prune(), m);
        assert_eq!(m.subtract(&bg).unwrap().count(), 0);
    }

    #[test]
    fn flicker_gives_two_codewords_under_square() {
        let bg = textured(20, 20, 2);
        let lit = with_square(&bg, 5, 5, 6, [250, 20, 20]);
        let frames: Vec<Frame> = (0..10).map(|t| if t % 2 == 0 { lit.clone() } else { bg.clone() }).collect();
        let m = CodebookModel::train(&frames, CodebookParams::default()).unwrap();
        for y in 0..20 {
            for x in 0..20 {
                let inside = (5..11).contains(&x) && (5..11).contains(&y);
                assert_eq!(m.codewords(x, y).len(), if inside { 2 } else { 1 }, "({x},{y})");
            }
        }
        // each alternating codeword misses one frame at a time
        assert!(m.codewords(7, 7).iter().all(|cw| cw.mnrl == 1 && cw.freq == 5));
    }

    #[test]
    fn transient_object_pruned() {
        let bg = textured(12, 12, 3);
        let obj = with_square(&bg, 2, 2, 4, [10, 240, 10]);
        let frames: Vec<Frame> = (0..100).map(|t| if t == 50 || t == 51 { obj.clone() } else { bg.clone() }).collect();
        let m = CodebookModel::train(&frames, CodebookParams::default()).unwrap();
        let cws = m.codewords(3, 3);
        assert_eq!(cws.len(), 2);
        assert_eq!(cws[1].mnrl, 98);
        assert!(cws[1].mnrl >= 97);
        // error against ground truth on the re-presented training frames
        let truth = |t: usize| Mask::from_fn(12, 12, |x, y| (t == 50 || t == 51) && (2..6).contains(&x) && (2..6).contains(&y)).unwrap();
        let errors = |m: &CodebookModel| -> usize {
            frames.iter().enumerate().map(|(t, f)| {
                let got = m.subtract(f).unwrap();
                (0..12).flat_map(|y| (0..12).map(move |x| (x, y))).filter(|&(x, y)| got.is_set(x, y) != truth(t).is_set(x, y)).count()
            }).sum()
        };
        let before = errors(&m);
        let pruned = m.prune();
        assert!(errors(&pruned) <= before);
        assert_eq!(pruned.codewords(3, 3).len(), 1);
        assert_eq!(pruned.codewords(3, 3)[0].freq, 98);
        assert_eq!(pruned.subtract(&obj).unwrap().count(), 16);
    }

    #[test]
    fn fallback_keeps_most_frequent() {
        let bg = textured(4, 4, 4);
        let mut m = CodebookModel::train(&[bg], CodebookParams::default()).unwrap();
        m.frames_trained = 10;
        m.books[0] = vec![
            Codeword { mean_color: [1.0; 3], i_min: 1.0, i_max: 2.0, freq: 2, mnrl: 8, first_seen: 0, last_seen: 1 },
            Codeword { mean_color: [9.0; 3], i_min: 9.0, i_max: 9.0, freq: 3, mnrl: 7, first_seen: 2, last_seen: 4 },
        ];
        let pruned = m.prune();
        assert_eq!(pruned.books[0].len(), 1);
        assert_eq!(pruned.books[0][0].freq, 3);
    }

    #[test]
    fn white_on_black_is_all_foreground() {
        let black = Frame::filled(8, 8, [0, 0, 0]).unwrap();
        let white = Frame::filled(8, 8, [255, 255, 255]).unwrap();
        let m = CodebookModel::train(&[black], CodebookParams::default()).unwrap();
        assert_eq!(m.subtract(&white).unwrap().count(), 64);
    }

    #[test]
    fn errors() {
        assert!(matches!(CodebookModel::train(&[], CodebookParams::default()), Err(CodebookError::NoFrames)));
        let a = Frame::filled(4, 4, [1, 2, 3]).unwrap();
        let b = Frame::filled(5, 4, [1, 2, 3]).unwrap();
        assert!(matches!(
            CodebookModel::train(&[a.clone(), b.clone()], CodebookParams::default()),
            Err(CodebookError::DimensionMismatch { index: 1, .. })
        ));
        let m = CodebookModel::train(&[a], CodebookParams::default()).unwrap();
        assert!(m.subtract(&b).is_err());
        let bad = CodebookParams { alpha: 1.5, ..Default::default() };
        assert!(matches!(CodebookModel::train(&[b], bad), Err(CodebookError::BadParams(_))));
    }

    #[test]
    fn self_consistency_and_codeword_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let frames: Vec<Frame> = (0..12)
            .map(|_| {
                let px = (0..10 * 10 * 3).map(|_| rng.random_range(0..=255)).collect();
                Frame::new(10, 10, px).unwrap()
            })
            .collect();
        let m = CodebookModel::train(&frames, CodebookParams::default()).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                assert!(m.codewords(x, y).len() <= frames.len());
            }
        }
        for f in &frames {
            assert_eq!(m.subtract(f).unwrap().count(), 0);
        }
        // removing codewords can only add foreground
        let unpruned: usize = frames.iter().map(|f| m.subtract(f).unwrap().count()).sum();
        let pruned = m.clone().prune();
        let after: usize = frames.iter().map(|f| pruned.subtract(f).unwrap().count()).sum();
        assert!(after >= unpruned);
    }

    #[test]
    fn persistence_round_trip_is_bit_exact() {
        let bg = textured(9, 7, 5);
        let frames: Vec<Frame> = (0..6).map(|t| with_square(&bg, t, 1, 3, [200, 100, 50])).collect();
        let m = CodebookModel::train(&frames, CodebookParams::default()).unwrap().prune();
        let mut bytes = Vec::new();
        m.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"CBKM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let back = CodebookModel::read_from(&bytes[..]).unwrap();
        assert_eq!(back, m);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(again, bytes);
        assert!(CodebookModel::read_from(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(CodebookModel::read_from(&bad[..]).is_err());
    }
}
