use super::{Frame, GrayImage};

/// Hue in half-degrees (0..=179), saturation and value in 0..=255.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hsv {
    pub h: u8,
    pub s: u8,
    pub v: u8,
}

/// ITU-R 601 luma, rounded to the nearest integer.
pub fn to_gray(frame: &Frame) -> GrayImage {
    let values = frame
        .pixels()
        .chunks_exact(3)
        .map(|p| {
            let y = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
            y.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage::new(frame.width(), frame.height(), values).expect("same dimensions as frame")
}

/// Hexcone RGB → HSV. Gray pixels (no chroma) get hue 0.
pub fn rgb_to_hsv(r: u8, g: u8, b: u8) -> Hsv {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = (max - min) as f64;
    let s = if max == 0 { 0.0 } else { 255.0 * delta / max as f64 };
    let h = if delta == 0.0 {
        0.0
    } else {
        let (r, g, b) = (r as f64, g as f64, b as f64);
        let deg = if max as f64 == r {
            60.0 * (g - b) / delta
        } else if max as f64 == g {
            120.0 + 60.0 * (b - r) / delta
        } else {
            240.0 + 60.0 * (r - g) / delta
        };
        let deg = if deg < 0.0 { deg + 360.0 } else { deg };
        (deg / 2.0).round()
    };
    // 359.x degrees rounds up to 180, which is the same hue as 0
    let h = if h >= 180.0 { 0 } else { h as u8 };
    Hsv { h, s: s.round() as u8, v: max }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference inverse over the same conventions, f64 throughout.
    fn hsv_to_rgb(h: u8, s: u8, v: u8) -> (f64, f64, f64) {
        let v = v as f64;
        let s = s as f64 / 255.0;
        let hd = h as f64 * 2.0 / 60.0;
        let c = v * s;
        let x = c * (1.0 - ((hd % 2.0) - 1.0).abs());
        let (r, g, b) = match hd as u32 {
            0 => (c, x, 0.0),
            1 => (x, c, 0.0),
            2 => (0.0, c, x),
            3 => (0.0, x, c),
            4 => (x, 0.0, c),
            _ => (c, 0.0, x),
        };
        let m = v - c;
        (r + m, g + m, b + m)
    }

    #[test]
    fn gray_examples() {
        let f = Frame::new(3, 1, vec![100, 100, 100, 0, 0, 0, 255, 0, 0]).unwrap();
        assert_eq!(to_gray(&f).values(), &[100, 0, 76]);
    }

    #[test]
    fn hsv_examples() {
        assert_eq!(rgb_to_hsv(255, 0, 0), Hsv { h: 0, s: 255, v: 255 });
        assert_eq!(rgb_to_hsv(128, 128, 128), Hsv { h: 0, s: 0, v: 128 });
        assert_eq!(rgb_to_hsv(0, 255, 0), Hsv { h: 60, s: 255, v: 255 });
        assert_eq!(rgb_to_hsv(0, 0, 255), Hsv { h: 120, s: 255, v: 255 });
        assert_eq!(rgb_to_hsv(0, 0, 0), Hsv { h: 0, s: 0, v: 0 });
    }

    #[test]
    fn hue_wraps_to_zero() {
        // 359.x degrees
        assert_eq!(rgb_to_hsv(255, 0, 1).h, 0);
    }

    #[test]
    fn primaries_round_trip_through_reference_inverse() {
        for rgb in [[255u8, 0, 0], [0, 255, 0], [0, 0, 255], [200, 0, 0], [0, 90, 0]] {
            let hsv = rgb_to_hsv(rgb[0], rgb[1], rgb[2]);
            let (r, g, b) = hsv_to_rgb(hsv.h, hsv.s, hsv.v);
            let back = rgb_to_hsv(r.round() as u8, g.round() as u8, b.round() as u8);
            assert_eq!((back.s, back.v), (hsv.s, hsv.v), "{rgb:?}");
            assert_eq!([r, g, b].map(|c| c.round() as u8), rgb);
        }
    }

    #[test]
    fn hue_always_in_range() {
        for r in (0..=255).step_by(15) {
            for g in (0..=255).step_by(15) {
                for b in (0..=255).step_by(15) {
                    let hsv = rgb_to_hsv(r as u8, g as u8, b as u8);
                    assert!(hsv.h <= 179);
                }
            }
        }
    }
}
