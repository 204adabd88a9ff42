use super::{ImagingError, Raster, Rect};

/// Raw spatial moments in absolute image coordinates, pixel values as weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Moments {
    pub m00: u64,
    pub m10: u64,
    pub m01: u64,
    pub m11: u64,
    pub m20: u64,
    pub m02: u64,
}

impl Moments {
    /// `None` when the window carries no mass.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        if self.m00 == 0 {
            return None;
        }
        let m00 = self.m00 as f64;
        Some((self.m10 as f64 / m00, self.m01 as f64 / m00))
    }

    /// Normalized second-order central moments (μ20, μ11, μ02) / M00.
    pub fn central(&self) -> Option<(f64, f64, f64)> {
        let (cx, cy) = self.centroid()?;
        let m00 = self.m00 as f64;
        let mu20 = self.m20 as f64 / m00 - cx * cx;
        let mu11 = self.m11 as f64 / m00 - cx * cy;
        let mu02 = self.m02 as f64 / m00 - cy * cy;
        Some((mu20, mu11, mu02))
    }
}

pub fn moments<R: Raster + ?Sized>(img: &R, window: Rect) -> Result<Moments, ImagingError> {
    window.check_inside(img.width(), img.height())?;
    let mut m = Moments::default();
    let w = img.width() as usize;
    let data = img.data();
    for y in window.y()..window.bottom() {
        let row = &data[y as usize * w..];
        let (mut r0, mut r1, mut r2) = (0u64, 0u64, 0u64);
        for x in window.x()..window.right() {
            let v = row[x as usize] as u64;
            let x = x as u64;
            r0 += v;
            r1 += v * x;
            r2 += v * x * x;
        }
        let y = y as u64;
        m.m00 += r0;
        m.m10 += r1;
        m.m20 += r2;
        m.m01 += r0 * y;
        m.m11 += r1 * y;
        m.m02 += r0 * y * y;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{GrayImage, Mask};
    use rand::{Rng, SeedableRng};

    #[test]
    fn uniform_window_centroid_is_center() {
        let img = GrayImage::filled(50, 40, 9).unwrap();
        let r = Rect::new(10, 5, 21, 14).unwrap();
        let (cx, cy) = moments(&img, r).unwrap().centroid().unwrap();
        let (ex, ey) = r.center();
        assert!((cx - ex).abs() <= 0.5 && (cy - ey).abs() <= 0.5);
    }

    #[test]
    fn single_pixel_centroid() {
        let mut m = Mask::empty(30, 30).unwrap();
        m.set(17, 4, true);
        let c = moments(&m, Rect::new(0, 0, 30, 30).unwrap()).unwrap().centroid().unwrap();
        assert_eq!(c, (17.0, 4.0));
    }

    #[test]
    fn window_must_fit() {
        let img = GrayImage::filled(10, 10, 1).unwrap();
        assert!(moments(&img, Rect::new(5, 5, 6, 2).unwrap()).is_err());
    }

    #[test]
    fn matches_double_loop() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let img = GrayImage::from_fn(37, 29, |_, _| rng.random()).unwrap();
            let x = rng.random_range(0..30);
            let y = rng.random_range(0..20);
            let r = Rect::new(x, y, rng.random_range(1..=37 - x), rng.random_range(1..=29 - y)).unwrap();
            let mut e = Moments::default();
            for yy in r.y()..r.bottom() {
                for xx in r.x()..r.right() {
                    let v = img.get(xx, yy) as u64;
                    let (xx, yy) = (xx as u64, yy as u64);
                    e.m00 += v;
                    e.m10 += v * xx;
                    e.m01 += v * yy;
                    e.m11 += v * xx * yy;
                    e.m20 += v * xx * xx;
                    e.m02 += v * yy * yy;
                }
            }
            assert_eq!(moments(&img, r).unwrap(), e);
        }
    }
}
