use super::{GrayImage, ImagingError, Raster, Rect};

/// Summed-area tables for constant-time rectangle sums and sums of squares.
///
/// Entry `(x, y)` holds the sum of every pixel strictly above and to the left
/// of `(x, y)`, so the tables are one larger than the image in each direction
/// and their first row and column are zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegralImage {
    width: u32,
    height: u32,
    sum: Vec<u64>,
    sq_sum: Vec<u64>,
}

impl IntegralImage {
    pub fn new(img: &GrayImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let stride = w + 1;
        let mut sum = vec![0u64; stride * (h + 1)];
        let mut sq_sum = vec![0u64; stride * (h + 1)];
        let data = img.values();
        for y in 0..h {
            let mut row = 0u64;
            let mut row_sq = 0u64;
            for x in 0..w {
                let v = data[y * w + x] as u64;
                row += v;
                row_sq += v * v;
                let i = (y + 1) * stride + x + 1;
                sum[i] = sum[i - stride] + row;
                sq_sum[i] = sq_sum[i - stride] + row_sq;
            }
        }
        IntegralImage { width: img.width(), height: img.height(), sum, sq_sum }
    }

    /// Width of the source image (the table has one more column).
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Table entry; `x ≤ width`, `y ≤ height`.
    pub fn at(&self, x: u32, y: u32) -> u64 {
        self.sum[(y * (self.width + 1) + x) as usize]
    }

    pub fn sq_at(&self, x: u32, y: u32) -> u64 {
        self.sq_sum[(y * (self.width + 1) + x) as usize]
    }

    fn corners(table: &[u64], stride: u32, r: &Rect) -> u64 {
        let at = |x: u32, y: u32| table[(y * stride + x) as usize];
        // a + d - b - c in the order that cannot underflow
        at(r.right(), r.bottom()) + at(r.x(), r.y()) - at(r.x(), r.bottom()) - at(r.right(), r.y())
    }

    pub fn rect_sum(&self, r: Rect) -> Result<u64, ImagingError> {
        r.check_inside(self.width, self.height)?;
        Ok(self.rect_sum_unchecked(&r))
    }

    pub fn rect_sq_sum(&self, r: Rect) -> Result<u64, ImagingError> {
        r.check_inside(self.width, self.height)?;
        Ok(Self::corners(&self.sq_sum, self.width + 1, &r))
    }

    /// Caller guarantees `r` lies inside the image.
    pub(crate) fn rect_sum_unchecked(&self, r: &Rect) -> u64 {
        Self::corners(&self.sum, self.width + 1, r)
    }

    pub(crate) fn rect_sq_sum_unchecked(&self, r: &Rect) -> u64 {
        Self::corners(&self.sq_sum, self.width + 1, r)
    }
}
