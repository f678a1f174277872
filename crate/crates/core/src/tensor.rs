//! Dense row-major grids and box geometry.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major `height × width` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2D<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor2D<T> {
    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::filled(height, width, T::zero())
    }

    pub fn filled(height: usize, width: usize, value: T) -> Result<Self> {
        check_dims(&[height, width])?;
        Ok(Self {
            height,
            width,
            data: vec![value; height * width],
        })
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        check_dims(&[height, width])?;
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "{height}x{width} grid needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds a grid by evaluating `f(y, x)` at every cell.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> T,
    ) -> Result<Self> {
        check_dims(&[height, width])?;
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor2D<U> {
        Tensor2D {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

impl<T: Copy> Tensor2D<T> {
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize) -> usize {
        debug_assert!(y < self.height && x < self.width);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> T {
        self.data[self.index(y, x)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: T) {
        let i = self.index(y, x);
        self.data[i] = value;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }
}

/// Channel-major `channels × height × width` volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3D<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor3D<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        check_dims(&[channels, height, width])?;
        Ok(Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        })
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        check_dims(&[channels, height, width])?;
        let len = channels * height * width;
        if data.len() != len {
            return Err(Error::shape(format!(
                "{channels}x{height}x{width} volume needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor3D<U> {
        Tensor3D {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

impl<T: Copy> Tensor3D<T> {
    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(c < self.channels && y < self.height && x < self.width);
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: T) {
        let i = self.index(c, y, x);
        self.data[i] = value;
    }

    /// All channels at one cell.
    pub fn column(&self, y: usize, x: usize) -> Vec<T> {
        (0..self.channels).map(|c| self.get(c, y, x)).collect()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::shape(format!(
            "dimensions must be positive, got {dims:?}"
        )));
    }
    Ok(())
}

/// Axis-aligned box in image pixels, top-left / bottom-right corners.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BBox<T> {
    pub x1: T,
    pub y1: T,
    pub x2: T,
    pub y2: T,
}

impl<T: Scalar> BBox<T> {
    pub fn new(x1: T, y1: T, x2: T, y2: T) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(Error::invalid(format!("non-finite box {b:?}")));
        }
        if x2 < x1 || y2 < y1 {
            return Err(Error::invalid(format!("inverted box {b:?}")));
        }
        Ok(b)
    }

    /// From MOTChallenge `(left, top, width, height)`.
    pub fn from_tlwh(left: T, top: T, width: T, height: T) -> Result<Self> {
        Self::new(left, top, left + width, top + height)
    }

    pub fn to_tlwh(&self) -> [T; 4] {
        [self.x1, self.y1, self.width(), self.height()]
    }

    /// Box of size `(w, h)` centered at `(cx, cy)`.
    pub fn from_center(cx: T, cy: T, w: T, h: T) -> Self {
        let two = T::lit(2.0);
        Self {
            x1: cx - w / two,
            y1: cy - h / two,
            x2: cx + w / two,
            y2: cy + h / two,
        }
    }

    #[inline]
    pub fn width(&self) -> T {
        self.x2 - self.x1
    }

    #[inline]
    pub fn height(&self) -> T {
        self.y2 - self.y1
    }

    #[inline]
    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    #[inline]
    pub fn center(&self) -> (T, T) {
        let two = T::lit(2.0);
        ((self.x1 + self.x2) / two, (self.y1 + self.y2) / two)
    }

    pub fn clip(&self, image_w: T, image_h: T) -> Self {
        let c = |v: T, hi: T| v.max(T::zero()).min(hi);
        Self {
            x1: c(self.x1, image_w),
            y1: c(self.y1, image_h),
            x2: c(self.x2, image_w),
            y2: c(self.y2, image_h),
        }
    }

    pub fn translate(&self, dx: T, dy: T) -> Self {
        Self {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    pub fn cast<U: Scalar>(&self) -> BBox<U> {
        BBox {
            x1: U::lit(self.x1.as_f64()),
            y1: U::lit(self.y1.as_f64()),
            x2: U::lit(self.x2.as_f64()),
            y2: U::lit(self.y2.as_f64()),
        }
    }

    pub fn iou(&self, other: &Self) -> T {
        iou(self, other)
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(T::zero());
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(T::zero());
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= T::zero() {
        T::zero()
    } else {
        (inter / union).min(T::one())
    }
}

/// Input image size and the down-sampling stride of the output maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub image_w: usize,
    pub image_h: usize,
    pub stride: usize,
}

impl GridSpec {
    pub const DEFAULT_STRIDE: usize = 4;

    pub fn new(image_w: usize, image_h: usize, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid("stride must be positive"));
        }
        if image_w < stride || image_h < stride {
            return Err(Error::invalid(format!(
                "image {image_w}x{image_h} smaller than stride {stride}"
            )));
        }
        Ok(Self {
            image_w,
            image_h,
            stride,
        })
    }

    #[inline]
    pub fn feat_w(&self) -> usize {
        self.image_w / self.stride
    }

    #[inline]
    pub fn feat_h(&self) -> usize {
        self.image_h / self.stride
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            image_w: 1088,
            image_h: 608,
            stride: Self::DEFAULT_STRIDE,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox<f64> {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn iou_cases() {
        let a = b(3.0, 4.0, 10.0, 20.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&b(0.0, 0.0, 1.0, 1.0), &b(5.0, 5.0, 6.0, 6.0)), 0.0);
        let third = iou(&b(0.0, 0.0, 2.0, 2.0), &b(1.0, 0.0, 3.0, 2.0));
        assert!((third - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn iou_degenerate_is_zero() {
        let p = b(1.0, 1.0, 1.0, 1.0);
        assert_eq!(iou(&p, &p), 0.0);
        let line = b(0.0, 0.0, 5.0, 0.0);
        assert_eq!(iou(&line, &b(0.0, 0.0, 5.0, 5.0)), 0.0);
    }

    #[test]
    fn iou_generic_f32() {
        let a = BBox::<f32>::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let c = BBox::<f32>::new(1.0, 0.0, 3.0, 2.0).unwrap();
        assert!((iou(&a, &c) - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_inverted_box() {
        assert!(BBox::new(2.0, 0.0, 1.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn grid_dims() {
        let g = GridSpec::new(1088, 608, 4).unwrap();
        assert_eq!((g.feat_w(), g.feat_h()), (272, 152));
        assert!(GridSpec::new(3, 10, 4).is_err());
    }

    #[test]
    fn tensor_indexing() {
        let t = Tensor2D::from_vec(2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(t.get(1, 2), 5.0);
        assert_eq!(t.index(1, 0), 3);
        assert!(Tensor2D::<f64>::from_vec(2, 3, vec![0.0; 5]).is_err());
        assert!(Tensor2D::<f64>::zeros(0, 3).is_err());

        let v = Tensor3D::from_vec(2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(v.get(1, 0, 1), 4.0);
        assert_eq!(v.column(0, 0), vec![1.0, 3.0]);
    }

    #[test]
    fn tlwh_roundtrip() {
        let bb = BBox::from_tlwh(100.0, 40.0, 40.0, 80.0).unwrap();
        assert_eq!(bb, b(100.0, 40.0, 140.0, 120.0));
        assert_eq!(bb.to_tlwh(), [100.0, 40.0, 40.0, 80.0]);
    }
}
