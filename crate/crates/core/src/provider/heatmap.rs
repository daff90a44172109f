use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::geometry::{Image, Sample};
use crate::scalar::Real;

/// A `width x height` map that is zero outside a rectangular window.
///
/// Oracle Gaussians and cropped file heatmaps occupy a small part of the
/// frame, so only the window is stored.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap<T> {
    width: usize,
    height: usize,
    /// Top-left pixel of the stored window.
    offset: (usize, usize),
    window: Image<T>,
}

impl<T: Real> Heatmap<T> {
    pub fn dense(image: Image<T>) -> Self {
        Self {
            width: image.width(),
            height: image.height(),
            offset: (0, 0),
            window: image,
        }
    }

    /// Map of the given size with `window` placed at `offset`.
    pub fn windowed(width: usize, height: usize, offset: (usize, usize), window: Image<T>) -> Result<Self> {
        if offset.0 + window.width() > width || offset.1 + window.height() > height {
            return Err(Error::ShapeMismatch {
                expected: format!("window inside {width}x{height}"),
                actual: format!(
                    "{}x{} at ({}, {})",
                    window.width(),
                    window.height(),
                    offset.0,
                    offset.1
                ),
            });
        }
        Ok(Self {
            width,
            height,
            offset,
            window,
        })
    }

    /// All-zero map.
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            offset: (0, 0),
            window: Image::filled(0, 0, T::zero()),
        }
    }

    /// Crops a dense map to the bounding box of its nonzero values.
    pub fn cropped(image: &Image<T>) -> Self {
        let (w, h) = image.dims();
        let (mut u0, mut v0, mut u1, mut v1) = (w, h, 0, 0);
        for (u, v, x) in image.enumerate() {
            if *x != T::zero() {
                u0 = u0.min(u);
                v0 = v0.min(v);
                u1 = u1.max(u);
                v1 = v1.max(v);
            }
        }
        if u0 > u1 {
            return Self::zeros(w, h);
        }
        let window = Image::from_fn(u1 - u0 + 1, v1 - v0 + 1, |u, v| *image.get(u0 + u, v0 + v));
        Self {
            width: w,
            height: h,
            offset: (u0, v0),
            window,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn offset(&self) -> (usize, usize) {
        self.offset
    }

    pub fn window(&self) -> &Image<T> {
        &self.window
    }

    pub fn get(&self, u: usize, v: usize) -> T {
        let (ou, ov) = self.offset;
        if u >= ou && v >= ov && u - ou < self.window.width() && v - ov < self.window.height() {
            *self.window.get(u - ou, v - ov)
        } else {
            T::zero()
        }
    }

    pub fn to_image(&self) -> Image<T> {
        Image::from_fn(self.width, self.height, |u, v| self.get(u, v))
    }

    pub fn map(&self, f: impl FnMut(&T) -> T) -> Self {
        Self {
            width: self.width,
            height: self.height,
            offset: self.offset,
            window: self.window.map(f),
        }
    }

    /// Largest value, zero for an empty window.
    pub fn max_value(&self) -> T {
        self.window.data().iter().fold(T::zero(), |a, &b| a.max(b))
    }

    /// Argmax with ties broken toward the smallest row-major index.
    pub fn argmax(&self) -> (usize, usize) {
        let max = self.max_value();
        if !(max > T::zero()) {
            return (0, 0);
        }
        // window rows in increasing v, then u: increasing row-major order
        for (u, v, x) in self.window.enumerate() {
            if *x == max {
                return (u + self.offset.0, v + self.offset.1);
            }
        }
        unreachable!("maximum is attained")
    }

    /// Bilinear sample with pixel centers on integer coordinates, valid on
    /// `[0, W-1] x [0, H-1]`.
    pub fn bilinear(&self, p: &Vector2<T>) -> Result<Sample<T>> {
        let max_u = T::from_usize_lossy(self.width.saturating_sub(1));
        let max_v = T::from_usize_lossy(self.height.saturating_sub(1));
        if !(p.x >= T::zero() && p.y >= T::zero() && p.x <= max_u && p.y <= max_v) || self.width < 2 || self.height < 2 {
            return Err(Error::OutOfBounds {
                u: p.x.to_f64_lossy(),
                v: p.y.to_f64_lossy(),
                width: self.width,
                height: self.height,
            });
        }
        let u0 = (p.x.floor().to_f64_lossy() as usize).min(self.width - 2);
        let v0 = (p.y.floor().to_f64_lossy() as usize).min(self.height - 2);
        let fu = p.x - T::from_usize_lossy(u0);
        let fv = p.y - T::from_usize_lossy(v0);
        let i00 = self.get(u0, v0);
        let i10 = self.get(u0 + 1, v0);
        let i01 = self.get(u0, v0 + 1);
        let i11 = self.get(u0 + 1, v0 + 1);
        let one = T::one();
        Ok(Sample {
            value: (one - fu) * (one - fv) * i00 + fu * (one - fv) * i10 + (one - fu) * fv * i01 + fu * fv * i11,
            grad: Vector2::new(
                (one - fv) * (i10 - i00) + fv * (i11 - i01),
                (one - fu) * (i01 - i00) + fu * (i11 - i10),
            ),
        })
    }
}
