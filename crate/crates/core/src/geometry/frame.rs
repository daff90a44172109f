use nalgebra::Vector3;

use super::camera::CameraIntrinsics;
use super::image::Image;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Luma weights used for grayscale conversion.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Registered color + metric depth pair. Depth 0 marks an invalid pixel.
#[derive(Clone, Debug)]
pub struct RgbdFrame<T: Real> {
    pub color: Image<[T; 3]>,
    pub depth: Image<T>,
    pub intrinsics: CameraIntrinsics<T>,
    pub mask: Option<Image<bool>>,
}

impl<T: Real> RgbdFrame<T> {
    pub fn new(
        color: Image<[T; 3]>,
        depth: Image<T>,
        intrinsics: CameraIntrinsics<T>,
        mask: Option<Image<bool>>,
    ) -> Result<Self> {
        let frame = Self {
            color,
            depth,
            intrinsics,
            mask,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let dims = (self.intrinsics.width, self.intrinsics.height);
        if self.depth.dims() != dims {
            return Err(Error::ShapeMismatch {
                expected: format!("{dims:?}"),
                actual: format!("{:?}", self.depth.dims()),
            });
        }
        if !self.color.same_dims(&self.depth) {
            return Err(Error::ShapeMismatch {
                expected: format!("{dims:?}"),
                actual: format!("color {:?}", self.color.dims()),
            });
        }
        if let Some(m) = &self.mask {
            if !m.same_dims(&self.depth) {
                return Err(Error::ShapeMismatch {
                    expected: format!("{dims:?}"),
                    actual: format!("mask {:?}", m.dims()),
                });
            }
        }
        if self
            .depth
            .data()
            .iter()
            .any(|&d| !(d.is_finite_real() && d >= T::zero()))
        {
            return Err(Error::invalid("depth values must be finite and >= 0"));
        }
        Ok(())
    }

    /// Frame with constant gray color, for depth-only data.
    pub fn from_depth(depth: Image<T>, intrinsics: CameraIntrinsics<T>) -> Result<Self> {
        let half = T::lit(0.5);
        let color = Image::filled(depth.width(), depth.height(), [half; 3]);
        Self::new(color, depth, intrinsics, None)
    }

    pub fn width(&self) -> usize {
        self.depth.width()
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }

    /// Metric depth at a pixel when valid.
    #[inline]
    pub fn depth_at(&self, u: usize, v: usize) -> Option<T> {
        let d = *self.depth.get(u, v);
        (d > T::zero()).then_some(d)
    }

    #[inline]
    pub fn in_mask(&self, u: usize, v: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| *m.get(u, v))
    }

    pub fn point_at(&self, u: usize, v: usize) -> Option<Vector3<T>> {
        self.depth_at(u, v)
            .and_then(|d| self.intrinsics.backproject(u, v, d).ok())
    }

    pub fn grayscale(&self) -> Image<T> {
        let w = LUMA.map(T::lit);
        self.color.map(|c| w[0] * c[0] + w[1] * c[1] + w[2] * c[2])
    }

    pub fn with_mask(mut self, mask: Image<bool>) -> Result<Self> {
        self.mask = Some(mask);
        self.validate()?;
        Ok(self)
    }

    /// Per-pixel unit normals estimated from neighbouring depth samples,
    /// oriented toward the camera.
    pub fn normal_map(&self) -> Image<Option<Vector3<T>>> {
        let (w, h) = self.depth.dims();
        Image::from_fn(w, h, |u, v| {
            let p = self.point_at(u, v)?;
            let pick = |a: Option<Vector3<T>>, b: Option<Vector3<T>>| -> Option<Vector3<T>> {
                match (a, b) {
                    (Some(a), Some(b)) => Some(a - b),
                    (Some(a), None) => Some(a - p),
                    (None, Some(b)) => Some(p - b),
                    _ => None,
                }
            };
            let right = (u + 1 < w).then(|| self.point_at(u + 1, v)).flatten();
            let left = (u > 0).then(|| self.point_at(u - 1, v)).flatten();
            let down = (v + 1 < h).then(|| self.point_at(u, v + 1)).flatten();
            let up = (v > 0).then(|| self.point_at(u, v - 1)).flatten();
            let du = pick(right, left)?;
            let dv = pick(down, up)?;
            let n = dv.cross(&du);
            let len = n.norm();
            if !(len > T::zero()) {
                return None;
            }
            let n = n / len;
            Some(if n.dot(&p) > T::zero() { -n } else { n })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_normals_face_camera() {
        let k = CameraIntrinsics::new(100.0, 100.0, 4.0, 4.0, 8, 8).unwrap();
        let f = RgbdFrame::from_depth(Image::filled(8, 8, 1.0f64), k).unwrap();
        let n = f.normal_map();
        for (_, _, v) in n.enumerate() {
            let v = v.unwrap();
            assert!((v - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn validation() {
        let k = CameraIntrinsics::new(100.0, 100.0, 4.0, 4.0, 8, 8).unwrap();
        assert!(RgbdFrame::from_depth(Image::filled(8, 8, -1.0f64), k).is_err());
        assert!(RgbdFrame::from_depth(Image::filled(8, 7, 1.0f64), k).is_err());
        let f = RgbdFrame::from_depth(Image::filled(8, 8, 1.0f64), k).unwrap();
        assert!(f.with_mask(Image::filled(4, 4, true)).is_err());
    }

    #[test]
    fn grayscale_uses_luma() {
        let k = CameraIntrinsics::new(100.0, 100.0, 1.0, 1.0, 3, 3).unwrap();
        let color = Image::filled(3, 3, [1.0f64, 0.0, 0.0]);
        let f = RgbdFrame::new(color, Image::filled(3, 3, 1.0), k, None).unwrap();
        assert!((f.grayscale().get(1, 1) - 0.299).abs() < 1e-12);
    }
}
