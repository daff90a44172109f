use nalgebra::{Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Pinhole intrinsics. Right-handed camera frame, +z into the scene,
/// pixel (0, 0) at the top-left with pixel centers on integer coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let zero = T::zero();
        if !(self.fx > zero && self.fy > zero) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be non-zero"));
        }
        if !(self.cx >= zero && self.cx < T::from_usize_lossy(self.width)) {
            return Err(Error::invalid("cx outside image"));
        }
        if !(self.cy >= zero && self.cy < T::from_usize_lossy(self.height)) {
            return Err(Error::invalid("cy outside image"));
        }
        Ok(())
    }

    /// Perspective projection to continuous pixel coordinates.
    pub fn project(&self, p: &Vector3<T>) -> Result<Vector2<T>> {
        if !(p.z > T::zero()) {
            return Err(Error::Domain(format!(
                "cannot project point with depth {:?}",
                p.z
            )));
        }
        Ok(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Projection together with its 2x3 Jacobian with respect to `p`.
    pub fn project_with_jacobian(&self, p: &Vector3<T>) -> Option<(Vector2<T>, Matrix2x3<T>)> {
        if !(p.z > T::zero()) {
            return None;
        }
        let iz = T::one() / p.z;
        let iz2 = iz * iz;
        let uv = Vector2::new(
            self.fx * p.x * iz + self.cx,
            self.fy * p.y * iz + self.cy,
        );
        #[rustfmt::skip]
        let jac = Matrix2x3::new(
            self.fx * iz, T::zero(), -self.fx * p.x * iz2,
            T::zero(), self.fy * iz, -self.fy * p.y * iz2,
        );
        Some((uv, jac))
    }

    /// Lifts pixel `(u, v)` at metric depth `d` into camera space.
    pub fn backproject(&self, u: usize, v: usize, d: T) -> Result<Vector3<T>> {
        self.backproject_continuous(
            &Vector2::new(T::from_usize_lossy(u), T::from_usize_lossy(v)),
            d,
        )
    }

    pub fn backproject_continuous(&self, px: &Vector2<T>, d: T) -> Result<Vector3<T>> {
        if !(d > T::zero()) {
            return Err(Error::Domain(format!("invalid depth {:?}", d)));
        }
        Ok(Vector3::new(
            (px.x - self.cx) * d / self.fx,
            (px.y - self.cy) * d / self.fy,
            d,
        ))
    }

    /// Nearest integer pixel of a continuous coordinate, if inside the image.
    pub fn round_pixel(&self, px: &Vector2<T>) -> Option<(usize, usize)> {
        let u = px.x.to_f64_lossy().round();
        let v = px.y.to_f64_lossy().round();
        if u >= 0.0 && v >= 0.0 && (u as usize) < self.width && (v as usize) < self.height {
            Some((u as usize, v as usize))
        } else {
            None
        }
    }

    /// Pixel hit by the 3D point, if it is in front of the camera and inside the image.
    pub fn pixel_of(&self, p: &Vector3<T>) -> Option<(usize, usize)> {
        self.project(p).ok().and_then(|px| self.round_pixel(&px))
    }

    /// Scales the intrinsics to a resampled image size.
    pub fn scaled(&self, width: usize, height: usize) -> Self {
        let sx = T::from_usize_lossy(width) / T::from_usize_lossy(self.width);
        let sy = T::from_usize_lossy(height) / T::from_usize_lossy(self.height);
        let half = T::lit(0.5);
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + half) * sx - half,
            cy: (self.cy + half) * sy - half,
            width,
            height,
        }
    }

    pub fn cast<U: Real>(&self) -> CameraIntrinsics<U> {
        CameraIntrinsics {
            fx: U::lit(self.fx.to_f64_lossy()),
            fy: U::lit(self.fy.to_f64_lossy()),
            cx: U::lit(self.cx.to_f64_lossy()),
            cy: U::lit(self.cy.to_f64_lossy()),
            width: self.width,
            height: self.height,
        }
    }
}
