use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major 2D grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<E> {
    width: usize,
    height: usize,
    data: Vec<E>,
}

impl<E: Clone> Image<E> {
    pub fn filled(width: usize, height: usize, value: E) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<E> Image<E> {
    pub fn from_vec(width: usize, height: usize, data: Vec<E>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: format!("{} elements", width * height),
                actual: format!("{} elements", data.len()),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> E) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> &E {
        &self.data[v * self.width + u]
    }

    #[inline]
    pub fn get_mut(&mut self, u: usize, v: usize) -> &mut E {
        &mut self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: E) {
        self.data[v * self.width + u] = value;
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<E> {
        self.data
    }

    pub fn same_dims<F>(&self, other: &Image<F>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map<F>(&self, f: impl FnMut(&E) -> F) -> Image<F> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Iterates `(u, v, &value)` in row-major order.
    pub fn enumerate(&self) -> impl Iterator<Item = (usize, usize, &E)> {
        let w = self.width;
        self.data.iter().enumerate().map(move |(i, e)| (i % w, i / w, e))
    }
}

/// Value of a bilinear lookup and its derivative with respect to (u, v).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample<T: Real> {
    pub value: T,
    pub grad: Vector2<T>,
}

/// Coordinates this far (px) past the border still sample the border, so
/// reprojection roundoff does not drop edge pixels.
const BORDER_TOLERANCE: f64 = 1e-4;

impl<T: Real> Image<T> {
    /// Bilinear interpolation with pixel centers on integer coordinates.
    /// Valid on `[0, W-1] x [0, H-1]`.
    pub fn bilinear(&self, p: &Vector2<T>) -> Result<Sample<T>> {
        let (u, v) = (p.x, p.y);
        let max_u = T::from_usize_lossy(self.width.saturating_sub(1));
        let max_v = T::from_usize_lossy(self.height.saturating_sub(1));
        let tol = T::lit(BORDER_TOLERANCE);
        if !(u >= -tol && v >= -tol && u <= max_u + tol && v <= max_v + tol) {
            return Err(Error::OutOfBounds {
                u: u.to_f64_lossy(),
                v: v.to_f64_lossy(),
                width: self.width,
                height: self.height,
            });
        }
        Ok(self.bilinear_unchecked(u.clamp(T::zero(), max_u), v.clamp(T::zero(), max_v)))
    }

    /// Bilinear lookup after clamping the coordinate into the image; the
    /// derivative along a clamped axis is zero.
    pub fn bilinear_clamped(&self, p: &Vector2<T>) -> Sample<T> {
        let max_u = T::from_usize_lossy(self.width.saturating_sub(1));
        let max_v = T::from_usize_lossy(self.height.saturating_sub(1));
        let cu = p.x.clamp(T::zero(), max_u);
        let cv = p.y.clamp(T::zero(), max_v);
        let mut s = self.bilinear_unchecked(cu, cv);
        if cu != p.x {
            s.grad.x = T::zero();
        }
        if cv != p.y {
            s.grad.y = T::zero();
        }
        s
    }

    fn bilinear_unchecked(&self, u: T, v: T) -> Sample<T> {
        let (u0, fu) = split_coord(u, self.width);
        let (v0, fv) = split_coord(v, self.height);
        let u1 = (u0 + 1).min(self.width - 1);
        let v1 = (v0 + 1).min(self.height - 1);
        let i00 = *self.get(u0, v0);
        let i10 = *self.get(u1, v0);
        let i01 = *self.get(u0, v1);
        let i11 = *self.get(u1, v1);
        let one = T::one();
        let value = (one - fu) * (one - fv) * i00
            + fu * (one - fv) * i10
            + (one - fu) * fv * i01
            + fu * fv * i11;
        let du = (one - fv) * (i10 - i00) + fv * (i11 - i01);
        let dv = (one - fu) * (i01 - i00) + fu * (i11 - i10);
        Sample {
            value,
            grad: Vector2::new(du, dv),
        }
    }

    pub fn max_value(&self) -> T {
        self.data
            .iter()
            .copied()
            .fold(T::min_value().unwrap_or(-T::one()), |a, b| a.max(b))
    }
}

/// Splits a continuous coordinate into the lower cell index and fraction,
/// mapping the far edge into the last cell with fraction 1.
fn split_coord<T: Real>(x: T, len: usize) -> (usize, T) {
    if len < 2 {
        return (0, T::zero());
    }
    let f = x.floor();
    let mut i = f.to_f64_lossy() as usize;
    let mut frac = x - f;
    if i >= len - 1 {
        i = len - 2;
        frac = x - T::from_usize_lossy(i);
    }
    (i, frac)
}

/// Per-pixel partial derivatives of a scalar image.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField<T> {
    pub du: Image<T>,
    pub dv: Image<T>,
}

/// Central differences in the interior, one-sided differences at the border.
pub fn image_gradient<T: Real>(img: &Image<T>) -> Result<GradientField<T>> {
    let (w, h) = img.dims();
    if w < 3 || h < 3 {
        return Err(Error::invalid(format!(
            "gradient needs at least 3x3 pixels, got {w}x{h}"
        )));
    }
    let half = T::lit(0.5);
    let du = Image::from_fn(w, h, |u, v| {
        if u == 0 {
            *img.get(1, v) - *img.get(0, v)
        } else if u == w - 1 {
            *img.get(w - 1, v) - *img.get(w - 2, v)
        } else {
            (*img.get(u + 1, v) - *img.get(u - 1, v)) * half
        }
    });
    let dv = Image::from_fn(w, h, |u, v| {
        if v == 0 {
            *img.get(u, 1) - *img.get(u, 0)
        } else if v == h - 1 {
            *img.get(u, h - 1) - *img.get(u, h - 2)
        } else {
            (*img.get(u, v + 1) - *img.get(u, v - 1)) * half
        }
    });
    Ok(GradientField { du, dv })
}

/// Bilinear resampling to a new size, aligning pixel areas (not corners).
pub fn resample<T: Real>(img: &Image<T>, width: usize, height: usize) -> Image<T> {
    if img.dims() == (width, height) {
        return img.clone();
    }
    let sx = T::from_usize_lossy(img.width()) / T::from_usize_lossy(width);
    let sy = T::from_usize_lossy(img.height()) / T::from_usize_lossy(height);
    let half = T::lit(0.5);
    Image::from_fn(width, height, |u, v| {
        let p = Vector2::new(
            (T::from_usize_lossy(u) + half) * sx - half,
            (T::from_usize_lossy(v) + half) * sy - half,
        );
        img.bilinear_clamped(&p).value
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gradient_examples() {
        let c = Image::filled(5, 4, 2.0f64);
        let g = image_gradient(&c).unwrap();
        assert!(g.du.data().iter().chain(g.dv.data()).all(|&x| x == 0.0));

        let ramp = Image::from_fn(6, 5, |u, _| u as f64);
        let g = image_gradient(&ramp).unwrap();
        for v in 0..5 {
            for u in 0..6 {
                assert_eq!(*g.du.get(u, v), 1.0);
                assert_eq!(*g.dv.get(u, v), 0.0);
            }
        }

        let sq = Image::from_fn(6, 5, |u, _| (u * u) as f64);
        let g = image_gradient(&sq).unwrap();
        assert_eq!(*g.du.get(3, 2), 6.0);
        assert!(image_gradient(&Image::filled(2, 5, 0.0f64)).is_err());
    }

    #[test]
    fn bilinear_examples() {
        let img = Image::from_vec(2, 2, vec![0.0f64, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(img.bilinear(&Vector2::new(1.0, 0.0)).unwrap().value, 1.0);
        assert_eq!(img.bilinear(&Vector2::new(0.5, 0.5)).unwrap().value, 0.5);
        assert!(img.bilinear(&Vector2::new(1.2, 0.0)).is_err());
        assert!(img.bilinear(&Vector2::new(-0.1, 0.0)).is_err());

        let img = Image::from_fn(4, 3, |u, v| (u * 7 + v * 3) as f64 * 0.1 + ((u * v) % 2) as f64);
        let p = Vector2::new(1.3, 0.6);
        // brute-force weighted sum over the four neighbours
        let (fu, fv) = (0.3, 0.6);
        let expect = (1.0 - fu) * (1.0 - fv) * img.get(1, 0)
            + fu * (1.0 - fv) * img.get(2, 0)
            + (1.0 - fu) * fv * img.get(1, 1)
            + fu * fv * img.get(2, 1);
        assert!((img.bilinear(&p).unwrap().value - expect).abs() < 1e-12);
    }

    #[test]
    fn clamped_sampling_zeroes_clamped_axis() {
        let img = Image::from_fn(4, 4, |u, v| (u + 2 * v) as f64);
        let s = img.bilinear_clamped(&Vector2::new(-3.0, 1.5));
        assert_eq!(s.value, 3.0);
        assert_eq!(s.grad, Vector2::new(0.0, 2.0));
    }

    proptest! {
        #[test]
        fn bilinear_derivative_matches_finite_differences(u in 0.6f64..8.4, v in 0.6f64..6.4) {
            let img = Image::from_fn(10, 8, |x, y| ((x as f64) * 0.4).sin() + ((y as f64) * 0.3).cos());
            // stay away from cell boundaries where the derivative jumps
            prop_assume!((u.fract() - 0.5).abs() < 0.49 && (v.fract() - 0.5).abs() < 0.49);
            let h = 1e-3;
            let s = img.bilinear(&Vector2::new(u, v)).unwrap();
            let fu = (img.bilinear(&Vector2::new(u + h, v)).unwrap().value
                - img.bilinear(&Vector2::new(u - h, v)).unwrap().value) / (2.0 * h);
            let fv = (img.bilinear(&Vector2::new(u, v + h)).unwrap().value
                - img.bilinear(&Vector2::new(u, v - h)).unwrap().value) / (2.0 * h);
            prop_assert!((fu - s.grad.x).abs() < 1e-4);
            prop_assert!((fv - s.grad.y).abs() < 1e-4);
        }
    }
}
