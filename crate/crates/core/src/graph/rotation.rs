//! Axis-angle exponential map and its derivatives.

use nalgebra::{Matrix3, Vector3};

use crate::scalar::Real;

/// Below this angle the trigonometric coefficients switch to their series.
const SERIES_THRESHOLD: f64 = 1e-2;

/// Skew-symmetric cross-product matrix `[v]x`.
#[inline]
pub fn skew<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    #[rustfmt::skip]
    let m = Matrix3::new(
        z, -v.z, v.y,
        v.z, z, -v.x,
        -v.y, v.x, z,
    );
    m
}

/// Coefficients `(sin a / a, (1 - cos a) / a^2, (a - sin a) / a^3)`.
fn coefficients<T: Real>(theta: &Vector3<T>) -> (T, T, T) {
    let a2 = theta.norm_squared();
    let a = a2.sqrt();
    if a < T::lit(SERIES_THRESHOLD) {
        let a4 = a2 * a2;
        (
            T::one() - a2 / T::lit(6.0) + a4 / T::lit(120.0),
            T::lit(0.5) - a2 / T::lit(24.0) + a4 / T::lit(720.0),
            T::lit(1.0 / 6.0) - a2 / T::lit(120.0) + a4 / T::lit(5040.0),
        )
    } else {
        let (s, c) = a.sin_cos();
        (s / a, (T::one() - c) / a2, (a - s) / (a2 * a))
    }
}

/// Rodrigues' formula `R = I + A [θ]x + B [θ]x^2`.
pub fn rotation_exp<T: Real>(theta: &Vector3<T>) -> Matrix3<T> {
    let (a, b, _) = coefficients(theta);
    let k = skew(theta);
    Matrix3::identity() + k * a + k * k * b
}

/// Right Jacobian of SO(3): `d exp(θ + δ) = exp(θ) exp(J_r δ)` to first order.
pub fn right_jacobian<T: Real>(theta: &Vector3<T>) -> Matrix3<T> {
    let (_, b, c) = coefficients(theta);
    let k = skew(theta);
    Matrix3::identity() - k * b + k * k * c
}

/// Rotation plus the partial derivatives `dR/dθ_k`, k = 0..3.
pub fn rotation_exp_derivative<T: Real>(theta: &Vector3<T>) -> (Matrix3<T>, [Matrix3<T>; 3]) {
    let r = rotation_exp(theta);
    let jr = right_jacobian(theta);
    let d = [0, 1, 2].map(|k| r * skew(&jr.column(k).into_owned()));
    (r, d)
}

/// `d(R(θ) v)/dθ = -R [v]x J_r(θ)`.
#[inline]
pub fn rotated_vector_jacobian<T: Real>(
    r: &Matrix3<T>,
    jr: &Matrix3<T>,
    v: &Vector3<T>,
) -> Matrix3<T> {
    -(r * skew(v) * jr)
}

/// Wraps the rotation angle into `[-π, π]` keeping the same rotation.
pub fn renormalize<T: Real>(theta: &Vector3<T>) -> Vector3<T> {
    let a = theta.norm();
    let pi = T::pi();
    if a <= pi {
        return *theta;
    }
    let two_pi = pi + pi;
    let wrapped = a - two_pi * (a / two_pi).round();
    theta * (wrapped / a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Truncated power series of the matrix exponential.
    fn expm_series(theta: &Vector3<f64>) -> Matrix3<f64> {
        let k = skew(theta);
        let mut term = Matrix3::identity();
        let mut sum = Matrix3::identity();
        for n in 1..40 {
            term = term * k / n as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn examples() {
        assert_eq!(rotation_exp(&Vector3::<f64>::zeros()), Matrix3::identity());
        let r = rotation_exp(&Vector3::new(0.0, 0.0, PI));
        let expect = Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0));
        assert!((r - expect).norm() < 1e-12);
        let r = rotation_exp(&Vector3::new(0.0, 0.0, PI / 2.0));
        assert!((r * Vector3::new(1.0, 0.0, 0.0) - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn matches_series_at_norm_point_three() {
        let theta: Vector3<f64> = Vector3::new(0.1, -0.2, 0.2);
        assert!((theta.norm() - 0.3).abs() < 1e-12);
        let r = rotation_exp(&theta);
        assert!((r - expm_series(&theta)).norm() < 1e-12);
        assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn renormalize_keeps_rotation() {
        let theta = Vector3::new(0.0, 4.0, 3.0);
        let w = renormalize(&theta);
        assert!(w.norm() <= PI);
        assert!((rotation_exp(&theta) - rotation_exp(&w)).norm() < 1e-12);
        let big = Vector3::new(7.5, 0.0, 0.0);
        let w = renormalize(&big);
        assert!(w.norm() < PI);
        assert!((rotation_exp(&big) - rotation_exp(&w)).norm() < 1e-12);
    }

    fn theta_strategy() -> impl Strategy<Value = Vector3<f64>> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, 0.0f64..PI).prop_map(|(x, y, z, a)| {
            let v = Vector3::new(x, y, z);
            if v.norm() < 1e-6 {
                Vector3::new(a, 0.0, 0.0)
            } else {
                v.normalize() * a
            }
        })
    }

    proptest! {
        #[test]
        fn orthonormal(theta in theta_strategy()) {
            let r = rotation_exp(&theta);
            prop_assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn derivative_matches_central_differences(theta in theta_strategy(), tiny in prop::bool::ANY) {
            let theta = if tiny { theta * 1e-4 } else { theta };
            let (_, d) = rotation_exp_derivative(&theta);
            let h = 1e-6;
            for k in 0..3 {
                let mut a = theta;
                let mut b = theta;
                a[k] += h;
                b[k] -= h;
                let fd = (rotation_exp(&a) - rotation_exp(&b)) / (2.0 * h);
                let err = (fd - d[k]).norm();
                prop_assert!(err <= 1e-5 * fd.norm().max(1.0), "k={} err={}", k, err);
            }
        }
    }
}
