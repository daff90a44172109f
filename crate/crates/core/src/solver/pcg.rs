use nalgebra::{DMatrix, DVector};

use super::system::LinearSystem;
use crate::scalar::Real;

/// Symmetric positive definite operator with a cheap diagonal.
pub trait SpdOperator<T: Real> {
    fn dim(&self) -> usize;
    fn apply(&self, x: &DVector<T>) -> DVector<T>;
    fn diagonal(&self) -> DVector<T>;
}

/// `JᵀJ + εI` of a linear system.
pub struct NormalOperator<'a, T: Real> {
    pub system: &'a LinearSystem<T>,
    pub damping: T,
}

impl<'a, T: Real> SpdOperator<T> for NormalOperator<'a, T> {
    fn dim(&self) -> usize {
        self.system.dim()
    }

    fn apply(&self, x: &DVector<T>) -> DVector<T> {
        self.system.apply_normal_matrix(x, self.damping)
    }

    fn diagonal(&self) -> DVector<T> {
        self.system.diagonal().add_scalar(self.damping)
    }
}

impl<T: Real> SpdOperator<T> for DMatrix<T> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &DVector<T>) -> DVector<T> {
        self * x
    }

    fn diagonal(&self) -> DVector<T> {
        DMatrix::diagonal(self)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcgOutcome<T: Real> {
    pub x: DVector<T>,
    pub iterations: usize,
    /// `‖b - A x‖ / ‖b‖` at exit.
    pub relative_residual: T,
    /// Set when a non-positive curvature or non-finite value stopped the iteration.
    pub breakdown: bool,
}

/// Jacobi-preconditioned conjugate gradient for `A x = b`, starting at zero.
pub fn pcg_solve<T: Real, A: SpdOperator<T> + ?Sized>(
    a: &A,
    b: &DVector<T>,
    max_iterations: usize,
    tolerance: T,
) -> PcgOutcome<T> {
    let n = a.dim();
    assert_eq!(b.len(), n, "rhs size");
    let b_norm = b.norm();
    let mut x = DVector::zeros(n);
    if b_norm == T::zero() {
        return PcgOutcome {
            x,
            iterations: 0,
            relative_residual: T::zero(),
            breakdown: false,
        };
    }
    let inv_diag = a
        .diagonal()
        .map(|d| if d > T::zero() { T::one() / d } else { T::one() });
    let mut r = b.clone();
    let mut z = r.component_mul(&inv_diag);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let mut iterations = 0;
    let mut breakdown = false;
    while iterations < max_iterations {
        if r.norm() <= tolerance * b_norm {
            break;
        }
        let ap = a.apply(&p);
        let curvature = p.dot(&ap);
        if !(curvature > T::zero()) || !curvature.is_finite_real() {
            breakdown = true;
            break;
        }
        let alpha = rz / curvature;
        x.axpy(alpha, &p, T::one());
        r.axpy(-alpha, &ap, T::one());
        iterations += 1;
        z = r.component_mul(&inv_diag);
        let rz_next = r.dot(&z);
        if !rz_next.is_finite_real() {
            breakdown = true;
            break;
        }
        let beta = rz_next / rz;
        rz = rz_next;
        p = &z + &p * beta;
    }
    PcgOutcome {
        relative_residual: r.norm() / b_norm,
        x,
        iterations,
        breakdown,
    }
}
