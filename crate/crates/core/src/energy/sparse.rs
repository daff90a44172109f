use nalgebra::Vector3;

use super::{sqrt_weight, ResidualBlock, ResidualTerm, TermKind};
use crate::error::{Error, Result};
use crate::graph::{DeformationGraph, SkinningWeights, WarpCache};
use crate::scalar::Real;

/// Annotated 3D correspondence between source and target (m).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparseMatch<T: Real> {
    pub s: Vector3<T>,
    pub t: Vector3<T>,
}

impl<T: Real> SparseMatch<T> {
    pub fn new(s: Vector3<T>, t: Vector3<T>) -> Result<Self> {
        let m = Self { s, t };
        if !s.iter().chain(t.iter()).all(|x| x.is_finite_real()) {
            return Err(Error::invalid("sparse match must be finite"));
        }
        Ok(m)
    }
}

/// `√λ_sparse (W(s_i) - t_i)` with skinning fixed at `s_i`.
pub struct SparseTerm<T: Real> {
    matches: Vec<SparseMatch<T>>,
    weights: Vec<SkinningWeights<T>>,
    lambda: f64,
}

impl<T: Real> SparseTerm<T> {
    pub fn new(graph: &DeformationGraph<T>, matches: Vec<SparseMatch<T>>, lambda_sparse: f64, influences: usize) -> Self {
        let sources: Vec<_> = matches.iter().map(|m| m.s).collect();
        let weights = graph.skinning_many(&sources, influences);
        Self {
            matches,
            weights,
            lambda: lambda_sparse,
        }
    }
}

impl<T: Real> ResidualTerm<T> for SparseTerm<T> {
    fn name(&self) -> &'static str {
        "sparse"
    }

    fn is_active(&self) -> bool {
        self.lambda > 0.0 && !self.matches.is_empty()
    }

    fn evaluate(&self, graph: &DeformationGraph<T>, cache: &WarpCache<T>) -> Vec<ResidualBlock<T>> {
        let w: T = sqrt_weight(self.lambda);
        self.matches
            .iter()
            .zip(&self.weights)
            .enumerate()
            .map(|(source, (m, sw))| {
                let (warped, jac) = graph.warp_with_jacobian(cache, sw, &m.s);
                ResidualBlock {
                    kind: TermKind::Sparse,
                    source,
                    dim: 3,
                    residual: (warped - m.t) * w,
                    jacobian: jac.into_iter().map(|(n, j)| (n, j * w)).collect(),
                    weight: w,
                    tag: 0,
                    sample_at: None,
                }
            })
            .collect()
    }
}
