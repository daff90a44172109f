use nalgebra::{Matrix3, Matrix3x6, Vector3};

use super::{sqrt_weight, ResidualBlock, ResidualTerm, TermKind};
use crate::geometry::{CameraIntrinsics, Image};
use crate::provider::Heatmap;
use crate::graph::{DeformationGraph, WarpCache};
use crate::scalar::Real;

/// Correspondences with a lower visibility score are discarded.
pub const VISIBILITY_MIN: f64 = 0.5;

/// Correspondences whose predicted depth differs from the measured depth at
/// the heatmap peak by more than this (m) are discarded.
pub const DEPTH_GAP_MAX: f64 = 0.15;

/// Absorbs decimal rounding when comparing the depth gap against its bound.
const DEPTH_GAP_SLACK: f64 = 1e-9;

/// A heatmap correspondence for one graph node.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnedConstraint<T: Real> {
    pub node: usize,
    /// Target-frame heatmap normalized to a maximum of one.
    pub heatmap: Heatmap<T>,
    /// Heatmap argmax pixel.
    pub peak: (usize, usize),
    /// Target point back-projected at the peak.
    pub point: Vector3<T>,
    pub visibility: T,
    pub predicted_depth: T,
}

/// Keeps constraints with visibility ≥ 0.5 whose peak pixel has a valid
/// depth within 0.15 m of the predicted depth.
pub fn filter_learned<T: Real>(
    constraints: Vec<LearnedConstraint<T>>,
    depth: &Image<T>,
) -> Vec<LearnedConstraint<T>> {
    constraints
        .into_iter()
        .filter(|c| {
            if !(c.visibility >= T::lit(VISIBILITY_MIN)) {
                return false;
            }
            let (u, v) = c.peak;
            if u >= depth.width() || v >= depth.height() {
                return false;
            }
            let d = *depth.get(u, v);
            if !(d > T::zero()) {
                return false;
            }
            let gap = (c.predicted_depth - d).abs().to_f64_lossy();
            gap <= DEPTH_GAP_MAX + DEPTH_GAP_SLACK
        })
        .collect()
}

/// Heatmap alignment `1 - H_i(π(g_i + t_i))` plus point alignment
/// `√λ_point (g_i + t_i - p_i)`, both scaled by `√λ_learned`.
pub struct LearnedTerm<T: Real> {
    constraints: Vec<LearnedConstraint<T>>,
    intrinsics: CameraIntrinsics<T>,
    lambda_learned: f64,
    lambda_point: f64,
}

impl<T: Real> LearnedTerm<T> {
    pub fn new(
        constraints: Vec<LearnedConstraint<T>>,
        intrinsics: CameraIntrinsics<T>,
        lambda_learned: f64,
        lambda_point: f64,
    ) -> Self {
        Self {
            constraints,
            intrinsics,
            lambda_learned,
            lambda_point,
        }
    }

    pub fn constraints(&self) -> &[LearnedConstraint<T>] {
        &self.constraints
    }
}

impl<T: Real> ResidualTerm<T> for LearnedTerm<T> {
    fn name(&self) -> &'static str {
        "learned"
    }

    fn is_active(&self) -> bool {
        self.lambda_learned > 0.0 && !self.constraints.is_empty()
    }

    fn evaluate(&self, graph: &DeformationGraph<T>, _cache: &WarpCache<T>) -> Vec<ResidualBlock<T>> {
        let w: T = sqrt_weight(self.lambda_learned);
        let wp: T = w * sqrt_weight::<T>(self.lambda_point);
        let mut out = Vec::with_capacity(2 * self.constraints.len());
        for (source, c) in self.constraints.iter().enumerate() {
            let Some(node) = graph.nodes.get(c.node) else {
                continue;
            };
            let moved = node.position + node.translation;

            let mut heat_jac = Matrix3x6::zeros();
            let mut value = T::zero();
            let mut sample_at = None;
            if let Some((px, pj)) = self.intrinsics.project_with_jacobian(&moved) {
                if let Ok(s) = c.heatmap.bilinear(&px) {
                    value = s.value;
                    let row = s.grad.transpose() * pj * (-w);
                    heat_jac.fixed_view_mut::<1, 3>(0, 3).copy_from(&row);
                    sample_at = Some(px);
                }
            }
            out.push(ResidualBlock {
                kind: TermKind::LearnedHeatmap,
                source,
                dim: 1,
                residual: Vector3::new((T::one() - value) * w, T::zero(), T::zero()),
                jacobian: vec![(c.node, heat_jac)],
                weight: w,
                tag: 0,
                sample_at,
            });

            if self.lambda_point > 0.0 {
                let mut pj = Matrix3x6::zeros();
                pj.fixed_view_mut::<3, 3>(0, 3)
                    .copy_from(&(Matrix3::identity() * wp));
                out.push(ResidualBlock {
                    kind: TermKind::LearnedPoint,
                    source,
                    dim: 3,
                    residual: (moved - c.point) * wp,
                    jacobian: vec![(c.node, pj)],
                    weight: wp,
                    tag: 0,
                    sample_at: None,
                });
            }
        }
        out
    }
}
