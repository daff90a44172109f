use nalgebra::{Matrix3x6, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ResidualBlock, ResidualTerm, TermKind};
use crate::geometry::{Image, RgbdFrame, SurfaceMesh};
use crate::graph::{DeformationGraph, SkinningWeights, WarpCache};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcpConfig {
    /// Associations farther apart than this (m) are dropped.
    pub max_distance: f64,
    /// Associations whose normals differ by more than this (degrees) are dropped.
    pub max_normal_angle_deg: f64,
    /// Residual scale of the point-to-plane term.
    pub plane_weight: f64,
    /// Residual scale of the point-to-point term.
    pub point_weight: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_distance: 0.1,
            max_normal_angle_deg: 60.0,
            plane_weight: 1.0,
            point_weight: 0.1,
        }
    }
}

/// Dense projective ICP between warped model vertices and a target depth map.
pub struct DenseIcpTerm<'a, T: Real> {
    vertices: Vec<Vector3<T>>,
    normals: Vec<Vector3<T>>,
    weights: Vec<SkinningWeights<T>>,
    target: &'a RgbdFrame<T>,
    target_normals: Image<Option<Vector3<T>>>,
    config: IcpConfig,
}

impl<'a, T: Real> DenseIcpTerm<'a, T> {
    pub fn new(
        mesh: &SurfaceMesh<T>,
        graph: &DeformationGraph<T>,
        target: &'a RgbdFrame<T>,
        config: IcpConfig,
        influences: usize,
    ) -> Self {
        let weights = graph.skinning_many(&mesh.vertices, influences);
        Self::with_weights(mesh, weights, target, config)
    }

    pub fn with_weights(
        mesh: &SurfaceMesh<T>,
        weights: Vec<SkinningWeights<T>>,
        target: &'a RgbdFrame<T>,
        config: IcpConfig,
    ) -> Self {
        Self {
            vertices: mesh.vertices.clone(),
            normals: mesh.normals.clone(),
            weights,
            target,
            target_normals: target.normal_map(),
            config,
        }
    }

    fn associate(
        &self,
        graph: &DeformationGraph<T>,
        cache: &WarpCache<T>,
        i: usize,
    ) -> Option<[ResidualBlock<T>; 2]> {
        let (warped, jac) = graph.warp_with_jacobian(cache, &self.weights[i], &self.vertices[i]);
        let k = &self.target.intrinsics;
        let (u, v) = k.pixel_of(&warped)?;
        let q = self.target.point_at(u, v)?;
        let nq = (*self.target_normals.get(u, v))?;
        let d = warped - q;
        if d.norm() > T::lit(self.config.max_distance) {
            return None;
        }
        let n = graph.warp_normal(cache, &self.weights[i], &self.normals[i]);
        if n.dot(&nq) < T::lit(self.config.max_normal_angle_deg.to_radians().cos()) {
            return None;
        }
        let tag = (v * k.width + u) as u64;
        let wp = T::lit(self.config.plane_weight);
        let wq = T::lit(self.config.point_weight);
        let plane_jac = jac
            .iter()
            .map(|(node, j)| {
                let mut m = Matrix3x6::zeros();
                m.row_mut(0).copy_from(&(nq.transpose() * j * wp));
                (*node, m)
            })
            .collect();
        let point_jac = jac.iter().map(|(node, j)| (*node, j * wq)).collect();
        Some([
            ResidualBlock {
                kind: TermKind::IcpPlane,
                source: i,
                dim: 1,
                residual: Vector3::new(nq.dot(&d) * wp, T::zero(), T::zero()),
                jacobian: plane_jac,
                weight: wp,
                tag,
                sample_at: None,
            },
            ResidualBlock {
                kind: TermKind::IcpPoint,
                source: i,
                dim: 3,
                residual: d * wq,
                jacobian: point_jac,
                weight: wq,
                tag,
                sample_at: None,
            },
        ])
    }
}

impl<'a, T: Real> ResidualTerm<T> for DenseIcpTerm<'a, T> {
    fn name(&self) -> &'static str {
        "dense_icp"
    }

    fn is_active(&self) -> bool {
        !self.vertices.is_empty() && (self.config.plane_weight > 0.0 || self.config.point_weight > 0.0)
    }

    fn evaluate(&self, graph: &DeformationGraph<T>, cache: &WarpCache<T>) -> Vec<ResidualBlock<T>> {
        (0..self.vertices.len())
            .into_par_iter()
            .filter_map(|i| self.associate(graph, cache, i))
            .flat_map_iter(|pair| pair.into_iter())
            .collect()
    }
}
