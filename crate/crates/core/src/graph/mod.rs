//! Embedded deformation graph: per-node rigid transforms blended over space.
//!
//! Each node `i` has a canonical position `g_i`, an axis-angle rotation
//! `θ_i` and a translation `t_i`. A point `p` with skinning weights `w`
//! deforms to `Σ_i w_i (R(θ_i)(p - g_i) + g_i + t_i)`. The unknowns are the
//! `6K` scalars `[θ_0, t_0, θ_1, t_1, ...]`.

mod rotation;
mod sampling;
mod skinning;

use std::fs;
use std::path::Path;

use nalgebra::{DVector, Matrix3, Matrix3x6, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SurfaceMesh;
use crate::scalar::Real;

pub use rotation::{
    renormalize, right_jacobian, rotated_vector_jacobian, rotation_exp, rotation_exp_derivative,
    skew,
};
pub use sampling::{build_edges, sample_nodes, sample_uncovered};
pub use skinning::{nearest_nodes, skinning, SkinningWeights, DEFAULT_INFLUENCES, MAX_INFLUENCES};

/// Parameters per node: 3 rotation + 3 translation.
pub const NODE_DOF: usize = 6;

/// Default neighbour count for proximity edges.
pub const DEFAULT_EDGE_NEIGHBORS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeformationNode<T: Real> {
    pub position: Vector3<T>,
    pub rotation: Vector3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> DeformationNode<T> {
    pub fn identity(position: Vector3<T>) -> Self {
        Self {
            position,
            rotation: Vector3::zeros(),
            translation: Vector3::zeros(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeformationGraph<T: Real> {
    pub nodes: Vec<DeformationNode<T>>,
    /// Undirected edges `(i, j)` with `i < j`.
    pub edges: Vec<(usize, usize)>,
    /// Skinning bandwidth in meters.
    pub sigma: T,
}

/// Rotation matrices and right Jacobians of every node, evaluated once per
/// linearization.
#[derive(Clone, Debug)]
pub struct WarpCache<T: Real> {
    pub rotations: Vec<Matrix3<T>>,
    pub right_jacobians: Vec<Matrix3<T>>,
}

impl<T: Real> DeformationGraph<T> {
    /// Identity-initialized graph over `positions` with k-nearest edges.
    pub fn from_positions(positions: &[Vector3<T>], sigma: T, edge_neighbors: usize) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::invalid("graph needs at least one node"));
        }
        let graph = Self {
            nodes: positions.iter().map(|&p| DeformationNode::identity(p)).collect(),
            edges: build_edges(positions, edge_neighbors),
            sigma,
        };
        graph.validate()?;
        Ok(graph)
    }

    /// Samples nodes over a mesh with the given radius, using it as sigma.
    pub fn sample_from_mesh(mesh: &SurfaceMesh<T>, radius: T, edge_neighbors: usize) -> Result<Self> {
        let positions = sample_nodes(&mesh.vertices, radius)?;
        Self::from_positions(&positions, radius, edge_neighbors)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.nodes.len();
        for &(i, j) in &self.edges {
            if i >= k || j >= k {
                return Err(Error::invalid(format!("edge ({i}, {j}) out of range for {k} nodes")));
            }
            if i == j {
                return Err(Error::invalid(format!("self edge on node {i}")));
            }
        }
        if !(self.sigma > T::zero()) {
            return Err(Error::invalid("sigma must be positive"));
        }
        for n in &self.nodes {
            let ok = n
                .position
                .iter()
                .chain(n.rotation.iter())
                .chain(n.translation.iter())
                .all(|x| x.is_finite_real());
            if !ok {
                return Err(Error::invalid("non-finite node parameter"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<T>> {
        self.nodes.iter().map(|n| n.position).collect()
    }

    pub fn param_count(&self) -> usize {
        NODE_DOF * self.nodes.len()
    }

    pub fn params(&self) -> DVector<T> {
        let mut x = DVector::zeros(self.param_count());
        for (i, n) in self.nodes.iter().enumerate() {
            x.fixed_rows_mut::<3>(NODE_DOF * i).copy_from(&n.rotation);
            x.fixed_rows_mut::<3>(NODE_DOF * i + 3).copy_from(&n.translation);
        }
        x
    }

    pub fn set_params(&mut self, x: &DVector<T>) {
        assert_eq!(x.len(), self.param_count(), "parameter vector size");
        for (i, n) in self.nodes.iter_mut().enumerate() {
            n.rotation = x.fixed_rows::<3>(NODE_DOF * i).into_owned();
            n.translation = x.fixed_rows::<3>(NODE_DOF * i + 3).into_owned();
        }
    }

    pub fn with_params(&self, x: &DVector<T>) -> Self {
        let mut g = self.clone();
        g.set_params(x);
        g
    }

    pub fn reset_params(&mut self) {
        for n in &mut self.nodes {
            n.rotation = Vector3::zeros();
            n.translation = Vector3::zeros();
        }
    }

    /// Wraps every rotation into `|θ| ≤ π`.
    pub fn renormalize_rotations(&mut self) {
        for n in &mut self.nodes {
            n.rotation = renormalize(&n.rotation);
        }
    }

    pub fn cache(&self) -> WarpCache<T> {
        WarpCache {
            rotations: self.nodes.iter().map(|n| rotation_exp(&n.rotation)).collect(),
            right_jacobians: self.nodes.iter().map(|n| right_jacobian(&n.rotation)).collect(),
        }
    }

    pub fn skinning(&self, p: &Vector3<T>, k: usize) -> SkinningWeights<T> {
        skinning(&self.positions(), self.sigma, p, k)
    }

    pub fn skinning_many(&self, points: &[Vector3<T>], k: usize) -> Vec<SkinningWeights<T>> {
        use rayon::prelude::*;
        let pos = self.positions();
        points
            .par_iter()
            .map(|p| skinning(&pos, self.sigma, p, k))
            .collect()
    }

    /// `W_T(p)` with rotations computed on demand.
    pub fn warp_point(&self, weights: &SkinningWeights<T>, p: &Vector3<T>) -> Vector3<T> {
        let mut out = Vector3::zeros();
        for (i, w) in weights.iter() {
            let n = &self.nodes[i];
            let r = rotation_exp(&n.rotation);
            out += (r * (p - n.position) + n.position + n.translation) * w;
        }
        out
    }

    pub fn warp_point_cached(
        &self,
        cache: &WarpCache<T>,
        weights: &SkinningWeights<T>,
        p: &Vector3<T>,
    ) -> Vector3<T> {
        let mut out = Vector3::zeros();
        for (i, w) in weights.iter() {
            let n = &self.nodes[i];
            out += (cache.rotations[i] * (p - n.position) + n.position + n.translation) * w;
        }
        out
    }

    /// Warped point and its Jacobian blocks `d W / d [θ_i, t_i]` per influencing node.
    pub fn warp_with_jacobian(
        &self,
        cache: &WarpCache<T>,
        weights: &SkinningWeights<T>,
        p: &Vector3<T>,
    ) -> (Vector3<T>, Vec<(usize, Matrix3x6<T>)>) {
        let mut out = Vector3::zeros();
        let mut jac = Vec::with_capacity(weights.len());
        for (i, w) in weights.iter() {
            let n = &self.nodes[i];
            let local = p - n.position;
            let r = &cache.rotations[i];
            out += (r * local + n.position + n.translation) * w;
            let mut block = Matrix3x6::zeros();
            let drot = rotated_vector_jacobian(r, &cache.right_jacobians[i], &local) * w;
            block.fixed_view_mut::<3, 3>(0, 0).copy_from(&drot);
            block
                .fixed_view_mut::<3, 3>(0, 3)
                .copy_from(&(Matrix3::identity() * w));
            jac.push((i, block));
        }
        (out, jac)
    }

    /// Point whose warp lands on `target`, by Newton iterations with the
    /// blended rotation standing in for the warp Jacobian. Skinning is
    /// recomputed at every iterate.
    pub fn inverse_warp_point(&self, target: &Vector3<T>, k: usize, iterations: usize) -> Vector3<T> {
        let cache = self.cache();
        let pos = self.positions();
        let mut x = *target;
        for _ in 0..iterations {
            let w = skinning(&pos, self.sigma, &x, k);
            let r = w
                .iter()
                .fold(Matrix3::zeros(), |acc, (i, wi)| acc + cache.rotations[i] * wi);
            let err = self.warp_point_cached(&cache, &w, &x) - target;
            let step = r.try_inverse().map_or(err, |inv| inv * err);
            x -= step;
            if step.norm() < T::lit(1e-12) {
                break;
            }
        }
        x
    }

    /// Blended rotation applied to a normal, re-normalized.
    pub fn warp_normal(&self, cache: &WarpCache<T>, weights: &SkinningWeights<T>, n: &Vector3<T>) -> Vector3<T> {
        let mut out = Vector3::zeros();
        for (i, w) in weights.iter() {
            out += cache.rotations[i] * n * w;
        }
        let len = out.norm();
        if len > T::zero() {
            out / len
        } else {
            *n
        }
    }

    /// Warps every vertex and normal of a mesh.
    pub fn warp_mesh(&self, mesh: &SurfaceMesh<T>, k: usize) -> SurfaceMesh<T> {
        let cache = self.cache();
        let weights = self.skinning_many(&mesh.vertices, k);
        let vertices = mesh
            .vertices
            .iter()
            .zip(&weights)
            .map(|(v, w)| self.warp_point_cached(&cache, w, v))
            .collect();
        let normals = mesh
            .normals
            .iter()
            .zip(&weights)
            .map(|(n, w)| self.warp_normal(&cache, w, n))
            .collect();
        SurfaceMesh {
            vertices,
            normals,
            triangles: mesh.triangles.clone(),
            source_pixel: mesh.source_pixel.clone(),
        }
    }

    /// Adds nodes over points farther than `radius` from every node. New
    /// nodes take the translation of the current warp at their position and
    /// the rotation of their nearest existing node, so the deformed state is
    /// unchanged. Edges are rebuilt when anything was added.
    pub fn extend(&mut self, points: &[Vector3<T>], radius: T, k: usize, edge_neighbors: usize) -> usize {
        let positions = self.positions();
        let added = sample_uncovered(&positions, points, radius);
        if added.is_empty() {
            return 0;
        }
        let cache = self.cache();
        let new_nodes: Vec<DeformationNode<T>> = added
            .iter()
            .map(|p| {
                let w = skinning(&positions, self.sigma, p, k);
                let warped = self.warp_point_cached(&cache, &w, p);
                let nearest = nearest_nodes(&positions, p, 1)[0].0;
                DeformationNode {
                    position: *p,
                    rotation: self.nodes[nearest].rotation,
                    translation: warped - p,
                }
            })
            .collect();
        self.nodes.extend(new_nodes);
        self.edges = build_edges(&self.positions(), edge_neighbors);
        added.len()
    }

    pub fn to_record(&self) -> GraphRecord {
        let arr = |v: &Vector3<T>| [v.x.to_f64_lossy(), v.y.to_f64_lossy(), v.z.to_f64_lossy()];
        GraphRecord {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    g: arr(&n.position),
                    theta: arr(&n.rotation),
                    t: arr(&n.translation),
                })
                .collect(),
            edges: self.edges.iter().map(|&(i, j)| [i, j]).collect(),
            sigma: self.sigma.to_f64_lossy(),
        }
    }

    pub fn from_record(rec: &GraphRecord) -> Result<Self> {
        let vec = |a: &[f64; 3]| Vector3::new(T::lit(a[0]), T::lit(a[1]), T::lit(a[2]));
        let graph = Self {
            nodes: rec
                .nodes
                .iter()
                .map(|n| DeformationNode {
                    position: vec(&n.g),
                    rotation: vec(&n.theta),
                    translation: vec(&n.t),
                })
                .collect(),
            edges: rec.edges.iter().map(|e| (e[0].min(e[1]), e[0].max(e[1]))).collect(),
            sigma: T::lit(rec.sigma),
        };
        graph.validate()?;
        Ok(graph)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(&self.to_record())?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let rec: GraphRecord = serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| Error::format(path, e.to_string()))?;
        Self::from_record(&rec)
    }
}

/// JSON form of a graph: `{nodes: [{g, theta, t}], edges: [[i, j]], sigma}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphRecord {
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<[usize; 2]>,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub g: [f64; 3],
    pub theta: [f64; 3],
    pub t: [f64; 3],
}
