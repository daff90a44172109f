use nalgebra::Vector3;

use super::frame::RgbdFrame;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Default maximum 3D edge length for pixel-grid triangles, in meters.
pub const DEFAULT_DISCONTINUITY: f64 = 0.05;

/// Triangle mesh in camera (or canonical) space.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SurfaceMesh<T: Real> {
    pub vertices: Vec<Vector3<T>>,
    pub normals: Vec<Vector3<T>>,
    pub triangles: Vec<[u32; 3]>,
    /// Pixel each vertex was lifted from; empty for meshes not built from a frame.
    pub source_pixel: Vec<(u32, u32)>,
}

impl<T: Real> SurfaceMesh<T> {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Recomputes per-vertex normals as area-weighted triangle normals.
    /// Vertices without faces keep `fallback(vertex)`.
    pub fn recompute_normals(&mut self, fallback: impl Fn(&Vector3<T>) -> Vector3<T>) {
        let mut acc = vec![Vector3::zeros(); self.vertices.len()];
        for tri in &self.triangles {
            let [a, b, c] = tri.map(|i| self.vertices[i as usize]);
            // cross product length is twice the area: area weighting for free
            let n = (b - a).cross(&(c - a));
            for &i in tri {
                acc[i as usize] += n;
            }
        }
        self.normals = acc
            .into_iter()
            .zip(&self.vertices)
            .map(|(n, v)| {
                let len = n.norm();
                if len > T::zero() {
                    n / len
                } else {
                    fallback(v)
                }
            })
            .collect();
    }

    pub fn cast<U: Real>(&self) -> SurfaceMesh<U> {
        let conv = |v: &Vector3<T>| v.map(|x| U::lit(x.to_f64_lossy()));
        SurfaceMesh {
            vertices: self.vertices.iter().map(conv).collect(),
            normals: self.normals.iter().map(conv).collect(),
            triangles: self.triangles.clone(),
            source_pixel: self.source_pixel.clone(),
        }
    }

    /// Keeps every `stride`-th vertex (no faces); used to thin data terms.
    pub fn subsample(&self, stride: usize) -> SurfaceMesh<T> {
        let stride = stride.max(1);
        let pick = |i: &usize| i.is_multiple_of(stride);
        SurfaceMesh {
            vertices: (0..self.len()).filter(pick).map(|i| self.vertices[i]).collect(),
            normals: (0..self.normals.len())
                .filter(pick)
                .map(|i| self.normals[i])
                .collect(),
            triangles: Vec::new(),
            source_pixel: (0..self.source_pixel.len())
                .filter(pick)
                .map(|i| self.source_pixel[i])
                .collect(),
        }
    }
}

/// Unit vector from `p` toward the camera center.
pub fn toward_camera<T: Real>(p: &Vector3<T>) -> Vector3<T> {
    let len = p.norm();
    if len > T::zero() {
        -p / len
    } else {
        Vector3::new(T::zero(), T::zero(), -T::one())
    }
}

/// Lifts every valid, masked pixel to a vertex and connects 2x2 pixel quads
/// with two triangles when all four pixels are present and no quad edge is
/// longer than `max_edge` meters.
pub fn frame_to_mesh<T: Real>(frame: &RgbdFrame<T>, max_edge: T) -> Result<SurfaceMesh<T>> {
    let (w, h) = (frame.width(), frame.height());
    let mut index = vec![u32::MAX; w * h];
    let mut mesh = SurfaceMesh::default();
    for v in 0..h {
        for u in 0..w {
            if !frame.in_mask(u, v) {
                continue;
            }
            if let Some(p) = frame.point_at(u, v) {
                index[v * w + u] = mesh.vertices.len() as u32;
                mesh.vertices.push(p);
                mesh.source_pixel.push((u as u32, v as u32));
            }
        }
    }
    if mesh.vertices.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let max2 = max_edge * max_edge;
    for v in 0..h.saturating_sub(1) {
        for u in 0..w.saturating_sub(1) {
            let a = index[v * w + u];
            let b = index[v * w + u + 1];
            let c = index[(v + 1) * w + u];
            let d = index[(v + 1) * w + u + 1];
            if [a, b, c, d].contains(&u32::MAX) {
                continue;
            }
            let pos = |i: u32| mesh.vertices[i as usize];
            let edges = [(a, b), (a, c), (b, d), (c, d), (b, c)];
            if edges
                .iter()
                .any(|&(i, j)| (pos(i) - pos(j)).norm_squared() > max2)
            {
                continue;
            }
            // (a, c, b) winds toward the camera for +x right, +y down, +z forward
            mesh.triangles.push([a, c, b]);
            mesh.triangles.push([b, c, d]);
        }
    }
    mesh.recompute_normals(toward_camera);
    Ok(mesh)
}
