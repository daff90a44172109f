//! Zero level set extraction by marching tetrahedra (six tetrahedra per cube).

use std::collections::HashMap;

use nalgebra::Vector3;
use rayon::prelude::*;

use super::TsdfVolume;
use crate::geometry::SurfaceMesh;
use crate::scalar::Real;

/// Cube corner offsets; corner `c` has bits `(x, y, z) = (c & 1, c >> 1 & 1, c >> 2 & 1)`.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

/// Split along the 0-7 diagonal. Every face diagonal runs from its lowest to
/// its highest corner, so neighbouring cubes agree on shared faces.
const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

/// Voxel-pair key of an interpolated vertex.
type EdgeKey = (u32, u32);

fn edge_key(a: usize, b: usize) -> EdgeKey {
    if a < b {
        (a as u32, b as u32)
    } else {
        (b as u32, a as u32)
    }
}

/// Triangulates the `tsdf = 0` surface over cubes whose eight corners are all
/// observed. Faces are wound so normals point toward positive distance.
pub fn extract_mesh<T: Real>(vol: &TsdfVolume<T>) -> SurfaceMesh<T> {
    let [nx, ny, nz] = vol.dims;
    let slabs: Vec<Vec<[EdgeKey; 3]>> = (0..nz - 1)
        .into_par_iter()
        .map(|k| {
            let mut tris = Vec::new();
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    cube(vol, i, j, k, &mut tris);
                }
            }
            tris
        })
        .collect();

    let mut mesh = SurfaceMesh::default();
    let mut lookup: HashMap<EdgeKey, u32> = HashMap::new();
    for tri in slabs.into_iter().flatten() {
        let ids = tri.map(|key| {
            *lookup.entry(key).or_insert_with(|| {
                mesh.vertices.push(edge_vertex(vol, key));
                (mesh.vertices.len() - 1) as u32
            })
        });
        if ids[0] != ids[1] && ids[1] != ids[2] && ids[0] != ids[2] {
            mesh.triangles.push(ids);
        }
    }
    mesh.recompute_normals(|_| Vector3::z());
    mesh
}

fn edge_vertex<T: Real>(vol: &TsdfVolume<T>, (a, b): EdgeKey) -> Vector3<T> {
    let (a, b) = (a as usize, b as usize);
    let pa = center_of(vol, a);
    let pb = center_of(vol, b);
    let (fa, fb) = (vol.tsdf[a], vol.tsdf[b]);
    let t = fa / (fa - fb);
    pa + (pb - pa) * t
}

fn center_of<T: Real>(vol: &TsdfVolume<T>, idx: usize) -> Vector3<T> {
    let [nx, ny, _] = vol.dims;
    vol.voxel_center(idx % nx, (idx / nx) % ny, idx / (nx * ny))
}

fn cube<T: Real>(vol: &TsdfVolume<T>, i: usize, j: usize, k: usize, out: &mut Vec<[EdgeKey; 3]>) {
    let idx = CORNERS.map(|[dx, dy, dz]| vol.index(i + dx, j + dy, k + dz));
    if idx.iter().any(|&n| !(vol.weight[n] > T::zero())) {
        return;
    }
    let val = idx.map(|n| vol.tsdf[n]);
    let inside = val.map(|v| v < T::zero());
    if inside.iter().all(|&b| b) || inside.iter().all(|&b| !b) {
        return;
    }
    for tet in TETS {
        let neg: Vec<usize> = tet.iter().copied().filter(|&c| inside[c]).collect();
        let pos: Vec<usize> = tet.iter().copied().filter(|&c| !inside[c]).collect();
        let key = |a: usize, b: usize| edge_key(idx[a], idx[b]);
        let mut emit = |tri: [(usize, usize); 3]| {
            let keys = tri.map(|(a, b)| key(a, b));
            let p = tri.map(|(a, b)| interpolate(vol, idx[a], idx[b], val[a], val[b]));
            let n = (p[1] - p[0]).cross(&(p[2] - p[0]));
            let outward = centroid(vol, &idx, &pos) - centroid(vol, &idx, &neg);
            if n.dot(&outward) < T::zero() {
                out.push([keys[0], keys[2], keys[1]]);
            } else {
                out.push(keys);
            }
        };
        match (neg.len(), pos.len()) {
            (1, 3) => {
                let a = neg[0];
                emit([(a, pos[0]), (a, pos[1]), (a, pos[2])]);
            }
            (3, 1) => {
                let a = pos[0];
                emit([(neg[0], a), (neg[1], a), (neg[2], a)]);
            }
            (2, 2) => {
                let (a, b) = (neg[0], neg[1]);
                let (c, d) = (pos[0], pos[1]);
                // quad a-c, a-d, b-d, b-c in cyclic order
                emit([(a, c), (a, d), (b, d)]);
                emit([(a, c), (b, d), (b, c)]);
            }
            _ => {}
        }
    }
}

fn interpolate<T: Real>(vol: &TsdfVolume<T>, a: usize, b: usize, fa: T, fb: T) -> Vector3<T> {
    let pa = center_of(vol, a);
    let pb = center_of(vol, b);
    pa + (pb - pa) * (fa / (fa - fb))
}

fn centroid<T: Real>(vol: &TsdfVolume<T>, idx: &[usize; 8], corners: &[usize]) -> Vector3<T> {
    let sum = corners
        .iter()
        .fold(Vector3::zeros(), |acc, &c| acc + center_of(vol, idx[c]));
    sum / T::from_usize_lossy(corners.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled(f: impl Fn(Vector3<f64>) -> f64) -> TsdfVolume<f64> {
        let mut vol = TsdfVolume::new(Vector3::repeat(-0.7), 0.05, [29, 29, 29], 0.2).unwrap();
        for k in 0..29 {
            for j in 0..29 {
                for i in 0..29 {
                    let idx = vol.index(i, j, k);
                    let d = f(vol.voxel_center(i, j, k));
                    vol.tsdf[idx] = (d / vol.truncation).clamp(-1.0, 1.0);
                    vol.weight[idx] = 1.0;
                }
            }
        }
        vol
    }

    #[test]
    fn sphere_radius() {
        let vol = filled(|p| p.norm() - 0.5);
        let mesh = extract_mesh(&vol);
        assert!(mesh.len() > 500);
        for (v, n) in mesh.vertices.iter().zip(&mesh.normals) {
            assert!((v.norm() - 0.5).abs() <= 0.05);
            assert!(n.dot(&v.normalize()) > 0.9);
        }
    }

    #[test]
    fn sphere_is_closed() {
        let mesh = extract_mesh(&filled(|p| p.norm() - 0.5));
        let mut edges: HashMap<(u32, u32), i32> = HashMap::new();
        for t in &mesh.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        assert!(edges.values().all(|&c| c == 2));
    }

    #[test]
    fn all_positive_is_empty() {
        assert!(extract_mesh(&filled(|_| 1.0)).is_empty());
    }

    #[test]
    fn unobserved_is_empty() {
        let mut vol = filled(|p| p.z);
        vol.weight.iter_mut().for_each(|w| *w = 0.0);
        assert!(extract_mesh(&vol).is_empty());
    }

    #[test]
    fn plane_normals_follow_gradient() {
        let dir = Vector3::new(0.3, -0.4, 0.5).normalize();
        let mesh = extract_mesh(&filled(|p| p.dot(&dir) - 0.05));
        assert!(!mesh.is_empty());
        for (v, n) in mesh.vertices.iter().zip(&mesh.normals) {
            assert!((v.dot(&dir) - 0.05).abs() < 1e-9);
            assert!((n - dir).norm() < 1e-6);
        }
    }
}
