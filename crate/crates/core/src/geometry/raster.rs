//! Z-buffer rasterization of triangle meshes into a pinhole camera.

use nalgebra::{Vector2, Vector3};

use super::camera::CameraIntrinsics;
use super::image::Image;
use crate::scalar::Real;

/// Surface point seen by a pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fragment<T: Real> {
    pub triangle: u32,
    /// Perspective-correct barycentric coordinates.
    pub bary: [T; 3],
    pub depth: T,
}

/// Result of rendering: depth (0 where empty) and the visible fragment.
#[derive(Clone, Debug)]
pub struct Raster<T: Real> {
    pub depth: Image<T>,
    pub fragments: Image<Option<Fragment<T>>>,
}

/// Renders `triangles` over `vertices` (camera space) with a z-buffer.
/// Pixel centers are sampled at integer coordinates.
pub fn rasterize<T: Real>(
    vertices: &[Vector3<T>],
    triangles: &[[u32; 3]],
    k: &CameraIntrinsics<T>,
) -> Raster<T> {
    let (w, h) = (k.width, k.height);
    let mut depth = Image::filled(w, h, T::zero());
    let mut fragments: Image<Option<Fragment<T>>> = Image::filled(w, h, None);
    let near = T::lit(1e-4);
    for (ti, tri) in triangles.iter().enumerate() {
        let p = tri.map(|i| vertices[i as usize]);
        if p.iter().any(|v| !(v.z > near)) {
            continue;
        }
        let s: [Vector2<T>; 3] = p.map(|v| k.project(&v).expect("positive depth"));
        let area = edge(&s[0], &s[1], &s[2]);
        if area == T::zero() || !area.is_finite_real() {
            continue;
        }
        let min_u = s.iter().map(|q| q.x.to_f64_lossy()).fold(f64::INFINITY, f64::min);
        let max_u = s.iter().map(|q| q.x.to_f64_lossy()).fold(f64::NEG_INFINITY, f64::max);
        let min_v = s.iter().map(|q| q.y.to_f64_lossy()).fold(f64::INFINITY, f64::min);
        let max_v = s.iter().map(|q| q.y.to_f64_lossy()).fold(f64::NEG_INFINITY, f64::max);
        if max_u < 0.0 || max_v < 0.0 || min_u > (w - 1) as f64 || min_v > (h - 1) as f64 {
            continue;
        }
        let u0 = min_u.ceil().max(0.0) as usize;
        let u1 = (max_u.floor() as usize).min(w - 1);
        let v0 = min_v.ceil().max(0.0) as usize;
        let v1 = (max_v.floor() as usize).min(h - 1);
        let inv_z = p.map(|v| T::one() / v.z);
        for v in v0..=v1 {
            for u in u0..=u1 {
                let q = Vector2::new(T::from_usize_lossy(u), T::from_usize_lossy(v));
                let l0 = edge(&s[1], &s[2], &q) / area;
                let l1 = edge(&s[2], &s[0], &q) / area;
                let l2 = T::one() - l0 - l1;
                let eps = T::lit(-1e-9);
                if l0 < eps || l1 < eps || l2 < eps {
                    continue;
                }
                let iz = l0 * inv_z[0] + l1 * inv_z[1] + l2 * inv_z[2];
                let z = T::one() / iz;
                let cur = *depth.get(u, v);
                if cur == T::zero() || z < cur {
                    depth.set(u, v, z);
                    let bary = [l0 * inv_z[0] * z, l1 * inv_z[1] * z, l2 * inv_z[2] * z];
                    fragments.set(
                        u,
                        v,
                        Some(Fragment {
                            triangle: ti as u32,
                            bary,
                            depth: z,
                        }),
                    );
                }
            }
        }
    }
    Raster { depth, fragments }
}

#[inline]
fn edge<T: Real>(a: &Vector2<T>, b: &Vector2<T>, c: &Vector2<T>) -> T {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_plane_exactly() {
        let k = CameraIntrinsics::new(50.0, 50.0, 15.5, 11.5, 32, 24).unwrap();
        // slanted plane z = 1 + 0.2 x covering the view
        let corners = [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)];
        let verts: Vec<Vector3<f64>> = corners
            .iter()
            .map(|&(x, y)| Vector3::new(x, y, 1.0 + 0.2 * x))
            .collect();
        let r = rasterize(&verts, &[[0, 2, 1], [1, 2, 3]], &k);
        for v in 0..24 {
            for u in 0..32 {
                let z = *r.depth.get(u, v);
                assert!(z > 0.0);
                // ray (x, y, 1) * z on plane: z = 1 + 0.2 * x * z
                let xr = (u as f64 - 15.5) / 50.0;
                let expect = 1.0 / (1.0 - 0.2 * xr);
                assert!((z - expect).abs() < 1e-9);
                let f = r.fragments.get(u, v).unwrap();
                let p: Vector3<f64> = f.bary.iter().zip(verts_of(&verts, f.triangle)).map(|(b, q)| q * *b).sum();
                assert!((p.z - z).abs() < 1e-9);
            }
        }
    }

    fn verts_of(v: &[Vector3<f64>], t: u32) -> Vec<Vector3<f64>> {
        let tris = [[0usize, 2, 1], [1, 2, 3]];
        tris[t as usize].iter().map(|&i| v[i]).collect()
    }

    #[test]
    fn nearer_triangle_wins() {
        let k = CameraIntrinsics::new(10.0, 10.0, 2.0, 2.0, 5, 5).unwrap();
        let mk = |z: f64| {
            vec![
                Vector3::new(-5.0, -5.0, z),
                Vector3::new(5.0, -5.0, z),
                Vector3::new(0.0, 5.0, z),
            ]
        };
        let mut verts = mk(2.0);
        verts.extend(mk(1.0));
        let r = rasterize(&verts, &[[0, 1, 2], [3, 4, 5]], &k);
        assert_eq!(*r.depth.get(2, 2), 1.0);
        assert_eq!(r.fragments.get(2, 2).unwrap().triangle, 1);
    }
}
