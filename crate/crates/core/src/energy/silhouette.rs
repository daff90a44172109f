use nalgebra::{Vector3, Vector2};

use super::{image_chain, sqrt_weight, ResidualBlock, ResidualTerm, TermKind};
use crate::geometry::{CameraIntrinsics, DistanceMap, SurfaceMesh};
use crate::graph::{DeformationGraph, SkinningWeights, WarpCache};
use crate::scalar::Real;

/// Pixel distance of each projected warped vertex to the target mask.
/// Projections leaving the image read the nearest border value.
pub struct SilhouetteTerm<'a, T: Real> {
    vertices: Vec<Vector3<T>>,
    weights: Vec<SkinningWeights<T>>,
    distance: &'a DistanceMap<T>,
    intrinsics: CameraIntrinsics<T>,
    lambda: f64,
}

impl<'a, T: Real> SilhouetteTerm<'a, T> {
    pub fn new(
        mesh: &SurfaceMesh<T>,
        graph: &DeformationGraph<T>,
        distance: &'a DistanceMap<T>,
        intrinsics: CameraIntrinsics<T>,
        lambda_silh: f64,
        influences: usize,
    ) -> Self {
        Self {
            vertices: mesh.vertices.clone(),
            weights: graph.skinning_many(&mesh.vertices, influences),
            distance,
            intrinsics,
            lambda: lambda_silh,
        }
    }
}

impl<'a, T: Real> ResidualTerm<T> for SilhouetteTerm<'a, T> {
    fn name(&self) -> &'static str {
        "silhouette"
    }

    fn is_active(&self) -> bool {
        self.lambda > 0.0 && !self.vertices.is_empty()
    }

    fn evaluate(&self, graph: &DeformationGraph<T>, cache: &WarpCache<T>) -> Vec<ResidualBlock<T>> {
        let w: T = sqrt_weight(self.lambda);
        let map = &self.distance.values;
        let max = Vector2::new(
            T::from_usize_lossy(map.width() - 1),
            T::from_usize_lossy(map.height() - 1),
        );
        self.vertices
            .iter()
            .zip(&self.weights)
            .enumerate()
            .filter_map(|(source, (v, sw))| {
                let (warped, jac) = graph.warp_with_jacobian(cache, sw, v);
                let (px, pj) = self.intrinsics.project_with_jacobian(&warped)?;
                let s = map.bilinear_clamped(&px);
                let inside = px.x > T::zero() && px.y > T::zero() && px.x < max.x && px.y < max.y;
                Some(ResidualBlock {
                    kind: TermKind::Silhouette,
                    source,
                    dim: 1,
                    residual: Vector3::new(s.value * w, T::zero(), T::zero()),
                    jacobian: image_chain(&s.grad, &pj, &jac, w),
                    weight: w,
                    tag: u64::from(!inside),
                    sample_at: Some(px),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::test_support::max_jacobian_error;
    use crate::energy::EnergySpec;
    use crate::geometry::{distance_map, Image};
    use nalgebra::DVector;

    fn k() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(100.0, 100.0, 20.0, 15.0, 40, 30).unwrap()
    }

    /// Mask covering columns 10..=25 of every row.
    fn dmap() -> DistanceMap<f64> {
        distance_map(&Image::from_fn(40, 30, |u, _| (10..=25).contains(&u))).unwrap()
    }

    fn mesh_at(points: Vec<Vector3<f64>>) -> SurfaceMesh<f64> {
        let n = points.len();
        SurfaceMesh {
            normals: vec![Vector3::new(0.0, 0.0, -1.0); n],
            vertices: points,
            triangles: vec![],
            source_pixel: vec![(0, 0); n],
        }
    }

    fn graph() -> DeformationGraph<f64> {
        let pos: Vec<_> = (0..6)
            .map(|i| Vector3::new(-0.1 + i as f64 * 0.04, 0.01 * (i % 2) as f64, 1.0))
            .collect();
        DeformationGraph::from_positions(&pos, 0.05, 2).unwrap()
    }

    #[test]
    fn inside_mask_is_zero() {
        let g = graph();
        let m = mesh_at(vec![Vector3::new(0.0, 0.0, 1.0)]); // (20, 15)
        let d = dmap();
        let t = SilhouetteTerm::new(&m, &g, &d, k(), 1e-4, 4);
        let e = EnergySpec::assemble(vec![Box::new(t)]).unwrap().evaluate(&g);
        assert_eq!(e.blocks.len(), 1);
        assert_eq!(e.total(), 0.0);
    }

    #[test]
    fn five_pixels_outside() {
        let g = graph();
        let m = mesh_at(vec![Vector3::new(0.1, 0.0, 1.0)]); // (30, 15), mask ends at 25
        let d = dmap();
        let t = SilhouetteTerm::new(&m, &g, &d, k(), 1e-4, 4);
        let e = EnergySpec::assemble(vec![Box::new(t)]).unwrap().evaluate(&g);
        assert!((e.blocks[0].residual[0] - 1e-2 * 5.0).abs() < 1e-12);
    }

    #[test]
    fn off_image_clamps_to_border() {
        let g = graph();
        let m = mesh_at(vec![Vector3::new(1.0, 0.0, 1.0)]); // u = 120
        let d = dmap();
        let t = SilhouetteTerm::new(&m, &g, &d, k(), 1.0, 4);
        let e = EnergySpec::assemble(vec![Box::new(t)]).unwrap().evaluate(&g);
        assert!((e.blocks[0].residual[0] - 14.0).abs() < 1e-12);
    }

    #[test]
    fn empty_mesh_is_inactive() {
        let g = graph();
        let d = dmap();
        let t = SilhouetteTerm::new(&mesh_at(vec![]), &g, &d, k(), 1.0, 4);
        assert!(!ResidualTerm::<f64>::is_active(&t));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut g = graph();
        let x = DVector::from_fn(g.param_count(), |i, _| ((i * 11 % 5) as f64 - 2.0) * 0.005);
        g.set_params(&x);
        let pts: Vec<_> = (0..30)
            .map(|i| Vector3::new(-0.17 + i as f64 * 0.0123, 0.03 * ((i as f64) * 0.9).sin(), 1.0 + 0.002 * i as f64))
            .collect();
        let m = mesh_at(pts);
        let d = dmap();
        let t = SilhouetteTerm::new(&m, &g, &d, k(), 1e-4, 4);
        let spec = EnergySpec::assemble(vec![Box::new(t)]).unwrap();
        let (err, n) = max_jacobian_error(&spec, &g, 1e-6);
        assert!(n > 100);
        assert!(err < 1e-4, "{err}");
    }
}
