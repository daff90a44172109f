use nalgebra::{Matrix3x6, Vector2, Vector3};

use super::{sqrt_weight, ResidualBlock, ResidualTerm, TermKind};
use crate::error::Result;
use crate::geometry::{image_gradient, CameraIntrinsics, GradientField, RgbdFrame, SurfaceMesh};
use crate::graph::{DeformationGraph, SkinningWeights, WarpCache};
use crate::scalar::Real;

/// Grayscale gradient consistency `∇I_t(π(W(v))) - ∇I_s(π(v))`, 2D per vertex.
pub struct PhotometricTerm<T: Real> {
    vertices: Vec<Vector3<T>>,
    weights: Vec<SkinningWeights<T>>,
    /// Source gradient at each vertex, or `None` when it could not be sampled.
    source_grad: Vec<Option<Vector2<T>>>,
    target: GradientField<T>,
    intrinsics: CameraIntrinsics<T>,
    lambda: f64,
}

impl<T: Real> PhotometricTerm<T> {
    /// Vertices outside the source mask are skipped.
    pub fn new(
        mesh: &SurfaceMesh<T>,
        graph: &DeformationGraph<T>,
        source: &RgbdFrame<T>,
        target: &RgbdFrame<T>,
        lambda_photo: f64,
        influences: usize,
    ) -> Result<Self> {
        let src = image_gradient(&source.grayscale())?;
        let mut vertices = Vec::new();
        let mut source_grad = Vec::new();
        for (i, v) in mesh.vertices.iter().enumerate() {
            if let Some(&(u, vv)) = mesh.source_pixel.get(i) {
                if !source.in_mask(u as usize, vv as usize) {
                    continue;
                }
            }
            let g = source.intrinsics.project(v).ok().and_then(|px| {
                let du = src.du.bilinear(&px).ok()?;
                let dv = src.dv.bilinear(&px).ok()?;
                Some(Vector2::new(du.value, dv.value))
            });
            vertices.push(*v);
            source_grad.push(g);
        }
        Ok(Self {
            weights: graph.skinning_many(&vertices, influences),
            vertices,
            source_grad,
            target: image_gradient(&target.grayscale())?,
            intrinsics: target.intrinsics,
            lambda: lambda_photo,
        })
    }
}

impl<T: Real> ResidualTerm<T> for PhotometricTerm<T> {
    fn name(&self) -> &'static str {
        "photometric"
    }

    fn is_active(&self) -> bool {
        self.lambda > 0.0 && !self.vertices.is_empty()
    }

    fn evaluate(&self, graph: &DeformationGraph<T>, cache: &WarpCache<T>) -> Vec<ResidualBlock<T>> {
        let w: T = sqrt_weight(self.lambda);
        self.vertices
            .iter()
            .zip(&self.weights)
            .zip(&self.source_grad)
            .enumerate()
            .filter_map(|(source, ((v, sw), gs))| {
                let gs = (*gs)?;
                let (warped, jac) = graph.warp_with_jacobian(cache, sw, v);
                let (px, pj) = self.intrinsics.project_with_jacobian(&warped)?;
                let du = self.target.du.bilinear(&px).ok()?;
                let dv = self.target.dv.bilinear(&px).ok()?;
                let row_u = du.grad.transpose() * pj * w;
                let row_v = dv.grad.transpose() * pj * w;
                let jacobian = jac
                    .iter()
                    .map(|(n, j)| {
                        let mut m = Matrix3x6::zeros();
                        m.row_mut(0).copy_from(&(row_u * j));
                        m.row_mut(1).copy_from(&(row_v * j));
                        (*n, m)
                    })
                    .collect();
                Some(ResidualBlock {
                    kind: TermKind::Photometric,
                    source,
                    dim: 2,
                    residual: Vector3::new((du.value - gs.x) * w, (dv.value - gs.y) * w, T::zero()),
                    jacobian,
                    weight: w,
                    tag: 0,
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
    use crate::geometry::{frame_to_mesh, Image};
    use nalgebra::DVector;

    const W: usize = 48;
    const H: usize = 36;

    fn k() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(80.0, 80.0, 23.5, 17.5, W, H).unwrap()
    }

    fn texture(u: f64, v: f64) -> f64 {
        0.5 + 0.25 * (0.45 * u).sin() * (0.3 * v).cos() + 0.1 * (0.2 * u + 0.35 * v).sin()
    }

    fn frame(shift: f64) -> RgbdFrame<f64> {
        let color = Image::from_fn(W, H, |u, v| {
            let c = texture(u as f64 - shift, v as f64);
            [c, c, c]
        });
        RgbdFrame::new(color, Image::filled(W, H, 1.0), k(), None).unwrap()
    }

    fn setup(shift: f64) -> (RgbdFrame<f64>, RgbdFrame<f64>, SurfaceMesh<f64>, DeformationGraph<f64>) {
        let src = frame(0.0);
        let tgt = frame(shift);
        let mesh = frame_to_mesh(&src, 0.05).unwrap();
        let g = DeformationGraph::sample_from_mesh(&mesh, 0.08, 4).unwrap();
        (src, tgt, mesh, g)
    }

    #[test]
    fn identical_frames_are_zero() {
        let (src, _, mesh, g) = setup(0.0);
        let t = PhotometricTerm::new(&mesh, &g, &src, &src, 0.001, 4).unwrap();
        let e = EnergySpec::assemble(vec![Box::new(t)]).unwrap().evaluate(&g);
        assert_eq!(e.blocks.len(), mesh.len());
        assert!(e.total() < 1e-28);
    }

    #[test]
    fn constant_color_is_zero_under_any_warp() {
        let flat = RgbdFrame::from_depth(Image::filled(W, H, 1.0), k()).unwrap();
        let mesh = frame_to_mesh(&flat, 0.05).unwrap();
        let mut g = DeformationGraph::sample_from_mesh(&mesh, 0.08, 4).unwrap();
        let x = DVector::from_fn(g.param_count(), |i, _| ((i % 5) as f64 - 2.0) * 0.01);
        g.set_params(&x);
        let t = PhotometricTerm::new(&mesh, &g, &flat, &flat, 0.001, 4).unwrap();
        let e = EnergySpec::assemble(vec![Box::new(t)]).unwrap().evaluate(&g);
        assert!(!e.blocks.is_empty());
        assert_eq!(e.total(), 0.0);
    }

    #[test]
    fn translated_pair_is_zero_at_interior() {
        let (src, tgt, mesh, mut g) = setup(3.0);
        // 3 px at depth 1 m and fx = 80
        for n in &mut g.nodes {
            n.translation = Vector3::new(3.0 / 80.0, 0.0, 0.0);
        }
        let t = PhotometricTerm::new(&mesh, &g, &src, &tgt, 1.0, 4).unwrap();
        let e = EnergySpec::assemble(vec![Box::new(t)]).unwrap().evaluate(&g);
        let mut interior = 0;
        for b in &e.blocks {
            let (u, v) = mesh.source_pixel[b.source];
            if (2..W as u32 - 5).contains(&u) && (2..H as u32 - 2).contains(&v) {
                interior += 1;
                assert!(b.residual.norm() < 1e-9, "{:?} at {u},{v}", b.residual);
            }
        }
        assert!(interior > 500);
    }

    #[test]
    fn skips_vertices_outside_mask() {
        let (src, tgt, mesh, g) = setup(0.0);
        let src = src.with_mask(Image::from_fn(W, H, |u, _| u < 10)).unwrap();
        let t = PhotometricTerm::new(&mesh, &g, &src, &tgt, 0.001, 4).unwrap();
        let e = EnergySpec::assemble(vec![Box::new(t)]).unwrap().evaluate(&g);
        assert_eq!(e.blocks.len(), 10 * H);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (src, tgt, mesh, mut g) = setup(1.5);
        let x = DVector::from_fn(g.param_count(), |i, _| ((i * 7 % 9) as f64 - 4.0) * 0.003);
        g.set_params(&x);
        let mesh = mesh.subsample(3);
        let t = PhotometricTerm::new(&mesh, &g, &src, &tgt, 0.001, 4).unwrap();
        let spec = EnergySpec::assemble(vec![Box::new(t)]).unwrap();
        let (err, n) = max_jacobian_error(&spec, &g, 1e-6);
        assert!(n > 100);
        assert!(err < 1e-4, "{err}");
    }
}
