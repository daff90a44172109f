use nalgebra::{Matrix3, Matrix3x6};

use super::{sqrt_weight, ResidualBlock, ResidualTerm, TermKind};
use crate::graph::{rotated_vector_jacobian, DeformationGraph, WarpCache};
use crate::scalar::Real;

/// As-rigid-as-possible regularizer over graph edges. For each directed edge
/// `(i, j)`: `R_i (g_j - g_i) + g_i + t_i - (g_j + t_j)`.
#[derive(Clone, Debug)]
pub struct ArapTerm {
    lambda: f64,
}

impl ArapTerm {
    pub fn new(lambda_reg: f64) -> Self {
        Self { lambda: lambda_reg }
    }
}

impl<T: Real> ResidualTerm<T> for ArapTerm {
    fn name(&self) -> &'static str {
        "arap"
    }

    fn is_active(&self) -> bool {
        self.lambda > 0.0
    }

    fn evaluate(&self, graph: &DeformationGraph<T>, cache: &WarpCache<T>) -> Vec<ResidualBlock<T>> {
        let w: T = sqrt_weight(self.lambda);
        let directed = graph
            .edges
            .iter()
            .flat_map(|&(a, b)| [(a, b), (b, a)]);
        directed
            .enumerate()
            .map(|(source, (i, j))| {
                let ni = &graph.nodes[i];
                let nj = &graph.nodes[j];
                let d = nj.position - ni.position;
                let r = cache.rotations[i] * d + ni.position + ni.translation
                    - (nj.position + nj.translation);
                let mut ji = Matrix3x6::zeros();
                ji.fixed_view_mut::<3, 3>(0, 0).copy_from(
                    &(rotated_vector_jacobian(&cache.rotations[i], &cache.right_jacobians[i], &d) * w),
                );
                ji.fixed_view_mut::<3, 3>(0, 3)
                    .copy_from(&(Matrix3::identity() * w));
                let mut jj = Matrix3x6::zeros();
                jj.fixed_view_mut::<3, 3>(0, 3)
                    .copy_from(&(-Matrix3::identity() * w));
                ResidualBlock {
                    kind: TermKind::Arap,
                    source,
                    dim: 3,
                    residual: r * w,
                    jacobian: vec![(i, ji), (j, jj)],
                    weight: w,
                    tag: 0,
                    sample_at: None,
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::test_support::max_jacobian_error;
    use crate::energy::EnergySpec;
    use crate::graph::rotation_exp;
    use nalgebra::{DVector, Vector3};

    fn graph() -> DeformationGraph<f64> {
        let pos: Vec<_> = (0..6)
            .map(|i| Vector3::new((i as f64 * 0.7).sin() * 0.1, (i as f64 * 1.3).cos() * 0.1, 1.0 + i as f64 * 0.02))
            .collect();
        DeformationGraph::from_positions(&pos, 0.05, 3).unwrap()
    }

    fn energy(g: &DeformationGraph<f64>, lambda: f64) -> f64 {
        EnergySpec::assemble(vec![Box::new(ArapTerm::new(lambda))]).unwrap().energy(g)
    }

    #[test]
    fn zero_for_identity_and_translation() {
        let mut g = graph();
        assert!(energy(&g, 1.0) < 1e-28);
        for n in &mut g.nodes {
            n.translation = Vector3::new(0.1, -0.2, 0.3);
        }
        assert!(energy(&g, 1.0) < 1e-28);
    }

    #[test]
    fn zero_for_global_rotation() {
        let mut g = graph();
        let theta = Vector3::new(0.3, 0.1, -0.2);
        let r = rotation_exp(&theta);
        for n in &mut g.nodes {
            n.rotation = theta;
            n.translation = r * n.position - n.position;
        }
        assert!(energy(&g, 1.0) < 1e-25);
    }

    #[test]
    fn translation_invariance_and_weight_scaling() {
        let mut g = graph();
        let x = DVector::from_fn(g.param_count(), |i, _| ((i * 13 % 7) as f64 - 3.0) * 0.03);
        g.set_params(&x);
        let e = energy(&g, 1.0);
        assert!(e > 0.0);
        assert!((energy(&g, 2.0) - 2.0 * e).abs() < 1e-12 * e);
        for n in &mut g.nodes {
            n.translation += Vector3::new(0.5, 0.25, -0.1);
        }
        assert!((energy(&g, 1.0) - e).abs() < 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut g = graph();
        let x = DVector::from_fn(g.param_count(), |i, _| ((i * 29 % 11) as f64 - 5.0) * 0.05);
        g.set_params(&x);
        let spec = EnergySpec::assemble(vec![Box::new(ArapTerm::new(3.0))]).unwrap();
        let (err, n) = max_jacobian_error(&spec, &g, 1e-6);
        assert!(n > 0);
        assert!(err < 1e-4, "{err}");
    }
}
