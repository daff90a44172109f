use nalgebra::Vector3;

use super::AlignmentConfig;
use crate::energy::{
    ArapTerm, DenseIcpTerm, EnergySpec, EnergyWeights, PhotometricTerm, ResidualTerm, SilhouetteTerm, SparseMatch,
    SparseTerm,
};
use crate::error::{Error, Result};
use crate::geometry::{distance_map, frame_to_mesh, Image, RgbdFrame};
use crate::graph::DeformationGraph;
use crate::scalar::Real;
use crate::solver::{gauss_newton, SolveReport};

/// Dense matches from every source-mesh vertex into the target frame.
#[derive(Clone, Debug)]
pub struct PairAlignment<T: Real> {
    pub source_pixels: Vec<(u32, u32)>,
    /// Source vertices (m, source camera space).
    pub source_points: Vec<Vector3<T>>,
    /// Matched positions (m, target camera space).
    pub matches: Vec<Vector3<T>>,
    pub valid: Vec<bool>,
    /// Solution of this direction, defined over the source frame.
    pub graph: DeformationGraph<T>,
    /// Solution of the opposite direction once interpolated.
    pub backward: Option<DeformationGraph<T>>,
    pub influences: usize,
    pub report: SolveReport,
}

impl<T: Real> PairAlignment<T> {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

fn require_mask<T: Real>(frame: &RgbdFrame<T>, which: &str) -> Result<Image<bool>> {
    match &frame.mask {
        Some(m) if m.data().iter().any(|x| *x) => Ok(m.clone()),
        _ => Err(Error::invalid(format!("{which} frame needs a non-empty mask"))),
    }
}

/// Non-rigidly aligns the masked source object to the target frame.
pub fn align_pair<T: Real>(
    source: &RgbdFrame<T>,
    target: &RgbdFrame<T>,
    sparse: &[SparseMatch<T>],
    weights: &EnergyWeights,
    config: &AlignmentConfig,
) -> Result<PairAlignment<T>> {
    weights.validate()?;
    config.validate()?;
    require_mask(source, "source")?;
    let target_mask = require_mask(target, "target")?;
    let k = config.influences;

    let mesh = frame_to_mesh(source, T::lit(config.max_edge))?;
    let mut graph = DeformationGraph::sample_from_mesh(&mesh, T::lit(config.node_radius), config.edge_neighbors)?;
    let distance = distance_map::<T>(&target_mask)?;

    let mut terms: Vec<Box<dyn ResidualTerm<T> + '_>> = vec![
        Box::new(DenseIcpTerm::new(&mesh, &graph, target, config.icp, k)),
        Box::new(ArapTerm::new(weights.lambda_reg)),
        Box::new(SparseTerm::new(&graph, sparse.to_vec(), weights.lambda_sparse, k)),
        Box::new(SilhouetteTerm::new(
            &mesh,
            &graph,
            &distance,
            target.intrinsics,
            weights.lambda_silh,
            k,
        )),
    ];
    if weights.lambda_photo > 0.0 {
        terms.push(Box::new(PhotometricTerm::new(
            &mesh,
            &graph,
            source,
            target,
            weights.lambda_photo,
            k,
        )?));
    }
    let spec = EnergySpec::assemble(terms)?;
    let report = gauss_newton(&spec, &mut graph, &config.solver)?;

    let matches: Vec<Vector3<T>> = graph.warp_mesh(&mesh, k).vertices;
    let valid = matches
        .iter()
        .map(|m| m.iter().all(|x| x.is_finite_real()))
        .collect();
    Ok(PairAlignment {
        source_pixels: mesh.source_pixel.clone(),
        source_points: mesh.vertices,
        matches,
        valid,
        graph,
        backward: None,
        influences: k,
        report,
    })
}

/// Fuses a source-to-target alignment with a target-to-source one.
///
/// For a source vertex `v` with forward match `m`, the backward warp of `m`
/// is the cycle point `c`, and the inverse backward warp of `v` is a second
/// estimate `m'`. The result is the midpoint of `m` and `m'`; the vertex is
/// invalid when `|c - v| > gate` or when it was invalid already.
pub fn forward_backward_interpolate<T: Real>(
    fwd: &PairAlignment<T>,
    bwd: &PairAlignment<T>,
    gate: f64,
    inverse_iterations: usize,
) -> PairAlignment<T> {
    use rayon::prelude::*;
    let bg = &bwd.graph;
    let k = bwd.influences;
    let gate = T::lit(gate);
    let half = T::lit(0.5);
    let fused: Vec<(Vector3<T>, bool)> = fwd
        .source_points
        .par_iter()
        .zip(fwd.matches.par_iter())
        .zip(fwd.valid.par_iter())
        .map(|((v, m), &ok)| {
            if !ok {
                return (*m, false);
            }
            let cycle = bg.warp_point(&bg.skinning(m, k), m);
            let inverse = bg.inverse_warp_point(v, k, inverse_iterations);
            let fusedm = (m + inverse) * half;
            let consistent = (cycle - v).norm() <= gate && fusedm.iter().all(|x| x.is_finite_real());
            (fusedm, consistent)
        })
        .collect();
    let (matches, valid) = fused.into_iter().unzip();
    PairAlignment {
        source_pixels: fwd.source_pixels.clone(),
        source_points: fwd.source_points.clone(),
        matches,
        valid,
        graph: fwd.graph.clone(),
        backward: Some(bwd.graph.clone()),
        influences: fwd.influences,
        report: fwd.report.clone(),
    }
}
