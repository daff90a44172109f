use nalgebra::Vector3;

use super::ReconstructionConfig;
use crate::energy::{filter_learned, ArapTerm, DenseIcpTerm, EnergySpec, EnergyWeights, LearnedTerm, ResidualTerm};
use crate::error::{Error, Result};
use crate::geometry::{frame_to_mesh, Image, RgbdFrame, SurfaceMesh};
use crate::graph::DeformationGraph;
use crate::provider::{learned_constraint, pair_name, CorrespondenceProvider};
use crate::solver::{gauss_newton, SolveReport};
use crate::scalar::Real;
use crate::tsdf::{extract_mesh, TsdfVolume};

/// Output of [`reconstruct_sequence`]. Index `f` of the per-frame vectors
/// belongs to input frame `f`; frame 0 is the identity.
#[derive(Clone, Debug)]
pub struct SequenceResult<T: Real> {
    /// Fused model in the first frame's camera space.
    pub canonical: SurfaceMesh<T>,
    pub volume: TsdfVolume<T>,
    pub graphs: Vec<DeformationGraph<T>>,
    /// Canonical model as tracked into each frame.
    pub warped: Vec<SurfaceMesh<T>>,
    pub reports: Vec<SolveReport>,
    /// Nodes sampled from the first frame; only these receive learned
    /// correspondences.
    pub reference_nodes: usize,
    pub influences: usize,
}

impl<T: Real> SequenceResult<T> {
    pub fn frame_count(&self) -> usize {
        self.graphs.len()
    }

    pub fn tracking(&self) -> Tracking<'_, T> {
        Tracking {
            graphs: &self.graphs,
            warped: &self.warped,
            influences: self.influences,
        }
    }
}

/// Per-frame solutions and tracked meshes, borrowed from a
/// [`SequenceResult`] or from a saved output directory.
#[derive(Clone, Copy, Debug)]
pub struct Tracking<'a, T: Real> {
    pub graphs: &'a [DeformationGraph<T>],
    pub warped: &'a [SurfaceMesh<T>],
    pub influences: usize,
}

impl<T: Real> Tracking<'_, T> {
    pub fn frame_count(&self) -> usize {
        self.graphs.len()
    }

    /// Position in frame `frame` of a point given in the camera space of
    /// frame `source`.
    pub fn track_point(&self, source: usize, frame: usize, p: &Vector3<T>) -> Vector3<T> {
        let canonical = if source == 0 {
            *p
        } else {
            self.graphs[source].inverse_warp_point(p, self.influences, 30)
        };
        let g = &self.graphs[frame];
        g.warp_point(&g.skinning(&canonical, self.influences), &canonical)
    }
}

fn numerical_at(frame: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Numerical(msg) => Error::Numerical(format!("frame {frame}: {msg}")),
        other => other,
    }
}

fn node_pixels<T: Real>(reference: &RgbdFrame<T>, graph: &DeformationGraph<T>) -> Vec<(u32, u32)> {
    graph
        .positions()
        .iter()
        .map(|g| {
            let (u, v) = reference
                .intrinsics
                .pixel_of(g)
                .expect("nodes lie on first-frame pixels");
            (u as u32, v as u32)
        })
        .collect()
}

/// First-frame pixels of the reference nodes, in node order. These are the
/// queries [`reconstruct_sequence`] sends to its provider.
pub fn reference_queries<T: Real>(
    first: &RgbdFrame<T>,
    mask: &Image<bool>,
    config: &ReconstructionConfig,
) -> Result<Vec<(u32, u32)>> {
    config.validate()?;
    let reference = first.clone().with_mask(mask.clone())?;
    let mesh = frame_to_mesh(&reference, T::lit(config.max_edge))?;
    let graph = DeformationGraph::sample_from_mesh(&mesh, T::lit(config.node_radius), config.edge_neighbors)?;
    Ok(node_pixels(&reference, &graph))
}

/// Tracks and fuses a sequence into the first frame's space.
///
/// `provider` is queried for every first-frame node against the first frame
/// when `weights.lambda_learned > 0`; it may be `None` otherwise.
pub fn reconstruct_sequence<T: Real>(
    frames: &[RgbdFrame<T>],
    initial_mask: &Image<bool>,
    provider: Option<&dyn CorrespondenceProvider<T>>,
    weights: &EnergyWeights,
    config: &ReconstructionConfig,
) -> Result<SequenceResult<T>> {
    if frames.len() < 2 {
        return Err(Error::invalid("reconstruction needs at least 2 frames"));
    }
    weights.validate()?;
    config.validate()?;
    let use_learned = weights.lambda_learned > 0.0;
    if use_learned && provider.is_none() {
        return Err(Error::invalid("lambda_learned > 0 needs a correspondence provider"));
    }
    if !initial_mask.data().iter().any(|m| *m) {
        return Err(Error::EmptyMask);
    }
    let reference = frames[0].clone().with_mask(initial_mask.clone())?;
    let k = config.influences;
    let radius = T::lit(config.node_radius);

    let first_mesh = frame_to_mesh(&reference, T::lit(config.max_edge))?;
    let mut graph = DeformationGraph::sample_from_mesh(&first_mesh, radius, config.edge_neighbors)?;
    let reference_nodes = graph.len();
    let queries = node_pixels(&reference, &graph);

    let voxel = T::lit(config.voxel_size);
    let mut volume = TsdfVolume::around_points(
        &first_mesh.vertices,
        voxel,
        voxel * T::lit(config.truncation_voxels),
        T::lit(config.volume_margin),
    )?;
    volume.integrate(&reference, None);

    let mut graphs = vec![graph.clone()];
    let mut warped = vec![extract_mesh(&volume)];
    let mut reports = vec![SolveReport {
        initial_energy: 0.0,
        final_energy: 0.0,
        iterations: Vec::new(),
    }];

    for (f, frame) in frames.iter().enumerate().skip(1) {
        let canonical = extract_mesh(&volume);
        if canonical.is_empty() {
            return Err(Error::Numerical(format!("frame {f}: fused model is empty")));
        }
        if config.grow_graph {
            graph.extend(&canonical.vertices, radius, k, config.edge_neighbors);
        }

        let constraints = match provider.filter(|_| use_learned) {
            Some(p) => {
                let preds = p.predict(&pair_name(0, f), &reference, frame, &queries)?;
                let cs = preds
                    .iter()
                    .enumerate()
                    .filter_map(|(node, pred)| learned_constraint(node, pred, frame))
                    .collect();
                filter_learned(cs, &frame.depth)
            }
            None => Vec::new(),
        };

        let terms: Vec<Box<dyn ResidualTerm<T> + '_>> = vec![
            Box::new(DenseIcpTerm::new(&canonical, &graph, frame, config.icp, k)),
            Box::new(ArapTerm::new(weights.lambda_reg)),
            Box::new(LearnedTerm::new(
                constraints,
                frame.intrinsics,
                weights.lambda_learned,
                weights.lambda_point,
            )),
        ];
        let spec = EnergySpec::assemble(terms)?;
        let report = gauss_newton(&spec, &mut graph, &config.solver).map_err(numerical_at(f))?;
        if !report.final_energy.is_finite() || !graph.params().iter().all(|x| x.is_finite_real()) {
            return Err(Error::Numerical(format!("frame {f}: solver diverged")));
        }

        volume.integrate(frame, Some(&graph));
        warped.push(graph.warp_mesh(&canonical, k));
        graphs.push(graph.clone());
        reports.push(report);
    }

    Ok(SequenceResult {
        canonical: extract_mesh(&volume),
        volume,
        graphs,
        warped,
        reports,
        reference_nodes,
        influences: k,
    })
}
