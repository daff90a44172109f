//! End-to-end procedures: sequence reconstruction, dense frame-pair
//! alignment with forward-backward interpolation, and deformation-aware
//! sample weighting.

mod align;
mod io;
mod reconstruct;
mod rigid;

use serde::{Deserialize, Serialize};

use crate::energy::IcpConfig;
use crate::error::{Error, Result};
use crate::geometry::DEFAULT_DISCONTINUITY;
use crate::graph::{DEFAULT_EDGE_NEIGHBORS, DEFAULT_INFLUENCES, MAX_INFLUENCES};
use crate::solver::SolverConfig;
use crate::tsdf::{DEFAULT_TRUNCATION_VOXELS, DEFAULT_VOXEL_SIZE};

pub use align::{align_pair, forward_backward_interpolate, PairAlignment};
pub use io::{read_dense_matches, write_dense_matches, DenseMatchRecord, SequenceOutput};
pub use reconstruct::{reconstruct_sequence, reference_queries, SequenceResult, Tracking};
pub use rigid::{
    deformation_weights, procrustes, ransac_rigid, sample_by_weight, RansacConfig, RansacFit, RigidTransform,
};

/// Settings for [`reconstruct_sequence`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructionConfig {
    /// Node sampling radius and skinning bandwidth (m).
    pub node_radius: f64,
    pub edge_neighbors: usize,
    pub influences: usize,
    pub voxel_size: f64,
    pub truncation_voxels: f64,
    /// Space added around the first frame's object when sizing the volume (m).
    pub volume_margin: f64,
    /// Longest triangle edge when meshing the first frame (m).
    pub max_edge: f64,
    /// Add nodes over fused geometry not covered by the graph.
    pub grow_graph: bool,
    pub icp: IcpConfig,
    pub solver: SolverConfig,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            node_radius: 0.08,
            edge_neighbors: DEFAULT_EDGE_NEIGHBORS,
            influences: DEFAULT_INFLUENCES,
            voxel_size: DEFAULT_VOXEL_SIZE,
            truncation_voxels: DEFAULT_TRUNCATION_VOXELS,
            volume_margin: 0.15,
            max_edge: DEFAULT_DISCONTINUITY,
            grow_graph: true,
            icp: IcpConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<()> {
        check_graph(self.node_radius, self.edge_neighbors, self.influences)?;
        for (name, v) in [
            ("voxel_size", self.voxel_size),
            ("truncation_voxels", self.truncation_voxels),
            ("max_edge", self.max_edge),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be > 0")));
            }
        }
        if !(self.volume_margin >= 0.0) {
            return Err(Error::invalid("volume_margin must be >= 0"));
        }
        self.solver.validate()
    }
}

/// Settings for [`align_pair`] and [`forward_backward_interpolate`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignmentConfig {
    pub node_radius: f64,
    pub edge_neighbors: usize,
    pub influences: usize,
    pub max_edge: f64,
    /// Cycle error above which an interpolated match is invalidated (m).
    pub cycle_gate: f64,
    /// Newton iterations when inverting the backward warp.
    pub inverse_iterations: usize,
    pub icp: IcpConfig,
    pub solver: SolverConfig,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            node_radius: 0.05,
            edge_neighbors: DEFAULT_EDGE_NEIGHBORS,
            influences: DEFAULT_INFLUENCES,
            max_edge: DEFAULT_DISCONTINUITY,
            cycle_gate: 0.02,
            inverse_iterations: 20,
            icp: IcpConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        check_graph(self.node_radius, self.edge_neighbors, self.influences)?;
        if !(self.cycle_gate > 0.0) || !(self.max_edge > 0.0) {
            return Err(Error::invalid("cycle_gate and max_edge must be > 0"));
        }
        self.solver.validate()
    }
}

fn check_graph(radius: f64, edges: usize, influences: usize) -> Result<()> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid("node_radius must be > 0"));
    }
    if edges == 0 {
        return Err(Error::invalid("edge_neighbors must be >= 1"));
    }
    if influences == 0 || influences > MAX_INFLUENCES {
        return Err(Error::invalid(format!("influences must be in 1..={MAX_INFLUENCES}")));
    }
    Ok(())
}
