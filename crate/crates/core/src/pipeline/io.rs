//! Dense-match files and reconstruction output directories.
//!
//! Dense matches (little-endian): `u32` count, then per record `u32`
//! source u, `u32` source v, `f32` x, y, z (m) and a `u8` valid flag.

use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PairAlignment, SequenceResult, Tracking};
use crate::error::{Error, Result};
use crate::graph::DeformationGraph;
use crate::geometry::SurfaceMesh;
use crate::scalar::Real;
use crate::tsdf::{read_ply, write_ply, PlyFormat};

const RECORD_LEN: usize = 21;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenseMatchRecord {
    pub source: (u32, u32),
    pub target: [f32; 3],
    pub valid: bool,
}

pub fn write_dense_matches<T: Real>(path: &Path, alignment: &PairAlignment<T>) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    out.write_all(&(alignment.len() as u32).to_le_bytes())?;
    for ((px, m), ok) in alignment
        .source_pixels
        .iter()
        .zip(&alignment.matches)
        .zip(&alignment.valid)
    {
        out.write_all(&px.0.to_le_bytes())?;
        out.write_all(&px.1.to_le_bytes())?;
        for x in m.iter() {
            out.write_all(&x.to_f32_lossy().to_le_bytes())?;
        }
        out.write_all(&[*ok as u8])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dense_matches(path: &Path) -> Result<Vec<DenseMatchRecord>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 4 {
        return Err(Error::format(path, "missing record count"));
    }
    let n = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if bytes.len() != 4 + n * RECORD_LEN {
        return Err(Error::format(path, format!("expected {n} records")));
    }
    Ok(bytes[4..]
        .chunks_exact(RECORD_LEN)
        .map(|r| {
            let w = |o: usize| [r[o], r[o + 1], r[o + 2], r[o + 3]];
            DenseMatchRecord {
                source: (u32::from_le_bytes(w(0)), u32::from_le_bytes(w(4))),
                target: [f32::from_le_bytes(w(8)), f32::from_le_bytes(w(12)), f32::from_le_bytes(w(16))],
                valid: r[20] != 0,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Summary {
    frames: usize,
    influences: usize,
    reference_nodes: usize,
    final_energy: Vec<f64>,
}

fn graph_file(frame: usize) -> String {
    format!("graph_{frame:06}.json")
}

fn mesh_file(frame: usize) -> String {
    format!("frame_{frame:06}.ply")
}

impl<T: Real> SequenceResult<T> {
    /// Writes `canonical.ply`, per-frame `graph_*.json`, `frame_*.ply` and
    /// `trace_*.csv`, and `summary.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_ply(&dir.join("canonical.ply"), &self.canonical, PlyFormat::BinaryLittleEndian)?;
        for (f, (g, m)) in self.graphs.iter().zip(&self.warped).enumerate() {
            g.save_json(&dir.join(graph_file(f)))?;
            write_ply(&dir.join(mesh_file(f)), m, PlyFormat::BinaryLittleEndian)?;
        }
        for (f, r) in self.reports.iter().enumerate().skip(1) {
            r.write_trace_csv(&dir.join(format!("trace_{f:06}.csv")))?;
        }
        let summary = Summary {
            frames: self.frame_count(),
            influences: self.influences,
            reference_nodes: self.reference_nodes,
            final_energy: self.reports.iter().map(|r| r.final_energy).collect(),
        };
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
        Ok(())
    }
}

/// Per-frame graphs and tracked meshes loaded from a saved reconstruction.
#[derive(Clone, Debug)]
pub struct SequenceOutput<T: Real> {
    pub graphs: Vec<DeformationGraph<T>>,
    pub warped: Vec<SurfaceMesh<T>>,
    pub influences: usize,
}

impl<T: Real> SequenceOutput<T> {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("summary.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::dataset(&path, e.to_string()))?;
        let summary: Summary = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let mut graphs = Vec::with_capacity(summary.frames);
        let mut warped = Vec::with_capacity(summary.frames);
        for f in 0..summary.frames {
            graphs.push(DeformationGraph::load_json(&dir.join(graph_file(f)))?);
            warped.push(read_ply(&dir.join(mesh_file(f)))?);
        }
        Ok(Self {
            graphs,
            warped,
            influences: summary.influences,
        })
    }

    pub fn tracking(&self) -> Tracking<'_, T> {
        Tracking {
            graphs: &self.graphs,
            warped: &self.warped,
            influences: self.influences,
        }
    }
}
