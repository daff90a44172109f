//! Canonical-space truncated signed distance volume.

mod extract;
mod ply;

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{RgbdFrame, SurfaceMesh};
use crate::graph::{DeformationGraph, DEFAULT_INFLUENCES};
use crate::scalar::Real;

pub use extract::extract_mesh;
pub use ply::{read_ply, write_ply, PlyFormat};

/// Default voxel edge length (m).
pub const DEFAULT_VOXEL_SIZE: f64 = 0.01;
/// Default truncation distance in voxels.
pub const DEFAULT_TRUNCATION_VOXELS: f64 = 4.0;
/// Cap on the integration weight.
pub const MAX_WEIGHT: f64 = 64.0;

const CHECKPOINT_MAGIC: &[u8; 4] = b"TSDF";
const CHECKPOINT_VERSION: u32 = 1;

/// Dense voxel grid. Voxel `(i, j, k)` is centered at `origin + voxel_size * (i, j, k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TsdfVolume<T: Real> {
    pub origin: Vector3<T>,
    pub voxel_size: T,
    pub dims: [usize; 3],
    pub truncation: T,
    /// Signed distance over truncation, in `[-1, 1]`; x varies fastest.
    pub tsdf: Vec<T>,
    /// Zero for unobserved voxels.
    pub weight: Vec<T>,
}

impl<T: Real> TsdfVolume<T> {
    pub fn new(origin: Vector3<T>, voxel_size: T, dims: [usize; 3], truncation: T) -> Result<Self> {
        if !(voxel_size > T::zero()) || !(truncation > T::zero()) {
            return Err(Error::invalid("voxel size and truncation must be > 0"));
        }
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::invalid(format!("volume dims {dims:?} must be >= 2")));
        }
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|x| x.checked_mul(dims[2]))
            .filter(|&n| n <= 1 << 31)
            .ok_or_else(|| Error::invalid(format!("volume dims {dims:?} too large")))?;
        Ok(Self {
            origin,
            voxel_size,
            dims,
            truncation,
            tsdf: vec![T::one(); n],
            weight: vec![T::zero(); n],
        })
    }

    /// Volume covering the bounding box of `points` grown by `margin` on every side.
    pub fn around_points(points: &[Vector3<T>], voxel_size: T, truncation: T, margin: T) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptyMesh)?;
        let (mut lo, mut hi) = (*first, *first);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let pad = Vector3::repeat(margin);
        let lo = lo - pad;
        let extent = hi + pad - lo;
        let dims = [0, 1, 2].map(|a| {
            (extent[a] / voxel_size).ceil().to_f64_lossy() as usize + 1
        });
        Self::new(lo, voxel_size, dims, truncation)
    }

    pub fn len(&self) -> usize {
        self.tsdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tsdf.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vector3<T> {
        self.origin
            + Vector3::new(
                T::from_usize_lossy(i),
                T::from_usize_lossy(j),
                T::from_usize_lossy(k),
            ) * self.voxel_size
    }

    pub fn observed_count(&self) -> usize {
        self.weight.iter().filter(|w| **w > T::zero()).count()
    }

    /// Fuses one depth frame. Voxel centers are warped into the frame with
    /// `graph` (identity when `None`) and projected to the nearest pixel.
    pub fn integrate(&mut self, frame: &RgbdFrame<T>, graph: Option<&DeformationGraph<T>>) {
        let [nx, ny, _] = self.dims;
        let slice = nx * ny;
        let cache = graph.map(|g| (g, g.cache(), g.positions()));
        let trunc = self.truncation;
        let w_max = T::lit(MAX_WEIGHT);
        let origin = self.origin;
        let voxel = self.voxel_size;
        self.tsdf
            .par_chunks_mut(slice)
            .zip(self.weight.par_chunks_mut(slice))
            .enumerate()
            .for_each(|(k, (tsdf, weight))| {
                for j in 0..ny {
                    for i in 0..nx {
                        let c = origin
                            + Vector3::new(
                                T::from_usize_lossy(i),
                                T::from_usize_lossy(j),
                                T::from_usize_lossy(k),
                            ) * voxel;
                        let live = match &cache {
                            Some((g, wc, pos)) => {
                                let sw = crate::graph::skinning(pos, g.sigma, &c, DEFAULT_INFLUENCES);
                                g.warp_point_cached(wc, &sw, &c)
                            }
                            None => c,
                        };
                        let Some((u, v)) = frame.intrinsics.pixel_of(&live) else {
                            continue;
                        };
                        let Some(d) = frame.depth_at(u, v) else {
                            continue;
                        };
                        let sdf = d - live.z;
                        if sdf < -trunc {
                            continue;
                        }
                        let obs = sdf.min(trunc) / trunc;
                        let idx = i + nx * j;
                        let w = weight[idx];
                        let alpha = T::one() / (w.min(w_max) + T::one());
                        tsdf[idx] += alpha * (obs - tsdf[idx]);
                        weight[idx] = (w + T::one()).min(w_max);
                    }
                }
            });
    }

    /// Writes origin, voxel size, dims, truncation, then the tsdf and weight
    /// arrays as little-endian `f32`.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for a in 0..3 {
            out.write_all(&self.origin[a].to_f64_lossy().to_le_bytes())?;
        }
        out.write_all(&self.voxel_size.to_f64_lossy().to_le_bytes())?;
        for d in self.dims {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        out.write_all(&self.truncation.to_f64_lossy().to_le_bytes())?;
        for x in self.tsdf.iter().chain(&self.weight) {
            out.write_all(&x.to_f32_lossy().to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::format(path, reason);
        let mut input = BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a TSDF checkpoint"));
        }
        let mut u32b = [0u8; 4];
        let mut f64b = [0u8; 8];
        input.read_exact(&mut u32b)?;
        if u32::from_le_bytes(u32b) != CHECKPOINT_VERSION {
            return Err(bad("unsupported checkpoint version"));
        }
        let mut read_f64 = |input: &mut BufReader<std::fs::File>| -> Result<T> {
            input.read_exact(&mut f64b)?;
            Ok(T::lit(f64::from_le_bytes(f64b)))
        };
        let origin = Vector3::new(read_f64(&mut input)?, read_f64(&mut input)?, read_f64(&mut input)?);
        let voxel_size = read_f64(&mut input)?;
        let mut dims = [0usize; 3];
        for d in &mut dims {
            input.read_exact(&mut u32b)?;
            *d = u32::from_le_bytes(u32b) as usize;
        }
        let truncation = read_f64(&mut input)?;
        let mut vol = Self::new(origin, voxel_size, dims, truncation).map_err(|e| bad(&e.to_string()))?;
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() != 8 * vol.len() {
            return Err(bad("voxel array size does not match dims"));
        }
        let mut values = bytes
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64));
        for x in vol.tsdf.iter_mut().chain(vol.weight.iter_mut()) {
            *x = values.next().expect("length checked");
        }
        Ok(vol)
    }
}

/// Applies the graph warp to a canonical mesh with default skinning.
pub fn warp_mesh<T: Real>(mesh: &SurfaceMesh<T>, graph: &DeformationGraph<T>) -> SurfaceMesh<T> {
    graph.warp_mesh(mesh, DEFAULT_INFLUENCES)
}
