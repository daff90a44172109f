//! `DDHM` heatmap files and their manifest.
//!
//! File layout (little-endian): magic `DDHM`, `u32` height, `u32` width,
//! `f32` depth, `f32` visibility, `u32` query u, `u32` query v, then
//! `height * width` `f32` values in row-major order.

use std::collections::HashMap;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CorrespondenceProvider, Heatmap, HeatmapPrediction};
use crate::error::{Error, Result};
use crate::geometry::{resample, Image, RgbdFrame};
use crate::scalar::Real;

const MAGIC: &[u8; 4] = b"DDHM";
const HEADER_LEN: usize = 28;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub pair: String,
    pub query_index: usize,
    pub query_u: u32,
    pub query_v: u32,
    /// Path relative to the manifest directory.
    pub file: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

pub fn write_heatmap_file<T: Real>(path: &Path, pred: &HeatmapPrediction<T>) -> Result<()> {
    let (w, h) = pred.heatmap.dims();
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(h as u32).to_le_bytes())?;
    out.write_all(&(w as u32).to_le_bytes())?;
    out.write_all(&pred.depth.to_f32_lossy().to_le_bytes())?;
    out.write_all(&pred.visibility.to_f32_lossy().to_le_bytes())?;
    out.write_all(&pred.query.0.to_le_bytes())?;
    out.write_all(&pred.query.1.to_le_bytes())?;
    for v in 0..h {
        for u in 0..w {
            out.write_all(&pred.heatmap.get(u, v).to_f32_lossy().to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a heatmap file at its stored resolution.
pub fn read_heatmap_file<T: Real>(path: &Path) -> Result<HeatmapPrediction<T>> {
    let bytes = std::fs::read(path)?;
    let bad = |reason: &str| Error::format(path, reason);
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("missing DDHM header"));
    }
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    let h = u32::from_le_bytes(word(4)) as usize;
    let w = u32::from_le_bytes(word(8)) as usize;
    let depth = f32::from_le_bytes(word(12));
    let visibility = f32::from_le_bytes(word(16));
    let query = (u32::from_le_bytes(word(20)), u32::from_le_bytes(word(24)));
    if w.checked_mul(h).and_then(|n| n.checked_mul(4)) != Some(bytes.len() - HEADER_LEN) {
        return Err(bad("payload size does not match header dimensions"));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    let pred = HeatmapPrediction {
        heatmap: Heatmap::cropped(&Image::from_vec(w, h, data)?),
        depth: T::lit(depth as f64),
        visibility: T::lit(visibility as f64),
        query,
    };
    pred.validate().map_err(|e| bad(&e.to_string()))?;
    Ok(pred)
}

/// Writes one file per prediction under `dir` and records them in `manifest`.
pub fn export_heatmaps<T: Real>(
    dir: &Path,
    pair: &str,
    predictions: &[HeatmapPrediction<T>],
    manifest: &mut Manifest,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let stem: String = pair
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    for (i, p) in predictions.iter().enumerate() {
        let file = format!("{stem}_{i:05}.ddhm");
        write_heatmap_file(&dir.join(&file), p)?;
        manifest.entries.push(ManifestEntry {
            pair: pair.to_string(),
            query_index: i,
            query_u: p.query.0,
            query_v: p.query.1,
            file,
        });
    }
    Ok(())
}

/// Serves predictions exported to a directory, looked up by pair and query pixel.
#[derive(Clone, Debug)]
pub struct FileProvider {
    dir: PathBuf,
    index: HashMap<(String, u32, u32), String>,
}

impl FileProvider {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = Manifest::load(dir)?;
        let index = manifest
            .entries
            .into_iter()
            .map(|e| ((e.pair, e.query_u, e.query_v), e.file))
            .collect();
        Ok(Self {
            dir: dir.to_path_buf(),
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }
}

impl<T: Real> CorrespondenceProvider<T> for FileProvider {
    fn predict(
        &self,
        pair: &str,
        _source: &RgbdFrame<T>,
        target: &RgbdFrame<T>,
        queries: &[(u32, u32)],
    ) -> Result<Vec<HeatmapPrediction<T>>> {
        queries
            .iter()
            .map(|&(u, v)| {
                let file = self
                    .index
                    .get(&(pair.to_string(), u, v))
                    .ok_or_else(|| Error::Lookup {
                        pair: pair.to_string(),
                        u,
                        v,
                    })?;
                let mut pred: HeatmapPrediction<T> = read_heatmap_file(&self.dir.join(file))?;
                let dims = (target.width(), target.height());
                if pred.heatmap.dims() != dims {
                    let dense = resample(&pred.heatmap.to_image(), dims.0, dims.1).map(|x| x.max(T::zero()));
                    pred.heatmap = Heatmap::cropped(&dense);
                }
                Ok(pred)
            })
            .collect()
    }
}
