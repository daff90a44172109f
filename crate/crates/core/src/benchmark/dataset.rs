//! Dataset layout on disk.
//!
//! ```text
//! <root>/<split>/<sequence>/intrinsics.txt
//!                          depth/000000.png ...
//!                          color/000000.png ...   (optional)
//!                          mask/000000.png ...    (required for annotated frames)
//!                          annotations/<source>_<target>.json
//! ```
//!
//! `<split>` is one of `train`, `val`, `test`. Other entries are ignored.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{io, CameraIntrinsics, RgbdFrame};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

/// One annotated correspondence. Pixels are continuous coordinates; the
/// optional points (m, camera space) override back-projection of the pixel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedMatch {
    pub source: [f64; 2],
    pub target: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_point: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_point: Option<[f64; 3]>,
}

/// A source pixel with no visible counterpart in the target frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Occlusion {
    pub source: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairAnnotation {
    pub source_frame: usize,
    pub target_frame: usize,
    pub matches: Vec<AnnotatedMatch>,
    #[serde(default)]
    pub occlusions: Vec<Occlusion>,
}

impl PairAnnotation {
    pub fn file_name(&self) -> String {
        format!("{:06}_{:06}.json", self.source_frame, self.target_frame)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::dataset(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Back-projects an annotated pixel through the frame's depth, rounding to
/// the nearest pixel. `None` when the pixel has no depth.
pub fn pixel_point<T: Real>(frame: &RgbdFrame<T>, px: [f64; 2]) -> Option<Vector3<f64>> {
    let (u, v) = (px[0].round(), px[1].round());
    if !(u >= 0.0 && v >= 0.0) {
        return None;
    }
    frame
        .point_at(u as usize, v as usize)
        .map(|p| p.map(|x| x.to_f64_lossy()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameFiles {
    pub depth: PathBuf,
    pub color: Option<PathBuf>,
    pub mask: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceIndex {
    pub name: String,
    pub split: Split,
    pub dir: PathBuf,
    pub intrinsics: PathBuf,
    pub frames: Vec<FrameFiles>,
    /// Keyed by `(source_frame, target_frame)`.
    pub pairs: BTreeMap<(usize, usize), PairAnnotation>,
}

impl SequenceIndex {
    pub fn load_intrinsics<T: Real>(&self) -> Result<CameraIntrinsics<T>> {
        io::read_intrinsics(&self.intrinsics)
    }

    pub fn load_frame<T: Real>(&self, index: usize) -> Result<RgbdFrame<T>> {
        let f = self
            .frames
            .get(index)
            .ok_or_else(|| Error::dataset(&self.dir, format!("no frame {index}")))?;
        io::load_frame(
            &f.depth,
            f.color.as_deref(),
            f.mask.as_deref(),
            self.load_intrinsics()?,
        )
    }

    pub fn load_frames<T: Real>(&self) -> Result<Vec<RgbdFrame<T>>> {
        (0..self.frames.len()).map(|i| self.load_frame(i)).collect()
    }

    /// Pair identifier unique across the dataset.
    pub fn pair_id(&self, source: usize, target: usize) -> String {
        format!("{}/{}/{source}-{target}", self.split, self.name)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub sequences: Vec<SequenceIndex>,
}

impl DatasetIndex {
    pub fn pair_count(&self) -> usize {
        self.sequences.iter().map(|s| s.pairs.len()).sum()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SequenceIndex> {
        self.sequences.iter().filter(move |s| s.split == split)
    }

    pub fn sequence(&self, name: &str) -> Option<&SequenceIndex> {
        self.sequences.iter().find(|s| s.name == name)
    }
}

fn frame_file(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("{index:06}.png"))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::dataset(dir, e.to_string()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    out.sort();
    Ok(out)
}

fn load_sequence(dir: &Path, name: String, split: Split) -> Result<SequenceIndex> {
    let intrinsics = dir.join("intrinsics.txt");
    if !intrinsics.is_file() {
        return Err(Error::dataset(&intrinsics, "missing intrinsics file"));
    }
    let depth_dir = dir.join("depth");
    if !depth_dir.is_dir() {
        return Err(Error::dataset(&depth_dir, "missing depth directory"));
    }
    let color_dir = dir.join("color");
    let mask_dir = dir.join("mask");
    let mut frames = Vec::new();
    for (i, path) in sorted_entries(&depth_dir)?.into_iter().enumerate() {
        if path != frame_file(&depth_dir, i) {
            return Err(Error::dataset(
                &path,
                format!("expected consecutive frame files, wanted {:06}.png", i),
            ));
        }
        let color = if color_dir.is_dir() {
            let c = frame_file(&color_dir, i);
            if !c.is_file() {
                return Err(Error::dataset(&c, "missing color frame"));
            }
            Some(c)
        } else {
            None
        };
        let m = frame_file(&mask_dir, i);
        frames.push(FrameFiles {
            depth: path,
            color,
            mask: m.is_file().then_some(m),
        });
    }

    let mut pairs = BTreeMap::new();
    let ann_dir = dir.join("annotations");
    if ann_dir.is_dir() {
        for path in sorted_entries(&ann_dir)? {
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let ann = PairAnnotation::load(&path)?;
            for f in [ann.source_frame, ann.target_frame] {
                if f >= frames.len() {
                    return Err(Error::dataset(&path, format!("frame {f} does not exist")));
                }
                if frames[f].mask.is_none() {
                    return Err(Error::dataset(
                        frame_file(&mask_dir, f),
                        format!("mask referenced by {} is missing", path.display()),
                    ));
                }
            }
            let key = (ann.source_frame, ann.target_frame);
            if pairs.insert(key, ann).is_some() {
                return Err(Error::dataset(
                    &path,
                    format!("duplicate pair {}-{}", key.0, key.1),
                ));
            }
        }
    }
    Ok(SequenceIndex {
        name,
        split,
        dir: dir.to_path_buf(),
        intrinsics,
        frames,
        pairs,
    })
}

/// Indexes and validates a dataset directory.
pub fn load_dataset(root: &Path) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return Err(Error::dataset(root, "dataset root is not a directory"));
    }
    let mut sequences = Vec::new();
    let mut seen: HashMap<String, Split> = HashMap::new();
    for split in Split::ALL {
        let split_dir = root.join(split.dir_name());
        if !split_dir.is_dir() {
            continue;
        }
        for dir in sorted_entries(&split_dir)? {
            if !dir.is_dir() {
                continue;
            }
            let name = dir
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| Error::dataset(&dir, "sequence name is not UTF-8"))?
                .to_string();
            if let Some(other) = seen.insert(name.clone(), split) {
                return Err(Error::dataset(
                    &dir,
                    format!("sequence `{name}` appears in both {other} and {split}"),
                ));
            }
            sequences.push(load_sequence(&dir, name, split)?);
        }
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        sequences,
    })
}
