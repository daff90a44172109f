mod align;
mod evaluate;
mod losses;
mod reconstruct;
mod synth;

use std::path::{Path, PathBuf};

use clap::Args;

use warpfuse::benchmark::Split;
use warpfuse::geometry::{io, CameraIntrinsics, RgbdFrame};
use warpfuse::synth::{Scene, SceneSpec, SyntheticSequence};

use crate::CliError;

pub use align::align_pair;
pub use evaluate::evaluate;
pub use losses::losses_eval;
pub use reconstruct::reconstruct;
pub use synth::{export_heatmaps, synth};

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    /// Sequence directory with intrinsics.txt, depth/, and optional color/ and mask/.
    pub sequence: PathBuf,
    /// Output directory (replaced on success).
    #[arg(long)]
    pub out: PathBuf,
    /// First-frame object mask [default: <sequence>/mask/000000.png].
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Use only the first N frames.
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    /// Sequence directory; both frames need masks.
    pub sequence: PathBuf,
    #[arg(long)]
    pub source: usize,
    #[arg(long)]
    pub target: usize,
    /// Output directory (replaced on success).
    #[arg(long)]
    pub out: PathBuf,
    /// Annotation JSON with sparse matches [default: <sequence>/annotations/<source>_<target>.json].
    #[arg(long)]
    pub sparse: Option<PathBuf>,
    /// Skip the backward alignment and forward-backward fusion.
    #[arg(long)]
    pub forward_only: bool,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Dataset root; the sequence is written to <out>/<synth.split>/<name>.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "synthetic")]
    pub name: String,
    /// Do not export oracle heatmaps.
    #[arg(long)]
    pub no_heatmaps: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Dataset root with train/, val/, test/ splits.
    pub dataset: PathBuf,
    /// Predictions: <dir>/<sequence>/<source>_<target>/matches.bin and
    /// <dir>/<sequence>/reconstruction/.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Report directory (replaced on success).
    #[arg(long)]
    pub out: PathBuf,
    /// Evaluate one split only.
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    /// Average over all correspondences and pixels instead of per sequence.
    #[arg(long)]
    pub pooled: bool,
}

#[derive(Args, Debug)]
pub struct LossesArgs {
    /// JSON file with a `samples` list of network outputs and ground truth.
    pub input: PathBuf,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// Synthetic sequence directory (with scene.json).
    pub sequence: PathBuf,
    /// Heatmap directory (replaced on success).
    #[arg(long)]
    pub out: PathBuf,
    /// JSON list of [u, v] query pixels [default: reconstruction node pixels].
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Divide the stored heatmap size by this [default: synth.heatmap_downsample].
    #[arg(long)]
    pub downsample: Option<usize>,
}

fn parse_split(s: &str) -> Result<Split, String> {
    Split::ALL
        .into_iter()
        .find(|x| x.dir_name() == s)
        .ok_or_else(|| format!("unknown split `{s}` (train, val, test)"))
}

/// Frame files of one sequence directory.
struct SequenceFiles {
    dir: PathBuf,
    intrinsics: CameraIntrinsics<f64>,
    count: usize,
}

impl SequenceFiles {
    fn open(dir: &Path) -> Result<Self, CliError> {
        if !dir.is_dir() {
            return Err(CliError::Data(format!("{}: not a sequence directory", dir.display())));
        }
        let path = dir.join("intrinsics.txt");
        let intrinsics =
            io::read_intrinsics(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let count = (0..)
            .take_while(|i| Self::file(dir, "depth", *i).is_file())
            .count();
        if count == 0 {
            return Err(CliError::Data(format!("{}: no depth frames", dir.display())));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            intrinsics,
            count,
        })
    }

    fn file(dir: &Path, kind: &str, i: usize) -> PathBuf {
        dir.join(kind).join(format!("{i:06}.png"))
    }

    fn frame(&self, i: usize) -> Result<RgbdFrame<f64>, CliError> {
        if i >= self.count {
            return Err(CliError::Data(format!(
                "{}: frame {i} does not exist ({} frames)",
                self.dir.display(),
                self.count
            )));
        }
        let color = Self::file(&self.dir, "color", i);
        let mask = Self::file(&self.dir, "mask", i);
        Ok(io::load_frame(
            &Self::file(&self.dir, "depth", i),
            color.is_file().then_some(color.as_path()),
            mask.is_file().then_some(mask.as_path()),
            self.intrinsics,
        )?)
    }
}

/// Regenerates a synthetic sequence from its `scene.json`.
fn load_scene(dir: &Path) -> Result<SyntheticSequence, CliError> {
    let path = dir.join("scene.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Data(format!("{}: {e} (not a synthetic sequence?)", path.display())))?;
    let spec: SceneSpec =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(Scene::new(spec)?.generate()?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}
