use std::path::{Path, PathBuf};

use warpfuse::geometry::resample;
use warpfuse::pipeline::reference_queries;
use warpfuse::provider::{export_heatmaps as write_heatmaps, pair_name, CorrespondenceProvider, Heatmap, Manifest};
use warpfuse::synth::{Scene, SyntheticSequence};

use super::{load_scene, ExportArgs, SequenceFiles, SynthArgs};
use crate::config::RunConfig;
use crate::output::Staged;
use crate::CliError;

/// Oracle predictions for pairs `(0, f)`, stored at `1 / downsample` of the
/// frame size. Queries default to the reconstruction node pixels of the
/// sequence as stored on disk.
fn write_oracle_heatmaps(
    seq: &SyntheticSequence,
    disk: &Path,
    out: &Path,
    queries: Option<Vec<(u32, u32)>>,
    downsample: usize,
    cfg: &RunConfig,
) -> Result<Manifest, CliError> {
    let files = SequenceFiles::open(disk)?;
    if files.count != seq.len() {
        return Err(CliError::Data(format!(
            "{}: {} frames on disk, scene has {}",
            disk.display(),
            files.count,
            seq.len()
        )));
    }
    let first = files.frame(0)?;
    let queries = match queries {
        Some(q) => q,
        None => {
            let mask = first
                .mask
                .as_ref()
                .ok_or_else(|| CliError::Data("first frame has no mask".into()))?;
            reference_queries(&first, mask, &cfg.reconstruction)?
        }
    };
    let p = &cfg.provider;
    let oracle = seq.oracle(p.noise_px, p.noise_depth, p.simulate_occlusion, cfg.seed);
    let (w, h) = (first.width().div_ceil(downsample), first.height().div_ceil(downsample));
    let mut manifest = Manifest::default();
    std::fs::create_dir_all(out)?;
    for f in 1..files.count {
        let pair = pair_name(0, f);
        let target = files.frame(f)?;
        let mut preds = oracle.predict(&pair, &first, &target, &queries)?;
        if downsample > 1 {
            for pred in &mut preds {
                pred.heatmap = Heatmap::cropped(&resample(&pred.heatmap.to_image(), w, h));
            }
        }
        write_heatmaps(out, &pair, &preds, &mut manifest)?;
    }
    manifest.save(out)?;
    Ok(manifest)
}

pub fn synth(args: &SynthArgs, cfg: &RunConfig) -> Result<(), CliError> {
    if args.name.is_empty() || args.name.contains(['/', '\\']) || args.name.starts_with('.') {
        return Err(CliError::Usage(format!("invalid sequence name `{}`", args.name)));
    }
    let spec = cfg.synth.scene(cfg.seed);
    let seq = Scene::new(spec).map_err(|e| CliError::Usage(e.to_string()))?.generate()?;
    let split = cfg.synth.split;
    let rel = PathBuf::from(split.dir_name()).join(&args.name);
    let dest = args.out.join(&rel);
    let staged = Staged::new(&dest)?;
    let dir = seq.write(
        staged.path(),
        split,
        &args.name,
        cfg.synth.annotate_every,
        cfg.synth.matches_per_pair,
    )?;
    let heatmaps = if args.no_heatmaps {
        0
    } else {
        let out = dir.join(&cfg.provider.directory);
        write_oracle_heatmaps(&seq, &dir, &out, None, cfg.synth.heatmap_downsample, cfg)?
            .entries
            .len()
    };
    staged.commit_subdir(&rel)?;
    println!(
        "wrote {} frames and {heatmaps} heatmaps -> {}",
        seq.len(),
        dest.display()
    );
    Ok(())
}

pub fn export_heatmaps(args: &ExportArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let seq = load_scene(&args.sequence)?;
    let queries = match &args.queries {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            Some(
                serde_json::from_str::<Vec<(u32, u32)>>(&text)
                    .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?,
            )
        }
        None => None,
    };
    let downsample = args.downsample.unwrap_or(cfg.synth.heatmap_downsample);
    if downsample == 0 {
        return Err(CliError::Usage("--downsample must be >= 1".into()));
    }
    let staged = Staged::new(&args.out)?;
    let manifest = write_oracle_heatmaps(&seq, &args.sequence, staged.path(), queries, downsample, cfg)?;
    staged.commit()?;
    println!("wrote {} heatmaps -> {}", manifest.entries.len(), args.out.display());
    Ok(())
}
