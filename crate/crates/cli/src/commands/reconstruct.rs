use std::path::Path;

use warpfuse::energy::EnergyWeights;
use warpfuse::geometry::io::read_mask_png;
use warpfuse::provider::{CorrespondenceProvider, FileProvider, ProviderSpec};

use super::{load_scene, ReconstructArgs, SequenceFiles};
use crate::config::RunConfig;
use crate::output::Staged;
use crate::CliError;

pub(super) fn build_provider(
    spec: &ProviderSpec,
    sequence: &Path,
) -> Result<Box<dyn CorrespondenceProvider<f64>>, CliError> {
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(match spec {
        ProviderSpec::File { directory } => Box::new(FileProvider::open(directory).map_err(|e| {
            CliError::Data(format!("heatmap directory {}: {e}", directory.display()))
        })?),
        ProviderSpec::SyntheticOracle {
            noise_px,
            noise_depth,
            simulate_occlusion,
            seed,
        } => Box::new(load_scene(sequence)?.oracle(*noise_px, *noise_depth, *simulate_occlusion, *seed)),
    })
}

pub fn reconstruct(args: &ReconstructArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let files = SequenceFiles::open(&args.sequence)?;
    let n = args.frames.unwrap_or(files.count).min(files.count);
    if n < 2 {
        return Err(CliError::Data("reconstruction needs at least 2 frames".into()));
    }
    let frames = (0..n).map(|i| files.frame(i)).collect::<Result<Vec<_>, _>>()?;
    let mask = match &args.mask {
        Some(p) => read_mask_png(p)?,
        None => frames[0].mask.clone().ok_or_else(|| {
            CliError::Data(format!(
                "{}: no first-frame mask, pass --mask",
                args.sequence.display()
            ))
        })?,
    };
    let weights = cfg.weights.apply(EnergyWeights::reconstruction());
    let provider = if weights.lambda_learned > 0.0 {
        let spec = cfg.provider.spec(&args.sequence, cfg.seed).ok_or_else(|| {
            CliError::Usage("weights.lambda_learned > 0 needs provider.kind file or synthetic_oracle".into())
        })?;
        Some(build_provider(&spec, &args.sequence)?)
    } else {
        None
    };

    let result = warpfuse::pipeline::reconstruct_sequence(
        &frames,
        &mask,
        provider.as_deref(),
        &weights,
        &cfg.reconstruction,
    )?;

    let staged = Staged::new(&args.out)?;
    result.save(staged.path())?;
    std::fs::write(staged.path().join("config.toml"), cfg.to_toml())?;
    staged.commit()?;
    let last = result.reports.last().map(|r| r.final_energy).unwrap_or(0.0);
    println!(
        "reconstructed {n} frames with {} nodes, final energy {last:.6e} -> {}",
        result.graphs.last().map(|g| g.len()).unwrap_or(0),
        args.out.display()
    );
    Ok(())
}
