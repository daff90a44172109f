use nalgebra::Vector3;
use serde::Serialize;

use warpfuse::benchmark::{pixel_point, PairAnnotation};
use warpfuse::energy::{EnergyWeights, SparseMatch};
use warpfuse::geometry::io::write_scalar_png;
use warpfuse::geometry::{distance_map, Image, RgbdFrame};
use warpfuse::pipeline::{align_pair as align, forward_backward_interpolate, write_dense_matches, PairAlignment};

use super::{write_json, AlignArgs, SequenceFiles};
use crate::config::RunConfig;
use crate::output::Staged;
use crate::CliError;

#[derive(Serialize)]
struct AlignSummary {
    source: usize,
    target: usize,
    matches: usize,
    valid: usize,
    sparse_matches: usize,
    forward_backward: bool,
    initial_energy: f64,
    final_energy: f64,
}

/// Sparse matches from an annotation file, oriented source to target.
fn sparse_matches(
    ann: &PairAnnotation,
    source: (usize, &RgbdFrame<f64>),
    target: (usize, &RgbdFrame<f64>),
) -> Result<Vec<SparseMatch<f64>>, CliError> {
    let flipped = match (ann.source_frame, ann.target_frame) {
        (s, t) if (s, t) == (source.0, target.0) => false,
        (s, t) if (s, t) == (target.0, source.0) => true,
        (s, t) => {
            return Err(CliError::Data(format!(
                "sparse matches are for pair {s}-{t}, not {}-{}",
                source.0, target.0
            )))
        }
    };
    let mut out = Vec::new();
    for m in &ann.matches {
        let a = m.source_point.map(Vector3::from).or_else(|| pixel_point(if flipped { target.1 } else { source.1 }, m.source));
        let b = m.target_point.map(Vector3::from).or_else(|| pixel_point(if flipped { source.1 } else { target.1 }, m.target));
        let (Some(a), Some(b)) = (a, b) else {
            continue;
        };
        let (s, t) = if flipped { (b, a) } else { (a, b) };
        out.push(SparseMatch::new(s, t)?);
    }
    Ok(out)
}

/// Distance from each valid match to the target surface point at its pixel,
/// drawn at the source pixel.
fn residual_image(alignment: &PairAlignment<f64>, source: &RgbdFrame<f64>, target: &RgbdFrame<f64>) -> Image<f64> {
    let mut img = Image::filled(source.width(), source.height(), 0.0);
    for ((px, m), ok) in alignment.source_pixels.iter().zip(&alignment.matches).zip(&alignment.valid) {
        if !*ok {
            continue;
        }
        let near = target
            .intrinsics
            .pixel_of(m)
            .and_then(|(u, v)| target.point_at(u, v));
        if let Some(p) = near {
            img.set(px.0 as usize, px.1 as usize, (p - m).norm());
        }
    }
    img
}

pub fn align_pair(args: &AlignArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let files = SequenceFiles::open(&args.sequence)?;
    let source = files.frame(args.source)?;
    let target = files.frame(args.target)?;
    let mut weights = cfg.weights.apply(EnergyWeights::alignment());

    let sparse_path = args.sparse.clone().unwrap_or_else(|| {
        args.sequence
            .join("annotations")
            .join(format!("{:06}_{:06}.json", args.source, args.target))
    });
    let mut sparse = Vec::new();
    if weights.lambda_sparse > 0.0 {
        if sparse_path.is_file() {
            let ann = PairAnnotation::load(&sparse_path)?;
            sparse = sparse_matches(&ann, (args.source, &source), (args.target, &target))?;
        } else {
            eprintln!(
                "warning: sparse matches {} not found, disabling the sparse term",
                sparse_path.display()
            );
            weights.lambda_sparse = 0.0;
        }
    }

    let forward = align(&source, &target, &sparse, &weights, &cfg.alignment)?;
    let result = if args.forward_only {
        forward
    } else {
        let reversed: Vec<_> = sparse.iter().map(|m| SparseMatch { s: m.t, t: m.s }).collect();
        let backward = align(&target, &source, &reversed, &weights, &cfg.alignment)?;
        forward_backward_interpolate(
            &forward,
            &backward,
            cfg.alignment.cycle_gate,
            cfg.alignment.inverse_iterations,
        )
    };

    let staged = Staged::new(&args.out)?;
    let dir = staged.path();
    write_dense_matches(&dir.join("matches.bin"), &result)?;
    let target_mask = target.mask.as_ref().expect("alignment checked the mask");
    write_scalar_png(&dir.join("distance_map.png"), &distance_map::<f64>(target_mask)?.values)?;
    write_scalar_png(&dir.join("residual.png"), &residual_image(&result, &source, &target))?;
    result.report.write_trace_csv(&dir.join("trace.csv"))?;
    let summary = AlignSummary {
        source: args.source,
        target: args.target,
        matches: result.len(),
        valid: result.valid_count(),
        sparse_matches: sparse.len(),
        forward_backward: !args.forward_only,
        initial_energy: result.report.initial_energy,
        final_energy: result.report.final_energy,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    staged.commit()?;
    println!(
        "{} of {} matches valid -> {}",
        summary.valid,
        summary.matches,
        args.out.display()
    );
    Ok(())
}
