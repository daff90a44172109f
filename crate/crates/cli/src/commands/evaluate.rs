use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use serde::Serialize;

use warpfuse::benchmark::{
    combine_reconstruction, eval_matching, eval_reconstruction, load_dataset, pixel_point, pool_matching,
    MatchPoint, MatchingEval, ReconEval, SequenceIndex,
};
use warpfuse::pipeline::{read_dense_matches, SequenceOutput};

use super::{write_json, EvaluateArgs};
use crate::config::RunConfig;
use crate::output::Staged;
use crate::CliError;

/// The report schema: the four matching metrics and the two reconstruction
/// metrics, `null` when nothing was evaluated for that group.
#[derive(Serialize, Debug, PartialEq)]
struct Report {
    mean_2d_error_px: Option<f64>,
    mean_3d_error_m: Option<f64>,
    accuracy_2d: Option<f64>,
    accuracy_3d: Option<f64>,
    deformation_error_cm: Option<f64>,
    geometry_error_cm: Option<f64>,
}

struct Row {
    name: String,
    split: String,
    matching: Option<MatchingEval>,
    /// Annotated matches with no valid prediction, scored as zero motion.
    missing: usize,
    recon: Option<ReconEval>,
}

/// Scores the dense-match files of one sequence against its annotations.
fn match_sequence(seq: &SequenceIndex, dir: &Path) -> Result<(Option<MatchingEval>, usize), CliError> {
    let k = seq.load_intrinsics::<f64>()?;
    let (mut pred, mut gt, mut missing) = (Vec::new(), Vec::new(), 0usize);
    for (&(s, t), ann) in &seq.pairs {
        let path = dir.join(format!("{s:06}_{t:06}")).join("matches.bin");
        if !path.is_file() {
            continue;
        }
        let lookup: HashMap<(u32, u32), Vector3<f64>> = read_dense_matches(&path)?
            .into_iter()
            .filter(|r| r.valid)
            .map(|r| (r.source, Vector3::new(r.target[0] as f64, r.target[1] as f64, r.target[2] as f64)))
            .collect();
        let (fs, ft) = (seq.load_frame::<f64>(s)?, seq.load_frame::<f64>(t)?);
        for m in &ann.matches {
            let Some(target) = m.target_point.map(Vector3::from).or_else(|| pixel_point(&ft, m.target)) else {
                continue;
            };
            let Some(source) = m.source_point.map(Vector3::from).or_else(|| pixel_point(&fs, m.source)) else {
                continue;
            };
            let key = (m.source[0].round().max(0.0) as u32, m.source[1].round().max(0.0) as u32);
            let predicted = lookup
                .get(&key)
                .and_then(|p| k.project(p).ok().map(|px| MatchPoint { px: [px.x, px.y], point: (*p).into() }));
            pred.push(predicted.unwrap_or_else(|| {
                missing += 1;
                MatchPoint { px: m.source, point: source.into() }
            }));
            gt.push(MatchPoint { px: m.target, point: target.into() });
        }
    }
    if gt.is_empty() {
        return Ok((None, 0));
    }
    Ok((Some(eval_matching(&pred, &gt)?), missing))
}

fn recon_sequence(seq: &SequenceIndex, dir: &Path) -> Result<Option<ReconEval>, CliError> {
    if !dir.join("summary.json").is_file() {
        return Ok(None);
    }
    let out = SequenceOutput::<f64>::load(dir)?;
    let n = out.graphs.len().min(seq.frames.len());
    let frames = (0..n).map(|i| seq.load_frame::<f64>(i)).collect::<Result<Vec<_>, _>>()?;
    let annotations: Vec<_> = seq
        .pairs
        .values()
        .filter(|a| a.source_frame < n && a.target_frame < n)
        .cloned()
        .collect();
    if annotations.len() < seq.pairs.len() {
        eprintln!(
            "warning: {}: {} annotated pairs lie beyond the {n} reconstructed frames",
            seq.name,
            seq.pairs.len() - annotations.len()
        );
    }
    Ok(Some(eval_reconstruction(&out.tracking(), &annotations, &frames)?))
}

fn mean_matching(evals: &[MatchingEval], pooled: bool) -> Option<MatchingEval> {
    if pooled || evals.is_empty() {
        return pool_matching(evals);
    }
    let k = evals.len() as f64;
    let avg = |f: fn(&MatchingEval) -> f64| evals.iter().map(f).sum::<f64>() / k;
    Some(MatchingEval {
        mean_2d_error_px: avg(|e| e.mean_2d_error_px),
        mean_3d_error_m: avg(|e| e.mean_3d_error_m),
        accuracy_2d: avg(|e| e.accuracy_2d),
        accuracy_3d: avg(|e| e.accuracy_3d),
        count: evals.iter().map(|e| e.count).sum(),
    })
}

fn report(m: Option<&MatchingEval>, r: Option<&ReconEval>) -> Report {
    Report {
        mean_2d_error_px: m.map(|m| m.mean_2d_error_px),
        mean_3d_error_m: m.map(|m| m.mean_3d_error_m),
        accuracy_2d: m.map(|m| m.accuracy_2d),
        accuracy_3d: m.map(|m| m.accuracy_3d),
        deformation_error_cm: r.map(|r| r.deformation_error_cm),
        geometry_error_cm: r.map(|r| r.geometry_error_cm),
    }
}

fn csv(rows: &[Row], total: &Row) -> String {
    let mut out = String::from(
        "sequence,split,matches,missing_predictions,mean_2d_error_px,mean_3d_error_m,accuracy_2d,accuracy_3d,\
         deformation_error_cm,geometry_error_cm,uncovered_fraction\n",
    );
    let cell = |x: Option<f64>| x.map(|v| format!("{v}")).unwrap_or_default();
    for row in rows.iter().chain(std::iter::once(total)) {
        let m = row.matching.as_ref();
        let r = row.recon.as_ref();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            row.name,
            row.split,
            m.map(|m| m.count).unwrap_or(0),
            row.missing,
            cell(m.map(|m| m.mean_2d_error_px)),
            cell(m.map(|m| m.mean_3d_error_m)),
            cell(m.map(|m| m.accuracy_2d)),
            cell(m.map(|m| m.accuracy_3d)),
            cell(r.map(|r| r.deformation_error_cm)),
            cell(r.map(|r| r.geometry_error_cm)),
            cell(r.map(|r| r.uncovered_fraction)),
        );
    }
    out
}

pub fn evaluate(args: &EvaluateArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let pooled = args.pooled || cfg.evaluate.pooled;
    let dataset = load_dataset(&args.dataset)?;
    if !args.predictions.is_dir() {
        return Err(CliError::Data(format!("{}: not a directory", args.predictions.display())));
    }
    let mut rows = Vec::new();
    for seq in &dataset.sequences {
        if args.split.is_some_and(|s| s != seq.split) {
            continue;
        }
        let dir = args.predictions.join(&seq.name);
        if !dir.is_dir() {
            continue;
        }
        let (matching, missing) = match_sequence(seq, &dir)?;
        let recon = recon_sequence(seq, &dir.join("reconstruction"))?;
        if matching.is_some() || recon.is_some() {
            rows.push(Row {
                name: seq.name.clone(),
                split: seq.split.to_string(),
                matching,
                missing,
                recon,
            });
        }
    }
    if rows.is_empty() {
        return Err(CliError::Data(format!(
            "no predictions in {} match the dataset",
            args.predictions.display()
        )));
    }
    let m: Vec<_> = rows.iter().filter_map(|r| r.matching).collect();
    let r: Vec<_> = rows.iter().filter_map(|r| r.recon).collect();
    let total = Row {
        name: "all".into(),
        split: String::new(),
        matching: mean_matching(&m, pooled),
        missing: rows.iter().map(|r| r.missing).sum(),
        recon: combine_reconstruction(&r, pooled),
    };

    let staged = Staged::new(&args.out)?;
    let summary = report(total.matching.as_ref(), total.recon.as_ref());
    write_json(&staged.path().join("report.json"), &summary)?;
    std::fs::write(staged.path().join("report.csv"), csv(&rows, &total))?;
    staged.commit()?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}
