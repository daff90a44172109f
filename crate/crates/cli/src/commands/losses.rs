use serde::{Deserialize, Serialize};

use warpfuse::geometry::Image;
use warpfuse::losses::{evaluate_losses, GroundTruthSample, LossBreakdown, NetworkOutput};

use super::LossesArgs;
use crate::CliError;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LossInput {
    samples: Vec<LossSample>,
}

/// Row-major maps of `width * height` values; `depth` may be one number.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LossSample {
    width: usize,
    height: usize,
    h_sg: Vec<f64>,
    h_sm: Vec<f64>,
    depth: DepthInput,
    visibility: f64,
    gt: GroundTruthSample,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DepthInput {
    Constant(f64),
    Map(Vec<f64>),
}

#[derive(Serialize)]
struct LossOutput {
    samples: Vec<LossBreakdown>,
    mean: LossBreakdown,
}

fn network_output(i: usize, s: LossSample) -> Result<NetworkOutput<f64>, CliError> {
    let image = |name: &str, data: Vec<f64>| {
        Image::from_vec(s.width, s.height, data).map_err(|e| CliError::Data(format!("sample {i} {name}: {e}")))
    };
    let depth = match s.depth {
        DepthInput::Constant(d) => Image::filled(s.width, s.height, d),
        DepthInput::Map(v) => image("depth", v)?,
    };
    Ok(NetworkOutput {
        h_sg: image("h_sg", s.h_sg)?,
        h_sm: image("h_sm", s.h_sm)?,
        depth,
        visibility: s.visibility,
    })
}

fn mean(items: &[LossBreakdown]) -> LossBreakdown {
    let n = items.len().max(1) as f64;
    let avg = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
    LossBreakdown {
        heatmap: avg(|l| l.heatmap),
        depth: avg(|l| l.depth),
        visibility: avg(|l| l.visibility),
        total: avg(|l| l.total),
    }
}

pub fn losses_eval(args: &LossesArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.input)?;
    let input: LossInput =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", args.input.display())))?;
    let mut samples = Vec::with_capacity(input.samples.len());
    for (i, s) in input.samples.into_iter().enumerate() {
        let gt = s.gt;
        let out = network_output(i, s)?;
        samples.push(evaluate_losses(&out, &gt).map_err(|e| CliError::Data(format!("sample {i}: {e}")))?);
    }
    let result = LossOutput {
        mean: mean(&samples),
        samples,
    };
    let json = serde_json::to_string_pretty(&result)? + "\n";
    match &args.out {
        Some(path) => {
            let dir = match path.parent() {
                Some(p) if !p.as_os_str().is_empty() => p,
                _ => std::path::Path::new("."),
            };
            let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
            std::io::Write::write_all(&mut tmp, json.as_bytes())?;
            tmp.persist(path).map_err(|e| CliError::Data(e.to_string()))?;
        }
        None => print!("{json}"),
    }
    Ok(())
}
