//! Run configuration: a TOML file plus dotted `--section.key value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use warpfuse::benchmark::Split;
use warpfuse::energy::EnergyWeights;
use warpfuse::pipeline::{AlignmentConfig, ReconstructionConfig};
use warpfuse::provider::ProviderSpec;
use warpfuse::synth::{SceneKind, SceneSpec};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds every random choice (oracle noise, synthetic noise, annotation sampling).
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
    pub weights: WeightOverrides,
    pub reconstruction: ReconstructionConfig,
    pub alignment: AlignmentConfig,
    pub provider: ProviderConfig,
    pub synth: SynthConfig,
    pub evaluate: EvaluateConfig,
}

/// Energy weights. Unset entries take the subcommand's preset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_learned: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_reg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_point: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_photo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_silh: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_sparse: Option<f64>,
}

impl WeightOverrides {
    pub fn apply(&self, preset: EnergyWeights) -> EnergyWeights {
        EnergyWeights {
            lambda_learned: self.lambda_learned.unwrap_or(preset.lambda_learned),
            lambda_reg: self.lambda_reg.unwrap_or(preset.lambda_reg),
            lambda_point: self.lambda_point.unwrap_or(preset.lambda_point),
            lambda_photo: self.lambda_photo.unwrap_or(preset.lambda_photo),
            lambda_silh: self.lambda_silh.unwrap_or(preset.lambda_silh),
            lambda_sparse: self.lambda_sparse.unwrap_or(preset.lambda_sparse),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    None,
    #[default]
    File,
    SyntheticOracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Heatmap directory for the file provider, relative to the sequence.
    pub directory: PathBuf,
    pub noise_px: f64,
    pub noise_depth: f64,
    pub simulate_occlusion: bool,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::File,
            directory: PathBuf::from("heatmaps"),
            noise_px: 0.0,
            noise_depth: 0.0,
            simulate_occlusion: true,
        }
    }
}

impl ProviderConfig {
    /// The provider for a sequence directory, `None` when disabled.
    pub fn spec(&self, sequence: &Path, seed: u64) -> Option<ProviderSpec> {
        match self.kind {
            ProviderKind::None => None,
            ProviderKind::File => Some(ProviderSpec::File {
                directory: sequence.join(&self.directory),
            }),
            ProviderKind::SyntheticOracle => Some(ProviderSpec::SyntheticOracle {
                noise_px: self.noise_px,
                noise_depth: self.noise_depth,
                simulate_occlusion: self.simulate_occlusion,
                seed,
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub kind: SceneKind,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub motion_scale: f64,
    pub camera_orbit_deg: f64,
    pub depth_noise: f64,
    pub split: Split,
    /// Annotate pairs `(0, f)` for every `annotate_every`-th frame.
    pub annotate_every: usize,
    pub matches_per_pair: usize,
    /// Oracle heatmaps are stored at the frame size divided by this.
    pub heatmap_downsample: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let scene = SceneSpec::default();
        Self {
            kind: scene.kind,
            frames: scene.frames,
            width: scene.width,
            height: scene.height,
            motion_scale: scene.motion_scale,
            camera_orbit_deg: scene.camera_orbit_deg,
            depth_noise: scene.depth_noise,
            split: Split::Test,
            annotate_every: 5,
            matches_per_pair: 50,
            heatmap_downsample: 4,
        }
    }
}

impl SynthConfig {
    pub fn scene(&self, seed: u64) -> SceneSpec {
        SceneSpec {
            kind: self.kind,
            frames: self.frames,
            width: self.width,
            height: self.height,
            motion_scale: self.motion_scale,
            camera_orbit_deg: self.camera_orbit_deg,
            depth_noise: self.depth_noise,
            seed,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    /// Average over all correspondences and pixels instead of per sequence.
    pub pooled: bool,
}

impl RunConfig {
    /// Reads `file` (if any), applies `overrides` in order, and validates.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                text.parse::<Table>()
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?
            }
            None => Table::new(),
        };
        for (key, raw) in overrides {
            set_dotted(&mut table, key, parse_value(raw))?;
        }
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: warpfuse::Error| CliError::Usage(e.to_string());
        self.weights.apply(EnergyWeights::reconstruction()).validate().map_err(usage)?;
        self.weights.apply(EnergyWeights::alignment()).validate().map_err(usage)?;
        self.reconstruction.validate().map_err(usage)?;
        self.alignment.validate().map_err(usage)?;
        self.synth.scene(self.seed).validate().map_err(usage)?;
        if self.synth.heatmap_downsample == 0 {
            return Err(CliError::Usage("synth.heatmap_downsample must be >= 1".into()));
        }
        if let Some(spec) = self.provider.spec(Path::new("."), self.seed) {
            spec.validate().map_err(usage)?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// A bare TOML value (`0.5`, `true`, `[1, 2]`, `"x"`), or the raw text as a string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_dotted(table: &mut Table, key: &str, value: Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("malformed config key `{key}`")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("`{part}` in `{key}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Every config key with its default, one per line.
pub fn key_listing() -> String {
    let mut lines = Vec::new();
    let defaults = toml::Table::try_from(RunConfig::default()).expect("config serializes");
    flatten("", &defaults, &mut lines);
    let recon = toml::Table::try_from(EnergyWeights::reconstruction()).expect("weights serialize");
    let align = toml::Table::try_from(EnergyWeights::alignment()).expect("weights serialize");
    for (k, v) in &recon {
        lines.push((format!("weights.{k}"), format!("{v} (reconstruct), {} (align-pair)", align[k])));
    }
    lines.sort();
    let notes = [
        ("provider.kind", "(none | file | synthetic_oracle)"),
        ("synth.kind", "(bending_cylinder | arm | sheet)"),
        ("synth.split", "(train | val | test)"),
        ("accumulation", "(deterministic | unordered)"),
    ];
    lines
        .into_iter()
        .map(|(k, v)| {
            let note = notes
                .iter()
                .find(|(p, _)| k.starts_with(p) || k.ends_with(p))
                .map(|(_, n)| format!("  {n}"))
                .unwrap_or_default();
            format!("  {k} = {v}{note}")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn flatten(prefix: &str, table: &Table, out: &mut Vec<(String, String)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn dotted_overrides_apply() {
        let cfg = RunConfig::load(
            None,
            &ov(&[
                ("weights.lambda_learned", "0"),
                ("reconstruction.solver.gn_iterations", "3"),
                ("provider.kind", "synthetic_oracle"),
                ("synth.kind", "sheet"),
            ]),
        )
        .unwrap();
        assert_eq!(cfg.weights.lambda_learned, Some(0.0));
        assert_eq!(cfg.weights.apply(EnergyWeights::reconstruction()).lambda_reg, 1.0);
        assert_eq!(cfg.reconstruction.solver.gn_iterations, 3);
        assert_eq!(cfg.provider.kind, ProviderKind::SyntheticOracle);
        assert_eq!(cfg.synth.kind, SceneKind::Sheet);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for key in ["weights.lambda_bogus", "nope", "reconstruction.icp.radius", "seed.x"] {
            assert!(matches!(RunConfig::load(None, &ov(&[(key, "1")])), Err(CliError::Usage(_))), "{key}");
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::load(None, &ov(&[("weights.lambda_reg", "-1")])).is_err());
        assert!(RunConfig::load(None, &ov(&[("reconstruction.node_radius", "0")])).is_err());
        assert!(RunConfig::load(None, &ov(&[("synth.frames", "\"many\"")])).is_err());
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 7\n[alignment]\ncycle_gate = 0.05\n").unwrap();
        let cfg = RunConfig::load(Some(&path), &ov(&[("alignment.cycle_gate", "0.03")])).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.alignment.cycle_gate, 0.03);
    }

    #[test]
    fn listing_covers_nested_keys() {
        let keys = key_listing();
        for k in [
            "seed",
            "weights.lambda_sparse",
            "reconstruction.icp.point_weight",
            "alignment.solver.accumulation",
            "provider.kind",
            "synth.heatmap_downsample",
            "evaluate.pooled",
        ] {
            assert!(keys.contains(&format!("  {k} = ")), "{k}");
        }
    }
}
