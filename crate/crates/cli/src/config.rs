//! Flat run configuration: JSON file values overridden by command-line flags.

use std::path::{Path, PathBuf};

use flowslider::{Error, InitMode, Result, Variant};
use serde::{Deserialize, Serialize};

use crate::manifest::RunManifest;
use crate::plot::PlotKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads; absent means available parallelism. Never affects outputs.
    pub workers: Option<usize>,
    pub init_mode: InitMode,
    pub omega_src: f64,
    pub omega_tar: f64,
    #[serde(rename = "T")]
    pub steps: usize,
    pub n_max: usize,
    pub s: f64,
    pub variant: Variant,
    /// Defaults per command: `[flowslider]` for sweeps and angles, all four for ablations.
    pub variants: Option<Vec<Variant>>,
    /// `default`, `two_gaussian`, `identity`, or a path to a suite JSON file.
    pub suite: String,
    /// Defaults per command: `1..=5`, or `-3, -1, 0, 1, 3` for the reverse study.
    pub strengths: Option<Vec<f64>>,
    pub omega_tar_sweep: Vec<f64>,
    pub n_max_sweep: Vec<usize>,
    /// Samples per built-in scenario and generations for `sample`.
    pub samples: usize,
    /// Scenario for `sample`, `edit` and `reverse`: a built-in or a suite scenario name.
    pub scenario: String,
    pub sample_index: usize,
    /// Condition to generate from in `sample`: `src`, `tar` or `null`.
    pub condition: String,
    pub kind: Option<PlotKind>,
    pub data: Option<PathBuf>,
    pub angles: Option<PathBuf>,
    /// Output file name for `plot`, relative to the output directory.
    pub out: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            workers: None,
            init_mode: InitMode::NoisySource,
            omega_src: 3.5,
            omega_tar: 3.5,
            steps: 28,
            n_max: 20,
            s: 1.0,
            variant: Variant::FlowSlider,
            variants: None,
            suite: "default".into(),
            strengths: None,
            omega_tar_sweep: vec![1.5, 3.5, 5.5, 7.5, 9.5],
            n_max_sweep: vec![20, 22, 24, 26, 28],
            samples: 8,
            scenario: "two_gaussian".into(),
            sample_index: 0,
            condition: "src".into(),
            kind: None,
            data: None,
            angles: None,
            out: None,
        }
    }
}

/// A config file: either a flat config or a manifest from an earlier run.
pub fn load(path: &Path) -> Result<(RunConfig, Option<String>)> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: format!("{}: {e}", path.display()),
    })?;
    if value.get("manifest_version").is_some() {
        let m: RunManifest = serde_json::from_value(value)?;
        return Ok((m.config, Some(m.command)));
    }
    let config = serde_json::from_value(value).map_err(|e| Error::Parse {
        line: 0,
        column: 0,
        message: format!("{}: {e}", path.display()),
    })?;
    Ok((config, None))
}
