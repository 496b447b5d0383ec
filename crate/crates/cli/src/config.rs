//! Run configuration: one JSON document, overridable from the command line.

use std::path::{Path, PathBuf};

use regionshop::factorize::{Hyperparams, Variant};
use regionshop::grid::{GridMode, GridSpec};
use regionshop::synth::{RecordConfig, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Overrides `output_dir` when set and no `--output-dir` flag is given.
pub const OUTPUT_DIR_ENV: &str = "REGIONSHOP_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmfSettings {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for NmfSettings {
    fn default() -> Self {
        NmfSettings {
            max_iters: 500,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub browsing: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub towers: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkins: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trips: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSettings {
    pub variants: Vec<Variant>,
    pub fractions: Vec<f64>,
    pub repeats: usize,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        EvaluationSettings {
            variants: Variant::ALL.to_vec(),
            fractions: vec![0.8, 0.9],
            repeats: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub city: SynthConfig,
    pub records: RecordConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSpec,
    /// Shopping pattern count.
    pub n: usize,
    /// Mobility pattern count.
    pub m: usize,
    pub n_product_categories: usize,
    pub n_poi_categories: usize,
    pub nmf: NmfSettings,
    pub hyperparams: Hyperparams,
    pub variant: Variant,
    pub evaluation: EvaluationSettings,
    pub inputs: InputPaths,
    pub output_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub synth: SynthSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: GridSpec {
                mode: GridMode::Geographic,
                origin_lat: 39.8,
                origin_lon: 116.2,
                cell_size_km: 1.0,
                n_rows: 30,
                n_cols: 29,
                reference_lat: None,
            },
            n: 30,
            m: 40,
            n_product_categories: 250,
            n_poi_categories: 200,
            nmf: NmfSettings::default(),
            hyperparams: Hyperparams::default(),
            variant: Variant::CmfI,
            evaluation: EvaluationSettings::default(),
            inputs: InputPaths::default(),
            output_dir: PathBuf::from("out"),
            seed: None,
            synth: SynthSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Input(format!("config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text).map_err(|e| e.prefixed(&path.display().to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.as_os_str() == "." && !base.as_os_str().is_empty() {
                *p = base.to_path_buf();
            } else if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.inputs.browsing,
            &mut self.inputs.towers,
            &mut self.inputs.checkins,
            &mut self.inputs.trips,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.output_dir);
    }
}
