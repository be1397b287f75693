use std::path::{Path, PathBuf};

use netrca::eval::{PipelineConfig, SuiteConfig, SWEEP_COUNTS};
use netrca::rca::Method;
use netrca::synth::TopologyParams;
use netrca::FORMAT_VERSION;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a command needs. Missing keys take the defaults below;
/// unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub format_version: u32,
    /// Drives scenario generation, pivot draws and the benchmark suite.
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthSection,
    pub fit: FitSection,
    pub detect: DetectSection,
    pub rca: RcaSection,
    pub bench: BenchSection,
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            seed: 0,
            paths: Paths::default(),
            synth: SynthSection::default(),
            fit: FitSection::default(),
            detect: DetectSection::default(),
            rca: RcaSection::default(),
            bench: BenchSection::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

/// Unset paths default to fixed names inside `out_dir`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub out_dir: PathBuf,
    /// Scenario spec (JSON or TOML) for `synth`; a random scenario is
    /// drawn when unset.
    pub spec: Option<PathBuf>,
    pub panel: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub event: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("netrca-out"), spec: None, panel: None, model: None, event: None }
    }
}

impl Paths {
    pub fn panel(&self) -> PathBuf {
        self.panel.clone().unwrap_or_else(|| self.out_dir.join("panel.csv"))
    }

    pub fn model(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.out_dir.join("model.json"))
    }

    pub fn events_dir(&self) -> PathBuf {
        self.out_dir.join("events")
    }

    pub fn event(&self) -> PathBuf {
        self.event.clone().unwrap_or_else(|| self.events_dir().join("event-000.json"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub channels: usize,
    pub length: usize,
    pub n_anomalies: usize,
    pub topology: TopologyParams,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self { channels: 30, length: 5000, n_anomalies: 5, topology: TopologyParams::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    /// Training rows are `0..train_end`; when unset, the first
    /// `train_fraction` of the panel.
    pub train_end: Option<usize>,
    pub train_fraction: f64,
}

impl Default for FitSection {
    fn default() -> Self {
        Self { train_end: None, train_fraction: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectSection {
    /// Sliding-window length in samples.
    pub window: usize,
}

impl Default for DetectSection {
    fn default() -> Self {
        Self { window: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RcaSection {
    pub method: Method,
}

impl Default for RcaSection {
    fn default() -> Self {
        Self { method: Method::Tcorca }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub channels: usize,
    pub length: usize,
    pub n_anomalies: usize,
    /// Scenarios per suite, seeded `seed..seed + scenarios`.
    pub scenarios: usize,
    pub topology: TopologyParams,
    pub methods: Vec<Method>,
    /// Anomaly counts for the plot-data sweep.
    pub sweep: Vec<usize>,
}

impl Default for BenchSection {
    fn default() -> Self {
        let suite = SuiteConfig::default();
        Self {
            channels: suite.channels,
            length: suite.length,
            n_anomalies: suite.n_anomalies,
            scenarios: suite.seeds,
            topology: suite.topology,
            methods: Method::ALL.to_vec(),
            sweep: SWEEP_COUNTS.to_vec(),
        }
    }
}

impl BenchSection {
    pub fn suite(&self, seed: u64) -> SuiteConfig {
        SuiteConfig {
            channels: self.channels,
            length: self.length,
            n_anomalies: self.n_anomalies,
            seeds: self.scenarios,
            base_seed: seed,
            topology: self.topology.clone(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::missing(path, e))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        let config: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        if config.format_version != FORMAT_VERSION {
            return Err(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                config.format_version
            ));
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration is always representable in TOML")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dumped_defaults_reload_equal() {
        let config = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&config.to_toml()).unwrap(), config);
    }

    #[test]
    fn book_example_is_the_defaults() {
        let chapter = include_str!("../../../book/src/cli.md");
        let block = chapter.split("```toml\n").nth(1).unwrap().split("```").next().unwrap();
        assert_eq!(RunConfig::from_toml(block).unwrap(), RunConfig::default());
    }

    #[test]
    fn empty_file_means_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let config = RunConfig::from_toml("seed = 9\n[pipeline.causal]\nalpha = 0.01\n").unwrap();
        assert_eq!(config.seed, 9);
        assert_eq!(config.pipeline.causal.alpha, 0.01);
        assert_eq!(config.pipeline.causal.tau_max, RunConfig::default().pipeline.causal.tau_max);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("seeds = 3\n").unwrap_err().contains("seeds"));
        assert!(RunConfig::from_toml("[pipeline.fccg]\nfitnes_min = 0.5\n").is_err());
    }

    #[test]
    fn other_versions_are_rejected() {
        assert!(RunConfig::from_toml("format_version = 2\n").unwrap_err().contains("format_version"));
    }
}
