//! Run configuration files (TOML or JSON) and seed resolution.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use htdetect_core::conformal::ConformalConfig;
use htdetect_core::pipeline::{AugmentConfig, PipelineConfig, ProbRule, ScorerConfig, SplitConfig, TOOL_VERSION};
use htdetect_core::seed::sha256_hex;

use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "NOODLE_SEED";

/// Pipeline keys plus input/output paths. Every key is optional; missing
/// keys take the pipeline defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub split: Option<SplitConfig>,
    pub augmentation: Option<AugmentConfig>,
    pub tabular: Option<ScorerConfig>,
    pub graph: Option<ScorerConfig>,
    pub early: Option<ScorerConfig>,
    pub conformal: Option<ConformalConfig>,
    pub prob_rule: Option<ProbRule>,
    pub calibration_bins: Option<usize>,
}

impl RunConfig {
    /// `.json` files are read as JSON, anything else as TOML.
    pub fn parse(text: &str, json: bool) -> CliResult<Self> {
        if json {
            serde_json::from_str(text).map_err(|e| CliError::config(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| CliError::config(e.to_string()))
        }
    }

    pub fn load(path: &Path) -> CliResult<(Self, String)> {
        let bytes = std::fs::read(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| CliError::config(format!("{}: not UTF-8", path.display())))?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg = Self::parse(&text, json).map_err(|e| e.context(path.display()))?;
        Ok((cfg, sha256_hex(&bytes)))
    }

    /// Defaults filled in, with `seed` already resolved.
    pub fn pipeline(&self, seed: u64) -> CliResult<PipelineConfig> {
        let d = PipelineConfig::default();
        let cfg = PipelineConfig {
            seed,
            split: self.split.unwrap_or(d.split),
            augmentation: self.augmentation.clone(),
            tabular: self.tabular.clone().unwrap_or(d.tabular),
            graph: self.graph.clone().unwrap_or(d.graph),
            early: self.early.clone().unwrap_or(d.early),
            conformal: self.conformal.clone().unwrap_or(d.conformal),
            prob_rule: self.prob_rule.unwrap_or(d.prob_rule),
            calibration_bins: self.calibration_bins.unwrap_or(d.calibration_bins),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Flag, then config file, then the environment, then 0.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> CliResult<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::config(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

/// Common header of every JSON report.
#[derive(Debug, Clone, Serialize)]
pub struct RunInfo {
    pub tool_version: &'static str,
    pub command: &'static str,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub input_hashes: BTreeMap<String, String>,
}

impl RunInfo {
    /// `options` is the effective configuration of the command; its JSON
    /// encoding is hashed.
    pub fn new(command: &'static str, options: &impl Serialize) -> Self {
        Self {
            tool_version: TOOL_VERSION,
            command,
            config_hash: sha256_hex(&serde_json::to_vec(options).expect("options serialize")),
            seeds: BTreeMap::new(),
            input_hashes: BTreeMap::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_named() {
        let e = RunConfig::parse("seed = 1\nepochs = 3\n", false).unwrap_err();
        assert_eq!(e.code, crate::error::CONFIG);
        assert!(e.message.contains("epochs"), "{}", e.message);
        let e = RunConfig::parse(r#"{"tabular": {"hiden": [4]}}"#, true).unwrap_err();
        assert!(e.message.contains("hiden"), "{}", e.message);
    }

    #[test]
    fn toml_and_json_agree() {
        let t = RunConfig::parse("seed = 4\n[tabular]\nepochs = 7\n[conformal]\ncombiner = \"stouffer\"\n", false).unwrap();
        let j = RunConfig::parse(r#"{"seed": 4, "tabular": {"epochs": 7}, "conformal": {"combiner": "stouffer"}}"#, true).unwrap();
        assert_eq!(t, j);
        let p = t.pipeline(4).unwrap();
        assert_eq!(p.tabular.epochs, 7);
        assert_eq!(p.graph, ScorerConfig::default());
    }

    #[test]
    fn invalid_values_fail_validation() {
        let c = RunConfig::parse("[conformal]\nconfidence = 1.5\n", false).unwrap();
        assert_eq!(c.pipeline(0).unwrap_err().code, crate::error::CONFIG);
    }

    #[test]
    fn flag_beats_config() {
        assert_eq!(resolve_seed(Some(3), Some(9)).unwrap(), 3);
        assert_eq!(resolve_seed(None, Some(9)).unwrap(), 9);
    }
}
