//! Experiment configuration: one TOML document with `data`, `preprocess`,
//! `train`, `sinkhorn` and `eval` sections. Unknown keys are rejected and
//! every omitted value takes its default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use superot_core::data::SynthConfig;
use superot_core::nets::TrainConfig;
use superot_core::pipeline::{EvalConfig, PreprocessConfig};
use superot_core::sinkhorn::SinkhornConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// dataset directory written by `synth` (or laid out the same way);
    /// when absent the dataset is synthesized in memory from `synth`
    pub dir: Option<PathBuf>,
    pub synth: SynthConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub preprocess: PreprocessConfig,
    pub train: TrainConfig,
    pub sinkhorn: SinkhornConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| CliError::Usage(m);
        self.data.synth.validate().map_err(|e| usage(format!("data.synth: {e}")))?;
        self.train.validate().map_err(|e| usage(format!("train: {e}")))?;
        let p = &self.preprocess;
        if p.k == 0 {
            return Err(usage("preprocess.k must be positive".into()));
        }
        if !(p.train_fraction > 0.0 && p.train_fraction < 1.0) {
            return Err(usage(format!("preprocess.train_fraction must lie in (0, 1), got {}", p.train_fraction)));
        }
        let s = &self.sinkhorn;
        if s.epsilon.is_some_and(|e| !(e > 0.0 && e.is_finite())) || !(s.epsilon_scale > 0.0) {
            return Err(usage("sinkhorn.epsilon and sinkhorn.epsilon_scale must be positive".into()));
        }
        if !(s.tol > 0.0) || s.max_iter == 0 {
            return Err(usage("sinkhorn.tol and sinkhorn.max_iter must be positive".into()));
        }
        let e = &self.eval;
        if !(e.p_threshold > 0.0 && e.p_threshold < 1.0) {
            return Err(usage(format!("eval.p_threshold must lie in (0, 1), got {}", e.p_threshold)));
        }
        if e.seeds.is_empty() {
            return Err(usage("eval.seeds must not be empty".into()));
        }
        Ok(())
    }

    /// The materialized config with every default filled in.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = ExperimentConfig::from_toml("[train]\nlamda_trans = 0.6\n").unwrap_err();
        assert!(matches!(&err, CliError::Usage(m) if m.contains("lamda_trans")), "{err}");
        assert!(ExperimentConfig::from_toml("[trian]\n").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let err = ExperimentConfig::from_toml("[data.synth]\nn_day2 = 0\n").unwrap_err();
        assert!(matches!(&err, CliError::Usage(m) if m.contains("n_day2")), "{err}");
        assert!(ExperimentConfig::from_toml("[preprocess]\nk = 0\n").is_err());
        assert!(ExperimentConfig::from_toml("[train]\nlr = -1.0\n").is_err());
    }
}
