//! Strict TOML run configuration.

use std::path::{Path, PathBuf};

use dceeg_core::{
    ConformerConfig, DistillConfig, EcamMethod, PromptTemplateSet, TextEncoderConfig,
    TrainRunConfig,
};
use dceeg_signal::{PreprocessConfig, SyntheticSpec};
use serde::{Deserialize, Serialize};

use crate::error::{file_error, CliError, Result};

/// Evaluation, attribution and ablation options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub folds: usize,
    pub batch_size: usize,
    pub ecam_method: EcamMethod,
    /// Training epochs per ablation variant.
    pub ablation_epochs: usize,
    /// Prompt template file, relative to the config file.
    pub templates: PathBuf,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            folds: 5,
            batch_size: 64,
            ecam_method: EcamMethod::GradientInput,
            ablation_epochs: 1,
            templates: PathBuf::from("templates.txt"),
        }
    }
}

/// Half the teacher's layers plus a projection to its latent width, same
/// token stride.
pub fn desk_student(teacher: &ConformerConfig) -> ConformerConfig {
    ConformerConfig {
        num_layers: (teacher.num_layers / 2).max(1),
        projection_dim: Some(teacher.latent_dim),
        ..teacher.clone()
    }
}

/// Every section is optional; omitted sections take their defaults. The
/// student defaults to the teacher with half the layers plus a projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    /// Drives every random choice; copied into the section seeds when the
    /// config is resolved.
    pub seed: u64,
    pub synth: SyntheticSpec,
    pub preprocess: PreprocessConfig,
    pub teacher: ConformerConfig,
    pub student: Option<ConformerConfig>,
    pub text: TextEncoderConfig,
    pub train: TrainRunConfig,
    pub distill: DistillConfig,
    pub eval: EvalOptions,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        RunConfigFile {
            seed: 7,
            synth: SyntheticSpec::default(),
            preprocess: PreprocessConfig::default(),
            teacher: ConformerConfig::default(),
            student: None,
            text: TextEncoderConfig::default(),
            train: TrainRunConfig::default(),
            distill: DistillConfig::default(),
            eval: EvalOptions::default(),
        }
    }
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    /// Read `path`; a relative template path is resolved against the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(file_error(path))?;
        let mut cfg = Self::parse(&text)?;
        if cfg.eval.templates.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.eval.templates = dir.join(&cfg.eval.templates);
            }
        }
        Ok(cfg)
    }

    /// Apply the seed override, fill in the student and propagate seeds.
    pub fn resolve(mut self, seed: Option<u64>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.synth.seed = self.seed;
        self.train.seed = self.seed;
        self.distill.seed = self.seed.wrapping_add(1);
        if self.student.is_none() {
            self.student = Some(desk_student(&self.teacher));
        }
        self.validate()?;
        Ok(self)
    }

    pub fn student(&self) -> ConformerConfig {
        self.student
            .clone()
            .unwrap_or_else(|| desk_student(&self.teacher))
    }

    pub fn validate(&self) -> Result<()> {
        self.teacher.validate()?;
        self.student().validate()?;
        self.text.validate()?;
        self.train.validate()?;
        self.distill.validate()?;
        if self.eval.folds < 2 || self.eval.batch_size == 0 {
            return Err(CliError::Usage(
                "eval.folds must be at least 2 and eval.batch_size positive".into(),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn templates(&self) -> Result<PromptTemplateSet> {
        let text = std::fs::read_to_string(&self.eval.templates)
            .map_err(file_error(&self.eval.templates))?;
        Ok(PromptTemplateSet::parse(&text)?)
    }

    /// Teacher/student windows and electrodes follow the dataset.
    pub fn fit_to_data(&mut self, electrodes: usize, window: usize) {
        for c in [Some(&mut self.teacher), self.student.as_mut()]
            .into_iter()
            .flatten()
        {
            c.electrodes = electrodes;
            c.window_samples = window;
        }
    }
}
