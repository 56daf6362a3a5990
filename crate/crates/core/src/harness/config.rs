use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::distill::{DistillConfig, Method};
use crate::error::{Error, Result};
use crate::io::read_to_string;
use crate::nn::SgdConfig;
use crate::synth::SynthSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Teacher,
    Student,
}

/// Everything needed to reproduce one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub role: Role,
    /// Output channels of each `conv3x3 + ReLU` block.
    pub widths: Vec<usize>,
    pub epochs: usize,
    pub sgd: SgdConfig,
    pub distill: DistillConfig,
    #[serde(default)]
    pub teacher_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub inherit: bool,
    pub seed: u64,
    pub dataset: SynthSpec,
    pub output_dir: PathBuf,
}

impl TrainConfig {
    /// Wide teacher trained with cross-entropy only.
    pub fn teacher_default() -> Self {
        TrainConfig {
            role: Role::Teacher,
            widths: vec![32, 64, 64],
            epochs: 30,
            sgd: SgdConfig::default(),
            distill: DistillConfig::none(),
            teacher_checkpoint: None,
            inherit: false,
            seed: 0,
            dataset: SynthSpec::default(),
            output_dir: PathBuf::from("runs/teacher"),
        }
    }

    /// Narrow student distilled with GDD from `teacher_checkpoint`.
    pub fn student_default(teacher_checkpoint: impl Into<PathBuf>) -> Self {
        TrainConfig {
            role: Role::Student,
            widths: vec![8, 16, 16],
            epochs: 20,
            distill: DistillConfig::default(),
            teacher_checkpoint: Some(teacher_checkpoint.into()),
            output_dir: PathBuf::from("runs/student"),
            ..Self::teacher_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.widths.is_empty() || self.widths.contains(&0) {
            return bad(format!(
                "widths must be non-empty and positive, got {:?}",
                self.widths
            ));
        }
        self.sgd.validate()?;
        self.distill.validate()?;
        self.dataset
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        match self.role {
            Role::Teacher if self.distill.method != Method::None => bad(format!(
                "a teacher is trained without distillation, got method {}",
                self.distill.method
            )),
            Role::Student
                if self.distill.method != Method::None && self.teacher_checkpoint.is_none() =>
            {
                bad(format!(
                    "method {} requires teacher_checkpoint",
                    self.distill.method
                ))
            }
            _ => Ok(()),
        }
    }

    /// Parse and validate; any failure is a config error.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = read_to_string(path).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
