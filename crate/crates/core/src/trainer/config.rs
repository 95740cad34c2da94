use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::plan::{make_stage_plan, PlanMode, StagePlan};
use super::schedule::OptimizerConfig;
use crate::losses::{LossTerm, LossWeights, PerceptualReduction};
use crate::model::{DiscriminatorSpec, FeatureExtractorSpec, GeneratorSpec};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub vgg_reduction: PerceptualReduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        LossConfig {
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
            delta: w.delta,
            vgg_reduction: PerceptualReduction::default(),
        }
    }
}

impl LossConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            delta: self.delta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// JSON-lines manifest.
    pub manifest: PathBuf,
    #[serde(default = "default_crop")]
    pub hr_crop: usize,
}

fn default_crop() -> usize {
    80
}

fn default_d1() -> i64 {
    2
}

fn default_batch() -> usize {
    16
}

fn default_log_every() -> usize {
    1
}

/// Everything a training run needs, read from one TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Boundary-mask disk radius in LR pixels.
    #[serde(default = "default_d1")]
    pub d1: i64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Write a log row every this many generator steps.
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub discriminator: DiscriminatorSpec,
    #[serde(default)]
    pub extractor: FeatureExtractorSpec,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub plan: PlanMode,
    pub data: DataConfig,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    /// Parses and validates; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.out_dir);
        resolve(base, &mut cfg.data.manifest);
        if let Some(w) = cfg.extractor.weights.as_mut() {
            resolve(base, w);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<StagePlan> {
        self.generator.validate()?;
        self.loss.weights().validate()?;
        self.optimizer.validate()?;
        if self.d1 < 0 {
            return Err(Error::NegativeRadius(self.d1));
        }
        if self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::InvalidSpec(
                "batch_size and log_every must be at least 1".into(),
            ));
        }
        let scale = self.generator.scale;
        if self.data.hr_crop == 0 || !self.data.hr_crop.is_multiple_of(scale) {
            return Err(Error::IndivisibleDimensions {
                height: self.data.hr_crop,
                width: self.data.hr_crop,
                factor: scale,
            });
        }
        let plan = make_stage_plan(&self.plan)?;
        if plan.uses(LossTerm::Adv) {
            self.discriminator.validate()?;
            if self.discriminator.input_size != self.data.hr_crop {
                return Err(Error::InvalidSpec(format!(
                    "discriminator input_size {} must equal hr_crop {}",
                    self.discriminator.input_size, self.data.hr_crop
                )));
            }
        }
        Ok(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "out_dir = \"runs/a\"\n[data]\nmanifest = \"m.jsonl\"\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.data.hr_crop, 80);
        assert_eq!(cfg.generator, GeneratorSpec::default());
        assert_eq!(cfg.loss.weights(), LossWeights::default());
        assert_eq!(cfg.validate().unwrap().total_epochs(), 105);
    }

    #[test]
    fn missing_key_is_named() {
        let err = RunConfig::from_toml("[data]\nmanifest = \"m\"\n").unwrap_err();
        assert!(
            matches!(&err, Error::Config(m) if m.contains("out_dir")),
            "{err}"
        );
        let err = RunConfig::from_toml("out_dir = \"x\"\n").unwrap_err();
        assert!(err.to_string().contains("data"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}[loss]\nepsilon = 1.0\n");
        assert!(matches!(RunConfig::from_toml(&text), Err(Error::Config(_))));
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, MINIMAL).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.out_dir, dir.path().join("runs/a"));
        assert_eq!(cfg.data.manifest, dir.path().join("m.jsonl"));
    }

    #[test]
    fn discriminator_must_match_the_crop() {
        let mut cfg = RunConfig::from_toml(MINIMAL).unwrap();
        cfg.data.hr_crop = 64;
        assert!(matches!(cfg.validate(), Err(Error::InvalidSpec(_))));
        cfg.discriminator.input_size = 64;
        assert!(cfg.validate().is_ok());
        cfg.d1 = -1;
        assert!(matches!(cfg.validate(), Err(Error::NegativeRadius(-1))));
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
