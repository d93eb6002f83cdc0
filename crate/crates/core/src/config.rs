//! One document holding every tunable, loaded from TOML or JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::head::HeadConfig;
use crate::loss::{LossOptions, LossWeights};
use crate::mask::MaskConfig;
use crate::nms::NmsConfig;
use crate::synth::SceneSpec;

/// The top-level `mask` section is authoritative: [`DetectorConfig::resolve`]
/// copies it into the NMS and evaluation sections.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub head: HeadConfig,
    pub mask: MaskConfig,
    pub nms: NmsConfig,
    pub eval: EvalConfig,
    pub loss: LossWeights,
    pub loss_options: LossOptions,
    pub synth: SceneSpec,
}

impl DetectorConfig {
    pub fn resolve(mut self) -> Self {
        self.nms.mask = self.mask;
        self.eval.mask = self.mask;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.head.validate()?;
        self.mask.validate()?;
        self.nms.validate()?;
        self.eval.validate()?;
        self.loss.validate()?;
        if self.loss.xi.len() != self.head.scales.len() {
            return Err(Error::Config(format!(
                "{} objectness balance weights for {} scales",
                self.loss.xi.len(),
                self.head.scales.len()
            )));
        }
        self.synth.validate()
    }

    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: DetectorConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        let cfg = cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }
}
