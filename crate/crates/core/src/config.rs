//! Run configuration: a strict JSON document that fixes every random
//! decision of a synthesis run, plus the named presets.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentSpec, AUGMENT_PRESETS};
use crate::error::{Error, Result};
use crate::preprocess::PreprocessOptions;
use crate::synth::{CompositionStrategy, MixUpMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Any in-bounds position.
    Unconstrained,
    /// Patch centres must fall inside the detected field of view.
    Fov,
}

/// Optional default locations; command-line arguments take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bank: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normals: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; there is deliberately no default.
    pub seed: u64,
    #[serde(default)]
    pub preprocess: PreprocessOptions,
    pub augment: AugmentSpec,
    pub mixup: MixUpMode,
    pub strategy: CompositionStrategy,
    pub placement: Placement,
    #[serde(default, skip_serializing_if = "is_default_paths")]
    pub paths: RunPaths,
}

fn is_default_paths(p: &RunPaths) -> bool {
    *p == RunPaths::default()
}

/// Mixup-coefficient presets, all on the five-op augmentation.
const MIXUP_PRESETS: &[(&str, MixUpMode)] = &[
    ("mixup-none", MixUpMode::HardPaste),
    ("mixup-0.8", MixUpMode::Fixed { lambda: 0.8 }),
    ("mixup-0.7", MixUpMode::Fixed { lambda: 0.7 }),
    ("mixup-0.5", MixUpMode::Fixed { lambda: 0.5 }),
    ("mixup-random", MixUpMode::Random { lo: 0.5, hi: 0.8 }),
];

pub fn preset_names() -> Vec<&'static str> {
    let mut names: Vec<&str> = AUGMENT_PRESETS.iter().map(|(n, _)| *n).collect();
    names.extend(MIXUP_PRESETS.iter().map(|(n, _)| *n));
    names.push("covid-ct");
    names
}

impl RunConfig {
    fn fundus(augment: AugmentSpec, mixup: MixUpMode) -> Self {
        RunConfig {
            seed: 0,
            preprocess: PreprocessOptions::fundus(),
            augment,
            mixup,
            strategy: CompositionStrategy::dr_grades(),
            placement: Placement::Fov,
            paths: RunPaths::default(),
        }
    }

    /// Named run presets.
    ///
    /// Augmentation-subset presets paste without blending so that only the
    /// augmentation differs between them; `paper-best` pairs the five-op
    /// augmentation with random λ ~ U(0.5, 0.8). The `mixup-*` presets vary
    /// only λ. `covid-ct` targets lung CT slices.
    pub fn preset(name: &str) -> Result<Self> {
        if name == "paper-best" {
            return Ok(RunConfig::fundus(
                AugmentSpec::preset("paper-best")?,
                MixUpMode::default(),
            ));
        }
        if let Some((_, mode)) = MIXUP_PRESETS.iter().find(|(n, _)| *n == name) {
            return Ok(RunConfig::fundus(AugmentSpec::preset("paper-best")?, *mode));
        }
        if name == "covid-ct" {
            return Ok(RunConfig {
                seed: 0,
                preprocess: PreprocessOptions::ct(),
                augment: AugmentSpec::preset("paper-best")?,
                mixup: MixUpMode::default(),
                strategy: CompositionStrategy::preset("covid")?,
                placement: Placement::Unconstrained,
                paths: RunPaths::default(),
            });
        }
        Ok(RunConfig::fundus(
            AugmentSpec::preset(name)?,
            MixUpMode::HardPaste,
        ))
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.augment.validate()?;
        self.mixup.validate()?;
        self.strategy.validate()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

/// Parses and checks a config document. Unknown keys are errors.
pub fn validate_config(raw: &str) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_str(raw).map_err(|source| Error::Json {
        context: "run config".into(),
        source,
    })?;
    cfg.validate()?;
    Ok(cfg)
}
