use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, DEFAULT_TAPS, FALLBACK_SEED};
use crate::field::GridLayout;
use crate::losses::StyleLossConfig;
use crate::render::RenderOptions;
use crate::scalar::Scalar;

/// Every training setting. Unknown keys are rejected when parsing.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Seeds ray batches, camera choice and jitter.
    pub seed: u64,
    pub pretrain: PretrainConfig,
    pub stylize: StylizeConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub iterations: usize,
    pub batch_rays: usize,
    pub resolution: [usize; 3],
    pub layout: GridLayout,
    /// Initial density everywhere (after activation).
    pub init_density: f64,
    pub lr_density: f64,
    pub lr_color: f64,
    pub distortion_weight: f64,
    pub render: RenderOptions,
    pub log_every: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            iterations: 2000,
            batch_rays: 1024,
            resolution: [64; 3],
            layout: GridLayout::Dense,
            init_density: 0.1,
            lr_density: 0.1,
            lr_color: 0.1,
            distortion_weight: 1e-3,
            render: RenderOptions {
                jitter: true,
                ..Default::default()
            },
            log_every: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StylizeConfig {
    pub iterations: usize,
    pub lr_color: f64,
    pub lr_deformation: f64,
    pub style_weight: f64,
    pub content_weight: f64,
    pub smoothness_weight: f64,
    /// Optimize the deformation grid; appearance-only stylization otherwise.
    pub deformation: bool,
    /// Match field colors to the style statistics before and after.
    pub color_transfer: bool,
    /// Depth bins for perspective augmentation; 1 disables it.
    pub perspective_bins: usize,
    pub loss: StyleLossConfig,
    pub extractor: ExtractorConfig,
    pub render: RenderOptions,
    pub log_every: usize,
}

impl Default for StylizeConfig {
    fn default() -> Self {
        StylizeConfig {
            iterations: 300,
            lr_color: 0.05,
            lr_deformation: 0.005,
            style_weight: 1.0,
            content_weight: 0.05,
            smoothness_weight: 1.0,
            deformation: true,
            color_transfer: true,
            perspective_bins: 1,
            loss: StyleLossConfig::default(),
            extractor: ExtractorConfig::default(),
            render: RenderOptions::default(),
            log_every: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorConfig {
    /// GTFW weight file; the seeded fallback extractor when unset.
    pub weights: Option<PathBuf>,
    pub taps: Vec<usize>,
    pub seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            weights: None,
            taps: DEFAULT_TAPS.to_vec(),
            seed: FALLBACK_SEED,
        }
    }
}

impl ExtractorConfig {
    pub fn build<S: Scalar>(&self) -> Result<FeatureExtractor<S>> {
        match &self.weights {
            Some(p) => FeatureExtractor::load_weights(p, &self.taps),
            None => FeatureExtractor::fallback(self.seed).with_taps(&self.taps),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be positive, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be non-negative, got {v}")))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let p = &self.pretrain;
        positive("pretrain.lr_density", p.lr_density)?;
        positive("pretrain.lr_color", p.lr_color)?;
        positive("pretrain.init_density", p.init_density)?;
        non_negative("pretrain.distortion_weight", p.distortion_weight)?;
        if p.batch_rays == 0 {
            return Err(Error::config("pretrain.batch_rays must be at least 1"));
        }
        if p.resolution.iter().any(|&n| n < 2) {
            return Err(Error::config("pretrain.resolution needs at least 2 nodes per axis"));
        }
        if let GridLayout::Factorized { rank: 0 } = p.layout {
            return Err(Error::config("pretrain.layout rank must be at least 1"));
        }
        p.render.validate()?;
        let s = &self.stylize;
        positive("stylize.lr_color", s.lr_color)?;
        positive("stylize.lr_deformation", s.lr_deformation)?;
        non_negative("stylize.style_weight", s.style_weight)?;
        non_negative("stylize.content_weight", s.content_weight)?;
        non_negative("stylize.smoothness_weight", s.smoothness_weight)?;
        if s.perspective_bins == 0 {
            return Err(Error::config("stylize.perspective_bins must be at least 1"));
        }
        s.loss.validate()?;
        s.render.validate()?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: TrainConfig = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
