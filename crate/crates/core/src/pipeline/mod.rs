//! Photometric pretraining, stylization, color transfer and checkpoints.

mod checkpoint;
mod color;
mod config;
mod optim;
mod pretrain;
mod regularizers;
mod stylize;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, Stage, CHECKPOINT_VERSION};
pub use color::{color_transfer_transform, ColorStats, ColorTransform, COVARIANCE_EPS};
pub use config::{ExtractorConfig, PretrainConfig, StylizeConfig, TrainConfig};
pub use optim::{Adam, AdamSettings};
pub use pretrain::{dataset_psnr, init_field, mse, pretrain, pretrain_field, psnr_from_mse, PretrainReport};
pub use regularizers::{distortion_loss, smoothness, DistortionRegularizer};
pub use stylize::{stylize, StepReport, StylizeReport, Stylizer};

/// One line of the JSON-lines training log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub stage: String,
    pub iteration: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub photometric: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distortion: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub style: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub content: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoothness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
}

impl Metrics {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}
