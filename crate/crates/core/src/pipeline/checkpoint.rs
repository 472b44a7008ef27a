use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::{Adam, AdamSettings};
use crate::error::{Error, Result};
use crate::field::{Archive, GridLayout, GridSpec, RadianceField, VoxelGrid};
use crate::perspective::BinLayout;
use crate::scalar::Scalar;

/// Version of the checkpoint section inside the archive metadata.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrained,
    Stylizing,
    Stylized,
}

/// Training state. Tensors are stored as `f32`, so a round trip is exact for
/// `f32` fields and rounds `f64` ones.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<S> {
    pub stage: Stage,
    pub iteration: usize,
    pub config: TrainConfig,
    pub field: RadianceField<S>,
    pub optimizer: Option<Adam<S>>,
    pub layout: Option<BinLayout>,
    /// Color grid of the content reference during stylization.
    pub reference_color: Option<VoxelGrid<S>>,
    pub psnr: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct GridShape {
    spec: GridSpec,
    layout: GridLayout,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    version: u32,
    stage: Stage,
    iteration: usize,
    config: TrainConfig,
    layout: Option<BinLayout>,
    psnr: Option<f64>,
    optimizer: Option<AdamSettings>,
    reference_color: Option<GridShape>,
}

const REFERENCE_TENSOR: &str = "reference.color";
const OPTIMIZER_PREFIX: &str = "adam";

impl<S: Scalar> Checkpoint<S> {
    /// Checkpoint of a freshly pretrained field.
    pub fn pretrained(field: RadianceField<S>, config: TrainConfig, iteration: usize, psnr: f64) -> Self {
        Checkpoint {
            stage: Stage::Pretrained,
            iteration,
            config,
            field,
            optimizer: None,
            layout: None,
            reference_color: None,
            psnr: Some(psnr),
        }
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::default();
        self.field.write_archive(&mut a);
        let meta = CheckpointMeta {
            version: CHECKPOINT_VERSION,
            stage: self.stage,
            iteration: self.iteration,
            config: self.config.clone(),
            layout: self.layout.clone(),
            psnr: self.psnr,
            optimizer: self.optimizer.as_ref().map(|o| o.settings.clone()),
            reference_color: self.reference_color.as_ref().map(|g| GridShape {
                spec: g.spec().clone(),
                layout: g.layout(),
            }),
        };
        a.meta["checkpoint"] = serde_json::to_value(meta).expect("checkpoint meta serializes");
        if let Some(o) = &self.optimizer {
            o.write_archive(&mut a, OPTIMIZER_PREFIX);
        }
        if let Some(g) = &self.reference_color {
            a.push(REFERENCE_TENSOR, g.params().iter().map(|v| v.to_f32_lossy()).collect());
        }
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let section = a
            .meta
            .get("checkpoint")
            .ok_or_else(|| Error::format("archive is a bare field, not a training checkpoint"))?;
        if let Some(v) = section.get("version").and_then(|v| v.as_u64()) {
            if v != CHECKPOINT_VERSION as u64 {
                return Err(Error::format(format!(
                    "checkpoint version {v} is not supported (expected {CHECKPOINT_VERSION})"
                )));
            }
        }
        let meta: CheckpointMeta = serde_json::from_value(section.clone())
            .map_err(|e| Error::format(format!("corrupt checkpoint metadata: {e}")))?;
        let field = RadianceField::read_archive(a)?;
        let optimizer = meta
            .optimizer
            .map(|s| Adam::read_archive(a, OPTIMIZER_PREFIX, s, &field))
            .transpose()?;
        let reference_color = match meta.reference_color {
            Some(shape) => {
                let data = a.tensor(REFERENCE_TENSOR)?;
                Some(
                    VoxelGrid::from_parts(shape.spec, shape.layout, data.iter().map(|&v| S::lit(v as f64)).collect())
                        .map_err(|e| Error::format(format!("reference color grid: {e}")))?,
                )
            }
            None => None,
        };
        Ok(Checkpoint {
            stage: meta.stage,
            iteration: meta.iteration,
            config: meta.config,
            field,
            optimizer,
            layout: meta.layout,
            reference_color,
            psnr: meta.psnr,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}
