//! Voxel radiance field: density, appearance and deformation grids.

mod archive;
mod grid;

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use archive::{Archive, Tensor, ARCHIVE_MAGIC, ARCHIVE_VERSION};
pub use grid::{factorized_len, Cell, GridLayout, GridSpec, VoxelGrid};

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softplus, Scalar};

/// Density (1 channel, pre-softplus), color (3 channels, pre-sigmoid) and
/// deformation (3 channels, world-unit offsets) over a shared domain.
#[derive(Clone, Debug, PartialEq)]
pub struct RadianceField<S> {
    pub density: VoxelGrid<S>,
    pub color: VoxelGrid<S>,
    pub deformation: VoxelGrid<S>,
    pub background: [S; 3],
}

/// Selects one of the three grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Density,
    Color,
    Deformation,
}

impl GridKind {
    pub const ALL: [GridKind; 3] = [GridKind::Density, GridKind::Color, GridKind::Deformation];

    pub fn name(self) -> &'static str {
        match self {
            GridKind::Density => "density",
            GridKind::Color => "color",
            GridKind::Deformation => "deformation",
        }
    }
}

/// Parameter gradients; `None` for grids that are not being trained.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FieldGrads<S> {
    pub density: Option<Vec<S>>,
    pub color: Option<Vec<S>>,
    pub deformation: Option<Vec<S>>,
}

impl<S: Scalar> FieldGrads<S> {
    /// Zeroed buffers for each requested grid.
    pub fn zeros_for(field: &RadianceField<S>, kinds: &[GridKind]) -> Self {
        let mut g = FieldGrads {
            density: None,
            color: None,
            deformation: None,
        };
        for &k in kinds {
            *g.slot_mut(k) = Some(vec![S::zero(); field.grid(k).params().len()]);
        }
        g
    }

    pub fn slot(&self, kind: GridKind) -> Option<&Vec<S>> {
        match kind {
            GridKind::Density => self.density.as_ref(),
            GridKind::Color => self.color.as_ref(),
            GridKind::Deformation => self.deformation.as_ref(),
        }
    }

    pub fn slot_mut(&mut self, kind: GridKind) -> &mut Option<Vec<S>> {
        match kind {
            GridKind::Density => &mut self.density,
            GridKind::Color => &mut self.color,
            GridKind::Deformation => &mut self.deformation,
        }
    }

    /// Adds `other` into `self` for every grid present in both.
    pub fn add_assign(&mut self, other: &FieldGrads<S>) {
        for k in GridKind::ALL {
            if let (Some(dst), Some(src)) = (self.slot_mut(k).as_mut(), other.slot(k)) {
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += *s);
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct GridMeta {
    name: String,
    spec: GridSpec,
    layout: GridLayout,
}

#[derive(Serialize, Deserialize)]
struct FieldMeta {
    background: [f64; 3],
    grids: Vec<GridMeta>,
}

impl<S: Scalar> RadianceField<S> {
    pub fn new(
        density: VoxelGrid<S>,
        color: VoxelGrid<S>,
        deformation: VoxelGrid<S>,
        background: [S; 3],
    ) -> Result<Self> {
        let f = RadianceField {
            density,
            color,
            deformation,
            background,
        };
        f.validate()?;
        Ok(f)
    }

    /// Dense field over `domain` (its channel count is ignored); the
    /// deformation grid shares the density resolution and starts at zero.
    pub fn dense(domain: &GridSpec, density_raw: S, color_raw: S, background: [S; 3]) -> Result<Self> {
        Self::new(
            VoxelGrid::dense(domain.with_channels(1), density_raw)?,
            VoxelGrid::dense(domain.with_channels(3), color_raw)?,
            VoxelGrid::dense(domain.with_channels(3), S::zero())?,
            background,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.density.spec();
        if d.channels != 1 {
            return Err(Error::invalid("density grid must have 1 channel"));
        }
        if self.color.channels() != 3 {
            return Err(Error::invalid("color grid must have 3 channels"));
        }
        if self.deformation.channels() != 3 {
            return Err(Error::invalid("deformation grid must have exactly 3 channels"));
        }
        if !d.same_domain(self.color.spec()) || !d.same_domain(self.deformation.spec()) {
            return Err(Error::invalid("density, color and deformation grids must share bounds"));
        }
        if self.background.iter().any(|c| !(*c >= S::zero() && *c <= S::one())) {
            return Err(Error::invalid("background color must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let s = self.density.spec();
        (s.bounds_min, s.bounds_max)
    }

    pub fn grid(&self, kind: GridKind) -> &VoxelGrid<S> {
        match kind {
            GridKind::Density => &self.density,
            GridKind::Color => &self.color,
            GridKind::Deformation => &self.deformation,
        }
    }

    pub fn grid_mut(&mut self, kind: GridKind) -> &mut VoxelGrid<S> {
        match kind {
            GridKind::Density => &mut self.density,
            GridKind::Color => &mut self.color,
            GridKind::Deformation => &mut self.deformation,
        }
    }

    pub fn init_deformation_zero(&mut self) {
        self.deformation.fill(S::zero());
    }

    /// `softplus` of the interpolated density at each point.
    pub fn sample_density(&self, points: &[[S; 3]]) -> Result<Vec<S>> {
        Ok(self.density.trilinear_sample(points)?.into_iter().map(softplus).collect())
    }

    /// `sigmoid` of the interpolated color at each point.
    pub fn sample_color(&self, points: &[[S; 3]]) -> Result<Vec<[S; 3]>> {
        let raw = self.color.trilinear_sample(points)?;
        Ok(raw
            .chunks_exact(3)
            .map(|c| [sigmoid(c[0]), sigmoid(c[1]), sigmoid(c[2])])
            .collect())
    }

    /// Interpolated offsets; no activation.
    pub fn sample_deformation(&self, points: &[[S; 3]]) -> Result<Vec<[S; 3]>> {
        let raw = self.deformation.trilinear_sample(points)?;
        Ok(raw.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    /// Appends this field's grids to `archive` (f32 payloads, `field.<grid>` tensors).
    pub fn write_archive(&self, archive: &mut Archive) {
        let meta = FieldMeta {
            background: self.background.map(|c| c.to_f64_lossy()),
            grids: GridKind::ALL
                .iter()
                .map(|&k| GridMeta {
                    name: k.name().to_string(),
                    spec: self.grid(k).spec().clone(),
                    layout: self.grid(k).layout(),
                })
                .collect(),
        };
        if !archive.meta.is_object() {
            archive.meta = Value::Object(Default::default());
        }
        archive.meta["field"] = serde_json::to_value(meta).expect("field meta serializes");
        for k in GridKind::ALL {
            archive.push(
                format!("field.{}", k.name()),
                self.grid(k).params().iter().map(|v| v.to_f32_lossy()).collect(),
            );
        }
    }

    pub fn read_archive(archive: &Archive) -> Result<Self> {
        let meta: FieldMeta = serde_json::from_value(
            archive
                .meta
                .get("field")
                .cloned()
                .ok_or_else(|| Error::format("checkpoint has no field section"))?,
        )
        .map_err(|e| Error::format(format!("corrupt field metadata: {e}")))?;
        let mut grids = Vec::with_capacity(3);
        for k in GridKind::ALL {
            let gm = meta
                .grids
                .iter()
                .find(|g| g.name == k.name())
                .ok_or_else(|| Error::format(format!("checkpoint lacks the {} grid", k.name())))?;
            let data = archive.tensor(&format!("field.{}", k.name()))?;
            let params = data.iter().map(|&v| S::lit(v as f64)).collect();
            grids.push(
                VoxelGrid::from_parts(gm.spec.clone(), gm.layout, params)
                    .map_err(|e| Error::format(format!("{} grid: {e}", k.name())))?,
            );
        }
        let deformation = grids.pop().unwrap();
        let color = grids.pop().unwrap();
        let density = grids.pop().unwrap();
        Self::new(density, color, deformation, meta.background.map(S::lit))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut a = Archive::default();
        self.write_archive(&mut a);
        a.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_archive(&Archive::load(path)?)
    }

    pub fn cast<T: Scalar>(&self) -> RadianceField<T> {
        let conv = |g: &VoxelGrid<S>| {
            VoxelGrid::from_parts(
                g.spec().clone(),
                g.layout(),
                g.params().iter().map(|v| T::lit(v.to_f64_lossy())).collect(),
            )
            .expect("same shape")
        };
        RadianceField {
            density: conv(&self.density),
            color: conv(&self.color),
            deformation: conv(&self.deformation),
            background: self.background.map(|v| T::lit(v.to_f64_lossy())),
        }
    }
}

#[cfg(test)]
mod tests;
