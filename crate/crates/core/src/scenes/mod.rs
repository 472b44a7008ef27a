//! Posed-image datasets, the `cameras.json` manifest, image files and
//! procedural scenes.

mod files;
mod synthetic;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use files::{
    load_style_pair, read_depth, read_depth_sidecar, read_png_rgb, write_depth_png16, write_depth_sidecar,
    write_png_rgb, DEPTH_SIDECAR_EXT,
};
pub use synthetic::{
    generate_scene, procedural_style, voxelize, CameraArc, Primitive, Shape, StyleKind, SyntheticSceneSpec, Texture,
};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::render::{Camera, Intrinsics};
use crate::scalar::Scalar;

pub const MANIFEST_NAME: &str = "cameras.json";
pub const MANIFEST_VERSION: u32 = 1;

/// One posed training image.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame<S> {
    pub camera: Camera,
    pub image: Image<S>,
    /// Ground-truth ray depth (synthetic scenes only).
    pub depth: Option<Image<S>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset<S> {
    pub frames: Vec<Frame<S>>,
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
    pub near: Option<f64>,
    pub far: Option<f64>,
    pub background: [f64; 3],
}

impl<S: Scalar> SceneDataset<S> {
    pub fn validate(&self) -> Result<()> {
        let first = self.frames.first().ok_or_else(|| Error::invalid("dataset has no frames"))?;
        let (w, h) = (first.camera.width(), first.camera.height());
        for (i, f) in self.frames.iter().enumerate() {
            f.camera.validate()?;
            if f.camera.width() != w || f.camera.height() != h {
                return Err(Error::invalid(format!("frame {i} has a different camera size")));
            }
            if f.image.width != w || f.image.height != h || f.image.channels != 3 {
                return Err(Error::invalid(format!(
                    "frame {i} image is {}x{}x{}, expected {w}x{h}x3",
                    f.image.width, f.image.height, f.image.channels
                )));
            }
            if let Some(d) = &f.depth {
                if d.width != w || d.height != h || d.channels != 1 {
                    return Err(Error::invalid(format!("frame {i} depth does not match its image")));
                }
            }
        }
        if (0..3).any(|a| !(self.bounds_min[a] < self.bounds_max[a])) {
            return Err(Error::invalid("scene bounds must have positive extent"));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::invalid("background color must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn cameras(&self) -> Vec<Camera> {
        self.frames.iter().map(|f| f.camera.clone()).collect()
    }

    pub fn cast<T: Scalar>(&self) -> SceneDataset<T> {
        SceneDataset {
            frames: self
                .frames
                .iter()
                .map(|f| Frame {
                    camera: f.camera.clone(),
                    image: f.image.cast(),
                    depth: f.depth.as_ref().map(|d| d.cast()),
                })
                .collect(),
            bounds_min: self.bounds_min,
            bounds_max: self.bounds_max,
            near: self.near,
            far: self.far,
            background: self.background,
        }
    }
}

/// On-disk `cameras.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub intrinsics: ManifestIntrinsics,
    pub bounds: ManifestBounds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub near: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub far: Option<f64>,
    pub background: [f64; 3],
    pub frames: Vec<ManifestFrame>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(rename = "W")]
    pub width: usize,
    #[serde(rename = "H")]
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFrame {
    pub file: String,
    /// Camera-to-world `[R | t]`, rows.
    pub transform: [[f64; 4]; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_file: Option<String>,
}

impl Manifest {
    pub fn cameras(&self) -> Result<Vec<Camera>> {
        let k = &self.intrinsics;
        let intr = Intrinsics {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
        };
        self.frames
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let m = f.transform;
                let rot = [0, 1, 2].map(|r| [m[r][0], m[r][1], m[r][2]]);
                let t = [m[0][3], m[1][3], m[2][3]];
                Camera::new(intr.clone(), rot, t)
                    .map_err(|e| Error::invalid(format!("frame {i} ({}) has an invalid pose: {e}", f.file)))
            })
            .collect()
    }
}

fn transform_of(c: &Camera) -> [[f64; 4]; 3] {
    [0, 1, 2].map(|r| [c.rotation[r][0], c.rotation[r][1], c.rotation[r][2], c.translation[r]])
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::format(format!(
            "{} has version {}, expected {MANIFEST_VERSION}",
            path.display(),
            m.version
        )));
    }
    Ok(m)
}

pub fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    let path = dir.join(MANIFEST_NAME);
    let mut text = serde_json::to_string_pretty(m)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Writes `images/NNN.png`, `depth/NNN.png` plus raw sidecars, and the manifest.
pub fn save_dataset<S: Scalar>(dataset: &SceneDataset<S>, dir: &Path) -> Result<()> {
    dataset.validate()?;
    for sub in ["images", "depth"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let first = &dataset.frames[0].camera.intrinsics;
    let mut frames = Vec::with_capacity(dataset.frames.len());
    for (i, f) in dataset.frames.iter().enumerate() {
        let file = format!("images/{i:03}.png");
        write_png_rgb(&dir.join(&file), &f.image)?;
        let depth_file = match &f.depth {
            Some(d) => {
                write_depth_png16(&dir.join(format!("depth/{i:03}.png")), d)?;
                let name = format!("depth/{i:03}.{DEPTH_SIDECAR_EXT}");
                write_depth_sidecar(&dir.join(&name), d)?;
                Some(name)
            }
            None => None,
        };
        frames.push(ManifestFrame {
            file,
            transform: transform_of(&f.camera),
            depth_file,
        });
    }
    let m = Manifest {
        version: MANIFEST_VERSION,
        intrinsics: ManifestIntrinsics {
            fx: first.fx,
            fy: first.fy,
            cx: first.cx,
            cy: first.cy,
            width: first.width,
            height: first.height,
        },
        bounds: ManifestBounds {
            min: dataset.bounds_min,
            max: dataset.bounds_max,
        },
        near: dataset.near,
        far: dataset.far,
        background: dataset.background,
        frames,
    };
    write_manifest(dir, &m)
}

pub fn load_dataset<S: Scalar>(dir: &Path) -> Result<SceneDataset<S>> {
    let path = dir.join(MANIFEST_NAME);
    if !path.exists() {
        return Err(Error::invalid(format!("no {MANIFEST_NAME} manifest in {}", dir.display())));
    }
    let m = read_manifest(dir)?;
    let cameras = m.cameras()?;
    let mut frames = Vec::with_capacity(cameras.len());
    for (f, camera) in m.frames.iter().zip(cameras) {
        let image = read_png_rgb(&dir.join(&f.file))?;
        if image.width != camera.width() || image.height != camera.height() {
            return Err(Error::invalid(format!(
                "{} is {}x{} but the intrinsics declare {}x{}",
                f.file,
                image.width,
                image.height,
                camera.width(),
                camera.height()
            )));
        }
        let depth = f.depth_file.as_ref().map(|d| read_depth(&dir.join(d))).transpose()?;
        frames.push(Frame { camera, image, depth });
    }
    let ds = SceneDataset {
        frames,
        bounds_min: m.bounds.min,
        bounds_max: m.bounds.max,
        near: m.near,
        far: m.far,
        background: m.background,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests;
