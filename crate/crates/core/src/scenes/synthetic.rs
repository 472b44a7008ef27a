//! Procedural scenes built from boxes and spheres, and procedural style pairs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Frame, SceneDataset};
use crate::error::{Error, Result};
use crate::field::{GridSpec, RadianceField, VoxelGrid};
use crate::image::Image;
use crate::perspective::StylePair;
use crate::render::{render_view, Camera, Intrinsics, RenderOptions};
use crate::scalar::{logit, softplus_inv, Scalar};

/// Raw density of empty space; small but with a usable gradient.
const EMPTY_RAW_DENSITY: f64 = -7.0;
const COLOR_EPS: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Box { center: [f64; 3], size: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
}

impl Shape {
    /// Signed distance, negative inside.
    pub fn sdf(&self, p: [f64; 3]) -> f64 {
        match self {
            Shape::Sphere { center, radius } => {
                (0..3).map(|a| (p[a] - center[a]).powi(2)).sum::<f64>().sqrt() - radius
            }
            Shape::Box { center, size } => {
                let q: [f64; 3] = std::array::from_fn(|a| (p[a] - center[a]).abs() - 0.5 * size[a]);
                let outside = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
                let inside = q[0].max(q[1]).max(q[2]).min(0.0);
                outside + inside
            }
        }
    }

    pub fn center(&self) -> [f64; 3] {
        match self {
            Shape::Box { center, .. } | Shape::Sphere { center, .. } => *center,
        }
    }

    fn aabb(&self) -> ([f64; 3], [f64; 3]) {
        match self {
            Shape::Sphere { center, radius } => (center.map(|c| c - radius), center.map(|c| c + radius)),
            Shape::Box { center, size } => (
                std::array::from_fn(|a| center[a] - 0.5 * size[a]),
                std::array::from_fn(|a| center[a] + 0.5 * size[a]),
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Texture {
    /// Alternates albedo and `color` on a 3D checkerboard with `scale` cells per unit.
    Checker { scale: f64, color: [f64; 3] },
    /// Bands of width `period / 2` along `axis`.
    Stripes { period: f64, axis: usize, color: [f64; 3] },
    /// `color` on the positive side of the center along `axis`.
    TwoTone { axis: usize, color: [f64; 3] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Primitive {
    pub shape: Shape,
    pub albedo: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texture: Option<Texture>,
}

impl Primitive {
    pub fn color_at(&self, p: [f64; 3]) -> [f64; 3] {
        match &self.texture {
            None => self.albedo,
            Some(Texture::Checker { scale, color }) => {
                let parity: i64 = p.iter().map(|v| (v * scale).floor() as i64).sum();
                if parity.rem_euclid(2) == 0 {
                    self.albedo
                } else {
                    *color
                }
            }
            Some(Texture::Stripes { period, axis, color }) => {
                if ((p[*axis] / (0.5 * period)).floor() as i64).rem_euclid(2) == 0 {
                    self.albedo
                } else {
                    *color
                }
            }
            Some(Texture::TwoTone { axis, color }) => {
                if p[*axis] >= self.shape.center()[*axis] {
                    *color
                } else {
                    self.albedo
                }
            }
        }
    }
}

/// Forward-facing cameras: `cameras[0]` looks straight down `-z` at the
/// target, the rest spread evenly over a horizontal arc.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraArc {
    pub target: [f64; 3],
    pub distance: f64,
    pub arc_degrees: f64,
    pub elevation_degrees: f64,
    pub fov_y_degrees: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraArc {
    fn default() -> Self {
        CameraArc {
            target: [0.0; 3],
            distance: 3.0,
            arc_degrees: 40.0,
            elevation_degrees: 10.0,
            fov_y_degrees: 40.0,
            width: 64,
            height: 64,
        }
    }
}

impl CameraArc {
    pub fn cameras(&self, n: usize) -> Result<Vec<Camera>> {
        if n == 0 {
            return Err(Error::invalid("at least one view is required"));
        }
        let intr = Intrinsics::from_fov(self.width, self.height, self.fov_y_degrees);
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let (theta, phi) = if k == 0 {
                (0.0, 0.0)
            } else if n == 2 {
                (0.5 * self.arc_degrees, self.elevation_degrees)
            } else {
                let f = (k - 1) as f64 / (n - 2) as f64;
                (self.arc_degrees * (f - 0.5), self.elevation_degrees)
            };
            let (t, p) = (theta.to_radians(), phi.to_radians());
            let eye = [
                self.target[0] + self.distance * t.sin() * p.cos(),
                self.target[1] + self.distance * p.sin(),
                self.target[2] + self.distance * t.cos() * p.cos(),
            ];
            out.push(Camera::look_at(intr.clone(), eye, self.target, [0.0, 1.0, 0.0])?);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    pub primitives: Vec<Primitive>,
    pub background: [f64; 3],
    pub seed: u64,
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
    pub resolution: [usize; 3],
    pub interior_density: f64,
    /// Width of the density falloff around each surface, in voxels.
    pub shell_voxels: f64,
    /// Color of nodes far from every surface; the background when unset.
    pub exterior_color: Option<[f64; 3]>,
    /// Per-node albedo jitter amplitude, drawn from `seed`.
    pub color_noise: f64,
    pub camera: CameraArc,
    pub render: RenderOptions,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        SyntheticSceneSpec {
            primitives: vec![
                Primitive {
                    shape: Shape::Sphere {
                        center: [-0.35, 0.0, 0.2],
                        radius: 0.4,
                    },
                    albedo: [0.85, 0.25, 0.2],
                    texture: Some(Texture::TwoTone {
                        axis: 1,
                        color: [0.2, 0.35, 0.85],
                    }),
                },
                Primitive {
                    shape: Shape::Box {
                        center: [0.45, -0.1, -0.1],
                        size: [0.6, 0.7, 0.6],
                    },
                    albedo: [0.9, 0.8, 0.3],
                    texture: Some(Texture::Checker {
                        scale: 5.0,
                        color: [0.3, 0.6, 0.3],
                    }),
                },
                Primitive {
                    shape: Shape::Box {
                        center: [0.0, 0.0, -0.85],
                        size: [2.0, 2.0, 0.2],
                    },
                    albedo: [0.6, 0.6, 0.65],
                    texture: Some(Texture::Stripes {
                        period: 0.5,
                        axis: 0,
                        color: [0.35, 0.35, 0.4],
                    }),
                },
            ],
            background: [0.9, 0.9, 0.9],
            seed: 0,
            bounds_min: [-1.0; 3],
            bounds_max: [1.0; 3],
            resolution: [64; 3],
            interior_density: 100.0,
            shell_voxels: 1.5,
            exterior_color: None,
            color_noise: 0.0,
            camera: CameraArc::default(),
            render: RenderOptions::default(),
        }
    }
}

impl SyntheticSceneSpec {
    /// A sphere whose upper half is blue and lower half red.
    pub fn two_tone_sphere() -> Self {
        SyntheticSceneSpec {
            primitives: vec![Primitive {
                shape: Shape::Sphere {
                    center: [0.0; 3],
                    radius: 0.5,
                },
                albedo: [0.85, 0.2, 0.15],
                texture: Some(Texture::TwoTone {
                    axis: 1,
                    color: [0.15, 0.25, 0.85],
                }),
            }],
            ..Default::default()
        }
    }

    /// A checkered box.
    pub fn textured_box() -> Self {
        SyntheticSceneSpec {
            primitives: vec![Primitive {
                shape: Shape::Box {
                    center: [0.0; 3],
                    size: [0.9, 0.9, 0.9],
                },
                albedo: [0.9, 0.75, 0.3],
                texture: Some(Texture::Checker {
                    scale: 4.0,
                    color: [0.2, 0.3, 0.7],
                }),
            }],
            ..Default::default()
        }
    }

    /// Two slabs facing the reference camera with fronts at forward depths
    /// `near` and `far`; the near slab covers the left half of the view.
    pub fn two_planes(near: f64, far: f64) -> Self {
        let d = 0.5 * (near + far);
        let half = 0.5 * (far - near) + 0.5;
        let extent = 2.5;
        SyntheticSceneSpec {
            primitives: vec![
                Primitive {
                    shape: Shape::Box {
                        center: [-0.5 * extent, 0.0, d - near - 0.1],
                        size: [extent, 2.0 * extent, 0.2],
                    },
                    albedo: [0.8, 0.3, 0.2],
                    texture: None,
                },
                Primitive {
                    shape: Shape::Box {
                        center: [0.0, 0.0, d - far - 0.1],
                        size: [2.0 * extent, 2.0 * extent, 0.2],
                    },
                    albedo: [0.2, 0.4, 0.8],
                    texture: None,
                },
            ],
            bounds_min: [-extent, -extent, -half],
            bounds_max: [extent, extent, half],
            camera: CameraArc {
                distance: d,
                arc_degrees: 10.0,
                elevation_degrees: 3.0,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::invalid("a synthetic scene needs at least one primitive"));
        }
        let unit = |c: &[f64; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
        if !unit(&self.background) || self.exterior_color.as_ref().is_some_and(|c| !unit(c)) {
            return Err(Error::invalid("background and exterior colors must lie in [0, 1]"));
        }
        for (i, p) in self.primitives.iter().enumerate() {
            let colors = match &p.texture {
                Some(Texture::Checker { color, .. })
                | Some(Texture::Stripes { color, .. })
                | Some(Texture::TwoTone { color, .. }) => vec![p.albedo, *color],
                None => vec![p.albedo],
            };
            if !colors.iter().all(unit) {
                return Err(Error::invalid(format!("primitive {i} has a color outside [0, 1]")));
            }
            if let Some(Texture::Stripes { axis, .. } | Texture::TwoTone { axis, .. }) = &p.texture {
                if *axis > 2 {
                    return Err(Error::invalid(format!("primitive {i} texture axis must be 0, 1 or 2")));
                }
            }
            let (lo, hi) = p.shape.aabb();
            if (0..3).any(|a| lo[a] < self.bounds_min[a] - 1e-9 || hi[a] > self.bounds_max[a] + 1e-9) {
                return Err(Error::invalid(format!("primitive {i} extends beyond the scene bounds")));
            }
        }
        if !(self.interior_density > 0.0) || !(self.shell_voxels > 0.0) {
            return Err(Error::invalid("interior density and shell width must be positive"));
        }
        Ok(())
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Ground-truth radiance field of a synthetic scene. Density is the interior
/// value inside every primitive and falls smoothly to empty across a shell
/// centered on the surface.
pub fn voxelize<S: Scalar>(spec: &SyntheticSceneSpec) -> Result<RadianceField<S>> {
    spec.validate()?;
    let domain = GridSpec::new(spec.resolution, spec.bounds_min, spec.bounds_max, 1)?;
    let h = domain.spacing().iter().copied().fold(f64::INFINITY, f64::min);
    let shell = spec.shell_voxels * h;
    let band = 0.5 * shell + 1.5 * h;
    let exterior = spec.exterior_color.unwrap_or(spec.background);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let [nx, ny, nz] = spec.resolution;
    let mut density = Vec::with_capacity(nx * ny * nz);
    let mut color = Vec::with_capacity(3 * nx * ny * nz);
    for iz in 0..nz {
        for iy in 0..ny {
            for ix in 0..nx {
                let p = domain.node_position(ix, iy, iz);
                let (k, d) = spec
                    .primitives
                    .iter()
                    .enumerate()
                    .map(|(k, pr)| (k, pr.shape.sdf(p)))
                    .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
                let sigma = spec.interior_density * (1.0 - smoothstep((d + 0.5 * shell) / shell));
                density.push(S::lit(softplus_inv(sigma).max(EMPTY_RAW_DENSITY)));
                let mut c = if d <= band { spec.primitives[k].color_at(p) } else { exterior };
                if spec.color_noise > 0.0 {
                    for v in c.iter_mut() {
                        *v = (*v + rng.random_range(-spec.color_noise..=spec.color_noise)).clamp(0.0, 1.0);
                    }
                }
                color.extend(c.iter().map(|&v| S::lit(logit(v, COLOR_EPS))));
            }
        }
    }
    RadianceField::new(
        VoxelGrid::from_dense(domain.clone(), density)?,
        VoxelGrid::from_dense(domain.with_channels(3), color)?,
        VoxelGrid::dense(domain.with_channels(3), S::zero())?,
        spec.background.map(S::lit),
    )
}

/// Voxelizes the scene and renders `n_views` posed RGB images and depths.
pub fn generate_scene<S: Scalar>(spec: &SyntheticSceneSpec, n_views: usize) -> Result<(SceneDataset<S>, RadianceField<S>)> {
    let field = voxelize::<S>(spec)?;
    let cameras = spec.camera.cameras(n_views)?;
    let mut frames = Vec::with_capacity(n_views);
    for camera in cameras {
        let view = render_view(&field, &camera, &spec.render, false)?;
        frames.push(Frame {
            camera,
            image: view.rgb,
            depth: Some(view.depth),
        });
    }
    let ds = SceneDataset {
        frames,
        bounds_min: spec.bounds_min,
        bounds_max: spec.bounds_max,
        near: spec.render.near,
        far: spec.render.far,
        background: spec.background,
    };
    ds.validate()?;
    Ok((ds, field))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleKind {
    /// Diagonal color bands over a rolling depth profile.
    Waves,
    /// Raised discs on a flat colored ground.
    Dots,
    /// Bricks in running bond with recessed mortar.
    Bricks,
}

impl StyleKind {
    pub const ALL: [StyleKind; 3] = [StyleKind::Waves, StyleKind::Dots, StyleKind::Bricks];

    pub fn name(self) -> &'static str {
        match self {
            StyleKind::Waves => "waves",
            StyleKind::Dots => "dots",
            StyleKind::Bricks => "bricks",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// A procedural RGB-D style pair. Depth is in `[1, 2]`, larger is farther.
pub fn procedural_style<S: Scalar>(kind: StyleKind, width: usize, height: usize, seed: u64) -> Result<StylePair<S>> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("style size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let palette: Vec<[f64; 3]> = (0..3)
        .map(|_| std::array::from_fn(|_| rng.random_range(0.1..0.95)))
        .collect();
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let s = width.min(height) as f64;
    let mut rgb = Image::new(width, height, 3);
    let mut depth = Image::new(width, height, 1);
    for y in 0..height {
        for x in 0..width {
            let (u, v) = ((x as f64 + 0.5) / s, (y as f64 + 0.5) / s);
            let (c, d) = match kind {
                StyleKind::Waves => {
                    let t = (u + v) * 4.0;
                    let band = ((t.floor() as i64).rem_euclid(3)) as usize;
                    (palette[band], 1.5 + 0.5 * (std::f64::consts::TAU * t + phase).sin())
                }
                StyleKind::Dots => {
                    let (cu, cv) = ((u * 5.0).fract() - 0.5, (v * 5.0).fract() - 0.5);
                    let r = (cu * cu + cv * cv).sqrt();
                    if r < 0.3 {
                        (palette[0], 1.0 + r)
                    } else {
                        (palette[1], 2.0)
                    }
                }
                StyleKind::Bricks => {
                    let row = (v * 6.0).floor();
                    let bu = u * 3.0 + if (row as i64) % 2 == 0 { 0.0 } else { 0.5 };
                    let (fu, fv) = (bu.fract(), (v * 6.0).fract());
                    if fu < 0.08 || fv < 0.15 {
                        (palette[2], 2.0)
                    } else {
                        let tint = if (bu.floor() as i64 + row as i64).rem_euclid(2) == 0 { 1.0 } else { 0.8 };
                        (palette[0].map(|c| c * tint), 1.0)
                    }
                }
            };
            for (ch, &cv) in c.iter().enumerate() {
                rgb.set(x, y, ch, S::lit(cv));
            }
            depth.set(x, y, 0, S::lit(d));
        }
    }
    StylePair::new(rgb, depth)
}
