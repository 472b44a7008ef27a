//! Pinhole cameras.
//!
//! Convention: right-handed camera frame, x right, y up, looking down -z.
//! Pixel `(u, v)` has `u` growing rightward and `v` growing downward; the
//! center of pixel `(i, j)` is at `(i + 0.5, j + 0.5)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Centered principal point and square pixels from a vertical field of view.
    pub fn from_fov(width: usize, height: usize, fov_y_deg: f64) -> Self {
        let f = 0.5 * height as f64 / (0.5 * fov_y_deg.to_radians()).tan();
        Intrinsics {
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
        }
    }

    /// Same field of view at a different image size.
    pub fn scaled(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Intrinsics {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }
}

/// Camera-to-world rigid transform plus intrinsics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<S> {
    pub origin: [S; 3],
    pub dir: [S; 3],
}

const ORTHONORMAL_TOL: f64 = 1e-6;

impl Camera {
    pub fn new(intrinsics: Intrinsics, rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        let c = Camera {
            intrinsics,
            rotation,
            translation,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0) {
            return Err(Error::invalid(format!("focal lengths must be positive, got {} and {}", k.fx, k.fy)));
        }
        if k.width == 0 || k.height == 0 {
            return Err(Error::invalid("camera image size must be non-empty"));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > ORTHONORMAL_TOL {
                    return Err(Error::invalid(format!("camera rotation is not orthonormal: {r:?}")));
                }
            }
        }
        if det3(r) < 0.0 {
            return Err(Error::invalid("camera rotation has determinant -1 (reflection)"));
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("camera translation must be finite"));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with `up` as the approximate up direction.
    pub fn look_at(intrinsics: Intrinsics, eye: [f64; 3], target: [f64; 3], up: [f64; 3]) -> Result<Self> {
        let back = normalize(sub(eye, target));
        let right = normalize(cross(up, back));
        let true_up = cross(back, right);
        if right.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("look_at: up vector is parallel to the viewing direction"));
        }
        let rotation = [
            [right[0], true_up[0], back[0]],
            [right[1], true_up[1], back[1]],
            [right[2], true_up[2], back[2]],
        ];
        Camera::new(intrinsics, rotation, eye)
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn position(&self) -> [f64; 3] {
        self.translation
    }

    /// World-space viewing direction (camera -z).
    pub fn forward(&self) -> [f64; 3] {
        let r = &self.rotation;
        [-r[0][2], -r[1][2], -r[2][2]]
    }

    /// Depth of a world point along the viewing direction.
    pub fn forward_depth(&self, p: [f64; 3]) -> f64 {
        dot(sub(p, self.translation), self.forward())
    }

    /// Same pose at another resolution.
    pub fn resized(&self, width: usize, height: usize) -> Camera {
        Camera {
            intrinsics: self.intrinsics.scaled(width, height),
            ..self.clone()
        }
    }

    /// Ray through continuous pixel coordinates `(u, v)`.
    pub fn ray<S: Scalar>(&self, u: f64, v: f64) -> Ray<S> {
        let k = &self.intrinsics;
        let d_cam = [(u - k.cx) / k.fx, -(v - k.cy) / k.fy, -1.0];
        let r = &self.rotation;
        let d: [f64; 3] = std::array::from_fn(|i| (0..3).map(|j| r[i][j] * d_cam[j]).sum());
        let d = normalize(d);
        Ray {
            origin: self.translation.map(S::lit),
            dir: d.map(S::lit),
        }
    }

    /// Rays through pixel centers in row-major order, or through the given
    /// continuous pixel coordinates.
    pub fn generate_rays<S: Scalar>(&self, pixel_coords: Option<&[[f64; 2]]>) -> Vec<Ray<S>> {
        match pixel_coords {
            Some(coords) => coords.iter().map(|&[u, v]| self.ray(u, v)).collect(),
            None => {
                let (w, h) = (self.width(), self.height());
                let mut rays = Vec::with_capacity(w * h);
                for j in 0..h {
                    for i in 0..w {
                        rays.push(self.ray(i as f64 + 0.5, j as f64 + 0.5));
                    }
                }
                rays
            }
        }
    }
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    a.map(|v| v / n)
}

pub(crate) fn det3(r: &[[f64; 3]; 3]) -> f64 {
    r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
}
