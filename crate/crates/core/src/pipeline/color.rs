//! Mean and covariance matching of colors.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{GridLayout, RadianceField, VoxelGrid};
use crate::image::Image;
use crate::scalar::{logit, sigmoid, Scalar};

/// Regularization added to a singular source covariance.
pub const COVARIANCE_EPS: f64 = 1e-5;
const DECODE_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorStats {
    pub mean: [f64; 3],
    pub covariance: [[f64; 3]; 3],
    pub count: usize,
}

impl ColorStats {
    pub fn from_colors<I: IntoIterator<Item = [f64; 3]>>(colors: I) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = Vector3::zeros();
        let mut outer = Matrix3::zeros();
        for c in colors {
            let v = Vector3::from(c);
            sum += v;
            outer += v * v.transpose();
            n += 1;
        }
        if n == 0 {
            return Err(Error::invalid("color statistics need at least one color"));
        }
        let mean = sum / n as f64;
        let cov = outer / n as f64 - mean * mean.transpose();
        let cov = 0.5 * (cov + cov.transpose());
        Ok(ColorStats {
            mean: mean.into(),
            covariance: std::array::from_fn(|r| std::array::from_fn(|c| cov[(r, c)])),
            count: n,
        })
    }

    pub fn from_images<'a, S: Scalar>(images: impl IntoIterator<Item = &'a Image<S>>) -> Result<Self> {
        let mut colors = Vec::new();
        for img in images {
            if img.channels != 3 {
                return Err(Error::invalid("color statistics need 3-channel images"));
            }
            colors.extend(img.data.chunks_exact(3).map(|p| [0, 1, 2].map(|c| p[c].to_f64_lossy())));
        }
        Self::from_colors(colors)
    }

    /// Means and covariances agree to within rounding.
    pub fn same_moments(&self, other: &ColorStats) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()));
        (0..3).all(|r| close(self.mean[r], other.mean[r]) && (0..3).all(|c| close(self.covariance[r][c], other.covariance[r][c])))
    }

    fn cov(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.covariance[r][c])
    }
}

/// `c -> matrix * c + offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorTransform {
    pub matrix: [[f64; 3]; 3],
    pub offset: [f64; 3],
    #[serde(default)]
    pub warnings: Vec<String>,
}

fn sym_pow(m: &Matrix3<f64>, p: f64) -> Matrix3<f64> {
    let e = SymmetricEigen::new(*m);
    let d = Matrix3::from_diagonal(&e.eigenvalues.map(|l| l.max(0.0).powf(p)));
    e.eigenvectors * d * e.eigenvectors.transpose()
}

/// Affine map taking colors with `source` statistics to `target` statistics:
/// `A = C_t^(1/2) C_s^(-1/2)`, `b = mu_t - A mu_s`. A (near-)singular source
/// covariance is regularized by `COVARIANCE_EPS * I`.
pub fn color_transfer_transform(source: &ColorStats, target: &ColorStats) -> ColorTransform {
    let mut warnings = Vec::new();
    if source.same_moments(target) {
        return ColorTransform::identity();
    }
    let mut cs = source.cov();
    let min_eig = SymmetricEigen::new(cs).eigenvalues.min();
    if min_eig < COVARIANCE_EPS {
        let msg = format!("source color covariance is near-singular (min eigenvalue {min_eig:.3e}); adding {COVARIANCE_EPS}*I");
        log::warn!("{msg}");
        warnings.push(msg);
        cs += Matrix3::identity() * COVARIANCE_EPS;
    }
    let a = sym_pow(&target.cov(), 0.5) * sym_pow(&cs, -0.5);
    let b = Vector3::from(target.mean) - a * Vector3::from(source.mean);
    ColorTransform {
        matrix: std::array::from_fn(|r| std::array::from_fn(|c| a[(r, c)])),
        offset: b.into(),
        warnings,
    }
}

impl ColorTransform {
    pub fn identity() -> Self {
        ColorTransform {
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            offset: [0.0; 3],
            warnings: Vec::new(),
        }
    }

    pub fn apply(&self, c: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|r| (0..3).map(|k| self.matrix[r][k] * c[k]).sum::<f64>() + self.offset[r])
    }

    pub fn apply_image<S: Scalar>(&self, img: &Image<S>) -> Result<Image<S>> {
        if img.channels != 3 {
            return Err(Error::invalid("color transfer needs a 3-channel image"));
        }
        let mut out = img.clone();
        for p in out.data.chunks_exact_mut(3) {
            let c = self.apply([0, 1, 2].map(|k| p[k].to_f64_lossy()));
            for k in 0..3 {
                p[k] = S::lit(c[k]);
            }
        }
        Ok(out)
    }

    /// Transforms the decoded color of every node, clamps to the open unit
    /// interval and re-encodes. A factorized color grid becomes dense.
    pub fn apply_field<S: Scalar>(&self, field: &mut RadianceField<S>) -> Result<()> {
        let grid = field.color.to_dense();
        let spec = grid.spec().clone();
        let mut values = grid.params().to_vec();
        for node in values.chunks_exact_mut(3) {
            let c = self.apply([0, 1, 2].map(|k| sigmoid(node[k]).to_f64_lossy()));
            for k in 0..3 {
                node[k] = S::lit(logit(c[k].clamp(DECODE_EPS, 1.0 - DECODE_EPS), 0.0));
            }
        }
        if field.color.layout() != GridLayout::Dense {
            log::info!("color transfer converted the factorized color grid to dense storage");
        }
        field.color = VoxelGrid::from_dense(spec, values)?;
        Ok(())
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        (0..3).all(|r| (0..3).all(|c| (self.matrix[r][c] - if r == c { 1.0 } else { 0.0 }).abs() <= tol))
            && self.offset.iter().all(|o| o.abs() <= tol)
    }
}
