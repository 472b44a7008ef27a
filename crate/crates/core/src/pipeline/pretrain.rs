use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::Adam;
use super::regularizers::DistortionRegularizer;
use super::Metrics;
use crate::error::{Error, Result};
use crate::field::{GridKind, GridLayout, GridSpec, RadianceField, VoxelGrid};
use crate::image::Image;
use crate::render::{backward_rays, render_rays, render_view, Ray, RayGrad};
use crate::scalar::{logit, softplus_inv, Scalar};
use crate::scenes::SceneDataset;

const PRETRAIN_STREAM: u64 = 0x5052_4554;
/// Mean squared error floor used when reporting PSNR.
const MSE_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub iterations: usize,
    /// PSNR over all training pixels, rendered without jitter.
    pub psnr: f64,
    pub final_loss: Option<f64>,
}

pub(crate) fn iteration_rng(seed: u64, stream: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stream);
    rng.set_stream(iteration as u64);
    rng
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    -10.0 * mse.max(MSE_FLOOR).log10()
}

pub fn mse<S: Scalar>(a: &Image<S>, b: &Image<S>) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::invalid("images differ in shape"));
    }
    let n = a.data.len().max(1) as f64;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x.to_f64_lossy() - y.to_f64_lossy()).powi(2))
        .sum::<f64>()
        / n)
}

/// Field over the dataset bounds with constant initial density, gray color
/// and zero deformation.
pub fn init_field<S: Scalar>(dataset: &SceneDataset<S>, cfg: &TrainConfig) -> Result<RadianceField<S>> {
    let p = &cfg.pretrain;
    let domain = GridSpec::new(p.resolution, dataset.bounds_min, dataset.bounds_max, 1)?;
    let density_raw = softplus_inv(p.init_density);
    let color_raw = logit(0.5, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (density, color) = match p.layout {
        GridLayout::Dense => (
            VoxelGrid::dense(domain.clone(), S::lit(density_raw))?,
            VoxelGrid::dense(domain.with_channels(3), S::lit(color_raw))?,
        ),
        GridLayout::Factorized { rank } => (
            VoxelGrid::factorized_constant(domain.clone(), rank, density_raw, 0.01, &mut rng)?,
            VoxelGrid::factorized_constant(domain.with_channels(3), rank, color_raw, 0.01, &mut rng)?,
        ),
    };
    RadianceField::new(
        density,
        color,
        VoxelGrid::dense(domain.with_channels(3), S::zero())?,
        dataset.background.map(S::lit),
    )
}

/// PSNR of `field` against every training image.
pub fn dataset_psnr<S: Scalar>(field: &RadianceField<S>, dataset: &SceneDataset<S>, cfg: &TrainConfig) -> Result<f64> {
    let opts = crate::render::RenderOptions {
        jitter: false,
        ..cfg.pretrain.render.clone()
    };
    let mut total = 0.0;
    for f in &dataset.frames {
        total += mse(&render_view(field, &f.camera, &opts, false)?.rgb, &f.image)?;
    }
    Ok(psnr_from_mse(total / dataset.frames.len() as f64))
}

/// Photometric fitting of density and color to the dataset from a fresh field.
pub fn pretrain<S: Scalar>(
    dataset: &SceneDataset<S>,
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&Metrics),
) -> Result<(RadianceField<S>, PretrainReport)> {
    dataset.validate()?;
    cfg.validate()?;
    let field = init_field(dataset, cfg)?;
    pretrain_field(field, dataset, cfg, log)
}

/// As [`pretrain`], continuing from an existing field. The deformation grid
/// is reset to zero and never optimized.
pub fn pretrain_field<S: Scalar>(
    mut field: RadianceField<S>,
    dataset: &SceneDataset<S>,
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&Metrics),
) -> Result<(RadianceField<S>, PretrainReport)> {
    dataset.validate()?;
    cfg.validate()?;
    let p = &cfg.pretrain;
    field.init_deformation_zero();
    let mut opts = p.render.clone();
    opts.near = opts.near.or(dataset.near);
    opts.far = opts.far.or(dataset.far);
    let mut adam = Adam::new(&field, &[(GridKind::Density, p.lr_density), (GridKind::Color, p.lr_color)]);
    let trainable = [GridKind::Density, GridKind::Color];
    let penalty = DistortionRegularizer;
    let (w, h) = (dataset.frames[0].camera.width(), dataset.frames[0].camera.height());
    let mut final_loss = None;
    for it in 0..p.iterations {
        let mut rng = iteration_rng(cfg.seed, PRETRAIN_STREAM, it);
        let mut rays: Vec<Ray<S>> = Vec::with_capacity(p.batch_rays);
        let mut targets = Vec::with_capacity(p.batch_rays);
        for _ in 0..p.batch_rays {
            let f = &dataset.frames[rng.random_range(0..dataset.frames.len())];
            let (x, y) = (rng.random_range(0..w), rng.random_range(0..h));
            rays.push(f.camera.ray(x as f64 + 0.5, y as f64 + 0.5));
            targets.push([0, 1, 2].map(|c| f.image.get(x, y, c)));
        }
        let stream = it as u64;
        let out = render_rays(&field, &rays, &opts, stream, false)?;
        let scale = S::one() / S::from_usize_lossy(3 * rays.len());
        let mut photometric = S::zero();
        let grads: Vec<RayGrad<S>> = out
            .iter()
            .zip(&targets)
            .map(|(o, t)| {
                let d: [S; 3] = std::array::from_fn(|c| o.rgb[c] - t[c]);
                photometric += d.iter().map(|v| *v * *v).sum::<S>() * scale;
                RayGrad {
                    rgb: d.map(|v| S::lit(2.0) * v * scale),
                    depth: S::zero(),
                }
            })
            .collect();
        let pen = (p.distortion_weight > 0.0).then(|| {
            (
                &penalty as &dyn crate::render::WeightPenalty<S>,
                S::lit(p.distortion_weight / rays.len() as f64),
            )
        });
        let (g, distortion) = backward_rays(&field, &rays, &opts, stream, false, &grads, pen, &trainable)?;
        let loss = (photometric + distortion).to_f64_lossy();
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "pretraining diverged at iteration {it}: loss {loss} (photometric {}, distortion {}); lower the learning rates",
                photometric.to_f64_lossy(),
                distortion.to_f64_lossy()
            )));
        }
        adam.step(&mut field, &g)?;
        final_loss = Some(loss);
        if p.log_every > 0 && (it % p.log_every == 0 || it + 1 == p.iterations) {
            log(&Metrics {
                stage: "pretrain".into(),
                iteration: it,
                loss,
                photometric: Some(photometric.to_f64_lossy()),
                distortion: Some(distortion.to_f64_lossy()),
                psnr: Some(psnr_from_mse(photometric.to_f64_lossy())),
                ..Default::default()
            });
        }
    }
    let psnr = dataset_psnr(&field, dataset, cfg)?;
    Ok((
        field,
        PretrainReport {
            iterations: p.iterations,
            psnr,
            final_loss,
        },
    ))
}
