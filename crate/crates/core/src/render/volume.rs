//! Ray marching through a [`RadianceField`], forward and backward.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::camera::{Camera, Ray};
use super::composite::{composite_ray, composite_ray_backward, RayOutput, RaySampleBatch};
use crate::error::{Error, Result};
use crate::field::{FieldGrads, GridKind, RadianceField};
use crate::image::Image;
use crate::scalar::{sigmoid, softplus, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderOptions {
    /// Samples per ray.
    pub n_samples: usize,
    /// Fixed near distance for every ray; the ray-box entry point otherwise.
    pub near: Option<f64>,
    /// Fixed far distance for every ray; the ray-box exit point otherwise.
    pub far: Option<f64>,
    /// Jittered stratified samples instead of bin midpoints.
    pub jitter: bool,
    pub seed: u64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            n_samples: 128,
            near: None,
            far: None,
            jitter: false,
            seed: 0,
        }
    }
}

impl RenderOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::config(format!("n_samples must be at least 2, got {}", self.n_samples)));
        }
        if let (Some(n), Some(f)) = (self.near, self.far) {
            if !(n < f) {
                return Err(Error::config(format!("near ({n}) must be below far ({f})")));
            }
        }
        if self.near.is_some_and(|n| !(n >= 0.0)) {
            return Err(Error::config("near must be non-negative"));
        }
        Ok(())
    }
}

/// A penalty on compositing weights, evaluated per ray.
pub trait WeightPenalty<S>: Sync {
    /// Returns the penalty and adds its gradient with respect to `weights`
    /// into `grad`. `midpoints` and `deltas` are normalized to the ray's
    /// `[near, far]` span.
    fn evaluate(&self, weights: &[S], midpoints: &[S], deltas: &[S], grad: &mut [S]) -> S;
}

/// Rendered RGB, expected depth and accumulated opacity images.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView<S> {
    pub rgb: Image<S>,
    pub depth: Image<S>,
    pub opacity: Image<S>,
}

#[derive(Default)]
struct March<S> {
    t0: S,
    t1: S,
    t: Vec<S>,
    delta: Vec<S>,
    x: Vec<[S; 3]>,
    q: Vec<[S; 3]>,
    sigma_raw: Vec<S>,
    sigma: Vec<S>,
    color: Vec<[S; 3]>,
    jac_sigma: Vec<[S; 3]>,
    jac_color: Vec<[[S; 3]; 3]>,
    weights: Vec<S>,
    trans: Vec<S>,
}

/// Entry and exit distances of a ray through the box, if it hits.
fn ray_box(origin: [f64; 3], dir: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a].abs() < 1e-12 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let ta = (lo[a] - origin[a]) / dir[a];
        let tb = (hi[a] - origin[a]) / dir[a];
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    let t0 = t0.max(0.0);
    (t1 > t0).then_some((t0, t1))
}

/// Farthest box corner from `origin`; depth given to rays that miss the box.
fn miss_depth(origin: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> f64 {
    let mut best: f64 = 0.0;
    for k in 0..8 {
        let c = [
            if k & 1 == 0 { lo[0] } else { hi[0] },
            if k & 2 == 0 { lo[1] } else { hi[1] },
            if k & 4 == 0 { lo[2] } else { hi[2] },
        ];
        let d: f64 = (0..3).map(|a| (c[a] - origin[a]).powi(2)).sum::<f64>().sqrt();
        best = best.max(d);
    }
    best
}

fn ray_rng(seed: u64, stream: u64, ray: usize) -> ChaCha8Rng {
    let mixed = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (ray as u64).wrapping_mul(0xD1B5_4A32_D192_ED03).rotate_left(17);
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Near/far span of a ray, or `None` (and the depth to report) when it misses.
fn ray_span<S: Scalar>(field: &RadianceField<S>, ray: &Ray<S>, opts: &RenderOptions) -> std::result::Result<(f64, f64), f64> {
    let (lo, hi) = field.bounds();
    let o = ray.origin.map(|v| v.to_f64_lossy());
    let d = ray.dir.map(|v| v.to_f64_lossy());
    match (opts.near, opts.far) {
        (Some(n), Some(f)) => Ok((n, f)),
        _ => match ray_box(o, d, lo, hi) {
            Some((a, b)) => {
                let n = opts.near.unwrap_or(a);
                let f = opts.far.unwrap_or(b);
                if f > n {
                    Ok((n, f))
                } else {
                    Err(opts.far.unwrap_or_else(|| miss_depth(o, lo, hi)))
                }
            }
            None => Err(opts.far.unwrap_or_else(|| miss_depth(o, lo, hi))),
        },
    }
}

/// Places samples and queries the field along one ray. Returns `false` when
/// the ray misses the scene.
fn march<S: Scalar>(
    field: &RadianceField<S>,
    ray: &Ray<S>,
    opts: &RenderOptions,
    stream: u64,
    index: usize,
    use_deformation: bool,
    want_jacobians: bool,
    m: &mut March<S>,
) -> std::result::Result<(), S> {
    let (t0, t1) = ray_span(field, ray, opts).map_err(S::lit)?;
    let n = opts.n_samples;
    let step = (t1 - t0) / n as f64;
    m.t0 = S::lit(t0);
    m.t1 = S::lit(t1);
    m.t.clear();
    if opts.jitter {
        let mut rng = ray_rng(opts.seed, stream, index);
        for i in 0..n {
            let u: f64 = rng.random_range(0.0..1.0);
            m.t.push(S::lit(t0 + (i as f64 + u) * step));
        }
    } else {
        m.t.extend((0..n).map(|i| S::lit(t0 + (i as f64 + 0.5) * step)));
    }
    // interval edges: near, midpoints between samples, far
    m.delta.clear();
    let half = S::lit(0.5);
    for i in 0..n {
        let lo = if i == 0 { m.t0 } else { (m.t[i - 1] + m.t[i]) * half };
        let hi = if i + 1 == n { m.t1 } else { (m.t[i] + m.t[i + 1]) * half };
        m.delta.push(hi - lo);
    }
    m.x.clear();
    m.q.clear();
    m.sigma_raw.clear();
    m.sigma.clear();
    m.color.clear();
    m.jac_sigma.clear();
    m.jac_color.clear();
    let mut d = [S::zero(); 3];
    let mut raw_c = [S::zero(); 3];
    let mut raw_s = [S::zero(); 1];
    for &t in &m.t {
        let x: [S; 3] = std::array::from_fn(|a| ray.origin[a] + t * ray.dir[a]);
        let q = if use_deformation {
            field.deformation.sample_cell(&field.deformation.locate(x), &mut d);
            [x[0] + d[0], x[1] + d[1], x[2] + d[2]]
        } else {
            x
        };
        let cell = field.density.locate(q);
        if want_jacobians {
            let mut js = [[S::zero(); 3]; 1];
            let mut jc = [[S::zero(); 3]; 3];
            field.density.sample_cell_with_jacobian(&cell, &mut raw_s, &mut js);
            let ccell = field.color.locate(q);
            field.color.sample_cell_with_jacobian(&ccell, &mut raw_c, &mut jc);
            m.jac_sigma.push(js[0]);
            m.jac_color.push(jc);
        } else {
            field.density.sample_cell(&cell, &mut raw_s);
            let ccell = field.color.locate(q);
            field.color.sample_cell(&ccell, &mut raw_c);
        }
        m.x.push(x);
        m.q.push(q);
        m.sigma_raw.push(raw_s[0]);
        m.sigma.push(softplus(raw_s[0]));
        m.color.push([sigmoid(raw_c[0]), sigmoid(raw_c[1]), sigmoid(raw_c[2])]);
    }
    Ok(())
}

fn normalized_geometry<S: Scalar>(m: &March<S>) -> (Vec<S>, Vec<S>) {
    let span = m.t1 - m.t0;
    let half = S::lit(0.5);
    let n = m.t.len();
    let mut mids = Vec::with_capacity(n);
    let mut deltas = Vec::with_capacity(n);
    for i in 0..n {
        let lo = if i == 0 { m.t0 } else { (m.t[i - 1] + m.t[i]) * half };
        let hi = if i + 1 == n { m.t1 } else { (m.t[i] + m.t[i + 1]) * half };
        mids.push(((lo + hi) * half - m.t0) / span);
        deltas.push((hi - lo) / span);
    }
    (mids, deltas)
}

fn check_field_and_opts<S: Scalar>(field: &RadianceField<S>, rays: &[Ray<S>], opts: &RenderOptions) -> Result<()> {
    opts.validate()?;
    field.validate()?;
    if rays
        .iter()
        .any(|r| r.origin.iter().chain(r.dir.iter()).any(|v| !v.is_finite()))
    {
        return Err(Error::invalid("ray origins and directions must be finite"));
    }
    Ok(())
}

/// Renders arbitrary rays. `stream` decorrelates the jitter of different calls.
pub fn render_rays<S: Scalar>(
    field: &RadianceField<S>,
    rays: &[Ray<S>],
    opts: &RenderOptions,
    stream: u64,
    use_deformation: bool,
) -> Result<Vec<RayOutput<S>>> {
    check_field_and_opts(field, rays, opts)?;
    let out = rays
        .par_iter()
        .enumerate()
        .map_init(March::default, |m, (i, ray)| {
            match march(field, ray, opts, stream, i, use_deformation, false, m) {
                Ok(()) => composite_ray(
                    &m.t,
                    &m.delta,
                    &m.sigma,
                    &m.color,
                    field.background,
                    m.t1,
                    &mut m.weights,
                    &mut m.trans,
                ),
                Err(depth) => RayOutput {
                    rgb: field.background,
                    depth,
                    opacity: S::zero(),
                },
            }
        })
        .collect();
    Ok(out)
}

/// Samples (without compositing) for inspection and tests.
pub fn sample_rays<S: Scalar>(
    field: &RadianceField<S>,
    rays: &[Ray<S>],
    opts: &RenderOptions,
    stream: u64,
    use_deformation: bool,
) -> Result<RaySampleBatch<S>> {
    check_field_and_opts(field, rays, opts)?;
    let mut batch = RaySampleBatch {
        offsets: vec![0],
        ..Default::default()
    };
    let mut m = March::default();
    for (i, ray) in rays.iter().enumerate() {
        batch.origins.push(ray.origin);
        batch.directions.push(ray.dir);
        match march(field, ray, opts, stream, i, use_deformation, false, &mut m) {
            Ok(()) => {
                batch.t.extend_from_slice(&m.t);
                batch.delta.extend_from_slice(&m.delta);
                batch.sigma.extend_from_slice(&m.sigma);
                batch.color.extend_from_slice(&m.color);
                batch.t_far.push(m.t1);
            }
            Err(depth) => batch.t_far.push(depth),
        }
        batch.offsets.push(batch.t.len());
    }
    Ok(batch)
}

pub fn render_view<S: Scalar>(
    field: &RadianceField<S>,
    camera: &Camera,
    opts: &RenderOptions,
    use_deformation: bool,
) -> Result<RenderedView<S>> {
    render_view_stream(field, camera, opts, 0, use_deformation)
}

pub fn render_view_stream<S: Scalar>(
    field: &RadianceField<S>,
    camera: &Camera,
    opts: &RenderOptions,
    stream: u64,
    use_deformation: bool,
) -> Result<RenderedView<S>> {
    camera.validate()?;
    let rays = camera.generate_rays::<S>(None);
    let out = render_rays(field, &rays, opts, stream, use_deformation)?;
    let (w, h) = (camera.width(), camera.height());
    let mut rgb = Vec::with_capacity(w * h * 3);
    let mut depth = Vec::with_capacity(w * h);
    let mut opacity = Vec::with_capacity(w * h);
    for o in out {
        rgb.extend_from_slice(&o.rgb);
        depth.push(o.depth);
        opacity.push(o.opacity);
    }
    Ok(RenderedView {
        rgb: Image::from_vec(w, h, 3, rgb)?,
        depth: Image::from_vec(w, h, 1, depth)?,
        opacity: Image::from_vec(w, h, 1, opacity)?,
    })
}

/// Upstream gradient of one ray's outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RayGrad<S> {
    pub rgb: [S; 3],
    pub depth: S,
}

struct SampleGrad<S> {
    x: [S; 3],
    q: [S; 3],
    d_sigma_raw: S,
    d_color_raw: [S; 3],
    d_q: [S; 3],
}

const BACKWARD_CHUNK: usize = 1024;

/// Accumulates parameter gradients of `sum_r grads[r] . output_r` (plus an
/// optional weight penalty scaled by `penalty.1`) into fresh buffers for the
/// `trainable` grids. Returns the gradients and the scaled penalty total.
pub fn backward_rays<S: Scalar>(
    field: &RadianceField<S>,
    rays: &[Ray<S>],
    opts: &RenderOptions,
    stream: u64,
    use_deformation: bool,
    grads: &[RayGrad<S>],
    penalty: Option<(&dyn WeightPenalty<S>, S)>,
    trainable: &[GridKind],
) -> Result<(FieldGrads<S>, S)> {
    check_field_and_opts(field, rays, opts)?;
    if grads.len() != rays.len() {
        return Err(Error::invalid("need one upstream gradient per ray"));
    }
    let mut out = FieldGrads::zeros_for(field, trainable);
    let want_def = use_deformation && out.deformation.is_some();
    let want_jac = want_def;
    let mut penalty_total = S::zero();
    for start in (0..rays.len()).step_by(BACKWARD_CHUNK) {
        let end = (start + BACKWARD_CHUNK).min(rays.len());
        let per_ray: Vec<(Vec<SampleGrad<S>>, S)> = (start..end)
            .into_par_iter()
            .map_init(March::default, |m, i| {
                if march(field, &rays[i], opts, stream, i, use_deformation, want_jac, m).is_err() {
                    return (Vec::new(), S::zero());
                }
                composite_ray(
                    &m.t,
                    &m.delta,
                    &m.sigma,
                    &m.color,
                    field.background,
                    m.t1,
                    &mut m.weights,
                    &mut m.trans,
                );
                let n = m.t.len();
                let mut pen_value = S::zero();
                let weight_grad = penalty.map(|(p, scale)| {
                    let (mids, deltas) = normalized_geometry(m);
                    let mut g = vec![S::zero(); n];
                    pen_value = scale * p.evaluate(&m.weights, &mids, &deltas, &mut g);
                    g.iter_mut().for_each(|v| *v *= scale);
                    g
                });
                let mut d_sigma = vec![S::zero(); n];
                let mut d_color = vec![[S::zero(); 3]; n];
                composite_ray_backward(
                    &m.t,
                    &m.delta,
                    &m.color,
                    &m.weights,
                    &m.trans,
                    field.background,
                    m.t1,
                    grads[i].rgb,
                    grads[i].depth,
                    weight_grad.as_deref(),
                    &mut d_sigma,
                    &mut d_color,
                );
                let mut rec = Vec::with_capacity(n);
                for k in 0..n {
                    let d_sigma_raw = d_sigma[k] * sigmoid(m.sigma_raw[k]);
                    let c = m.color[k];
                    let d_color_raw: [S; 3] = std::array::from_fn(|ch| d_color[k][ch] * c[ch] * (S::one() - c[ch]));
                    let mut d_q = [S::zero(); 3];
                    if want_jac {
                        for a in 0..3 {
                            d_q[a] = d_sigma_raw * m.jac_sigma[k][a]
                                + d_color_raw[0] * m.jac_color[k][0][a]
                                + d_color_raw[1] * m.jac_color[k][1][a]
                                + d_color_raw[2] * m.jac_color[k][2][a];
                        }
                    }
                    if d_sigma_raw == S::zero() && d_color_raw.iter().all(|v| *v == S::zero()) {
                        continue;
                    }
                    rec.push(SampleGrad {
                        x: m.x[k],
                        q: m.q[k],
                        d_sigma_raw,
                        d_color_raw,
                        d_q,
                    });
                }
                (rec, pen_value)
            })
            .collect();
        for (records, pen) in per_ray {
            penalty_total += pen;
            for r in records {
                if let Some(g) = out.density.as_mut() {
                    field.density.accumulate_grad(&field.density.locate(r.q), &[r.d_sigma_raw], g);
                }
                if let Some(g) = out.color.as_mut() {
                    field.color.accumulate_grad(&field.color.locate(r.q), &r.d_color_raw, g);
                }
                if want_def {
                    if let Some(g) = out.deformation.as_mut() {
                        field.deformation.accumulate_grad(&field.deformation.locate(r.x), &r.d_q, g);
                    }
                }
            }
        }
    }
    Ok((out, penalty_total))
}

/// Gradient of `<grad_rgb, rgb> + <grad_depth, depth>` for a full view.
#[allow(clippy::too_many_arguments)]
pub fn backward_view<S: Scalar>(
    field: &RadianceField<S>,
    camera: &Camera,
    opts: &RenderOptions,
    stream: u64,
    use_deformation: bool,
    grad_rgb: &Image<S>,
    grad_depth: Option<&Image<S>>,
    trainable: &[GridKind],
) -> Result<FieldGrads<S>> {
    let (w, h) = (camera.width(), camera.height());
    if grad_rgb.width != w || grad_rgb.height != h || grad_rgb.channels != 3 {
        return Err(Error::invalid("rgb gradient image does not match the camera"));
    }
    if let Some(gd) = grad_depth {
        if gd.width != w || gd.height != h || gd.channels != 1 {
            return Err(Error::invalid("depth gradient image does not match the camera"));
        }
    }
    let rays = camera.generate_rays::<S>(None);
    let grads: Vec<RayGrad<S>> = (0..w * h)
        .map(|p| RayGrad {
            rgb: [grad_rgb.data[3 * p], grad_rgb.data[3 * p + 1], grad_rgb.data[3 * p + 2]],
            depth: grad_depth.map_or(S::zero(), |g| g.data[p]),
        })
        .collect();
    backward_rays(field, &rays, opts, stream, use_deformation, &grads, None, trainable).map(|(g, _)| g)
}
