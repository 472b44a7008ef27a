//! Emission-absorption compositing of ray samples.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Samples of many rays stored back to back; ray `r` owns
/// `offsets[r]..offsets[r + 1]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RaySampleBatch<S> {
    pub origins: Vec<[S; 3]>,
    pub directions: Vec<[S; 3]>,
    pub offsets: Vec<usize>,
    /// Sample distances, strictly increasing per ray.
    pub t: Vec<S>,
    /// Interval lengths, positive.
    pub delta: Vec<S>,
    pub sigma: Vec<S>,
    pub color: Vec<[S; 3]>,
    /// Depth assigned to the transmittance left at the end of each ray.
    pub t_far: Vec<S>,
    /// Compositing weights, filled by [`composite`].
    pub weights: Vec<S>,
    /// Accumulated opacity per ray, filled by [`composite`].
    pub opacity: Vec<S>,
}

impl<S: Scalar> RaySampleBatch<S> {
    pub fn num_rays(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn ray_range(&self, r: usize) -> std::ops::Range<usize> {
        self.offsets[r]..self.offsets[r + 1]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RayOutput<S> {
    pub rgb: [S; 3],
    pub depth: S,
    pub opacity: S,
}

/// Composites one ray. `weights` receives `w_i`; `trans` receives the
/// transmittance before each sample plus the final one (length `n + 1`).
pub fn composite_ray<S: Scalar>(
    t: &[S],
    delta: &[S],
    sigma: &[S],
    color: &[[S; 3]],
    background: [S; 3],
    t_far: S,
    weights: &mut Vec<S>,
    trans: &mut Vec<S>,
) -> RayOutput<S> {
    weights.clear();
    trans.clear();
    let mut transmittance = S::one();
    let mut rgb = [S::zero(); 3];
    let mut depth = S::zero();
    for i in 0..t.len() {
        trans.push(transmittance);
        let survive = (-sigma[i] * delta[i]).exp();
        let w = transmittance * (S::one() - survive);
        weights.push(w);
        for c in 0..3 {
            rgb[c] += w * color[i][c];
        }
        depth += w * t[i];
        transmittance *= survive;
    }
    trans.push(transmittance);
    for c in 0..3 {
        rgb[c] += transmittance * background[c];
    }
    depth += transmittance * t_far;
    RayOutput {
        rgb,
        depth,
        opacity: S::one() - transmittance,
    }
}

/// Backward pass of [`composite_ray`].
///
/// `weight_grad`, when given, is an extra `dL/dw_i` term (e.g. a regularizer
/// on the weights). Writes `dL/dsigma_i` and `dL/dc_i`.
#[allow(clippy::too_many_arguments)]
pub fn composite_ray_backward<S: Scalar>(
    t: &[S],
    delta: &[S],
    color: &[[S; 3]],
    weights: &[S],
    trans: &[S],
    background: [S; 3],
    t_far: S,
    grad_rgb: [S; 3],
    grad_depth: S,
    weight_grad: Option<&[S]>,
    d_sigma: &mut [S],
    d_color: &mut [[S; 3]],
) {
    let n = t.len();
    let t_end = trans[n];
    let g_bg = grad_rgb[0] * background[0] + grad_rgb[1] * background[1] + grad_rgb[2] * background[2]
        + grad_depth * t_far;
    // suffix = sum_{i > k} w_i g_i
    let mut suffix = S::zero();
    for k in (0..n).rev() {
        let c = color[k];
        let mut g = grad_rgb[0] * c[0] + grad_rgb[1] * c[1] + grad_rgb[2] * c[2] + grad_depth * t[k];
        if let Some(wg) = weight_grad {
            g += wg[k];
        }
        let t_next = trans[k + 1];
        d_sigma[k] = delta[k] * (t_next * g - suffix - t_end * g_bg);
        d_color[k] = [weights[k] * grad_rgb[0], weights[k] * grad_rgb[1], weights[k] * grad_rgb[2]];
        suffix += weights[k] * g;
    }
}

/// Composites every ray of `batch`, filling its weights and opacities.
pub fn composite<S: Scalar>(batch: &mut RaySampleBatch<S>, background: [S; 3]) -> Result<Vec<RayOutput<S>>> {
    let n_rays = batch.num_rays();
    if batch.t_far.len() != n_rays {
        return Err(Error::invalid("t_far must have one entry per ray"));
    }
    let total = batch.t.len();
    if batch.delta.len() != total || batch.sigma.len() != total || batch.color.len() != total {
        return Err(Error::invalid("sample arrays must have equal lengths"));
    }
    let mut outputs = Vec::with_capacity(n_rays);
    let mut all_weights = Vec::with_capacity(total);
    let mut opacity = Vec::with_capacity(n_rays);
    let mut w = Vec::new();
    let mut tr = Vec::new();
    for r in 0..n_rays {
        let range = batch.ray_range(r);
        let t = &batch.t[range.clone()];
        if t.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(Error::invalid(format!("sample distances of ray {r} are not strictly increasing")));
        }
        if batch.delta[range.clone()].iter().any(|d| !(*d > S::zero())) {
            return Err(Error::invalid(format!("ray {r} has a non-positive interval")));
        }
        if batch.sigma[range.clone()].iter().any(|s| !(*s >= S::zero())) {
            return Err(Error::invalid(format!("ray {r} has negative or NaN density")));
        }
        let out = composite_ray(
            t,
            &batch.delta[range.clone()],
            &batch.sigma[range.clone()],
            &batch.color[range],
            background,
            batch.t_far[r],
            &mut w,
            &mut tr,
        );
        all_weights.extend_from_slice(&w);
        opacity.push(out.opacity);
        outputs.push(out);
    }
    batch.weights = all_weights;
    batch.opacity = opacity;
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_ray(t: Vec<f64>, delta: Vec<f64>, sigma: Vec<f64>, color: Vec<[f64; 3]>, t_far: f64) -> RaySampleBatch<f64> {
        let n = t.len();
        RaySampleBatch {
            origins: vec![[0.0; 3]],
            directions: vec![[0.0, 0.0, -1.0]],
            offsets: vec![0, n],
            t,
            delta,
            sigma,
            color,
            t_far: vec![t_far],
            ..Default::default()
        }
    }

    fn uniform(n: usize, len: f64, sigma: f64, color: [f64; 3]) -> RaySampleBatch<f64> {
        let d = len / n as f64;
        single_ray(
            (0..n).map(|i| (i as f64 + 0.5) * d).collect(),
            vec![d; n],
            vec![sigma; n],
            vec![color; n],
            len,
        )
    }

    #[test]
    fn empty_medium_returns_background() {
        let mut b = uniform(16, 3.0, 0.0, [0.9, 0.1, 0.4]);
        let out = composite(&mut b, [0.2, 0.3, 0.4]).unwrap();
        assert_eq!(out[0].rgb, [0.2, 0.3, 0.4]);
        assert_eq!(out[0].depth, 3.0);
        assert_eq!(out[0].opacity, 0.0);
    }

    #[test]
    fn homogeneous_medium_matches_closed_form() {
        let (sigma, len, c, bg) = (0.8, 2.5, [0.9, 0.2, 0.5], [0.1, 0.6, 1.0]);
        let mut b = uniform(256, len, sigma, c);
        let out = composite(&mut b, bg).unwrap();
        let tr = (-sigma * len).exp();
        for k in 0..3 {
            let want = c[k] * (1.0 - tr) + bg[k] * tr;
            assert!((out[0].rgb[k] - want).abs() <= 0.01 * want);
        }
    }

    #[test]
    fn opaque_sample_sets_depth() {
        let d = 0.1;
        let t: Vec<f64> = (0..20).map(|i| (i as f64 + 0.5) * d).collect();
        let mut sigma = vec![0.0; 20];
        sigma[12] = 1e4;
        let mut b = single_ray(t.clone(), vec![d; 20], sigma, vec![[1.0; 3]; 20], 2.0);
        let out = composite(&mut b, [0.0; 3]).unwrap();
        assert!((out[0].depth - t[12]).abs() <= d);
    }

    #[test]
    fn rejects_non_increasing_t() {
        let mut b = single_ray(vec![0.1, 0.1], vec![0.1, 0.1], vec![1.0, 1.0], vec![[0.0; 3]; 2], 1.0);
        assert!(matches!(composite(&mut b, [0.0; 3]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn moving_opaque_sample_earlier_never_lowers_its_weight() {
        let d = 0.05;
        let n = 30;
        let t: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) * d).collect();
        let haze = 0.7;
        let mut prev = f64::INFINITY;
        for pos in 0..n {
            let mut sigma = vec![haze; n];
            sigma[pos] = 200.0;
            let mut b = single_ray(t.clone(), vec![d; n], sigma, vec![[0.5; 3]; n], 1.5);
            composite(&mut b, [0.0; 3]).unwrap();
            let w = b.weights[pos];
            assert!(w <= prev + 1e-15);
            prev = w;
            let total: f64 = b.weights.iter().sum();
            assert!((0.0..=1.0).contains(&total));
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let n = 12;
        let t: Vec<f64> = (0..n).map(|i| 0.3 + 0.11 * i as f64 + 0.01 * (i * i) as f64).collect();
        let delta: Vec<f64> = (0..n).map(|i| 0.05 + 0.01 * (i % 3) as f64).collect();
        let sigma: Vec<f64> = (0..n).map(|i| 0.5 + (i as f64 * 1.7).sin().abs() * 3.0).collect();
        let color: Vec<[f64; 3]> = (0..n).map(|i| [0.1 * (i % 7) as f64, 0.5, 0.9 - 0.05 * i as f64]).collect();
        let bg = [0.3, 0.2, 0.7];
        let (g_rgb, g_depth) = ([0.7, -1.3, 0.4], 0.9);
        let wg: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).cos()).collect();
        let t_far = 3.0;
        let loss = |s: &[f64], c: &[[f64; 3]]| {
            let (mut w, mut tr) = (vec![], vec![]);
            let o = composite_ray(&t, &delta, s, c, bg, t_far, &mut w, &mut tr);
            let extra: f64 = w.iter().zip(&wg).map(|(a, b)| a * b).sum();
            (0..3).map(|k| g_rgb[k] * o.rgb[k]).sum::<f64>() + g_depth * o.depth + extra
        };
        let (mut w, mut tr) = (vec![], vec![]);
        composite_ray(&t, &delta, &sigma, &color, bg, t_far, &mut w, &mut tr);
        let mut ds = vec![0.0; n];
        let mut dc = vec![[0.0; 3]; n];
        composite_ray_backward(&t, &delta, &color, &w, &tr, bg, t_far, g_rgb, g_depth, Some(&wg), &mut ds, &mut dc);
        let h = 1e-6;
        for k in 0..n {
            let mut sp = sigma.clone();
            sp[k] += h;
            let mut sm = sigma.clone();
            sm[k] -= h;
            let fd = (loss(&sp, &color) - loss(&sm, &color)) / (2.0 * h);
            assert!((fd - ds[k]).abs() < 1e-6 * fd.abs().max(1.0), "{k}: {fd} vs {}", ds[k]);
            for ch in 0..3 {
                let mut cp = color.clone();
                cp[k][ch] += h;
                let mut cm = color.clone();
                cm[k][ch] -= h;
                let fd = (loss(&sigma, &cp) - loss(&sigma, &cm)) / (2.0 * h);
                assert!((fd - dc[k][ch]).abs() < 1e-6 * fd.abs().max(1.0));
            }
        }
    }
}
