use crate::field::VoxelGrid;
use crate::render::WeightPenalty;
use crate::scalar::Scalar;

/// Distortion penalty on one ray's compositing weights:
/// `sum_ij w_i w_j |m_i - m_j| + 1/3 sum_i w_i^2 d_i` over interval
/// midpoints `m` and lengths `d` (normalized ray distance, increasing).
/// Runs in linear time with prefix sums.
pub fn distortion_loss<S: Scalar>(weights: &[S], midpoints: &[S], deltas: &[S], grad: Option<&mut [S]>) -> S {
    let n = weights.len();
    let two = S::lit(2.0);
    let third = S::lit(1.0 / 3.0);
    let mut w_before = S::zero();
    let mut wm_before = S::zero();
    let mut pair = S::zero();
    let mut single = S::zero();
    for i in 0..n {
        let (w, m) = (weights[i], midpoints[i]);
        pair += two * w * (m * w_before - wm_before);
        single += third * w * w * deltas[i];
        w_before += w;
        wm_before += w * m;
    }
    if let Some(g) = grad {
        let (w_total, wm_total) = (w_before, wm_before);
        let mut w_lo = S::zero();
        let mut wm_lo = S::zero();
        for i in 0..n {
            let (w, m) = (weights[i], midpoints[i]);
            let w_hi = w_total - w_lo - w;
            let wm_hi = wm_total - wm_lo - w * m;
            g[i] += two * (m * w_lo - wm_lo + wm_hi - m * w_hi) + two * third * w * deltas[i];
            w_lo += w;
            wm_lo += w * m;
        }
    }
    pair + single
}

#[derive(Clone, Copy, Debug, Default)]
pub struct DistortionRegularizer;

impl<S: Scalar> WeightPenalty<S> for DistortionRegularizer {
    fn evaluate(&self, weights: &[S], midpoints: &[S], deltas: &[S], grad: &mut [S]) -> S {
        distortion_loss(weights, midpoints, deltas, Some(grad))
    }
}

/// Mean squared difference between neighboring nodes of a grid (all axes
/// and channels), with its gradient per dense node value.
pub fn smoothness<S: Scalar>(grid: &VoxelGrid<S>) -> (S, Vec<S>) {
    let dense = grid.to_dense();
    let v = dense.params();
    let spec = grid.spec();
    let [nx, ny, nz] = spec.resolution;
    let c = spec.channels;
    let mut grad = vec![S::zero(); v.len()];
    let terms = c * ((nx - 1) * ny * nz + nx * (ny - 1) * nz + nx * ny * (nz - 1));
    if terms == 0 {
        return (S::zero(), grad);
    }
    let scale = S::one() / S::from_usize_lossy(terms);
    let two = S::lit(2.0);
    let mut total = S::zero();
    for iz in 0..nz {
        for iy in 0..ny {
            for ix in 0..nx {
                let a = spec.node_index(ix, iy, iz) * c;
                let neighbors = [
                    (ix + 1 < nx).then(|| spec.node_index(ix + 1, iy, iz)),
                    (iy + 1 < ny).then(|| spec.node_index(ix, iy + 1, iz)),
                    (iz + 1 < nz).then(|| spec.node_index(ix, iy, iz + 1)),
                ];
                for b in neighbors.into_iter().flatten() {
                    let b = b * c;
                    for ch in 0..c {
                        let d = v[a + ch] - v[b + ch];
                        total += d * d;
                        grad[a + ch] += two * d * scale;
                        grad[b + ch] -= two * d * scale;
                    }
                }
            }
        }
    }
    (total * scale, grad)
}
