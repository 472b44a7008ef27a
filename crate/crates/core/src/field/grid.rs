use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Voxel domain: node counts per axis, world-space bounds and channel count.
///
/// Grid nodes sit on the bounds: node `i` along an axis is at
/// `min + i * (max - min) / (n - 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: [usize; 3],
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
    pub channels: usize,
}

impl GridSpec {
    pub fn new(resolution: [usize; 3], bounds_min: [f64; 3], bounds_max: [f64; 3], channels: usize) -> Result<Self> {
        let spec = GridSpec {
            resolution,
            bounds_min,
            bounds_max,
            channels,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution.iter().any(|&n| n < 2) {
            return Err(Error::invalid(format!(
                "grid resolution {:?} must be at least 2 per axis",
                self.resolution
            )));
        }
        for a in 0..3 {
            if !(self.bounds_min[a] < self.bounds_max[a]) {
                return Err(Error::invalid(format!(
                    "grid bounds min {:?} must be below max {:?} on every axis",
                    self.bounds_min, self.bounds_max
                )));
            }
        }
        if self.channels == 0 {
            return Err(Error::invalid("grid needs at least one channel"));
        }
        Ok(())
    }

    pub fn with_channels(&self, channels: usize) -> Self {
        GridSpec {
            channels,
            ..self.clone()
        }
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.resolution.iter().product()
    }

    #[inline]
    pub fn dense_len(&self) -> usize {
        self.num_nodes() * self.channels
    }

    pub fn spacing(&self) -> [f64; 3] {
        std::array::from_fn(|a| (self.bounds_max[a] - self.bounds_min[a]) / (self.resolution[a] - 1) as f64)
    }

    #[inline]
    pub fn node_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.resolution[1] + iy) * self.resolution[0] + ix
    }

    pub fn node_position(&self, ix: usize, iy: usize, iz: usize) -> [f64; 3] {
        let h = self.spacing();
        let idx = [ix, iy, iz];
        std::array::from_fn(|a| self.bounds_min[a] + idx[a] as f64 * h[a])
    }

    pub fn same_domain(&self, other: &GridSpec) -> bool {
        self.bounds_min == other.bounds_min && self.bounds_max == other.bounds_max
    }

    /// Clamps a point into the bounds.
    pub fn clamp_point<S: Scalar>(&self, p: [S; 3]) -> [S; 3] {
        std::array::from_fn(|a| p[a].max(S::lit(self.bounds_min[a])).min(S::lit(self.bounds_max[a])))
    }

    /// Locates the interpolation cell of a finite point. Coordinates outside
    /// the bounds are clamped; the clamped axes are flagged inactive so their
    /// positional derivative is zero.
    #[inline]
    pub fn locate<S: Scalar>(&self, p: [S; 3]) -> Cell<S> {
        let mut cell = Cell {
            base: [0; 3],
            frac: [S::zero(); 3],
            active: [true; 3],
            inv_spacing: [S::zero(); 3],
        };
        for a in 0..3 {
            let n = self.resolution[a];
            let lo = S::lit(self.bounds_min[a]);
            let hi = S::lit(self.bounds_max[a]);
            let inv_h = S::from_usize_lossy(n - 1) / (hi - lo);
            let mut g = (p[a] - lo) * inv_h;
            let top = S::from_usize_lossy(n - 1);
            if g < S::zero() {
                g = S::zero();
                cell.active[a] = false;
            } else if g > top {
                g = top;
                cell.active[a] = false;
            }
            let i0 = g.floor().to_usize().unwrap_or(0).min(n - 2);
            cell.base[a] = i0;
            cell.frac[a] = g - S::from_usize_lossy(i0);
            cell.inv_spacing[a] = inv_h;
        }
        cell
    }
}

/// Interpolation cell of one query point.
#[derive(Clone, Copy, Debug)]
pub struct Cell<S> {
    pub base: [usize; 3],
    pub frac: [S; 3],
    pub active: [bool; 3],
    pub inv_spacing: [S; 3],
}

impl<S: Scalar> Cell<S> {
    /// Trilinear weights of the 8 corners; corner bit 0 = x, bit 1 = y, bit 2 = z.
    #[inline]
    pub fn weights(&self) -> [S; 8] {
        let [fx, fy, fz] = self.frac;
        let one = S::one();
        let (gx, gy, gz) = (one - fx, one - fy, one - fz);
        [
            gx * gy * gz,
            fx * gy * gz,
            gx * fy * gz,
            fx * fy * gz,
            gx * gy * fz,
            fx * gy * fz,
            gx * fy * fz,
            fx * fy * fz,
        ]
    }

    /// Derivatives of the corner weights with respect to the three fractional coordinates.
    #[inline]
    fn weight_derivs(&self) -> [[S; 8]; 3] {
        let [fx, fy, fz] = self.frac;
        let one = S::one();
        let (gx, gy, gz) = (one - fx, one - fy, one - fz);
        [
            [-gy * gz, gy * gz, -fy * gz, fy * gz, -gy * fz, gy * fz, -fy * fz, fy * fz],
            [-gx * gz, -fx * gz, gx * gz, fx * gz, -gx * fz, -fx * fz, gx * fz, fx * fz],
            [-gx * gy, -fx * gy, -gx * fy, -fx * fy, gx * gy, fx * gy, gx * fy, fx * fy],
        ]
    }

    /// Chain factor from fractional to world coordinates, zero on clamped axes.
    #[inline]
    fn world_scale(&self) -> [S; 3] {
        std::array::from_fn(|a| if self.active[a] { self.inv_spacing[a] } else { S::zero() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridLayout {
    Dense,
    /// Three-axis vector-matrix decomposition with `rank` components per axis pairing and channel.
    Factorized { rank: usize },
}

/// Axis pairings of the vector-matrix decomposition: (vector axis, matrix axes).
const VM_MODES: [(usize, usize, usize); 3] = [(0, 1, 2), (1, 0, 2), (2, 0, 1)];

/// A voxel grid with either dense or factorized parameters stored in one flat buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid<S> {
    spec: GridSpec,
    layout: GridLayout,
    params: Vec<S>,
}

impl<S: Scalar> VoxelGrid<S> {
    pub fn dense(spec: GridSpec, fill: S) -> Result<Self> {
        spec.validate()?;
        let params = vec![fill; spec.dense_len()];
        Ok(VoxelGrid {
            spec,
            layout: GridLayout::Dense,
            params,
        })
    }

    /// Dense grid from values laid out node-major (x fastest), channels interleaved.
    pub fn from_dense(spec: GridSpec, values: Vec<S>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.dense_len() {
            return Err(Error::invalid(format!(
                "dense payload has {} values, spec needs {}",
                values.len(),
                spec.dense_len()
            )));
        }
        Self::check_finite(&values)?;
        Ok(VoxelGrid {
            spec,
            layout: GridLayout::Dense,
            params: values,
        })
    }

    pub fn factorized(spec: GridSpec, rank: usize, params: Vec<S>) -> Result<Self> {
        spec.validate()?;
        if rank == 0 {
            return Err(Error::invalid("factorization rank must be at least 1"));
        }
        let expected = factorized_len(&spec, rank);
        if params.len() != expected {
            return Err(Error::invalid(format!(
                "factorized payload has {} values, rank {} needs {}",
                params.len(),
                rank,
                expected
            )));
        }
        Self::check_finite(&params)?;
        Ok(VoxelGrid {
            spec,
            layout: GridLayout::Factorized { rank },
            params,
        })
    }

    /// Factorized grid with every factor drawn uniformly from `[-scale, scale]`.
    pub fn factorized_random(spec: GridSpec, rank: usize, scale: f64, rng: &mut impl Rng) -> Result<Self> {
        let n = factorized_len(&spec, rank);
        let params = (0..n).map(|_| S::lit(rng.random_range(-scale..=scale))).collect();
        Self::factorized(spec, rank, params)
    }

    /// Factorized grid reconstructing to `value` everywhere (vectors 1,
    /// matrices `value / (3 * rank)`), plus uniform noise of the given amplitude.
    pub fn factorized_constant(spec: GridSpec, rank: usize, value: f64, noise: f64, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        if rank == 0 {
            return Err(Error::invalid("factorization rank must be at least 1"));
        }
        let [nx, ny, nz] = spec.resolution;
        let n_vec = (nx + ny + nz) * rank * spec.channels;
        let n = factorized_len(&spec, rank);
        let m = value / (3 * rank) as f64;
        let params = (0..n)
            .map(|i| {
                let base = if i < n_vec { 1.0 } else { m };
                let jitter = if noise > 0.0 { rng.random_range(-noise..=noise) } else { 0.0 };
                S::lit(base + jitter)
            })
            .collect();
        Self::factorized(spec, rank, params)
    }

    /// Builds from stored parts; used by checkpoint loading.
    pub fn from_parts(spec: GridSpec, layout: GridLayout, params: Vec<S>) -> Result<Self> {
        match layout {
            GridLayout::Dense => Self::from_dense(spec, params),
            GridLayout::Factorized { rank } => Self::factorized(spec, rank, params),
        }
    }

    fn check_finite(values: &[S]) -> Result<()> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid values must be finite"));
        }
        Ok(())
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn layout(&self) -> GridLayout {
        self.layout
    }

    pub fn channels(&self) -> usize {
        self.spec.channels
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    /// Mutable parameters; callers are responsible for keeping them finite.
    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    pub fn fill(&mut self, value: S) {
        self.params.iter_mut().for_each(|p| *p = value);
    }

    /// Sum of the vector-matrix products at every node.
    pub fn factorized_reconstruct(&self) -> Result<Vec<S>> {
        let GridLayout::Factorized { rank } = self.layout else {
            return Err(Error::Mode("factorized_reconstruct called on a dense grid".into()));
        };
        let [nx, ny, nz] = self.spec.resolution;
        let c = self.spec.channels;
        let offs = VmOffsets::new(&self.spec, rank);
        let mut out = vec![S::zero(); self.spec.dense_len()];
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    let node = [ix, iy, iz];
                    let base = self.spec.node_index(ix, iy, iz) * c;
                    for ch in 0..c {
                        let mut acc = S::zero();
                        for (m, &(va, pa, pb)) in VM_MODES.iter().enumerate() {
                            for r in 0..rank {
                                let v = self.params[offs.vec(m, ch, r) + node[va]];
                                let mat = self.params[offs.mat(m, ch, r) + node[pa] * offs.dims[pb] + node[pb]];
                                acc += v * mat;
                            }
                        }
                        out[base + ch] = acc;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Dense copy of this grid (a clone when already dense).
    pub fn to_dense(&self) -> VoxelGrid<S> {
        match self.layout {
            GridLayout::Dense => self.clone(),
            GridLayout::Factorized { .. } => VoxelGrid {
                spec: self.spec.clone(),
                layout: GridLayout::Dense,
                params: self.factorized_reconstruct().expect("factorized layout"),
            },
        }
    }

    /// Value of one node; for factorized grids this evaluates the decomposition.
    pub fn node_value(&self, ix: usize, iy: usize, iz: usize, ch: usize) -> S {
        match self.layout {
            GridLayout::Dense => self.params[self.spec.node_index(ix, iy, iz) * self.spec.channels + ch],
            GridLayout::Factorized { rank } => {
                let offs = VmOffsets::new(&self.spec, rank);
                let node = [ix, iy, iz];
                let mut acc = S::zero();
                for (m, &(va, pa, pb)) in VM_MODES.iter().enumerate() {
                    for r in 0..rank {
                        acc += self.params[offs.vec(m, ch, r) + node[va]]
                            * self.params[offs.mat(m, ch, r) + node[pa] * offs.dims[pb] + node[pb]];
                    }
                }
                acc
            }
        }
    }

    #[inline]
    pub fn locate(&self, p: [S; 3]) -> Cell<S> {
        self.spec.locate(p)
    }

    /// Trilinear interpolation at a located cell into `out` (length = channels).
    #[inline]
    pub fn sample_cell(&self, cell: &Cell<S>, out: &mut [S]) {
        match self.layout {
            GridLayout::Dense => self.dense_sample(cell, out, None),
            GridLayout::Factorized { rank } => self.vm_sample(rank, cell, out, None),
        }
    }

    /// As [`sample_cell`](Self::sample_cell), also writing the per-channel
    /// derivative with respect to the world-space point.
    #[inline]
    pub fn sample_cell_with_jacobian(&self, cell: &Cell<S>, out: &mut [S], jac: &mut [[S; 3]]) {
        match self.layout {
            GridLayout::Dense => self.dense_sample(cell, out, Some(jac)),
            GridLayout::Factorized { rank } => self.vm_sample(rank, cell, out, Some(jac)),
        }
    }

    /// Adds `d(sum_c grad_out[c] * value_c) / d params` into `grad_params`.
    #[inline]
    pub fn accumulate_grad(&self, cell: &Cell<S>, grad_out: &[S], grad_params: &mut [S]) {
        match self.layout {
            GridLayout::Dense => {
                let c = self.spec.channels;
                let w = cell.weights();
                for (k, &wk) in w.iter().enumerate() {
                    let base = self.corner_index(cell, k) * c;
                    for ch in 0..c {
                        grad_params[base + ch] += wk * grad_out[ch];
                    }
                }
            }
            GridLayout::Factorized { rank } => self.vm_accumulate(rank, cell, grad_out, grad_params),
        }
    }

    /// Batch interpolation; returns `points.len() * channels` values.
    pub fn trilinear_sample(&self, points: &[[S; 3]]) -> Result<Vec<S>> {
        check_points(points)?;
        let c = self.spec.channels;
        let mut out = vec![S::zero(); points.len() * c];
        for (p, o) in points.iter().zip(out.chunks_mut(c)) {
            self.sample_cell(&self.locate(*p), o);
        }
        Ok(out)
    }

    #[inline]
    fn corner_index(&self, cell: &Cell<S>, k: usize) -> usize {
        let [bx, by, bz] = cell.base;
        self.spec
            .node_index(bx + (k & 1), by + ((k >> 1) & 1), bz + ((k >> 2) & 1))
    }

    #[inline]
    fn dense_sample(&self, cell: &Cell<S>, out: &mut [S], jac: Option<&mut [[S; 3]]>) {
        let c = self.spec.channels;
        let w = cell.weights();
        out[..c].iter_mut().for_each(|v| *v = S::zero());
        let mut corners = [0usize; 8];
        for (k, idx) in corners.iter_mut().enumerate() {
            *idx = self.corner_index(cell, k) * c;
            for ch in 0..c {
                out[ch] += w[k] * self.params[*idx + ch];
            }
        }
        if let Some(jac) = jac {
            let dw = cell.weight_derivs();
            let scale = cell.world_scale();
            for ch in 0..c {
                let mut g = [S::zero(); 3];
                for (k, &idx) in corners.iter().enumerate() {
                    let v = self.params[idx + ch];
                    for a in 0..3 {
                        g[a] += dw[a][k] * v;
                    }
                }
                jac[ch] = [g[0] * scale[0], g[1] * scale[1], g[2] * scale[2]];
            }
        }
    }

    fn vm_sample(&self, rank: usize, cell: &Cell<S>, out: &mut [S], mut jac: Option<&mut [[S; 3]]>) {
        let offs = VmOffsets::new(&self.spec, rank);
        let scale = cell.world_scale();
        let one = S::one();
        for ch in 0..self.spec.channels {
            let mut acc = S::zero();
            let mut g = [S::zero(); 3];
            for (m, &(va, pa, pb)) in VM_MODES.iter().enumerate() {
                let (i, f) = (cell.base[va], cell.frac[va]);
                let (ia, fa) = (cell.base[pa], cell.frac[pa]);
                let (ib, fb) = (cell.base[pb], cell.frac[pb]);
                let nb = offs.dims[pb];
                for r in 0..rank {
                    let vo = offs.vec(m, ch, r);
                    let (v0, v1) = (self.params[vo + i], self.params[vo + i + 1]);
                    let vec_val = v0 * (one - f) + v1 * f;
                    let mo = offs.mat(m, ch, r);
                    let m00 = self.params[mo + ia * nb + ib];
                    let m01 = self.params[mo + ia * nb + ib + 1];
                    let m10 = self.params[mo + (ia + 1) * nb + ib];
                    let m11 = self.params[mo + (ia + 1) * nb + ib + 1];
                    let lo = m00 * (one - fb) + m01 * fb;
                    let hi = m10 * (one - fb) + m11 * fb;
                    let mat_val = lo * (one - fa) + hi * fa;
                    acc += vec_val * mat_val;
                    if jac.is_some() {
                        g[va] += (v1 - v0) * mat_val;
                        g[pa] += vec_val * (hi - lo);
                        let d_b = (m01 - m00) * (one - fa) + (m11 - m10) * fa;
                        g[pb] += vec_val * d_b;
                    }
                }
            }
            out[ch] = acc;
            if let Some(j) = jac.as_deref_mut() {
                j[ch] = [g[0] * scale[0], g[1] * scale[1], g[2] * scale[2]];
            }
        }
    }

    /// Adds the parameter gradient of a loss whose gradient with respect to
    /// the node values (dense layout) is `node_grad`.
    pub fn accumulate_node_grad(&self, node_grad: &[S], grad_params: &mut [S]) {
        match self.layout {
            GridLayout::Dense => grad_params.iter_mut().zip(node_grad).for_each(|(g, v)| *g += *v),
            GridLayout::Factorized { rank } => {
                let [nx, ny, nz] = self.spec.resolution;
                let c = self.spec.channels;
                let offs = VmOffsets::new(&self.spec, rank);
                for iz in 0..nz {
                    for iy in 0..ny {
                        for ix in 0..nx {
                            let node = [ix, iy, iz];
                            let base = self.spec.node_index(ix, iy, iz) * c;
                            for ch in 0..c {
                                let go = node_grad[base + ch];
                                if go == S::zero() {
                                    continue;
                                }
                                for (m, &(va, pa, pb)) in VM_MODES.iter().enumerate() {
                                    for r in 0..rank {
                                        let vi = offs.vec(m, ch, r) + node[va];
                                        let mi = offs.mat(m, ch, r) + node[pa] * offs.dims[pb] + node[pb];
                                        let (v, mat) = (self.params[vi], self.params[mi]);
                                        grad_params[vi] += go * mat;
                                        grad_params[mi] += go * v;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn vm_accumulate(&self, rank: usize, cell: &Cell<S>, grad_out: &[S], grad: &mut [S]) {
        let offs = VmOffsets::new(&self.spec, rank);
        let one = S::one();
        for ch in 0..self.spec.channels {
            let go = grad_out[ch];
            if go == S::zero() {
                continue;
            }
            for (m, &(va, pa, pb)) in VM_MODES.iter().enumerate() {
                let (i, f) = (cell.base[va], cell.frac[va]);
                let (ia, fa) = (cell.base[pa], cell.frac[pa]);
                let (ib, fb) = (cell.base[pb], cell.frac[pb]);
                let nb = offs.dims[pb];
                let bw = [
                    (one - fa) * (one - fb),
                    (one - fa) * fb,
                    fa * (one - fb),
                    fa * fb,
                ];
                for r in 0..rank {
                    let vo = offs.vec(m, ch, r);
                    let vec_val = self.params[vo + i] * (one - f) + self.params[vo + i + 1] * f;
                    let mo = offs.mat(m, ch, r);
                    let idx = [
                        mo + ia * nb + ib,
                        mo + ia * nb + ib + 1,
                        mo + (ia + 1) * nb + ib,
                        mo + (ia + 1) * nb + ib + 1,
                    ];
                    let mat_val: S = (0..4).map(|k| bw[k] * self.params[idx[k]]).sum();
                    grad[vo + i] += go * (one - f) * mat_val;
                    grad[vo + i + 1] += go * f * mat_val;
                    for k in 0..4 {
                        grad[idx[k]] += go * vec_val * bw[k];
                    }
                }
            }
        }
    }
}

pub(crate) fn check_points<S: Scalar>(points: &[[S; 3]]) -> Result<()> {
    if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid(format!("sample point {i} has non-finite coordinates")));
    }
    Ok(())
}

/// Number of parameters of a rank-`rank` vector-matrix grid.
pub fn factorized_len(spec: &GridSpec, rank: usize) -> usize {
    let [nx, ny, nz] = spec.resolution;
    let per = (nx + ny + nz) + (ny * nz + nx * nz + nx * ny);
    per * rank * spec.channels
}

/// Offsets of the vector and matrix factors inside the flat parameter buffer.
/// Vectors for all modes come first, then matrices, each ordered (mode, channel, rank).
#[derive(Debug)]
struct VmOffsets {
    dims: [usize; 3],
    rank: usize,
    vec_start: [usize; 3],
    mat_start: [usize; 3],
}

impl VmOffsets {
    fn new(spec: &GridSpec, rank: usize) -> Self {
        let dims = spec.resolution;
        let c = spec.channels;
        let mut vec_start = [0; 3];
        let mut mat_start = [0; 3];
        let mut cursor = 0;
        for (m, &(va, _, _)) in VM_MODES.iter().enumerate() {
            vec_start[m] = cursor;
            cursor += dims[va] * c * rank;
        }
        for (m, &(_, pa, pb)) in VM_MODES.iter().enumerate() {
            mat_start[m] = cursor;
            cursor += dims[pa] * dims[pb] * c * rank;
        }
        VmOffsets {
            dims,
            rank,
            vec_start,
            mat_start,
        }
    }

    #[inline]
    fn vec(&self, m: usize, ch: usize, r: usize) -> usize {
        let len = self.dims[VM_MODES[m].0];
        self.vec_start[m] + (ch * self.rank + r) * len
    }

    #[inline]
    fn mat(&self, m: usize, ch: usize, r: usize) -> usize {
        let (_, pa, pb) = VM_MODES[m];
        self.mat_start[m] + (ch * self.rank + r) * self.dims[pa] * self.dims[pb]
    }
}
