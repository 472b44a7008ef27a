use rayon::prelude::*;

use crate::scalar::Scalar;

/// 3x3 convolution, stride 1, zero padding 1, on HWC buffers.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Conv3<S> {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    /// `[out][tap][in]`, tap = ky * 3 + kx
    w: Vec<S>,
    /// `[in][tap][out]`
    wt: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> Conv3<S> {
    /// From PyTorch-ordered `[out, in, 3, 3]` weights.
    pub fn from_oihw(name: String, in_ch: usize, out_ch: usize, oihw: &[S], bias: Vec<S>) -> Self {
        let mut w = vec![S::zero(); out_ch * 9 * in_ch];
        let mut wt = vec![S::zero(); out_ch * 9 * in_ch];
        for o in 0..out_ch {
            for i in 0..in_ch {
                for k in 0..9 {
                    let v = oihw[(o * in_ch + i) * 9 + k];
                    w[(o * 9 + k) * in_ch + i] = v;
                    wt[(i * 9 + k) * out_ch + o] = v;
                }
            }
        }
        Conv3 {
            name,
            in_ch,
            out_ch,
            w,
            wt,
            bias,
        }
    }

    pub fn to_oihw(&self) -> Vec<S> {
        let mut out = vec![S::zero(); self.w.len()];
        for o in 0..self.out_ch {
            for i in 0..self.in_ch {
                for k in 0..9 {
                    out[(o * self.in_ch + i) * 9 + k] = self.w[(o * 9 + k) * self.in_ch + i];
                }
            }
        }
        out
    }

    /// Convolution followed by ReLU.
    pub fn forward_relu(&self, input: &[S], h: usize, w: usize) -> Vec<S> {
        let (ci, co) = (self.in_ch, self.out_ch);
        let mut out = vec![S::zero(); h * w * co];
        out.par_chunks_mut(w * co).enumerate().for_each(|(y, row)| {
            for x in 0..w {
                let px = &mut row[x * co..(x + 1) * co];
                px.copy_from_slice(&self.bias);
                for ky in 0..3 {
                    let yy = y as isize + ky as isize - 1;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let xx = x as isize + kx as isize - 1;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        let src = &input[(yy as usize * w + xx as usize) * ci..][..ci];
                        let k = ky * 3 + kx;
                        for (o, acc) in px.iter_mut().enumerate() {
                            let wk = &self.w[(o * 9 + k) * ci..][..ci];
                            let mut s = S::zero();
                            for i in 0..ci {
                                s += wk[i] * src[i];
                            }
                            *acc += s;
                        }
                    }
                }
                for v in px.iter_mut() {
                    if *v < S::zero() {
                        *v = S::zero();
                    }
                }
            }
        });
        out
    }

    /// Gradient with respect to the input given the gradient at the
    /// pre-activation output.
    pub fn backward_input(&self, grad: &[S], h: usize, w: usize) -> Vec<S> {
        let (ci, co) = (self.in_ch, self.out_ch);
        let mut out = vec![S::zero(); h * w * ci];
        out.par_chunks_mut(w * ci).enumerate().for_each(|(y, row)| {
            for x in 0..w {
                let px = &mut row[x * ci..(x + 1) * ci];
                for ky in 0..3 {
                    // input row y feeds output row y - ky + 1
                    let oy = y as isize - ky as isize + 1;
                    if oy < 0 || oy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ox = x as isize - kx as isize + 1;
                        if ox < 0 || ox >= w as isize {
                            continue;
                        }
                        let g = &grad[(oy as usize * w + ox as usize) * co..][..co];
                        let k = ky * 3 + kx;
                        for (i, acc) in px.iter_mut().enumerate() {
                            let wk = &self.wt[(i * 9 + k) * co..][..co];
                            let mut s = S::zero();
                            for o in 0..co {
                                s += wk[o] * g[o];
                            }
                            *acc += s;
                        }
                    }
                }
            }
        });
        out
    }
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
/// Returns the pooled buffer and, per output value, the flat input index of the maximum.
pub(crate) fn max_pool2<S: Scalar>(input: &[S], h: usize, w: usize, c: usize) -> (Vec<S>, Vec<u32>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![S::zero(); oh * ow * c];
    let mut arg = vec![0u32; oh * ow * c];
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                let mut best_i = ((2 * y) * w + 2 * x) * c + ch;
                let mut best = input[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = ((2 * y + dy) * w + 2 * x + dx) * c + ch;
                    if input[i] > best {
                        best = input[i];
                        best_i = i;
                    }
                }
                let o = (y * ow + x) * c + ch;
                out[o] = best;
                arg[o] = best_i as u32;
            }
        }
    }
    (out, arg, oh, ow)
}

pub(crate) fn max_pool2_backward<S: Scalar>(grad: &[S], arg: &[u32], input_len: usize) -> Vec<S> {
    let mut out = vec![S::zero(); input_len];
    for (g, &i) in grad.iter().zip(arg) {
        out[i as usize] += *g;
    }
    out
}
