//! Structured ops: conv2d, group_norm, linear, pooling, upsampling.
//!
//! conv2d runs as im2col + GEMM. Backward recomputes the column buffer per
//! sample instead of caching it; per-sample work is rayon-parallel and
//! per-sample weight-gradient contributions are summed in sample order, so
//! gradients are bitwise-deterministic for any thread count.

use rayon::prelude::*;

use super::gemm::gemm_acc;
use super::graph::{Backward, Graph, NodeId};
use super::{sc, Scalar, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy)]
struct ConvDims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvDims {
    fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn ohow(&self) -> usize {
        self.oh * self.ow
    }
}

fn conv_out_len(size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let span = size + 2 * pad;
    if span < k || (span - k) % stride != 0 {
        return Err(Error::invalid(format!(
            "conv output size ({size} + 2*{pad} - {k})/{stride} + 1 is not integral"
        )));
    }
    Ok((span - k) / stride + 1)
}

/// Gather one sample's receptive fields into col[ckk][oh*ow].
fn im2col<T: Scalar>(x: &[T], d: &ConvDims, col: &mut [T]) {
    let (h, w, ow) = (d.h, d.w, d.ow);
    debug_assert_eq!(col.len(), d.ckk() * d.ohow());
    for ci in 0..d.c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (ci * d.kh + ki) * d.kw + kj;
                let out_row = &mut col[row * d.ohow()..(row + 1) * d.ohow()];
                for oi in 0..d.oh {
                    let ii = (oi * d.stride + ki) as isize - d.pad as isize;
                    let dst = &mut out_row[oi * ow..(oi + 1) * ow];
                    if ii < 0 || ii >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src_row = &plane[ii as usize * w..(ii as usize + 1) * w];
                    if d.stride == 1 {
                        // jj = oj + kj - pad is contiguous; copy the overlap.
                        let shift = kj as isize - d.pad as isize;
                        let lo = (-shift).max(0) as usize; // first valid oj
                        let hi = ((w as isize - shift).min(ow as isize)).max(0) as usize;
                        dst[..lo].fill(T::zero());
                        dst[hi..].fill(T::zero());
                        if lo < hi {
                            let s = (lo as isize + shift) as usize;
                            dst[lo..hi].copy_from_slice(&src_row[s..s + (hi - lo)]);
                        }
                    } else {
                        for (oj, d_val) in dst.iter_mut().enumerate() {
                            let jj = (oj * d.stride + kj) as isize - d.pad as isize;
                            *d_val = if jj < 0 || jj >= w as isize {
                                T::zero()
                            } else {
                                src_row[jj as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add a column-gradient buffer back into one sample's image grad.
fn col2im_acc<T: Scalar>(col: &[T], d: &ConvDims, gx: &mut [T]) {
    let (h, w, ow) = (d.h, d.w, d.ow);
    for ci in 0..d.c {
        let plane = &mut gx[ci * h * w..(ci + 1) * h * w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (ci * d.kh + ki) * d.kw + kj;
                let src_rows = &col[row * d.ohow()..(row + 1) * d.ohow()];
                for oi in 0..d.oh {
                    let ii = (oi * d.stride + ki) as isize - d.pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[ii as usize * w..(ii as usize + 1) * w];
                    let src = &src_rows[oi * ow..(oi + 1) * ow];
                    for (oj, &v) in src.iter().enumerate() {
                        let jj = (oj * d.stride + kj) as isize - d.pad as isize;
                        if jj >= 0 && jj < w as isize {
                            dst_row[jj as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn transpose<T: Scalar>(rows: usize, cols: usize, a: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

impl<T: Scalar> Graph<T> {
    /// 2-D cross-correlation with zero padding.
    ///
    /// x: [N,C,H,W], w: [K,C,kh,kw] (kh, kw odd), bias: [K].
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let (n, c, h, iw) = self.value(x).dims4()?;
        let (k, wc, kh, kw) = self.value(w).dims4()?;
        if stride == 0 {
            return Err(Error::invalid("conv stride must be >= 1"));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::invalid(format!("conv kernel {kh}x{kw} must be odd")));
        }
        if wc != c {
            return Err(Error::ShapeMismatch {
                context: "conv2d channels",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(w).shape().to_vec(),
            });
        }
        if self.value(bias).shape() != [k] {
            return Err(Error::ShapeMismatch {
                context: "conv2d bias",
                lhs: self.value(bias).shape().to_vec(),
                rhs: vec![k],
            });
        }
        let oh = conv_out_len(h, kh, stride, padding)?;
        let ow = conv_out_len(iw, kw, stride, padding)?;
        let dims = ConvDims {
            n,
            c,
            h,
            w: iw,
            k,
            kh,
            kw,
            stride,
            pad: padding,
            oh,
            ow,
        };

        let value = conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(bias).data(),
            &dims,
        );
        let value = Tensor::from_vec(vec![n, k, oh, ow], value)?;
        self.push_op("conv2d", value, vec![x, w, bias], Box::new(Conv2dRule { dims }))
    }

    /// Group normalization over (C/groups, H, W) per sample, then per-channel affine.
    pub fn group_norm(
        &mut self,
        x: NodeId,
        groups: usize,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if groups == 0 || c % groups != 0 {
            return Err(Error::invalid(format!(
                "group_norm: {c} channels not divisible by {groups} groups"
            )));
        }
        if eps <= 0.0 {
            return Err(Error::invalid("group_norm eps must be > 0"));
        }
        for (name, t) in [("gamma", gamma), ("beta", beta)] {
            if self.value(t).shape() != [c] {
                return Err(Error::invalid(format!(
                    "group_norm {name} must have shape [{c}], got {:?}",
                    self.value(t).shape()
                )));
            }
        }
        let value = group_norm_forward(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            n,
            c,
            h,
            w,
            groups,
            eps,
        );
        let value = Tensor::from_vec(vec![n, c, h, w], value)?;
        self.push_op(
            "group_norm",
            value,
            vec![x, gamma, beta],
            Box::new(GroupNormRule { groups, eps }),
        )
    }

    /// Dense layer: x[N,F] . w[F,G] + b[G].
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (n, f) = self.value(x).dims2()?;
        let (wf, g) = self.value(w).dims2()?;
        if wf != f || self.value(b).shape() != [g] {
            return Err(Error::ShapeMismatch {
                context: "linear",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(w).shape().to_vec(),
            });
        }
        let mut out = vec![T::zero(); n * g];
        gemm_acc(n, f, g, self.value(x).data(), self.value(w).data(), &mut out);
        let bias = self.value(b).data();
        for row in out.chunks_mut(g) {
            for (o, &bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let value = Tensor::from_vec(vec![n, g], out)?;
        self.push_op("linear", value, vec![x, w, b], Box::new(LinearRule))
    }

    /// 2x2 average pooling, stride 2. H and W must be even.
    pub fn avg_pool2x(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::invalid(format!(
                "avg_pool2x needs even spatial dims, got {h}x{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let d = self.value(x).data();
        let quarter = sc::<T>(0.25);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for nc in 0..n * c {
            let plane = &d[nc * h * w..(nc + 1) * h * w];
            for i in 0..oh {
                for j in 0..ow {
                    let a = plane[2 * i * w + 2 * j];
                    let b = plane[2 * i * w + 2 * j + 1];
                    let cc = plane[(2 * i + 1) * w + 2 * j];
                    let e = plane[(2 * i + 1) * w + 2 * j + 1];
                    out.push((a + b + cc + e) * quarter);
                }
            }
        }
        let value = Tensor::from_vec(vec![n, c, oh, ow], out)?;
        self.push_op("avg_pool2x", value, vec![x], Box::new(AvgPool2xRule))
    }

    /// Nearest-neighbor 2x upsampling.
    pub fn upsample2x(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let (oh, ow) = (2 * h, 2 * w);
        let d = self.value(x).data();
        let mut out = vec![T::zero(); n * c * oh * ow];
        for nc in 0..n * c {
            let plane = &d[nc * h * w..(nc + 1) * h * w];
            let dst = &mut out[nc * oh * ow..(nc + 1) * oh * ow];
            for i in 0..h {
                for j in 0..w {
                    let v = plane[i * w + j];
                    dst[2 * i * ow + 2 * j] = v;
                    dst[2 * i * ow + 2 * j + 1] = v;
                    dst[(2 * i + 1) * ow + 2 * j] = v;
                    dst[(2 * i + 1) * ow + 2 * j + 1] = v;
                }
            }
        }
        let value = Tensor::from_vec(vec![n, c, oh, ow], out)?;
        self.push_op("upsample2x", value, vec![x], Box::new(Upsample2xRule))
    }
}

fn conv2d_forward<T: Scalar>(x: &[T], w: &[T], bias: &[T], d: &ConvDims) -> Vec<T> {
    let (ckk, ohow) = (d.ckk(), d.ohow());
    let mut out = vec![T::zero(); d.n * d.k * ohow];
    out.par_chunks_mut(d.k * ohow)
        .enumerate()
        .for_each(|(n, out_n)| {
            let mut col = vec![T::zero(); ckk * ohow];
            im2col(&x[n * d.c * d.h * d.w..(n + 1) * d.c * d.h * d.w], d, &mut col);
            gemm_acc(d.k, ckk, ohow, w, &col, out_n);
            for (k, row) in out_n.chunks_mut(ohow).enumerate() {
                let b = bias[k];
                for v in row.iter_mut() {
                    *v += b;
                }
            }
        });
    out
}

struct Conv2dRule {
    dims: ConvDims,
}

impl<T: Scalar> Backward<T> for Conv2dRule {
    fn backward(
        &self,
        g: &[T],
        inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let d = &self.dims;
        let (ckk, ohow) = (d.ckk(), d.ohow());
        let x = inputs[0].data();
        let w = inputs[1].data();
        let chw = d.c * d.h * d.w;

        let gx = needs[0].then(|| {
            let wt = transpose(d.k, ckk, w); // [ckk, k]
            let mut gx = vec![T::zero(); x.len()];
            gx.par_chunks_mut(chw).enumerate().for_each(|(n, gx_n)| {
                let gn = &g[n * d.k * ohow..(n + 1) * d.k * ohow];
                let mut gcol = vec![T::zero(); ckk * ohow];
                gemm_acc(ckk, d.k, ohow, &wt, gn, &mut gcol);
                col2im_acc(&gcol, d, gx_n);
            });
            gx
        });

        let gw = needs[1].then(|| {
            // Per-sample dW^T = col x g_n^T, summed in sample order.
            let per_sample: Vec<Vec<T>> = (0..d.n)
                .into_par_iter()
                .map(|n| {
                    let mut col = vec![T::zero(); ckk * ohow];
                    im2col(&x[n * chw..(n + 1) * chw], d, &mut col);
                    let gn = &g[n * d.k * ohow..(n + 1) * d.k * ohow];
                    let gnt = transpose(d.k, ohow, gn); // [ohow, k]
                    let mut gwt = vec![T::zero(); ckk * d.k];
                    gemm_acc(ckk, ohow, d.k, &col, &gnt, &mut gwt);
                    gwt
                })
                .collect();
            let mut gw = vec![T::zero(); d.k * ckk];
            for gwt in per_sample {
                for i in 0..ckk {
                    for k in 0..d.k {
                        gw[k * ckk + i] += gwt[i * d.k + k];
                    }
                }
            }
            gw
        });

        let gb = needs[2].then(|| {
            let mut gb = vec![T::zero(); d.k];
            for n in 0..d.n {
                for k in 0..d.k {
                    let row = &g[(n * d.k + k) * ohow..(n * d.k + k + 1) * ohow];
                    gb[k] += row.iter().copied().sum();
                }
            }
            gb
        });

        vec![gx, gw, gb]
    }
}

#[allow(clippy::too_many_arguments)]
fn group_norm_forward<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    _n: usize,
    c: usize,
    h: usize,
    w: usize,
    groups: usize,
    eps: f64,
) -> Vec<T> {
    let cg = c / groups;
    let m = cg * h * w;
    let hw = h * w;
    let inv_m = sc::<T>(1.0 / m as f64);
    let eps_t = sc::<T>(eps);
    let mut out = vec![T::zero(); x.len()];
    out.par_chunks_mut(m)
        .enumerate()
        .for_each(|(idx, out_g)| {
            // idx enumerates (sample, group) pairs in order.
            let g_in_n = idx % groups;
            let base = idx * m;
            let xg = &x[base..base + m];
            let mean: T = xg.iter().copied().sum::<T>() * inv_m;
            let var: T = xg
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .sum::<T>()
                * inv_m;
            let inv_std = T::one() / (var + eps_t).sqrt();
            for ci in 0..cg {
                let ch = g_in_n * cg + ci;
                let (ga, be) = (gamma[ch], beta[ch]);
                for j in 0..hw {
                    let v = (xg[ci * hw + j] - mean) * inv_std;
                    out_g[ci * hw + j] = ga * v + be;
                }
            }
        });
    out
}

struct GroupNormRule {
    groups: usize,
    eps: f64,
}

impl<T: Scalar> Backward<T> for GroupNormRule {
    fn backward(
        &self,
        g: &[T],
        inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let (n, c, h, w) = inputs[0].dims4().expect("group_norm input is rank 4");
        let x = inputs[0].data();
        let gamma = inputs[1].data();
        let groups = self.groups;
        let cg = c / groups;
        let hw = h * w;
        let m = cg * hw;
        let inv_m = sc::<T>(1.0 / m as f64);
        let eps_t = sc::<T>(self.eps);

        let mut gx = needs[0].then(|| vec![T::zero(); x.len()]);
        let mut ggamma = needs[1].then(|| vec![T::zero(); c]);
        let mut gbeta = needs[2].then(|| vec![T::zero(); c]);

        for ni in 0..n {
            for gi in 0..groups {
                let base = (ni * groups + gi) * m;
                let xg = &x[base..base + m];
                let gg = &g[base..base + m];
                let mean: T = xg.iter().copied().sum::<T>() * inv_m;
                let var: T =
                    xg.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_m;
                let inv_std = T::one() / (var + eps_t).sqrt();

                // group-level reductions of h = gamma * g and h * xhat
                let mut sum_h = T::zero();
                let mut sum_hx = T::zero();
                for ci in 0..cg {
                    let ga = gamma[gi * cg + ci];
                    for j in 0..hw {
                        let i = ci * hw + j;
                        let xhat = (xg[i] - mean) * inv_std;
                        let hv = ga * gg[i];
                        sum_h += hv;
                        sum_hx += hv * xhat;
                    }
                }

                for ci in 0..cg {
                    let ch = gi * cg + ci;
                    let ga = gamma[ch];
                    for j in 0..hw {
                        let i = ci * hw + j;
                        let xhat = (xg[i] - mean) * inv_std;
                        if let Some(gx) = gx.as_mut() {
                            let hv = ga * gg[i];
                            gx[base + i] =
                                (hv - inv_m * sum_h - xhat * inv_m * sum_hx) * inv_std;
                        }
                        if let Some(gp) = ggamma.as_mut() {
                            gp[ch] += gg[i] * xhat;
                        }
                        if let Some(gb) = gbeta.as_mut() {
                            gb[ch] += gg[i];
                        }
                    }
                }
            }
        }
        vec![gx, ggamma, gbeta]
    }
}

struct LinearRule;
impl<T: Scalar> Backward<T> for LinearRule {
    fn backward(
        &self,
        g: &[T],
        inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let (n, f) = inputs[0].dims2().expect("linear x is rank 2");
        let (_, go) = inputs[1].dims2().expect("linear w is rank 2");
        let x = inputs[0].data();
        let w = inputs[1].data();

        let gx = needs[0].then(|| {
            let wt = transpose(f, go, w); // [g, f]
            let mut gx = vec![T::zero(); n * f];
            gemm_acc(n, go, f, g, &wt, &mut gx);
            gx
        });
        let gw = needs[1].then(|| {
            let xt = transpose(n, f, x); // [f, n]
            let mut gw = vec![T::zero(); f * go];
            gemm_acc(f, n, go, &xt, g, &mut gw);
            gw
        });
        let gb = needs[2].then(|| {
            let mut gb = vec![T::zero(); go];
            for row in g.chunks(go) {
                for (acc, &v) in gb.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            gb
        });
        vec![gx, gw, gb]
    }
}

struct AvgPool2xRule;
impl<T: Scalar> Backward<T> for AvgPool2xRule {
    fn backward(
        &self,
        g: &[T],
        inputs: &[&Tensor<T>],
        out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        vec![needs[0].then(|| {
            let (n, c, h, w) = inputs[0].dims4().expect("pool input is rank 4");
            let (_, _, oh, ow) = out.dims4().expect("pool output is rank 4");
            let quarter = sc::<T>(0.25);
            let mut gx = vec![T::zero(); inputs[0].len()];
            for nc in 0..n * c {
                let gsrc = &g[nc * oh * ow..(nc + 1) * oh * ow];
                let dst = &mut gx[nc * h * w..(nc + 1) * h * w];
                for i in 0..oh {
                    for j in 0..ow {
                        let v = gsrc[i * ow + j] * quarter;
                        dst[2 * i * w + 2 * j] = v;
                        dst[2 * i * w + 2 * j + 1] = v;
                        dst[(2 * i + 1) * w + 2 * j] = v;
                        dst[(2 * i + 1) * w + 2 * j + 1] = v;
                    }
                }
            }
            gx
        })]
    }
}

struct Upsample2xRule;
impl<T: Scalar> Backward<T> for Upsample2xRule {
    fn backward(
        &self,
        g: &[T],
        inputs: &[&Tensor<T>],
        out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        vec![needs[0].then(|| {
            let (n, c, h, w) = inputs[0].dims4().expect("upsample input is rank 4");
            let (_, _, oh, ow) = out.dims4().expect("upsample output is rank 4");
            let mut gx = vec![T::zero(); inputs[0].len()];
            for nc in 0..n * c {
                let gsrc = &g[nc * oh * ow..(nc + 1) * oh * ow];
                let dst = &mut gx[nc * h * w..(nc + 1) * h * w];
                for i in 0..h {
                    for j in 0..w {
                        dst[i * w + j] = gsrc[2 * i * ow + 2 * j]
                            + gsrc[2 * i * ow + 2 * j + 1]
                            + gsrc[(2 * i + 1) * ow + 2 * j]
                            + gsrc[(2 * i + 1) * ow + 2 * j + 1];
                    }
                }
            }
            gx
        })]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_identity_kernel() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64));
        let w = g.input(t64(&[1, 1, 1, 1], &[1.0]));
        let b = g.input(t64(&[1], &[0.0]));
        let y = g.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn conv_all_ones_center_counts_nine() {
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[1, 1, 3, 3], 1.0f64));
        let w = g.input(Tensor::full(&[1, 1, 3, 3], 1.0f64));
        let b = g.input(t64(&[1], &[0.0]));
        let y = g.conv2d(x, w, b, 1, 1).unwrap();
        let out = g.value(y).data();
        assert_eq!(out[4], 9.0); // center
        assert_eq!(out[0], 4.0); // corner sees a 2x2 patch
    }

    #[test]
    fn conv_rejects_non_integral_output() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[1, 1, 4, 4]));
        let w = g.input(Tensor::zeros(&[1, 1, 3, 3]));
        let b = g.input(Tensor::zeros(&[1]));
        // (4 + 2 - 3) / 2 + 1 not integral
        assert!(g.conv2d(x, w, b, 2, 1).is_err());
    }

    #[test]
    fn conv_rejects_even_kernel() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[1, 1, 4, 4]));
        let w = g.input(Tensor::zeros(&[1, 1, 2, 2]));
        let b = g.input(Tensor::zeros(&[1]));
        assert!(g.conv2d(x, w, b, 1, 0).is_err());
    }

    #[test]
    fn group_norm_constant_input_gives_beta() {
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[2, 4, 3, 3], 7.5f64));
        let gamma = g.input(Tensor::full(&[4], 2.0f64));
        let beta = g.input(t64(&[4], &[0.1, 0.2, 0.3, 0.4]));
        let y = g.group_norm(x, 2, gamma, beta, 1e-5).unwrap();
        let out = g.value(y).data();
        for n in 0..2 {
            for c in 0..4 {
                for j in 0..9 {
                    let v = out[(n * 4 + c) * 9 + j];
                    let want = [0.1, 0.2, 0.3, 0.4][c];
                    assert!((v - want).abs() < 1e-9, "{v} vs {want}");
                }
            }
        }
    }

    #[test]
    fn group_norm_normalizes_mean_and_variance() {
        // mean 5, variance 4 per group -> output mean 0, var ~= 1
        let mut g = Graph::new();
        let x = g.input(Tensor::from_fn(&[1, 2, 2, 2], |i| {
            if i % 2 == 0 {
                3.0
            } else {
                7.0
            }
        }));
        let gamma = g.input(Tensor::full(&[2], 1.0f64));
        let beta = g.input(Tensor::zeros(&[2]));
        let y = g.group_norm(x, 1, gamma, beta, 1e-10).unwrap();
        let out = g.value(y).data();
        let mean: f64 = out.iter().sum::<f64>() / out.len() as f64;
        let var: f64 = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / out.len() as f64;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn group_norm_rejects_indivisible_channels() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[1, 3, 2, 2]));
        let gamma = g.input(Tensor::zeros(&[3]));
        let beta = g.input(Tensor::zeros(&[3]));
        assert!(g.group_norm(x, 2, gamma, beta, 1e-5).is_err());
    }

    #[test]
    fn pool_then_upsample_shapes_and_values() {
        let mut g = Graph::new();
        let x = g.input(t64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let p = g.avg_pool2x(x).unwrap();
        assert_eq!(g.value(p).data(), &[2.5]);
        let u = g.upsample2x(p).unwrap();
        assert_eq!(g.value(u).data(), &[2.5; 4]);
    }

    #[test]
    fn linear_matches_manual() {
        let mut g = Graph::new();
        let x = g.input(t64(&[1, 2], &[1.0, 2.0]));
        let w = g.input(t64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = g.input(t64(&[3], &[0.5, 0.5, 0.5]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[9.5, 12.5, 15.5]);
    }
}
