//! Forward and backward kernels for the layer types the network uses.
//!
//! Every kernel is a pure function of its inputs. Convolutions are lowered
//! to GEMM one output frame at a time and split across rayon workers by
//! sample; reductions over samples run in a fixed order, so results do not
//! depend on the thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Batch-norm epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch statistic in the running estimate.
pub const BN_MOMENTUM: f64 = 0.1;

/// Stride and zero padding of a 3-D convolution, ordered (T, H, W).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvGeometry {
    pub fn new(stride: [usize; 3], padding: [usize; 3]) -> Self {
        Self { stride, padding }
    }

    /// Output extents for an input of extents `input` and kernel `kernel`.
    pub fn output_extents(&self, input: [usize; 3], kernel: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            if self.stride[a] == 0 {
                return Err(Error::Shape("convolution stride must be >= 1".into()));
            }
            let padded = input[a] + 2 * self.padding[a];
            if padded < kernel[a] {
                return Err(Error::Shape(format!(
                    "kernel extent {} exceeds padded input extent {padded} on axis {a}",
                    kernel[a]
                )));
            }
            out[a] = (padded - kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }
}

pub(crate) fn dims5<T: Real>(t: &Tensor<T>, what: &str) -> Result<[usize; 5]> {
    t.shape()
        .try_into()
        .map_err(|_| Error::Shape(format!("{what} must be rank 5, got shape {:?}", t.shape())))
}

pub(crate) fn dims2<T: Real>(t: &Tensor<T>, what: &str) -> Result<[usize; 2]> {
    t.shape()
        .try_into()
        .map_err(|_| Error::Shape(format!("{what} must be rank 2, got shape {:?}", t.shape())))
}

/// Output positions `j` along one axis whose source index
/// `j * stride + k - pad` falls inside `0..input`.
#[inline]
fn valid_range(out: usize, input: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // smallest j with j*stride + k >= pad
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // largest j with j*stride + k - pad <= input - 1
    let lim = input + pad;
    let hi = if k >= lim {
        0
    } else {
        ((lim - 1 - k) / stride + 1).min(out)
    };
    (lo.min(hi), hi)
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

struct ConvDims {
    n: usize,
    cin: usize,
    cout: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    output: [usize; 3],
}

fn conv_dims<T: Real>(x: &[usize], w: &Tensor<T>, geom: &ConvGeometry) -> Result<ConvDims> {
    let [n, cin, ti, hi, wi]: [usize; 5] = x
        .try_into()
        .map_err(|_| Error::Shape(format!("convolution input must be rank 5, got {x:?}")))?;
    let [cout, cin_w, kt, kh, kw] = dims5(w, "convolution weight")?;
    if cin != cin_w {
        return Err(Error::Shape(format!(
            "input has {cin} channels, weight expects {cin_w}"
        )));
    }
    let output = geom.output_extents([ti, hi, wi], [kt, kh, kw])?;
    Ok(ConvDims {
        n,
        cin,
        cout,
        input: [ti, hi, wi],
        kernel: [kt, kh, kw],
        output,
    })
}

/// Strided matrix view: base offset plus row and column strides.
#[derive(Clone, Copy)]
struct View {
    off: usize,
    rs: usize,
    cs: usize,
}

impl View {
    fn new(off: usize, rs: usize, cs: usize) -> Self {
        Self { off, rs, cs }
    }

    fn t(self) -> Self {
        Self {
            off: self.off,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// `c += a · b` for an `m×k` view of `a` and a `k×n` view of `b`.
#[allow(clippy::too_many_arguments)]
fn gemm_acc<T: Real>(m: usize, k: usize, n: usize, a: &[T], va: View, b: &[T], vb: View, c: &mut [T], vc: View) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    let last = |v: View, rows: usize, cols: usize| v.off + (rows - 1) * v.rs + (cols - 1) * v.cs;
    assert!(last(va, m, k) < a.len() && last(vb, k, n) < b.len() && last(vc, m, n) < c.len());
    // SAFETY: the asserts above bound every strided access, and `c` is a
    // unique borrow so it cannot alias `a` or `b`.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr().add(va.off),
            va.rs as isize,
            va.cs as isize,
            b.as_ptr().add(vb.off),
            vb.rs as isize,
            vb.cs as isize,
            T::one(),
            c.as_mut_ptr().add(vc.off),
            vc.rs as isize,
            vc.cs as isize,
        );
    }
}

impl ConvDims {
    /// True when every kernel tap maps a whole input frame onto a whole
    /// output frame, so frames can be used as GEMM operands in place.
    fn frame_aligned(&self, geom: &ConvGeometry) -> bool {
        self.kernel[1] == 1
            && self.kernel[2] == 1
            && geom.stride[1] == 1
            && geom.stride[2] == 1
            && geom.padding[1] == 0
            && geom.padding[2] == 0
    }

    fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    fn frame_out(&self) -> usize {
        self.output[1] * self.output[2]
    }
}

/// Unfold the receptive fields of output frame `t` of one sample into
/// `col`, laid out `[Cin·kt·kh·kw, Ho·Wo]`. Out-of-range taps read zero.
fn im2col<T: Real>(x: &[T], d: &ConvDims, geom: &ConvGeometry, t: usize, col: &mut [T]) {
    let [ti, hi, wi] = d.input;
    let [kt, kh, kw] = d.kernel;
    let [_, ho, wo] = d.output;
    let [st, sh, sw] = geom.stride;
    let [pt, ph, pw] = geom.padding;
    let p = ho * wo;
    col.fill(T::zero());
    for ci in 0..d.cin {
        for dt in 0..kt {
            let tin = (t * st + dt) as isize - pt as isize;
            if tin < 0 || tin as usize >= ti {
                continue;
            }
            let frame = &x[(ci * ti + tin as usize) * hi * wi..][..hi * wi];
            for dh in 0..kh {
                let (h_lo, h_hi) = valid_range(ho, hi, dh, sh, ph);
                for dw in 0..kw {
                    let (w_lo, w_hi) = valid_range(wo, wi, dw, sw, pw);
                    let row = ((ci * kt + dt) * kh + dh) * kw + dw;
                    let dst = &mut col[row * p..][..p];
                    for h in h_lo..h_hi {
                        let src = &frame[(h * sh + dh - ph) * wi..][..wi];
                        let out = &mut dst[h * wo..][..wo];
                        if sw == 1 {
                            let s = w_lo + dw - pw;
                            out[w_lo..w_hi].copy_from_slice(&src[s..s + (w_hi - w_lo)]);
                        } else {
                            for j in w_lo..w_hi {
                                out[j] = src[j * sw + dw - pw];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add the inverse of [`im2col`] into one sample's input gradient.
fn col2im<T: Real>(col: &[T], d: &ConvDims, geom: &ConvGeometry, t: usize, gx: &mut [T]) {
    let [ti, hi, wi] = d.input;
    let [kt, kh, kw] = d.kernel;
    let [_, ho, wo] = d.output;
    let [st, sh, sw] = geom.stride;
    let [pt, ph, pw] = geom.padding;
    let p = ho * wo;
    for ci in 0..d.cin {
        for dt in 0..kt {
            let tin = (t * st + dt) as isize - pt as isize;
            if tin < 0 || tin as usize >= ti {
                continue;
            }
            let frame = &mut gx[(ci * ti + tin as usize) * hi * wi..][..hi * wi];
            for dh in 0..kh {
                let (h_lo, h_hi) = valid_range(ho, hi, dh, sh, ph);
                for dw in 0..kw {
                    let (w_lo, w_hi) = valid_range(wo, wi, dw, sw, pw);
                    let row = ((ci * kt + dt) * kh + dh) * kw + dw;
                    let srcrow = &col[row * p..][..p];
                    for h in h_lo..h_hi {
                        let dst = &mut frame[(h * sh + dh - ph) * wi..][..wi];
                        let src = &srcrow[h * wo..][..wo];
                        if sw == 1 {
                            let s = w_lo + dw - pw;
                            for (o, &v) in dst[s..s + (w_hi - w_lo)].iter_mut().zip(&src[w_lo..w_hi]) {
                                *o += v;
                            }
                        } else {
                            for j in w_lo..w_hi {
                                dst[j * sw + dw - pw] += src[j];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Input frames feeding output frame `t`, as `(tap, input frame)` pairs.
fn temporal_taps(d: &ConvDims, geom: &ConvGeometry, t: usize) -> impl Iterator<Item = (usize, usize)> {
    let (st, pt, ti) = (geom.stride[0], geom.padding[0], d.input[0]);
    (0..d.kernel[0]).filter_map(move |dt| {
        let tin = (t * st + dt) as isize - pt as isize;
        (tin >= 0 && (tin as usize) < ti).then_some((dt, tin as usize))
    })
}

/// 3-D cross-correlation with zero padding. `x` is `[N,Cin,T,H,W]`,
/// `w` is `[Cout,Cin,kt,kh,kw]`.
pub fn conv3d_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, geom: &ConvGeometry) -> Result<Tensor<T>> {
    let d = conv_dims(x.shape(), w, geom)?;
    let [ti, hi, wi] = d.input;
    let to = d.output[0];
    let (p, taps) = (d.frame_out(), d.taps());
    let kdim = d.cin * taps;
    let (sample_in, sample_out) = (d.cin * ti * hi * wi, d.cout * to * p);
    let aligned = d.frame_aligned(geom);
    let wd = w.data();

    let mut out = vec![T::zero(); d.n * sample_out];
    out.par_chunks_mut(sample_out)
        .zip(x.data().par_chunks(sample_in))
        .for_each(|(o, xs)| {
            let mut col = if aligned { Vec::new() } else { vec![T::zero(); kdim * p] };
            for t in 0..to {
                let vc = View::new(t * p, to * p, 1);
                if aligned {
                    for (dt, tin) in temporal_taps(&d, geom, t) {
                        let vw = View::new(dt, kdim, taps);
                        let vx = View::new(tin * p, ti * p, 1);
                        gemm_acc(d.cout, d.cin, p, wd, vw, xs, vx, o, vc);
                    }
                } else {
                    im2col(xs, &d, geom, t, &mut col);
                    gemm_acc(
                        d.cout,
                        kdim,
                        p,
                        wd,
                        View::new(0, kdim, 1),
                        &col,
                        View::new(0, p, 1),
                        o,
                        vc,
                    );
                }
            }
        });
    Tensor::from_vec(vec![d.n, d.cout, to, d.output[1], d.output[2]], out)
}

/// Gradient of [`conv3d_forward`] with respect to its input.
pub fn conv3d_backward_input<T: Real>(
    grad_out: &Tensor<T>,
    input_shape: &[usize],
    w: &Tensor<T>,
    geom: &ConvGeometry,
) -> Result<Tensor<T>> {
    let d = conv_dims(input_shape, w, geom)?;
    let [ti, hi, wi] = d.input;
    let to = d.output[0];
    let (p, taps) = (d.frame_out(), d.taps());
    let kdim = d.cin * taps;
    let (sample_in, sample_out) = (d.cin * ti * hi * wi, d.cout * to * p);
    if grad_out.shape() != [d.n, d.cout, to, d.output[1], d.output[2]] {
        return Err(Error::Shape(format!(
            "output gradient {:?} does not match convolution output",
            grad_out.shape()
        )));
    }
    let aligned = d.frame_aligned(geom);
    let wd = w.data();

    let mut gx = vec![T::zero(); d.n * sample_in];
    gx.par_chunks_mut(sample_in)
        .zip(grad_out.data().par_chunks(sample_out))
        .for_each(|(gxs, gs)| {
            let mut col = if aligned { Vec::new() } else { vec![T::zero(); kdim * p] };
            for t in 0..to {
                let vg = View::new(t * p, to * p, 1);
                if aligned {
                    for (dt, tin) in temporal_taps(&d, geom, t) {
                        let vw = View::new(dt, kdim, taps).t();
                        let vx = View::new(tin * p, ti * p, 1);
                        gemm_acc(d.cin, d.cout, p, wd, vw, gs, vg, gxs, vx);
                    }
                } else {
                    col.fill(T::zero());
                    gemm_acc(
                        kdim,
                        d.cout,
                        p,
                        wd,
                        View::new(0, kdim, 1).t(),
                        gs,
                        vg,
                        &mut col,
                        View::new(0, p, 1),
                    );
                    col2im(&col, &d, geom, t, gxs);
                }
            }
        });
    Tensor::from_vec(input_shape.to_vec(), gx)
}

/// Gradient of [`conv3d_forward`] with respect to its weight.
///
/// Per-sample partial sums are reduced in sample order.
pub fn conv3d_backward_weight<T: Real>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    w_shape: &[usize],
    geom: &ConvGeometry,
) -> Result<Tensor<T>> {
    let probe = Tensor::<T>::zeros(w_shape);
    let d = conv_dims(x.shape(), &probe, geom)?;
    let [ti, hi, wi] = d.input;
    let to = d.output[0];
    let (p, taps) = (d.frame_out(), d.taps());
    let kdim = d.cin * taps;
    let (sample_in, sample_out) = (d.cin * ti * hi * wi, d.cout * to * p);
    if grad_out.shape() != [d.n, d.cout, to, d.output[1], d.output[2]] {
        return Err(Error::Shape(format!(
            "output gradient {:?} does not match convolution output",
            grad_out.shape()
        )));
    }
    let aligned = d.frame_aligned(geom);

    let partials: Vec<Vec<T>> = grad_out
        .data()
        .par_chunks(sample_out)
        .zip(x.data().par_chunks(sample_in))
        .map(|(gs, xs)| {
            let mut gw = vec![T::zero(); d.cout * kdim];
            let mut col = if aligned { Vec::new() } else { vec![T::zero(); kdim * p] };
            for t in 0..to {
                let vg = View::new(t * p, to * p, 1);
                if aligned {
                    for (dt, tin) in temporal_taps(&d, geom, t) {
                        let vx = View::new(tin * p, ti * p, 1).t();
                        gemm_acc(d.cout, p, d.cin, gs, vg, xs, vx, &mut gw, View::new(dt, kdim, taps));
                    }
                } else {
                    im2col(xs, &d, geom, t, &mut col);
                    gemm_acc(
                        d.cout,
                        p,
                        kdim,
                        gs,
                        vg,
                        &col,
                        View::new(0, p, 1).t(),
                        &mut gw,
                        View::new(0, kdim, 1),
                    );
                }
            }
            gw
        })
        .collect();
    let mut gw = vec![T::zero(); d.cout * kdim];
    for part in partials {
        axpy(T::one(), &part, &mut gw);
    }
    Tensor::from_vec(w_shape.to_vec(), gw)
}

/// Per-channel mean and biased variance over N,T,H,W, accumulated in f64.
pub fn channel_stats<T: Real>(x: &Tensor<T>) -> Result<(Vec<f64>, Vec<f64>)> {
    let [n, c, t, h, w] = dims5(x, "batch-norm input")?;
    let plane = t * h * w;
    let count = (n * plane) as f64;
    let xd = x.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            s += xd[(b * c + ch) * plane..][..plane]
                .iter()
                .map(|v| v.as_f64())
                .sum::<f64>();
        }
        let m = s / count;
        let mut ss = 0.0;
        for b in 0..n {
            ss += xd[(b * c + ch) * plane..][..plane]
                .iter()
                .map(|v| {
                    let d = v.as_f64() - m;
                    d * d
                })
                .sum::<f64>();
        }
        mean[ch] = m;
        var[ch] = ss / count;
    }
    Ok((mean, var))
}

/// Apply `y = x * scale[c] + shift[c]` per channel of a rank-5 tensor.
pub fn channel_affine<T: Real>(x: &Tensor<T>, scale: &[T], shift: &[T]) -> Result<Tensor<T>> {
    let [_, c, t, h, w] = dims5(x, "channel affine input")?;
    if scale.len() != c || shift.len() != c {
        return Err(Error::Shape(format!(
            "input has {c} channels, norm parameters have {}",
            scale.len()
        )));
    }
    let plane = t * h * w;
    let mut out = x.clone();
    out.data_mut().chunks_mut(plane).enumerate().for_each(|(i, p)| {
        let (s, b) = (scale[i % c], shift[i % c]);
        for v in p {
            *v = *v * s + b;
        }
    });
    Ok(out)
}

/// Sum of `g` and of `g * x` per channel.
pub fn channel_sums<T: Real>(g: &Tensor<T>, x: Option<&Tensor<T>>) -> (Vec<T>, Vec<T>) {
    let s = g.shape();
    let (c, plane) = (s[1], s[2] * s[3] * s[4]);
    let mut sum_g = vec![T::zero(); c];
    let mut sum_gx = vec![T::zero(); c];
    for (i, gp) in g.data().chunks(plane).enumerate() {
        let ch = i % c;
        sum_g[ch] += gp.iter().copied().sum::<T>();
        if let Some(x) = x {
            sum_gx[ch] += dot(gp, &x.data()[i * plane..][..plane]);
        }
    }
    (sum_g, sum_gx)
}

pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, t, h, w] = dims5(x, "pooling input")?;
    let plane = t * h * w;
    let inv = T::lit(1.0 / plane as f64);
    let data = x
        .data()
        .chunks(plane)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::from_vec(vec![n, c], data)
}

pub fn global_avg_pool_backward<T: Real>(g: &Tensor<T>, input_shape: &[usize]) -> Result<Tensor<T>> {
    let plane: usize = input_shape[2..].iter().product();
    let inv = T::lit(1.0 / plane as f64);
    let mut data = Vec::with_capacity(g.numel() * plane);
    for &gv in g.data() {
        data.extend(std::iter::repeat_n(gv * inv, plane));
    }
    Tensor::from_vec(input_shape.to_vec(), data)
}

/// `y = x Wᵀ + b` for `x: [N,D]`, `w: [K,D]`, `b: [K]`.
pub fn affine<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, d] = dims2(x, "affine input")?;
    let [k, dw] = dims2(w, "affine weight")?;
    if d != dw || b.shape() != [k] {
        return Err(Error::Shape(format!(
            "affine input {:?}, weight {:?}, bias {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let mut out = Vec::with_capacity(n * k);
    for row in x.data().chunks(d) {
        for (wr, &bv) in w.data().chunks(d).zip(b.data()) {
            out.push(dot(row, wr) + bv);
        }
    }
    Tensor::from_vec(vec![n, k], out)
}

/// Gradients of [`affine`] with respect to `(x, w, b)`.
pub fn affine_backward<T: Real>(g: &Tensor<T>, x: &Tensor<T>, w: &Tensor<T>) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let k = w.shape()[0];
    let gd = g.data();
    let mut gx = vec![T::zero(); n * d];
    let mut gw = vec![T::zero(); k * d];
    let mut gb = vec![T::zero(); k];
    for i in 0..n {
        let xr = &x.data()[i * d..][..d];
        for j in 0..k {
            let gv = gd[i * k + j];
            axpy(gv, &w.data()[j * d..][..d], &mut gx[i * d..][..d]);
            axpy(gv, xr, &mut gw[j * d..][..d]);
            gb[j] += gv;
        }
    }
    (
        Tensor::from_vec(vec![n, d], gx).unwrap(),
        Tensor::from_vec(vec![k, d], gw).unwrap(),
        Tensor::from_vec(vec![k], gb).unwrap(),
    )
}

/// Mean softmax cross-entropy and the row-wise softmax probabilities.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let [n, k] = dims2(logits, "logits")?;
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} logit rows but {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label: bad, classes: k });
    }
    let mut probs = Vec::with_capacity(n * k);
    let mut total = T::zero();
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|&v| (v - m).exp()).sum();
        let lse = m + z.ln();
        total += lse - row[label];
        probs.extend(row.iter().map(|&v| (v - lse).exp()));
    }
    Ok((total / T::lit(n as f64), Tensor::from_vec(vec![n, k], probs)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_bruteforce() {
        for out in 1..6 {
            for input in 1..8 {
                for k in 0..4 {
                    for stride in 1..4 {
                        for pad in 0..3 {
                            let expected: Vec<usize> = (0..out)
                                .filter(|&j| {
                                    let s = (j * stride + k) as isize - pad as isize;
                                    s >= 0 && (s as usize) < input
                                })
                                .collect();
                            let (lo, hi) = valid_range(out, input, k, stride, pad);
                            let got: Vec<usize> = (lo..hi).collect();
                            assert_eq!(got, expected, "out={out} in={input} k={k} s={stride} p={pad}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn dot_handles_tails() {
        let a: Vec<f64> = (0..13).map(|v| v as f64).collect();
        let b = vec![1.0; 13];
        assert_eq!(dot(&a, &b), 78.0);
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor::<f64>::zeros(&[2, 3]);
        let (loss, probs) = softmax_cross_entropy(&logits, &[0, 2]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        assert!(probs.data().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn large_margin_logit_gives_zero_loss() {
        let logits = Tensor::<f32>::from_vec(vec![1, 3], vec![1000.0, 0.0, 0.0]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss.abs() < 1e-6);
    }

    #[test]
    fn label_out_of_range_rejected() {
        let logits = Tensor::<f32>::zeros(&[1, 3]);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }
}
