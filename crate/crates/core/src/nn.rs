//! Minimal layer toolkit with explicit backward passes.
//!
//! Every network keeps its learnable values in one flat vector. Layers only
//! store offsets into that vector, so optimizers, checkpoints and
//! finite-difference checks all work on plain slices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug)]
enum Init {
    Uniform { bound: f64 },
    Zeros,
}

#[derive(Clone, Debug)]
struct Block {
    offset: usize,
    len: usize,
    init: Init,
}

/// Records the parameter blocks of a network while its layers are built.
#[derive(Clone, Debug, Default)]
pub struct ParamLayout {
    blocks: Vec<Block>,
    len: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    fn alloc(&mut self, len: usize, init: Init) -> usize {
        let offset = self.len;
        self.blocks.push(Block { offset, len, init });
        self.len += len;
        offset
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Draws initial values. Values are sampled in `f64` and then cast, so
    /// `f32` and `f64` networks built from the same seed agree up to rounding.
    pub fn init<T: Real>(&self, seed: u64) -> Vec<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = vec![T::zero(); self.len];
        for b in &self.blocks {
            if let Init::Uniform { bound } = b.init {
                for v in &mut out[b.offset..b.offset + b.len] {
                    *v = T::lit(rng.gen_range(-bound..=bound));
                }
            }
        }
        out
    }
}

/// Gain used for Kaiming-uniform initialisation in front of a leaky ReLU.
pub fn leaky_gain(slope: f64) -> f64 {
    (2.0 / (1.0 + slope * slope)).sqrt()
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
    w_off: usize,
    b_off: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        layout: &mut ParamLayout,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        dilation: usize,
        gain: f64,
    ) -> Self {
        let fan_in = (cin * kernel * kernel) as f64;
        let w_off = layout.alloc(cout * cin * kernel * kernel, Init::Uniform { bound: gain * (3.0 / fan_in).sqrt() });
        let b_off = layout.alloc(cout, Init::Zeros);
        Self { cin, cout, kernel, stride, pad, dilation, w_off, b_off }
    }

    /// Size-preserving 3x3 (or dilated 3x3) convolution.
    pub fn same3(layout: &mut ParamLayout, cin: usize, cout: usize, dilation: usize, gain: f64) -> Self {
        Self::new(layout, cin, cout, 3, 1, dilation, dilation, gain)
    }

    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.w_off..self.w_off + self.cout * self.patch_len()
    }

    fn patch_len(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let span = self.dilation * (self.kernel - 1) + 1;
        let oh = (h + 2 * self.pad - span) / self.stride + 1;
        let ow = (w + 2 * self.pad - span) / self.stride + 1;
        (oh, ow)
    }

    fn im2col<T: Real>(&self, x: &Tensor<T>, oh: usize, ow: usize) -> Vec<T> {
        let k = self.kernel;
        let p = oh * ow;
        let np = x.n * p;
        let mut col = vec![T::zero(); self.patch_len() * np];
        for ci in 0..self.cin {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst_row = &mut col[row * np..(row + 1) * np];
                    for b in 0..x.n {
                        let src = &x.data[(b * x.c + ci) * x.h * x.w..(b * x.c + ci + 1) * x.h * x.w];
                        let dst = &mut dst_row[b * p..(b + 1) * p];
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky * self.dilation) as isize - self.pad as isize;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            let src_row = &src[iy as usize * x.w..(iy as usize + 1) * x.w];
                            let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                            for (ox, d) in dst_row.iter_mut().enumerate() {
                                let ix = (ox * self.stride + kx * self.dilation) as isize - self.pad as isize;
                                if ix >= 0 && ix < x.w as isize {
                                    *d = src_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im<T: Real>(&self, col: &[T], n: usize, h: usize, w: usize, oh: usize, ow: usize) -> Tensor<T> {
        let k = self.kernel;
        let p = oh * ow;
        let np = n * p;
        let mut dx = Tensor::zeros(n, self.cin, h, w);
        for ci in 0..self.cin {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src_row = &col[row * np..(row + 1) * np];
                    for b in 0..n {
                        let dst = &mut dx.data[(b * self.cin + ci) * h * w..(b * self.cin + ci + 1) * h * w];
                        let src = &src_row[b * p..(b + 1) * p];
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky * self.dilation) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                            for ox in 0..ow {
                                let ix = (ox * self.stride + kx * self.dilation) as isize - self.pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    dst_row[ix as usize] = dst_row[ix as usize] + src[oy * ow + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward<T: Real>(&self, params: &[T], x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.cin, "conv input channels");
        let (oh, ow) = self.out_size(x.h, x.w);
        let p = oh * ow;
        let np = x.n * p;
        let kk = self.patch_len();
        let col = self.im2col(x, oh, ow);
        let mut tmp = vec![T::zero(); self.cout * np];
        let wts = &params[self.w_off..self.w_off + self.cout * kk];
        T::gemm(self.cout, kk, np, T::one(), wts, kk as isize, 1, &col, np as isize, 1, T::zero(), &mut tmp, np as isize, 1);
        let bias = &params[self.b_off..self.b_off + self.cout];
        let mut out = Tensor::zeros(x.n, self.cout, oh, ow);
        for b in 0..x.n {
            for co in 0..self.cout {
                let src = &tmp[co * np + b * p..co * np + (b + 1) * p];
                let dst = &mut out.data[(b * self.cout + co) * p..(b * self.cout + co + 1) * p];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s + bias[co];
                }
            }
        }
        out
    }

    /// Back-propagates `gy` (gradient w.r.t. this layer's output). Parameter
    /// gradients are accumulated into `grads` when given; the input gradient
    /// is returned when `need_dx` is set.
    pub fn backward<T: Real>(
        &self,
        params: &[T],
        x: &Tensor<T>,
        gy: &Tensor<T>,
        grads: Option<&mut [T]>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let (oh, ow) = self.out_size(x.h, x.w);
        assert_eq!(gy.shape(), [x.n, self.cout, oh, ow], "conv output gradient shape");
        let p = oh * ow;
        let np = x.n * p;
        let kk = self.patch_len();
        let mut gmat = vec![T::zero(); self.cout * np];
        for b in 0..x.n {
            for co in 0..self.cout {
                let src = &gy.data[(b * self.cout + co) * p..(b * self.cout + co + 1) * p];
                gmat[co * np + b * p..co * np + (b + 1) * p].copy_from_slice(src);
            }
        }
        if let Some(grads) = grads {
            let col = self.im2col(x, oh, ow);
            let dw = &mut grads[self.w_off..self.w_off + self.cout * kk];
            T::gemm(self.cout, np, kk, T::one(), &gmat, np as isize, 1, &col, 1, np as isize, T::one(), dw, kk as isize, 1);
            let db = &mut grads[self.b_off..self.b_off + self.cout];
            for co in 0..self.cout {
                db[co] = db[co] + gmat[co * np..(co + 1) * np].iter().fold(T::zero(), |a, &v| a + v);
            }
        }
        if !need_dx {
            return None;
        }
        let wts = &params[self.w_off..self.w_off + self.cout * kk];
        let mut dcol = vec![T::zero(); kk * np];
        T::gemm(kk, self.cout, np, T::one(), wts, 1, kk as isize, &gmat, np as isize, 1, T::zero(), &mut dcol, np as isize, 1);
        Some(self.col2im(&dcol, x.n, x.h, x.w, oh, ow))
    }
}

/// Fully connected layer on `[n, features]` rows.
#[derive(Clone, Debug)]
pub struct Linear {
    pub fin: usize,
    pub fout: usize,
    w_off: usize,
    b_off: usize,
}

impl Linear {
    pub fn new(layout: &mut ParamLayout, fin: usize, fout: usize, gain: f64) -> Self {
        let w_off = layout.alloc(fout * fin, Init::Uniform { bound: gain * (3.0 / fin as f64).sqrt() });
        let b_off = layout.alloc(fout, Init::Zeros);
        Self { fin, fout, w_off, b_off }
    }

    pub fn forward<T: Real>(&self, params: &[T], x: &[T], n: usize) -> Vec<T> {
        let w = &params[self.w_off..self.w_off + self.fout * self.fin];
        let b = &params[self.b_off..self.b_off + self.fout];
        let mut out = vec![T::zero(); n * self.fout];
        for i in 0..n {
            let row = &x[i * self.fin..(i + 1) * self.fin];
            for o in 0..self.fout {
                let wr = &w[o * self.fin..(o + 1) * self.fin];
                out[i * self.fout + o] = row.iter().zip(wr).fold(b[o], |a, (&xv, &wv)| a + xv * wv);
            }
        }
        out
    }

    pub fn backward<T: Real>(&self, params: &[T], x: &[T], gy: &[T], n: usize, grads: Option<&mut [T]>) -> Vec<T> {
        if let Some(grads) = grads {
            for i in 0..n {
                let row = &x[i * self.fin..(i + 1) * self.fin];
                for o in 0..self.fout {
                    let g = gy[i * self.fout + o];
                    let dw = &mut grads[self.w_off + o * self.fin..self.w_off + (o + 1) * self.fin];
                    for (d, &xv) in dw.iter_mut().zip(row) {
                        *d = *d + g * xv;
                    }
                    grads[self.b_off + o] = grads[self.b_off + o] + g;
                }
            }
        }
        let w = &params[self.w_off..self.w_off + self.fout * self.fin];
        let mut dx = vec![T::zero(); n * self.fin];
        for i in 0..n {
            for o in 0..self.fout {
                let g = gy[i * self.fout + o];
                let wr = &w[o * self.fin..(o + 1) * self.fin];
                for (d, &wv) in dx[i * self.fin..(i + 1) * self.fin].iter_mut().zip(wr) {
                    *d = *d + g * wv;
                }
            }
        }
        dx
    }
}

pub fn leaky_relu<T: Real>(x: &mut Tensor<T>, slope: T) {
    for v in &mut x.data {
        if *v < T::zero() {
            *v = *v * slope;
        }
    }
}

/// Masks `g` in place using the activation's output `y` (the sign of a
/// leaky/plain ReLU output equals the sign of its input).
pub fn leaky_relu_backward<T: Real>(y: &Tensor<T>, g: &mut Tensor<T>, slope: T) {
    for (gv, &yv) in g.data.iter_mut().zip(&y.data) {
        if yv <= T::zero() {
            *gv = *gv * slope;
        }
    }
}

pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Doubles the spatial size by pixel replication.
pub fn upsample_nearest2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.n, x.c, h, w);
    for plane in 0..x.n * x.c {
        let src = &x.data[plane * x.h * x.w..(plane + 1) * x.h * x.w];
        let dst = &mut out.data[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                dst[y * w + xx] = src[(y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample_nearest2_backward<T: Real>(g: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (g.h / 2, g.w / 2);
    let mut out = Tensor::zeros(g.n, g.c, h, w);
    for plane in 0..g.n * g.c {
        let src = &g.data[plane * g.h * g.w..(plane + 1) * g.h * g.w];
        let dst = &mut out.data[plane * h * w..(plane + 1) * h * w];
        for y in 0..g.h {
            for xx in 0..g.w {
                let d = &mut dst[(y / 2) * w + xx / 2];
                *d = *d + src[y * g.w + xx];
            }
        }
    }
    out
}

/// Source taps (index pairs and weights) for half-pixel-centred bilinear
/// resampling along one axis.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of every plane to `h x w`.
pub fn resize_bilinear<T: Real>(x: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let ty = bilinear_taps(x.h, h);
    let tx = bilinear_taps(x.w, w);
    let mut out = Tensor::zeros(x.n, x.c, h, w);
    for plane in 0..x.n * x.c {
        let src = &x.data[plane * x.h * x.w..(plane + 1) * x.h * x.w];
        let dst = &mut out.data[plane * h * w..(plane + 1) * h * w];
        for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::lit(fy);
            for (xx, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::lit(fx);
                let top = src[y0 * x.w + x0] * (T::one() - fx) + src[y0 * x.w + x1] * fx;
                let bot = src[y1 * x.w + x0] * (T::one() - fx) + src[y1 * x.w + x1] * fx;
                dst[y * w + xx] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
    out
}

pub fn resize_bilinear_backward<T: Real>(g: &Tensor<T>, src_h: usize, src_w: usize) -> Tensor<T> {
    let ty = bilinear_taps(src_h, g.h);
    let tx = bilinear_taps(src_w, g.w);
    let mut out = Tensor::zeros(g.n, g.c, src_h, src_w);
    for plane in 0..g.n * g.c {
        let src = &g.data[plane * g.h * g.w..(plane + 1) * g.h * g.w];
        let dst = &mut out.data[plane * src_h * src_w..(plane + 1) * src_h * src_w];
        for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::lit(fy);
            for (xx, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::lit(fx);
                let gv = src[y * g.w + xx];
                let top = gv * (T::one() - fy);
                let bot = gv * fy;
                dst[y0 * src_w + x0] = dst[y0 * src_w + x0] + top * (T::one() - fx);
                dst[y0 * src_w + x1] = dst[y0 * src_w + x1] + top * fx;
                dst[y1 * src_w + x0] = dst[y1 * src_w + x0] + bot * (T::one() - fx);
                dst[y1 * src_w + x1] = dst[y1 * src_w + x1] + bot * fx;
            }
        }
    }
    out
}

/// Channel-wise concatenation of two batches with equal spatial size.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert!(a.n == b.n && a.h == b.h && a.w == b.w, "concat spatial mismatch");
    let c = a.c + b.c;
    let mut out = Tensor::zeros(a.n, c, a.h, a.w);
    for i in 0..a.n {
        let dst = out.sample_mut(i);
        let (da, db) = dst.split_at_mut(a.sample_len());
        da.copy_from_slice(a.sample(i));
        db.copy_from_slice(b.sample(i));
    }
    out
}

/// Splits a gradient of a channel concatenation back into its two parts.
pub fn split_channels<T: Real>(g: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let cb = g.c - ca;
    let mut a = Tensor::zeros(g.n, ca, g.h, g.w);
    let mut b = Tensor::zeros(g.n, cb, g.h, g.w);
    let split = ca * g.h * g.w;
    for i in 0..g.n {
        let src = g.sample(i);
        a.sample_mut(i).copy_from_slice(&src[..split]);
        b.sample_mut(i).copy_from_slice(&src[split..]);
    }
    (a, b)
}
