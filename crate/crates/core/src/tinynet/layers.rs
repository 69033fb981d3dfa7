//! Channel-major tensors and the layer primitives of the network, each with
//! its adjoint.

/// `C x H x W` tensor, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    #[inline]
    pub fn plane(&self, ch: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[ch * n..(ch + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, ch: usize) -> &mut [f64] {
        let n = self.h * self.w;
        &mut self.data[ch * n..(ch + 1) * n]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn added(&self, other: &Tensor) -> Tensor {
        let mut out = self.clone();
        out.add_assign(other);
        out
    }

    /// Pixel-major (`H x W x C`) copy.
    pub fn to_pixel_major(&self) -> Vec<f64> {
        let n = self.h * self.w;
        let mut out = vec![0.0; n * self.c];
        for ch in 0..self.c {
            for (i, &v) in self.plane(ch).iter().enumerate() {
                out[i * self.c + ch] = v;
            }
        }
        out
    }

    pub fn from_pixel_major(c: usize, h: usize, w: usize, values: &[f64]) -> Tensor {
        assert_eq!(values.len(), c * h * w);
        let mut t = Tensor::zeros(c, h, w);
        let n = h * w;
        for i in 0..n {
            for ch in 0..c {
                t.data[ch * n + i] = values[i * c + ch];
            }
        }
        t
    }
}

/// Square convolution with zero padding `(k - 1) / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn pad(&self) -> usize {
        (self.k - 1) / 2
    }

    pub fn weight_len(&self) -> usize {
        self.out_c * self.in_c * self.k * self.k
    }

    pub fn fan_in(&self) -> usize {
        self.in_c * self.k * self.k
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.pad();
        (
            (h + 2 * p - self.k) / self.stride + 1,
            (w + 2 * p - self.k) / self.stride + 1,
        )
    }

    /// Output columns `ox` whose input column `ox*s + kx - p` is inside `[0, w)`.
    #[inline]
    fn valid_range(&self, kx: usize, in_len: usize, out_len: usize) -> (usize, usize) {
        let p = self.pad();
        let s = self.stride;
        let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
        // ox*s + kx - p <= in_len - 1
        let hi = if in_len + p > kx {
            ((in_len - 1 + p - kx) / s + 1).min(out_len)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

/// Patch matrix with one row per `(in_channel, ky, kx)` tap and one column
/// per output pixel; padded taps are zero.
fn im2col(input: &Tensor, shape: ConvShape, oh: usize, ow: usize) -> Vec<f64> {
    let (k, s, p) = (shape.k, shape.stride, shape.pad());
    let n = oh * ow;
    let mut col = vec![0.0; shape.fan_in() * n];
    for i in 0..shape.in_c {
        let plane = input.plane(i);
        for ky in 0..k {
            let (oy0, oy1) = shape.valid_range(ky, input.h, oh);
            for kx in 0..k {
                let (ox0, ox1) = shape.valid_range(kx, input.w, ow);
                let row = &mut col[((i * k + ky) * k + kx) * n..][..n];
                for oy in oy0..oy1 {
                    let iy = oy * s + ky - p;
                    let src = &plane[iy * input.w..(iy + 1) * input.w];
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if s == 1 {
                        let off = ox0 + kx - p;
                        dst[ox0..ox1].copy_from_slice(&src[off..off + (ox1 - ox0)]);
                    } else {
                        for ox in ox0..ox1 {
                            dst[ox] = src[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`], accumulated into `grad_in`.
fn col2im(col: &[f64], shape: ConvShape, oh: usize, ow: usize, grad_in: &mut Tensor) {
    let (k, s, p) = (shape.k, shape.stride, shape.pad());
    let n = oh * ow;
    let (h, w) = (grad_in.h, grad_in.w);
    for i in 0..shape.in_c {
        let plane = grad_in.plane_mut(i);
        for ky in 0..k {
            let (oy0, oy1) = shape.valid_range(ky, h, oh);
            for kx in 0..k {
                let (ox0, ox1) = shape.valid_range(kx, w, ow);
                let row = &col[((i * k + ky) * k + kx) * n..][..n];
                for oy in oy0..oy1 {
                    let iy = oy * s + ky - p;
                    let dst = &mut plane[iy * w..(iy + 1) * w];
                    let src = &row[oy * ow..(oy + 1) * ow];
                    if s == 1 {
                        let off = ox0 + kx - p;
                        for (d, &g) in dst[off..off + (ox1 - ox0)].iter_mut().zip(&src[ox0..ox1]) {
                            *d += g;
                        }
                    } else {
                        for ox in ox0..ox1 {
                            dst[ox * s + kx - p] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with four independent partial sums so it vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn is_pointwise(shape: ConvShape) -> bool {
    shape.k == 1 && shape.stride == 1
}

pub fn conv_forward(input: &Tensor, weight: &[f64], bias: &[f64], shape: ConvShape) -> Tensor {
    assert_eq!(input.c, shape.in_c);
    let (oh, ow) = shape.out_size(input.h, input.w);
    let n = oh * ow;
    let col_buf;
    let col: &[f64] = if is_pointwise(shape) {
        &input.data
    } else {
        col_buf = im2col(input, shape, oh, ow);
        &col_buf
    };
    let taps = shape.fan_in();
    let mut out = Tensor::zeros(shape.out_c, oh, ow);
    for o in 0..shape.out_c {
        let dst = out.plane_mut(o);
        dst.fill(bias[o]);
        for (r, &wv) in weight[o * taps..(o + 1) * taps].iter().enumerate() {
            axpy(dst, wv, &col[r * n..(r + 1) * n]);
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when asked.
pub fn conv_backward(
    input: &Tensor,
    grad_out: &Tensor,
    weight: &[f64],
    shape: ConvShape,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    want_input_grad: bool,
) -> Option<Tensor> {
    let (oh, ow) = (grad_out.h, grad_out.w);
    let n = oh * ow;
    let taps = shape.fan_in();
    let col_buf;
    let col: &[f64] = if is_pointwise(shape) {
        &input.data
    } else {
        col_buf = im2col(input, shape, oh, ow);
        &col_buf
    };
    let mut grad_col = want_input_grad.then(|| vec![0.0; taps * n]);
    for o in 0..shape.out_c {
        let g = grad_out.plane(o);
        grad_b[o] += g.iter().sum::<f64>();
        for r in 0..taps {
            grad_w[o * taps + r] += dot(g, &col[r * n..(r + 1) * n]);
            if let Some(gc) = grad_col.as_mut() {
                axpy(&mut gc[r * n..(r + 1) * n], weight[o * taps + r], g);
            }
        }
    }
    grad_col.map(|gc| {
        if is_pointwise(shape) {
            Tensor {
                c: input.c,
                h: input.h,
                w: input.w,
                data: gc,
            }
        } else {
            let mut gi = Tensor::zeros(input.c, input.h, input.w);
            col2im(&gc, shape, oh, ow, &mut gi);
            gi
        }
    })
}

pub fn relu_in_place(t: &mut Tensor) {
    for v in &mut t.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `grad` wherever the ReLU output was not positive.
pub fn relu_backward_in_place(output: &Tensor, grad: &mut Tensor) {
    for (g, &y) in grad.data.iter_mut().zip(&output.data) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Source index pair and weight of the second sample, per output coordinate,
/// for half-pixel-centered bilinear resampling.
fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn upsample_bilinear(input: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let ty = bilinear_taps(input.h, out_h);
    let tx = bilinear_taps(input.w, out_w);
    let mut out = Tensor::zeros(input.c, out_h, out_w);
    for ch in 0..input.c {
        let src = input.plane(ch);
        let dst = out.plane_mut(ch);
        for (y, &(y0, y1, ly)) in ty.iter().enumerate() {
            let r0 = &src[y0 * input.w..(y0 + 1) * input.w];
            let r1 = &src[y1 * input.w..(y1 + 1) * input.w];
            for (x, &(x0, x1, lx)) in tx.iter().enumerate() {
                let top = r0[x0] * (1.0 - lx) + r0[x1] * lx;
                let bot = r1[x0] * (1.0 - lx) + r1[x1] * lx;
                dst[y * out_w + x] = top * (1.0 - ly) + bot * ly;
            }
        }
    }
    out
}

/// Adjoint of [`upsample_bilinear`].
pub fn upsample_bilinear_backward(grad_out: &Tensor, in_h: usize, in_w: usize) -> Tensor {
    let ty = bilinear_taps(in_h, grad_out.h);
    let tx = bilinear_taps(in_w, grad_out.w);
    let mut grad_in = Tensor::zeros(grad_out.c, in_h, in_w);
    for ch in 0..grad_out.c {
        let g = grad_out.plane(ch);
        let dst = grad_in.plane_mut(ch);
        for (y, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (x, &(x0, x1, lx)) in tx.iter().enumerate() {
                let v = g[y * grad_out.w + x];
                dst[y0 * in_w + x0] += v * (1.0 - ly) * (1.0 - lx);
                dst[y0 * in_w + x1] += v * (1.0 - ly) * lx;
                dst[y1 * in_w + x0] += v * ly * (1.0 - lx);
                dst[y1 * in_w + x1] += v * ly * lx;
            }
        }
    }
    grad_in
}
