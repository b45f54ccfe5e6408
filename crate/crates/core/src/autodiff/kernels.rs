//! Slice-level forward and backward kernels shared by the tape and the
//! eager backend.

use crate::scalar::Scalar;

/// `[m,k] x [k,n] -> [m,n]`
pub fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `g [m,n] x b^T [n,k] -> [m,k]`
pub fn matmul_grad_a<S: Scalar>(g: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = S::zero();
            for (&gv, &bv) in grow.iter().zip(brow) {
                acc += gv * bv;
            }
            out[i * k + p] = acc;
        }
    }
    out
}

/// `a^T [k,m] x g [m,n] -> [k,n]`
pub fn matmul_grad_b<S: Scalar>(g: &[S], a: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

/// Contiguous single-channel runs of a `[rows, channels * plane]` buffer,
/// paired with their channel.
#[inline]
fn planes<S>(x: &[S], channels: usize, cols: usize) -> impl Iterator<Item = (usize, &[S])> {
    let plane = (cols / channels).max(1);
    x.chunks(plane)
        .enumerate()
        .map(move |(k, run)| (k % channels, run))
}

#[inline]
fn planes_mut<S>(
    x: &mut [S],
    channels: usize,
    cols: usize,
) -> impl Iterator<Item = (usize, &mut [S])> {
    let plane = (cols / channels).max(1);
    x.chunks_mut(plane)
        .enumerate()
        .map(move |(k, run)| (k % channels, run))
}

pub fn add_bias<S: Scalar>(x: &[S], bias: &[S], cols: usize) -> Vec<S> {
    let mut out = x.to_vec();
    for (c, run) in planes_mut(&mut out, bias.len(), cols) {
        run.iter_mut().for_each(|v| *v += bias[c]);
    }
    out
}

pub fn bias_grad<S: Scalar>(g: &[S], channels: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); channels];
    for (c, run) in planes(g, channels, cols) {
        out[c] += run.iter().copied().sum::<S>();
    }
    out
}

/// Geometry of a stride-1, same-padded 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
}

impl ConvGeom {
    pub fn in_cols(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    pub fn out_cols(&self) -> usize {
        self.out_channels * self.height * self.width
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    fn pad(&self) -> isize {
        (self.kernel / 2) as isize
    }
}

/// A contiguous run of pixels read by one kernel tap: `len` values of input
/// channel data starting at `input` land in row `tap` of the column matrix
/// starting at pixel `pixel`.
#[derive(Clone, Copy)]
struct Span {
    tap: usize,
    pixel: usize,
    input: usize,
    len: usize,
}

/// Column-matrix layout of one image: row `(ci, dy, dx)`, one column per
/// output pixel. Taps that fall in the zero padding have no span.
fn conv_spans(g: &ConvGeom) -> Vec<Span> {
    let (h, w, k) = (g.height as isize, g.width as isize, g.kernel as isize);
    let pad = g.pad();
    let mut spans = Vec::new();
    for ci in 0..g.in_channels {
        for dy in 0..k {
            for dx in 0..k {
                let tap = (ci * g.kernel + dy as usize) * g.kernel + dx as usize;
                let x0 = (pad - dx).max(0);
                let x1 = (w + pad - dx).min(w);
                if x1 <= x0 {
                    continue;
                }
                for y in 0..h {
                    let sy = y + dy - pad;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    spans.push(Span {
                        tap,
                        pixel: y as usize * g.width + x0 as usize,
                        input: (ci * g.height + sy as usize) * g.width + (x0 + dx - pad) as usize,
                        len: (x1 - x0) as usize,
                    });
                }
            }
        }
    }
    spans
}

fn im2col<S: Scalar>(img: &[S], spans: &[Span], taps: usize, plane: usize, col: &mut Vec<S>) {
    col.clear();
    col.resize(taps * plane, S::zero());
    for s in spans {
        let at = s.tap * plane + s.pixel;
        col[at..at + s.len].copy_from_slice(&img[s.input..s.input + s.len]);
    }
}

fn taps(g: &ConvGeom) -> usize {
    g.in_channels * g.kernel * g.kernel
}

pub fn conv2d<S: Scalar>(x: &[S], weight: &[S], rows: usize, g: &ConvGeom) -> Vec<S> {
    let (ic, oc) = (g.in_cols(), g.out_cols());
    let plane = g.height * g.width;
    let kk = taps(g);
    let spans = conv_spans(g);
    let mut col = Vec::new();
    let mut out = Vec::with_capacity(rows * oc);
    for r in 0..rows {
        im2col(&x[r * ic..(r + 1) * ic], &spans, kk, plane, &mut col);
        out.extend(matmul(weight, &col, g.out_channels, kk, plane));
    }
    out
}

pub fn conv2d_grad_input<S: Scalar>(gout: &[S], weight: &[S], rows: usize, g: &ConvGeom) -> Vec<S> {
    let (ic, oc) = (g.in_cols(), g.out_cols());
    let plane = g.height * g.width;
    let kk = taps(g);
    let spans = conv_spans(g);
    let mut out = vec![S::zero(); rows * ic];
    for r in 0..rows {
        let gcol = matmul_grad_b(
            &gout[r * oc..(r + 1) * oc],
            weight,
            g.out_channels,
            kk,
            plane,
        );
        let gi = &mut out[r * ic..(r + 1) * ic];
        for s in &spans {
            let at = s.tap * plane + s.pixel;
            for (d, &v) in gi[s.input..s.input + s.len]
                .iter_mut()
                .zip(&gcol[at..at + s.len])
            {
                *d += v;
            }
        }
    }
    out
}

pub fn conv2d_grad_weight<S: Scalar>(gout: &[S], x: &[S], rows: usize, g: &ConvGeom) -> Vec<S> {
    let (ic, oc) = (g.in_cols(), g.out_cols());
    let plane = g.height * g.width;
    let kk = taps(g);
    let spans = conv_spans(g);
    let mut col = Vec::new();
    let mut out = vec![S::zero(); g.weight_len()];
    for r in 0..rows {
        im2col(&x[r * ic..(r + 1) * ic], &spans, kk, plane, &mut col);
        let gw = matmul_grad_a(&gout[r * oc..(r + 1) * oc], &col, g.out_channels, kk, plane);
        for (o, v) in out.iter_mut().zip(gw) {
            *o += v;
        }
    }
    out
}

/// Per-channel mean and biased variance over rows and spatial positions.
pub fn channel_moments<S: Scalar>(x: &[S], rows: usize, channels: usize) -> (Vec<S>, Vec<S>) {
    let cols = x.len() / rows;
    let plane = cols / channels;
    let count = S::of_usize(rows * plane);
    let mut mean = vec![S::zero(); channels];
    for (c, run) in planes(x, channels, cols) {
        mean[c] += run.iter().copied().sum::<S>();
    }
    for m in &mut mean {
        *m /= count;
    }
    let mut var = vec![S::zero(); channels];
    for (c, run) in planes(x, channels, cols) {
        let m = mean[c];
        var[c] += run.iter().map(|&v| (v - m) * (v - m)).sum::<S>();
    }
    for v in &mut var {
        *v /= count;
    }
    (mean, var)
}

/// `(x - mean) / sqrt(var + eps)` per channel; returns normalized values and
/// the inverse standard deviations.
pub fn standardize<S: Scalar>(
    x: &[S],
    rows: usize,
    mean: &[S],
    var: &[S],
    eps: S,
) -> (Vec<S>, Vec<S>) {
    let cols = x.len() / rows;
    let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
    let mut xhat = x.to_vec();
    for (c, run) in planes_mut(&mut xhat, mean.len(), cols) {
        let (m, s) = (mean[c], inv_std[c]);
        run.iter_mut().for_each(|v| *v = (*v - m) * s);
    }
    (xhat, inv_std)
}

pub fn scale_shift<S: Scalar>(xhat: &[S], gamma: &[S], beta: &[S], cols: usize) -> Vec<S> {
    let mut out = xhat.to_vec();
    for (c, run) in planes_mut(&mut out, gamma.len(), cols) {
        let (g, b) = (gamma[c], beta[c]);
        run.iter_mut().for_each(|v| *v = g * *v + b);
    }
    out
}

/// Returns `(dgamma, dbeta)` for `y = gamma * xhat + beta`.
pub fn scale_shift_grads<S: Scalar>(
    g: &[S],
    xhat: &[S],
    channels: usize,
    cols: usize,
) -> (Vec<S>, Vec<S>) {
    let mut dgamma = vec![S::zero(); channels];
    let mut dbeta = vec![S::zero(); channels];
    for ((c, gr), (_, xr)) in planes(g, channels, cols).zip(planes(xhat, channels, cols)) {
        dgamma[c] += gr.iter().zip(xr).map(|(&a, &b)| a * b).sum::<S>();
        dbeta[c] += gr.iter().copied().sum::<S>();
    }
    (dgamma, dbeta)
}

/// Input gradient of training-mode batch normalization.
pub fn batch_norm_grad_input<S: Scalar>(
    g: &[S],
    xhat: &[S],
    gamma: &[S],
    inv_std: &[S],
    rows: usize,
) -> Vec<S> {
    let channels = gamma.len();
    let cols = g.len() / rows;
    let plane = cols / channels;
    let m = S::of_usize(rows * plane);
    let mut sum_g = vec![S::zero(); channels];
    let mut sum_gx = vec![S::zero(); channels];
    for ((c, gr), (_, xr)) in planes(g, channels, cols).zip(planes(xhat, channels, cols)) {
        sum_g[c] += gr.iter().copied().sum::<S>();
        sum_gx[c] += gr.iter().zip(xr).map(|(&a, &b)| a * b).sum::<S>();
    }
    let mut out = g.to_vec();
    for ((c, run), (_, xr)) in
        planes_mut(&mut out, channels, cols).zip(planes(xhat, channels, cols))
    {
        let k = gamma[c] * inv_std[c] / m;
        let (sg, sgx) = (sum_g[c], sum_gx[c]);
        for (v, &xv) in run.iter_mut().zip(xr) {
            *v = k * (m * *v - sg - xv * sgx);
        }
    }
    out
}

pub fn channel_mean<S: Scalar>(x: &[S], rows: usize, channels: usize) -> Vec<S> {
    let cols = x.len() / rows;
    let plane = cols / channels;
    let denom = S::of_usize(plane);
    let mut out = vec![S::zero(); rows * channels];
    for (k, run) in x.chunks(plane.max(1)).enumerate() {
        out[k] += run.iter().copied().sum::<S>();
    }
    for v in &mut out {
        *v /= denom;
    }
    out
}

pub fn channel_mean_grad<S: Scalar>(g: &[S], rows: usize, channels: usize, cols: usize) -> Vec<S> {
    let plane = cols / channels;
    let denom = S::of_usize(plane);
    let mut out = vec![S::zero(); rows * cols];
    for (k, run) in out.chunks_mut(plane.max(1)).enumerate() {
        run.fill(g[k] / denom);
    }
    out
}

/// Row-wise log-softmax.
pub fn log_softmax_rows<S: Scalar>(z: &[S], cols: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(z.len());
    for row in z.chunks(cols) {
        let m = row.iter().copied().fold(S::neg_infinity(), S::max);
        let lse = row.iter().map(|&v| (v - m).exp()).sum::<S>().ln() + m;
        out.extend(row.iter().map(|&v| v - lse));
    }
    out
}
