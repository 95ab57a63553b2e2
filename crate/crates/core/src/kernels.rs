//! Numeric kernels: forward passes and their hand-derived backward passes.
//!
//! Every kernel is a pure function from tensors to tensors. The autodiff tape
//! records which kernel produced which node and calls the matching
//! `*_backward` during the reverse sweep. Pools, resizing and convolutions
//! treat the last two axes as spatial; token-space ops (layer norm, bias add,
//! linear projections) treat the last axis as channels.

use crate::error::{Error, Result};
use crate::tensor::{strides_of, Scalar, Tensor};

// ── Elementwise ───────────────────────────────────────────────────────

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "add requires equal shapes: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x + y)
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "mul requires equal shapes: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x * y)
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn scale<T: Scalar>(a: &Tensor<T>, c: T) -> Tensor<T> {
    a.map(|v| v * c)
}

/// Broadcast-add a rank-1 bias over the last axis.
pub fn add_bias<T: Scalar>(x: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let d = *x.shape().last().unwrap();
    if bias.rank() != 1 || bias.shape()[0] != d {
        return Err(Error::shape(format!(
            "bias shape {:?} does not match channel axis of {:?}",
            bias.shape(),
            x.shape()
        )));
    }
    let b = bias.data();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v + b[i % d])
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Gradient of `add_bias` w.r.t. the bias: sum over all leading positions.
pub fn add_bias_backward_bias<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let d = *dy.shape().last().unwrap();
    let mut g = vec![T::ZERO; d];
    for (i, &v) in dy.data().iter().enumerate() {
        g[i % d] += v;
    }
    Tensor::new(vec![d], g).expect("bias grad shape")
}

// ── GELU (exact Gaussian CDF form) ────────────────────────────────────

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.39894228040143267794; // 1/sqrt(2*pi)

fn gauss_cdf<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * (T::ONE + (x * T::from_f64(FRAC_1_SQRT_2)).erf())
}

pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v * gauss_cdf(v))
}

pub fn gelu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| {
            let pdf = T::from_f64((-0.5 * v.to_f64() * v.to_f64()).exp() * INV_SQRT_2PI);
            g * (gauss_cdf(v) + v * pdf)
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("gelu grad shape")
}

// ── Transpose / reductions ────────────────────────────────────────────

/// Swap two axes, materializing a contiguous result.
pub fn transpose<T: Scalar>(x: &Tensor<T>, a: usize, b: usize) -> Result<Tensor<T>> {
    let rank = x.rank();
    if a >= rank || b >= rank {
        return Err(Error::shape(format!(
            "transpose axes ({a}, {b}) out of range for shape {:?}",
            x.shape()
        )));
    }
    if a == b {
        return Ok(x.clone());
    }
    let mut out_shape = x.shape().to_vec();
    out_shape.swap(a, b);
    let out_strides = strides_of(&out_shape);
    let in_strides = x.strides();
    let src = x.data();
    let mut data = vec![T::ZERO; x.len()];
    for (lin, slot) in data.iter_mut().enumerate() {
        let mut rem = lin;
        let mut src_off = 0;
        for d in 0..rank {
            let c = rem / out_strides[d];
            rem %= out_strides[d];
            let src_dim = if d == a {
                b
            } else if d == b {
                a
            } else {
                d
            };
            src_off += c * in_strides[src_dim];
        }
        *slot = src[src_off];
    }
    Tensor::new(out_shape, data)
}

pub fn sum_all<T: Scalar>(x: &Tensor<T>) -> T {
    let mut acc = T::ZERO;
    for &v in x.data() {
        acc += v;
    }
    acc
}

pub fn mean_all<T: Scalar>(x: &Tensor<T>) -> T {
    sum_all(x) / T::from_f64(x.len() as f64)
}

/// Sum a tensor's leading axes down to a target shape (used when a matmul
/// operand was broadcast over batch dimensions).
pub fn sum_to_shape<T: Scalar>(x: &Tensor<T>, target: &[usize]) -> Result<Tensor<T>> {
    if x.shape() == target {
        return Ok(x.clone());
    }
    let trailing: usize = target.iter().product();
    if x.len() % trailing != 0 || &x.shape()[x.rank() - target.len()..] != target {
        return Err(Error::shape(format!(
            "cannot reduce {:?} to {:?}",
            x.shape(),
            target
        )));
    }
    let mut out = vec![T::ZERO; trailing];
    for chunk in x.data().chunks_exact(trailing) {
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    Tensor::new(target.to_vec(), out)
}

// ── Matrix multiplication ─────────────────────────────────────────────

/// Batched matrix product over the last two axes.
///
/// Leading axes must match exactly, or one operand may be rank-2 and is then
/// broadcast across the other's batch dimensions.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() < 2 || b.rank() < 2 {
        return Err(Error::shape(format!(
            "matmul requires rank >= 2 operands: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, ka) = (a.shape()[a.rank() - 2], a.shape()[a.rank() - 1]);
    let (kb, n) = (b.shape()[b.rank() - 2], b.shape()[b.rank() - 1]);
    if ka != kb {
        return Err(Error::shape(format!(
            "matmul inner extents differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let a_batch = &a.shape()[..a.rank() - 2];
    let b_batch = &b.shape()[..b.rank() - 2];
    let (batch_dims, bcast_a, bcast_b) = if a_batch == b_batch {
        (a_batch.to_vec(), false, false)
    } else if b_batch.is_empty() {
        (a_batch.to_vec(), false, true)
    } else if a_batch.is_empty() {
        (b_batch.to_vec(), true, false)
    } else {
        return Err(Error::shape(format!(
            "matmul batch axes incompatible: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    };
    let batch: usize = batch_dims.iter().product();
    let mut out_shape = batch_dims;
    out_shape.push(m);
    out_shape.push(n);

    let k = ka;
    let a_data = a.data();
    let b_data = b.data();
    let mut out = vec![T::ZERO; batch * m * n];
    for bi in 0..batch {
        let a_off = if bcast_a { 0 } else { bi * m * k };
        let b_off = if bcast_b { 0 } else { bi * k * n };
        let c_off = bi * m * n;
        for i in 0..m {
            let a_row = &a_data[a_off + i * k..a_off + (i + 1) * k];
            let c_row = &mut out[c_off + i * n..c_off + (i + 1) * n];
            for (kk, &av) in a_row.iter().enumerate() {
                let b_row = &b_data[b_off + kk * n..b_off + (kk + 1) * n];
                for (c, &bv) in c_row.iter_mut().zip(b_row) {
                    *c += av * bv;
                }
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// Swap the last two axes (matrix transpose under broadcasting).
pub fn transpose_last2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let r = x.rank();
    if r < 2 {
        return Err(Error::shape(format!(
            "transpose_last2 requires rank >= 2, got {:?}",
            x.shape()
        )));
    }
    transpose(x, r - 2, r - 1)
}

pub fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let da_full = matmul(dy, &transpose_last2(b)?)?;
    let db_full = matmul(&transpose_last2(a)?, dy)?;
    let da = sum_to_shape(&da_full, a.shape())?;
    let db = sum_to_shape(&db_full, b.shape())?;
    Ok((da, db))
}

// ── Softmax ───────────────────────────────────────────────────────────

fn axis_spans(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

/// Numerically stable softmax along `axis`.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::shape(format!(
            "softmax axis {axis} out of range for shape {:?}",
            x.shape()
        )));
    }
    if !x.all_finite() {
        return Err(Error::Numeric("softmax input contains non-finite values".into()));
    }
    let (outer, len, inner) = axis_spans(x.shape(), axis);
    let src = x.data();
    let mut out = vec![T::ZERO; src.len()];
    // Exponentials and the row denominator accumulate in f64 so that f32
    // rows still sum to 1 well inside the 1e-6 row-stochastic tolerance.
    let mut exps = vec![0.0f64; len];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = src[base];
            for j in 1..len {
                max = max.maximum(src[base + j * inner]);
            }
            let mut denom = 0.0f64;
            for (j, e) in exps.iter_mut().enumerate() {
                *e = (src[base + j * inner] - max).to_f64().exp();
                denom += *e;
            }
            for (j, e) in exps.iter().enumerate() {
                out[base + j * inner] = T::from_f64(e / denom);
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// dx = y * (dy - sum_axis(dy * y)) where y = softmax(x).
pub fn softmax_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, len, inner) = axis_spans(y.shape(), axis);
    let yv = y.data();
    let gv = dy.data();
    let mut out = vec![T::ZERO; yv.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = T::ZERO;
            for j in 0..len {
                let idx = base + j * inner;
                dot += yv[idx] * gv[idx];
            }
            for j in 0..len {
                let idx = base + j * inner;
                out[idx] = yv[idx] * (gv[idx] - dot);
            }
        }
    }
    Tensor::new(y.shape().to_vec(), out).expect("softmax grad shape")
}

// ── Layer normalization (over the last axis) ──────────────────────────

pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let d = *x.shape().last().unwrap();
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::shape(format!(
            "layer_norm gamma/beta {:?}/{:?} do not match channel axis of {:?}",
            gamma.shape(),
            beta.shape(),
            x.shape()
        )));
    }
    let g = gamma.data();
    let b = beta.data();
    let src = x.data();
    let mut out = vec![T::ZERO; src.len()];
    let inv_d = T::from_f64(1.0 / d as f64);
    for (row, out_row) in src.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        let mut mean = T::ZERO;
        for &v in row {
            mean += v;
        }
        mean = mean * inv_d;
        let mut var = T::ZERO;
        for &v in row {
            let c = v - mean;
            var += c * c;
        }
        var = var * inv_d;
        let rstd = T::ONE / (var + T::from_f64(eps)).sqrt();
        for j in 0..d {
            out_row[j] = g[j] * ((row[j] - mean) * rstd) + b[j];
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Returns (dx, dgamma, dbeta).
pub fn layer_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    eps: f64,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let d = *x.shape().last().unwrap();
    let g = gamma.data();
    let src = x.data();
    let dyv = dy.data();
    let inv_d = T::from_f64(1.0 / d as f64);
    let mut dx = vec![T::ZERO; src.len()];
    let mut dgamma = vec![T::ZERO; d];
    let mut dbeta = vec![T::ZERO; d];
    for (r, (row, dy_row)) in src.chunks_exact(d).zip(dyv.chunks_exact(d)).enumerate() {
        let mut mean = T::ZERO;
        for &v in row {
            mean += v;
        }
        mean = mean * inv_d;
        let mut var = T::ZERO;
        for &v in row {
            let c = v - mean;
            var += c * c;
        }
        var = var * inv_d;
        let rstd = T::ONE / (var + T::from_f64(eps)).sqrt();

        let mut mean_h = T::ZERO; // mean of dy*gamma
        let mut mean_hx = T::ZERO; // mean of dy*gamma*xhat
        for j in 0..d {
            let xhat = (row[j] - mean) * rstd;
            let h = dy_row[j] * g[j];
            mean_h += h;
            mean_hx += h * xhat;
            dgamma[j] += dy_row[j] * xhat;
            dbeta[j] += dy_row[j];
        }
        mean_h = mean_h * inv_d;
        mean_hx = mean_hx * inv_d;
        let dx_row = &mut dx[r * d..(r + 1) * d];
        for j in 0..d {
            let xhat = (row[j] - mean) * rstd;
            dx_row[j] = rstd * (dy_row[j] * g[j] - mean_h - xhat * mean_hx);
        }
    }
    (
        Tensor::new(x.shape().to_vec(), dx).expect("ln dx shape"),
        Tensor::new(vec![d], dgamma).expect("ln dgamma shape"),
        Tensor::new(vec![d], dbeta).expect("ln dbeta shape"),
    )
}

// ── Spatial helpers ───────────────────────────────────────────────────

fn spatial_view(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(format!(
            "spatial op requires rank >= 2, got {:?}",
            shape
        )));
    }
    let w = shape[shape.len() - 1];
    let h = shape[shape.len() - 2];
    let lead: usize = shape[..shape.len() - 2].iter().product();
    Ok((lead, h, w))
}

// ── Average pooling ───────────────────────────────────────────────────

/// Mean over non-overlapping r x r windows; `r` must divide both extents.
pub fn avg_pool2d<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    if r == 0 {
        return Err(Error::shape("pool ratio must be >= 1"));
    }
    let (lead, h, w) = spatial_view(x.shape())?;
    if h % r != 0 || w % r != 0 {
        return Err(Error::shape(format!(
            "pool ratio {r} does not divide spatial extents {h}x{w}"
        )));
    }
    let (oh, ow) = (h / r, w / r);
    let mut out_shape = x.shape().to_vec();
    let n = out_shape.len();
    out_shape[n - 2] = oh;
    out_shape[n - 1] = ow;
    let src = x.data();
    let mut out = vec![T::ZERO; lead * oh * ow];
    let inv = T::from_f64(1.0 / (r * r) as f64);
    for l in 0..lead {
        let in_base = l * h * w;
        let out_base = l * oh * ow;
        for oi in 0..oh {
            for oj in 0..ow {
                // anchored sum: constant windows stay exactly constant
                let anchor = src[in_base + oi * r * w + oj * r];
                let mut acc = T::ZERO;
                for di in 0..r {
                    let row = in_base + (oi * r + di) * w + oj * r;
                    for dj in 0..r {
                        acc += src[row + dj] - anchor;
                    }
                }
                out[out_base + oi * ow + oj] = anchor + acc * inv;
            }
        }
    }
    Tensor::new(out_shape, out)
}

pub fn avg_pool2d_backward<T: Scalar>(dy: &Tensor<T>, in_shape: &[usize], r: usize) -> Tensor<T> {
    let (lead, h, w) = spatial_view(in_shape).expect("validated in forward");
    let (oh, ow) = (h / r, w / r);
    let g = dy.data();
    let inv = T::from_f64(1.0 / (r * r) as f64);
    let mut dx = vec![T::ZERO; lead * h * w];
    for l in 0..lead {
        let in_base = l * h * w;
        let out_base = l * oh * ow;
        for oi in 0..oh {
            for oj in 0..ow {
                let gv = g[out_base + oi * ow + oj] * inv;
                for di in 0..r {
                    let row = in_base + (oi * r + di) * w + oj * r;
                    for dj in 0..r {
                        dx[row + dj] += gv;
                    }
                }
            }
        }
    }
    Tensor::new(in_shape.to_vec(), dx).expect("pool grad shape")
}

/// Window covered by adaptive-pool output cell `i` of `out` cells over `n` inputs.
pub fn adaptive_window(i: usize, n: usize, out: usize) -> (usize, usize) {
    let start = i * n / out;
    let end = ((i + 1) * n).div_ceil(out);
    (start, end)
}

/// Adaptive average pooling to `oh x ow` with floor/ceil window boundaries.
pub fn adaptive_avg_pool2d<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>> {
    if oh == 0 || ow == 0 {
        return Err(Error::shape("adaptive pool target must be >= 1"));
    }
    let (lead, h, w) = spatial_view(x.shape())?;
    let mut out_shape = x.shape().to_vec();
    let n = out_shape.len();
    out_shape[n - 2] = oh;
    out_shape[n - 1] = ow;
    let src = x.data();
    let mut out = vec![T::ZERO; lead * oh * ow];
    for l in 0..lead {
        let in_base = l * h * w;
        let out_base = l * oh * ow;
        for oi in 0..oh {
            let (i0, i1) = adaptive_window(oi, h, oh);
            for oj in 0..ow {
                let (j0, j1) = adaptive_window(oj, w, ow);
                // anchored sum: constant windows stay exactly constant
                let anchor = src[in_base + i0 * w + j0];
                let mut acc = T::ZERO;
                for i in i0..i1 {
                    for j in j0..j1 {
                        acc += src[in_base + i * w + j] - anchor;
                    }
                }
                let count = ((i1 - i0) * (j1 - j0)) as f64;
                out[out_base + oi * ow + oj] = anchor + acc * T::from_f64(1.0 / count);
            }
        }
    }
    Tensor::new(out_shape, out)
}

pub fn adaptive_avg_pool2d_backward<T: Scalar>(dy: &Tensor<T>, in_shape: &[usize]) -> Tensor<T> {
    let (lead, h, w) = spatial_view(in_shape).expect("validated in forward");
    let (_, oh, ow) = spatial_view(dy.shape()).expect("dy spatial");
    let g = dy.data();
    let mut dx = vec![T::ZERO; lead * h * w];
    for l in 0..lead {
        let in_base = l * h * w;
        let out_base = l * oh * ow;
        for oi in 0..oh {
            let (i0, i1) = adaptive_window(oi, h, oh);
            for oj in 0..ow {
                let (j0, j1) = adaptive_window(oj, w, ow);
                let count = ((i1 - i0) * (j1 - j0)) as f64;
                let gv = g[out_base + oi * ow + oj] * T::from_f64(1.0 / count);
                for i in i0..i1 {
                    for j in j0..j1 {
                        dx[in_base + i * w + j] += gv;
                    }
                }
            }
        }
    }
    Tensor::new(in_shape.to_vec(), dx).expect("adaptive pool grad shape")
}

// ── Bilinear resize (half-pixel centers, no corner alignment) ─────────

/// Per-axis interpolation taps: (low index, high index, high weight).
fn bilinear_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn bilinear_resize<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>> {
    if oh == 0 || ow == 0 {
        return Err(Error::shape("resize target must be >= 1"));
    }
    let (lead, h, w) = spatial_view(x.shape())?;
    let rows = bilinear_taps(h, oh);
    let cols = bilinear_taps(w, ow);
    let mut out_shape = x.shape().to_vec();
    let n = out_shape.len();
    out_shape[n - 2] = oh;
    out_shape[n - 1] = ow;
    let src = x.data();
    let mut out = vec![T::ZERO; lead * oh * ow];
    for l in 0..lead {
        let in_base = l * h * w;
        let out_base = l * oh * ow;
        for (oi, &(i0, i1, fi)) in rows.iter().enumerate() {
            let wi = T::from_f64(fi);
            for (oj, &(j0, j1, fj)) in cols.iter().enumerate() {
                let wj = T::from_f64(fj);
                // lerp form: exact on constants and at zero fractions
                let x00 = src[in_base + i0 * w + j0];
                let x01 = src[in_base + i0 * w + j1];
                let x10 = src[in_base + i1 * w + j0];
                let x11 = src[in_base + i1 * w + j1];
                let top = x00 + wj * (x01 - x00);
                let bot = x10 + wj * (x11 - x10);
                out[out_base + oi * ow + oj] = top + wi * (bot - top);
            }
        }
    }
    Tensor::new(out_shape, out)
}

pub fn bilinear_resize_backward<T: Scalar>(dy: &Tensor<T>, in_shape: &[usize]) -> Tensor<T> {
    let (lead, h, w) = spatial_view(in_shape).expect("validated in forward");
    let (_, oh, ow) = spatial_view(dy.shape()).expect("dy spatial");
    let rows = bilinear_taps(h, oh);
    let cols = bilinear_taps(w, ow);
    let g = dy.data();
    let mut dx = vec![T::ZERO; lead * h * w];
    for l in 0..lead {
        let in_base = l * h * w;
        let out_base = l * oh * ow;
        for (oi, &(i0, i1, fi)) in rows.iter().enumerate() {
            let wi0 = T::from_f64(1.0 - fi);
            let wi1 = T::from_f64(fi);
            for (oj, &(j0, j1, fj)) in cols.iter().enumerate() {
                let wj0 = T::from_f64(1.0 - fj);
                let wj1 = T::from_f64(fj);
                let gv = g[out_base + oi * ow + oj];
                dx[in_base + i0 * w + j0] += wi0 * wj0 * gv;
                dx[in_base + i0 * w + j1] += wi0 * wj1 * gv;
                dx[in_base + i1 * w + j0] += wi1 * wj0 * gv;
                dx[in_base + i1 * w + j1] += wi1 * wj1 * gv;
            }
        }
    }
    Tensor::new(in_shape.to_vec(), dx).expect("bilinear grad shape")
}

// ── Convolutions ──────────────────────────────────────────────────────

/// Pointwise convolution: x [B,Cin,H,W], w [Cout,Cin], optional b [Cout].
pub fn conv1x1<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    if x.rank() != 4 || w.rank() != 2 {
        return Err(Error::shape(format!(
            "conv1x1 expects x rank 4 and w rank 2, got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let (bsz, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, wcin) = (w.shape()[0], w.shape()[1]);
    if wcin != cin {
        return Err(Error::shape(format!(
            "conv1x1 channel mismatch: input {:?} vs weight {:?}",
            x.shape(),
            w.shape()
        )));
    }
    if let Some(bias) = b {
        if bias.shape() != [cout] {
            return Err(Error::shape(format!(
                "conv1x1 bias {:?} does not match {cout} output channels",
                bias.shape()
            )));
        }
    }
    let hw = h * wd;
    let src = x.data();
    let wv = w.data();
    let mut out = vec![T::ZERO; bsz * cout * hw];
    for bi in 0..bsz {
        for co in 0..cout {
            let dst = &mut out[(bi * cout + co) * hw..(bi * cout + co + 1) * hw];
            if let Some(bias) = b {
                let bv = bias.data()[co];
                for v in dst.iter_mut() {
                    *v = bv;
                }
            }
            for ci in 0..cin {
                let wkc = wv[co * cin + ci];
                let xrow = &src[(bi * cin + ci) * hw..(bi * cin + ci + 1) * hw];
                for (o, &xv) in dst.iter_mut().zip(xrow) {
                    *o += wkc * xv;
                }
            }
        }
    }
    Tensor::new(vec![bsz, cout, h, wd], out)
}

/// Returns (dx, dw, db).
pub fn conv1x1_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (bsz, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let cout = w.shape()[0];
    let hw = h * wd;
    let src = x.data();
    let wv = w.data();
    let g = dy.data();
    let mut dx = vec![T::ZERO; src.len()];
    let mut dw = vec![T::ZERO; wv.len()];
    let mut db = vec![T::ZERO; cout];
    for bi in 0..bsz {
        for co in 0..cout {
            let grow = &g[(bi * cout + co) * hw..(bi * cout + co + 1) * hw];
            for &gv in grow {
                db[co] += gv;
            }
            for ci in 0..cin {
                let xrow = &src[(bi * cin + ci) * hw..(bi * cin + ci + 1) * hw];
                let dxrow = &mut dx[(bi * cin + ci) * hw..(bi * cin + ci + 1) * hw];
                let wkc = wv[co * cin + ci];
                let mut acc = T::ZERO;
                for ((dxv, &gv), &xv) in dxrow.iter_mut().zip(grow).zip(xrow) {
                    *dxv += wkc * gv;
                    acc += gv * xv;
                }
                dw[co * cin + ci] += acc;
            }
        }
    }
    (
        Tensor::new(x.shape().to_vec(), dx).expect("conv1x1 dx shape"),
        Tensor::new(w.shape().to_vec(), dw).expect("conv1x1 dw shape"),
        Tensor::new(vec![cout], db).expect("conv1x1 db shape"),
    )
}

/// Depthwise 3x3 convolution, stride 1, zero same-padding.
/// x [B,C,H,W], w [C,3,3], optional b [C].
pub fn dwconv3x3<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    if x.rank() != 4 || w.rank() != 3 || w.shape()[1] != 3 || w.shape()[2] != 3 {
        return Err(Error::shape(format!(
            "dwconv3x3 expects x rank 4 and w [C,3,3], got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let (bsz, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if w.shape()[0] != c {
        return Err(Error::shape(format!(
            "dwconv3x3 channel mismatch: input {:?} vs weight {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let src = x.data();
    let wv = w.data();
    let mut out = vec![T::ZERO; src.len()];
    for bi in 0..bsz {
        for ci in 0..c {
            let base = (bi * c + ci) * h * wd;
            let kern = &wv[ci * 9..ci * 9 + 9];
            let bias = b.map(|t| t.data()[ci]).unwrap_or(T::ZERO);
            for i in 0..h {
                for j in 0..wd {
                    let mut acc = bias;
                    for di in 0..3usize {
                        let y = i as isize + di as isize - 1;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for dj in 0..3usize {
                            let xx = j as isize + dj as isize - 1;
                            if xx < 0 || xx >= wd as isize {
                                continue;
                            }
                            acc += kern[di * 3 + dj] * src[base + y as usize * wd + xx as usize];
                        }
                    }
                    out[base + i * wd + j] = acc;
                }
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Returns (dx, dw, db).
pub fn dwconv3x3_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (bsz, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let src = x.data();
    let wv = w.data();
    let g = dy.data();
    let mut dx = vec![T::ZERO; src.len()];
    let mut dw = vec![T::ZERO; wv.len()];
    let mut db = vec![T::ZERO; c];
    for bi in 0..bsz {
        for ci in 0..c {
            let base = (bi * c + ci) * h * wd;
            let kern = &wv[ci * 9..ci * 9 + 9];
            for i in 0..h {
                for j in 0..wd {
                    let gv = g[base + i * wd + j];
                    db[ci] += gv;
                    for di in 0..3usize {
                        let y = i as isize + di as isize - 1;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for dj in 0..3usize {
                            let xx = j as isize + dj as isize - 1;
                            if xx < 0 || xx >= wd as isize {
                                continue;
                            }
                            let src_idx = base + y as usize * wd + xx as usize;
                            dx[src_idx] += kern[di * 3 + dj] * gv;
                            dw[ci * 9 + di * 3 + dj] += src[src_idx] * gv;
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::new(x.shape().to_vec(), dx).expect("dwconv dx shape"),
        Tensor::new(w.shape().to_vec(), dw).expect("dwconv dw shape"),
        Tensor::new(vec![c], db).expect("dwconv db shape"),
    )
}

/// Strided 3x3 convolution with zero padding 1. Forward-only: the stub
/// encoder is fixed and never differentiated.
pub fn conv3x3_strided<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    if x.rank() != 4 || w.rank() != 4 || w.shape()[2] != 3 || w.shape()[3] != 3 {
        return Err(Error::shape(format!(
            "conv3x3_strided expects x rank 4 and w [Cout,Cin,3,3], got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let (bsz, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let cout = w.shape()[0];
    if w.shape()[1] != cin || b.shape() != [cout] {
        return Err(Error::shape(format!(
            "conv3x3_strided channel mismatch: x {:?}, w {:?}, b {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let oh = (h + 2 - 3) / stride + 1;
    let ow = (wd + 2 - 3) / stride + 1;
    let src = x.data();
    let wv = w.data();
    let mut out = vec![T::ZERO; bsz * cout * oh * ow];
    for bi in 0..bsz {
        for co in 0..cout {
            let obase = (bi * cout + co) * oh * ow;
            let bias = b.data()[co];
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut acc = bias;
                    for ci in 0..cin {
                        let ibase = (bi * cin + ci) * h * wd;
                        let kbase = (co * cin + ci) * 9;
                        for di in 0..3usize {
                            let y = (oi * stride + di) as isize - 1;
                            if y < 0 || y >= h as isize {
                                continue;
                            }
                            for dj in 0..3usize {
                                let xx = (oj * stride + dj) as isize - 1;
                                if xx < 0 || xx >= wd as isize {
                                    continue;
                                }
                                acc += wv[kbase + di * 3 + dj]
                                    * src[ibase + y as usize * wd + xx as usize];
                            }
                        }
                    }
                    out[obase + oi * ow + oj] = acc;
                }
            }
        }
    }
    Tensor::new(vec![bsz, cout, oh, ow], out)
}

// ── Concatenation ─────────────────────────────────────────────────────

pub fn concat<T: Scalar>(xs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    if xs.is_empty() {
        return Err(Error::Argument("concat of zero tensors".into()));
    }
    let rank = xs[0].rank();
    if axis >= rank {
        return Err(Error::shape(format!(
            "concat axis {axis} out of range for rank {rank}"
        )));
    }
    for t in xs {
        if t.rank() != rank {
            return Err(Error::shape("concat rank mismatch"));
        }
        for d in 0..rank {
            if d != axis && t.shape()[d] != xs[0].shape()[d] {
                return Err(Error::shape(format!(
                    "concat off-axis extents differ: {:?} vs {:?}",
                    t.shape(),
                    xs[0].shape()
                )));
            }
        }
    }
    let axis_total: usize = xs.iter().map(|t| t.shape()[axis]).sum();
    let mut out_shape = xs[0].shape().to_vec();
    out_shape[axis] = axis_total;
    let outer: usize = out_shape[..axis].iter().product();
    let inner: usize = out_shape[axis + 1..].iter().product();
    let mut out = Vec::with_capacity(outer * axis_total * inner);
    for o in 0..outer {
        for t in xs {
            let a = t.shape()[axis];
            let start = o * a * inner;
            out.extend_from_slice(&t.data()[start..start + a * inner]);
        }
    }
    Tensor::new(out_shape, out)
}

/// Split the upstream gradient of a concat back into per-input gradients.
pub fn concat_backward<T: Scalar>(
    dy: &Tensor<T>,
    in_shapes: &[Vec<usize>],
    axis: usize,
) -> Vec<Tensor<T>> {
    let inner: usize = in_shapes[0][axis + 1..].iter().product();
    let outer: usize = in_shapes[0][..axis].iter().product();
    let g = dy.data();
    let axis_total: usize = in_shapes.iter().map(|s| s[axis]).sum();
    let mut grads: Vec<Vec<T>> = in_shapes
        .iter()
        .map(|s| Vec::with_capacity(s.iter().product()))
        .collect();
    for o in 0..outer {
        let mut off = o * axis_total * inner;
        for (gi, s) in in_shapes.iter().enumerate() {
            let span = s[axis] * inner;
            grads[gi].extend_from_slice(&g[off..off + span]);
            off += span;
        }
    }
    grads
        .into_iter()
        .zip(in_shapes)
        .map(|(d, s)| Tensor::new(s.clone(), d).expect("concat grad shape"))
        .collect()
}

// ── Cross-entropy over class-channel logits ───────────────────────────

/// Mean per-pixel cross-entropy. Logits [B,K,H,W], labels row-major [B,H,W].
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[u32]) -> Result<T> {
    if logits.rank() != 4 {
        return Err(Error::shape(format!(
            "cross_entropy expects rank-4 logits, got {:?}",
            logits.shape()
        )));
    }
    let (bsz, k, h, w) = (
        logits.shape()[0],
        logits.shape()[1],
        logits.shape()[2],
        logits.shape()[3],
    );
    let hw = h * w;
    if labels.len() != bsz * hw {
        return Err(Error::Argument(format!(
            "label count {} does not match {} pixels",
            labels.len(),
            bsz * hw
        )));
    }
    let src = logits.data();
    let mut total = T::ZERO;
    for bi in 0..bsz {
        for p in 0..hw {
            let label = labels[bi * hw + p] as usize;
            if label >= k {
                return Err(Error::Argument(format!(
                    "label {label} out of range for {k} classes"
                )));
            }
            let mut max = src[bi * k * hw + p];
            for c in 1..k {
                max = max.maximum(src[(bi * k + c) * hw + p]);
            }
            let mut denom = T::ZERO;
            for c in 0..k {
                denom += (src[(bi * k + c) * hw + p] - max).exp();
            }
            total += denom.ln() + max - src[(bi * k + label) * hw + p];
        }
    }
    Ok(total / T::from_f64((bsz * hw) as f64))
}

pub fn cross_entropy_backward<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[u32],
    upstream: T,
) -> Tensor<T> {
    let (bsz, k, h, w) = (
        logits.shape()[0],
        logits.shape()[1],
        logits.shape()[2],
        logits.shape()[3],
    );
    let hw = h * w;
    let src = logits.data();
    let norm = upstream * T::from_f64(1.0 / (bsz * hw) as f64);
    let mut dx = vec![T::ZERO; src.len()];
    for bi in 0..bsz {
        for p in 0..hw {
            let label = labels[bi * hw + p] as usize;
            let mut max = src[bi * k * hw + p];
            for c in 1..k {
                max = max.maximum(src[(bi * k + c) * hw + p]);
            }
            let mut denom = T::ZERO;
            for c in 0..k {
                denom += (src[(bi * k + c) * hw + p] - max).exp();
            }
            for c in 0..k {
                let soft = (src[(bi * k + c) * hw + p] - max).exp() / denom;
                let ind = if c == label { T::ONE } else { T::ZERO };
                dx[(bi * k + c) * hw + p] = (soft - ind) * norm;
            }
        }
    }
    Tensor::new(logits.shape().to_vec(), dx).expect("ce grad shape")
}
