//! Tensor primitives shared by 2D and 3D networks.
//!
//! Every feature tensor in this crate is rank 5, `[batch, channels, depth, height, width]`.
//! Planar data uses `depth == 1`, so a single code path serves slices and volumes.

use std::any::{Any, TypeId};
use std::cell::Cell;

use burn::backend::ndarray::NdArrayTensorFloat;
use burn::tensor::backend::Backend;
use burn::tensor::module::max_pool2d;
use burn::tensor::{DType, Tensor, TensorData, TensorPrimitive};
use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2, LinalgScalar, ShapeBuilder};

/// Spatial extents `[depth, height, width]`.
pub type Spatial = [usize; 3];

/// Convolutions whose column buffer would exceed this many elements run in slabs.
const MATMUL_COLUMN_LIMIT: usize = 1 << 26;

/// Column buffer size of the host convolution used outside autodiff.
const HOST_COLUMN_LIMIT: usize = 1 << 23;

thread_local! {
    static MAC_COUNTER: Cell<Option<u64>> = const { Cell::new(None) };
}

/// Runs `f` while counting multiply-accumulates of every convolution executed on this thread.
pub fn count_macs<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let previous = MAC_COUNTER.with(|c| c.replace(Some(0)));
    let out = f();
    let counted = MAC_COUNTER.with(|c| c.replace(previous)).unwrap_or(0);
    (out, counted)
}

fn record_macs(macs: u64) {
    MAC_COUNTER.with(|c| {
        if let Some(total) = c.get() {
            c.set(Some(total + macs));
        }
    });
}

pub fn spatial_of<B: Backend>(x: &Tensor<B, 5>) -> Spatial {
    let [_, _, d, h, w] = x.dims();
    [d, h, w]
}

/// Grouped N-d convolution on rank-5 tensors.
///
/// Lowered to shifted taps plus one matmul per group; large inputs are processed in
/// slabs to bound the column buffer.
pub fn conv<B: Backend>(
    x: Tensor<B, 5>,
    weight: Tensor<B, 5>,
    bias: Option<Tensor<B, 1>>,
    stride: Spatial,
    padding: Spatial,
    groups: usize,
) -> Tensor<B, 5> {
    let [batch, channels, d, h, w] = x.dims();
    let [out_channels, group_channels, kd, kh, kw] = weight.dims();
    assert_eq!(
        channels,
        group_channels * groups,
        "conv input has {channels} channels, weight expects {group_channels}x{groups}"
    );
    let out = [
        (d + 2 * padding[0] - kd) / stride[0] + 1,
        (h + 2 * padding[1] - kh) / stride[1] + 1,
        (w + 2 * padding[2] - kw) / stride[2] + 1,
    ];
    let taps = kd * kh * kw;
    let positions: usize = out.iter().product();
    record_macs((batch * out_channels * positions * group_channels * taps) as u64);

    let host = !B::ad_enabled() && is_ndarray::<B>() && matches!(x.dtype(), DType::F32 | DType::F64);
    let y = if host {
        conv_host(x, weight, stride, padding, groups, out)
    } else if batch * taps * channels * positions <= MATMUL_COLUMN_LIMIT {
        conv_matmul(x, weight, stride, padding, groups, out)
    } else {
        conv_chunked(x, weight, stride, padding, groups, out, MATMUL_COLUMN_LIMIT)
    };
    match bias {
        Some(bias) => y + bias.reshape([1, out_channels, 1, 1, 1]),
        None => y,
    }
}

fn conv_matmul<B: Backend>(
    x: Tensor<B, 5>,
    weight: Tensor<B, 5>,
    stride: Spatial,
    padding: Spatial,
    groups: usize,
    out: Spatial,
) -> Tensor<B, 5> {
    let [batch, channels, d, h, w] = x.dims();
    let [out_channels, group_channels, kd, kh, kw] = weight.dims();
    let taps = kd * kh * kw;
    let positions: usize = out.iter().product();
    let unit = stride == [1, 1, 1] && padding == [0, 0, 0] && taps == 1;

    // Columns are `[batch, taps * channels, positions]` with taps outermost.
    let columns: Tensor<B, 3> = if unit {
        x.reshape([batch, channels, positions])
    } else {
        // Tail padding guarantees every tap can be read as a full `stride * out` run.
        let size = [d, h, w];
        let mut tail = [0; 3];
        let kernel = [kd, kh, kw];
        for axis in 0..3 {
            let needed = kernel[axis] - 1 + stride[axis] * out[axis];
            let have = size[axis] + 2 * padding[axis];
            tail[axis] = needed.saturating_sub(have);
        }
        let padded = pad_zeros(x, padding, tail);
        let mut shifted = Vec::with_capacity(taps);
        for a in 0..kd {
            for b in 0..kh {
                for c in 0..kw {
                    let tap = padded.clone().slice([
                        0..batch,
                        0..channels,
                        a..a + stride[0] * out[0],
                        b..b + stride[1] * out[1],
                        c..c + stride[2] * out[2],
                    ]);
                    shifted.push(subsample(tap, stride, out));
                }
            }
        }
        Tensor::cat(shifted, 1).reshape([batch, taps * channels, positions])
    };
    // Folding the batch into the column axis gives one GEMM per group, so each weight
    // matrix is streamed once per step rather than once per sample.
    let columns = columns
        .reshape([batch, taps, groups, group_channels, positions])
        .permute([2, 1, 3, 0, 4])
        .reshape([groups, taps * group_channels, batch * positions]);

    let per_group = out_channels / groups;
    let kernel = weight
        .reshape([groups, per_group, group_channels, taps])
        .swap_dims(2, 3)
        .reshape([groups, per_group, taps * group_channels]);
    kernel
        .matmul(columns)
        .reshape([out_channels, batch, positions])
        .swap_dims(0, 1)
        .reshape([batch, out_channels, out[0], out[1], out[2]])
}

/// Inference convolution on host buffers: explicit im2col per group and row slab, then
/// one GEMM. Tensor reshapes copy on the ndarray backend, so this avoids them entirely.
fn conv_host<B: Backend>(
    x: Tensor<B, 5>,
    weight: Tensor<B, 5>,
    stride: Spatial,
    padding: Spatial,
    groups: usize,
    out: Spatial,
) -> Tensor<B, 5> {
    let device = x.device();
    let (xs, ws) = (x.dims(), weight.dims());
    let shape = [xs[0], ws[0], out[0], out[1], out[2]];
    let data = match (ndarray_primitive(x), ndarray_primitive(weight)) {
        (NdArrayTensorFloat::F32(x), NdArrayTensorFloat::F32(w)) => {
            let (x, w) = (x.array.as_standard_layout(), w.array.as_standard_layout());
            let (x, w) = (x.as_slice().expect("standard"), w.as_slice().expect("standard"));
            TensorData::new(im2col_gemm(x, xs, w, ws, stride, padding, groups, out, HOST_COLUMN_LIMIT), shape)
        }
        (NdArrayTensorFloat::F64(x), NdArrayTensorFloat::F64(w)) => {
            let (x, w) = (x.array.as_standard_layout(), w.array.as_standard_layout());
            let (x, w) = (x.as_slice().expect("standard"), w.as_slice().expect("standard"));
            TensorData::new(im2col_gemm(x, xs, w, ws, stride, padding, groups, out, HOST_COLUMN_LIMIT), shape)
        }
        _ => panic!("convolution input and weight have different float types"),
    };
    Tensor::from_data(data, &device)
}

fn is_ndarray<B: Backend>() -> bool {
    TypeId::of::<B::FloatTensorPrimitive>() == TypeId::of::<NdArrayTensorFloat>()
}

/// Unwraps the ndarray storage of a tensor; callers check [`is_ndarray`] first.
fn ndarray_primitive<B: Backend>(t: Tensor<B, 5>) -> NdArrayTensorFloat {
    match t.into_primitive() {
        TensorPrimitive::Float(p) => *(Box::new(p) as Box<dyn Any>)
            .downcast::<NdArrayTensorFloat>()
            .expect("ndarray float tensor"),
        TensorPrimitive::QFloat(_) => panic!("quantized tensors are not supported"),
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col_gemm<T: LinalgScalar>(
    x: &[T],
    xs: [usize; 5],
    w: &[T],
    ws: [usize; 5],
    stride: Spatial,
    padding: Spatial,
    groups: usize,
    out: Spatial,
    limit: usize,
) -> Vec<T> {
    let [batch, channels, d, h, wd] = xs;
    let [o, gc, kd, kh, kw] = ws;
    let k = gc * kd * kh * kw;
    let og = o / groups;
    let positions = out[0] * out[1] * out[2];
    let row_len = out[2];
    let rows_total = out[0] * out[1];
    let rows_per_chunk = (limit / (k * row_len).max(1)).clamp(1, rows_total);
    let mut cols = vec![T::zero(); k * rows_per_chunk * row_len];
    let mut y = vec![T::zero(); batch * o * positions];
    let inside = |v: isize, n: usize| v >= 0 && (v as usize) < n;

    for b in 0..batch {
        for g in 0..groups {
            let wmat = ArrayView2::from_shape((og, k), &w[g * og * k..(g + 1) * og * k]).expect("weight block");
            for r0 in (0..rows_total).step_by(rows_per_chunk) {
                let rows = rows_per_chunk.min(rows_total - r0);
                let n = rows * row_len;
                for ci in 0..gc {
                    let plane = &x[(b * channels + g * gc + ci) * d * h * wd..][..d * h * wd];
                    for a in 0..kd {
                        for bb in 0..kh {
                            for cc in 0..kw {
                                let row = ((ci * kd + a) * kh + bb) * kw + cc;
                                let dst = &mut cols[row * n..(row + 1) * n];
                                for r in 0..rows {
                                    let (oz, oy) = ((r0 + r) / out[1], (r0 + r) % out[1]);
                                    let iz = (oz * stride[0] + a) as isize - padding[0] as isize;
                                    let iy = (oy * stride[1] + bb) as isize - padding[1] as isize;
                                    let seg = &mut dst[r * row_len..(r + 1) * row_len];
                                    if !inside(iz, d) || !inside(iy, h) {
                                        seg.fill(T::zero());
                                        continue;
                                    }
                                    let src = &plane[(iz as usize * h + iy as usize) * wd..][..wd];
                                    for (ox, v) in seg.iter_mut().enumerate() {
                                        let ix = (ox * stride[2] + cc) as isize - padding[2] as isize;
                                        *v = if inside(ix, wd) { src[ix as usize] } else { T::zero() };
                                    }
                                }
                            }
                        }
                    }
                }
                let cmat = ArrayView2::from_shape((k, n), &cols[..k * n]).expect("column block");
                let base = (b * o + g * og) * positions + r0 * row_len;
                let span = (og - 1) * positions + n;
                let mut ymat = ArrayViewMut2::from_shape((og, n).strides((positions, 1)), &mut y[base..base + span])
                    .expect("output block");
                general_mat_mul(T::one(), &wmat, &cmat, T::zero(), &mut ymat);
            }
        }
    }
    y
}

/// Lowered convolution computed in output slabs along the outermost non-trivial axis,
/// so the column buffer never exceeds roughly `limit` elements.
fn conv_chunked<B: Backend>(
    x: Tensor<B, 5>,
    weight: Tensor<B, 5>,
    stride: Spatial,
    padding: Spatial,
    groups: usize,
    out: Spatial,
    limit: usize,
) -> Tensor<B, 5> {
    let [batch, channels, d, h, w] = x.dims();
    let [_, _, kd, kh, kw] = weight.dims();
    let kernel = [kd, kh, kw];
    let size = [d, h, w];
    let mut tail = [0; 3];
    for axis in 0..3 {
        let needed = kernel[axis] - 1 + stride[axis] * out[axis];
        tail[axis] = needed.saturating_sub(size[axis] + 2 * padding[axis]);
    }
    let padded = pad_zeros(x, padding, tail);
    let dims = padded.dims();
    let axis = (0..3).find(|a| out[*a] > 1).unwrap_or(2);
    let per_row = batch * kd * kh * kw * channels * out.iter().product::<usize>() / out[axis];
    let rows = (limit / per_row.max(1)).max(1);
    let mut parts = Vec::with_capacity(out[axis].div_ceil(rows));
    for start in (0..out[axis]).step_by(rows) {
        let n = rows.min(out[axis] - start);
        let lo = start * stride[axis];
        let hi = lo + kernel[axis] - 1 + stride[axis] * n;
        let mut ranges = dims.map(|e| 0..e);
        ranges[axis + 2] = lo..hi;
        let mut chunk_out = out;
        chunk_out[axis] = n;
        parts.push(conv_matmul(
            padded.clone().slice(ranges),
            weight.clone(),
            stride,
            [0; 3],
            groups,
            chunk_out,
        ));
    }
    Tensor::cat(parts, axis + 2)
}

/// Keeps every `stride`-th element along each spatial axis of a tensor whose extent is
/// exactly `stride * out`.
fn subsample<B: Backend>(x: Tensor<B, 5>, stride: Spatial, out: Spatial) -> Tensor<B, 5> {
    let mut x = x;
    for axis in 0..3 {
        if stride[axis] == 1 {
            continue;
        }
        let [b, c, d, h, w] = x.dims();
        let s = stride[axis];
        x = match axis {
            0 => x
                .reshape([b, c, out[0], s, h, w])
                .narrow(3, 0, 1)
                .reshape([b, c, out[0], h, w]),
            1 => x
                .reshape([b, c, d, out[1], s, w])
                .narrow(4, 0, 1)
                .reshape([b, c, d, out[1], w]),
            _ => x
                .reshape([b, c, d, h, out[2], s])
                .narrow(5, 0, 1)
                .reshape([b, c, d, h, out[2]]),
        };
    }
    x
}

/// Zero padding on the three spatial axes: `lead[i]` before and `lead[i] + tail[i]` after.
pub fn pad_zeros<B: Backend>(x: Tensor<B, 5>, lead: Spatial, tail: Spatial) -> Tensor<B, 5> {
    let mut x = x;
    for axis in 0..3 {
        let before = lead[axis];
        let after = lead[axis] + tail[axis];
        if before == 0 && after == 0 {
            continue;
        }
        let dim = axis + 2;
        let mut shape = x.dims();
        let device = x.device();
        let mut parts = Vec::with_capacity(3);
        if before > 0 {
            shape[dim] = before;
            parts.push(Tensor::zeros(shape, &device));
        }
        parts.push(x);
        if after > 0 {
            shape[dim] = after;
            parts.push(Tensor::zeros(shape, &device));
        }
        x = Tensor::cat(parts, dim);
    }
    x
}

/// Max pooling over height and width of a planar (`depth == 1`) tensor.
pub fn max_pool_planar<B: Backend>(
    x: Tensor<B, 5>,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Tensor<B, 5> {
    let [b, c, d, h, w] = x.dims();
    assert_eq!(d, 1, "planar max pooling expects depth 1, got {d}");
    let y = max_pool2d(
        x.reshape([b, c, h, w]),
        [kernel, kernel],
        [stride, stride],
        [padding, padding],
        [1, 1],
    );
    let [_, _, oh, ow] = y.dims();
    y.reshape([b, c, 1, oh, ow])
}

/// Per-position maximum over channels, without gradient.
///
/// Built from element-wise maxima because the reduction's backward pass only scatters
/// along the last axis on some backends.
fn channel_max<B: Backend>(x: &Tensor<B, 5>) -> Tensor<B, 5> {
    let x = x.clone().detach();
    let c = x.dims()[1];
    (1..c).fold(x.clone().narrow(1, 0, 1), |m, i| m.max_pair(x.clone().narrow(1, i, 1)))
}

/// Softmax over the channel axis.
pub fn softmax_channels<B: Backend>(x: Tensor<B, 5>) -> Tensor<B, 5> {
    let e = (x.clone() - channel_max(&x)).exp();
    e.clone() / e.sum_dim(1)
}

/// Log-softmax over the channel axis.
pub fn log_softmax_channels<B: Backend>(x: Tensor<B, 5>) -> Tensor<B, 5> {
    let shifted = x.clone() - channel_max(&x);
    shifted.clone() - shifted.exp().sum_dim(1).log()
}

/// Source taps of half-pixel-centred linear interpolation from `src` to `dst` samples.
///
/// Returns, for each output index, `(lower, upper, weight_of_upper)`.
pub fn linear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|j| {
            let pos = ((j as f64 + 0.5) * scale - 0.5).max(0.0);
            let lower = (pos.floor() as usize).min(src - 1);
            let upper = (lower + 1).min(src - 1);
            let frac = if lower == upper { 0.0 } else { pos - lower as f64 };
            (lower, upper, frac)
        })
        .collect()
}

/// Linear (bi/trilinear) resize of the spatial axes to `target`.
pub fn resize_linear<B: Backend>(x: Tensor<B, 5>, target: Spatial) -> Tensor<B, 5> {
    let mut x = x;
    for axis in 0..3 {
        let src = x.dims()[axis + 2];
        let dst = target[axis];
        if src == dst {
            continue;
        }
        x = if dst == 2 * src {
            upsample2_axis(x, axis + 2)
        } else {
            resize_axis_matrix(x, axis + 2, dst)
        };
    }
    x
}

/// Doubles one axis; equivalent to the general resize but uses only element-wise ops.
fn upsample2_axis<B: Backend>(x: Tensor<B, 5>, dim: usize) -> Tensor<B, 5> {
    let n = x.dims()[dim];
    let (prev, next) = if n == 1 {
        (x.clone(), x.clone())
    } else {
        let prev = Tensor::cat(vec![x.clone().narrow(dim, 0, 1), x.clone().narrow(dim, 0, n - 1)], dim);
        let next = Tensor::cat(vec![x.clone().narrow(dim, 1, n - 1), x.clone().narrow(dim, n - 1, 1)], dim);
        (prev, next)
    };
    let centre = x.mul_scalar(0.75);
    let even = centre.clone() + prev.mul_scalar(0.25);
    let odd = centre + next.mul_scalar(0.25);
    let mut shape = even.dims();
    shape[dim] *= 2;
    Tensor::stack::<6>(vec![even, odd], dim + 1).reshape(shape)
}

fn resize_axis_matrix<B: Backend>(x: Tensor<B, 5>, dim: usize, dst: usize) -> Tensor<B, 5> {
    let src = x.dims()[dim];
    let mut weights = vec![0.0f64; src * dst];
    for (j, (lo, hi, frac)) in linear_taps(src, dst).into_iter().enumerate() {
        weights[lo * dst + j] += 1.0 - frac;
        weights[hi * dst + j] += frac;
    }
    let device = x.device();
    let matrix =
        Tensor::<B, 2>::from_data(TensorData::new(weights, [src, dst]), &device).unsqueeze::<5>();
    let moved = x.swap_dims(dim, 4);
    moved.matmul(matrix).swap_dims(dim, 4)
}

/// Reads a tensor back as `f64` values in row-major order.
pub fn to_vec_f64<B: Backend, const D: usize>(x: Tensor<B, D>) -> Vec<f64> {
    x.into_data()
        .convert::<f64>()
        .into_vec::<f64>()
        .expect("converted tensor data is f64")
}

#[cfg(test)]
mod tests {
    use super::*;
    use burn::backend::NdArray;
    use burn::tensor::Distribution;

    type B = NdArray<f64>;

    /// Direct nested-loop convolution used as the reference.
    fn naive_conv(
        x: &[f64],
        xs: [usize; 5],
        w: &[f64],
        ws: [usize; 5],
        stride: Spatial,
        padding: Spatial,
        groups: usize,
    ) -> (Vec<f64>, [usize; 5]) {
        let [b, c, d, h, wd] = xs;
        let [o, cg, kd, kh, kw] = ws;
        let od = (d + 2 * padding[0] - kd) / stride[0] + 1;
        let oh = (h + 2 * padding[1] - kh) / stride[1] + 1;
        let ow = (wd + 2 * padding[2] - kw) / stride[2] + 1;
        let og = o / groups;
        let mut y = vec![0.0; b * o * od * oh * ow];
        for n in 0..b {
            for oc in 0..o {
                let g = oc / og;
                for z in 0..od {
                    for yy in 0..oh {
                        for xx in 0..ow {
                            let mut acc = 0.0;
                            for ic in 0..cg {
                                let cin = g * cg + ic;
                                for a in 0..kd {
                                    for bb in 0..kh {
                                        for cc in 0..kw {
                                            let iz = (z * stride[0] + a) as isize - padding[0] as isize;
                                            let iy = (yy * stride[1] + bb) as isize - padding[1] as isize;
                                            let ix = (xx * stride[2] + cc) as isize - padding[2] as isize;
                                            if iz < 0 || iy < 0 || ix < 0 || iz >= d as isize || iy >= h as isize || ix >= wd as isize {
                                                continue;
                                            }
                                            let xi = (((n * c + cin) * d + iz as usize) * h + iy as usize) * wd + ix as usize;
                                            let wi = (((oc * cg + ic) * kd + a) * kh + bb) * kw + cc;
                                            acc += x[xi] * w[wi];
                                        }
                                    }
                                }
                            }
                            y[(((n * o + oc) * od + z) * oh + yy) * ow + xx] = acc;
                        }
                    }
                }
            }
        }
        (y, [b, o, od, oh, ow])
    }

    fn check_conv(xs: [usize; 5], ws: [usize; 5], stride: Spatial, padding: Spatial, groups: usize) {
        let device = Default::default();
        let x = Tensor::<B, 5>::random(xs, Distribution::Normal(0.0, 1.0), &device);
        let w = Tensor::<B, 5>::random(ws, Distribution::Normal(0.0, 1.0), &device);
        let (expected, shape) = naive_conv(
            &to_vec_f64(x.clone()),
            xs,
            &to_vec_f64(w.clone()),
            ws,
            stride,
            padding,
            groups,
        );
        let [_, _, od, oh, ow] = shape;
        let out = [od, oh, ow];
        let fast = conv_matmul(x.clone(), w.clone(), stride, padding, groups, out);
        let chunked = conv_chunked(x.clone(), w.clone(), stride, padding, groups, out, 1);
        let slabbed = im2col_gemm(
            &to_vec_f64(x.clone()),
            xs,
            &to_vec_f64(w.clone()),
            ws,
            stride,
            padding,
            groups,
            out,
            1,
        );
        let host = conv_host(x, w, stride, padding, groups, out);
        assert_eq!(host.dims(), shape);
        assert_eq!(fast.dims(), shape);
        assert_eq!(chunked.dims(), shape);
        for (label, got) in [
            ("matmul", to_vec_f64(fast)),
            ("chunked", to_vec_f64(chunked)),
            ("host", to_vec_f64(host)),
            ("slabbed", slabbed),
        ] {
            for (a, b) in got.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-9, "{label}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_paths_match_reference() {
        check_conv([2, 4, 1, 6, 6], [3, 4, 1, 3, 3], [1, 1, 1], [0, 1, 1], 1);
        check_conv([1, 4, 1, 8, 8], [6, 2, 1, 3, 3], [1, 2, 2], [0, 1, 1], 2);
        check_conv([1, 3, 1, 8, 8], [4, 3, 1, 7, 7], [1, 2, 2], [0, 3, 3], 1);
        check_conv([2, 2, 4, 4, 4], [3, 2, 3, 3, 3], [1, 1, 1], [1, 1, 1], 1);
        check_conv([1, 2, 4, 6, 4], [4, 2, 3, 3, 3], [2, 2, 2], [1, 1, 1], 1);
        check_conv([1, 8, 1, 4, 4], [8, 8, 1, 1, 1], [1, 2, 2], [0, 0, 0], 1);
        check_conv([2, 5, 2, 3, 3], [7, 5, 1, 1, 1], [1, 1, 1], [0, 0, 0], 1);
    }

    #[test]
    fn mac_counter_counts_convolutions() {
        let device = Default::default();
        let x = Tensor::<B, 5>::zeros([2, 4, 1, 8, 8], &device);
        let w = Tensor::<B, 5>::zeros([3, 4, 1, 3, 3], &device);
        let (_, macs) = count_macs(|| conv(x, w, None, [1, 1, 1], [0, 1, 1], 1));
        assert_eq!(macs, 2 * 3 * 64 * 4 * 9);
    }

    #[test]
    fn upsample2_matches_matrix_resize() {
        let device = Default::default();
        let x = Tensor::<B, 5>::random([1, 2, 3, 4, 5], Distribution::Normal(0.0, 1.0), &device);
        for dim in 2..5 {
            let n = x.dims()[dim];
            let a = to_vec_f64(upsample2_axis(x.clone(), dim));
            let b = to_vec_f64(resize_axis_matrix(x.clone(), dim, 2 * n));
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn channel_softmax_matches_direct_formula() {
        let x = Tensor::<B, 5>::random([2, 4, 1, 3, 2], Distribution::Normal(0.0, 5.0), &Default::default());
        let values = to_vec_f64(x.clone());
        let got = to_vec_f64(softmax_channels(x.clone()));
        let logs = to_vec_f64(log_softmax_channels(x));
        let plane = 6;
        for n in 0..2 {
            for p in 0..plane {
                let lane: Vec<f64> = (0..4).map(|c| values[(n * 4 + c) * plane + p]).collect();
                let norm: f64 = lane.iter().map(|v| v.exp()).sum();
                for c in 0..4 {
                    let i = (n * 4 + c) * plane + p;
                    assert!((got[i] - lane[c].exp() / norm).abs() < 1e-12);
                    assert!((logs[i] - (lane[c] - norm.ln())).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn linear_taps_match_half_pixel_convention() {
        // 2 -> 4: output sample 1 sits at source 0.25.
        let taps = linear_taps(2, 4);
        assert_eq!(taps[0], (0, 1, 0.0));
        assert_eq!(taps[1], (0, 1, 0.25));
        assert_eq!(taps[2], (0, 1, 0.75));
        assert_eq!(taps[3], (1, 1, 0.0));
    }

    #[test]
    fn pad_zeros_grows_each_axis() {
        let device = Default::default();
        let x = Tensor::<B, 5>::ones([1, 1, 2, 2, 2], &device);
        let y = pad_zeros(x, [1, 0, 2], [0, 1, 0]);
        assert_eq!(y.dims(), [1, 1, 4, 3, 6]);
        assert_eq!(y.sum().into_scalar(), 8.0);
    }
}
