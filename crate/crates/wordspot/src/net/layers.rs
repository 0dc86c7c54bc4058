//! Convolution, pooling, activation and affine layers with exact backward
//! passes. Convolutions are lowered to GEMM over column blocks so page-sized
//! tiles stay within a bounded scratch buffer.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::net::tensor::Tensor;

/// Output pixels per im2col block.
const COL_BLOCK: usize = 4096;

/// Cross-correlation with per-output-channel bias, zero padding `pad` on all
/// sides, stride 1. Kernels are shaped `(out, in, k, k)`.
pub fn conv2d(input: &Tensor, kernels: &Tensor, bias: &[f64], pad: usize) -> Result<Tensor> {
    let (c_in, h, w) = input.dims3();
    if kernels.shape.len() != 4 || kernels.shape[1] != c_in {
        return Err(Error::InvalidShape(format!(
            "kernels {:?} do not match input channels {c_in}",
            kernels.shape
        )));
    }
    let (c_out, k) = (kernels.shape[0], kernels.shape[2]);
    if kernels.shape[3] != k {
        return Err(Error::InvalidShape("only square kernels are supported".into()));
    }
    if bias.len() != c_out {
        return Err(Error::InvalidShape("bias length must equal output channels".into()));
    }
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::InvalidShape(format!(
            "kernel {k} does not fit {h}x{w} input with pad {pad}"
        )));
    }
    let oh = h + 2 * pad - k + 1;
    let ow = w + 2 * pad - k + 1;
    let ckk = c_in * k * k;
    let kmat = ArrayView2::from_shape((c_out, ckk), &kernels.data)
        .expect("kernel buffer matches shape");

    let mut out = Tensor::zeros(&[c_out, oh, ow]);
    let total = oh * ow;
    let mut cols = vec![0.0f64; ckk * COL_BLOCK.min(total)];
    let mut start = 0;
    while start < total {
        let block = COL_BLOCK.min(total - start);
        im2col(input, k, pad, ow, start, block, &mut cols);
        let cols_view = ArrayView2::from_shape((ckk, block), &cols[..ckk * block]).unwrap();
        let mut prod = Array2::<f64>::zeros((c_out, block));
        general_mat_mul(1.0, &kmat, &cols_view, 0.0, &mut prod);
        for o in 0..c_out {
            let row = prod.row(o);
            let dst = &mut out.data[o * total + start..o * total + start + block];
            for (d, v) in dst.iter_mut().zip(row.iter()) {
                *d = v + bias[o];
            }
        }
        start += block;
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, kernels and bias.
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
    pad: usize,
    need_grad_input: bool,
) -> Result<(Option<Tensor>, Tensor, Vec<f64>)> {
    let (c_in, h, w) = input.dims3();
    let (c_out, _, k, _) = (
        kernels.shape[0],
        kernels.shape[1],
        kernels.shape[2],
        kernels.shape[3],
    );
    let (go_c, oh, ow) = grad_out.dims3();
    if go_c != c_out {
        return Err(Error::InvalidShape("grad_out channels mismatch".into()));
    }
    let ckk = c_in * k * k;
    let total = oh * ow;
    let kmat = ArrayView2::from_shape((c_out, ckk), &kernels.data).unwrap();

    let mut grad_bias = vec![0.0f64; c_out];
    for o in 0..c_out {
        grad_bias[o] = grad_out.data[o * total..(o + 1) * total].iter().sum();
    }

    let mut grad_kernels = Array2::<f64>::zeros((c_out, ckk));
    let mut grad_input = need_grad_input.then(|| Tensor::zeros(&[c_in, h, w]));

    let mut cols = vec![0.0f64; ckk * COL_BLOCK.min(total)];
    let mut go_block = vec![0.0f64; c_out * COL_BLOCK.min(total)];
    let mut start = 0;
    while start < total {
        let block = COL_BLOCK.min(total - start);
        im2col(input, k, pad, ow, start, block, &mut cols);
        let cols_view = ArrayView2::from_shape((ckk, block), &cols[..ckk * block]).unwrap();
        for o in 0..c_out {
            go_block[o * block..(o + 1) * block]
                .copy_from_slice(&grad_out.data[o * total + start..o * total + start + block]);
        }
        let go_view = ArrayView2::from_shape((c_out, block), &go_block[..c_out * block]).unwrap();

        // dL/dK accumulates across blocks
        general_mat_mul(1.0, &go_view, &cols_view.t(), 1.0, &mut grad_kernels);

        if let Some(gi) = grad_input.as_mut() {
            let mut grad_cols = Array2::<f64>::zeros((ckk, block));
            general_mat_mul(1.0, &kmat.t(), &go_view, 0.0, &mut grad_cols);
            col2im_add(gi, k, pad, ow, start, block, grad_cols.as_slice().unwrap());
        }
        start += block;
    }

    let grad_kernels = Tensor::from_vec(
        &[c_out, c_in, k, k],
        grad_kernels.into_raw_vec_and_offset().0,
    )?;
    Ok((grad_input, grad_kernels, grad_bias))
}

/// Fill `cols` with the im2col patch matrix for output pixels
/// `start..start+block` (row-major over the output), one column per pixel.
fn im2col(
    input: &Tensor,
    k: usize,
    pad: usize,
    ow: usize,
    start: usize,
    block: usize,
    cols: &mut [f64],
) {
    let (c_in, h, w) = input.dims3();
    for ci in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * block..(row + 1) * block];
                for (b, d) in dst.iter_mut().enumerate() {
                    let p = start + b;
                    let oy = p / ow;
                    let ox = p % ow;
                    let iy = oy + ky;
                    let ix = ox + kx;
                    *d = if iy < pad || ix < pad || iy - pad >= h || ix - pad >= w {
                        0.0
                    } else {
                        input.data[(ci * h + (iy - pad)) * w + (ix - pad)]
                    };
                }
            }
        }
    }
}

/// Scatter-add the column gradients back onto the input gradient.
fn col2im_add(
    grad_input: &mut Tensor,
    k: usize,
    pad: usize,
    ow: usize,
    start: usize,
    block: usize,
    grad_cols: &[f64],
) {
    let (c_in, h, w) = grad_input.dims3();
    for ci in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &grad_cols[row * block..(row + 1) * block];
                for (b, &g) in src.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let p = start + b;
                    let oy = p / ow;
                    let ox = p % ow;
                    let iy = oy + ky;
                    let ix = ox + kx;
                    if iy >= pad && ix >= pad && iy - pad < h && ix - pad < w {
                        grad_input.data[(ci * h + (iy - pad)) * w + (ix - pad)] += g;
                    }
                }
            }
        }
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// Gradient passes where the pre-activation was strictly positive.
pub fn relu_backward(grad_out: &Tensor, pre: &Tensor) -> Tensor {
    Tensor {
        shape: grad_out.shape.clone(),
        data: grad_out
            .data
            .iter()
            .zip(&pre.data)
            .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
            .collect(),
    }
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
/// Returns the pooled map and the flat input index of each maximum (first
/// occurrence wins ties).
pub fn maxpool2d(input: &Tensor) -> (Tensor, Vec<usize>) {
    let (c, h, w) = input.dims3();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let mut argmax = vec![0usize; c * oh * ow];
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = (ci * h + oy * 2 + dy) * w + ox * 2 + dx;
                        if input.data[idx] > best {
                            best = input.data[idx];
                            best_idx = idx;
                        }
                    }
                }
                let oidx = (ci * oh + oy) * ow + ox;
                out.data[oidx] = best;
                argmax[oidx] = best_idx;
            }
        }
    }
    (out, argmax)
}

pub fn maxpool2d_backward(grad_out: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Tensor {
    let mut grad_input = Tensor::zeros(input_shape);
    for (g, &idx) in grad_out.data.iter().zip(argmax) {
        grad_input.data[idx] += g;
    }
    grad_input
}

/// Affine map of row vectors: `(N, F) x (F, G) + bias`.
pub fn linear(x: &Tensor, weights: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let (n, f) = x.dims2();
    let (wf, g) = weights.dims2();
    if wf != f || bias.len() != g {
        return Err(Error::InvalidShape(format!(
            "linear: input {n}x{f} incompatible with weights {wf}x{g} / bias {}",
            bias.len()
        )));
    }
    let xm = ArrayView2::from_shape((n, f), &x.data).unwrap();
    let wm = ArrayView2::from_shape((f, g), &weights.data).unwrap();
    let mut out = Array2::<f64>::zeros((n, g));
    general_mat_mul(1.0, &xm, &wm, 0.0, &mut out);
    let mut out = Tensor::from_vec(&[n, g], out.into_raw_vec_and_offset().0)?;
    for r in 0..n {
        for (v, b) in out.row_mut(r).iter_mut().zip(bias) {
            *v += b;
        }
    }
    Ok(out)
}

pub fn linear_backward(
    x: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Vec<f64>) {
    let (n, f) = x.dims2();
    let (_, g) = weights.dims2();
    let xm = ArrayView2::from_shape((n, f), &x.data).unwrap();
    let wm = ArrayView2::from_shape((f, g), &weights.data).unwrap();
    let gm = ArrayView2::from_shape((n, g), &grad_out.data).unwrap();

    let mut grad_x = Array2::<f64>::zeros((n, f));
    general_mat_mul(1.0, &gm, &wm.t(), 0.0, &mut grad_x);
    let mut grad_w = Array2::<f64>::zeros((f, g));
    general_mat_mul(1.0, &xm.t(), &gm, 0.0, &mut grad_w);
    let mut grad_b = vec![0.0f64; g];
    for r in 0..n {
        for (gb, v) in grad_b.iter_mut().zip(grad_out.row(r)) {
            *gb += v;
        }
    }
    (
        Tensor { shape: vec![n, f], data: grad_x.into_raw_vec_and_offset().0 },
        Tensor { shape: vec![f, g], data: grad_w.into_raw_vec_and_offset().0 },
        grad_b,
    )
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_tensor(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| sigmoid(v)).collect(),
    }
}
