//! Central finite-difference validation of the analytic gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::imaging::{BBox, GrayImage};
use crate::net::tensor::Tensor;
use crate::net::{Gradients, ModelParams};

/// Negative-control switch: corrupt a chosen backward pass and confirm the
/// check reports it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultInjection {
    None,
    /// Flip the sign of every convolution kernel gradient.
    FlipConvKernelGrad,
}

const FD_STEP: f64 = 1e-5;

/// Compare analytic gradients against central finite differences on a random
/// subset of at least `samples_per_tensor` parameters per tensor (all of them
/// for smaller tensors). Returns the maximum relative error
/// `|a - f| / max(1e-8, |a| + |f|)`.
pub fn grad_check(
    params: &ModelParams,
    tile: &GrayImage,
    rois: &[BBox],
    targets: &Tensor,
    samples_per_tensor: usize,
    seed: u64,
    fault: FaultInjection,
) -> Result<f64> {
    let (_, mut grads) = params.forward_backward(tile, rois, targets)?;
    if fault == FaultInjection::FlipConvKernelGrad {
        for g in &mut grads.conv_kernels {
            for v in &mut g.data {
                *v = -*v;
            }
        }
    }

    let mut work = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;

    let n_conv = params.conv_kernels.len();
    let n_fc = params.fc_weights.len();
    for layer in 0..n_conv {
        let n = params.conv_kernels[layer].numel();
        for idx in pick_indices(&mut rng, n, samples_per_tensor) {
            let a = grads.conv_kernels[layer].data[idx];
            let f = fd(&mut work, tile, rois, targets, |p| &mut p.conv_kernels[layer].data[idx])?;
            max_rel = max_rel.max(rel_err(a, f));
        }
        let n = params.conv_bias[layer].len();
        for idx in pick_indices(&mut rng, n, samples_per_tensor) {
            let a = grads.conv_bias[layer][idx];
            let f = fd(&mut work, tile, rois, targets, |p| &mut p.conv_bias[layer][idx])?;
            max_rel = max_rel.max(rel_err(a, f));
        }
    }
    for layer in 0..n_fc {
        let n = params.fc_weights[layer].numel();
        for idx in pick_indices(&mut rng, n, samples_per_tensor) {
            let a = grads.fc_weights[layer].data[idx];
            let f = fd(&mut work, tile, rois, targets, |p| &mut p.fc_weights[layer].data[idx])?;
            max_rel = max_rel.max(rel_err(a, f));
        }
        let n = params.fc_bias[layer].len();
        for idx in pick_indices(&mut rng, n, samples_per_tensor) {
            let a = grads.fc_bias[layer][idx];
            let f = fd(&mut work, tile, rois, targets, |p| &mut p.fc_bias[layer][idx])?;
            max_rel = max_rel.max(rel_err(a, f));
        }
    }
    Ok(max_rel)
}

fn fd(
    work: &mut ModelParams,
    tile: &GrayImage,
    rois: &[BBox],
    targets: &Tensor,
    slot: impl Fn(&mut ModelParams) -> &mut f64,
) -> Result<f64> {
    let orig = *slot(work);
    *slot(work) = orig + FD_STEP;
    let plus = work.batch_loss(tile, rois, targets)?;
    *slot(work) = orig - FD_STEP;
    let minus = work.batch_loss(tile, rois, targets)?;
    *slot(work) = orig;
    Ok((plus - minus) / (2.0 * FD_STEP))
}

fn rel_err(a: f64, f: f64) -> f64 {
    (a - f).abs() / (a.abs() + f.abs()).max(1e-8)
}

fn pick_indices(rng: &mut ChaCha8Rng, len: usize, want: usize) -> Vec<usize> {
    if len <= want {
        (0..len).collect()
    } else {
        rand::seq::index::sample(rng, len, want).into_vec()
    }
}

/// Gradients of a model whose head and trunk are empty of nonlinearities do
/// not need sampling tricks; exposed for the linear-only sanity check.
pub fn gradients_for(params: &ModelParams, tile: &GrayImage, rois: &[BBox], targets: &Tensor) -> Result<Gradients> {
    params.forward_backward(tile, rois, targets).map(|(_, g)| g)
}
