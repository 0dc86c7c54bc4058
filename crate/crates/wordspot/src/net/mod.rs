//! The region attribute network: a convolutional trunk shared across all
//! regions of a tile, ROI pooling onto a fixed grid, and a fully connected
//! head ending in sigmoids over PHOC attributes.
//!
//! The trunk runs once per tile; every candidate region is pooled from the
//! shared feature map, which is what makes whole-page embedding a single
//! forward pass per tile.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod roi;
pub mod tensor;
pub mod train;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{BBox, GrayImage};
use crate::net::layers::{
    conv2d, conv2d_backward, linear, linear_backward, maxpool2d, maxpool2d_backward, relu,
    relu_backward, sigmoid_tensor,
};
use crate::net::roi::{roi_pool, roi_pool_backward_into};
use crate::net::tensor::Tensor;

pub use crate::net::roi::RoiSpec;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrunkLayer {
    Conv { out_channels: usize, kernel: usize },
    Pool,
}

/// Network architecture descriptor. Convolutions use same-padding and are
/// followed by ReLU; pools are 2x2 stride 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub trunk: Vec<TrunkLayer>,
    /// ROI pooling grid as (rows, columns); word-shaped by default.
    pub roi_grid: (usize, usize),
    /// Hidden widths of the fully connected head.
    pub head_hidden: Vec<usize>,
    /// Output attribute count; must match the PHOC dimension in use.
    pub output_dim: usize,
    /// Canvas (height, width) that standalone word crops are padded to when
    /// the trunk is applied per candidate instead of per tile.
    pub min_input: (usize, usize),
}

impl ArchConfig {
    /// Desk-scale default: two 32-channel and two 64-channel 3x3 conv layers
    /// with two pools (stride 4), a 3x8 ROI grid and one 512-wide hidden
    /// layer.
    pub fn desk_default(output_dim: usize) -> Self {
        Self {
            trunk: vec![
                TrunkLayer::Conv { out_channels: 32, kernel: 3 },
                TrunkLayer::Conv { out_channels: 32, kernel: 3 },
                TrunkLayer::Pool,
                TrunkLayer::Conv { out_channels: 64, kernel: 3 },
                TrunkLayer::Conv { out_channels: 64, kernel: 3 },
                TrunkLayer::Pool,
            ],
            roi_grid: (3, 8),
            head_hidden: vec![512],
            output_dim,
            min_input: (64, 192),
        }
    }

    /// Product of pool strides.
    pub fn stride(&self) -> usize {
        self.trunk
            .iter()
            .map(|l| if matches!(l, TrunkLayer::Pool) { 2 } else { 1 })
            .product()
    }

    pub fn trunk_channels(&self) -> usize {
        self.trunk
            .iter()
            .rev()
            .find_map(|l| match l {
                TrunkLayer::Conv { out_channels, .. } => Some(*out_channels),
                TrunkLayer::Pool => None,
            })
            .unwrap_or(1)
    }

    pub fn head_input_dim(&self) -> usize {
        self.trunk_channels() * self.roi_grid.0 * self.roi_grid.1
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_dim == 0 || self.roi_grid.0 == 0 || self.roi_grid.1 == 0 {
            return Err(Error::Config("output dim and roi grid must be positive".into()));
        }
        for layer in &self.trunk {
            if let TrunkLayer::Conv { out_channels, kernel } = layer {
                if *out_channels == 0 || *kernel == 0 || kernel % 2 == 0 {
                    return Err(Error::Config(format!(
                        "conv layers need positive channels and odd kernels, got {out_channels}x{kernel}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// All learnable parameters plus the metadata needed to reuse them: the
/// architecture, input normalization mean, and the hash of the PHOC config
/// the output layer was trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: ArchConfig,
    pub conv_kernels: Vec<Tensor>,
    pub conv_bias: Vec<Vec<f64>>,
    pub fc_weights: Vec<Tensor>,
    pub fc_bias: Vec<Vec<f64>>,
    pub input_mean: f64,
    pub phoc_hash: String,
}

/// Parameter gradients, shaped like the corresponding fields of
/// [`ModelParams`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub conv_kernels: Vec<Tensor>,
    pub conv_bias: Vec<Vec<f64>>,
    pub fc_weights: Vec<Tensor>,
    pub fc_bias: Vec<Vec<f64>>,
}

pub(crate) struct TrunkCache {
    conv_inputs: Vec<Tensor>,
    conv_pre: Vec<Tensor>,
    pool_args: Vec<Vec<usize>>,
    pool_in_shapes: Vec<Vec<usize>>,
}

pub(crate) struct HeadCache {
    inputs: Vec<Tensor>,
    pre: Vec<Tensor>,
}

/// Normalize a tile to a single-channel tensor: intensities scaled to [0, 1]
/// and centred by the dataset mean.
pub fn tile_to_tensor(tile: &GrayImage, mean: f64) -> Tensor {
    let data = tile.pixels().iter().map(|&p| p as f64 / 255.0 - mean).collect();
    Tensor { shape: vec![1, tile.height(), tile.width()], data }
}

impl ModelParams {
    /// Initialize parameters: uniform in the Glorot range for weights, zero
    /// biases, and an all-zero final layer so that initial outputs are
    /// exactly 0.5.
    pub fn init(arch: ArchConfig, phoc_hash: String, input_mean: f64, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |shape: &[usize], fan_in: usize, fan_out: usize| -> Tensor {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let numel: usize = shape.iter().product();
            Tensor {
                shape: shape.to_vec(),
                data: (0..numel).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * limit).collect(),
            }
        };

        let mut conv_kernels = Vec::new();
        let mut conv_bias = Vec::new();
        let mut c_in = 1usize;
        for layer in &arch.trunk {
            if let TrunkLayer::Conv { out_channels, kernel } = layer {
                let shape = [*out_channels, c_in, *kernel, *kernel];
                let fan_in = c_in * kernel * kernel;
                let fan_out = out_channels * kernel * kernel;
                conv_kernels.push(glorot(&shape, fan_in, fan_out));
                conv_bias.push(vec![0.0; *out_channels]);
                c_in = *out_channels;
            }
        }

        let mut fc_weights = Vec::new();
        let mut fc_bias = Vec::new();
        let mut dims = vec![arch.head_input_dim()];
        dims.extend_from_slice(&arch.head_hidden);
        dims.push(arch.output_dim);
        for i in 0..dims.len() - 1 {
            let (f, g) = (dims[i], dims[i + 1]);
            let last = i + 1 == dims.len() - 1;
            let w = if last { Tensor::zeros(&[f, g]) } else { glorot(&[f, g], f, g) };
            fc_weights.push(w);
            fc_bias.push(vec![0.0; g]);
        }

        Ok(Self { arch, conv_kernels, conv_bias, fc_weights, fc_bias, input_mean, phoc_hash })
    }

    /// Probabilities for every region of a tile, one row per ROI, from a
    /// single trunk pass.
    pub fn forward(&self, tile: &GrayImage, rois: &[BBox]) -> Result<Tensor> {
        let input = tile_to_tensor(tile, self.input_mean);
        let (features, _) = self.forward_trunk(&input)?;
        let pooled = self.pool_rois(&features, rois)?;
        let (probs, _) = self.head_forward(&pooled)?;
        Ok(probs)
    }

    pub(crate) fn forward_trunk(&self, input: &Tensor) -> Result<(Tensor, TrunkCache)> {
        let mut cache = TrunkCache {
            conv_inputs: Vec::new(),
            conv_pre: Vec::new(),
            pool_args: Vec::new(),
            pool_in_shapes: Vec::new(),
        };
        let mut cur = input.clone();
        let mut conv_idx = 0;
        for layer in &self.arch.trunk {
            match layer {
                TrunkLayer::Conv { kernel, .. } => {
                    let pad = kernel / 2;
                    let pre = conv2d(&cur, &self.conv_kernels[conv_idx], &self.conv_bias[conv_idx], pad)?;
                    cache.conv_inputs.push(cur);
                    cur = relu(&pre);
                    cache.conv_pre.push(pre);
                    conv_idx += 1;
                }
                TrunkLayer::Pool => {
                    let (h, w) = (cur.shape[1], cur.shape[2]);
                    if h < 2 || w < 2 {
                        return Err(Error::InvalidShape(format!(
                            "tile too small to pool at {h}x{w}"
                        )));
                    }
                    cache.pool_in_shapes.push(cur.shape.clone());
                    let (pooled, args) = maxpool2d(&cur);
                    cache.pool_args.push(args);
                    cur = pooled;
                }
            }
        }
        Ok((cur, cache))
    }

    /// Pool every ROI from the shared features into one row each.
    fn pool_rois(&self, features: &Tensor, rois: &[BBox]) -> Result<Tensor> {
        let stride = self.arch.stride();
        let grid = self.arch.roi_grid;
        let dim = self.arch.head_input_dim();
        let rows = crate::par::map_items(rois, |roi| {
            roi_pool(features, roi, grid, stride).map(|(t, _)| t.data)
        });
        let mut x = Tensor::zeros(&[rois.len(), dim]);
        for (i, row) in rows.into_iter().enumerate() {
            match row {
                Ok(r) => x.row_mut(i).copy_from_slice(&r),
                Err(Error::InvalidRoi { reason, .. }) => {
                    return Err(Error::InvalidRoi { index: Some(i), reason })
                }
                Err(e) => return Err(e),
            }
        }
        Ok(x)
    }

    pub(crate) fn head_forward(&self, x: &Tensor) -> Result<(Tensor, HeadCache)> {
        let mut cache = HeadCache { inputs: Vec::new(), pre: Vec::new() };
        let mut cur = x.clone();
        let n_layers = self.fc_weights.len();
        for (i, (w, b)) in self.fc_weights.iter().zip(&self.fc_bias).enumerate() {
            let z = linear(&cur, w, b)?;
            cache.inputs.push(cur);
            if i + 1 < n_layers {
                cur = relu(&z);
                cache.pre.push(z);
            } else {
                cur = z;
            }
        }
        Ok((sigmoid_tensor(&cur), cache))
    }

    /// Batch loss for a tile: trunk once, ROIs pooled, summed per-ROI loss.
    pub fn batch_loss(&self, tile: &GrayImage, rois: &[BBox], targets: &Tensor) -> Result<f64> {
        let input = tile_to_tensor(tile, self.input_mean);
        let (features, _) = self.forward_trunk(&input)?;
        let pooled = self.pool_rois(&features, rois)?;
        let (probs, _) = self.head_forward(&pooled)?;
        let (loss, _) = loss::batch_phoc_loss(&probs, targets)?;
        Ok(loss)
    }

    /// Loss and parameter gradients for one training step. The backward pass
    /// accumulates serially so repeated runs are bit-identical.
    pub fn forward_backward(
        &self,
        tile: &GrayImage,
        rois: &[BBox],
        targets: &Tensor,
    ) -> Result<(f64, Gradients)> {
        let input = tile_to_tensor(tile, self.input_mean);
        let (features, tcache) = self.forward_trunk(&input)?;

        let stride = self.arch.stride();
        let grid = self.arch.roi_grid;
        let dim = self.arch.head_input_dim();
        let mut pooled = Tensor::zeros(&[rois.len(), dim]);
        let mut argmaxes = Vec::with_capacity(rois.len());
        for (i, roi) in rois.iter().enumerate() {
            let (t, args) = roi_pool(&features, roi, grid, stride).map_err(|e| match e {
                Error::InvalidRoi { reason, .. } => Error::InvalidRoi { index: Some(i), reason },
                other => other,
            })?;
            pooled.row_mut(i).copy_from_slice(&t.data);
            argmaxes.push(args);
        }

        let (probs, hcache) = self.head_forward(&pooled)?;
        let (total_loss, grad_logits) = loss::batch_phoc_loss(&probs, targets)?;

        // head backward
        let mut fc_w_grads = vec![Tensor::zeros(&[1]); self.fc_weights.len()];
        let mut fc_b_grads = vec![Vec::new(); self.fc_weights.len()];
        let mut grad = grad_logits;
        for li in (0..self.fc_weights.len()).rev() {
            let (gx, gw, gb) = linear_backward(&hcache.inputs[li], &self.fc_weights[li], &grad);
            fc_w_grads[li] = gw;
            fc_b_grads[li] = gb;
            grad = if li > 0 { relu_backward(&gx, &hcache.pre[li - 1]) } else { gx };
        }

        // scatter pooled-row gradients back onto the feature map
        let mut grad_features = Tensor::zeros(&features.shape);
        for (i, args) in argmaxes.iter().enumerate() {
            roi_pool_backward_into(&mut grad_features, grad.row(i), args);
        }

        // trunk backward
        let mut conv_k_grads = vec![Tensor::zeros(&[1]); self.conv_kernels.len()];
        let mut conv_b_grads = vec![Vec::new(); self.conv_kernels.len()];
        let mut gmap = grad_features;
        let mut conv_idx = self.conv_kernels.len();
        let mut pool_idx = tcache.pool_args.len();
        for layer in self.arch.trunk.iter().rev() {
            match layer {
                TrunkLayer::Pool => {
                    pool_idx -= 1;
                    gmap = maxpool2d_backward(
                        &gmap,
                        &tcache.pool_args[pool_idx],
                        &tcache.pool_in_shapes[pool_idx],
                    );
                }
                TrunkLayer::Conv { kernel, .. } => {
                    conv_idx -= 1;
                    let pad = kernel / 2;
                    let g_pre = relu_backward(&gmap, &tcache.conv_pre[conv_idx]);
                    let need_input_grad = conv_idx > 0;
                    let (gi, gk, gb) = conv2d_backward(
                        &tcache.conv_inputs[conv_idx],
                        &self.conv_kernels[conv_idx],
                        &g_pre,
                        pad,
                        need_input_grad,
                    )?;
                    conv_k_grads[conv_idx] = gk;
                    conv_b_grads[conv_idx] = gb;
                    if let Some(gi) = gi {
                        gmap = gi;
                    }
                }
            }
        }

        Ok((
            total_loss,
            Gradients {
                conv_kernels: conv_k_grads,
                conv_bias: conv_b_grads,
                fc_weights: fc_w_grads,
                fc_bias: fc_b_grads,
            },
        ))
    }

    /// Plain SGD update.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        for (k, g) in self.conv_kernels.iter_mut().zip(&grads.conv_kernels) {
            for (p, gv) in k.data.iter_mut().zip(&g.data) {
                *p -= lr * gv;
            }
        }
        for (b, g) in self.conv_bias.iter_mut().zip(&grads.conv_bias) {
            for (p, gv) in b.iter_mut().zip(g) {
                *p -= lr * gv;
            }
        }
        for (w, g) in self.fc_weights.iter_mut().zip(&grads.fc_weights) {
            for (p, gv) in w.data.iter_mut().zip(&g.data) {
                *p -= lr * gv;
            }
        }
        for (b, g) in self.fc_bias.iter_mut().zip(&grads.fc_bias) {
            for (p, gv) in b.iter_mut().zip(g) {
                *p -= lr * gv;
            }
        }
    }

    /// Run the trunk on one candidate crop padded to the declared minimum
    /// canvas, pooling the whole crop as a single region. This is the
    /// per-candidate baseline the shared pass is benchmarked against.
    pub fn forward_single_crop(&self, crop: &GrayImage) -> Result<Vec<f64>> {
        let (min_h, min_w) = self.arch.min_input;
        let h = crop.height().max(min_h);
        let w = crop.width().max(min_w);
        let mut canvas = GrayImage::filled(w, h, 255)?;
        let off_x = (w - crop.width()) / 2;
        let off_y = (h - crop.height()) / 2;
        for y in 0..crop.height() {
            for x in 0..crop.width() {
                canvas.set(off_x + x, off_y + y, crop.get(x, y));
            }
        }
        let whole = BBox::new(0, 0, w as u32, h as u32);
        let probs = self.forward(&canvas, &[whole])?;
        Ok(probs.row(0).to_vec())
    }
}
