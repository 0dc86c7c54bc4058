//! Region-of-interest max pooling from a shared feature map onto a fixed
//! grid, with exact gradient routing.

use crate::error::{Error, Result};
use crate::imaging::BBox;
use crate::net::tensor::Tensor;

/// A region to pool, in input-image pixel coordinates of its tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoiSpec {
    pub bbox: BBox,
    pub tile_id: usize,
}

/// Map an input-space box onto feature-map coordinates for trunk stride `s`:
/// origin floors, extent ceils, and both are clamped to at least one cell.
pub fn map_roi_to_feature(
    bbox: &BBox,
    stride: usize,
    feat_h: usize,
    feat_w: usize,
) -> Result<(usize, usize, usize, usize)> {
    let fx = bbox.x as usize / stride;
    let fy = bbox.y as usize / stride;
    let fx2 = ((bbox.right() as usize) + stride - 1) / stride;
    let fy2 = ((bbox.bottom() as usize) + stride - 1) / stride;
    let fw = fx2.saturating_sub(fx).max(1);
    let fh = fy2.saturating_sub(fy).max(1);
    if fx >= feat_w || fy >= feat_h {
        return Err(Error::InvalidRoi {
            index: None,
            reason: format!("box {bbox:?} maps outside the {feat_h}x{feat_w} feature map"),
        });
    }
    let fw = fw.min(feat_w - fx);
    let fh = fh.min(feat_h - fy);
    Ok((fx, fy, fw, fh))
}

/// Max-pool the mapped region onto an `(grid_h, grid_w)` grid, each channel
/// independently. Bin `(i, j)` covers feature rows
/// `[floor(i*h'/H), ceil((i+1)*h'/H))` and the analogous columns, which is
/// never empty. Returns the pooled tensor and flat argmax indices.
pub fn roi_pool(
    features: &Tensor,
    roi: &BBox,
    grid: (usize, usize),
    stride: usize,
) -> Result<(Tensor, Vec<usize>)> {
    let (c, fh_map, fw_map) = features.dims3();
    let (fx, fy, fw, fh) = map_roi_to_feature(roi, stride, fh_map, fw_map)?;
    let (gh, gw) = grid;
    let mut out = Tensor::zeros(&[c, gh, gw]);
    let mut argmax = vec![0usize; c * gh * gw];
    for ci in 0..c {
        for i in 0..gh {
            let y0 = fy + i * fh / gh;
            let y1 = fy + ((i + 1) * fh).div_ceil(gh);
            for j in 0..gw {
                let x0 = fx + j * fw / gw;
                let x1 = fx + ((j + 1) * fw).div_ceil(gw);
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let idx = (ci * fh_map + y) * fw_map + x;
                        if features.data[idx] > best {
                            best = features.data[idx];
                            best_idx = idx;
                        }
                    }
                }
                let oidx = (ci * gh + i) * gw + j;
                out.data[oidx] = best;
                argmax[oidx] = best_idx;
            }
        }
    }
    Ok((out, argmax))
}

/// Route each bin's gradient back to its argmax, accumulating into a feature
/// gradient of the given shape.
pub fn roi_pool_backward_into(grad_features: &mut Tensor, grad_out: &[f64], argmax: &[usize]) {
    for (&g, &idx) in grad_out.iter().zip(argmax) {
        grad_features.data[idx] += g;
    }
}
