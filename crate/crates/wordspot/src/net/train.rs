//! Training loop: page tiling, IoU-banded minibatch sampling, SGD with a
//! stepped learning-rate schedule. The loop mutates parameters on a single
//! thread so a fixed seed reproduces runs bit for bit.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::GroundTruthWord;
use crate::imaging::{BBox, GrayImage};
use crate::net::tensor::Tensor;
use crate::net::{ArchConfig, ModelParams};
use crate::phoc::{encode_string, PhocConfig};
use crate::proposals::{iou, CandidateRecord};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_step: usize,
    pub lr_gamma: f64,
    pub iterations: usize,
    pub batch_rois: usize,
    /// Minimum fraction of the batch holding valid text regions.
    pub positive_fraction: f64,
    /// A candidate is a text sample above this IoU with some ground-truth
    /// word, background below `iou_bg`, and discarded in between.
    pub iou_pos: f64,
    pub iou_bg: f64,
    pub tile_w: usize,
    pub tile_h: usize,
    pub tile_overlap: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            lr_step: 1000,
            lr_gamma: 0.9,
            iterations: 30_000,
            batch_rois: 128,
            positive_fraction: 0.6,
            iou_pos: 0.5,
            iou_bg: 0.2,
            tile_w: 600,
            tile_h: 1000,
            tile_overlap: 100,
            seed: 0,
        }
    }
}

/// Stepped geometric decay: `lr0 * gamma^(iter / lr_step)`.
pub fn lr_schedule(iter: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.lr_gamma.powi((iter / cfg.lr_step) as i32)
}

/// A tile crop and its page-space offset.
#[derive(Debug, Clone)]
pub struct PageTile {
    pub image: GrayImage,
    pub offset: (u32, u32),
}

/// Cut a page into overlapping tiles; the final tile in each direction is
/// clamped to the image edge. Pages smaller than the tile yield one tile.
pub fn tile_page(page: &GrayImage, cfg: &TrainConfig) -> Vec<PageTile> {
    let tw = cfg.tile_w.min(page.width());
    let th = cfg.tile_h.min(page.height());
    let positions = |extent: usize, tile: usize| -> Vec<usize> {
        let stride = tile.saturating_sub(cfg.tile_overlap).max(1);
        let mut out = vec![0usize];
        let mut x = 0usize;
        while x + tile < extent {
            x = (x + stride).min(extent - tile);
            out.push(x);
        }
        out
    };
    let xs = positions(page.width(), tw);
    let ys = positions(page.height(), th);
    let mut tiles = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            let bbox = BBox::new(x as u32, y as u32, tw as u32, th as u32);
            tiles.push(PageTile {
                image: page.crop(&bbox).expect("tile grid lies within the page"),
                offset: (x as u32, y as u32),
            });
        }
    }
    tiles
}

/// Assign each box to the tile that fully contains it, preferring the tile
/// whose centre is nearest the box centre (lowest tile id on ties). Returns
/// per-tile lists of (original index, tile-local box) plus the count of boxes
/// contained in no tile.
pub fn assign_rois_to_tiles(
    rois: &[BBox],
    tiles: &[PageTile],
) -> (Vec<Vec<(usize, BBox)>>, usize) {
    let mut per_tile: Vec<Vec<(usize, BBox)>> = vec![Vec::new(); tiles.len()];
    let mut dropped = 0usize;
    for (ri, roi) in rois.iter().enumerate() {
        let (cx, cy) = roi.center();
        let mut best: Option<(usize, f64)> = None;
        for (ti, tile) in tiles.iter().enumerate() {
            let tile_box = BBox::new(
                tile.offset.0,
                tile.offset.1,
                tile.image.width() as u32,
                tile.image.height() as u32,
            );
            if !tile_box.contains(roi) {
                continue;
            }
            let (tx, ty) = tile_box.center();
            let d = (tx - cx).powi(2) + (ty - cy).powi(2);
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((ti, d));
            }
        }
        match best {
            Some((ti, _)) => {
                let local = BBox::new(
                    roi.x - tiles[ti].offset.0,
                    roi.y - tiles[ti].offset.1,
                    roi.w,
                    roi.h,
                );
                per_tile[ti].push((ri, local));
            }
            None => dropped += 1,
        }
    }
    (per_tile, dropped)
}

/// One tile's labelled sampling pool.
pub struct TrainTile {
    pub image: GrayImage,
    /// Text regions (tile-local box, attribute target of the best-matching
    /// ground-truth transcription).
    pub pos: Vec<(BBox, Vec<f64>)>,
    /// Background regions; their target is the all-zero vector.
    pub bg: Vec<BBox>,
}

pub struct TrainingSet {
    pub tiles: Vec<TrainTile>,
    pub dropped_rois: usize,
    pub input_mean: f64,
    pub phoc_dim: usize,
}

/// Label candidates against ground truth, tile the pages and build sampling
/// pools. Candidates between the background and text IoU bands are discarded.
pub fn build_training_set(
    pages: &[(String, GrayImage)],
    gt: &[GroundTruthWord],
    candidates: &[CandidateRecord],
    phoc_cfg: &PhocConfig,
    cfg: &TrainConfig,
) -> Result<TrainingSet> {
    let phoc_dim = phoc_cfg.dimension();
    let mut total = 0.0f64;
    let mut count = 0usize;
    for (_, page) in pages {
        total += page.pixels().iter().map(|&p| p as f64 / 255.0).sum::<f64>();
        count += page.pixels().len();
    }
    let input_mean = if count > 0 { total / count as f64 } else { 0.0 };

    let mut tiles_out = Vec::new();
    let mut dropped = 0usize;
    for (page_id, page) in pages {
        let page_gt: Vec<&GroundTruthWord> = gt.iter().filter(|w| &w.page_id == page_id).collect();
        let page_cands: Vec<&CandidateRecord> =
            candidates.iter().filter(|c| &c.page_id == page_id).collect();
        if page_cands.is_empty() {
            continue;
        }

        // page-space labels first, tile assignment second
        let mut labels: Vec<Option<Option<Vec<f64>>>> = Vec::with_capacity(page_cands.len());
        for cand in &page_cands {
            let bbox = cand.bbox();
            let best = page_gt
                .iter()
                .map(|w| (iou(&bbox, &w.bbox), *w))
                .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let label = match best {
                Some((best_iou, word)) if best_iou > cfg.iou_pos => {
                    Some(Some(encode_string(&word.transcription, phoc_cfg)?.values))
                }
                Some((best_iou, _)) if best_iou >= cfg.iou_bg => None, // discarded band
                _ => Some(None),                                      // background
            };
            labels.push(label);
        }

        let boxes: Vec<BBox> = page_cands.iter().map(|c| c.bbox()).collect();
        let tiles = tile_page(page, cfg);
        let (per_tile, page_dropped) = assign_rois_to_tiles(&boxes, &tiles);
        dropped += page_dropped;
        for (tile, assigned) in tiles.into_iter().zip(per_tile) {
            let mut pos = Vec::new();
            let mut bg = Vec::new();
            for (orig, local) in assigned {
                match &labels[orig] {
                    Some(Some(target)) => pos.push((local, target.clone())),
                    Some(None) => bg.push(local),
                    None => {}
                }
            }
            tiles_out.push(TrainTile { image: tile.image, pos, bg });
        }
    }
    Ok(TrainingSet { tiles: tiles_out, dropped_rois: dropped, input_mean, phoc_dim })
}

/// Sample a minibatch from one tile: at least
/// `ceil(positive_fraction * batch_rois)` text regions, the remainder
/// background (without replacement while the pool lasts). Returns `None`
/// when the tile has no text regions, signalling the caller to pick another
/// tile.
pub fn sample_minibatch(
    tile: &TrainTile,
    phoc_dim: usize,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Option<(Vec<BBox>, Tensor)> {
    if tile.pos.is_empty() {
        return None;
    }
    let n_pos = ((cfg.positive_fraction * cfg.batch_rois as f64).ceil() as usize)
        .min(cfg.batch_rois)
        .max(1);
    let n_bg = if tile.bg.is_empty() { 0 } else { cfg.batch_rois - n_pos };
    let n_pos = cfg.batch_rois - n_bg;

    let pick = |rng: &mut ChaCha8Rng, len: usize, want: usize| -> Vec<usize> {
        if want <= len {
            rand::seq::index::sample(rng, len, want).into_vec()
        } else {
            (0..want).map(|_| rng.random_range(0..len)).collect()
        }
    };

    let mut rois = Vec::with_capacity(cfg.batch_rois);
    let mut targets = Tensor::zeros(&[cfg.batch_rois, phoc_dim]);
    for (row, idx) in pick(rng, tile.pos.len(), n_pos).into_iter().enumerate() {
        let (bbox, target) = &tile.pos[idx];
        rois.push(*bbox);
        targets.row_mut(row).copy_from_slice(target);
    }
    for idx in pick(rng, tile.bg.len(), n_bg) {
        rois.push(tile.bg[idx]);
        // background target stays all-zero
    }
    Some((rois, targets))
}

/// End-to-end SGD training. `on_iter` observes `(iteration, loss, lr)` every
/// iteration; the returned trace holds the per-iteration batch loss.
pub fn train(
    pages: &[(String, GrayImage)],
    gt: &[GroundTruthWord],
    candidates: &[CandidateRecord],
    phoc_cfg: &PhocConfig,
    arch: ArchConfig,
    cfg: &TrainConfig,
    resume: Option<ModelParams>,
    mut on_iter: impl FnMut(usize, f64, f64),
) -> Result<(ModelParams, Vec<f64>)> {
    let set = build_training_set(pages, gt, candidates, phoc_cfg, cfg)?;
    if arch.output_dim != set.phoc_dim {
        return Err(Error::Config(format!(
            "architecture outputs {} attributes but the phoc config has {}",
            arch.output_dim, set.phoc_dim
        )));
    }
    let mut params = match resume {
        Some(p) => {
            if p.phoc_hash != phoc_cfg.hash() {
                return Err(Error::ConfigMismatch(
                    "resumed checkpoint was trained against a different phoc config".into(),
                ));
            }
            p
        }
        None => ModelParams::init(arch, phoc_cfg.hash(), set.input_mean, cfg.seed)?,
    };

    let eligible: Vec<usize> = set
        .tiles
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.pos.is_empty())
        .map(|(i, _)| i)
        .collect();
    if eligible.is_empty() {
        return Err(Error::DegenerateTraining(
            "no tile contains a text region above the positive IoU band".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations {
        let tile = &set.tiles[eligible[rng.random_range(0..eligible.len())]];
        let (rois, targets) = sample_minibatch(tile, set.phoc_dim, cfg, &mut rng)
            .expect("eligible tiles have positive pools");
        let lr = lr_schedule(iter, cfg);
        let (loss, grads) = params.forward_backward(&tile.image, &rois, &targets)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration: iter, lr });
        }
        params.sgd_step(&grads, lr);
        trace.push(loss);
        on_iter(iter, loss, lr);
    }
    Ok((params, trace))
}
