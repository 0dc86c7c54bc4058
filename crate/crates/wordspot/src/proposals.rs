//! Candidate word regions: runs of consecutive connected components per line,
//! plus the linear word/non-word filter that prunes them.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{BBox, BinaryImage, ConnectedComponent, LineBand};

/// A run of consecutive components on one line. `first_cc`/`last_cc` index
/// the line's sorted member list; `score` is the filter margin once scored.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRegion {
    pub bbox: BBox,
    pub line_id: usize,
    pub first_cc: usize,
    pub last_cc: usize,
    pub score: Option<f64>,
}

/// Strip densities plus normalized height and width; length is P + Q + 2.
#[derive(Debug, Clone)]
pub struct FilterFeatures {
    pub column_densities: Vec<f64>,
    pub row_densities: Vec<f64>,
    pub norm_height: f64,
    pub norm_width: f64,
}

impl FilterFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.column_densities.len() + self.row_densities.len() + 2);
        v.extend_from_slice(&self.column_densities);
        v.extend_from_slice(&self.row_densities);
        v.push(self.norm_height);
        v.push(self.norm_width);
        v
    }

    pub fn len(&self) -> usize {
        self.column_densities.len() + self.row_densities.len() + 2
    }
}

/// Strip counts and the normalization statistics gathered from training data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub p: usize,
    pub q: usize,
    pub avg_height: f64,
    pub avg_width: f64,
}

/// Linear word/non-word classifier over [`FilterFeatures`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearFilter {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub features: FeatureConfig,
}

impl LinearFilter {
    pub fn score(&self, feats: &FilterFeatures) -> f64 {
        let x = feats.to_vec();
        debug_assert_eq!(x.len(), self.weights.len());
        self.weights.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

/// Hinge-loss training settings. `batch_size` 0 means full-batch gradients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterTrainConfig {
    pub reg: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FilterTrainConfig {
    fn default() -> Self {
        Self { reg: 1e-4, epochs: 500, lr: 0.05, batch_size: 0, seed: 0 }
    }
}

/// Members of a band ordered left to right by the x of the top-left corner;
/// ties fall back to y, then id.
pub fn sort_line_members(band: &LineBand, ccs: &[ConnectedComponent]) -> Vec<usize> {
    let mut members = band.members.clone();
    members.sort_by_key(|&id| (ccs[id].bbox.x, ccs[id].bbox.y, id));
    members
}

/// Emit every run of up to `max_run` consecutive sorted members per band.
/// Exact duplicate boxes across bands are dropped, keeping the first.
pub fn enumerate_candidates(
    bands: &[LineBand],
    ccs: &[ConnectedComponent],
    max_run: usize,
) -> Vec<CandidateRegion> {
    debug_assert!(max_run >= 1);
    let mut seen: HashSet<BBox> = HashSet::new();
    let mut out = Vec::new();
    for band in bands {
        if band.members.is_empty() {
            continue;
        }
        let members = sort_line_members(band, ccs);
        for i in 0..members.len() {
            let mut bbox = ccs[members[i]].bbox;
            for j in i..members.len() {
                if j - i + 1 > max_run {
                    break;
                }
                bbox = bbox.union(&ccs[members[j]].bbox);
                if seen.insert(bbox) {
                    out.push(CandidateRegion {
                        bbox,
                        line_id: band.id,
                        first_cc: i,
                        last_cc: j,
                        score: None,
                    });
                }
            }
        }
    }
    out
}

/// Intersection over union of two boxes, using continuous areas.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.right().min(b.right()) as f64 - a.x.max(b.x) as f64).max(0.0);
    let iy = (a.bottom().min(b.bottom()) as f64 - a.y.max(b.y) as f64).max(0.0);
    let inter = ix * iy;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() as f64 + b.area() as f64 - inter;
    inter / union
}

/// Pixel densities of P column strips and Q row strips over the region, plus
/// height and width normalized by the training averages. Pixel column `c`
/// belongs to strip `floor(c * P / w)`; empty strips (P > w) read as zero.
pub fn candidate_features(
    bbox: &BBox,
    bin: &BinaryImage,
    cfg: &FeatureConfig,
) -> Result<FilterFeatures> {
    if bbox.right() as usize > bin.width() || bbox.bottom() as usize > bin.height() {
        return Err(Error::InvalidInput(format!(
            "candidate {bbox:?} lies outside the {}x{} page",
            bin.width(),
            bin.height()
        )));
    }
    let (w, h) = (bbox.w as usize, bbox.h as usize);
    let mut col_counts = vec![0usize; cfg.p];
    let mut col_areas = vec![0usize; cfg.p];
    let mut row_counts = vec![0usize; cfg.q];
    let mut row_areas = vec![0usize; cfg.q];
    for dy in 0..h {
        let row_strip = dy * cfg.q / h;
        for dx in 0..w {
            let col_strip = dx * cfg.p / w;
            col_areas[col_strip] += 1;
            row_areas[row_strip] += 1;
            if bin.get(bbox.x as usize + dx, bbox.y as usize + dy) {
                col_counts[col_strip] += 1;
                row_counts[row_strip] += 1;
            }
        }
    }
    let density = |counts: &[usize], areas: &[usize]| {
        counts
            .iter()
            .zip(areas)
            .map(|(&c, &a)| if a == 0 { 0.0 } else { c as f64 / a as f64 })
            .collect()
    };
    Ok(FilterFeatures {
        column_densities: density(&col_counts, &col_areas),
        row_densities: density(&row_counts, &row_areas),
        norm_height: bbox.h as f64 / cfg.avg_height,
        norm_width: bbox.w as f64 / cfg.avg_width,
    })
}

/// Label candidates against ground-truth boxes by max IoU: `Some(1.0)` at or
/// above `pos_thr`, `Some(-1.0)` below `neg_thr`, `None` in between
/// (skipped).
pub fn label_by_iou(
    cands: &[CandidateRegion],
    gt: &[BBox],
    pos_thr: f64,
    neg_thr: f64,
) -> Vec<Option<f64>> {
    cands
        .iter()
        .map(|c| {
            let best = gt.iter().map(|g| iou(&c.bbox, g)).fold(0.0f64, f64::max);
            if best >= pos_thr {
                Some(1.0)
            } else if best < neg_thr {
                Some(-1.0)
            } else {
                None
            }
        })
        .collect()
}

/// Fit the linear classifier by gradient descent on L2-regularized average
/// hinge loss. Full-batch by default; a positive `batch_size` switches to
/// seeded shuffled minibatches.
pub fn train_filter(
    samples: &[(FilterFeatures, f64)],
    feat_cfg: &FeatureConfig,
    cfg: &FilterTrainConfig,
) -> Result<LinearFilter> {
    if samples.is_empty() {
        return Err(Error::DegenerateTraining("no samples".into()));
    }
    let has_pos = samples.iter().any(|(_, y)| *y > 0.0);
    let has_neg = samples.iter().any(|(_, y)| *y < 0.0);
    if !has_pos || !has_neg {
        return Err(Error::DegenerateTraining(
            "both classes are required to fit the filter".into(),
        ));
    }
    let dim = samples[0].0.len();
    let xs: Vec<Vec<f64>> = samples.iter().map(|(f, _)| f.to_vec()).collect();
    let ys: Vec<f64> = samples.iter().map(|(_, y)| *y).collect();

    let mut w = vec![0.0f64; dim];
    let mut b = 0.0f64;
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batch = if cfg.batch_size == 0 { xs.len() } else { cfg.batch_size };

    for _ in 0..cfg.epochs {
        if cfg.batch_size != 0 {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            let mut grad_w = vec![0.0f64; dim];
            let mut grad_b = 0.0f64;
            for &i in chunk {
                let margin = ys[i] * (dot(&w, &xs[i]) + b);
                if margin < 1.0 {
                    for (g, x) in grad_w.iter_mut().zip(&xs[i]) {
                        *g -= ys[i] * x;
                    }
                    grad_b -= ys[i];
                }
            }
            let inv = 1.0 / chunk.len() as f64;
            for (wj, gj) in w.iter_mut().zip(&grad_w) {
                *wj -= cfg.lr * (cfg.reg * *wj + gj * inv);
            }
            b -= cfg.lr * grad_b * inv;
        }
    }

    Ok(LinearFilter { weights: w, bias: b, features: feat_cfg.clone() })
}

/// Average hinge loss of a filter over labelled samples (no regularizer).
pub fn hinge_loss(filter: &LinearFilter, samples: &[(FilterFeatures, f64)]) -> f64 {
    let total: f64 = samples
        .iter()
        .map(|(f, y)| (1.0 - y * filter.score(f)).max(0.0))
        .sum();
    total / samples.len() as f64
}

/// Score all candidates and keep those at or above the threshold, preserving
/// order.
pub fn filter_candidates(
    cands: &[CandidateRegion],
    model: &LinearFilter,
    bin: &BinaryImage,
    threshold: f64,
) -> Result<Vec<CandidateRegion>> {
    let mut kept = Vec::new();
    for cand in cands {
        let feats = candidate_features(&cand.bbox, bin, &model.features)?;
        let score = model.score(&feats);
        if score >= threshold {
            let mut c = cand.clone();
            c.score = Some(score);
            kept.push(c);
        }
    }
    Ok(kept)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One serialized candidate, as emitted by `propose` (JSON lines).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CandidateRecord {
    pub page_id: String,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl CandidateRecord {
    pub fn new(page_id: &str, region: &CandidateRegion) -> Self {
        Self {
            page_id: page_id.to_string(),
            x: region.bbox.x,
            y: region.bbox.y,
            w: region.bbox.w,
            h: region.bbox.h,
            score: region.score,
        }
    }

    pub fn bbox(&self) -> BBox {
        BBox::new(self.x, self.y, self.w, self.h)
    }
}

pub fn write_candidates_jsonl(mut out: impl Write, records: &[CandidateRecord]) -> Result<()> {
    for rec in records {
        let line = serde_json::to_string(rec).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(())
}

pub fn read_candidates_jsonl(input: impl BufRead) -> Result<Vec<CandidateRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Format(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CandidateRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("candidate line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
