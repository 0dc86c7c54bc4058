//! Embedding store, nearest-neighbour queries and the retrieval evaluation
//! protocol (greedy IoU matching, non-interpolated average precision), plus
//! the shared-pass versus per-candidate timing comparison.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::dataset::{Dataset, GroundTruthWord};
use crate::imaging::{BBox, GrayImage};
use crate::net::train::{assign_rois_to_tiles, tile_page, TrainConfig};
use crate::net::ModelParams;
use crate::phoc::{encode_string, PhocConfig};
use crate::proposals::{iou, CandidateRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

/// One embedded candidate region.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreRecord {
    pub page_id: String,
    pub bbox: BBox,
    pub vector: Vec<f32>,
}

/// Immutable collection of embedded regions; sealed once built.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    phoc_hash: String,
    dim: usize,
    records: Vec<StoreRecord>,
}

impl EmbeddingStore {
    pub fn new(phoc_hash: String, dim: usize, records: Vec<StoreRecord>) -> Result<Self> {
        for (i, rec) in records.iter().enumerate() {
            if rec.vector.len() != dim {
                return Err(Error::InvalidShape(format!(
                    "record {i} has {} dims, store expects {dim}",
                    rec.vector.len()
                )));
            }
        }
        Ok(Self { phoc_hash, dim, records })
    }

    pub fn phoc_hash(&self) -> &str {
        &self.phoc_hash
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[StoreRecord] {
        &self.records
    }

    pub fn get(&self, index: usize) -> &StoreRecord {
        &self.records[index]
    }
}

/// Ranked query answer: store indices by ascending distance, `None`
/// distances (zero-norm records under cosine) last, ties resolved by page id
/// then box coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub items: Vec<RankedItem>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedItem {
    pub index: usize,
    pub distance: Option<f64>,
}

pub fn cosine_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidShape(format!(
            "cosine over {} vs {} dims",
            a.len(),
            b.len()
        )));
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += (x as f64).powi(2);
        nb += (y as f64).powi(2);
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedDistance);
    }
    Ok(1.0 - dot / (na.sqrt() * nb.sqrt()))
}

pub fn euclidean_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidShape(format!(
            "euclidean over {} vs {} dims",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Rank the whole store against a query vector. The query must have nonzero
/// norm under cosine; records with zero norm sort last in deterministic
/// order.
pub fn rank_store(store: &EmbeddingStore, query: &[f32], metric: Metric) -> Result<RankedList> {
    if metric == Metric::Cosine && query.iter().all(|&v| v == 0.0) {
        return Err(Error::UndefinedDistance);
    }
    let mut items: Vec<RankedItem> = store
        .records
        .iter()
        .enumerate()
        .map(|(index, rec)| {
            let distance = match metric {
                Metric::Cosine => match cosine_distance(query, &rec.vector) {
                    Ok(d) => Some(d),
                    Err(Error::UndefinedDistance) => None,
                    Err(e) => return Err(e),
                },
                Metric::Euclidean => Some(euclidean_distance(query, &rec.vector)?),
            };
            Ok(RankedItem { index, distance })
        })
        .collect::<Result<_>>()?;
    items.sort_by(|a, b| {
        let ra = &store.records[a.index];
        let rb = &store.records[b.index];
        let da = a.distance.unwrap_or(f64::INFINITY);
        let db = b.distance.unwrap_or(f64::INFINITY);
        da.partial_cmp(&db)
            .unwrap()
            .then_with(|| ra.page_id.cmp(&rb.page_id))
            .then_with(|| ra.bbox.cmp(&rb.bbox))
    });
    Ok(RankedList { items })
}

/// Embed every candidate of every page: tile each page, run the trunk once
/// per tile and pool all its regions. Returns the sealed store and the count
/// of candidates contained in no tile.
pub fn embed_pages(
    model: &ModelParams,
    pages: &[(String, GrayImage)],
    candidates: &[CandidateRecord],
    tile_cfg: &TrainConfig,
    phoc_cfg: &PhocConfig,
) -> Result<(EmbeddingStore, usize)> {
    if model.phoc_hash != phoc_cfg.hash() {
        return Err(Error::ConfigMismatch(
            "model was trained against a different phoc config".into(),
        ));
    }
    let dim = model.arch.output_dim;
    let mut records = Vec::new();
    let mut dropped = 0usize;
    for (page_id, page) in pages {
        let boxes: Vec<BBox> = candidates
            .iter()
            .filter(|c| &c.page_id == page_id)
            .map(|c| c.bbox())
            .collect();
        if boxes.is_empty() {
            continue;
        }
        let tiles = tile_page(page, tile_cfg);
        let (per_tile, page_dropped) = assign_rois_to_tiles(&boxes, &tiles);
        dropped += page_dropped;

        let jobs: Vec<(usize, Vec<(usize, BBox)>)> = per_tile
            .into_iter()
            .enumerate()
            .filter(|(_, v)| !v.is_empty())
            .collect();
        let outputs = crate::par::map_items(&jobs, |(ti, assigned)| {
            let locals: Vec<BBox> = assigned.iter().map(|(_, b)| b).copied().collect();
            model
                .forward(&tiles[*ti].image, &locals)
                .map(|probs| (assigned.clone(), probs))
        });

        let mut page_records: Vec<Option<StoreRecord>> = vec![None; boxes.len()];
        for out in outputs {
            let (assigned, probs) = out?;
            for (row, (orig, _)) in assigned.iter().enumerate() {
                let vector: Vec<f32> = probs.row(row).iter().map(|&v| v as f32).collect();
                page_records[*orig] = Some(StoreRecord {
                    page_id: page_id.clone(),
                    bbox: boxes[*orig],
                    vector,
                });
            }
        }
        records.extend(page_records.into_iter().flatten());
    }
    Ok((EmbeddingStore::new(phoc_cfg.hash(), dim, records)?, dropped))
}

/// Embed one region of a page through the same tiling path as the store.
pub fn embed_region(
    model: &ModelParams,
    page: &GrayImage,
    bbox: &BBox,
    tile_cfg: &TrainConfig,
) -> Result<Vec<f32>> {
    let tiles = tile_page(page, tile_cfg);
    let (per_tile, dropped) = assign_rois_to_tiles(&[*bbox], &tiles);
    if dropped > 0 {
        return Err(Error::InvalidRoi {
            index: None,
            reason: format!("query region {bbox:?} spans tile boundaries"),
        });
    }
    for (ti, assigned) in per_tile.iter().enumerate() {
        if let Some((_, local)) = assigned.first() {
            let probs = model.forward(&tiles[ti].image, &[*local])?;
            return Ok(probs.row(0).iter().map(|&v| v as f32).collect());
        }
    }
    unreachable!("roi assigned to no tile but not dropped")
}

/// Query by example: embed the query's own box and rank the store.
pub fn query_by_example(
    model: &ModelParams,
    page: &GrayImage,
    bbox: &BBox,
    store: &EmbeddingStore,
    tile_cfg: &TrainConfig,
    metric: Metric,
) -> Result<RankedList> {
    let query = embed_region(model, page, bbox, tile_cfg)?;
    rank_store(store, &query, metric)
}

/// Query by string: encode the word and rank the store. The store must carry
/// the same PHOC config hash as the encoder.
pub fn query_by_string(
    word: &str,
    store: &EmbeddingStore,
    phoc_cfg: &PhocConfig,
    metric: Metric,
) -> Result<RankedList> {
    if store.phoc_hash != phoc_cfg.hash() {
        return Err(Error::ConfigMismatch(
            "store was embedded under a different phoc config".into(),
        ));
    }
    let query: Vec<f32> = encode_string(word, phoc_cfg)?
        .values
        .iter()
        .map(|&v| v as f32)
        .collect();
    rank_store(store, &query, metric)
}

/// Greedy top-down relevance: a retrieved box is relevant when an unmatched
/// same-label ground-truth word overlaps it by at least the IoU threshold;
/// every ground-truth word matches at most once per ranked list.
pub struct RelevanceJudge<'a> {
    gt: &'a [GroundTruthWord],
    iou_thr: f64,
    used: Vec<bool>,
}

impl<'a> RelevanceJudge<'a> {
    pub fn new(gt: &'a [GroundTruthWord], iou_thr: f64) -> Self {
        Self { gt, iou_thr, used: vec![false; gt.len()] }
    }

    pub fn judge(&mut self, page_id: &str, bbox: &BBox, query_label: &str) -> bool {
        let mut best: Option<(usize, f64)> = None;
        for (i, word) in self.gt.iter().enumerate() {
            if self.used[i] || word.page_id != page_id || word.normalized != query_label {
                continue;
            }
            let overlap = iou(bbox, &word.bbox);
            if overlap >= self.iou_thr && best.map_or(true, |(_, b)| overlap > b) {
                best = Some((i, overlap));
            }
        }
        match best {
            Some((i, _)) => {
                self.used[i] = true;
                true
            }
            None => false,
        }
    }
}

/// Relevance flags for a whole ranked list.
pub fn judge_ranked_list(
    ranked: &RankedList,
    store: &EmbeddingStore,
    query_label: &str,
    gt: &[GroundTruthWord],
    iou_thr: f64,
) -> Vec<bool> {
    let mut judge = RelevanceJudge::new(gt, iou_thr);
    ranked
        .items
        .iter()
        .map(|item| {
            let rec = store.get(item.index);
            judge.judge(&rec.page_id, &rec.bbox, query_label)
        })
        .collect()
}

/// Non-interpolated average precision: mean of precision@k over the relevant
/// ranks, normalized by the number of relevant instances.
pub fn average_precision(flags: &[bool], n_relevant: usize) -> Result<f64> {
    if n_relevant == 0 {
        return Err(Error::InvalidInput(
            "average precision needs at least one relevant instance".into(),
        ));
    }
    let mut hits = 0usize;
    let mut sum = 0.0f64;
    for (k, &rel) in flags.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / n_relevant as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub page_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
    pub ap: f64,
    pub n_relevant: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
    pub query_count: usize,
    pub skipped_queries: usize,
    pub map: f64,
    /// Mean AP over queries whose normalized label has six or more
    /// characters.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_len6_plus: Option<f64>,
    pub per_length: BTreeMap<usize, f64>,
    pub per_query: Vec<QueryOutcome>,
}

fn summarize(
    protocol: &str,
    fold: Option<usize>,
    outcomes: Vec<QueryOutcome>,
    skipped: usize,
) -> EvalReport {
    let map = if outcomes.is_empty() {
        0.0
    } else {
        outcomes.iter().map(|q| q.ap).sum::<f64>() / outcomes.len() as f64
    };
    let long: Vec<&QueryOutcome> =
        outcomes.iter().filter(|q| q.label.chars().count() >= 6).collect();
    let map_len6_plus = if long.is_empty() {
        None
    } else {
        Some(long.iter().map(|q| q.ap).sum::<f64>() / long.len() as f64)
    };
    let mut by_len: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for q in &outcomes {
        by_len.entry(q.label.chars().count()).or_default().push(q.ap);
    }
    let per_length = by_len
        .into_iter()
        .map(|(len, aps)| (len, aps.iter().sum::<f64>() / aps.len() as f64))
        .collect();
    EvalReport {
        protocol: protocol.to_string(),
        fold,
        query_count: outcomes.len(),
        skipped_queries: skipped,
        map,
        map_len6_plus,
        per_length,
        per_query: outcomes,
    }
}

/// Query-by-example over every ground-truth word of the test pages. The
/// store must have been built over the test pages only.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_qbe(
    model: &ModelParams,
    test: &Dataset,
    store: &EmbeddingStore,
    tile_cfg: &TrainConfig,
    iou_thr: f64,
    metric: Metric,
    exclude_self: bool,
    fold: Option<usize>,
) -> Result<EvalReport> {
    let gt = &test.words;
    let jobs: Vec<usize> = (0..gt.len()).collect();
    let results = crate::par::map_items(&jobs, |&qi| -> Result<Option<QueryOutcome>> {
        let query = &gt[qi];
        let same_label =
            gt.iter().filter(|w| w.normalized == query.normalized).count();
        let n_relevant = if exclude_self { same_label - 1 } else { same_label };
        if n_relevant == 0 {
            return Ok(None);
        }
        let page = test
            .page(&query.page_id)
            .ok_or_else(|| Error::InvalidInput(format!("page {} missing", query.page_id)))?;
        let mut ranked =
            query_by_example(model, page, &query.bbox, store, tile_cfg, metric)?;
        if exclude_self {
            ranked.items.retain(|item| {
                let rec = store.get(item.index);
                !(rec.page_id == query.page_id && rec.bbox == query.bbox)
            });
        }
        let mut judge = RelevanceJudge::new(gt, iou_thr);
        if exclude_self {
            judge.used[qi] = true;
        }
        let flags: Vec<bool> = ranked
            .items
            .iter()
            .map(|item| {
                let rec = store.get(item.index);
                judge.judge(&rec.page_id, &rec.bbox, &query.normalized)
            })
            .collect();
        let ap = average_precision(&flags, n_relevant)?;
        Ok(Some(QueryOutcome {
            label: query.normalized.clone(),
            page_id: Some(query.page_id.clone()),
            bbox: Some(query.bbox),
            ap,
            n_relevant,
        }))
    });

    let mut outcomes = Vec::new();
    let mut skipped = 0usize;
    for r in results {
        match r? {
            Some(outcome) => outcomes.push(outcome),
            None => skipped += 1,
        }
    }
    Ok(summarize("qbe", fold, outcomes, skipped))
}

/// Query-by-string over the unique normalized transcriptions of the test
/// pages.
pub fn evaluate_qbs(
    test: &Dataset,
    store: &EmbeddingStore,
    phoc_cfg: &PhocConfig,
    iou_thr: f64,
    metric: Metric,
    fold: Option<usize>,
) -> Result<EvalReport> {
    let gt = &test.words;
    let mut labels: Vec<String> = gt.iter().map(|w| w.normalized.clone()).collect();
    labels.sort();
    labels.dedup();
    let results = crate::par::map_items(&labels, |label| -> Result<Option<QueryOutcome>> {
        if label.is_empty() {
            return Ok(None);
        }
        let n_relevant = gt.iter().filter(|w| &w.normalized == label).count();
        let ranked = query_by_string(label, store, phoc_cfg, metric)?;
        let flags = judge_ranked_list(&ranked, store, label, gt, iou_thr);
        let ap = average_precision(&flags, n_relevant)?;
        Ok(Some(QueryOutcome {
            label: label.clone(),
            page_id: None,
            bbox: None,
            ap,
            n_relevant,
        }))
    });
    let mut outcomes = Vec::new();
    let mut skipped = 0usize;
    for r in results {
        match r? {
            Some(outcome) => outcomes.push(outcome),
            None => skipped += 1,
        }
    }
    Ok(summarize("qbs", fold, outcomes, skipped))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub n_candidates: usize,
    pub shared_seconds: f64,
    pub per_candidate_seconds: f64,
    /// per-candidate time over shared time
    pub ratio: f64,
}

/// Time the shared-trunk pass (one trunk run per tile, all regions pooled)
/// against independent per-candidate passes (crop each candidate, pad to the
/// trunk's minimum canvas, run trunk and head). The two paths compute
/// different things by construction; only timing is compared.
pub fn bench_shared_vs_percandidate(
    model: &ModelParams,
    page: &GrayImage,
    candidates: &[BBox],
    tile_cfg: &TrainConfig,
) -> Result<BenchReport> {
    let tiles = tile_page(page, tile_cfg);
    let (per_tile, _) = assign_rois_to_tiles(candidates, &tiles);
    let retained: Vec<BBox> = per_tile
        .iter()
        .flat_map(|v| v.iter().map(|(orig, _)| candidates[*orig]))
        .collect();

    let shared_start = Instant::now();
    for (ti, assigned) in per_tile.iter().enumerate() {
        if assigned.is_empty() {
            continue;
        }
        let locals: Vec<BBox> = assigned.iter().map(|(_, b)| *b).collect();
        model.forward(&tiles[ti].image, &locals)?;
    }
    let shared_seconds = shared_start.elapsed().as_secs_f64();

    let percand_start = Instant::now();
    for bbox in &retained {
        let crop = page.crop(bbox)?;
        model.forward_single_crop(&crop)?;
    }
    let per_candidate_seconds = percand_start.elapsed().as_secs_f64();

    Ok(BenchReport {
        n_candidates: retained.len(),
        shared_seconds,
        per_candidate_seconds,
        ratio: per_candidate_seconds / shared_seconds,
    })
}

const STORE_MAGIC: &[u8; 4] = b"RPHE";

#[derive(Serialize, Deserialize)]
struct StoreHeader {
    phoc_hash: String,
    dim: usize,
    count: usize,
}

/// Serialize: magic `RPHE`, length-prefixed JSON header, then per record a
/// length-prefixed page id, four 32-bit little-endian box integers and the
/// vector as 32-bit little-endian reals.
pub fn store_bytes(store: &EmbeddingStore) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&StoreHeader {
        phoc_hash: store.phoc_hash.clone(),
        dim: store.dim,
        count: store.records.len(),
    })
    .map_err(|e| Error::Format(e.to_string()))?;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(STORE_MAGIC);
    bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header);
    for rec in &store.records {
        let id = rec.page_id.as_bytes();
        bytes.extend_from_slice(&(id.len() as u32).to_le_bytes());
        bytes.extend_from_slice(id);
        for v in [rec.bbox.x, rec.bbox.y, rec.bbox.w, rec.bbox.h] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for &v in &rec.vector {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(bytes)
}

pub fn save_store(store: &EmbeddingStore, path: &Path) -> Result<()> {
    std::fs::write(path, store_bytes(store)?).map_err(|e| Error::io(path, e))
}

pub fn load_store_bytes(bytes: &[u8]) -> Result<EmbeddingStore> {
    if bytes.len() < 8 || &bytes[..4] != STORE_MAGIC {
        return Err(Error::Format("not an embedding store (bad magic)".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + header_len {
        return Err(Error::Format("truncated store header".into()));
    }
    let header: StoreHeader = serde_json::from_slice(&bytes[8..8 + header_len])
        .map_err(|e| Error::Format(format!("store header: {e}")))?;
    let mut cursor = 8 + header_len;
    let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
        if bytes.len() < *cursor + n {
            return Err(Error::Format("truncated store record".into()));
        }
        let s = &bytes[*cursor..*cursor + n];
        *cursor += n;
        Ok(s)
    };
    let mut records = Vec::with_capacity(header.count);
    for _ in 0..header.count {
        let id_len = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
        let page_id = String::from_utf8(take(&mut cursor, id_len)?.to_vec())
            .map_err(|e| Error::Format(format!("page id: {e}")))?;
        let mut coords = [0u32; 4];
        for c in &mut coords {
            *c = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap());
        }
        let vector: Vec<f32> = take(&mut cursor, header.dim * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(StoreRecord {
            page_id,
            bbox: BBox::new(coords[0], coords[1], coords[2], coords[3]),
            vector,
        });
    }
    if cursor != bytes.len() {
        return Err(Error::Format(format!(
            "store has {} trailing bytes",
            bytes.len() - cursor
        )));
    }
    EmbeddingStore::new(header.phoc_hash, header.dim, records)
}

pub fn load_store(path: &Path) -> Result<EmbeddingStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_store_bytes(&bytes)
}
