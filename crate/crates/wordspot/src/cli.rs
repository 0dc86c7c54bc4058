//! Command-line interface wiring the pipeline stages together.
//!
//! Every subcommand reads one optional configuration file (`--config`,
//! TOML or JSON) plus flags; `--seed` overrides every stage seed. Exit codes:
//! 0 success, 1 validation error, 2 runtime error.

use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::harness::{self, load_dataset, make_folds, render_synthetic, Dataset, PipelineConfig};
use crate::imaging::BBox;
use crate::net::checkpoint::{load_checkpoint, save_checkpoint};
use crate::net::gradcheck::{grad_check, FaultInjection};
use crate::net::tensor::Tensor;
use crate::net::train::{train, TrainConfig};
use crate::net::{ArchConfig, ModelParams};
use crate::phoc::encode_string;
use crate::proposals::{
    candidate_features, filter_candidates, label_by_iou, read_candidates_jsonl, train_filter,
    write_candidates_jsonl, CandidateRecord, FeatureConfig, LinearFilter,
};
use crate::retrieval::{
    bench_shared_vs_percandidate, embed_pages, evaluate_qbe, evaluate_qbs, load_store,
    query_by_example, query_by_string, save_store, EmbeddingStore, RankedList,
};

#[derive(Parser)]
#[command(
    name = "wordspot",
    version,
    about = "Segmentation-free word spotting over document page images"
)]
struct Cli {
    /// Pipeline configuration file (.toml or .json)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override every stage seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic corpus (pages + .gt annotations) into a directory
    RenderSynth {
        #[arg(long)]
        out: PathBuf,
        /// Override the configured page count
        #[arg(long)]
        pages: Option<usize>,
    },
    /// Generate word candidates for every page, optionally filtered
    Propose {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Linear filter model (JSON) to score and prune candidates
        #[arg(long)]
        filter: Option<PathBuf>,
        /// Comma-separated page ids (default: all pages)
        #[arg(long)]
        pages: Option<String>,
    },
    /// Fit the word/non-word linear filter from ground truth
    TrainFilter {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        pages: Option<String>,
    },
    /// Train the region attribute network
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lr_step: Option<usize>,
        #[arg(long)]
        lr_gamma: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        pos_frac: Option<f64>,
        /// Architecture config file (TOML/JSON with a [net.arch] table)
        #[arg(long)]
        arch: Option<PathBuf>,
        /// Checkpoint to resume from
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        pages: Option<String>,
    },
    /// Embed candidates into an attribute store
    Embed {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        pages: Option<String>,
    },
    /// Rank a store against a query
    Query {
        #[arg(long)]
        store: PathBuf,
        /// Query by example: "page:x,y,w,h" (needs --data and --model)
        #[arg(long)]
        qbe: Option<String>,
        /// Query by string
        #[arg(long)]
        qbs: Option<String>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        top: usize,
    },
    /// Evaluate retrieval over one cross-validation fold
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        fold: usize,
        /// qbe, qbs or both
        #[arg(long, default_value = "qbe")]
        protocol: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the shared pass against per-candidate passes on one page
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        page: String,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate analytic gradients against finite differences
    GradCheck {
        /// Parameters sampled per tensor
        #[arg(long, default_value_t = 200)]
        samples: usize,
        /// Corrupt the conv backward pass as a negative control
        #[arg(long)]
        fault: bool,
    },
    /// Print the attribute encoding of a word
    PhocEncode {
        #[arg(long)]
        word: String,
    },
}

/// Parse and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through this path with status 0
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = PipelineConfig::load_or_default(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.synth.seed = seed;
        cfg.net.train.seed = seed;
        cfg.proposals.filter.seed = seed;
        cfg.retrieval.fold_seed = seed;
    }
    match cli.command {
        Command::RenderSynth { out, pages } => render_synth(&cfg, &out, pages),
        Command::Propose { data, out, filter, pages } => propose(&cfg, &data, &out, filter.as_deref(), pages),
        Command::TrainFilter { data, out, pages } => train_filter_cmd(&cfg, &data, &out, pages),
        Command::Train {
            data,
            candidates,
            out,
            iters,
            lr,
            lr_step,
            lr_gamma,
            batch,
            pos_frac,
            arch,
            resume,
            pages,
        } => {
            let mut train_cfg = cfg.net.train.clone();
            if let Some(v) = iters {
                train_cfg.iterations = v;
            }
            if let Some(v) = lr {
                train_cfg.lr0 = v;
            }
            if let Some(v) = lr_step {
                train_cfg.lr_step = v;
            }
            if let Some(v) = lr_gamma {
                train_cfg.lr_gamma = v;
            }
            if let Some(v) = batch {
                train_cfg.batch_rois = v;
            }
            if let Some(v) = pos_frac {
                train_cfg.positive_fraction = v;
            }
            let arch_cfg = match arch {
                Some(path) => PipelineConfig::load(&path)?.arch(),
                None => cfg.arch(),
            };
            train_cmd(&cfg, &train_cfg, arch_cfg, &data, &candidates, &out, resume.as_deref(), pages)
        }
        Command::Embed { data, candidates, model, out, pages } => {
            embed_cmd(&cfg, &data, &candidates, &model, &out, pages)
        }
        Command::Query { store, qbe, qbs, model, data, out, top } => {
            query_cmd(&cfg, &store, qbe, qbs, model.as_deref(), data.as_deref(), out.as_deref(), top)
        }
        Command::Evaluate { data, candidates, model, fold, protocol, out } => {
            evaluate_cmd(&cfg, &data, &candidates, &model, fold, &protocol, out.as_deref())
        }
        Command::Bench { data, page, candidates, model, out } => {
            bench_cmd(&cfg, &data, &page, &candidates, &model, out.as_deref())
        }
        Command::GradCheck { samples, fault } => grad_check_cmd(&cfg, samples, fault),
        Command::PhocEncode { word } => phoc_encode_cmd(&cfg, &word),
    }
}

/// Write bytes via a temp file + rename so failures leave nothing partial.
fn write_output(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp-write");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn write_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let json =
        serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    match path {
        Some(p) => write_output(p, json.as_bytes()),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn subset_pages(dataset: Dataset, pages: Option<String>) -> Result<Dataset> {
    match pages {
        None => Ok(dataset),
        Some(csv) => {
            let ids: Vec<String> = csv.split(',').map(|s| s.trim().to_string()).collect();
            for id in &ids {
                if dataset.page(id).is_none() {
                    return Err(Error::InvalidInput(format!("unknown page id {id:?}")));
                }
            }
            Ok(dataset.subset(&ids))
        }
    }
}

fn render_synth(cfg: &PipelineConfig, out: &Path, pages: Option<usize>) -> Result<()> {
    let mut spec = cfg.synth.clone();
    if let Some(p) = pages {
        spec.pages = p;
    }
    let dataset = render_synthetic(&spec)?;
    let created = !out.exists();
    if let Err(e) = dataset.save(out) {
        if created {
            let _ = std::fs::remove_dir_all(out);
        }
        return Err(e);
    }
    eprintln!(
        "rendered {} pages, {} words to {}",
        dataset.pages.len(),
        dataset.words.len(),
        out.display()
    );
    Ok(())
}

fn propose_all(cfg: &PipelineConfig, dataset: &Dataset) -> Result<Vec<(String, harness::PageProposals)>> {
    let results = crate::par::map_items(&dataset.pages, |(id, page)| {
        harness::propose_page(page, cfg).map(|p| (id.clone(), p))
    });
    results.into_iter().collect()
}

fn propose(
    cfg: &PipelineConfig,
    data: &Path,
    out: &Path,
    filter: Option<&Path>,
    pages: Option<String>,
) -> Result<()> {
    let dataset = subset_pages(load_dataset(data, &cfg.phoc)?, pages)?;
    let filter_model: Option<LinearFilter> = match filter {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Some(serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?)
        }
        None => None,
    };
    let mut records = Vec::new();
    for (id, prop) in propose_all(cfg, &dataset)? {
        let cands = match &filter_model {
            Some(model) => {
                filter_candidates(&prop.candidates, model, &prop.binary, cfg.proposals.filter_threshold)?
            }
            None => prop.candidates,
        };
        records.extend(cands.iter().map(|c| CandidateRecord::new(&id, c)));
    }
    let mut bytes = Vec::new();
    write_candidates_jsonl(&mut bytes, &records)?;
    write_output(out, &bytes)?;
    eprintln!("wrote {} candidates to {}", records.len(), out.display());
    Ok(())
}

fn train_filter_cmd(
    cfg: &PipelineConfig,
    data: &Path,
    out: &Path,
    pages: Option<String>,
) -> Result<()> {
    let dataset = subset_pages(load_dataset(data, &cfg.phoc)?, pages)?;
    let (filter, n_samples) = fit_filter(cfg, &dataset)?;
    let json = serde_json::to_string_pretty(&filter).map_err(|e| Error::Format(e.to_string()))?;
    write_output(out, json.as_bytes())?;
    eprintln!("trained filter on {n_samples} labelled candidates -> {}", out.display());
    Ok(())
}

/// Propose on every page, label candidates against ground truth and fit the
/// linear filter. Normalization stats come from the same pages: mean band
/// height and mean proposal width.
pub fn fit_filter(cfg: &PipelineConfig, dataset: &Dataset) -> Result<(LinearFilter, usize)> {
    let proposals = propose_all(cfg, dataset)?;
    let mut height_sum = 0.0f64;
    let mut height_n = 0usize;
    let mut width_sum = 0.0f64;
    let mut width_n = 0usize;
    for (_, prop) in &proposals {
        for band in &prop.bands {
            height_sum += (band.y_bottom - band.y_top + 1) as f64;
            height_n += 1;
        }
        for cand in &prop.candidates {
            width_sum += cand.bbox.w as f64;
            width_n += 1;
        }
    }
    if height_n == 0 || width_n == 0 {
        return Err(Error::DegenerateTraining("no bands or candidates on the training pages".into()));
    }
    let feat_cfg = FeatureConfig {
        p: cfg.proposals.p,
        q: cfg.proposals.q,
        avg_height: height_sum / height_n as f64,
        avg_width: width_sum / width_n as f64,
    };

    let mut samples = Vec::new();
    for (id, prop) in &proposals {
        let gt_boxes: Vec<BBox> = dataset.words_on(id).iter().map(|w| w.bbox).collect();
        let labels = label_by_iou(&prop.candidates, &gt_boxes, cfg.proposals.iou_pos, cfg.proposals.iou_neg);
        for (cand, label) in prop.candidates.iter().zip(labels) {
            if let Some(y) = label {
                samples.push((candidate_features(&cand.bbox, &prop.binary, &feat_cfg)?, y));
            }
        }
    }
    let filter = train_filter(&samples, &feat_cfg, &cfg.proposals.filter)?;
    Ok((filter, samples.len()))
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    cfg: &PipelineConfig,
    train_cfg: &TrainConfig,
    arch: ArchConfig,
    data: &Path,
    candidates: &Path,
    out: &Path,
    resume: Option<&Path>,
    pages: Option<String>,
) -> Result<()> {
    let dataset = subset_pages(load_dataset(data, &cfg.phoc)?, pages)?;
    let cands = read_candidates(candidates)?;
    let resume_params = resume.map(load_checkpoint).transpose()?;
    let total = train_cfg.iterations;
    let (params, trace) = train(
        &dataset.pages,
        &dataset.words,
        &cands,
        &cfg.phoc,
        arch,
        train_cfg,
        resume_params,
        |iter, loss, lr| {
            if iter % 100 == 0 || iter + 1 == total {
                eprintln!("iter {iter:>6}  loss {loss:>10.4}  lr {lr:.3e}");
            }
        },
    )?;
    save_checkpoint(&params, out)?;
    let trace_path = out.with_extension("loss.json");
    write_json(Some(&trace_path), &trace)?;
    eprintln!(
        "checkpoint -> {} (loss trace -> {})",
        out.display(),
        trace_path.display()
    );
    Ok(())
}

fn read_candidates(path: &Path) -> Result<Vec<CandidateRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_candidates_jsonl(BufReader::new(file))
}

fn embed_cmd(
    cfg: &PipelineConfig,
    data: &Path,
    candidates: &Path,
    model: &Path,
    out: &Path,
    pages: Option<String>,
) -> Result<()> {
    let dataset = subset_pages(load_dataset(data, &cfg.phoc)?, pages)?;
    let cands = read_candidates(candidates)?;
    let params = load_checkpoint(model)?;
    let (store, dropped) = embed_pages(&params, &dataset.pages, &cands, &cfg.net.train, &cfg.phoc)?;
    save_store(&store, out)?;
    eprintln!(
        "embedded {} regions ({dropped} dropped by tiling) -> {}",
        store.len(),
        out.display()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct RankedDump {
    query: String,
    returned: usize,
    items: Vec<RankedDumpItem>,
}

#[derive(serde::Serialize)]
struct RankedDumpItem {
    rank: usize,
    page_id: String,
    x: u32,
    y: u32,
    w: u32,
    h: u32,
    distance: Option<f64>,
}

fn dump_ranked(query: &str, ranked: &RankedList, store: &EmbeddingStore, top: usize) -> RankedDump {
    let items = ranked
        .items
        .iter()
        .take(top)
        .enumerate()
        .map(|(rank, item)| {
            let rec = store.get(item.index);
            RankedDumpItem {
                rank: rank + 1,
                page_id: rec.page_id.clone(),
                x: rec.bbox.x,
                y: rec.bbox.y,
                w: rec.bbox.w,
                h: rec.bbox.h,
                distance: item.distance,
            }
        })
        .collect();
    RankedDump { query: query.to_string(), returned: ranked.items.len().min(top), items }
}

#[allow(clippy::too_many_arguments)]
fn query_cmd(
    cfg: &PipelineConfig,
    store_path: &Path,
    qbe: Option<String>,
    qbs: Option<String>,
    model: Option<&Path>,
    data: Option<&Path>,
    out: Option<&Path>,
    top: usize,
) -> Result<()> {
    let store = load_store(store_path)?;
    let metric = cfg.retrieval.metric;
    let dump = match (qbe, qbs) {
        (Some(spec), None) => {
            let (page_id, bbox) = parse_qbe_spec(&spec)?;
            let model = model.ok_or_else(|| {
                Error::InvalidInput("--qbe requires --model for the query forward pass".into())
            })?;
            let data = data.ok_or_else(|| {
                Error::InvalidInput("--qbe requires --data to load the query page".into())
            })?;
            let dataset = load_dataset(data, &cfg.phoc)?;
            let page = dataset
                .page(&page_id)
                .ok_or_else(|| Error::InvalidInput(format!("unknown page id {page_id:?}")))?;
            let params = load_checkpoint(model)?;
            let ranked = query_by_example(&params, page, &bbox, &store, &cfg.net.train, metric)?;
            dump_ranked(&spec, &ranked, &store, top)
        }
        (None, Some(word)) => {
            let ranked = query_by_string(&word, &store, &cfg.phoc, metric)?;
            dump_ranked(&word, &ranked, &store, top)
        }
        _ => {
            return Err(Error::InvalidInput(
                "provide exactly one of --qbe or --qbs".into(),
            ))
        }
    };
    write_json(out, &dump)
}

fn parse_qbe_spec(spec: &str) -> Result<(String, BBox)> {
    let bad = || Error::InvalidInput(format!("--qbe expects page:x,y,w,h, got {spec:?}"));
    let (page, coords) = spec.split_once(':').ok_or_else(bad)?;
    let nums: Vec<u32> = coords
        .split(',')
        .map(|s| s.trim().parse::<u32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad())?;
    if nums.len() != 4 || nums[2] == 0 || nums[3] == 0 {
        return Err(bad());
    }
    Ok((page.to_string(), BBox::new(nums[0], nums[1], nums[2], nums[3])))
}

fn evaluate_cmd(
    cfg: &PipelineConfig,
    data: &Path,
    candidates: &Path,
    model: &Path,
    fold: usize,
    protocol: &str,
    out: Option<&Path>,
) -> Result<()> {
    let dataset = load_dataset(data, &cfg.phoc)?;
    let folds = make_folds(&dataset.page_ids(), cfg.retrieval.fold_seed, cfg.retrieval.bins)?;
    let split = folds
        .into_iter()
        .find(|f| f.fold == fold)
        .ok_or_else(|| Error::InvalidInput(format!("fold {fold} out of range")))?;
    let test = dataset.subset(&split.test_pages);
    let cands = read_candidates(candidates)?;
    let params = load_checkpoint(model)?;
    let (store, _) = embed_pages(&params, &test.pages, &cands, &cfg.net.train, &cfg.phoc)?;

    let mut reports = Vec::new();
    if protocol == "qbe" || protocol == "both" {
        reports.push(evaluate_qbe(
            &params,
            &test,
            &store,
            &cfg.net.train,
            cfg.retrieval.iou_threshold,
            cfg.retrieval.metric,
            cfg.retrieval.exclude_self,
            Some(fold),
        )?);
    }
    if protocol == "qbs" || protocol == "both" {
        reports.push(evaluate_qbs(
            &test,
            &store,
            &cfg.phoc,
            cfg.retrieval.iou_threshold,
            cfg.retrieval.metric,
            Some(fold),
        )?);
    }
    if reports.is_empty() {
        return Err(Error::InvalidInput(format!(
            "unknown protocol {protocol:?}; expected qbe, qbs or both"
        )));
    }
    for report in &reports {
        eprintln!("{} fold {fold}: mAP {:.4} over {} queries", report.protocol, report.map, report.query_count);
    }
    write_json(out, &reports)
}

fn bench_cmd(
    cfg: &PipelineConfig,
    data: &Path,
    page_id: &str,
    candidates: &Path,
    model: &Path,
    out: Option<&Path>,
) -> Result<()> {
    let dataset = load_dataset(data, &cfg.phoc)?;
    let page = dataset
        .page(page_id)
        .ok_or_else(|| Error::InvalidInput(format!("unknown page id {page_id:?}")))?;
    let boxes: Vec<BBox> = read_candidates(candidates)?
        .iter()
        .filter(|c| c.page_id == page_id)
        .map(|c| c.bbox())
        .collect();
    if boxes.is_empty() {
        return Err(Error::InvalidInput(format!("no candidates for page {page_id:?}")));
    }
    let params = load_checkpoint(model)?;
    let report = bench_shared_vs_percandidate(&params, page, &boxes, &cfg.net.train)?;
    eprintln!(
        "shared {:.3}s vs per-candidate {:.3}s over {} candidates (ratio {:.2})",
        report.shared_seconds, report.per_candidate_seconds, report.n_candidates, report.ratio
    );
    write_json(out, &report)
}

fn grad_check_cmd(cfg: &PipelineConfig, samples: usize, fault: bool) -> Result<()> {
    use rand::{RngExt, SeedableRng};
    let seed = cfg.net.train.seed;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let arch = cfg.arch();
    let mut params = ModelParams::init(arch.clone(), cfg.phoc.hash(), 0.5, seed)?;
    // small random logit layer so output gradients are informative
    if let Some(w) = params.fc_weights.last_mut() {
        for v in &mut w.data {
            *v = (rng.random::<f64>() - 0.5) * 0.05;
        }
    }
    let mut tile = crate::imaging::GrayImage::filled(48, 24, 0)?;
    for y in 0..24 {
        for x in 0..48 {
            tile.set(x, y, rng.random::<u8>());
        }
    }
    let rois = vec![BBox::new(2, 2, 30, 14), BBox::new(12, 6, 32, 16)];
    let dim = arch.output_dim;
    let mut targets = Tensor::zeros(&[2, dim]);
    for r in 0..2 {
        for v in targets.row_mut(r) {
            *v = f64::from(rng.random::<f64>() < 0.2);
        }
    }
    let mode = if fault { FaultInjection::FlipConvKernelGrad } else { FaultInjection::None };
    let max_rel = grad_check(&params, &tile, &rois, &targets, samples, seed, mode)?;
    let pass = max_rel < 1e-4;
    println!(
        "{}",
        serde_json::json!({
            "max_relative_error": max_rel,
            "threshold": 1e-4,
            "fault_injected": fault,
            "pass": pass,
        })
    );
    if pass || fault {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "gradient check failed: max relative error {max_rel:e}"
        )))
    }
}

fn phoc_encode_cmd(cfg: &PipelineConfig, word: &str) -> Result<()> {
    let vec = encode_string(word, &cfg.phoc)?;
    let bits: String = vec.values.iter().map(|&v| if v > 0.5 { '1' } else { '0' }).collect();
    let set = vec.set_bits();
    println!("word: {word}");
    println!("normalized: {}", cfg.phoc.normalize(word));
    println!("dimension: {}", vec.dim());
    println!("set bits ({}): {:?}", set.len(), set);
    println!("vector: {bits}");
    Ok(())
}
