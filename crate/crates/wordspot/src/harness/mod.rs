//! Data ingestion, synthetic corpus generation, fold splitting, pipeline
//! configuration and the glue the CLI builds on.

pub mod config;
pub mod dataset;
pub mod synth;

pub use config::{ImagingConfig, PipelineConfig, ProposalsConfig, RetrievalConfig};
pub use dataset::{load_dataset, make_folds, Dataset, FoldSplit, GroundTruthWord};
pub use synth::{render_synthetic, SynthSpec};

use crate::error::Result;
use crate::imaging::{
    assign_to_lines, binarize, compute_core_boxes, connected_components, line_hypotheses,
    projection_profile, BinaryImage, GrayImage, LineBand,
};
use crate::proposals::{enumerate_candidates, CandidateRegion};

/// Output of the proposal pipeline on one page.
pub struct PageProposals {
    pub candidates: Vec<CandidateRegion>,
    pub binary: BinaryImage,
    pub bands: Vec<LineBand>,
}

/// Run the whole proposal chain on a page: binarize, label components,
/// reduce to core boxes, hypothesise lines, assign members and enumerate
/// component runs.
pub fn propose_page(page: &GrayImage, cfg: &config::PipelineConfig) -> Result<PageProposals> {
    let img = &cfg.imaging;
    let binary = binarize(page, img.binarize_factor)?;
    let mut ccs = connected_components(&binary);
    compute_core_boxes(&mut ccs, &binary, img.core_density);
    let profile = projection_profile(&ccs, page.height(), img.smooth_window)?;
    let mut bands = line_hypotheses(&profile, img.line_min_frac);
    assign_to_lines(&ccs, &mut bands, img.line_overlap_frac);
    let candidates = enumerate_candidates(&bands, &ccs, cfg.proposals.max_run);
    Ok(PageProposals { candidates, binary, bands })
}
