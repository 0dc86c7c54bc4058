//! Page + annotation loading and cross-validation folds.
//!
//! A dataset directory holds, per page, an image `<id>.pgm` or `<id>.png`
//! and an annotation file `<id>.gt` whose lines read
//! `x y w h transcription` (whitespace-separated; the transcription is the
//! remainder of the line). Boxes are 0-indexed from the top-left corner.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{BBox, GrayImage};
use crate::phoc::PhocConfig;

/// One annotated word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthWord {
    pub page_id: String,
    pub bbox: BBox,
    pub transcription: String,
    /// Lowercased transcription with out-of-alphabet characters dropped;
    /// this is the form used for retrieval relevance.
    pub normalized: String,
}

impl GroundTruthWord {
    /// Convenience constructor normalizing with the default alphabet.
    pub fn new(page_id: &str, bbox: BBox, transcription: &str) -> Self {
        Self::with_config(page_id, bbox, transcription, &PhocConfig::default())
    }

    pub fn with_config(
        page_id: &str,
        bbox: BBox,
        transcription: &str,
        cfg: &PhocConfig,
    ) -> Self {
        Self {
            page_id: page_id.to_string(),
            bbox,
            transcription: transcription.to_string(),
            normalized: cfg.normalize(transcription),
        }
    }
}

/// Pages (sorted by id) plus all annotated words.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub pages: Vec<(String, GrayImage)>,
    pub words: Vec<GroundTruthWord>,
    /// Boxes that had to be clipped to the page during loading.
    pub clipped_boxes: usize,
}

impl Dataset {
    pub fn page(&self, id: &str) -> Option<&GrayImage> {
        self.pages.iter().find(|(pid, _)| pid == id).map(|(_, img)| img)
    }

    pub fn page_ids(&self) -> Vec<String> {
        self.pages.iter().map(|(id, _)| id.clone()).collect()
    }

    pub fn words_on(&self, page_id: &str) -> Vec<&GroundTruthWord> {
        self.words.iter().filter(|w| w.page_id == page_id).collect()
    }

    /// Restrict to the given pages, keeping page order.
    pub fn subset(&self, ids: &[String]) -> Dataset {
        let wanted: BTreeSet<&String> = ids.iter().collect();
        Dataset {
            pages: self
                .pages
                .iter()
                .filter(|(id, _)| wanted.contains(id))
                .cloned()
                .collect(),
            words: self
                .words
                .iter()
                .filter(|w| wanted.contains(&w.page_id))
                .cloned()
                .collect(),
            clipped_boxes: 0,
        }
    }

    /// Write pages as PGM plus `.gt` annotations into a directory.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (id, img) in &self.pages {
            img.save_pgm(&dir.join(format!("{id}.pgm")))?;
            let mut lines = String::new();
            for w in self.words.iter().filter(|w| &w.page_id == id) {
                lines.push_str(&format!(
                    "{} {} {} {} {}\n",
                    w.bbox.x, w.bbox.y, w.bbox.w, w.bbox.h, w.transcription
                ));
            }
            let gt_path = dir.join(format!("{id}.gt"));
            std::fs::write(&gt_path, lines).map_err(|e| Error::io(&gt_path, e))?;
        }
        Ok(())
    }
}

/// Load every page that has a `.gt` annotation file in `root`. Annotations
/// without a matching image are a hard error; malformed lines report their
/// line number; out-of-bounds boxes are clipped and counted.
pub fn load_dataset(root: &Path, phoc_cfg: &PhocConfig) -> Result<Dataset> {
    let mut gt_files: Vec<_> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "gt"))
        .collect();
    gt_files.sort();

    let mut dataset = Dataset::default();
    for gt_path in gt_files {
        let id = gt_path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Format(format!("bad annotation name {}", gt_path.display())))?
            .to_string();

        let image_path = ["pgm", "png"]
            .iter()
            .map(|ext| root.join(format!("{id}.{ext}")))
            .find(|p| p.exists())
            .ok_or_else(|| {
                Error::InvalidInput(format!("annotation {id}.gt has no {id}.pgm or {id}.png image"))
            })?;
        let page = GrayImage::load(&image_path)?;

        let text = std::fs::read_to_string(&gt_path).map_err(|e| Error::io(&gt_path, e))?;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let word = parse_gt_line(line, &id, &page, phoc_cfg).map_err(|msg| {
                Error::Annotation { path: gt_path.clone(), line: lineno + 1, msg }
            })?;
            match word {
                Clipped::Intact(w) => dataset.words.push(w),
                Clipped::Adjusted(w) => {
                    dataset.clipped_boxes += 1;
                    dataset.words.push(w);
                }
            }
        }
        dataset.pages.push((id, page));
    }
    dataset.pages.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(dataset)
}

enum Clipped {
    Intact(GroundTruthWord),
    Adjusted(GroundTruthWord),
}

fn parse_gt_line(
    line: &str,
    page_id: &str,
    page: &GrayImage,
    phoc_cfg: &PhocConfig,
) -> std::result::Result<Clipped, String> {
    let mut parts = line.split_whitespace();
    let mut next_num = |name: &str| -> std::result::Result<i64, String> {
        parts
            .next()
            .ok_or_else(|| format!("missing field {name}"))?
            .parse::<i64>()
            .map_err(|e| format!("field {name}: {e}"))
    };
    let x = next_num("x")?;
    let y = next_num("y")?;
    let w = next_num("w")?;
    let h = next_num("h")?;
    let transcription = parts.collect::<Vec<_>>().join(" ");
    if transcription.is_empty() {
        return Err("missing transcription".into());
    }
    if w < 1 || h < 1 {
        return Err(format!("non-positive box extent {w}x{h}"));
    }

    let (pw, ph) = (page.width() as i64, page.height() as i64);
    let cx = x.clamp(0, pw - 1);
    let cy = y.clamp(0, ph - 1);
    let cw = (x + w).clamp(cx + 1, pw) - cx;
    let ch = (y + h).clamp(cy + 1, ph) - cy;
    let clipped = cx != x || cy != y || cw != w || ch != h;
    let bbox = BBox::new(cx as u32, cy as u32, cw as u32, ch as u32);
    let word = GroundTruthWord::with_config(page_id, bbox, &transcription, phoc_cfg);
    Ok(if clipped { Clipped::Adjusted(word) } else { Clipped::Intact(word) })
}

/// One cross-validation fold: disjoint test bin, complement as training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold: usize,
    pub train_pages: Vec<String>,
    pub test_pages: Vec<String>,
}

/// Shuffle the page ids with the seed and split them into `bins` equal test
/// bins; each fold trains on the complement.
pub fn make_folds(page_ids: &[String], seed: u64, bins: usize) -> Result<Vec<FoldSplit>> {
    if bins == 0 || page_ids.len() % bins != 0 {
        return Err(Error::InvalidInput(format!(
            "{} pages cannot be split into {bins} equal bins; override with --bins",
            page_ids.len()
        )));
    }
    let mut ids = page_ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let per_bin = ids.len() / bins;
    let mut folds = Vec::with_capacity(bins);
    for fold in 0..bins {
        let mut test: Vec<String> = ids[fold * per_bin..(fold + 1) * per_bin].to_vec();
        let mut train: Vec<String> =
            ids.iter().filter(|id| !test.contains(id)).cloned().collect();
        test.sort();
        train.sort();
        folds.push(FoldSplit { fold, train_pages: train, test_pages: test });
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn page_ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i:02}")).collect()
    }

    #[test]
    fn twenty_pages_make_four_fifteen_five_folds() {
        let folds = make_folds(&page_ids(20), 42, 4).unwrap();
        assert_eq!(folds.len(), 4);
        for f in &folds {
            assert_eq!(f.train_pages.len(), 15);
            assert_eq!(f.test_pages.len(), 5);
        }
    }

    #[test]
    fn folds_are_seed_deterministic() {
        let a = make_folds(&page_ids(20), 9, 4).unwrap();
        let b = make_folds(&page_ids(20), 9, 4).unwrap();
        assert_eq!(a, b);
        let c = make_folds(&page_ids(20), 10, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn indivisible_page_count_is_rejected() {
        assert!(make_folds(&page_ids(21), 0, 4).is_err());
        assert!(make_folds(&page_ids(21), 0, 0).is_err());
    }

    proptest! {
        #[test]
        fn test_bins_partition_pages(seed in any::<u64>()) {
            let ids = page_ids(20);
            let folds = make_folds(&ids, seed, 4).unwrap();
            let mut seen = std::collections::BTreeSet::new();
            for f in &folds {
                for id in &f.test_pages {
                    prop_assert!(seen.insert(id.clone()), "page {id} in two test bins");
                    prop_assert!(!f.train_pages.contains(id));
                }
                let mut union: Vec<String> =
                    f.train_pages.iter().chain(&f.test_pages).cloned().collect();
                union.sort();
                let mut all = ids.clone();
                all.sort();
                prop_assert_eq!(union, all);
            }
            prop_assert_eq!(seen.len(), 20);
        }
    }

    #[test]
    fn dataset_round_trip_preserves_normalized_content() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PhocConfig::default();
        let mut page = GrayImage::filled(40, 30, 250).unwrap();
        for x in 10..20 {
            page.set(x, 10, 10);
        }
        let words = vec![
            GroundTruthWord::with_config("a", BBox::new(10, 20, 30, 4), "Company", &cfg),
            GroundTruthWord::with_config("a", BBox::new(2, 3, 4, 5), "the", &cfg),
        ];
        let ds = Dataset {
            pages: vec![("a".to_string(), page)],
            words,
            clipped_boxes: 0,
        };
        ds.save(dir.path()).unwrap();
        let loaded = load_dataset(dir.path(), &cfg).unwrap();
        assert_eq!(loaded.pages.len(), 1);
        assert_eq!(loaded.words.len(), 2);
        assert_eq!(loaded.words[0].normalized, "company");
        assert_eq!(loaded.words[0].bbox, BBox::new(10, 20, 30, 4));
        assert_eq!(loaded.pages[0].1, ds.pages[0].1);

        // and the save of the load round-trips identically
        let dir2 = tempfile::tempdir().unwrap();
        loaded.save(dir2.path()).unwrap();
        let again = load_dataset(dir2.path(), &cfg).unwrap();
        assert_eq!(again.words, loaded.words);
    }

    #[test]
    fn annotation_without_image_is_hard_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("ghost.gt"), "0 0 5 5 word\n").unwrap();
        assert!(matches!(
            load_dataset(dir.path(), &PhocConfig::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        GrayImage::filled(20, 20, 255)
            .unwrap()
            .save_pgm(&dir.path().join("p.pgm"))
            .unwrap();
        std::fs::write(dir.path().join("p.gt"), "0 0 5 5 fine\n1 2 3\n").unwrap();
        match load_dataset(dir.path(), &PhocConfig::default()) {
            Err(Error::Annotation { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected annotation error, got {other:?}"),
        }
    }

    #[test]
    fn empty_annotation_file_means_zero_words() {
        let dir = tempfile::tempdir().unwrap();
        GrayImage::filled(20, 20, 255)
            .unwrap()
            .save_pgm(&dir.path().join("p.pgm"))
            .unwrap();
        std::fs::write(dir.path().join("p.gt"), "").unwrap();
        let ds = load_dataset(dir.path(), &PhocConfig::default()).unwrap();
        assert_eq!(ds.pages.len(), 1);
        assert!(ds.words.is_empty());
    }

    #[test]
    fn out_of_bounds_box_is_clipped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        GrayImage::filled(20, 20, 255)
            .unwrap()
            .save_pgm(&dir.path().join("p.pgm"))
            .unwrap();
        std::fs::write(dir.path().join("p.gt"), "15 15 10 10 edge\n").unwrap();
        let ds = load_dataset(dir.path(), &PhocConfig::default()).unwrap();
        assert_eq!(ds.clipped_boxes, 1);
        assert_eq!(ds.words[0].bbox, BBox::new(15, 15, 5, 5));
    }

    #[test]
    fn gt_line_format_parses_as_documented() {
        let page = GrayImage::filled(100, 100, 255).unwrap();
        let cfg = PhocConfig::default();
        let parsed = parse_gt_line("10 20 30 40 Company", "p", &page, &cfg);
        match parsed {
            Ok(Clipped::Intact(w)) => {
                assert_eq!(w.bbox, BBox::new(10, 20, 30, 40));
                assert_eq!(w.transcription, "Company");
                assert_eq!(w.normalized, "company");
            }
            _ => panic!("expected clean parse"),
        }
    }
}
