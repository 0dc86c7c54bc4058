//! Synthetic handwritten-page stand-in: words rendered from a built-in 5x7
//! glyph set with per-word scale, baseline jitter and intensity noise, plus
//! exact ground-truth boxes. Every glyph is a single 8-connected blob so the
//! proposal pipeline sees one component per character.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::dataset::{Dataset, GroundTruthWord};
use crate::imaging::{BBox, GrayImage};
use crate::phoc::PhocConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub lexicon: Vec<String>,
    pub pages: usize,
    pub lines_per_page: usize,
    pub words_per_line: usize,
    /// Inclusive range of integer glyph scales, sampled per word.
    pub glyph_scale: (u32, u32),
    /// Ink intensity noise in [0, 1]; 0 renders perfectly flat ink.
    pub noise: f64,
    /// Maximum per-word vertical offset in pixels.
    pub baseline_jitter: u32,
    /// Inclusive range of inter-word gaps, in glyph cells; must exceed the
    /// one-cell intra-word spacing so line grouping stays solvable.
    pub word_gap: (u32, u32),
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            lexicon: DEFAULT_LEXICON.iter().map(|s| s.to_string()).collect(),
            pages: 20,
            lines_per_page: 4,
            words_per_line: 3,
            glyph_scale: (2, 2),
            noise: 0.1,
            baseline_jitter: 1,
            word_gap: (3, 5),
            seed: 7,
        }
    }
}

pub const DEFAULT_LEXICON: [&str; 32] = [
    "the", "and", "company", "orders", "river", "letter", "general", "your", "with", "have",
    "will", "from", "that", "been", "were", "which", "officer", "soldier", "province", "command",
    "stores", "account", "service", "people", "country", "second", "number", "money", "honour",
    "fort", "camp", "guard",
];

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;

/// Render the corpus. Deterministic for a fixed spec; ground-truth boxes are
/// the tight bounds of each word's ink.
pub fn render_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    if spec.lexicon.is_empty() {
        return Err(Error::InvalidInput("synthetic lexicon is empty".into()));
    }
    if spec.glyph_scale.0 < 1 || spec.glyph_scale.1 < spec.glyph_scale.0 {
        return Err(Error::InvalidInput("bad glyph scale range".into()));
    }
    if spec.word_gap.0 < 2 || spec.word_gap.1 < spec.word_gap.0 {
        return Err(Error::InvalidInput(
            "word gaps must span at least two glyph cells".into(),
        ));
    }
    for word in &spec.lexicon {
        for c in word.chars() {
            if glyph(c).is_none() {
                return Err(Error::InvalidInput(format!(
                    "lexicon word {word:?} uses unsupported character {c:?}"
                )));
            }
        }
    }

    let phoc_cfg = PhocConfig::default();
    let max_scale = spec.glyph_scale.1 as usize;
    let max_word_len = spec.lexicon.iter().map(|w| w.chars().count()).max().unwrap();
    let cell_w = GLYPH_W + 1;
    let max_word_px = (max_word_len * cell_w - 1) * max_scale;
    let max_gap_px = spec.word_gap.1 as usize * max_scale;
    let margin = 6 * max_scale;
    // Inter-line whitespace must stay wider than the default profile
    // smoothing window or the line valleys smear away.
    let line_gap = 8 * max_scale;
    let line_pitch = GLYPH_H * max_scale + 2 * spec.baseline_jitter as usize + line_gap;
    let page_w = 2 * margin + spec.words_per_line * (max_word_px + max_gap_px);
    let page_h = 2 * margin + spec.lines_per_page * line_pitch;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut dataset = Dataset::default();

    for page_idx in 0..spec.pages {
        let page_id = format!("p{page_idx:02}");
        let mut page = GrayImage::filled(page_w, page_h, 255)?;

        // light paper texture, never anywhere near the ink band
        if spec.noise > 0.0 {
            let amp = (spec.noise * 20.0) as u32;
            if amp > 0 {
                for y in 0..page_h {
                    for x in 0..page_w {
                        let v = 255 - rng.random_range(0..=amp) as u8;
                        page.set(x, y, v);
                    }
                }
            }
        }

        for line in 0..spec.lines_per_page {
            let baseline = margin + line * line_pitch + spec.baseline_jitter as usize;
            let mut x_cursor = margin;
            for _ in 0..spec.words_per_line {
                let word = &spec.lexicon[rng.random_range(0..spec.lexicon.len())];
                let scale = rng.random_range(spec.glyph_scale.0..=spec.glyph_scale.1) as usize;
                let jitter = if spec.baseline_jitter > 0 {
                    rng.random_range(0..=2 * spec.baseline_jitter) as usize
                } else {
                    0
                };
                let y0 = baseline + jitter;
                let bounds = draw_word(&mut page, word, x_cursor, y0, scale, spec.noise, &mut rng);
                dataset.words.push(GroundTruthWord::with_config(
                    &page_id, bounds, word, &phoc_cfg,
                ));
                let gap =
                    rng.random_range(spec.word_gap.0..=spec.word_gap.1) as usize * scale;
                let word_px = (word.chars().count() * cell_w - 1) * scale;
                x_cursor += word_px + gap;
            }
        }
        dataset.pages.push((page_id, page));
    }
    Ok(dataset)
}

/// Draw one word; returns the tight bounding box of the ink it produced.
fn draw_word(
    page: &mut GrayImage,
    word: &str,
    x0: usize,
    y0: usize,
    scale: usize,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> BBox {
    let mut min_x = usize::MAX;
    let mut min_y = usize::MAX;
    let mut max_x = 0usize;
    let mut max_y = 0usize;
    let mut cursor = x0;
    for c in word.chars() {
        let rows = glyph(c).expect("lexicon validated");
        for (gy, row) in rows.iter().enumerate() {
            for (gx, cell) in row.bytes().enumerate() {
                if cell != b'#' {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        let px = cursor + gx * scale + dx;
                        let py = y0 + gy * scale + dy;
                        let ink = 20 + if noise > 0.0 {
                            rng.random_range(0..=(noise * 100.0) as u32) as u8
                        } else {
                            0
                        };
                        page.set(px, py, ink);
                        min_x = min_x.min(px);
                        min_y = min_y.min(py);
                        max_x = max_x.max(px);
                        max_y = max_y.max(py);
                    }
                }
            }
        }
        cursor += (GLYPH_W + 1) * scale;
    }
    BBox::new(
        min_x as u32,
        min_y as u32,
        (max_x - min_x + 1) as u32,
        (max_y - min_y + 1) as u32,
    )
}

/// 5x7 block glyphs. Every glyph forms a single 8-connected set.
fn glyph(c: char) -> Option<[&'static str; 7]> {
    let g = match c.to_ascii_lowercase() {
        'a' => [".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
        'b' => ["####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."],
        'c' => [".####", "#....", "#....", "#....", "#....", "#....", ".####"],
        'd' => ["####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."],
        'e' => ["#####", "#....", "#....", "####.", "#....", "#....", "#####"],
        'f' => ["#####", "#....", "#....", "####.", "#....", "#....", "#...."],
        'g' => [".####", "#....", "#....", "#.###", "#...#", "#...#", ".###."],
        'h' => ["#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
        'i' => ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "#####"],
        'j' => ["#####", "....#", "....#", "....#", "....#", "#...#", ".###."],
        'k' => ["#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"],
        'l' => ["#....", "#....", "#....", "#....", "#....", "#....", "#####"],
        'm' => ["#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"],
        'n' => ["#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#"],
        'o' => [".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
        'p' => ["####.", "#...#", "#...#", "####.", "#....", "#....", "#...."],
        'q' => [".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"],
        'r' => ["####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"],
        's' => [".####", "#....", "#....", ".###.", "....#", "....#", "####."],
        't' => ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."],
        'u' => ["#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
        'v' => ["#...#", "#...#", "#...#", "#...#", ".#.#.", ".#.#.", "..#.."],
        'w' => ["#...#", "#...#", "#...#", "#.#.#", "#.#.#", "##.##", "#...#"],
        'x' => ["#...#", ".#.#.", ".#.#.", "..#..", ".#.#.", ".#.#.", "#...#"],
        'y' => ["#...#", ".#.#.", ".#.#.", "..#..", "..#..", "..#..", "..#.."],
        'z' => ["#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"],
        '0' => [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."],
        '1' => ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."],
        '2' => [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
        '3' => [".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."],
        '4' => ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
        '5' => ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
        '6' => [".###.", "#....", "#....", "####.", "#...#", "#...#", ".###."],
        '7' => ["#####", "....#", "...#.", "..#..", "..#..", "..#..", "..#.."],
        '8' => [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."],
        '9' => [".###.", "#...#", "#...#", ".####", "....#", "....#", ".###."],
        _ => return None,
    };
    Some(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{binarize, connected_components};

    #[test]
    fn every_glyph_is_one_connected_component() {
        for c in "abcdefghijklmnopqrstuvwxyz0123456789".chars() {
            let rows = glyph(c).unwrap();
            let mask: Vec<bool> = rows
                .iter()
                .flat_map(|r| r.bytes().map(|b| b == b'#'))
                .collect();
            let bin = crate::imaging::BinaryImage::new(GLYPH_W, GLYPH_H, mask).unwrap();
            let ccs = connected_components(&bin);
            assert_eq!(ccs.len(), 1, "glyph {c:?} splits into {} components", ccs.len());
        }
    }

    #[test]
    fn single_word_page_has_tight_ground_truth() {
        let spec = SynthSpec {
            pages: 1,
            lines_per_page: 1,
            words_per_line: 1,
            noise: 0.0,
            baseline_jitter: 0,
            ..Default::default()
        };
        let ds = render_synthetic(&spec).unwrap();
        assert_eq!(ds.words.len(), 1);
        let (_, page) = &ds.pages[0];
        let bbox = ds.words[0].bbox;
        // all ink inside the box, and the box edges touch ink
        let mut outside_ink = 0;
        for y in 0..page.height() {
            for x in 0..page.width() {
                let inked = page.get(x, y) < 128;
                let inside = (bbox.x..bbox.right()).contains(&(x as u32))
                    && (bbox.y..bbox.bottom()).contains(&(y as u32));
                if inked && !inside {
                    outside_ink += 1;
                }
            }
        }
        assert_eq!(outside_ink, 0);
        let edge_has_ink = |pred: &dyn Fn(u32, u32) -> bool| {
            (bbox.x..bbox.right())
                .flat_map(|x| (bbox.y..bbox.bottom()).map(move |y| (x, y)))
                .filter(|&(x, y)| pred(x, y))
                .any(|(x, y)| page.get(x as usize, y as usize) < 128)
        };
        assert!(edge_has_ink(&|x, _| x == bbox.x));
        assert!(edge_has_ink(&|x, _| x == bbox.right() - 1));
        assert!(edge_has_ink(&|_, y| y == bbox.y));
        assert!(edge_has_ink(&|_, y| y == bbox.bottom() - 1));
    }

    #[test]
    fn noiseless_render_recovers_per_glyph_components() {
        let spec = SynthSpec {
            lexicon: vec!["letter".into(), "and".into()],
            pages: 1,
            lines_per_page: 2,
            words_per_line: 2,
            noise: 0.0,
            baseline_jitter: 0,
            seed: 3,
            ..Default::default()
        };
        let ds = render_synthetic(&spec).unwrap();
        let (_, page) = &ds.pages[0];
        let bin = binarize(page, 0.75).unwrap();
        let ccs = connected_components(&bin);
        let expected: usize = ds.words.iter().map(|w| w.transcription.chars().count()).sum();
        assert_eq!(ccs.len(), expected);
        // union of each word's component boxes equals its ground-truth box
        for word in &ds.words {
            let members: Vec<_> = ccs
                .iter()
                .filter(|cc| {
                    cc.bbox.x >= word.bbox.x
                        && cc.bbox.right() <= word.bbox.right()
                        && cc.bbox.y >= word.bbox.y
                        && cc.bbox.bottom() <= word.bbox.bottom()
                })
                .collect();
            assert_eq!(members.len(), word.transcription.chars().count());
            let union = members
                .iter()
                .map(|cc| cc.bbox)
                .reduce(|a, b| a.union(&b))
                .unwrap();
            assert_eq!(union, word.bbox, "word {}", word.transcription);
        }
    }

    #[test]
    fn same_seed_renders_identical_pixels() {
        let spec = SynthSpec { pages: 2, ..Default::default() };
        let a = render_synthetic(&spec).unwrap();
        let b = render_synthetic(&spec).unwrap();
        for ((ida, pa), (idb, pb)) in a.pages.iter().zip(&b.pages) {
            assert_eq!(ida, idb);
            assert_eq!(pa, pb);
        }
        assert_eq!(a.words, b.words);
    }

    #[test]
    fn ground_truth_boxes_on_a_line_never_overlap() {
        let ds = render_synthetic(&SynthSpec { pages: 3, ..Default::default() }).unwrap();
        for (id, _) in &ds.pages {
            let words = ds.words_on(id);
            for (i, a) in words.iter().enumerate() {
                for b in words.iter().skip(i + 1) {
                    assert_eq!(
                        crate::proposals::iou(&a.bbox, &b.bbox),
                        0.0,
                        "{} overlaps {}",
                        a.transcription,
                        b.transcription
                    );
                }
            }
        }
    }

    #[test]
    fn unsupported_lexicon_characters_are_rejected() {
        let spec = SynthSpec { lexicon: vec!["naïve".into()], ..Default::default() };
        assert!(render_synthetic(&spec).is_err());
    }
}
