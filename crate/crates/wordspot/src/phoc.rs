//! Pyramidal histogram-of-characters encoding for strings.
//!
//! A word is decomposed into pyramid levels; level L splits the unit interval
//! into L regions. Each (region, character) pair becomes one binary attribute
//! that fires when an occurrence of the character occupies the region. Bigram
//! attributes do the same for adjacent character pairs. Under the default
//! config (36 symbols, unigram levels 2-5, 50 bigrams at level 2) the vector
//! has 36*14 + 50*2 = 604 dimensions.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz0123456789";

/// 50 common English bigrams used by the default configuration.
pub const DEFAULT_BIGRAMS: [&str; 50] = [
    "th", "he", "in", "er", "an", "re", "on", "at", "en", "nd", "ti", "es", "or", "te", "of",
    "ed", "is", "it", "al", "ar", "st", "to", "nt", "ng", "se", "ha", "as", "ou", "io", "le",
    "ve", "co", "me", "de", "hi", "ri", "ro", "ic", "ne", "ea", "ra", "ce", "li", "ch", "ll",
    "be", "ma", "si", "om", "ur",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhocConfig {
    /// Ordered character set; encoding is case-folded onto it.
    pub alphabet: String,
    pub unigram_levels: Vec<usize>,
    pub bigrams: Vec<String>,
    pub bigram_levels: Vec<usize>,
    /// Fraction of the smaller of the two intervals (occupancy vs region)
    /// that must overlap for an attribute to fire.
    pub occupancy_overlap: f64,
}

impl Default for PhocConfig {
    fn default() -> Self {
        Self {
            alphabet: DEFAULT_ALPHABET.to_string(),
            unigram_levels: vec![2, 3, 4, 5],
            bigrams: DEFAULT_BIGRAMS.iter().map(|s| s.to_string()).collect(),
            bigram_levels: vec![2],
            occupancy_overlap: 0.5,
        }
    }
}

impl PhocConfig {
    pub fn dimension(&self) -> usize {
        phoc_dimension(self)
    }

    /// Hash of the canonical JSON serialization; embedded in checkpoints and
    /// stores so incompatible encodings cannot be mixed.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("phoc config serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    fn char_index(&self, c: char) -> Option<usize> {
        self.alphabet.chars().position(|a| a == c)
    }

    /// Lowercase and drop characters outside the alphabet.
    pub fn normalize(&self, word: &str) -> String {
        word.chars()
            .flat_map(|c| c.to_lowercase())
            .filter(|c| self.char_index(*c).is_some())
            .collect()
    }
}

/// Attribute vector; entries are binary for string encodings and
/// probabilities for network outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhocVector {
    pub values: Vec<f64>,
}

impl PhocVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn set_bits(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.5)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Normalized interval `[k/n, (k+1)/n]` occupied by character `k` of an
/// `n`-character word.
pub fn occupancy(k: usize, n: usize) -> (f64, f64) {
    debug_assert!(k < n);
    (k as f64 / n as f64, (k + 1) as f64 / n as f64)
}

/// Whether an occupancy interval counts as lying inside a pyramid region:
/// the overlap must reach `overlap_frac` of the smaller interval, so both a
/// narrow character inside a wide region and a wide character covering a
/// narrow region fire the attribute.
pub fn in_region(char_iv: (f64, f64), region_iv: (f64, f64), overlap_frac: f64) -> bool {
    let overlap = (char_iv.1.min(region_iv.1) - char_iv.0.max(region_iv.0)).max(0.0);
    let char_len = char_iv.1 - char_iv.0;
    let region_len = region_iv.1 - region_iv.0;
    overlap >= overlap_frac * char_len.min(region_len)
}

/// Total attribute count of a configuration.
pub fn phoc_dimension(cfg: &PhocConfig) -> usize {
    let unigram: usize = cfg.unigram_levels.iter().sum::<usize>() * cfg.alphabet.chars().count();
    let bigram: usize = cfg.bigram_levels.iter().sum::<usize>() * cfg.bigrams.len();
    unigram + bigram
}

/// Encode a word as a binary attribute vector. Layout: for each unigram level
/// in order, for each region, one bit per alphabet character; then the bigram
/// sections likewise. A bigram occupies the union of its two characters'
/// intervals; single-character words set no bigram bits.
pub fn encode_string(word: &str, cfg: &PhocConfig) -> Result<PhocVector> {
    let normalized = cfg.normalize(word);
    if normalized.is_empty() {
        return Err(Error::InvalidInput(format!(
            "word {word:?} is empty after normalization"
        )));
    }
    let chars: Vec<char> = normalized.chars().collect();
    let n = chars.len();
    let alphabet_len = cfg.alphabet.chars().count();
    let mut values = vec![0.0f64; phoc_dimension(cfg)];
    let mut offset = 0;

    for &level in &cfg.unigram_levels {
        for region in 0..level {
            let region_iv = occupancy(region, level);
            for (k, &c) in chars.iter().enumerate() {
                let idx = cfg.char_index(c).expect("normalized char in alphabet");
                if in_region(occupancy(k, n), region_iv, cfg.occupancy_overlap) {
                    values[offset + region * alphabet_len + idx] = 1.0;
                }
            }
        }
        offset += level * alphabet_len;
    }

    for &level in &cfg.bigram_levels {
        for region in 0..level {
            let region_iv = occupancy(region, level);
            for j in 0..n.saturating_sub(1) {
                let pair: String = chars[j..j + 2].iter().collect();
                if let Some(b) = cfg.bigrams.iter().position(|bg| *bg == pair) {
                    let lo = occupancy(j, n).0;
                    let hi = occupancy(j + 1, n).1;
                    if in_region((lo, hi), region_iv, cfg.occupancy_overlap) {
                        values[offset + region * cfg.bigrams.len() + b] = 1.0;
                    }
                }
            }
        }
        offset += level * cfg.bigrams.len();
    }

    Ok(PhocVector { values })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force oracle: enumerate every (occurrence, region) pair directly
    /// from first principles, with its own interval arithmetic.
    pub(crate) fn encode_oracle(word: &str, cfg: &PhocConfig) -> Option<Vec<f64>> {
        let normalized: String = word
            .chars()
            .flat_map(|c| c.to_lowercase())
            .filter(|c| cfg.alphabet.contains(*c))
            .collect();
        if normalized.is_empty() {
            return None;
        }
        let chars: Vec<char> = normalized.chars().collect();
        let n = chars.len() as f64;
        let alphabet: Vec<char> = cfg.alphabet.chars().collect();
        let overlaps = |a0: f64, a1: f64, b0: f64, b1: f64| {
            let inter = (a1.min(b1) - a0.max(b0)).max(0.0);
            inter >= cfg.occupancy_overlap * (a1 - a0).min(b1 - b0)
        };
        let mut bits = Vec::new();
        for &level in &cfg.unigram_levels {
            for region in 0..level {
                let (r0, r1) = (region as f64 / level as f64, (region + 1) as f64 / level as f64);
                for &a in &alphabet {
                    let mut bit = 0.0;
                    for (k, &c) in chars.iter().enumerate() {
                        if c == a && overlaps(k as f64 / n, (k + 1) as f64 / n, r0, r1) {
                            bit = 1.0;
                        }
                    }
                    bits.push(bit);
                }
            }
        }
        for &level in &cfg.bigram_levels {
            for region in 0..level {
                let (r0, r1) = (region as f64 / level as f64, (region + 1) as f64 / level as f64);
                for bg in &cfg.bigrams {
                    let mut bit = 0.0;
                    for k in 0..chars.len().saturating_sub(1) {
                        let pair: String = chars[k..k + 2].iter().collect();
                        if pair == *bg && overlaps(k as f64 / n, (k + 2) as f64 / n, r0, r1) {
                            bit = 1.0;
                        }
                    }
                    bits.push(bit);
                }
            }
        }
        Some(bits)
    }

    #[test]
    fn occupancy_intervals() {
        assert_eq!(occupancy(0, 1), (0.0, 1.0));
        assert_eq!(occupancy(0, 2), (0.0, 0.5));
        assert_eq!(occupancy(3, 4), (0.75, 1.0));
    }

    #[test]
    fn in_region_boundary_and_disjoint() {
        assert!(in_region((0.0, 1.0), (0.0, 0.5), 0.5));
        assert!(!in_region((0.0, 0.25), (0.5, 1.0), 0.5));
    }

    #[test]
    fn beta_level_two_halves() {
        // occupancy-interval oracle over all four characters of "beta"
        let halves = [(0.0, 0.5), (0.5, 1.0)];
        let expect_left = ['b', 'e'];
        let expect_right = ['t', 'a'];
        for (k, c) in "beta".chars().enumerate() {
            let iv = occupancy(k, 4);
            assert_eq!(in_region(iv, halves[0], 0.5), expect_left.contains(&c), "{c} left");
            assert_eq!(in_region(iv, halves[1], 0.5), expect_right.contains(&c), "{c} right");
        }
    }

    #[test]
    fn default_dimension_is_604() {
        let cfg = PhocConfig::default();
        assert_eq!(phoc_dimension(&cfg), 604);
        assert_eq!(encode_string("anything", &cfg).unwrap().dim(), 604);
    }

    #[test]
    fn dimension_formula_variants() {
        let mut cfg = PhocConfig { unigram_levels: vec![2], bigrams: vec![], bigram_levels: vec![], ..PhocConfig::default() };
        assert_eq!(phoc_dimension(&cfg), 72);
        cfg = PhocConfig {
            alphabet: "abcdefghijklmnopqrstuvwxyz".into(),
            unigram_levels: vec![2, 3, 4, 5],
            ..PhocConfig::default()
        };
        assert_eq!(phoc_dimension(&cfg), 26 * 14 + 100);
    }

    #[test]
    fn single_char_word_sets_one_bit_per_region_and_no_bigrams() {
        let cfg = PhocConfig::default();
        let vec = encode_string("a", &cfg).unwrap();
        let oracle = encode_oracle("a", &cfg).unwrap();
        assert_eq!(vec.values, oracle);
        // the full-span character covers every region at every level
        let set = vec.set_bits();
        assert_eq!(set.len(), 14, "one bit per region across levels 2-5");
        let unigram_dims = 36 * 14;
        assert!(set.iter().all(|&i| i < unigram_dims), "no bigram bits");
    }

    #[test]
    fn anagrams_differ() {
        let cfg = PhocConfig::default();
        let a = encode_string("listen", &cfg).unwrap();
        let b = encode_string("silent", &cfg).unwrap();
        assert_eq!(a.values, encode_oracle("listen", &cfg).unwrap());
        assert_ne!(a.values, b.values);
    }

    #[test]
    fn case_insensitive_and_deterministic() {
        let cfg = PhocConfig::default();
        assert_eq!(
            encode_string("Word", &cfg).unwrap(),
            encode_string("word", &cfg).unwrap()
        );
        assert_eq!(
            encode_string("word", &cfg).unwrap(),
            encode_string("word", &cfg).unwrap()
        );
    }

    #[test]
    fn out_of_alphabet_characters_dropped() {
        let cfg = PhocConfig::default();
        assert_eq!(
            encode_string("com-pany!", &cfg).unwrap(),
            encode_string("company", &cfg).unwrap()
        );
        assert!(encode_string("!!!", &cfg).is_err());
        assert!(encode_string("", &cfg).is_err());
    }

    #[test]
    fn bits_only_for_present_characters_and_every_char_fires_each_level() {
        use rand::{RngExt, SeedableRng};
        let cfg = PhocConfig::default();
        let alphabet: Vec<char> = cfg.alphabet.chars().collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let len = rng.random_range(1..=12);
            let word: String = (0..len)
                .map(|_| alphabet[rng.random_range(0..alphabet.len())])
                .collect();
            let vec = encode_string(&word, &cfg).unwrap();
            let mut offset = 0;
            for &level in &cfg.unigram_levels {
                let mut fired: Vec<bool> = vec![false; alphabet.len()];
                for region in 0..level {
                    for (i, &a) in alphabet.iter().enumerate() {
                        if vec.values[offset + region * alphabet.len() + i] > 0.5 {
                            assert!(word.contains(a), "spurious bit for {a} in {word}");
                            fired[i] = true;
                        }
                    }
                }
                for (i, &a) in alphabet.iter().enumerate() {
                    if word.contains(a) {
                        assert!(fired[i], "{a} set no bit at level {level} for {word}");
                    }
                }
                offset += level * alphabet.len();
            }
        }
    }

    #[test]
    fn oracle_equivalence_on_random_words() {
        use rand::{RngExt, SeedableRng};
        let cfg = PhocConfig::default();
        let alphabet: Vec<char> = cfg.alphabet.chars().collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let len = rng.random_range(1..=12);
            let word: String = (0..len)
                .map(|_| alphabet[rng.random_range(0..alphabet.len())])
                .collect();
            assert_eq!(
                encode_string(&word, &cfg).unwrap().values,
                encode_oracle(&word, &cfg).unwrap(),
                "mismatch for {word}"
            );
        }
    }

    #[test]
    fn config_hash_distinguishes_configs() {
        let a = PhocConfig::default();
        let mut b = PhocConfig::default();
        b.unigram_levels = vec![2, 3];
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), PhocConfig::default().hash());
        assert_eq!(a.hash().len(), 64);
    }
}
