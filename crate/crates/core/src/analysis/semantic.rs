//! Embeddings and pairwise cosine-similarity statistics.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use super::AnalysisError;

/// Sparse vector with indices in increasing order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Embedding {
    entries: Vec<(u32, f64)>,
}

impl Embedding {
    /// Builds from unordered entries, summing repeated indices.
    pub fn from_entries(entries: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut merged: BTreeMap<u32, f64> = BTreeMap::new();
        for (i, v) in entries {
            *merged.entry(i).or_default() += v;
        }
        Self {
            entries: merged.into_iter().filter(|(_, v)| *v != 0.0).collect(),
        }
    }

    pub fn from_dense(values: &[f64]) -> Self {
        Self::from_entries(values.iter().enumerate().map(|(i, &v)| (i as u32, v)))
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    /// Scaled to unit length; the zero vector stays zero.
    pub fn normalized(mut self) -> Self {
        let norm = self.norm();
        if norm > 0.0 {
            for (_, v) in &mut self.entries {
                *v /= norm;
            }
        }
        self
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        let (mut i, mut j, mut sum) = (0, 0, 0.0);
        while i < self.entries.len() && j < other.entries.len() {
            let (a, x) = self.entries[i];
            let (b, y) = other.entries[j];
            match a.cmp(&b) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    sum += x * y;
                    i += 1;
                    j += 1;
                }
            }
        }
        sum
    }
}

/// Turns texts into unit-norm vectors of a fixed dimension (the zero vector
/// only for empty text).
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> String;

    fn dimension(&self) -> usize;

    fn embed(&self, texts: &[String]) -> Vec<Embedding>;
}

/// 32-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u32 {
    let mut hash: u32 = 0x811c_9dc5;
    for &b in bytes {
        hash ^= u32::from(b);
        hash = hash.wrapping_mul(0x0100_0193);
    }
    hash
}

/// Term-frequency vector of hashed character trigrams and word unigrams.
#[derive(Debug, Clone)]
pub struct HashedProvider {
    dimension: usize,
}

impl Default for HashedProvider {
    fn default() -> Self {
        Self { dimension: 1 << 16 }
    }
}

impl HashedProvider {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension: dimension.max(1),
        }
    }

    fn bucket(&self, kind: u8, feature: &str) -> u32 {
        let mut bytes = Vec::with_capacity(feature.len() + 2);
        bytes.push(kind);
        bytes.push(b':');
        bytes.extend_from_slice(feature.as_bytes());
        (fnv1a(&bytes) as usize % self.dimension) as u32
    }

    pub fn embed_one(&self, text: &str) -> Embedding {
        let lower = text.to_lowercase();
        let mut entries = Vec::new();
        for word in lower.unicode_words() {
            entries.push((self.bucket(b'w', word), 1.0));
            let padded: Vec<char> = format!(" {word} ").chars().collect();
            for gram in padded.windows(3) {
                entries.push((self.bucket(b'c', &gram.iter().collect::<String>()), 1.0));
            }
        }
        Embedding::from_entries(entries).normalized()
    }
}

impl EmbeddingProvider for HashedProvider {
    fn name(&self) -> String {
        format!("hashed-trigram-unigram-{}", self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Vec<Embedding> {
        texts.iter().map(|t| self.embed_one(t)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityOptions {
    /// Pair cap; all pairs are used when there are no more than this.
    pub max_pairs: usize,
    pub seed: u64,
    /// Leave out pairs of identical texts, so that a corpus repeated k times
    /// has the same statistics as the corpus itself.
    pub skip_identical: bool,
}

impl Default for SimilarityOptions {
    fn default() -> Self {
        Self {
            max_pairs: 100_000,
            seed: 0,
            skip_identical: false,
        }
    }
}

pub const HISTOGRAM_BINS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityStats {
    pub mean: f64,
    pub std: f64,
    pub pairs: usize,
    pub exhaustive: bool,
    /// (lower edge, count) over [−1, 1].
    pub histogram: Vec<(f64, usize)>,
}

/// Row-major index of the `k`-th pair (i < j) among `n` items.
pub fn pair_at(k: u64, n: u64) -> (usize, usize) {
    let total = n * (n - 1) / 2;
    let remaining = total - k;
    // largest m with m(m-1)/2 < remaining, counted from the end
    let mut m = (((8.0 * remaining as f64 + 1.0).sqrt() + 1.0) / 2.0).floor() as u64;
    while m * (m - 1) / 2 >= remaining {
        m -= 1;
    }
    while (m + 1) * m / 2 < remaining {
        m += 1;
    }
    let i = n - 1 - m;
    let before = total - m * (m + 1) / 2;
    let j = i + 1 + (k - before);
    (i as usize, j as usize)
}

fn histogram_bin(similarity: f64) -> usize {
    (((similarity + 1.0) / 2.0 * HISTOGRAM_BINS as f64).floor() as usize).min(HISTOGRAM_BINS - 1)
}

/// Cosine-similarity statistics over distinct pairs of `texts`. All pairs
/// are used when there are at most `max_pairs`, otherwise `max_pairs` of
/// them are drawn uniformly without replacement.
pub fn pairwise_similarity_stats(
    texts: &[String],
    provider: &dyn EmbeddingProvider,
    options: &SimilarityOptions,
) -> Result<SimilarityStats, AnalysisError> {
    if texts.len() < 2 {
        return Err(AnalysisError::TooFewTexts(texts.len()));
    }
    let vectors = provider.embed(texts);
    let n = texts.len() as u64;
    let total = n * (n - 1) / 2;
    let exhaustive = total <= options.max_pairs as u64;
    let indices: Vec<u64> = if exhaustive {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let mut picked: Vec<u64> = index::sample(&mut rng, total as usize, options.max_pairs)
            .into_iter()
            .map(|k| k as u64)
            .collect();
        picked.sort_unstable();
        picked
    };
    let mut sims = Vec::with_capacity(indices.len());
    for k in indices {
        let (i, j) = pair_at(k, n);
        if options.skip_identical && texts[i] == texts[j] {
            continue;
        }
        sims.push(vectors[i].dot(&vectors[j]).clamp(-1.0, 1.0));
    }
    if sims.is_empty() {
        return Err(AnalysisError::TooFewTexts(0));
    }
    let mean = sims.iter().sum::<f64>() / sims.len() as f64;
    let variance = sims.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / sims.len() as f64;
    let mut counts = [0usize; HISTOGRAM_BINS];
    for &s in &sims {
        counts[histogram_bin(s)] += 1;
    }
    let width = 2.0 / HISTOGRAM_BINS as f64;
    Ok(SimilarityStats {
        mean,
        std: variance.sqrt(),
        pairs: sims.len(),
        exhaustive,
        histogram: counts
            .iter()
            .enumerate()
            .map(|(b, &c)| (-1.0 + b as f64 * width, c))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pair_indexing_enumerates_row_major() {
        for n in 2..12u64 {
            let mut expected = Vec::new();
            for i in 0..n as usize {
                for j in i + 1..n as usize {
                    expected.push((i, j));
                }
            }
            let got: Vec<_> = (0..n * (n - 1) / 2).map(|k| pair_at(k, n)).collect();
            assert_eq!(got, expected, "n = {n}");
        }
        let n = 200_000u64;
        let last = n * (n - 1) / 2 - 1;
        assert_eq!(pair_at(last, n), (199_998, 199_999));
        assert_eq!(pair_at(0, n), (0, 1));
    }

    #[test]
    fn bins_cover_the_interval() {
        assert_eq!(histogram_bin(-1.0), 0);
        assert_eq!(histogram_bin(1.0), HISTOGRAM_BINS - 1);
        assert_eq!(histogram_bin(0.0), HISTOGRAM_BINS / 2);
    }

    #[test]
    fn empty_text_embeds_to_zero() {
        let provider = HashedProvider::default();
        assert_eq!(provider.embed_one("").norm(), 0.0);
        assert!((provider.embed_one("a museum").norm() - 1.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn unit_norm_and_bounded(a in "[a-z ]{1,40}", b in "[a-z ]{1,40}") {
            let provider = HashedProvider::default();
            let (x, y) = (provider.embed_one(&a), provider.embed_one(&b));
            for v in [&x, &y] {
                let norm = v.norm();
                prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-6);
            }
            let s = x.dot(&y);
            prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&s));
        }
    }
}
