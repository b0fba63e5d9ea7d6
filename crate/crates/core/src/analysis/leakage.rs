//! Exact-duplicate detection between a synthetic corpus and a reference
//! corpus after light normalization.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LeakagePair {
    pub synthetic: usize,
    pub reference: usize,
}

/// Lowercases, collapses whitespace runs and strips trailing punctuation.
pub fn normalize(text: &str) -> String {
    let collapsed = text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(|c: char| !c.is_alphanumeric())
        .to_string()
}

/// Every (synthetic, reference) index pair with equal normalized forms,
/// ordered by synthetic index then reference index. Texts that normalize to
/// nothing are ignored.
pub fn leakage_check<S: AsRef<str>, R: AsRef<str>>(synthetic: &[S], reference: &[R]) -> Vec<LeakagePair> {
    let mut index: HashMap<String, Vec<usize>> = HashMap::new();
    for (j, text) in reference.iter().enumerate() {
        let key = normalize(text.as_ref());
        if !key.is_empty() {
            index.entry(key).or_default().push(j);
        }
    }
    let mut pairs = Vec::new();
    for (i, text) in synthetic.iter().enumerate() {
        if let Some(hits) = index.get(&normalize(text.as_ref())) {
            pairs.extend(hits.iter().map(|&j| LeakagePair {
                synthetic: i,
                reference: j,
            }));
        }
    }
    pairs
}
