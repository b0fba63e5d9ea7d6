//! Vocabulary size of a corpus.

use std::collections::HashSet;

use unicode_segmentation::UnicodeSegmentation;

/// Lowercased word tokens under Unicode word segmentation.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.unicode_words().map(str::to_lowercase)
}

/// Number of distinct tokens across `texts`.
pub fn vocab_count<S: AsRef<str>>(texts: &[S]) -> usize {
    let mut vocab = HashSet::new();
    for text in texts {
        vocab.extend(tokens(text.as_ref()));
    }
    vocab.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_corpora() {
        assert_eq!(vocab_count(&["the cat sat", "the dog"]), 4);
        assert_eq!(vocab_count::<&str>(&[]), 0);
        assert_eq!(vocab_count(&["The THE the.", "don't stop"]), 3);
    }

    proptest! {
        #[test]
        fn union_monotone_and_order_free(a in proptest::collection::vec("[a-d ]{0,12}", 0..8), b in proptest::collection::vec("[a-f ]{0,12}", 0..8)) {
            let joined: Vec<String> = a.iter().chain(&b).cloned().collect();
            prop_assert!(vocab_count(&joined) >= vocab_count(&a).max(vocab_count(&b)));
            let mut reversed = joined.clone();
            reversed.reverse();
            prop_assert_eq!(vocab_count(&reversed), vocab_count(&joined));
            let doubled: Vec<String> = joined.iter().chain(&joined).cloned().collect();
            prop_assert_eq!(vocab_count(&doubled), vocab_count(&joined));
        }
    }
}
