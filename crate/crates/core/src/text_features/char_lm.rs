use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::FeatureError;

pub const DEFAULT_LM_ORDER: usize = 3;
pub const DEFAULT_LM_SMOOTHING: f64 = 0.1;

/// Padding symbol for contexts that reach before the start of a string.
const BOS: char = '\u{2}';

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct ContextCounts {
    total: u64,
    next: BTreeMap<char, u64>,
}

/// Character n-gram model with add-k smoothing.
///
/// `order` is the number of preceding characters a prediction is conditioned
/// on, so order 1 is a bigram model. Characters never seen in training share
/// one unknown symbol, which is why the alphabet is one larger than the set of
/// observed characters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharNgramModel {
    order: usize,
    smoothing_k: f64,
    alphabet: BTreeSet<char>,
    contexts: BTreeMap<String, ContextCounts>,
}

pub fn train_char_lm<S: AsRef<str>>(
    corpus: &[S],
    order: usize,
    smoothing_k: f64,
) -> Result<CharNgramModel, FeatureError> {
    if order == 0 {
        return Err(FeatureError::InvalidParameter("order must be >= 1".into()));
    }
    if !(smoothing_k > 0.0 && smoothing_k.is_finite()) {
        return Err(FeatureError::InvalidParameter(format!(
            "smoothing_k must be positive, got {smoothing_k}"
        )));
    }
    let mut model = CharNgramModel {
        order,
        smoothing_k,
        alphabet: BTreeSet::new(),
        contexts: BTreeMap::new(),
    };
    for doc in corpus {
        model.observe(doc.as_ref());
    }
    if model.alphabet.is_empty() {
        return Err(FeatureError::EmptyCorpus);
    }
    Ok(model)
}

impl CharNgramModel {
    fn observe(&mut self, text: &str) {
        let mut window: Vec<char> = vec![BOS; self.order];
        for ch in text.chars() {
            let ctx: String = window.iter().collect();
            let entry = self.contexts.entry(ctx).or_default();
            entry.total += 1;
            *entry.next.entry(ch).or_insert(0) += 1;
            self.alphabet.insert(ch);
            window.remove(0);
            window.push(ch);
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing_k(&self) -> f64 {
        self.smoothing_k
    }

    /// Observed characters plus one unknown symbol.
    pub fn alphabet_size(&self) -> usize {
        self.alphabet.len() + 1
    }

    /// Smoothed probability of `next` following `context` (the last `order`
    /// characters, left-padded).
    pub fn prob(&self, context: &str, next: char) -> f64 {
        let v = self.alphabet_size() as f64;
        let k = self.smoothing_k;
        let (count, total) = match self.contexts.get(context) {
            Some(c) => {
                // unseen characters all map to the unknown symbol, which never
                // has training counts
                let n = if self.alphabet.contains(&next) {
                    c.next.get(&next).copied().unwrap_or(0)
                } else {
                    0
                };
                (n, c.total)
            }
            None => (0, 0),
        };
        (count as f64 + k) / (total as f64 + k * v)
    }

    /// Per-character perplexity of `text`; the empty string is assigned the
    /// alphabet size.
    pub fn perplexity(&self, text: &str) -> f64 {
        let mut window: Vec<char> = vec![BOS; self.order];
        let mut log_sum = 0.0;
        let mut n = 0usize;
        for ch in text.chars() {
            let ctx: String = window.iter().collect();
            log_sum += self.prob(&ctx, ch).ln();
            n += 1;
            window.remove(0);
            window.push(ch);
        }
        if n == 0 {
            self.alphabet_size() as f64
        } else {
            (-log_sum / n as f64).exp()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn repetitive_text_is_less_perplexing() {
        let lm = train_char_lm(&["aaaa"], 2, 0.1).unwrap();
        assert!(lm.perplexity("aaa") < lm.perplexity("abc"));
    }

    #[test]
    fn empty_string_perplexity_is_alphabet_size() {
        let lm = train_char_lm(&["abc"], 3, 0.1).unwrap();
        assert_eq!(lm.alphabet_size(), 4);
        assert_eq!(lm.perplexity(""), 4.0);
    }

    #[test]
    fn add_k_arithmetic() {
        let lm = train_char_lm(&["ab"], 1, 1.0).unwrap();
        let v = lm.alphabet_size() as f64;
        assert_eq!(v, 3.0);
        // context "a" was seen once, followed by "b" once
        assert_eq!(lm.prob("a", 'b'), (1.0 + 1.0) / (1.0 + v * 1.0));
        // "ab" = P(a | BOS) * P(b | a) = (2/4) * (2/4)
        let expected = ((0.5f64).ln() * 2.0 / -2.0).exp();
        assert!((lm.perplexity("ab") - expected).abs() < 1e-12);
    }

    #[test]
    fn unknown_characters_get_smoothed_mass() {
        let lm = train_char_lm(&["abc"], 2, 0.1).unwrap();
        let p = lm.perplexity("xyz");
        assert!(p.is_finite() && p >= 1.0);
    }

    #[test]
    fn rejects_empty_corpus_and_bad_parameters() {
        assert!(matches!(
            train_char_lm(&["", ""], 3, 0.1),
            Err(FeatureError::EmptyCorpus)
        ));
        assert!(train_char_lm(&["a"], 0, 0.1).is_err());
        assert!(train_char_lm(&["a"], 2, 0.0).is_err());
    }

    #[test]
    fn serde_roundtrip() {
        let lm = train_char_lm(&["a red car", "é"], 3, 0.1).unwrap();
        let json = serde_json::to_string(&lm).unwrap();
        let back: CharNgramModel = serde_json::from_str(&json).unwrap();
        assert_eq!(lm, back);
    }

    proptest! {
        #[test]
        fn corpus_order_does_not_matter(
            docs in prop::collection::vec("[a-e ]{0,12}", 1..6),
            probe in "[a-f ]{0,10}",
        ) {
            prop_assume!(docs.iter().any(|d| !d.is_empty()));
            let mut reversed = docs.clone();
            reversed.reverse();
            let a = train_char_lm(&docs, 3, 0.1).unwrap();
            let b = train_char_lm(&reversed, 3, 0.1).unwrap();
            prop_assert_eq!(a.perplexity(&probe).to_bits(), b.perplexity(&probe).to_bits());
            prop_assert!(a.perplexity(&probe) >= 1.0);
        }
    }
}
