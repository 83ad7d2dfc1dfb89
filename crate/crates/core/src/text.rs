//! Deterministic text utilities backing the answer and rephrase rewards:
//! answer normalization, a language-agnostic word tokenizer, term-frequency
//! cosine similarity, and the new-word ratio.

use std::collections::{BTreeMap, BTreeSet};

use crate::scalar::Scalar;

const TERMINAL_PUNCT: [char; 5] = ['.', ',', '!', '?', ';'];

/// Canonical form for answer comparison: lowercase, trimmed, terminal
/// punctuation stripped, internal whitespace runs collapsed.
pub fn normalize_answer(text: &str) -> String {
    let lower = text.to_lowercase();
    let stripped = lower.trim().trim_end_matches(TERMINAL_PUNCT);
    let mut out = String::with_capacity(stripped.len());
    for (i, word) in stripped.split_whitespace().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Lowercased word tokens: maximal runs of alphanumeric characters. Any
/// whitespace or punctuation acts as a separator; empty tokens are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

fn term_frequencies(tokens: &[String]) -> BTreeMap<&str, usize> {
    let mut tf = BTreeMap::new();
    for t in tokens {
        *tf.entry(t.as_str()).or_insert(0) += 1;
    }
    tf
}

/// Cosine of the term-frequency vectors of the two texts, in [0, 1].
/// Zero when either text has no tokens.
pub fn cosine_similarity_tf<F: Scalar>(a: &str, b: &str) -> F {
    let toks_a = tokenize(a);
    let toks_b = tokenize(b);
    if toks_a.is_empty() || toks_b.is_empty() {
        return F::zero();
    }
    let tf_a = term_frequencies(&toks_a);
    let tf_b = term_frequencies(&toks_b);
    if tf_a == tf_b {
        return F::one();
    }
    let mut dot = F::zero();
    for (tok, &ca) in &tf_a {
        if let Some(&cb) = tf_b.get(tok) {
            dot = dot + F::of_usize(ca) * F::of_usize(cb);
        }
    }
    let norm = |tf: &BTreeMap<&str, usize>| {
        tf.values()
            .map(|&c| F::of_usize(c * c))
            .fold(F::zero(), |acc, v| acc + v)
            .sqrt()
    };
    let cos = dot / (norm(&tf_a) * norm(&tf_b));
    cos.min(F::one()).max(F::zero())
}

/// Fraction of the rephrased question's tokens that are word types absent
/// from the original question: distinct new types over total rephrase
/// tokens. Zero when the rephrase has no tokens.
pub fn new_word_ratio<F: Scalar>(q_orig: &str, q_reph: &str) -> F {
    let toks_reph = tokenize(q_reph);
    if toks_reph.is_empty() {
        return F::zero();
    }
    let orig_set: BTreeSet<String> = tokenize(q_orig).into_iter().collect();
    let new_types: BTreeSet<&str> = toks_reph
        .iter()
        .map(String::as_str)
        .filter(|t| !orig_set.contains(*t))
        .collect();
    F::of_usize(new_types.len()) / F::of_usize(toks_reph.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_strips_case_punct_and_spaces() {
        assert_eq!(normalize_answer("In the Levant."), "in the levant");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("  Two   Dogs "), "two dogs");
        assert_eq!(normalize_answer("Hello!?"), "hello");
        assert_eq!(normalize_answer("42"), "42");
    }

    #[test]
    fn tokenizer_splits_on_whitespace_and_punct() {
        assert_eq!(
            tokenize("What is the man doing?"),
            vec!["what", "is", "the", "man", "doing"]
        );
        assert_eq!(tokenize("a-b_c"), vec!["a", "b", "c"]);
        assert_eq!(tokenize("  ?!  "), Vec::<String>::new());
    }

    #[test]
    fn cosine_identical_is_one() {
        assert_eq!(cosine_similarity_tf::<f64>("red cat", "red cat"), 1.0);
    }

    #[test]
    fn cosine_disjoint_is_zero() {
        assert_eq!(cosine_similarity_tf::<f64>("a b", "c d"), 0.0);
    }

    #[test]
    fn cosine_empty_is_zero() {
        assert_eq!(cosine_similarity_tf::<f64>("", "x"), 0.0);
        assert_eq!(cosine_similarity_tf::<f64>("x", ""), 0.0);
    }

    // Independent oracle: hand-built TF vectors over the two fixed texts.
    #[test]
    fn cosine_matches_hand_oracle() {
        let a = "what is the man doing";
        let b = "what is the man doing near the hoop";
        // a: what,is,the,man,doing all count 1 -> |a| = sqrt(5)
        // b: the count 2; what,is,man,doing,near,hoop count 1 -> |b| = sqrt(4+6)
        // dot = 4*1 + 1*2 = 6
        let expected = 6.0 / (5.0f64.sqrt() * 10.0f64.sqrt());
        let got: f64 = cosine_similarity_tf(a, b);
        assert!((got - expected).abs() < 1e-12, "got {got}, want {expected}");
    }

    #[test]
    fn new_word_ratio_counts_types_over_tokens() {
        let r: f64 = new_word_ratio(
            "what is the man doing",
            "what is the man doing near the hoop",
        );
        assert_eq!(r, 2.0 / 8.0);
    }

    #[test]
    fn new_word_ratio_degenerate_cases() {
        assert_eq!(new_word_ratio::<f64>("same question", "same question"), 0.0);
        assert_eq!(new_word_ratio::<f64>("anything", ""), 0.0);
        assert_eq!(new_word_ratio::<f64>("", "brand new words"), 1.0);
    }
}
