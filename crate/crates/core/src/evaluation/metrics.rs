//! Surface-overlap, diversity and ranking metrics.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use crate::corpus::word_tokens;

/// Floor for zero n-gram match counts in BLEU.
pub const BLEU_EPSILON: f64 = 1e-9;
/// Recall weight of the ROUGE-L F-measure.
pub const ROUGE_BETA: f64 = 1.2;

/// Tokens the text metrics operate on: lowercase words, punctuation dropped.
pub fn metric_tokens(text: &str) -> Vec<String> {
    word_tokens(text)
}

/// Splits text into steps at sentence-final punctuation.
pub fn split_steps(text: &str) -> Vec<String> {
    text.split(['.', '!', '?']).map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()
}

fn ngram_counts<T: Eq + Hash + Clone>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU over aligned (candidate, reference) pairs, ×100. `n = 1` is
/// the clipped unigram precision; larger `n` takes the geometric mean of the
/// 1..=n precisions. Zero match counts are floored at [`BLEU_EPSILON`].
pub fn corpus_bleu<T: Eq + Hash + Clone>(pairs: &[(&[T], &[T])], n: usize) -> f64 {
    assert!(n >= 1, "BLEU order must be at least 1");
    let cand_len: usize = pairs.iter().map(|(c, _)| c.len()).sum();
    if cand_len == 0 {
        return 0.0;
    }
    let ref_len: usize = pairs.iter().map(|(_, r)| r.len()).sum();
    let mut log_sum = 0.0;
    for k in 1..=n {
        let (mut matches, mut total) = (0usize, 0usize);
        for (c, r) in pairs {
            let rc = ngram_counts(r, k);
            for (g, cnt) in ngram_counts(c, k) {
                matches += cnt.min(rc.get(g).copied().unwrap_or(0));
                total += cnt;
            }
        }
        let p = if matches == 0 { BLEU_EPSILON / total.max(1) as f64 } else { matches as f64 / total as f64 };
        log_sum += p.ln();
    }
    let bp = if cand_len > ref_len { 1.0 } else { (1.0 - ref_len as f64 / cand_len as f64).exp() };
    100.0 * bp * (log_sum / n as f64).exp()
}

/// BLEU of a single candidate against its reference.
pub fn bleu<T: Eq + Hash + Clone>(candidate: &[T], reference: &[T], n: usize) -> f64 {
    corpus_bleu(&[(candidate, reference)], n)
}

fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure with recall weight [`ROUGE_BETA`], ×100.
pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(candidate, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    100.0 * (1.0 + b2) * p * r / (r + b2 * p)
}

/// Percentage of distinct n-grams among all n-grams of the corpus.
pub fn distinct_n<T: Eq + Hash>(corpus: &[Vec<T>], n: usize) -> f64 {
    assert!(n >= 1, "n-gram order must be at least 1");
    let mut seen: HashSet<&[T]> = HashSet::new();
    let mut total = 0usize;
    for seq in corpus {
        if seq.len() >= n {
            for w in seq.windows(n) {
                seen.insert(w);
                total += 1;
            }
        }
    }
    if total == 0 {
        log::warn!("distinct-{n}: no sequence has {n} tokens");
        return 0.0;
    }
    100.0 * seen.len() as f64 / total as f64
}

/// Fraction of cases where the gold user ranked first.
pub fn uma(ranks: &[usize]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r == 1).count() as f64 / ranks.len() as f64
}

/// Mean reciprocal rank.
pub fn mrr(ranks: &[usize]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().map(|&r| 1.0 / r.max(1) as f64).sum::<f64>() / ranks.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identity_scores_full_marks() {
        let a = toks("melt the butter in a pan and add the garlic");
        assert!((bleu(&a, &a, 1) - 100.0).abs() < 1e-9);
        assert!((bleu(&a, &a, 4) - 100.0).abs() < 1e-9);
        assert!((rouge_l(&a, &a) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn disjoint_inputs_score_near_zero() {
        let a = toks("a b c");
        let b = toks("x y z");
        assert!(bleu(&a, &b, 1) < 1e-6);
        assert_eq!(rouge_l(&a, &b), 0.0);
        assert_eq!(bleu::<&str>(&[], &b, 4), 0.0);
        assert_eq!(rouge_l::<&str>(&[], &b), 0.0);
    }

    #[test]
    fn rouge_hand_example() {
        let (c, r) = (toks("a c d"), toks("a b c d"));
        let (p, rec) = (1.0, 0.75);
        let b2 = 1.44;
        let f = (1.0 + b2) * p * rec / (rec + b2 * p);
        assert!((rouge_l(&c, &r) - 100.0 * f).abs() < 1e-9);
    }

    #[test]
    fn brevity_penalty() {
        let r = toks("a b c d");
        let c = toks("a b");
        assert!((bleu(&c, &r, 1) - 100.0 * (1.0f64 - 2.0).exp()).abs() < 1e-9);
    }

    #[test]
    fn distinct_examples() {
        assert_eq!(distinct_n(&[toks("a a a a")], 1), 25.0);
        assert_eq!(distinct_n(&[toks("a b c")], 2), 100.0);
        let corpus = vec![toks("a b c a b"), toks("b c d")];
        // bigrams: ab bc ca ab | bc cd → distinct {ab, bc, ca, cd} = 4 of 6
        assert!((distinct_n(&corpus, 2) - 400.0 / 6.0).abs() < 1e-12);
        assert_eq!(distinct_n(&[toks("a")], 2), 0.0);
        let doubled: Vec<_> = corpus.iter().chain(&corpus).cloned().collect();
        assert!((distinct_n(&doubled, 2) - distinct_n(&corpus, 2) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ranking_metrics() {
        assert_eq!(uma(&[1, 1, 1]), 1.0);
        assert_eq!(uma(&[1, 2, 1, 10]), 0.5);
        assert_eq!(mrr(&[1, 1]), 1.0);
        assert!((mrr(&[1, 2, 4]) - 1.75 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn steps_split_on_sentence_marks() {
        assert_eq!(split_steps("melt butter . add sugar ! stir? "), vec!["melt butter", "add sugar", "stir"]);
        assert!(split_steps(" . . ").is_empty());
    }

    proptest::proptest! {
        #[test]
        fn uma_never_exceeds_mrr(ranks in proptest::collection::vec(1usize..=10, 1..50)) {
            proptest::prop_assert!(uma(&ranks) <= mrr(&ranks) + 1e-15);
        }

        #[test]
        fn metrics_ignore_token_identity(seq in proptest::collection::vec(0u8..6, 1..20), other in proptest::collection::vec(0u8..6, 1..20)) {
            let relabel = |v: &[u8]| v.iter().map(|&x| (x as u32 * 7 + 3) % 11).collect::<Vec<u32>>();
            let (a, b) = (relabel(&seq), relabel(&other));
            proptest::prop_assert!((bleu(&seq, &other, 4) - bleu(&a, &b, 4)).abs() < 1e-9);
            proptest::prop_assert!((rouge_l(&seq, &other) - rouge_l(&a, &b)).abs() < 1e-9);
        }
    }
}
