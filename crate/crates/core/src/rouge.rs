//! ROUGE-N and ROUGE-L over token sequences (no stemming, no stopword
//! removal).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    /// `overlap / hyp_total` and `overlap / ref_total`; zero when a side is
    /// empty, and F1 is zero when P + R is.
    pub fn from_counts(overlap: usize, hyp_total: usize, ref_total: usize) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(overlap, hyp_total);
        let recall = ratio(overlap, ref_total);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

fn ngram_counts<'a, T: AsRef<str>>(tokens: &'a [T], n: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        let key: Vec<&str> = w.iter().map(AsRef::as_ref).collect();
        *counts.entry(key).or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram overlap.
pub fn rouge_n<T: AsRef<str>>(reference: &[T], hypothesis: &[T], n: usize) -> RougeScore {
    let r = ngram_counts(reference, n);
    let h = ngram_counts(hypothesis, n);
    let overlap = h
        .iter()
        .map(|(k, &c)| c.min(r.get(k).copied().unwrap_or(0)))
        .sum();
    RougeScore::from_counts(overlap, h.values().sum(), r.values().sum())
}

pub fn lcs_len<T: AsRef<str>>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: AsRef<str>>(reference: &[T], hypothesis: &[T]) -> RougeScore {
    RougeScore::from_counts(lcs_len(reference, hypothesis), hypothesis.len(), reference.len())
}

/// R-1, R-2 and R-L for one pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeTriple {
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    pub rouge_l: RougeScore,
}

pub fn score<T: AsRef<str>>(reference: &[T], hypothesis: &[T]) -> RougeTriple {
    RougeTriple {
        rouge1: rouge_n(reference, hypothesis, 1),
        rouge2: rouge_n(reference, hypothesis, 2),
        rouge_l: rouge_l(reference, hypothesis),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn worked_examples() {
        let s = rouge_n(&t("the cat sat"), &t("the cat"), 1);
        assert_eq!(s.precision, 1.0);
        assert!((s.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.f1 - 0.8).abs() < 1e-12);
        let l = rouge_l(&t("a b c d"), &t("a c d b"));
        assert_eq!(lcs_len(&t("a b c d"), &t("a c d b")), 3);
        assert_eq!((l.precision, l.recall, l.f1), (0.75, 0.75, 0.75));
    }

    #[test]
    fn empty_sides_score_zero() {
        assert_eq!(rouge_l(&t("a b"), &[]), RougeScore::default());
        assert_eq!(rouge_n(&[], &t("a"), 1), RougeScore::default());
        assert_eq!(rouge_n(&t("a"), &t("a"), 2), RougeScore::default());
    }
}
