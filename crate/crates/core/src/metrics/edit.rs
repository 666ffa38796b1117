//! Edit-distance error rates.

use crate::error::{Error, Result};
use crate::world::TextSeq;

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance over reference length, as a percentage.
pub fn error_rate<T: PartialEq>(hyp: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::data("error rate needs a non-empty reference"));
    }
    Ok(100.0 * edit_distance(hyp, reference) as f64 / reference.len() as f64)
}

/// Character error rate (percent); `<eos>` is not counted.
pub fn cer(hyp: &TextSeq, reference: &TextSeq) -> Result<f64> {
    error_rate(hyp.chars(), reference.chars())
}

/// Word error rate (percent) over whitespace-separated words.
pub fn wer(hyp: &TextSeq, reference: &TextSeq) -> Result<f64> {
    error_rate(&hyp.words(), &reference.words())
}

/// Corpus error rate: total edits over total reference length.
fn corpus_rate<T: PartialEq>(pairs: impl IntoIterator<Item = (Vec<T>, Vec<T>)>) -> Result<f64> {
    let (mut edits, mut len) = (0, 0);
    for (h, r) in pairs {
        if r.is_empty() {
            return Err(Error::data("error rate needs a non-empty reference"));
        }
        edits += edit_distance(&h, &r);
        len += r.len();
    }
    if len == 0 {
        return Err(Error::data("no references to score"));
    }
    Ok(100.0 * edits as f64 / len as f64)
}

/// Character errors pooled over a corpus, as a percentage.
pub fn corpus_cer<'a>(pairs: impl IntoIterator<Item = (&'a TextSeq, &'a TextSeq)>) -> Result<f64> {
    corpus_rate(pairs.into_iter().map(|(h, r)| (h.chars().to_vec(), r.chars().to_vec())))
}

/// Word errors pooled over a corpus, as a percentage.
pub fn corpus_wer<'a>(pairs: impl IntoIterator<Item = (&'a TextSeq, &'a TextSeq)>) -> Result<f64> {
    corpus_rate(pairs.into_iter().map(|(h, r)| (h.words(), r.words())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> TextSeq {
        TextSeq::parse(s, 64).unwrap()
    }

    /// Plain recursion over (i, j): the textbook definition, no tables.
    fn brute(a: &[u8], b: &[u8]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = brute(ra, rb) + usize::from(x != y);
                sub.min(brute(ra, b) + 1).min(brute(a, rb) + 1)
            }
        }
    }

    fn all_strings(alphabet: &[u8], max_len: usize) -> Vec<Vec<u8>> {
        let mut out = vec![vec![]];
        let mut frontier = vec![vec![]];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for s in &frontier {
                for &c in alphabet {
                    let mut n: Vec<u8> = s.clone();
                    n.push(c);
                    next.push(n);
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    #[test]
    fn matches_recursive_definition_exhaustively_to_length_four() {
        let all = all_strings(b"abc", 4);
        for a in &all {
            for b in &all {
                assert_eq!(edit_distance(a, b), brute(a, b));
            }
        }
    }

    #[test]
    fn known_values() {
        assert_eq!(cer(&t("abc"), &t("abc")).unwrap(), 0.0);
        assert!((cer(&t("kitten"), &t("sitting")).unwrap() - 300.0 / 7.0).abs() < 1e-12);
        assert_eq!(cer(&t(""), &t("abc")).unwrap(), 100.0);
        assert_eq!(wer(&t("red cat a p"), &t("red dog a p")).unwrap(), 25.0);
        assert!(cer(&t("abc"), &t("")).is_err());
    }

    #[test]
    fn corpus_rate_pools_lengths() {
        let (h1, r1, h2, r2) = (t("ab"), t("ab"), t("x"), t("abcd"));
        let c = corpus_cer([(&h1, &r1), (&h2, &r2)]).unwrap();
        assert!((c - 400.0 / 6.0).abs() < 1e-12);
    }

    use proptest::prelude::*;

    fn word() -> impl Strategy<Value = Vec<u8>> {
        proptest::collection::vec(0u8..4, 0..10)
    }

    proptest! {
        #[test]
        fn edit_distance_is_a_metric(a in word(), b in word(), c in word()) {
            let ab = edit_distance(&a, &b);
            prop_assert_eq!(ab, edit_distance(&b, &a));
            prop_assert_eq!(ab == 0, a == b);
            prop_assert!(ab <= a.len().max(b.len()));
            prop_assert!(ab >= a.len().abs_diff(b.len()));
            prop_assert!(edit_distance(&a, &c) <= ab + edit_distance(&b, &c));
        }

        #[test]
        fn corpus_rates_ignore_order(pairs in proptest::collection::vec(("[a-c ]{0,8}", "[a-c]{1,8}"), 1..6), rot in 0usize..6) {
            let seqs: Vec<(TextSeq, TextSeq)> = pairs
                .iter()
                .map(|(h, r)| (TextSeq::parse(h, 16).unwrap(), TextSeq::parse(r, 16).unwrap()))
                .collect();
            let mut turned = seqs.clone();
            turned.rotate_left(rot % seqs.len());
            let a = corpus_cer(seqs.iter().map(|(h, r)| (h, r))).unwrap();
            let b = corpus_cer(turned.iter().map(|(h, r)| (h, r))).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
