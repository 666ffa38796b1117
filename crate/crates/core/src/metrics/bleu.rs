//! BLEU with up to 4-grams.
//!
//! Precisions are clipped against the per-n-gram maximum reference count.
//! A zero precision for n >= 2 is smoothed to `(0 + 1) / (total + 1)`; a zero
//! unigram precision gives a score of 0. The brevity penalty uses the
//! reference length closest to the hypothesis (shorter wins ties).

use std::collections::HashMap;

use crate::error::{Error, Result};

const MAX_N: usize = 4;

fn ngrams(words: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if words.len() >= n {
        for w in words.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Clipped matches and hypothesis n-gram totals for n = 1..=4, plus the
/// hypothesis length and effective reference length.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; MAX_N],
    pub totals: [usize; MAX_N],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn of(hyp: &[String], refs: &[Vec<String>]) -> Result<Self> {
        if refs.is_empty() {
            return Err(Error::data("BLEU needs at least one reference"));
        }
        let mut st = BleuStats {
            hyp_len: hyp.len(),
            ref_len: refs
                .iter()
                .map(Vec::len)
                .min_by_key(|&r| (r.abs_diff(hyp.len()), r))
                .expect("refs non-empty"),
            ..Default::default()
        };
        for n in 1..=MAX_N {
            let h = ngrams(hyp, n);
            let ref_counts: Vec<_> = refs.iter().map(|r| ngrams(r, n)).collect();
            for (g, &c) in &h {
                let max_ref = ref_counts.iter().map(|r| r.get(g).copied().unwrap_or(0)).max().unwrap_or(0);
                st.matches[n - 1] += c.min(max_ref);
            }
            st.totals[n - 1] = hyp.len().saturating_sub(n - 1);
        }
        Ok(st)
    }

    pub fn add(&mut self, other: &BleuStats) {
        for n in 0..MAX_N {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// Score in `[0, 100]`.
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 || self.matches[0] == 0 {
            return 0.0;
        }
        let mut log_p = 0.0;
        for n in 0..MAX_N {
            let (m, t) = (self.matches[n], self.totals[n]);
            let p = if m == 0 { 1.0 / (t as f64 + 1.0) } else { m as f64 / t as f64 };
            log_p += p.ln() / MAX_N as f64;
        }
        let (c, r) = (self.hyp_len as f64, self.ref_len as f64);
        let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        100.0 * bp * log_p.exp()
    }
}

/// Sentence-level BLEU4 of `hyp` (words) against `refs`.
pub fn bleu4(hyp: &[String], refs: &[Vec<String>]) -> Result<f64> {
    Ok(BleuStats::of(hyp, refs)?.score())
}

/// Corpus-level BLEU4: n-gram statistics are pooled before scoring.
pub fn corpus_bleu4<'a>(pairs: impl IntoIterator<Item = (&'a [String], &'a [Vec<String>])>) -> Result<f64> {
    let mut total = BleuStats::default();
    for (h, r) in pairs {
        total.add(&BleuStats::of(h, r)?);
    }
    Ok(total.score())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn w(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    /// Counts n-grams by scanning joined strings, independent of the
    /// slice-keyed map used above.
    fn oracle(hyp: &[String], reference: &[String]) -> f64 {
        if hyp.is_empty() {
            return 0.0;
        }
        let grams = |s: &[String], n: usize| -> Vec<String> {
            (0..s.len().saturating_sub(n - 1)).map(|i| s[i..i + n].join(" ")).collect()
        };
        let mut logs = 0.0;
        for n in 1..=4 {
            let hg = grams(hyp, n);
            let mut rg = grams(reference, n);
            let mut m = 0;
            for g in &hg {
                if let Some(pos) = rg.iter().position(|x| x == g) {
                    rg.remove(pos);
                    m += 1;
                }
            }
            if n == 1 && m == 0 {
                return 0.0;
            }
            let p = if m == 0 { 1.0 / (hg.len() as f64 + 1.0) } else { m as f64 / hg.len() as f64 };
            logs += p.ln();
        }
        let (c, r) = (hyp.len() as f64, reference.len() as f64);
        let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        100.0 * bp * (logs / 4.0).exp()
    }

    #[test]
    fn identical_is_perfect() {
        let r = w("red cat a p");
        assert!((bleu4(&r, std::slice::from_ref(&r)).unwrap() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn empty_hypothesis_scores_zero() {
        assert_eq!(bleu4(&[], &[w("a b c d")]).unwrap(), 0.0);
        assert!(bleu4(&w("a"), &[]).is_err());
    }

    #[test]
    fn brevity_penalty_for_half_length() {
        let r = w("a b c d e f g h");
        let h = w("a b c d");
        // every n-gram of the prefix matches, so only the penalty remains
        assert!((bleu4(&h, &[r]).unwrap() - 100.0 * (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn matches_joined_string_oracle_on_random_pairs() {
        let vocab = ["red", "cat", "a", "p", "dog", "big"];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gen = |rng: &mut ChaCha8Rng| -> Vec<String> {
            let n = rng.gen_range(1..=7);
            (0..n).map(|_| vocab[rng.gen_range(0..vocab.len())].to_string()).collect()
        };
        for _ in 0..50 {
            let (h, r) = (gen(&mut rng), gen(&mut rng));
            let got = bleu4(&h, std::slice::from_ref(&r)).unwrap();
            assert!((got - oracle(&h, &r)).abs() < 1e-9, "{h:?} vs {r:?}");
        }
    }

    #[test]
    fn zero_four_gram_overlap_uses_smoothing() {
        let h = w("red cat a p q");
        let r = w("red cat a x p q");
        let got = bleu4(&h, std::slice::from_ref(&r)).unwrap();
        assert!((got - oracle(&h, &r)).abs() < 1e-9);
        assert!(got > 0.0 && got < 100.0);
    }

    #[test]
    fn corpus_pools_counts() {
        let (h1, r1) = (w("a b c d"), vec![w("a b c d")]);
        let (h2, r2) = (w("x y"), vec![w("x y z w")]);
        let c = corpus_bleu4([(h1.as_slice(), r1.as_slice()), (h2.as_slice(), r2.as_slice())]).unwrap();
        let mut s = BleuStats::of(&h1, &r1).unwrap();
        s.add(&BleuStats::of(&h2, &r2).unwrap());
        assert_eq!(c, s.score());
        assert!(c < 100.0);
    }

    proptest::proptest! {
        #[test]
        fn bleu_is_a_bounded_percentage(
            hyp in proptest::collection::vec("[a-d]", 0..9),
            reference in proptest::collection::vec("[a-d]", 1..9),
        ) {
            let s = bleu4(&hyp, std::slice::from_ref(&reference)).unwrap();
            proptest::prop_assert!((0.0..=100.0).contains(&s));
            if reference.len() >= 4 {
                let same = bleu4(&reference, std::slice::from_ref(&reference)).unwrap();
                proptest::prop_assert!((same - 100.0).abs() < 1e-9);
            }
        }
    }
}
