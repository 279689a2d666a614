//! Character-level language-model ingestion: vocabulary from the training
//! split, contiguous per-lane corpus slices, and stochastic hidden resets.

use std::collections::HashMap;
use std::path::Path;

use crate::rng::CounterRng;
use crate::{Error, Result};

/// Ordered set of unique codepoints with a reverse index.
#[derive(Clone, Debug)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharVocab {
    /// Sorted unique codepoints of `text`; deterministic for a given input.
    pub fn from_text(text: &str) -> CharVocab {
        let mut chars: Vec<char> = text.chars().collect();
        chars.sort_unstable();
        chars.dedup();
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        CharVocab { chars, index }
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn id(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    /// Encode text, reporting the first codepoint outside the vocabulary.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.id(c).ok_or(Error::UnknownCodepoint { codepoint: c as u32, ch: c })
            })
            .collect()
    }
}

/// A corpus split into train/valid/test with the vocabulary taken from the
/// training portion only.
#[derive(Clone, Debug)]
pub struct LmCorpus {
    pub vocab: CharVocab,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Read a UTF-8 file and split it 90/5/5 by character count; validation and
/// test encoding fails loudly on codepoints absent from the training split.
pub fn load_corpus(path: &Path) -> Result<LmCorpus> {
    let text = std::fs::read_to_string(path)?;
    if text.is_empty() {
        return Err(Error::EmptyInput);
    }
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let train_end = n * 90 / 100;
    let valid_end = n * 95 / 100;
    let train_text: String = chars[..train_end].iter().collect();
    let valid_text: String = chars[train_end..valid_end].iter().collect();
    let test_text: String = chars[valid_end..].iter().collect();
    let vocab = CharVocab::from_text(&train_text);
    Ok(LmCorpus {
        train: vocab.encode(&train_text)?,
        valid: vocab.encode(&valid_text)?,
        test: vocab.encode(&test_text)?,
        vocab,
    })
}

/// Per-lane walk over contiguous slices of a token stream, emitting
/// next-character prediction pairs and per-step stochastic reset flags.
#[derive(Clone, Debug)]
pub struct LmStream {
    ids: Vec<usize>,
    lanes: Vec<(usize, usize, usize)>, // (lo, hi, pos)
    reset_prob: f64,
    rng: CounterRng,
}

impl LmStream {
    pub fn new(ids: Vec<usize>, batch: usize, reset_prob: f64, seed: u64) -> Result<LmStream> {
        if batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        let slice = ids.len() / batch;
        if slice < 2 {
            return Err(Error::Config(format!(
                "corpus of {} tokens is too short for {batch} lanes",
                ids.len()
            )));
        }
        let lanes = (0..batch).map(|i| (i * slice, (i + 1) * slice, i * slice)).collect();
        Ok(LmStream {
            ids,
            lanes,
            reset_prob,
            rng: CounterRng::new(seed).derive(&[0x17e5e7]),
        })
    }

    /// The `(input, target, reset_before)` triple for one lane at one step.
    pub fn next(&mut self, lane: usize, step: u64) -> (usize, usize, bool) {
        let (lo, hi, pos) = self.lanes[lane];
        let input = self.ids[pos];
        let target = self.ids[pos + 1];
        let next_pos = if pos + 2 >= hi { lo } else { pos + 1 };
        self.lanes[lane].2 = next_pos;
        let reset = self.reset_prob > 0.0
            && self.rng.derive(&[lane as u64, step]).uniform() < self.reset_prob;
        (input, target, reset)
    }
}

/// Cross-entropy in bits per character of the training split's add-one
/// smoothed unigram distribution, evaluated on `eval`.
pub fn unigram_bpc(train: &[usize], eval: &[usize], vocab: usize) -> f64 {
    let mut counts = vec![1.0f64; vocab];
    for &t in train {
        counts[t] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    let mut bits = 0.0;
    for &t in eval {
        bits -= (counts[t] / total).log2();
    }
    bits / eval.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_is_sorted_and_bijective() {
        let v = CharVocab::from_text("banana!");
        assert_eq!(v.chars(), &['!', 'a', 'b', 'n']);
        assert_eq!(v.encode("ban!").unwrap(), vec![2, 1, 3, 0]);
        let err = v.encode("x").unwrap_err();
        assert!(err.to_string().contains("U+0078"));
    }

    #[test]
    fn two_char_corpus_loops() {
        let v = CharVocab::from_text("ab");
        let ids = v.encode("ab").unwrap();
        let mut s = LmStream::new(ids, 1, 0.0, 9).unwrap();
        for step in 0..5 {
            let (i, t, reset) = s.next(0, step);
            assert_eq!((i, t), (0, 1));
            assert!(!reset);
        }
    }

    #[test]
    fn reset_probability_extremes() {
        let ids: Vec<usize> = (0..100).map(|i| i % 3).collect();
        let mut never = LmStream::new(ids.clone(), 2, 0.0, 1).unwrap();
        let mut always = LmStream::new(ids, 2, 1.0, 1).unwrap();
        for step in 0..50 {
            assert!(!never.next(0, step).2);
            assert!(always.next(1, step).2);
        }
    }

    #[test]
    fn lanes_walk_disjoint_contiguous_slices() {
        let ids: Vec<usize> = (0..40).collect();
        let mut s = LmStream::new(ids, 4, 0.0, 3).unwrap();
        for lane in 0..4 {
            let (first, _, _) = s.next(lane, 0);
            assert_eq!(first, lane * 10);
            for step in 1..8 {
                let (i, t, _) = s.next(lane, step);
                assert_eq!(i, lane * 10 + step as usize);
                assert_eq!(t, i + 1);
            }
            // Wraps inside its own slice.
            let (i9, _, _) = s.next(lane, 8);
            assert_eq!(i9, lane * 10 + 8);
            let (w, _, _) = s.next(lane, 9);
            assert_eq!(w, lane * 10);
        }
    }

    #[test]
    fn corpus_split_and_oov() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.txt");
        // 100 chars; the last 5 (test split) contain a char missing from
        // the first 90.
        let text = format!("{}{}", "ab".repeat(47), "abcab!demo".chars().take(6).collect::<String>());
        assert_eq!(text.chars().count(), 100);
        std::fs::write(&path, &text).unwrap();
        let err = load_corpus(&path).unwrap_err();
        assert!(matches!(err, Error::UnknownCodepoint { .. }));

        let good = "the quick brown fox jumps over the lazy dog ".repeat(10);
        std::fs::write(&path, &good).unwrap();
        let corpus = load_corpus(&path).unwrap();
        let n = good.chars().count();
        assert_eq!(corpus.train.len(), n * 90 / 100);
        assert_eq!(corpus.train.len() + corpus.valid.len() + corpus.test.len(), n);
        assert!(corpus.vocab.len() > 10);
    }

    #[test]
    fn unigram_baseline_sane() {
        // Uniform stream over 4 symbols: baseline close to 2 bits.
        let train: Vec<usize> = (0..4000).map(|i| i % 4).collect();
        let eval: Vec<usize> = (0..400).map(|i| (i * 3) % 4).collect();
        let bpc = unigram_bpc(&train, &eval, 4);
        assert!((bpc - 2.0).abs() < 0.01, "{bpc}");
        // Skewed stream beats 2 bits on its own distribution.
        let skew: Vec<usize> = (0..4000).map(|i| usize::from(i % 10 == 0)).collect();
        let bpc = unigram_bpc(&skew, &skew, 2);
        assert!(bpc < 0.6, "{bpc}");
    }
}
