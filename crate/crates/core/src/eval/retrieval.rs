use serde::Serialize;

use super::normalize_word;
use crate::data::LexiconWord;
use crate::embeddings::WordVectors;
use crate::error::{Error, Result};
use crate::model::cosine;

/// Translation retrieval against a ground-truth lexicon.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrievalReport {
    /// Fraction of covered words whose nearest word in another language (by
    /// cosine) belongs to the same concept.
    pub precision_at_1: f64,
    /// Mean cosine over same-concept crosslingual word pairs.
    pub mean_same_concept: f64,
    /// Mean cosine over different-concept crosslingual word pairs.
    pub mean_diff_concept: f64,
    pub n_used: usize,
    pub n_total: usize,
}

impl RetrievalReport {
    pub fn concept_gap(&self) -> f64 {
        self.mean_same_concept - self.mean_diff_concept
    }
}

pub fn crosslingual_retrieval(vectors: &WordVectors, words: &[LexiconWord]) -> Result<RetrievalReport> {
    let covered: Vec<(&LexiconWord, &[f64])> = words
        .iter()
        .filter_map(|w| vectors.get(&normalize_word(&w.token)).map(|v| (w, v)))
        .collect();

    let mut hits = 0usize;
    let mut queries = 0usize;
    let (mut same_sum, mut same_n) = (0.0, 0usize);
    let (mut diff_sum, mut diff_n) = (0.0, 0usize);
    for (i, (w, v)) in covered.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for (j, (other, u)) in covered.iter().enumerate() {
            // A shared surface form is the same row, not a translation.
            if other.lang == w.lang || other.token == w.token {
                continue;
            }
            let c = cosine(v, u)?;
            if j > i {
                if other.concept == w.concept {
                    same_sum += c;
                    same_n += 1;
                } else {
                    diff_sum += c;
                    diff_n += 1;
                }
            }
            if best.is_none_or(|(b, _)| c > b) {
                best = Some((c, other.concept));
            }
        }
        if let Some((_, concept)) = best {
            queries += 1;
            if concept == w.concept {
                hits += 1;
            }
        }
    }
    if queries == 0 {
        return Err(Error::InsufficientCoverage {
            covered: covered.len(),
            required: 2,
        });
    }
    let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
    Ok(RetrievalReport {
        precision_at_1: hits as f64 / queries as f64,
        mean_same_concept: mean(same_sum, same_n),
        mean_diff_concept: mean(diff_sum, diff_n),
        n_used: queries,
        n_total: words.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn word(token: &str, lang: &str, concept: usize) -> LexiconWord {
        LexiconWord {
            token: token.into(),
            lang: lang.into(),
            concept,
        }
    }

    #[test]
    fn nearest_neighbour_precision_and_gap() {
        let wv = WordVectors::new(
            vec!["a:x".into(), "b:x".into(), "a:y".into(), "b:y".into()],
            Matrix::from_rows(&[vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0], vec![0.95, 0.05]]),
        )
        .unwrap();
        let words = [word("a:x", "a", 0), word("b:x", "b", 0), word("a:y", "a", 1), word("b:y", "b", 1), word("c:z", "c", 2)];
        let r = crosslingual_retrieval(&wv, &words).unwrap();
        // a:x -> b:y (wrong), b:x -> a:x (right), a:y -> b:x (wrong), b:y -> a:x (wrong)
        assert_eq!(r.precision_at_1, 0.25);
        assert_eq!((r.n_used, r.n_total), (4, 5));
        let c = |a: &[f64], b: &[f64]| cosine(a, b).unwrap();
        let same = (c(&[1.0, 0.0], &[0.9, 0.1]) + c(&[0.0, 1.0], &[0.95, 0.05])) / 2.0;
        let diff = (c(&[1.0, 0.0], &[0.95, 0.05]) + c(&[0.9, 0.1], &[0.0, 1.0])) / 2.0;
        assert!((r.mean_same_concept - same).abs() < 1e-15);
        assert!((r.mean_diff_concept - diff).abs() < 1e-15);
    }

    #[test]
    fn shared_rows_are_not_their_own_translation() {
        let wv = WordVectors::new(
            vec!["w".into(), "p".into(), "q".into()],
            Matrix::from_rows(&[vec![1.0, 0.0], vec![0.8, 0.2], vec![0.0, 1.0]]),
        )
        .unwrap();
        let words = [word("w", "a", 0), word("w", "b", 0), word("p", "b", 0), word("q", "a", 1)];
        let r = crosslingual_retrieval(&wv, &words).unwrap();
        // w@a -> p (right), w@b -> q (only candidate, wrong), p -> w@a (right), q -> p (wrong)
        assert_eq!(r.precision_at_1, 0.5);
    }

    #[test]
    fn nothing_covered() {
        let wv = WordVectors::new(vec!["a:x".into()], Matrix::from_rows(&[vec![1.0]])).unwrap();
        assert!(crosslingual_retrieval(&wv, &[word("a:x", "a", 0)]).is_err());
    }
}
