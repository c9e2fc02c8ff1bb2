use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::{normalize_word, ScoredResult};
use crate::embeddings::WordVectors;
use crate::error::{Error, Result};
use crate::model::cosine;

#[derive(Clone, Debug, PartialEq)]
pub struct SimPair {
    pub word1: String,
    pub word2: String,
    pub human_score: f64,
}

/// Word pairs with human similarity ratings. In language-aware setups the
/// words carry their language prefix (`en:dog`).
#[derive(Clone, Debug, PartialEq)]
pub struct SimTask {
    pub name: String,
    pub pairs: Vec<SimPair>,
}

impl SimTask {
    pub fn new(name: impl Into<String>, pairs: Vec<SimPair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Config("similarity task has no pairs".into()));
        }
        if pairs.iter().any(|p| !p.human_score.is_finite()) {
            return Err(Error::NonFinite("human score"));
        }
        Ok(SimTask {
            name: name.into(),
            pairs,
        })
    }
}

/// Reads `word1 \t word2 \t score` lines. The task is named after the file stem.
pub fn load_sim_task(path: &Path) -> Result<SimTask> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(path, n, format!("expected 3 columns, found {}", cols.len())));
        }
        let human_score = cols[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, n, format!("bad score {:?}", cols[2])))?;
        pairs.push(SimPair {
            word1: cols[0].to_string(),
            word2: cols[1].to_string(),
            human_score,
        });
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    SimTask::new(name, pairs).map_err(|e| Error::parse(path, 0, e.to_string()))
}

/// Fractional ranks (1-based); tied values share the mean of their positions.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman's ρ: Pearson correlation of tie-averaged ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 || x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateRanking);
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::DegenerateRanking);
    }
    Ok((cov / (vx * vy).sqrt()).clamp(-1.0, 1.0))
}

/// (model, human) scores for the covered pairs, plus the total pair count.
fn covered_scores(vectors: &WordVectors, task: &SimTask) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let mut model = Vec::new();
    let mut human = Vec::new();
    for p in &task.pairs {
        let (w1, w2) = (normalize_word(&p.word1), normalize_word(&p.word2));
        if let (Some(a), Some(b)) = (vectors.get(&w1), vectors.get(&w2)) {
            model.push(cosine(a, b)?);
            human.push(p.human_score);
        }
    }
    Ok((model, human, task.pairs.len()))
}

fn score(model: &[f64], human: &[f64], total: usize) -> Result<ScoredResult> {
    if model.len() < 2 {
        return Err(Error::InsufficientCoverage {
            covered: model.len(),
            required: 2,
        });
    }
    Ok(ScoredResult::new(spearman(model, human)?, model.len(), total))
}

/// Spearman correlation between embedding cosine and human ratings over the
/// pairs whose words are both in the vocabulary. Hash buckets are never used.
pub fn eval_similarity(vectors: &WordVectors, task: &SimTask) -> Result<ScoredResult> {
    let (model, human, total) = covered_scores(vectors, task)?;
    score(&model, &human, total)
}

/// Pools the covered pairs of all subtasks and computes a single correlation.
pub fn eval_similarity_aggregate(vectors: &WordVectors, subtasks: &[SimTask]) -> Result<ScoredResult> {
    if subtasks.is_empty() {
        return Err(Error::Config("no subtasks to aggregate".into()));
    }
    let (mut model, mut human, mut total) = (Vec::new(), Vec::new(), 0);
    for task in subtasks {
        let (m, h, t) = covered_scores(vectors, task)?;
        model.extend(m);
        human.extend(h);
        total += t;
    }
    score(&model, &human, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pair(a: &str, b: &str, s: f64) -> SimPair {
        SimPair {
            word1: a.into(),
            word2: b.into(),
            human_score: s,
        }
    }

    /// Unit vectors at the given angles (radians) in the plane.
    fn angles(words: &[(&str, f64)]) -> WordVectors {
        let rows: Vec<Vec<f64>> = words.iter().map(|(_, t)| vec![t.cos(), t.sin()]).collect();
        WordVectors::new(words.iter().map(|(w, _)| w.to_string()).collect(), Matrix::from_rows(&rows)).unwrap()
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        // ranks x = [1, 2.5, 2.5, 4]; ρ = 4.5 / √22.5
        let rho = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_abs_diff_eq!(rho, 4.5 / 22.5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(rho, 0.9487, epsilon = 1e-4);
    }

    #[test]
    fn spearman_degenerate() {
        assert!(matches!(spearman(&[1.0], &[1.0]), Err(Error::DegenerateRanking)));
        assert!(matches!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::DegenerateRanking)));
        assert!(spearman(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0, 3.0]), vec![4.0, 1.0, 4.0, 2.0, 4.0]);
    }

    #[test]
    fn perfect_order_agreement() {
        let wv = angles(&[("en:a", 0.0), ("de:b", 0.1), ("de:c", 0.5), ("de:d", 1.2)]);
        let task = SimTask::new(
            "t",
            vec![pair("en:a", "de:b", 9.0), pair("en:a", "de:c", 5.0), pair("en:a", "de:d", 1.0)],
        )
        .unwrap();
        let r = eval_similarity(&wv, &task).unwrap();
        assert_eq!(r.score, 1.0);
        assert_eq!(r.coverage, 1.0);
    }

    #[test]
    fn coverage_counts_pairs_with_both_words() {
        let wv = angles(&[("en:a", 0.0), ("de:b", 0.3), ("de:c", 0.9)]);
        let mut pairs: Vec<SimPair> = (0..8).map(|i| pair("en:a", if i % 2 == 0 { "de:b" } else { "de:c" }, i as f64)).collect();
        pairs.push(pair("en:a", "de:zzz", 1.0));
        pairs.push(pair("en:qqq", "de:b", 1.0));
        let r = eval_similarity(&wv, &SimTask::new("t", pairs).unwrap()).unwrap();
        assert_eq!((r.n_used, r.n_total), (8, 10));
        assert_eq!(r.coverage, 0.8);
    }

    #[test]
    fn words_are_matched_case_insensitively() {
        let wv = angles(&[("en:dog", 0.0), ("de:hund", 0.2), ("de:katze", 1.0)]);
        let task = SimTask::new("t", vec![pair("EN:Dog", "de:Hund", 9.0), pair("en:dog", "DE:KATZE", 2.0)]).unwrap();
        assert_eq!(eval_similarity(&wv, &task).unwrap().n_used, 2);
    }

    #[test]
    fn hand_built_embeddings_match_rank_oracle() {
        // cos(a,b) = cos(0.2), cos(a,c) = cos(1.0), cos(b,c) = cos(0.8), cos(c,d) = cos(0.5)
        // model ranks: (a,b)=4, (a,c)=1, (b,c)=2, (c,d)=3
        // human:        7.0      6.0      1.0      8.0  -> ranks 3, 2, 1, 4
        // Σd² = 1 + 1 + 1 + 1 = 4, ρ = 1 − 6·4 / (4·15) = 0.6
        let wv = angles(&[("x:a", 0.0), ("x:b", 0.2), ("y:c", 1.0), ("y:d", 1.5)]);
        let task = SimTask::new(
            "t",
            vec![
                pair("x:a", "x:b", 7.0),
                pair("x:a", "y:c", 6.0),
                pair("x:b", "y:c", 1.0),
                pair("y:c", "y:d", 8.0),
            ],
        )
        .unwrap();
        assert_abs_diff_eq!(eval_similarity(&wv, &task).unwrap().score, 0.6, epsilon = 1e-12);
    }

    #[test]
    fn too_few_covered_pairs() {
        let wv = angles(&[("en:a", 0.0), ("de:b", 0.3)]);
        let task = SimTask::new("t", vec![pair("en:a", "de:b", 1.0), pair("en:a", "de:x", 2.0)]).unwrap();
        assert!(matches!(
            eval_similarity(&wv, &task),
            Err(Error::InsufficientCoverage { covered: 1, .. })
        ));
    }

    #[test]
    fn aggregate_pools_pairs() {
        let wv = angles(&[("a", 0.0), ("b", 0.1), ("c", 0.4), ("d", 0.2), ("e", 0.3)]);
        let t1 = SimTask::new("t1", vec![pair("a", "b", 2.0), pair("a", "c", 1.0)]).unwrap();
        let t2 = SimTask::new("t2", vec![pair("a", "d", 9.0), pair("a", "e", 8.0)]).unwrap();
        assert_eq!(eval_similarity(&wv, &t1).unwrap().score, 1.0);
        assert_eq!(eval_similarity(&wv, &t2).unwrap().score, 1.0);
        // Pooled order ab, ac, ad, ae. Angles 0.1, 0.4, 0.2, 0.3 give model ranks 4, 1, 3, 2;
        // human 2, 1, 9, 8 gives ranks 2, 1, 4, 3. Σd² = 4 + 0 + 1 + 1 = 6, ρ = 1 − 36/60 = 0.4.
        let pooled = eval_similarity_aggregate(&wv, &[t1.clone(), t2]).unwrap();
        assert_abs_diff_eq!(pooled.score, 0.4, epsilon = 1e-12);
        assert_eq!(pooled.n_total, 4);
        assert_eq!(eval_similarity_aggregate(&wv, std::slice::from_ref(&t1)).unwrap(), eval_similarity(&wv, &t1).unwrap());

        let uncovered = SimTask::new("t3", vec![pair("x", "y", 1.0)]).unwrap();
        let r = eval_similarity_aggregate(&wv, &[t1, uncovered]).unwrap();
        assert_eq!((r.n_used, r.n_total), (2, 3));
    }

    #[test]
    fn load_task_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("en-de.tsv");
        std::fs::write(&path, "en:dog\tde:hund\t9.2\nen:cat\tde:hund\t2\n").unwrap();
        let task = load_sim_task(&path).unwrap();
        assert_eq!(task.name, "en-de");
        assert_eq!(task.pairs[0], pair("en:dog", "de:hund", 9.2));
        std::fs::write(&path, "en:dog\tde:hund\n").unwrap();
        assert!(load_sim_task(&path).is_err());
    }

    proptest! {
        #[test]
        fn spearman_invariant_under_monotone_maps(x in prop::collection::vec(0.1f64..100.0, 3..30), y in prop::collection::vec(0.1f64..100.0, 30)) {
            let y = &y[..x.len()];
            if let Ok(base) = spearman(&x, y) {
                let affine: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
                let cubed: Vec<f64> = x.iter().map(|v| v * v * v).collect();
                prop_assert!((spearman(&affine, y).unwrap() - base).abs() < 1e-12);
                prop_assert!((spearman(&cubed, y).unwrap() - base).abs() < 1e-12);
            }
        }

        #[test]
        fn similarity_invariant_under_rescaling(alpha in 0.01f64..100.0, seed in 0u64..100) {
            let words: Vec<(String, f64)> = (0..6).map(|i| (format!("w{i}"), ((seed + 1) as f64 * (i as f64 + 1.0)).sin() * 3.0)).collect();
            let rows: Vec<Vec<f64>> = words.iter().map(|(_, t)| vec![t.cos(), t.sin(), 0.3]).collect();
            let wv = WordVectors::new(words.iter().map(|(w, _)| w.clone()).collect(), Matrix::from_rows(&rows)).unwrap();
            let pairs: Vec<SimPair> = (0..5).map(|i| pair(&words[i].0, &words[i + 1].0, i as f64)).collect();
            let task = SimTask::new("t", pairs).unwrap();
            if let Ok(base) = eval_similarity(&wv, &task) {
                let scaled = eval_similarity(&wv.scaled(alpha), &task).unwrap();
                prop_assert_eq!(scaled.score, base.score);
                prop_assert!((0.0..=1.0).contains(&base.coverage));
            }
        }
    }
}
