use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::ScoredResult;
use crate::embeddings::WordVectors;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Matrix};
use crate::textproc::{tokenize, LangMode};

const MAX_ITERATIONS: usize = 1000;
const LOSS_TOLERANCE: f64 = 1e-6;
const LEARNING_RATE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassDoc {
    pub label: String,
    pub lang: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassTask {
    pub name: String,
    pub train: Vec<ClassDoc>,
    pub test: Vec<ClassDoc>,
}

/// Reads `label \t lang \t text` lines.
pub fn load_class_docs(path: &Path) -> Result<Vec<ClassDoc>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.splitn(3, '\t').collect();
        if cols.len() != 3 || cols[0].is_empty() {
            return Err(Error::parse(path, i + 1, "expected \"label<TAB>lang<TAB>text\""));
        }
        docs.push(ClassDoc {
            label: cols[0].to_string(),
            lang: cols[1].to_string(),
            text: cols[2].to_string(),
        });
    }
    Ok(docs)
}

/// Average of the in-vocabulary token vectors of a document, or `None` when no
/// token is covered.
pub fn doc_repr(vectors: &WordVectors, lang: &str, text: &str, mode: LangMode) -> Option<Vec<f64>> {
    let mut acc = vec![0.0; vectors.dim()];
    let mut n = 0usize;
    for tok in tokenize(text, lang, mode) {
        if let Some(v) = vectors.get(&tok) {
            axpy(1.0, v, &mut acc);
            n += 1;
        }
    }
    (n > 0).then(|| acc.into_iter().map(|v| v / n as f64).collect())
}

/// Multinomial logistic regression on standardised features, fitted by
/// full-batch gradient descent on the mean cross-entropy.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticRegression {
    /// Sorted class labels; row `k` of `weights` scores `classes[k]`.
    pub classes: Vec<String>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub iterations: usize,
    pub final_loss: f64,
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    z.iter_mut().for_each(|v| *v /= total);
}

impl LogisticRegression {
    pub fn fit(features: &[Vec<f64>], labels: &[String]) -> Result<Self> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(Error::Config("classifier needs one label per training vector".into()));
        }
        let classes: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        if classes.len() < 2 {
            return Err(Error::Config("classifier needs at least two labels".into()));
        }
        let dim = features[0].len();
        let n = features.len() as f64;

        let mut mean = vec![0.0; dim];
        for x in features {
            axpy(1.0 / n, x, &mut mean);
        }
        let mut scale = vec![0.0; dim];
        for x in features {
            for ((s, v), m) in scale.iter_mut().zip(x).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        scale.iter_mut().for_each(|s| *s = if *s > 1e-24 { s.sqrt() } else { 1.0 });

        let xs: Vec<Vec<f64>> = features
            .iter()
            .map(|x| x.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s).collect())
            .collect();
        let ys: Vec<usize> = labels
            .iter()
            .map(|l| classes.binary_search(l).expect("label comes from classes"))
            .collect();

        let k = classes.len();
        let mut model = LogisticRegression {
            classes,
            mean,
            scale,
            weights: Matrix::zeros(k, dim),
            bias: vec![0.0; k],
            iterations: 0,
            final_loss: f64::INFINITY,
        };

        let mut prev = f64::INFINITY;
        for it in 0..MAX_ITERATIONS {
            let mut gw = Matrix::zeros(k, dim);
            let mut gb = vec![0.0; k];
            let mut loss = 0.0;
            for (x, &y) in xs.iter().zip(&ys) {
                let mut p = model.raw_scores(x);
                softmax_in_place(&mut p);
                loss -= p[y].max(f64::MIN_POSITIVE).ln() / n;
                p[y] -= 1.0;
                gw.add_outer(1.0 / n, &p, x);
                axpy(1.0 / n, &p, &mut gb);
            }
            model.iterations = it + 1;
            model.final_loss = loss;
            if (prev - loss).abs() < LOSS_TOLERANCE {
                break;
            }
            prev = loss;
            axpy(-LEARNING_RATE, gw.as_slice(), model.weights.as_mut_slice());
            axpy(-LEARNING_RATE, &gb, &mut model.bias);
        }
        Ok(model)
    }

    fn raw_scores(&self, standardized: &[f64]) -> Vec<f64> {
        (0..self.classes.len())
            .map(|c| dot(self.weights.row(c), standardized) + self.bias[c])
            .collect()
    }

    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Class scores (logits) for a raw feature vector.
    pub fn decision(&self, x: &[f64]) -> Vec<f64> {
        self.raw_scores(&self.standardize(x))
    }

    pub fn predict(&self, x: &[f64]) -> &str {
        let scores = self.decision(x);
        let best = (0..scores.len())
            .fold(0, |b, c| if scores[c] > scores[b] { c } else { b });
        &self.classes[best]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationResult {
    /// Accuracy on covered test documents; coverage is the fraction of test
    /// documents with at least one covered token.
    pub result: ScoredResult,
    /// Fraction of test tokens that are in the vocabulary.
    pub token_coverage: f64,
    pub model: LogisticRegression,
}

/// Trains a classifier on frozen document representations and reports
/// accuracy on the covered test documents.
pub fn eval_classification(vectors: &WordVectors, task: &ClassTask, mode: LangMode) -> Result<ClassificationResult> {
    let train_labels: BTreeSet<&str> = task.train.iter().map(|d| d.label.as_str()).collect();
    if let Some(d) = task.test.iter().find(|d| !train_labels.contains(d.label.as_str())) {
        return Err(Error::Config(format!("test label {:?} does not occur in training data", d.label)));
    }

    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for d in &task.train {
        if let Some(x) = doc_repr(vectors, &d.lang, &d.text, mode) {
            xs.push(x);
            ys.push(d.label.clone());
        }
    }
    if xs.is_empty() {
        return Err(Error::InsufficientCoverage {
            covered: 0,
            required: 1,
        });
    }
    let model = LogisticRegression::fit(&xs, &ys)?;

    let (mut correct, mut covered) = (0usize, 0usize);
    let (mut tokens_total, mut tokens_covered) = (0usize, 0usize);
    for d in &task.test {
        let toks = tokenize(&d.text, &d.lang, mode);
        tokens_total += toks.len();
        tokens_covered += toks.iter().filter(|t| vectors.contains(t)).count();
        if let Some(x) = doc_repr(vectors, &d.lang, &d.text, mode) {
            covered += 1;
            if model.predict(&x) == d.label {
                correct += 1;
            }
        }
    }
    if covered == 0 {
        return Err(Error::InsufficientCoverage {
            covered: 0,
            required: 1,
        });
    }
    let token_coverage = if tokens_total == 0 {
        0.0
    } else {
        tokens_covered as f64 / tokens_total as f64
    };
    Ok(ClassificationResult {
        result: ScoredResult::new(correct as f64 / covered as f64, covered, task.test.len()),
        token_coverage,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wv(words: &[(&str, [f64; 2])]) -> WordVectors {
        let rows: Vec<Vec<f64>> = words.iter().map(|(_, v)| v.to_vec()).collect();
        WordVectors::new(words.iter().map(|(w, _)| w.to_string()).collect(), Matrix::from_rows(&rows)).unwrap()
    }

    fn doc(label: &str, lang: &str, text: &str) -> ClassDoc {
        ClassDoc {
            label: label.into(),
            lang: lang.into(),
            text: text.into(),
        }
    }

    #[test]
    fn doc_repr_cases() {
        let v = wv(&[("en:a", [1.0, 0.0]), ("en:b", [0.0, 1.0])]);
        assert_eq!(doc_repr(&v, "en", "zzz qqq", LangMode::Aware), None);
        assert_eq!(doc_repr(&v, "en", "a", LangMode::Aware), Some(vec![1.0, 0.0]));
        assert_eq!(doc_repr(&v, "en", "a b", LangMode::Aware), Some(vec![0.5, 0.5]));
        assert_eq!(doc_repr(&v, "en", "b, a!", LangMode::Aware), doc_repr(&v, "en", "a b", LangMode::Aware));
        assert_eq!(doc_repr(&v, "de", "a b", LangMode::Aware), None);
    }

    #[test]
    fn separable_train_equals_test() {
        let v = wv(&[("en:up", [1.0, 0.1]), ("en:down", [-1.0, 0.2]), ("de:hoch", [0.9, -0.1]), ("de:runter", [-0.8, 0.0])]);
        let docs = vec![
            doc("pos", "en", "up"),
            doc("neg", "en", "down"),
            doc("pos", "de", "hoch"),
            doc("neg", "de", "runter"),
        ];
        let task = ClassTask {
            name: "t".into(),
            train: docs.clone(),
            test: docs,
        };
        let r = eval_classification(&v, &task, LangMode::Aware).unwrap();
        assert_eq!(r.result.score, 1.0);
        assert_eq!(r.result.coverage, 1.0);
        assert_eq!(r.token_coverage, 1.0);
    }

    #[test]
    fn uncovered_documents_are_errors() {
        let v = wv(&[("en:up", [1.0, 0.1]), ("en:down", [-1.0, 0.2])]);
        let task = ClassTask {
            name: "t".into(),
            train: vec![doc("pos", "en", "up"), doc("neg", "en", "down")],
            test: vec![doc("pos", "fr", "haut"), doc("neg", "fr", "bas")],
        };
        assert!(matches!(
            eval_classification(&v, &task, LangMode::Aware),
            Err(Error::InsufficientCoverage { .. })
        ));
        let task = ClassTask {
            test: task.train.clone(),
            train: vec![doc("pos", "fr", "haut")],
            ..task
        };
        assert!(eval_classification(&v, &task, LangMode::Aware).is_err());
    }

    #[test]
    fn unknown_test_label_is_rejected() {
        let v = wv(&[("en:up", [1.0, 0.1]), ("en:down", [-1.0, 0.2])]);
        let task = ClassTask {
            name: "t".into(),
            train: vec![doc("pos", "en", "up"), doc("neg", "en", "down")],
            test: vec![doc("other", "en", "up")],
        };
        assert!(matches!(eval_classification(&v, &task, LangMode::Aware), Err(Error::Config(_))));
    }

    #[test]
    fn three_class_accuracy_matches_hand_evaluation() {
        let v = wv(&[
            ("en:sun", [1.0, 0.0]),
            ("en:hot", [0.9, 0.2]),
            ("en:snow", [-1.0, 0.1]),
            ("en:ice", [-0.8, -0.2]),
            ("en:rain", [0.0, 1.0]),
            ("en:wet", [0.2, 0.9]),
            ("en:mild", [0.3, 0.3]),
        ]);
        let train = vec![
            doc("summer", "en", "sun hot"),
            doc("summer", "en", "sun"),
            doc("winter", "en", "snow ice"),
            doc("winter", "en", "ice"),
            doc("autumn", "en", "rain wet"),
            doc("autumn", "en", "wet"),
        ];
        let test = vec![
            doc("summer", "en", "hot"),
            doc("winter", "en", "snow"),
            doc("autumn", "en", "rain"),
            doc("summer", "en", "mild"),
            doc("autumn", "en", "sun wet"),
            doc("winter", "en", "ice mild"),
        ];
        let task = ClassTask {
            name: "t".into(),
            train,
            test: test.clone(),
        };
        let r = eval_classification(&v, &task, LangMode::Aware).unwrap();

        // Re-evaluate the learned linear decision on each test point directly.
        let m = &r.model;
        let mut correct = 0;
        for d in &test {
            let x = doc_repr(&v, &d.lang, &d.text, LangMode::Aware).unwrap();
            let z: Vec<f64> = x
                .iter()
                .zip(&m.mean)
                .zip(&m.scale)
                .map(|((xi, mu), s)| (xi - mu) / s)
                .collect();
            let scores: Vec<f64> = (0..3)
                .map(|c| m.weights.row(c)[0] * z[0] + m.weights.row(c)[1] * z[1] + m.bias[c])
                .collect();
            let best = (0..3).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
            if m.classes[best] == d.label {
                correct += 1;
            }
        }
        assert_eq!(r.result.score, correct as f64 / 6.0);
        assert!(r.result.score >= 0.5);
        assert!(m.iterations <= 1000);
    }

    #[test]
    fn training_accuracy_beats_majority_baseline() {
        let v = wv(&[("en:a", [1.0, 0.0]), ("en:b", [0.8, 0.3]), ("en:c", [-1.0, 0.0]), ("en:d", [-0.7, -0.4])]);
        let train = vec![doc("x", "en", "a"), doc("x", "en", "b"), doc("x", "en", "a b"), doc("y", "en", "c"), doc("y", "en", "d")];
        let task = ClassTask {
            name: "t".into(),
            train: train.clone(),
            test: train,
        };
        let r = eval_classification(&v, &task, LangMode::Aware).unwrap();
        assert!(r.result.score >= 3.0 / 5.0);
        assert_eq!(r.result.score, 1.0);
    }

    #[test]
    fn token_coverage_counts_tokens() {
        let v = wv(&[("en:a", [1.0, 0.0]), ("en:c", [-1.0, 0.0])]);
        let task = ClassTask {
            name: "t".into(),
            train: vec![doc("x", "en", "a"), doc("y", "en", "c")],
            test: vec![doc("x", "en", "a zz"), doc("y", "en", "qq")],
        };
        let r = eval_classification(&v, &task, LangMode::Aware).unwrap();
        assert_eq!(r.token_coverage, 1.0 / 3.0);
        assert_eq!(r.result.coverage, 0.5);
        assert_eq!(r.result.score, 1.0);
    }
}
