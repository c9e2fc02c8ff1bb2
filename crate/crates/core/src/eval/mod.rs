//! Scoring learned embeddings: word-pair similarity (Spearman + coverage),
//! crosslingual retrieval, document classification and report tables.

mod classify;
mod report;
mod retrieval;
mod similarity;

pub use classify::{
    doc_repr, eval_classification, load_class_docs, ClassDoc, ClassTask, ClassificationResult, LogisticRegression,
};
pub use report::{format_cell, format_score, Report, ReportRow};
pub use retrieval::{crosslingual_retrieval, RetrievalReport};
pub use similarity::{eval_similarity, eval_similarity_aggregate, load_sim_task, spearman, SimPair, SimTask};

use serde::Serialize;

/// A task score together with how much of the task could be scored.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScoredResult {
    /// Spearman ρ or accuracy.
    pub score: f64,
    pub coverage: f64,
    pub n_used: usize,
    pub n_total: usize,
}

impl ScoredResult {
    pub fn new(score: f64, n_used: usize, n_total: usize) -> Self {
        let coverage = if n_total == 0 { 0.0 } else { n_used as f64 / n_total as f64 };
        ScoredResult {
            score,
            coverage,
            n_used,
            n_total,
        }
    }
}

/// Task words are matched case-insensitively, the same way queries are
/// lowercased during training.
pub(crate) fn normalize_word(word: &str) -> String {
    word.trim().to_lowercase()
}
