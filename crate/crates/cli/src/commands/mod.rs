mod eval;
mod train;

use std::path::PathBuf;

use anyhow::anyhow;
use clap::Args;
use imagevec::data::{self, SyntheticCorpus, SyntheticSpec};
use imagevec::model::{TowerKind, DEFAULT_FEATURE_DIM};
use imagevec::training::{batch_gradients, compare_gradients, random_problem, Batch, GradCheckConfig, TowerGradients};

use crate::output::Staged;
use crate::Failure;

pub use eval::{eval, EvalArgs};
pub use train::{train, TrainArgs};

/// Relative error at or above which a gradient check fails.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long = "concepts", default_value_t = 20)]
    num_concepts: usize,
    #[arg(long = "languages", default_value_t = 3)]
    num_languages: usize,
    #[arg(long, default_value_t = 2)]
    words_per_concept: usize,
    #[arg(long, default_value_t = DEFAULT_FEATURE_DIM)]
    feature_dim: usize,
    /// Standard deviation of the feature noise
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long = "examples", default_value_t = 50_000)]
    num_examples: usize,
    /// Distinct images per concept; by default every example gets its own image
    #[arg(long)]
    images_per_concept: Option<usize>,
    /// Number of concepts whose words are spelled the same in every language
    #[arg(long, default_value_t = 0)]
    shared_concepts: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

pub fn gensynth(a: GenSynthArgs) -> Result<(), Failure> {
    let spec = SyntheticSpec {
        num_concepts: a.num_concepts,
        num_languages: a.num_languages,
        words_per_concept: a.words_per_concept,
        feature_dim: a.feature_dim,
        noise_sigma: a.sigma,
        num_examples: a.num_examples,
        images_per_concept: a.images_per_concept,
        shared_concepts: a.shared_concepts,
        seed: a.seed,
    };
    spec.validate()?;
    let corpus = data::gen_synthetic(&spec)?;

    let mut out = Staged::new();
    out.write_with(&a.out_dir.join(SyntheticCorpus::TRIPLES_FILE), |f| {
        Ok(data::write_triples(f, &corpus.triples)?)
    })?;
    out.write_with(&a.out_dir.join(SyntheticCorpus::FEATURES_FILE), |f| {
        Ok(data::write_features(f, &corpus.features)?)
    })?;
    out.write_with(&a.out_dir.join(SyntheticCorpus::LEXICON_FILE), |f| {
        Ok(data::write_lexicon(f, &corpus.lexicon)?)
    })?;
    out.commit()?;
    println!(
        "wrote {} triples, {} images, {} lexicon pairs to {}",
        corpus.triples.len(),
        corpus.features.len(),
        corpus.lexicon.len(),
        a.out_dir.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct FilterArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

pub fn filter(a: FilterArgs) -> Result<(), Failure> {
    let triples = data::load_triples(&a.input)?;
    let kept = data::filter_multilingual(&triples);
    let mut out = Staged::new();
    out.write_with(&a.output, |f| Ok(data::write_triples(f, &kept)?))?;
    out.commit()?;
    println!("kept {} dropped {}", kept.len(), triples.len() - kept.len());
    Ok(())
}

#[derive(Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 1.0)]
    logit_scale: f64,
    /// Perturb the analytic gradient before comparing (negative control)
    #[arg(long, hide = true)]
    corrupt: bool,
}

pub fn gradcheck(a: GradCheckArgs) -> Result<(), Failure> {
    if a.batch_size == 0 {
        return Err(Failure::usage(anyhow!("batch size must be at least 1")));
    }
    let mut failed = false;
    for tower in [TowerKind::Mlp, TowerKind::Lookup] {
        let cfg = GradCheckConfig {
            batch_size: a.batch_size,
            logit_scale: a.logit_scale,
            ..GradCheckConfig::small(tower, a.seed)
        };
        let (params, examples) = random_problem(&cfg)?;
        let batch = Batch::from_slice(&examples)?;
        let mut grads = batch_gradients(&params, &batch, cfg.logit_scale)?;
        if a.corrupt {
            for row in grads.embeddings.values_mut() {
                row.iter_mut().for_each(|g| *g = *g * 1.01 + 1e-3);
            }
            if let TowerGradients::Lookup(rows) = &mut grads.tower {
                rows.values_mut().flatten().for_each(|g| *g = *g * 1.01 + 1e-3);
            }
        }
        let report = compare_gradients(&params, &batch, cfg.logit_scale, cfg.step, &grads)?;
        let pass = report.max_rel_err < GRADCHECK_TOLERANCE;
        failed |= !pass;
        println!(
            "{tower}: {} entries, max rel err {:.3e}, max |analytic| {:.3e}, max |numeric| {:.3e} -> {}",
            report.entries,
            report.max_rel_err,
            report.max_abs_analytic,
            report.max_abs_numeric,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    if failed {
        Err(Failure::check(anyhow!("gradient check failed")))
    } else {
        Ok(())
    }
}
