//! End-to-end runs through the library: synthetic corpus, vocabulary,
//! training, checkpointing and export.

use imagevec::data::{self, ImageSource, SyntheticSpec};
use imagevec::embeddings::WordVectors;
use imagevec::eval::crosslingual_retrieval;
use imagevec::model::{init_params, ModelShape, TowerShape};
use imagevec::textproc::{LangMode, Vocabulary};
use imagevec::training::{train, Checkpoint, Example, TrainConfig, Trainer};
use tempfile::TempDir;

fn corpus() -> data::SyntheticCorpus {
    data::gen_synthetic(&SyntheticSpec {
        num_concepts: 8,
        num_languages: 3,
        feature_dim: 8,
        num_examples: 6000,
        images_per_concept: Some(100),
        seed: 3,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn setup(c: &data::SyntheticCorpus) -> (Vocabulary, Vec<Example>, ModelShape) {
    let vocab = data::build_vocab(&c.triples, 6, 50, LangMode::Aware).unwrap();
    let features = c.feature_map();
    let prepared = data::prepare_examples(&c.triples, ImageSource::Features(&features), &vocab).unwrap();
    assert_eq!(prepared.dropped, 0);
    let shape = ModelShape {
        vocab_size: vocab.vocab_size(),
        num_buckets: vocab.num_buckets(),
        emb_dim: 8,
        tower: TowerShape::Mlp {
            feature_dim: 8,
            hidden: 16,
        },
    };
    (vocab, prepared.examples, shape)
}

fn config() -> TrainConfig {
    TrainConfig {
        batch_size: 200,
        epochs: 4,
        logit_scale: 10.0,
        seed: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn loss_decreases_and_concepts_align() {
    let c = corpus();
    let (vocab, examples, shape) = setup(&c);
    let out = train(init_params(1, &shape).unwrap(), &examples, &config()).unwrap();
    let curve = &out.loss_curve;
    assert!(curve[0] > curve[1] && curve[1] > curve[2], "{curve:?}");
    assert!(out.params.all_finite());

    let vectors = WordVectors::from_table(&vocab, &out.params.embeddings).unwrap();
    let r = crosslingual_retrieval(&vectors, &data::lexicon_words(&c.lexicon, false)).unwrap();
    assert_eq!(r.n_used, r.n_total);
    assert!(r.concept_gap() > 0.3, "{r:?}");
}

#[test]
fn resuming_from_checkpoint_matches_uninterrupted_run() {
    let c = corpus();
    let (vocab, examples, shape) = setup(&c);
    let cfg = config();
    let full = train(init_params(1, &shape).unwrap(), &examples, &cfg).unwrap();

    let mut first = Trainer::new(init_params(1, &shape).unwrap(), cfg.clone()).unwrap();
    for _ in 0..2 {
        first.run_epoch(&examples).unwrap();
    }
    let (params, optimizer, epochs) = first.into_parts();
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("ckpt.json");
    Checkpoint::new(shape, &vocab, cfg.clone(), Vec::new(), epochs, params, optimizer)
        .save(&path)
        .unwrap();

    let ckpt = Checkpoint::load(&path).unwrap();
    ckpt.check_vocab(&vocab).unwrap();
    let mut resumed = Trainer::from_parts(ckpt.params, ckpt.optimizer, ckpt.train, ckpt.epochs_completed).unwrap();
    let tail: Vec<f64> = (0..2).map(|_| resumed.run_epoch(&examples).unwrap()).collect();
    assert_eq!(tail, full.loss_curve[2..]);
    assert_eq!(resumed.params(), &full.params);
}

#[test]
fn export_round_trips_through_word2vec_text() {
    let c = corpus();
    let (vocab, examples, shape) = setup(&c);
    let cfg = TrainConfig { epochs: 1, ..config() };
    let out = train(init_params(1, &shape).unwrap(), &examples, &cfg).unwrap();
    let vectors = WordVectors::from_table(&vocab, &out.params.embeddings).unwrap();

    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("vectors.txt");
    vectors.save_word2vec(&path).unwrap();
    let back = WordVectors::load_word2vec(&path).unwrap();
    assert_eq!(back.words(), vectors.words());
    for w in vectors.words() {
        assert_eq!(back.get(w), vectors.get(w));
    }
    assert_eq!(back.len(), vocab.vocab_size());
}

#[test]
fn vocabulary_file_round_trips() {
    let c = corpus();
    let (vocab, _, _) = setup(&c);
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("vocab.txt");
    vocab.save(&path).unwrap();
    let back = Vocabulary::load(&path).unwrap();
    assert_eq!(back.content_hash(), vocab.content_hash());
    assert_eq!(back.lookup("l2:unseenword"), vocab.lookup("l2:unseenword"));
}
