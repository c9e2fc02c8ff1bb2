use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::{Args, ValueEnum};
use imagevec::data::{self, ImageSource};
use imagevec::embeddings::WordVectors;
use imagevec::model::{init_params, ModelShape, TowerKind, TowerShape};
use imagevec::textproc::{LangMode, DEFAULT_MIN_COUNT, DEFAULT_NUM_BUCKETS};
use imagevec::training::{self, Checkpoint, TrainConfig, DEFAULT_BATCH_SIZE};
use log::info;

use crate::output::Staged;
use crate::Failure;

pub const VOCAB_FILE: &str = "vocab.txt";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOSS_FILE: &str = "loss.csv";

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    /// MLP tower, m=200, n=emb=100
    #[value(name = "paper-100")]
    Paper100,
    /// MLP tower, m=300, n=emb=300
    #[value(name = "paper-300")]
    Paper300,
    /// Lookup tower on the full corpus
    Baseline,
    /// Lookup tower on the corpus filtered to images seen in two or more languages
    #[value(name = "baseline-2lang")]
    Baseline2Lang,
    /// MLP tower, m=200, n=emb=100, language-unaware tokens
    #[value(name = "unaware-100")]
    Unaware100,
}

struct PresetValues {
    tower: TowerKind,
    lang_mode: LangMode,
    emb_dim: usize,
    m: usize,
    filter: bool,
}

impl Preset {
    fn values(self) -> PresetValues {
        let mlp = |emb_dim, m| PresetValues {
            tower: TowerKind::Mlp,
            lang_mode: LangMode::Aware,
            emb_dim,
            m,
            filter: false,
        };
        match self {
            Preset::Paper100 => mlp(100, 200),
            Preset::Paper300 => mlp(300, 300),
            Preset::Baseline => PresetValues {
                tower: TowerKind::Lookup,
                ..mlp(100, 200)
            },
            Preset::Baseline2Lang => PresetValues {
                tower: TowerKind::Lookup,
                filter: true,
                ..mlp(100, 200)
            },
            Preset::Unaware100 => PresetValues {
                lang_mode: LangMode::Unaware,
                ..mlp(100, 200)
            },
        }
    }
}

/// Explicit flags override preset values.
#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    triples: PathBuf,
    /// Image feature file; required for the MLP tower
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    tower: Option<TowerKind>,
    #[arg(long)]
    lang_mode: Option<LangMode>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    emb_dim: Option<usize>,
    /// Hidden width of the image MLP
    #[arg(long)]
    m: Option<usize>,
    /// Output width of the image MLP; must equal the embedding dimension
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    logit_scale: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_COUNT)]
    min_count: u64,
    #[arg(long, default_value_t = DEFAULT_NUM_BUCKETS)]
    buckets: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train on a single thread
    #[arg(long)]
    deterministic: bool,
    /// Drop images that occur with fewer than two languages before training
    #[arg(long)]
    filter_multilingual: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug)]
struct RunConfig {
    tower: TowerKind,
    lang_mode: LangMode,
    emb_dim: usize,
    m: usize,
    filter: bool,
    train: TrainConfig,
}

fn resolve(a: &TrainArgs) -> anyhow::Result<RunConfig> {
    let base = a.preset.unwrap_or(Preset::Paper100).values();
    let tower = a.tower.unwrap_or(base.tower);
    let emb_dim = a.emb_dim.unwrap_or(base.emb_dim);
    let m = a.m.unwrap_or(base.m);
    if emb_dim < 1 || m < 1 {
        return Err(anyhow!("dimensions must be at least 1"));
    }
    if tower == TowerKind::Mlp {
        if let Some(n) = a.n.filter(|&n| n != emb_dim) {
            return Err(anyhow!("mlp tower needs n == emb_dim, got n={n} emb_dim={emb_dim}"));
        }
        if a.features.is_none() {
            return Err(anyhow!("the mlp tower needs --features"));
        }
    }
    if a.min_count < 1 {
        return Err(anyhow!("min_count must be at least 1"));
    }
    let train = TrainConfig {
        batch_size: a.batch_size,
        epochs: a.epochs,
        lr: a.lr,
        logit_scale: a.logit_scale,
        seed: a.seed,
        ..TrainConfig::default()
    };
    train.validate()?;
    Ok(RunConfig {
        tower,
        lang_mode: a.lang_mode.unwrap_or(base.lang_mode),
        emb_dim,
        m,
        filter: a.filter_multilingual || base.filter,
        train,
    })
}

pub fn train(a: TrainArgs) -> Result<(), Failure> {
    let cfg = resolve(&a).map_err(Failure::usage)?;
    info!("config: {cfg:?}");
    if a.deterministic {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global()
            .context("configuring a single-threaded pool")
            .map_err(Failure::usage)?;
    }

    let mut triples = data::load_triples(&a.triples)?;
    if cfg.filter {
        let before = triples.len();
        triples = data::filter_multilingual(&triples);
        println!("filter: kept {} dropped {}", triples.len(), before - triples.len());
    }
    let vocab = data::build_vocab(&triples, a.min_count, a.buckets, cfg.lang_mode)?;
    info!("vocabulary: {} tokens, {} buckets", vocab.vocab_size(), vocab.num_buckets());

    let features = match (cfg.tower, &a.features) {
        (TowerKind::Mlp, Some(path)) => Some(data::load_features(path)?),
        _ => None,
    };
    let prepared = match &features {
        Some(f) => data::prepare_examples(&triples, ImageSource::Features(f), &vocab)?,
        None => data::prepare_examples(&triples, ImageSource::Lookup, &vocab)?,
    };
    println!("dropped {} triples with empty queries", prepared.dropped);

    let tower = match &features {
        Some(f) => TowerShape::Mlp {
            feature_dim: f.dim(),
            hidden: cfg.m,
        },
        None => TowerShape::Lookup {
            num_images: prepared.image_ids.len(),
        },
    };
    let shape = ModelShape {
        vocab_size: vocab.vocab_size(),
        num_buckets: vocab.num_buckets(),
        emb_dim: cfg.emb_dim,
        tower,
    };
    let params = init_params(cfg.train.seed, &shape)?;
    let outcome = training::train(params, &prepared.examples, &cfg.train)?;

    let vectors = WordVectors::from_table(&vocab, &outcome.params.embeddings)?;
    let checkpoint = Checkpoint::new(
        shape,
        &vocab,
        cfg.train.clone(),
        prepared.image_ids,
        outcome.loss_curve.len(),
        outcome.params,
        outcome.optimizer,
    );
    let mut loss_csv = String::from("epoch,mean_loss\n");
    for (i, l) in outcome.loss_curve.iter().enumerate() {
        let _ = writeln!(loss_csv, "{},{l}", i + 1);
    }

    let mut out = Staged::new();
    out.write_with(&a.out_dir.join(VOCAB_FILE), |f| Ok(vocab.write(f)?))?;
    out.write_with(&a.out_dir.join(EMBEDDINGS_FILE), |f| Ok(vectors.write_word2vec(f)?))?;
    out.write_with(&a.out_dir.join(CHECKPOINT_FILE), |f| Ok(checkpoint.write(f)?))?;
    out.write_bytes(&a.out_dir.join(LOSS_FILE), loss_csv.as_bytes())?;
    out.commit()?;

    match outcome.loss_curve.last() {
        Some(l) => println!("final loss {l:.6} after {} epochs", outcome.loss_curve.len()),
        None => println!("no epochs run"),
    }
    println!("exported {} vectors of dim {} to {}", vectors.len(), vectors.dim(), a.out_dir.display());
    Ok(())
}
