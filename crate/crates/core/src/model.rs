//! The query tower (mean of token embeddings) and the two image towers.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::textproc::TokenId;

/// Norms below this are treated as zero by [`cosine`].
pub const MIN_NORM: f64 = 1e-12;

pub const DEFAULT_FEATURE_DIM: usize = 64;

// RNG stream tags. Each parameter block draws from its own ChaCha stream so
// that a row's initial value depends only on (seed, block, row).
const STREAM_EMBEDDING: u64 = 0;
const STREAM_IMAGE_VECTORS: u64 = 1 << 62;
const STREAM_MLP_V: u64 = 2 << 62;
const STREAM_MLP_U: u64 = (2 << 62) | 1;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn uniform_vec(rng: &mut ChaCha8Rng, len: usize, bound: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Half-width of the uniform initialisation for embedding-like rows.
pub fn embedding_init_bound(dim: usize) -> f64 {
    0.5 / dim as f64
}

/// Glorot-uniform half-width.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Embedding rows for the vocabulary plus the hash buckets.
///
/// Vocabulary rows are stored densely. Bucket rows are materialised on first
/// write; until then a read returns the row's deterministic initial value, so a
/// table with a million buckets costs memory only for the buckets in use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    dim: usize,
    num_buckets: usize,
    seed: u64,
    dense: Matrix,
    buckets: BTreeMap<usize, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(seed: u64, vocab_size: usize, num_buckets: usize, dim: usize) -> Self {
        let mut dense = Matrix::zeros(vocab_size, dim);
        for r in 0..vocab_size {
            dense.row_mut(r).copy_from_slice(&Self::initial_row(seed, dim, r));
        }
        EmbeddingTable {
            dim,
            num_buckets,
            seed,
            dense,
            buckets: BTreeMap::new(),
        }
    }

    fn initial_row(seed: u64, dim: usize, row: usize) -> Vec<f64> {
        let mut rng = stream_rng(seed, STREAM_EMBEDDING | row as u64);
        uniform_vec(&mut rng, dim, embedding_init_bound(dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.dense.rows()
    }

    pub fn num_buckets(&self) -> usize {
        self.num_buckets
    }

    pub fn num_rows(&self) -> usize {
        self.vocab_size() + self.num_buckets
    }

    fn check(&self, id: usize) -> Result<()> {
        if id < self.num_rows() {
            Ok(())
        } else {
            Err(Error::TokenOutOfRange {
                id,
                rows: self.num_rows(),
            })
        }
    }

    pub fn row(&self, id: usize) -> Cow<'_, [f64]> {
        assert!(id < self.num_rows(), "row {id} out of range");
        if id < self.vocab_size() {
            Cow::Borrowed(self.dense.row(id))
        } else if let Some(r) = self.buckets.get(&id) {
            Cow::Borrowed(r)
        } else {
            Cow::Owned(Self::initial_row(self.seed, self.dim, id))
        }
    }

    pub fn row_mut(&mut self, id: usize) -> &mut [f64] {
        assert!(id < self.num_rows(), "row {id} out of range");
        if id < self.vocab_size() {
            self.dense.row_mut(id)
        } else {
            let (seed, dim) = (self.seed, self.dim);
            self.buckets
                .entry(id)
                .or_insert_with(|| Self::initial_row(seed, dim, id))
        }
    }

    /// The in-vocabulary rows, in id order.
    pub fn vocab_rows(&self) -> &Matrix {
        &self.dense
    }

    pub fn materialized_buckets(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.buckets.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn all_finite(&self) -> bool {
        self.dense.all_finite() && self.buckets.values().flatten().all(|v| v.is_finite())
    }
}

/// Activations kept from a forward pass of the MLP tower.
#[derive(Clone, Debug)]
pub struct MlpActivations {
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub out_pre: Vec<f64>,
    pub out: Vec<f64>,
}

/// `ReLU(U · ReLU(V · f + b1) + b2)` over precomputed image features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpImageTower {
    /// hidden × feature_dim
    pub v: Matrix,
    pub b1: Vec<f64>,
    /// out × hidden
    pub u: Matrix,
    pub b2: Vec<f64>,
}

fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

impl MlpImageTower {
    pub fn new(seed: u64, feature_dim: usize, hidden: usize, out: usize) -> Self {
        let mut rng = stream_rng(seed, STREAM_MLP_V);
        let v = uniform_vec(&mut rng, hidden * feature_dim, glorot_bound(feature_dim, hidden));
        let mut rng = stream_rng(seed, STREAM_MLP_U);
        let u = uniform_vec(&mut rng, out * hidden, glorot_bound(hidden, out));
        MlpImageTower {
            v: Matrix::from_vec(hidden, feature_dim, v),
            b1: vec![0.0; hidden],
            u: Matrix::from_vec(out, hidden, u),
            b2: vec![0.0; out],
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.v.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.v.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.u.rows()
    }

    pub fn forward(&self, features: &[f64]) -> Result<MlpActivations> {
        if features.len() != self.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim(),
                got: features.len(),
            });
        }
        let mut hidden_pre = self.v.matvec(features);
        hidden_pre.iter_mut().zip(&self.b1).for_each(|(h, b)| *h += b);
        let hidden = relu(&hidden_pre);
        let mut out_pre = self.u.matvec(&hidden);
        out_pre.iter_mut().zip(&self.b2).for_each(|(o, b)| *o += b);
        let out = relu(&out_pre);
        Ok(MlpActivations {
            hidden_pre,
            hidden,
            out_pre,
            out,
        })
    }

    pub fn all_finite(&self) -> bool {
        self.v.all_finite()
            && self.u.all_finite()
            && self.b1.iter().chain(&self.b2).all(|x| x.is_finite())
    }
}

/// One freely trainable vector per image; only co-occurrence with queries
/// shapes it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LookupImageTower {
    pub vectors: Matrix,
}

impl LookupImageTower {
    pub fn new(seed: u64, num_images: usize, dim: usize) -> Self {
        let mut vectors = Matrix::zeros(num_images, dim);
        let bound = embedding_init_bound(dim);
        for r in 0..num_images {
            let mut rng = stream_rng(seed, STREAM_IMAGE_VECTORS | r as u64);
            vectors.row_mut(r).copy_from_slice(&uniform_vec(&mut rng, dim, bound));
        }
        LookupImageTower { vectors }
    }

    pub fn num_images(&self) -> usize {
        self.vectors.rows()
    }

    pub fn get(&self, image_id: usize) -> Result<&[f64]> {
        if image_id < self.num_images() {
            Ok(self.vectors.row(image_id))
        } else {
            Err(Error::ImageOutOfRange {
                id: image_id,
                num_images: self.num_images(),
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TowerKind {
    Mlp,
    Lookup,
}

impl fmt::Display for TowerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TowerKind::Mlp => "mlp",
            TowerKind::Lookup => "lookup",
        })
    }
}

impl FromStr for TowerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(TowerKind::Mlp),
            "lookup" => Ok(TowerKind::Lookup),
            other => Err(Error::Config(format!("unknown tower kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageTower {
    Mlp(MlpImageTower),
    Lookup(LookupImageTower),
}

impl ImageTower {
    pub fn kind(&self) -> TowerKind {
        match self {
            ImageTower::Mlp(_) => TowerKind::Mlp,
            ImageTower::Lookup(_) => TowerKind::Lookup,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            ImageTower::Mlp(t) => t.out_dim(),
            ImageTower::Lookup(t) => t.vectors.cols(),
        }
    }

    pub fn all_finite(&self) -> bool {
        match self {
            ImageTower::Mlp(t) => t.all_finite(),
            ImageTower::Lookup(t) => t.vectors.all_finite(),
        }
    }
}

/// What an example points at on the image side.
#[derive(Clone, Debug, PartialEq)]
pub enum ImageRef {
    Features(Arc<[f64]>),
    Id(usize),
}

/// Image tower shape, independent of the embedding table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TowerShape {
    Mlp { feature_dim: usize, hidden: usize },
    Lookup { num_images: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub vocab_size: usize,
    pub num_buckets: usize,
    pub emb_dim: usize,
    pub tower: TowerShape,
}

/// All trainable parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub embeddings: EmbeddingTable,
    pub tower: ImageTower,
}

/// Embeddings and image vectors ~ U(±0.5/emb_dim), MLP weights Glorot-uniform,
/// biases zero. Fully determined by `seed`.
pub fn init_params(seed: u64, shape: &ModelShape) -> Result<Params> {
    if shape.emb_dim == 0 {
        return Err(Error::Config("emb_dim must be at least 1".into()));
    }
    let embeddings = EmbeddingTable::new(seed, shape.vocab_size, shape.num_buckets, shape.emb_dim);
    let tower = match shape.tower {
        TowerShape::Mlp { feature_dim, hidden } => {
            if feature_dim == 0 || hidden == 0 {
                return Err(Error::Config("MLP dimensions must be at least 1".into()));
            }
            ImageTower::Mlp(MlpImageTower::new(seed, feature_dim, hidden, shape.emb_dim))
        }
        TowerShape::Lookup { num_images } => {
            ImageTower::Lookup(LookupImageTower::new(seed, num_images, shape.emb_dim))
        }
    };
    Ok(Params { embeddings, tower })
}

impl Params {
    pub fn query_repr(&self, token_ids: &[TokenId]) -> Result<Vec<f64>> {
        query_repr(&self.embeddings, token_ids)
    }

    pub fn image_repr(&self, image: &ImageRef) -> Result<Vec<f64>> {
        match (&self.tower, image) {
            (ImageTower::Mlp(t), ImageRef::Features(f)) => image_repr_mlp(t, f),
            (ImageTower::Lookup(t), ImageRef::Id(id)) => image_repr_lookup(t, *id),
            (tower, _) => Err(Error::Config(format!(
                "image reference does not match the {} tower",
                tower.kind()
            ))),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.embeddings.all_finite() && self.tower.all_finite()
    }
}

/// Mean of the embedding rows of `token_ids`, duplicates counted.
pub fn query_repr(table: &EmbeddingTable, token_ids: &[TokenId]) -> Result<Vec<f64>> {
    if token_ids.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let mut acc = vec![0.0; table.dim()];
    for id in token_ids {
        table.check(id.0)?;
        for (a, v) in acc.iter_mut().zip(table.row(id.0).iter()) {
            *a += v;
        }
    }
    let inv = 1.0 / token_ids.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}

pub fn image_repr_mlp(tower: &MlpImageTower, features: &[f64]) -> Result<Vec<f64>> {
    Ok(tower.forward(features)?.out)
}

pub fn image_repr_lookup(tower: &LookupImageTower, image_id: usize) -> Result<Vec<f64>> {
    tower.get(image_id).map(<[f64]>::to_vec)
}

/// Cosine similarity; 0 when either vector has (near) zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na < MIN_NORM || nb < MIN_NORM {
        return Ok(0.0);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}
