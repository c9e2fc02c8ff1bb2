use std::collections::BTreeMap;

use rayon::prelude::*;

use super::Example;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, Matrix};
use crate::model::{ImageRef, ImageTower, MlpActivations, Params, MIN_NORM};

/// Largest batch accepted by [`batch_loss_bruteforce`].
pub const MAX_ORACLE_BATCH: usize = 64;

/// A validated group of examples sharing one softmax denominator.
#[derive(Clone, Debug)]
pub struct Batch<'a> {
    examples: Vec<&'a Example>,
}

impl<'a> Batch<'a> {
    pub fn new(examples: Vec<&'a Example>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::EmptyBatch);
        }
        for ex in &examples {
            if !ex.weight.is_finite() {
                return Err(Error::NonFinite("example weight"));
            }
            if ex.weight < 0.0 {
                return Err(Error::NegativeWeight(ex.weight));
            }
            if ex.tokens.is_empty() {
                return Err(Error::EmptyQuery);
            }
        }
        Ok(Batch { examples })
    }

    pub fn from_slice(examples: &'a [Example]) -> Result<Self> {
        Self::new(examples.iter().collect())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[&'a Example] {
        &self.examples
    }
}

#[derive(Clone, Debug)]
pub struct LossReport {
    /// Mean over the batch of `weight · (−log softmax(logits[q])[q])`.
    pub mean_weighted_loss: f64,
    /// Weighted per-example losses, in batch order.
    pub per_example: Vec<f64>,
    /// `logits[q][j] = logit_scale · cos(Q_q, I_j)`; rows are queries.
    pub logits: Matrix,
}

/// Gradient of the mean weighted loss. Embedding and image-vector gradients are
/// sparse: only rows touched by the batch are present.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub embeddings: BTreeMap<usize, Vec<f64>>,
    pub tower: TowerGradients,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TowerGradients {
    Mlp {
        v: Matrix,
        b1: Vec<f64>,
        u: Matrix,
        b2: Vec<f64>,
    },
    Lookup(BTreeMap<usize, Vec<f64>>),
}

impl Gradients {
    pub fn all_finite(&self) -> bool {
        let sparse_ok = |m: &BTreeMap<usize, Vec<f64>>| m.values().flatten().all(|v| v.is_finite());
        sparse_ok(&self.embeddings)
            && match &self.tower {
                TowerGradients::Mlp { v, b1, u, b2 } => {
                    v.all_finite() && u.all_finite() && b1.iter().chain(b2).all(|x| x.is_finite())
                }
                TowerGradients::Lookup(m) => sparse_ok(m),
            }
    }

    /// Largest absolute entry; handy for tests and diagnostics.
    pub fn max_abs(&self) -> f64 {
        let sparse = |m: &BTreeMap<usize, Vec<f64>>| m.values().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        let tower = match &self.tower {
            TowerGradients::Mlp { v, b1, u, b2 } => v
                .as_slice()
                .iter()
                .chain(u.as_slice())
                .chain(b1)
                .chain(b2)
                .fold(0.0f64, |a, x| a.max(x.abs())),
            TowerGradients::Lookup(m) => sparse(m),
        };
        sparse(&self.embeddings).max(tower)
    }
}

/// A representation split into direction and length. Zero-norm vectors get a
/// zero direction so that every cosine they take part in is 0 with no gradient.
struct Unit {
    dir: Vec<f64>,
    norm: f64,
}

impl Unit {
    fn new(v: &[f64]) -> Self {
        let n = norm(v);
        if n < MIN_NORM {
            Unit {
                dir: vec![0.0; v.len()],
                norm: 0.0,
            }
        } else {
            Unit {
                dir: v.iter().map(|x| x / n).collect(),
                norm: n,
            }
        }
    }

    fn is_zero(&self) -> bool {
        self.norm == 0.0
    }
}

struct Forward {
    queries: Vec<Unit>,
    images: Vec<Unit>,
    mlp: Vec<MlpActivations>,
    cos: Matrix,
    report: LossReport,
    /// Row softmax of the logits.
    probs: Matrix,
}

fn check_finite(v: &[f64], what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn forward(params: &Params, batch: &Batch<'_>, logit_scale: f64) -> Result<Forward> {
    if !(logit_scale.is_finite() && logit_scale > 0.0) {
        return Err(Error::Config(format!("logit_scale must be positive, got {logit_scale}")));
    }
    if let ImageTower::Mlp(t) = &params.tower {
        if !t.all_finite() {
            return Err(Error::NonFinite("image tower"));
        }
    }
    let b = batch.len();
    let examples = batch.examples();

    let queries = examples
        .par_iter()
        .map(|ex| {
            let q = params.query_repr(&ex.tokens)?;
            check_finite(&q, "embedding")?;
            Ok(Unit::new(&q))
        })
        .collect::<Result<Vec<_>>>()?;

    let (images, mlp): (Vec<Unit>, Vec<MlpActivations>) = match &params.tower {
        ImageTower::Mlp(tower) => {
            let acts = examples
                .par_iter()
                .map(|ex| match &ex.image {
                    ImageRef::Features(f) => {
                        check_finite(f, "image features")?;
                        tower.forward(f)
                    }
                    ImageRef::Id(_) => Err(Error::Config("MLP tower needs image features".into())),
                })
                .collect::<Result<Vec<_>>>()?;
            (acts.iter().map(|a| Unit::new(&a.out)).collect(), acts)
        }
        ImageTower::Lookup(_) => {
            let units = examples
                .iter()
                .map(|ex| {
                    let v = params.image_repr(&ex.image)?;
                    check_finite(&v, "image vector")?;
                    Ok(Unit::new(&v))
                })
                .collect::<Result<Vec<_>>>()?;
            (units, Vec::new())
        }
    };
    if let Some(img) = images.first() {
        if img.dir.len() != queries[0].dir.len() {
            return Err(Error::DimensionMismatch {
                expected: queries[0].dir.len(),
                got: img.dir.len(),
            });
        }
    }

    let rows: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..b)
        .into_par_iter()
        .map(|q| {
            let cos: Vec<f64> = images
                .iter()
                .map(|img| dot(&queries[q].dir, &img.dir).clamp(-1.0, 1.0))
                .collect();
            let max = cos.iter().fold(f64::NEG_INFINITY, |m, &c| m.max(logit_scale * c));
            let exps: Vec<f64> = cos.iter().map(|&c| (logit_scale * c - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            let loss = total.ln() - (logit_scale * cos[q] - max);
            let probs = exps.iter().map(|e| e / total).collect();
            (cos, probs, examples[q].weight * loss)
        })
        .collect();

    let mut cos = Matrix::zeros(b, b);
    let mut probs = Matrix::zeros(b, b);
    let mut logits = Matrix::zeros(b, b);
    let mut per_example = Vec::with_capacity(b);
    for (q, (c, p, l)) in rows.into_iter().enumerate() {
        for (z, &cj) in logits.row_mut(q).iter_mut().zip(&c) {
            *z = logit_scale * cj;
        }
        cos.row_mut(q).copy_from_slice(&c);
        probs.row_mut(q).copy_from_slice(&p);
        per_example.push(l);
    }
    let mean_weighted_loss = per_example.iter().sum::<f64>() / b as f64;

    Ok(Forward {
        queries,
        images,
        mlp,
        cos,
        probs,
        report: LossReport {
            mean_weighted_loss,
            per_example,
            logits,
        },
    })
}

pub fn batch_loss(params: &Params, batch: &Batch<'_>, logit_scale: f64) -> Result<LossReport> {
    forward(params, batch, logit_scale).map(|f| f.report)
}

pub fn batch_gradients(params: &Params, batch: &Batch<'_>, logit_scale: f64) -> Result<Gradients> {
    batch_loss_and_gradients(params, batch, logit_scale).map(|(_, g)| g)
}

/// Loss and gradients from a single forward pass.
pub fn batch_loss_and_gradients(
    params: &Params,
    batch: &Batch<'_>,
    logit_scale: f64,
) -> Result<(LossReport, Gradients)> {
    let fwd = forward(params, batch, logit_scale)?;
    let b = batch.len();
    let examples = batch.examples();

    // dL/dcos[q][j] = scale · w_q / B · (p[q][j] − δ_qj)
    let mut dcos = Matrix::zeros(b, b);
    for (q, ex) in examples.iter().enumerate() {
        let coef = logit_scale * ex.weight / b as f64;
        for j in 0..b {
            let delta = if q == j { 1.0 } else { 0.0 };
            dcos.set(q, j, coef * (fwd.probs.get(q, j) - delta));
        }
    }

    // d cos(a, b) / da = (b̂ − cos · â) / |a|
    let side_grad = |own: &Unit, others: &[Unit], coefs: &dyn Fn(usize) -> (f64, f64)| -> Vec<f64> {
        let mut g = vec![0.0; own.dir.len()];
        if own.is_zero() {
            return g;
        }
        let mut along_self = 0.0;
        for (k, other) in others.iter().enumerate() {
            let (d, c) = coefs(k);
            if d != 0.0 && !other.is_zero() {
                axpy(d, &other.dir, &mut g);
                along_self += d * c;
            }
        }
        axpy(-along_self, &own.dir, &mut g);
        let inv = 1.0 / own.norm;
        g.iter_mut().for_each(|x| *x *= inv);
        g
    };

    let query_grads: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|q| side_grad(&fwd.queries[q], &fwd.images, &|j| (dcos.get(q, j), fwd.cos.get(q, j))))
        .collect();
    let image_grads: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|j| side_grad(&fwd.images[j], &fwd.queries, &|q| (dcos.get(q, j), fwd.cos.get(q, j))))
        .collect();

    let mut embeddings: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let dim = params.embeddings.dim();
    for (ex, g) in examples.iter().zip(&query_grads) {
        let share = 1.0 / ex.tokens.len() as f64;
        for t in &ex.tokens {
            let row = embeddings.entry(t.index()).or_insert_with(|| vec![0.0; dim]);
            axpy(share, g, row);
        }
    }

    let tower = match &params.tower {
        ImageTower::Mlp(t) => {
            let (hidden, out) = (t.hidden_dim(), t.out_dim());
            // Back through the final ReLU, then through U and the hidden ReLU.
            let (d_out, d_hidden): (Vec<Vec<f64>>, Vec<Vec<f64>>) = fwd
                .mlp
                .par_iter()
                .zip(&image_grads)
                .map(|(act, g)| {
                    let d_out: Vec<f64> = g
                        .iter()
                        .zip(&act.out_pre)
                        .map(|(&gi, &pre)| if pre > 0.0 { gi } else { 0.0 })
                        .collect();
                    let d_hidden = t
                        .u
                        .matvec_t(&d_out)
                        .into_iter()
                        .zip(&act.hidden_pre)
                        .map(|(gh, &pre)| if pre > 0.0 { gh } else { 0.0 })
                        .collect();
                    (d_out, d_hidden)
                })
                .unzip();

            let mut u = Matrix::zeros(out, hidden);
            let mut v = Matrix::zeros(hidden, t.feature_dim());
            // Each parameter row sums over the batch in a fixed order.
            u.as_mut_slice()
                .par_chunks_mut(hidden.max(1))
                .enumerate()
                .for_each(|(i, row)| {
                    for (act, d) in fwd.mlp.iter().zip(&d_out) {
                        if d[i] != 0.0 {
                            axpy(d[i], &act.hidden, row);
                        }
                    }
                });
            let features: Vec<&[f64]> = examples
                .iter()
                .map(|ex| match &ex.image {
                    ImageRef::Features(f) => &f[..],
                    ImageRef::Id(_) => unreachable!("checked in forward"),
                })
                .collect();
            v.as_mut_slice()
                .par_chunks_mut(t.feature_dim().max(1))
                .enumerate()
                .for_each(|(i, row)| {
                    for (f, d) in features.iter().zip(&d_hidden) {
                        if d[i] != 0.0 {
                            axpy(d[i], f, row);
                        }
                    }
                });
            let mut b1 = vec![0.0; hidden];
            let mut b2 = vec![0.0; out];
            for (dh, dout) in d_hidden.iter().zip(&d_out) {
                axpy(1.0, dh, &mut b1);
                axpy(1.0, dout, &mut b2);
            }
            TowerGradients::Mlp { v, b1, u, b2 }
        }
        ImageTower::Lookup(_) => {
            let mut rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for (ex, g) in examples.iter().zip(&image_grads) {
                let ImageRef::Id(id) = ex.image else {
                    return Err(Error::Config("lookup tower needs image ids".into()));
                };
                let row = rows.entry(id).or_insert_with(|| vec![0.0; dim]);
                axpy(1.0, g, row);
            }
            TowerGradients::Lookup(rows)
        }
    };

    Ok((fwd.report, Gradients { embeddings, tower }))
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Reference loss: a plain double loop over (query, image) pairs with no
/// max-subtraction, used to cross-check [`batch_loss`]. Batches are limited to
/// [`MAX_ORACLE_BATCH`] examples.
pub fn batch_loss_bruteforce(params: &Params, batch: &Batch<'_>, logit_scale: f64) -> Result<f64> {
    if batch.len() > MAX_ORACLE_BATCH {
        return Err(Error::Config(format!(
            "oracle batch limited to {MAX_ORACLE_BATCH} examples, got {}",
            batch.len()
        )));
    }
    if !(logit_scale.is_finite() && logit_scale > 0.0) {
        return Err(Error::Config(format!("logit_scale must be positive, got {logit_scale}")));
    }
    let examples = batch.examples();
    let queries: Vec<Vec<f64>> = examples
        .iter()
        .map(|ex| params.query_repr(&ex.tokens))
        .collect::<Result<_>>()?;
    let images: Vec<Vec<f64>> = examples
        .iter()
        .map(|ex| params.image_repr(&ex.image))
        .collect::<Result<_>>()?;
    if queries.iter().chain(&images).flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("parameters"));
    }

    let pair_cos = |a: &[f64], b: &[f64]| -> f64 {
        let ab = compensated_sum(a.iter().zip(b).map(|(x, y)| x * y));
        let aa = compensated_sum(a.iter().map(|x| x * x)).sqrt();
        let bb = compensated_sum(b.iter().map(|x| x * x)).sqrt();
        if aa < MIN_NORM || bb < MIN_NORM {
            0.0
        } else {
            ab / (aa * bb)
        }
    };

    let mut losses = Vec::with_capacity(examples.len());
    for (q, ex) in examples.iter().enumerate() {
        let numerator = (logit_scale * pair_cos(&queries[q], &images[q])).exp();
        let denominator = compensated_sum(images.iter().map(|img| (logit_scale * pair_cos(&queries[q], img)).exp()));
        losses.push(ex.weight * -(numerator / denominator).ln());
    }
    Ok(compensated_sum(losses) / examples.len() as f64)
}
