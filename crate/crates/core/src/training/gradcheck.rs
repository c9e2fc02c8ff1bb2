//! Central finite-difference check of the analytic gradients.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::loss::{batch_gradients, batch_loss, Batch, Gradients, TowerGradients};
use super::Example;
use crate::error::{Error, Result};
use crate::model::{init_params, ImageRef, ImageTower, ModelShape, Params, TowerKind, TowerShape};
use crate::textproc::TokenId;

/// Parameter budget above which finite differences are refused.
const MAX_CHECKED_PARAMS: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub tower: TowerKind,
    pub feature_dim: usize,
    pub hidden: usize,
    pub emb_dim: usize,
    pub batch_size: usize,
    pub vocab_size: usize,
    pub num_buckets: usize,
    pub num_images: usize,
    pub logit_scale: f64,
    pub step: f64,
    pub seed: u64,
}

impl GradCheckConfig {
    pub fn small(tower: TowerKind, seed: u64) -> Self {
        GradCheckConfig {
            tower,
            feature_dim: 5,
            hidden: 7,
            emb_dim: 6,
            batch_size: 8,
            vocab_size: 10,
            num_buckets: 4,
            num_images: 6,
            logit_scale: 1.0,
            step: 1e-5,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    /// max over entries of |ga − gn| / max(1e-8, |ga| + |gn|)
    pub max_rel_err: f64,
    pub max_abs_analytic: f64,
    pub max_abs_numeric: f64,
    pub entries: usize,
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    Embedding(usize, usize),
    V(usize),
    B1(usize),
    U(usize),
    B2(usize),
    Image(usize, usize),
}

fn slots(params: &Params) -> Vec<Slot> {
    let dim = params.embeddings.dim();
    let mut out: Vec<Slot> = (0..params.embeddings.num_rows())
        .flat_map(|r| (0..dim).map(move |c| Slot::Embedding(r, c)))
        .collect();
    match &params.tower {
        ImageTower::Mlp(t) => {
            out.extend((0..t.v.as_slice().len()).map(Slot::V));
            out.extend((0..t.b1.len()).map(Slot::B1));
            out.extend((0..t.u.as_slice().len()).map(Slot::U));
            out.extend((0..t.b2.len()).map(Slot::B2));
        }
        ImageTower::Lookup(t) => {
            out.extend((0..t.num_images()).flat_map(|r| (0..dim).map(move |c| Slot::Image(r, c))));
        }
    }
    out
}

fn slot_mut(params: &mut Params, slot: Slot) -> &mut f64 {
    match (slot, &mut params.tower) {
        (Slot::Embedding(r, c), _) => &mut params.embeddings.row_mut(r)[c],
        (Slot::V(i), ImageTower::Mlp(t)) => &mut t.v.as_mut_slice()[i],
        (Slot::B1(i), ImageTower::Mlp(t)) => &mut t.b1[i],
        (Slot::U(i), ImageTower::Mlp(t)) => &mut t.u.as_mut_slice()[i],
        (Slot::B2(i), ImageTower::Mlp(t)) => &mut t.b2[i],
        (Slot::Image(r, c), ImageTower::Lookup(t)) => &mut t.vectors.row_mut(r)[c],
        _ => unreachable!("slot does not match tower"),
    }
}

fn analytic(grads: &Gradients, slot: Slot) -> f64 {
    let sparse = |m: &std::collections::BTreeMap<usize, Vec<f64>>, r: usize, c: usize| m.get(&r).map_or(0.0, |row| row[c]);
    match (slot, &grads.tower) {
        (Slot::Embedding(r, c), _) => sparse(&grads.embeddings, r, c),
        (Slot::V(i), TowerGradients::Mlp { v, .. }) => v.as_slice()[i],
        (Slot::B1(i), TowerGradients::Mlp { b1, .. }) => b1[i],
        (Slot::U(i), TowerGradients::Mlp { u, .. }) => u.as_slice()[i],
        (Slot::B2(i), TowerGradients::Mlp { b2, .. }) => b2[i],
        (Slot::Image(r, c), TowerGradients::Lookup(m)) => sparse(m, r, c),
        _ => 0.0,
    }
}

/// Compares `analytic_grads` against central differences of the mean batch
/// loss for every parameter entry.
pub fn compare_gradients(
    params: &Params,
    batch: &Batch<'_>,
    logit_scale: f64,
    step: f64,
    analytic_grads: &Gradients,
) -> Result<GradCheckReport> {
    let all = slots(params);
    if all.len() > MAX_CHECKED_PARAMS {
        return Err(Error::Config(format!(
            "gradient check limited to {MAX_CHECKED_PARAMS} parameters, model has {}",
            all.len()
        )));
    }
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_analytic: 0.0,
        max_abs_numeric: 0.0,
        entries: all.len(),
    };
    for slot in all {
        let original = *slot_mut(&mut work, slot);
        *slot_mut(&mut work, slot) = original + step;
        let plus = batch_loss(&work, batch, logit_scale)?.mean_weighted_loss;
        *slot_mut(&mut work, slot) = original - step;
        let minus = batch_loss(&work, batch, logit_scale)?.mean_weighted_loss;
        *slot_mut(&mut work, slot) = original;

        let numeric = (plus - minus) / (2.0 * step);
        let ga = analytic(analytic_grads, slot);
        let rel = (ga - numeric).abs() / (ga.abs() + numeric.abs()).max(1e-8);
        report.max_rel_err = report.max_rel_err.max(rel);
        report.max_abs_analytic = report.max_abs_analytic.max(ga.abs());
        report.max_abs_numeric = report.max_abs_numeric.max(numeric.abs());
    }
    Ok(report)
}

/// A random small model and batch for gradient checking. Queries draw 1–3
/// tokens from the whole id space (buckets included); weights are in [0.5, 2).
pub fn random_problem(cfg: &GradCheckConfig) -> Result<(Params, Vec<Example>)> {
    let tower = match cfg.tower {
        TowerKind::Mlp => TowerShape::Mlp {
            feature_dim: cfg.feature_dim,
            hidden: cfg.hidden,
        },
        TowerKind::Lookup => TowerShape::Lookup {
            num_images: cfg.num_images,
        },
    };
    let shape = ModelShape {
        vocab_size: cfg.vocab_size,
        num_buckets: cfg.num_buckets,
        emb_dim: cfg.emb_dim,
        tower,
    };
    let params = init_params(cfg.seed, &shape)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6772_6164);
    let num_ids = cfg.vocab_size + cfg.num_buckets;
    let examples = (0..cfg.batch_size)
        .map(|_| {
            let len = rng.gen_range(1..=3);
            let tokens = (0..len).map(|_| TokenId(rng.gen_range(0..num_ids))).collect();
            let image = match cfg.tower {
                TowerKind::Mlp => {
                    let f: Vec<f64> = (0..cfg.feature_dim).map(|_| rng.sample(StandardNormal)).collect();
                    ImageRef::Features(f.into())
                }
                TowerKind::Lookup => ImageRef::Id(rng.gen_range(0..cfg.num_images)),
            };
            Example {
                tokens,
                image,
                weight: rng.gen_range(0.5..2.0),
            }
        })
        .collect();
    Ok((params, examples))
}

/// Builds a random problem from `cfg` and checks its analytic gradients.
pub fn grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let (params, examples) = random_problem(cfg)?;
    let batch = Batch::from_slice(&examples)?;
    let grads = batch_gradients(&params, &batch, cfg.logit_scale)?;
    compare_gradients(&params, &batch, cfg.logit_scale, cfg.step, &grads)
}
