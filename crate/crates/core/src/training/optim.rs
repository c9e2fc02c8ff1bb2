use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::loss::{Gradients, TowerGradients};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{ImageTower, Params};

pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum TowerAccumulators {
    Mlp { v: Matrix, b1: Vec<f64>, u: Matrix, b2: Vec<f64> },
    Lookup(BTreeMap<usize, Vec<f64>>),
}

/// Adagrad with sparse row updates.
///
/// `θ ← θ − lr · g / (√(G + g²) + ε)`, then `G ← G + g²`. Entries whose
/// gradient is exactly zero are skipped, so rows a batch does not touch keep
/// both their value and their accumulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adagrad {
    pub lr: f64,
    pub eps: f64,
    embeddings: BTreeMap<usize, Vec<f64>>,
    tower: TowerAccumulators,
}

fn update(theta: &mut [f64], acc: &mut [f64], grad: &[f64], lr: f64, eps: f64) {
    for ((t, a), &g) in theta.iter_mut().zip(acc.iter_mut()).zip(grad) {
        if g != 0.0 {
            let g2 = g * g;
            *t -= lr * g / ((*a + g2).sqrt() + eps);
            *a += g2;
        }
    }
}

impl Adagrad {
    pub fn new(lr: f64, eps: f64, params: &Params) -> Self {
        let tower = match &params.tower {
            ImageTower::Mlp(t) => TowerAccumulators::Mlp {
                v: Matrix::zeros(t.v.rows(), t.v.cols()),
                b1: vec![0.0; t.b1.len()],
                u: Matrix::zeros(t.u.rows(), t.u.cols()),
                b2: vec![0.0; t.b2.len()],
            },
            ImageTower::Lookup(_) => TowerAccumulators::Lookup(BTreeMap::new()),
        };
        Adagrad {
            lr,
            eps,
            embeddings: BTreeMap::new(),
            tower,
        }
    }

    /// Accumulated squared gradient for one embedding row, if it was ever
    /// updated.
    pub fn embedding_accumulator(&self, row: usize) -> Option<&[f64]> {
        self.embeddings.get(&row).map(Vec::as_slice)
    }

    pub fn step(&mut self, params: &mut Params, grads: &Gradients) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        let (lr, eps) = (self.lr, self.eps);
        let dim = params.embeddings.dim();

        for (&row, g) in &grads.embeddings {
            if g.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: g.len(),
                });
            }
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            let acc = self.embeddings.entry(row).or_insert_with(|| vec![0.0; dim]);
            update(params.embeddings.row_mut(row), acc, g, lr, eps);
        }

        match (&mut params.tower, &mut self.tower, &grads.tower) {
            (
                ImageTower::Mlp(t),
                TowerAccumulators::Mlp { v, b1, u, b2 },
                TowerGradients::Mlp {
                    v: gv,
                    b1: gb1,
                    u: gu,
                    b2: gb2,
                },
            ) => {
                if gv.rows() != t.v.rows() || gv.cols() != t.v.cols() || gu.rows() != t.u.rows() || gu.cols() != t.u.cols()
                {
                    return Err(Error::Config("MLP gradient shape mismatch".into()));
                }
                update(t.v.as_mut_slice(), v.as_mut_slice(), gv.as_slice(), lr, eps);
                update(&mut t.b1, b1, gb1, lr, eps);
                update(t.u.as_mut_slice(), u.as_mut_slice(), gu.as_slice(), lr, eps);
                update(&mut t.b2, b2, gb2, lr, eps);
            }
            (ImageTower::Lookup(t), TowerAccumulators::Lookup(accs), TowerGradients::Lookup(rows)) => {
                let dim = t.vectors.cols();
                for (&row, g) in rows {
                    if row >= t.num_images() {
                        return Err(Error::ImageOutOfRange {
                            id: row,
                            num_images: t.num_images(),
                        });
                    }
                    if g.iter().all(|&x| x == 0.0) {
                        continue;
                    }
                    let acc = accs.entry(row).or_insert_with(|| vec![0.0; dim]);
                    update(t.vectors.row_mut(row), acc, g, lr, eps);
                }
            }
            _ => return Err(Error::Config("gradient does not match the image tower".into())),
        }
        Ok(())
    }
}
