//! Coupled-hypersphere losses on descriptor outputs.
//!
//! For each patch embedding `e_t`, with centers sorted by squared distance
//! `D_k` to `e_t`:
//!
//! * attraction over the `K` nearest: `max(0, D_k - r^2)`, averaged over `T * K`
//! * repulsion over the next `J` (hard negatives): a hinge that is active
//!   while the negative lies inside a margin, averaged over `T * J`
//!
//! Neighbor identities are recomputed on every call and treated as constants
//! when differentiating. The subgradient at a hinge kink is zero.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::{MemoryBank, NeighborTable};
use crate::descriptor::{EmbeddedGrid, REDUCE_CHUNK};
use crate::scalar::{Matrix, Real};
use crate::{CfaError, Result};

/// How the margin `alpha` enters the repulsion hinge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RepMarginMode {
    /// `max(0, r^2 - D - alpha)`. With `r^2 < alpha` this is identically zero.
    AsWritten,
    /// `max(0, r^2 + alpha - D)`: repels hard negatives closer than
    /// `sqrt(r^2 + alpha)`.
    #[default]
    NonDegenerate,
}

impl std::str::FromStr for RepMarginMode {
    type Err = CfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as-written" => Ok(Self::AsWritten),
            "non-degenerate" => Ok(Self::NonDegenerate),
            other => Err(CfaError::InvalidArgument(format!(
                "unknown repulsion margin mode {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfaHyperParams {
    /// Hypersphere radius.
    pub r: f64,
    /// Repulsion margin.
    pub alpha: f64,
    /// Attracting neighbors per patch.
    pub k: usize,
    /// Hard negatives per patch.
    pub j: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub rep_margin_mode: RepMarginMode,
}

impl Default for CfaHyperParams {
    fn default() -> Self {
        Self {
            r: 1e-5,
            alpha: 1e-1,
            k: 3,
            j: 3,
            epochs: 30,
            batch_size: 4,
            rep_margin_mode: RepMarginMode::NonDegenerate,
        }
    }
}

impl CfaHyperParams {
    pub fn validate(&self, bank_len: usize) -> Result<()> {
        if !(self.r > 0.0) || !self.alpha.is_finite() {
            return Err(CfaError::InvalidArgument(format!(
                "r={} must be positive and alpha={} finite",
                self.r, self.alpha
            )));
        }
        if self.k == 0 || self.j == 0 || self.batch_size == 0 {
            return Err(CfaError::InvalidArgument("K, J and batch size must be >= 1".into()));
        }
        if self.k + self.j > bank_len {
            return Err(CfaError::TooManyNeighbors {
                requested: self.k + self.j,
                available: bank_len,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_att: f64,
    pub l_rep: f64,
    pub l_total: f64,
    pub active_att_count: usize,
    pub active_rep_count: usize,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.l_att.is_finite() && self.l_rep.is_finite() && self.l_total.is_finite()
    }

    fn add(&mut self, o: &Self) {
        self.l_att += o.l_att;
        self.l_rep += o.l_rep;
        self.l_total += o.l_total;
        self.active_att_count += o.active_att_count;
        self.active_rep_count += o.active_rep_count;
    }
}

/// Loss value together with `dL/de_t` for every patch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<F> {
    pub breakdown: LossBreakdown,
    pub grad: Matrix<F>,
}

#[derive(Clone, Copy)]
struct Terms {
    att: bool,
    rep: bool,
}

fn evaluate<F: Real>(
    embedded: &EmbeddedGrid<F>,
    table: &NeighborTable<F>,
    bank: &MemoryBank<F>,
    hp: &CfaHyperParams,
    terms: Terms,
) -> LossOutput<F> {
    let t_count = embedded.patch_count();
    let dim = embedded.dim();
    let r2 = hp.r * hp.r;
    let att_scale = 1.0 / (t_count * hp.k) as f64;
    let rep_scale = 1.0 / (t_count * hp.j) as f64;
    let att_g = F::from_f64_lossy(2.0 * att_scale);
    let rep_g = F::from_f64_lossy(-2.0 * rep_scale);

    let mut grad = Matrix::zeros(t_count, dim);
    let partials: Vec<LossBreakdown> = grad
        .as_mut_slice()
        .par_chunks_mut(dim * REDUCE_CHUNK)
        .enumerate()
        .map(|(chunk, g)| {
            let mut acc = LossBreakdown::default();
            let start = chunk * REDUCE_CHUNK;
            for (local, g_row) in g.chunks_mut(dim).enumerate() {
                let t = start + local;
                let e = embedded.embeddings.row(t);
                let idx = table.indices_of(t);
                let dist = table.distances_of(t);
                if terms.att {
                    for kk in 0..hp.k {
                        let arg = dist[kk].as_f64() - r2;
                        if arg > 0.0 {
                            acc.l_att += arg;
                            acc.active_att_count += 1;
                            let c = bank.centers().row(idx[kk]);
                            for ((gv, &ev), &cv) in g_row.iter_mut().zip(e).zip(c) {
                                *gv = *gv + att_g * (ev - cv);
                            }
                        }
                    }
                }
                if terms.rep {
                    for jj in hp.k..hp.k + hp.j {
                        let d = dist[jj].as_f64();
                        let arg = match hp.rep_margin_mode {
                            RepMarginMode::AsWritten => r2 - d - hp.alpha,
                            RepMarginMode::NonDegenerate => r2 + hp.alpha - d,
                        };
                        if arg > 0.0 {
                            acc.l_rep += arg;
                            acc.active_rep_count += 1;
                            let c = bank.centers().row(idx[jj]);
                            for ((gv, &ev), &cv) in g_row.iter_mut().zip(e).zip(c) {
                                *gv = *gv + rep_g * (ev - cv);
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();

    let mut total = LossBreakdown::default();
    for p in &partials {
        total.add(p);
    }
    total.l_att *= att_scale;
    total.l_rep *= rep_scale;
    total.l_total = total.l_att + total.l_rep;
    LossOutput {
        breakdown: total,
        grad,
    }
}

/// Attraction loss and its gradient.
pub fn loss_att<F: Real>(
    embedded: &EmbeddedGrid<F>,
    bank: &MemoryBank<F>,
    hp: &CfaHyperParams,
) -> Result<LossOutput<F>> {
    let table = bank.knn_grid(embedded, hp.k)?;
    Ok(evaluate(embedded, &table, bank, hp, Terms { att: true, rep: false }))
}

/// Repulsion loss against the `(K+1)`-th to `(K+J)`-th nearest centers.
pub fn loss_rep<F: Real>(
    embedded: &EmbeddedGrid<F>,
    bank: &MemoryBank<F>,
    hp: &CfaHyperParams,
) -> Result<LossOutput<F>> {
    hp.validate(bank.len())?;
    let table = bank.knn_grid(embedded, hp.k + hp.j)?;
    Ok(evaluate(embedded, &table, bank, hp, Terms { att: false, rep: true }))
}

/// Attraction plus repulsion, sharing one neighbor search.
pub fn loss_cfa<F: Real>(
    embedded: &EmbeddedGrid<F>,
    bank: &MemoryBank<F>,
    hp: &CfaHyperParams,
) -> Result<LossOutput<F>> {
    hp.validate(bank.len())?;
    let table = bank.knn_grid(embedded, hp.k + hp.j)?;
    Ok(evaluate(embedded, &table, bank, hp, Terms { att: true, rep: true }))
}
