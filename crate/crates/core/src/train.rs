//! Transfer-learning loop adapting the descriptor against a frozen bank.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::MemoryBank;
use crate::descriptor::{augmented_inputs, DescriptorGrads, EmbeddedGrid, PatchDescriptor, TrainableDescriptor};
use crate::loss::{loss_cfa, CfaHyperParams, LossBreakdown};
use crate::patch::PatchGrid;
use crate::scalar::Real;
use crate::{CfaError, Result};

/// Random access to training samples.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;
    fn name(&self, index: usize) -> String;
    fn load(&self, index: usize) -> Result<PatchGrid>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSource for [PatchGrid] {
    fn len(&self) -> usize {
        <[PatchGrid]>::len(self)
    }

    fn name(&self, index: usize) -> String {
        format!("#{index}")
    }

    fn load(&self, index: usize) -> Result<PatchGrid> {
        Ok(self[index].clone())
    }
}

impl SampleSource for Vec<PatchGrid> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn name(&self, index: usize) -> String {
        self.as_slice().name(index)
    }

    fn load(&self, index: usize) -> Result<PatchGrid> {
        Ok(self[index].clone())
    }
}

/// Per-epoch record: losses are means over the epoch's samples (evaluated
/// before each batch's update), active counts are totals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub losses: LossBreakdown,
}

fn term_of(b: &LossBreakdown) -> &'static str {
    if !b.l_att.is_finite() {
        "l_att"
    } else if !b.l_rep.is_finite() {
        "l_rep"
    } else {
        "l_total"
    }
}

/// Loss and parameter gradients of one sample under the current descriptor.
pub fn sample_gradients<F: Real>(
    descriptor: &PatchDescriptor<F>,
    grid: &PatchGrid,
    bank: &MemoryBank<F>,
    hp: &CfaHyperParams,
) -> Result<(LossBreakdown, DescriptorGrads<F>)> {
    let inputs = augmented_inputs::<F>(grid);
    let embedded = EmbeddedGrid::new(grid.height(), grid.width(), descriptor.forward_augmented(&inputs)?)?;
    let out = loss_cfa(&embedded, bank, hp)?;
    let grads = descriptor.backward_augmented(&inputs, &out.grad)?;
    Ok((out.breakdown, grads))
}

/// Trains for `hp.epochs` epochs. Each epoch shuffles the samples with a
/// seeded generator, splits them into batches of `hp.batch_size`, averages
/// the per-sample gradients of a batch and takes one optimizer step.
pub fn train<F: Real, S: SampleSource + ?Sized>(
    samples: &S,
    model: &mut TrainableDescriptor<F>,
    bank: &MemoryBank<F>,
    hp: &CfaHyperParams,
    seed: u64,
) -> Result<Vec<EpochLog>> {
    hp.validate(bank.len())?;
    if samples.is_empty() {
        return Err(CfaError::InvalidArgument("no training samples".into()));
    }
    if model.descriptor.out_dim() != bank.dim() {
        return Err(CfaError::Shape(format!(
            "descriptor emits {} dims, bank holds {}",
            model.descriptor.out_dim(),
            bank.dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = Vec::with_capacity(hp.epochs);

    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = LossBreakdown::default();
        for batch in order.chunks(hp.batch_size) {
            let desc = &model.descriptor;
            let results: Vec<Result<(LossBreakdown, DescriptorGrads<F>)>> = batch
                .par_iter()
                .map(|&i| sample_gradients(desc, &samples.load(i)?, bank, hp))
                .collect();
            let mut grads = DescriptorGrads::zeros(desc.out_dim(), desc.in_dim());
            for (&i, r) in batch.iter().zip(results) {
                let (b, g) = r?;
                if !b.is_finite() {
                    return Err(CfaError::NonFiniteLoss {
                        epoch,
                        sample: samples.name(i),
                        term: term_of(&b),
                    });
                }
                epoch_sum.l_att += b.l_att;
                epoch_sum.l_rep += b.l_rep;
                epoch_sum.l_total += b.l_total;
                epoch_sum.active_att_count += b.active_att_count;
                epoch_sum.active_rep_count += b.active_rep_count;
                grads.add_assign(&g);
            }
            grads.scale(F::from_f64_lossy(1.0 / batch.len() as f64));
            model.optimizer_step(&grads)?;
        }
        let n = samples.len() as f64;
        epoch_sum.l_att /= n;
        epoch_sum.l_rep /= n;
        epoch_sum.l_total /= n;
        log.push(EpochLog {
            epoch,
            losses: epoch_sum,
        });
    }
    Ok(log)
}

pub fn write_loss_csv(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "epoch,l_att,l_rep,l_total,active_att_count,active_rep_count")?;
    for e in log {
        let l = &e.losses;
        writeln!(
            out,
            "{},{:e},{:e},{:e},{},{}",
            e.epoch, l.l_att, l.l_rep, l.l_total, l.active_att_count, l.active_rep_count
        )?;
    }
    std::fs::write(path, out).map_err(|e| CfaError::io(path, e))
}
