use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::LabeledDataset;
use crate::error::{invalid, Result};
use crate::nn::{Classifier, Matrix};

/// Re-estimates every batch-norm layer's population statistics on target
/// batches with `{μ, σ²} ← λ·{μ, σ²} + (1−λ)·{μ, σ²}_batch`, starting from the
/// statistics already stored in the model. Trainable parameters are untouched.
///
/// Batch statistics at each layer come from a Train-mode pass, so a layer sees
/// inputs normalized by the batch statistics of the layers before it.
pub fn adabn_update_batches<'a, I>(model: &mut Classifier, batches: I, lambda: f64) -> Result<usize>
where
    I: IntoIterator<Item = &'a Matrix>,
{
    if !(0.0..1.0).contains(&lambda) {
        return Err(invalid(format!("AdaBN momentum {lambda} outside [0, 1)")));
    }
    if !model.has_batch_norm() {
        log::warn!("model has no batch-norm layers; AdaBN is a no-op");
        return Ok(0);
    }
    let mut count = 0;
    for batch in batches {
        model.forward_train(batch, 1.0 - lambda)?;
        count += 1;
    }
    Ok(count)
}

/// One shuffled pass over `target` in batches of `batch_size` (clamped to the
/// dataset size), folding each batch into the population statistics.
pub fn adabn_update<R: Rng + ?Sized>(
    model: &mut Classifier,
    target: &LabeledDataset,
    lambda: f64,
    batch_size: usize,
    rng: &mut R,
) -> Result<usize> {
    if batch_size == 0 {
        return Err(invalid("AdaBN batch size must be positive"));
    }
    let batch_size = batch_size.min(target.len());
    let mut order: Vec<usize> = (0..target.len()).collect();
    order.shuffle(rng);
    let batches: Vec<Matrix> = order
        .chunks(batch_size)
        .map(|idx| target.features().select_rows(idx))
        .collect();
    adabn_update_batches(model, &batches, lambda)
}
