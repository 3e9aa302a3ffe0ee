//! Mini-batch SGD training loop, bit-reproducible from a single seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Gradients, Mode, Network};
use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 16,
            epochs: 50,
            dropout_rate: 0.5,
            rng_seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidInput("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidInput("epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidInput("dropout_rate must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Trains `net` on labeled patches, returning the mean per-epoch loss
/// history. Shuffling and dropout derive solely from `cfg.rng_seed`;
/// within-batch gradients are computed in parallel but accumulated in a
/// fixed order, so runs are bit-reproducible.
pub fn train(
    net: &mut Network,
    patches: &[(Tensor, usize)],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if patches.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let k = net.num_classes();
    for (i, (_, label)) in patches.iter().enumerate() {
        if *label >= k {
            return Err(Error::InvalidInput(format!(
                "label {} of patch {} out of range for {} classes",
                label, i, k
            )));
        }
    }
    for class in 0..k {
        if !patches.iter().any(|(_, l)| *l == class) {
            return Err(Error::InvalidInput(format!("no example of class {class}")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut order: Vec<usize> = (0..patches.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    // Global sample counter; every sample gets its own dropout stream so the
    // parallel batch matches sequential execution exactly.
    let mut step = 0u64;
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let per_sample: Vec<(Gradients, f64)> = batch
                .par_iter()
                .enumerate()
                .map(|(j, &idx)| {
                    let seed = seeds::derive(cfg.rng_seed, step + j as u64);
                    let mut srng = ChaCha8Rng::seed_from_u64(seed);
                    let (tensor, label) = &patches[idx];
                    net.backward_with_mode(tensor, *label, Mode::Train { rng: &mut srng })
                })
                .collect::<Result<Vec<_>>>()?;
            step += batch.len() as u64;

            let mut iter = per_sample.into_iter();
            let (mut acc, first_loss) = iter.next().expect("non-empty batch");
            epoch_loss += first_loss;
            for (g, loss) in iter {
                acc.add_assign(&g)?;
                epoch_loss += loss;
            }
            acc.scale(1.0 / batch.len() as f64);
            net.sgd_step(&acc, cfg.learning_rate)?;
        }
        history.push(epoch_loss / patches.len() as f64);
    }
    Ok(history)
}
