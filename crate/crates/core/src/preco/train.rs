use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PrecoError, PrecoModel, PrecoParams};
use crate::data::Episode;
use crate::diffcore::{clip_global_norm, Adam, AdamConfig, Tape};

/// Adam on the overshooting loss, one minibatch at a time.
pub struct Trainer {
    pub model: PrecoModel,
    pub params: PrecoParams,
    adam: Adam,
    rng: ChaCha8Rng,
    pub losses: Vec<f64>,
}

pub struct TrainOutcome {
    pub params: PrecoParams,
    pub losses: Vec<f64>,
}

impl Trainer {
    pub fn new(model: PrecoModel, params: PrecoParams, seed: u64) -> Result<Self, PrecoError> {
        model.check_params(&params)?;
        let adam = Adam::new(AdamConfig::with_lr(model.config.learning_rate));
        Ok(Self { model, params, adam, rng: ChaCha8Rng::seed_from_u64(seed), losses: Vec::new() })
    }

    /// Loss and clipped gradients of one batch, without updating.
    pub fn gradients(&self, batch: &[Episode<'_>]) -> Result<(f64, Vec<crate::diffcore::Array>), PrecoError> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape)?;
        let loss = self.model.overshoot_loss_tape(&mut tape, &p, batch, self.model.config.overshoot_length)?;
        let value = tape.value(loss).item();
        let mut g = tape.backward(loss)?;
        let grads = p.iter().zip(self.params.arrays()).map(|(&v, a)| g.take_or_zeros(v, a.shape())).collect();
        Ok((value, grads))
    }

    /// One update on `batch`; returns the pre-update loss.
    pub fn step(&mut self, batch: &[Episode<'_>]) -> Result<f64, PrecoError> {
        let (loss, mut grads) = self.gradients(batch)?;
        clip_global_norm(&mut grads, self.model.config.grad_clip);
        self.adam.step(self.params.arrays_mut(), &grads)?;
        self.losses.push(loss);
        Ok(loss)
    }

    /// Draws `batch_size` episodes uniformly with replacement.
    pub fn sample<'a>(&mut self, data: &[Episode<'a>]) -> Vec<Episode<'a>> {
        (0..self.model.config.batch_size).map(|_| data[self.rng.random_range(0..data.len())]).collect()
    }

    pub fn finish(self) -> TrainOutcome {
        TrainOutcome { params: self.params, losses: self.losses }
    }
}

/// Trains for `config.train_steps` minibatch updates.
pub fn train(model: &PrecoModel, params: PrecoParams, data: &[Episode<'_>], seed: u64) -> Result<TrainOutcome, PrecoError> {
    if data.is_empty() {
        return Err(PrecoError::EmptyDataset);
    }
    super::check_batch(data, model)?;
    let mut trainer = Trainer::new(model.clone(), params, seed)?;
    for _ in 0..model.config.train_steps {
        let batch = trainer.sample(data);
        trainer.step(&batch)?;
    }
    Ok(trainer.finish())
}
