use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentConfig};
use super::optim::{Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::sst::{check_delta, loss_terms_on_tape, LossWeights};
use crate::tensor::{Real, Tape, Tensor};
use crate::vit::{extract_patches, Artran, SST_THETA};

/// How the adjustment coefficient is drawn for each training sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DeltaSampling {
    /// Independent δ ~ U[−1, 1] per sample.
    Uniform,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub loss_weights: LossWeights,
    pub delta_sampling: DeltaSampling,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            optimizer: AdamConfig::default(),
            seed: 0,
            augment: AugmentConfig::default(),
            loss_weights: LossWeights::default(),
            delta_sampling: DeltaSampling::Uniform,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.optimizer.learning_rate >= 0.0) {
            return Err(Error::Config("learning_rate must be non-negative".into()));
        }
        if let DeltaSampling::Fixed(d) = self.delta_sampling {
            check_delta(d)?;
        }
        Ok(())
    }
}

/// A frame with the SE measurement its labels derive from.
#[derive(Clone, Copy, Debug)]
pub struct LabeledFrame<'a> {
    pub image: &'a Image,
    pub se_d: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub benchmark: f64,
    pub adjusted: f64,
    pub volume: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub loss_trace: Vec<f64>,
    pub epochs_completed: usize,
}

pub struct Trainer<T> {
    model: Artran<T>,
    optimizer: Adam<T>,
    config: TrainConfig,
    rng: ChaCha8Rng,
    steps: usize,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: Artran<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = Adam::new(config.optimizer, model.params());
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7261_696e_5f72_6e67);
        Ok(Self {
            model,
            optimizer,
            config,
            rng,
            steps: 0,
        })
    }

    pub fn model(&self) -> &Artran<T> {
        &self.model
    }

    pub fn into_model(self) -> Artran<T> {
        self.model
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn sample_delta(&mut self) -> f64 {
        match self.config.delta_sampling {
            DeltaSampling::Uniform => self.rng.random_range(-1.0..=1.0),
            DeltaSampling::Fixed(d) => d,
        }
    }

    /// Mean loss over the batch and its gradients, without updating anything.
    pub fn loss_and_grads(
        &mut self,
        batch: &[LabeledFrame<'_>],
    ) -> Result<(StepOutcome, Vec<Tensor<T>>)> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let geometry = self.model.config().geometry;
        let use_sst = self.model.config().use_sst;
        let weights = self.config.loss_weights;
        let mut grads: Vec<Tensor<T>> = self
            .model
            .params()
            .values()
            .iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        let mut outcome = StepOutcome {
            loss: 0.0,
            benchmark: 0.0,
            adjusted: 0.0,
            volume: 0.0,
        };

        for frame in batch {
            let delta = self.sample_delta();
            let image = augment(frame.image, &self.config.augment, &mut self.rng);
            let patches = extract_patches::<T>(&image, &geometry)?;
            let tape = Tape::new();
            let bound = self.model.bind(&tape, true);
            let probs = self.model.forward_on_tape(&bound, &patches, delta)?;
            let bench = probs.slice(0, 0, 1)?.reshape(&[2])?;
            let adj = probs.slice(0, 1, 1)?.reshape(&[2])?;
            let theta = if use_sst { Some(bound.get(SST_THETA)?) } else { None };
            let terms = loss_terms_on_tape(bench, adj, delta, frame.se_d, theta)?;
            let loss = terms.total(&weights)?;

            let value = |v: Option<crate::tensor::Var<'_, T>>| {
                v.and_then(|v| v.item()).map_or(0.0, |x| x.to_f64())
            };
            outcome.loss += value(Some(loss));
            outcome.benchmark += value(Some(terms.benchmark));
            outcome.adjusted += value(Some(terms.adjusted));
            outcome.volume += value(terms.volume);

            let mut g = tape.backward(loss)?;
            for (acc, var) in grads.iter_mut().zip(bound.vars()) {
                let gi = g.take(*var).expect("parameter leaf gradient");
                acc.data_mut()
                    .iter_mut()
                    .zip(gi.data())
                    .for_each(|(a, &b)| *a += b);
            }
        }

        let n = batch.len() as f64;
        let inv = T::from_f64(1.0 / n);
        for g in &mut grads {
            g.data_mut().iter_mut().for_each(|v| *v *= inv);
        }
        outcome.loss /= n;
        outcome.benchmark /= n;
        outcome.adjusted /= n;
        outcome.volume /= n;
        Ok((outcome, grads))
    }

    /// One optimizer step on the mean batch loss.
    pub fn train_step(&mut self, batch: &[LabeledFrame<'_>]) -> Result<StepOutcome> {
        let (outcome, grads) = self.loss_and_grads(batch)?;
        let grads_finite = grads.iter().all(Tensor::all_finite);
        if !outcome.loss.is_finite() || !grads_finite {
            return Err(Error::NonFiniteLoss {
                step: self.steps,
                terms: format!(
                    "benchmark={} adjusted={} volume={} finite_grads={grads_finite}",
                    outcome.benchmark, outcome.adjusted, outcome.volume
                ),
            });
        }
        self.optimizer.step(self.model.params_mut(), &grads);
        self.steps += 1;
        Ok(outcome)
    }

    /// Shuffled mini-batch epochs; `on_step` sees every step's outcome.
    pub fn fit(
        &mut self,
        frames: &[LabeledFrame<'_>],
        mut on_step: impl FnMut(usize, &StepOutcome),
    ) -> Result<TrainReport> {
        if frames.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut report = TrainReport::default();
        let mut order: Vec<usize> = (0..frames.len()).collect();
        'epochs: for _ in 0..self.config.epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(self.config.batch_size) {
                if self.config.max_steps.is_some_and(|m| self.steps >= m) {
                    break 'epochs;
                }
                let batch: Vec<LabeledFrame<'_>> = chunk.iter().map(|&i| frames[i]).collect();
                let outcome = self.train_step(&batch)?;
                on_step(self.steps, &outcome);
                report.loss_trace.push(outcome.loss);
            }
            report.epochs_completed += 1;
        }
        Ok(report)
    }
}
