//! Minibatch training with Adam, a held-out accuracy probe, and plateau
//! early stopping. Fully deterministic for a fixed seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{forward, grad_batch, TrainSample};
use super::params::{init_params, TensorMap};
use super::{ModelConfig, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Fraction of samples held out for the accuracy probe.
    pub holdout_frac: f64,
    /// Stop after this many epochs without a train-loss improvement.
    pub plateau_patience: usize,
    pub min_improvement: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            epochs: 15,
            batch_size: 16,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            holdout_frac: 0.1,
            plateau_patience: 4,
            min_improvement: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub epoch: usize,
    pub train_loss: f64,
    /// Fraction of held-out samples whose argmax lands within one patch
    /// width of the label; absent when there is no holdout split.
    pub holdout_argmax_acc: Option<f64>,
}

/// Everything needed to resume training exactly: parameters, Adam moments,
/// and progress counters. All tensors are kept at f32-representable values
/// at epoch boundaries so the checkpoint round-trip is lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: TensorMap,
    pub adam_m: TensorMap,
    pub adam_v: TensorMap,
    pub epochs_done: usize,
    pub steps_done: u64,
}

impl TrainState {
    pub fn fresh(config: &ModelConfig, seed: u64) -> Result<TrainState, ModelError> {
        let params = init_params(config, seed)?;
        let adam_m = params.zeros_like();
        let adam_v = params.zeros_like();
        Ok(TrainState { params, adam_m, adam_v, epochs_done: 0, steps_done: 0 })
    }
}

fn adam_step(
    state: &mut TrainState,
    grads: &TensorMap,
    hyper: &TrainHyper,
) -> Result<(), ModelError> {
    state.steps_done += 1;
    let t = state.steps_done as f64;
    let bc1 = 1.0 - hyper.beta1.powf(t);
    let bc2 = 1.0 - hyper.beta2.powf(t);
    let names: Vec<String> = state.params.names().cloned().collect();
    for name in &names {
        let g = &grads.get(name).data;
        let m = &mut state.adam_m.get_mut(name).data;
        for (mv, gv) in m.iter_mut().zip(g) {
            *mv = hyper.beta1 * *mv + (1.0 - hyper.beta1) * gv;
        }
        let v = &mut state.adam_v.get_mut(name).data;
        for (vv, gv) in v.iter_mut().zip(g) {
            *vv = hyper.beta2 * *vv + (1.0 - hyper.beta2) * gv * gv;
        }
        let m = &state.adam_m.get(name).data;
        let v = &state.adam_v.get(name).data;
        let p = &mut state.params.get_mut(name).data;
        for i in 0..p.len() {
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.adam_eps);
            if !p[i].is_finite() {
                return Err(ModelError::TrainingDiverged(format!("parameter {name} went non-finite")));
            }
        }
    }
    Ok(())
}

fn holdout_accuracy(
    state: &TrainState,
    config: &ModelConfig,
    samples: &[TrainSample],
    holdout: &[usize],
) -> Result<Option<f64>, ModelError> {
    if holdout.is_empty() {
        return Ok(None);
    }
    let mut hits = 0usize;
    for &i in holdout {
        let s = &samples[i];
        let heat = forward(&state.params, config, &s.image, &s.tokens)?;
        let (px, py) = heat.argmax();
        let dx = px as f64 - s.target.0 as f64;
        let dy = py as f64 - s.target.1 as f64;
        if (dx * dx + dy * dy).sqrt() <= config.patch_size as f64 {
            hits += 1;
        }
    }
    Ok(Some(hits as f64 / holdout.len() as f64))
}

/// Continues training from an existing state for `hyper.epochs` more
/// epochs. The holdout split depends only on the seed and sample count, so
/// a resumed run sees the same split as the run that produced the state.
pub fn train_from(
    mut state: TrainState,
    samples: &[TrainSample],
    config: &ModelConfig,
    hyper: &TrainHyper,
) -> Result<(TrainState, Vec<TrainLogEntry>), ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    config.validate()?;

    // Distinct salts keep the split and per-epoch shuffles on independent
    // streams of the same seed.
    const SPLIT_SALT: u64 = 0x5eed_0000_0000_0001;
    let mut indices: Vec<usize> = (0..samples.len()).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ SPLIT_SALT);
    indices.shuffle(&mut split_rng);
    let holdout_n = ((samples.len() as f64 * hyper.holdout_frac) as usize).min(samples.len() - 1);
    let (holdout, train): (Vec<usize>, Vec<usize>) = {
        let (h, t) = indices.split_at(holdout_n);
        (h.to_vec(), t.to_vec())
    };

    let mut log = Vec::with_capacity(hyper.epochs);
    let mut best_loss = f64::INFINITY;
    let mut stall = 0usize;

    for _ in 0..hyper.epochs {
        let epoch = state.epochs_done;
        const EPOCH_SALT: u64 = 0xe90c_0000_0000_0002;
        let mut order = train.clone();
        let mut epoch_rng = ChaCha8Rng::seed_from_u64(
            hyper.seed ^ EPOCH_SALT ^ (epoch as u64).wrapping_mul(0x9e3779b97f4a7c15),
        );
        order.shuffle(&mut epoch_rng);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(hyper.batch_size.max(1)) {
            let batch: Vec<TrainSample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let (loss, grads) = grad_batch(&state.params, config, &batch)?;
            adam_step(&mut state, &grads, hyper)?;
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;

        // Keep every tensor f32-representable at the epoch boundary so that
        // saving and resuming reproduces a continuous run bit for bit.
        state.params.quantize_f32();
        state.adam_m.quantize_f32();
        state.adam_v.quantize_f32();
        state.epochs_done += 1;

        let holdout_argmax_acc = holdout_accuracy(&state, config, samples, &holdout)?;
        log.push(TrainLogEntry { epoch: state.epochs_done, train_loss, holdout_argmax_acc });

        if train_loss < best_loss - hyper.min_improvement {
            best_loss = train_loss;
            stall = 0;
        } else {
            stall += 1;
            if stall >= hyper.plateau_patience {
                break;
            }
        }
    }
    Ok((state, log))
}

/// Trains from fresh parameters.
pub fn train(
    samples: &[TrainSample],
    config: &ModelConfig,
    hyper: &TrainHyper,
) -> Result<(TrainState, Vec<TrainLogEntry>), ModelError> {
    train_from(TrainState::fresh(config, hyper.seed)?, samples, config, hyper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tokenizer::Tokenizer;
    use crate::sim::DepthImage;
    use rand::{Rng, SeedableRng};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            image_size: 16,
            patch_size: 8,
            embed_dim: 8,
            layers: 1,
            heads: 2,
            mlp_hidden: 16,
            vocab_size: Tokenizer::from_grammar().vocab_size(),
            max_text_len: 12,
            decoder_stages: 3,
        }
    }

    fn toy_samples(n: usize) -> Vec<TrainSample> {
        let tok = Tokenizer::from_grammar();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        (0..n)
            .map(|i| {
                let image = DepthImage {
                    width: 16,
                    height: 16,
                    data: (0..256).map(|_| rng.random_range(0.8..1.0f32)).collect(),
                };
                let text = if i % 2 == 0 {
                    "Pick up the center of the square"
                } else {
                    "Fold it to the top edge"
                };
                TrainSample {
                    image,
                    tokens: tok.encode(text, 12),
                    target: if i % 2 == 0 { (8, 8) } else { (8, 1) },
                }
            })
            .collect()
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let cfg = tiny_config();
        assert!(matches!(
            train(&[], &cfg, &TrainHyper::default()),
            Err(ModelError::EmptyDataset)
        ));
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let cfg = tiny_config();
        let samples = toy_samples(12);
        let hyper = TrainHyper { epochs: 2, batch_size: 4, ..TrainHyper::default() };
        let (state_a, log_a) = train(&samples, &cfg, &hyper).unwrap();
        let (state_b, log_b) = train(&samples, &cfg, &hyper).unwrap();
        assert_eq!(log_a, log_b);
        assert_eq!(state_a, state_b);
    }

    #[test]
    fn single_sample_memorizes() {
        let cfg = tiny_config();
        let samples = toy_samples(1);
        let hyper = TrainHyper {
            epochs: 120,
            batch_size: 1,
            learning_rate: 3e-3,
            holdout_frac: 0.0,
            plateau_patience: 120,
            ..TrainHyper::default()
        };
        let (state, log) = train(&samples, &cfg, &hyper).unwrap();
        let final_loss = log.last().unwrap().train_loss;
        assert!(final_loss < 0.05, "memorization stalled at loss {final_loss}");
        let heat = forward(&state.params, &cfg, &samples[0].image, &samples[0].tokens).unwrap();
        assert_eq!(heat.argmax(), samples[0].target);
    }

    #[test]
    fn resume_reproduces_the_continuous_run() {
        let cfg = tiny_config();
        let samples = toy_samples(12);
        let two = TrainHyper { epochs: 2, batch_size: 4, plateau_patience: 99, ..TrainHyper::default() };
        let one = TrainHyper { epochs: 1, ..two.clone() };

        let (state_full, log_full) = train(&samples, &cfg, &two).unwrap();
        let (state_half, _) = train(&samples, &cfg, &one).unwrap();
        let (state_resumed, log_resumed) = train_from(state_half, &samples, &cfg, &one).unwrap();

        assert_eq!(state_resumed, state_full);
        assert_eq!(log_resumed.len(), 1);
        assert_eq!(log_resumed[0], log_full[1]);
    }

    #[test]
    fn plateau_stops_early() {
        let cfg = tiny_config();
        let samples = toy_samples(6);
        // A zero learning rate cannot improve, so training stops after the
        // patience window.
        let hyper = TrainHyper {
            epochs: 50,
            learning_rate: 0.0,
            plateau_patience: 3,
            ..TrainHyper::default()
        };
        let (_, log) = train(&samples, &cfg, &hyper).unwrap();
        // The first epoch counts as an improvement over +inf; the next
        // `patience` epochs stall.
        assert_eq!(log.len(), 4);
    }
}
