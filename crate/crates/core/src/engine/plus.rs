//! Supervised L1 training of a denoiser, and its use for retraining on
//! generator-augmented data.

use super::adam::adam_step;
use super::config::TrainConfig;
use super::losses::{checked, denoiser_l1};
use super::schedule::lr_schedule;
use super::train::{init_denoiser, streams};
use crate::data::{augment_with_generator, ImagePairSet, NoiseSampler, PatchSampler};
use crate::error::{Error, Result};
use crate::nn::{Denoiser, NetworkParams};
use crate::tensor::{stream_rng, Tape, Tensor};

/// Denoiser updates per epoch under L1 training: one batch each.
pub fn l1_iterations_per_epoch(cfg: &TrainConfig) -> usize {
    (cfg.patches_per_epoch / cfg.batch_size).max(1)
}

/// Train a fresh denoiser on `data` with the mean-absolute-error loss only.
///
/// Uses `cfg.adam_r`, the step-wise learning-rate schedule, `cfg.epochs`
/// and the patch settings. Initialization and patch order are functions
/// of `seed` alone.
pub fn train_l1_denoiser(data: &ImagePairSet, cfg: &TrainConfig, seed: u64) -> Result<NetworkParams> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidParameter("training set is empty".into()));
    }
    let mut r = init_denoiser(cfg, seed)?;
    let mut sampler = PatchSampler::new(stream_rng(seed, streams::PATCHES), cfg.augment);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg.adam_r.lr, cfg.lr_period);
        for _ in 0..l1_iterations_per_epoch(cfg) {
            let batch = sampler.next_batch(data, cfg.batch_size, cfg.patch_size)?;
            let grads = {
                let net = Denoiser::new(&r)?;
                let mut tape = Tape::<f32>::new();
                let p = r.bind(&mut tape, true);
                let x = tape.constant(batch.clean);
                let y = tape.constant(batch.noisy);
                let xhat = net.forward(&mut tape, &p, y)?;
                let loss = denoiser_l1(&mut tape, xhat, x)?;
                checked(&tape, loss, "loss_R", step)?;
                tape.gradients(loss, p.vars())?
            };
            adam_step(&mut r, &grads, &cfg.adam_r, lr)?;
            step += 1;
        }
    }
    Ok(r)
}

/// Fresh L1 denoiser on `data` plus `⌈plus_ratio·|data|⌉` pairs synthesized by
/// `generator` from `clean_pool`.
pub fn retrain_plus(
    generator: &dyn NoiseSampler,
    clean_pool: &[Tensor<f32>],
    data: &ImagePairSet,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<NetworkParams> {
    if clean_pool.is_empty() {
        return Err(Error::InvalidParameter("retraining needs a non-empty clean pool".into()));
    }
    let mut rng = stream_rng(seed, streams::AUGMENT);
    let set = augment_with_generator(data, clean_pool, generator, cfg.plus_ratio, &mut rng)?;
    train_l1_denoiser(&set, cfg, seed)
}
