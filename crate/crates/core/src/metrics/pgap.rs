use crate::data::{make_pgap_dataset, ImagePairSet, NoiseSampler};
use crate::engine::{train_l1_denoiser, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{Denoiser, NetworkParams};
use crate::tensor::stream_rng;

use super::quality::mean_psnr;

/// Mean clamped-output PSNR of `denoiser` over the records of `test`.
pub fn denoiser_psnr(denoiser: &NetworkParams, test: &ImagePairSet) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidParameter("test set is empty".into()));
    }
    let r = Denoiser::new(denoiser)?;
    let mut total = 0.0;
    for rec in test.records() {
        total += mean_psnr(&r.denoise(&rec.noisy)?, &rec.clean, 1.0)?;
    }
    Ok(total / test.len() as f64)
}

/// Outcome of one PSNR-gap measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct PgapResult {
    /// PSNR of the denoiser trained on the first set.
    pub psnr_real: f64,
    /// PSNR of the denoiser trained on the second set.
    pub psnr_synthetic: f64,
}

impl PgapResult {
    pub fn gap(&self) -> f64 {
        self.psnr_real - self.psnr_synthetic
    }
}

/// Train one denoiser per set with the same recipe and seed, and compare them on `test`.
pub fn pgap_from_sets(
    real: &ImagePairSet,
    synthetic: &ImagePairSet,
    test: &ImagePairSet,
    recipe: &TrainConfig,
    seed: u64,
) -> Result<PgapResult> {
    let r1 = train_l1_denoiser(real, recipe, seed)?;
    let r2 = train_l1_denoiser(synthetic, recipe, seed)?;
    Ok(PgapResult {
        psnr_real: denoiser_psnr(&r1, test)?,
        psnr_synthetic: denoiser_psnr(&r2, test)?,
    })
}

/// PSNR gap of `generator`: a denoiser trained on `trainset` against one
/// trained on `{(x, generator(x))}` over the same clean images.
pub fn pgap(
    trainset: &ImagePairSet,
    testset: &ImagePairSet,
    generator: &dyn NoiseSampler,
    recipe: &TrainConfig,
    seed: u64,
) -> Result<PgapResult> {
    if trainset.is_empty() || testset.is_empty() {
        return Err(Error::InvalidParameter("pgap needs non-empty train and test sets".into()));
    }
    let synthetic = make_pgap_dataset(&trainset.clean_images(), generator, &mut stream_rng(seed, 7))?;
    pgap_from_sets(trainset, &synthetic, testset, recipe, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{procedural_pairs, NoiseModel};
    use crate::engine::ArchConfig;
    use crate::tensor::seeded_rng;

    #[test]
    fn swapping_sets_negates_the_gap() {
        let recipe = TrainConfig {
            epochs: 1,
            batch_size: 2,
            patches_per_epoch: 6,
            arch: ArchConfig {
                unet_depth: 2,
                unet_base_channels: 2,
                ..ArchConfig::default()
            },
            ..TrainConfig::default()
        };
        let a = procedural_pairs(2, 32, 1, &NoiseModel::gaussian(0.1), &mut seeded_rng(1)).unwrap();
        let b = procedural_pairs(2, 32, 1, &NoiseModel::gaussian(0.2), &mut seeded_rng(2)).unwrap();
        let test = procedural_pairs(2, 32, 1, &NoiseModel::gaussian(0.1), &mut seeded_rng(3)).unwrap();
        let ab = pgap_from_sets(&a, &b, &test, &recipe, 9).unwrap().gap();
        let ba = pgap_from_sets(&b, &a, &test, &recipe, 9).unwrap().gap();
        assert_eq!(ab, -ba);
        assert!(pgap(&ImagePairSet::default(), &test, &NoiseModel::gaussian(0.1), &recipe, 1).is_err());
    }
}
