//! Average KL divergence between pixel-wise Gaussian noise models of
//! generated and real noisy images.

use serde::{Deserialize, Serialize};

use crate::data::NoiseSampler;
use crate::error::{Error, Result};
use crate::tensor::kernels::GaussianFilter;
use crate::tensor::{Rng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AkldConfig {
    /// Fake draws per image.
    pub samples: usize,
    pub kernel_size: usize,
    pub sigma: f64,
    /// Lower bound of every variance estimate.
    pub floor: f64,
}

impl Default for AkldConfig {
    fn default() -> Self {
        AkldConfig {
            samples: 50,
            kernel_size: 11,
            sigma: 3.0,
            floor: 1e-6,
        }
    }
}

impl AkldConfig {
    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    pub fn filter(&self) -> Result<GaussianFilter> {
        GaussianFilter::new(self.kernel_size, self.sigma)
    }
}

/// `max(GF((y − x)²), floor)`, per pixel and channel.
pub fn variance_map(y: &Tensor<f32>, x: &Tensor<f32>, filter: &GaussianFilter, floor: f64) -> Result<Tensor<f64>> {
    if y.shape() != x.shape() {
        return Err(Error::shape("variance_map", y.shape(), x.shape()));
    }
    let sq: Tensor<f64> = Tensor::from_fn(y.shape(), |i| {
        let d = y.at(i) as f64 - x.at(i) as f64;
        d * d
    });
    Ok(filter.apply(&sq).map(|v| v.max(floor)))
}

/// Mean over pixels of `½(r − ln r − 1)` with `r = V_f / V_r`: the KL
/// divergence between zero-mean Gaussians of those variances.
pub fn kl_from_maps(v_fake: &Tensor<f64>, v_real: &Tensor<f64>) -> Result<f64> {
    if v_fake.shape() != v_real.shape() {
        return Err(Error::shape("kl", v_fake.shape(), v_real.shape()));
    }
    let total: f64 = v_fake
        .data()
        .iter()
        .zip(v_real.data())
        .map(|(f, r)| {
            let q = f / r;
            0.5 * (q - q.ln() - 1.0)
        })
        .sum();
    Ok((total / v_fake.len() as f64).max(0.0))
}

/// AKLD of `sampler` against one real pair `(x, y)`; batches are scored item by item and averaged.
pub fn akld(sampler: &dyn NoiseSampler, x: &Tensor<f32>, y: &Tensor<f32>, cfg: &AkldConfig, rng: &mut Rng) -> Result<f64> {
    if cfg.samples < 1 {
        return Err(Error::InvalidParameter("akld needs at least one sample".into()));
    }
    if x.shape() != y.shape() {
        return Err(Error::shape("akld", x.shape(), y.shape()));
    }
    let filter = cfg.filter()?;
    let v_real = variance_map(y, x, &filter, cfg.floor)?;
    let mut total = 0.0;
    for _ in 0..cfg.samples {
        let fake = sampler.sample(x, rng)?;
        let v_fake = variance_map(&fake, x, &filter, cfg.floor)?;
        total += kl_from_maps(&v_fake, &v_real)?;
    }
    Ok(total / cfg.samples as f64)
}

/// `x + √r·(y − x)`: a sampler whose variance map is exactly `r` times the real one.
#[derive(Clone, Debug)]
pub struct ScaledResidualSampler {
    pub noisy: Tensor<f32>,
    pub ratio: f64,
}

impl NoiseSampler for ScaledResidualSampler {
    fn sample(&self, clean: &Tensor<f32>, _rng: &mut Rng) -> Result<Tensor<f32>> {
        let s = self.ratio.sqrt();
        clean.zip_map(&self.noisy, "scaled residual", |x, y| (x as f64 + s * (y - x) as f64) as f32)
    }
}

/// `½(r − ln r − 1)`.
pub fn kl_ratio_closed_form(r: f64) -> f64 {
    0.5 * (r - r.ln() - 1.0)
}
