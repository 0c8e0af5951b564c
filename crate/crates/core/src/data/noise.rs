use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Generator;
use crate::tensor::{Rng, Tensor};

/// Parametric noise with a known law, on the `[0, 1]` intensity scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    /// `n ~ N(0, sigma²)` everywhere.
    Gaussian { sigma: f64 },
    /// `n ~ N(0, sigma1²·x + sigma2²)`, heteroscedastic in the clean intensity.
    SignalDependent { sigma1: f64, sigma2: f64 },
    /// Vertical stripes of width `stripe_width` cycling through `sigmas`.
    Stripes { sigmas: Vec<f64>, stripe_width: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    #[serde(flatten)]
    pub kind: NoiseKind,
    /// Clip noisy output to `[0, 1]`. Off by default: clipping changes the noise law.
    #[serde(default)]
    pub clip: bool,
}

impl NoiseModel {
    pub fn gaussian(sigma: f64) -> Self {
        NoiseModel {
            kind: NoiseKind::Gaussian { sigma },
            clip: false,
        }
    }

    pub fn signal_dependent(sigma1: f64, sigma2: f64) -> Self {
        NoiseModel {
            kind: NoiseKind::SignalDependent { sigma1, sigma2 },
            clip: false,
        }
    }

    pub fn stripes(sigmas: Vec<f64>, stripe_width: usize) -> Self {
        NoiseModel {
            kind: NoiseKind::Stripes { sigmas, stripe_width },
            clip: false,
        }
    }

    pub fn with_clip(mut self, clip: bool) -> Self {
        self.clip = clip;
        self
    }

    /// Same family with every variance multiplied by `factor`.
    pub fn scale_variance(&self, factor: f64) -> Self {
        let s = factor.sqrt();
        let kind = match &self.kind {
            NoiseKind::Gaussian { sigma } => NoiseKind::Gaussian { sigma: sigma * s },
            NoiseKind::SignalDependent { sigma1, sigma2 } => NoiseKind::SignalDependent {
                sigma1: sigma1 * s,
                sigma2: sigma2 * s,
            },
            NoiseKind::Stripes { sigmas, stripe_width } => NoiseKind::Stripes {
                sigmas: sigmas.iter().map(|v| v * s).collect(),
                stripe_width: *stripe_width,
            },
        };
        NoiseModel { kind, clip: self.clip }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("noise model: {what}")));
        match &self.kind {
            NoiseKind::Gaussian { sigma } if !(*sigma >= 0.0 && sigma.is_finite()) => bad("sigma must be >= 0"),
            NoiseKind::SignalDependent { sigma1, sigma2 }
                if !(*sigma1 >= 0.0 && *sigma2 >= 0.0 && sigma1.is_finite() && sigma2.is_finite()) =>
            {
                bad("sigma1 and sigma2 must be >= 0")
            }
            NoiseKind::Stripes { sigmas, stripe_width } => {
                if sigmas.is_empty() || *stripe_width == 0 {
                    bad("stripes need at least one sigma and a positive width")
                } else if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
                    bad("stripe sigmas must be >= 0")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Noise variance at clean intensity `x`, column `col`.
    pub fn variance(&self, x: f64, col: usize) -> f64 {
        match &self.kind {
            NoiseKind::Gaussian { sigma } => sigma * sigma,
            NoiseKind::SignalDependent { sigma1, sigma2 } => sigma1 * sigma1 * x.max(0.0) + sigma2 * sigma2,
            NoiseKind::Stripes { sigmas, stripe_width } => {
                let s = sigmas[(col / stripe_width) % sigmas.len()];
                s * s
            }
        }
    }
}

/// `y = x + n` with `n` drawn from `model`.
pub fn synth_noisy(x: &Tensor<f32>, model: &NoiseModel, rng: &mut Rng) -> Result<Tensor<f32>> {
    model.validate()?;
    let w = x.shape().w();
    let mut y = x.clone();
    for (i, v) in y.data_mut().iter_mut().enumerate() {
        let sd = model.variance(*v as f64, i % w).sqrt();
        let z: f64 = StandardNormal.sample(rng);
        let mut out = *v as f64 + sd * z;
        if model.clip {
            out = out.clamp(0.0, 1.0);
        }
        *v = out as f32;
    }
    Ok(y)
}

/// Anything that turns clean images into noisy samples: a trained
/// generator, a known noise law, or a fixed replay of real data.
pub trait NoiseSampler {
    fn sample(&self, clean: &Tensor<f32>, rng: &mut Rng) -> Result<Tensor<f32>>;
}

impl NoiseSampler for NoiseModel {
    fn sample(&self, clean: &Tensor<f32>, rng: &mut Rng) -> Result<Tensor<f32>> {
        synth_noisy(clean, self, rng)
    }
}

impl NoiseSampler for Generator<'_> {
    fn sample(&self, clean: &Tensor<f32>, rng: &mut Rng) -> Result<Tensor<f32>> {
        Generator::sample(self, clean, rng)
    }
}

/// Returns the same noisy image for every request.
#[derive(Clone, Debug)]
pub struct FixedSampler(pub Tensor<f32>);

impl NoiseSampler for FixedSampler {
    fn sample(&self, clean: &Tensor<f32>, _rng: &mut Rng) -> Result<Tensor<f32>> {
        if clean.shape() != self.0.shape() {
            return Err(Error::shape("fixed sampler", clean.shape(), self.0.shape()));
        }
        Ok(self.0.clone())
    }
}
