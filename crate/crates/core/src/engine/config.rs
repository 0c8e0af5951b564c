use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{CriticConfig, NetConfig, UNetConfig};

/// Which networks take part in training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Denoiser, generator and critic trained jointly.
    #[serde(rename = "DANet")]
    DANet,
    /// Denoiser and critic only.
    #[serde(rename = "BaseD")]
    BaseD,
    /// Generator and critic only.
    #[serde(rename = "BaseG")]
    BaseG,
    /// Joint training followed by L1 retraining of a fresh denoiser on
    /// generator-augmented data.
    #[serde(rename = "PlusRetrain")]
    PlusRetrain,
}

impl Mode {
    pub fn has_denoiser(self) -> bool {
        !matches!(self, Mode::BaseG)
    }

    pub fn has_generator(self) -> bool {
        !matches!(self, Mode::BaseD)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::DANet => "DANet",
            Mode::BaseD => "BaseD",
            Mode::BaseG => "BaseG",
            Mode::PlusRetrain => "PlusRetrain",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "DANet" | "danet" => Ok(Mode::DANet),
            "BaseD" | "based" => Ok(Mode::BaseD),
            "BaseG" | "baseg" => Ok(Mode::BaseG),
            "PlusRetrain" | "plusretrain" | "plus" => Ok(Mode::PlusRetrain),
            other => Err(Error::InvalidParameter(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        AdamConfig {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
        }
    }
}

/// Network sizes. The defaults are the desk-scale architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub image_channels: usize,
    pub unet_depth: usize,
    pub unet_base_channels: usize,
    pub latent_channels: usize,
    pub critic_base_channels: usize,
    pub slope: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            image_channels: 1,
            unet_depth: 3,
            unet_base_channels: 32,
            latent_channels: 1,
            critic_base_channels: 32,
            slope: 0.2,
        }
    }
}

impl ArchConfig {
    pub fn denoiser(&self) -> NetConfig {
        let mut c = UNetConfig::denoiser(self.image_channels).with_size(self.unet_depth, self.unet_base_channels);
        c.slope = self.slope;
        NetConfig::Unet(c)
    }

    pub fn generator(&self) -> NetConfig {
        let mut c = UNetConfig::generator(self.image_channels, self.latent_channels)
            .with_size(self.unet_depth, self.unet_base_channels);
        c.slope = self.slope;
        NetConfig::Unet(c)
    }

    /// Critic for square `patch`×`patch` pairs.
    pub fn critic(&self, patch: usize) -> NetConfig {
        let mut c = CriticConfig::new(self.image_channels, patch, patch).with_base_channels(self.critic_base_channels);
        c.slope = self.slope;
        NetConfig::Critic(c)
    }
}

/// Hyper-parameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub alpha: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub n_critic: usize,
    pub gp_lambda: f64,
    pub adam_r: AdamConfig,
    pub adam_g: AdamConfig,
    pub adam_d: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    /// Patches drawn per epoch; an outer iteration consumes `n_critic + 1` batches.
    pub patches_per_epoch: usize,
    /// Learning rates halve every this many epochs.
    pub lr_period: usize,
    /// Gaussian filter of the noise-statistics loss.
    pub stat_filter_size: usize,
    pub stat_filter_sigma: f64,
    /// Random flips/rotations applied identically to both members of a pair.
    pub augment: bool,
    /// Synthetic:real pair ratio for the retraining stage of `PlusRetrain`.
    pub plus_ratio: f64,
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::DANet,
            alpha: 0.5,
            tau1: 1000.0,
            tau2: 10.0,
            n_critic: 3,
            gp_lambda: 10.0,
            adam_r: AdamConfig::new(1e-4, 0.9, 0.999),
            adam_g: AdamConfig::new(1e-4, 0.5, 0.9),
            adam_d: AdamConfig::new(2e-4, 0.5, 0.9),
            epochs: 10,
            batch_size: 16,
            patch_size: 32,
            patches_per_epoch: 200,
            lr_period: 10,
            stat_filter_size: 5,
            stat_filter_sigma: 2.0,
            augment: true,
            plus_ratio: 1.0,
            arch: ArchConfig::default(),
        }
    }
}

impl TrainConfig {
    /// All violated constraints, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                out.push(msg);
            }
        };
        check((0.0..=1.0).contains(&self.alpha), format!("alpha must be in [0,1], got {}", self.alpha));
        check(self.tau1 >= 0.0, format!("tau1 must be >= 0, got {}", self.tau1));
        check(self.tau2 >= 0.0, format!("tau2 must be >= 0, got {}", self.tau2));
        check(self.gp_lambda >= 0.0, format!("gp_lambda must be >= 0, got {}", self.gp_lambda));
        check(self.n_critic >= 1, "n_critic must be >= 1".into());
        check(self.batch_size >= 1, "batch_size must be >= 1".into());
        check(self.lr_period >= 1, "lr_period must be >= 1".into());
        check(self.plus_ratio >= 0.0, format!("plus_ratio must be >= 0, got {}", self.plus_ratio));
        check(
            self.stat_filter_size % 2 == 1,
            format!("stat_filter_size must be odd, got {}", self.stat_filter_size),
        );
        check(self.stat_filter_sigma > 0.0, "stat_filter_sigma must be > 0".into());
        for (name, a) in [("adam_r", &self.adam_r), ("adam_g", &self.adam_g), ("adam_d", &self.adam_d)] {
            check(a.lr > 0.0, format!("{name}.lr must be > 0"));
            check((0.0..1.0).contains(&a.beta1), format!("{name}.beta1 must be in [0,1)"));
            check((0.0..1.0).contains(&a.beta2), format!("{name}.beta2 must be in [0,1)"));
        }
        let m = 1usize << self.arch.unet_depth;
        check(
            self.patch_size % m == 0 && self.patch_size > 0,
            format!("patch_size {} must be a positive multiple of 2^unet_depth = {m}", self.patch_size),
        );
        check(
            self.patch_size >= 32,
            format!("patch_size {} is below the critic's 32-pixel minimum", self.patch_size),
        );
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(p.join("; ")))
        }
    }

    /// Outer iterations (critic rounds followed by one denoiser/generator update) per epoch.
    pub fn iterations_per_epoch(&self) -> usize {
        (self.patches_per_epoch / (self.batch_size * (self.n_critic + 1))).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!((c.tau1, c.tau2, c.alpha, c.n_critic, c.gp_lambda), (1000.0, 10.0, 0.5, 3, 10.0));
        assert_eq!((c.adam_r.lr, c.adam_g.lr, c.adam_d.lr), (1e-4, 1e-4, 2e-4));
        assert_eq!((c.adam_r.beta1, c.adam_r.beta2), (0.9, 0.999));
        assert_eq!((c.adam_g.beta1, c.adam_g.beta2), (0.5, 0.9));
        assert_eq!((c.adam_d.beta1, c.adam_d.beta2), (0.5, 0.9));
        assert_eq!(c.lr_period, 10);
    }

    #[test]
    fn every_problem_is_listed() {
        let c = TrainConfig {
            alpha: 1.5,
            n_critic: 0,
            tau1: -1.0,
            ..TrainConfig::default()
        };
        let p = c.problems();
        assert_eq!(p.len(), 3, "{p:?}");
        assert!(c.validate().unwrap_err().to_string().contains("alpha"));
    }

    #[test]
    fn mode_parsing_and_serde() {
        assert_eq!("BaseD".parse::<Mode>().unwrap(), Mode::BaseD);
        assert!("nope".parse::<Mode>().is_err());
        assert_eq!(serde_json::to_string(&Mode::PlusRetrain).unwrap(), "\"PlusRetrain\"");
        let c: TrainConfig = serde_json::from_str(r#"{"mode":"BaseG","epochs":3}"#).unwrap();
        assert_eq!((c.mode, c.epochs, c.tau1), (Mode::BaseG, 3, 1000.0));
    }
}
