use serde::{Deserialize, Serialize};

use super::{conv, Bound, NetworkParams, ParamSpec, Role};
use crate::error::{Error, Result};
use crate::tensor::{sample_normal, Real, Rng, Shape, Tape, Tensor, Var};

/// UNet backbone: `depth` pooling stages, channels doubling per stage, two
/// 3×3 conv + leaky-ReLU layers per stage, concatenated skips, nearest upsampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub slope: f64,
}

impl UNetConfig {
    pub fn denoiser(image_channels: usize) -> Self {
        UNetConfig {
            depth: 3,
            base_channels: 32,
            in_channels: image_channels,
            out_channels: image_channels,
            slope: 0.2,
        }
    }

    /// Generator backbone: image plus `latent_channels` latent planes in, image out.
    pub fn generator(image_channels: usize, latent_channels: usize) -> Self {
        UNetConfig {
            in_channels: image_channels + latent_channels,
            ..Self::denoiser(image_channels)
        }
    }

    pub fn with_size(mut self, depth: usize, base_channels: usize) -> Self {
        self.depth = depth;
        self.base_channels = base_channels;
        self
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn manifest(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        let mut c_in = self.in_channels;
        for i in 0..self.depth {
            let c = self.channels(i);
            out.extend(ParamSpec::conv(&format!("enc{i}.conv1"), c, c_in, 3));
            out.extend(ParamSpec::conv(&format!("enc{i}.conv2"), c, c, 3));
            c_in = c;
        }
        let c_mid = self.channels(self.depth);
        out.extend(ParamSpec::conv("mid.conv1", c_mid, c_in, 3));
        out.extend(ParamSpec::conv("mid.conv2", c_mid, c_mid, 3));
        for i in (0..self.depth).rev() {
            let c = self.channels(i);
            out.extend(ParamSpec::conv(&format!("dec{i}.conv1"), c, self.channels(i + 1) + c, 3));
            out.extend(ParamSpec::conv(&format!("dec{i}.conv2"), c, c, 3));
        }
        out.extend(ParamSpec::conv("out", self.out_channels, self.channels(0), 3));
        out
    }

    fn check_input(&self, s: Shape) -> Result<()> {
        if s.c() != self.in_channels {
            return Err(Error::InvalidShape {
                op: "unet",
                detail: format!("expected {} input channels, got {s}", self.in_channels),
            });
        }
        let m = 1usize << self.depth;
        if s.h() % m != 0 || s.w() % m != 0 || s.h() == 0 || s.w() == 0 {
            return Err(Error::InvalidShape {
                op: "unet",
                detail: format!("spatial extents of {s} must be divisible by 2^{} = {m}", self.depth),
            });
        }
        Ok(())
    }

    fn block<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
        let h = conv(tape, p, &format!("{prefix}.conv1"), x, 1, 1)?;
        let h = tape.leaky_relu(h, self.slope);
        let h = conv(tape, p, &format!("{prefix}.conv2"), h, 1, 1)?;
        Ok(tape.leaky_relu(h, self.slope))
    }

    /// The UNet body, without the residual connection.
    pub fn body<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        self.check_input(tape.shape(x))?;
        let mut skips = Vec::with_capacity(self.depth);
        let mut h = x;
        for i in 0..self.depth {
            h = self.block(tape, p, &format!("enc{i}"), h)?;
            skips.push(h);
            h = tape.avg_pool(h, 2)?;
        }
        h = self.block(tape, p, "mid", h)?;
        for i in (0..self.depth).rev() {
            h = tape.upsample_nearest(h, 2)?;
            h = tape.concat(h, skips[i])?;
            h = self.block(tape, p, &format!("dec{i}"), h)?;
        }
        conv(tape, p, "out", h, 1, 1)
    }
}

/// Noise-removal network: `x̂ = y − f(y)`.
#[derive(Clone, Debug)]
pub struct Denoiser<'a> {
    params: &'a NetworkParams,
    config: &'a UNetConfig,
}

impl<'a> Denoiser<'a> {
    pub fn new(params: &'a NetworkParams) -> Result<Self> {
        params.expect_role(Role::Denoiser)?;
        match &params.config {
            super::NetConfig::Unet(config) => Ok(Denoiser { params, config }),
            other => Err(Error::Format(format!("denoiser needs a unet config, got {other:?}"))),
        }
    }

    pub fn config(&self) -> &UNetConfig {
        self.config
    }

    /// Unclamped estimate, as used during training.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, y: Var) -> Result<Var> {
        let noise = self.config.body(tape, p, y)?;
        tape.sub(y, noise)
    }

    /// Untracked unclamped estimate.
    pub fn run(&self, y: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let yv = tape.constant(y.clone());
        let out = self.forward(&mut tape, &p, yv)?;
        Ok(tape.value(out).clone())
    }

    /// Evaluation-time estimate, clamped to `[0, 1]`.
    pub fn denoise(&self, y: &Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(self.run(y)?.clamp(0.0, 1.0))
    }
}

/// Noise-generation network: `ŷ = x + g(concat(x, z))`.
#[derive(Clone, Debug)]
pub struct Generator<'a> {
    params: &'a NetworkParams,
    config: &'a UNetConfig,
}

impl<'a> Generator<'a> {
    pub fn new(params: &'a NetworkParams) -> Result<Self> {
        params.expect_role(Role::Generator)?;
        match &params.config {
            super::NetConfig::Unet(config) if config.in_channels > config.out_channels => {
                Ok(Generator { params, config })
            }
            other => Err(Error::Format(format!(
                "generator needs a unet config with latent input channels, got {other:?}"
            ))),
        }
    }

    pub fn latent_channels(&self) -> usize {
        self.config.in_channels - self.config.out_channels
    }

    /// Latent shape matching clean batch shape `x`.
    pub fn latent_shape(&self, x: Shape) -> Shape {
        Shape::new(x.n(), self.latent_channels(), x.h(), x.w())
    }

    pub fn sample_latent(&self, x: Shape, rng: &mut Rng) -> Result<Tensor<f32>> {
        sample_normal(self.latent_shape(x), 0.0, 1.0, rng)
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var, z: Var) -> Result<Var> {
        let (xs, zs) = (tape.shape(x), tape.shape(z));
        if (xs.n(), xs.h(), xs.w()) != (zs.n(), zs.h(), zs.w()) || zs.c() != self.latent_channels() {
            return Err(Error::shape("generator latent", xs, zs));
        }
        let input = tape.concat(x, z)?;
        let noise = self.config.body(tape, p, input)?;
        tape.add(x, noise)
    }

    pub fn run(&self, x: &Tensor<f32>, z: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let zv = tape.constant(z.clone());
        let out = self.forward(&mut tape, &p, xv, zv)?;
        Ok(tape.value(out).clone())
    }

    /// One noisy sample per clean image, with a fresh latent.
    pub fn sample(&self, x: &Tensor<f32>, rng: &mut Rng) -> Result<Tensor<f32>> {
        let z = self.sample_latent(x.shape(), rng)?;
        self.run(x, &z)
    }
}
