use serde::{Deserialize, Serialize};

use super::{conv, Bound, NetConfig, NetworkParams, ParamSpec, Role};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tape, Tensor, Var};

/// Pair critic: strided 4×4 convolutions over the channel-concatenated
/// (clean, noisy) pair, then one fully connected layer to an unbounded score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticConfig {
    pub image_channels: usize,
    pub height: usize,
    pub width: usize,
    pub base_channels: usize,
    pub stages: usize,
    pub slope: f64,
}

impl CriticConfig {
    pub fn new(image_channels: usize, height: usize, width: usize) -> Self {
        CriticConfig {
            image_channels,
            height,
            width,
            base_channels: 32,
            stages: 5,
            slope: 0.2,
        }
    }

    pub fn with_base_channels(mut self, base: usize) -> Self {
        self.base_channels = base;
        self
    }

    fn channels(&self, stage: usize) -> usize {
        self.base_channels << stage
    }

    /// Spatial extents after the strided stages.
    fn reduced(&self) -> (usize, usize) {
        let step = |v: usize| (v + 2).saturating_sub(4) / 2 + 1;
        (0..self.stages).fold((self.height, self.width), |(h, w), _| (step(h), step(w)))
    }

    pub fn manifest(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        let mut c_in = 2 * self.image_channels;
        for i in 0..self.stages {
            out.extend(ParamSpec::conv(&format!("conv{i}"), self.channels(i), c_in, 4));
            c_in = self.channels(i);
        }
        let (h, w) = self.reduced();
        out.extend(ParamSpec::conv_rect("fc", 1, c_in, h, w));
        out
    }

    fn check_input(&self, s: Shape) -> Result<()> {
        let min = 1usize << self.stages;
        if s.h() < min || s.w() < min {
            return Err(Error::InvalidShape {
                op: "critic",
                detail: format!("pair {s} is smaller than the {min}x{min} minimum of {} strided stages", self.stages),
            });
        }
        if (s.c(), s.h(), s.w()) != (2 * self.image_channels, self.height, self.width) {
            return Err(Error::InvalidShape {
                op: "critic",
                detail: format!(
                    "pair {s} does not match configured {}x{}x{}",
                    2 * self.image_channels,
                    self.height,
                    self.width
                ),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Critic<'a> {
    params: &'a NetworkParams,
    config: &'a CriticConfig,
}

impl<'a> Critic<'a> {
    pub fn new(params: &'a NetworkParams) -> Result<Self> {
        params.expect_role(Role::Discriminator)?;
        match &params.config {
            NetConfig::Critic(config) => Ok(Critic { params, config }),
            other => Err(Error::Format(format!("critic needs a critic config, got {other:?}"))),
        }
    }

    pub fn config(&self) -> &CriticConfig {
        self.config
    }

    /// Score of an already concatenated pair (`N×2C×H×W`), shape `N×1×1×1`.
    pub fn forward_joint<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, pair: Var) -> Result<Var> {
        self.config.check_input(tape.shape(pair))?;
        let mut h = pair;
        for i in 0..self.config.stages {
            h = conv(tape, p, &format!("conv{i}"), h, 2, 1)?;
            h = tape.leaky_relu(h, self.config.slope);
        }
        conv(tape, p, "fc", h, 1, 0)
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var, y: Var) -> Result<Var> {
        if tape.shape(x) != tape.shape(y) {
            return Err(Error::shape("critic pair", tape.shape(x), tape.shape(y)));
        }
        let pair = tape.concat(x, y)?;
        self.forward_joint(tape, p, pair)
    }

    pub fn score(&self, x: &Tensor<f32>, y: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let (xv, yv) = (tape.constant(x.clone()), tape.constant(y.clone()));
        let s = self.forward(&mut tape, &p, xv, yv)?;
        Ok(tape.value(s).clone())
    }
}
