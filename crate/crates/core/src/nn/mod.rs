//! The denoiser, the noise generator and the pair critic.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{sample_normal, Real, Rng, Shape, Tape, Tensor, Var};

mod checkpoint;
mod critic;
mod unet;

pub use critic::{Critic, CriticConfig};
pub use unet::{Denoiser, Generator, UNetConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Denoiser,
    Generator,
    Discriminator,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Denoiser => "denoiser",
            Role::Generator => "generator",
            Role::Discriminator => "discriminator",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Kernel,
    Bias,
}

/// Name, shape and kind of one parameter, as declared by a network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    pub kind: ParamKind,
}

impl ParamSpec {
    pub(crate) fn conv(prefix: &str, c_out: usize, c_in: usize, k: usize) -> [ParamSpec; 2] {
        Self::conv_rect(prefix, c_out, c_in, k, k)
    }

    pub(crate) fn conv_rect(prefix: &str, c_out: usize, c_in: usize, kh: usize, kw: usize) -> [ParamSpec; 2] {
        [
            ParamSpec {
                name: format!("{prefix}.weight"),
                shape: Shape::new(c_out, c_in, kh, kw),
                kind: ParamKind::Kernel,
            },
            ParamSpec {
                name: format!("{prefix}.bias"),
                shape: Shape::new(c_out, 1, 1, 1),
                kind: ParamKind::Bias,
            },
        ]
    }
}

/// Architecture of a parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum NetConfig {
    Unet(UNetConfig),
    Critic(CriticConfig),
}

impl NetConfig {
    pub fn manifest(&self) -> Vec<ParamSpec> {
        match self {
            NetConfig::Unet(c) => c.manifest(),
            NetConfig::Critic(c) => c.manifest(),
        }
    }
}

/// One trainable tensor with its Adam moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub spec: ParamSpec,
    pub value: Tensor<f32>,
    pub m: Tensor<f32>,
    pub v: Tensor<f32>,
}

/// Parameters of one network plus optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub role: Role,
    pub config: NetConfig,
    pub params: Vec<Param>,
    /// Number of Adam updates applied so far.
    pub adam_step: u64,
}

impl NetworkParams {
    /// Zero-valued parameters in manifest order.
    pub fn zeros(role: Role, config: NetConfig) -> Self {
        let params = config
            .manifest()
            .into_iter()
            .map(|spec| Param {
                value: Tensor::zeros(spec.shape),
                m: Tensor::zeros(spec.shape),
                v: Tensor::zeros(spec.shape),
                spec,
            })
            .collect();
        NetworkParams {
            role,
            config,
            params,
            adam_step: 0,
        }
    }

    /// Fresh parameters: kernels from the role's initializer, biases zero.
    ///
    /// Denoiser and generator kernels use He initialization, N(0, 2/fan_in);
    /// critic kernels use N(0, 0.02²).
    pub fn init(role: Role, config: NetConfig, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(role, config);
        for param in &mut p.params {
            if param.spec.kind == ParamKind::Bias {
                continue;
            }
            let s = param.spec.shape;
            let std = match role {
                Role::Discriminator => 0.02,
                Role::Denoiser | Role::Generator => (2.0 / s.item_len() as f64).sqrt(),
            };
            param.value = sample_normal(s, 0.0, std, rng)?;
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.spec.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.spec.name == name)
    }

    pub fn values(&self) -> Vec<Tensor<f32>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn expect_role(&self, role: Role) -> Result<()> {
        if self.role != role {
            return Err(Error::RoleMismatch {
                expected: role.to_string(),
                found: self.role.to_string(),
            });
        }
        Ok(())
    }

    /// Record every parameter on `tape`, cast to `T`.
    pub fn bind<T: Real>(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        let values: Vec<Tensor<T>> = self.params.iter().map(|p| p.value.cast()).collect();
        self.bind_values(tape, values, trainable)
    }

    /// Record caller-supplied values (in manifest order) under this set's names.
    pub fn bind_values<T: Real>(&self, tape: &mut Tape<T>, values: Vec<Tensor<T>>, trainable: bool) -> Bound {
        assert_eq!(values.len(), self.params.len(), "one value per parameter");
        let mut vars = Vec::with_capacity(values.len());
        let mut by_name = HashMap::with_capacity(values.len());
        for (p, v) in self.params.iter().zip(values) {
            let var = tape.leaf(v, trainable);
            by_name.insert(p.spec.name.clone(), var);
            vars.push(var);
        }
        Bound { vars, by_name }
    }
}

/// Parameters of one network as recorded on a tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
    by_name: HashMap<String, Var>,
}

impl Bound {
    /// Adopt already recorded variables, in manifest order, as the parameters of `params`.
    pub fn from_vars(params: &NetworkParams, vars: Vec<Var>) -> Bound {
        assert_eq!(vars.len(), params.params.len(), "one variable per parameter");
        let by_name = params
            .params
            .iter()
            .zip(&vars)
            .map(|(p, &v)| (p.spec.name.clone(), v))
            .collect();
        Bound { vars, by_name }
    }

    pub fn var(&self, name: &str) -> Var {
        *self
            .by_name
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    /// Variables in manifest order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Convolution + bias with named parameters `{prefix}.weight` / `{prefix}.bias`.
pub(crate) fn conv<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    prefix: &str,
    x: Var,
    stride: usize,
    padding: usize,
) -> Result<Var> {
    let w = p.var(&format!("{prefix}.weight"));
    let b = p.var(&format!("{prefix}.bias"));
    tape.conv2d(x, w, Some(b), stride, padding)
}
