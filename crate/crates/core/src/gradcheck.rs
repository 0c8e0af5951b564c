//! Finite-difference verification of every differentiable operation, the
//! three networks and the loss terms, in 64-bit precision.

use std::fmt;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::engine::losses::{adversarial_loss, denoiser_l1, gradient_penalty_at, noise_stat_loss};
use crate::engine::{ArchConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{Critic, Denoiser, Generator, NetworkParams, ParamKind, Role};
use crate::tensor::kernels::GaussianFilter;
use crate::tensor::{sample_normal, sample_uniform, seeded_rng, Rng, Shape, Tape, Tensor, Var};

/// Worst acceptable relative error.
pub const TOLERANCE: f64 = 1e-3;
/// Central-difference step.
pub const STEP: f64 = 1e-4;
/// Random shapes drawn per elementwise or structural operation.
pub const SHAPES_PER_OP: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Ops,
    Networks,
    Losses,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Ops => "ops",
            Scope::Networks => "networks",
            Scope::Losses => "losses",
        })
    }
}

impl std::str::FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ops" => Ok(Scope::Ops),
            "networks" => Ok(Scope::Networks),
            "losses" => Ok(Scope::Losses),
            other => Err(Error::InvalidParameter(format!("unknown gradcheck scope {other:?}"))),
        }
    }
}

type Inputs = Box<dyn Fn(&mut Rng) -> Vec<Tensor<f64>> + Send + Sync>;
type Forward = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Send + Sync>;

/// A function of several tensors checked against central differences.
pub struct Probe {
    pub name: String,
    pub scope: Scope,
    /// Independent random input draws (one per shape trial).
    pub trials: usize,
    /// Coordinates probed per input tensor and trial; 0 means all of them.
    pub coords: usize,
    /// Trailing inputs passed as constants and never perturbed (e.g. geometry).
    pub frozen: usize,
    inputs: Inputs,
    forward: Forward,
}

impl fmt::Debug for Probe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Probe").field("name", &self.name).field("scope", &self.scope).finish()
    }
}

impl Probe {
    pub fn new<I, F>(name: &str, scope: Scope, inputs: I, forward: F) -> Self
    where
        I: Fn(&mut Rng) -> Vec<Tensor<f64>> + Send + Sync + 'static,
        F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Send + Sync + 'static,
    {
        Probe {
            name: name.to_string(),
            scope,
            trials: SHAPES_PER_OP,
            coords: 0,
            frozen: 0,
            inputs: Box::new(inputs),
            forward: Box::new(forward),
        }
    }

    fn with_frozen(mut self, frozen: usize) -> Self {
        self.frozen = frozen;
        self
    }

    fn with_budget(mut self, trials: usize, coords: usize) -> Self {
        self.trials = trials;
        self.coords = coords;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub scope: Scope,
    pub worst_rel_err: f64,
    /// Coordinates compared.
    pub probes: usize,
    /// Coordinates skipped because a non-differentiable point lay inside the stencil.
    pub skipped: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.worst_rel_err < TOLERANCE && self.probes > 0
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Reduce an arbitrary output to a scalar with fixed random weights so
/// every output element contributes a distinct sensitivity.
fn scalarize(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let s = tape.shape(out);
    if s.is_scalar() {
        return Ok(out);
    }
    let w: Tensor<f64> = sample_uniform(s, -1.0, 1.0, &mut seeded_rng(seed));
    let weighted = tape.mul_const(out, Arc::new(w))?;
    Ok(tape.sum(weighted))
}

fn evaluate(probe: &Probe, inputs: &[Tensor<f64>], seed: u64) -> Result<f64> {
    let mut tape = Tape::new();
    // leaves stay differentiable so probes that take inner gradients see the same graph
    let live = inputs.len() - probe.frozen;
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| tape.leaf(t.clone(), i < live))
        .collect();
    let out = (probe.forward)(&mut tape, &vars)?;
    let loss = scalarize(&mut tape, out, seed)?;
    Ok(tape.value(loss).item())
}

/// Compare reverse-mode gradients with central differences on every trial.
pub fn run_probe(probe: &Probe, seed: u64) -> Result<CheckResult> {
    let mut rng = seeded_rng(seed);
    let mut worst: f64 = 0.0;
    let (mut probes, mut skipped) = (0, 0);
    for trial in 0..probe.trials {
        let inputs = (probe.inputs)(&mut rng);
        let wseed = seed.wrapping_mul(31).wrapping_add(trial as u64);
        let live = inputs.len() - probe.frozen;
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| tape.leaf(t.clone(), i < live))
            .collect();
        let out = (probe.forward)(&mut tape, &vars)?;
        let loss = scalarize(&mut tape, out, wseed)?;
        let grads = tape.gradients(loss, &vars[..live])?;
        for (i, g) in grads.iter().enumerate() {
            let n = inputs[i].len();
            let coords: Vec<usize> = if probe.coords == 0 || probe.coords >= n {
                (0..n).collect()
            } else {
                (0..probe.coords).map(|_| rng.gen_range(0..n)).collect()
            };
            for j in coords {
                let fd = |h: f64| -> Result<f64> {
                    let mut plus = inputs.clone();
                    plus[i].data_mut()[j] += h;
                    let mut minus = inputs.clone();
                    minus[i].data_mut()[j] -= h;
                    Ok((evaluate(probe, &plus, wseed)? - evaluate(probe, &minus, wseed)?) / (2.0 * h))
                };
                let (f1, f2) = (fd(STEP)?, fd(STEP / 2.0)?);
                if rel_err(f1, f2) > TOLERANCE / 10.0 {
                    // a kink of leaky-ReLU or |·| inside the stencil makes the
                    // difference quotient meaningless at this coordinate
                    skipped += 1;
                    continue;
                }
                worst = worst.max(rel_err(g.data()[j], f1));
                probes += 1;
            }
        }
    }
    if probes == 0 || skipped > probes {
        return Err(Error::InvalidParameter(format!(
            "gradcheck {}: {skipped} of {} coordinates hit non-differentiable points",
            probe.name,
            probes + skipped
        )));
    }
    Ok(CheckResult {
        name: probe.name.clone(),
        scope: probe.scope,
        worst_rel_err: worst,
        probes,
        skipped,
    })
}

/// Names of the tape operations a caller can record, each of which must have a probe.
pub const DIFFERENTIABLE_OPS: &[&str] = &[
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "mul_const",
    "leaky_relu",
    "abs",
    "square",
    "sqrt",
    "recip",
    "concat",
    "slice_channels",
    "sum",
    "mean",
    "sum_per_sample",
    "add_channel_bias",
    "conv2d",
    "upsample_nearest",
    "sum_pool",
    "avg_pool",
    "gaussian",
    "reshape",
    "second_order",
];

fn small_shape(rng: &mut Rng) -> Shape {
    Shape::new(rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=4))
}

fn normal(s: Shape, rng: &mut Rng) -> Tensor<f64> {
    sample_normal(s, 0.0, 1.0, rng).expect("unit stddev")
}

/// Normal draws pushed away from zero, for ops with a kink there.
fn away_from_zero(s: Shape, rng: &mut Rng) -> Tensor<f64> {
    normal(s, rng).map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 })
}

fn positive(s: Shape, rng: &mut Rng) -> Tensor<f64> {
    sample_uniform(s, 0.5, 2.0, rng)
}

fn unary(name: &str, gen: fn(Shape, &mut Rng) -> Tensor<f64>, f: fn(&mut Tape<f64>, Var) -> Var) -> Probe {
    Probe::new(
        name,
        Scope::Ops,
        move |rng| vec![gen(small_shape(rng), rng)],
        move |t, v| Ok(f(t, v[0])),
    )
}

fn binary(name: &str, f: fn(&mut Tape<f64>, Var, Var) -> Result<Var>) -> Probe {
    Probe::new(
        name,
        Scope::Ops,
        |rng| {
            let s = small_shape(rng);
            vec![normal(s, rng), normal(s, rng)]
        },
        move |t, v| f(t, v[0], v[1]),
    )
}

fn op_probes() -> Vec<Probe> {
    let mut p = vec![
        binary("add", |t, a, b| t.add(a, b)),
        binary("sub", |t, a, b| t.sub(a, b)),
        binary("mul", |t, a, b| t.mul(a, b)),
        unary("scale", normal, |t, a| t.scale(a, -1.7)),
        unary("add_scalar", normal, |t, a| t.add_scalar(a, 0.3)),
        unary("leaky_relu", away_from_zero, |t, a| t.leaky_relu(a, 0.2)),
        unary("abs", away_from_zero, |t, a| t.abs(a)),
        unary("square", normal, |t, a| t.square(a)),
        unary("sqrt", positive, |t, a| t.sqrt(a)),
        unary("recip", positive, |t, a| t.recip(a)),
        unary("sum", normal, |t, a| t.sum(a)),
        unary("mean", normal, |t, a| t.mean(a)),
        unary("sum_per_sample", normal, |t, a| t.sum_per_sample(a)),
    ];
    p.push(Probe::new(
        "mul_const",
        Scope::Ops,
        |rng| vec![normal(small_shape(rng), rng)],
        |t, v| {
            let s = t.shape(v[0]);
            let c = Tensor::from_fn(s, |[n, c, y, x]| 0.5 + (n + 2 * c + 3 * y + 5 * x) as f64 * 0.1);
            t.mul_const(v[0], Arc::new(c))
        },
    ));
    p.push(Probe::new(
        "concat",
        Scope::Ops,
        |rng| {
            let s = small_shape(rng);
            let c2 = rng.gen_range(1..=3);
            vec![normal(s, rng), normal(Shape::new(s.n(), c2, s.h(), s.w()), rng)]
        },
        |t, v| t.concat(v[0], v[1]),
    ));
    p.push(Probe::new(
        "slice_channels",
        Scope::Ops,
        |rng| {
            let s = small_shape(rng);
            vec![normal(Shape::new(s.n(), s.c() + 2, s.h(), s.w()), rng)]
        },
        |t, v| {
            let c = t.shape(v[0]).c();
            t.slice_channels(v[0], 1, c - 2)
        },
    ));
    p.push(Probe::new(
        "add_channel_bias",
        Scope::Ops,
        |rng| {
            let s = small_shape(rng);
            vec![normal(s, rng), normal(Shape::new(s.c(), 1, 1, 1), rng)]
        },
        |t, v| t.add_channel_bias(v[0], v[1]),
    ));
    p.push(Probe::new(
        "conv2d",
        Scope::Ops,
        |rng| {
            let k = rng.gen_range(1..=3);
            let (cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let h = rng.gen_range(k..=6);
            let s = Shape::new(rng.gen_range(1..=2), cin, h, rng.gen_range(k..=6));
            let stride = rng.gen_range(1..=2) as f64;
            let pad = rng.gen_range(0..=1) as f64;
            vec![
                normal(s, rng),
                normal(Shape::new(cout, cin, k, k), rng),
                normal(Shape::new(cout, 1, 1, 1), rng),
                Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![stride, pad]).expect("two values"),
            ]
        },
        |t, v| {
            // stride and padding ride along as a frozen input
            let g = t.value(v[3]).data().to_vec();
            t.conv2d(v[0], v[1], Some(v[2]), g[0] as usize, g[1] as usize)
        },
    )
    .with_frozen(1));
    p.push(Probe::new(
        "upsample_nearest",
        Scope::Ops,
        |rng| vec![normal(small_shape(rng), rng)],
        |t, v| t.upsample_nearest(v[0], 2),
    ));
    for (name, pool) in [("sum_pool", false), ("avg_pool", true)] {
        p.push(Probe::new(
            name,
            Scope::Ops,
            |rng| {
                let s = small_shape(rng);
                vec![normal(Shape::new(s.n(), s.c(), 2 * s.h(), 2 * s.w()), rng)]
            },
            move |t, v| if pool { t.avg_pool(v[0], 2) } else { t.sum_pool(v[0], 2) },
        ));
    }
    let filter = Arc::new(GaussianFilter::new(3, 0.8).expect("valid filter"));
    p.push(Probe::new(
        "gaussian",
        Scope::Ops,
        |rng| {
            let s = small_shape(rng);
            vec![normal(Shape::new(s.n(), s.c(), s.h() + 2, s.w() + 2), rng)]
        },
        move |t, v| Ok(t.gaussian(v[0], &filter)),
    ));
    p.push(Probe::new(
        "reshape",
        Scope::Ops,
        |rng| vec![normal(small_shape(rng), rng)],
        |t, v| {
            let s = t.shape(v[0]);
            t.reshape(v[0], Shape::new(1, 1, 1, s.numel()))
        },
    ));
    // gradients of gradients: exercises the adjoint operators recorded by backward
    p.push(Probe::new(
        "second_order",
        Scope::Ops,
        |rng| {
            let s = Shape::new(1, 2, 5, 5);
            vec![normal(s, rng), normal(Shape::new(2, 2, 3, 3), rng)]
        },
        |t, v| {
            let y = t.conv2d(v[0], v[1], None, 2, 1)?;
            let y = t.upsample_nearest(y, 2)?;
            let y = t.square(y);
            let s = t.sum(y);
            let g = t.grad(s, &[v[0]])?[0];
            let g2 = t.square(g);
            Ok(t.sum(g2))
        },
    ));
    p
}

fn arch() -> ArchConfig {
    ArchConfig {
        unet_depth: 2,
        unet_base_channels: 2,
        critic_base_channels: 2,
        ..ArchConfig::default()
    }
}

fn network_probes(seed: u64) -> Vec<Probe> {
    let a = arch();
    let cfg = TrainConfig {
        arch: a.clone(),
        ..TrainConfig::default()
    };
    let mut rng = seeded_rng(seed);
    let r = Arc::new(NetworkParams::init(Role::Denoiser, a.denoiser(), &mut rng).expect("denoiser init"));
    let g = Arc::new(NetworkParams::init(Role::Generator, a.generator(), &mut rng).expect("generator init"));
    let d = Arc::new(
        NetworkParams::init(Role::Discriminator, a.critic(cfg.patch_size), &mut rng).expect("critic init"),
    );
    let mut out = Vec::new();

    // inputs: [image..., params...]
    let net_inputs = |p: Arc<NetworkParams>, images: Vec<Shape>| {
        move |rng: &mut Rng| {
            let mut v: Vec<Tensor<f64>> = images.iter().map(|&s| normal(s, rng)).collect();
            v.extend(random_params(&p, rng));
            v
        }
    };
    let rr = r.clone();
    out.push(
        Probe::new(
            "denoiser",
            Scope::Networks,
            net_inputs(r.clone(), vec![Shape::new(1, 1, 8, 8)]),
            move |t, v| {
                let p = bind_slice(&rr, v, 1);
                Denoiser::new(&rr)?.forward(t, &p, v[0])
            },
        )
        .with_budget(3, 5),
    );
    let gg = g.clone();
    out.push(
        Probe::new(
            "generator",
            Scope::Networks,
            net_inputs(g.clone(), vec![Shape::new(1, 1, 8, 8), Shape::new(1, 1, 8, 8)]),
            move |t, v| {
                let p = bind_slice(&gg, v, 2);
                Generator::new(&gg)?.forward(t, &p, v[0], v[1])
            },
        )
        .with_budget(3, 5),
    );
    let dd = d.clone();
    let ps = cfg.patch_size;
    out.push(
        Probe::new(
            "critic",
            Scope::Networks,
            net_inputs(d.clone(), vec![Shape::new(2, 1, ps, ps), Shape::new(2, 1, ps, ps)]),
            move |t, v| {
                let p = bind_slice(&dd, v, 2);
                Critic::new(&dd)?.forward(t, &p, v[0], v[1])
            },
        )
        .with_budget(3, 5),
    );
    out
}

/// Fresh He-scaled kernels and small random biases: activations of order one
/// keep leaky-ReLU kinks away from the difference stencil.
fn random_params(p: &NetworkParams, rng: &mut Rng) -> Vec<Tensor<f64>> {
    p.params
        .iter()
        .map(|q| {
            let s = q.spec.shape;
            let sd = match q.spec.kind {
                ParamKind::Kernel => (2.0 / s.item_len() as f64).sqrt(),
                ParamKind::Bias => 0.1,
            };
            normal(s, rng).scale(sd)
        })
        .collect()
}

/// Bound view of `params` whose variables are `vars[offset..]`.
fn bind_slice(params: &NetworkParams, vars: &[Var], offset: usize) -> crate::nn::Bound {
    crate::nn::Bound::from_vars(params, vars[offset..].to_vec())
}

fn loss_probes(seed: u64) -> Vec<Probe> {
    let mut out = vec![
        Probe::new(
            "adversarial_loss",
            Scope::Losses,
            |rng| (0..3).map(|_| normal(Shape::new(4, 1, 1, 1), rng)).collect(),
            |t, v| adversarial_loss(t, v[0], Some(v[1]), Some(v[2]), 0.3),
        ),
        Probe::new(
            "denoiser_l1",
            Scope::Losses,
            |rng| {
                let s = small_shape(rng);
                let a = normal(s, rng);
                // keep |a − b| away from the kink at zero
                let b = a.zip_map(&away_from_zero(s, rng), "offset", |x, d| x + d).expect("same shape");
                vec![a, b]
            },
            |t, v| denoiser_l1(t, v[0], v[1]),
        ),
    ];
    let filter = Arc::new(GaussianFilter::new(3, 1.0).expect("valid filter"));
    out.push(Probe::new(
        "noise_stat_loss",
        Scope::Losses,
        |rng| {
            let s = Shape::new(1, 1, 6, 6);
            let x = normal(s, rng);
            let y = normal(s, rng);
            // ŷ = y + offset with the filtered difference bounded away from zero
            let yhat = y.map(|v| v + 0.5);
            vec![yhat, y, x]
        },
        move |t, v| noise_stat_loss(t, v[0], v[1], v[2], &filter),
    ));
    let a = arch();
    let d = Arc::new(
        NetworkParams::init(Role::Discriminator, a.critic(32), &mut seeded_rng(seed ^ 0x5eed)).expect("critic init"),
    );
    let dd = d.clone();
    out.push(
        Probe::new(
            "gradient_penalty",
            Scope::Losses,
            move |rng| {
                let mut v = vec![normal(Shape::new(2, 2, 32, 32), rng)];
                v.extend(random_params(&d, rng));
                v
            },
            move |t, v| {
                let p = bind_slice(&dd, v, 1);
                let critic = Critic::new(&dd)?;
                let pts = t.value(v[0]).clone();
                let mut f = |t: &mut Tape<f64>, x: Var| critic.forward_joint(t, &p, x);
                gradient_penalty_at(t, &mut f, pts, 10.0)
            },
        )
        .with_budget(2, 3),
    );
    out
}

/// Every registered probe.
pub fn registry(seed: u64) -> Vec<Probe> {
    let mut all = op_probes();
    all.extend(network_probes(seed));
    all.extend(loss_probes(seed));
    all
}

/// A `square` whose recorded gradient is `x` instead of `2x`, for negative controls.
pub fn corrupted_square() -> Probe {
    Probe::new(
        "square",
        Scope::Ops,
        |rng| vec![normal(small_shape(rng), rng)],
        |t, v| {
            let c = t.constant(t.value(v[0]).clone());
            t.mul(v[0], c)
        },
    )
}

/// Run the probes of `scope` (all when `None`), replacing any probe named
/// like an entry of `faults` with its corrupted variant.
pub fn run_suite(scope: Option<Scope>, seed: u64, faults: &[&str]) -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();
    for probe in registry(seed) {
        if scope.is_some_and(|s| s != probe.scope) {
            continue;
        }
        let probe = if faults.contains(&probe.name.as_str()) {
            match probe.name.as_str() {
                "square" => corrupted_square(),
                other => return Err(Error::InvalidParameter(format!("no corrupted variant of {other}"))),
            }
        } else {
            probe
        };
        results.push(run_probe(&probe, seed)?);
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_covers_every_op() {
        let names: Vec<String> = registry(1).into_iter().map(|p| p.name).collect();
        for op in DIFFERENTIABLE_OPS {
            assert!(names.iter().any(|n| n == op), "no probe for {op}");
        }
        for net in ["denoiser", "generator", "critic"] {
            assert!(names.iter().any(|n| n == net));
        }
    }

    #[test]
    fn op_suite_passes() {
        for r in run_suite(Some(Scope::Ops), 3, &[]).unwrap() {
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn network_and_loss_suites_pass() {
        for scope in [Scope::Networks, Scope::Losses] {
            for r in run_suite(Some(scope), 5, &[]).unwrap() {
                assert!(r.passed(), "{r:?}");
            }
        }
    }

    #[test]
    fn corrupted_op_is_caught() {
        let r = run_probe(&corrupted_square(), 4).unwrap();
        assert!(!r.passed());
        assert_eq!(r.name, "square");
    }
}
