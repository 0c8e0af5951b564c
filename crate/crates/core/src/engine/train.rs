use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::adam::adam_step;
use super::config::{Mode, TrainConfig};
use super::losses::{adversarial_loss, checked, denoiser_l1, gradient_penalty, noise_stat_loss};
use super::schedule::lr_schedule;
use crate::data::{Batch, ImagePairSet, PatchSampler};
use crate::error::{Error, Result};
use crate::metrics::{akld, mean_psnr, AkldConfig};
use crate::nn::{Critic, Denoiser, Generator, NetworkParams, Role};
use crate::tensor::kernels::GaussianFilter;
use crate::tensor::{stream_rng, Rng, Tape, Tensor};

/// Independent random streams derived from one run seed.
pub(crate) mod streams {
    pub const INIT_R: u64 = 0;
    pub const INIT_G: u64 = 1;
    pub const INIT_D: u64 = 2;
    pub const PATCHES: u64 = 3;
    pub const TRAIN: u64 = 4;
    pub const AUGMENT: u64 = 5;
}

pub fn init_denoiser(cfg: &TrainConfig, seed: u64) -> Result<NetworkParams> {
    NetworkParams::init(Role::Denoiser, cfg.arch.denoiser(), &mut stream_rng(seed, streams::INIT_R))
}

pub fn init_generator(cfg: &TrainConfig, seed: u64) -> Result<NetworkParams> {
    NetworkParams::init(Role::Generator, cfg.arch.generator(), &mut stream_rng(seed, streams::INIT_G))
}

pub fn init_critic(cfg: &TrainConfig, seed: u64) -> Result<NetworkParams> {
    NetworkParams::init(
        Role::Discriminator,
        cfg.arch.critic(cfg.patch_size),
        &mut stream_rng(seed, streams::INIT_D),
    )
}

/// The networks a run trains; which ones exist depends on the mode.
#[derive(Clone, Debug, PartialEq)]
pub struct Networks {
    pub denoiser: Option<NetworkParams>,
    pub generator: Option<NetworkParams>,
    pub critic: NetworkParams,
}

impl Networks {
    pub fn init(cfg: &TrainConfig, seed: u64) -> Result<Self> {
        Ok(Networks {
            denoiser: cfg.mode.has_denoiser().then(|| init_denoiser(cfg, seed)).transpose()?,
            generator: cfg.mode.has_generator().then(|| init_generator(cfg, seed)).transpose()?,
            critic: init_critic(cfg, seed)?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    /// Completed outer iterations.
    pub iteration: u64,
    pub d_updates: u64,
    pub r_updates: u64,
    pub g_updates: u64,
    pub lr_r: f64,
    pub lr_g: f64,
    pub lr_d: f64,
}

/// Losses of one outer iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    /// Mean critic loss over the critic updates.
    pub loss_d: f64,
    /// Mean weighted penalty over the critic updates.
    pub gp: f64,
    pub loss_r: Option<f64>,
    pub loss_g: Option<f64>,
}

/// One row of the per-epoch log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr_r: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub loss_d: f64,
    pub loss_r: Option<f64>,
    pub loss_g: Option<f64>,
    pub gp: f64,
    pub psnr_val: Option<f64>,
    pub akld_val: Option<f64>,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,lr_R,lr_G,lr_D,loss_D,loss_R,loss_G,gp,psnr_val,akld_val";

    /// Absent values are empty fields.
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.lr_r,
            self.lr_g,
            self.lr_d,
            self.loss_d,
            opt(self.loss_r),
            opt(self.loss_g),
            self.gp,
            opt(self.psnr_val),
            opt(self.akld_val),
        );
        s
    }
}

pub fn csv_log(records: &[EpochRecord]) -> String {
    let mut out = String::from(EpochRecord::CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Held-out pairs scored at the end of every epoch.
#[derive(Clone, Debug)]
pub struct Validation {
    pub clean: Tensor<f32>,
    pub noisy: Tensor<f32>,
    pub akld: AkldConfig,
    /// Latent draws restart from this seed each epoch so values are comparable.
    pub seed: u64,
}

impl Validation {
    pub fn from_set(set: &ImagePairSet, akld: AkldConfig, seed: u64) -> Result<Self> {
        let b = set.as_batch()?;
        Ok(Validation {
            clean: b.clean,
            noisy: b.noisy,
            akld,
            seed,
        })
    }

    pub fn psnr(&self, denoiser: &NetworkParams) -> Result<f64> {
        let r = Denoiser::new(denoiser)?;
        mean_psnr(&r.denoise(&self.noisy)?, &self.clean, 1.0)
    }

    /// Mean AKLD over the held-out images.
    pub fn akld(&self, generator: &NetworkParams) -> Result<f64> {
        let g = Generator::new(generator)?;
        let mut rng = stream_rng(self.seed, 0);
        let n = self.clean.shape().n();
        let mut total = 0.0;
        for i in 0..n {
            total += akld(&g, &self.clean.item_at(i), &self.noisy.item_at(i), &self.akld, &mut rng)?;
        }
        Ok(total / n as f64)
    }
}

/// Alternating optimization of critic, denoiser and generator.
#[derive(Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub nets: Networks,
    pub state: TrainState,
    sampler: PatchSampler,
    rng: Rng,
    stat_filter: Arc<GaussianFilter>,
}

impl Trainer {
    pub fn new(config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let nets = Networks::init(&config, seed)?;
        Self::with_networks(config, nets, seed)
    }

    pub fn with_networks(config: TrainConfig, nets: Networks, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.mode.has_denoiser() != nets.denoiser.is_some() || config.mode.has_generator() != nets.generator.is_some()
        {
            return Err(Error::InvalidParameter(format!(
                "networks do not match mode {}",
                config.mode
            )));
        }
        let stat_filter = Arc::new(GaussianFilter::new(config.stat_filter_size, config.stat_filter_sigma)?);
        let mut t = Trainer {
            sampler: PatchSampler::new(stream_rng(seed, streams::PATCHES), config.augment),
            rng: stream_rng(seed, streams::TRAIN),
            config,
            nets,
            state: TrainState::default(),
            stat_filter,
        };
        t.set_learning_rates();
        Ok(t)
    }

    fn set_learning_rates(&mut self) {
        let (e, p) = (self.state.epoch, self.config.lr_period);
        self.state.lr_r = lr_schedule(e, self.config.adam_r.lr, p);
        self.state.lr_g = lr_schedule(e, self.config.adam_g.lr, p);
        self.state.lr_d = lr_schedule(e, self.config.adam_d.lr, p);
    }

    fn batch(&mut self, data: &ImagePairSet) -> Result<Batch> {
        self.sampler
            .next_batch(data, self.config.batch_size, self.config.patch_size)
    }

    /// One critic update on a fresh batch; returns `(loss_D, weighted penalty)`.
    fn critic_step(&mut self, data: &ImagePairSet) -> Result<(f64, f64)> {
        let step = self.state.iteration;
        let batch = self.batch(data)?;
        let alpha = self.config.alpha;
        let lambda = self.config.gp_lambda;
        let xhat = match &self.nets.denoiser {
            Some(r) => Some(Denoiser::new(r)?.run(&batch.noisy)?),
            None => None,
        };
        let yhat = match &self.nets.generator {
            Some(g) => Some(Generator::new(g)?.sample(&batch.clean, &mut self.rng)?),
            None => None,
        };

        let d = &self.nets.critic;
        let critic = Critic::new(d)?;
        let mut tape = Tape::<f32>::new();
        let dp = d.bind(&mut tape, true);
        let x = tape.constant(batch.clean);
        let y = tape.constant(batch.noisy);
        let real = tape.concat(x, y)?;
        let s_real = critic.forward_joint(&mut tape, &dp, real)?;
        let fake_r = match xhat {
            Some(v) => {
                let v = tape.constant(v);
                Some(tape.concat(v, y)?)
            }
            None => None,
        };
        let fake_g = match yhat {
            Some(v) => {
                let v = tape.constant(v);
                Some(tape.concat(x, v)?)
            }
            None => None,
        };
        let s_r = fake_r.map(|p| critic.forward_joint(&mut tape, &dp, p)).transpose()?;
        let s_g = fake_g.map(|p| critic.forward_joint(&mut tape, &dp, p)).transpose()?;
        let gan = adversarial_loss(&mut tape, s_real, s_r, s_g, alpha)?;
        let mut loss = tape.scale(gan, -1.0);
        let mut gp_total = 0.0;
        for (fake, w) in [(fake_r, alpha), (fake_g, 1.0 - alpha)] {
            let Some(fake) = fake else { continue };
            let f = |t: &mut Tape<f32>, v| critic.forward_joint(t, &dp, v);
            let gp = gradient_penalty(&mut tape, f, real, fake, lambda, &mut self.rng)?;
            gp_total += w * checked(&tape, gp, "gp", step)?;
            let gp = tape.scale(gp, w);
            loss = tape.add(loss, gp)?;
        }
        let value = checked(&tape, loss, "loss_D", step)?;
        let grads = tape.gradients(loss, dp.vars())?;
        drop(tape);
        let lr = self.state.lr_d;
        adam_step(&mut self.nets.critic, &grads, &self.config.adam_d, lr)?;
        self.state.d_updates += 1;
        Ok((value, gp_total))
    }

    /// Denoiser and generator updates against the fixed critic, sharing one batch.
    fn rg_step(&mut self, data: &ImagePairSet) -> Result<(Option<f64>, Option<f64>)> {
        let step = self.state.iteration;
        let batch = self.batch(data)?;
        let cfg = &self.config;
        let critic = Critic::new(&self.nets.critic)?;

        let r_update = match &self.nets.denoiser {
            Some(r) => {
                let net = Denoiser::new(r)?;
                let mut tape = Tape::<f32>::new();
                let rp = r.bind(&mut tape, true);
                let dp = self.nets.critic.bind(&mut tape, false);
                let x = tape.constant(batch.clean.clone());
                let y = tape.constant(batch.noisy.clone());
                let xhat = net.forward(&mut tape, &rp, y)?;
                let s = critic.forward(&mut tape, &dp, xhat, y)?;
                let adv = tape.mean(s);
                let adv = tape.scale(adv, -cfg.alpha);
                let l1 = denoiser_l1(&mut tape, xhat, x)?;
                let l1 = tape.scale(l1, cfg.tau1);
                let loss = tape.add(adv, l1)?;
                let value = checked(&tape, loss, "loss_R", step)?;
                Some((value, tape.gradients(loss, rp.vars())?))
            }
            None => None,
        };

        let g_update = match &self.nets.generator {
            Some(g) => {
                let net = Generator::new(g)?;
                let z = net.sample_latent(batch.clean.shape(), &mut self.rng)?;
                let mut tape = Tape::<f32>::new();
                let gp = g.bind(&mut tape, true);
                let dp = self.nets.critic.bind(&mut tape, false);
                let x = tape.constant(batch.clean);
                let y = tape.constant(batch.noisy);
                let z = tape.constant(z);
                let yhat = net.forward(&mut tape, &gp, x, z)?;
                let s = critic.forward(&mut tape, &dp, x, yhat)?;
                let adv = tape.mean(s);
                let adv = tape.scale(adv, -(1.0 - cfg.alpha));
                let stat = noise_stat_loss(&mut tape, yhat, y, x, &self.stat_filter)?;
                let stat = tape.scale(stat, cfg.tau2);
                let loss = tape.add(adv, stat)?;
                let value = checked(&tape, loss, "loss_G", step)?;
                Some((value, tape.gradients(loss, gp.vars())?))
            }
            None => None,
        };

        let (lr_r, lr_g) = (self.state.lr_r, self.state.lr_g);
        let mut out = (None, None);
        if let (Some((v, grads)), Some(r)) = (r_update, self.nets.denoiser.as_mut()) {
            adam_step(r, &grads, &self.config.adam_r, lr_r)?;
            self.state.r_updates += 1;
            out.0 = Some(v);
        }
        if let (Some((v, grads)), Some(g)) = (g_update, self.nets.generator.as_mut()) {
            adam_step(g, &grads, &self.config.adam_g, lr_g)?;
            self.state.g_updates += 1;
            out.1 = Some(v);
        }
        Ok(out)
    }

    /// One outer iteration: `n_critic` critic updates, then the denoiser/generator update.
    pub fn step(&mut self, data: &ImagePairSet) -> Result<StepLosses> {
        let mut loss_d = 0.0;
        let mut gp = 0.0;
        for _ in 0..self.config.n_critic {
            let (l, g) = self.critic_step(data)?;
            loss_d += l;
            gp += g;
        }
        let (loss_r, loss_g) = self.rg_step(data)?;
        self.state.iteration += 1;
        let k = self.config.n_critic as f64;
        Ok(StepLosses {
            loss_d: loss_d / k,
            gp: gp / k,
            loss_r,
            loss_g,
        })
    }

    /// One epoch of outer iterations, then validation if given.
    pub fn run_epoch(&mut self, data: &ImagePairSet, validation: Option<&Validation>) -> Result<EpochRecord> {
        if data.is_empty() {
            return Err(Error::InvalidParameter("training set is empty".into()));
        }
        self.set_learning_rates();
        let (lr_r, lr_g, lr_d) = (self.state.lr_r, self.state.lr_g, self.state.lr_d);
        let k = self.config.iterations_per_epoch();
        let mut acc = StepLosses::default();
        let (mut sum_r, mut sum_g) = (0.0, 0.0);
        for _ in 0..k {
            let s = self.step(data)?;
            acc.loss_d += s.loss_d;
            acc.gp += s.gp;
            sum_r += s.loss_r.unwrap_or(0.0);
            sum_g += s.loss_g.unwrap_or(0.0);
        }
        self.state.epoch += 1;
        let kf = k as f64;
        let mode = self.config.mode;
        let psnr_val = match (validation, &self.nets.denoiser) {
            (Some(v), Some(r)) => Some(v.psnr(r)?),
            _ => None,
        };
        let akld_val = match (validation, &self.nets.generator) {
            (Some(v), Some(g)) => Some(v.akld(g)?),
            _ => None,
        };
        Ok(EpochRecord {
            epoch: self.state.epoch,
            lr_r: if mode.has_denoiser() { lr_r } else { 0.0 },
            lr_g: if mode.has_generator() { lr_g } else { 0.0 },
            lr_d,
            loss_d: acc.loss_d / kf,
            loss_r: mode.has_denoiser().then_some(sum_r / kf),
            loss_g: mode.has_generator().then_some(sum_g / kf),
            gp: acc.gp / kf,
            psnr_val,
            akld_val,
        })
    }

    /// Run the remaining configured epochs, calling `on_epoch` after each.
    pub fn train<F>(&mut self, data: &ImagePairSet, validation: Option<&Validation>, mut on_epoch: F) -> Result<Vec<EpochRecord>>
    where
        F: FnMut(&EpochRecord, &Networks, &TrainState) -> Result<()>,
    {
        let mut log = Vec::new();
        while self.state.epoch < self.config.epochs {
            let rec = self.run_epoch(data, validation)?;
            on_epoch(&rec, &self.nets, &self.state)?;
            log.push(rec);
        }
        Ok(log)
    }
}

/// Adversarial training from fresh networks.
pub fn train(config: &TrainConfig, data: &ImagePairSet, seed: u64) -> Result<(Networks, TrainState, Vec<EpochRecord>)> {
    let mut t = Trainer::new(config.clone(), seed)?;
    let log = t.train(data, None, |_, _, _| Ok(()))?;
    Ok((t.nets, t.state, log))
}

impl Mode {
    /// Outer updates implied by the state: the denoiser's count, or the generator's when there is no denoiser.
    pub fn outer_updates(self, state: &TrainState) -> u64 {
        if self.has_denoiser() {
            state.r_updates
        } else {
            state.g_updates
        }
    }
}
