//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs with its own harness so the lines are always printed. Exits nonzero
//! if any criterion fails.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use danet_core::data::{
    make_pgap_dataset, procedural_image, procedural_images, procedural_pairs, synth_noisy, ImagePairSet, NoiseModel,
};
use danet_core::engine::{
    adversarial_loss, denoiser_l1, gradient_penalty, noise_stat_loss, retrain_plus, train_l1_denoiser, ArchConfig,
    EpochRecord, Mode, TrainConfig, Trainer, Validation,
};
use danet_core::gradcheck::{run_suite, Scope, DIFFERENTIABLE_OPS};
use danet_core::metrics::{akld, denoiser_psnr, kl_ratio_closed_form, mean_psnr, AkldConfig, ScaledResidualSampler};
use danet_core::tensor::kernels::GaussianFilter;
use danet_core::tensor::{seeded_rng, stream_rng};
use danet_core::{Result, Shape, Tape, Tensor, Var};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn gradient_suite() -> Result<Verdict> {
    let start = Instant::now();
    let results = run_suite(None, 0, &[])?;
    let elapsed = start.elapsed();
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    let has = |scope: Scope, name: &str| results.iter().any(|r| r.scope == scope && r.name == name);
    let missing: Vec<&str> = DIFFERENTIABLE_OPS
        .iter()
        .copied()
        .filter(|op| !has(Scope::Ops, op))
        .chain(["denoiser", "generator", "critic"].into_iter().filter(|n| !has(Scope::Networks, n)))
        .collect();
    let worst = results.iter().map(|r| r.worst_rel_err).fold(0.0, f64::max);
    Ok(verdict(
        failed.is_empty() && missing.is_empty() && elapsed < Duration::from_secs(300),
        format!(
            "{} checks, worst rel err {worst:.2e} (< 1e-3), failed {failed:?}, missing {missing:?}, {} (< 300s)",
            results.len(),
            secs(elapsed)
        ),
    ))
}

fn loss_oracles() -> Result<Verdict> {
    let mut t = Tape::<f64>::new();
    let full = |t: &mut Tape<f64>, v: f64, s: Shape| t.constant(Tensor::full(s, v));
    let n4 = Shape::new(4, 1, 1, 1);
    let (a, b, c) = (full(&mut t, 1.0, n4), full(&mut t, 0.2, n4), full(&mut t, 0.4, n4));
    let l = adversarial_loss(&mut t, a, Some(b), Some(c), 0.5)?;
    let adv = t.value(l).item();

    // D(v) = sum of the 4 inputs: input gradient all ones, norm 2, penalty 10·(2 − 1)²
    let real = t.constant(Tensor::from_vec(Shape::new(1, 2, 1, 2), vec![0.1, 0.2, 0.3, 0.4])?);
    let fake = t.constant(Tensor::zeros(Shape::new(1, 2, 1, 2)));
    let critic = |t: &mut Tape<f64>, v: Var| Ok(t.sum_per_sample(v));
    let gp = gradient_penalty(&mut t, critic, real, fake, 10.0, &mut seeded_rng(1))?;
    let gp = t.value(gp).item();

    let f = Arc::new(GaussianFilter::new(5, 2.0)?);
    let s = Shape::new(1, 1, 16, 16);
    let (x, y, yhat) = (full(&mut t, 0.3, s), full(&mut t, 0.4, s), full(&mut t, 0.5, s));
    let l = noise_stat_loss(&mut t, yhat, y, x, &f)?;
    let stat = t.value(l).item();

    let off = full(&mut t, 0.35, s);
    let l = denoiser_l1(&mut t, off, x)?;
    let l1 = t.value(l).item();

    let errs = [(adv, 0.7), (gp, 10.0), (stat, 0.1), (l1, 0.05)];
    let ok = errs.iter().all(|(v, want)| (v - want).abs() <= 1e-6);
    Ok(verdict(
        ok,
        format!("adversarial {adv:.9} (0.7), penalty {gp:.9} (10), stat {stat:.9} (0.1), l1 {l1:.9} (0.05), tol 1e-6"),
    ))
}

fn akld_closed_form() -> Result<Verdict> {
    let start = Instant::now();
    let x = procedural_image(256, 256, 1, &mut seeded_rng(21));
    let y = synth_noisy(&x, &NoiseModel::gaussian(0.1), &mut seeded_rng(22))?;
    let cfg = AkldConfig::default().with_samples(1);
    let mut ok = true;
    let mut parts = Vec::new();
    for r in [1.0, 2.0, 4.0] {
        let sampler = ScaledResidualSampler {
            noisy: y.clone(),
            ratio: r,
        };
        let got = akld(&sampler, &x, &y, &cfg, &mut seeded_rng(23))?;
        let want = kl_ratio_closed_form(r);
        let good = if want == 0.0 {
            got.abs() < 1e-6
        } else {
            (got / want - 1.0).abs() <= 0.05
        };
        ok &= good;
        parts.push(format!("r={r}: {got:.5} vs {want:.5}"));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(60);
    Ok(verdict(ok, format!("{}, within 5%, {} (< 60s)", parts.join(", "), secs(elapsed))))
}

fn toy_data(model: &NoiseModel) -> Result<(ImagePairSet, ImagePairSet)> {
    Ok((
        procedural_pairs(32, 64, 1, model, &mut seeded_rng(1))?,
        procedural_pairs(6, 64, 1, model, &mut seeded_rng(2))?,
    ))
}

/// L1 recipe used to train the denoisers compared by the PSNR gap.
fn l1_recipe() -> TrainConfig {
    let mut c = TrainConfig {
        epochs: 20,
        batch_size: 8,
        patch_size: 32,
        patches_per_epoch: 640,
        arch: ArchConfig {
            unet_depth: 3,
            unet_base_channels: 8,
            ..ArchConfig::default()
        },
        plus_ratio: 1.0,
        ..TrainConfig::default()
    };
    c.adam_r.lr = 1e-3;
    c
}

struct L1Runs {
    real_psnr: f64,
    elapsed: Duration,
}

fn pgap_controls() -> Result<(Verdict, L1Runs)> {
    let start = Instant::now();
    let model = NoiseModel::gaussian(0.1);
    let (train, test) = toy_data(&model)?;
    let recipe = l1_recipe();
    let seed = 5;
    let clean = train.clean_images();
    let oracle = make_pgap_dataset(&clean, &model, &mut stream_rng(seed, 7))?;
    let wide = make_pgap_dataset(&clean, &model.scale_variance(4.0), &mut stream_rng(seed, 7))?;
    let real = denoiser_psnr(&train_l1_denoiser(&train, &recipe, seed)?, &test)?;
    let p_oracle = denoiser_psnr(&train_l1_denoiser(&oracle, &recipe, seed)?, &test)?;
    let p_wide = denoiser_psnr(&train_l1_denoiser(&wide, &recipe, seed)?, &test)?;
    let elapsed = start.elapsed();
    let (g_oracle, g_wide) = (real - p_oracle, real - p_wide);
    let pass = g_oracle.abs() <= 0.3 && g_wide >= 1.0 && elapsed < Duration::from_secs(900);
    Ok((
        verdict(
            pass,
            format!(
                "real-trained {real:.3} dB; oracle gap {g_oracle:+.3} dB (|.| <= 0.3), 4x-variance gap {g_wide:+.3} dB (>= 1), {} (< 900s)",
                secs(elapsed)
            ),
        ),
        L1Runs {
            real_psnr: real,
            elapsed,
        },
    ))
}

/// DANet's adversarially trained R against a fresh L1 denoiser retrained on
/// the real set plus equally many oracle-synthesized pairs.
fn danet_plus(base: &L1Runs, danet_psnr: f64) -> Result<Verdict> {
    let start = Instant::now();
    let model = NoiseModel::gaussian(0.1);
    let (train, test) = toy_data(&model)?;
    let pool = procedural_images(32, 64, 64, 1, &mut seeded_rng(4));
    let plus = retrain_plus(&model, &pool, &train, &l1_recipe(), 5)?;
    let p = denoiser_psnr(&plus, &test)?;
    let delta = p - danet_psnr;
    Ok(verdict(
        delta > -0.1,
        format!(
            "DANet R {danet_psnr:.3} dB -> retrained {p:.3} dB, change {delta:+.3} dB (> -0.1); \
             same recipe without synthetic pairs {:.3} dB ({:+.3} dB from augmentation alone), {}",
            base.real_psnr,
            p - base.real_psnr,
            secs(start.elapsed() + base.elapsed)
        ),
    ))
}

/// Adversarial toy recipe shared by every end-to-end run.
fn toy_recipe(mode: Mode) -> TrainConfig {
    TrainConfig {
        mode,
        epochs: 12,
        batch_size: 8,
        patches_per_epoch: 640,
        arch: ArchConfig {
            unet_base_channels: 8,
            critic_base_channels: 8,
            ..ArchConfig::default()
        },
        ..TrainConfig::default()
    }
}

struct ToyRun {
    noisy_psnr: f64,
    log: Vec<EpochRecord>,
}

fn toy_run(model: &NoiseModel, mode: Mode) -> Result<ToyRun> {
    let (train, val) = toy_data(model)?;
    let v = Validation::from_set(&val, AkldConfig::default().with_samples(2), 3)?;
    let b = val.as_batch()?;
    let noisy_psnr = mean_psnr(&b.noisy, &b.clean, 1.0)?;
    let mut t = Trainer::new(toy_recipe(mode), 11)?;
    let log = t.train(&train, Some(&v), |_, _, _| Ok(()))?;
    Ok(ToyRun { noisy_psnr, log })
}

/// 3-epoch moving averages never increase.
fn smoothed_monotone(series: &[f64]) -> bool {
    let s: Vec<f64> = series.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect();
    s.windows(2).all(|w| w[1] <= w[0])
}

/// Also returns the held-out PSNR of the Gaussian DANet denoiser.
fn end_to_end() -> Result<(Verdict, f64)> {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    let mut gaussian = None;
    for (name, model) in [
        ("gaussian 0.1", NoiseModel::gaussian(0.1)),
        ("signal-dependent 0.2/0.05", NoiseModel::signal_dependent(0.2, 0.05)),
    ] {
        let run = toy_run(&model, Mode::DANet)?;
        let last = run.log.last().expect("at least one epoch");
        let gain = last.psnr_val.unwrap_or(f64::NAN) - run.noisy_psnr;
        let ak: Vec<f64> = run.log.iter().map(|r| r.akld_val.unwrap_or(f64::NAN)).collect();
        let (first, fin) = (ak[0], *ak.last().unwrap());
        let a = gain >= 3.0;
        let b = smoothed_monotone(&ak) && fin < 0.5 * first;
        pass &= a && b;
        parts.push(format!(
            "{name}: (a) psnr gain {gain:+.2} dB {}; (b) akld {first:.3} -> {fin:.3}, smoothed monotone {} {}",
            if a { "ok" } else { "FAIL" },
            smoothed_monotone(&ak),
            if b { "ok" } else { "FAIL" }
        ));
        if gaussian.is_none() {
            gaussian = Some(run);
        }
    }
    let danet = gaussian.expect("gaussian run");
    let based = toy_run(&NoiseModel::gaussian(0.1), Mode::BaseD)?;
    let baseg = toy_run(&NoiseModel::gaussian(0.1), Mode::BaseG)?;
    let d_last = danet.log.last().unwrap();
    let (bd, bg) = (based.log.last().unwrap(), baseg.log.last().unwrap());
    // BaseD has no generator and BaseG no denoiser, so only DANet yields both.
    let c = d_last.akld_val.is_some()
        && d_last.psnr_val.is_some()
        && bd.akld_val.is_none()
        && bg.psnr_val.is_none()
        && bd.psnr_val.is_some()
        && bg.akld_val.is_some();
    pass &= c;
    parts.push(format!(
        "(c) DANet psnr {:.2} / akld {:.3}; BaseD psnr {:.2}, no G; BaseG akld {:.3}, no R {}",
        d_last.psnr_val.unwrap_or(f64::NAN),
        d_last.akld_val.unwrap_or(f64::NAN),
        bd.psnr_val.unwrap_or(f64::NAN),
        bg.akld_val.unwrap_or(f64::NAN),
        if c { "ok" } else { "FAIL" }
    ));
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(1800);
    parts.push(format!("{} (< 1800s)", secs(elapsed)));
    Ok((verdict(pass, parts.join("; ")), d_last.psnr_val.unwrap_or(f64::NAN)))
}

fn bookkeeping() -> Result<Verdict> {
    let data = procedural_pairs(3, 32, 1, &NoiseModel::gaussian(0.1), &mut seeded_rng(1))?;
    let mut pass = true;
    let mut parts = Vec::new();
    for mode in [Mode::DANet, Mode::BaseD, Mode::BaseG, Mode::PlusRetrain] {
        for n_critic in [1, 3] {
            let cfg = TrainConfig {
                mode,
                n_critic,
                epochs: 2,
                batch_size: 2,
                patches_per_epoch: 24,
                arch: ArchConfig {
                    unet_depth: 2,
                    unet_base_channels: 2,
                    critic_base_channels: 2,
                    ..ArchConfig::default()
                },
                ..TrainConfig::default()
            };
            let run = |seed| -> Result<_> {
                let mut t = Trainer::new(cfg.clone(), seed)?;
                let log = t.train(&data, None, |_, _, _| Ok(()))?;
                Ok((t.nets, t.state, log))
            };
            let (nets, state, log) = run(7)?;
            let outer = mode.outer_updates(&state);
            let counts = state.d_updates == n_critic as u64 * outer && outer == state.iteration && outer > 0;
            let again = run(7)?;
            let same = again.0 == nets && again.1 == state && again.2 == log;
            pass &= counts && same;
            if !(counts && same) {
                parts.push(format!("{mode} n_critic={n_critic}: counts {counts}, identical {same}"));
            }
        }
    }
    let detail = if parts.is_empty() {
        "D updates = n_critic x outer updates and same-seed reruns identical for 4 modes x n_critic {1, 3}".to_string()
    } else {
        parts.join("; ")
    };
    Ok(verdict(pass, detail))
}

fn main() -> ExitCode {
    let criteria: [(&str, &dyn Fn() -> Result<Verdict>); 4] = [
        ("gradient suite", &gradient_suite),
        ("loss unit oracles", &loss_oracles),
        ("AKLD closed form", &akld_closed_form),
        ("training bookkeeping", &bookkeeping),
    ];
    let mut failures = 0;
    let mut report = |name: &str, v: Result<Verdict>| {
        let (pass, detail) = match v {
            Ok(v) => (v.pass, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failures += 1;
        }
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    };
    for (name, f) in criteria {
        report(name, f());
    }
    let danet_psnr = match end_to_end() {
        Ok((v, p)) => {
            report("end-to-end toy training", Ok(v));
            Some(p)
        }
        Err(e) => {
            report("end-to-end toy training", Err(e));
            None
        }
    };
    let base = match pgap_controls() {
        Ok((v, base)) => {
            report("PSNR-gap oracle controls", Ok(v));
            Some(base)
        }
        Err(e) => {
            report("PSNR-gap oracle controls", Err(e));
            None
        }
    };
    match (base, danet_psnr) {
        (Some(b), Some(p)) => report("DANet+ retraining", danet_plus(&b, p)),
        _ => report("DANet+ retraining", Err(danet_core::Error::InvalidParameter("a baseline run failed".into()))),
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
