use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use danet_core::data::{
    load_image, save_image, save_tensor, BitDepth, DatasetManifest, FixedSampler, ImagePairSet, NoiseModel,
};
use danet_core::engine::{retrain_plus, EpochRecord, Mode, Trainer, Validation};
use danet_core::gradcheck::{run_suite, Scope, DIFFERENTIABLE_OPS};
use danet_core::metrics::{akld, pgap, psnr, ssim, MetricReport, ScaledResidualSampler};
use danet_core::nn::{Denoiser, Generator, NetworkParams, Role};
use danet_core::tensor::{stream_rng, Tensor};
use danet_core::Error;

use crate::config::RunConfig;

/// Why a command stopped. Usage problems exit 2, runtime aborts exit 1.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::RoleMismatch { .. } | Error::InvalidParameter(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| io_fail(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Outcome {
    fs::write(path, contents).map_err(|e| io_fail(path, e))
}

/// Inputs that must exist are usage errors when they do not.
fn require(path: &Path, what: &str) -> Outcome {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} not found: {}", path.display())))
    }
}

fn load_manifest(path: &Path) -> Result<ImagePairSet, Failure> {
    require(path, "dataset manifest")?;
    DatasetManifest::load(path).map_err(|e| match e {
        Error::Image { .. } | Error::InvalidParameter(_) => Failure::Usage(e.to_string()),
        other => Failure::Runtime(other.to_string()),
    })
}

fn load_checkpoint(path: &Path, role: Role) -> Result<NetworkParams, Failure> {
    require(path, "checkpoint")?;
    let p = NetworkParams::load(path).map_err(|e| Failure::Usage(e.to_string()))?;
    p.expect_role(role)?;
    Ok(p)
}

/// Files named directly, plus the PNGs inside named directories in name order.
fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    for p in inputs {
        require(p, "input")?;
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| io_fail(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(Failure::Usage("no input images".into()));
    }
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

fn snapshot(cfg: &RunConfig) -> Outcome {
    create_dir(&cfg.out)?;
    let text = serde_json::to_string_pretty(cfg).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_file(&cfg.out.join("config.json"), text + "\n")
}

/// Wall-clock times live in their own file so every other artifact is reproducible.
fn log_time(cfg: &RunConfig, event: &str) {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(cfg.out.join("run.log")) {
        let _ = writeln!(f, "{secs} {event}");
    }
}

pub fn train(cfg: &RunConfig) -> Outcome {
    let manifest = cfg
        .data
        .manifest
        .as_ref()
        .ok_or_else(|| Failure::Usage("data.manifest is not set".into()))?;
    let data = load_manifest(manifest)?;
    let validation = match &cfg.data.validation {
        Some(p) => Some(Validation::from_set(&load_manifest(p)?, cfg.metrics.akld.clone(), cfg.seed)?),
        None => None,
    };
    let pool = match &cfg.data.clean_pool {
        Some(p) => Some(load_manifest(p)?.clean_images()),
        None => None,
    };
    snapshot(cfg)?;
    log_time(cfg, "train started");

    let ckpt_dir = cfg.out.join("checkpoints");
    create_dir(&ckpt_dir)?;
    let log_path = cfg.out.join("train_log.csv");
    write_file(&log_path, format!("{}\n", EpochRecord::CSV_HEADER))?;

    let mut trainer = Trainer::new(cfg.train.clone(), cfg.seed)?;
    let result = trainer.train(&data, validation.as_ref(), |rec, nets, state| {
        let dir = ckpt_dir.join(format!("epoch_{:03}", rec.epoch));
        fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
        if let Some(r) = &nets.denoiser {
            r.save(dir.join("denoiser.ckpt"))?;
        }
        if let Some(g) = &nets.generator {
            g.save(dir.join("generator.ckpt"))?;
        }
        nets.critic.save(dir.join("critic.ckpt"))?;
        fs::write(dir.join("state.json"), serde_json::to_string_pretty(state)?)
            .map_err(|e| Error::Io { path: dir.clone(), source: e })?;
        let mut f = OpenOptions::new()
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::Io { path: log_path.clone(), source: e })?;
        writeln!(f, "{}", rec.csv_row()).map_err(|e| Error::Io { path: log_path.clone(), source: e })?;
        println!("{}", rec.csv_row());
        Ok(())
    });
    if let Err(e) = result {
        log_time(cfg, "train aborted");
        return Err(Failure::Runtime(format!("training aborted: {e}")));
    }

    let nets = &trainer.nets;
    if let Some(r) = &nets.denoiser {
        r.save(cfg.out.join("denoiser.ckpt"))?;
    }
    if let Some(g) = &nets.generator {
        g.save(cfg.out.join("generator.ckpt"))?;
    }
    nets.critic.save(cfg.out.join("critic.ckpt"))?;

    if cfg.train.mode == Mode::PlusRetrain {
        let g = nets.generator.as_ref().expect("PlusRetrain trains a generator");
        let sampler = Generator::new(g)?;
        let pool = pool.unwrap_or_else(|| data.clean_images());
        let plus = retrain_plus(&sampler, &pool, &data, &cfg.train, cfg.seed)
            .map_err(|e| Failure::Runtime(format!("retraining aborted: {e}")))?;
        plus.save(cfg.out.join("denoiser_plus.ckpt"))?;
        if let Some(v) = &validation {
            println!("retrained psnr_val {}", v.psnr(&plus)?);
        }
    }
    log_time(cfg, "train finished");
    Ok(())
}

pub fn denoise(cfg: &RunConfig, checkpoint: &Path, inputs: &[PathBuf], depth: BitDepth) -> Outcome {
    let params = load_checkpoint(checkpoint, Role::Denoiser)?;
    let inputs = expand_inputs(inputs)?;
    let r = Denoiser::new(&params)?;
    snapshot(cfg)?;
    for p in &inputs {
        let y = load_image(p)?;
        let xhat = r.denoise(&y)?;
        save_image(&xhat, cfg.out.join(format!("{}.png", stem(p))), depth)?;
    }
    println!("denoised {} images into {}", inputs.len(), cfg.out.display());
    Ok(())
}

pub fn generate(
    cfg: &RunConfig,
    checkpoint: &Path,
    inputs: &[PathBuf],
    samples: usize,
    depth: BitDepth,
    raw: bool,
) -> Outcome {
    if samples == 0 {
        return Err(Failure::Usage("--samples must be >= 1".into()));
    }
    let params = load_checkpoint(checkpoint, Role::Generator)?;
    let inputs = expand_inputs(inputs)?;
    let g = Generator::new(&params)?;
    snapshot(cfg)?;
    let mut rng = stream_rng(cfg.seed, 0);
    for p in &inputs {
        let x = load_image(p)?;
        for k in 0..samples {
            let y = g.sample(&x, &mut rng)?;
            let name = format!("{}_s{k}_seed{}", stem(p), cfg.seed);
            save_image(&y, cfg.out.join(format!("{name}.png")), depth)?;
            if raw {
                save_tensor(&y, cfg.out.join(format!("{name}.dtn")))?;
            }
        }
    }
    println!("wrote {} samples into {}", inputs.len() * samples, cfg.out.display());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Metric {
    Psnr,
    Ssim,
    Akld,
    Pgap,
}

pub struct EvalArgs {
    pub metric: Metric,
    pub checkpoint: Option<PathBuf>,
    pub oracle: Option<String>,
    pub dataset: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
}

/// A noise source for akld/pgap: a generator checkpoint or an oracle spec.
enum Source {
    Generator(NetworkParams),
    Model(NoiseModel),
    /// The record's own noisy image.
    Real,
    /// `x + √r·(y − x)` of the record's own residual.
    Scaled(f64),
}

fn source(args: &EvalArgs) -> Result<(Source, String), Failure> {
    match (&args.checkpoint, &args.oracle) {
        (Some(c), None) => Ok((Source::Generator(load_checkpoint(c, Role::Generator)?), c.display().to_string())),
        (None, Some(o)) => {
            let s = if o == "real" {
                Source::Real
            } else if let Some(r) = o.strip_prefix("scaled:") {
                let r: f64 = r.parse().map_err(|_| Failure::Usage(format!("bad ratio in oracle {o:?}")))?;
                if !(r > 0.0) {
                    return Err(Failure::Usage(format!("oracle ratio must be > 0, got {r}")));
                }
                Source::Scaled(r)
            } else {
                let m: NoiseModel =
                    serde_json::from_str(o).map_err(|e| Failure::Usage(format!("bad oracle spec {o:?}: {e}")))?;
                m.validate()?;
                Source::Model(m)
            };
            Ok((s, format!("oracle:{o}")))
        }
        _ => Err(Failure::Usage("give exactly one of --checkpoint and --oracle".into())),
    }
}

fn dataset_path(args: &EvalArgs, cfg: &RunConfig) -> Result<PathBuf, Failure> {
    args.dataset
        .clone()
        .or_else(|| cfg.data.manifest.clone())
        .ok_or_else(|| Failure::Usage("no dataset: pass --dataset or set data.manifest".into()))
}

/// `(id, estimate, reference)` triples for psnr/ssim.
fn quality_pairs(args: &EvalArgs, cfg: &RunConfig) -> Result<(Vec<(String, Tensor, Tensor)>, String), Failure> {
    if let Some(refdir) = &args.reference {
        let inputs = expand_inputs(&args.inputs)?;
        let mut out = Vec::new();
        for p in inputs {
            let name = p.file_name().expect("input files have names");
            let r = refdir.join(name);
            require(&r, "reference image")?;
            out.push((stem(&p), load_image(&p)?, load_image(&r)?));
        }
        return Ok((out, refdir.display().to_string()));
    }
    let path = dataset_path(args, cfg)?;
    let set = load_manifest(&path)?;
    let r = match &args.checkpoint {
        Some(c) => Some(load_checkpoint(c, Role::Denoiser)?),
        None => None,
    };
    let mut out = Vec::new();
    for rec in set.records() {
        let est = match &r {
            Some(p) => Denoiser::new(p)?.denoise(&rec.noisy)?,
            None => rec.noisy.clone(),
        };
        out.push((rec.id.clone(), est, rec.clean.clone()));
    }
    Ok((out, path.display().to_string()))
}

pub fn eval(cfg: &RunConfig, args: &EvalArgs) -> Outcome {
    let (report, rows) = match args.metric {
        Metric::Psnr | Metric::Ssim => {
            let (pairs, dataset) = quality_pairs(args, cfg)?;
            let mut rows = Vec::new();
            for (id, est, reference) in &pairs {
                let v = if args.metric == Metric::Psnr {
                    psnr(est, reference, 1.0)?
                } else {
                    ssim(est, reference)?
                };
                rows.push((id.clone(), v));
            }
            let mean = rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64;
            let name = if args.metric == Metric::Psnr { "psnr" } else { "ssim" };
            let mut rep = MetricReport::new(name, mean, rows.len(), dataset, cfg.seed)
                .with("estimate", args.checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or("noisy".into()))?;
            rep = if args.metric == Metric::Psnr {
                rep.with("peak", 1.0)?
            } else {
                rep.with("window", danet_core::metrics::quality::SSIM_WINDOW)?
                    .with("sigma", danet_core::metrics::quality::SSIM_SIGMA)?
            };
            (rep, rows)
        }
        Metric::Akld => {
            let (src, label) = source(args)?;
            let path = dataset_path(args, cfg)?;
            let set = load_manifest(&path)?;
            let acfg = &cfg.metrics.akld;
            let mut rng = stream_rng(cfg.seed, 0);
            let mut rows = Vec::new();
            for rec in set.records() {
                let v = match &src {
                    Source::Generator(p) => akld(&Generator::new(p)?, &rec.clean, &rec.noisy, acfg, &mut rng)?,
                    Source::Model(m) => akld(m, &rec.clean, &rec.noisy, acfg, &mut rng)?,
                    Source::Real => akld(&FixedSampler(rec.noisy.clone()), &rec.clean, &rec.noisy, acfg, &mut rng)?,
                    Source::Scaled(r) => {
                        let s = ScaledResidualSampler {
                            noisy: rec.noisy.clone(),
                            ratio: *r,
                        };
                        akld(&s, &rec.clean, &rec.noisy, acfg, &mut rng)?
                    }
                };
                rows.push((rec.id.clone(), v));
            }
            let mean = rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64;
            let rep = MetricReport::new("akld", mean, rows.len(), path.display().to_string(), cfg.seed)
                .with("sampler", label)?
                .with("samples_per_image", acfg.samples)?
                .with("kernel_size", acfg.kernel_size)?
                .with("sigma", acfg.sigma)?
                .with("floor", acfg.floor)?;
            (rep, rows)
        }
        Metric::Pgap => {
            let (src, label) = source(args)?;
            let train_path = dataset_path(args, cfg)?;
            let test_path = args
                .test
                .clone()
                .or_else(|| cfg.data.validation.clone())
                .ok_or_else(|| Failure::Usage("pgap needs --test or data.validation".into()))?;
            let train_set = load_manifest(&train_path)?;
            let test_set = load_manifest(&test_path)?;
            let recipe = &cfg.train;
            let result = match &src {
                Source::Generator(p) => pgap(&train_set, &test_set, &Generator::new(p)?, recipe, cfg.seed)?,
                Source::Model(m) => pgap(&train_set, &test_set, m, recipe, cfg.seed)?,
                Source::Real | Source::Scaled(_) => {
                    return Err(Failure::Usage("pgap needs a generator checkpoint or a noise-model oracle".into()))
                }
            };
            let rows = vec![
                ("psnr_real".to_string(), result.psnr_real),
                ("psnr_synthetic".to_string(), result.psnr_synthetic),
            ];
            let rep = MetricReport::new("pgap", result.gap(), test_set.len(), train_path.display().to_string(), cfg.seed)
                .with("generator", label)?
                .with("test", test_path.display().to_string())?
                .with("recipe", recipe)?;
            (rep, rows)
        }
    };

    snapshot(cfg)?;
    let name = &report.metric;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_file(&cfg.out.join(format!("{name}_report.json")), json + "\n")?;
    write_file(
        &cfg.out.join(format!("{name}_report.csv")),
        format!("{}\n{}\n", MetricReport::CSV_HEADER, report.csv_row()),
    )?;
    let mut csv = String::from("id,value\n");
    for (id, v) in &rows {
        csv.push_str(&format!("{id},{v}\n"));
    }
    write_file(&cfg.out.join(format!("{name}_rows.csv")), csv)?;
    println!("{name} {}", report.value);
    Ok(())
}

pub fn gradcheck(seed: u64, scope: Option<Scope>, faults: &[String]) -> Outcome {
    let faults: Vec<&str> = faults.iter().map(String::as_str).collect();
    let results = run_suite(scope, seed, &faults)?;
    let mut failed = Vec::new();
    for r in &results {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "{:<8} {:<20} worst_rel_err={:.3e} probes={} skipped={} {verdict}",
            r.scope, r.name, r.worst_rel_err, r.probes, r.skipped
        );
        if !r.passed() {
            failed.push(r.name.clone());
        }
    }
    if scope.is_none() || scope == Some(Scope::Ops) {
        let covered = DIFFERENTIABLE_OPS
            .iter()
            .filter(|op| results.iter().any(|r| r.scope == Scope::Ops && r.name == **op))
            .count();
        println!("ops covered: {covered}/{}", DIFFERENTIABLE_OPS.len());
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("gradient check failed for: {}", failed.join(", "))))
    }
}
