//! Quick toy run: `cargo run --release --example toy_probe -- <json overrides>`.

use std::time::Instant;

use danet_core::data::{procedural_pairs, NoiseModel};
use danet_core::engine::{TrainConfig, Trainer, Validation};
use danet_core::metrics::AkldConfig;
use danet_core::tensor::seeded_rng;

fn main() -> danet_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let mut base = serde_json::to_value(TrainConfig::default())?;
    if let Some(over) = args.get(1) {
        let o: serde_json::Value = serde_json::from_str(over)?;
        merge(&mut base, o);
    }
    let cfg: TrainConfig = serde_json::from_value(base)?;
    let model = match args.get(2).map(String::as_str) {
        Some("sd") => NoiseModel::signal_dependent(0.2, 0.05),
        _ => NoiseModel::gaussian(0.1),
    };
    let train = procedural_pairs(32, 64, 1, &model, &mut seeded_rng(1))?;
    let val = procedural_pairs(6, 64, 1, &model, &mut seeded_rng(2))?;
    let v = Validation::from_set(&val, AkldConfig::default().with_samples(2), 3)?;
    let b = val.as_batch()?;
    println!("noisy psnr {:.3}", danet_core::metrics::mean_psnr(&b.noisy, &b.clean, 1.0)?);
    let mut t = Trainer::new(cfg, 11)?;
    let start = Instant::now();
    t.train(&train, Some(&v), |r, _, s| {
        println!("{} t={:.1}s d={}", r.csv_row(), start.elapsed().as_secs_f64(), s.d_updates);
        Ok(())
    })?;
    Ok(())
}

fn merge(a: &mut serde_json::Value, b: serde_json::Value) {
    match (a, b) {
        (serde_json::Value::Object(a), serde_json::Value::Object(b)) => {
            for (k, v) in b {
                merge(a.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (a, b) => *a = b,
    }
}
