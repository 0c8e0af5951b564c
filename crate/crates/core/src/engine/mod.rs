//! Training: losses, optimizer, schedule and the alternating loop.

pub mod adam;
pub mod config;
pub mod losses;
pub mod plus;
pub mod schedule;
pub mod train;

pub use adam::{adam_step, adam_update};
pub use config::{AdamConfig, ArchConfig, Mode, TrainConfig};
pub use losses::{adversarial_loss, denoiser_l1, gradient_penalty, noise_stat_loss};
pub use plus::{retrain_plus, train_l1_denoiser};
pub use schedule::lr_schedule;
pub use train::{csv_log, train, EpochRecord, Networks, StepLosses, TrainState, Trainer, Validation};
