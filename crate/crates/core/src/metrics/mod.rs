//! Image quality, noise-model divergence and the PSNR-gap harness.

pub mod akld;
pub mod pgap;
pub mod quality;
pub mod report;

pub use akld::{akld, kl_from_maps, kl_ratio_closed_form, variance_map, AkldConfig, ScaledResidualSampler};
pub use pgap::{denoiser_psnr, pgap, pgap_from_sets, PgapResult};
pub use quality::{mean_psnr, psnr, ssim, PSNR_CAP};
pub use report::MetricReport;
