//! Clean/noisy image pairs, noise synthesis and patch sampling.

pub mod image_io;
pub mod manifest;
pub mod noise;
pub mod pairset;
pub mod textures;

pub use image_io::{load_image, quantize_8bit, save_image, BitDepth};
pub use manifest::{load_tensor, save_tensor, DatasetManifest, ManifestRecord, ProceduralSource};
pub use noise::{synth_noisy, FixedSampler, NoiseKind, NoiseModel, NoiseSampler};
pub use pairset::{
    augment_with_generator, make_pgap_dataset, procedural_pairs, sample_patches, Batch, ImagePairSet, PairRecord,
    PatchSampler, Tag,
};
pub use textures::{procedural_image, procedural_images};
