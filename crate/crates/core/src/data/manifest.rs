//! JSON dataset manifests.
//!
//! ```json
//! {
//!   "seed": 3,
//!   "clip": false,
//!   "records": [
//!     {"id": "a", "clean": "a.png", "noisy": "a_noisy.png"},
//!     {"clean": "b.png", "noise": {"kind": "gaussian", "sigma": 0.1}},
//!     {"clean": "c.dtn", "noisy": "c_noisy.dtn", "tag": "synthetic"}
//!   ],
//!   "procedural": {"count": 8, "size": 64, "noise": {"kind": "gaussian", "sigma": 0.1}}
//! }
//! ```
//!
//! Relative paths resolve against the manifest's directory. Files ending in
//! `.dtn` are read as DTN1 tensors, everything else as PNG.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image_io::load_image;
use super::noise::{synth_noisy, NoiseModel};
use super::pairset::{procedural_pairs, ImagePairSet, PairRecord, Tag};
use crate::error::{Error, Result};
use crate::tensor::{stream_rng, Tensor};

const RECORD_STREAM: u64 = 6;
const PROCEDURAL_STREAM: u64 = 8;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    #[serde(default)]
    pub records: Vec<ManifestRecord>,
    #[serde(default)]
    pub procedural: Option<ProceduralSource>,
    /// Clip every synthesized noisy image to `[0, 1]`.
    #[serde(default)]
    pub clip: bool,
    /// Seed for noise synthesized from a spec.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    /// Defaults to the clean file's stem.
    #[serde(default)]
    pub id: Option<String>,
    pub clean: PathBuf,
    /// Exactly one of `noisy` and `noise` must be given.
    #[serde(default)]
    pub noisy: Option<PathBuf>,
    #[serde(default)]
    pub noise: Option<NoiseModel>,
    #[serde(default = "real")]
    pub tag: Tag,
}

fn real() -> Tag {
    Tag::Real
}

/// Procedural texture images with synthetic noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProceduralSource {
    pub count: usize,
    pub size: usize,
    #[serde(default = "one")]
    pub channels: usize,
    pub noise: NoiseModel,
}

fn one() -> usize {
    1
}

/// Read an image or a DTN1 tensor, chosen by extension.
pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "dtn") {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Tensor::read_dtn1(BufReader::new(f))
    } else {
        load_image(path)
    }
}

pub fn save_tensor(t: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    t.write_dtn1(&mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

impl DatasetManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: format!("invalid manifest: {e}"),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Read the manifest at `path` and materialize its pairs.
    pub fn load(path: impl AsRef<Path>) -> Result<ImagePairSet> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        Self::read(path)?.materialize(base)
    }

    /// Build the pair set, resolving relative paths against `base`.
    pub fn materialize(&self, base: &Path) -> Result<ImagePairSet> {
        let mut rng = stream_rng(self.seed, RECORD_STREAM);
        let mut records = Vec::new();
        let mut clipped = self.clip;
        for (i, r) in self.records.iter().enumerate() {
            let id = r.id.clone().unwrap_or_else(|| {
                r.clean
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("rec{i}"))
            });
            let clean = load_tensor(base.join(&r.clean))?;
            let noisy = match (&r.noisy, &r.noise) {
                (Some(p), None) => load_tensor(base.join(p))?,
                (None, Some(model)) => {
                    let model = model.clone().with_clip(model.clip || self.clip);
                    clipped |= model.clip;
                    synth_noisy(&clean, &model, &mut rng)?
                }
                _ => {
                    return Err(Error::InvalidParameter(format!(
                        "record {id}: give exactly one of \"noisy\" and \"noise\""
                    )))
                }
            };
            records.push(PairRecord::new(id, clean, noisy, r.tag)?);
        }
        if let Some(p) = &self.procedural {
            let model = p.noise.clone().with_clip(p.noise.clip || self.clip);
            clipped |= model.clip;
            let mut prng = stream_rng(self.seed, PROCEDURAL_STREAM);
            let set = procedural_pairs(p.count, p.size, p.channels, &model, &mut prng)?;
            records.extend(set.records().iter().cloned());
        }
        if records.is_empty() {
            return Err(Error::InvalidParameter("manifest lists no records".into()));
        }
        let mut set = ImagePairSet::new(records);
        set.clipped = clipped;
        Ok(set)
    }

    /// Write every pair of `set` as DTN1 tensors under `dir` and return a
    /// manifest that reloads them bitwise.
    pub fn cache(set: &ImagePairSet, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut records = Vec::with_capacity(set.len());
        for r in set.records() {
            let clean = PathBuf::from(format!("{}.clean.dtn", r.id));
            let noisy = PathBuf::from(format!("{}.noisy.dtn", r.id));
            save_tensor(&r.clean, dir.join(&clean))?;
            save_tensor(&r.noisy, dir.join(&noisy))?;
            records.push(ManifestRecord {
                id: Some(r.id.clone()),
                clean,
                noisy: Some(noisy),
                noise: None,
                tag: r.tag,
            });
        }
        Ok(DatasetManifest {
            records,
            clip: set.clipped,
            ..Default::default()
        })
    }
}
