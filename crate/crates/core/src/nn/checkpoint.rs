//! Checkpoint layout:
//!
//! ```text
//! "DANC" | version: u8 | manifest_len: u64 LE | manifest (JSON text)
//! then per parameter, in manifest order: value, first moment, second moment (each a DTN1 block)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetConfig, NetworkParams, Param, ParamSpec, Role};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"DANC";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    role: Role,
    config: NetConfig,
    adam_step: u64,
    params: Vec<ParamSpec>,
}

impl NetworkParams {
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        let manifest = Manifest {
            role: self.role,
            config: self.config.clone(),
            adam_step: self.adam_step,
            params: self.params.iter().map(|p| p.spec.clone()).collect(),
        };
        let text = serde_json::to_vec_pretty(&manifest)?;
        let io = |e| Error::Format(format!("checkpoint write failed: {e}"));
        out.write_all(MAGIC).map_err(io)?;
        out.write_all(&[CHECKPOINT_VERSION]).map_err(io)?;
        out.write_all(&(text.len() as u64).to_le_bytes()).map_err(io)?;
        out.write_all(&text).map_err(io)?;
        for p in &self.params {
            for t in [&p.value, &p.m, &p.v] {
                t.write_dtn1(&mut out).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        let mut head = [0u8; 13];
        input
            .read_exact(&mut head)
            .map_err(|e| Error::Format(format!("truncated checkpoint header: {e}")))?;
        if &head[..4] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        if head[4] != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", head[4])));
        }
        let len = u64::from_le_bytes(head[5..13].try_into().expect("8 bytes")) as usize;
        let mut text = vec![0u8; len];
        input
            .read_exact(&mut text)
            .map_err(|e| Error::Format(format!("truncated checkpoint manifest: {e}")))?;
        let manifest: Manifest = serde_json::from_slice(&text)?;
        if manifest.params != manifest.config.manifest() {
            return Err(Error::Format("checkpoint parameters do not match its config".into()));
        }
        let mut params = Vec::with_capacity(manifest.params.len());
        for spec in manifest.params {
            let value = Tensor::read_dtn1(&mut input)?;
            let m = Tensor::read_dtn1(&mut input)?;
            let v = Tensor::read_dtn1(&mut input)?;
            if [&value, &m, &v].iter().any(|t| t.shape() != spec.shape) {
                return Err(Error::Format(format!("tensor shape mismatch for {}", spec.name)));
            }
            params.push(Param { spec, value, m, v });
        }
        Ok(NetworkParams {
            role: manifest.role,
            config: manifest.config,
            params,
            adam_step: manifest.adam_step,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_checkpoint(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(BufReader::new(f)).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Critic, CriticConfig, Denoiser, UNetConfig};
    use crate::tensor::{sample_normal, seeded_rng, Shape};

    #[test]
    fn save_load_forward_is_bitwise_identical() {
        let cfg = UNetConfig::denoiser(1).with_size(2, 4);
        let mut p = NetworkParams::init(Role::Denoiser, NetConfig::Unet(cfg), &mut seeded_rng(1)).unwrap();
        p.adam_step = 7;
        p.params[0].m.data_mut()[0] = 0.25;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.ckpt");
        p.save(&path).unwrap();
        let q = NetworkParams::load(&path).unwrap();
        assert_eq!(p, q);
        let y: Tensor<f32> = sample_normal(Shape::new(1, 1, 16, 16), 0.5, 0.1, &mut seeded_rng(2)).unwrap();
        let a = Denoiser::new(&p).unwrap().run(&y).unwrap();
        let b = Denoiser::new(&q).unwrap().run(&y).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn critic_round_trip() {
        let cfg = CriticConfig::new(1, 32, 32).with_base_channels(2);
        let p = NetworkParams::init(Role::Discriminator, NetConfig::Critic(cfg), &mut seeded_rng(3)).unwrap();
        let mut buf = Vec::new();
        p.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"DANC");
        assert_eq!(buf[4], CHECKPOINT_VERSION);
        let q = NetworkParams::read_checkpoint(&buf[..]).unwrap();
        let x = Tensor::full(Shape::new(1, 1, 32, 32), 0.5);
        assert_eq!(Critic::new(&p).unwrap().score(&x, &x).unwrap(), Critic::new(&q).unwrap().score(&x, &x).unwrap());
    }

    #[test]
    fn rejects_wrong_version_and_missing_file() {
        let cfg = CriticConfig::new(1, 32, 32).with_base_channels(2);
        let p = NetworkParams::zeros(Role::Discriminator, NetConfig::Critic(cfg));
        let mut buf = Vec::new();
        p.write_checkpoint(&mut buf).unwrap();
        buf[4] = 99;
        assert!(NetworkParams::read_checkpoint(&buf[..]).unwrap_err().to_string().contains("version 99"));
        let err = NetworkParams::load("/nonexistent/x.ckpt").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.ckpt"));
    }
}
