use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::noise::NoiseSampler;
use crate::error::{Error, Result};
use crate::tensor::{Rng, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Real,
    Synthetic,
}

/// One aligned `(clean, noisy)` pair of `1×C×H×W` images.
#[derive(Clone, Debug, PartialEq)]
pub struct PairRecord {
    pub id: String,
    pub clean: Tensor<f32>,
    pub noisy: Tensor<f32>,
    pub tag: Tag,
}

impl PairRecord {
    pub fn new(id: impl Into<String>, clean: Tensor<f32>, noisy: Tensor<f32>, tag: Tag) -> Result<Self> {
        let id = id.into();
        if clean.shape() != noisy.shape() {
            return Err(Error::shape("pair record", clean.shape(), noisy.shape()));
        }
        if clean.shape().n() != 1 {
            return Err(Error::InvalidShape {
                op: "pair record",
                detail: format!("record {id} holds {} images, expected 1", clean.shape().n()),
            });
        }
        if clean.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter(format!("clean image of record {id} leaves [0, 1]")));
        }
        Ok(PairRecord { id, clean, noisy, tag })
    }
}

/// A batch of aligned patches.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub clean: Tensor<f32>,
    pub noisy: Tensor<f32>,
    /// Number of patches drawn from synthetic records.
    pub synthetic: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImagePairSet {
    records: Vec<PairRecord>,
    /// Whether noisy members were clipped to `[0, 1]` at synthesis.
    pub clipped: bool,
}

impl ImagePairSet {
    pub fn new(records: Vec<PairRecord>) -> Self {
        ImagePairSet { records, clipped: false }
    }

    pub fn records(&self) -> &[PairRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, tag: Tag) -> usize {
        self.records.iter().filter(|r| r.tag == tag).count()
    }

    pub fn clean_images(&self) -> Vec<Tensor<f32>> {
        self.records.iter().map(|r| r.clean.clone()).collect()
    }

    /// Build `(x, sampler(x))` pairs with the same noise law as `sampler`.
    pub fn synthesize(
        clean: &[Tensor<f32>],
        sampler: &dyn NoiseSampler,
        tag: Tag,
        prefix: &str,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut records = Vec::with_capacity(clean.len());
        for (i, x) in clean.iter().enumerate() {
            let y = sampler.sample(x, rng)?;
            records.push(PairRecord::new(format!("{prefix}{i}"), x.clone(), y, tag)?);
        }
        Ok(ImagePairSet::new(records))
    }

    /// Stack every record (all must share one shape) into a single batch.
    pub fn as_batch(&self) -> Result<Batch> {
        let clean: Vec<_> = self.records.iter().map(|r| r.clean.clone()).collect();
        let noisy: Vec<_> = self.records.iter().map(|r| r.noisy.clone()).collect();
        Ok(Batch {
            clean: Tensor::stack(&clean)?,
            noisy: Tensor::stack(&noisy)?,
            synthetic: self.count(Tag::Synthetic),
        })
    }
}

/// Rotate by `k` quarter turns, then optionally transpose-flip; the eight
/// symmetries of the square.
fn dihedral(t: &Tensor<f32>, op: usize) -> Tensor<f32> {
    let s = t.shape();
    debug_assert_eq!(s.h(), s.w());
    let n = s.h();
    let (k, flip) = (op % 4, op >= 4);
    Tensor::from_fn(s, |[b, c, y, x]| {
        let (y, x) = if flip { (x, y) } else { (y, x) };
        let (sy, sx) = match k {
            0 => (y, x),
            1 => (x, n - 1 - y),
            2 => (n - 1 - y, n - 1 - x),
            _ => (n - 1 - x, y),
        };
        t.at([b, c, sy, sx])
    })
}

/// Patch draws with a dedicated generator and a running stratum schedule.
///
/// When the set mixes real and synthetic records, patch `i` (counted over
/// the sampler's lifetime) comes from the synthetic stratum exactly when
/// `⌊(i+1)p⌋ > ⌊ip⌋`, with `p` the synthetic record fraction. Records are
/// drawn uniformly within a stratum.
#[derive(Clone, Debug)]
pub struct PatchSampler {
    rng: Rng,
    drawn: u64,
    pub augment: bool,
}

impl PatchSampler {
    pub fn new(rng: Rng, augment: bool) -> Self {
        PatchSampler { rng, drawn: 0, augment }
    }

    pub fn patches_drawn(&self) -> u64 {
        self.drawn
    }

    pub fn next_batch(&mut self, set: &ImagePairSet, count: usize, size: usize) -> Result<Batch> {
        if set.is_empty() {
            return Err(Error::InvalidParameter("cannot sample patches from an empty set".into()));
        }
        for r in set.records() {
            let s = r.clean.shape();
            if s.h() < size || s.w() < size {
                return Err(Error::InvalidShape {
                    op: "sample_patches",
                    detail: format!("record {} ({s}) is smaller than the {size}x{size} patch", r.id),
                });
            }
        }
        let real: Vec<usize> = (0..set.len()).filter(|&i| set.records[i].tag == Tag::Real).collect();
        let syn: Vec<usize> = (0..set.len()).filter(|&i| set.records[i].tag == Tag::Synthetic).collect();
        let p = syn.len() as f64 / set.len() as f64;
        let mut clean = Vec::with_capacity(count);
        let mut noisy = Vec::with_capacity(count);
        let mut synthetic = 0;
        for _ in 0..count {
            let i = self.drawn as f64;
            let from_syn = ((i + 1.0) * p).floor() > (i * p).floor();
            self.drawn += 1;
            let pool = if from_syn { &syn } else { &real };
            let rec = &set.records[pool[self.rng.gen_range(0..pool.len())]];
            synthetic += from_syn as usize;
            let s = rec.clean.shape();
            let top = self.rng.gen_range(0..=s.h() - size);
            let left = self.rng.gen_range(0..=s.w() - size);
            let mut c = rec.clean.crop(top, left, size, size)?;
            let mut nz = rec.noisy.crop(top, left, size, size)?;
            if self.augment {
                let op = self.rng.gen_range(0..8);
                c = dihedral(&c, op);
                nz = dihedral(&nz, op);
            }
            clean.push(c);
            noisy.push(nz);
        }
        Ok(Batch {
            clean: Tensor::stack(&clean)?,
            noisy: Tensor::stack(&noisy)?,
            synthetic,
        })
    }
}

/// `count` aligned `size×size` crops; identical offsets for both members.
pub fn sample_patches(set: &ImagePairSet, count: usize, size: usize, augment: bool, rng: &mut Rng) -> Result<Batch> {
    let mut sampler = PatchSampler::new(rng.clone(), augment);
    let batch = sampler.next_batch(set, count, size)?;
    *rng = sampler.rng;
    Ok(batch)
}

/// Eq.-8-style synthetic training set: one generated noisy image per clean image.
pub fn make_pgap_dataset(clean: &[Tensor<f32>], generator: &dyn NoiseSampler, rng: &mut Rng) -> Result<ImagePairSet> {
    ImagePairSet::synthesize(clean, generator, Tag::Synthetic, "gen", rng)
}

/// Union of `real` with `⌈ratio · |real|⌉` generated pairs built from `clean_pool` (cycled in order).
pub fn augment_with_generator(
    real: &ImagePairSet,
    clean_pool: &[Tensor<f32>],
    generator: &dyn NoiseSampler,
    ratio: f64,
    rng: &mut Rng,
) -> Result<ImagePairSet> {
    if !(ratio >= 0.0) {
        return Err(Error::InvalidParameter(format!("augmentation ratio must be >= 0, got {ratio}")));
    }
    let n_syn = (ratio * real.len() as f64).ceil() as usize;
    if n_syn > 0 && clean_pool.is_empty() {
        return Err(Error::InvalidParameter("augmentation needs a non-empty clean pool".into()));
    }
    let mut out = real.clone();
    for i in 0..n_syn {
        let x = &clean_pool[i % clean_pool.len()];
        let y = generator.sample(x, rng)?;
        out.records.push(PairRecord::new(format!("syn{i}"), x.clone(), y, Tag::Synthetic)?);
    }
    Ok(out)
}

/// Convenience: `count` procedural clean images of `size×size` with noise from `model`.
pub fn procedural_pairs(
    count: usize,
    size: usize,
    channels: usize,
    sampler: &dyn NoiseSampler,
    rng: &mut Rng,
) -> Result<ImagePairSet> {
    let clean = super::textures::procedural_images(count, size, size, channels, rng);
    ImagePairSet::synthesize(&clean, sampler, Tag::Real, "img", rng)
}

pub fn batch_shape(count: usize, channels: usize, size: usize) -> Shape {
    Shape::new(count, channels, size, size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::noise::NoiseModel;
    use crate::tensor::seeded_rng;

    fn set(n: usize) -> ImagePairSet {
        procedural_pairs(n, 48, 1, &NoiseModel::gaussian(0.1), &mut seeded_rng(1)).unwrap()
    }

    #[test]
    fn batch_contract() {
        let s = set(3);
        let b = sample_patches(&s, 16, 32, true, &mut seeded_rng(2)).unwrap();
        assert_eq!(b.clean.shape(), Shape::new(16, 1, 32, 32));
        assert_eq!(b.noisy.shape(), Shape::new(16, 1, 32, 32));
    }

    #[test]
    fn same_seed_same_offsets() {
        let s = set(3);
        let a = sample_patches(&s, 8, 32, true, &mut seeded_rng(3)).unwrap();
        let b = sample_patches(&s, 8, 32, true, &mut seeded_rng(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn patches_stay_aligned() {
        // the residual of every patch must be a crop of some record's residual
        let s = set(2);
        let residuals: Vec<Tensor<f32>> = s.records().iter().map(|r| r.noisy.sub(&r.clean).unwrap()).collect();
        let mut rng = seeded_rng(4);
        for augment in [false, true] {
            let b = sample_patches(&s, 6, 32, augment, &mut rng).unwrap();
            let d = b.noisy.sub(&b.clean).unwrap();
            for i in 0..6 {
                let patch = d.item_at(i);
                let found = residuals.iter().any(|r| {
                    (0..=16).any(|top| {
                        (0..=16).any(|left| {
                            let c = r.crop(top, left, 32, 32).unwrap();
                            (0..8).any(|op| dihedral(&c, op) == patch)
                        })
                    })
                });
                assert!(found, "patch {i} (augment={augment}) is not an aligned crop");
            }
        }
    }

    #[test]
    fn dihedral_group_is_closed() {
        let t = Tensor::from_fn(Shape::new(1, 1, 3, 3), |[_, _, y, x]| (y * 3 + x) as f32);
        let all: Vec<_> = (0..8).map(|op| dihedral(&t, op)).collect();
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(all[i], all[j], "{i} and {j} coincide");
            }
        }
        assert_eq!(all[0], t);
        assert_eq!(dihedral(&dihedral(&t, 2), 2), t);
    }

    #[test]
    fn small_record_named_in_error() {
        let s = set(1);
        let err = sample_patches(&s, 1, 64, false, &mut seeded_rng(1)).unwrap_err();
        assert!(err.to_string().contains("img0"), "{err}");
    }

    #[test]
    fn pgap_dataset_construction() {
        let clean = crate::data::textures::procedural_images(5, 32, 32, 1, &mut seeded_rng(6));
        let d = make_pgap_dataset(&clean, &NoiseModel::gaussian(0.1), &mut seeded_rng(7)).unwrap();
        assert_eq!(d.len(), 5);
        let mut sq = 0.0;
        let mut n = 0;
        for (r, x) in d.records().iter().zip(&clean) {
            assert_eq!(&r.clean, x);
            for (a, b) in r.noisy.data().iter().zip(r.clean.data()) {
                sq += ((a - b) as f64).powi(2);
                n += 1;
            }
        }
        let sd = (sq / n as f64).sqrt();
        assert!((sd - 0.1).abs() < 0.005, "{sd}");
    }

    #[test]
    fn augmentation_ratios() {
        let real = set(4);
        let pool = crate::data::textures::procedural_images(3, 48, 48, 1, &mut seeded_rng(8));
        let g = NoiseModel::gaussian(0.1);
        assert_eq!(augment_with_generator(&real, &pool, &g, 0.0, &mut seeded_rng(1)).unwrap(), real);
        let doubled = augment_with_generator(&real, &pool, &g, 1.0, &mut seeded_rng(1)).unwrap();
        assert_eq!(doubled.len(), 8);
        assert_eq!(doubled.count(Tag::Synthetic), 4);
        assert!(augment_with_generator(&real, &[], &g, 0.5, &mut seeded_rng(1)).is_err());
        assert_eq!(augment_with_generator(&real, &[], &g, 0.0, &mut seeded_rng(1)).unwrap(), real);

        let a = augment_with_generator(&real, &pool, &g, 1.0, &mut seeded_rng(1)).unwrap();
        let b = augment_with_generator(&real, &pool, &g, 1.0, &mut seeded_rng(2)).unwrap();
        for (ra, rb) in a.records()[4..].iter().zip(&b.records()[4..]) {
            assert_eq!(ra.clean, rb.clean);
            assert_ne!(ra.noisy, rb.noisy);
        }
    }

    #[test]
    fn stratified_proportion_over_an_epoch() {
        let real = set(6);
        let pool = crate::data::textures::procedural_images(3, 48, 48, 1, &mut seeded_rng(9));
        let mixed = augment_with_generator(&real, &pool, &NoiseModel::gaussian(0.1), 0.5, &mut seeded_rng(1)).unwrap();
        let want = 3.0 / 9.0;
        let mut sampler = PatchSampler::new(seeded_rng(10), false);
        let mut syn = 0;
        let total = 200;
        for _ in 0..total / 8 {
            syn += sampler.next_batch(&mixed, 8, 32).unwrap().synthetic;
        }
        let got = syn as f64 / total as f64;
        assert!((got - want).abs() <= 0.02, "{got} vs {want}");
    }
}
