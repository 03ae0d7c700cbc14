use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Embedding;
use crate::attention::{pool_features, RoiFeatures, SoftMaskStack};
use crate::error::{Error, Result};

/// Fixed Gaussian random projection, `out_dim x in_dim`, entries drawn from
/// N(0, 1/out_dim) in row-major order from one seeded stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    seed: u64,
    matrix: Array2<f64>,
}

impl Projector {
    pub fn new(in_dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::invalid("projection dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (out_dim as f64).sqrt();
        let matrix = Array2::from_shape_simple_fn((out_dim, in_dim), || {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        });
        Ok(Self { seed, matrix })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn in_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    /// CRC32 of the matrix entries' little-endian bytes.
    pub fn fingerprint(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for v in self.matrix.iter() {
            h.update(&v.to_le_bytes());
        }
        h.finalize()
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim(),
                got: x.len(),
            });
        }
        Ok(self.matrix.dot(&ndarray::ArrayView1::from(x)).to_vec())
    }
}

/// Mask-weighted pooling of each region followed by the projection and L2
/// normalization. One embedding per region.
pub fn embed_with_attention(
    feat: &RoiFeatures,
    masks: &SoftMaskStack,
    projector: &Projector,
) -> Result<Vec<Embedding>> {
    if feat.channels() != projector.in_dim() {
        return Err(Error::DimensionMismatch {
            expected: projector.in_dim(),
            got: feat.channels(),
        });
    }
    let pooled = pool_features(feat, masks)?;
    pooled
        .rows()
        .into_iter()
        .map(|row| {
            let v = projector.project(&row.to_vec())?;
            Ok(Embedding::normalize(v))
        })
        .collect()
}
