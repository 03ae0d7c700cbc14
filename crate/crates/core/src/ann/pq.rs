//! Product quantization: each vector is cut into `m` equal slices and every
//! slice is replaced by the index of its nearest sub-centroid, giving an
//! `m`-byte code.

use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans_fit, nearest};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PqCodebook {
    pub dim: usize,
    pub m: usize,
    pub ksub: usize,
    /// Row-major `m x ksub x (dim / m)`.
    pub centroids: Vec<f32>,
}

/// Seed used for the k-means run of subspace `s`. Subspace 0 uses `seed`
/// itself, so `m = 1` is a plain k-means fit.
pub fn subspace_seed(seed: u64, s: usize) -> u64 {
    seed.wrapping_add(s as u64)
}

/// Independent k-means (`ksub` centroids) over each coordinate slice.
pub fn pq_train(
    points: &[f32],
    dim: usize,
    m: usize,
    ksub: usize,
    max_iters: usize,
    seed: u64,
) -> Result<PqCodebook> {
    PqCodebook::check_shape(dim, m, ksub)?;
    if points.len() % dim != 0 {
        return Err(Error::invalid(format!(
            "point buffer of length {} is not a multiple of dim {dim}",
            points.len()
        )));
    }
    let n = points.len() / dim;
    if n < ksub {
        return Err(Error::NotEnoughData { required: ksub, got: n });
    }
    let dsub = dim / m;
    let mut centroids = Vec::with_capacity(m * ksub * dsub);
    let mut slice = Vec::with_capacity(n * dsub);
    for s in 0..m {
        slice.clear();
        for p in points.chunks_exact(dim) {
            slice.extend_from_slice(&p[s * dsub..(s + 1) * dsub]);
        }
        let model = kmeans_fit(&slice, dsub, ksub, max_iters, subspace_seed(seed, s))?;
        centroids.extend_from_slice(&model.centroids);
    }
    Ok(PqCodebook {
        dim,
        m,
        ksub,
        centroids,
    })
}

/// Per-query lookup table: `table[s][j] = ||query_s - centroid[s][j]||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdcTables {
    pub m: usize,
    pub ksub: usize,
    pub values: Vec<f64>,
}

impl AdcTables {
    #[inline]
    pub fn get(&self, s: usize, j: usize) -> f64 {
        self.values[s * self.ksub + j]
    }

    /// Approximate squared distance to the vector behind `code`.
    #[inline]
    pub fn distance(&self, code: &[u8]) -> f64 {
        debug_assert_eq!(code.len(), self.m);
        code.iter()
            .enumerate()
            .map(|(s, &c)| self.values[s * self.ksub + c as usize])
            .sum()
    }
}

impl PqCodebook {
    fn check_shape(dim: usize, m: usize, ksub: usize) -> Result<()> {
        if m == 0 || dim == 0 || dim % m != 0 {
            return Err(Error::invalid(format!(
                "dimension {dim} is not divisible into {m} subspaces"
            )));
        }
        if ksub == 0 || ksub > 256 {
            return Err(Error::invalid(format!(
                "ksub must lie in 1..=256 so codes fit in a byte, got {ksub}"
            )));
        }
        Ok(())
    }

    pub fn from_parts(dim: usize, m: usize, ksub: usize, centroids: Vec<f32>) -> Result<Self> {
        Self::check_shape(dim, m, ksub)?;
        if centroids.len() != ksub * dim {
            return Err(Error::DimensionMismatch {
                expected: ksub * dim,
                got: centroids.len(),
            });
        }
        Ok(Self {
            dim,
            m,
            ksub,
            centroids,
        })
    }

    pub fn dsub(&self) -> usize {
        self.dim / self.m
    }

    /// Centroids of subspace `s`, row-major `ksub x dsub`.
    pub fn subspace(&self, s: usize) -> &[f32] {
        let len = self.ksub * self.dsub();
        &self.centroids[s * len..(s + 1) * len]
    }

    pub fn sub_centroid(&self, s: usize, j: usize) -> &[f32] {
        let d = self.dsub();
        &self.subspace(s)[j * d..(j + 1) * d]
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: len,
            });
        }
        Ok(())
    }

    pub fn encode(&self, vector: &[f32]) -> Result<Vec<u8>> {
        self.check_dim(vector.len())?;
        let mut code = vec![0u8; self.m];
        self.encode_into(vector, &mut code);
        Ok(code)
    }

    pub(crate) fn encode_into(&self, vector: &[f32], code: &mut [u8]) {
        let d = self.dsub();
        for (s, slot) in code.iter_mut().enumerate() {
            let (j, _) = nearest(self.subspace(s), d, &vector[s * d..(s + 1) * d]);
            *slot = j as u8;
        }
    }

    pub fn decode(&self, code: &[u8]) -> Result<Vec<f32>> {
        if code.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: code.len(),
            });
        }
        if let Some(&bad) = code.iter().find(|&&c| c as usize >= self.ksub) {
            return Err(Error::invalid(format!("code entry {bad} exceeds ksub {}", self.ksub)));
        }
        let mut out = Vec::with_capacity(self.dim);
        for (s, &c) in code.iter().enumerate() {
            out.extend_from_slice(self.sub_centroid(s, c as usize));
        }
        Ok(out)
    }

    pub fn adc_tables(&self, query: &[f32]) -> Result<AdcTables> {
        self.check_dim(query.len())?;
        let q: Vec<f64> = query.iter().map(|&v| v as f64).collect();
        Ok(self.adc_tables_f64(&q))
    }

    pub(crate) fn adc_tables_f64(&self, query: &[f64]) -> AdcTables {
        let d = self.dsub();
        let mut values = Vec::with_capacity(self.m * self.ksub);
        for s in 0..self.m {
            let qs = &query[s * d..(s + 1) * d];
            for c in self.subspace(s).chunks_exact(d) {
                values.push(
                    qs.iter()
                        .zip(c)
                        .map(|(&a, &b)| {
                            let diff = a - b as f64;
                            diff * diff
                        })
                        .sum(),
                );
            }
        }
        AdcTables {
            m: self.m,
            ksub: self.ksub,
            values,
        }
    }

    /// Mean squared reconstruction error over `points`.
    pub fn distortion(&self, points: &[f32]) -> Result<f64> {
        if points.is_empty() {
            return Ok(0.0);
        }
        if points.len() % self.dim != 0 {
            return Err(Error::invalid(format!(
                "point buffer of length {} is not a multiple of dim {}",
                points.len(),
                self.dim
            )));
        }
        let mut code = vec![0u8; self.m];
        let mut total = 0.0;
        let n = points.len() / self.dim;
        for p in points.chunks_exact(self.dim) {
            self.encode_into(p, &mut code);
            let rec = self.decode(&code)?;
            total += super::l2_sq_f64(p, &rec);
        }
        Ok(total / n as f64)
    }
}

/// `adc_distance(tables, code) = sum_s tables[s][code_s]`.
pub fn adc_distance(tables: &AdcTables, code: &[u8]) -> f64 {
    tables.distance(code)
}
